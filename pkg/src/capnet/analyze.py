"""Receptive-field and shattering analysis of capacity chains.

A Dirac probe dropped at the top of a deep chain spreads diffusively, so the
width of its capacity footprint grows like the square root of the traversed
depth.  Path-weight analysis decomposes the same propagation into index paths
whose maximal weight decays exponentially with depth.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Optional, Tuple, Union

import numpy as np

from .core import SpatialCapacity
from .deeplimit import DeepLimitConfig, ResidualGenerator, evolve_markov
from .propagate import LayerChain, propagate_chain

__all__ = [
    "ErfReport",
    "ShatterReport",
    "erf_profile",
    "max_path_weight",
    "uniform_path_weight",
    "enumerate_path_weights",
    "shatter_analysis",
]

_MIN_FIT_SIGMA = 2.0  # grid cells; below this the width statistic is too discrete
_PATH_GUARD = 10**6
_BOUNDARY_MASS_TOL = 1e-6


@dataclass(frozen=True)
class ErfReport:
    """Width of a probe's capacity footprint per layer, with a power-law fit.

    ``per_depth_std`` pairs each layer index l with the standard deviation of
    the normalized profile at that interface, ordered from the probe layer
    downwards.  ``fitted_exponent`` is the log-log slope of width against
    traversed depth over the layers where the width exceeds 2 grid cells; it
    is NaN when fewer than two layers qualify.
    """

    probe_index: int
    per_depth_std: Tuple[Tuple[int, float], ...]
    fitted_exponent: float
    fit_residual: float
    boundary_flagged: bool

    def __post_init__(self):
        if self.probe_index < 0:
            raise ValueError("probe_index must be a grid index")
        if not self.per_depth_std:
            raise ValueError("per_depth_std must not be empty")
        for layer, sigma in self.per_depth_std:
            if sigma < 0:
                raise ValueError(f"negative width at layer {layer}")

    def to_dict(self) -> dict:
        return {
            "probe_index": self.probe_index,
            "per_depth_std": [[layer, sigma] for layer, sigma in self.per_depth_std],
            "fitted_exponent": self.fitted_exponent,
            "fit_residual": self.fit_residual,
            "boundary_flagged": self.boundary_flagged,
        }


@dataclass(frozen=True)
class ShatterReport:
    """Path-weight summary of a depth-L chain against the uniform baseline."""

    max_path_weight: float
    continuum_estimate: float
    uniform_weight: float
    L: int
    r: int
    eps: Optional[float] = None

    def __post_init__(self):
        if not 0.0 < self.max_path_weight <= 1.0:
            raise ValueError("max_path_weight must lie in (0, 1]")
        if not 0.0 < self.continuum_estimate <= 1.0:
            raise ValueError("continuum_estimate must lie in (0, 1]")
        if self.L < 1 or self.r < 1:
            raise ValueError("L and r must be positive integers")
        if self.uniform_weight != uniform_path_weight(self.r, self.L):
            raise ValueError("uniform_weight must equal r**-L")
        if self.eps is not None and self.eps <= 0:
            raise ValueError("eps must be positive when given")

    def to_dict(self) -> dict:
        return {
            "max_path_weight": self.max_path_weight,
            "continuum_estimate": self.continuum_estimate,
            "uniform_weight": self.uniform_weight,
            "L": self.L,
            "r": self.r,
            "eps": self.eps,
        }


def _pmf_std(values: np.ndarray) -> float:
    total = values.sum()
    idx = np.arange(values.size)
    mean = (idx * values).sum() / total
    var = ((idx - mean) ** 2 * values).sum() / total
    return math.sqrt(max(var, 0.0))


def erf_profile(
    source: Union[LayerChain, ResidualGenerator],
    x0: int,
    cfg: Optional[DeepLimitConfig] = None,
) -> ErfReport:
    """Drop a Dirac probe at layer L, index x0, and track its width downwards.

    Accepts either a layer chain or a residual generator with its depth
    configuration.  The run is flagged when probe mass touches the first or
    last grid cell at any layer, since widths measured across the edge are
    unreliable.
    """
    if isinstance(source, LayerChain):
        if cfg is not None:
            raise ValueError("cfg only applies to a generator source")
        n = source.n_out
        depth = len(source)
        if not 0 <= x0 < n:
            raise ValueError(f"x0 must be in [0, {n})")
        interfaces = propagate_chain(source, SpatialCapacity.dirac(n, x0))
        walked = list(reversed(interfaces))  # probe layer first
        layer_of = lambda k: depth - k
    elif isinstance(source, ResidualGenerator):
        if cfg is None:
            raise ValueError("a generator source needs a DeepLimitConfig")
        n = source.n
        depth = cfg.L
        if not 0 <= x0 < n:
            raise ValueError(f"x0 must be in [0, {n})")
        walked = evolve_markov(source, cfg, SpatialCapacity.dirac(n, x0))
        layer_of = lambda k: depth - k
    else:
        raise TypeError("source must be a LayerChain or a ResidualGenerator")

    stds: List[Tuple[int, float]] = []
    flagged = False
    for steps, profile in enumerate(walked):
        edge_mass = profile.values[0] + profile.values[-1]
        if edge_mass > _BOUNDARY_MASS_TOL * profile.total:
            flagged = True
        stds.append((layer_of(steps), _pmf_std(profile.values)))

    points = [
        (math.log(depth - layer), math.log(sigma))
        for layer, sigma in stds
        if sigma >= _MIN_FIT_SIGMA and depth - layer > 0
    ]
    if len(points) >= 2:
        xs = np.array([p[0] for p in points])
        ys = np.array([p[1] for p in points])
        design = np.stack([xs, np.ones_like(xs)], axis=1)
        coef, *_ = np.linalg.lstsq(design, ys, rcond=None)
        exponent = float(coef[0])
        residual = float(np.sqrt(np.mean((design @ coef - ys) ** 2)))
    else:
        exponent = math.nan
        residual = math.nan
    return ErfReport(
        probe_index=x0,
        per_depth_std=tuple(stds),
        fitted_exponent=exponent,
        fit_residual=residual,
        boundary_flagged=flagged,
    )


def max_path_weight(chain: LayerChain) -> Tuple[float, float]:
    """Best diagonal path weight and its continuum estimate.

    Returns ``(max_i prod_l (D_l)_ii, max_i exp(sum_l ((D_l)_ii - 1)))``.
    The first is the exact weight of the stay-in-place path; the second
    replaces each factor by its exponential limit, which is tight for
    residual chains with small steps.  Layers must all be square.
    """
    diagonals = []
    for i, layer in enumerate(chain.layers):
        matrix = layer.to_operator().matrix
        if matrix.shape[0] != matrix.shape[1]:
            raise ValueError(f"layer {i} is not square: shape {matrix.shape}")
        diagonals.append(np.diag(matrix))
    stacked = np.array(diagonals)
    # sequential product, first layer first, so repeated runs are bit-identical
    products = np.ones(stacked.shape[1])
    for row in stacked:
        products = products * row
    direct = float(np.max(products))
    continuum = float(np.max(np.exp(np.sum(stacked - 1.0, axis=0))))
    return direct, continuum


def uniform_path_weight(r: int, L: int) -> float:
    """Weight of every path through L uniform layers of receptive field r."""
    if r < 1 or L < 1:
        raise ValueError("r and L must be positive integers")
    try:
        return 1.0 / float(r**L)
    except OverflowError:
        return 0.0


def enumerate_path_weights(chain: LayerChain, i_l: int, i_L: int) -> Tuple[float, float]:
    """Brute-force total and maximal single-path weight between two indices.

    Materializes the weight of every index path from entry ``i_L`` at the top
    to entry ``i_l`` at the bottom; the total recovers the ``(i_l, i_L)``
    entry of the product matrix.  Guarded to at most 10^6 paths; bigger
    chains must use the matrix product instead.
    """
    operators = [layer.to_operator().matrix for layer in chain.layers]
    if not 0 <= i_l < chain.n_in:
        raise ValueError(f"i_l must be in [0, {chain.n_in})")
    if not 0 <= i_L < chain.n_out:
        raise ValueError(f"i_L must be in [0, {chain.n_out})")
    count = 1
    for matrix in operators[:-1]:
        count *= matrix.shape[1]
        if count > _PATH_GUARD:
            raise ValueError(f"more than {_PATH_GUARD} paths; use the matrix product")
    if len(operators) == 1:
        value = float(operators[0][i_l, i_L])
        return value, value
    # weights[j_1, ..., j_{L-1}], one interface index added per factor
    weights = operators[0][i_l, :]
    for matrix in operators[1:-1]:
        weights = weights[..., None] * matrix
    weights = weights * operators[-1][:, i_L]
    return float(weights.sum()), float(weights.max())


def shatter_analysis(chain: LayerChain, r: int, eps: Optional[float] = None) -> ShatterReport:
    """Path-weight report for a chain against the uniform-r baseline."""
    direct, continuum = max_path_weight(chain)
    return ShatterReport(
        max_path_weight=direct,
        continuum_estimate=continuum,
        uniform_weight=uniform_path_weight(r, len(chain)),
        L=len(chain),
        r=r,
        eps=eps,
    )
