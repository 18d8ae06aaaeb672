"""Augmented input spaces for non-linear layers.

A layer ``x -> f(P^T y)`` with piecewise-linear ``f(z) = eta_z * z`` acts
linearly on the augmented inputs ``(eta_j * y_i)``, indexed by (block j,
input i).  This module builds the block projection ``P~``, the augmented
covariance ``Sigma~`` with its decoupling coefficient ``nu``, and the
augmented capacity bases for the linear, ReLU-family, and pseudo-random
regimes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .core import (
    DEFAULT_RANK_TOL,
    CapacityBasis,
    CovarianceMatrix,
    ProjectionMatrix,
    SpatialCapacity,
    orthonormal_basis,
)

__all__ = [
    "Activation",
    "AugmentedLayout",
    "AugmentedSpace",
    "DecouplingReport",
    "build_augmented_projection",
    "build_differential_projection",
    "build_augmented_covariance",
    "decoupling_nu",
    "estimate_nu_monte_carlo",
    "linear_stacked_basis",
    "augmented_capacity_basis",
    "augmented_spatial_profile",
]

_PIECEWISE_KINDS = ("linear", "relu", "leaky_relu", "abs")
_CLOSED_FORM_KINDS = _PIECEWISE_KINDS + ("pseudo_random",)


@dataclass(frozen=True)
class Activation:
    """Pointwise activation ``f(z) = eta_z * z``.

    Piecewise-linear kinds have ``eta_z = alpha`` for z <= 0 and ``beta`` for
    z > 0, normalized so that ``alpha**2 + beta**2 = 2``.  The pseudo-random
    kind draws a fixed random sign ``eta_z = +-sigma`` per distinct z (see
    :func:`capnet.oracle.pseudo_random_eta`).  Custom kinds carry an arbitrary
    pointwise function and have no closed-form treatment.
    """

    kind: str
    leak: float = 0.0
    alpha: Optional[float] = None
    beta: Optional[float] = None
    sigma: float = 1.0
    custom_fn: Optional[Callable[[np.ndarray], np.ndarray]] = None

    def __post_init__(self):
        valid = _CLOSED_FORM_KINDS + ("custom",)
        if self.kind not in valid:
            raise ValueError(f"unknown activation kind {self.kind!r}")
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")
        if self.kind in _PIECEWISE_KINDS:
            alpha, beta = _normalized_slopes(self.kind, self.leak)
            object.__setattr__(self, "alpha", alpha)
            object.__setattr__(self, "beta", beta)
            if abs(alpha**2 + beta**2 - 2.0) > 1e-12:
                raise ValueError("slope normalization failed")
        if self.kind == "custom" and self.custom_fn is None:
            raise ValueError("custom activation requires custom_fn")

    @classmethod
    def linear(cls) -> "Activation":
        return cls("linear")

    @classmethod
    def relu(cls) -> "Activation":
        return cls("relu")

    @classmethod
    def leaky_relu(cls, slope: float) -> "Activation":
        return cls("leaky_relu", leak=slope)

    @classmethod
    def abs(cls) -> "Activation":
        return cls("abs")

    @classmethod
    def pseudo_random(cls, sigma: float = 1.0) -> "Activation":
        return cls("pseudo_random", sigma=sigma)

    @classmethod
    def custom(cls, fn: Callable[[np.ndarray], np.ndarray]) -> "Activation":
        return cls("custom", custom_fn=fn)

    @classmethod
    def parse(cls, text: str) -> "Activation":
        """Parse ``linear | relu | leaky_relu:<slope> | abs | pseudo_random[:<sigma>]``."""
        name, sep, arg = text.strip().partition(":")
        if name == "linear" and not sep:
            return cls.linear()
        if name == "relu" and not sep:
            return cls.relu()
        if name == "abs" and not sep:
            return cls.abs()
        if name == "leaky_relu" and sep:
            try:
                return cls.leaky_relu(float(arg))
            except ValueError:
                raise ValueError(f"bad leaky_relu slope {arg!r}") from None
        if name == "pseudo_random":
            if not sep:
                return cls.pseudo_random()
            try:
                return cls.pseudo_random(float(arg))
            except ValueError:
                raise ValueError(f"bad pseudo_random sigma {arg!r}") from None
        raise ValueError(f"cannot parse activation {text!r}")

    def spec(self) -> str:
        """Inverse of :meth:`parse`."""
        if self.kind == "leaky_relu":
            return f"leaky_relu:{self.leak:g}"
        if self.kind == "pseudo_random":
            return "pseudo_random" if self.sigma == 1.0 else f"pseudo_random:{self.sigma:g}"
        return self.kind

    def eta(self, z: np.ndarray, key: Optional[int] = None) -> np.ndarray:
        """Multiplier ``eta_z`` with ``f(z) = eta_z * z``, elementwise.

        ``key`` seeds the fixed random sign draw and is required for the
        pseudo-random kind.
        """
        z = np.asarray(z, dtype=float)
        if self.kind in _PIECEWISE_KINDS:
            return np.where(z <= 0, self.alpha, self.beta)
        if self.kind == "pseudo_random":
            if key is None:
                raise ValueError("pseudo_random eta requires a key")
            from .oracle import PseudoRandomSign, pseudo_random_eta

            return pseudo_random_eta(z, PseudoRandomSign(seed=key, sigma=self.sigma))
        out = np.asarray(self.custom_fn(z), dtype=float)
        return out / z

    def apply(self, z: np.ndarray, key: Optional[int] = None) -> np.ndarray:
        """Evaluate ``f(z)`` elementwise."""
        z = np.asarray(z, dtype=float)
        if self.kind == "custom":
            return np.asarray(self.custom_fn(z), dtype=float)
        return self.eta(z, key=key) * z


def _normalized_slopes(kind: str, leak: float) -> tuple:
    # raw (alpha, beta) rescaled by sqrt(2 / (alpha^2 + beta^2))
    raw = {"linear": (1.0, 1.0), "relu": (0.0, 1.0), "abs": (-1.0, 1.0)}.get(
        kind, (leak, 1.0)
    )
    scale = math.sqrt(2.0 / (raw[0] ** 2 + raw[1] ** 2))
    return raw[0] * scale, raw[1] * scale


@dataclass(frozen=True)
class AugmentedLayout:
    """Index map between augmented coordinates and (block j, input i) pairs.

    Standard layout: dimension n*m, row ``j*n + i`` holds ``eta_j * y_i``.
    Differential layout (square layers only): dimension n*(n+1); the first n
    rows are the un-modified inputs, row ``n + j*n + i`` holds the block-j
    correction.
    """

    kind: str
    n: int
    m: int

    def __post_init__(self):
        if self.kind not in ("standard", "differential"):
            raise ValueError(f"unknown layout kind {self.kind!r}")
        if self.n < 1 or self.m < 1:
            raise ValueError("layout dimensions must be positive")
        if self.kind == "differential" and self.n != self.m:
            raise ValueError("differential layout requires a square layer")

    @property
    def dim(self) -> int:
        if self.kind == "standard":
            return self.n * self.m
        return self.n * (self.n + 1)

    def input_index(self) -> np.ndarray:
        """Original input coordinate of each augmented row."""
        repeated = np.tile(np.arange(self.n), self.m)
        if self.kind == "standard":
            return repeated
        return np.concatenate([np.arange(self.n), repeated])

    def block_index(self) -> np.ndarray:
        """Block j of each augmented row; -1 marks un-modified input rows."""
        blocks = np.repeat(np.arange(self.m), self.n)
        if self.kind == "standard":
            return blocks
        return np.concatenate([np.full(self.n, -1), blocks])


@dataclass(frozen=True)
class AugmentedSpace:
    """Augmented projection, covariance, and their shared index layout."""

    p_tilde: np.ndarray
    sigma_tilde: CovarianceMatrix
    layout: AugmentedLayout

    def __post_init__(self):
        p_tilde = np.asarray(self.p_tilde, dtype=float)
        if p_tilde.shape != (self.layout.dim, self.layout.m):
            raise ValueError(
                f"p_tilde shape {p_tilde.shape} does not match layout "
                f"({self.layout.dim}, {self.layout.m})"
            )
        if self.sigma_tilde.dim != self.layout.dim:
            raise ValueError("sigma_tilde dimension does not match layout")
        support = self.block_support()
        if np.any(p_tilde[~support] != 0.0):
            raise ValueError("p_tilde has entries outside its block structure")
        object.__setattr__(self, "p_tilde", p_tilde)

    def block_support(self) -> np.ndarray:
        """Boolean mask of the rows each p_tilde column may touch."""
        blocks = self.layout.block_index()
        inputs = self.layout.input_index()
        cols = np.arange(self.layout.m)
        if self.layout.kind == "standard":
            return blocks[:, None] == cols[None, :]
        identity_part = (blocks[:, None] == -1) & (inputs[:, None] == cols[None, :])
        return identity_part | (blocks[:, None] == cols[None, :])


@dataclass(frozen=True)
class DecouplingReport:
    """Closed-form and Monte Carlo decoupling coefficients for one activation."""

    nu: Optional[float]
    nu_hat: float
    stderr: float
    n_samples: int

    def __post_init__(self):
        if self.stderr < 0:
            raise ValueError("stderr must be non-negative")
        if self.n_samples < 1:
            raise ValueError("n_samples must be positive")
        if self.nu is not None and abs(self.nu_hat) > 1.0 + 3.0 * self.stderr:
            raise ValueError(
                f"nu_hat {self.nu_hat!r} outside [-1, 1] by more than 3 stderr"
            )


def build_augmented_projection(p: ProjectionMatrix) -> np.ndarray:
    """Block projection ``P~`` of shape (n*m, m): p_j in block row j of column j.

    Columns are unit-norm with disjoint supports, so ``P~TP~ = identity(m)``.
    """
    n, m = p.n_in, p.n_out
    p_tilde = np.zeros((n * m, m))
    for j in range(m):
        p_tilde[j * n : (j + 1) * n, j] = p.column(j)
    return p_tilde


def build_differential_projection(p: ProjectionMatrix, eps: float) -> np.ndarray:
    """Residual-layer projection: identity block over ``sqrt(eps)`` times ``P~``.

    Shape (n*(n+1), n).  Column squared norms are 1 + eps; normalization is
    applied downstream where capacities are formed, not here.
    """
    if p.n_in != p.n_out:
        raise ValueError(f"differential layers require square P, got {p.n_in}x{p.n_out}")
    if eps <= 0:
        raise ValueError("eps must be positive")
    n = p.n_in
    top = np.eye(n)
    bottom = math.sqrt(eps) * build_augmented_projection(p)
    return np.vstack([top, bottom])


def build_augmented_covariance(
    sigma: CovarianceMatrix, act: Activation, m: int
) -> CovarianceMatrix:
    """Covariance of the augmented inputs under the decoupling approximation.

    Block (j, k) equals ``Sigma`` on the diagonal (``sigma**2 * Sigma`` for the
    pseudo-random kind) and ``nu * Sigma`` off the diagonal.
    """
    if m < 1:
        raise ValueError("m must be positive")
    if act.kind not in _CLOSED_FORM_KINDS:
        raise ValueError(
            "custom activations have no closed-form augmented covariance; "
            "estimate it empirically"
        )
    nu = decoupling_nu(act)
    diag = act.sigma**2 if act.kind == "pseudo_random" else 1.0
    coupling = (diag - nu) * np.eye(m) + nu * np.ones((m, m))
    return CovarianceMatrix(np.kron(coupling, sigma.entries))


def decoupling_nu(act: Activation) -> float:
    """Decoupling coefficient ``nu = (alpha + beta)**2 / 4``.

    Linear gives 1, ReLU 1/2, absolute value 0, leaky ReLU with slope a
    ``(1 + a)**2 / (2 * (1 + a**2))``.  Pseudo-random signs decouple fully:
    0 by construction.
    """
    if act.kind == "pseudo_random":
        return 0.0
    if act.kind not in _PIECEWISE_KINDS:
        raise ValueError("decoupling coefficient needs a piecewise-linear activation")
    # raw-slope form of (alpha + beta)**2 / 4: exact where the slopes are
    raw_lo, raw_hi = {"linear": (1.0, 1.0), "relu": (0.0, 1.0), "abs": (-1.0, 1.0)}.get(
        act.kind, (act.leak, 1.0)
    )
    return (raw_lo + raw_hi) ** 2 / (2.0 * (raw_lo**2 + raw_hi**2))


def estimate_nu_monte_carlo(
    act: Activation, n_samples: int, seed: int, shards: int = 1
) -> DecouplingReport:
    """Estimate ``nu = E[eta(z1) eta(z2)]`` over independent standard normals.

    Samples are split into ``shards`` contiguous sub-streams with seeds derived
    from ``seed`` and reduced in fixed order, so the result is reproducible
    bit-for-bit for a given (seed, n_samples, shards).
    """
    if n_samples < 1000:
        raise ValueError("n_samples must be at least 1000")
    if shards < 1 or shards > n_samples:
        raise ValueError("shards must be in [1, n_samples]")
    root = np.random.SeedSequence(seed)
    sample_keys, eta_key_seq = root.spawn(shards), root.spawn(1)[0]
    eta_key = int(eta_key_seq.generate_state(1)[0])
    counts = np.full(shards, n_samples // shards)
    counts[: n_samples % shards] += 1
    total = 0.0
    total_sq = 0.0
    for key, count in zip(sample_keys, counts):
        rng = np.random.default_rng(key)
        z = rng.standard_normal((int(count), 2))
        prod = act.eta(z[:, 0], key=eta_key) * act.eta(z[:, 1], key=eta_key)
        total += float(prod.sum())
        total_sq += float((prod**2).sum())
    mean = total / n_samples
    var = max(total_sq / n_samples - mean**2, 0.0)
    stderr = math.sqrt(var / n_samples)
    try:
        nu = decoupling_nu(act)
    except ValueError:
        nu = None
    return DecouplingReport(nu=nu, nu_hat=mean, stderr=stderr, n_samples=n_samples)


def linear_stacked_basis(k: CapacityBasis, m: int) -> CapacityBasis:
    """Augmented basis for linear activations: each of the m blocks is K/sqrt(m)."""
    if m < 1:
        raise ValueError("m must be positive")
    stacked = np.tile(k.columns / math.sqrt(m), (m, 1))
    return CapacityBasis(stacked)


def augmented_capacity_basis(
    sigma_tilde: CovarianceMatrix,
    p_tilde: np.ndarray,
    k_phi: CapacityBasis,
    white_input: bool = False,
    tol: float = DEFAULT_RANK_TOL,
) -> CapacityBasis:
    """Capacity basis in the augmented input space.

    With white inputs and a block-diagonal ``Sigma~`` (pseudo-random regime,
    standard construction) the columns of ``P~ K_phi`` are already orthonormal
    and are returned directly.  Otherwise the span of
    ``Sigma~ P~ K_phi`` is orthonormalized.
    """
    p_tilde = np.asarray(p_tilde, dtype=float)
    if p_tilde.shape[0] != sigma_tilde.dim:
        raise ValueError(
            f"p_tilde has {p_tilde.shape[0]} rows but sigma_tilde dim is {sigma_tilde.dim}"
        )
    if p_tilde.shape[1] != k_phi.ambient_dim:
        raise ValueError(
            f"p_tilde has {p_tilde.shape[1]} columns but k_phi ambient dim is "
            f"{k_phi.ambient_dim}"
        )
    if white_input:
        return CapacityBasis(p_tilde @ k_phi.columns)
    return orthonormal_basis(sigma_tilde.entries @ p_tilde @ k_phi.columns, tol=tol)


def augmented_spatial_profile(
    k_tilde: CapacityBasis, layout: AugmentedLayout
) -> SpatialCapacity:
    """Per-input-coordinate capacities, aggregated across all blocks."""
    if k_tilde.ambient_dim != layout.dim:
        raise ValueError(
            f"basis ambient dim {k_tilde.ambient_dim} does not match layout dim {layout.dim}"
        )
    row_mass = np.sum(k_tilde.columns**2, axis=1)
    values = np.bincount(layout.input_index(), weights=row_mass, minlength=layout.n)
    return SpatialCapacity(values)
