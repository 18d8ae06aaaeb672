"""Backward propagation of spatial capacity through layers.

In the pseudo-random regime each layer turns feature-space capacity into
input-space capacity through the column-stochastic operator ``D = P o P``
(entrywise square, columns renormalized).  Chains apply the operators
top-down, ``kappa^{l-1} = D_l kappa^l``, conserving the total.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .augment import Activation
from .core import ProjectionMatrix, SpatialCapacity

__all__ = [
    "PropagationOperator",
    "Layer",
    "LayerChain",
    "propagation_matrix",
    "propagate_single",
    "propagate_chain",
    "differential_propagation_matrix",
]

_COLUMN_SUM_TOL = 1e-10


@dataclass(frozen=True)
class PropagationOperator:
    """Column-stochastic matrix mapping feature capacity to input capacity."""

    matrix: np.ndarray

    def __post_init__(self):
        matrix = np.asarray(self.matrix, dtype=float)
        if matrix.ndim != 2:
            raise ValueError(f"operator must be 2-dimensional, got shape {matrix.shape}")
        if not np.all(np.isfinite(matrix)):
            raise ValueError("operator contains non-finite entries")
        if matrix.size and matrix.min() < 0:
            raise ValueError(f"operator has negative entry {matrix.min():.3e}")
        sums = matrix.sum(axis=0)
        if np.any(np.abs(sums - 1.0) > _COLUMN_SUM_TOL):
            bad = int(np.argmax(np.abs(sums - 1.0)))
            raise ValueError(
                f"operator column {bad} sums to {sums[bad]!r}, not 1"
            )
        object.__setattr__(self, "matrix", matrix)

    @property
    def n_in(self) -> int:
        return self.matrix.shape[0]

    @property
    def n_out(self) -> int:
        return self.matrix.shape[1]

    @classmethod
    def identity(cls, n: int) -> "PropagationOperator":
        return cls(np.eye(n))

    @classmethod
    def uniform(cls, n_in: int, n_out: Optional[int] = None) -> "PropagationOperator":
        """All entries 1/n_in: one application uniformizes any profile."""
        return cls(np.full((n_in, n_out if n_out is not None else n_in), 1.0 / n_in))

    @classmethod
    def uniform_window(cls, n: int, r: int) -> "PropagationOperator":
        """Sliding window: column j spreads 1/r over r coordinates centered at j.

        The window wraps periodically, keeping every column an exact
        probability vector regardless of position.
        """
        if r < 1 or r > n:
            raise ValueError(f"window size must be in [1, {n}], got {r}")
        matrix = np.zeros((n, n))
        offsets = np.arange(r) - (r - 1) // 2
        for j in range(n):
            matrix[(j + offsets) % n, j] = 1.0 / r
        return cls(matrix)


@dataclass(frozen=True)
class Layer:
    """One chain element: an operator, or a projection it is derived from.

    Flavors: ``standard`` squares the projection columns (or takes the
    operator as-is); ``differential`` builds the residual-layer operator
    ``I + eps/(1+eps) (P o P - I)``; ``residual`` marks an operator already in
    ``I + eps*Delta`` form.  Projection-based layers carry the activation the
    closed form assumes.
    """

    flavor: str
    projection: Optional[ProjectionMatrix] = None
    operator: Optional[PropagationOperator] = None
    activation: Optional[Activation] = None
    eps: Optional[float] = None

    def __post_init__(self):
        if self.flavor not in ("standard", "residual", "differential"):
            raise ValueError(f"unknown layer flavor {self.flavor!r}")
        if (self.projection is None) == (self.operator is None):
            raise ValueError("layer needs exactly one of projection or operator")
        if self.flavor == "differential":
            if self.projection is None:
                raise ValueError("differential layers are built from a projection")
            if self.eps is None or self.eps <= 0:
                raise ValueError("differential layers require eps > 0")
        if self.projection is not None and self.activation is None:
            raise ValueError("projection-based layers require an activation")

    @classmethod
    def standard(cls, projection: ProjectionMatrix, activation: Activation) -> "Layer":
        return cls("standard", projection=projection, activation=activation)

    @classmethod
    def differential(
        cls,
        projection: ProjectionMatrix,
        eps: float,
        activation: Optional[Activation] = None,
    ) -> "Layer":
        act = activation if activation is not None else Activation.pseudo_random()
        return cls("differential", projection=projection, activation=act, eps=eps)

    @classmethod
    def from_operator(
        cls, operator: PropagationOperator, flavor: str = "standard"
    ) -> "Layer":
        return cls(flavor, operator=operator)

    def to_operator(self) -> PropagationOperator:
        if self.operator is not None:
            return self.operator
        if self.flavor == "differential":
            return differential_propagation_matrix(self.projection, self.eps)
        return propagation_matrix(self.projection)

    @property
    def n_in(self) -> int:
        return self.projection.n_in if self.projection is not None else self.operator.n_in

    @property
    def n_out(self) -> int:
        return self.projection.n_out if self.projection is not None else self.operator.n_out


@dataclass(frozen=True)
class LayerChain:
    """Layers in forward order: layers[0] reads the inputs, layers[-1] is the top."""

    layers: Tuple[Layer, ...]

    def __post_init__(self):
        layers = tuple(self.layers)
        if not layers:
            raise ValueError("chain must contain at least one layer")
        for i in range(1, len(layers)):
            if layers[i].n_in != layers[i - 1].n_out:
                raise ValueError(
                    f"layer {i} expects {layers[i].n_in} inputs but layer {i - 1} "
                    f"produces {layers[i - 1].n_out}"
                )
        object.__setattr__(self, "layers", layers)

    def __len__(self) -> int:
        return len(self.layers)

    @property
    def n_in(self) -> int:
        return self.layers[0].n_in

    @property
    def n_out(self) -> int:
        return self.layers[-1].n_out

    @classmethod
    def of_operators(
        cls, operators: Sequence[PropagationOperator], flavor: str = "standard"
    ) -> "LayerChain":
        return cls(tuple(Layer.from_operator(op, flavor=flavor) for op in operators))


def propagation_matrix(p) -> PropagationOperator:
    """Entrywise-squared projection with columns renormalized to sum 1.

    Accepts a ProjectionMatrix or a raw weight matrix; raw columns need not
    be unit norm, the squared columns are normalized either way.
    """
    if isinstance(p, ProjectionMatrix):
        matrix = p.matrix
    else:
        matrix = np.asarray(p, dtype=float)
        if matrix.ndim != 2:
            raise ValueError(f"weights must be 2-dimensional, got shape {matrix.shape}")
        if not np.all(np.isfinite(matrix)):
            raise ValueError("weights contain non-finite entries")
    squared = matrix**2
    sums = squared.sum(axis=0)
    if np.any(sums == 0):
        raise ValueError(f"weights have a zero column at index {int(np.argmin(sums))}")
    return PropagationOperator(squared / sums)


def propagate_single(
    d: PropagationOperator, kappa_phi: SpatialCapacity
) -> SpatialCapacity:
    """One backward step ``kappa = D kappa_phi``; the total is conserved."""
    if d.n_out != kappa_phi.n:
        raise ValueError(
            f"operator expects a capacity vector of length {d.n_out}, got {kappa_phi.n}"
        )
    return SpatialCapacity(d.matrix @ kappa_phi.values)


def propagate_chain(chain: LayerChain, kappa_top: SpatialCapacity) -> List[SpatialCapacity]:
    """All interface profiles, top-down: result[l] is the capacity entering layer l+1.

    ``result[len(chain)]`` is ``kappa_top`` itself and ``result[0]`` the
    input-space profile.  Closed-form chain propagation holds in the
    pseudo-random regime only; any projection-based layer with another
    activation is refused by name.
    """
    for i, layer in enumerate(chain.layers):
        if layer.activation is not None and layer.activation.kind != "pseudo_random":
            raise ValueError(
                f"layer {i} activation {layer.activation.kind!r} has no closed-form "
                "chain propagation; only pseudo_random is eligible"
            )
    if chain.n_out != kappa_top.n:
        raise ValueError(
            f"chain top dimension {chain.n_out} does not match capacity {kappa_top.n}"
        )
    profiles = [kappa_top]
    for layer in reversed(chain.layers):
        profiles.append(propagate_single(layer.to_operator(), profiles[-1]))
    profiles.reverse()
    return profiles


def differential_propagation_matrix(p: ProjectionMatrix, eps: float) -> PropagationOperator:
    """Residual-layer operator ``I + eps/(1+eps) (P o P - I)``.

    Derived from capacities in the residual augmented space normalized by
    1 + eps; to first order in eps this is ``I + eps (P o P - I)``.
    """
    if p.n_in != p.n_out:
        raise ValueError(f"differential layers require square P, got {p.n_in}x{p.n_out}")
    if eps <= 0:
        raise ValueError("eps must be positive")
    n = p.n_in
    # evaluated as (I + eps P o P) / (1 + eps): same matrix, and the identity
    # entries divide out exactly in the small cases quoted in the docs
    return PropagationOperator((np.eye(n) + eps * p.matrix**2) / (1.0 + eps))
