"""Linear-algebra core: orthonormal capacity bases, subspace capacities, spatial profiles.

A capacity basis is a matrix with orthonormal columns spanning the directions
of the input (or feature) space that a model's parameters constrain.  The
capacity allocated to a subspace is the squared Frobenius norm of the basis
projected onto that subspace; summed over an orthonormal partition of the
ambient space it recovers the number of independent parameters.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DEFAULT_RANK_TOL = 1e-10

__all__ = [
    "DEFAULT_RANK_TOL",
    "CovarianceMatrix",
    "ProjectionMatrix",
    "CapacityBasis",
    "SubspaceSelector",
    "SpatialCapacity",
    "ParamMap",
    "orthonormal_basis",
    "gram_capacity_basis",
    "capacity_of_subspace",
    "spatial_profile",
]


def _as_matrix(m, name: str) -> np.ndarray:
    arr = np.asarray(m, dtype=float)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


@dataclass(frozen=True)
class CovarianceMatrix:
    """Symmetric positive semi-definite second-moment matrix of the inputs."""

    entries: np.ndarray
    tol: float = 1e-8

    def __post_init__(self):
        entries = _as_matrix(self.entries, "covariance")
        if entries.shape[0] != entries.shape[1]:
            raise ValueError(f"covariance must be square, got {entries.shape}")
        if not np.allclose(entries, entries.T, atol=self.tol * max(1.0, _specnorm(entries))):
            raise ValueError("covariance must be symmetric")
        entries = 0.5 * (entries + entries.T)
        scale = _specnorm(entries)
        if scale > 0:
            lo = np.linalg.eigvalsh(entries)[0]
            if lo < -self.tol * scale:
                raise ValueError(f"covariance is not PSD (min eigenvalue {lo:.3e})")
        object.__setattr__(self, "entries", entries)

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    @classmethod
    def identity(cls, dim: int, scale: float = 1.0) -> "CovarianceMatrix":
        return cls(scale * np.eye(dim))


def _specnorm(a: np.ndarray) -> float:
    return float(np.linalg.norm(a, 2)) if a.size else 0.0


@dataclass(frozen=True)
class ProjectionMatrix:
    """First-layer weights: columns are the distinct, unit-norm projection vectors."""

    matrix: np.ndarray

    def __post_init__(self):
        matrix = _as_matrix(self.matrix, "projection")
        norms = np.linalg.norm(matrix, axis=0)
        if not np.allclose(norms, 1.0, atol=1e-12):
            bad = int(np.argmax(np.abs(norms - 1.0)))
            raise ValueError(
                f"projection columns must have unit norm; column {bad} has norm {norms[bad]!r}"
            )
        m = matrix.shape[1]
        for j in range(m):
            for k in range(j + 1, m):
                if np.array_equal(matrix[:, j], matrix[:, k]):
                    raise ValueError(f"projection columns {j} and {k} are identical")
        object.__setattr__(self, "matrix", matrix)

    @property
    def n_in(self) -> int:
        return self.matrix.shape[0]

    @property
    def n_out(self) -> int:
        return self.matrix.shape[1]

    def column(self, j: int) -> np.ndarray:
        return self.matrix[:, j]

    @classmethod
    def from_raw(cls, matrix) -> "ProjectionMatrix":
        """Build from raw weights, normalizing each column to unit length."""
        matrix = _as_matrix(matrix, "projection")
        norms = np.linalg.norm(matrix, axis=0)
        if np.any(norms == 0):
            raise ValueError(f"projection has a zero column at index {int(np.argmin(norms))}")
        return cls(matrix / norms)

    @classmethod
    def identity(cls, n: int) -> "ProjectionMatrix":
        return cls(np.eye(n))


@dataclass(frozen=True)
class CapacityBasis:
    """Orthonormal columns spanning the constrained directions of an ambient space."""

    columns: np.ndarray

    def __post_init__(self):
        columns = _as_matrix(self.columns, "capacity basis")
        n, r = columns.shape
        if r > n:
            raise ValueError(f"rank {r} exceeds ambient dimension {n}")
        gram = columns.T @ columns
        if not np.allclose(gram, np.eye(r), atol=1e-10):
            raise ValueError("capacity basis columns are not orthonormal")
        object.__setattr__(self, "columns", columns)

    @property
    def ambient_dim(self) -> int:
        return self.columns.shape[0]

    @property
    def rank(self) -> int:
        return self.columns.shape[1]

    def projector(self) -> np.ndarray:
        """Orthogonal projector onto the spanned subspace (basis-independent)."""
        return self.columns @ self.columns.T


@dataclass(frozen=True)
class SubspaceSelector:
    """Orthonormal columns selecting a subspace of the ambient space."""

    basis: np.ndarray

    def __post_init__(self):
        basis = _as_matrix(self.basis, "subspace selector")
        k = basis.shape[1]
        if not np.allclose(basis.T @ basis, np.eye(k), atol=1e-10):
            raise ValueError("selector columns are not orthonormal")
        object.__setattr__(self, "basis", basis)

    @property
    def ambient_dim(self) -> int:
        return self.basis.shape[0]

    @property
    def k(self) -> int:
        return self.basis.shape[1]

    @classmethod
    def coordinate(cls, ambient_dim: int, index: int) -> "SubspaceSelector":
        e = np.zeros((ambient_dim, 1))
        e[index, 0] = 1.0
        return cls(e)

    @classmethod
    def coordinates(cls, ambient_dim: int, indices) -> "SubspaceSelector":
        basis = np.zeros((ambient_dim, len(indices)))
        for col, i in enumerate(indices):
            basis[i, col] = 1.0
        return cls(basis)

    @classmethod
    def full(cls, ambient_dim: int) -> "SubspaceSelector":
        return cls(np.eye(ambient_dim))


@dataclass(frozen=True)
class SpatialCapacity:
    """Non-negative capacity mass per spatial coordinate (dimensionless counts)."""

    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 1:
            raise ValueError(f"spatial capacity must be a vector, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("spatial capacity contains non-finite entries")
        if values.size and values.min() < -1e-10:
            raise ValueError(f"spatial capacity has negative entry {values.min():.3e}")
        object.__setattr__(self, "values", values)

    @property
    def n(self) -> int:
        return self.values.size

    @property
    def total(self) -> float:
        return float(self.values.sum())

    @classmethod
    def dirac(cls, n: int, index: int, mass: float = 1.0) -> "SpatialCapacity":
        v = np.zeros(n)
        v[index] = mass
        return cls(v)


@dataclass(frozen=True)
class ParamMap:
    """Jacobian of the readout coefficients with respect to the free parameters.

    Convention: ``jacobian[i, k] = d A_i / d W_k``, i.e. the coefficient vector
    is ``A = jacobian @ W`` for a fixed linear parametrization.  Redundant
    parametrizations (p > m, or rank-deficient jacobians) are allowed; rank is
    resolved downstream.
    """

    jacobian: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "jacobian", _as_matrix(self.jacobian, "jacobian"))

    @property
    def m(self) -> int:
        return self.jacobian.shape[0]

    @property
    def p(self) -> int:
        return self.jacobian.shape[1]

    @classmethod
    def free(cls, m: int) -> "ParamMap":
        """Every coefficient is an independent parameter."""
        return cls(np.eye(m))

    @classmethod
    def coordinate_selector(cls, m: int, indices) -> "ParamMap":
        """Parameters act on a subset of coefficients; the rest are frozen at 0."""
        jac = np.zeros((m, len(indices)))
        for col, i in enumerate(indices):
            jac[i, col] = 1.0
        return cls(jac)


def orthonormal_basis(matrix, tol: float = DEFAULT_RANK_TOL) -> CapacityBasis:
    """Orthonormal basis of the column space of ``matrix`` via rank-revealing SVD.

    Singular values below ``tol * sigma_max`` are treated as zero.  An all-zero
    matrix yields an empty (rank-0) basis rather than an error, so degenerate
    layers keep total-capacity bookkeeping consistent.
    """
    matrix = _as_matrix(matrix, "matrix")
    if tol <= 0:
        raise ValueError("tol must be positive")
    if matrix.size == 0 or not np.any(matrix):
        return CapacityBasis(np.zeros((matrix.shape[0], 0)))
    u, s, _ = np.linalg.svd(matrix, full_matrices=False)
    rank = int(np.sum(s > tol * s[0]))
    return CapacityBasis(u[:, :rank])


def gram_capacity_basis(params: ParamMap, tol: float = DEFAULT_RANK_TOL) -> CapacityBasis:
    """Feature-space capacity basis from the parameter jacobian.

    Eigenvectors of ``J J^T`` with eigenvalue above ``tol * lambda_max``,
    ordered by decreasing eigenvalue.  The rank equals the number of
    independent parameters.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    jac = params.jacobian
    gram = jac @ jac.T
    if not np.any(gram):
        return CapacityBasis(np.zeros((params.m, 0)))
    eigvals, eigvecs = np.linalg.eigh(gram)
    order = np.argsort(eigvals)[::-1]
    eigvals, eigvecs = eigvals[order], eigvecs[:, order]
    rank = int(np.sum(eigvals > tol * eigvals[0]))
    return CapacityBasis(eigvecs[:, :rank])


def capacity_of_subspace(basis: CapacityBasis, selector: SubspaceSelector) -> float:
    """Capacity allocated to the selected subspace: ``||K^T S||_F^2``."""
    if basis.ambient_dim != selector.ambient_dim:
        raise ValueError(
            f"ambient dimension mismatch: basis {basis.ambient_dim}, selector {selector.ambient_dim}"
        )
    return float(np.sum((basis.columns.T @ selector.basis) ** 2))


def spatial_profile(basis: CapacityBasis) -> SpatialCapacity:
    """Per-coordinate capacities; they sum to the basis rank."""
    values = np.sum(basis.columns**2, axis=1)
    return SpatialCapacity(values)
