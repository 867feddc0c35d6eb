"""Analytic eigensystem of the negative Dirichlet Laplacian on boxes.

On the interval (0, L) the eigenpairs are lambda_k = (k pi / L)^2 with
eigenfunctions sqrt(2/L) sin(k pi x / L); on a rectangle they are the tensor
products, flattened into a single ascending sequence.  Restricting to these
domains keeps every eigenpair closed-form, so downstream quadrature and
truncation tails can be checked exactly.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Domain:
    """Open box (0, L_1) x ... x (0, L_dim) with zero Dirichlet boundary."""

    dim: int
    extent: tuple = ()

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ValueError(f"dim must be 1 or 2, got {self.dim}")
        ext = tuple(float(e) for e in (self.extent or (1.0,) * self.dim))
        if len(ext) != self.dim:
            raise ValueError(f"extent {ext} does not match dim {self.dim}")
        if any(e <= 0 for e in ext):
            raise ValueError(f"extents must be positive, got {ext}")
        object.__setattr__(self, "extent", ext)


def fundamental_eigenvalue(domain: Domain) -> float:
    """Smallest Dirichlet eigenvalue, pi^2 * sum(1/L_i^2)."""
    return sum((math.pi / L) ** 2 for L in domain.extent)


@dataclass(frozen=True)
class EigenPair:
    """One eigenpair: rank `index` (1-based), eigenvalue `lam`, tensor indices `modes`."""

    index: int
    lam: float
    modes: tuple
    domain: Domain

    def evaluate(self, points) -> np.ndarray:
        """L2-normalized eigenfunction at `points` ((n,) in 1D, (n, 2) in 2D)."""
        pts = np.asarray(points, dtype=float)
        ext = self.domain.extent
        if self.domain.dim == 1:
            return math.sqrt(2.0 / ext[0]) * np.sin(self.modes[0] * math.pi * pts / ext[0])
        pts = pts.reshape(-1, 2)
        i, j = self.modes
        norm = 2.0 / math.sqrt(ext[0] * ext[1])
        return norm * np.sin(i * math.pi * pts[:, 0] / ext[0]) * np.sin(
            j * math.pi * pts[:, 1] / ext[1]
        )


@dataclass(frozen=True)
class EigenBasis:
    """First K Dirichlet eigenpairs, ascending in eigenvalue.

    `lambdas` (K,) and `modes` (K, dim) mirror `pairs` as arrays for vectorized
    consumers; ties in 2D are broken lexicographically on (i, j) so the
    ordering is reproducible across runs (sample coupling depends on it).
    """

    domain: Domain
    pairs: tuple
    lambdas: np.ndarray
    modes: np.ndarray

    def __len__(self) -> int:
        return len(self.pairs)

    def mode_values(self, points, count: int | None = None) -> np.ndarray:
        """Matrix of the first `count` eigenfunctions at `points`, shape (n_points, count)."""
        k = len(self) if count is None else count
        if not 1 <= k <= len(self):
            raise ValueError(f"count {k} outside 1..{len(self)}")
        pts = np.asarray(points, dtype=float)
        ext = self.domain.extent
        if self.domain.dim == 1:
            freq = self.modes[:k, 0] * (math.pi / ext[0])
            return math.sqrt(2.0 / ext[0]) * np.sin(pts.reshape(-1, 1) * freq)
        pts = pts.reshape(-1, 2)
        sx = np.sin(pts[:, 0:1] * (self.modes[:k, 0] * (math.pi / ext[0])))
        sy = np.sin(pts[:, 1:2] * (self.modes[:k, 1] * (math.pi / ext[1])))
        return (2.0 / math.sqrt(ext[0] * ext[1])) * sx * sy


def build_basis(domain: Domain, count: int) -> EigenBasis:
    """First `count` eigenpairs of -Laplacian with Dirichlet conditions on `domain`."""
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    ext = domain.extent
    if domain.dim == 1:
        ks = np.arange(1, count + 1)
        lambdas = (ks * math.pi / ext[0]) ** 2
        modes = ks.reshape(-1, 1)
    else:
        cx, cy = (math.pi / ext[0]) ** 2, (math.pi / ext[1]) ** 2
        m = int(2 * math.sqrt(count)) + 2
        while True:
            ij = np.arange(1, m + 1)
            lam = cx * ij[:, None] ** 2 + cy * ij[None, :] ** 2
            order = np.lexsort((np.tile(ij, m), np.repeat(ij, m), lam.ravel()))
            lam_sorted = lam.ravel()[order]
            # pairs outside the box have eigenvalue at least `complete_below`
            complete_below = min(cx * (m + 1) ** 2 + cy, cx + cy * (m + 1) ** 2)
            if len(order) >= count and lam_sorted[count - 1] < complete_below:
                break
            m *= 2
        sel = order[:count]
        modes = np.column_stack((np.repeat(ij, m)[sel], np.tile(ij, m)[sel]))
        lambdas = lam.ravel()[sel]
    pairs = tuple(
        EigenPair(index=k + 1, lam=float(lambdas[k]), modes=tuple(int(v) for v in modes[k]), domain=domain)
        for k in range(count)
    )
    return EigenBasis(domain=domain, pairs=pairs, lambdas=lambdas.astype(float), modes=modes.astype(int))


def weyl_ratios(basis: EigenBasis) -> np.ndarray:
    """Sequence lambda_k / k^(2/d); bounded above and below for these domains."""
    if len(basis) == 0:
        raise ValueError("basis is empty")
    k = np.arange(1, len(basis) + 1, dtype=float)
    return basis.lambdas / k ** (2.0 / basis.domain.dim)


def poincare_constant(basis: EigenBasis) -> float:
    """Sharp constant gamma with ||grad v||^2 >= gamma ||v||^2, i.e. the first eigenvalue."""
    if len(basis) == 0:
        raise ValueError("basis is empty")
    return float(basis.lambdas[0])
