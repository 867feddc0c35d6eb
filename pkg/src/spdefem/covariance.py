"""Covariance operators, Karhunen-Loeve sampling of spectrally projected noise,
and the summability quantities that control regularity and truncation error.

Three covariance representations are supported:

* ``PowerLaw(rho)``   -- Q is the rho-th power of the Dirichlet Laplacian, so Q
  shares the Laplacian eigenfunctions and sigma_k = lambda_k^rho (rho = 0 is
  white noise).
* ``Diagonal(sigmas)`` -- Q diagonal in the Laplacian eigenbasis with explicit
  nonnegative eigenvalues.
* ``General(sqrt_coeffs)`` -- a finite-rank square root given by the matrix
  B[m, k] = (Q^{1/2} psi_k, phi_m) in the Laplacian eigenbasis; Q = B B^T need
  not commute with the Laplacian.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .eigenbasis import Domain, EigenBasis, build_basis

# Partial-sum stagnation threshold for the non-analytic convergence heuristic.
_STAGNATION_TOL = 1e-8


@dataclass(frozen=True)
class PowerLaw:
    """Q = (Dirichlet Laplacian)^rho; diagonal with sigma_k = lambda_k^rho."""

    rho: float


@dataclass(frozen=True)
class Diagonal:
    """Q diagonal in the Laplacian eigenbasis with eigenvalues `sigmas` >= 0."""

    sigmas: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.sigmas, dtype=float)
        if arr.ndim != 1 or arr.size == 0:
            raise ValueError("sigmas must be a nonempty 1D sequence")
        if np.any(arr < 0):
            raise ValueError("sigmas must be nonnegative")
        object.__setattr__(self, "sigmas", arr)


@dataclass(frozen=True)
class General:
    """Square-root coefficient matrix B[m, k] = (Q^{1/2} psi_k, phi_m)."""

    sqrt_coeffs: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.sqrt_coeffs, dtype=float)
        if arr.ndim != 2 or arr.size == 0:
            raise ValueError("sqrt_coeffs must be a nonempty 2D matrix")
        object.__setattr__(self, "sqrt_coeffs", arr)


# Any of the three variants above.
CovarianceSpec = PowerLaw | Diagonal | General


@dataclass(frozen=True)
class NoiseSample:
    """One realization of the projected noise as coefficients against phi_1..phi_n.

    `eta` keeps the underlying standard normal draws so a sample can be
    re-truncated at other levels without re-drawing (level coupling).
    """

    n: int
    coeffs: np.ndarray
    seed: object
    eta: np.ndarray


@dataclass(frozen=True)
class RegularityIndex:
    beta: float
    hs_norm_sq: float
    converged: bool


@dataclass(frozen=True)
class WellPosedness:
    """Solvability verdict; `margin` is the power-law distance 2 - d/2 - rho
    (the supremum of admissible regularity exponents), None for non-analytic cases."""

    well_posed: bool
    margin: float | None

    def __bool__(self) -> bool:
        return self.well_posed


def _mode_count_available(q: CovarianceSpec, basis: EigenBasis) -> int:
    if isinstance(q, PowerLaw):
        return len(basis)
    if isinstance(q, Diagonal):
        return min(len(basis), q.sigmas.size)
    return min(len(basis), q.sqrt_coeffs.shape[0])


def _mode_weights_sq(q: CovarianceSpec, basis: EigenBasis, count: int) -> np.ndarray:
    """Per-mode total squared coupling sum_k (Q^{1/2} psi_k, phi_m)^2 for m <= count."""
    if count > _mode_count_available(q, basis):
        raise ValueError(
            f"{count} modes requested but only {_mode_count_available(q, basis)} available"
        )
    if isinstance(q, PowerLaw):
        return basis.lambdas[:count] ** q.rho
    if isinstance(q, Diagonal):
        return q.sigmas[:count].copy()
    return (q.sqrt_coeffs[:count] ** 2).sum(axis=1)


def sample_projected_noise(
    q: CovarianceSpec, basis: EigenBasis, n: int, seed
) -> NoiseSample:
    """Draw one realization of the noise projected onto the first n eigenmodes.

    `seed` is anything numpy's default_rng accepts (int or SeedSequence);
    identical (seed, q, n) reproduce the sample bit-exactly, and for the
    diagonal variants the first n coefficients of a sample at a finer level
    with the same seed coincide with the sample at level n.
    """
    if not 1 <= n <= _mode_count_available(q, basis):
        raise ValueError(
            f"n={n} outside 1..{_mode_count_available(q, basis)} available modes"
        )
    rng = np.random.default_rng(seed)
    if isinstance(q, General):
        eta = rng.standard_normal(q.sqrt_coeffs.shape[1])
    else:
        eta = rng.standard_normal(n)
    return noise_from_eta(q, basis, n, eta, seed=seed)


def noise_from_eta(
    q: CovarianceSpec, basis: EigenBasis, n: int, eta: np.ndarray, seed=None
) -> NoiseSample:
    """Build the level-n sample from given standard normal draws (shared across levels)."""
    if not 1 <= n <= _mode_count_available(q, basis):
        raise ValueError(
            f"n={n} outside 1..{_mode_count_available(q, basis)} available modes"
        )
    eta = np.asarray(eta, dtype=float)
    if isinstance(q, General):
        if eta.shape != (q.sqrt_coeffs.shape[1],):
            raise ValueError(
                f"eta must have length {q.sqrt_coeffs.shape[1]} for this square root"
            )
        coeffs = q.sqrt_coeffs[:n] @ eta
    else:
        if eta.size < n:
            raise ValueError(f"eta has {eta.size} draws, need at least {n}")
        coeffs = np.sqrt(_mode_weights_sq(q, basis, n)) * eta[:n]
    return NoiseSample(n=n, coeffs=coeffs, seed=seed, eta=eta)


def hs_norm_sq(
    q: CovarianceSpec, basis: EigenBasis, beta: float, trunc: int
) -> RegularityIndex:
    """Partial sum of the squared Hilbert-Schmidt norm controlling noise regularity.

    Computes sum_{m<=trunc} lambda_m^(beta-2) * sum_k (Q^{1/2} psi_k, phi_m)^2.
    For the power law the tail behavior is known analytically (via the
    lambda_k ~ k^(2/d) asymptotics), so `converged` is exact; for Diagonal and
    General it is a stagnation heuristic: did the partial sums move by less
    than 1e-8 over the last decade of indices?
    """
    if not 0.0 <= beta <= 2.0:
        raise ValueError(f"beta must be in [0, 2], got {beta}")
    if trunc < 1:
        raise ValueError("trunc must be >= 1")
    weights = _mode_weights_sq(q, basis, trunc)
    terms = basis.lambdas[:trunc] ** (beta - 2.0) * weights
    total = float(terms.sum())
    if isinstance(q, PowerLaw):
        converged = (beta - 2.0 + q.rho) < -basis.domain.dim / 2.0
    elif trunc >= 10:
        converged = float(terms[trunc // 10 :].sum()) < _STAGNATION_TOL
    else:
        converged = False
    return RegularityIndex(beta=beta, hs_norm_sq=total, converged=converged)


def is_well_posed(q: CovarianceSpec, domain: Domain) -> WellPosedness:
    """Whether the noise admits a solution: exact inequality for power laws,
    the hs_norm_sq stagnation heuristic at beta = 0 otherwise."""
    if isinstance(q, PowerLaw):
        margin = 2.0 - domain.dim / 2.0 - q.rho
        return WellPosedness(well_posed=margin > 0, margin=margin)
    count = q.sigmas.size if isinstance(q, Diagonal) else q.sqrt_coeffs.shape[0]
    basis = build_basis(domain, count)
    idx = hs_norm_sq(q, basis, beta=0.0, trunc=count)
    return WellPosedness(well_posed=idx.converged, margin=None)


def truncation_error_sq(
    q: CovarianceSpec, basis: EigenBasis, n: int, trunc: int
) -> float:
    """Expected squared L2 error of dropping modes above n, summed up to `trunc`.

    Exact series sum_{m=n+1}^{trunc} lambda_m^{-2} sum_k (Q^{1/2} psi_k, phi_m)^2;
    for the power law this is sum_{m>n} lambda_m^(rho-2).
    """
    if not 0 <= n < trunc:
        raise ValueError(f"need 0 <= n < trunc, got n={n}, trunc={trunc}")
    weights = _mode_weights_sq(q, basis, trunc)
    terms = basis.lambdas[:trunc] ** -2.0 * weights
    return float(terms[n:].sum())
