"""Fixed-point solvers for the semilinear problem with projected noise.

Both solvers iterate the contraction map implied by inverting the Laplacian:
the spectral one in the span of the first N eigenmodes (with pseudo-spectral
evaluation of the nonlinearity on a 4N grid), the FEM one on the assembled P1
system with the nonlinearity applied nodally.  Zero and linear nonlinearities
are solved in closed form.  Contraction requires the Lipschitz constant of f
to stay below the Poincare constant of the domain; solvers refuse otherwise.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .covariance import NoiseSample
from .eigenbasis import EigenBasis, poincare_constant
from .errors import ContractionError, SolveError
from .fem import FemFunction, FemSystem, solve_spd

_KINDS = ("zero", "linear", "sin", "tanh")

PICARD_TOL = 1e-11
PICARD_MAX_ITER = 200


@dataclass(frozen=True)
class Nonlinearity:
    """Reaction term f(u): zero, c*u, c*sin(u), or c*tanh(u); Lipschitz constant |c|."""

    kind: str = "zero"
    c: float = 0.0

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"kind must be one of {_KINDS}, got {self.kind!r}")

    @property
    def lip(self) -> float:
        return 0.0 if self.kind == "zero" else abs(self.c)

    @property
    def closed_form(self) -> bool:
        return self.kind in ("zero", "linear")

    def __call__(self, u: np.ndarray) -> np.ndarray:
        if self.kind == "zero":
            return np.zeros_like(u)
        if self.kind == "linear":
            return self.c * u
        if self.kind == "sin":
            return self.c * np.sin(u)
        return self.c * np.tanh(u)

    @classmethod
    def zero(cls) -> "Nonlinearity":
        return cls("zero")

    @classmethod
    def linear(cls, c: float) -> "Nonlinearity":
        return cls("linear", c)

    @classmethod
    def scaled_sin(cls, c: float) -> "Nonlinearity":
        return cls("sin", c)

    @classmethod
    def scaled_tanh(cls, c: float) -> "Nonlinearity":
        return cls("tanh", c)


@dataclass(frozen=True)
class SpectralSolution:
    """Coefficients of the solution against phi_1..phi_n plus iteration trace."""

    coeffs: np.ndarray
    iterations: int
    residual: float
    increments: tuple
    closed_form: bool


@dataclass(frozen=True)
class FemSolution:
    function: FemFunction
    iterations: int
    residual: float
    increments: tuple
    closed_form: bool


def _check_contraction(lip: float, gamma: float):
    if lip >= gamma:
        raise ContractionError(
            f"Lipschitz constant {lip} is not below the Poincare constant {gamma}; "
            "the fixed-point map is not a contraction"
        )


def solve_spectral(
    basis: EigenBasis,
    n: int,
    f: Nonlinearity,
    sample: NoiseSample,
    tol: float = PICARD_TOL,
    max_iter: int = PICARD_MAX_ITER,
) -> SpectralSolution:
    """Galerkin solution in span{phi_1..phi_n} for one noise realization.

    Zero/linear f invert mode by mode; otherwise Picard iteration
    u <- invLaplacian(project(f(u)) + w) with f evaluated on a 4n-point grid
    (products of retained modes are integrated exactly there).
    """
    gamma = poincare_constant(basis)
    _check_contraction(f.lip, gamma)
    if not 1 <= n <= len(basis):
        raise ValueError(f"n={n} outside 1..{len(basis)}")
    if sample.n < n:
        raise ValueError(f"sample holds {sample.n} coefficients, need {n}")
    w = np.asarray(sample.coeffs[:n], dtype=float)
    lam = basis.lambdas[:n]
    if f.kind == "zero":
        coeffs = w / lam
        return SpectralSolution(coeffs, 0, 0.0, (), True)
    if f.kind == "linear":
        coeffs = w / (lam - f.c)
        defect = float(np.linalg.norm((f.c * coeffs + w) / lam - coeffs))
        return SpectralSolution(coeffs, 0, defect, (), True)
    if basis.domain.dim != 1:
        raise ValueError(
            "pseudo-spectral Picard iteration is 1D only; use solve_fem in 2D"
        )
    L = basis.domain.extent[0]
    n_grid = 4 * n
    x = np.arange(1, n_grid) * (L / n_grid)
    modes = basis.mode_values(x, n)  # (n_grid - 1, n)
    quad_w = L / n_grid  # endpoint terms vanish with the Dirichlet data

    def step(u):
        fu = f(modes @ u)
        return (quad_w * (modes.T @ fu) + w) / lam

    u = np.zeros(n)
    increments = []
    for _ in range(max_iter):
        u_next = step(u)
        inc = float(np.linalg.norm(u_next - u))
        increments.append(inc)
        u = u_next
        if inc <= tol:
            defect = float(np.linalg.norm(step(u) - u))
            return SpectralSolution(u, len(increments), defect, tuple(increments), False)
    raise SolveError(
        f"Picard iteration did not reach tol={tol} in {max_iter} iterations "
        f"(n={n}, f={f.kind}, c={f.c})"
    )


def solve_fem(
    system: FemSystem,
    f: Nonlinearity,
    tol: float = PICARD_TOL,
    max_iter: int = PICARD_MAX_ITER,
) -> FemSolution:
    """P1 Galerkin solution of the assembled system for its stored noise load.

    Zero/linear f reduce to a single SPD solve; otherwise Picard iteration
    S u <- M f(u) + b with f applied at the nodes (an O(h^2) consistency
    crime, matching the discretization order).  Increments and the final
    defect are measured in the mass-weighted discrete L2 norm.
    """
    mesh = system.mesh
    gamma = sum((math.pi / L) ** 2 for L in mesh.extent)
    _check_contraction(f.lip, gamma)
    if system.noise_load is None:
        raise ValueError("system has no noise load; call with_noise_load first")
    b = system.noise_load
    S, M = system.stiffness, system.mass

    def m_norm(v):
        return math.sqrt(max(float(v @ (M @ v)), 0.0))

    if f.kind == "zero":
        u = solve_spd(S, b)
        return FemSolution(FemFunction.from_interior(mesh, u), 0, 0.0, (), True)
    if f.kind == "linear":
        u = solve_spd((S - f.c * M).tocsr(), b)
        defect = m_norm(solve_spd(S, M @ (f.c * u) + b, x0=u) - u)
        return FemSolution(FemFunction.from_interior(mesh, u), 0, defect, (), True)

    def step(u):
        return solve_spd(S, M @ f(u) + b, x0=u)

    u = np.zeros(b.size)
    increments = []
    for _ in range(max_iter):
        u_next = step(u)
        inc = m_norm(u_next - u)
        increments.append(inc)
        u = u_next
        if inc <= tol:
            defect = m_norm(step(u) - u)
            return FemSolution(
                FemFunction.from_interior(mesh, u), len(increments), defect,
                tuple(increments), False,
            )
    raise SolveError(
        f"Picard iteration did not reach tol={tol} in {max_iter} iterations "
        f"(n={mesh.n_per_side}, f={f.kind}, c={f.c})"
    )


def contraction_estimate(solution) -> float:
    """Largest ratio of consecutive Picard increment norms (empirical modulus).

    Closed-form solutions return 0 by convention; iterative traces need at
    least three recorded iterations."""
    if solution.closed_form:
        return 0.0
    inc = solution.increments
    if len(inc) < 3:
        raise ValueError(f"need >= 3 Picard iterations recorded, got {len(inc)}")
    ratios = [b / a for a, b in zip(inc[:-1], inc[1:]) if a > 0.0]
    return max(ratios) if ratios else 0.0
