"""Coupled Monte Carlo convergence studies and theoretical rate predictions.

A study draws, per sample, one set of standard normal coefficients at the
reference mode count and reuses its prefixes at every coarser level, so level
differences measure discretization error rather than noise re-sampling.  The
reference solution is the closed-form spectral solution for zero/linear
reaction terms and an overkill FEM solve (two extra refinements) otherwise.
Per-level root-mean errors carry jackknife standard errors; rates come from
ordinary least squares on the log-log data.
"""
from __future__ import annotations

import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .covariance import (
    CovarianceSpec,
    Diagonal,
    General,
    PowerLaw,
    is_well_posed,
    noise_from_eta,
)
from .eigenbasis import Domain, build_basis
from .errors import ConfigError, IllPosedError, SolveError
from .fem import assemble, build_mesh, noise_load_matrix, prolong
from .solver import Nonlinearity, solve_fem, solve_spectral

DEFAULT_RATE_WINDOW = 0.15
DEFAULT_REFERENCE_MULT = 8
THREADS_ENV = "SPDEFEM_THREADS"


@dataclass(frozen=True)
class RatePrediction:
    """Exponent decomposition of the error bound C(N^a + h^q N^b) and the net
    rate in h under the mesh/mode coupling h ~ N^(-theta/d)."""

    spectral_exponent: float
    fem_h_power: float
    fem_exponent: float
    net_h_rate: float


def predicted_rate(d: int, rho: float, r: int = 1, coupling: float = 1.0) -> RatePrediction:
    """Theoretical convergence rates for the power-law covariance with exponent rho.

    The two error terms scale as N^((rho-2)/d + 1/2) and
    h^(r+1) N^((rho+r-1)/d + 1/2); with h ~ N^(-1/d) both collapse to
    h^(2 - d/2 - rho), independent of the element degree r.  For rho <= -d/2
    the mode sums driving the FEM term stay bounded, so its N exponent clamps
    at zero and the net rate saturates at r+1.
    """
    if d not in (1, 2):
        raise ConfigError(f"d must be 1 or 2, got {d}")
    if r < 1:
        raise ConfigError(f"element degree r must be >= 1, got {r}")
    if coupling <= 0:
        raise ConfigError(f"coupling exponent must be positive, got {coupling}")
    margin = 2.0 - d / 2.0 - rho
    if margin <= 0:
        raise IllPosedError(
            f"no solution exists for rho={rho} in dimension {d} "
            f"(requires rho < {2.0 - d / 2.0})"
        )
    spectral = (rho - 2.0) / d + 0.5
    fem_h = float(r + 1)
    fem_n = max(0.0, (rho + r - 1.0) / d + 0.5)
    net_n = max(spectral, fem_n - coupling * fem_h / d)
    net_h = -net_n * d / coupling
    return RatePrediction(
        spectral_exponent=spectral, fem_h_power=fem_h, fem_exponent=fem_n,
        net_h_rate=net_h,
    )


def predicted_rate_general(d: int, beta: float, r: int = 1) -> RatePrediction:
    """Rates in terms of the noise regularity exponent beta: error terms
    N^(-beta/d) and h^(r+1) N^((r+1-beta)/d); coupled net rate is beta."""
    if d not in (1, 2):
        raise ConfigError(f"d must be 1 or 2, got {d}")
    if r < 1:
        raise ConfigError(f"element degree r must be >= 1, got {r}")
    if not 0 < beta <= 2:
        raise IllPosedError(f"beta must be in (0, 2], got {beta}")
    spectral = -beta / d
    fem_h = float(r + 1)
    fem_n = (r + 1 - beta) / d
    net_n = max(spectral, fem_n - fem_h / d)
    return RatePrediction(
        spectral_exponent=spectral, fem_h_power=fem_h, fem_exponent=fem_n,
        net_h_rate=-net_n * d,
    )


@dataclass(frozen=True)
class ReferenceSpec:
    """Reference resolution: modes at n_mult times the finest level; `kind` is
    'spectral' (closed-form, zero/linear f only), 'fem' (overkill mesh), or
    'auto' (spectral whenever available)."""

    n_mult: int = DEFAULT_REFERENCE_MULT
    kind: str = "auto"

    def __post_init__(self):
        if self.n_mult < 2:
            raise ConfigError(f"reference n_mult must be >= 2, got {self.n_mult}")
        if self.kind not in ("auto", "spectral", "fem"):
            raise ConfigError(f"reference kind must be auto|spectral|fem, got {self.kind!r}")


def coupled_levels(domain: Domain, n_modes_list) -> list:
    """Default coupling: mesh resolution n = round(N^(1/d)) per level."""
    d = domain.dim
    return [(int(N), max(2, round(int(N) ** (1.0 / d)))) for N in n_modes_list]


@dataclass
class StudyConfig:
    domain: Domain
    covariance: CovarianceSpec
    levels: list
    samples: int
    master_seed: int = 0
    f: Nonlinearity = field(default_factory=Nonlinearity.zero)
    p: float = 2.0
    reference: ReferenceSpec = field(default_factory=ReferenceSpec)
    rate_window: float = DEFAULT_RATE_WINDOW
    threads: int | None = None

    def __post_init__(self):
        levels = [(int(N), int(n)) for N, n in self.levels]
        if not levels:
            raise ConfigError("levels must be nonempty")
        mode_counts = [N for N, _ in levels]
        if any(b <= a for a, b in zip(mode_counts, mode_counts[1:])):
            raise ConfigError(f"levels must be strictly increasing in N, got {mode_counts}")
        if any(N < 1 or n < 2 for N, n in levels):
            raise ConfigError("each level needs N >= 1 and n_per_side >= 2")
        self.levels = levels
        if self.samples < 2:
            raise ConfigError(f"samples must be >= 2, got {self.samples}")
        if self.p < 1:
            raise ConfigError(f"moment order p must be >= 1, got {self.p}")
        if self.rate_window <= 0:
            raise ConfigError("rate_window must be positive")


@dataclass(frozen=True)
class LevelError:
    h: float
    n_modes: int
    n_per_side: int
    error: float
    stderr: float


@dataclass(frozen=True)
class ConvergenceReport:
    levels: tuple
    fitted_rate: float
    predicted_rate: float
    passed: bool
    p: float
    samples: int

    def write_csv(self, path) -> None:
        with open(path, "w") as f:
            f.write("h,N,error,stderr\n")
            for lv in self.levels:
                f.write(f"{lv.h!r},{lv.n_modes},{lv.error!r},{lv.stderr!r}\n")

    def write_gnuplot(self, path, csv_name: str = "report.csv") -> None:
        _write_gnuplot(
            path, csv_name, xlabel="h", fitted=self.fitted_rate,
            predicted=self.predicted_rate,
            anchor=(self.levels[-1].h, self.levels[-1].error),
        )


@dataclass(frozen=True)
class TruncationLevel:
    n_modes: int
    error: float
    stderr: float
    mean_sq: float
    stderr_sq: float


@dataclass(frozen=True)
class TruncationReport:
    levels: tuple
    fitted_rate: float
    predicted_rate: float
    passed: bool
    p: float
    samples: int

    def write_csv(self, path) -> None:
        with open(path, "w") as f:
            f.write("N,error,stderr\n")
            for lv in self.levels:
                f.write(f"{lv.n_modes},{lv.error!r},{lv.stderr!r}\n")

    def write_gnuplot(self, path, csv_name: str = "report.csv") -> None:
        _write_gnuplot(
            path, csv_name, xlabel="N", fitted=self.fitted_rate,
            predicted=-self.predicted_rate if math.isfinite(self.predicted_rate) else math.nan,
            anchor=(self.levels[-1].n_modes, self.levels[-1].error),
            using="1:2:3",
        )


def _write_gnuplot(path, csv_name, xlabel, fitted, predicted, anchor, using="1:2:3"):
    lines = [
        "set datafile separator ','",
        "set logscale xy",
        f"set xlabel '{xlabel}'",
        "set ylabel 'error'",
        "set key left top",
    ]
    plot = (
        f"plot '{csv_name}' skip 1 using {using} with yerrorlines pt 7 "
        f"title 'measured (fitted rate {fitted:.3f})'"
    )
    x0, e0 = anchor
    if math.isfinite(predicted) and e0 > 0:
        plot += (
            f", \\\n     {e0!r} * (x / {x0!r})**({predicted!r}) "
            f"with lines dashtype 2 title 'predicted rate {predicted:.3f}'"
        )
    lines.append(plot)
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def exact_truncation_tail_sq(coeffs: np.ndarray, n: int) -> float:
    """Squared L2 error of keeping only the first n solution coefficients."""
    return float((np.asarray(coeffs)[n:] ** 2).sum())


def _worker_count(config: StudyConfig) -> int:
    want = config.threads if config.threads else (os.cpu_count() or 1)
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            want = min(want, max(1, int(env)))
        except ValueError:
            raise ConfigError(f"{THREADS_ENV} must be an integer, got {env!r}")
    return max(1, min(want, config.samples))


def _eta_length(q: CovarianceSpec, n_ref: int) -> int:
    return q.sqrt_coeffs.shape[1] if isinstance(q, General) else n_ref

def _available_modes(q: CovarianceSpec) -> int | None:
    if isinstance(q, Diagonal):
        return q.sigmas.size
    if isinstance(q, General):
        return q.sqrt_coeffs.shape[0]
    return None


def _check_well_posed(config: StudyConfig) -> None:
    verdict = is_well_posed(config.covariance, config.domain)
    if not verdict:
        extra = f" (margin {verdict.margin})" if verdict.margin is not None else ""
        raise IllPosedError(f"the configured covariance is not well-posed{extra}")


def _resolve_reference_kind(config: StudyConfig) -> str:
    kind = config.reference.kind
    if kind == "auto":
        return "spectral" if config.f.closed_form else "fem"
    if kind == "spectral" and not config.f.closed_form:
        raise ConfigError(
            "spectral reference needs a zero or linear reaction term; use kind='fem'"
        )
    return kind


def _reference_mode_count(config: StudyConfig) -> int:
    n_ref = config.reference.n_mult * config.levels[-1][0]
    available = _available_modes(config.covariance)
    if available is not None and n_ref > available:
        raise ConfigError(
            f"reference needs {n_ref} modes but the covariance only provides {available}"
        )
    return n_ref


def _spectral_reference(config: StudyConfig, lambdas: np.ndarray, w_ref: np.ndarray):
    if config.f.kind == "zero":
        return w_ref / lambdas
    return w_ref / (lambdas - config.f.c)


def _jackknife_stderr(powers: np.ndarray, p: float) -> float:
    m = powers.size
    total = powers.sum()
    loo = ((total - powers) / (m - 1)) ** (1.0 / p)
    return math.sqrt((m - 1) / m * float(((loo - loo.mean()) ** 2).sum()))


def _fit_rate(xs, errors) -> float:
    pts = [(x, e) for x, e in zip(xs, errors) if e > 0]
    if len(pts) < 3:
        return math.nan
    lx = np.log([x for x, _ in pts])
    le = np.log([e for _, e in pts])
    return float(np.polyfit(lx, le, 1)[0])


def run_study(config: StudyConfig) -> ConvergenceReport:
    """Coupled Monte Carlo estimate of E[||u - u_N^h||^p]^(1/p) per level,
    with fitted versus predicted convergence rate in the mesh size h."""
    _check_well_posed(config)
    n_ref = _reference_mode_count(config)
    basis = build_basis(config.domain, n_ref)
    ref_kind = _resolve_reference_kind(config)

    meshes, systems, loads = [], [], []
    for n_modes, n_side in config.levels:
        mesh = build_mesh(config.domain, n_side)
        meshes.append(mesh)
        systems.append(assemble(mesh))
        loads.append(noise_load_matrix(mesh, basis, n_ref))

    if ref_kind == "fem":
        n_side_ref = 4 * config.levels[-1][1]
        for _, n_side in config.levels:
            if n_side_ref % n_side != 0:
                raise ConfigError(
                    f"FEM reference mesh ({n_side_ref}) must nest every level; "
                    f"n={n_side} does not divide it"
                )
        mesh_ref = build_mesh(config.domain, n_side_ref)
        system_ref = assemble(mesh_ref)
        load_ref = noise_load_matrix(mesh_ref, basis, n_ref)

    eta_len = _eta_length(config.covariance, n_ref)
    q, f, p = config.covariance, config.f, config.p

    def one_sample(s: int) -> np.ndarray:
        rng = np.random.default_rng(np.random.SeedSequence(config.master_seed, spawn_key=(s,)))
        eta = rng.standard_normal(eta_len)
        w_ref = noise_from_eta(q, basis, n_ref, eta).coeffs
        if ref_kind == "spectral":
            c_ref = _spectral_reference(config, basis.lambdas, w_ref)
            ref_norm_sq = float(c_ref @ c_ref)
        else:
            try:
                sol_ref = solve_fem(system_ref.with_noise_load(load_ref @ w_ref), f)
            except SolveError as exc:
                raise SolveError(f"sample {s}, reference level: {exc}") from exc
        out = np.empty(len(config.levels))
        for ell, (n_modes, n_side) in enumerate(config.levels):
            b = loads[ell][:, :n_modes] @ w_ref[:n_modes]
            try:
                sol = solve_fem(systems[ell].with_noise_load(b), f)
            except SolveError as exc:
                raise SolveError(
                    f"sample {s}, level (N={n_modes}, n={n_side}): {exc}"
                ) from exc
            v = sol.function.values[meshes[ell].interior]
            if ref_kind == "spectral":
                e_sq = (
                    float(v @ (systems[ell].mass @ v))
                    - 2.0 * float(v @ (loads[ell] @ c_ref))
                    + ref_norm_sq
                )
            else:
                diff = prolong(sol.function, mesh_ref).values - sol_ref.function.values
                di = diff[mesh_ref.interior]
                e_sq = float(di @ (system_ref.mass @ di))
            out[ell] = max(e_sq, 0.0) ** (p / 2.0)
        return out

    workers = _worker_count(config)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(one_sample, range(config.samples)))
    else:
        rows = [one_sample(s) for s in range(config.samples)]
    powers = np.vstack(rows)  # (samples, levels)

    levels = []
    for ell, (n_modes, n_side) in enumerate(config.levels):
        col = powers[:, ell]
        error = float(col.mean()) ** (1.0 / p)
        levels.append(
            LevelError(
                h=meshes[ell].h, n_modes=n_modes, n_per_side=n_side,
                error=error, stderr=_jackknife_stderr(col, p),
            )
        )
    fitted = _fit_rate([lv.h for lv in levels], [lv.error for lv in levels])
    if isinstance(q, PowerLaw):
        predicted = predicted_rate(config.domain.dim, q.rho).net_h_rate
    else:
        predicted = math.nan
    if all(lv.error == 0.0 for lv in levels):
        passed = True
    elif math.isnan(fitted) or math.isnan(predicted):
        passed = True
    else:
        passed = abs(fitted - predicted) <= config.rate_window
    return ConvergenceReport(
        levels=tuple(levels), fitted_rate=fitted, predicted_rate=predicted,
        passed=passed, p=p, samples=config.samples,
    )


def run_truncation_study(config: StudyConfig) -> TruncationReport:
    """Monte Carlo estimate of the pure mode-truncation error E||u - u_N||
    versus N (mesh resolutions in the levels are ignored).

    For zero/linear reaction terms the per-sample error is the exact tail of
    the reference coefficients; otherwise each level is solved spectrally."""
    _check_well_posed(config)
    n_ref = _reference_mode_count(config)
    basis = build_basis(config.domain, n_ref)
    eta_len = _eta_length(config.covariance, n_ref)
    q, f, p = config.covariance, config.f, config.p
    mode_levels = [N for N, _ in config.levels]

    def one_sample(s: int) -> np.ndarray:
        rng = np.random.default_rng(np.random.SeedSequence(config.master_seed, spawn_key=(s,)))
        eta = rng.standard_normal(eta_len)
        sample_ref = noise_from_eta(q, basis, n_ref, eta)
        if f.closed_form:
            c_ref = _spectral_reference(config, basis.lambdas, sample_ref.coeffs)
            tails = [exact_truncation_tail_sq(c_ref, N) for N in mode_levels]
        else:
            try:
                u_ref = solve_spectral(basis, n_ref, f, sample_ref).coeffs
                tails = []
                for N in mode_levels:
                    u_n = solve_spectral(basis, N, f, sample_ref).coeffs
                    diff = u_ref.copy()
                    diff[:N] -= u_n
                    tails.append(float(diff @ diff))
            except SolveError as exc:
                raise SolveError(f"sample {s}: {exc}") from exc
        return np.asarray(tails)

    workers = _worker_count(config)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(one_sample, range(config.samples)))
    else:
        rows = [one_sample(s) for s in range(config.samples)]
    sq = np.vstack(rows)  # (samples, levels) squared errors
    powers = sq ** (p / 2.0)

    levels = []
    for ell, n_modes in enumerate(mode_levels):
        col = powers[:, ell]
        levels.append(
            TruncationLevel(
                n_modes=n_modes,
                error=float(col.mean()) ** (1.0 / p),
                stderr=_jackknife_stderr(col, p),
                mean_sq=float(sq[:, ell].mean()),
                stderr_sq=float(sq[:, ell].std(ddof=1)) / math.sqrt(config.samples),
            )
        )
    slope = _fit_rate([lv.n_modes for lv in levels], [lv.error for lv in levels])
    fitted = -slope if math.isfinite(slope) else math.nan
    if isinstance(q, PowerLaw):
        predicted = -predicted_rate(config.domain.dim, q.rho).spectral_exponent
    else:
        predicted = math.nan
    if all(lv.error == 0.0 for lv in levels):
        passed = True
    elif math.isnan(fitted) or math.isnan(predicted):
        passed = True
    else:
        passed = abs(fitted - predicted) <= config.rate_window
    return TruncationReport(
        levels=tuple(levels), fitted_rate=fitted, predicted_rate=predicted,
        passed=passed, p=p, samples=config.samples,
    )


def load_study_config(path) -> StudyConfig:
    """Parse a TOML or JSON study description into a StudyConfig.

    Keys: dim (1|2), optional extent, exactly one of rho | sigmas |
    sqrt_matrix, optional f = {kind, c}, levels (list of [N, n] pairs or bare
    mode counts to be coupled), samples, seed, optional p, reference =
    {n_mult, kind}, window, threads.
    """
    text = open(path, "rb").read()
    name = str(path)
    if name.endswith(".json"):
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"malformed JSON config {name}: {exc}") from exc
    else:
        try:
            import tomllib  # Python >= 3.11
        except ModuleNotFoundError:
            import tomli as tomllib
        try:
            data = tomllib.loads(text.decode())
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"malformed TOML config {name}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"config {name} must be a table/object")

    def take(key, default=None, required=False):
        if key in data:
            return data.pop(key)
        if required:
            raise ConfigError(f"config is missing required key {key!r}")
        return default

    try:
        domain = Domain(dim=int(take("dim", required=True)), extent=tuple(take("extent", ())))
        given = [k for k in ("rho", "sigmas", "sqrt_matrix") if k in data]
        if len(given) != 1:
            raise ConfigError(
                f"exactly one of rho | sigmas | sqrt_matrix must be given, got {given}"
            )
        if given[0] == "rho":
            covariance = PowerLaw(rho=float(take("rho")))
        elif given[0] == "sigmas":
            covariance = Diagonal(sigmas=np.asarray(take("sigmas"), dtype=float))
        else:
            covariance = General(sqrt_coeffs=np.asarray(take("sqrt_matrix"), dtype=float))
        f_spec = take("f", {})
        if not isinstance(f_spec, dict):
            raise ConfigError("f must be a table {kind, c}")
        f = Nonlinearity(kind=str(f_spec.get("kind", "zero")), c=float(f_spec.get("c", 0.0)))
        raw_levels = take("levels", required=True)
        if all(isinstance(v, (int, float)) for v in raw_levels):
            levels = coupled_levels(domain, raw_levels)
        else:
            levels = [(int(N), int(n)) for N, n in raw_levels]
        ref_spec = take("reference", {})
        if not isinstance(ref_spec, dict):
            raise ConfigError("reference must be a table {n_mult, kind}")
        reference = ReferenceSpec(
            n_mult=int(ref_spec.get("n_mult", DEFAULT_REFERENCE_MULT)),
            kind=str(ref_spec.get("kind", "auto")),
        )
        threads = take("threads", None)
        config = StudyConfig(
            domain=domain,
            covariance=covariance,
            levels=levels,
            samples=int(take("samples", required=True)),
            master_seed=int(take("seed", 0)),
            f=f,
            p=float(take("p", 2.0)),
            reference=reference,
            rate_window=float(take("window", DEFAULT_RATE_WINDOW)),
            threads=int(threads) if threads is not None else None,
        )
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"invalid config {name}: {exc}") from exc
    if data:
        raise ConfigError(f"unknown config keys: {sorted(data)}")
    return config
