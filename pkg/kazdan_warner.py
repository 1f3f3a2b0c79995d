"""
Scalar reduction of the vortex equations to a Kazdan-Warner problem.

For a holomorphic map f with background metric H, the gauge u_s = ψ + φ_s/2
turns the vortex equations into

    ∇²φ + (s²/2)·h·e^φ − c(s) = 0,   c(s) = 2c₁ − s²/2,   c₁ = 2πr,

with ∇² = −Δ the analyst's Laplacian, ψ the mean-zero solution of
∇²ψ = iΛF_H − c₁ and h = −e^{2ψ}·Σ|φ_i|²_H ≤ 0.
"""
import logging
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from scipy.sparse.linalg import LinearOperator, cg

import app_config
from errors import (DegreeError, LimitUndefinedError, PreconditionError,
                    SolverFailure)
from holomorphic_data import Divisor, HoloMap, common_zeros, density_function, strip_common
from sphere_geometry import (ScalarField, SphereGrid, analyze, integrate, is_infinity,
                             laplace_beltrami, project, solve_poisson, synthesize)

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class Background:
    """Background data (H, ψ, h) for a map on a grid."""
    f: HoloMap
    grid: SphereGrid
    common: Divisor
    stripped: HoloMap
    curvature: ScalarField   # iΛF_H
    norm_H: ScalarField      # Σ|φ_i|²_H
    psi: ScalarField
    h: ScalarField

    @property
    def r(self) -> int:
        return self.f.r

    @property
    def c1(self) -> float:
        return 2 * np.pi * self.f.r

    def __iter__(self):
        # allows ``psi, h = build_background(...)``
        return iter((self.psi, self.h))


def chordal_norm(z: np.ndarray, E: Divisor) -> np.ndarray:
    """Π_j chord(z, e_j)^{2a_j}; identically 1 for an empty divisor."""
    z = np.asarray(z, dtype=complex)
    out = np.ones(z.shape)
    for e, a in E.items():
        if is_infinity(e):
            chord2 = 1.0 / (1.0 + np.abs(z) ** 2)
        else:
            chord2 = np.abs(z - e) ** 2 / ((1.0 + np.abs(z) ** 2) * (1.0 + abs(e) ** 2))
        out *= chord2 ** a
    return out


def build_background(f: HoloMap, grid: SphereGrid, degree_tol: float = app_config.DEGREE_TOL) -> Background:
    """Fubini-Study background metric, ψ and h for f.

    H is the pullback of the Fubini-Study metric by the map with common zeros
    removed, tensored with the round metric on O(l) for the common divisor
    of degree l. Its curvature is 2π(e(f′) + l).
    """
    E = common_zeros(f)
    stripped = strip_common(f, E) if not E.is_empty() else f
    c1 = 2 * np.pi * f.r
    if stripped.r > 0:
        density = density_function(stripped)(grid.z)
    else:
        density = np.zeros(grid.shape)
    raw = ScalarField(2 * np.pi * (density + E.degree), grid, "curvature_H")
    curvature = project(raw)
    mismatch = integrate(curvature) - c1
    if abs(mismatch) > degree_tol * max(1.0, c1):
        raise DegreeError(f"background curvature integrates to {c1 + mismatch:.6f}, expected {c1:.6f}"
                          f" (raise L_max above {grid.L_max})")
    curvature = (curvature - mismatch).named("curvature_H")
    psi = solve_poisson(c1 - curvature).named("psi")
    norm_H = ScalarField(chordal_norm(grid.z, E), grid, "norm_H")
    h = ScalarField(-np.exp(2 * psi.values) * norm_H.values, grid, "h")
    logger.debug(f"Background for degree {f.r}: common divisor degree {E.degree}, max h {h.values.max():.3e}")
    return Background(f, grid, E, stripped, curvature, norm_H, psi, h)


@dataclass(frozen=True, eq=False)
class KWProblem:
    grid: SphereGrid
    h: ScalarField
    r: int
    s: float
    tol: float = app_config.KW_TOL
    max_iter: int = app_config.KW_MAX_ITER

    def __post_init__(self):
        if self.h.grid is not self.grid:
            raise PreconditionError("h lives on a different grid")
        if np.max(self.h.values) > 0:
            raise PreconditionError(f"h must be ≤ 0, max h = {np.max(self.h.values):.3e}")
        if not stability_range(self.s, self.r):
            raise PreconditionError(f"s = {self.s} outside the stable range s² > 4πr for r = {self.r}")

    @property
    def c1(self) -> float:
        return 2 * np.pi * self.r

    @property
    def c(self) -> float:
        return 2 * self.c1 - self.s ** 2 / 2

    @property
    def coupling(self) -> float:
        return self.s ** 2 / 2


def stability_range(s: float, r: int) -> bool:
    return s > 0 and s ** 2 > 4 * np.pi * r


@dataclass(frozen=True, eq=False)
class KWSolution:
    s: float
    phi: ScalarField
    residual: float
    iterations: int
    damping: Tuple[float, ...] = ()
    residual_history: Tuple[float, ...] = ()


def kw_residual(problem: KWProblem, phi: ScalarField) -> ScalarField:
    """∇²φ + (s²/2)·h·e^φ − c(s) at the nodes."""
    with np.errstate(over="ignore"):
        nonlinear = problem.coupling * problem.h.values * np.exp(phi.values)
    values = -laplace_beltrami(phi).values + nonlinear - problem.c
    return ScalarField(values, problem.grid, "kw_residual")


def sub_super_bracket(problem: KWProblem) -> Tuple[float, float]:
    """Constant sub- and super-solutions (requires c(s) < 0)."""
    if problem.c >= 0:
        raise PreconditionError(f"c(s) = {problem.c:.4g} ≥ 0 admits no bracket (needs s² > 8πr)")
    mag = -problem.h.values
    base = np.log(-2 * problem.c / problem.s ** 2)
    upper = base - np.log(mag.min()) if mag.min() > 0 else np.inf
    return float(base - np.log(mag.max())), float(upper)


class _HarmonicOperators:
    """(Δ + |q|) and its diagonal-in-harmonics preconditioner, W-symmetrized."""

    def __init__(self, grid: SphereGrid, q: np.ndarray):
        self.grid = grid
        self.q = q
        self.sqrt_w = np.sqrt(grid.weights)
        self.q_mean = float(np.sum(grid.weights * q))
        self.n = q.size

    def _unweight(self, x):
        return x.reshape(self.grid.shape) / self.sqrt_w

    def _weight(self, v):
        return (v * self.sqrt_w).ravel()

    def apply(self, x):
        v = self._unweight(x)
        coeffs = analyze(ScalarField(v, self.grid)) * self.grid.eigenvalues[:, None]
        return self._weight(synthesize(self.grid, coeffs) + self.q * v)

    def precondition(self, x):
        v = self._unweight(x)
        coeffs = analyze(ScalarField(v, self.grid))
        band = synthesize(self.grid, coeffs)
        inv = synthesize(self.grid, coeffs / (self.grid.eigenvalues[:, None] + self.q_mean))
        return self._weight(inv + (v - band) / self.q_mean)

    def solve(self, rhs: np.ndarray, rtol: float) -> np.ndarray:
        A = LinearOperator((self.n, self.n), matvec=self.apply, dtype=float)
        M = LinearOperator((self.n, self.n), matvec=self.precondition, dtype=float)
        x, info = cg(A, self._weight(rhs), rtol=rtol, atol=0.0, maxiter=500, M=M)
        if info != 0:
            logger.debug(f"CG stopped with info={info}")
        return self._unweight(x)


def initial_guess(h: ScalarField, floor: float = app_config.KW_FLOOR) -> ScalarField:
    return ScalarField(-np.log(np.maximum(-h.values, floor)), h.grid, "phi")


def solve_kw(problem: KWProblem, initial: Optional[ScalarField] = None) -> KWSolution:
    """Damped Newton with residual line search.

    Raises:
        SolverFailure: no convergence within ``max_iter`` steps, or c(s) ≥ 0
            with h ≢ 0 (integrating the equation shows no solution exists).
    """
    grid = problem.grid
    if problem.c >= 0 and np.min(problem.h.values) < 0:
        raise SolverFailure(f"c(s) = {problem.c:.4g} ≥ 0: no solution with h ≤ 0 (needs s² > 8πr)")
    phi = initial if initial is not None else initial_guess(problem.h)
    target = problem.tol * (1.0 + abs(problem.c))
    R = kw_residual(problem, phi)
    norm = R.sup_norm()
    history, damping = [norm], []
    for it in range(1, problem.max_iter + 1):
        if norm <= target:
            return KWSolution(problem.s, phi.named("phi"), norm, it - 1, tuple(damping), tuple(history))
        q = -problem.coupling * problem.h.values * np.exp(phi.values)
        ops = _HarmonicOperators(grid, q)
        rtol = max(1e-14, min(1e-3, 0.1 * norm / (1.0 + abs(problem.c))))
        delta = ops.solve(R.values, rtol)
        lam = 1.0
        while True:
            trial = phi.values + lam * delta
            new_norm = np.inf
            if np.all(np.isfinite(trial)) and np.max(trial) < 700:
                new_R = kw_residual(problem, ScalarField(trial, grid))
                new_norm = new_R.sup_norm()
            if new_norm <= (1 - 1e-4 * lam) * norm or new_norm <= target:
                break
            lam *= 0.5
            if lam < 2.0 ** -30:
                raise SolverFailure(f"line search stalled at residual {norm:.3e} (s={problem.s})",
                                    result=KWSolution(problem.s, phi, norm, it, tuple(damping), tuple(history)),
                                    iterations=it)
        phi, R, norm = ScalarField(trial, grid, "phi"), new_R, new_norm
        history.append(norm)
        damping.append(lam)
        logger.debug(f"KW Newton s={problem.s:.4g} iter {it}: residual {norm:.3e}, damping {lam}")
    if norm <= target:
        return KWSolution(problem.s, phi, norm, problem.max_iter, tuple(damping), tuple(history))
    raise SolverFailure(f"Newton did not converge in {problem.max_iter} iterations (residual {norm:.3e})",
                        result=KWSolution(problem.s, phi, norm, problem.max_iter, tuple(damping), tuple(history)),
                        iterations=problem.max_iter)


@dataclass(frozen=True, eq=False)
class AdiabaticSweep:
    schedule: np.ndarray
    solutions: Tuple[KWSolution, ...]
    phi_inf: ScalarField
    background: Background

    @property
    def sup_errors(self) -> np.ndarray:
        return np.array([np.max(np.abs(sol.phi.values - self.phi_inf.values)) for sol in self.solutions])

    def decay_slope(self) -> float:
        """Log-log slope of sup|φ_s − φ_∞| against s."""
        err = self.sup_errors
        return float(np.polyfit(np.log(self.schedule), np.log(err), 1)[0])

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "s": self.schedule,
            "residual": [sol.residual for sol in self.solutions],
            "sup_error": self.sup_errors,
            "iterations": [sol.iterations for sol in self.solutions],
        })


def geometric_schedule(s0: float, ratio: float, count: int) -> np.ndarray:
    return s0 * ratio ** np.arange(count)


def adiabatic_sweep(f: HoloMap, schedule: Sequence[float], grid: SphereGrid,
                    tol: float = app_config.KW_TOL, max_iter: int = app_config.KW_MAX_ITER,
                    warm_start: bool = False, n_jobs: int = app_config.THREADS,
                    background: Optional[Background] = None) -> AdiabaticSweep:
    """Solve the KW equation along an increasing schedule and compare with φ_∞ = −log(−h)."""
    schedule = np.asarray(schedule, dtype=float)
    if np.any(np.diff(schedule) <= 0):
        raise PreconditionError("schedule must be strictly increasing")
    bg = background or build_background(f, grid)
    if not bg.common.is_empty() or np.max(bg.h.values) >= 0:
        raise LimitUndefinedError(f"h vanishes at the common zeros {bg.common.to_json()}")
    phi_inf = ScalarField(-np.log(-bg.h.values), grid, "phi_inf")
    problems = [KWProblem(grid, bg.h, f.r, s, tol, max_iter) for s in schedule]

    if warm_start:
        solutions = []
        guess = None
        for p in problems:
            sol = solve_kw(p, guess)
            solutions.append(sol)
            guess = sol.phi
    else:
        solutions = Parallel(n_jobs=n_jobs, prefer="threads")(delayed(solve_kw)(p) for p in problems)
    sweep = AdiabaticSweep(schedule, tuple(solutions), phi_inf, bg)
    err = sweep.sup_errors
    if np.any(np.diff(err) > 0):
        logger.warning(f"sup|φ_s − φ_∞| not decreasing along the schedule: {err.tolist()}")
    logger.info(f"Adiabatic sweep over {schedule.size} values of s, final sup error {err[-1]:.3e}")
    return sweep
