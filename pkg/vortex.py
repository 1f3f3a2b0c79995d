"""
Abelian vortices from a holomorphic map and a Kazdan-Warner solution.

The connection is carried by the scalar gauge u_s = ψ + φ_s/2: the metric is
H_s = e^{2u_s}H, the curvature iΛF = iΛF_H + Δu_s and the section norm
S = Σ|φ_i|²_{H_s} = −h·e^{φ_s}. Vortex quantities are evaluated at the
effective coupling σ² = s²/2 under which the Kazdan-Warner equation is the
vortex equation iΛF + (σ²/2)(S − 1) = 0.
"""
import logging
from dataclasses import dataclass
from typing import Iterable, List, NamedTuple, Optional, Sequence

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

import app_config
from errors import ConfigurationError
from holomorphic_data import Divisor, HoloMap
from kazdan_warner import (Background, KWProblem, KWSolution, build_background, chordal_norm, kw_residual,
                           solve_kw, stability_range)
from sphere_geometry import (INFINITY, ScalarField, SphereGrid, chart_area_density, check_same_grid,
                             gradient, integrate, is_infinity, laplace_beltrami)

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class Vortex:
    s: float
    f: HoloMap
    background: Background
    phi: ScalarField
    u: ScalarField
    curvature: ScalarField       # iΛF
    section_norm: ScalarField    # Σ|φ_i|²_{H_s}

    @property
    def grid(self) -> SphereGrid:
        return self.u.grid

    @property
    def r(self) -> int:
        return self.f.r

    @property
    def coupling(self) -> float:
        """σ² = s²/2."""
        return self.s ** 2 / 2

    def degree(self) -> float:
        return integrate(self.curvature) / (2 * np.pi)

    def perturbed(self, du: ScalarField) -> "Vortex":
        """Same data with u_s replaced by u_s + du (no longer a solution)."""
        return _from_gauge(self.s, self.f, self.background, self.phi, self.u + du)


class YMHBreakdown(NamedTuple):
    curvature: float
    derivative: float
    potential: float

    @property
    def total(self) -> float:
        return self.curvature + self.derivative + self.potential


def _from_gauge(s, f, background, phi, u) -> Vortex:
    curvature = (background.curvature + laplace_beltrami(u)).named("curvature")
    section_norm = ScalarField(np.exp(2 * u.values) * background.norm_H.values, u.grid, "section_norm")
    return Vortex(s, f, background, phi, u.named("u"), curvature, section_norm)


def assemble_vortex(f: HoloMap, kw: KWSolution, background: Background) -> Vortex:
    """Gauge, curvature and section norm from a solved KW problem."""
    try:
        check_same_grid(kw.phi, background.psi)
    except ConfigurationError:
        raise ConfigurationError(
            f"KW solution on L_max={kw.phi.grid.L_max}, background on L_max={background.grid.L_max}")
    u = background.psi + 0.5 * kw.phi
    v = _from_gauge(kw.s, f, background, kw.phi, u)
    res = vortex_residual(v).sup_norm()
    if res > 1e-9 * (1 + v.coupling):
        logger.warning(f"assembled vortex at s={kw.s:.4g} has residual {res:.3e}")
    return v


def vortex_residual(v: Vortex) -> ScalarField:
    """iΛF + (σ²/2)(S − 1); equals −½ times the KW residual on assembled vortices."""
    values = v.curvature.values + 0.5 * v.coupling * (v.section_norm.values - 1.0)
    return ScalarField(values, v.grid, "vortex_residual")


def stability_check(s: float, r: int) -> bool:
    """True iff s² > 4πr."""
    return stability_range(s, r)


def _log_norm_derivative(z: np.ndarray, E: Divisor) -> np.ndarray:
    """∂_z log Π chord(z, e)^{2a}."""
    out = np.zeros(z.shape, dtype=complex)
    for e, a in E.items():
        out -= a * np.conj(z) / (1 + np.abs(z) ** 2)
        if not is_infinity(e):
            out += a / (z - e)
    return out


def _invert(E: Divisor) -> Divisor:
    pts = tuple(0j if is_infinity(p) else (INFINITY if p == 0 else 1.0 / p) for p in E.points)
    return Divisor(pts, E.multiplicities)


def _chart_term(f: HoloMap, x: np.ndarray, du: np.ndarray, u: np.ndarray, E: Divisor) -> np.ndarray:
    """2G·Σ|φ_i' + φ_i ∂log G|²/ρ_A with G = e^{2u}N/Φ in one chart."""
    phi, dphi = f.evaluate(x), f.derivative(x)
    big = np.sum(np.abs(phi) ** 2, axis=0)
    S = np.sum(dphi * np.conj(phi), axis=0) / big
    a = 2 * du + _log_norm_derivative(x, E) - S
    G = np.exp(2 * u) * chordal_norm(x, E) / big
    return 2 * G * np.sum(np.abs(dphi + phi * a) ** 2, axis=0) / chart_area_density(x)


def section_derivative_density(v: Vortex) -> ScalarField:
    """Pointwise Σ|D_{H_s}φ_i|², switching to w = 1/z outside the unit disc."""
    grid = v.grid
    u_theta, u_phi = gradient(v.u)
    z = grid.z
    rho = np.abs(z)
    ang = np.angle(z)
    du_z = 0.5 * np.exp(-1j * ang) * (-2.0 / (1 + rho ** 2) * u_theta - 1j / rho * u_phi)
    rho_w = 1.0 / rho
    du_w = 0.5 * np.exp(1j * ang) * (2.0 / (1 + rho_w ** 2) * u_theta + 1j / rho_w * u_phi)
    E = v.background.common
    out = np.empty(grid.shape)
    inner = rho <= 1.0
    out[inner] = _chart_term(v.f, z[inner], du_z[inner], v.u.values[inner], E)
    out[~inner] = _chart_term(v.f.at_infinity(), 1.0 / z[~inner], du_w[~inner],
                              v.u.values[~inner], _invert(E))
    return ScalarField(out, grid, "section_derivative_density")


def ymh_energy(v: Vortex) -> YMHBreakdown:
    """(1/σ²)‖F‖² + Σ‖Dφ_i‖² + (σ²/4)‖S − 1‖²."""
    sigma2 = v.coupling
    curv = integrate(v.curvature * v.curvature) / sigma2
    deriv = integrate(section_derivative_density(v))
    pot = 0.25 * sigma2 * integrate((v.section_norm - 1.0) * (v.section_norm - 1.0))
    return YMHBreakdown(curv, deriv, pot)


def bogomolny_gap(v: Vortex) -> float:
    """YMH − 2πr; equals ‖residual‖²/σ² up to quadrature."""
    return ymh_energy(v).total - 2 * np.pi * v.r


def solve_vortex(f: HoloMap, s: float, grid: SphereGrid, background: Optional[Background] = None,
                 tol: float = app_config.KW_TOL, max_iter: int = app_config.KW_MAX_ITER,
                 initial: Optional[ScalarField] = None) -> Vortex:
    bg = background or build_background(f, grid)
    kw = solve_kw(KWProblem(grid, bg.h, f.r, s, tol, max_iter), initial)
    return assemble_vortex(f, kw, bg)


def vortex_sweep(f: HoloMap, schedule: Sequence[float], grid: SphereGrid,
                 tol: float = app_config.KW_TOL, max_iter: int = app_config.KW_MAX_ITER,
                 n_jobs: int = app_config.THREADS) -> List[Vortex]:
    bg = build_background(f, grid)
    return Parallel(n_jobs=n_jobs, prefer="threads")(
        delayed(solve_vortex)(f, s, grid, bg, tol, max_iter) for s in schedule)


def vortex_table(vortices: Iterable[Vortex]) -> pd.DataFrame:
    rows = []
    for v in vortices:
        ymh = ymh_energy(v)
        rows.append({
            "s": v.s,
            "degree_check": v.degree(),
            "residual": vortex_residual(v).sup_norm(),
            "ymh_curv": ymh.curvature,
            "ymh_deriv": ymh.derivative,
            "ymh_pot": ymh.potential,
            "ymh_total": ymh.total,
            "bogomolny_gap": bogomolny_gap(v),
        })
    return pd.DataFrame(rows, columns=["s", "degree_check", "residual", "ymh_curv",
                                       "ymh_deriv", "ymh_pot", "ymh_total", "bogomolny_gap"])


def kw_residual_of(v: Vortex) -> ScalarField:
    """KW residual of the vortex's φ_s (for the residual identity)."""
    problem = KWProblem(v.grid, v.background.h, v.r, v.s)
    return kw_residual(problem, v.phi)
