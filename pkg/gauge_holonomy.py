"""
U(1) connections on punctured discs: holonomy on shrinking loops, condition
H / H_β classification, decaying gauges and decay-rate fits.

Connections are sampled on a polar grid (ρ, θ) as imaginary-valued components
A_ρ, A_θ of A = A_ρ dρ + A_θ dθ. Parallel transport along |ξ| = R solves
v′ + A_θ v = 0, so g(R) = exp(−∮A_θ dθ) and the conic model A = iβ dθ has
holonomy e^{−2πiβ}.
"""
import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.integrate import cumulative_trapezoid

from errors import AccuracyError, DataError, DomainError, InvalidMapError, PreconditionError
from holomorphic_data import HoloMap, chart_density
from sphere_geometry import ConicIntegral, conic_area_weight

logger = logging.getLogger(__name__)

INTEGER_TOL = 1e-3
H_TOL = 1e-3
BETA_SPREAD = 0.05


@dataclass(frozen=True, eq=False)
class ConnectionSample:
    """A_ρ, A_θ on radii ``rho`` (ascending) x uniform angles ``theta``."""
    rho: np.ndarray
    theta: np.ndarray
    A_rho: np.ndarray
    A_theta: np.ndarray

    def __post_init__(self):
        rho = np.asarray(self.rho, dtype=float)
        if rho.ndim != 1 or np.any(rho <= 0) or np.any(np.diff(rho) <= 0):
            raise DomainError("radii must be positive and strictly increasing")
        for name in ("A_rho", "A_theta"):
            arr = np.asarray(getattr(self, name), dtype=complex)
            if arr.shape != (rho.size, np.size(self.theta)):
                raise DomainError(f"{name} has shape {arr.shape}, expected {(rho.size, np.size(self.theta))}")
            if not np.all(np.isfinite(arr)):
                raise DomainError(f"{name} has non-finite samples")
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "rho", rho)
        object.__setattr__(self, "theta", np.asarray(self.theta, dtype=float))

    @property
    def n_theta(self) -> int:
        return self.theta.size


def polar_grid(radii: Sequence[float], n_theta: int) -> Tuple[np.ndarray, np.ndarray]:
    rho = np.sort(np.asarray(radii, dtype=float))
    return rho, 2 * np.pi * np.arange(n_theta) / n_theta


def log_radii(r_min: float, r_max: float, n: int) -> np.ndarray:
    return np.geomspace(r_min, r_max, n)


def conic_model(beta: float, radii: Sequence[float], n_theta: int = 64,
                perturbation: float = 0.0) -> ConnectionSample:
    """A = iβ(1 + perturbation·ρ) dθ."""
    rho, theta = polar_grid(radii, n_theta)
    A_theta = 1j * beta * (1 + perturbation * rho)[:, None] * np.ones(n_theta)[None, :]
    return ConnectionSample(rho, theta, np.zeros_like(A_theta), A_theta)


def smooth_model(radii: Sequence[float], n_theta: int = 64) -> ConnectionSample:
    """A = iρ dθ, whose holonomy tends to the identity."""
    rho, theta = polar_grid(radii, n_theta)
    A_theta = 1j * rho[:, None] * np.ones(n_theta)[None, :]
    return ConnectionSample(rho, theta, np.zeros_like(A_theta), A_theta)


def connection_from_map(f: HoloMap, radii: Sequence[float], n_theta: int = 64,
                        frame_degree: int = 0) -> ConnectionSample:
    """Chern connection of the pulled-back Fubini-Study metric in a unitary frame.

    ``f`` is given in the chart centred at the puncture. With local frame
    ξ^m (m = ``frame_degree``) the metric weight is |ξ|^{2m}/Φ and
    A_θ = i(m − Re(ξS)), A_ρ = −i·Im(ξS)/ρ with S = Σφ_i'φ̄_i/Φ.
    """
    rho, theta = polar_grid(radii, n_theta)
    xi = rho[:, None] * np.exp(1j * theta)[None, :]
    phi, dphi = f.evaluate(xi), f.derivative(xi)
    big = np.sum(np.abs(phi) ** 2, axis=0)
    if np.min(big) <= 1e-28 * np.max(big):
        raise InvalidMapError("common zero inside the sampled annulus")
    xS = xi * np.sum(dphi * np.conj(phi), axis=0) / big
    A_theta = 1j * (frame_degree - np.real(xS))
    A_rho = -1j * np.imag(xS) / rho[:, None]
    return ConnectionSample(rho, theta, A_rho, A_theta)


def _check_nyquist(values: np.ndarray, tol: float = 1e-8) -> None:
    # A_θ is complex; |k| ≥ 3n/8 is the upper quarter of the two-sided spectrum
    n = values.shape[-1]
    spec = np.abs(np.fft.fft(values, axis=-1))
    kabs = np.abs(np.fft.fftfreq(n, d=1.0 / n))
    scale = np.max(spec, axis=-1, initial=0.0) + 1e-300
    tail = np.max(spec[..., kabs >= 3 * n / 8], axis=-1, initial=0.0)
    if np.any(tail > tol * scale):
        raise AccuracyError(f"angular samples under-resolved (tail/peak {np.max(tail / scale):.2e}); raise n_theta")


def loop_integrals(c: ConnectionSample) -> np.ndarray:
    """∮A_θ dθ on every sampled radius (periodic trapezoid)."""
    _check_nyquist(c.A_theta)
    return 2 * np.pi * np.mean(c.A_theta, axis=1)


def holonomy(c: ConnectionSample, R: float) -> complex:
    """g(R) = exp(−∮_{|ξ|=R} A)."""
    if not c.rho[0] * (1 - 1e-12) <= R <= c.rho[-1] * (1 + 1e-12):
        raise DomainError(f"R = {R} outside sampled annulus [{c.rho[0]}, {c.rho[-1]}]")
    I = loop_integrals(c)
    loop = np.interp(R, c.rho, I.real) + 1j * np.interp(R, c.rho, I.imag)
    return complex(np.exp(-loop))


@dataclass(frozen=True, eq=False)
class HolonomyProfile:
    radii: np.ndarray     # descending
    g: np.ndarray


def holonomy_profile(c: ConnectionSample) -> HolonomyProfile:
    g = np.exp(-loop_integrals(c))
    return HolonomyProfile(c.rho[::-1].copy(), g[::-1].copy())


@dataclass(frozen=True)
class ConditionReport:
    classification: str            # H | H_beta | unclassified
    beta: Optional[float]
    exponents: Dict[str, float] = field(default_factory=dict)
    extension_eligible: bool = False

    def to_json(self) -> dict:
        return {"classification": self.classification, "beta": self.beta,
                "exponents": {k: (float(v) if np.isfinite(v) else None) for k, v in self.exponents.items()},
                "extension_eligible": self.extension_eligible}


def _slope(x: np.ndarray, y: np.ndarray) -> float:
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


def h_beta_criterion(c: ConnectionSample, beta: float, subtract_model: bool = False) -> Tuple[float, bool]:
    """Exponent of sup_θ|ρ^{2β−2}A_θ| in ρ and whether it tends to 0 as ρ → 0."""
    A = c.A_theta - 1j * beta if subtract_model else c.A_theta
    q = c.rho ** (2 * beta - 2) * np.max(np.abs(A), axis=1)
    if np.max(q) <= 1e-12:
        return np.inf, True
    if np.any(q <= 0):
        q = np.maximum(q, 1e-300)
    exponent = _slope(c.rho, q)
    return exponent, exponent > 0


def classify_condition(p: HolonomyProfile, c: ConnectionSample) -> ConditionReport:
    """Condition H, H_β(β̂) or unclassified from the holonomy profile."""
    radii = np.asarray(p.radii)
    if radii.size < 5 or radii.max() / radii.min() < 10:
        raise PreconditionError("need at least 5 radii spanning a decade")
    order = np.argsort(radii)
    radii, g = radii[order], np.asarray(p.g)[order]
    dist = np.abs(g - 1)
    exponents = {}
    positive = dist > 1e-14
    if positive.sum() >= 2:
        exponents["holonomy"] = _slope(radii[positive], dist[positive])
    if dist[0] <= H_TOL or exponents.get("holonomy", 0.0) > 0.5:
        return ConditionReport("H", None, exponents, True)

    betas = np.mod(-np.angle(g[:3]) / (2 * np.pi), 1.0)
    spread = float(np.max(betas) - np.min(betas))
    if spread > BETA_SPREAD:
        logger.info(f"β̂ unstable over the three smallest radii (spread {spread:.3f})")
        return ConditionReport("unclassified", None, exponents)
    beta = float(betas[0])
    if min(beta, 1 - beta) <= INTEGER_TOL:
        return ConditionReport("H", None, exponents, True)
    exponent, ok = h_beta_criterion(c, beta, subtract_model=True)
    exponents["h_beta"] = exponent
    if ok:
        return ConditionReport("H_beta", beta, exponents, True)
    return ConditionReport("unclassified", beta, exponents)


def apply_gauge(c: ConnectionSample, chi: Union[np.ndarray, Callable[[np.ndarray, np.ndarray], np.ndarray]]) -> ConnectionSample:
    """A ↦ A + i dχ for a real single-valued χ(ρ, θ)."""
    if callable(chi):
        chi = chi(c.rho[:, None], c.theta[None, :])
    chi = np.asarray(chi, dtype=float)
    k = np.fft.rfftfreq(c.n_theta, d=1.0 / c.n_theta)
    d_theta = np.fft.irfft(1j * k * np.fft.rfft(chi, axis=1), n=c.n_theta, axis=1)
    d_rho = np.gradient(chi, c.rho, axis=0, edge_order=2)
    return ConnectionSample(c.rho, c.theta, c.A_rho + 1j * d_rho, c.A_theta + 1j * d_theta)


@dataclass(frozen=True, eq=False)
class DecayingGauge:
    sample: ConnectionSample
    log_gamma: np.ndarray
    alpha: float


def gauge_invariance_defect(c: ConnectionSample, rng: np.random.Generator, n_gauges: int = 3,
                            n_modes: int = 4) -> float:
    """Largest change of the holonomy profile under random single-valued gauges."""
    base = holonomy_profile(c).g
    n_modes = max(1, min(n_modes, c.n_theta // 4))
    k = np.arange(1, n_modes + 1)
    radial = (c.rho / c.rho[-1])[:, None]
    worst = 0.0
    for _ in range(n_gauges):
        a, b = rng.normal(size=(2, n_modes))
        angular = np.cos(np.outer(c.theta, k)) @ a + np.sin(np.outer(c.theta, k)) @ b
        chi = rng.normal() * radial + radial * angular[None, :]
        moved = holonomy_profile(apply_gauge(c, chi)).g
        worst = max(worst, float(np.max(np.abs(moved - base))))
    return worst


def decaying_gauge(c: ConnectionSample, alpha: float, beta: float = 1.0) -> DecayingGauge:
    """Gauge taking A to i|z|^{−α}dz.

    The gauge is γ = exp(∫(i|z′|^{−α}dz′ − A)), integrated along rays from
    the outer radius and then around the outer circle.
    """
    if not alpha > 3 - 2 * beta:
        raise PreconditionError(f"α = {alpha} must exceed 3 − 2β = {3 - 2 * beta}")
    rho, theta = c.rho, c.theta
    e = np.exp(1j * theta)[None, :]
    target_rho = 1j * rho[:, None] ** -alpha * e
    target_theta = -rho[:, None] ** (1 - alpha) * e
    w_rho = target_rho - c.A_rho
    w_theta = target_theta - c.A_theta
    outer = np.concatenate([[0.0], cumulative_trapezoid(w_theta[-1], theta)])
    radial = cumulative_trapezoid(w_rho[::-1], rho[::-1], axis=0, initial=0.0)[::-1]
    log_gamma = radial + outer[None, :]
    sample = ConnectionSample(rho, theta, c.A_rho + w_rho, c.A_theta + w_theta)
    return DecayingGauge(sample, log_gamma, float(alpha))


def pullback_inversion(c: ConnectionSample) -> ConnectionSample:
    """Pull back by z = 1/w: ρ_w = 1/ρ, θ_w = −θ."""
    n = c.n_theta
    cols = (-np.arange(n)) % n
    rho_w = 1.0 / c.rho[::-1]
    a_theta = -c.A_theta[::-1][:, cols]
    a_rho = -c.A_rho[::-1][:, cols] / rho_w[:, None] ** 2
    return ConnectionSample(rho_w, c.theta, a_rho, a_theta)


def angular_decay_exponent(c: ConnectionSample) -> float:
    """Slope of log sup_θ|A_θ| against log ρ."""
    return _slope(c.rho, np.max(np.abs(c.A_theta), axis=1))


@dataclass(frozen=True)
class DecayFit:
    slope: float
    within_bound: bool


def decay_fit(rho: Sequence[float], density: Sequence[float], bound: float = -3.5) -> DecayFit:
    """Least-squares slope of log e against log ρ (affine chart, ρ ≥ 1)."""
    rho, density = np.asarray(rho, dtype=float), np.asarray(density, dtype=float)
    if np.any(density <= 0):
        raise DataError("density samples must be positive")
    if rho.min() < 1 or rho.max() / rho.min() < 10:
        raise PreconditionError("decay fits need ρ ≥ 1 over at least one decade")
    slope = _slope(rho, density)
    return DecayFit(slope, slope <= bound)


def energy_tail(f: HoloMap, radii: Sequence[float], n_theta: int = 256) -> np.ndarray:
    """Angular mean of the chart energy density on circles |y| = ρ."""
    radii = np.asarray(radii, dtype=float)
    y = radii[:, None] * np.exp(2j * np.pi * np.arange(n_theta) / n_theta)[None, :]
    return chart_density(f, y).mean(axis=1)


def conic_integrability(eps: float, beta: float, n_rings: int = 40) -> ConicIntegral:
    """β-weighted integral of the tail |ξ|^{−ε} near the cone point."""
    return conic_area_weight(beta, lambda xi: np.abs(xi) ** -eps, 0j, n_rings)
