"""
Energy concentration analysis for families of holomorphic maps.

Everything here works in the chart centred at an atom (``HoloMap.localize``),
where disc energies are Euclidean-disc energies computed from boundary
integrals. Masses are excesses over the limit map f₀, so energy that stays
smooth in the limit is never counted as bubbling.
"""
import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from joblib import Parallel, delayed
from numpy.polynomial.legendre import leggauss
from scipy.optimize import brentq

import app_config
from errors import (DegenerateRescalingError, NonConvergenceError, PreconditionError,
                    ResolutionError)
from holomorphic_data import (FamilyLimit, HoloMap, MapFamily, chart_density, disc_energy,
                              family_limit, first_moment, point_to_json)
from sphere_geometry import INFINITY, is_infinity

logger = logging.getLogger(__name__)

DETECTION_THRESHOLD = 0.5   # B₀/2
MASS_FLOOR = 0.05


@dataclass(frozen=True)
class EnergyAtom:
    point: complex
    mass: float
    capture_radius: float

    def to_json(self) -> dict:
        return {"point": point_to_json(self.point), "mass": self.mass,
                "capture_radius": self.capture_radius}


@dataclass(frozen=True, eq=False)
class RenormScale:
    atom: EnergyAtom
    schedule: np.ndarray
    t: np.ndarray
    eps: np.ndarray
    centers: np.ndarray      # energy centre offsets in the atom chart
    mass: np.ndarray         # a(ε_s, s)
    t_closed: np.ndarray
    crossings: Tuple[Tuple[float, ...], ...]
    C0: float

    @property
    def ambiguous(self) -> bool:
        return any(len(c) > 1 for c in self.crossings)


@dataclass(frozen=True)
class RegimeFit:
    label: str               # moderate | slow | fast | unclassified
    slope: float
    lam: Optional[float] = None
    excluded: bool = False


@dataclass(frozen=True, eq=False)
class RescaledFamily:
    family: MapFamily
    atom: EnergyAtom
    working_scale: np.ndarray
    eps: np.ndarray
    hemisphere_radius: float
    hemisphere_mass: np.ndarray
    parent_energy: np.ndarray
    domain_energy: np.ndarray

    @property
    def domain_radius(self) -> np.ndarray:
        return self.working_scale * self.eps


@dataclass(frozen=True, eq=False)
class BubbleLimit:
    limit: FamilyLimit
    atoms: List[EnergyAtom]
    tau: float

    @property
    def map(self) -> HoloMap:
        return self.limit.f0

    @property
    def coefficient_limit(self) -> HoloMap:
        return self.limit.coefficient_limit

    @property
    def infinity_multiplicity(self) -> int:
        return self.limit.E.at_infinity


def _safe_limit(fam: MapFamily) -> Optional[FamilyLimit]:
    try:
        return family_limit(fam)
    except NonConvergenceError as e:
        logger.warning(f"family limit unavailable, masses use raw disc energies: {str(e)}")
        return None


def _excess(f: HoloMap, f0: Optional[HoloMap], center: complex, radius: float) -> float:
    mass = disc_energy(f, center, radius)
    if f0 is not None and f0.r > 0:
        mass -= disc_energy(f0, center, radius)
    return mass


def _excess_moment(f: HoloMap, f0: Optional[HoloMap], center: complex, radius: float) -> complex:
    moment = first_moment(f, center, radius)
    if f0 is not None and f0.r > 0:
        moment -= first_moment(f0, center, radius)
    return moment


def _candidates(f: HoloMap, radius: float, region: Optional[float]) -> List[complex]:
    """Component roots, read in whichever chart keeps them in the unit disc."""
    pts = []
    for roots in f.component_roots():
        pts += [complex(z) for z in roots if abs(z) <= 1.0 + 1e-9]
    if region is None:
        for roots in f.at_infinity().component_roots():
            for w in roots:
                if abs(w) < 1.0:
                    pts.append(INFINITY if abs(w) < radius / 4 else complex(1.0 / w))
    else:
        pts = [p for p in pts if abs(p) <= 0.5 * region]
        for roots in f.component_roots():
            pts += [complex(z) for z in roots if 1.0 < abs(z) <= 0.5 * region]
    clusters: List[complex] = []
    for p in pts:
        if is_infinity(p):
            if not any(is_infinity(q) for q in clusters):
                clusters.append(p)
            continue
        if not any(not is_infinity(q) and abs(q - p) < radius / 4 for q in clusters):
            clusters.append(p)
    return clusters


def detect_atoms(fam: MapFamily, eps0: float = app_config.EPS0, m_levels: int = app_config.M_LEVELS,
                 region: Optional[float] = None, limit: Optional[FamilyLimit] = None) -> List[EnergyAtom]:
    """Points where the excess disc energy stays above B₀/2 at the finest radius.

    Args:
        region: if given, only finite points with |z| ≤ region/2 are
            considered (bubble charts, whose ∞ is the neck).
    """
    radii = eps0 * 2.0 ** -np.arange(m_levels + 1)
    finest = radii[-1]
    lim = limit if limit is not None else _safe_limit(fam)
    f0 = lim.f0 if lim is not None else None
    top = fam.maps[fam.top_half()]
    atoms: List[EnergyAtom] = []
    for cand in _candidates(fam.last, finest, region):
        loc0 = f0.localize(cand) if f0 is not None else None
        persistent = all(_excess(m.localize(cand), loc0, 0j, finest) >= DETECTION_THRESHOLD for m in top)
        if not persistent:
            continue
        last = fam.last.localize(cand)
        mass_f = _excess(last, loc0, 0j, finest)
        shift = _excess_moment(last, loc0, 0j, finest) / mass_f
        point = cand
        if not is_infinity(cand):
            point = cand + shift
            if lim is not None:
                near = [e for e in lim.E.points if not is_infinity(e) and abs(e - point) < finest]
                if near:
                    point = near[0]
        loc = fam.last.localize(point)
        loc0 = f0.localize(point) if f0 is not None else None
        coarse = _excess(loc, loc0, 0j, radii[-2])
        fine = _excess(loc, loc0, 0j, finest)
        mass = (4 * fine - coarse) / 3
        if mass < 1.0 - MASS_FLOOR:
            logger.warning(f"discarding concentration at {point_to_json(point)} with mass {mass:.4f}")
            continue
        atoms.append(EnergyAtom(point, float(mass), float(finest)))
    finite = [a for a in atoms if not is_infinity(a.point)]
    for i, a in enumerate(finite):
        for b in finite[i + 1:]:
            if abs(a.point - b.point) <= 2 * finest:
                raise ResolutionError(
                    f"atoms {point_to_json(a.point)} and {point_to_json(b.point)} closer than "
                    f"{2 * finest:.3g}; lower eps0")
    logger.info(f"Detected {len(atoms)} atoms: {[a.to_json() for a in atoms]}")
    return atoms


def _profile_rate(f: HoloMap, f0: Optional[HoloMap], center: complex, rho: float, n: int = 512) -> float:
    """K = dF/d log t = −ρ²∫e(center + ρe^{iθ})dθ for the excess density."""
    z = center + rho * np.exp(2j * np.pi * np.arange(n) / n)
    dens = chart_density(f, z)
    if f0 is not None and f0.r > 0:
        dens = dens - chart_density(f0, z)
    return float(-rho ** 2 * 2 * np.pi * np.mean(dens))


def _scale_at(f: HoloMap, f0: Optional[HoloMap], eps: float, C0: float):
    center = _excess_moment(f, f0, 0j, eps) / max(_excess(f, f0, 0j, eps), 1e-300)
    if abs(center) > 0.5 * eps:
        center = 0j
    a = _excess(f, f0, center, eps)
    target = a - C0
    F = lambda x: _excess(f, f0, center, np.exp(-x)) - target
    x0 = np.log(1.0 / eps)
    xs = x0 + np.linspace(0.0, 40.0, 241)
    vals = np.array([F(x) for x in xs])
    crossings = []
    for i in np.nonzero(np.sign(vals[:-1]) * np.sign(vals[1:]) < 0)[0]:
        crossings.append(float(np.exp(brentq(F, xs[i], xs[i + 1], xtol=1e-14))))
    if not crossings:
        raise PreconditionError(f"no scale with hemisphere mass {C0} inside radius {eps:.3g}")
    t = crossings[0]
    nodes, weights = leggauss(64)
    lo, hi = x0, np.log(t)
    logt = 0.5 * (hi - lo) * nodes + 0.5 * (hi + lo)
    K = np.array([_profile_rate(f, f0, center, np.exp(-x)) for x in logt])
    K_bar = float(np.dot(weights, K) / 2.0)
    t_closed = np.exp(x0 - C0 / K_bar) if K_bar < 0 else np.nan
    return t, center, a, t_closed, tuple(crossings)


def compute_scale(fam: MapFamily, atom: EnergyAtom, C0: float = app_config.C0,
                  eps0_renorm: float = app_config.EPS0_RENORM, limit: Optional[FamilyLimit] = None,
                  n_jobs: int = app_config.THREADS) -> RenormScale:
    """Solve F_s(t) = a(ε_s, s) − C₀ for every member, plus its closed-form estimate."""
    if not 0.0 < C0 < app_config.B0 / 2:
        raise PreconditionError(f"C0 must lie in (0, {app_config.B0 / 2}), got {C0}")
    lim = limit if limit is not None else _safe_limit(fam)
    f0 = lim.f0.localize(atom.point) if lim is not None else None
    eps = np.minimum(eps0_renorm / np.sqrt(fam.schedule), atom.capture_radius)
    members = [m.localize(atom.point) for m in fam.maps]
    out = Parallel(n_jobs=n_jobs, prefer="threads")(
        delayed(_scale_at)(m, f0, e, C0) for m, e in zip(members, eps))
    t = np.array([o[0] for o in out])
    centers = np.array([o[1] for o in out], dtype=complex)
    mass = np.array([o[2] for o in out])
    t_closed = np.array([o[3] for o in out])
    crossings = tuple(o[4] for o in out)
    for s, c in zip(fam.schedule, crossings):
        if len(c) > 1:
            logger.warning(f"ambiguous scale at s={s:.4g}: crossings {list(c)}")
    top = fam.top_half()
    if np.any(np.diff(t[top]) < 0):
        logger.warning(f"t(s) decreases over the top half of the schedule: {t[top].tolist()}")
    logger.info(f"Scale at {point_to_json(atom.point)}: t = {t[-1]:.6g} at s = {fam.schedule[-1]:.4g}")
    return RenormScale(atom, fam.schedule, t, eps, centers, mass, t_closed,
                       crossings, C0)


def classify_regime(t: Sequence[float], schedule: Sequence[float]) -> RegimeFit:
    """Trend of s/t(s) over the top half of the schedule."""
    if isinstance(t, RenormScale):
        t = t.t
    t, s = np.asarray(t, dtype=float), np.asarray(schedule, dtype=float)
    if s.size < 6:
        raise PreconditionError(f"need at least 6 schedule points, got {s.size}")
    top = slice(s.size // 2, s.size)
    ratio = s[top] / t[top]
    slope = float(np.polyfit(np.log(s[top]), np.log(ratio), 1)[0])
    if abs(slope) < 0.1:
        # s/t(s) = λ + O(1/s); a quadratic in 1/s removes the second-order term
        deg = 2 if ratio.size >= 4 else 1
        lam = float(np.polyfit(1.0 / s[top], ratio, deg)[-1])
        return RegimeFit("moderate", slope, lam)
    if slope > 0.3:
        return RegimeFit("slow", slope)
    if slope < -0.3:
        logger.warning(f"fast blow-up (slope {slope:.3f}) is excluded by the theory")
        return RegimeFit("fast", slope, excluded=True)
    logger.warning(f"s/t(s) shows no limit trend (slope {slope:.3f})")
    return RegimeFit("unclassified", slope)


def renormalize_family(fam: MapFamily, atom: EnergyAtom, scale: RenormScale,
                       regime: Optional[RegimeFit] = None, normalize: bool = True,
                       limit: Optional[FamilyLimit] = None) -> RescaledFamily:
    """Members in the bubble chart y = t̂(s)·(ζ − c(s)), ζ the atom chart."""
    lam = regime.lam if (normalize and regime is not None and regime.label == "moderate") else 1.0
    t_hat = lam * scale.t
    domain = t_hat * scale.eps
    if domain[-1] < 4 * domain[0]:
        raise DegenerateRescalingError(
            f"rescaled domain radius grows only from {domain[0]:.3g} to {domain[-1]:.3g}")
    lim = limit if limit is not None else _safe_limit(fam)
    f0 = lim.f0.localize(atom.point) if lim is not None else None
    members, hemi, parent, dom = [], [], [], []
    for f, c, t, e in zip(fam.maps, scale.centers, t_hat, scale.eps):
        loc = f.localize(atom.point)
        g = loc.shifted(c, t)
        members.append(g)
        parent.append(disc_energy(loc, c, e))
        dom.append(disc_energy(g, 0j, t * e))
        inner = _excess(loc, f0, c, lam / t)
        hemi.append(_excess(loc, f0, c, e) - inner)
    rescaled = MapFamily(fam.schedule, fam.parameter, tuple(members))
    logger.info(f"Rescaled family at {point_to_json(atom.point)} with λ̂ = {lam:.6g}")
    return RescaledFamily(rescaled, atom, t_hat, scale.eps, float(lam), np.array(hemi),
                          np.array(parent), np.array(dom))


def bubble_limit(rf: RescaledFamily, eps0: float = app_config.EPS0,
                 m_levels: int = app_config.M_LEVELS) -> BubbleLimit:
    """Limit map on the bubble sphere, atoms inside it and the neck energy τ."""
    lim = family_limit(rf.family)
    atoms = detect_atoms(rf.family, eps0, m_levels, region=float(rf.domain_radius[-1]), limit=lim)
    tau = rf.atom.mass - lim.f0.r - sum(a.mass for a in atoms)
    if abs(tau) > 1e-2:
        logger.warning(f"neck energy τ = {tau:.4f} at {point_to_json(rf.atom.point)}")
    return BubbleLimit(lim, atoms, float(tau))
