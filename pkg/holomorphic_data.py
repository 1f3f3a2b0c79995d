"""
Holomorphic maps from the sphere to ℂPᵏ in polynomial form.

A map of degree r is a (k+1)-tuple of polynomials of degree ≤ r, stored as a
(k+1, r+1) complex array of ascending coefficients. The energy is normalized
so that E(f) = deg f; in the chart the energy density is
e(f) = (1/π)·∂_z∂_z̄ log Σ|φ_i|² per unit dx dy, which equals
(1/4π)·∇² log Φ and, by the Lagrange identity,
(1/π)·Σ_{i<j}|φ_i'φ_j − φ_iφ_j'|² / Φ².

Disc energies and first moments are computed from boundary integrals
(divergence theorem on log Φ), which stay exact however concentrated the map.
"""
import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import sympy
from numpy.polynomial import polynomial as P
from numpy.polynomial.legendre import leggauss

from errors import (AccuracyError, DegenerateFiberError, InvalidMapError,
                    NonConvergenceError, StratificationError)
from sphere_geometry import (INFINITY, ScalarField, SphereGrid, chart_area_density, integrate,
                             is_infinity)

logger = logging.getLogger(__name__)

ZERO_TOL = 1e-12      # relative size below which a coefficient counts as zero
ROOT_CLUSTER_TOL = 1e-5  # proximity for common-zero candidates
COMMON_ZERO_TOL = 1e-9   # backward error at which a candidate is a common zero
LIMIT_CLEAN_TOL = 1e-8

Point = complex


def _trim(c: np.ndarray, tol: float = ZERO_TOL) -> np.ndarray:
    """Drop leading (highest-power) coefficients that are numerically zero."""
    scale = np.max(np.abs(c)) if c.size else 0.0
    if scale == 0:
        return c[:0]
    idx = np.nonzero(np.abs(c) > tol * scale)[0]
    return c[:idx[-1] + 1]


def _roots(c: np.ndarray) -> np.ndarray:
    c = _trim(c)
    if c.size <= 1:
        return np.zeros(0, dtype=complex)
    return P.polyroots(c).astype(complex)


@dataclass(frozen=True)
class Divisor:
    """Effective divisor on ℂ∪{∞} as (point, multiplicity) pairs."""
    points: Tuple[Point, ...] = ()
    multiplicities: Tuple[int, ...] = ()

    @property
    def degree(self) -> int:
        return int(sum(self.multiplicities))

    @property
    def finite(self) -> "Divisor":
        keep = [(p, a) for p, a in zip(self.points, self.multiplicities) if not is_infinity(p)]
        return Divisor(tuple(p for p, _ in keep), tuple(a for _, a in keep))

    @property
    def at_infinity(self) -> int:
        return int(sum(a for p, a in zip(self.points, self.multiplicities) if is_infinity(p)))

    def items(self) -> List[Tuple[Point, int]]:
        return list(zip(self.points, self.multiplicities))

    def is_empty(self) -> bool:
        return self.degree == 0

    def to_json(self) -> List[Dict]:
        return [{"point": point_to_json(p), "multiplicity": int(a)} for p, a in self.items()]


@dataclass(frozen=True)
class DivisorTuple:
    """One multiset of r points per component."""
    components: Tuple[Tuple[Point, ...], ...]
    degree: int

    def __post_init__(self):
        for i, pts in enumerate(self.components):
            if len(pts) != self.degree:
                raise InvalidMapError(
                    f"component {i} carries {len(pts)} points, expected {self.degree}")


def point_to_json(p: Point) -> Union[str, List[float]]:
    return "inf" if is_infinity(p) else [float(np.real(p)), float(np.imag(p))]


def point_from_json(value) -> Point:
    if isinstance(value, str):
        return INFINITY if value.lower() in ("inf", "infinity", "oo") else complex(value.replace("i", "j"))
    if isinstance(value, (int, float)):
        return complex(value)
    return complex(value[0], value[1])


@dataclass(frozen=True, eq=False)
class HoloMap:
    """(k+1)-tuple of polynomials of degree ≤ r (ascending coefficients)."""
    coeffs: np.ndarray

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=complex)
        if c.ndim != 2 or c.shape[0] < 2:
            raise InvalidMapError(f"coefficient array must be (k+1, r+1) with k >= 1, got {c.shape}")
        if not np.all(np.isfinite(c)):
            raise InvalidMapError("non-finite coefficients")
        if np.max(np.abs(c)) == 0:
            raise InvalidMapError("all components vanish")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    @property
    def k(self) -> int:
        return self.coeffs.shape[0] - 1

    @property
    def r(self) -> int:
        return self.coeffs.shape[1] - 1

    @property
    def degree(self) -> int:
        return self.r

    # construction -----------------------------------------------------

    @classmethod
    def from_components(cls, components: Sequence[Sequence[complex]], degree: Optional[int] = None,
                        normalize: bool = True) -> "HoloMap":
        """Build from ascending coefficient lists, padding to a common degree."""
        comps = [np.asarray(c, dtype=complex) for c in components]
        r = max(len(c) for c in comps) - 1 if degree is None else degree
        arr = np.zeros((len(comps), r + 1), dtype=complex)
        for i, c in enumerate(comps):
            if len(c) > r + 1:
                if np.any(np.abs(c[r + 1:]) > ZERO_TOL * np.max(np.abs(c))):
                    raise InvalidMapError(f"component {i} exceeds degree {r}")
                c = c[:r + 1]
            arr[i, :len(c)] = c
        f = cls(arr)
        return f.normalized() if normalize else f

    def normalized(self) -> "HoloMap":
        """Largest coefficient magnitude 1, that coefficient real positive."""
        c = self.coeffs
        mags = np.abs(c).ravel()
        pivot = int(np.nonzero(mags >= (1 - 1e-12) * mags.max())[0][0])
        value = c.ravel()[pivot]
        return HoloMap(c * (np.conj(value) / abs(value) / abs(value)))

    # evaluation ---------------------------------------------------------

    def evaluate(self, z: np.ndarray) -> np.ndarray:
        """Component values, shape (k+1, *z.shape)."""
        z = np.asarray(z, dtype=complex)
        return np.stack([P.polyval(z, c) for c in self.coeffs])

    def derivative(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=complex)
        return np.stack([P.polyval(z, P.polyder(c)) if c.size > 1 else np.zeros(z.shape, complex)
                         for c in self.coeffs])

    def norm_squared(self, z: np.ndarray) -> np.ndarray:
        """Φ(z) = Σ|φ_i(z)|²."""
        return np.sum(np.abs(self.evaluate(z)) ** 2, axis=0)

    # charts ---------------------------------------------------------------

    def at_infinity(self) -> "HoloMap":
        """The map in the chart w = 1/z (components w^r φ_i(1/w))."""
        return HoloMap(self.coeffs[:, ::-1])

    def shifted(self, center: complex, scale: float = 1.0) -> "HoloMap":
        """Components φ_i(center + y/scale) as polynomials in y."""
        inner = P.Polynomial([complex(center), 1.0 / scale])
        comps = [np.asarray(P.Polynomial(c)(inner).coef, dtype=complex) for c in self.coeffs]
        return HoloMap.from_components(comps, degree=self.r, normalize=True)

    def localize(self, p: Point) -> "HoloMap":
        """The map in the chart centred at p (shift, or inversion for ∞)."""
        if is_infinity(p):
            return self.at_infinity()
        if p == 0:
            return self
        return self.shifted(p)

    # divisors ---------------------------------------------------------------

    def exact_degrees(self) -> List[Optional[int]]:
        """Exact degree per component (None for the zero polynomial)."""
        out = []
        for c in self.coeffs:
            t = _trim(c)
            out.append(t.size - 1 if t.size else None)
        return out

    def component_roots(self) -> List[np.ndarray]:
        """Finite roots per component."""
        return [_roots(c) for c in self.coeffs]

    def to_divisors(self, base_point: complex = 1.0) -> Tuple[DivisorTuple, np.ndarray]:
        """Divisor tuple and projective fiber value at the base point."""
        comps = []
        for c, d in zip(self.coeffs, self.exact_degrees()):
            if d is None:
                raise DegenerateFiberError("a zero component has no divisor")
            roots = tuple(complex(z) for z in _roots(c))
            comps.append(roots + (INFINITY,) * (self.r - len(roots)))
        fiber = self.evaluate(np.array(base_point))
        if np.any(np.abs(fiber) < ZERO_TOL * np.max(np.abs(fiber))):
            raise DegenerateFiberError(f"base point {base_point} lies on a divisor")
        return DivisorTuple(tuple(comps), self.r), fiber / fiber[0]

    def to_json(self) -> List[List[List[float]]]:
        return [[[float(v.real), float(v.imag)] for v in row] for row in self.coeffs]

    @classmethod
    def from_json(cls, data) -> "HoloMap":
        return cls(np.array([[complex(a, b) for a, b in row] for row in data], dtype=complex))

    def is_constant(self) -> bool:
        rank = np.linalg.matrix_rank(self.coeffs, tol=ZERO_TOL * np.max(np.abs(self.coeffs)))
        return self.r == 0 or rank <= 1


def coefficient_distance(f: HoloMap, g: HoloMap) -> float:
    """Max coefficient difference after fixing the projective scale on f's pivot."""
    if f.coeffs.shape != g.coeffs.shape:
        return np.inf
    fn = f.normalized().coeffs
    pivot = np.unravel_index(np.argmax(np.abs(fn)), fn.shape)
    if abs(g.coeffs[pivot]) == 0:
        return np.inf
    gn = g.coeffs / g.coeffs[pivot] * fn[pivot]
    return float(np.max(np.abs(fn - gn)))


def fs_distance(f: HoloMap, g: HoloMap, z: np.ndarray) -> np.ndarray:
    """Fubini-Study distance between f(z) and g(z) in ℂPᵏ."""
    z = np.asarray(z, dtype=complex)
    inner = np.abs(z) <= 1.0
    out = np.empty(z.shape)
    for mask, ff, gg, pts in ((inner, f, g, z),
                              (~inner, f.at_infinity(), g.at_infinity(), None)):
        if not np.any(mask):
            continue
        pts = z[mask] if pts is not None else 1.0 / z[mask]
        a, b = ff.evaluate(pts), gg.evaluate(pts)
        wedge = np.zeros(pts.shape)
        for i in range(a.shape[0]):
            for j in range(i + 1, a.shape[0]):
                wedge += np.abs(a[i] * b[j] - a[j] * b[i]) ** 2
        dot = np.abs(np.sum(a * np.conj(b), axis=0))
        out[mask] = np.arctan2(np.sqrt(wedge), dot)
    return out


def _backward_error(c: np.ndarray, z: complex) -> float:
    """|p(z)| relative to Σ|c_j||z|^j."""
    c = _trim(c)
    if not c.size:
        return 0.0
    scale = P.polyval(abs(z), np.abs(c))
    return float(abs(P.polyval(z, c)) / scale) if scale > 0 else 0.0


def common_zeros(f: HoloMap, tol: float = ROOT_CLUSTER_TOL, backward_tol: float = COMMON_ZERO_TOL) -> Divisor:
    """Gcd divisor of the components, including multiplicity at ∞.

    Nearby roots of the components are only candidates; a candidate counts
    when every live component vanishes there to relative backward error
    backward_tol.
    """
    degrees = f.exact_degrees()
    live = [i for i, d in enumerate(degrees) if d is not None]
    if not live:
        return Divisor()
    inf_mult = min(f.r - degrees[i] for i in live)
    roots = [_roots(f.coeffs[i]) for i in live]
    ref = min(roots, key=len)
    points, mults = [], []
    used = np.zeros(ref.size, dtype=bool)
    for idx in range(ref.size):
        if used[idx]:
            continue
        scale = tol * max(1.0, abs(ref[idx]))
        cluster = np.abs(ref - ref[idx]) <= scale
        cluster &= ~used
        used |= cluster
        center = complex(np.mean(ref[cluster]))
        if max(_backward_error(f.coeffs[i], center) for i in live) > backward_tol:
            continue
        mult = min(int(np.sum(np.abs(r - center) <= 2 * scale)) for r in roots)
        if mult > 0:
            points.append(center)
            mults.append(mult)
    if inf_mult > 0:
        points.append(INFINITY)
        mults.append(inf_mult)
    return Divisor(tuple(points), tuple(mults))


def validate_map(f: HoloMap) -> HoloMap:
    """Raise unless the components have no common zero (∞ included)."""
    E = common_zeros(f)
    if not E.is_empty():
        raise InvalidMapError(f"components share zeros {E.to_json()}")
    return f


def strip_common(f: HoloMap, E: Optional[Divisor] = None) -> HoloMap:
    """Divide out the common divisor E (finite part by gcd, ∞ by degree drop)."""
    E = common_zeros(f) if E is None else E
    if E.is_empty():
        return f
    gcd = np.array([1.0 + 0j])
    for p, a in E.finite.items():
        for _ in range(a):
            gcd = P.polymul(gcd, [-p, 1.0])
    new_r = f.r - E.degree
    comps = []
    for c in f.coeffs:
        if not np.any(_trim(c)):
            comps.append(np.zeros(1, dtype=complex))
            continue
        q, rem = P.polydiv(c, gcd)
        if np.max(np.abs(rem), initial=0.0) > 1e-6 * np.max(np.abs(c)):
            logger.warning(f"gcd division left remainder {np.max(np.abs(rem)):.2e}")
        comps.append(q[:new_r + 1])
    return HoloMap.from_components(comps, degree=new_r)


def from_divisors(D: DivisorTuple, fiber: Sequence[complex], base_point: complex = 1.0) -> HoloMap:
    """The map with component divisors D and fiber value at the base point."""
    fiber = np.asarray(fiber, dtype=complex)
    if fiber.size != len(D.components):
        raise InvalidMapError(f"{fiber.size} fiber values for {len(D.components)} components")
    if np.any(fiber == 0):
        raise DegenerateFiberError("fiber values must be nonzero")
    if is_infinity(base_point):
        raise DegenerateFiberError("base point must be finite")
    comps = []
    for i, pts in enumerate(D.components):
        poly = np.array([1.0 + 0j])
        for p in pts:
            if not is_infinity(p):
                poly = P.polymul(poly, [-complex(p), 1.0])
        value = P.polyval(base_point, poly)
        scale = max(1.0, np.max(np.abs(poly)))
        if abs(value) <= 1e-13 * scale:
            raise DegenerateFiberError(f"base point {base_point} lies on divisor of component {i}")
        comps.append(poly * (fiber[i] / value))
    f = HoloMap.from_components(comps, degree=D.degree)
    return validate_map(f)


# energy densities ------------------------------------------------------------

def chart_density(f: HoloMap, z: np.ndarray) -> np.ndarray:
    """Energy per unit dx dy in the chart."""
    z = np.asarray(z, dtype=complex)
    phi, dphi = f.evaluate(z), f.derivative(z)
    wronsk = np.zeros(z.shape)
    for i in range(f.k + 1):
        for j in range(i + 1, f.k + 1):
            wronsk += np.abs(dphi[i] * phi[j] - phi[i] * dphi[j]) ** 2
    big = np.sum(np.abs(phi) ** 2, axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        return wronsk / (np.pi * big ** 2)


def density_function(f: HoloMap) -> Callable[[np.ndarray], np.ndarray]:
    """z ↦ energy per unit round area, switching to w = 1/z outside |z| ≤ 1."""
    f_inf = f.at_infinity()

    def density(z):
        z = np.asarray(z, dtype=complex)
        out = np.empty(z.shape)
        inner = np.abs(z) <= 1.0
        out[inner] = chart_density(f, z[inner]) / chart_area_density(z[inner])
        w = np.zeros(np.count_nonzero(~inner), dtype=complex)
        outer_z = z[~inner]
        finite = np.isfinite(outer_z)
        w[finite] = 1.0 / outer_z[finite]
        out[~inner] = chart_density(f_inf, w) / chart_area_density(w)
        return out

    return density


def energy_density(f: HoloMap, grid: SphereGrid) -> ScalarField:
    """e(f) sampled on the grid (per unit area)."""
    validate_map(f)
    return ScalarField(density_function(f)(grid.z), grid, "energy_density")


def _circle_mean(fn: Callable[[np.ndarray], np.ndarray], n0: int = 128,
                 tol: float = 1e-14, max_n: int = 2 ** 20) -> complex:
    """Mean of a periodic function over [0, 2π) by trapezoid doubling."""
    n = n0
    prev = np.mean(fn(2 * np.pi * np.arange(n) / n))
    while n < max_n:
        n *= 2
        theta = 2 * np.pi * np.arange(1, n, 2) / n
        val = 0.5 * prev + 0.5 * np.mean(fn(theta))
        if abs(val - prev) <= tol * max(1.0, abs(val)):
            return val
        prev = val
    raise AccuracyError(f"contour quadrature did not converge with {max_n} nodes")


def _log_derivative(f: HoloMap, z: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    phi, dphi = f.evaluate(z), f.derivative(z)
    big = np.sum(np.abs(phi) ** 2, axis=0)
    if np.min(big) <= 1e-300 or np.min(big) < 1e-28 * np.max(big):
        raise InvalidMapError("common zero on the integration contour")
    return np.sum(dphi * np.conj(phi), axis=0) / big, big


def disc_energy(f: HoloMap, center: Point, radius: float) -> float:
    """Energy of f inside the chart disc |z − center| < radius.

    For center = ∞ the disc is |w| < radius in the chart w = 1/z.
    """
    if is_infinity(center):
        f, center = f.at_infinity(), 0.0

    def integrand(theta):
        e = np.exp(1j * theta)
        S, _ = _log_derivative(f, center + radius * e)
        return np.real(e * S)

    return float(radius * np.real(_circle_mean(integrand)))


def first_moment(f: HoloMap, center: Point, radius: float) -> complex:
    """∫ z·e(f) over the chart disc, from Green's identity on log Φ."""
    if is_infinity(center):
        f, center = f.at_infinity(), 0.0

    def integrand(theta):
        e = np.exp(1j * theta)
        z = center + radius * e
        S, big = _log_derivative(f, z)
        return z * 2 * np.real(e * S) - np.log(big / np.max(big)) * e

    return complex(0.5 * radius * _circle_mean(integrand))


def total_energy(f: HoloMap, grid: Optional[SphereGrid] = None) -> float:
    """Numerical energy: grid quadrature, or the two hemisphere contours."""
    if grid is not None:
        return integrate(energy_density(f, grid))
    validate_map(f)
    return disc_energy(f, 0.0, 1.0) + disc_energy(f, INFINITY, 1.0)


def weak_pairing(f: HoloMap, center: complex = 0j, width: float = 1.0,
                 hints: Sequence[complex] = (), n_theta: int = 1024) -> float:
    """∫ g·e(f) dx dy for g = exp(−|z − center|²/width²).

    Integrated by parts as (1/4π)∫ log Φ ∇²g, which tolerates maps whose
    energy sits in arbitrarily small discs.
    """
    nodes, weights = leggauss(12)
    edges = [0.0] + list(width * np.geomspace(1e-9, 1.0, 19)) + list(width * np.linspace(1.0, 8.0, 29)[1:])
    for h in hints:
        d = abs(complex(h) - center)
        if np.isfinite(d) and 0 < d < 8 * width:
            edges += [d * (1 + s) for s in (-1e-2, -1e-4, 0.0, 1e-4, 1e-2)]
    edges = np.unique(np.clip(edges, 0.0, 8 * width))
    theta = 2 * np.pi * np.arange(n_theta) / n_theta
    total = 0.0
    for lo, hi in zip(edges[:-1], edges[1:]):
        rho = 0.5 * (hi - lo) * nodes + 0.5 * (hi + lo)
        z = center + rho[:, None] * np.exp(1j * theta)[None, :]
        big = f.norm_squared(z)
        r2 = (rho ** 2)[:, None] / width ** 2
        lap_g = (4 * r2 - 4) / width ** 2 * np.exp(-r2)
        vals = np.log(big) * lap_g
        total += 0.5 * (hi - lo) * np.dot(weights, vals.mean(axis=1) * rho) * 2 * np.pi
    return float(total / (4 * np.pi))


# families ---------------------------------------------------------------------

@dataclass(frozen=True)
class FamilySpec:
    """Root trajectories p_ij(δ, s) per component, as sympy expressions."""
    roots: Tuple[Tuple[str, ...], ...]
    degree: int
    delta: str = "1/s"
    base_point: Optional[complex] = None
    fiber: Optional[Tuple[str, ...]] = None

    def symbols(self):
        return sympy.Symbol("delta"), sympy.Symbol("s")

    def _expr(self, text: str):
        delta, s = self.symbols()
        return sympy.sympify(text, locals={"delta": delta, "s": s, "inf": sympy.oo, "I": sympy.I})

    def delta_of(self, s: float) -> float:
        _, s_sym = self.symbols()
        return float(complex(self._expr(self.delta).evalf(subs={s_sym: s})).real)

    def _value(self, text: str, s: float, delta: float) -> complex:
        expr = self._expr(text)
        if expr.has(sympy.oo) or expr.has(sympy.zoo):
            return INFINITY
        d_sym, s_sym = self.symbols()
        return complex(expr.evalf(subs={d_sym: delta, s_sym: s}))

    def divisors(self, s: float) -> DivisorTuple:
        delta = self.delta_of(s)
        comps = []
        for i, exprs in enumerate(self.roots):
            if len(exprs) > self.degree:
                raise InvalidMapError(f"component {i} lists {len(exprs)} roots for degree {self.degree}")
            pts = tuple(self._value(e, s, delta) for e in exprs)
            comps.append(pts + (INFINITY,) * (self.degree - len(pts)))
        return DivisorTuple(tuple(comps), self.degree)

    def fiber_values(self, s: float) -> np.ndarray:
        if self.fiber is None:
            return np.ones(len(self.roots), dtype=complex)
        delta = self.delta_of(s)
        return np.array([self._value(e, s, delta) for e in self.fiber], dtype=complex)


def pick_base_point(divisors: Sequence[DivisorTuple]) -> complex:
    """Candidate point farthest from every finite divisor point."""
    candidates = [1.0, 1j, -1.0, -1j, 2.0, 0.5 + 0.5j, -2.0 + 1j, 3.0]
    pts = np.array([p for D in divisors for comp in D.components for p in comp if not is_infinity(p)])
    if pts.size == 0:
        return 1.0 + 0j
    return complex(max(candidates, key=lambda c: np.min(np.abs(pts - c))))


@dataclass(frozen=True, eq=False)
class MapFamily:
    """Maps f_s over an increasing schedule, with degeneration parameter δ(s)."""
    schedule: np.ndarray
    parameter: np.ndarray
    maps: Tuple[HoloMap, ...]
    spec: Optional[FamilySpec] = None

    def __post_init__(self):
        schedule = np.asarray(self.schedule, dtype=float)
        if schedule.size != len(self.maps) or schedule.size == 0:
            raise InvalidMapError("schedule and members differ in length")
        if np.any(np.diff(schedule) <= 0):
            raise InvalidMapError("schedule must be strictly increasing")
        if len({(m.k, m.r) for m in self.maps}) != 1:
            raise InvalidMapError("family members must share k and r")
        object.__setattr__(self, "schedule", schedule)
        object.__setattr__(self, "parameter", np.asarray(self.parameter, dtype=float))

    @property
    def r(self) -> int:
        return self.maps[0].r

    @property
    def k(self) -> int:
        return self.maps[0].k

    @property
    def last(self) -> HoloMap:
        return self.maps[-1]

    def __len__(self) -> int:
        return len(self.maps)

    @classmethod
    def from_spec(cls, spec: FamilySpec, schedule: Sequence[float]) -> "MapFamily":
        schedule = np.asarray(schedule, dtype=float)
        divisors = [spec.divisors(s) for s in schedule]
        base = spec.base_point if spec.base_point is not None else pick_base_point(divisors)
        maps = tuple(from_divisors(D, spec.fiber_values(s), base) for D, s in zip(divisors, schedule))
        param = np.array([spec.delta_of(s) for s in schedule])
        logger.debug(f"Built family of degree {spec.degree} on {schedule.size} schedule points (base {base})")
        return cls(schedule, param, maps, replace(spec, base_point=base))

    @classmethod
    def constant(cls, f: HoloMap, schedule: Sequence[float]) -> "MapFamily":
        schedule = np.asarray(schedule, dtype=float)
        return cls(schedule, 1.0 / schedule, tuple(f for _ in schedule))

    def with_maps(self, maps: Sequence[HoloMap]) -> "MapFamily":
        return MapFamily(self.schedule, self.parameter, tuple(maps))

    def localize(self, p: Point) -> "MapFamily":
        return self.with_maps([m.localize(p) for m in self.maps])

    def top_half(self) -> slice:
        return slice(len(self) // 2, len(self))


@dataclass(frozen=True, eq=False)
class FamilyLimit:
    """Coefficient limit of a family, its common divisor and the stripped map."""
    coefficient_limit: HoloMap
    E: Divisor
    f0: HoloMap


def family_limit(fam: MapFamily, n_fit: int = 4, order: int = 2) -> FamilyLimit:
    """Extrapolate the projectively normalized coefficients to δ → 0."""
    coeffs = np.stack([m.coeffs for m in fam.maps])
    last = coeffs[-1]
    pivot = np.unravel_index(np.argmax(np.abs(last)), last.shape)
    pivots = coeffs[(slice(None),) + pivot]
    n_fit = min(n_fit, len(fam))
    if np.any(np.abs(pivots[-n_fit:]) == 0):
        raise NonConvergenceError("normalizing coefficient vanishes along the family")
    normed = coeffs / pivots[:, None, None]
    steps = np.max(np.abs(np.diff(normed, axis=0)), axis=(1, 2))
    tail = steps[-3:] if steps.size >= 3 else steps
    if tail.size and (tail[-1] > 1e-3 or (tail.size >= 3 and tail[-1] > tail[0] * 1.5 and tail[-1] > 1e-10)):
        raise NonConvergenceError(f"coefficients do not settle (last steps {tail.tolist()})")
    x = fam.parameter[-n_fit:]
    x = x / np.max(np.abs(x)) if np.max(np.abs(x)) > 0 else x
    flat = normed[-n_fit:].reshape(n_fit, -1)
    deg = min(order, n_fit - 1)
    if np.ptp(x) == 0:
        limit = flat[-1]
    else:
        re = np.polyfit(x, flat.real, deg)[-1]
        im = np.polyfit(x, flat.imag, deg)[-1]
        limit = re + 1j * im
    if steps.size and np.max(np.abs(limit - flat[-1])) > 10 * steps[-1] + 1e-12:
        raise NonConvergenceError("extrapolated limit inconsistent with the family tail")
    limit = limit.reshape(last.shape)
    limit[np.abs(limit) < LIMIT_CLEAN_TOL * np.max(np.abs(limit))] = 0.0
    coefficient_limit = HoloMap(limit).normalized()
    E = common_zeros(coefficient_limit)
    f0 = strip_common(coefficient_limit, E)
    logger.debug(f"family limit: common divisor {E.to_json()}, stripped degree {f0.r}")
    return FamilyLimit(coefficient_limit, E, f0)


def _capture_radii(f: HoloMap, atoms: Sequence[Tuple[Point, int]]) -> List[float]:
    """Half the distance from each atom to other atoms and to residual roots."""
    radii = []
    for j, (p, a) in enumerate(atoms):
        if is_infinity(p):
            radii.append(np.inf)
            continue
        others = [abs(p - q) for i, (q, _) in enumerate(atoms) if i != j and not is_infinity(q)]
        per_comp = []
        for comp in f.component_roots():
            d = np.sort(np.abs(comp - p))
            if d.size > a:
                per_comp.append(d[a])
        residual = min(per_comp) if per_comp else np.inf
        radii.append(0.5 * min(others + [residual]))
    return radii


def strip_coalesced(fam: MapFamily, atoms: Sequence[Tuple[Point, int]],
                    capture: Optional[Sequence[float]] = None) -> MapFamily:
    """Delete from every component the a_j roots nearest each atom p_j."""
    atoms = [(complex(p), int(round(a))) for p, a in atoms]
    if not atoms:
        return fam
    capture = list(capture) if capture is not None else _capture_radii(fam.last, atoms)
    base = fam.spec.base_point if fam.spec is not None and fam.spec.base_point is not None else None
    new_r = fam.r - sum(a for _, a in atoms)
    maps = []
    for f in fam.maps:
        comps = []
        for i, (c, d) in enumerate(zip(f.coeffs, f.exact_degrees())):
            if d is None:
                raise StratificationError(f"component {i} vanishes identically")
            roots = list(_roots(c))
            n_inf = f.r - len(roots)
            for (p, a), cap in zip(atoms, capture):
                if is_infinity(p):
                    if n_inf >= a:
                        n_inf -= a
                        continue
                    raise StratificationError(f"component {i} lacks {a} roots at infinity")
                order = np.argsort([abs(q - p) for q in roots])
                chosen = order[:a]
                if len(chosen) < a or any(abs(roots[idx] - p) > cap for idx in chosen):
                    raise StratificationError(
                        f"component {i} lacks {a} roots within {cap:.3g} of {p}")
                roots = [q for idx, q in enumerate(roots) if idx not in set(chosen.tolist())]
            poly = np.array([1.0 + 0j])
            for q in roots:
                poly = P.polymul(poly, [-q, 1.0])
            point = base if base is not None else 1.0
            value_old = P.polyval(point, c)
            value_new = P.polyval(point, poly)
            scale = value_old / value_new if abs(value_new) > 0 and abs(value_old) > 0 else c[_trim(c).size - 1]
            comps.append(poly * scale)
        maps.append(HoloMap.from_components(comps, degree=new_r))
    return MapFamily(fam.schedule, fam.parameter, tuple(maps), fam.spec)


@dataclass(frozen=True, eq=False)
class UhlenbeckLimit:
    E: Divisor
    f0: HoloMap
    stratum: Tuple[int, int]
    weak_star_error: float
    c1_distance: Optional[float]

    def to_json(self) -> Dict:
        return {
            "E": self.E.to_json(),
            "f0": self.f0.to_json(),
            "stratum": list(self.stratum),
            "weak_star_error": self.weak_star_error,
            "c1_distance": self.c1_distance,
        }


def _annulus_points(atoms: Sequence[Point], radius: float, n: int = 64) -> np.ndarray:
    theta = 2 * np.pi * np.arange(n) / n
    pts = [np.exp(1j * theta) * R for R in (0.5, 2.0)]
    for p in atoms:
        if not is_infinity(p):
            pts.append(p + 2 * radius * np.exp(1j * theta))
    z = np.concatenate(pts)
    keep = np.ones(z.size, dtype=bool)
    for p in atoms:
        if not is_infinity(p):
            keep &= np.abs(z - p) > radius
    return z[keep]


def uhlenbeck_limit(fam: MapFamily, atoms: Sequence[Tuple[Point, float]],
                    test_radius: float = 0.1) -> UhlenbeckLimit:
    """Limit divisor and map of a family, with weak-* and C¹ checks."""
    lim = family_limit(fam)
    E = Divisor(tuple(complex(p) for p, _ in atoms), tuple(int(round(a)) for _, a in atoms))
    if E.degree != lim.E.degree:
        logger.warning(f"detected atoms carry {E.degree} units, coefficient limit divisor {lim.E.degree}")

    c1 = None
    if atoms:
        try:
            stripped = strip_coalesced(fam, [(p, round(a)) for p, a in atoms])
        except StratificationError as e:
            logger.info(f"skipping C1 check: {str(e)}")
        else:
            z = _annulus_points([p for p, _ in atoms], test_radius)
            dists = [float(np.max(fs_distance(m, lim.f0, z))) for m in stripped.maps[-2:]]
            c1 = dists[-1]
            if c1 > 1e-2 and dists[-1] >= dists[0]:
                raise NonConvergenceError(f"stripped family does not converge on test annuli ({dists})")

    centers = [p for p, _ in atoms if not is_infinity(p)] + [0.5 + 0.5j, -1.5 + 0j, 1.0j]
    errors = []
    for a in centers[:max(3, len(centers))]:
        hints = [p for p, _ in atoms]
        lhs = weak_pairing(fam.last, a, hints=hints)
        rhs = weak_pairing(lim.f0, a) + sum(m * np.exp(-abs(p - a) ** 2) for p, m in atoms
                                           if not is_infinity(p))
        errors.append(abs(lhs - rhs))
    weak_err = float(max(errors))
    if weak_err > 1e-2:
        logger.warning(f"weak-* defect {weak_err:.3e} at the largest s")
    return UhlenbeckLimit(E, lim.f0, (E.degree, fam.r - E.degree), weak_err, c1)
