"""
Discrete geometry of the unit-area round 2-sphere.

The sphere has radius² = 1/4π so that total area is 1. Fields are sampled on a
Gauss-Legendre (colatitude) x uniform (longitude) grid and transformed to real
spherical harmonics normalized by ∫Y² dA = 1. The Laplace-Beltrami operator
is the positive one, with eigenvalue 4π·l(l+1) on degree-l harmonics.

Chart convention: z = cot(θ/2)·e^{iφ}. The south pole θ = π is z = 0 and the
north pole is z = ∞ (``INFINITY``). The area element in the chart is
(1/π)(1+|z|²)⁻² dx dy.
"""
import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Optional, Tuple, Union

import numpy as np
from numpy.polynomial.legendre import leggauss

import app_config
from errors import ConfigurationError, DomainError, SolvabilityError

logger = logging.getLogger(__name__)

INFINITY = complex(np.inf, 0.0)

Density = Union["ScalarField", Callable[[np.ndarray], np.ndarray]]


def is_infinity(p: complex) -> bool:
    """True for the chart point at the north pole."""
    return not np.isfinite(p)


def chart_to_sphere(z: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Colatitude and longitude of chart points (∞ maps to θ = 0)."""
    z = np.asarray(z, dtype=complex)
    r = np.abs(z)
    with np.errstate(invalid="ignore", over="ignore"):
        theta = 2.0 * np.arctan2(1.0, r)
        phi = np.mod(np.angle(np.where(np.isfinite(z), z, 1.0)), 2 * np.pi)
    return theta, phi


def sphere_to_chart(theta: np.ndarray, phi: np.ndarray) -> np.ndarray:
    """Stereographic chart coordinate z = cot(θ/2)e^{iφ}."""
    return np.cos(theta / 2) / np.sin(theta / 2) * np.exp(1j * np.asarray(phi))


def chart_area_density(z: np.ndarray) -> np.ndarray:
    """Round area element per unit dx dy in the chart."""
    return 1.0 / (np.pi * (1.0 + np.abs(z) ** 2) ** 2)


def rotate_from_origin(zeta: np.ndarray, p: complex) -> np.ndarray:
    """Isometry of the sphere taking the chart origin to p."""
    zeta = np.asarray(zeta, dtype=complex)
    if is_infinity(p):
        with np.errstate(divide="ignore"):
            return np.where(zeta == 0, INFINITY, 1.0 / np.where(zeta == 0, 1.0, zeta))
    return (zeta + p) / (1.0 - np.conj(p) * zeta)


def rotate_to_origin(z: np.ndarray, p: complex) -> np.ndarray:
    """Inverse of :func:`rotate_from_origin`."""
    z = np.asarray(z, dtype=complex)
    if is_infinity(p):
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(np.isfinite(z), 1.0 / np.where(z == 0, np.inf, z), 0.0)
    return (z - p) / (1.0 + np.conj(p) * z)


def legendre_table(L_max: int, theta: np.ndarray) -> np.ndarray:
    """√(4π)·P̄_l^m(cos θ) for 0 ≤ m ≤ l ≤ L_max, shape (m, l, *theta.shape).

    P̄ are the orthonormal associated Legendre functions with the
    Condon-Shortley phase, so Y_l^m = P̄_l^m e^{imφ} matches scipy's sph_harm.
    """
    theta = np.asarray(theta, dtype=float)
    x, y = np.cos(theta), np.sin(theta)
    table = np.zeros((L_max + 1, L_max + 1) + theta.shape)
    pmm = np.full(theta.shape, np.sqrt(1.0 / (4 * np.pi)))
    for m in range(L_max + 1):
        if m > 0:
            pmm = -np.sqrt((2 * m + 1) / (2.0 * m)) * y * pmm
        table[m, m] = pmm
        if m < L_max:
            table[m, m + 1] = np.sqrt(2 * m + 3) * x * pmm
        for l in range(m + 2, L_max + 1):
            a = np.sqrt((4.0 * l * l - 1) / (l * l - m * m))
            b = np.sqrt(((l - 1.0) ** 2 - m * m) / (4.0 * (l - 1) ** 2 - 1))
            table[m, l] = a * (x * table[m, l - 1] - b * table[m, l - 2])
    return table * np.sqrt(4 * np.pi)


def legendre_derivative_table(table: np.ndarray, theta: np.ndarray) -> np.ndarray:
    """θ-derivative of :func:`legendre_table` (θ away from the poles).

    Uses sinθ·dP̄_l^m/dθ = l·cosθ·P̄_l^m − √((2l+1)(l²−m²)/(2l−1))·P̄_{l−1}^m.
    """
    L_max = table.shape[0] - 1
    x, y = np.cos(theta), np.sin(theta)
    deriv = np.zeros_like(table)
    for m in range(L_max + 1):
        for l in range(max(m, 1), L_max + 1):
            c = np.sqrt((2.0 * l + 1) * (l * l - m * m) / (2.0 * l - 1))
            prev = table[m, l - 1] if l - 1 >= m else 0.0
            deriv[m, l] = (l * x * table[m, l] - c * prev) / y
    return deriv


@dataclass(frozen=True, eq=False)
class SphereGrid:
    """Gauss-Legendre x uniform-longitude grid for band limit L_max.

    Rows are ordered by increasing colatitude, columns by longitude.
    """
    L_max: int
    theta: np.ndarray
    phi: np.ndarray
    lat_weights: np.ndarray
    legendre: np.ndarray
    dlegendre: np.ndarray

    @property
    def n_lat(self) -> int:
        return self.theta.size

    @property
    def n_lon(self) -> int:
        return self.phi.size

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.n_lat, self.n_lon)

    @property
    def weights(self) -> np.ndarray:
        """Area weights per node; they sum to 1."""
        return np.outer(self.lat_weights, np.full(self.n_lon, 1.0 / self.n_lon))

    @property
    def total_area(self) -> float:
        return 1.0

    @property
    def z(self) -> np.ndarray:
        """Chart coordinate of every node."""
        return sphere_to_chart(self.theta[:, None], self.phi[None, :])

    @property
    def eigenvalues(self) -> np.ndarray:
        l = np.arange(self.L_max + 1)
        return 4 * np.pi * l * (l + 1.0)

    def constant(self, value: float, quantity: str = "") -> "ScalarField":
        return ScalarField(np.full(self.shape, float(value)), self, quantity)

    def from_function(self, fn: Callable[[np.ndarray, np.ndarray], np.ndarray],
                      quantity: str = "") -> "ScalarField":
        """Sample fn(theta, phi) on the nodes."""
        theta, phi = np.meshgrid(self.theta, self.phi, indexing="ij")
        return ScalarField(np.asarray(fn(theta, phi), dtype=float), self, quantity)

    def from_chart(self, fn: Callable[[np.ndarray], np.ndarray], quantity: str = "") -> "ScalarField":
        """Sample fn(z) on the nodes."""
        return ScalarField(np.asarray(fn(self.z), dtype=float), self, quantity)


@lru_cache(maxsize=None)
def build_grid(L_max: int) -> SphereGrid:
    """Build (or fetch the cached) grid for band limit L_max."""
    if int(L_max) != L_max or L_max < app_config.L_MAX_MIN:
        raise ConfigurationError(f"L_max must be an integer >= {app_config.L_MAX_MIN}, got {L_max}")
    L_max = int(L_max)
    nodes, gl_weights = leggauss(L_max + 1)
    theta = np.arccos(nodes[::-1])
    lat_weights = gl_weights[::-1] / 2.0
    n_lon = 2 * L_max + 2
    phi = 2 * np.pi * np.arange(n_lon) / n_lon
    table = legendre_table(L_max, theta)
    dtable = legendre_derivative_table(table, theta)
    logger.debug(f"Built sphere grid L_max={L_max} ({theta.size}x{n_lon} nodes)")
    return SphereGrid(L_max, theta, phi, lat_weights, table, dtable)


@dataclass(frozen=True, eq=False)
class ScalarField:
    """Real function sampled on the nodes of a grid."""
    values: np.ndarray
    grid: SphereGrid
    quantity: str = ""

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.shape != self.grid.shape:
            raise ConfigurationError(
                f"field shape {values.shape} does not match grid {self.grid.shape}")
        if not np.all(np.isfinite(values)):
            raise DomainError(f"field '{self.quantity}' has non-finite values")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def _other(self, other):
        if isinstance(other, ScalarField):
            check_same_grid(self, other)
            return other.values
        return other

    def __add__(self, other):
        return ScalarField(self.values + self._other(other), self.grid)

    __radd__ = __add__

    def __sub__(self, other):
        return ScalarField(self.values - self._other(other), self.grid)

    def __rsub__(self, other):
        return ScalarField(self._other(other) - self.values, self.grid)

    def __mul__(self, other):
        return ScalarField(self.values * self._other(other), self.grid)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return ScalarField(self.values / self._other(other), self.grid)

    def __neg__(self):
        return ScalarField(-self.values, self.grid, self.quantity)

    def apply(self, fn: Callable[[np.ndarray], np.ndarray], quantity: str = "") -> "ScalarField":
        return ScalarField(fn(self.values), self.grid, quantity or self.quantity)

    def named(self, quantity: str) -> "ScalarField":
        return ScalarField(self.values, self.grid, quantity)

    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.values)))


def check_same_grid(*fields: ScalarField) -> SphereGrid:
    grid = fields[0].grid
    for f in fields[1:]:
        if f.grid is not grid:
            raise ConfigurationError(
                f"grid mismatch: L_max {grid.L_max} vs {f.grid.L_max}")
    return grid


def _m_scale(L_max: int) -> np.ndarray:
    scale = np.full(L_max + 1, np.sqrt(2.0))
    scale[0] = 1.0
    return scale


def analyze(f: ScalarField) -> np.ndarray:
    """Real-harmonic coefficients packed as C[l, m] = a^c_lm − i·a^s_lm.

    For m = 0 the entry is the (real) coefficient of Y_l0.
    """
    grid = f.grid
    L = grid.L_max
    spectrum = np.fft.rfft(f.values, axis=1)[:, :L + 1] / grid.n_lon
    coeffs = np.einsum("mli,i,im->lm", grid.legendre, grid.lat_weights, spectrum)
    return coeffs * _m_scale(L)[None, :]


def synthesize(grid: SphereGrid, coeffs: np.ndarray, table: Optional[np.ndarray] = None) -> np.ndarray:
    """Node values from packed coefficients (inverse of :func:`analyze`)."""
    L = grid.L_max
    table = grid.legendre if table is None else table
    per_m = np.einsum("mli,lm->im", table, coeffs * _m_scale(L)[None, :])
    spectrum = np.zeros((grid.n_lat, grid.n_lon // 2 + 1), dtype=complex)
    spectrum[:, 0] = grid.n_lon * per_m[:, 0]
    spectrum[:, 1:L + 1] = grid.n_lon * per_m[:, 1:] / 2.0
    return np.fft.irfft(spectrum, n=grid.n_lon, axis=1)


def project(f: ScalarField) -> ScalarField:
    """Projection onto harmonics of degree ≤ L_max."""
    return ScalarField(synthesize(f.grid, analyze(f)), f.grid, f.quantity)


def harmonic(grid: SphereGrid, l: int, m: int) -> ScalarField:
    """Real harmonic Y_{l,m} (m < 0 selects the sine part), ∫Y² dA = 1."""
    if not 0 <= abs(m) <= l <= grid.L_max:
        raise ConfigurationError(f"harmonic ({l},{m}) outside band limit {grid.L_max}")
    coeffs = np.zeros((grid.L_max + 1, grid.L_max + 1), dtype=complex)
    coeffs[l, abs(m)] = 1.0 if m >= 0 else -1j
    return ScalarField(synthesize(grid, coeffs), grid, f"Y_{l},{m}")


def integrate(f: ScalarField) -> float:
    """Quadrature of f against the unit-area element."""
    return float(np.dot(f.grid.lat_weights, f.values.mean(axis=1)))


def laplace_beltrami(f: ScalarField) -> ScalarField:
    """Positive Laplace-Beltrami operator Δf (eigenvalues 4π·l(l+1))."""
    grid = f.grid
    coeffs = analyze(f) * grid.eigenvalues[:, None]
    return ScalarField(synthesize(grid, coeffs), grid)


def solve_poisson(rhs: ScalarField, tol: float = 1e-10) -> ScalarField:
    """Mean-zero ψ with Δψ = rhs (rhs projected onto the band limit)."""
    mean = integrate(rhs)
    if abs(mean) > tol * (1.0 + rhs.sup_norm()):
        raise SolvabilityError(mean)
    grid = rhs.grid
    coeffs = analyze(rhs)
    coeffs[0, :] = 0.0
    coeffs[1:, :] /= grid.eigenvalues[1:, None]
    return ScalarField(synthesize(grid, coeffs), grid)


def gradient(f: ScalarField) -> Tuple[np.ndarray, np.ndarray]:
    """Spectral (∂_θ f, ∂_φ f) at the nodes."""
    grid = f.grid
    coeffs = analyze(f)
    d_theta = synthesize(grid, coeffs, table=grid.dlegendre)
    m = np.arange(grid.L_max + 1)
    d_phi = synthesize(grid, coeffs * (1j * m)[None, :])
    return d_theta, d_phi


def evaluate(f: ScalarField, z: np.ndarray, chunk: int = 2048) -> np.ndarray:
    """Spectral interpolation of f at arbitrary chart points."""
    grid = f.grid
    coeffs = analyze(f) * _m_scale(grid.L_max)[None, :]
    z = np.asarray(z, dtype=complex)
    theta, phi = chart_to_sphere(z.ravel())
    out = np.empty(theta.size)
    m = np.arange(grid.L_max + 1)
    for start in range(0, theta.size, chunk):
        sl = slice(start, start + chunk)
        table = legendre_table(grid.L_max, theta[sl])
        per_m = np.einsum("mlp,lm->pm", table, coeffs)
        out[sl] = np.real(np.sum(per_m * np.exp(1j * np.outer(phi[sl], m)), axis=1))
    return out.reshape(z.shape)


@dataclass(frozen=True)
class RenormMap:
    """Conformal map ξ ↦ z: dilate by 1/t, translate, rotate the origin to p.

    ζ = (ξ + translation)/t is the coordinate of the chart centred at p.
    """
    center: complex
    translation: complex
    t: float

    def forward(self, xi: np.ndarray) -> np.ndarray:
        zeta = (np.asarray(xi, dtype=complex) + self.translation) / self.t
        return rotate_from_origin(zeta, self.center)

    def inverse(self, z: np.ndarray) -> np.ndarray:
        return rotate_to_origin(z, self.center) * self.t - self.translation

    def conformal_factor(self, xi: np.ndarray) -> np.ndarray:
        """g(ζ)/g(ξ) with g(w) = (1+|w|²)⁻²; equals 1 at ξ = −translation."""
        xi = np.asarray(xi, dtype=complex)
        zeta = (xi + self.translation) / self.t
        return ((1.0 + np.abs(xi) ** 2) / (1.0 + np.abs(zeta) ** 2)) ** 2

    def jacobian(self, xi: np.ndarray) -> np.ndarray:
        """Ratio of pulled-back to round area element at ξ."""
        return self.conformal_factor(xi) / self.t ** 2


def make_renorm_map(p: complex, translation: complex, t: float) -> RenormMap:
    if not t > 0:
        raise DomainError(f"dilation scale must be positive, got {t}")
    return RenormMap(complex(p), complex(translation), float(t))


def pullback_field(R: RenormMap, f: Density, grid: Optional[SphereGrid] = None) -> ScalarField:
    """Pull back a density so that its integral is preserved.

    ``f`` is a ScalarField (spectrally interpolated) or a callable returning
    the density at chart points.
    """
    if isinstance(f, ScalarField):
        grid = grid or f.grid
        sample = lambda z: evaluate(f, z)
    else:
        if grid is None:
            raise ConfigurationError("a grid is required to pull back a callable density")
        sample = f
    xi = grid.z
    values = sample(R.forward(xi)) * R.jacobian(xi)
    return ScalarField(values, grid, "pullback")


@dataclass(frozen=True)
class ConicWeight:
    """Area weight |ξ|^{2β−2} on the unit disc of the chart centred at q."""
    beta: float
    point: complex

    def __post_init__(self):
        if not 0.0 < self.beta <= 1.0:
            raise DomainError(f"cone angle parameter must lie in (0, 1], got {self.beta}")

    def weight(self, xi: np.ndarray) -> np.ndarray:
        r = np.abs(xi)
        with np.errstate(divide="ignore"):
            return np.where(r < 1.0, r ** (2 * self.beta - 2), 1.0)


@dataclass(frozen=True)
class ConicIntegral:
    value: float
    divergent: bool
    exponent: float


def _dyadic_rings(integrand: Callable[[np.ndarray], np.ndarray], n_rings: int,
                  n_radial: int = 16, n_angular: int = 64) -> np.ndarray:
    """Integrals of integrand(ξ)·dA over the rings 2^{-k-1} < |ξ| < 2^{-k}."""
    nodes, weights = leggauss(n_radial)
    angles = 2 * np.pi * np.arange(n_angular) / n_angular
    rings = np.empty(n_rings)
    for k in range(n_rings):
        lo, hi = 2.0 ** (-k - 1), 2.0 ** (-k)
        rho = 0.5 * (hi - lo) * nodes + 0.5 * (hi + lo)
        xi = rho[:, None] * np.exp(1j * angles)[None, :]
        vals = integrand(xi) * chart_area_density(xi) * rho[:, None]
        rings[k] = 0.5 * (hi - lo) * np.dot(weights, vals.mean(axis=1)) * 2 * np.pi
    return rings


def conic_area_weight(beta: float, f: Density, q: complex = 0j, n_rings: int = 40) -> ConicIntegral:
    """Integral of f against the conic area element of angle β at q.

    A ScalarField is integrated over the whole sphere with the weight applied
    on the unit disc around q. A callable f(ξ) is a density in the chart
    centred at q, cut off outside the unit disc. Divergence is judged from
    the decay of the innermost three ring integrals.
    """
    cone = ConicWeight(beta, q)
    if isinstance(f, ScalarField):
        base = integrate(f)
        if beta == 1.0:
            return ConicIntegral(base, False, 2.0)
        sample = lambda xi: evaluate(f, rotate_from_origin(xi, q)) * (cone.weight(xi) - 1.0)
        rings = _dyadic_rings(sample, n_rings, n_radial=8, n_angular=32)
        # innermost disc, f frozen at q
        r0 = 2.0 ** (-n_rings)
        f_q = float(evaluate(f, np.array([q if not is_infinity(q) else INFINITY]))[0])
        inner = f_q * (r0 ** (2 * beta) / beta - r0 ** 2)
        return ConicIntegral(base + float(np.sum(rings)) + inner, False, 2 * beta)

    rings = _dyadic_rings(lambda xi: f(xi) * cone.weight(xi), n_rings)
    inner = rings[-3:]
    if np.any(inner <= 0):
        exponent = np.inf if np.all(inner == 0) else 0.0
    else:
        exponent = float(np.mean(-np.log2(inner[1:] / inner[:-1])))
    if exponent <= 1e-2:
        logger.info(f"conic integral diverges at β={beta} (ring exponent {exponent:.3f})")
        return ConicIntegral(np.inf, True, exponent)
    ratio = 2.0 ** (-exponent) if np.isfinite(exponent) else 0.0
    tail = rings[-1] * ratio / (1.0 - ratio)
    return ConicIntegral(float(np.sum(rings) + tail), False, exponent)
