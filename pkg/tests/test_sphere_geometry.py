import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy.integrate import quad

from errors import ConfigurationError, DomainError, SolvabilityError
from holomorphic_data import HoloMap, density_function
from sphere_geometry import (INFINITY, ConicWeight, ScalarField, analyze, build_grid, chart_area_density,
                             chart_to_sphere, conic_area_weight, evaluate, harmonic, integrate,
                             laplace_beltrami, make_renorm_map, pullback_field, rotate_from_origin,
                             rotate_to_origin, solve_poisson, sphere_to_chart, synthesize)


def test_weights_sum_to_unit_area(grid16):
    assert_allclose(grid16.weights.sum(), 1.0, atol=1e-14)
    assert_allclose(integrate(grid16.constant(3.0)), 3.0, atol=1e-13)


def test_small_band_limit_rejected():
    with pytest.raises(ConfigurationError):
        build_grid(2)


def test_harmonics_are_eigenfunctions(grid16):
    for l in range(9):
        for m in (-l, 0, l):
            Y = harmonic(grid16, l, m)
            assert_allclose(integrate(Y * Y), 1.0, atol=1e-12)
            lap = laplace_beltrami(Y)
            assert_allclose(lap.values, 4 * np.pi * l * (l + 1) * Y.values, atol=1e-9 * (1 + l * l))


def test_harmonics_orthogonal(grid16):
    a = harmonic(grid16, 3, 2)
    b = harmonic(grid16, 5, -2)
    assert abs(integrate(a * b)) < 1e-13


def test_analyze_synthesize_inverse(grid16):
    rng = np.random.default_rng(0)
    coeffs = np.zeros((17, 17), dtype=complex)
    for l in range(17):
        coeffs[l, :l + 1] = rng.normal(size=l + 1) + 1j * rng.normal(size=l + 1)
    coeffs[:, 0] = coeffs[:, 0].real
    values = synthesize(grid16, coeffs)
    back = analyze(ScalarField(values, grid16))
    assert_allclose(back, coeffs, atol=1e-11)


def test_poisson_inverts_laplacian(grid16):
    f = harmonic(grid16, 2, 1) + 0.5 * harmonic(grid16, 7, -3)
    psi = solve_poisson(f)
    assert abs(integrate(psi)) < 1e-13
    assert_allclose(laplace_beltrami(psi).values, f.values, atol=1e-11)


def test_poisson_needs_zero_mean(grid16):
    with pytest.raises(SolvabilityError):
        solve_poisson(grid16.constant(1.0))


def test_nonfinite_field_rejected(grid16):
    values = np.zeros(grid16.shape)
    values[0, 0] = np.nan
    with pytest.raises(DomainError):
        grid16.constant(0.0) + values


def test_chart_round_trip():
    z = np.array([0.3 - 0.2j, 2.0 + 5.0j, -1e-3, 40j])
    theta, phi = chart_to_sphere(z)
    assert_allclose(sphere_to_chart(theta, phi), z, rtol=1e-12)


def test_rotations_are_inverse():
    zeta = np.array([0.1, -0.5 + 0.2j, 3.0j])
    for p in (0.4 - 0.3j, 2.0, INFINITY):
        assert_allclose(rotate_to_origin(rotate_from_origin(zeta, p), p), zeta, rtol=1e-12)
    assert rotate_from_origin(np.array([0j]), 0.7j)[0] == 0.7j


def test_evaluate_matches_band_limited_field(grid16):
    Y = harmonic(grid16, 4, 2)
    z = np.array([0.2 + 0.1j, 3.0 - 1.0j, -0.7j])
    theta, phi = chart_to_sphere(z)
    values = evaluate(Y, z)
    # Y_{4,2} is proportional to sin²θ(7cos²θ − 1)cos 2φ
    shape = np.sin(theta) ** 2 * (7 * np.cos(theta) ** 2 - 1) * np.cos(2 * phi)
    ratio = values / shape
    assert_allclose(ratio, ratio[0], rtol=1e-10)


def test_renorm_map_scale_must_be_positive():
    with pytest.raises(DomainError):
        make_renorm_map(0j, 0j, 0.0)


def test_pullback_of_map_density_is_density_of_composite(grid32):
    f = HoloMap.from_components([[-0.5, 1.0], [0.5, 1.0]])
    R = make_renorm_map(0j, 0.3 - 0.1j, 0.8)
    pulled = pullback_field(R, density_function(f), grid32)
    # f(R(ξ)) = [(ξ + c)/t − 1/2 : (ξ + c)/t + 1/2] ∝ [ξ + c − t/2 : ξ + c + t/2]
    c, t = R.translation, R.t
    composite = HoloMap.from_components([[c - t / 2, 1.0], [c + t / 2, 1.0]])
    expected = density_function(composite)(grid32.z)
    assert_allclose(pulled.values, expected, rtol=1e-10, atol=1e-12)
    assert_allclose(integrate(pulled), 1.0, atol=1e-3)


def test_conic_weight_domain():
    with pytest.raises(DomainError):
        ConicWeight(0.0, 0j)
    with pytest.raises(DomainError):
        ConicWeight(1.5, 0j)


def test_conic_weight_smooth_case_is_round_area():
    result = conic_area_weight(1.0, lambda xi: np.ones(xi.shape))
    assert not result.divergent
    assert_allclose(result.value, 0.5, rtol=1e-9)


@pytest.mark.parametrize("beta,eps,divergent", [
    (0.5, 0.5, False),
    (0.5, 1.0, True),
    (0.25, 0.6, True),
    (0.75, 1.0, False),
])
def test_conic_weight_divergence(beta, eps, divergent):
    result = conic_area_weight(beta, lambda xi: np.abs(xi) ** -eps)
    assert result.divergent == divergent
    if not divergent:
        assert_allclose(result.exponent, 2 * beta - eps, atol=1e-6)
        assert np.isfinite(result.value)


def test_conic_weight_of_field_reduces_to_integral(grid16):
    f = grid16.constant(2.0)
    assert_allclose(conic_area_weight(1.0, f).value, 2.0, atol=1e-13)


def test_chart_area_density_integrates_to_one():
    total, _ = quad(lambda rho: 2 * np.pi * rho * chart_area_density(rho), 0.0, np.inf, epsabs=1e-13)
    assert_allclose(total, 1.0, atol=1e-10)


def _random_band_limited(grid, rng, l_max):
    coeffs = np.zeros((grid.L_max + 1, grid.L_max + 1), dtype=complex)
    for l in range(l_max + 1):
        coeffs[l, :l + 1] = rng.normal(size=l + 1) + 1j * rng.normal(size=l + 1)
    coeffs[:, 0] = coeffs[:, 0].real
    return ScalarField(synthesize(grid, coeffs), grid)


def test_laplacian_is_symmetric(grid16):
    rng = np.random.default_rng(7)
    for _ in range(3):
        f = _random_band_limited(grid16, rng, 16)
        g = _random_band_limited(grid16, rng, 16)
        lhs = integrate(laplace_beltrami(f) * g)
        rhs = integrate(f * laplace_beltrami(g))
        assert abs(lhs - rhs) <= 1e-9 * max(1.0, abs(lhs))


def test_pullback_preserves_integral(grid16, grid32):
    rng = np.random.default_rng(11)
    maps = [make_renorm_map(0j, 0.1 + 0.05j, 0.9), make_renorm_map(0.5 - 0.2j, -0.05j, 1.1),
            make_renorm_map(INFINITY, 0.08, 0.95)]
    for i in range(6):
        f = 2.0 + 0.2 * _random_band_limited(grid16, rng, 4)
        R = maps[i % len(maps)]
        pulled = pullback_field(R, f, grid32)
        assert_allclose(integrate(pulled), integrate(f), rtol=1e-6)
