import numpy as np
import pytest
from numpy.testing import assert_allclose

from errors import AccuracyError, DataError, DomainError, PreconditionError
from gauge_holonomy import (ConnectionSample, angular_decay_exponent, apply_gauge, classify_condition,
                            conic_integrability, conic_model, connection_from_map, decay_fit, decaying_gauge,
                            energy_tail, gauge_invariance_defect, h_beta_criterion, holonomy, holonomy_profile,
                            log_radii, polar_grid, pullback_inversion, smooth_model)
from holomorphic_data import HoloMap

RADII = log_radii(1e-3, 1e-1, 8)


@pytest.mark.parametrize("beta", [0.25, 0.5, 0.75])
def test_conic_model_holonomy(beta):
    c = conic_model(beta, RADII)
    assert_allclose(holonomy(c, 1e-2), np.exp(-2j * np.pi * beta), atol=1e-8)
    report = classify_condition(holonomy_profile(c), c)
    assert report.classification == "H_beta"
    assert_allclose(report.beta, beta, atol=1e-3)
    assert report.extension_eligible
    assert report.to_json()["exponents"]["h_beta"] is None


def test_perturbed_conic_model_still_conic():
    c = conic_model(0.75, RADII, perturbation=0.5)
    report = classify_condition(holonomy_profile(c), c)
    assert report.classification == "H_beta"
    assert_allclose(report.beta, 0.75, atol=1e-3)
    assert report.exponents["h_beta"] > 0


def test_smooth_model_satisfies_H():
    c = smooth_model(RADII)
    report = classify_condition(holonomy_profile(c), c)
    assert report.classification == "H"
    assert report.beta is None
    assert_allclose(report.exponents["holonomy"], 1.0, atol=0.05)


def test_bubble_connection_satisfies_H():
    bubble = HoloMap.from_components([[-1.0, 1.0], [1.0, 1.0]])
    c = connection_from_map(bubble.at_infinity(), RADII)
    assert_allclose(c.A_rho, 0.0, atol=1e-14)
    assert_allclose(c.A_theta, -1j * (RADII ** 2 / (1 + RADII ** 2))[:, None] * np.ones(64), atol=1e-14)
    assert classify_condition(holonomy_profile(c), c).classification == "H"


def test_classification_needs_a_decade():
    c = conic_model(0.5, log_radii(1e-2, 5e-2, 8))
    with pytest.raises(PreconditionError):
        classify_condition(holonomy_profile(c), c)


def test_h_beta_criterion_without_model():
    c = conic_model(0.5, RADII)
    exponent, ok = h_beta_criterion(c, 0.5)
    assert_allclose(exponent, -1.0, atol=1e-9)
    assert not ok


def test_gauge_transformation_preserves_holonomy():
    c = conic_model(0.25, RADII, perturbation=0.3)
    gauged = apply_gauge(c, lambda rho, theta: rho * np.cos(theta) + np.sin(2 * theta))
    assert_allclose(holonomy_profile(gauged).g, holonomy_profile(c).g, atol=1e-12)
    assert_allclose(gauged.A_rho.imag, np.cos(c.theta)[None, :] * np.ones((RADII.size, 1)), atol=1e-10)


def test_decaying_gauge_reaches_target():
    c = smooth_model(RADII)
    gauge = decaying_gauge(c, 2.5, 1.0)
    rho, theta = polar_grid(RADII, c.n_theta)
    e = np.exp(1j * theta)[None, :]
    assert_allclose(gauge.sample.A_rho, 1j * rho[:, None] ** -2.5 * e, rtol=1e-12)
    assert_allclose(gauge.sample.A_theta, -rho[:, None] ** -1.5 * e, rtol=1e-12)
    assert gauge.log_gamma.shape == (RADII.size, c.n_theta)
    assert_allclose(gauge.log_gamma[-1, 0], 0.0)


def test_decaying_gauge_pulls_back_with_decay():
    gauge = decaying_gauge(smooth_model(RADII), 2.5, 1.0)
    pulled = pullback_inversion(gauge.sample)
    assert_allclose(pulled.rho, 1.0 / RADII[::-1])
    assert_allclose(angular_decay_exponent(pulled), 1.5, atol=0.05)


def test_decaying_gauge_exponent_bound():
    with pytest.raises(PreconditionError):
        decaying_gauge(smooth_model(RADII), 0.5, 1.0)
    # a cone angle loosens the bound to α > 3 − 2β
    decaying_gauge(conic_model(0.75, RADII), 1.6, 0.75)


def test_bubble_tail_decay():
    rho = np.geomspace(10.0, 1000.0, 12)
    bubble = HoloMap.from_components([[-1.0, 1.0], [1.0, 1.0]])
    tail = energy_tail(bubble, rho)
    assert_allclose(tail, 1.0 / (np.pi * (1 + rho ** 2) ** 2), rtol=1e-10)
    fit = decay_fit(rho, tail)
    assert_allclose(fit.slope, -4.0, atol=0.1)
    assert fit.within_bound


def test_decay_fit_input_errors():
    rho = np.geomspace(10.0, 1000.0, 12)
    with pytest.raises(DataError):
        decay_fit(rho, np.zeros(12))
    with pytest.raises(PreconditionError):
        decay_fit(np.geomspace(0.1, 10.0, 12), np.ones(12))


@pytest.mark.parametrize("eps,beta,divergent", [(0.0, 1.0, False), (0.25, 0.5, False),
                                                (1.0, 0.5, True), (0.6, 0.25, True)])
def test_conic_integrability(eps, beta, divergent):
    result = conic_integrability(eps, beta)
    assert result.divergent == divergent
    if divergent:
        assert result.value == np.inf
    else:
        assert_allclose(result.exponent, 2 * beta - eps, atol=1e-6)


def test_conic_integrability_smooth_unit_disc():
    assert_allclose(conic_integrability(0.0, 1.0).value, 0.5, rtol=1e-9)


def test_nyquist_check():
    rng = np.random.default_rng(3)
    rho, theta = polar_grid(RADII, 64)
    noisy = 1j * rng.normal(size=(RADII.size, 64))
    c = ConnectionSample(rho, theta, np.zeros_like(noisy), noisy)
    with pytest.raises(AccuracyError):
        holonomy_profile(c)


def test_nyquist_check_on_imaginary_connection():
    c = conic_model(0.5, RADII, perturbation=0.3)
    assert np.iscomplexobj(c.A_theta)
    assert_allclose(holonomy_profile(c).g[::-1], np.exp(-2j * np.pi * 0.5 * (1 + 0.3 * RADII)), atol=1e-8)
    rho, theta = polar_grid(RADII, 64)
    # a mode at |k| = 30 of 64 samples sits next to the folding frequency
    aliased = 1j * (0.5 + np.cos(30 * theta))[None, :] * np.ones((RADII.size, 1))
    with pytest.raises(AccuracyError):
        holonomy_profile(ConnectionSample(rho, theta, np.zeros_like(aliased), aliased))
    negative = 1j * (0.5 + np.exp(-1j * 29 * theta))[None, :] * np.ones((RADII.size, 1))
    with pytest.raises(AccuracyError):
        holonomy_profile(ConnectionSample(rho, theta, np.zeros_like(negative), negative))


def test_bad_samples_rejected():
    rho, theta = polar_grid(RADII, 16)
    zeros = np.zeros((RADII.size, 16), dtype=complex)
    with pytest.raises(DomainError):
        ConnectionSample(rho[::-1], theta, zeros, zeros)
    with pytest.raises(DomainError):
        ConnectionSample(rho, theta, zeros[:, :8], zeros)
    with pytest.raises(DomainError):
        holonomy(conic_model(0.5, RADII), 1.0)


def test_random_gauges_leave_holonomy_unchanged():
    rng = np.random.default_rng(29)
    for c in (conic_model(0.25, RADII, perturbation=0.3), smooth_model(RADII, n_theta=16)):
        assert gauge_invariance_defect(c, rng, n_gauges=5) < 1e-12
