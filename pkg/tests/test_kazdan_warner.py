import numpy as np
import pytest
from numpy.testing import assert_allclose

from errors import LimitUndefinedError, PreconditionError, SolverFailure
from holomorphic_data import HoloMap
from kazdan_warner import (KWProblem, adiabatic_sweep, build_background, geometric_schedule, initial_guess,
                           kw_residual, stability_range, solve_kw, sub_super_bracket)
from sphere_geometry import build_grid, evaluate, integrate

IDENTITY = HoloMap.from_components([[0.0, 1.0], [1.0]])
QUADRATIC = HoloMap.from_components([[1.0, 0.0, 1.0], [-0.5j, 1.0]])


def test_background_of_identity_is_flat(grid16):
    bg = build_background(IDENTITY, grid16)
    assert_allclose(bg.psi.values, 0.0, atol=1e-12)
    assert_allclose(bg.h.values, -1.0, atol=1e-12)
    assert_allclose(bg.curvature.values, 2 * np.pi, atol=1e-10)


def test_background_curvature_integrates_to_c1(grid32):
    bg = build_background(QUADRATIC, grid32)
    assert_allclose(integrate(bg.curvature), 4 * np.pi, rtol=1e-12)
    assert np.max(bg.h.values) < 0
    psi, h = bg
    assert h is bg.h and psi is bg.psi


def test_constant_data_degree_zero(grid16):
    problem = KWProblem(grid16, grid16.constant(-1.0), 0, 10.0)
    sol = solve_kw(problem)
    assert_allclose(sol.phi.values, 0.0, atol=1e-12)


def test_constant_data_degree_one(grid16):
    problem = KWProblem(grid16, grid16.constant(-1.0), 1, np.sqrt(16 * np.pi))
    sol = solve_kw(problem)
    assert_allclose(sol.phi.values, np.log(0.5), atol=1e-10)
    assert sol.residual <= problem.tol * (1 + abs(problem.c))


def test_nonconstant_solution_inside_bracket(grid32):
    bg = build_background(QUADRATIC, grid32)
    problem = KWProblem(grid32, bg.h, 2, 20.0)
    lo, hi = sub_super_bracket(problem)
    sol = solve_kw(problem)
    assert np.all(sol.phi.values >= lo - 1e-9)
    assert np.all(sol.phi.values <= hi + 1e-9)
    assert kw_residual(problem, sol.phi).sup_norm() <= problem.tol * (1 + abs(problem.c))


def test_unstable_s_rejected(grid16):
    assert not stability_range(3.0, 1)
    with pytest.raises(PreconditionError):
        KWProblem(grid16, grid16.constant(-1.0), 1, 3.0)


def test_positive_h_rejected(grid16):
    with pytest.raises(PreconditionError):
        KWProblem(grid16, grid16.constant(0.5), 1, 10.0)


def test_h_on_other_grid_rejected(grid16):
    with pytest.raises(PreconditionError):
        KWProblem(grid16, build_grid(8).constant(-1.0), 1, 10.0)


def test_no_solution_when_c_nonnegative(grid16):
    # 4π < s² < 8π: stable, but c(s) > 0
    problem = KWProblem(grid16, grid16.constant(-1.0), 1, np.sqrt(6 * np.pi))
    assert problem.c > 0
    with pytest.raises(SolverFailure):
        solve_kw(problem)
    with pytest.raises(PreconditionError):
        sub_super_bracket(problem)


def test_iteration_cap_reports_last_iterate(grid32):
    bg = build_background(QUADRATIC, grid32)
    problem = KWProblem(grid32, bg.h, 2, 200.0, tol=1e-14, max_iter=1)
    with pytest.raises(SolverFailure) as info:
        solve_kw(problem)
    assert info.value.result is not None
    assert info.value.iterations == 1


def test_constant_sweep_decays_like_inverse_square(grid16):
    schedule = geometric_schedule(10.0, 2.0, 6)
    sweep = adiabatic_sweep(IDENTITY, schedule, grid16, n_jobs=2)
    exact = -np.log(1 - 8 * np.pi / schedule ** 2)
    assert_allclose(sweep.sup_errors, exact, rtol=1e-6, atol=1e-9)
    assert np.all(np.diff(sweep.sup_errors) < 0)
    assert_allclose(sweep.decay_slope(), -2.0, rtol=0.1)
    frame = sweep.to_frame()
    assert list(frame.columns) == ["s", "residual", "sup_error", "iterations"]


def test_warm_start_matches_cold_start(grid32):
    schedule = geometric_schedule(20.0, 2.0, 3)
    cold = adiabatic_sweep(QUADRATIC, schedule, grid32, n_jobs=1)
    warm = adiabatic_sweep(QUADRATIC, schedule, grid32, warm_start=True, n_jobs=1)
    for a, b in zip(cold.solutions, warm.solutions):
        assert_allclose(a.phi.values, b.phi.values, atol=1e-8)


def test_sweep_requires_increasing_schedule(grid16):
    with pytest.raises(PreconditionError):
        adiabatic_sweep(IDENTITY, [20.0, 10.0], grid16)


def test_sweep_limit_undefined_with_common_zeros(grid16):
    f = HoloMap.from_components([[0.0, -1.0, 1.0], [0.0, 2.0, 1.0]])
    with pytest.raises(LimitUndefinedError):
        adiabatic_sweep(f, geometric_schedule(20.0, 2.0, 3), grid16)


def test_solution_independent_of_start(grid32):
    bg = build_background(QUADRATIC, grid32)
    problem = KWProblem(grid32, bg.h, 2, 20.0, tol=1e-12)
    from_guess = solve_kw(problem, initial_guess(bg.h))
    from_zero = solve_kw(problem, grid32.constant(0.0))
    assert np.max(np.abs(from_guess.phi.values - from_zero.phi.values)) <= 1e-9


def test_solution_satisfies_integral_identity(grid32):
    bg = build_background(QUADRATIC, grid32)
    for s in (20.0, 80.0):
        problem = KWProblem(grid32, bg.h, 2, s, tol=1e-12)
        sol = solve_kw(problem)
        lhs = problem.coupling * integrate(bg.h * sol.phi.apply(np.exp))
        assert abs(lhs - problem.c) <= 1e-9 * (1 + abs(problem.c))


def test_solution_stable_under_refinement(grid16, grid32):
    # [z : 3/2] has a smooth, non-constant background density
    f = HoloMap.from_components([[0.0, 1.0], [1.5]])
    coarse, fine = [solve_kw(KWProblem(g, build_background(f, g).h, 1, 20.0, tol=1e-12)) for g in (grid16, grid32)]
    assert np.ptp(coarse.phi.values) > 1e-3
    assert abs(np.max(coarse.phi.values) - np.max(fine.phi.values)) <= 1e-8
    assert_allclose(evaluate(fine.phi, grid16.z), coarse.phi.values, atol=1e-8)
