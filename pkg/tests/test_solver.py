import math

import numpy as np
import pytest

from heatlab.errors import ConfigurationError, DomainError, StabilityError, StepFailureError
from heatlab.grid import ControlWindow, build_grid, norm_lp
from heatlab.nonlinearity import ZERO, DecayCertificate, NonlinearitySpec
from heatlab.solver import (
    LinearProblem, Status, TimeGrid, check_comparison, duality_residual, estimate_smoothing_exponent,
    solve_adjoint, solve_forward, solve_semilinear, time_grid,
)

# int_100^inf ds / (s log^1.8(2+s)), mpmath at 30 digits
BLOWUP_C2_A18_V100 = 0.368072464176114031119364653812


def _eigen_error(theta, n_steps, n=201):
    g = build_grid(0, 1, n, "dirichlet")
    tg = TimeGrid(0.0, 0.1, n_steps)
    y0 = g.field(lambda x: np.sin(np.pi * x))
    sol = solve_forward(LinearProblem(g, tg, 0.0, y0), theta)
    # compare with the semi-discrete mode so only the time error remains
    lam = 4.0 / g.h**2 * np.sin(np.pi * g.h / 2) ** 2
    return np.max(np.abs(sol.final - math.exp(-lam * 0.1) * y0))


def test_time_grid_validation():
    with pytest.raises(ConfigurationError):
        TimeGrid(1.0, 1.0, 10)
    with pytest.raises(ConfigurationError):
        TimeGrid(0.0, 1.0, 0)
    assert time_grid(0, 1, tau=0.3).n_steps == 4


def test_homogeneous_decay():
    g = build_grid(0, 1, 21)
    tg = TimeGrid(0.0, 1.0, 1000)
    sol = solve_forward(LinearProblem(g, tg, 2.0, np.full(21, 3.0)))
    np.testing.assert_allclose(sol.final, 3 * math.exp(-2), rtol=5 * tg.tau)


def test_dirichlet_eigenmode():
    g = build_grid(0, 1, 201, "dirichlet")
    tg = TimeGrid(0.0, 0.1, 400)
    y0 = g.field(lambda x: np.sin(np.pi * x))
    sol = solve_forward(LinearProblem(g, tg, 0.0, y0), 0.5)
    np.testing.assert_allclose(sol.final, math.exp(-np.pi**2 * 0.1) * y0, atol=1e-4)


def test_constant_preserved_neumann():
    g = build_grid(0, 1, 31)
    sol = solve_forward(LinearProblem(g, TimeGrid(0, 1, 50), 0.0, np.full(31, 1.7)))
    np.testing.assert_allclose(sol.values, 1.7, rtol=1e-13)


@pytest.mark.parametrize("theta,order", [(1.0, 1.0), (0.5, 2.0)])
def test_time_convergence_order(theta, order):
    errs = [_eigen_error(theta, n) for n in (20, 40, 80)]
    rates = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(np.abs(rates - order) <= 0.15), rates


def test_theta_validation():
    g = build_grid(0, 1, 11)
    with pytest.raises(ConfigurationError):
        solve_forward(LinearProblem(g, TimeGrid(0, 1, 10), 0.0, np.zeros(11)), theta=0.3)


def test_monotone_step_restriction():
    g = build_grid(0, 1, 11)
    prob = LinearProblem(g, TimeGrid(0, 1, 10), -10.0, np.zeros(11))
    with pytest.raises(StabilityError):
        solve_forward(prob, 1.0, "monotone")


def test_singular_step_detected():
    g = build_grid(0, 1, 11)
    with pytest.raises(StabilityError):
        solve_forward(LinearProblem(g, TimeGrid(0, 1, 2), -4.0, np.zeros(11)))


def test_adjoint_constants():
    g = build_grid(0, 1, 21)
    tg = TimeGrid(0, 1, 200)
    adj = solve_adjoint(g, tg, 0.0, np.ones(21))
    np.testing.assert_allclose(adj.values, 1.0, rtol=1e-12)  # ~N steps of rounding
    adj = solve_adjoint(g, tg, 1.5, np.ones(21), 0.5)
    np.testing.assert_allclose(adj.values[0], math.exp(-1.5), rtol=1e-5)


def test_adjoint_nonnegative(rng):
    g = build_grid(0, 1, 41)
    tg = TimeGrid(0, 1, 400)
    a = rng.uniform(-2, 5, size=(401, 41))
    adj = solve_adjoint(g, tg, a, rng.random(41), 1.0, "monotone")
    assert adj.values.min() >= 0.0


def test_duality_zero_control(rng):
    g = build_grid(0, 1, 51)
    tg = TimeGrid(0, 1, 100)
    w = ControlWindow(g, (0.3, 0.7))
    y0, pT = rng.standard_normal(51), rng.standard_normal(51)
    assert duality_residual(g, tg, w, 0.0, y0, 0.0, pT) <= 1e-10 * (norm_lp(g, y0) + norm_lp(g, pT) + 1)


@pytest.mark.parametrize("bc,theta", [("neumann", 1.0), ("neumann", 0.5), ("dirichlet", 1.0), ("dirichlet", 0.5)])
def test_duality_random(rng, bc, theta):
    g = build_grid(0, 1, 51, bc)
    tg = TimeGrid(0, 1, 100)
    w = ControlWindow(g, (0.2, 0.6))
    h = rng.standard_normal((100, 51))
    y0, pT = g.field(lambda x: rng.standard_normal(51)), rng.standard_normal(51) * g.mask
    a = rng.uniform(-1, 3, size=(101, 51))
    scale = norm_lp(g, y0) + norm_lp(g, pT) + np.sqrt(tg.tau * np.sum(h**2 * g.weights)) + 1
    assert duality_residual(g, tg, w, h, y0, a, pT, theta) <= 1e-10 * scale


def test_duality_zero_terminal(rng):
    g = build_grid(0, 1, 21)
    tg = TimeGrid(0, 1, 20)
    w = ControlWindow(g, (0.3, 0.7))
    assert duality_residual(g, tg, w, rng.standard_normal((20, 21)), rng.standard_normal(21), 1.0,
                            np.zeros(21)) == 0.0


def test_semilinear_blowup_matches_quadrature():
    g = build_grid(0, 1, 21)
    f = NonlinearitySpec("abs_log", -1, 1.8, 2.0)
    sol = solve_semilinear(g, time_grid(0, 0.5, tau=1e-5), f, np.full(21, 100.0), blowup_threshold=1e250)
    assert sol.status is Status.BLEW_UP
    assert abs(sol.blowup_time - BLOWUP_C2_A18_V100) <= 0.05 * BLOWUP_C2_A18_V100
    assert sol.blowup_uncertainty == pytest.approx(1e-5)
    assert np.all(np.isfinite(sol.values))


def test_semilinear_below_decay_envelope():
    g = build_grid(0, 1, 41)
    f = NonlinearitySpec("odd_log", 1, 1.8, 2.0)
    y0 = g.field(lambda x: 20 * np.exp(-30 * (x - 0.4) ** 2))
    tg = TimeGrid(0, 1, 1000)
    sol = solve_semilinear(g, tg, f, y0, inner=True)
    v = DecayCertificate(f).envelope(tg.times, 0.0, float(y0.max()) + 1.0)
    assert sol.values.min() >= 0.0
    assert np.all(sol.values <= v[:, None] + 1e-6)


def test_semilinear_zero_matches_linear(rng):
    g = build_grid(0, 1, 31)
    tg = TimeGrid(0, 1, 100)
    h = rng.standard_normal((100, 31))
    y0 = rng.standard_normal(31)
    a = solve_semilinear(g, tg, ZERO, y0, h)
    b = solve_forward(LinearProblem(g, tg, 0.0, y0, control=h))
    np.testing.assert_allclose(a.values, b.values, rtol=1e-12, atol=1e-12)


def test_semilinear_threshold_precondition():
    g = build_grid(0, 1, 11)
    with pytest.raises(DomainError):
        solve_semilinear(g, TimeGrid(0, 1, 10), ZERO, np.full(11, 10.0), blowup_threshold=5.0)


def test_semilinear_inner_failure():
    g = build_grid(0, 1, 11)
    f = NonlinearitySpec("odd_log", 1, 1.8, 2.0)
    with pytest.raises(StepFailureError) as exc:
        solve_semilinear(g, TimeGrid(0, 1, 2), f, np.full(11, 1e3), inner=True, inner_tol=1e-15, inner_max=1)
    assert exc.value.step == 0


def test_comparison_examples(rng):
    g = build_grid(0, 1, 21)
    tg = TimeGrid(0, 1, 100)
    a = rng.uniform(0, 2, size=(101, 21))
    y = solve_forward(LinearProblem(g, tg, a, np.zeros(21)), 1.0, "monotone")
    z = solve_forward(LinearProblem(g, tg, a, np.ones(21)), 1.0, "monotone")
    assert check_comparison(y, z).passed
    y0 = rng.random(21)
    z0 = y0 + rng.random(21)
    y = solve_forward(LinearProblem(g, tg, a, y0), 1.0, "monotone")
    z = solve_forward(LinearProblem(g, tg, a, z0), 1.0, "monotone")
    assert check_comparison(y, z).passed
    rep = check_comparison(z, y)
    assert not rep.passed and rep.worst_violation > 0 and rep.where is not None


def test_smoothing_slope():
    g = build_grid(0, 1, 401)
    slope = estimate_smoothing_exponent(g, time_grid(0, 0.1, tau=2.5e-4))
    assert abs(slope + 0.5) <= 0.1


def test_smoothing_constant_data():
    g = build_grid(0, 1, 101)
    slope = estimate_smoothing_exponent(g, time_grid(0, 0.1, tau=1e-3), y0=np.ones(101))
    assert abs(slope) <= 1e-8


def test_smoothing_dirichlet_steepens():
    tg = time_grid(0, 1.0, tau=1e-3)
    sd = estimate_smoothing_exponent(build_grid(0, 1, 201, "dirichlet"), tg, window=(0.2, 1.0))
    sn = estimate_smoothing_exponent(build_grid(0, 1, 201), tg, window=(0.2, 1.0))
    assert sd < -1.0 < sn


def test_smoothing_window_checked():
    g = build_grid(0, 1, 101)
    with pytest.raises(DomainError):
        estimate_smoothing_exponent(g, time_grid(0, 0.1, tau=1e-3), window=(1e-2, 2e-2))
