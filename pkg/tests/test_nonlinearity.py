import math

import numpy as np
import pytest

from heatlab.errors import ConfigurationError, DomainError
from heatlab.nonlinearity import (
    ZERO, DecayCertificate, NonlinearitySpec, big_f, big_f_inverse, blowup_time, decay_time_for_target,
    eval_f, eval_g, growth_bound_constant, log_big_f, log_big_f_inverse, ode_decay, ode_escape_time,
)

S = NonlinearitySpec
QUAD = S("power", 1, 2.0)  # f(s) = s|s|: F(s) = 1/s

# mpmath quadratures at 30 digits
F_ODDLOG_A2_C2_AT_1 = 1.37368456977335404036486102852
F_ODDLOG_A2_C2_AT_1E6 = 0.0723824123920713586717211410942
F_ODDLOG_A2_C2_AT_005 = 5.86512290185099216354993838146
F_ODDLOG_A18_C2_AT_005 = 5.96006001689941146859018491978
BLOWUP_LOG2_C1_V100 = 0.217018067220609729902653486704
BLOWUP_LOG18_C1_V100 = 0.368232872758257103859436723852
INTLOG_P18 = {0.5: 0.0385721195411556614254790160906, 10.0: 26.7745472944060137002675444474,
              1000.0: 25017.5894885807754662564378026, 1e6: 99048331.584387453414563434322}

FAMILIES = [S("odd_log", 1, 1.8, 2.0), S("odd_log", -1, 0.5, 1.0), S("abs_log", -1, 1.8, 2.0),
            S("abs_log", 1, 2.5, 1.0), S("integral_log", 1, 1.8), S("integral_log", -1, 0.7), QUAD, ZERO]


def test_eval_f_examples():
    assert eval_f(S("odd_log", 1, 2, 2), 0.0) == 0.0
    assert eval_f(S("odd_log", 1, 1, 2), math.e - 2) == pytest.approx(math.e - 2, rel=1e-15)
    assert eval_f(S("abs_log", -1, 1.8, 2), -3.0) == pytest.approx(-3 * math.log(5) ** 1.8, rel=1e-15)


def test_eval_g_examples():
    assert eval_g(S("odd_log", 1, 1.8, 2), 0.0) == pytest.approx(math.log(2) ** 1.8, rel=1e-15)
    for spec in FAMILIES:
        assert eval_g(spec, 1.0) == pytest.approx(eval_f(spec, 1.0), rel=1e-13, abs=1e-300)


@pytest.mark.parametrize("spec", FAMILIES, ids=lambda s: str(s.to_dict()))
def test_f_zero_and_g_continuity(spec):
    assert eval_f(spec, 0.0) == 0.0
    gaps = [abs(eval_g(spec, 10.0**-k) - eval_g(spec, 0.0)) for k in range(2, 9)]
    assert all(b <= a + 1e-15 for a, b in zip(gaps, gaps[1:]))
    assert gaps[-1] <= 1e-2 * gaps[0] + 1e-15


def test_abs_log_g_at_zero_is_right_limit():
    spec = S("abs_log", -1, 1.8, 2.0)
    assert eval_g(spec, 0.0) == pytest.approx(-math.log(2) ** 1.8)
    assert not spec.differentiable_at_zero


def test_integral_log_values():
    spec = S("integral_log", 1, 1.8)
    for s, ref in INTLOG_P18.items():
        assert eval_f(spec, s) == pytest.approx(ref, rel=1e-12)
        assert eval_f(spec, -s) == pytest.approx(ref, rel=1e-12)
    # int_0^{e-1} log^2(1+u) du = e - 2
    assert eval_f(S("integral_log", 1, 2.0), math.e - 1) == pytest.approx(math.e - 2, rel=1e-13)


def test_sign_flags():
    assert S("odd_log", 1, 1.8).sign_pos and S("odd_log", 1, 1.8).sign_neg
    assert not S("abs_log", 1, 1.8).sign_neg
    assert S("abs_log", -1, 1.8).sign_neg and not S("abs_log", -1, 1.8).sign_pos
    assert S("odd_log", 1, 1.8).integrable_tail and not S("odd_log", 1, 1.0).integrable_tail


def test_spec_validation():
    with pytest.raises(ConfigurationError):
        S("odd_log", 2, 1.8)
    with pytest.raises(ConfigurationError):
        S("odd_log", 1, 0.0)
    with pytest.raises(ConfigurationError):
        S("odd_log", 1, 1.8, 0.5)
    assert S.from_dict(S("abs_log", -1, 1.8, 1.0).to_dict()) == S("abs_log", -1, 1.8, 1.0)


def test_big_f_closed_form():
    assert big_f(QUAD, 0.1) == pytest.approx(10.0, rel=1e-10)
    assert big_f_inverse(QUAD, 10.0) == pytest.approx(0.1, rel=1e-9)


def test_big_f_against_independent_quadrature():
    spec = S("odd_log", 1, 2, 2)
    assert abs(big_f(spec, 1.0) - F_ODDLOG_A2_C2_AT_1) <= 1e-10
    assert abs(big_f(spec, 1e6) - F_ODDLOG_A2_C2_AT_1E6) <= 1e-10


def test_big_f_tail_vanishes():
    spec = S("odd_log", 1, 2, 2)
    vals = [log_big_f(spec, x) for x in (0, 10, 100, 400, 800)]
    assert all(b < a for a, b in zip(vals, vals[1:]))
    # F ~ 1/log s, so the 1e-3 level needs log s ~ 800
    assert log_big_f(spec, 800.0) < big_f(spec, 1.0) * 1e-3


def test_big_f_errors():
    with pytest.raises(DomainError):
        big_f(S("odd_log", 1, 1.0), 1.0)
    with pytest.raises(DomainError):
        big_f(S("odd_log", 1, 1.8), 0.0)
    with pytest.raises(DomainError):
        big_f_inverse(S("odd_log", 1, 1.8), -1.0)


def test_inverse_round_trip_and_monotone():
    spec = S("odd_log", 1, 2, 2)
    for u in (1e-3, 1.0, 1e3):
        x = log_big_f_inverse(spec, u)
        assert abs(log_big_f(spec, x) - u) <= 1e-8 * u
    assert big_f_inverse(spec, 2.0) < big_f_inverse(spec, 1.0)


def test_decay_time_examples():
    assert decay_time_for_target(QUAD, 0.1) == pytest.approx(10.0, rel=1e-10)
    spec = S("odd_log", 1, 2, 2)
    t = decay_time_for_target(spec, 0.05)
    assert abs(t - F_ODDLOG_A2_C2_AT_005) <= 1e-9
    v = ode_decay(spec, 1e6, [0.0, t])
    assert v[-1] <= 0.05
    assert decay_time_for_target(spec, 0.01) > decay_time_for_target(spec, 0.05)
    assert abs(decay_time_for_target(S("odd_log", 1, 1.8, 2), 0.05) - F_ODDLOG_A18_C2_AT_005) <= 1e-9


def test_decay_time_independent_of_start():
    spec = S("odd_log", 1, 1.8, 2)
    delta = 0.05
    t = decay_time_for_target(spec, delta)
    ends = [ode_decay(spec, v1, [0.0, t])[-1] for v1 in (10.0, 1e3, 1e6)]
    assert all(e <= delta * (1 + 1e-8) for e in ends)
    # ordered by the start value (comparison), limit delta as the start grows
    assert ends[0] < ends[1] < ends[2]
    assert ode_decay(spec, 1.0, [0.0, t - big_f(spec, 1.0)])[-1] == pytest.approx(delta, rel=1e-6)


def test_blowup_time_examples():
    assert blowup_time(QUAD, 10.0) == pytest.approx(0.1, rel=1e-10)
    spec = S("odd_log", 1, 2.0, 1.0)
    t = blowup_time(spec, 100.0)
    assert abs(t - BLOWUP_LOG2_C1_V100) <= 1e-10
    esc = ode_escape_time(spec.negated(), 100.0)
    assert abs(esc - t) <= 0.01 * t
    assert blowup_time(S("odd_log", 1, 1.0, 1.0), 100.0) == math.inf


def test_escape_time_plus_tail_is_blowup_time():
    spec = S("abs_log", 1, 1.8, 1.0)
    t = blowup_time(spec, 100.0)
    assert abs(t - BLOWUP_LOG18_C1_V100) <= 1e-10
    assert ode_escape_time(spec.negated(), 100.0, threshold=1e250) + big_f(spec, 1e250) == pytest.approx(t, rel=1e-9)


def _growth_ratio(spec, s):
    return np.abs(spec.f(s)) / (s * np.log1p(s) ** (spec.alpha + 0.1))


@pytest.mark.parametrize("spec", [S("odd_log", 1, 1.8, 2), S("abs_log", -1, 1.8, 1.0), S("odd_log", 1, 1.2, 1.0)],
                         ids=["odd", "abs", "odd12"])
def test_growth_condition_probe(spec):
    r = _growth_ratio(spec, 10.0 ** np.arange(1, 13))
    assert np.all(np.diff(r[-6:]) < 0)


def test_growth_condition_probe_integral_family():
    # the lower-order term of int log^p(1+u) du pushes the peak of the ratio
    # to s = 1e8 (mpmath: 0.676983 at 1e7, 0.677445 at 1e8, 0.676862 at 1e9)
    spec = S("integral_log", 1, 1.8)
    r = _growth_ratio(spec, 10.0 ** np.arange(1, 40))
    assert int(np.argmax(r)) == 7
    assert r[6] == pytest.approx(0.676983346195115523, rel=1e-10)
    assert r[7] == pytest.approx(0.677445160899440062, rel=1e-10)
    assert np.all(np.diff(r[7:]) < 0)


@pytest.mark.parametrize("alpha", [1.0, 1.5, 1.8])
def test_growth_bound_constant(alpha):
    # sup_L L^(alpha/2) - L/2 with L = log(2+s): L* = alpha^(2/(2-alpha)), value L*(1/alpha - 1/2)
    L = alpha ** (2 / (2 - alpha))
    c, arg, interior = growth_bound_constant(S("odd_log", 1, alpha, 2), s_max=1e300, n=40001)
    assert interior
    assert c == pytest.approx(L * (1 / alpha - 0.5), rel=1e-4)
    assert math.log(2 + arg) == pytest.approx(L, rel=1e-2)


def test_big_f_convex_decreasing():
    spec = S("odd_log", 1, 1.8, 2)
    x = np.linspace(-5, 10, 61)
    F = np.array([big_f(spec, s) for s in np.exp(x)])
    assert np.all(np.diff(F) < 0)
    s = np.exp(x)
    slopes = np.diff(F) / np.diff(s)
    assert np.all(np.diff(slopes) > 0)


def test_decay_certificate():
    spec = S("odd_log", 1, 1.8, 2)
    cert = DecayCertificate(spec)
    assert cert.interp_error <= 1e-5
    for s in (1e-6, 1e-2, 1.0, 1e3, 1e10):
        assert cert.F_inv(cert.F(s)) == pytest.approx(s, rel=10 * cert.interp_error + 1e-9)
    t = np.linspace(1.0, 8.0, 50)
    v = cert.envelope(t, 1.0, 1e4)
    assert v[0] == pytest.approx(1e4, rel=1e-5)
    assert np.all(np.diff(v) <= 0)
    ode = ode_decay(spec, 1e4, t)
    np.testing.assert_allclose(v, ode, rtol=1e-4)
    with pytest.raises(DomainError):
        DecayCertificate(S("odd_log", 1, 0.9))
