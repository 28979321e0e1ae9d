import numpy as np
import pytest

from heatlab.errors import CertificateError, ConfigurationError
from heatlab.grid import ControlWindow, build_grid, norm_lp
from heatlab.nonlinearity import ZERO, DecayCertificate, NonlinearitySpec, decay_time_for_target
from heatlab.pipeline import (
    PipelineConfig, certify_decay, local_null_control, picard_nonneg_steer, run_blowup_demo,
    run_global_null,
)

ACC = NonlinearitySpec("odd_log", 1, 1.8, 2.0)
QUAD = NonlinearitySpec("power", 1, 2.0)  # f(s) = s|s|, F(s) = 1/s


def _cfg(spec=ACC, n=51, y0=None, **kw):
    g = build_grid(0, 1, n)
    w = ControlWindow(g, (0.3, 0.7))
    y0 = np.zeros(n) if y0 is None else y0(g.x)
    return PipelineConfig(g, w, spec, y0, **kw)


def _bump(x):
    return np.exp(-(((x - 0.5) / 0.1) ** 2))


def test_config_validation():
    with pytest.raises(ConfigurationError):
        _cfg(delta=0.0)
    with pytest.raises(ConfigurationError):
        _cfg(picard_max=0)


# -- phase 1 ----------------------------------------------------------------

def test_phase1_nonneg_shortcut():
    cfg = _cfg(y0=lambda x: 1 + x, T1=0.1, tau=1e-2)
    p = picard_nonneg_steer(cfg)
    assert p.data["iterations"] == 0 and p.data["shortcut"]
    assert np.all(p.control == 0)


def test_phase1_picard_converges():
    cfg = _cfg(y0=lambda x: -5 * _bump(x), T1=1.0, tau=1e-3)
    p = picard_nonneg_steer(cfg)
    d = p.data
    assert 1 <= d["iterations"] <= 20
    assert d["neg_norm_T_star"] <= cfg.eps + d["tolerance"]
    assert d["neg_norm"] <= d["neg_norm_T_star"] + d["tolerance"]
    assert 0 < d["T_star"] <= cfg.T1


def test_phase1_linear_single_iteration():
    cfg = _cfg(ZERO, y0=lambda x: -np.ones_like(x), T1=0.5, tau=5e-3)
    p = picard_nonneg_steer(cfg)
    assert p.data["iterations"] == 1
    assert p.data["neg_norm"] <= cfg.eps + p.data["tolerance"]


def test_phase1_sign_requirement():
    cfg = _cfg(NonlinearitySpec("odd_log", -1, 1.8, 2.0), y0=lambda x: -_bump(x))
    with pytest.raises(ConfigurationError):
        picard_nonneg_steer(cfg)


def test_phase1_deterministic():
    runs = [picard_nonneg_steer(_cfg(y0=lambda x: -3 * _bump(x), T1=0.5, tau=5e-3)) for _ in range(2)]
    assert runs[0].data["increments"] == runs[1].data["increments"]
    np.testing.assert_array_equal(runs[0].final, runs[1].final)


# -- phase 2 ----------------------------------------------------------------

def test_decay_time_quadratic():
    cfg = _cfg(QUAD, delta=0.1, tau=1e-2)
    p = certify_decay(np.full(51, 0.5), cfg, 1.0)
    assert p.data["decay_time"] == pytest.approx(10.0, rel=1e-9)
    assert p.t_end == pytest.approx(11.0, rel=1e-9)


def test_constant_state_tracks_ode():
    cfg = _cfg(QUAD, n=21, delta=0.5, tau=1e-3)
    c = 2.0
    p = certify_decay(np.full(21, c), cfg, 0.0)
    exact = 1.0 / (p.times + 1.0 / c)  # v' = -v^2
    err = np.max(np.abs(p.states - exact[:, None]))
    assert err <= 2 * cfg.tau
    assert np.ptp(p.final) <= 1e-14


def test_envelope_independent_of_start():
    cert = DecayCertificate(ACC)
    t2 = 1.0 + decay_time_for_target(ACC, 0.05)
    for v in (10.0, 1e3):
        assert cert.envelope([t2], 1.0, v)[0] <= 0.05
    cfg = _cfg(ACC, n=21, delta=0.05, tau=1e-3)
    p = certify_decay(np.full(21, 10.0), cfg, 1.0)
    assert p.data["envelope_violation"] <= p.data["tolerance"]
    assert p.data["final_max"] <= cfg.delta + p.data["tolerance"]
    assert p.t_end == pytest.approx(t2, rel=1e-14)


def test_envelope_failure_is_reported():
    # backward Euler lags the ODE when tau * f'(v) is large: honest certificate failure
    cfg = _cfg(ACC, n=21, delta=0.05, tau=1e-3)
    with pytest.raises(CertificateError) as info:
        certify_decay(np.full(21, 1e3), cfg, 1.0)
    data = info.value.worst
    assert data["envelope_violation"] > data["tolerance"]
    assert len(data["worst_point"]) == 2


def test_phase2_clips_negative_part():
    cfg = _cfg(QUAD, n=21, delta=0.5, tau=1e-2)
    state = np.full(21, 1.0)
    state[3] = -1e-6
    p = certify_decay(state, cfg, 0.0)
    assert p.data["clip_norm"] > 0 and np.min(p.states) >= 0


# -- phase 3 ----------------------------------------------------------------

def test_phase3_zero_state():
    cfg = _cfg(ACC, n=21)
    p = local_null_control(np.zeros(21), cfg, 2.0)
    assert p.data["shortcut"] == "zero state" and np.all(p.control == 0)


def test_phase3_linear():
    cfg = _cfg(ZERO, n=31, horizon3=0.5, tau=5e-3, eps_final=1e-4)
    state = 0.05 * cfg.grid.field(lambda x: np.cos(np.pi * x) + 0.5)
    p = local_null_control(state, cfg, 0.0)
    tol = p.data["hum"]["residual"] + 1e-9
    assert p.data["iterations"] == 1
    assert p.data["final_l2"] <= cfg.eps_final + tol


def test_global_linear_reduces_to_phase3():
    cfg = _cfg(ZERO, n=31, y0=lambda x: np.sin(3 * np.pi * x), horizon3=0.5, tau=5e-3, eps_final=1e-4)
    rep = run_global_null(cfg)
    assert [p.name for p in rep.phases] == ["phase3"]
    assert rep.T1 == rep.T2 == 0.0 and rep.T3 == 0.5
    assert rep.status == "success"
    assert rep.final_l2 <= 2 * cfg.eps_final


# -- blow-up ----------------------------------------------------------------

def test_subcritical_no_blowup():
    g = build_grid(0, 1, 11)
    rep = run_blowup_demo(g, NonlinearitySpec("odd_log", -1, 0.5, 2.0), np.full(11, 100.0), 10.0, tau=1e-3)
    assert not rep.blew_up and rep.t_star is None
    assert rep.profile_growth > 1.0


def test_blowup_time_matches_oracle():
    g = build_grid(0, 1, 11)
    spec = NonlinearitySpec("abs_log", -1, 1.8, 1.0)
    rep = run_blowup_demo(g, spec, np.full(11, 100.0), 1.0, tau=1e-5)
    # int_100^inf ds / (s log^1.8(1+s)), mpmath at 30 digits
    assert rep.oracle == pytest.approx(0.368232872758257103859436723852, rel=1e-9)
    assert rep.blew_up and rep.rel_error <= 0.05
    assert norm_lp(g, np.full(11, 100.0)) == pytest.approx(100.0)
