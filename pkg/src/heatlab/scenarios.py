"""Scenario runners behind the command line.

Each runner takes a validated :class:`~heatlab.config.Config` and an output
directory, writes its CSV/JSON artifacts and returns a :class:`Outcome`
holding named pass/fail assertions and scalar summaries.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import io
from .carleman import (
    CarlemanParams,
    build_eta0,
    carleman_ensemble,
    carleman_ratio,
    estimate_observability,
    fit_cost_exponent,
    load_calibration,
    random_nonneg_data,
    s1_threshold,
)
from .errors import ConfigurationError
from .grid import ControlWindow, build_grid, norm_lp
from .hum import HumConfig, precompute_representers, solve_hum, steering_cost
from .nonlinearity import ZERO, NonlinearitySpec, decay_time_for_target
from .pipeline import PipelineConfig, calibrate_delta, run_blowup_demo, run_global_null
from .solver import TimeGrid, estimate_smoothing_exponent, solve_adjoint, time_grid

MAX_TIME_ROWS = 201


@dataclass
class Outcome:
    assertions: dict = field(default_factory=dict)
    summary: dict = field(default_factory=dict)
    files: list = field(default_factory=list)
    constants: dict = field(default_factory=dict)

    @property
    def passed(self):
        return all(self.assertions.values())


@dataclass
class Setup:
    grid: object
    window: object
    spec: object
    y0: np.ndarray


def initial_data(cfg, grid):
    kind, amp, mode = cfg["data.kind"], cfg["data.amplitude"], cfg["data.mode"]
    s = (grid.x - grid.x_a) / grid.length
    if kind == "const":
        y = np.full(grid.n_nodes, amp)
    elif kind == "sin":
        y = amp * np.sin(mode * np.pi * s)
    elif kind == "cos":
        y = amp * np.cos(mode * np.pi * s)
    else:
        y = amp * np.exp(-0.5 * ((s - 0.5) * 2.0 * mode) ** 2)
    return y * grid.mask


def make_spec(cfg):
    fam = cfg["nonlinearity.family"]
    if fam == "zero":
        return ZERO
    return NonlinearitySpec(fam, cfg["nonlinearity.sigma"], cfg["nonlinearity.alpha"], cfg["nonlinearity.c"])


def build_setup(cfg):
    """Construct every model object; raises ConfigurationError before any solve."""
    try:
        grid = build_grid(cfg["grid.x_a"], cfg["grid.x_b"], cfg["grid.n_nodes"], cfg["grid.bc"])
    except ConfigurationError as exc:
        raise ConfigurationError(f"grid.n_nodes / grid.x_a / grid.x_b: {exc}") from None
    try:
        window = ControlWindow(grid, (cfg["window.omega_lo"], cfg["window.omega_hi"]),
                               (cfg["window.omega0_lo"], cfg["window.omega0_hi"]))
    except ConfigurationError as exc:
        raise ConfigurationError(f"window.*: {exc}") from None
    try:
        spec = make_spec(cfg)
    except ConfigurationError as exc:
        raise ConfigurationError(f"nonlinearity.*: {exc}") from None
    tag = cfg["scenario"]
    if tag == "GlobalNull" and not spec.is_zero and not (spec.sign_pos and spec.integrable_tail):
        raise ConfigurationError("nonlinearity.*: GlobalNull needs f > 0 on (0, inf) with 1/f integrable")
    if tag == "BlowupDemo" and (spec.is_zero or spec.sign_pos):
        raise ConfigurationError("nonlinearity.sigma: BlowupDemo needs a focusing nonlinearity")
    if tag == "SmoothingCheck" and not cfg["smoothing.t_hi"] >= 4 * cfg["smoothing.t_lo"]:
        raise ConfigurationError("smoothing.t_hi: window must span a factor 4")
    if tag == "DeltaCalibration" and not cfg["delta_cal.hi"] > cfg["delta_cal.lo"]:
        raise ConfigurationError("delta_cal.hi: must exceed delta_cal.lo")
    if tag == "NonnegSteer" and cfg["time.tau"] > cfg["time.T"]:
        raise ConfigurationError("time.tau: larger than time.T")
    return Setup(grid, window, spec, initial_data(cfg, grid))


def _step_times(tg):
    return tg.times[:-1]


# ---------------------------------------------------------------------------


def run_nonneg_steer(cfg, out):
    st = build_setup(cfg)
    g, w = st.grid, st.window
    T, M = cfg["time.T"], cfg["potential.M"]
    tg = time_grid(0.0, T, tau=cfg["time.tau"])
    eps_values = cfg["hum.eps_list"] or (cfg["hum.epsilon"],)
    reps = precompute_representers(g, tg, w, -M, st.y0)
    rows, oc = [], Outcome()
    last = None
    for eps in eps_values:
        hc = HumConfig(eps, cone=True, max_iterations=cfg["hum.max_iterations"], tol=cfg["hum.tol"])
        res = solve_hum(hc, reps)
        nz = np.unique(res.control[res.control != 0.0])
        tag = f"{eps:.0e}"
        oc.assertions[f"eps_bound[{tag}]"] = bool(res.eps_bound_ok())
        oc.assertions[f"J_nonpositive[{tag}]"] = res.J <= 0.0
        oc.assertions[f"control_constant[{tag}]"] = nz.size <= 1
        oc.assertions[f"monotone_J[{tag}]"] = all(bool(np.all(np.diff(h) <= 0)) for h in res.histories)
        rows.append((eps, res.level, res.neg_norm, eps + res.tolerance, res.J, sum(res.iterations),
                     res.residual, res.duality_residual, steering_cost(res, st.y0, g)))
        last = res
    oc.files.append(io.write_csv(out / "steer.csv", ("eps", "level", "neg_norm", "bound", "J", "iterations",
                                                     "residual", "duality_residual", "cost"), rows))
    oc.files.append(io.write_control_csv(out / "control.csv", _step_times(tg), g.x, last.control, MAX_TIME_ROWS))
    y = last.trajectory
    oc.files.append(io.write_field_csv(out / "trajectory.csv", y.times, g.x, y.values, MAX_TIME_ROWS))
    oc.files.append(io.write_norms_csv(out / "norms.csv", y.times, y.norms))
    oc.summary.update(neg_norm=last.neg_norm, level=last.level, eps=last.eps, J=last.J,
                      cost=steering_cost(last, st.y0, g))
    return oc


def _pipeline_config(cfg, st, y0=None):
    return PipelineConfig(
        st.grid, st.window, st.spec, st.y0 if y0 is None else y0, T1=cfg["pipeline.T1"],
        delta=cfg["pipeline.delta"], eps=cfg["hum.epsilon"], eps_final=cfg["pipeline.eps_final"],
        picard_tol=cfg["pipeline.picard_tol"], picard_max=cfg["pipeline.picard_max"],
        horizon3=cfg["pipeline.horizon3"], tau=cfg["pipeline.tau"],
        hum_max_iterations=cfg["hum.max_iterations"],
    )


def run_global_null_scenario(cfg, out):
    st = build_setup(cfg)
    pc = _pipeline_config(cfg, st)
    # horizon fixed from (f, delta) alone, before looking at the data
    if st.spec.is_zero:
        planned = (0.0, 0.0, pc.horizon3)
    else:
        t2 = pc.T1 + decay_time_for_target(st.spec, pc.delta)
        planned = (pc.T1, t2, t2 + pc.horizon3)
    rep = run_global_null(pc)
    oc = Outcome()
    oc.assertions["pipeline_success"] = rep.status == "success"
    oc.assertions["horizon_planned"] = (rep.T1, rep.T2, rep.T3) == planned
    g = st.grid
    for p in rep.phases:
        if p.name == "phase1":
            oc.assertions["phase1_neg_bound"] = p.data.get("neg_norm", 0.0) <= pc.eps + p.data.get("tolerance", 0.0)
        if p.name == "phase2":
            oc.assertions["phase2_envelope"] = p.data["envelope_violation"] <= p.data["tolerance"]
            oc.assertions["phase2_reaches_delta"] = p.data["final_max"] <= pc.delta + p.data["tolerance"]
        oc.files.append(io.write_field_csv(out / f"{p.name}_trajectory.csv", p.times, g.x, p.states, MAX_TIME_ROWS))
    oc.assertions["final_bound"] = rep.final_l2 <= 2.0 * pc.eps_final
    if rep.phases:
        times, states, ctrl = rep.combined()
        norms = {"l1": [norm_lp(g, s, 1) for s in states], "l2": [norm_lp(g, s) for s in states],
                 "linf": [norm_lp(g, s, np.inf) for s in states]}
        oc.files.append(io.write_norms_csv(out / "norms.csv", times, norms))
        oc.files.append(io.write_control_csv(out / "control.csv", times[:-1], g.x, ctrl, 4 * MAX_TIME_ROWS))
    factor = cfg["pipeline.scale_check"]
    if factor > 0:
        rep2 = run_global_null(_pipeline_config(cfg, st, factor * st.y0))
        oc.assertions["scaled_same_horizon"] = (rep2.T2, rep2.T3) == (rep.T2, rep.T3)
        oc.assertions["scaled_success"] = rep2.status == "success"
        oc.summary["scaled_final_l2"] = rep2.final_l2
    oc.files.append(io.write_json(out / "report.json", rep.to_dict()))
    oc.summary.update(T1=rep.T1, T2=rep.T2, T3=rep.T3, final_l2=rep.final_l2, status=rep.status)
    return oc


def run_blowup_scenario(cfg, out):
    st = build_setup(cfg)
    ctrl_cfg = None
    if cfg["blowup.controlled"]:
        ctrl_cfg = {"tau": cfg["blowup.control_tau"], "eps": cfg["hum.epsilon"],
                    "picard_tol": cfg["pipeline.picard_tol"], "picard_max": cfg["pipeline.picard_max"],
                    "T1": min(cfg["pipeline.T1"], cfg["blowup.horizon"])}
    rep = run_blowup_demo(st.grid, st.spec, st.y0, cfg["blowup.horizon"], tau=cfg["blowup.tau"],
                          threshold=cfg["blowup.threshold"], window=st.window, control_cfg=ctrl_cfg)
    oc = Outcome()
    if rep.oracle is not None and math.isfinite(rep.oracle):
        oc.assertions["blowup_time_within_5pct"] = bool(rep.blew_up and rep.rel_error <= 0.05)
    if rep.controlled is not None:
        oc.assertions["controlled_run_completes"] = bool(rep.controlled["completed"])
    oc.files.append(io.write_json(out / "blowup.json", rep.to_dict()))
    oc.summary.update(blew_up=rep.blew_up, t_star=rep.t_star, oracle=rep.oracle, rel_error=rep.rel_error)
    return oc


def observability_point(grid, window, T, M, y0, eps, restarts, seed, min_steps):
    """Observability constants and nonnegative steering cost for ``a = -M``."""
    n = max(min_steps, int(math.ceil(T * (1.0 + 2.0 * M))))
    tg = TimeGrid(0.0, T, n)
    est = estimate_observability(grid, tg, window, -M, M=M, restarts=restarts, seed=seed)
    reps = precompute_representers(grid, tg, window, -M, y0)
    res = solve_hum(HumConfig(eps), reps)
    return est, steering_cost(res, y0, grid), res


def run_observability_sweep(cfg, out):
    st = build_setup(cfg)
    T = cfg["time.T"]
    rows, costs, signed = [], [], []
    oc = Outcome()
    for M in cfg["observability.M_values"]:
        est, cost, res = observability_point(st.grid, st.window, T, M, st.y0, cfg["hum.epsilon"],
                                             cfg["observability.restarts"], cfg["seed"],
                                             cfg["observability.min_steps"])
        o = est.orderings()
        oc.assertions[f"cone_le_signed[M={M:g}]"] = bool(o["cone_le_signed"])
        oc.assertions[f"cone_le_cs[M={M:g}]"] = bool(o["cone_le_cs"])
        oc.assertions[f"steer_eps_bound[M={M:g}]"] = bool(res.eps_bound_ok())
        rows.append((M, est.C_nonneg_L1, est.C_cone_L2, est.C_signed_L2, est.meta["restarts"], cost))
        costs.append((M, cost))
        signed.append((M, est.C_signed_L2))
        oc.summary.update(C_nonneg_L1=est.C_nonneg_L1, C_cone_L2=est.C_cone_L2,
                          C_signed_L2=est.C_signed_L2, cost=cost)
    oc.files.append(io.write_csv(out / "obs_sweep.csv", ("M", "C_nonneg_L1", "C_cone_L2", "C_signed_L2",
                                                         "restarts_used", "steering_cost"), rows))
    if len(rows) >= 4:
        fit_cost = fit_cost_exponent(costs)
        fit_signed = fit_cost_exponent(signed)
        fit_obs = fit_cost_exponent([(r[0], r[1]) for r in rows])
        r2_half = fit_cost.fits[0.5]["r2"]
        b_n = fit_cost.beta if fit_cost.beta is not None else 0.5
        b_s = fit_signed.beta if fit_signed.beta is not None else 0.5
        oc.assertions["cost_fit_r2_half"] = r2_half >= 0.9
        oc.assertions["beta_ordering"] = b_n <= b_s + 0.15
        oc.files.append(io.write_json(out / "fit.json", {
            "steering_cost": fit_cost.to_dict(), "C_signed_L2": fit_signed.to_dict(),
            "C_nonneg_L1": fit_obs.to_dict(), "beta_nonneg": b_n, "beta_signed": b_s}))
        oc.summary.update(r2_half=r2_half, beta_nonneg=b_n, beta_signed=b_s)
    return oc


def run_carleman_check(cfg, out):
    st = build_setup(cfg)
    g, w = st.grid, st.window
    cal = load_calibration()
    ens = carleman_ensemble(g, w, T=cfg["time.T"], n_steps=cfg["carleman.n_steps"],
                            a_values=cfg["carleman.a_values"], s_factors=cfg["carleman.s_factors"],
                            n_samples=cfg["carleman.n_samples"], seed=cfg["seed"],
                            lam=cfg["carleman.lambda"], C_geom=cfg["carleman.C_geom"])
    oc = Outcome(constants={"C1_cal": cal["C1_cal"]})
    oc.assertions["ratio_le_C1_cal"] = ens["max_ratio"] <= cal["C1_cal"]
    # scale invariance on the first ensemble member
    prof = build_eta0(g, w)
    rng = np.random.default_rng(cfg["seed"])
    qT = random_nonneg_data(g, rng)
    tg = TimeGrid(0.0, cfg["time.T"], cfg["carleman.n_steps"])
    a = cfg["carleman.a_values"][-1]
    par = CarlemanParams(cfg["carleman.lambda"], 1.0, cfg["time.T"], abs(a), cfg["carleman.C_geom"], g.bc)
    par = CarlemanParams(par.lam, s1_threshold(par, prof.eta0_max), par.T, par.a_norm, par.C_geom, par.bc)
    r1 = carleman_ratio(solve_adjoint(g, tg, a, qT, 1.0, "monotone"), prof, par)
    r5 = carleman_ratio(solve_adjoint(g, tg, a, 5.0 * qT, 1.0, "monotone"), prof, par)
    oc.assertions["scale_invariance"] = abs(r5 - r1) <= 1e-12 * abs(r1)
    rows = []
    for i, av in enumerate(cfg["carleman.a_values"]):
        for j, sf in enumerate(cfg["carleman.s_factors"]):
            for k in range(ens["ratios"].shape[2]):
                rows.append((av, sf, k, ens["ratios"][i, j, k]))
    oc.files.append(io.write_csv(out / "carleman.csv", ("a", "s_factor", "sample", "ratio"), rows))
    oc.summary.update(max_ratio=ens["max_ratio"], C1_cal=cal["C1_cal"], m=ens["m"])
    return oc


def run_smoothing_check(cfg, out):
    st = build_setup(cfg)
    t_hi = cfg["smoothing.t_hi"]
    tg = time_grid(0.0, t_hi, tau=min(cfg["time.tau"], cfg["smoothing.t_lo"] / 4))
    slope = estimate_smoothing_exponent(st.grid, tg, window=(cfg["smoothing.t_lo"], t_hi),
                                        n_samples=cfg["smoothing.n_samples"])
    oc = Outcome()
    oc.assertions["slope_near_minus_half"] = abs(slope + 0.5) <= 0.1
    oc.files.append(io.write_json(out / "smoothing.json", {"slope": slope, "tau": tg.tau,
                                                           "window": [cfg["smoothing.t_lo"], t_hi]}))
    oc.summary["slope"] = slope
    return oc


def run_delta_calibration(cfg, out):
    st = build_setup(cfg)
    pc = _pipeline_config(cfg, st)
    d_star, recs = calibrate_delta(pc, lo=cfg["delta_cal.lo"], hi=cfg["delta_cal.hi"], iters=cfg["delta_cal.iters"])
    oc = Outcome(constants={"delta_star": d_star})
    oc.assertions["calibration_bracketed"] = d_star > 0
    oc.files.append(io.write_csv(out / "delta.csv", ("delta", "success"), recs))
    oc.summary.update(delta_star=d_star, saturated=d_star >= cfg["delta_cal.hi"])
    return oc


RUNNERS = {
    "NonnegSteer": run_nonneg_steer,
    "GlobalNull": run_global_null_scenario,
    "BlowupDemo": run_blowup_scenario,
    "ObservabilitySweep": run_observability_sweep,
    "CarlemanCheck": run_carleman_check,
    "SmoothingCheck": run_smoothing_check,
    "DeltaCalibration": run_delta_calibration,
}


def run(cfg, out):
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    return RUNNERS[cfg["scenario"]](cfg, out)
