"""Three-phase global null control and blow-up demonstrations.

Phase 1 steers the data to a nonnegative state with a Picard iteration on
the frozen potential ``g(z_k)``: each iterate is controlled on the horizon
``T* = min(T1, |g(z_k)|_inf^{-1/2})`` by cone HUM and then coasts.  Phase 2
lets the dissipative nonlinearity act alone, certified against the ODE
envelope ``v' = -f(v)``; it lasts ``F(delta)`` whatever the data.  Phase 3
is a Picard loop around classical HUM bringing the small state to zero.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import CertificateError, ConfigurationError, HeatlabError, PicardDivergenceError
from .grid import norm_lp
from .hum import DEFAULT_SCHEDULE, HumConfig, precompute_representers, solve_hum
from .nonlinearity import ZERO, DecayCertificate, blowup_time, decay_time_for_target
from .solver import LinearProblem, Status, TimeGrid, solve_forward, solve_semilinear

log = logging.getLogger(__name__)


@dataclass
class PipelineConfig:
    grid: object
    window: object
    spec: object
    y0: np.ndarray
    T1: float = 1.0
    delta: float = 0.05
    eps: float = 1e-3
    eps_final: float = 1e-5
    schedule: tuple = DEFAULT_SCHEDULE
    picard_tol: float = 1e-10
    picard_max: int = 40
    picard_cap: float = 1e12
    horizon3: float = 1.0
    tau: float = 1e-3
    hum_max_iterations: int = 20000

    def __post_init__(self):
        self.y0 = self.grid.check(self.y0, "y0")
        for name in ("T1", "delta", "eps", "eps_final", "picard_tol", "horizon3", "tau"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and v > 0 and math.isfinite(v)):
                raise ConfigurationError(f"pipeline.{name} must be positive, got {v}")
        if self.picard_max < 1:
            raise ConfigurationError("pipeline.picard_max must be >= 1")

    def steps(self, length):
        return max(1, int(round(length / self.tau)))


@dataclass
class PicardTrace:
    increments: list = field(default_factory=list)
    horizons: list = field(default_factory=list)
    damped: bool = False

    @property
    def iterations(self):
        return len(self.increments)


@dataclass
class PhaseResult:
    name: str
    t_start: float
    t_end: float
    times: np.ndarray = field(repr=False)
    states: np.ndarray = field(repr=False)
    control: np.ndarray = field(repr=False)
    data: dict = field(default_factory=dict)

    @property
    def final(self):
        return self.states[-1]


@dataclass
class PipelineReport:
    T1: float
    T2: float
    T3: float
    phases: list
    status: str
    final_l2: float
    final_linf: float
    failure: str | None = None

    def to_dict(self):
        return {
            "T1": self.T1, "T2": self.T2, "T3": self.T3, "status": self.status,
            "final_l2": self.final_l2, "final_linf": self.final_linf, "failure": self.failure,
            "phases": {p.name: p.data for p in self.phases},
        }

    def combined(self):
        """Concatenated (times, states, per-step control) over [0, T3]."""
        times = [self.phases[0].times]
        states = [self.phases[0].states]
        ctrls = [self.phases[0].control]
        for p in self.phases[1:]:
            times.append(p.times[1:])
            states.append(p.states[1:])
            ctrls.append(p.control)
        return np.concatenate(times), np.concatenate(states), np.concatenate(ctrls)


def _potential(spec, z):
    return spec.g(z)


def _picard(spec, y0, grid, tg, make_control, tol, max_iter, cap, label):
    """Generic Picard loop ``z <- linear solve(potential g(z), control(g(z)))``.

    ``make_control(a)`` returns ``(per-step control, info)``.  Switches to
    relaxation 1/2 once the increments stop decreasing.
    """
    z = solve_forward(LinearProblem(grid, tg, 0.0, y0)).values
    trace = PicardTrace()
    relax = 1.0
    info = None
    ctrl = None
    scale = max(1.0, float(np.max(np.abs(y0))))
    for k in range(max_iter):
        a = _potential(spec, z)
        ctrl, info = make_control(a)
        z_new = solve_forward(LinearProblem(grid, tg, a, y0, control=ctrl)).values
        if relax < 1.0:
            z_new = relax * z_new + (1.0 - relax) * z
        incr = float(np.max(np.abs(z_new - z)))
        trace.increments.append(incr)
        if isinstance(info, dict) and "n_star" in info:
            trace.horizons.append(info["n_star"])
        z = z_new
        if not np.all(np.isfinite(z)) or np.max(np.abs(z)) > cap:
            raise PicardDivergenceError(f"{label}: iterates exceed {cap:g}", trace.increments)
        if incr <= tol * scale:
            # control consistent with the converged iterate
            ctrl, info = make_control(_potential(spec, z))
            return z, ctrl, info, trace
        inc = trace.increments
        if relax == 1.0 and len(inc) >= 3 and inc[-1] >= inc[-2] >= inc[-3]:
            relax = 0.5
            trace.damped = True
    raise PicardDivergenceError(f"{label}: no convergence in {max_iter} iterations "
                                f"(last increment {trace.increments[-1]:.3g})", trace.increments)


def picard_nonneg_steer(cfg, y0=None, t0=0.0):
    """Phase 1; returns a :class:`PhaseResult` with the semilinear state on [t0, t0+T1]."""
    grid, win, spec = cfg.grid, cfg.window, cfg.spec
    y0 = cfg.y0 if y0 is None else grid.check(y0)
    n = cfg.steps(cfg.T1)
    tg = TimeGrid(t0, t0 + cfg.T1, n)
    if not spec.is_zero and not spec.sign_pos:
        raise ConfigurationError("nonnegative steering needs f(s) >= 0 for s >= 0")
    zero_ctrl = np.zeros((n, grid.n_nodes))
    if np.all(y0 >= 0):
        sol = solve_semilinear(grid, tg, spec, y0, zero_ctrl, inner=True)
        _check_not_blown(sol, "phase1")
        return PhaseResult("phase1", t0, tg.t1, sol.times, sol.values, zero_ctrl,
                           {"iterations": 0, "neg_norm": norm_lp(grid, np.minimum(sol.final, 0)),
                            "shortcut": "nonnegative data"})
    hum_cfg = HumConfig(cfg.eps, cone=True, max_iterations=cfg.hum_max_iterations)
    frozen = {"n": None, "last": None}

    def control(a):
        g_norm = float(np.max(np.abs(a)))
        t_star = cfg.T1 if g_norm == 0 else min(cfg.T1, g_norm ** -0.5)
        n_star = max(1, min(n, int(math.floor(t_star / tg.tau + 1e-9))))
        # freeze the horizon once it starts flipping between two values
        if frozen["n"] is not None:
            n_star = frozen["n"]
        elif frozen["last"] is not None and frozen["last"] != n_star and frozen.get("prev") == n_star:
            frozen["n"] = n_star
        frozen["prev"], frozen["last"] = frozen["last"], n_star
        sub = tg.sub(n_star)
        reps = precompute_representers(grid, sub, win, a[: n_star + 1], y0)
        res = solve_hum(hum_cfg, reps)
        ctrl = np.zeros((n, grid.n_nodes))
        ctrl[:n_star] = res.control
        return ctrl, {"n_star": n_star, "hum": res}

    if spec.is_zero:
        ctrl, info = control(np.zeros((n + 1, grid.n_nodes)))
        trace = PicardTrace([0.0], [info["n_star"]])
    else:
        _, ctrl, info, trace = _picard(spec, y0, grid, tg, control, cfg.picard_tol,
                                       cfg.picard_max, cfg.picard_cap, "phase1")
    sol = solve_semilinear(grid, tg, spec, y0, ctrl, inner=True)
    _check_not_blown(sol, "phase1")
    n_star = info["n_star"]
    res = info["hum"]
    neg_star = norm_lp(grid, np.minimum(sol.values[n_star], 0.0))
    neg_end = norm_lp(grid, np.minimum(sol.final, 0.0))
    data = {
        "iterations": trace.iterations, "increments": trace.increments, "damped": trace.damped,
        "T_star": float(tg.times[n_star] - t0), "level": res.level, "eps": cfg.eps,
        "neg_norm_T_star": neg_star, "neg_norm": neg_end, "hum": res.record(),
        "tolerance": res.tolerance,
    }
    return PhaseResult("phase1", t0, tg.t1, sol.times, sol.values, ctrl, data)


def _check_not_blown(sol, tag):
    if sol.status is Status.BLEW_UP:
        raise CertificateError(f"{tag}: semilinear re-solve blew up at t = {sol.blowup_time:.6g}")


def certify_decay(state, cfg, t1, cert=None, tol=1e-6):
    """Phase 2: free dissipation on [t1, t1 + F(delta)] checked against the ODE envelope."""
    grid, spec = cfg.grid, cfg.spec
    if spec.is_zero:
        raise ConfigurationError("phase 2 needs a dissipative nonlinearity")
    cert = cert or DecayCertificate(spec)
    clip = norm_lp(grid, np.minimum(state, 0.0))
    y1 = np.maximum(state, 0.0)
    length = decay_time_for_target(spec, cfg.delta)
    t2 = t1 + length
    n = cfg.steps(length)
    tg = TimeGrid(t1, t2, n)
    sol = solve_semilinear(grid, tg, spec, y1, inner=True)
    _check_not_blown(sol, "phase2")
    v1 = float(np.max(y1)) + 1.0
    v = cert.envelope(tg.times, t1, v1)
    above = sol.values - v[:, None]
    below = -sol.values
    k, i = np.unravel_index(int(np.argmax(above)), above.shape)
    worst_above = float(above[k, i])
    worst_below = float(np.max(below))
    final_max = float(np.max(sol.final))
    data = {
        "T2": t2, "decay_time": length, "v1": v1, "clip_norm": clip,
        "envelope_violation": max(worst_above, 0.0), "negativity": max(worst_below, 0.0),
        "worst_point": [float(tg.times[k]), float(grid.x[i])], "final_max": final_max,
        "delta": cfg.delta, "interp_error": cert.interp_error, "tolerance": tol,
        "envelope_end": float(v[-1]),
    }
    if worst_above > tol or worst_below > tol:
        raise CertificateError(f"phase2: envelope violated by {max(worst_above, worst_below):.3g}", data)
    zero = np.zeros((n, grid.n_nodes))
    return PhaseResult("phase2", t1, t2, sol.times, sol.values, zero, data)


def local_null_control(state, cfg, t2):
    """Phase 3: Picard linearisation around classical HUM on [t2, t2 + horizon3]."""
    grid, win, spec = cfg.grid, cfg.window, cfg.spec
    state = grid.check(state)
    n = cfg.steps(cfg.horizon3)
    tg = TimeGrid(t2, t2 + cfg.horizon3, n)
    zero = np.zeros((n, grid.n_nodes))
    if not np.any(state):
        vals = np.zeros((n + 1, grid.n_nodes))
        return PhaseResult("phase3", t2, tg.t1, tg.times, vals, zero,
                           {"iterations": 0, "final_l2": 0.0, "final_linf": 0.0, "shortcut": "zero state"})
    hum_cfg = HumConfig(cfg.eps_final, cone=False, schedule=cfg.schedule,
                        max_iterations=cfg.hum_max_iterations)
    memo = {}

    def control(a):
        reps = precompute_representers(grid, tg, win, a, state, classical=True, mode="accuracy")
        res = solve_hum(hum_cfg, reps, u0=memo.get("q"))
        memo["q"] = res.q_T
        return res.control, {"hum": res}

    if spec.is_zero:
        ctrl, info = control(np.zeros((n + 1, grid.n_nodes)))
        trace = PicardTrace([0.0])
    else:
        _, ctrl, info, trace = _picard(spec, state, grid, tg, control, cfg.picard_tol,
                                       cfg.picard_max, cfg.picard_cap, "phase3")
    sol = solve_semilinear(grid, tg, spec, state, ctrl, inner=True)
    _check_not_blown(sol, "phase3")
    res = info["hum"]
    data = {
        "iterations": trace.iterations, "increments": trace.increments, "damped": trace.damped,
        "final_l2": norm_lp(grid, sol.final), "final_linf": norm_lp(grid, sol.final, np.inf),
        "eps_final": cfg.eps_final, "hum": res.record(), "initial_linf": float(np.max(np.abs(state))),
    }
    return PhaseResult("phase3", t2, tg.t1, sol.times, sol.values, ctrl, data)


def run_global_null(cfg, tol_factor=2.0):
    """Chain the three phases; ``T2 - T1`` and ``T3 - T2`` depend only on (f, delta, horizon)."""
    grid = cfg.grid
    phases = []
    T1 = cfg.T1
    T2 = T1 + (decay_time_for_target(cfg.spec, cfg.delta) if not cfg.spec.is_zero else 0.0)
    T3 = T2 + cfg.horizon3
    try:
        if cfg.spec.is_zero:
            p3 = local_null_control(cfg.y0, cfg, 0.0)
            phases.append(p3)
            T1 = T2 = 0.0
            T3 = cfg.horizon3
        else:
            p1 = picard_nonneg_steer(cfg)
            phases.append(p1)
            p2 = certify_decay(p1.final, cfg, p1.t_end)
            phases.append(p2)
            p3 = local_null_control(p2.final, cfg, p2.t_end)
            phases.append(p3)
    except HeatlabError as exc:
        tag = phases[-1].name if phases else "start"
        log.warning("pipeline failed after %s: %s", tag, exc)
        last = phases[-1].final if phases else cfg.y0
        return PipelineReport(T1, T2, T3, phases, "failed", norm_lp(grid, last), norm_lp(grid, last, np.inf),
                              f"after {tag}: {exc}")
    final = phases[-1].final
    l2 = norm_lp(grid, final)
    ok = l2 <= tol_factor * cfg.eps_final
    return PipelineReport(T1, T2, T3, phases, "success" if ok else "failed", l2,
                          norm_lp(grid, final, np.inf), None if ok else "final bound not met")


def calibrate_delta(cfg, profile=None, lo=1e-3, hi=10.0, iters=12):
    """Bisection for the largest radius whose phase-3 problem succeeds.

    The test state is ``delta * profile`` (default: a cosine mode plus a
    constant, scaled to unit sup norm).  Returns ``(delta_star, records)``;
    ``delta_star = hi`` means no failure was found below ``hi``.
    """
    grid = cfg.grid
    if profile is None:
        profile = 0.5 + 0.5 * np.cos(2 * np.pi * (grid.x - grid.x_a) / grid.length)
        profile = profile / np.max(np.abs(profile))
    records = []

    def ok(d):
        try:
            p3 = local_null_control(d * profile, cfg, 0.0)
            good = p3.data["final_l2"] <= 2.0 * cfg.eps_final
        except HeatlabError:
            good = False
        records.append((float(d), bool(good)))
        return good

    if ok(hi):
        return hi, records
    if not ok(lo):
        return 0.0, records
    a, b = math.log(lo), math.log(hi)
    for _ in range(iters):
        mid = 0.5 * (a + b)
        if ok(math.exp(mid)):
            a = mid
        else:
            b = mid
    return math.exp(a), records


# ---------------------------------------------------------------------------
# blow-up


@dataclass
class BlowupReport:
    blew_up: bool
    t_star: float | None
    uncertainty: float | None
    oracle: float | None
    rel_error: float | None
    horizon: float
    profile_growth: float
    controlled: dict | None = None

    def to_dict(self):
        return dict(self.__dict__)


def run_blowup_demo(grid, spec, y0, horizon, tau=1e-5, threshold=1e250, window=None,
                    control_cfg=None):
    """Free solve until blow-up; optional companion run with nonpositive steering.

    ``spec`` is the focusing nonlinearity in the equation's sign convention
    (``f(s) < 0`` for ``s > 0``).  The oracle ``int_{y0}^inf ds / (-f(s))``
    applies to spatially constant data.  ``control_cfg`` (a dict with keys
    of :class:`PipelineConfig`) enables the companion run: phase-1 steering
    of ``-y`` with the reflected nonlinearity, then a free coast to the
    horizon.
    """
    y0 = grid.check(y0)
    n = max(1, int(round(horizon / tau)))
    tg = TimeGrid(0.0, horizon, n)
    sol = solve_semilinear(grid, tg, spec, y0, blowup_threshold=threshold)
    oracle = None
    const = bool(np.ptp(y0 * grid.mask) == 0.0 and grid.bc.value == "neumann")
    if const and y0[0] > 0 and spec.negated().sign_pos:
        oracle = blowup_time(spec.negated(), float(y0[0]))
    blew = sol.status is Status.BLEW_UP
    rel = None
    if blew and oracle is not None and math.isfinite(oracle):
        rel = abs(sol.blowup_time - oracle) / oracle
    growth = float(sol.norms["linf"][-1] / max(np.max(np.abs(y0)), 1e-300))
    rep = BlowupReport(blew, sol.blowup_time, sol.blowup_uncertainty, oracle, rel, horizon, growth)
    if control_cfg is not None:
        rep.controlled = _controlled_companion(grid, spec, y0, horizon, window, control_cfg)
    return rep


def _controlled_companion(grid, spec, y0, horizon, window, control_cfg):
    refl = spec.reflected()
    opts = dict(control_cfg)
    cfg = PipelineConfig(grid, window, refl, -y0, T1=opts.pop("T1", min(1.0, horizon)), **opts)
    p1 = picard_nonneg_steer(cfg)
    # back to y = -w; the control changes sign with the state
    n_total = cfg.steps(horizon)
    tg = TimeGrid(0.0, horizon, n_total)
    ctrl = np.zeros((n_total, grid.n_nodes))
    m = min(p1.control.shape[0], n_total)
    ctrl[:m] = -p1.control[:m]
    sol = solve_semilinear(grid, tg, spec, y0, ctrl, inner=True, blowup_threshold=1e250)
    return {
        "completed": sol.status is Status.COMPLETED,
        "t_end": float(sol.times[-1]), "max_linf": float(np.max(sol.norms["linf"])),
        "final_pos_norm": norm_lp(grid, np.maximum(sol.final, 0.0)),
        "picard_iterations": p1.data["iterations"], "T_star": p1.data["T_star"],
        "level": p1.data["level"],
    }


__all__ = [
    "PipelineConfig", "PipelineReport", "PhaseResult", "BlowupReport", "picard_nonneg_steer",
    "certify_decay", "local_null_control", "run_global_null", "calibrate_delta", "run_blowup_demo",
    "ZERO",
]
