"""Linear and semilinear parabolic solvers on a uniform grid.

The linear problem is ``y_t - y_xx + a(t, x) y = F`` discretised by the
theta scheme; the adjoint march is the exact transpose of the forward
one-step operator in the trapezoid inner product, so the duality identity

    <y(T), p_T> - <y0, p(0)> = sum_k tau <s_k, r_k>

holds to rounding error.  Controls are piecewise constant in time: row
``k`` of a control array acts on ``(t_k, t_{k+1})``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import ConfigurationError, DomainError, ShapeError, StabilityError, StepFailureError
from .grid import norm_lp

DEFAULT_BLOWUP_THRESHOLD = 1e8


@dataclass(frozen=True)
class TimeGrid:
    t0: float
    t1: float
    n_steps: int

    def __post_init__(self):
        if not self.t1 > self.t0:
            raise ConfigurationError(f"time interval ({self.t0}, {self.t1}) is empty")
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise ConfigurationError(f"n_steps must be a positive integer, got {self.n_steps}")
        object.__setattr__(self, "n_steps", int(self.n_steps))

    @property
    def tau(self):
        return (self.t1 - self.t0) / self.n_steps

    @property
    def length(self):
        return self.t1 - self.t0

    @property
    def times(self):
        return self.t0 + self.tau * np.arange(self.n_steps + 1)

    def sub(self, n_steps):
        """The grid made of the first ``n_steps`` steps."""
        return TimeGrid(self.t0, self.t0 + n_steps * self.tau, n_steps)

    def shifted(self, t0):
        return TimeGrid(t0, t0 + self.length, self.n_steps)


def time_grid(t0, t1, tau=None, n_steps=None):
    if n_steps is None:
        if tau is None or tau <= 0:
            raise ConfigurationError("need a positive tau or n_steps")
        n_steps = max(1, int(np.ceil((t1 - t0) / tau - 1e-9)))
    return TimeGrid(float(t0), float(t1), n_steps)


@dataclass
class SpaceTimeField:
    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        if self.values.shape[0] != self.times.shape[0]:
            raise ShapeError("one snapshot per time node is required")

    def at(self, k):
        return self.values[k]

    @property
    def final(self):
        return self.values[-1]


class Status(str, enum.Enum):
    COMPLETED = "completed"
    BLEW_UP = "blew_up"


@dataclass
class SolveResult:
    trajectory: SpaceTimeField
    status: Status = Status.COMPLETED
    blowup_time: float | None = None
    blowup_uncertainty: float | None = None
    blowup_norm: float | None = None
    norms: dict = field(default_factory=dict)
    steps: np.ndarray | None = None
    mode: str = "accuracy"

    @property
    def final(self):
        return self.trajectory.final

    @property
    def times(self):
        return self.trajectory.times

    @property
    def values(self):
        return self.trajectory.values


@dataclass
class LinearProblem:
    """``y_t - y_xx + a y = F + control`` on ``grid x tg``.

    ``a`` and ``F`` may be scalars, spatial profiles or full (n_steps+1, n)
    arrays at the time nodes.  ``control`` is a per-step (n_steps, n) array
    that already contains the window indicator.
    """

    grid: object
    tg: TimeGrid
    a: object
    y0: np.ndarray
    F: object = 0.0
    control: np.ndarray | None = None

    def __post_init__(self):
        self.a = node_array(self.grid, self.tg, self.a, "a")
        self.F = node_array(self.grid, self.tg, self.F, "F")
        self.y0 = self.grid.check(self.y0, "y0")
        if self.control is not None:
            self.control = step_array(self.grid, self.tg, self.control, "control")

    @property
    def a_norm(self):
        return float(np.max(np.abs(self.a)))


def node_array(grid, tg, value, name="field"):
    """Broadcast a scalar / profile / full array to (n_steps+1, n_nodes)."""
    shape = (tg.n_steps + 1, grid.n_nodes)
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0 or arr.shape == (grid.n_nodes,):
        return np.ascontiguousarray(np.broadcast_to(arr, shape))
    if arr.shape != shape:
        raise ShapeError(f"{name} has shape {arr.shape}, expected {shape}")
    return arr


def step_array(grid, tg, value, name="control"):
    shape = (tg.n_steps, grid.n_nodes)
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0 or arr.shape == (grid.n_nodes,):
        return np.ascontiguousarray(np.broadcast_to(arr, shape))
    if arr.shape != shape:
        raise ShapeError(f"{name} has shape {arr.shape}, expected {shape}")
    return arr


def monotone_step_limit(a):
    """Largest tau for which the backward-Euler matrix is an M-matrix."""
    return 1.0 / (1.0 + 2.0 * max(0.0, -float(np.min(a))))


def check_step(tg, a, theta=1.0, mode="accuracy"):
    if theta not in (1.0, 0.5):
        raise ConfigurationError(f"theta must be 1 or 1/2, got {theta}")
    a_min = float(np.min(a))
    if mode == "monotone":
        if theta != 1.0:
            raise StabilityError("monotone mode requires backward Euler (theta = 1)")
        limit = monotone_step_limit(a)
        if tg.tau > limit * (1 + 1e-12):
            raise StabilityError(f"tau = {tg.tau:.3g} exceeds the monotone limit {limit:.3g}")
    elif mode != "accuracy":
        raise ConfigurationError(f"unknown mode {mode!r}")
    if 1.0 + tg.tau * theta * a_min <= 0.0:
        raise StabilityError(f"step matrix may be singular: tau*theta*min(a) = {tg.tau * theta * a_min:.3g}")


def norm_series(grid, values):
    """Row-wise L1, L2 and Linf norms (same scaling as ``norm_lp``)."""
    a = np.abs(np.asarray(values, dtype=float))
    top = a.max(axis=1)
    safe = np.where((top > 0) & np.isfinite(top), top, 1.0)
    r = a / safe[:, None]
    w = grid.weights
    l1 = safe * (r @ w)
    l2 = safe * np.sqrt((r * r) @ w)
    bad = ~((top > 0) & np.isfinite(top))
    l1[bad] = top[bad]
    l2[bad] = top[bad]
    return {"l1": l1, "l2": l2, "linf": top}


def h1_norm(grid, u):
    """Discrete H^1 norm (trapezoid L^2 part plus forward-difference gradient)."""
    u = grid.check(u)
    du = np.diff(u) / grid.h
    return float(np.sqrt(norm_lp(grid, u, 2) ** 2 + grid.h * np.sum(du**2)))


def _step_sources(problem, theta):
    F = problem.F
    src = theta * F[1:] + (1.0 - theta) * F[:-1]
    if problem.control is not None:
        src = src + problem.control
    return src


def solve_forward(problem, theta=1.0, mode="accuracy"):
    grid, tg = problem.grid, problem.tg
    check_step(tg, problem.a, theta, mode)
    src = _step_sources(problem, theta)
    values = kernels.forward_march(grid.laplacian_bands, grid.mask, problem.a, src,
                                   problem.y0, tg.tau, theta)
    return SolveResult(SpaceTimeField(tg.times, values), norms=norm_series(grid, values), mode=mode)


def solve_adjoint(grid, tg, a, q_final, theta=1.0, mode="accuracy"):
    """Backward solve of ``-q_t - q_xx + a q = 0`` from ``q(T) = q_final``."""
    a = node_array(grid, tg, a, "a")
    q_final = grid.check(q_final, "q_T")
    check_step(tg, a, theta, mode)
    p, r = kernels.adjoint_march(grid.laplacian_bands, grid.mask, a, q_final, tg.tau, theta)
    return SolveResult(SpaceTimeField(tg.times, p), norms=norm_series(grid, p), steps=r, mode=mode)


def pair_steps(grid, tg, src, r):
    """Time-space pairing ``sum_k tau <src_k, r_k>`` used by the duality identity."""
    return float(tg.tau * np.sum(src * r * grid.weights))


def duality_residual(grid, tg, window, h, y0, a, p_final, theta=1.0):
    """``|int int_omega h p - <y(T), p_T> + <y0, p(0)>|`` for the discrete pair."""
    ind = window.indicator
    h = step_array(grid, tg, h)
    prob = LinearProblem(grid, tg, a, y0, control=h * ind)
    y = solve_forward(prob, theta)
    adj = solve_adjoint(grid, tg, prob.a, p_final, theta)
    lhs = pair_steps(grid, tg, h * ind, adj.steps)
    rhs = grid.inner(y.final, p_final) - grid.inner(prob.y0, adj.values[0])
    return abs(lhs - rhs)


def solve_semilinear(grid, tg, f, y0, h=None, blowup_threshold=DEFAULT_BLOWUP_THRESHOLD,
                     inner=False, inner_tol=1e-10, inner_max=50):
    """March ``y_t - y_xx + f(y) = h`` with blow-up detection.

    Default stepping is semi-implicit (diffusion implicit, ``f`` at the
    previous step).  With ``inner=True`` each step is iterated through the
    linearisation ``(I - tau L + tau diag g(y)) y = y^k + tau h_k`` until the
    increment is below ``inner_tol`` relative, which makes the reaction
    fully implicit.  ``h`` is a per-step array including the window.
    """
    y0 = grid.check(y0, "y0")
    if not blowup_threshold > np.max(np.abs(y0)):
        raise DomainError("blowup_threshold must exceed the initial sup norm")
    ctrl = np.zeros((tg.n_steps, grid.n_nodes)) if h is None else step_array(grid, tg, h)
    tau = tg.tau
    if inner:
        values, last = _semilinear_implicit(grid, tg, f, y0, ctrl, blowup_threshold, inner_tol, inner_max)
    else:
        values, last = kernels.semilinear_march(grid.laplacian_bands, grid.mask, f.kernel_args,
                                                y0, ctrl, tau, blowup_threshold)
    times = tg.times
    kept = values[: last + 1]
    result = SolveResult(SpaceTimeField(times[: last + 1], kept), norms=norm_series(grid, kept))
    if last < tg.n_steps:
        result.status = Status.BLEW_UP
        result.blowup_time = float(times[last] + 0.5 * tau)
        result.blowup_uncertainty = float(tau)
        result.blowup_norm = float(np.max(np.abs(kept[-1])))
    return result


def _semilinear_implicit(grid, tg, f, y0, ctrl, threshold, tol, max_iter):
    tau = tg.tau
    bands, mask = grid.laplacian_bands, grid.mask
    lo, di, up = bands
    values = np.empty((tg.n_steps + 1, grid.n_nodes))
    values[0] = y0 * mask
    for k in range(tg.n_steps):
        rhs = mask * (values[k] + tau * ctrl[k])
        y = values[k].copy()
        for it in range(max_iter):
            g = f.g(y)
            lower = -tau * lo * mask
            upper = -tau * up * mask
            diag = 1.0 + tau * (g - di) * mask
            if np.any(diag <= 0) or not np.all(np.isfinite(diag)):
                break
            nxt = kernels.tridiag_solve(lower, diag, upper, rhs)
            incr = float(np.max(np.abs(nxt - y)))
            y = nxt
            if not np.all(np.isfinite(y)) or incr <= tol * (1.0 + float(np.max(np.abs(y)))):
                break
        else:
            raise StepFailureError(f"inner loop did not converge at step {k} (increment {incr:.3g})",
                                   step=k, time=float(tg.times[k]), increment=incr)
        if not np.all(np.isfinite(y)) or float(np.max(np.abs(y))) > threshold or np.any(diag <= 0):
            return values, k
        values[k + 1] = y
    return values, tg.n_steps


@dataclass
class ComparisonReport:
    passed: bool
    worst_violation: float
    where: tuple | None
    tol: float


def check_comparison(y, z, tol=0.0):
    """Check ``y <= z + tol`` nodewise on two trajectories over the same grids."""
    yv = y.values if isinstance(y, SolveResult) else np.asarray(y)
    zv = z.values if isinstance(z, SolveResult) else np.asarray(z)
    if yv.shape != zv.shape:
        raise ShapeError(f"trajectories differ in shape: {yv.shape} vs {zv.shape}")
    gap = yv - zv
    idx = np.unravel_index(int(np.argmax(gap)), gap.shape)
    worst = float(gap[idx])
    return ComparisonReport(worst <= tol, max(worst, 0.0), tuple(int(i) for i in idx) if worst > 0 else None, tol)


def estimate_smoothing_exponent(grid, tg, y0=None, window=(1e-3, 1e-1), n_samples=9, theta=1.0):
    """Slope of log(|y(t)|_inf / |y0|_1) against log t for the free heat flow.

    The default datum is a unit-mass spike at the node nearest the middle.
    """
    t_lo, t_hi = window
    if not (t_lo > tg.t0 and t_hi <= tg.t1 + 1e-12 and t_hi >= 4 * t_lo) or n_samples < 3:
        raise DomainError("fit window must span at least a factor 4 inside the time grid, 3+ samples")
    if y0 is None:
        y0 = np.zeros(grid.n_nodes)
        mid = grid.n_nodes // 2
        y0[mid] = 1.0 / grid.weights[mid]
    y0 = grid.check(y0)
    sol = solve_forward(LinearProblem(grid, tg, 0.0, y0), theta)
    sample_t = np.geomspace(t_lo, t_hi, n_samples)
    idx = np.unique(np.clip(np.rint((sample_t - tg.t0) / tg.tau).astype(int), 1, tg.n_steps))
    if idx.size < 3:
        raise DomainError("time grid too coarse for the fit window")
    t = tg.times[idx] - tg.t0
    mass = norm_lp(grid, y0, 1)
    sup = np.array([norm_lp(grid, sol.values[k], np.inf) for k in idx])
    slope, _ = np.polyfit(np.log(t), np.log(sup / mass), 1)
    return float(slope)
