"""Penalized HUM over the nonnegative cone or the full space.

With ``u = W^{1/2} q_T`` (``W`` the trapezoid weights) the functional is

    J(u) = 1/2 u'Hu + Yhat'u + eps |u|,

where ``Yhat = W^{1/2} Y_T`` comes from the free solution and ``H`` is either
the rank-one ``zhat zhat'`` (cone mode: the observation is the single
number ``int int_omega q = <z_T, q_T>``) or the observation Gramian
(classical mode).  At a minimiser, ``W^{1/2} y(T) = Hu + Yhat``; the first
order conditions then give ``|y(T)^-| <= eps`` (cone) or ``|y(T)| <= eps``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from . import kernels
from .errors import ConfigurationError, DomainError
from .grid import norm_lp
from .solver import (
    LinearProblem,
    check_step,
    node_array,
    pair_steps,
    solve_adjoint,
    solve_forward,
)

DEFAULT_SCHEDULE = (1e-1, 1e-2, 1e-3, 1e-4, 1e-5)
# relative accuracy of the discrete duality identity, used as the residual scale
RESIDUAL_REL = 1e-10


class Observation(str, enum.Enum):
    L1_WINDOW = "L1_window"
    L2_WINDOW = "L2_window"


@dataclass(frozen=True)
class HumConfig:
    eps: float
    cone: bool = True
    max_iterations: int = 20000
    tol: float = 1e-12
    schedule: tuple = ()
    power_iterations: int = 200
    polish: bool = True

    def __post_init__(self):
        if not (self.eps > 0 and math.isfinite(self.eps)):
            raise ConfigurationError(f"hum.epsilon must be positive, got {self.eps}")
        if self.max_iterations < 1 or not self.tol > 0:
            raise ConfigurationError("max_iterations and tol must be positive")
        object.__setattr__(self, "schedule", tuple(float(e) for e in self.schedule))

    @property
    def observation(self):
        return Observation.L1_WINDOW if self.cone else Observation.L2_WINDOW

    def stages(self):
        """Continuation values strictly above ``eps``, then ``eps`` itself."""
        return tuple(e for e in sorted(set(self.schedule), reverse=True) if e > self.eps) + (self.eps,)


@dataclass
class Representers:
    grid: object
    tg: object
    window: object
    a: np.ndarray = field(repr=False)
    y0: np.ndarray = field(repr=False)
    zT: np.ndarray = field(repr=False)
    YT: np.ndarray = field(repr=False)
    theta: float = 1.0
    gram: np.ndarray | None = field(default=None, repr=False)
    mode: str = "monotone"

    @property
    def sqrt_w(self):
        return np.sqrt(self.grid.weights)

    @property
    def free(self):
        return np.nonzero(self.grid.mask > 0)[0]

    def hessian_u(self):
        """``H`` in ``u`` coordinates on the free nodes."""
        sw = self.sqrt_w[self.free]
        if self.gram is None:
            z = sw * self.zT[self.free]
            return np.outer(z, z)
        return self.gram / sw[:, None] / sw[None, :]

    def to_u(self, q):
        return self.sqrt_w[self.free] * q[self.free]

    def from_u(self, u):
        q = np.zeros(self.grid.n_nodes)
        q[self.free] = u / self.sqrt_w[self.free]
        return q

    @property
    def scale(self):
        """Size of the data entering the duality identity."""
        g = self.grid
        return max(norm_lp(g, self.YT), norm_lp(g, self.y0), norm_lp(g, self.zT), 1.0)


def project_nonneg(u):
    return np.maximum(np.asarray(u, dtype=float), 0.0)


def precompute_representers(grid, tg, window, a, y0, theta=1.0, classical=False, mode="monotone"):
    """Free solution ``Y_T`` and window response ``z_T`` (and the Gramian)."""
    a = node_array(grid, tg, a, "a")
    y0 = grid.check(y0, "y0") * grid.mask
    check_step(tg, a, theta, mode)
    YT = solve_forward(LinearProblem(grid, tg, a, y0), theta, mode).final
    zprob = LinearProblem(grid, tg, a, np.zeros(grid.n_nodes), control=window.indicator)
    zT = solve_forward(zprob, theta, mode).final
    gram = None
    if classical:
        free = np.nonzero(grid.mask > 0)[0]
        basis = np.zeros((grid.n_nodes, free.size))
        basis[free, np.arange(free.size)] = 1.0
        _, gram, _ = kernels.adjoint_gram(grid.laplacian_bands, grid.mask, a, basis,
                                          window.weights, tg.tau, theta)
        gram = 0.5 * (gram + gram.T)
    return Representers(grid, tg, window, a, y0, zT, YT, theta, gram, mode)


def observation_l2(reps, q_T):
    """``int int_omega q^2`` by a direct adjoint solve."""
    adj = solve_adjoint(reps.grid, reps.tg, reps.a, q_T, reps.theta)
    return pair_steps(reps.grid, reps.tg, adj.steps * reps.window.indicator, adj.steps)


def eval_J(q_T, eps, reps, cone=True):
    g = reps.grid
    q_T = g.check(q_T, "q_T") * g.mask
    if cone:
        if np.min(q_T) < 0:
            raise DomainError("cone mode needs q_T >= 0")
        smooth = 0.5 * g.inner(reps.zT, q_T) ** 2
    else:
        smooth = 0.5 * observation_l2(reps, q_T)
    return smooth + eps * norm_lp(g, q_T) + g.inner(reps.YT, q_T)


def smooth_gradient(q_T, reps, cone=True):
    """Euclidean gradient of the smooth part of ``J`` with respect to ``q_T``."""
    g = reps.grid
    w = g.weights * g.mask
    if cone:
        return w * (g.inner(reps.zT, q_T) * reps.zT + reps.YT)
    adj = solve_adjoint(g, reps.tg, reps.a, q_T, reps.theta)
    h = adj.steps * reps.window.indicator
    yT = solve_forward(LinearProblem(g, reps.tg, reps.a, np.zeros(g.n_nodes), control=h),
                       reps.theta).final
    return w * (yT + reps.YT)


def _power_norm(H, n_iter, seed=0):
    v = np.random.default_rng(seed).random(H.shape[0]) + 0.1
    lam = 0.0
    for _ in range(n_iter):
        hv = H @ v
        nrm = np.linalg.norm(hv)
        if nrm == 0.0:
            return 0.0
        lam_new = float(v @ hv) / float(v @ v)
        v = hv / nrm
        if abs(lam_new - lam) <= 1e-12 * lam_new:
            lam = lam_new
            break
        lam = lam_new
    return lam


def _objective(H, Yh, eps, u):
    return 0.5 * float(u @ H @ u) + float(Yh @ u) + eps * float(np.linalg.norm(u))


def _mapping_residual(H, Yh, eps, cone, u, step):
    v = u - step * (H @ u + Yh)
    if cone:
        v = np.maximum(v, 0.0)
    nrm = np.linalg.norm(v)
    p = np.zeros_like(v) if nrm <= step * eps else (1.0 - step * eps / nrm) * v
    return float(np.linalg.norm(u - p)) / step


def _kkt_polish(H, Yh, eps, u, cone):
    """Solve the first-order system on the support of ``u`` exactly.

    On the support ``S`` the optimality condition reads
    ``(H_SS + mu I) u_S = -Y_S`` with ``mu = eps / |u_S|``; ``mu |u(mu)|``
    increases in ``mu``, so a bracketing root finder recovers ``mu``.
    Returns ``None`` when the support is empty or the candidate leaves the
    cone.
    """
    S = np.nonzero(u > 0)[0] if cone else np.arange(u.size)
    if S.size == 0:
        return None
    Hs, Ys = H[np.ix_(S, S)], Yh[S]
    lam, V = np.linalg.eigh(Hs)
    lam = np.maximum(lam, 0.0)
    c = V.T @ Ys
    if np.linalg.norm(c) <= eps:
        return None

    def phi(log_mu):
        mu = math.exp(log_mu)
        return mu * np.linalg.norm(c / (lam + mu)) - eps

    lo, hi = math.log(eps) - 60.0, math.log(np.linalg.norm(c)) + 60.0
    if phi(lo) > 0 or phi(hi) < 0:
        return None
    log_mu = brentq(phi, lo, hi, xtol=1e-15, rtol=1e-15, maxiter=400)
    mu = math.exp(log_mu)
    out = np.zeros_like(u)
    out[S] = -V @ (c / (lam + mu))
    if cone and np.any(out[S] < 0):
        return None
    return out


def _cone_polish(zh, Yh, eps):
    """Exact minimizer of the rank-one cone problem.

    With ``L = z.u`` the first-order conditions give ``u = t m(L)``,
    ``m(L) = max(-(L z + Y), 0)``, ``|m(L)| = eps`` and ``t = L / z.m``.
    ``|m(L)|`` is nonincreasing in ``L`` for ``z >= 0``, so ``L`` is found by
    bisection.  Returns ``None`` when the structure does not apply.
    """
    if np.any(zh < 0):
        return None

    def m(L):
        return np.maximum(-(L * zh + Yh), 0.0)

    def phi(L):
        return float(np.linalg.norm(m(L))) - eps

    if phi(0.0) <= 0.0:
        return np.zeros_like(Yh)
    hi = max(float(np.linalg.norm(Yh)) / max(float(np.linalg.norm(zh)), 1e-300), 1e-300)
    for _ in range(200):
        if phi(hi) < 0.0:
            break
        hi *= 2.0
    else:
        return None
    # bisection to adjacent floats; when |m| = eps is below rounding of
    # L z + Y, keep the last L with a nonempty negative part
    lo = 0.0
    while True:
        mid = 0.5 * (lo + hi)
        if not lo < mid < hi:
            break
        if phi(mid) > 0.0:
            lo = mid
        else:
            hi = mid
    L = hi if float(zh @ m(hi)) > 0.0 else lo
    v = m(L)
    zm = float(zh @ v)
    if not zm > 0.0:
        return None
    return (L / zm) * v


@dataclass
class HumResult:
    config: HumConfig
    q_T: np.ndarray = field(repr=False)
    J: float
    control: np.ndarray = field(repr=False)
    trajectory: object = field(repr=False)
    duality_residual: float
    neg_norm: float
    final_norm: float
    control_sup: float
    level: float | None
    iterations: list
    residual: float
    converged: bool
    histories: list = field(repr=False)
    scale: float = 1.0
    degenerate: bool = False

    @property
    def eps(self):
        return self.config.eps

    @property
    def tolerance(self):
        return 10.0 * RESIDUAL_REL * self.scale

    def eps_bound_ok(self):
        target = self.neg_norm if self.config.cone else self.final_norm
        return target <= self.eps + self.tolerance

    def record(self):
        return {
            "eps": self.eps, "schedule": list(self.config.stages()), "iterations": self.iterations,
            "J": self.J, "neg_norm": self.neg_norm, "final_norm": self.final_norm,
            "control_sup": self.control_sup, "duality_residual": self.duality_residual,
            "residual": self.residual, "converged": self.converged, "degenerate": self.degenerate,
        }


def minimize_J(config, reps, u0=None):
    """Accelerated proximal gradient with eps continuation.

    Returns ``(q_T, J, iterations per stage, residual, converged, histories)``.
    """
    H = reps.hessian_u()
    Yh = reps.to_u(reps.YT)
    zh = reps.to_u(reps.zT)
    rank_one = reps.gram is None
    if config.cone != rank_one:
        raise ConfigurationError("cone mode uses the L1 window observation, classical mode the Gramian")
    curv = float(zh @ zh) if rank_one else _power_norm(H, config.power_iterations) * 1.02
    u = np.zeros_like(Yh) if u0 is None else reps.to_u(u0)
    if curv <= 0.0:
        return reps.from_u(np.zeros_like(Yh)), 0.0, [0], 0.0, True, [np.zeros(1)]
    step = 1.0 / curv
    tol = config.tol * max(float(np.linalg.norm(Yh)), config.eps)
    its, hists = [], []
    resid, conv = math.inf, False
    for eps in config.stages():
        u, it, resid, hist = kernels.prox_grad(H, zh, rank_one, Yh, eps, config.cone, u,
                                               step, tol, config.max_iterations)
        if config.polish and resid > tol:
            cand = _cone_polish(zh, Yh, eps) if rank_one else _kkt_polish(H, Yh, eps, u, config.cone)
            if cand is not None:
                r_c = _mapping_residual(H, Yh, eps, config.cone, cand, step)
                dj = _objective(H, Yh, eps, cand) - _objective(H, Yh, eps, u)
                if r_c < resid and dj <= 1e-15 * max(1.0, abs(hist[-1])):
                    u, resid = cand, r_c
                    hist = np.append(hist, hist[-1] + min(dj, 0.0))
        its.append(it)
        hists.append(hist)
        conv = resid <= max(tol, 1e3 * np.finfo(float).eps * max(float(np.linalg.norm(Yh)), 1.0))
    J = float(hists[-1][-1])
    return reps.from_u(u), J, its, resid, conv, hists


def extract_control(q_T, reps, cone=True):
    """Per-step control array (n_steps, n) and, in cone mode, its level."""
    g, tg, ind = reps.grid, reps.tg, reps.window.indicator
    if cone:
        level = g.inner(reps.zT, q_T)
        return np.broadcast_to(level * ind, (tg.n_steps, g.n_nodes)).copy(), level
    adj = solve_adjoint(g, tg, reps.a, q_T, reps.theta)
    return adj.steps * ind, None


def solve_hum(config, reps, u0=None):
    q, J, its, resid, conv, hists = minimize_J(config, reps, u0)
    ctrl, level = extract_control(q, reps, config.cone)
    g = reps.grid
    y = solve_forward(LinearProblem(g, reps.tg, reps.a, reps.y0, control=ctrl), reps.theta, reps.mode)
    yT = y.final
    if config.cone:
        pred = reps.YT + level * reps.zT
    else:
        # y(T) = Y_T + W^{-1} Gram q on the free nodes
        pred = reps.YT.copy()
        pred[reps.free] += reps.gram @ q[reps.free] / g.weights[reps.free]
    dres = norm_lp(g, yT - pred)
    degenerate = config.cone and norm_lp(g, reps.zT) == 0.0
    return HumResult(
        config=config, q_T=q, J=J, control=ctrl, trajectory=y, duality_residual=dres,
        neg_norm=norm_lp(g, np.minimum(yT, 0.0)), final_norm=norm_lp(g, yT),
        control_sup=float(np.max(np.abs(ctrl))) if ctrl.size else 0.0, level=level,
        iterations=its, residual=resid, converged=conv, histories=hists,
        scale=reps.scale, degenerate=degenerate,
    )


def _window_response(reps, ctrl):
    """State at T from zero data under the per-step control ``ctrl``."""
    g = reps.grid
    prob = LinearProblem(g, reps.tg, reps.a, np.zeros(g.n_nodes), control=ctrl)
    return solve_forward(prob, reps.theta).final


def steer_nonnegative(grid, tg, window, a, y0, eps, config=None, theta=1.0):
    """Cone-mode HUM: one constant control level on ``(0, T) x omega``."""
    config = config or HumConfig(eps)
    if not config.cone:
        raise ConfigurationError("steer_nonnegative needs a cone-mode config")
    reps = precompute_representers(grid, tg, window, a, y0, theta)
    return solve_hum(config, reps)


def null_control(grid, tg, window, a, y0, eps, config=None, schedule=DEFAULT_SCHEDULE, theta=1.0):
    """Classical penalized HUM driving ``|y(T)|`` below ``eps``."""
    config = config or HumConfig(eps, cone=False, schedule=schedule)
    if config.cone:
        raise ConfigurationError("null_control needs a classical-mode config")
    reps = precompute_representers(grid, tg, window, a, y0, theta, classical=True)
    return solve_hum(config, reps)


def steering_cost(result, y0, grid):
    """``|h|_inf / |y0|_{L^2}``."""
    n = norm_lp(grid, y0)
    return result.control_sup / n if n > 0 else 0.0
