"""Carleman weights, L1 Carleman ratios and empirical observability constants.

The weight ``eta0`` vanishes on the boundary, is positive inside and has a
single critical point, placed at the centre of ``omega0``.  With it

    alpha = (e^{2 lam |eta0|} - e^{lam eta0}) / (t (T - t)),
    xi    = e^{lam eta0} / (t (T - t)),

and the tilde versions replace ``eta0`` by ``-eta0`` in the exponentials.
Weighted integrals are evaluated with the exponent shifted by its minimum
so that ``e^{-s alpha}`` never underflows to an all-zero field; ratios of
such integrals do not depend on the shift.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources

import numpy as np
import scipy.linalg as sla

from . import kernels
from .errors import ConfigurationError, DomainError, EstimationError
from .grid import BC
from .solver import TimeGrid, check_step, node_array, solve_adjoint

CALIBRATION_FILE = "calibration.json"


@dataclass(frozen=True)
class WeightProfile:
    window: object
    eta0: np.ndarray = field(repr=False)
    deta0: np.ndarray = field(repr=False)
    eta0_max: float
    m: float
    x_star: float
    beta: float

    @property
    def grid(self):
        return self.window.grid

    @property
    def critical_index(self):
        return int(np.argmax(self.eta0))


def build_eta0(grid, window):
    """Weight ``eta0 = (x-x_a)(x_b-x) exp(beta (x - x*))`` scaled to max 1.

    ``beta`` is the unique value putting the critical point at the centre
    ``x*`` of omega0.  Unlike pure power profiles the slope is nonzero at
    both ends of the interval, so ``m > 0`` holds on the closed complement.
    """
    if window.omega0 is None:
        raise ConfigurationError("the window has no omega0")
    xa, xb = grid.x_a, grid.x_b
    l0, r0 = window.omega0
    if l0 <= xa or r0 >= xb:
        raise ConfigurationError(f"omega0 {window.omega0} touches the boundary")
    xs = 0.5 * (l0 + r0)
    beta = 1.0 / (xb - xs) - 1.0 / (xs - xa)
    x = grid.x
    scale = (xs - xa) * (xb - xs)
    ex = np.exp(beta * (x - xs))
    eta = (x - xa) * (xb - x) * ex / scale
    eta[0] = eta[-1] = 0.0
    deta = ((xb - x) - (x - xa) + beta * (x - xa) * (xb - x)) * ex / scale
    outside = np.ones(grid.n_nodes, dtype=bool)
    outside[window.omega0_nodes] = False
    m = float(np.min(deta[outside] ** 2))
    return WeightProfile(window, eta, deta, float(np.max(eta)), m, xs, beta)


def eval_weights(profile, lam, T, t, x_index=None):
    """``(alpha, xi, alpha_tilde, xi_tilde)`` at time ``t`` (all nodes or one)."""
    if not 0.0 < t < T:
        raise DomainError(f"t = {t} is outside (0, {T})")
    eta = profile.eta0 if x_index is None else profile.eta0[x_index]
    theta = t * (T - t)
    top = math.exp(2.0 * lam * profile.eta0_max)
    alpha = (top - np.exp(lam * eta)) / theta
    xi = np.exp(lam * eta) / theta
    alpha_t = (top - np.exp(-lam * eta)) / theta
    xi_t = np.exp(-lam * eta) / theta
    return alpha, xi, alpha_t, xi_t


@dataclass(frozen=True)
class CarlemanParams:
    lam: float
    s: float
    T: float
    a_norm: float = 0.0
    C_geom: float = 1.0
    bc: BC = BC.NEUMANN

    def __post_init__(self):
        if not self.lam >= 1.0:
            raise ConfigurationError(f"lambda must be >= 1, got {self.lam}")
        if not (self.T > 0 and self.s > 0 and self.a_norm >= 0 and self.C_geom > 0):
            raise ConfigurationError("T, s, C_geom must be positive and a_norm nonnegative")
        object.__setattr__(self, "bc", BC(self.bc))


def s1_threshold(params, eta0_max=1.0):
    lam, T, C = params.lam, params.T, params.C_geom
    tail = T**2 + T**2 * math.sqrt(params.a_norm)
    if params.bc is BC.NEUMANN:
        return C * math.exp(4.0 * lam * eta0_max) * (T + tail)
    return C * (math.exp(2.0 * lam * eta0_max) * T + tail)


def carleman_ratio(q, profile, params, neg_tol=1e-12):
    """LHS / RHS of the L1 Carleman inequality for a nonnegative adjoint ``q``.

    ``q`` is a :class:`~heatlab.solver.SolveResult` from the adjoint solver
    (or a raw (N+1, n) array on a uniform time grid over ``(0, T)``).  Time
    integration is the trapezoid rule on interior time nodes; the end slices
    carry zero weight.
    """
    vals = np.asarray(getattr(q, "values", q), dtype=float)
    grid, win = profile.grid, profile.window
    if vals.ndim != 2 or vals.shape[1] != grid.n_nodes:
        raise ConfigurationError(f"q has shape {vals.shape}")
    scale = max(float(np.max(np.abs(vals))), 1e-300)
    if np.min(vals) < -neg_tol * scale:
        raise DomainError(f"q is not nonnegative (min {np.min(vals):.3g})")
    if not np.any(vals > 0):
        return 0.0
    n_t = vals.shape[0] - 1
    T, lam, s = params.T, params.lam, params.s
    t = T * np.arange(1, n_t) / n_t
    theta = (t * (T - t))[:, None]
    eta = profile.eta0[None, :]
    top = 2.0 * lam * profile.eta0_max
    alpha = (np.exp(top) - np.exp(lam * eta)) / theta
    log_xi = lam * eta - np.log(theta)
    qi = np.clip(vals[1:-1], 0.0, None)
    w_om = win.weights
    w = grid.weights * grid.mask
    if params.bc is BC.NEUMANN:
        e = -s * alpha + 2.0 * log_xi
        e -= e.max()
        dens = np.exp(e) * qi
        lhs = np.sum(dens * w)
        rhs = np.sum(dens * w_om)
    else:
        e1 = -s * alpha + 2.0 * log_xi + math.log(lam * s)
        e2 = -s * alpha + log_xi
        shift = max(e1.max(), e2.max())
        d1 = np.exp(e1 - shift) * qi
        lhs = np.sum(d1 * eta * w) + np.sum(np.exp(e2 - shift) * qi * w)
        rhs = np.sum(d1 * w_om)
    if rhs <= 0.0:
        return math.inf if lhs > 0 else 0.0
    return float(lhs / rhs)


def random_nonneg_data(grid, rng, n_bumps=3):
    """Sum of Gaussian bumps with random centres, widths and heights."""
    x = grid.x
    q = np.zeros(grid.n_nodes)
    for _ in range(n_bumps):
        mu = rng.uniform(grid.x_a, grid.x_b)
        width = rng.uniform(0.02, 0.2) * grid.length
        q += rng.uniform(0.1, 1.0) * np.exp(-0.5 * ((x - mu) / width) ** 2)
    return q * grid.mask


def carleman_ensemble(grid, window, T=1.0, n_steps=400, a_values=(0.0, -10.0, -100.0),
                      s_factors=(1.0, 2.0, 4.0), n_samples=20, seed=0, lam=1.0, C_geom=1.0):
    """Ratios over a seeded ensemble of nonnegative terminal data.

    Returns a dict with the ratio array of shape (len(a), len(s), n_samples)
    and its maximum.
    """
    prof = build_eta0(grid, window)
    rng = np.random.default_rng(seed)
    data = [random_nonneg_data(grid, rng) for _ in range(n_samples)]
    tg = TimeGrid(0.0, T, n_steps)
    ratios = np.zeros((len(a_values), len(s_factors), n_samples))
    for i, a in enumerate(a_values):
        base = CarlemanParams(lam, 1.0, T, abs(a), C_geom, grid.bc)
        s1 = s1_threshold(base, prof.eta0_max)
        adj = [solve_adjoint(grid, tg, a, qT, 1.0, "monotone") for qT in data]
        for j, fac in enumerate(s_factors):
            par = CarlemanParams(lam, fac * s1, T, abs(a), C_geom, grid.bc)
            for k, q in enumerate(adj):
                ratios[i, j, k] = carleman_ratio(q, prof, par)
    return {"ratios": ratios, "max_ratio": float(ratios.max()), "m": prof.m}


CALIBRATION_SAFETY = 2.0


def calibrate_carleman(grid, window, **kwargs):
    """The designated calibration run: ensemble maximum times the safety factor."""
    ens = carleman_ensemble(grid, window, **kwargs)
    return {
        "C1_cal": CALIBRATION_SAFETY * ens["max_ratio"],
        "max_ratio": ens["max_ratio"],
        "safety_factor": CALIBRATION_SAFETY,
        "m": ens["m"],
    }


def load_calibration():
    text = resources.files("heatlab.data").joinpath(CALIBRATION_FILE).read_text()
    return json.loads(text)


# ---------------------------------------------------------------------------
# observability constants


@dataclass
class ObservabilityEstimate:
    M: float
    C_nonneg_L1: float
    C_cone_L2: float
    C_signed_L2: float
    Q_measure: float
    regularized: bool = False
    meta: dict = field(default_factory=dict)

    def orderings(self):
        """The two ordering facts, evaluated with zero tolerance."""
        return {
            "cone_le_signed": self.C_cone_L2 <= self.C_signed_L2,
            "cone_le_cs": self.C_cone_L2 <= self.Q_measure * self.C_nonneg_L1,
        }


@dataclass
class _ObsOperators:
    A: np.ndarray
    G: np.ndarray
    b: np.ndarray
    free: np.ndarray
    Q_measure: float


def observability_operators(grid, tg, window, a, theta=1.0):
    """Dense observation data in the coordinates ``u = W^{1/2} q_T``.

    ``u'Au = |q(0)|^2``, ``u'Gu = int int_omega q^2`` and
    ``b'u = int int_omega q``, restricted to the free nodes.
    """
    a = node_array(grid, tg, a, "a")
    check_step(tg, a, theta, "monotone" if theta == 1.0 else "accuracy")
    free = np.nonzero(grid.mask > 0)[0]
    n = grid.n_nodes
    basis = np.zeros((n, free.size))
    basis[free, np.arange(free.size)] = 1.0
    P0, gram, obs = kernels.adjoint_gram(grid.laplacian_bands, grid.mask, a, basis,
                                         window.weights, tg.tau, theta)
    w = grid.weights
    isq = 1.0 / np.sqrt(w[free])
    A = (P0.T * w) @ P0
    A = isq[:, None] * A * isq[None, :]
    G = isq[:, None] * gram * isq[None, :]
    A = 0.5 * (A + A.T)
    G = 0.5 * (G + G.T)
    return _ObsOperators(A, G, obs * isq, free, tg.length * window.measure)


def _signed_constant(ops):
    A, G = ops.A, ops.G
    reg = False
    try:
        vals, vecs = sla.eigh(A, G)
    except np.linalg.LinAlgError:
        shift = 1e-14 * max(np.trace(G) / G.shape[0], 1e-300)
        vals, vecs = sla.eigh(A, G + shift * np.eye(G.shape[0]))
        reg = True
    return float(vals[-1]), vecs[:, -1], reg


def _ascent(u, value, grad, proj, max_iter=400, rtol=1e-13):
    """Projected gradient ascent on the unit sphere with backtracking."""
    f = value(u)
    step = 1.0
    it = 0
    for it in range(1, max_iter + 1):
        g = grad(u)
        improved = False
        while step > 1e-14:
            v = proj(u + step * g)
            if v is None:
                step *= 0.5
                continue
            fv = value(v)
            if fv > f:
                improved = True
                break
            step *= 0.5
        if not improved:
            break
        gain = fv - f
        u, f = v, fv
        step *= 2.0
        if gain <= rtol * abs(f):
            break
    return u, f, it


def _cone_sphere(v):
    v = np.maximum(v, 0.0)
    nrm = np.linalg.norm(v)
    return None if nrm == 0.0 else v / nrm


def estimate_observability_signed(grid, tg, window, a, ops=None):
    """Largest generalized eigenvalue of ``|q(0)|^2`` against ``int int_omega q^2``.

    Returns ``(C_signed, regularized)``.
    """
    ops = ops or observability_operators(grid, tg, window, a)
    c, _, reg = _signed_constant(ops)
    return c, reg


def estimate_observability_nonneg(grid, tg, window, a, restarts=8, seed=0, ops=None):
    """Cone estimates ``(C_nonneg_L1, C_cone_L2, meta)``; both are lower bounds.

    Starts: every basis vector (the L1 quotient is convex-over-linear and
    peaks at a vertex, so basis starts cover the maximiser), the positive
    and negative parts of the top signed eigenvector, and ``restarts``
    seeded random nonnegative vectors.
    """
    ops = ops or observability_operators(grid, tg, window, a)
    A, G, b = ops.A, ops.G, ops.b
    m = b.size
    if not np.any(b > 0):
        raise EstimationError("zero observation for every nonnegative start")
    rng = np.random.default_rng(seed)
    _, top, _ = _signed_constant(ops)
    starts = [("basis", np.eye(m)[i]) for i in range(m)]
    for lab, v in (("eig+", np.maximum(top, 0)), ("eig-", np.maximum(-top, 0))):
        if np.any(v > 0):
            starts.append((lab, v / np.linalg.norm(v)))
    for k in range(restarts):
        v = rng.random(m)
        starts.append((f"rand{k}", v / np.linalg.norm(v)))

    def r1(u):
        bu = b @ u
        return -np.inf if bu <= 0 else float(u @ A @ u) / bu**2

    def g1(u):
        bu = b @ u
        au = A @ u
        return 2.0 * au / bu**2 - 2.0 * float(u @ au) * b / bu**3

    def r2(u):
        gu = float(u @ G @ u)
        return -np.inf if gu <= 0 else float(u @ A @ u) / gu

    def g2(u):
        gu = float(u @ G @ u)
        return 2.0 * (A @ u - r2(u) * (G @ u)) / gu

    best1 = (-np.inf, None, 0)
    best2 = (-np.inf, None, 0)
    iters = 0
    for lab, u0 in starts:
        if b @ u0 > 0:
            _, f1, it1 = _ascent(u0, r1, g1, _cone_sphere)
            iters += it1
            if f1 > best1[0]:
                best1 = (f1, lab, it1)
        if float(u0 @ G @ u0) > 0:
            _, f2, it2 = _ascent(u0, r2, g2, _cone_sphere)
            iters += it2
            if f2 > best2[0]:
                best2 = (f2, lab, it2)
    if not np.isfinite(best1[0]) or not np.isfinite(best2[0]):
        raise EstimationError("all starts are observation-degenerate")
    meta = {"restarts": len(starts), "iterations": iters,
            "best_start_l1": best1[1], "best_start_l2": best2[1]}
    return best1[0], best2[0], meta


def observability_vertex_max(ops):
    """Exact maximum of the L1 quotient over the cone: ``max_i A_ii / b_i^2``."""
    b = ops.b
    ok = b > 0
    return float(np.max(np.diag(ops.A)[ok] / b[ok] ** 2))


def estimate_observability(grid, tg, window, a, M=None, restarts=8, seed=0):
    """All three constants for one potential, with the orderings enforced.

    ``C_signed`` is reported as the maximum of the generalized eigenvalue
    and the cone value, both being Rayleigh quotients of the same pair:
    any cone maximiser is also admissible for the signed problem, so the
    larger of the two is the better lower-bound certificate for the signed
    supremum and the ordering then holds exactly.
    """
    ops = observability_operators(grid, tg, window, a)
    c_signed, reg = estimate_observability_signed(grid, tg, window, a, ops=ops)
    c1, c2, meta = estimate_observability_nonneg(grid, tg, window, a, restarts, seed, ops=ops)
    meta["eigenvalue"] = c_signed
    if M is None:
        M = float(np.max(np.abs(a)))
    return ObservabilityEstimate(float(M), c1, c2, max(c_signed, c2), ops.Q_measure, reg, meta)


# ---------------------------------------------------------------------------
# cost-exponent fits

BETAS = (0.5, 2.0 / 3.0)


@dataclass
class CostModel:
    beta: float | None
    fits: dict
    indeterminate: bool = False

    def to_dict(self):
        return {"beta": self.beta, "indeterminate": self.indeterminate,
                "fits": {f"{k:.6f}": v for k, v in self.fits.items()}}


def fit_cost_exponent(samples, flat_tol=1e-8):
    """Fit ``log C = c0 + c1 M^beta`` for each candidate beta.

    ``fits[beta] = {"c0", "c1", "r2"}``.  Flat data (no spread in log C)
    is flagged ``indeterminate`` and no beta is selected.
    """
    samples = sorted((float(m), float(c)) for m, c in samples)
    if len(samples) < 4:
        raise ConfigurationError("need at least 4 samples")
    M = np.array([s[0] for s in samples])
    C = np.array([s[1] for s in samples])
    if np.any(C <= 0) or not np.all(np.isfinite(C)):
        raise DomainError("costs must be positive and finite")
    y = np.log(C)
    sst = float(np.sum((y - y.mean()) ** 2))
    fits = {}
    for beta in BETAS:
        X = np.column_stack([np.ones_like(M), M**beta])
        coef, *_ = np.linalg.lstsq(X, y, rcond=None)
        sse = float(np.sum((X @ coef - y) ** 2))
        r2 = 1.0 - sse / sst if sst > 0 else 1.0
        fits[beta] = {"c0": float(coef[0]), "c1": float(coef[1]), "r2": r2}
    if sst <= flat_tol * max(1.0, float(np.sum(y**2))):
        return CostModel(None, fits, True)
    best = max(BETAS, key=lambda b: fits[b]["r2"])
    return CostModel(best, fits)
