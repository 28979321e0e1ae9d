"""Hot numerical kernels with a numba path and a pure-numpy fallback.

The backend is chosen at import time from the ``HEATLAB_NO_NUMBA``
environment variable (any of ``1/true/yes`` disables numba) and can be
switched at runtime with :func:`set_backend` or the :func:`backend`
context manager.  Both paths implement the same contracts; the test
suite runs them against each other.

Tridiagonal conventions: a matrix is stored as three length-``n`` bands
``(lower, diag, upper)`` where ``lower[i] = A[i, i-1]`` (``lower[0]``
unused) and ``upper[i] = A[i, i+1]`` (``upper[n-1]`` unused).

Discrete Laplacian bands ``(lo, di, up)`` plus an interior ``mask``
(zero at Dirichlet boundary nodes) define ``K(a) = mask*(-L + diag(a))``.
One theta step is ``B_n y^{n+1} = C_n y^n + tau*mask*src_n`` with
``B_n = I + tau*theta*K(a^{n+1})`` and ``C_n = mask*(I - tau*(1-theta)*K(a^n))``.
"""

from __future__ import annotations

import contextlib
import math
import os

import numpy as np
from scipy.linalg import solve_banded
from scipy.special import roots_jacobi

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False

ODD_LOG, ABS_LOG, INTEGRAL_LOG, POWER = 0, 1, 2, 3

# Gauss-Jacobi rule for the integral-log family, see _f_scalar.
GJ_ORDER = 96
_INTEGRAL_LOG_ASYMPTOTIC = 40.0


def _env_backend():
    flag = os.environ.get("HEATLAB_NO_NUMBA", "").strip().lower()
    if flag in ("1", "true", "yes", "on") or not HAVE_NUMBA:
        return "numpy"
    return "numba"


_BACKEND = _env_backend()


def get_backend():
    return _BACKEND


def set_backend(name):
    """Select ``"numba"`` or ``"numpy"`` for all subsequent kernel calls."""
    global _BACKEND
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {name!r}")
    if name == "numba" and not HAVE_NUMBA:
        raise RuntimeError("numba is not importable in this environment")
    _BACKEND = name


@contextlib.contextmanager
def backend(name):
    previous = _BACKEND
    set_backend(name)
    try:
        yield
    finally:
        set_backend(previous)


def _jit(func):
    if HAVE_NUMBA:
        return numba.njit(cache=True)(func)
    return func


# ---------------------------------------------------------------------------
# shared scalar sources (compiled by numba, also callable as plain Python)


def _thomas_src(lower, diag, upper, rhs):
    n = diag.shape[0]
    cp = np.empty(n)
    x = rhs.copy()
    beta = diag[0]
    cp[0] = upper[0] / beta
    x[0] = x[0] / beta
    for i in range(1, n):
        beta = diag[i] - lower[i] * cp[i - 1]
        cp[i] = upper[i] / beta
        x[i] = (x[i] - lower[i] * x[i - 1]) / beta
    for i in range(n - 2, -1, -1):
        x[i] = x[i] - cp[i] * x[i + 1]
    return x


def _step_bands_src(lo, di, up, mask, a_row, coef, lower, diag, upper):
    n = di.shape[0]
    for i in range(n):
        lower[i] = -coef * lo[i] * mask[i]
        upper[i] = -coef * up[i] * mask[i]
        diag[i] = 1.0 + coef * (a_row[i] - di[i]) * mask[i]


def _apply_c_src(lo, di, up, mask, a_row, coef, y, out):
    # out = mask * (y - coef * K(a) y)
    n = y.shape[0]
    for i in range(n):
        ky = (a_row[i] - di[i]) * y[i]
        if i > 0:
            ky -= lo[i] * y[i - 1]
        if i < n - 1:
            ky -= up[i] * y[i + 1]
        out[i] = mask[i] * (y[i] - coef * ky)


_thomas_nb = _jit(_thomas_src)
_step_bands_nb = _jit(_step_bands_src)
_apply_c_nb = _jit(_apply_c_src)


def _forward_src(lo, di, up, mask, a, src, y0, tau, theta, out):
    n_steps = src.shape[0]
    n = y0.shape[0]
    lower = np.empty(n)
    diag = np.empty(n)
    upper = np.empty(n)
    rhs = np.empty(n)
    for i in range(n):
        out[0, i] = y0[i] * mask[i]
    for k in range(n_steps):
        _apply_c_nb(lo, di, up, mask, a[k], tau * (1.0 - theta), out[k], rhs)
        for i in range(n):
            rhs[i] += tau * mask[i] * src[k, i]
        _step_bands_nb(lo, di, up, mask, a[k + 1], tau * theta, lower, diag, upper)
        out[k + 1] = _thomas_nb(lower, diag, upper, rhs)


def _adjoint_src(lo, di, up, mask, a, q_final, tau, theta, p_out, r_out):
    n_steps = r_out.shape[0]
    n = q_final.shape[0]
    lower = np.empty(n)
    diag = np.empty(n)
    upper = np.empty(n)
    for i in range(n):
        p_out[n_steps, i] = q_final[i] * mask[i]
    for k in range(n_steps - 1, -1, -1):
        _step_bands_nb(lo, di, up, mask, a[k + 1], tau * theta, lower, diag, upper)
        r = _thomas_nb(lower, diag, upper, p_out[k + 1])
        r_out[k] = r
        _apply_c_nb(lo, di, up, mask, a[k], tau * (1.0 - theta), r, p_out[k])


def _adjoint_gram_src(lo, di, up, mask, a, q_final, w_omega, tau, theta):
    n_steps = a.shape[0] - 1
    n, m = q_final.shape
    lower = np.empty(n)
    diag = np.empty(n)
    upper = np.empty(n)
    cur = np.empty((n, m))
    for i in range(n):
        for j in range(m):
            cur[i, j] = q_final[i, j] * mask[i]
    gram = np.zeros((m, m))
    obs = np.zeros(m)
    rows = np.nonzero(w_omega)[0]
    wsq = np.sqrt(w_omega[rows])
    col = np.empty(n)
    for k in range(n_steps - 1, -1, -1):
        _step_bands_nb(lo, di, up, mask, a[k + 1], tau * theta, lower, diag, upper)
        r = _thomas_nb(lower, diag, upper, cur)
        sub = np.empty((rows.shape[0], m))
        for ii in range(rows.shape[0]):
            for j in range(m):
                sub[ii, j] = r[rows[ii], j] * wsq[ii]
        gram += tau * (sub.T @ sub)
        for ii in range(rows.shape[0]):
            for j in range(m):
                obs[j] += tau * w_omega[rows[ii]] * r[rows[ii], j]
        for j in range(m):
            for i in range(n):
                col[i] = r[i, j]
            _apply_c_nb(lo, di, up, mask, a[k], tau * (1.0 - theta), col.copy(), col)
            for i in range(n):
                cur[i, j] = col[i]
    return cur, gram, obs


_forward_nb = _jit(_forward_src)
_adjoint_nb = _jit(_adjoint_src)
_adjoint_gram_nb = _jit(_adjoint_gram_src)


# ---------------------------------------------------------------------------
# numpy fallbacks for the marches


def _bands_np(lo, di, up, mask, a_row, coef):
    ab = np.zeros((3, di.size))
    ab[0, 1:] = -coef * (up * mask)[:-1]
    ab[1] = 1.0 + coef * (a_row - di) * mask
    ab[2, :-1] = -coef * (lo * mask)[1:]
    return ab


def _apply_c_np(lo, di, up, mask, a_row, coef, y):
    ky = (a_row - di) * y if y.ndim == 1 else (a_row - di)[:, None] * y
    if y.ndim == 1:
        ky[1:] -= lo[1:] * y[:-1]
        ky[:-1] -= up[:-1] * y[1:]
        return mask * (y - coef * ky)
    ky[1:] -= lo[1:, None] * y[:-1]
    ky[:-1] -= up[:-1, None] * y[1:]
    return mask[:, None] * (y - coef * ky)


def _forward_np(lo, di, up, mask, a, src, y0, tau, theta, out):
    out[0] = y0 * mask
    for k in range(src.shape[0]):
        rhs = _apply_c_np(lo, di, up, mask, a[k], tau * (1.0 - theta), out[k])
        rhs += tau * mask * src[k]
        ab = _bands_np(lo, di, up, mask, a[k + 1], tau * theta)
        out[k + 1] = solve_banded((1, 1), ab, rhs, check_finite=False)


def _adjoint_np(lo, di, up, mask, a, q_final, tau, theta, p_out, r_out):
    n_steps = r_out.shape[0]
    p_out[n_steps] = q_final * mask
    for k in range(n_steps - 1, -1, -1):
        ab = _bands_np(lo, di, up, mask, a[k + 1], tau * theta)
        r = solve_banded((1, 1), ab, p_out[k + 1], check_finite=False)
        r_out[k] = r
        p_out[k] = _apply_c_np(lo, di, up, mask, a[k], tau * (1.0 - theta), r)


def _adjoint_gram_np(lo, di, up, mask, a, q_final, w_omega, tau, theta):
    cur = q_final * mask[:, None]
    m = q_final.shape[1]
    gram = np.zeros((m, m))
    obs = np.zeros(m)
    rows = np.nonzero(w_omega)[0]
    wsq = np.sqrt(w_omega[rows])[:, None]
    for k in range(a.shape[0] - 2, -1, -1):
        ab = _bands_np(lo, di, up, mask, a[k + 1], tau * theta)
        r = solve_banded((1, 1), ab, cur, check_finite=False)
        sub = r[rows] * wsq
        gram += tau * (sub.T @ sub)
        obs += tau * (w_omega[rows] @ r[rows])
        cur = _apply_c_np(lo, di, up, mask, a[k], tau * (1.0 - theta), r)
    return cur, gram, obs


# ---------------------------------------------------------------------------
# public march API


def _as_f64(x):
    return np.ascontiguousarray(x, dtype=np.float64)


def tridiag_solve(lower, diag, upper, rhs):
    lower, diag, upper, rhs = map(_as_f64, (lower, diag, upper, rhs))
    if _BACKEND == "numba":
        return _thomas_nb(lower, diag, upper, rhs)
    ab = np.zeros((3, diag.size))
    ab[0, 1:] = upper[:-1]
    ab[1] = diag
    ab[2, :-1] = lower[1:]
    return solve_banded((1, 1), ab, rhs, check_finite=False)


def forward_march(bands, mask, a, src, y0, tau, theta):
    """Run the theta scheme forward; returns the (n_steps+1, n) trajectory."""
    lo, di, up = map(_as_f64, bands)
    mask, a, src, y0 = map(_as_f64, (mask, a, src, y0))
    out = np.empty((src.shape[0] + 1, y0.size))
    impl = _forward_nb if _BACKEND == "numba" else _forward_np
    impl(lo, di, up, mask, a, src, y0, float(tau), float(theta), out)
    return out


def adjoint_march(bands, mask, a, q_final, tau, theta):
    """Exact discrete adjoint of :func:`forward_march`.

    Returns ``(p, r)``: ``p`` the adjoint state at the time nodes and
    ``r[k] = B_k^{-1} p^{k+1}`` the per-step values that pair with the
    step sources in the duality identity.
    """
    lo, di, up = map(_as_f64, bands)
    mask, a, q_final = map(_as_f64, (mask, a, q_final))
    n_steps = a.shape[0] - 1
    p = np.empty((n_steps + 1, q_final.size))
    r = np.empty((n_steps, q_final.size))
    impl = _adjoint_nb if _BACKEND == "numba" else _adjoint_np
    impl(lo, di, up, mask, a, q_final, float(tau), float(theta), p, r)
    return p, r


def adjoint_gram(bands, mask, a, q_final, w_omega, tau, theta):
    """Batched adjoint over the columns of ``q_final``.

    Returns ``(P0, gram, obs)`` with ``P0`` the adjoint states at t=0,
    ``gram = sum_k tau * R_k^T diag(w_omega) R_k`` and
    ``obs = sum_k tau * w_omega @ R_k``.
    """
    lo, di, up = map(_as_f64, bands)
    mask, a, q_final, w_omega = map(_as_f64, (mask, a, q_final, w_omega))
    impl = _adjoint_gram_nb if _BACKEND == "numba" else _adjoint_gram_np
    return impl(lo, di, up, mask, a, q_final, w_omega, float(tau), float(theta))


# ---------------------------------------------------------------------------
# nonlinearity families


def jacobi_rule(p, order=GJ_ORDER):
    x, w = roots_jacobi(order, 0.0, p)
    return np.ascontiguousarray(x), np.ascontiguousarray(w)


def _integral_log_src(p, big, gjx, gjw):
    # int_0^big log^p(1+u) du = int_0^L w^p e^w dw, L = log1p(big)
    if big == 0.0:
        return 0.0
    lg = math.log1p(big)
    if lg > _INTEGRAL_LOG_ASYMPTOTIC:
        # e^L L^p (1 - p/L + p(p-1)/L^2 - ...)
        term = 1.0
        total = 1.0
        for k in range(1, 12):
            term *= -(p - k + 1.0) / lg
            total += term
        return (1.0 + big) * lg**p * total
    half = 0.5 * lg
    acc = 0.0
    for j in range(gjx.shape[0]):
        acc += gjw[j] * math.exp(half * (1.0 + gjx[j]))
    return half ** (p + 1.0) * acc


def _f_scalar_src(code, sigma, alpha, c, gjx, gjw, s):
    a = abs(s)
    if code == 0:
        return sigma * s * math.log(c + a) ** alpha
    if code == 1:
        return sigma * a * math.log(c + a) ** alpha
    if code == 2:
        return sigma * _integral_log_nb(alpha, a, gjx, gjw)
    return sigma * s * a ** (alpha - 1.0)


_integral_log_nb = _jit(_integral_log_src)
_f_scalar_nb = _jit(_f_scalar_src)


def _integral_log_np(p, big, gjx, gjw):
    big = np.asarray(big, dtype=float)
    out = np.zeros_like(big)
    lg = np.log1p(big)
    small = (big > 0) & (lg <= _INTEGRAL_LOG_ASYMPTOTIC)
    if np.any(small):
        half = 0.5 * lg[small]
        acc = np.exp(np.outer(half, 1.0 + gjx)) @ gjw
        out[small] = half ** (p + 1.0) * acc
    large = lg > _INTEGRAL_LOG_ASYMPTOTIC
    if np.any(large):
        L = lg[large]
        term = np.ones_like(L)
        total = np.ones_like(L)
        for k in range(1, 12):
            term = term * (-(p - k + 1.0) / L)
            total += term
        out[large] = (1.0 + big[large]) * L**p * total
    return out


def f_values_numpy(code, sigma, alpha, c, gjx, gjw, s):
    s = np.asarray(s, dtype=float)
    a = np.abs(s)
    if code == ODD_LOG:
        return sigma * s * np.log(c + a) ** alpha
    if code == ABS_LOG:
        return sigma * a * np.log(c + a) ** alpha
    if code == INTEGRAL_LOG:
        return sigma * _integral_log_np(alpha, a, gjx, gjw)
    return sigma * s * a ** (alpha - 1.0)


def _semilinear_src(lo, di, up, mask, code, sigma, alpha, c, gjx, gjw,
                    y0, ctrl, tau, threshold, out):
    # semi-implicit: (I - tau L) y^{k+1} = y^k - tau f(y^k) + tau h_k
    n_steps = ctrl.shape[0]
    n = y0.shape[0]
    lower = np.empty(n)
    diag = np.empty(n)
    upper = np.empty(n)
    zero = np.zeros(n)
    _step_bands_nb(lo, di, up, mask, zero, tau, lower, diag, upper)
    rhs = np.empty(n)
    for i in range(n):
        out[0, i] = y0[i] * mask[i]
    for k in range(n_steps):
        for i in range(n):
            fy = _f_scalar_nb(code, sigma, alpha, c, gjx, gjw, out[k, i])
            rhs[i] = mask[i] * (out[k, i] - tau * fy + tau * ctrl[k, i])
        nxt = _thomas_nb(lower, diag, upper, rhs)
        peak = 0.0
        finite = True
        for i in range(n):
            v = nxt[i]
            if not math.isfinite(v):
                finite = False
            elif abs(v) > peak:
                peak = abs(v)
        if not finite or peak > threshold:
            return k
        out[k + 1] = nxt
    return n_steps


_semilinear_nb = _jit(_semilinear_src)


def _semilinear_np(lo, di, up, mask, code, sigma, alpha, c, gjx, gjw,
                   y0, ctrl, tau, threshold, out):
    ab = _bands_np(lo, di, up, mask, np.zeros_like(y0), tau)
    out[0] = y0 * mask
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(ctrl.shape[0]):
            fy = f_values_numpy(code, sigma, alpha, c, gjx, gjw, out[k])
            rhs = mask * (out[k] - tau * fy + tau * ctrl[k])
            nxt = solve_banded((1, 1), ab, rhs, check_finite=False)
            if not np.all(np.isfinite(nxt)) or np.max(np.abs(nxt)) > threshold:
                return k
            out[k + 1] = nxt
    return ctrl.shape[0]


def semilinear_march(bands, mask, family, y0, ctrl, tau, threshold):
    """Explicit-reaction march; returns (trajectory buffer, last finite index).

    ``family`` is ``(code, sigma, alpha, c, gjx, gjw)``.  The march stops at
    the first step whose state is non-finite or exceeds ``threshold``; rows
    past the returned index are left uninitialised.
    """
    lo, di, up = map(_as_f64, bands)
    mask, y0, ctrl = map(_as_f64, (mask, y0, ctrl))
    code, sigma, alpha, c, gjx, gjw = family
    out = np.empty((ctrl.shape[0] + 1, y0.size))
    args = (lo, di, up, mask, int(code), float(sigma), float(alpha), float(c),
            _as_f64(gjx), _as_f64(gjw), y0, ctrl, float(tau), float(threshold), out)
    last = _semilinear_nb(*args) if _BACKEND == "numba" else _semilinear_np(*args)
    return out, int(last)


# ---------------------------------------------------------------------------
# accelerated proximal gradient for  1/2 u'Hu + Y'u + eps*|u|  (+ cone)


def _pg_hess_src(hmat, zvec, rank_one, u):
    if rank_one:
        return np.dot(zvec, u) * zvec
    return hmat @ u


def _pg_objective_src(hmat, zvec, rank_one, yvec, eps, u):
    hu = _pg_hess(hmat, zvec, rank_one, u)
    return 0.5 * np.dot(u, hu) + np.dot(yvec, u) + eps * np.sqrt(np.dot(u, u))


def _pg_prox_src(v, thresh, cone):
    p = np.maximum(v, 0.0) if cone else v.copy()
    nrm = np.sqrt(np.dot(p, p))
    if nrm <= thresh:
        return np.zeros_like(p)
    return (1.0 - thresh / nrm) * p


def _prox_grad_src(hmat, zvec, rank_one, yvec, eps, cone, u0, step, tol, max_iter):
    x = np.maximum(u0, 0.0) if cone else u0.copy()
    jx = _pg_objective(hmat, zvec, rank_one, yvec, eps, x)
    hist = np.empty(max_iter + 1)
    hist[0] = jx
    y = x.copy()
    t = 1.0
    resid = np.inf
    stalls = 0
    it = 0
    while it < max_iter:
        g = _pg_hess(hmat, zvec, rank_one, y) + yvec
        xn = _pg_prox(y - step * g, step * eps, cone)
        d = xn - x
        # objective change from the increment itself, free of cancellation
        dj = (0.5 * np.dot(d, _pg_hess(hmat, zvec, rank_one, xn + x)) + np.dot(yvec, d)
              + eps * np.dot(d, xn + x) / max(np.sqrt(np.dot(xn, xn)) + np.sqrt(np.dot(x, x)), 1e-300))
        it += 1
        if dj <= 0.0:
            tn = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
            if np.dot(y - xn, d) > 0.0:
                # gradient restart: momentum points uphill
                tn = 1.0
                y = xn.copy()
            else:
                y = xn + ((t - 1.0) / tn) * d
            x = xn
            jx = jx + dj
            t = tn
            stalls = 0
        else:
            y = x.copy()
            t = 1.0
            stalls += 1
        hist[it] = jx
        gx = _pg_hess(hmat, zvec, rank_one, x) + yvec
        px = _pg_prox(x - step * gx, step * eps, cone)
        resid = np.sqrt(np.dot(x - px, x - px)) / step
        if resid <= tol or stalls >= 2:
            break
    return x, it, resid, hist[: it + 1]


_pg_hess = _pg_hess_src
_pg_objective = _pg_objective_src
_pg_prox = _pg_prox_src
_prox_grad_py = _prox_grad_src

if HAVE_NUMBA:
    _pg_hess = _jit(_pg_hess_src)
    _pg_objective = _jit(_pg_objective_src)
    _pg_prox = _jit(_pg_prox_src)
    _prox_grad_nb = _jit(_prox_grad_src)
    # the plain-Python twins must resolve helpers to their Python versions
    _py_globals = {**globals(), "_pg_hess": _pg_hess_src, "_pg_prox": _pg_prox_src}
    _py_globals["_pg_objective"] = type(_pg_objective_src)(_pg_objective_src.__code__, _py_globals)
    _prox_grad_py = type(_prox_grad_src)(_prox_grad_src.__code__, _py_globals)
else:  # pragma: no cover
    _prox_grad_nb = _prox_grad_src


def prox_grad(hmat, zvec, rank_one, yvec, eps, cone, u0, step, tol, max_iter):
    """Monotone FISTA with restart; returns (u, iterations, residual, history).

    A step is accepted when the objective change, computed directly from
    the increment, is nonpositive; otherwise momentum is reset.  Momentum is
    also reset when it points against the last step.  ``history`` holds the
    objective at the accepted iterate after every iteration, accumulated
    from those changes, so it is nonincreasing by construction.  The residual is the norm of
    the gradient mapping at the returned point.
    """
    args = (_as_f64(hmat), _as_f64(zvec), bool(rank_one), _as_f64(yvec), float(eps),
            bool(cone), _as_f64(u0), float(step), float(tol), int(max_iter))
    impl = _prox_grad_nb if _BACKEND == "numba" else _prox_grad_py
    u, it, resid, hist = impl(*args)
    return u, int(it), float(resid), hist
