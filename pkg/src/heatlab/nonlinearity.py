"""Logarithmic nonlinearities, the quotient g = f(s)/s and the decay integral.

Sign convention: the state equation is ``y_t - y_xx + f(y) = h 1_omega``, so
``f >= 0`` on the positive axis is dissipative there and ``f <= 0`` is
focusing.  The decay integral ``F(s) = int_s^inf dsigma / f(sigma)`` is
computed in the variable ``x = log(sigma)`` where the integrand becomes
``1 / g(e^x)``; this keeps very small and very large arguments in range.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import integrate, optimize
from scipy.interpolate import PchipInterpolator

from . import kernels
from .errors import ConfigurationError, DomainError

_LOG_MIN = -700.0
_V_CUT = 700.0
_QUAD = dict(epsabs=1e-13, epsrel=1e-12, limit=400)


class Family(str, enum.Enum):
    ODD_LOG = "odd_log"            # sigma * s * log^alpha(c + |s|)
    ABS_LOG = "abs_log"            # sigma * |s| * log^alpha(c + |s|)
    INTEGRAL_LOG = "integral_log"  # sigma * int_0^|s| log^alpha(1 + u) du
    POWER = "power"                # sigma * s * |s|^(alpha - 1); test fixture


_CODES = {
    Family.ODD_LOG: kernels.ODD_LOG,
    Family.ABS_LOG: kernels.ABS_LOG,
    Family.INTEGRAL_LOG: kernels.INTEGRAL_LOG,
    Family.POWER: kernels.POWER,
}


@dataclass(frozen=True)
class NonlinearitySpec:
    family: Family = Family.ODD_LOG
    sigma: int = 1
    alpha: float = 1.8
    c: float = 2.0

    def __post_init__(self):
        object.__setattr__(self, "family", Family(self.family))
        if self.sigma not in (1, -1):
            raise ConfigurationError(f"sigma must be +1 or -1, got {self.sigma}")
        if not self.alpha > 0:
            raise ConfigurationError(f"exponent must be positive, got {self.alpha}")
        if self.family in (Family.ODD_LOG, Family.ABS_LOG) and not self.c >= 1.0:
            raise ConfigurationError(f"shift c must be >= 1, got {self.c}")

    @classmethod
    def zero(cls):
        return ZERO

    @property
    def is_zero(self):
        return False

    # -- evaluation ---------------------------------------------------------

    @cached_property
    def _jacobi(self):
        if self.family is Family.INTEGRAL_LOG:
            return kernels.jacobi_rule(self.alpha)
        return np.zeros(1), np.zeros(1)

    @property
    def kernel_args(self):
        x, w = self._jacobi
        return (_CODES[self.family], float(self.sigma), float(self.alpha), float(self.c), x, w)

    def f(self, s):
        out = kernels.f_values_numpy(*self.kernel_args, s)
        return float(out) if np.ndim(s) == 0 else out

    def g(self, s):
        """``f(s)/s`` continued at 0 (right limit for the abs-log family)."""
        s = np.asarray(s, dtype=float)
        a = np.abs(s)
        fam = self.family
        if fam is Family.ODD_LOG:
            out = self.sigma * np.log(self.c + a) ** self.alpha
        elif fam is Family.ABS_LOG:
            sgn = np.where(s < 0, -1.0, 1.0)
            out = self.sigma * sgn * np.log(self.c + a) ** self.alpha
        elif fam is Family.POWER:
            out = self.sigma * a ** (self.alpha - 1.0) if self.alpha != 1 else np.full_like(s, float(self.sigma))
        else:
            with np.errstate(invalid="ignore", divide="ignore"):
                out = np.where(s != 0, kernels.f_values_numpy(*self.kernel_args, s) / np.where(s != 0, s, 1.0), 0.0)
        return float(out) if out.ndim == 0 else out

    def g_log(self, x):
        """``g(e^x)`` evaluated without forming ``e^x`` where it would overflow."""
        x = np.asarray(x, dtype=float)
        fam = self.family
        if fam in (Family.ODD_LOG, Family.ABS_LOG):
            with np.errstate(over="ignore"):
                out = self.sigma * np.logaddexp(math.log(self.c), x) ** self.alpha
        elif fam is Family.POWER:
            with np.errstate(over="ignore"):
                out = self.sigma * np.exp((self.alpha - 1.0) * x)
        else:
            big = x > 40.0
            out = np.empty_like(x)
            if np.any(~big):
                s = np.exp(x[~big])
                out[~big] = kernels.f_values_numpy(*self.kernel_args, s) / s
            if np.any(big):
                L = np.logaddexp(0.0, x[big])
                term = np.ones_like(L)
                total = np.ones_like(L)
                for k in range(1, 12):
                    term = term * (-(self.alpha - k + 1.0) / L)
                    total += term
                with np.errstate(over="ignore"):
                    out[big] = self.sigma * L**self.alpha * total
        return float(out) if out.ndim == 0 else out

    @property
    def g_at_zero(self):
        return self.g(0.0)

    # -- analytic flags -----------------------------------------------------

    @property
    def sign_pos(self):
        """f(s) >= 0 for every s >= 0."""
        return self.sigma > 0

    @property
    def sign_neg(self):
        """f(s) <= 0 for every s <= 0."""
        if self.family in (Family.ODD_LOG, Family.POWER):
            return self.sigma > 0
        return self.sigma < 0

    @property
    def integrable_tail(self):
        """1/f is integrable on [1, inf)."""
        return self.sigma > 0 and self.alpha > 1.0

    @property
    def differentiable_at_zero(self):
        return self.family is not Family.ABS_LOG

    # -- transformations ----------------------------------------------------

    def negated(self):
        """The spec of ``-f``."""
        return NonlinearitySpec(self.family, -self.sigma, self.alpha, self.c)

    def reflected(self):
        """The spec of ``s -> -f(-s)`` (dynamics of ``-y``)."""
        if self.family in (Family.ODD_LOG, Family.POWER):
            return self
        return self.negated()

    def to_dict(self):
        return {"family": self.family.value, "sigma": self.sigma, "alpha": self.alpha, "c": self.c}

    @classmethod
    def from_dict(cls, d):
        if d.get("family") == "zero":
            return ZERO
        return cls(Family(d["family"]), int(d.get("sigma", 1)), float(d["alpha"]), float(d.get("c", 2.0)))


class _ZeroSpec(NonlinearitySpec):
    """f identically zero (linear problem)."""

    def __init__(self):
        super().__init__(Family.POWER, 1, 1.0, 2.0)

    @property
    def is_zero(self):
        return True

    @property
    def kernel_args(self):
        return (kernels.POWER, 0.0, 1.0, 2.0, np.zeros(1), np.zeros(1))

    def f(self, s):
        return 0.0 * np.asarray(s, dtype=float) if np.ndim(s) else 0.0

    def g(self, s):
        return 0.0 * np.asarray(s, dtype=float) if np.ndim(s) else 0.0

    def g_log(self, x):
        return self.g(x)

    @property
    def sign_pos(self):
        return True

    @property
    def sign_neg(self):
        return True

    @property
    def integrable_tail(self):
        return False

    def negated(self):
        return self

    def reflected(self):
        return self

    def to_dict(self):
        return {"family": "zero"}


ZERO = _ZeroSpec()


def eval_f(spec, s):
    return spec.f(s)


def eval_g(spec, s):
    return spec.g(s)


# ---------------------------------------------------------------------------
# decay integral


def _require_decay(spec):
    if not (spec.sign_pos and spec.integrable_tail):
        raise DomainError(f"{spec.to_dict()} has no finite decay integral (needs f > 0 and 1/f integrable at infinity)")


def log_big_f(spec, x):
    """``F(e^x)``; accepts arguments whose exponential would overflow."""
    _require_decay(spec)
    x = float(x)
    if spec.family is Family.POWER:
        return math.exp((1.0 - spec.alpha) * x) / (spec.alpha - 1.0)

    def inv_g(t):
        return 1.0 / spec.g_log(t)

    head = 0.0
    x1 = max(x, 0.0)
    if x < 0.0:
        head = integrate.quad(inv_g, x, 0.0, **_QUAD)[0]
    # tail in v with t = x1 + e^v - 1: algebraic decay becomes exponential
    tail = integrate.quad(lambda v: inv_g(x1 + math.expm1(v)) * math.exp(v), 0.0, _V_CUT, **_QUAD)[0]
    if spec.family is not Family.POWER:
        # beyond the cut g(e^t) = t^alpha (1 + O(1/t)) with t ~ e^v
        tail += math.exp((1.0 - spec.alpha) * _V_CUT) / (spec.alpha - 1.0)
    return head + tail


def big_f(spec, s):
    """``F(s) = int_s^inf dsigma / f(sigma)`` for ``s > 0``."""
    if not s > 0:
        raise DomainError(f"F is defined for s > 0, got {s}")
    return log_big_f(spec, math.log(s))


def log_big_f_inverse(spec, u, xtol=1e-12):
    """The ``x`` with ``F(e^x) = u``."""
    _require_decay(spec)
    if not u > 0:
        raise DomainError(f"F^-1 is defined for u > 0, got {u}")

    def resid(x):
        return log_big_f(spec, x) - u

    lo, hi = -1.0, 1.0
    while resid(lo) < 0:
        if lo <= _LOG_MIN:
            raise DomainError(f"F^-1({u}) is below the float range")
        lo = max(2.0 * lo, _LOG_MIN)
    while resid(hi) > 0:
        hi *= 2.0
        if hi > 1e12:
            raise DomainError(f"F^-1({u}) is beyond any representable log-argument")
    return optimize.brentq(resid, lo, hi, xtol=xtol, rtol=4 * np.finfo(float).eps, maxiter=500)


def big_f_inverse(spec, u):
    x = log_big_f_inverse(spec, u)
    if x > 709.0:
        raise DomainError(f"F^-1({u}) = exp({x:.6g}) overflows; use log_big_f_inverse")
    return math.exp(x)


def decay_time_for_target(spec, delta):
    """Elapsed time after which the ODE envelope is below ``delta`` from any start."""
    if not delta > 0:
        raise DomainError(f"delta must be positive, got {delta}")
    return big_f(spec, delta)


def blowup_time(spec, v0):
    """Escape time of ``v' = f(v)``, ``v(0) = v0 > 0``; ``inf`` if 1/f is not integrable."""
    if not v0 > 0:
        raise DomainError(f"v0 must be positive, got {v0}")
    if not spec.sign_pos:
        raise DomainError("blow-up integral needs f > 0 on [v0, inf)")
    if not spec.integrable_tail:
        return math.inf
    return big_f(spec, v0)


@dataclass
class DecayCertificate:
    """Tabulated ``F`` and ``F^-1`` with monotone interpolation in log-log form.

    The table covers ``s`` in ``[s_min, s_max]``; queries outside fall back
    to direct quadrature.  ``interp_error`` is the largest relative error
    seen at the table midpoints.
    """

    spec: NonlinearitySpec
    s_min: float = 1e-8
    s_max: float = 1e12
    n_points: int = 241

    def __post_init__(self):
        _require_decay(self.spec)
        self._x = np.linspace(math.log(self.s_min), math.log(self.s_max), self.n_points)
        self._logF = np.log([log_big_f(self.spec, x) for x in self._x])
        self._fwd = PchipInterpolator(self._x, self._logF)
        self._inv = PchipInterpolator(self._logF[::-1], self._x[::-1])
        mid = 0.5 * (self._x[1:] + self._x[:-1])
        direct = np.array([log_big_f(self.spec, x) for x in mid[::8]])
        self.interp_error = float(np.max(np.abs(np.exp(self._fwd(mid[::8])) / direct - 1.0)))

    def F(self, s):
        x = math.log(s)
        if self._x[0] <= x <= self._x[-1]:
            return float(np.exp(self._fwd(x)))
        return log_big_f(self.spec, x)

    def F_inv(self, u):
        lu = math.log(u)
        if self._logF[-1] <= lu <= self._logF[0]:
            return float(np.exp(self._inv(lu)))
        return math.exp(log_big_f_inverse(self.spec, u))

    def envelope(self, t, t1, v1):
        """ODE solution ``v(t) = F^-1(t - t1 + F(v1))`` of ``v' = -f(v)``, ``v(t1) = v1``."""
        f1 = self.F(v1)
        return np.array([self.F_inv(ti - t1 + f1) for ti in np.atleast_1d(t)])

    def bound(self, t, t1):
        """Data-independent bound ``F^-1(t - t1)`` for ``t > t1``."""
        return np.array([self.F_inv(ti - t1) for ti in np.atleast_1d(t)])


def growth_bound_constant(spec, eps=0.5, s_max=1e12, n=4001):
    """Smallest C with ``|g(s)|^(1/2) <= eps log(2+|s|) + C`` on a log grid.

    Returns ``(C, argmax, interior)``; ``interior`` tells whether the worst
    point is strictly inside the sampled range.
    """
    x = np.linspace(-30.0, math.log(s_max), n)
    resid = np.sqrt(np.abs(spec.g_log(x))) - eps * np.logaddexp(math.log(2.0), x)
    s0 = math.sqrt(abs(spec.g(0.0))) - eps * math.log(2.0)
    k = int(np.argmax(resid))
    c = max(float(resid[k]), s0)
    return c, float(np.exp(x[k])), 0 < k < n - 1


# ---------------------------------------------------------------------------
# ODE oracles


def ode_decay(spec, v_start, t_eval):
    """Integrate ``v' = -f(v)`` from ``v(t_eval[0]) = v_start`` (RK45, tight tolerances)."""
    t_eval = np.asarray(t_eval, dtype=float)
    sol = integrate.solve_ivp(lambda t, v: -spec.f(v), (t_eval[0], t_eval[-1]), [v_start],
                              t_eval=t_eval, rtol=1e-11, atol=1e-14, method="DOP853")
    return sol.y[0]


def ode_escape_time(spec, v0, threshold=1e250, t_max=1e3):
    """First time ``v' = -f(v)`` from ``v0`` leaves ``|v| < threshold`` (event detection).

    Integrates in ``u = log v`` so the escape is resolved far past float
    overflow of ``v`` itself.
    """
    # u' = -f(e^u)/e^u = -g(e^u)
    log_thr = math.log(threshold)

    def rhs(t, u):
        return [-spec.g_log(u[0])]

    def hit(t, u):
        return u[0] - log_thr

    hit.terminal = True
    sol = integrate.solve_ivp(rhs, (0.0, t_max), [math.log(v0)], events=hit, rtol=1e-12, atol=1e-12,
                              method="DOP853")
    if sol.t_events[0].size:
        return float(sol.t_events[0][0])
    return math.inf
