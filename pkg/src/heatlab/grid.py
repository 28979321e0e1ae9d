"""Uniform 1D grids, control windows and the discrete operators on them.

Fields are plain float arrays of length ``n_nodes``.  Integrals use the
composite trapezoid rule, whose weights also define the inner product
``<u, v> = sum(w * u * v)`` in which the discrete Laplacian (Neumann ghost
reflection or Dirichlet) is self-adjoint.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import sparse

from .errors import ConfigurationError, DomainError, ShapeError


class BC(str, enum.Enum):
    NEUMANN = "neumann"
    DIRICHLET = "dirichlet"


@dataclass(frozen=True)
class Grid1D:
    x_a: float
    x_b: float
    n_nodes: int
    bc: BC = BC.NEUMANN

    def __post_init__(self):
        if not (np.isfinite(self.x_a) and np.isfinite(self.x_b)) or self.x_b <= self.x_a:
            raise ConfigurationError(f"degenerate interval ({self.x_a}, {self.x_b})")
        if int(self.n_nodes) != self.n_nodes or self.n_nodes < 3:
            raise ConfigurationError(f"n_nodes must be an integer >= 3, got {self.n_nodes}")
        object.__setattr__(self, "n_nodes", int(self.n_nodes))
        object.__setattr__(self, "bc", BC(self.bc))

    @property
    def length(self):
        return self.x_b - self.x_a

    @property
    def h(self):
        return (self.x_b - self.x_a) / (self.n_nodes - 1)

    @cached_property
    def x(self):
        return self.x_a + self.h * np.arange(self.n_nodes)

    @cached_property
    def weights(self):
        w = np.full(self.n_nodes, self.h)
        w[0] = w[-1] = 0.5 * self.h
        return w

    @cached_property
    def mask(self):
        """1 where the state is free, 0 at Dirichlet boundary nodes."""
        m = np.ones(self.n_nodes)
        if self.bc is BC.DIRICHLET:
            m[0] = m[-1] = 0.0
        return m

    @cached_property
    def laplacian_bands(self):
        """``(lower, diag, upper)`` of the discrete Laplacian."""
        n, inv = self.n_nodes, 1.0 / self.h**2
        lo = np.full(n, inv)
        up = np.full(n, inv)
        di = np.full(n, -2.0 * inv)
        lo[0] = 0.0
        up[-1] = 0.0
        if self.bc is BC.NEUMANN:
            # ghost reflection u_{-1} = u_1
            up[0] = 2.0 * inv
            lo[-1] = 2.0 * inv
        else:
            lo[1] = 0.0
            up[-2] = 0.0
            lo[-1] = up[0] = di[0] = di[-1] = 0.0
        return lo, di, up

    def laplacian_matrix(self):
        lo, di, up = self.laplacian_bands
        return sparse.diags([lo[1:], di, up[:-1]], [-1, 0, 1], format="csr")

    def check(self, u, name="field"):
        u = np.asarray(u, dtype=float)
        if u.shape != (self.n_nodes,):
            raise ShapeError(f"{name} has shape {u.shape}, grid expects ({self.n_nodes},)")
        return u

    def field(self, func):
        """Sample ``func`` at the nodes, zeroing Dirichlet boundary values."""
        return np.asarray(func(self.x), dtype=float) * self.mask

    def inner(self, u, v):
        return float(np.sum(self.weights * u * v))


def build_grid(x_a, x_b, n_nodes, bc=BC.NEUMANN):
    return Grid1D(float(x_a), float(x_b), n_nodes, BC(bc))


@dataclass(frozen=True)
class ControlWindow:
    """Observation/control set omega and the inner set omega0 on a grid.

    Both are closed node sets: a node belongs to ``(l, r)`` when ``l <= x <= r``.
    """

    grid: Grid1D
    omega: tuple
    omega0: tuple | None = None
    omega_nodes: np.ndarray = field(init=False, repr=False, compare=False)
    omega0_nodes: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        g = self.grid
        lo, hi = map(float, self.omega)
        tol = 1e-12 * g.length
        if not (g.x_a - tol <= lo < hi <= g.x_b + tol):
            raise ConfigurationError(f"omega {self.omega} is not a subinterval of ({g.x_a}, {g.x_b})")
        nodes = np.nonzero((g.x >= lo - tol) & (g.x <= hi + tol))[0]
        if nodes.size == 0:
            raise ConfigurationError(f"omega {self.omega} contains no grid node")
        object.__setattr__(self, "omega", (lo, hi))
        object.__setattr__(self, "omega_nodes", nodes)
        inner = np.array([], dtype=int)
        if self.omega0 is not None:
            l0, h0 = map(float, self.omega0)
            if not (lo < l0 < h0 < hi):
                raise ConfigurationError(f"omega0 {self.omega0} must be compactly inside omega {self.omega}")
            inner = np.nonzero((g.x >= l0 - tol) & (g.x <= h0 + tol))[0]
            inner = inner[(inner > 0) & (inner < g.n_nodes - 1)]
            if inner.size == 0:
                raise ConfigurationError(f"omega0 {self.omega0} contains no interior grid node")
            object.__setattr__(self, "omega0", (l0, h0))
        object.__setattr__(self, "omega0_nodes", inner)

    @cached_property
    def indicator(self):
        ind = np.zeros(self.grid.n_nodes)
        ind[self.omega_nodes] = 1.0
        return ind * self.grid.mask

    @cached_property
    def weights(self):
        """Quadrature weights restricted to omega (adjoint of the indicator)."""
        return self.grid.weights * self.indicator

    @property
    def measure(self):
        return float(self.weights.sum())


def window_indicator(grid, window):
    if window.grid != grid:
        raise ShapeError("window was built on a different grid")
    return window.indicator.copy()


def laplacian_apply(grid, u):
    u = grid.check(u)
    lo, di, up = grid.laplacian_bands
    out = di * u
    out[1:] += lo[1:] * u[:-1]
    out[:-1] += up[:-1] * u[1:]
    return out * grid.mask


def norm_lp(grid, u, p=2.0):
    u = grid.check(u)
    p = float(p)
    if not p >= 1.0:
        raise DomainError(f"p must be in [1, inf], got {p}")
    a = np.abs(u)
    top = float(np.max(a)) if a.size else 0.0
    if np.isinf(p) or top == 0.0 or not np.isfinite(top):
        return top
    # scaled so that huge states do not overflow in |u|^p
    return top * float(np.sum(grid.weights * (a / top) ** p) ** (1.0 / p))


def norm_window(window, u, p=2.0):
    """L^p norm over the nodes of omega."""
    u = window.grid.check(u)
    if np.isinf(p):
        return float(np.max(np.abs(u[window.omega_nodes])))
    return float(np.sum(window.weights * np.abs(u) ** p) ** (1.0 / p))
