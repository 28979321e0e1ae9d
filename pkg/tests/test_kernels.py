"""The numba and numpy backends implement the same contracts."""

import os
import subprocess
import sys

import numpy as np
import pytest

from heatlab import kernels
from heatlab.grid import ControlWindow, build_grid
from heatlab.nonlinearity import NonlinearitySpec

pytestmark = pytest.mark.skipif(not kernels.HAVE_NUMBA, reason="numba not importable")


def _both(fn):
    out = {}
    for be in ("numba", "numpy"):
        with kernels.backend(be):
            out[be] = fn()
    return out["numba"], out["numpy"]


@pytest.fixture(params=["neumann", "dirichlet"])
def setup(request, rng):
    g = build_grid(0, 1, 33, request.param)
    w = ControlWindow(g, (0.25, 0.6))
    steps = 40
    return g, w, rng.uniform(-1, 3, (steps + 1, 33)), rng.standard_normal((steps, 33)), rng.standard_normal(33)


def test_tridiag(rng):
    n = 50
    lo, up = rng.uniform(-1, 0, n), rng.uniform(-1, 0, n)
    di = 3.0 + rng.random(n)
    rhs = rng.standard_normal(n)
    a, b = _both(lambda: kernels.tridiag_solve(lo, di, up, rhs))
    np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-14)
    A = np.diag(di) + np.diag(lo[1:], -1) + np.diag(up[:-1], 1)
    np.testing.assert_allclose(A @ a, rhs, atol=1e-12)


@pytest.mark.parametrize("theta", [1.0, 0.5])
def test_forward_adjoint(setup, theta):
    g, w, a, src, y0 = setup
    y0 = y0 * g.mask
    tau = 1.0 / src.shape[0]
    f1, f2 = _both(lambda: kernels.forward_march(g.laplacian_bands, g.mask, a, src, y0, tau, theta))
    np.testing.assert_allclose(f1, f2, rtol=1e-12, atol=1e-12)
    (p1, r1), (p2, r2) = _both(lambda: kernels.adjoint_march(g.laplacian_bands, g.mask, a, y0, tau, theta))
    np.testing.assert_allclose(p1, p2, rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(r1, r2, rtol=1e-12, atol=1e-12)


def test_adjoint_gram_matches_columns(setup):
    g, w, a, _, _ = setup
    tau = 1.0 / (a.shape[0] - 1)
    basis = np.eye(g.n_nodes)[:, ::4]
    (P1, G1, o1), (P2, G2, o2) = _both(
        lambda: kernels.adjoint_gram(g.laplacian_bands, g.mask, a, basis, w.weights, tau, 1.0))
    for x, y in ((P1, P2), (G1, G2), (o1, o2)):
        np.testing.assert_allclose(x, y, rtol=1e-11, atol=1e-13)
    # column-by-column adjoint solves give the same Gramian
    R = [kernels.adjoint_march(g.laplacian_bands, g.mask, a, basis[:, j], tau, 1.0)[1] for j in range(basis.shape[1])]
    G = np.array([[tau * np.sum(ri * rj * w.weights) for rj in R] for ri in R])
    np.testing.assert_allclose(G1, G, rtol=1e-11, atol=1e-14)


@pytest.mark.parametrize("family,sigma", [("odd_log", 1), ("abs_log", -1), ("integral_log", 1), ("power", 1)])
def test_semilinear(family, sigma, rng):
    g = build_grid(0, 1, 21)
    spec = NonlinearitySpec(family, sigma, 1.8, 2.0)
    ctrl = rng.standard_normal((200, 21))
    y0 = 3 * rng.random(21)
    (o1, l1), (o2, l2) = _both(lambda: kernels.semilinear_march(g.laplacian_bands, g.mask, spec.kernel_args,
                                                                 y0, ctrl, 1e-3, 1e250))
    assert l1 == l2
    np.testing.assert_allclose(o1[: l1 + 1], o2[: l2 + 1], rtol=1e-11, atol=1e-12)


@pytest.mark.parametrize("rank_one,cone", [(True, True), (False, True), (False, False)])
def test_prox_grad(rank_one, cone, rng):
    m = 25
    z = rng.random(m)
    if rank_one:
        H = np.outer(z, z)
        step = 1.0 / (z @ z)
    else:
        B = rng.standard_normal((m, m))
        H = B @ B.T / m
        step = 1.0 / np.linalg.eigvalsh(H)[-1]
    Y = rng.standard_normal(m)
    r1, r2 = _both(lambda: kernels.prox_grad(H, z, rank_one, Y, 1e-2, cone, np.zeros(m), step, 1e-13, 3000))
    np.testing.assert_allclose(r1[0], r2[0], rtol=1e-9, atol=1e-12)
    assert r1[1] == r2[1]
    np.testing.assert_allclose(r1[3], r2[3], rtol=1e-9, atol=1e-12)
    assert np.all(np.diff(r1[3]) <= 0)


def test_env_flag_selects_numpy():
    code = "from heatlab import kernels; print(kernels.get_backend())"
    env = dict(os.environ, HEATLAB_NO_NUMBA="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "numpy"
    env["HEATLAB_NO_NUMBA"] = ""
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "numba"


def test_set_backend_validation():
    with pytest.raises(ValueError):
        kernels.set_backend("cuda")
    before = kernels.get_backend()
    with kernels.backend("numpy"):
        assert kernels.get_backend() == "numpy"
    assert kernels.get_backend() == before
