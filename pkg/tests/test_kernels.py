import json
import os
import subprocess
import sys

import numpy as np
import pytest

from kinospline import kernels
from kinospline.splines import blending_tables


def test_cubic_roots_against_numpy():
    rng = np.random.default_rng(0)
    out = np.empty(3)
    for _ in range(500):
        c = rng.normal(size=4)
        n = kernels._cubic_roots(c[3], c[2], c[1], c[0], out)
        ref = np.roots([c[3], c[2], c[1], c[0]])
        ref = np.sort(ref[np.abs(ref.imag) < 1e-9].real)
        got = np.sort(out[:n])
        assert n == len(ref)
        if n:
            assert np.abs(got - ref).max() < 1e-8


def test_cubic_degenerate_branches():
    out = np.empty(3)
    # leading coefficient under the cutoff falls back to the quadratic
    n = kernels._cubic_roots(1e-15, 1.0, -3.0, 2.0, out)
    assert n == 2 and np.allclose(np.sort(out[:2]), [1.0, 2.0], atol=1e-9)
    # triple root
    n = kernels._cubic_roots(1.0, -3.0, 3.0, -1.0, out)
    assert n >= 1 and abs(out[0] - 1.0) < 1e-6


def test_quad_roots_cancellation_safe():
    out = np.empty(3)
    n = kernels._quad_roots(1.0, -1e8, 1.0, 1e8, out)
    assert n == 2
    r = np.sort(out[:2])
    assert r[0] == pytest.approx(1e-8, rel=1e-6)
    assert r[1] == pytest.approx(1e8, rel=1e-12)


def test_collision_scan_modes():
    occ = np.zeros(27, dtype=np.uint8)
    occ[13] = 1  # center cell of a 3x3x3 grid
    dims = np.array([3, 3, 3], dtype=np.int64)
    pts = np.array([[0.5, 0.5, 0.5], [1.5, 1.5, 1.5]])
    hit = kernels.collision_scan(pts, occ, dims, np.zeros(3), np.ones(3))
    assert hit == 1
    free = np.array([[0.5, 0.5, 0.5], [2.5, 2.5, 2.5]])
    assert kernels.collision_scan(free, occ, dims, np.zeros(3), np.ones(3)) == -1
    outside = np.array([[-0.1, 0.5, 0.5]])
    assert kernels.collision_scan(outside, occ, dims, np.zeros(3), np.ones(3)) == 0


_WORKER = r"""
import json
import numpy as np
from kinospline import kernels
from kinospline.splines import blending_tables

rng = np.random.default_rng(42)
tab = blending_tables(5)
out = {"numba": kernels.numba_active()}
P = rng.normal(size=(6, 3))
ex = np.empty((3, 2))
kernels.span_extrema_kernel(P, tab.M, 1, 0.17, ex)
out["extrema"] = ex.tolist()
out["cost"] = kernels.span_cost_kernel(P, tab.cost_mat(3), 0.17 ** -5)
v = np.empty(3)
kernels.eval_span_kernel(P, tab.M, 0.37, 2, 0.17, v)
out["eval"] = v.tolist()
occ = np.zeros(5 * 5 * 5, dtype=np.uint8)
occ[31] = 1
dims = np.array([5, 5, 5], dtype=np.int64)
zero3 = np.zeros(3, dtype=np.int64)
cells = np.full(3, 0.2)
pos = np.array([[0.5 + 0.2 * i, 0.5, 0.5] for i in range(6)])
m = np.empty(27, dtype=np.uint8); c = np.empty(27)
oc = np.empty((27, 3), dtype=np.int64); cd = np.empty(27, dtype=np.int64)
b = np.full(3, 2.0); a = np.full(3, 4.7)
kernels.successor_scan(pos, np.array([2, 2, 2], dtype=np.int64), occ, dims,
                       zero3, dims - 1, np.zeros(3), cells, tab.M,
                       tab.cost_mat(2), 0.17, 20.0, 0.17 ** -3,
                       -b, b, -a, a, m, c, oc, cd)
out["mask"] = m.tolist()
out["costs"] = [c[i] for i in range(27) if m[i]]
print(json.dumps(out))
"""


def _run_worker(no_numba: bool):
    env = dict(os.environ)
    if no_numba:
        env["KINOSPLINE_NO_NUMBA"] = "1"
    else:
        env.pop("KINOSPLINE_NO_NUMBA", None)
    res = subprocess.run([sys.executable, "-c", _WORKER], env=env,
                         capture_output=True, text=True, timeout=300)
    assert res.returncode == 0, res.stderr
    return json.loads(res.stdout)


def test_pure_python_fallback_matches_numba():
    """The env-flag fallback path must agree with the jitted path exactly."""
    jit = _run_worker(no_numba=False)
    pure = _run_worker(no_numba=True)
    assert jit["numba"] is True
    assert pure["numba"] is False
    assert pure["mask"] == jit["mask"]
    assert np.allclose(pure["extrema"], jit["extrema"], rtol=0, atol=0)
    assert pure["cost"] == jit["cost"]
    assert pure["eval"] == jit["eval"]
    assert pure["costs"] == jit["costs"]


def test_warmup_idempotent():
    kernels.warmup()
    kernels.warmup()
