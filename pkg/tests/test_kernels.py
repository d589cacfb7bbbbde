import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import isotonic_regression

from sizeunfold import _fallback, geometry, kernels
from sizeunfold.rng import make_rng

try:
    from sizeunfold import _core
except ImportError:
    _core = None

needs_core = pytest.mark.skipif(_core is None, reason="compiled kernels not built")
IMPLS = [pytest.param(_fallback, id="fallback"),
         pytest.param(_core, id="cython", marks=needs_core)]


def planes(K, n, seed):
    normals, offsets, _ = geometry.sample_iur_planes(K, make_rng(seed), n)
    verts, he_from, he_to, ptr = K._kernel_args()
    local = np.ascontiguousarray(offsets - normals @ K.centroid)
    return (verts, he_from, he_to, ptr, np.ascontiguousarray(normals), local), normals, offsets


def test_backend_reported():
    assert kernels.BACKEND == ("cython" if _core is not None else "python")


def test_env_var_forces_fallback():
    code = "import sizeunfold.kernels as k; print(k.BACKEND)"
    env = dict(os.environ, SIZEUNFOLD_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"


@pytest.mark.parametrize("impl", IMPLS)
@pytest.mark.parametrize("shape", ["cube", "tetrahedron", "dodecahedron"])
def test_section_areas_match_scalar_geometry(impl, shape):
    K = geometry.SHAPES[shape]()
    args, normals, offsets = planes(K, 300, 21)
    got = np.asarray(impl.section_areas(*args))
    want = [geometry.section_area(K, geometry.Plane(n, o)) for n, o in zip(normals, offsets)]
    assert np.allclose(got, want, rtol=1e-10, atol=1e-14)


@needs_core
def test_section_areas_core_equals_fallback():
    K = geometry.ball(2)
    args, _, _ = planes(K, 2000, 22)
    assert np.allclose(_core.section_areas(*args), _fallback.section_areas(*args), rtol=1e-12, atol=1e-15)


@needs_core
def test_section_areas_miss_is_zero():
    K = geometry.cube()
    verts, he_from, he_to, ptr = K._kernel_args()
    normals = np.array([[0.0, 0.0, 1.0]])
    for impl in (_core, _fallback):
        assert impl.section_areas(verts, he_from, he_to, ptr, normals, np.array([0.9]))[0] == 0.0


vectors = st.lists(st.floats(-10, 10), min_size=1, max_size=40)


@pytest.mark.parametrize("impl", IMPLS)
@settings(max_examples=100, deadline=None)
@given(data=st.data())
def test_pava_matches_scipy(impl, data):
    y = np.array(data.draw(vectors))
    w = np.array(data.draw(st.lists(st.floats(0.01, 10), min_size=len(y), max_size=len(y))))
    got = np.asarray(impl.pava(np.ascontiguousarray(y), np.ascontiguousarray(w)))
    want = isotonic_regression(y, weights=w).x
    assert np.allclose(got, want, atol=1e-9)


@pytest.mark.parametrize("impl", IMPLS)
def test_pava_empty_and_monotone(impl):
    assert len(impl.pava(np.zeros(0), np.zeros(0))) == 0
    y = np.array([1.0, 2.0, 2.0, 5.0])
    assert np.array_equal(impl.pava(y, np.ones(4)), y)


@pytest.mark.parametrize("impl", IMPLS)
@pytest.mark.parametrize("m", [1, 2, 7])
def test_diff_sq_rmatvec(impl, m):
    rng = np.random.default_rng(m)
    a = rng.random((13, m))
    w = rng.random(13)
    out = rng.random(m)
    want = out.copy()
    ext = np.hstack([a, np.zeros((13, 1))])
    for j in range(m):
        want[j] += sum(w[i] * (ext[i, j] - ext[i, j + 1]) ** 2 for i in range(13))
    impl.diff_sq_rmatvec(np.ascontiguousarray(a), w, out)
    assert np.allclose(out, want, rtol=1e-13)


def sweep_oracle(widths, origin, step, inv_mass, m):
    """Direct per-interval evaluation of every suffix."""
    level = np.zeros(m + 1)
    total = np.zeros(m)
    for wd, o in zip(widths, origin):
        level[o] += step[o]
        for k in range(m):
            total[k] += wd * abs(level[k:m].sum() * inv_mass[k] - level[m])
    return total


@pytest.mark.parametrize("impl", IMPLS)
@pytest.mark.parametrize("m", [1, 4, 9])
def test_suffix_l1_sweep_matches_loop(impl, m):
    rng = np.random.default_rng(m)
    r = 300
    widths = rng.random(r) * (rng.random(r) < 0.8)
    origin = rng.integers(0, m + 1, r).astype(np.int64)
    step = rng.random(m + 1) / 50
    inv_mass = 1.0 / (1.0 + rng.random(m))
    total = np.zeros(m)
    impl.suffix_l1_sweep(widths, origin, step, inv_mass, total)
    assert np.allclose(total, sweep_oracle(widths, origin, step, inv_mass, m), rtol=1e-12, atol=1e-14)
