import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from ptselect import _accel
from ptselect.kernels import make_base_kernel

needs_numba = pytest.mark.skipif(_accel.numba_impl is None, reason="numba not importable")


def _scan_loops(D, thr, sig, rtol):
    out = np.empty(D.shape[0])
    for m in range(D.shape[0]):
        out[m] = max(D[m, k] - thr[k] for k in range(D.shape[0]) if sig[k] >= sig[m] * (1 - rtol))
    return out


@settings(max_examples=25, deadline=None)
@given(n=st.integers(1, 30), seed=st.integers(0, 10_000))
def test_criterion_scan_backends_agree_with_loops(n, seed):
    rng = np.random.default_rng(seed)
    D = np.abs(rng.standard_normal((n, n)))
    thr = rng.uniform(0, 1, n)
    sig = np.round(rng.uniform(1, 5, n), 1)  # repeated levels exercise the tolerance
    ref = _scan_loops(D, thr, sig, 1e-12)
    assert_array_equal(_accel.numpy_impl.criterion_scan(D, thr, sig, 1e-12), ref)
    if _accel.numba_impl is not None:
        assert_array_equal(_accel.numba_impl.criterion_scan(D, thr, sig, 1e-12), ref)


@needs_numba
@pytest.mark.parametrize("shape", [(7, 7), (5, 7, 7)])
def test_level_prefix_max_backends_agree(shape):
    rng = np.random.default_rng(1)
    D = rng.standard_normal(shape)
    order = rng.permutation(shape[-1]).astype(np.int64)
    ends = np.array([1, 3, 6], dtype=np.int64)
    ref = np.maximum.accumulate(D[..., order], axis=-1)[..., ends]
    assert_array_equal(_accel.numpy_impl.level_prefix_max(D, order, ends), ref)
    assert_array_equal(_accel.numba_impl.level_prefix_max(D, order, ends), ref)


@needs_numba
@pytest.mark.parametrize("d, order", [(1, 0), (2, 2), (3, 1)])
def test_separable_sum_eval_backends_agree(d, order):
    base = make_base_kernel("triweight", d, order)
    s = np.random.default_rng(d).uniform(-0.7, 0.7, size=(5000, d))
    args = (s, base.amplitudes, base.dilations, base.profile.breaks, base.profile.coefs)
    a = _accel.numpy_impl.separable_sum_eval(*args)
    b = _accel.numba_impl.separable_sum_eval(*args)
    assert_allclose(a, b, rtol=1e-12, atol=1e-12)
    assert_allclose(a, base(s), rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("flag, expected", [("0", "numpy"), ("off", "numpy"), ("1", "numba")])
def test_environment_flag_selects_backend(flag, expected):
    if expected == "numba" and _accel.numba_impl is None:
        pytest.skip("numba not importable")
    env = dict(os.environ, PTSELECT_NUMBA=flag)
    out = subprocess.run(
        [sys.executable, "-c", "from ptselect import _accel; print(_accel.BACKEND)"],
        env=env, capture_output=True, text=True, check=True,
    )
    assert out.stdout.strip() == expected
