import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from multiquery import kernels
from multiquery.designs import sobol_directions


@given(st.integers(1, 8), st.integers(0, 5000), st.integers(1, 300))
def test_sobol_ints_paths_agree(d, start, n):
    dirs = sobol_directions(d)
    a = kernels.sobol_ints_nb(dirs, np.int64(start), np.int64(n))
    b = kernels.sobol_ints_np(dirs, start, n)
    np.testing.assert_array_equal(a, b)


@given(st.integers(1, 30), st.integers(1, 30), st.integers(1, 4), st.integers(0, 2**31))
def test_se_kernel_paths_agree(n1, n2, d, seed):
    rng = np.random.default_rng(seed)
    x1, x2 = rng.normal(size=(n1, d)), rng.normal(size=(n2, d))
    ls = rng.uniform(0.2, 3.0, d)
    a = kernels.se_kernel_nb(x1, x2, ls, 1.7)
    b = kernels.se_kernel_np(x1, x2, ls, 1.7)
    np.testing.assert_allclose(a, b, rtol=1e-13, atol=1e-15)


def test_se_kernel_matches_definition():
    rng = np.random.default_rng(0)
    x1, x2 = rng.normal(size=(4, 3)), rng.normal(size=(5, 3))
    ls = np.array([0.5, 1.0, 2.0])
    brute = np.array([[2.0 * np.exp(-0.5 * np.sum(((a - b) / ls) ** 2)) for b in x2] for a in x1])
    np.testing.assert_allclose(kernels.se_kernel(x1, x2, ls, 2.0), brute, rtol=1e-14)


@given(st.integers(2, 25), st.integers(1, 4), st.integers(0, 2**31))
def test_lengthscale_traces_paths_agree(n, d, seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, d))
    ls = rng.uniform(0.3, 2.0, d)
    k = kernels.se_kernel_np(x, x, ls, 1.0)
    w = rng.normal(size=(n, n))
    w = w + w.T
    np.testing.assert_allclose(
        kernels.se_lengthscale_traces_nb(x, k, w, ls),
        kernels.se_lengthscale_traces_np(x, k, w, ls),
        rtol=1e-10, atol=1e-12,
    )


@given(st.lists(st.floats(0.0, 1.0), min_size=1, max_size=60), st.floats(0.0, 0.999999))
def test_systematic_resample_paths_agree(raw, u):
    w = np.array(raw) + 1e-3
    w /= w.sum()
    a = kernels.systematic_resample_nb(w, u)
    b = kernels.systematic_resample_np(w, u)
    np.testing.assert_array_equal(a, b)
    assert a.min() >= 0 and a.max() < w.size


def test_systematic_resample_counts_are_floor_or_ceil():
    w = np.array([0.1, 0.25, 0.05, 0.6])
    idx = kernels.systematic_resample(w, 0.37)
    counts = np.bincount(idx, minlength=4)
    assert counts.sum() == 4
    assert np.all(counts >= np.floor(4 * w)) and np.all(counts <= np.ceil(4 * w))


@pytest.mark.parametrize("flag,expected", [("1", "False"), ("0", "True")])
def test_environment_flag_selects_path(flag, expected):
    env = dict(os.environ, MULTIQUERY_DISABLE_NUMBA=flag)
    out = subprocess.run(
        [sys.executable, "-c", "from multiquery import kernels; print(kernels.USE_NUMBA)"],
        env=env, capture_output=True, text=True, check=True,
    )
    assert out.stdout.strip() == expected
