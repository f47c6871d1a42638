import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from porodiff import _kernels
from porodiff._kernels import _pure

from oracles import brute_components, brute_edt_sq

vols = arrays(np.uint8, st.tuples(*[st.integers(1, 7)] * 3), elements=st.integers(0, 1))


@given(a=vols)
def test_edt_backend(backend, a):
    np.testing.assert_array_equal(backend.edt_sq(np.ascontiguousarray(a)), brute_edt_sq(a))


@given(a=vols, conn=st.sampled_from([6, 26]))
def test_label_backend(backend, a, conn):
    lab, n = backend.label(np.ascontiguousarray(a), conn)
    ref, m = brute_components(a, conn)
    assert n == m
    np.testing.assert_array_equal(lab, ref)


def _watershed_inputs(rng, shape=(10, 11, 12)):
    mask = (rng.random(shape) < 0.6).astype(np.uint8)
    dist = _pure.edt_sq(mask).astype(np.float64)
    return mask, dist


@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("conn", [6, 26])
def test_backends_agree_on_watershed(seed, conn):
    backs = _kernels.backends()
    if len(backs) < 2:
        pytest.skip("compiled backend not built")
    mask, dist = _watershed_inputs(np.random.default_rng(seed))
    a = backs["pure"].watershed(mask, dist, conn)
    b = backs["compiled"].watershed(mask, dist, conn)
    np.testing.assert_array_equal(a[0], b[0])
    assert a[1] == b[1]


def test_watershed_covers_mask(backend):
    mask, dist = _watershed_inputs(np.random.default_rng(9))
    lab, n = backend.watershed(mask, dist, 6)
    assert np.all((lab > 0) == (mask > 0))
    assert set(np.unique(lab[lab > 0])) == set(range(1, n + 1))


def test_pure_override():
    env = dict(os.environ, PORODIFF_PURE="1")
    out = subprocess.run(
        [sys.executable, "-c", "import porodiff._kernels as k; print(k.BACKEND)"],
        env=env, capture_output=True, text=True, check=True,
    )
    assert out.stdout.strip() == "pure"
