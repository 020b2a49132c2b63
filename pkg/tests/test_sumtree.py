import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from oracles import naive_find

from coagfuse.sumtree import FenwickTree

weights = st.lists(st.floats(0.0, 1e3), min_size=1, max_size=200)


@given(weights, st.data())
def test_find_matches_naive(ws, data):
    tree = FenwickTree(ws)
    if tree.total == 0.0:
        return
    target = data.draw(st.floats(0.0, 1.0, exclude_max=True)) * tree.total
    got = tree.find(target)
    cums = np.cumsum(ws)
    if np.min(np.abs(cums - target)) > 1e-9 * tree.total:
        # away from partial-sum boundaries the answer is unambiguous
        assert got == naive_find(np.array(ws), target)
    if got < len(ws):
        assert tree.prefix(got) <= target * (1 + 1e-12) + 1e-12
        assert tree.prefix(got + 1) >= target * (1 - 1e-12) - 1e-12


@given(weights, st.lists(st.tuples(st.integers(0, 10 ** 6), st.floats(0.0, 1e3)), max_size=50))
def test_updates_keep_prefix_sums(ws, updates):
    tree = FenwickTree(ws)
    ref = list(ws)
    for idx, w in updates:
        i = idx % len(ws)
        tree.set(i, w)
        ref[i] = w
    for k in range(len(ref) + 1):
        assert tree.prefix(k) == pytest.approx(math.fsum(ref[:k]), rel=1e-9, abs=1e-9)
    assert tree.total == pytest.approx(math.fsum(ref), rel=1e-9, abs=1e-9)
    tree.rebuild()
    assert tree.total == math.fsum(ref)
    assert tree.leaves() == ref


def test_find_exact_small():
    tree = FenwickTree([1.0, 0.0, 2.0, 3.0])
    assert tree.find(0.0) == 0
    assert tree.find(0.999) == 0
    assert tree.find(1.0) == 2
    assert tree.find(2.5) == 2
    assert tree.find(3.0) == 3
    assert tree.find(5.999) == 3


def test_sampling_frequencies():
    w = np.array([0.5, 2.0, 0.0, 1.5, 6.0])
    tree = FenwickTree(w)
    rng = np.random.default_rng(0)
    counts = np.zeros(len(w))
    for u in rng.random(200_000):
        counts[tree.find(u * tree.total)] += 1
    np.testing.assert_allclose(counts / counts.sum(), w / w.sum(), atol=5e-3)
    assert counts[2] == 0


def test_rejects_bad_weights():
    with pytest.raises(ValueError):
        FenwickTree([1.0, -1.0])
    with pytest.raises(ValueError):
        FenwickTree([math.inf])
