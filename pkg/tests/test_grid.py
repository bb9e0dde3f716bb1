from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

import oracles
from panodar.errors import InvalidInputError
from panodar.grid import (
    ClassCatalog, argmax_map, as_binary, as_labels, as_logits, entropy_map,
    logsumexp_map, shannon_entropy, softmax, softmax_pixel, top2_gap, top2_gap_map,
)

finite = st.floats(-30, 30, allow_nan=False, width=32)
grids = st.integers(2, 6).flatmap(
    lambda c: arrays(np.float32, (c, 3, 4), elements=finite)
)


def test_softmax_pixel_known_values():
    np.testing.assert_allclose(softmax_pixel([1, 1, 2]), [0.2119, 0.2119, 0.5761], atol=1e-4)


def test_softmax_uniform_and_shift():
    np.testing.assert_allclose(softmax_pixel([0, 0, 0, 0]), [0.25] * 4)
    np.testing.assert_allclose(softmax_pixel([1000.0, 1001.0]), softmax_pixel([0.0, 1.0]))


def test_softmax_rejects_nonfinite():
    with pytest.raises(InvalidInputError):
        softmax_pixel([0.0, float("nan")])


def test_entropy_known_values():
    assert shannon_entropy([0.5, 0.3, 0.2]) == pytest.approx(1.0297, abs=1e-4)
    assert shannon_entropy([1.0, 0.0, 0.0]) == 0.0
    assert shannon_entropy([1 / 19] * 19) == pytest.approx(math.log(19), abs=1e-12)


def test_top2_gap():
    assert top2_gap([0.6, 0.3, 0.1]) == pytest.approx(0.3)
    assert top2_gap([0.5, 0.5]) == 0.0
    with pytest.raises(InvalidInputError):
        top2_gap([1.0])


@given(grids)
@settings(max_examples=60, deadline=None)
def test_softmax_grid_is_distribution(g):
    p = softmax(g)
    assert np.all(p >= 0)
    np.testing.assert_allclose(p.sum(axis=0), 1.0, atol=1e-12)


@given(grids)
@settings(max_examples=60, deadline=None)
def test_grid_maps_match_oracle(g):
    lists = g.tolist()
    lse = logsumexp_map(g)
    ent = entropy_map(g)
    gap = top2_gap_map(g)
    am = argmax_map(g)
    for y in range(g.shape[1]):
        for x in range(g.shape[2]):
            s = oracles.pixel_scores(lists, y, x)
            p = oracles.softmax(s)
            m = max(s)
            assert lse[y, x] == pytest.approx(m + math.log(sum(math.exp(v - m) for v in s)), abs=1e-9)
            assert ent[y, x] == pytest.approx(oracles.entropy(p), abs=1e-9)
            assert gap[y, x] == pytest.approx(oracles.top2_gap(p), abs=1e-12)
            assert am[y, x] == oracles.argmax(s)


@given(grids)
@settings(max_examples=40, deadline=None)
def test_entropy_bounds(g):
    h = entropy_map(g)
    assert np.all(h >= 0)
    assert np.all(h <= math.log(g.shape[0]) + 1e-9)


def test_argmax_ties_go_low():
    g = np.zeros((3, 1, 2), dtype=np.float32)
    g[1, 0, 1] = g[2, 0, 1] = 1.0
    np.testing.assert_array_equal(argmax_map(g), [[0, 1]])


def test_as_logits_validation():
    assert as_logits(np.zeros((2, 1, 1), dtype=np.float64)).dtype == np.float32
    with pytest.raises(InvalidInputError):
        as_logits(np.zeros((1, 2, 2)))
    with pytest.raises(InvalidInputError):
        as_logits(np.zeros((2, 2)))
    with pytest.raises(InvalidInputError):
        as_logits(np.full((2, 1, 1), np.inf))


def test_as_labels_validation():
    np.testing.assert_array_equal(as_labels(np.array([[0, 2]], dtype=np.uint8), 3), [[0, 2]])
    with pytest.raises(InvalidInputError):
        as_labels(np.array([[0, 3]]), 3)
    with pytest.raises(InvalidInputError):
        as_labels(np.array([[-1, 0]]))
    with pytest.raises(InvalidInputError):
        as_labels(np.array([[0.5]]))
    assert as_labels(np.array([[255, 1]]), 2, ignore_index=255).max() == 255


def test_as_binary():
    assert as_binary(np.array([[0, 1]])).dtype == bool
    with pytest.raises(InvalidInputError):
        as_binary(np.array([[0, 2]]))


def test_class_catalog():
    cat = ClassCatalog.default()
    assert len(cat) == 19
    cat.check(np.zeros((19, 1, 1)))
    with pytest.raises(InvalidInputError):
        cat.check(np.zeros((18, 1, 1)))
    with pytest.raises(InvalidInputError):
        ClassCatalog(("a", "a"))
