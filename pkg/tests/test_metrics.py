import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra import numpy as hnp

from crseg.metrics import argmax_labels, miou, pix_acc


def test_pix_acc_worked_examples():
    t = np.array([[0, 1], [2, 3]])
    assert pix_acc([t], [t]) == 1.0
    assert pix_acc(np.array([[0, 1], [0, 0]]), t) == 0.5
    # two images with 3 and 1 matching pixels out of 4 each
    p1, t1 = np.array([[0, 0], [1, 2]]), np.array([[0, 0], [1, 1]])
    p2, t2 = np.array([[1, 1], [1, 0]]), np.array([[0, 0], [0, 0]])
    assert pix_acc([p1, p2], [t1, t2]) == 0.5


def test_miou_worked_examples():
    truth = np.array([[0, 0], [1, 1]])
    pred = np.array([[0, 1], [1, 1]])
    assert miou([pred], [truth], 2) == pytest.approx(7 / 12, abs=0)
    assert miou([truth], [truth], 2) == 1.0
    assert miou([np.zeros((2, 2), int)], [np.ones((2, 2), int)], 2) == 0.0


def test_miou_excludes_empty_unions():
    t = np.zeros((2, 2), dtype=int)
    # classes 1..3 never appear, so only class 0 counts
    assert miou([t], [t], 4) == 1.0


def test_argmax():
    assert argmax_labels(np.array([0.2, 0.5, 0.3])) == 1
    assert np.all(argmax_labels(np.full((3, 3, 4), 0.25)) == 0)
    onehot = np.eye(4)[np.array([[3, 1], [0, 2]])]
    np.testing.assert_array_equal(argmax_labels(onehot), [[3, 1], [0, 2]])


def test_shape_errors():
    with pytest.raises(ValueError):
        pix_acc([np.zeros((2, 2))], [np.zeros((2, 3))])
    with pytest.raises(ValueError):
        miou([np.zeros((2, 2), int)], [], 2)


maps = st.integers(1, 4).flatmap(
    lambda k: st.tuples(st.just(k), hnp.array_shapes(min_dims=2, max_dims=2, max_side=5)).flatmap(
        lambda ks: st.lists(st.tuples(hnp.arrays(np.int64, ks[1], elements=st.integers(0, ks[0] - 1)),
                                      hnp.arrays(np.int64, ks[1], elements=st.integers(0, ks[0] - 1))),
                            min_size=1, max_size=4).map(lambda pairs: (ks[0], pairs))))


@given(maps, st.randoms())
def test_bounds_and_permutation_invariance(case, rnd):
    k, pairs = case
    preds, truths = [p for p, _ in pairs], [t for _, t in pairs]
    acc, iou = pix_acc(preds, truths), miou(preds, truths, k)
    assert 0.0 <= acc <= 1.0 and 0.0 <= iou <= 1.0
    order = list(range(len(pairs)))
    rnd.shuffle(order)
    assert pix_acc([preds[i] for i in order], [truths[i] for i in order]) == pytest.approx(acc)
    assert miou([preds[i] for i in order], [truths[i] for i in order], k) == pytest.approx(iou)


def test_fuzz_bounds_ten_thousand_cases():
    rng = np.random.default_rng(2024)
    for _ in range(10_000):
        k = int(rng.integers(1, 6))
        shape = tuple(rng.integers(1, 6, 2))
        n = int(rng.integers(1, 4))
        preds = [rng.integers(0, k, shape) for _ in range(n)]
        truths = [rng.integers(0, k, shape) for _ in range(n)]
        assert 0.0 <= pix_acc(preds, truths) <= 1.0
        assert 0.0 <= miou(preds, truths, k) <= 1.0
