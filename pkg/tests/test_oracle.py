import math
import threading

import numpy as np
import pytest

from crseg.oracle import BudgetExhausted, QueryCounter, attack_loss, with_counter
from crseg.toymodel import ModelOracle


class Fixed:
    def __init__(self, probs):
        self.probs = probs

    def predict(self, image):
        return self.probs


def test_limit_raises_on_third_query():
    oracle = with_counter(Fixed(np.ones((1, 1, 1))), limit=2)
    oracle.predict(None)
    oracle.predict(None)
    with pytest.raises(BudgetExhausted):
        oracle.predict(None)
    assert oracle.queries == 2


def test_unlimited():
    oracle = with_counter(Fixed(np.ones((1, 1, 1))))
    for _ in range(1000):
        oracle.predict(None)
    assert oracle.queries == 1000


def test_batch_charges_per_image_and_respects_limit():
    oracle = with_counter(Fixed(np.ones((1, 1, 1))), limit=5)
    oracle.predict_batch(np.zeros((3, 1, 1, 1)))
    assert oracle.queries == 3
    with pytest.raises(BudgetExhausted):
        oracle.predict_batch(np.zeros((3, 1, 1, 1)))
    assert oracle.queries == 3


def test_wrapping_is_transparent(tiny_model):
    base = ModelOracle(tiny_model)
    wrapped = with_counter(base)
    rng = np.random.default_rng(0)
    for _ in range(10):
        x = rng.random((16, 16, 3))
        assert np.array_equal(base.predict(x), wrapped.predict(x))


def test_gradient_calls_are_free(tiny_model):
    wrapped = with_counter(ModelOracle(tiny_model), limit=0)
    x = np.random.default_rng(0).random((16, 16, 3))
    loss, grad = wrapped.loss_gradient(x, np.zeros((16, 16), dtype=int))
    assert grad.shape == x.shape and np.isfinite(loss)
    assert wrapped.queries == 0


def test_counter_is_thread_safe():
    counter = QueryCounter()

    def work():
        for _ in range(2000):
            counter.charge()

    threads = [threading.Thread(target=work) for _ in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert counter.count == 16000


def test_negative_limit_rejected():
    with pytest.raises(ValueError):
        QueryCounter(-1)


def test_attack_loss_values():
    labels = np.zeros((2, 2), dtype=int)
    perfect = np.zeros((2, 2, 4))
    perfect[..., 0] = 1.0
    assert attack_loss(Fixed(perfect), np.zeros((2, 2, 1)), np.zeros(4), labels) < 1e-6
    uniform = np.full((2, 2, 4), 0.25)
    assert attack_loss(Fixed(uniform), np.zeros((2, 2, 1)), np.zeros(4), labels) == pytest.approx(
        1.3862944, abs=1e-7)


def test_attack_loss_uses_clipped_image_and_one_query(tiny_model):
    x = np.random.default_rng(3).random((16, 16, 3))
    y = np.ones((16, 16), dtype=int)
    counted = with_counter(ModelOracle(tiny_model))
    zero = attack_loss(counted, x, np.zeros(x.size), y)
    assert counted.queries == 1
    assert zero == pytest.approx(tiny_model.input_gradient(x, y)[0])
    big = attack_loss(counted, x, np.full(x.size, 5.0), y)
    assert big == pytest.approx(tiny_model.input_gradient(np.ones_like(x), y)[0])
    assert math.isfinite(big)
