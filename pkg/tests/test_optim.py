"""Nesterov updates and the training loop."""

import numpy as np
import pytest

from transitnet.errors import UsageError
from transitnet.graph import (
    DenseSpec,
    GraphBuilder,
    ParameterStore,
    SoftmaxSpec,
    init_parameters,
)
from transitnet.optim import (
    TrainConfig,
    evaluate,
    fit,
    nesterov_step,
    partition_batches,
    step_with_lookahead,
    train_epoch,
)
from transitnet.tensor import Rng, Shape4


def separable_points(per_class=20, seed=77):
    rng = Rng(seed)
    a = rng.normal(per_class * 2).reshape(per_class, 2) * 0.5 + np.array([2.0, 0.0])
    b = rng.normal(per_class * 2).reshape(per_class, 2) * 0.5 + np.array([-2.0, 0.0])
    x = np.concatenate([a, b]).reshape(2 * per_class, 1, 1, 2)
    labels = np.array([0] * per_class + [1] * per_class, dtype=np.int64)
    return x, labels


def dense_classifier(in_features=2, classes=2):
    b = GraphBuilder(Shape4(1, 1, 1, in_features))
    fl = b.add("flatten", "flatten")
    fc = b.add("fc1", "dense", DenseSpec(in_features, classes), (fl,))
    b.add("loss", "softmax-ce", SoftmaxSpec(classes), (fc,))
    return b.build()


def scalar_quadratic_store(theta0=1.0):
    store = ParameterStore()
    store.add_slot("theta", np.array([theta0]))
    return store


class TestNesterovStep:
    def test_hand_derived_two_step_trace(self):
        # f(theta) = theta^2, theta0=1, mu=0.9, lr=0.1: 1 -> 0.8 -> 0.496
        store = scalar_quadratic_store(1.0)
        cfg = TrainConfig(learning_rate=0.1, momentum=0.9, batch_size=2)

        def eval_grads():
            store.slots["theta"].grad[...] = 2.0 * store.slots["theta"].value

        step_with_lookahead(store, cfg, eval_grads)
        assert abs(store.slots["theta"].value.item() - 0.8) < 1e-12
        step_with_lookahead(store, cfg, eval_grads)
        assert abs(store.slots["theta"].value.item() - 0.496) < 1e-12

    def test_zero_momentum_is_plain_gradient_descent(self):
        store = scalar_quadratic_store(1.0)
        cfg = TrainConfig(learning_rate=0.1, momentum=0.0, batch_size=2)
        theta = 1.0
        for _ in range(5):
            def eval_grads():
                store.slots["theta"].grad[...] = 2.0 * store.slots["theta"].value
            step_with_lookahead(store, cfg, eval_grads)
            theta = theta - 0.1 * 2.0 * theta  # independently coded plain SGD
            assert store.slots["theta"].value.item() == theta

    def test_zero_gradient_zero_velocity_fixed_point(self):
        store = scalar_quadratic_store(3.0)
        cfg = TrainConfig(learning_rate=0.5, momentum=0.9, batch_size=2)
        nesterov_step(store, cfg)  # grads and velocity are zero
        assert store.slots["theta"].value.item() == 3.0


class TestBatchPartition:
    def test_25_by_10_keeps_short_tail(self):
        sizes = [len(b) for b in partition_batches(25, 10)]
        assert sizes == [10, 10, 5]

    def test_singleton_tail_dropped(self):
        sizes = [len(b) for b in partition_batches(21, 10)]
        assert sizes == [10, 10]

    def test_exact_division(self):
        sizes = [len(b) for b in partition_batches(20, 10)]
        assert sizes == [10, 10]


class TestTrainEpoch:
    def test_zero_learning_rate_leaves_parameters_bitwise(self):
        g = dense_classifier()
        store = init_parameters(g, Rng(1))
        before = {n: s.value.copy() for n, s in store.slots.items()}
        x, labels = separable_points()
        cfg = TrainConfig(learning_rate=0.0, momentum=0.9, batch_size=10, seed=2)
        train_epoch(g, store, (x, labels), cfg, Rng(2))
        for name, slot in store.slots.items():
            assert np.array_equal(slot.value, before[name]), name

    def test_empty_split_rejected(self):
        g = dense_classifier()
        store = init_parameters(g, Rng(1))
        cfg = TrainConfig(batch_size=10)
        with pytest.raises(UsageError):
            train_epoch(g, store, (np.zeros((0, 1, 1, 2)), np.zeros(0, dtype=int)), cfg, Rng(1))

    def test_separable_set_reaches_perfect_accuracy(self):
        g = dense_classifier()
        store = init_parameters(g, Rng(9))
        x, labels = separable_points()
        cfg = TrainConfig(learning_rate=0.1, momentum=0.9, batch_size=10,
                          epochs=50, seed=3)
        history = fit(g, store, (x, labels), (x, labels), cfg)
        assert history[-1].train_acc == 1.0


class TestFit:
    def test_history_length_equals_epochs(self):
        g = dense_classifier()
        store = init_parameters(g, Rng(5))
        x, labels = separable_points()
        cfg = TrainConfig(learning_rate=0.05, batch_size=10, epochs=7, seed=4)
        history = fit(g, store, (x, labels), (x, labels), cfg)
        assert [h.epoch for h in history] == list(range(1, 8))

    def test_same_seed_identical_histories(self):
        x, labels = separable_points()
        cfg = TrainConfig(learning_rate=0.05, batch_size=10, epochs=5, seed=11)
        runs = []
        for _ in range(2):
            g = dense_classifier()
            store = init_parameters(g, Rng(6))
            runs.append(fit(g, store, (x, labels), (x, labels), cfg))
        assert runs[0] == runs[1]

    def test_overfit_tiny_set_val_accuracy_one(self):
        g = dense_classifier()
        store = init_parameters(g, Rng(13))
        x, labels = separable_points(per_class=5)
        cfg = TrainConfig(learning_rate=0.1, batch_size=5, epochs=60, seed=1)
        history = fit(g, store, (x, labels), (x, labels), cfg)
        assert history[-1].val_acc == 1.0

    def test_evaluate_rejects_empty(self):
        g = dense_classifier()
        store = init_parameters(g, Rng(1))
        with pytest.raises(UsageError):
            evaluate(g, store, (np.zeros((0, 1, 1, 2)), np.zeros(0, dtype=int)))
