import math

import numpy as np
import pytest

from camnet.arch import build_network, parse_arch
from camnet.data import ImageDataset
from camnet.engine import Parameter, Tensor, backward, precision, softmax
from camnet.errors import ContractError, DimensionError
from camnet.lifelong import (
    LifelongHistory,
    LwFConfig,
    add_task_head,
    distillation_loss,
    lwf_loss,
    lwf_train,
    record_soft_targets,
    run_lifelong,
)
from camnet.training import TrainConfig, classification_loss, train_classifier


@pytest.fixture(autouse=True)
def f64():
    with precision("f64"):
        yield


def micro(seed=0):
    return build_network(parse_arch("rC4 C4 rF8 rF10", width=2, input_shape=(1, 8, 8), n_classes=10),
                         seed=seed, head_tokens=2)


def toy(n=30, seed=0, name="toy", domain=0):
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, 10, n)
    images = rng.random((n, 1, 8, 8)) * 0.3
    images[np.arange(n), 0, labels % 8, labels // 8] = 1.0
    return ImageDataset(name, domain, images, labels)


def two_heads(seed=0):
    model = micro(seed)
    add_task_head(model)
    add_task_head(model)
    return model


def frozen_flags(model):
    return list(model.head_frozen)


class TestHeads:
    def test_first_task_uses_built_head(self):
        model = add_task_head(micro())
        assert len(model.heads) == 1 and frozen_flags(model) == [False]

    def test_four_additions(self):
        model = micro()
        for _ in range(4):
            add_task_head(model)
        assert len(model.heads) == 4
        assert frozen_flags(model) == [True, True, True, False]
        assert model.active_head == 3

    def test_trunk_stays_trainable(self):
        model = two_heads()
        assert all(p.trainable for p in model.trunk_parameters())
        assert not any(p.trainable for p in model.head_parameters(0))

    def test_heads_are_fresh(self):
        model = two_heads()
        a = [p.data for p in model.head_parameters(0)]
        b = [p.data for p in model.head_parameters(1)]
        assert any(not np.array_equal(x, y) for x, y in zip(a, b))

    def test_class_count_must_match(self):
        with pytest.raises(ContractError):
            add_task_head(micro(), n_classes=5)


class TestSoftTargets:
    def test_no_old_heads(self):
        model = add_task_head(micro())
        assert record_soft_targets(model, toy().images) == {}

    def test_t1_is_plain_softmax(self):
        model = two_heads()
        x = toy(12).images
        table = record_soft_targets(model, x, temperature=1.0)
        assert list(table) == [0]
        np.testing.assert_allclose(table[0], model.predict(x, head=0), atol=1e-14)

    def test_high_temperature_is_near_uniform(self):
        model = two_heads(3)
        x = toy(20).images
        rows = record_soft_targets(model, x, temperature=100.0)[0]
        assert rows.shape == (20, 10)
        assert (rows.max(axis=1) - rows.min(axis=1)).max() < 0.05

    def test_unaffected_by_batch_size(self):
        model = two_heads()
        x = toy(13).images
        np.testing.assert_allclose(record_soft_targets(model, x, batch_size=4)[0],
                                   record_soft_targets(model, x, batch_size=64)[0], atol=1e-14)


class TestDistillation:
    def test_hand_formula_t2(self):
        # the 1e-12 log guard shifts the value by about 1e-12 * sum(p / q) * T^2, well inside 1e-10 here
        rng = np.random.default_rng(0)
        p = rng.random((6, 10))
        q = rng.random((6, 10))
        p, q = p / p.sum(axis=1, keepdims=True), q / q.sum(axis=1, keepdims=True)
        expected = 0.0
        for r in range(6):
            expected -= sum(p[r, k] * math.log(q[r, k]) for k in range(10))
        expected = expected / 6 * 2.0 ** 2
        assert distillation_loss(p, Tensor(q), 2.0).item() == pytest.approx(expected, abs=1e-10)

    def test_self_distillation_gradient_vanishes(self):
        rng = np.random.default_rng(1)
        z = Parameter(rng.standard_normal((5, 10)), "z")
        recorded = softmax(Tensor(z.data / 2.0)).data
        backward(distillation_loss(recorded, softmax(z * 0.5), 2.0))
        assert np.abs(z.grad).max() < 1e-8

    def test_self_is_minimum(self):
        rng = np.random.default_rng(2)
        p = rng.dirichlet(np.ones(10), size=4)
        base = distillation_loss(p, Tensor(p), 2.0).item()
        for s in range(5):
            other = rng.dirichlet(np.ones(10), size=4)
            assert distillation_loss(p, Tensor(other), 2.0).item() > base

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            distillation_loss(np.full((3, 10), 0.1), Tensor(np.full((3, 5), 0.2)), 2.0)

    def test_hard_targets_t1_is_cross_entropy(self):
        model = two_heads()
        ds = toy(8)
        old_labels = (ds.labels + 3) % 10
        hard = {0: np.eye(10)[old_labels]}
        got = lwf_loss(model, ds.images, ds.labels, hard, 1.0, 1.0).item()
        expected = (classification_loss(model, ds.images, ds.labels, head=1).item() +
                    classification_loss(model, ds.images, old_labels, head=0).item())
        assert got == pytest.approx(expected, abs=1e-12)

    def test_config_checks(self):
        with pytest.raises(ContractError):
            LwFConfig(lambda_old=-1)
        with pytest.raises(ContractError):
            LwFConfig(temperature=0)


class TestTraining:
    cfg = TrainConfig(batch_size=10, epochs=2, seed=4, precision="f64")

    def test_single_task_equals_train_classifier(self):
        ds = toy(30)
        _, a = lwf_train(add_task_head(micro()), ds, LwFConfig(), self.cfg)
        _, b = train_classifier(micro(), ds, self.cfg)
        np.testing.assert_allclose(a.train_loss, b.train_loss, rtol=0, atol=1e-12)

    def test_lambda_zero_is_fine_tuning(self):
        ds = toy(30, seed=1)
        _, a = lwf_train(two_heads(), ds, LwFConfig(lambda_old=0.0), self.cfg)
        plain = two_heads()
        _, b = train_classifier(plain, ds, self.cfg, head=plain.active_head)
        np.testing.assert_allclose(a.train_loss, b.train_loss, rtol=0, atol=1e-12)

    def test_frozen_head_bytes_constant(self):
        model = two_heads()
        before = [p.data.tobytes() for p in model.head_parameters(0)]
        trunk = [p.data.copy() for p in model.trunk_parameters()]
        lwf_train(model, toy(20), LwFConfig(), self.cfg)
        assert [p.data.tobytes() for p in model.head_parameters(0)] == before
        assert any(not np.array_equal(a, p.data) for a, p in zip(trunk, model.trunk_parameters()))

    def test_soft_table_size_checked(self):
        model = two_heads()
        with pytest.raises(DimensionError):
            lwf_train(model, toy(10), LwFConfig(), self.cfg, soft={0: np.full((4, 10), 0.1)})


class TestHistory:
    def test_lower_triangular(self):
        phases = [(f"t{k}", toy(20, k, f"t{k}", k), toy(10, 10 + k, f"t{k}", k)) for k in range(3)]
        cfg = TrainConfig(batch_size=10, epochs=1, precision="f64")
        model, hist = run_lifelong(micro(), phases, LwFConfig(), cfg)
        assert len(hist.rows) == 1 + 2 + 3
        assert [sum(1 for p, _, _ in hist.rows if p == k) for k in (1, 2, 3)] == [1, 2, 3]
        table = hist.table()
        assert np.isnan(table[np.triu_indices(3, 1)]).all()
        low = table[np.tril_indices(3)]
        assert ((low >= 0) & (low <= 1)).all()
        assert len(model.heads) == 3 and frozen_flags(model) == [True, True, False]
        assert hist.to_csv().splitlines()[0] == "phase,task,accuracy"
        assert hist.accuracy(3, "t0") == table[2, 0]

    def test_csv_rows(self):
        hist = LifelongHistory([(1, "a", 0.5), (2, "a", 0.25), (2, "b", 1.0)], tasks=["a", "b"])
        assert hist.to_csv() == "phase,task,accuracy\n1,a,0.5\n2,a,0.25\n2,b,1.0\n"
