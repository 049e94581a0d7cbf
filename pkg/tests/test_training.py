from decimal import Decimal, getcontext

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lotenet.data import Dataset, split, synth_generate
from lotenet.errors import MetricError, UsageError
from lotenet.model import LoTeNetConfig, forward_batch, init_model
from lotenet.tensor_core import NARROW
from lotenet.training import (
    AdamState,
    EarlyStopping,
    TrainConfig,
    adam_step,
    cross_entropy,
    epoch_order,
    evaluate,
    fit,
    grad_check,
    train_step,
)

TINY = LoTeNetConfig(4, 4, 1, layers=1, kernel=2, bond_dim=2)


def extended_ce(logits, label):
    getcontext().prec = 50
    z = [Decimal(float(v)) for v in logits]
    total = sum(v.exp() for v in z)
    return float(-(z[label].exp() / total).ln())


# --- objective -------------------------------------------------------------

def test_cross_entropy_examples():
    assert cross_entropy(np.zeros(2), 0).item() == pytest.approx(np.log(2), abs=1e-15)
    v = cross_entropy(np.array([10.0, -10.0]), 0).item()
    assert v < 1e-8
    assert v == pytest.approx(2.0611536e-9, rel=1e-6)


@settings(max_examples=100, deadline=None)
@given(st.integers(2, 5), st.integers(0, 2**32 - 1))
def test_cross_entropy_matches_extended_precision(m, seed):
    r = np.random.default_rng(seed)
    logits = r.normal(scale=3.0, size=m)
    for label in range(m):
        want = extended_ce(logits, label)
        got = cross_entropy(logits, label).item()
        assert abs(got - want) <= 1e-12 * max(abs(want), 1e-300) or abs(got - want) <= 1e-15
        assert got >= 0


def test_cross_entropy_uniform_is_log_m():
    for m in (2, 3, 7):
        assert cross_entropy(np.full(m, 1.7), 1).item() == pytest.approx(np.log(m), abs=1e-14)
    assert cross_entropy(np.array([0.1, 0.0]), 1).item() > np.log(2)


def test_cross_entropy_rejects_bad_label():
    with pytest.raises(UsageError):
        cross_entropy(np.zeros(2), 2)
    with pytest.raises(UsageError):
        cross_entropy(np.zeros(2), -1)


def test_cross_entropy_batch_is_mean():
    logits = np.array([[1.0, 2.0], [0.5, -0.5]])
    want = (cross_entropy(logits[0], 0).item() + cross_entropy(logits[1], 1).item()) / 2
    assert cross_entropy(logits, [0, 1]).item() == pytest.approx(want, rel=1e-15)


# --- Adam ------------------------------------------------------------------

def test_adam_zero_gradient_is_identity(rng):
    params = [rng.normal(size=(3, 2)), rng.normal(size=4)]
    new, state = adam_step(params, [np.zeros((3, 2)), np.zeros(4)], AdamState.zeros_like(params), 5e-4)
    for a, b in zip(params, new):
        np.testing.assert_array_equal(a, b)
    assert state.step == 1


@pytest.mark.parametrize("g", [3.0, -0.02, 1e-3])
def test_adam_first_step_magnitude(g):
    lr = 5e-4
    (p,), _ = adam_step([np.array(1.0)], [np.array(g)], AdamState.zeros_like([np.array(1.0)]), lr)
    # m_hat = g, v_hat = g^2 at t = 1
    assert float(p) - 1.0 == pytest.approx(-lr * np.sign(g) * abs(g) / (abs(g) + 1e-8), rel=1e-12)
    assert float(p) - 1.0 == pytest.approx(-lr * np.sign(g), rel=1e-4)


def test_adam_deterministic_and_shape_checked(rng):
    params = [rng.normal(size=3)]
    grads = [rng.normal(size=3)]

    def run():
        p, s = params, AdamState.zeros_like(params)
        for _ in range(5):
            p, s = adam_step(p, grads, s, 1e-2)
        return p[0]

    assert run().tobytes() == run().tobytes()
    with pytest.raises(UsageError):
        adam_step(params, [np.zeros(4)], AdamState.zeros_like(params), 1e-3)


def test_train_config_validation():
    for bad in ({"learning_rate": 0}, {"batch_size": 0}, {"patience": 0}):
        with pytest.raises(UsageError):
            TrainConfig(**bad)
    assert TrainConfig().learning_rate == 5e-4 and TrainConfig().batch_size == 512


# --- training loop ---------------------------------------------------------

def _tiny_data(n=40, seed=0):
    r = np.random.default_rng(seed)
    labels = np.arange(n) % 2
    images = r.uniform(0, 0.3, size=(n, 4, 4, 1))
    images[labels == 1, 1:3, 1:3] += 0.6
    return Dataset(np.clip(images, 0, 1), labels)


def test_epoch_order_is_counter_based():
    a = epoch_order(10, 3, 1)
    assert sorted(a) == list(range(10))
    np.testing.assert_array_equal(a, epoch_order(10, 3, 1))
    assert not np.array_equal(a, epoch_order(10, 3, 2))


def test_early_stopping_strict():
    s = EarlyStopping(2)
    assert s.update(1, 0.5) and not s.update(2, 0.5) and not s.should_stop
    assert not s.update(3, 0.4) and s.should_stop


def test_scripted_sequence_stops_and_returns_best():
    seq = [0.6, 0.7, 0.7, 0.69, 0.7, 0.68, 0.66, 0.7]
    seen = []

    def evaluator(model, ds):
        seen.append(model)
        return 0.5, seq[len(seen) - 1]

    data = _tiny_data()
    result = fit(init_model(TINY, seed=0), data, data, TrainConfig(batch_size=8, patience=5, max_epochs=20),
                 evaluator=evaluator)
    assert [r.epoch for r in result.records] == list(range(1, 8))
    assert result.best_epoch == 2 and result.best_val_auc == 0.7
    assert result.best_model is seen[1]
    assert result.final_model is seen[6]


def test_max_epochs_one():
    data = _tiny_data()
    result = fit(init_model(TINY, seed=0), data, data, TrainConfig(batch_size=8, max_epochs=1))
    assert len(result.records) == 1


def test_single_class_validation_rejected():
    data = _tiny_data()
    one = data.subset(np.flatnonzero(data.labels == 1))
    with pytest.raises(MetricError):
        fit(init_model(TINY, seed=0), data, one, TrainConfig(max_epochs=1))


def test_fit_needs_binary_task():
    cfg = LoTeNetConfig(4, 4, 1, layers=1, kernel=2, bond_dim=2, classes=3)
    data = _tiny_data()
    with pytest.raises(UsageError):
        fit(init_model(cfg, seed=0), data, data, TrainConfig(max_epochs=1))


def test_fit_is_deterministic():
    data = _tiny_data(60, seed=2)
    train, val = split(data, [0.5, 0.5], seed=0)
    cfg = TrainConfig(batch_size=8, max_epochs=4, seed=3)

    def run():
        res = fit(init_model(TINY, seed=1), train, val, cfg)
        return [(r.train_loss, r.train_auc, r.val_loss, r.val_auc) for r in res.records], res

    a, ra = run()
    b, rb = run()
    assert a == b
    for p, q in zip(ra.best_model.parameters(), rb.best_model.parameters()):
        assert p.data.tobytes() == q.data.tobytes()


def test_best_model_has_best_validation_auc():
    data = _tiny_data(60, seed=4)
    train, val = split(data, [0.5, 0.5], seed=0)
    res = fit(init_model(TINY, seed=1), train, val, TrainConfig(batch_size=4, max_epochs=6, patience=2))
    assert res.best_val_auc == max(r.val_auc for r in res.records)
    assert evaluate(res.best_model, val).auc == pytest.approx(res.best_val_auc, abs=1e-12)


def test_loss_decreases_on_fixed_batch():
    ds = synth_generate(64, 16, seed=1)
    model = init_model(LoTeNetConfig(16, 16, 1, layers=2, kernel=2, bond_dim=5), seed=0)
    state = AdamState.zeros_like(model.parameters())
    losses = []
    for _ in range(11):
        model, state, loss, _ = train_step(model, ds.images, ds.labels, state, 5e-4)
        losses.append(loss)
    assert all(b < a for a, b in zip(losses, losses[1:]))


def test_narrow_precision_trains():
    data = _tiny_data()
    model = init_model(TINY, seed=0, dtype=NARROW)
    res = fit(model, data, data, TrainConfig(batch_size=8, max_epochs=2, precision="narrow"))
    assert res.best_model.dtype == np.float32
    assert forward_batch(res.best_model, data.images[:2]).dtype == np.float32


# --- gradient checking -----------------------------------------------------

def test_grad_check_passes_on_small_model():
    model = init_model(LoTeNetConfig(4, 4, 1, layers=1, kernel=2, bond_dim=3), seed=0, noise=0.3)
    img = np.random.default_rng(0).uniform(size=(4, 4, 1))
    report = grad_check(model, img, 1)
    assert report.passed and report.max_rel_error <= 1e-4
    assert report.checked == model.param_count


def test_grad_check_flags_perturbed_parameter():
    model = init_model(LoTeNetConfig(4, 4, 1, layers=1, kernel=2, bond_dim=3), seed=0, noise=0.3)
    img = np.random.default_rng(0).uniform(size=(4, 4, 1))

    def perturb(values):
        values[2][1, 0, 1] += 0.5

    report = grad_check(model, img, 1, perturb=perturb)
    assert not report.passed
    assert any(p == 2 for p, _, _ in report.failures)
    assert "worst coordinate: parameter" in report.format() and report.format().endswith("FAIL")


def test_grad_check_zero_image_finite():
    model = init_model(LoTeNetConfig(4, 4, 1, layers=1, kernel=2, bond_dim=2), seed=0, noise=0.0)
    report = grad_check(model, np.zeros((4, 4, 1)), 0)
    assert np.isfinite(report.max_rel_error)


def test_grad_check_needs_wide():
    model = init_model(TINY, seed=0, dtype=NARROW)
    with pytest.raises(UsageError):
        grad_check(model, np.zeros((4, 4, 1)), 0)
