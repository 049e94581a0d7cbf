"""Objective, optimiser, training loop and gradient checking."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .data import AugmentConfig, Dataset, augment_images
from .errors import MetricError, ShapeError, UsageError
from .metrics import accuracy, auc_roc
from .model import LoTeNetModel, forward_batch
from .tensor_core import GradTape, Tensor, as_tensor, backward, logsumexp, mean, pick, sub

log = logging.getLogger(__name__)

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 5e-4
    batch_size: int = 512
    patience: int = 5
    max_epochs: int = 100
    seed: int = 0
    precision: str = "wide"
    eval_batch: int = 256

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise UsageError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.batch_size < 1:
            raise UsageError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.patience < 1:
            raise UsageError(f"patience must be >= 1, got {self.patience}")
        if self.max_epochs < 1:
            raise UsageError(f"max_epochs must be >= 1, got {self.max_epochs}")


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    train_auc: float
    val_loss: float
    val_auc: float
    seconds: float


# --------------------------------------------------------------------------
# objective


def cross_entropy(logits, labels) -> Tensor:
    """Mean of ``-log softmax(logits)[label]``, computed via log-sum-exp.

    ``logits`` is ``(M,)`` with an integer label or ``(B, M)`` with one label
    per row.
    """
    t = as_tensor(logits)
    single = t.ndim == 1
    if single:
        t = t.reshape(1, t.shape[0])
    if t.ndim != 2:
        raise ShapeError(f"logits must be (M,) or (B, M), got {t.shape}")
    y = np.atleast_1d(np.asarray(labels))
    if y.shape != (t.shape[0],):
        raise ShapeError(f"{t.shape[0]} rows of logits but {y.size} labels")
    if np.any(y < 0) or np.any(y >= t.shape[1]) or np.any(y != np.round(y)):
        raise UsageError(f"labels must be integers in [0, {t.shape[1]})")
    per_sample = sub(logsumexp(t, axis=1), pick(t, y.astype(np.intp)))
    return mean(per_sample)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


# --------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    first: list[np.ndarray]
    second: list[np.ndarray]
    step: int = 0

    @classmethod
    def zeros_like(cls, params: Sequence) -> "AdamState":
        arrs = [np.asarray(p.data if isinstance(p, Tensor) else p) for p in params]
        return cls([np.zeros_like(a) for a in arrs], [np.zeros_like(a) for a in arrs], 0)


def adam_step(params: Sequence, grads: Sequence, state: AdamState, lr: float) -> tuple[list[np.ndarray], AdamState]:
    """Bias-corrected Adam update; returns new parameter arrays and state."""
    if not (len(params) == len(grads) == len(state.first)):
        raise UsageError(
            f"got {len(params)} parameters, {len(grads)} gradients, {len(state.first)} moment slots"
        )
    t = state.step + 1
    new_params, first, second = [], [], []
    for p, g, m, v in zip(params, grads, state.first, state.second):
        p = np.asarray(p.data if isinstance(p, Tensor) else p)
        g = np.asarray(g, dtype=p.dtype)
        if not (p.shape == g.shape == m.shape == v.shape):
            raise UsageError(f"shape mismatch in adam_step: param {p.shape}, grad {g.shape}, moments {m.shape}")
        m = ADAM_BETA1 * m + (1 - ADAM_BETA1) * g
        v = ADAM_BETA2 * v + (1 - ADAM_BETA2) * (g * g)
        m_hat = m / (1 - ADAM_BETA1**t)
        v_hat = v / (1 - ADAM_BETA2**t)
        new_params.append((p - lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)).astype(p.dtype, copy=False))
        first.append(m.astype(p.dtype, copy=False))
        second.append(v.astype(p.dtype, copy=False))
    return new_params, AdamState(first, second, t)


# --------------------------------------------------------------------------
# evaluation


@dataclass(frozen=True)
class Evaluation:
    loss: float
    auc: float
    accuracy: float
    scores: np.ndarray
    predictions: np.ndarray


def predict_logits(model: LoTeNetModel, images: np.ndarray, batch: int = 256) -> np.ndarray:
    out = [forward_batch(model, images[i:i + batch]).data for i in range(0, len(images), batch)]
    return np.concatenate(out, axis=0)


def evaluate(model: LoTeNetModel, ds: Dataset, batch: int = 256) -> Evaluation:
    """Loss, AUC (on the class-1 probability) and accuracy over ``ds``."""
    logits = predict_logits(model, ds.images, batch).astype(np.float64)
    loss = cross_entropy(logits, ds.labels).item()
    probs = softmax(logits)
    preds = np.argmax(probs, axis=1)
    auc = auc_roc(probs[:, 1], ds.labels == 1) if model.config.classes == 2 else float("nan")
    return Evaluation(loss, auc, accuracy(preds, ds.labels), probs[:, 1] if probs.shape[1] > 1 else probs[:, 0], preds)


# --------------------------------------------------------------------------
# training loop


@dataclass
class FitResult:
    best_model: LoTeNetModel
    final_model: LoTeNetModel
    records: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    best_val_auc: float = float("-inf")


def epoch_order(n: int, seed: int, epoch: int) -> np.ndarray:
    """Shuffle for one epoch from a counter-based generator keyed by (seed, epoch)."""
    gen = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, epoch])))
    return gen.permutation(n)


class EarlyStopping:
    """Tracks the best score; an epoch counts as an improvement only if strictly better."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = float("-inf")
        self.best_epoch = 0
        self.stale = 0

    def update(self, epoch: int, score: float) -> bool:
        if score > self.best:
            self.best, self.best_epoch, self.stale = score, epoch, 0
            return True
        self.stale += 1
        return False

    @property
    def should_stop(self) -> bool:
        return self.stale >= self.patience


def train_step(model: LoTeNetModel, images: np.ndarray, labels: np.ndarray, state: AdamState, lr: float):
    """One optimiser step on a mini-batch; returns (model, state, loss, logits)."""
    params = model.parameters()
    with GradTape() as tape:
        tape.watch(*params)
        logits = forward_batch(model, images)
        loss = cross_entropy(logits, labels)
    grads = backward(tape, loss)
    new_params, state = adam_step(params, [grads[p] for p in params], state, lr)
    return model.with_parameters(new_params), state, loss.item(), logits.data


def fit(
    model: LoTeNetModel,
    train: Dataset,
    val: Dataset,
    config: TrainConfig,
    evaluator: Callable[[LoTeNetModel, Dataset], tuple[float, float]] | None = None,
    augment: AugmentConfig | None = None,
    on_epoch: Callable[[EpochRecord], None] | None = None,
) -> FitResult:
    """Mini-batch Adam with early stopping on validation AUC.

    Training halts once ``patience`` consecutive epochs fail to beat the best
    validation AUC; the parameters from the best epoch are returned.
    ``evaluator(model, val) -> (loss, auc)`` replaces the default validation
    pass when given.
    """
    if len(train) == 0 or len(val) == 0:
        raise UsageError("training and validation sets must be non-empty")
    if model.config.classes != 2:
        raise UsageError("early stopping on AUC needs a binary task (classes=2)")
    if evaluator is None:
        if len(np.unique(val.labels)) < 2:
            raise MetricError("validation set holds a single class; AUC is undefined")

        def evaluator(m, ds):
            ev = evaluate(m, ds, config.eval_batch)
            return ev.loss, ev.auc

    dtype = model.dtype
    state = AdamState.zeros_like(model.parameters())
    stopper = EarlyStopping(config.patience)
    result = FitResult(best_model=model, final_model=model)
    n = len(train)
    for epoch in range(1, config.max_epochs + 1):
        start = time.perf_counter()
        order = epoch_order(n, config.seed, epoch)
        total_loss = 0.0
        scores = np.empty(n)
        for lo in range(0, n, config.batch_size):
            idx = order[lo:lo + config.batch_size]
            images = train.images[idx]
            if augment is not None and augment.enabled:
                images = augment_images(images, train.labels[idx], augment, config.seed, epoch, idx)
            model, state, loss, logits = train_step(
                model, images.astype(dtype, copy=False), train.labels[idx], state, config.learning_rate
            )
            total_loss += loss * len(idx)
            scores[lo:lo + len(idx)] = softmax(logits.astype(np.float64))[:, 1]
        train_labels = train.labels[order]
        try:
            train_auc = auc_roc(scores, train_labels == 1)
        except MetricError:
            train_auc = float("nan")
        val_loss, val_auc = evaluator(model, val)
        record = EpochRecord(epoch, total_loss / n, train_auc, float(val_loss), float(val_auc),
                             time.perf_counter() - start)
        result.records.append(record)
        if on_epoch is not None:
            on_epoch(record)
        log.info("epoch %d train_loss=%.4f val_auc=%.4f", epoch, record.train_loss, record.val_auc)
        if stopper.update(epoch, val_auc):
            result.best_model = model
            result.best_epoch = epoch
            result.best_val_auc = val_auc
        if stopper.should_stop:
            break
    result.final_model = model
    return result


# --------------------------------------------------------------------------
# gradient checking


@dataclass
class GradCheckReport:
    max_rel_error: float
    worst: tuple[int, tuple[int, ...]]
    failures: list[tuple[int, tuple[int, ...], float]]
    checked: int
    tolerance: float

    @property
    def passed(self) -> bool:
        return not self.failures

    def format(self) -> str:
        p, coord = self.worst
        lines = [
            f"checked {self.checked} parameters",
            f"max relative error {self.max_rel_error:.3e} (tolerance {self.tolerance:.1e})",
            f"worst coordinate: parameter {p} index {coord}",
            f"failing coordinates: {len(self.failures)}",
        ]
        for fp, fc, err in self.failures[:10]:
            lines.append(f"  parameter {fp} index {fc}: relative error {err:.3e}")
        lines.append("PASS" if self.passed else "FAIL")
        return "\n".join(lines)


def relative_error(analytic, numeric, floor: float = 1e-6) -> np.ndarray:
    """``|a - n| / max(|a|, |n|, floor)``; the floor keeps near-zero
    gradients from amplifying finite-difference round-off."""
    a, n = np.asarray(analytic), np.asarray(numeric)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def grad_check(
    model: LoTeNetModel,
    images,
    labels,
    tolerance: float = 1e-4,
    step: float = 1e-5,
    perturb: Callable[[list[np.ndarray]], None] | None = None,
) -> GradCheckReport:
    """Compare taped gradients of the cross-entropy with central differences.

    ``perturb`` may edit the parameter arrays after the tape has been run
    and before the finite differences are taken (a negative control).
    """
    if model.dtype != np.float64:
        raise UsageError("gradient checking needs wide (64-bit) precision")
    images = np.asarray(images, dtype=np.float64)
    if images.ndim == 3:
        images = images[None]
    labels = np.atleast_1d(np.asarray(labels))

    params = model.parameters()
    with GradTape() as tape:
        tape.watch(*params)
        loss = cross_entropy(forward_batch(model, images), labels)
    grads = backward(tape, loss)
    analytic = [grads[p] for p in params]

    values = [p.numpy() for p in params]
    if perturb is not None:
        perturb(values)

    live = model.with_parameters(values, copy=False)

    def loss_at() -> float:
        return cross_entropy(forward_batch(live, images), labels).item()

    worst_err, worst = -1.0, (0, ())
    failures = []
    checked = 0
    for pi, arr in enumerate(values):
        for coord in np.ndindex(arr.shape):
            orig = arr[coord]
            arr[coord] = orig + step
            plus = loss_at()
            arr[coord] = orig - step
            minus = loss_at()
            arr[coord] = orig
            numeric = (plus - minus) / (2 * step)
            err = float(relative_error(analytic[pi][coord], numeric))
            checked += 1
            if err > worst_err:
                worst_err, worst = err, (pi, coord)
            if err > tolerance:
                failures.append((pi, coord, err))
    return GradCheckReport(worst_err, worst, failures, checked, tolerance)
