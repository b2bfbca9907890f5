"""Training loops, evaluation and metrics."""

from __future__ import annotations

import io
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from camnet.data.augment import AugmentConfig, augment_batch
from camnet.data.joint import JointDataset
from camnet.engine import functional as F
from camnet.engine.rng import named_rng
from camnet.engine.tensor import backward
from camnet.errors import ContractError, DimensionError, DivergenceError
from camnet.training.optim import make_optimizer

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    optimizer: str = "adam"
    lr: float = 1e-3
    momentum: float = 0.9
    betas: tuple = (0.9, 0.999)
    batch_size: int = 64
    epochs: int = 1
    seed: int = 0
    augment: AugmentConfig = field(default_factory=lambda: AugmentConfig(enabled=False))
    precision: str = "f32"
    checkpoint_path: str | None = None

    def __post_init__(self):
        if self.lr <= 0:
            raise ContractError(f"lr must be > 0, got {self.lr}")
        if self.batch_size < 1:
            raise ContractError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 0:
            raise ContractError(f"epochs must be >= 0, got {self.epochs}")
        if self.precision not in ("f32", "f64"):
            raise ContractError(f"precision must be f32 or f64, got {self.precision!r}")


@dataclass
class EvalResult:
    loss: float
    error: float
    count: int
    per_domain: dict = field(default_factory=dict)  # domain -> (count, loss, error)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    test: EvalResult | None
    wall: float


@dataclass
class Metrics:
    task: str = "classification"
    epochs: list = field(default_factory=list)

    @property
    def train_loss(self):
        return [e.train_loss for e in self.epochs]

    @property
    def test_loss(self):
        return [e.test.loss for e in self.epochs if e.test is not None]

    @property
    def test_error(self):
        return [e.test.error for e in self.epochs if e.test is not None]

    def rows(self):
        out = []
        for e in self.epochs:
            out.append((e.epoch, "train", "all", e.train_loss, None))
            if e.test is not None:
                out.append((e.epoch, "test", "all", e.test.loss, e.test.error))
                for dom in sorted(e.test.per_domain):
                    _, loss, err = e.test.per_domain[dom]
                    out.append((e.epoch, "test", str(dom), loss, err))
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("epoch,split,domain,loss,error\n")
        for epoch, split, dom, loss, err in self.rows():
            buf.write(f"{epoch},{split},{dom},{loss!r},{'' if err is None else repr(err)}\n")
        return buf.getvalue()

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(self.to_csv())


# ---------------------------------------------------------------- helpers

def _arrays(data):
    return data.images, data.labels, data.domains


def _check_head(model, data, task):
    out_shape = model.output_shape
    if task == "classification":
        if not data.is_classification:
            raise ContractError("classification needs integer labels")
        if model.config.get("head") != "softmax":
            raise ContractError("classification needs a softmax head")
        if data.n_classes is not None and out_shape[0] != data.n_classes:
            raise DimensionError(f"model predicts {out_shape[0]} classes, dataset has {data.n_classes}")
    else:
        if data.is_classification:
            raise ContractError("image-to-image training needs target images")
        if model.config.get("head") != "tanh":
            raise ContractError("image-to-image training needs a tanh head")
        if tuple(out_shape) != tuple(data.labels.shape[1:]):
            raise DimensionError(f"model output {out_shape} vs target {data.labels.shape[1:]}")


def _one_hot(labels, n, dtype):
    out = np.zeros((len(labels), n), dtype=dtype)
    out[np.arange(len(labels)), labels] = 1
    return out


def to_signed(targets):
    """[0, 1] target images -> [-1, 1]."""
    return targets * 2.0 - 1.0


def classification_loss(model, xb, yb, head=None):
    probs = model.forward(xb, head=head)
    return F.cross_entropy(probs, _one_hot(yb, probs.shape[-1], probs.dtype))


def translation_loss(model, xb, yb, head=None):
    out = model.forward(xb, head=head)
    return F.mse(out, to_signed(yb).astype(out.dtype))


def evaluate(model, data, head=None, task=None, batch_size=256) -> EvalResult:
    """Loss and error (classification) or mean L2 (image-to-image), split by domain."""
    if data is None:
        return None
    task = task or ("classification" if data.is_classification else "translation")
    _check_head(model, data, task)
    images, labels, domains = _arrays(data)
    n = len(images)
    losses = np.zeros(n)
    wrong = np.zeros(n)
    with F.no_grad():
        for s in range(0, n, batch_size):
            out = model.forward(images[s:s + batch_size], head=head).data.astype(np.float64)
            yb = labels[s:s + batch_size]
            if task == "classification":
                losses[s:s + len(yb)] = -np.log(out[np.arange(len(yb)), yb] + F.CE_EPS)
                wrong[s:s + len(yb)] = out.argmax(axis=1) != yb
            else:
                sq = (out - to_signed(yb.astype(np.float64))) ** 2
                losses[s:s + len(yb)] = sq.reshape(len(yb), -1).mean(axis=1)
                wrong[s:s + len(yb)] = losses[s:s + len(yb)]
    per_domain = {}
    for dom in np.unique(domains):
        sel = domains == dom
        per_domain[int(dom)] = (int(sel.sum()), float(losses[sel].mean()), float(wrong[sel].mean()))
    if n == 0:
        return EvalResult(float("nan"), float("nan"), 0, {})
    return EvalResult(float(losses.mean()), float(wrong.mean()), n, per_domain)


def fit(model, data, cfg: TrainConfig, batch_loss, test=None, task="classification", head=None,
        metrics=None):
    """Mini-batch training shared by every regime.

    ``batch_loss(model, xb, yb, idx)`` returns the scalar loss Tensor of one
    batch; ``idx`` are the batch's indices into ``data``.
    """
    metrics = metrics or Metrics(task)
    images, labels, _ = _arrays(data)
    n = len(images)
    opt = make_optimizer(cfg.optimizer, model.parameters(), cfg.lr, cfg.momentum, cfg.betas)
    shuffle_rng = named_rng(cfg.seed, "shuffle")
    aug_rng = named_rng(cfg.seed, "augment")
    best_err = np.inf
    last_good = model.state_dict()
    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        order = data.order(shuffle_rng) if isinstance(data, JointDataset) else shuffle_rng.permutation(n)
        total = 0.0
        for s in range(0, n, cfg.batch_size):
            idx = order[s:s + cfg.batch_size]
            xb = augment_batch(images[idx], cfg.augment, aug_rng).astype(model.dtype, copy=False)
            loss = batch_loss(model, xb, labels[idx], idx)
            value = loss.item()
            if not np.isfinite(value):
                model.load_state_dict(last_good)
                raise DivergenceError(f"non-finite loss at epoch {epoch}, batch starting {s}", metrics)
            opt.zero_grad()
            backward(loss)
            opt.step()
            total += value * len(idx)
        result = evaluate(model, test, head=head, task=task) if test is not None else None
        metrics.epochs.append(EpochRecord(epoch, total / max(n, 1), result, time.perf_counter() - t0))
        last_good = model.state_dict()
        if result is not None:
            log.info("epoch %d train %.4f test %.4f err %.4f", epoch, total / max(n, 1), result.loss, result.error)
            if result.error < best_err and cfg.checkpoint_path:
                from camnet.training.checkpoint import save_checkpoint
                save_checkpoint(model, cfg.checkpoint_path)
            best_err = min(best_err, result.error)
    return model, metrics


def train_classifier(model, data, cfg: TrainConfig, test=None, head=None):
    """Minimise cross-entropy; returns (model, Metrics)."""
    _check_head(model, data, "classification")

    def batch_loss(m, xb, yb, idx):
        return classification_loss(m, xb, yb, head)

    return fit(model, data, cfg, batch_loss, test, "classification", head)


def train_translator(model, data, cfg: TrainConfig, test=None):
    """Minimise mean squared error against targets rescaled to [-1, 1]."""
    _check_head(model, data, "translation")

    def batch_loss(m, xb, yb, idx):
        return translation_loss(m, xb, yb)

    return fit(model, data, cfg, batch_loss, test, "translation")
