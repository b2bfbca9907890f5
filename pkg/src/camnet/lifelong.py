"""Sequential multi-dataset training with frozen old heads and distillation.

Each task owns a head (the trailing routing-dense layers). When a new task
arrives, every existing head is frozen, a fresh head is appended, and the
old heads' temperature-softened outputs on the new task's images are
recorded. Training then minimises the new head's cross-entropy plus
``lambda_old`` times the distillation term for every old head, so the shared
trunk is pulled towards keeping the old heads' behaviour without any old data.
"""

from __future__ import annotations

import dataclasses
import io
from dataclasses import dataclass, field

import numpy as np

from camnet.engine import functional as F
from camnet.errors import ContractError, DimensionError
from camnet.training.loops import TrainConfig, _check_head, _one_hot, evaluate, fit


@dataclass
class LwFConfig:
    lambda_old: float = 1.0
    temperature: float = 2.0
    order: tuple = ()

    def __post_init__(self):
        if self.lambda_old < 0:
            raise ContractError(f"lambda_old must be >= 0, got {self.lambda_old}")
        if self.temperature <= 0:
            raise ContractError(f"temperature must be > 0, got {self.temperature}")


def add_task_head(model, n_classes=None):
    """Give the next task a trainable head; all earlier heads are frozen.

    The first task reuses the head the model was built with.
    """
    if n_classes is not None and n_classes != model.config.get("n_classes"):
        raise ContractError(f"task heads share the trunk's class count "
                            f"({model.config.get('n_classes')}), got {n_classes}")
    if model.n_tasks == 0:
        model.n_tasks = 1
        model.active_head = 0
        return model
    for h in range(len(model.heads)):
        model.freeze_head(h)
    if model.n_tasks >= len(model.heads):
        model.add_head()
    model.active_head = model.n_tasks
    model.n_tasks += 1
    return model


def record_soft_targets(model, images, temperature=2.0, batch_size=256) -> dict:
    """{old head index: (N, C) softmax(logits / T)} on unaugmented images."""
    old = [h for h in range(len(model.heads)) if h != model.active_head and h < max(model.n_tasks, 1)]
    if not old:
        return {}
    images = getattr(images, "images", images)
    table = {h: [] for h in old}
    with F.no_grad():
        for s in range(0, len(images), batch_size):
            outs = model.forward_heads(images[s:s + batch_size], old, logits=True)
            for h, z in zip(old, outs):
                table[h].append(_softmax_np(z.data / temperature))
    return {h: np.concatenate(v) for h, v in table.items()}


def _softmax_np(z):
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def distillation_loss(recorded, current, temperature):
    """-T^2 * mean over rows of sum(p_recorded * log q_current).

    ``current`` is a probability Tensor at the same temperature.
    """
    rec = np.asarray(recorded)
    if tuple(rec.shape) != tuple(current.shape):
        raise DimensionError(f"recorded targets {rec.shape} vs current probabilities {current.shape}")
    return F.cross_entropy(current, rec.astype(current.dtype)) * (temperature ** 2)


def lwf_loss(model, xb, yb, soft_batch, lam, temperature):
    """New-head cross-entropy plus lam * distillation over old heads."""
    t, _ = model._prepare(xb)
    paths = model.run_trunk(t)
    probs = model.run_head(paths, model.active_head)
    total = F.cross_entropy(probs, _one_hot(yb, probs.shape[-1], probs.dtype))
    if soft_batch:
        distill = None
        for h in sorted(soft_batch):
            z = model.run_head(paths, h, logits=True)
            q = F.softmax(z * (1.0 / temperature))
            d = distillation_loss(soft_batch[h], q, temperature)
            distill = d if distill is None else distill + d
        total = total + distill * lam
    return total


def lwf_train(model, dataset, cfg: LwFConfig, train_cfg: TrainConfig, test=None, soft=None):
    """One phase: train the active head (and trunk) on ``dataset``."""
    _check_head(model, dataset, "classification")
    if soft is None:
        soft = record_soft_targets(model, dataset.images, cfg.temperature)
    for h, tab in soft.items():
        if len(tab) != len(dataset):
            raise DimensionError(f"soft targets for head {h} cover {len(tab)} images, dataset has {len(dataset)}")
    frozen_before = {h: [p.data.copy() for p in model.head_parameters(h)] for h in soft}

    def batch_loss(m, xb, yb, idx):
        return lwf_loss(m, xb, yb, {h: tab[idx] for h, tab in soft.items()}, cfg.lambda_old, cfg.temperature)

    model, metrics = fit(model, dataset, train_cfg, batch_loss, test, "classification", model.active_head)
    for h, before in frozen_before.items():
        for a, p in zip(before, model.head_parameters(h)):
            if not np.array_equal(a, p.data):
                raise ContractError(f"frozen head {h} changed during training")
    return model, metrics


@dataclass
class LifelongHistory:
    rows: list = field(default_factory=list)  # (phase, task, accuracy)
    metrics: list = field(default_factory=list)
    tasks: list = field(default_factory=list)

    def table(self):
        """Lower-triangular accuracy matrix, NaN above the diagonal."""
        k = len(self.tasks)
        out = np.full((k, k), np.nan)
        for phase, task, acc in self.rows:
            out[phase - 1, self.tasks.index(task)] = acc
        return out

    def accuracy(self, phase, task):
        for p, t, acc in self.rows:
            if p == phase and t == task:
                return acc
        raise KeyError((phase, task))

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("phase,task,accuracy\n")
        for phase, task, acc in self.rows:
            buf.write(f"{phase},{task},{acc!r}\n")
        return buf.getvalue()

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            fh.write(self.to_csv())


def run_lifelong(model, phases, cfg: LwFConfig, train_cfg: TrainConfig) -> tuple:
    """``phases`` is a list of (name, train_set, test_set) in training order.

    After every phase all heads trained so far are scored on their own test
    sets, so phase k contributes k history rows.
    """
    history = LifelongHistory()
    tests = []
    for k, (name, train_set, test_set) in enumerate(phases, start=1):
        add_task_head(model, train_set.n_classes)
        history.tasks.append(name)
        tests.append(test_set)
        phase_cfg = dataclasses.replace(train_cfg, seed=train_cfg.seed + k - 1)
        model, metrics = lwf_train(model, train_set, cfg, phase_cfg, test=test_set)
        history.metrics.append(metrics)
        for h, (task, ts) in enumerate(zip(history.tasks, tests)):
            res = evaluate(model, ts, head=h, task="classification")
            history.rows.append((k, task, 1.0 - res.error))
    return model, history
