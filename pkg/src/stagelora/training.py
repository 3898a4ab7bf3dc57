"""Two-stage adapter fine-tuning: stage configs, optimizers, the stage transition."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Node
from .categories import BASIC_LABELS, RAFDB_COMPOUND_LABELS
from .errors import ContractError, DataError, DimensionError, StateError
from .lora import merge
from .model import (
    ClassifierNet,
    _as_input,
    argmax_first,
    attach_adapters,
    build_net,
    copy_net,
    forward_node,
    predict,
    swap_head,
)
from .seeding import derive_seed, fisher_yates
from .synth import ExampleRecord

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class StageConfig:
    stage_id: int
    rank: int
    learning_rate: float
    epochs: int
    batch_size: int
    label_set: tuple[str, ...]
    seed: int = 0
    optimizer: str = "adam"
    momentum: float = 0.0
    scale: float = 1.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "label_set", tuple(self.label_set))
        if self.stage_id not in (1, 2):
            raise ContractError(f"stage_id must be 1 or 2, got {self.stage_id}")
        if self.rank < 1:
            raise ContractError(f"rank must be positive, got {self.rank}")
        # 0 is allowed as an explicit null update
        if self.learning_rate < 0:
            raise ContractError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.epochs < 0 or self.batch_size < 1:
            raise ContractError("epochs must be >= 0 and batch_size >= 1")
        if self.optimizer not in OPTIMIZERS:
            raise ContractError(f"unknown optimizer {self.optimizer!r}; choose from {sorted(OPTIMIZERS)}")
        if not 0.0 <= self.momentum < 1.0:
            raise ContractError(f"momentum must be in [0, 1), got {self.momentum}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["label_set"] = list(self.label_set)
        return d


def stage1_defaults(seed: int = 0, label_set: Sequence[str] = BASIC_LABELS) -> StageConfig:
    return StageConfig(1, rank=16, learning_rate=1e-4, epochs=20, batch_size=1, label_set=tuple(label_set), seed=seed)


def stage2_defaults(seed: int = 0, label_set: Sequence[str] = RAFDB_COMPOUND_LABELS) -> StageConfig:
    return StageConfig(2, rank=8, learning_rate=1e-4, epochs=10, batch_size=1, label_set=tuple(label_set), seed=seed)


@dataclass(frozen=True)
class TrainRecord:
    epoch: int
    mean_loss: float
    train_accuracy: float

    def log_line(self) -> str:
        return f"epoch={self.epoch} loss={self.mean_loss:.6f} acc={self.train_accuracy:.6f}"


@dataclass
class SGD:
    """Plain SGD with optional heavy-ball momentum (default off)."""

    lr: float
    momentum: float = 0.0
    _velocity: dict[int, np.ndarray] = field(default_factory=dict, repr=False)

    def step(self, params: Sequence[Node], grads: Sequence[np.ndarray] | None = None) -> None:
        grads = [p.grad for p in params] if grads is None else grads
        if self.momentum == 0.0:
            sgd_step(params, grads, self.lr)
            return
        steps = []
        for p, g in zip(params, grads):
            v = self._velocity.get(id(p))
            v = g.copy() if v is None else self.momentum * v + g
            self._velocity[id(p)] = v
            steps.append(v)
        sgd_step(params, steps, self.lr)


@dataclass
class Adam:
    """Adam with bias correction; only ``requires_grad`` tensors move."""

    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    _m: dict[int, np.ndarray] = field(default_factory=dict, repr=False)
    _v: dict[int, np.ndarray] = field(default_factory=dict, repr=False)
    _t: int = 0

    def step(self, params: Sequence[Node], grads: Sequence[np.ndarray] | None = None) -> None:
        grads = [p.grad for p in params] if grads is None else grads
        if self.lr == 0:
            return
        self._t += 1
        c1 = 1.0 - self.beta1**self._t
        c2 = 1.0 - self.beta2**self._t
        for p, g in zip(params, grads):
            if not p.requires_grad:
                continue
            if p.shape != np.shape(g):
                raise DimensionError(f"param {p.name or ''} shape {p.shape} vs gradient {np.shape(g)}")
            key = id(p)
            m = self._m.get(key)
            v = self._v.get(key)
            m = (1.0 - self.beta1) * g if m is None else self.beta1 * m + (1.0 - self.beta1) * g
            v = (1.0 - self.beta2) * g * g if v is None else self.beta2 * v + (1.0 - self.beta2) * g * g
            self._m[key], self._v[key] = m, v
            p.value -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


OPTIMIZERS = ("adam", "sgd")


def make_optimizer(config: StageConfig) -> SGD | Adam:
    if config.optimizer == "sgd":
        return SGD(config.learning_rate, config.momentum)
    return Adam(config.learning_rate)


def sgd_step(params: Sequence[Node], grads: Sequence[np.ndarray], lr: float) -> None:
    """In place ``p <- p - lr * g`` for every trainable ``p``; frozen tensors are skipped."""
    if lr < 0:
        raise ContractError(f"learning rate must be >= 0, got {lr}")
    if len(params) != len(grads):
        raise DimensionError(f"{len(params)} params but {len(grads)} gradients")
    for p, g in zip(params, grads):
        if p.shape != np.shape(g):
            raise DimensionError(f"param {p.name or ''} shape {p.shape} vs gradient {np.shape(g)}")
    if lr == 0:
        return
    for p, g in zip(params, grads):
        if p.requires_grad:
            p.value -= lr * np.asarray(g, dtype=np.float64)


def _check_stage_inputs(net: ClassifierNet, config: StageConfig, data: Sequence[ExampleRecord]) -> None:
    if net.active_labels != config.label_set:
        raise ContractError(
            f"network head labels {list(net.active_labels)} do not match stage labels {list(config.label_set)}"
        )
    if any(layer.adapter is None for layer in net.backbone):
        raise StateError("every backbone layer needs an adapter before training")
    allowed = set(config.label_set)
    for rec in data:
        if rec.label not in allowed:
            raise DataError(f"record {rec.id!r} has label {rec.label!r} outside stage {config.stage_id} labels")
        if len(rec.features) != net.d_in:
            raise DataError(f"record {rec.id!r} has {len(rec.features)} features, network expects {net.d_in}")


def run_stage(
    net: ClassifierNet,
    config: StageConfig,
    data: Sequence[ExampleRecord],
    on_epoch: Callable[[TrainRecord], None] | None = None,
) -> tuple[ClassifierNet, list[TrainRecord]]:
    """Train adapters and head on ``data``; returns a new network and per-epoch records.

    Base backbone weights are never touched. Examples are visited in a seeded
    Fisher-Yates order reshuffled every epoch.
    """
    _check_stage_inputs(net, config, data)
    net = copy_net(net)
    if config.epochs == 0 or not data:
        return net, []

    index = {label: i for i, label in enumerate(config.label_set)}
    inputs = [_as_input(r.features) for r in data]
    targets = [index[r.label] for r in data]
    params = net.trainable_parameters()
    opt = make_optimizer(config)
    rng = np.random.default_rng(derive_seed(config.seed, "shuffle", config.stage_id))
    bs = config.batch_size

    records = []
    for epoch in range(1, config.epochs + 1):
        order = fisher_yates(len(data), rng)
        losses = []
        correct = 0
        for start in range(0, len(order), bs):
            batch = order[start : start + bs]
            for p in params:
                p.zero_grad()
            for i in batch:
                with ad.Tape() as tape:
                    logits = forward_node(net, inputs[i])
                    loss = ad.softmax_cross_entropy(logits, targets[i])
                    tape.backward(loss)
                losses.append(float(loss.value[0, 0]))
                correct += argmax_first(logits.value.reshape(-1)) == targets[i]
            grads = [p.grad / len(batch) for p in params] if len(batch) > 1 else None
            opt.step(params, grads)
        # fsum makes the epoch mean independent of visiting order
        rec = TrainRecord(epoch, math.fsum(losses) / len(data), correct / len(data))
        records.append(rec)
        log.info(rec.log_line())
        if on_epoch is not None:
            on_epoch(rec)
    return net, records


def new_stage_net(
    config: StageConfig,
    d_in: int = 16,
    hidden: Sequence[int] = (64, 32),
    base_seed: int = 0,
) -> ClassifierNet:
    """Base network for ``config.label_set`` with fresh rank-``config.rank`` adapters."""
    net = build_net(config.label_set, d_in=d_in, hidden=hidden, seed=base_seed)
    attach_adapters(net, config.rank, derive_seed(config.seed, "adapters", config.stage_id), config.scale)
    return net


def transition(net: ClassifierNet, stage2: StageConfig) -> ClassifierNet:
    """Merge stage-1 adapters into the backbone, install fresh stage-2 adapters, swap the head."""
    if not net.backbone or any(layer.adapter is None for layer in net.backbone):
        raise StateError("transition needs a network with stage-1 adapters on every backbone layer")
    merged = ClassifierNet([merge(layer) for layer in net.backbone], net.head, net.active_labels)
    out = swap_head(merged, stage2.label_set, derive_seed(stage2.seed, "head", stage2.stage_id))
    attach_adapters(out, stage2.rank, derive_seed(stage2.seed, "adapters", stage2.stage_id), stage2.scale)
    return out


def accuracy(net: ClassifierNet, data: Sequence[ExampleRecord]) -> float:
    if not data:
        return 0.0
    return sum(predict(net, r.features) == r.label for r in data) / len(data)


def with_epochs(config: StageConfig, epochs: int) -> StageConfig:
    return replace(config, epochs=epochs)
