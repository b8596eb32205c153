"""SGD with momentum, learning-rate decay, clipping, early stopping and adversarial loss."""
from __future__ import annotations

import enum
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .data import Availability, Corpus
from .errors import ConfigError
from .evaluation import span_f1
from .models import Batch, Model, make_batch
from .tensor import Tensor, add, backward, gradients


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.01
    decay: float = 0.05
    momentum: float = 0.9
    batch_size: int = 10
    clip: float = 5.0
    patience: int = 30
    min_epochs: int = 120
    max_epochs: int = 300
    seed: int = 0
    adversarial: bool = False
    epsilon: float = 0.05
    adversarial_mode: str = "l2"

    def validate(self) -> None:
        if not self.lr > 0 or self.decay < 0 or not 0 <= self.momentum < 1:
            raise ConfigError("need lr > 0, decay >= 0 and momentum in [0, 1)")
        if self.batch_size < 1 or self.clip <= 0:
            raise ConfigError("batch_size and clip must be positive")
        if self.patience < 1 or self.min_epochs < 0 or self.max_epochs < 1:
            raise ConfigError("patience and max_epochs must be positive")
        if self.adversarial and not (np.isfinite(self.epsilon) and self.epsilon > 0):
            raise ConfigError("adversarial epsilon must be finite and positive")
        if self.adversarial_mode not in ("l2", "sign"):
            raise ConfigError(f"unknown adversarial mode {self.adversarial_mode!r}")


def lr_at_epoch(base_lr: float, decay: float, epoch: int) -> float:
    """base_lr / (1 + epoch * decay), with epoch counted from 0."""
    if epoch < 0:
        raise ConfigError("epoch must be nonnegative")
    return base_lr / (1.0 + epoch * decay)


def clip_gradients(params, bound: float = 5.0) -> None:
    for p in params:
        if p.grad is not None:
            np.clip(p.grad, -bound, bound, out=p.grad)


@dataclass
class OptimizerState:
    momentum: float = 0.9
    velocity: dict = field(default_factory=dict)


def sgd_momentum_step(state: OptimizerState, params, lr: float) -> None:
    """v <- momentum * v + g; p <- p - lr * v; then clear gradients.

    A parameter without a gradient counts as a zero gradient. Entries fixed at
    -inf (forbidden CRF transitions) stay there.
    """
    for p in params:
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        v = state.velocity.get(id(p))
        if v is None:
            v = np.zeros_like(p.data)
        v *= state.momentum
        v += g
        state.velocity[id(p)] = v
        finite = np.isfinite(p.data)
        if finite.all():
            p.data -= lr * v
        else:
            p.data[finite] -= lr * v[finite]
        p.grad = None


class Decision(enum.Enum):
    CONTINUE = "Continue"
    STOP = "Stop"


@dataclass
class EarlyStopState:
    patience: int = 30
    min_epochs: int = 120
    best_dev_f1: float = -np.inf
    best_epoch: int = 0


def early_stop_check(state: EarlyStopState, epoch: int, dev_f1: float) -> Decision:
    if dev_f1 > state.best_dev_f1:
        state.best_dev_f1 = dev_f1
        state.best_epoch = epoch
    if epoch >= state.min_epochs and epoch - state.best_epoch >= state.patience:
        return Decision.STOP
    return Decision.CONTINUE


# -- adversarial training ---------------------------------------------------------------
def adversarial_perturbation(model: Model, batch: Batch, epsilon: float, dropout_seed=None, mode: str = "l2"):
    """Clean loss and the worst-case-direction perturbation of the token representations.

    Returns ``(clean_loss, delta)``; ``delta`` is None when the gradient vanishes.
    """
    rng = None if dropout_seed is None else np.random.default_rng(dropout_seed)
    outputs = model.forward(batch, rng=rng)
    clean = model.joint_loss(outputs)
    emb = outputs.embeddings.retain_grad()
    (g,) = gradients(clean, [emb])
    if mode == "sign":
        delta = epsilon * np.sign(g)
        return clean, (delta if np.any(g) else None)
    norm = float(np.sqrt(np.sum(g * g)))
    if norm == 0.0:
        return clean, None
    return clean, epsilon * g / norm


def adversarial_loss(model: Model, batch: Batch, epsilon: float, dropout_seed=None, mode: str = "l2") -> Tensor:
    """Clean loss plus the loss re-evaluated at the perturbed representations (same dropout masks)."""
    clean, delta = adversarial_perturbation(model, batch, epsilon, dropout_seed, mode)
    if delta is None:
        return clean
    rng = None if dropout_seed is None else np.random.default_rng(dropout_seed)
    return add(clean, model.loss(batch, rng=rng, perturbation=delta))


# -- loop -----------------------------------------------------------------------------------
@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    loss: float
    dev_f1: float
    seconds: float = 0.0

    def line(self) -> str:
        return f"{self.epoch}\t{self.loss:.6f}\t{self.dev_f1:.6f}"


@dataclass
class TrainResult:
    model: Model
    history: list
    best_epoch: int
    best_dev_f1: float
    stopped_early: bool

    @property
    def dev_curve(self) -> list:
        return [r.dev_f1 for r in self.history]

    def log_text(self) -> str:
        return "".join(r.line() + "\n" for r in self.history)


def evaluate_full(model: Model, corpus: Corpus):
    preds = model.predict(list(corpus))
    return span_f1([s.full_labels() for s in corpus], preds, "Full")


def train(
    model: Model,
    train_corpus: Corpus,
    dev_corpus: Corpus,
    config: TrainConfig = TrainConfig(),
    on_epoch: Callable[[EpochRecord], None] | None = None,
) -> TrainResult:
    """Mini-batch training with per-epoch dev evaluation; restores the best dev epoch at the end."""
    config.validate()
    if len(train_corpus) == 0 or len(dev_corpus) == 0:
        raise ConfigError("training and dev corpora must be nonempty")
    if not dev_corpus.fully_labeled:
        raise ConfigError("dev corpus must be fully labeled")
    for s in train_corpus:
        if s.availability is Availability.NONE:
            raise ConfigError(f"training sentence {s.sid} has no labels")
        if not model.variant.modular and s.availability is not Availability.FULL:
            raise ConfigError(f"{model.variant.value} cannot train on {s.availability.value} sentences")
    examples = model.prepare_all(model.vocab.index(train_corpus))
    dev = model.vocab.index(dev_corpus)
    params = model.trainable_parameters()
    opt = OptimizerState(config.momentum)
    stop = EarlyStopState(config.patience, config.min_epochs)
    shuffle_rng = np.random.default_rng(config.seed)
    seed_rng = np.random.default_rng([config.seed, 1])
    history, best_state, stopped = [], model.state(), False
    for epoch in range(1, config.max_epochs + 1):
        started = time.perf_counter()
        lr = lr_at_epoch(config.lr, config.decay, epoch - 1)
        order = shuffle_rng.permutation(len(examples))
        total = 0.0
        for start in range(0, len(order), config.batch_size):
            batch = make_batch([examples[i] for i in order[start : start + config.batch_size]])
            dropout_seed = int(seed_rng.integers(2**63 - 1))
            if config.adversarial:
                loss = adversarial_loss(model, batch, config.epsilon, dropout_seed, config.adversarial_mode)
            else:
                loss = model.loss(batch, rng=np.random.default_rng(dropout_seed))
            backward(loss)
            clip_gradients(params, config.clip)
            sgd_momentum_step(opt, params, lr)
            total += loss.item() * len(batch)
        dev_f1 = evaluate_full(model, dev).f1
        record = EpochRecord(epoch, total / len(examples), dev_f1, time.perf_counter() - started)
        history.append(record)
        if on_epoch is not None:
            on_epoch(record)
        improved = dev_f1 > stop.best_dev_f1
        decision = early_stop_check(stop, epoch, dev_f1)
        if improved:
            best_state = model.state()
        if decision is Decision.STOP:
            stopped = True
            break
    model.load_state(best_state)
    return TrainResult(model, history, stop.best_epoch, stop.best_dev_f1, stopped)
