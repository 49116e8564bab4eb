"""Plain minibatch SGD with geometric learning-rate decay and early stopping."""

import logging
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, InputError, ParameterError, ShapeError
from .model import ModelParams, backward, evaluate, forward

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class OptimConfig:
    initial_lr: float = 0.1
    decay: float = 0.5
    lr_floor: float = 1e-5
    minibatch: int = 128
    momentum: float = 0.0
    patience: int = 1
    max_epochs: int = 15

    def validate(self):
        if not 0 < self.decay < 1:
            raise ConfigError(f"decay must lie in (0, 1), got {self.decay}")
        if not self.lr_floor > 0 or not self.initial_lr > 0:
            raise ConfigError("initial_lr and lr_floor must be positive")
        if self.minibatch < 1:
            raise ConfigError(f"minibatch must be >= 1, got {self.minibatch}")
        if self.momentum != 0:
            raise ConfigError("momentum is not supported; it must be 0")
        if self.patience < 1 or self.max_epochs < 0:
            raise ConfigError("patience must be >= 1 and max_epochs >= 0")
        return self


@dataclass
class TrainState:
    """Bookkeeping between epochs. ``epoch`` is the next epoch to run (1-based)."""

    epoch: int = 1
    lr: float = 0.1
    best_dev_loss: float = math.inf
    epochs_since_improvement: int = 0
    rng_seed: int = 0
    stopped: bool = False


@dataclass
class EpochRecord:
    epoch: int
    lr: float
    train_loss: float
    dev_loss: float
    dev_acc: float
    seconds: float

    COLUMNS = ("epoch", "lr", "train_loss", "dev_loss", "dev_acc", "seconds")

    def deterministic_fields(self):
        return (self.epoch, self.lr, self.train_loss, self.dev_loss, self.dev_acc)

    def line(self):
        return "\t".join(
            [str(self.epoch), repr(self.lr), repr(self.train_loss), repr(self.dev_loss),
             repr(self.dev_acc), f"{self.seconds:.3f}"]
        )


@dataclass
class TrainResult:
    params: ModelParams  # best-dev parameters
    last_params: ModelParams
    log: list = field(default_factory=list)
    state: TrainState = None


def lr_at(config, epoch):
    if epoch < 1:
        raise ParameterError(f"epochs are 1-based, got {epoch}")
    return max(config.initial_lr * config.decay ** (epoch - 1), config.lr_floor)


def sgd_step(params, grads, lr):
    """``w - lr * g`` for every block; returns new arrays, inputs untouched."""
    if not lr > 0:
        raise ParameterError(f"learning rate must be positive, got {lr}")
    out = []
    for name, w in params.items():
        if name not in grads:
            raise ShapeError(f"no gradient for block {name}")
        g = grads[name]
        if g.shape != w.shape:
            raise ShapeError(f"block {name}: gradient {g.shape} vs parameter {w.shape}")
        out.append((name, w - w.dtype.type(lr) * g))
    return ModelParams(out)


def epoch_order(n, seed, epoch, stream=0):
    """Seeded minibatch order for one pass; ``stream`` separates ASGD shards."""
    return np.random.default_rng([seed, stream, epoch]).permutation(n)


def minibatches(order, size):
    return [order[i : i + size] for i in range(0, len(order), size)]


def initial_state(optim, seed=0):
    return TrainState(epoch=1, lr=lr_at(optim, 1), rng_seed=seed)


def advance(state, optim, dev_loss):
    """Update early-stopping bookkeeping after an epoch. Returns True if dev improved."""
    improved = dev_loss < state.best_dev_loss
    if improved:
        state.best_dev_loss = dev_loss
        state.epochs_since_improvement = 0
    else:
        state.epochs_since_improvement += 1
    state.epoch += 1
    state.lr = lr_at(optim, state.epoch)
    if state.epochs_since_improvement >= optim.patience or state.epoch > optim.max_epochs:
        state.stopped = True
    return improved


def train(
    model_config,
    params,
    train_set,
    dev_set,
    optim,
    state=None,
    best_params=None,
    seed=0,
    on_epoch=None,
):
    """Run epochs until early stopping or ``optim.max_epochs``.

    Passing ``state`` (and ``best_params``) from a checkpoint resumes a run.
    ``on_epoch(record, state, params, best_params)`` is called after each
    epoch, e.g. to write the log line and a checkpoint.
    """
    optim.validate()
    if len(train_set) == 0 or len(dev_set) == 0:
        raise InputError("training and dev sets must be nonempty")
    if state is None:
        state = initial_state(optim, seed)
    else:
        # work on a copy so the caller's (e.g. a loaded checkpoint's) state is
        # untouched; a resumed run may carry a larger epoch budget
        state = replace(
            state, stopped=state.epochs_since_improvement >= optim.patience or state.epoch > optim.max_epochs
        )
    best = best_params if best_params is not None else params
    history = []
    n = len(train_set)

    while not state.stopped and state.epoch <= optim.max_epochs:
        started = time.perf_counter()
        epoch = state.epoch
        lr = lr_at(optim, epoch)
        loss_sum = 0.0
        for idx in minibatches(epoch_order(n, state.rng_seed, epoch), optim.minibatch):
            probs, cache = forward(params, model_config, train_set.windows[idx])
            loss, grads = backward(params, model_config, cache, train_set.targets[idx])
            params = sgd_step(params, grads, lr)
            loss_sum += loss * len(idx)
        dev_loss, dev_acc = evaluate(params, model_config, dev_set.windows, dev_set.targets)
        record = EpochRecord(epoch, lr, loss_sum / n, dev_loss, dev_acc, time.perf_counter() - started)
        history.append(record)
        if advance(state, optim, dev_loss):
            best = params
        log.info("epoch %s", record.line())
        if on_epoch is not None:
            on_epoch(record, state, params, best)

    return TrainResult(params=best, last_params=params, log=history, state=state)
