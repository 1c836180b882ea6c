"""Training loops: mini-batch Adam with early stopping on validation loss."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .models import (
    DEFAULT_DROPOUT,
    DEFAULT_HIDDEN,
    N_CLASSES,
    AdamOptimizer,
    LinearModel,
    MLPModel,
    clone_state,
    cross_entropy,
)

HEAD_LINEAR = "linear"
HEAD_MLP = "mlp"
HEADS = (HEAD_LINEAR, HEAD_MLP)


class TrainingDivergedError(RuntimeError):
    """Raised when the objective stops being finite."""


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_epsilon: float = 1e-8
    batch_size: int = 64
    max_epochs: int = 200
    patience: int = 20
    # decay policy: applied to the linear head only; the MLP trains without it
    weight_decay: float = 1e-4
    seed: int = 0

    def __post_init__(self) -> None:
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        for name in ("beta1", "beta2"):
            v = getattr(self, name)
            if not 0.0 <= v < 1.0:
                raise ValueError(f"{name} must be in [0, 1), got {v}")
        if self.adam_epsilon <= 0:
            raise ValueError(f"adam_epsilon must be positive, got {self.adam_epsilon}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.max_epochs < 0:
            raise ValueError(f"max_epochs must be >= 0, got {self.max_epochs}")
        if self.patience < 0:
            raise ValueError(f"patience must be >= 0, got {self.patience}")
        if self.weight_decay < 0:
            raise ValueError(f"weight_decay must be >= 0, got {self.weight_decay}")


@dataclass
class TrainingTrace:
    """Per-epoch losses plus where early stopping settled.

    `best_epoch` is 1-based; 0 means no epoch ran.  The weights returned
    alongside a trace are the snapshot taken at `best_epoch`.
    """

    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    best_epoch: int = 0
    best_val_loss: float = float("nan")
    stopped_epoch: int = 0

    def as_dict(self) -> dict:
        return {
            "train_loss": [float(v) for v in self.train_loss],
            "val_loss": [float(v) for v in self.val_loss],
            "best_epoch": int(self.best_epoch),
            "best_val_loss": float(self.best_val_loss),
            "stopped_epoch": int(self.stopped_epoch),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TrainingTrace":
        return cls(
            train_loss=list(data["train_loss"]),
            val_loss=list(data["val_loss"]),
            best_epoch=int(data["best_epoch"]),
            best_val_loss=float(data["best_val_loss"]),
            stopped_epoch=int(data["stopped_epoch"]),
        )


def _check_xy(x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y)
    if x.ndim != 2:
        raise ValueError(f"features must be 2-D, got shape {x.shape}")
    if y.ndim != 1 or len(y) != len(x):
        raise ValueError(f"labels shape {y.shape} does not match features {x.shape}")
    if len(y) and not np.issubdtype(y.dtype, np.integer):
        raise ValueError(f"labels must be integers, got dtype {y.dtype}")
    if len(y) and (y.min() < 0 or y.max() >= N_CLASSES):
        raise ValueError(f"labels must lie in [0, {N_CLASSES}), got range "
                         f"[{y.min()}, {y.max()}]")
    return x, y.astype(np.int64)


def _train_one_epoch(model, opt, x, y, cfg, shuffle_rng, dropout_rng,
                     weight_decay, epoch) -> float:
    order = shuffle_rng.permutation(len(x))
    losses = []
    for start in range(0, len(order), cfg.batch_size):
        batch = order[start : start + cfg.batch_size]
        loss, grads = model.loss_and_grads(
            x[batch], y[batch], weight_decay=weight_decay, dropout_rng=dropout_rng
        )
        if not np.isfinite(loss):
            raise TrainingDivergedError(f"non-finite loss at epoch {epoch}")
        opt.step(model.parameters(), grads)
        losses.append(loss)
    return float(np.mean(losses)) if losses else float("nan")


def _rngs(seed: int) -> tuple[np.random.Generator, np.random.Generator, np.random.Generator]:
    init_ss, shuffle_ss, dropout_ss = np.random.SeedSequence(seed).spawn(3)
    return (
        np.random.default_rng(init_ss),
        np.random.default_rng(shuffle_ss),
        np.random.default_rng(dropout_ss),
    )


def train_linear(x: np.ndarray, y: np.ndarray, cfg: TrainConfig) -> LinearModel:
    """Fit the logistic-regression head for a fixed epoch budget.

    With `max_epochs == 0` the zero-initialised model comes back untouched,
    i.e. it predicts the uniform distribution and its loss on any balanced
    batch is ln(4).
    """
    x, y = _check_xy(x, y)
    if cfg.max_epochs > 0 and len(x) == 0:
        raise ValueError("cannot train on an empty feature matrix")
    model = LinearModel(x.shape[1])
    _, shuffle_rng, _ = _rngs(cfg.seed)
    opt = AdamOptimizer(model.parameters(), cfg.learning_rate, cfg.beta1,
                        cfg.beta2, cfg.adam_epsilon)
    for epoch in range(1, cfg.max_epochs + 1):
        _train_one_epoch(model, opt, x, y, cfg, shuffle_rng, None,
                         cfg.weight_decay, epoch)
    return model


def train_mlp(
    x: np.ndarray,
    y: np.ndarray,
    x_val: np.ndarray,
    y_val: np.ndarray,
    cfg: TrainConfig,
    hidden: tuple[int, ...] = DEFAULT_HIDDEN,
    dropout: float = DEFAULT_DROPOUT,
) -> tuple[MLPModel, TrainingTrace]:
    """Train the MLP head with early stopping.

    After each epoch the validation loss is computed in inference mode.  A
    strict improvement over the best value so far resets the patience
    counter and snapshots the full model state (weights and batch-norm
    buffers).  Training stops once the counter exceeds `cfg.patience`, and
    the best snapshot is restored, so the returned model reproduces the
    minimum recorded validation loss.
    """
    x, y = _check_xy(x, y)
    x_val, y_val = _check_xy(x_val, y_val)
    if cfg.max_epochs > 0 and (len(x) == 0 or len(x_val) == 0):
        raise ValueError("training and validation sets must be non-empty")

    init_rng, shuffle_rng, dropout_rng = _rngs(cfg.seed)
    model = MLPModel(x.shape[1], hidden=hidden, dropout=dropout, init_rng=init_rng)
    opt = AdamOptimizer(model.parameters(), cfg.learning_rate, cfg.beta1,
                        cfg.beta2, cfg.adam_epsilon)
    trace = TrainingTrace()
    best_state = clone_state(model)
    best_val = float("inf")
    stale = 0
    for epoch in range(1, cfg.max_epochs + 1):
        trace.train_loss.append(
            _train_one_epoch(model, opt, x, y, cfg, shuffle_rng, dropout_rng,
                             0.0, epoch)
        )
        val_loss = cross_entropy(model.forward_eval(x_val), y_val)
        if not np.isfinite(val_loss):
            raise TrainingDivergedError(f"non-finite validation loss at epoch {epoch}")
        trace.val_loss.append(val_loss)
        trace.stopped_epoch = epoch
        if val_loss < best_val:
            best_val = val_loss
            trace.best_epoch = epoch
            best_state = clone_state(model)
            stale = 0
        else:
            stale += 1
            if stale > cfg.patience:
                break
    if trace.best_epoch > 0:
        trace.best_val_loss = best_val
        model.load_state(best_state)
    return model, trace


def retrain_final(
    head: str,
    x: np.ndarray,
    y: np.ndarray,
    cfg: TrainConfig,
    trace: TrainingTrace | None,
    hidden: tuple[int, ...] = DEFAULT_HIDDEN,
    dropout: float = DEFAULT_DROPOUT,
):
    """Refit from scratch for exactly the epoch count the trace recorded.

    Used after model selection: the early-stopped run fixes the budget and
    the final model trains on the merged train+val split with no held-out
    monitoring.  A missing trace is an error, not a silent fallback.
    """
    if head not in HEADS:
        raise ValueError(f"unknown head {head!r}; expected one of {HEADS}")
    if trace is None:
        raise ValueError("retrain_final requires the trace of the selection run")
    epochs = int(trace.best_epoch)
    x, y = _check_xy(x, y)
    if epochs > 0 and len(x) == 0:
        raise ValueError("cannot retrain on an empty feature matrix")

    init_rng, shuffle_rng, dropout_rng = _rngs(cfg.seed)
    if head == HEAD_LINEAR:
        model = LinearModel(x.shape[1])
        wd, drng = cfg.weight_decay, None
    else:
        model = MLPModel(x.shape[1], hidden=hidden, dropout=dropout,
                         init_rng=init_rng)
        wd, drng = 0.0, dropout_rng
    opt = AdamOptimizer(model.parameters(), cfg.learning_rate, cfg.beta1,
                        cfg.beta2, cfg.adam_epsilon)
    for epoch in range(1, epochs + 1):
        _train_one_epoch(model, opt, x, y, cfg, shuffle_rng, drng, wd, epoch)
    return model
