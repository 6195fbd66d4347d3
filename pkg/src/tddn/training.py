"""Engine-level validation split, Adam optimization, early stopping.

Training is deterministic for a fixed config: the split, the parameter
init and every epoch's shuffle derive from the seed through independent
generator streams, and all reductions run in a fixed order.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .cmapss import DatasetBundle, EngineTrajectory
from .model import DegradationNetwork, ModelConfig
from .layers import mse_loss
from .preprocess import (
    LabelPolicy,
    Scaler,
    SensorSelection,
    apply_scaler,
    assign_rul_labels,
    fit_scaler,
    pad_series,
    select_columns,
)

logger = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    """Raised when optimization cannot continue (non-finite loss)."""


@dataclass(frozen=True)
class TrainConfig:
    """Optimization hyperparameters."""

    batch_size: int = 32
    max_epochs: int = 200
    lr_initial: float = 1e-4
    lr_reduced: float = 1e-5
    lr_drop_after: int = 100
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    patience: int = 10
    val_fraction: float = 0.2
    seed: int = 0
    r_max: int = 120

    def __post_init__(self) -> None:
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.max_epochs < 1:
            raise ValueError(f"max_epochs must be >= 1, got {self.max_epochs}")
        if self.lr_initial <= 0.0 or self.lr_reduced <= 0.0:
            raise ValueError("learning rates must be positive")
        if self.lr_drop_after < 0:
            raise ValueError(f"lr_drop_after must be >= 0, got {self.lr_drop_after}")
        if self.patience < 1:
            raise ValueError(f"patience must be >= 1, got {self.patience}")
        if not 0.0 < self.val_fraction < 1.0:
            raise ValueError(f"val_fraction must be in (0, 1), got {self.val_fraction}")
        if self.r_max < 1:
            raise ValueError(f"r_max must be >= 1, got {self.r_max}")

    @property
    def label_policy(self) -> LabelPolicy:
        return LabelPolicy(r_max=self.r_max)


@dataclass(frozen=True)
class TrainReport:
    """Per-epoch curves and how the run ended."""

    train_loss: tuple[float, ...]
    val_rmse: tuple[float, ...]
    best_epoch: int
    stop_reason: str

    @property
    def n_epochs(self) -> int:
        return len(self.train_loss)


@dataclass(frozen=True, eq=False)
class TrainResult:
    model: DegradationNetwork
    scaler: Scaler
    selection: SensorSelection
    report: TrainReport
    train_unit_ids: tuple[int, ...]
    val_unit_ids: tuple[int, ...]


def lr_at(epoch: int, config: TrainConfig) -> float:
    """Learning rate for a 1-based epoch; drops after ``lr_drop_after``."""
    if epoch < 1:
        raise ValueError(f"epoch must be >= 1, got {epoch}")
    return config.lr_initial if epoch <= config.lr_drop_after else config.lr_reduced


def split_engines(
    unit_ids: Sequence[int], fraction: float, seed: int
) -> tuple[tuple[int, ...], tuple[int, ...]]:
    """Random engine-level split into (training ids, validation ids).

    The validation side gets round(fraction * count) engines, halves
    rounding up. Both sides are returned sorted; the draw depends only
    on the seed.
    """
    ids = list(unit_ids)
    if len(ids) < 2:
        raise ValueError(f"need at least 2 engines to split, got {len(ids)}")
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate engine ids")
    n_val = int(np.floor(fraction * len(ids) + 0.5))
    if n_val < 1 or n_val >= len(ids):
        raise ValueError(
            f"fraction {fraction} leaves an empty side for {len(ids)} engines"
        )
    rng = np.random.default_rng([seed, 0])
    perm = rng.permutation(len(ids))
    val = sorted(ids[i] for i in perm[:n_val])
    train = sorted(ids[i] for i in perm[n_val:])
    return tuple(train), tuple(val)


class Adam:
    """Bias-corrected Adam over a fixed parameter list."""

    def __init__(
        self,
        params: Sequence,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        self.params = list(params)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = [np.zeros_like(p.value) for p in self.params]
        self.v = [np.zeros_like(p.value) for p in self.params]

    def step(self, lr: float) -> None:
        """Apply one update from the gradients currently in the params."""
        self.step_count += 1
        bc1 = 1.0 - self.beta1**self.step_count
        bc2 = 1.0 - self.beta2**self.step_count
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad.shape != m.shape:
                raise ValueError(
                    f"gradient shape {p.grad.shape} does not match state {m.shape}"
                )
            m *= self.beta1
            m += (1.0 - self.beta1) * p.grad
            v *= self.beta2
            v += (1.0 - self.beta2) * (p.grad * p.grad)
            p.value -= lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


class WindowBank:
    """All windows of a set of engines, materialized per batch.

    Stores one padded scaled matrix per engine and assembles (B, w, m)
    batches on demand, so the full window set never lives in memory.
    """

    def __init__(
        self,
        padded: list[np.ndarray],
        labels: list[np.ndarray],
        unit_ids: Sequence[int],
        window: int,
    ):
        if not (len(padded) == len(labels) == len(unit_ids)):
            raise ValueError("padded/labels/unit_ids lengths differ")
        for p, l in zip(padded, labels):
            if p.shape[0] != l.shape[0] + window - 1:
                raise ValueError(
                    f"padded length {p.shape[0]} does not fit {l.shape[0]} labels"
                )
        self.padded = padded
        self.window = window
        self.unit_ids = tuple(unit_ids)
        self.labels = np.concatenate(labels) if labels else np.zeros(0)
        self.engine_idx = np.concatenate(
            [np.full(l.shape[0], i, dtype=np.int64) for i, l in enumerate(labels)]
        ) if labels else np.zeros(0, dtype=np.int64)
        self.cycle_idx = np.concatenate(
            [np.arange(l.shape[0], dtype=np.int64) for l in labels]
        ) if labels else np.zeros(0, dtype=np.int64)

    @property
    def n_windows(self) -> int:
        return self.labels.shape[0]

    def gather(self, indices: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Stack the windows at the given flat indices into a batch."""
        w = self.window
        x = np.stack(
            [
                self.padded[e][c : c + w]
                for e, c in zip(self.engine_idx[indices], self.cycle_idx[indices])
            ]
        )
        return x, self.labels[indices]


def build_window_bank(
    trajectories: Sequence[EngineTrajectory],
    scaler: Scaler,
    selection: SensorSelection,
    policy: LabelPolicy,
    window: int,
    terminal_ruls: Sequence[int] | None = None,
) -> WindowBank:
    """Scale, label and pad a set of trajectories into a WindowBank.

    ``terminal_ruls`` gives the RUL after each trajectory's last cycle;
    omitted means run-to-failure (zero for all).
    """
    if terminal_ruls is not None and len(terminal_ruls) != len(trajectories):
        raise ValueError(
            f"{len(terminal_ruls)} terminal RULs for {len(trajectories)} trajectories"
        )
    padded: list[np.ndarray] = []
    labels: list[np.ndarray] = []
    for i, traj in enumerate(trajectories):
        scaled = apply_scaler(traj, scaler, selection)
        padded.append(pad_series(scaled, window))
        terminal = 0 if terminal_ruls is None else int(terminal_ruls[i])
        labels.append(assign_rul_labels(traj.n_cycles, policy, terminal))
    return WindowBank(padded, labels, [t.unit_id for t in trajectories], window)


def predict_windows(
    model: DegradationNetwork, bank: WindowBank, batch_size: int = 256
) -> np.ndarray:
    """Unclamped model outputs for every window in the bank, in order."""
    preds = np.empty(bank.n_windows)
    for start in range(0, bank.n_windows, batch_size):
        idx = np.arange(start, min(start + batch_size, bank.n_windows))
        x, _ = bank.gather(idx)
        preds[idx] = model.forward(x)
    return preds


def train(
    bundle: DatasetBundle,
    model_config: ModelConfig,
    train_config: TrainConfig,
    selection: SensorSelection | None = None,
) -> TrainResult:
    """Fit a network on a subset's training engines.

    Epochs iterate over all windows of the training-side engines in
    shuffled batches; after each epoch the RMSE over every window of the
    held-out validation engines decides early stopping. The returned
    model carries the best-validation-epoch parameters.
    """
    if selection is None:
        selection = select_columns(bundle.subset_id)
    if selection.n_columns != model_config.n_features:
        raise ValueError(
            f"selection has {selection.n_columns} columns but the model expects "
            f"{model_config.n_features} features"
        )
    policy = train_config.label_policy

    train_ids, val_ids = split_engines(
        [t.unit_id for t in bundle.train], train_config.val_fraction, train_config.seed
    )
    by_id = {t.unit_id: t for t in bundle.train}
    # scaler statistics come from the full training file, both split sides
    scaler = fit_scaler(bundle.train, selection)
    train_bank = build_window_bank(
        [by_id[u] for u in train_ids], scaler, selection, policy, model_config.window
    )
    val_bank = build_window_bank(
        [by_id[u] for u in val_ids], scaler, selection, policy, model_config.window
    )
    logger.info(
        "training on %d engines (%d windows), validating on %d engines (%d windows)",
        len(train_ids), train_bank.n_windows, len(val_ids), val_bank.n_windows,
    )

    model = DegradationNetwork(model_config, np.random.default_rng(train_config.seed))
    optimizer = Adam(
        model.params(), train_config.beta1, train_config.beta2, train_config.eps
    )

    train_losses: list[float] = []
    val_curve: list[float] = []
    best_rmse = np.inf
    best_epoch = 0
    best_state = [p.value.copy() for p in model.params()]
    epochs_without_improvement = 0
    stop_reason = "max_epochs"

    for epoch in range(1, train_config.max_epochs + 1):
        lr = lr_at(epoch, train_config)
        order = np.random.default_rng([train_config.seed, epoch]).permutation(
            train_bank.n_windows
        )
        total_se = 0.0
        for batch_no, start in enumerate(range(0, order.size, train_config.batch_size), 1):
            idx = order[start : start + train_config.batch_size]
            x, y = train_bank.gather(idx)
            pred = model.forward(x)
            loss, gpred = mse_loss(pred, y)
            if not np.isfinite(loss):
                raise TrainingError(
                    f"non-finite loss {loss} in epoch {epoch}, batch {batch_no}"
                )
            model.zero_grad()
            model.backward(gpred)
            optimizer.step(lr)
            total_se += loss * idx.size
        epoch_loss = total_se / train_bank.n_windows
        val_pred = predict_windows(model, val_bank)
        diff = val_pred - val_bank.labels
        val_rmse = float(np.sqrt(np.mean(diff * diff)))
        train_losses.append(epoch_loss)
        val_curve.append(val_rmse)
        logger.info(
            "epoch %d: lr %.0e, train loss %.3f, val rmse %.3f",
            epoch, lr, epoch_loss, val_rmse,
        )

        if val_rmse < best_rmse:
            best_rmse = val_rmse
            best_epoch = epoch
            best_state = [p.value.copy() for p in model.params()]
            epochs_without_improvement = 0
        else:
            epochs_without_improvement += 1
            if epochs_without_improvement >= train_config.patience:
                stop_reason = "patience"
                break

    for p, value in zip(model.params(), best_state):
        p.value[...] = value

    report = TrainReport(
        train_loss=tuple(train_losses),
        val_rmse=tuple(val_curve),
        best_epoch=best_epoch,
        stop_reason=stop_reason,
    )
    return TrainResult(
        model=model,
        scaler=scaler,
        selection=selection,
        report=report,
        train_unit_ids=train_ids,
        val_unit_ids=val_ids,
    )
