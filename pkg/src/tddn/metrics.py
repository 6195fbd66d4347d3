"""Accuracy metrics and test-set evaluation.

Test evaluation follows the standard C-MAPSS protocol: one prediction
per engine, taken from the window ending on its last recorded cycle,
against the RUL value the dataset states for that cycle.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cmapss import DatasetBundle, EngineTrajectory
from .model import DegradationNetwork
from .preprocess import LabelPolicy, Scaler, SensorSelection, apply_scaler, pad_series


def rmse(pred: np.ndarray, true: np.ndarray) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    true = np.asarray(true, dtype=np.float64)
    if pred.shape != true.shape:
        raise ValueError(f"shape mismatch: pred {pred.shape}, true {true.shape}")
    if pred.size == 0:
        raise ValueError("rmse of zero predictions is undefined")
    diff = pred - true
    return float(np.sqrt(np.mean(diff * diff)))


def nasa_score(pred: np.ndarray, true: np.ndarray) -> float:
    """PHM08 challenge score: asymmetric exponential penalty, summed.

    An early prediction (pred below true) of e cycles costs
    exp(e/13) - 1; a late one costs exp(e/10) - 1, so overestimating
    the remaining life is penalized harder. Lower is better.
    """
    pred = np.asarray(pred, dtype=np.float64)
    true = np.asarray(true, dtype=np.float64)
    if pred.shape != true.shape:
        raise ValueError(f"shape mismatch: pred {pred.shape}, true {true.shape}")
    d = pred - true
    terms = np.where(d < 0.0, np.exp(-d / 13.0) - 1.0, np.exp(d / 10.0) - 1.0)
    return float(np.sum(terms))


@dataclass(frozen=True, eq=False)
class EvaluationResult:
    """Per-engine predictions and the aggregate metrics over them."""

    unit_ids: np.ndarray
    pred: np.ndarray
    true: np.ndarray
    rmse: float
    nasa_score: float


def predict_engine(
    model: DegradationNetwork,
    trajectory: EngineTrajectory,
    scaler: Scaler,
    selection: SensorSelection,
    policy: LabelPolicy,
    batch_size: int = 256,
) -> np.ndarray:
    """Predicted RUL for every cycle of one engine, clamped to [0, r_max].

    Clamping happens at inference only; training sees raw outputs.
    """
    scaled = apply_scaler(trajectory, scaler, selection)
    padded = pad_series(scaled, model.config.window)
    w = model.config.window
    n = trajectory.n_cycles
    preds = np.empty(n)
    for start in range(0, n, batch_size):
        stop = min(start + batch_size, n)
        x = np.stack([padded[j : j + w] for j in range(start, stop)])
        preds[start:stop] = model.forward(x)
    return np.clip(preds, 0.0, float(policy.r_max))


def last_windows(
    bundle: DatasetBundle,
    scaler: Scaler,
    selection: SensorSelection,
    window: int,
) -> np.ndarray:
    """The final window of every test engine, stacked (n_engines, w, m)."""
    stack = []
    for traj in bundle.test:
        scaled = apply_scaler(traj, scaler, selection)
        padded = pad_series(scaled, window)
        stack.append(padded[-window:])
    return np.stack(stack)


def evaluate_test(
    model: DegradationNetwork,
    bundle: DatasetBundle,
    scaler: Scaler,
    selection: SensorSelection,
    policy: LabelPolicy,
    cap_true_rul: bool = True,
) -> EvaluationResult:
    """Score a model on the held-out test engines of a subset.

    Predictions are clamped into [0, r_max]. True RUL values are capped
    at r_max by default, matching how the training labels saturate;
    ``cap_true_rul=False`` scores against the raw dataset values.
    """
    windows = last_windows(bundle, scaler, selection, model.config.window)
    pred = np.clip(model.forward(windows), 0.0, float(policy.r_max))
    true = bundle.test_rul.astype(np.float64)
    if cap_true_rul:
        true = np.minimum(true, float(policy.r_max))
    unit_ids = np.array([traj.unit_id for traj in bundle.test], dtype=np.int64)
    return EvaluationResult(
        unit_ids=unit_ids,
        pred=pred,
        true=true,
        rmse=rmse(pred, true),
        nasa_score=nasa_score(pred, true),
    )
