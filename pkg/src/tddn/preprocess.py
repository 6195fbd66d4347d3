"""Feature selection, scaling, RUL labeling and moving-window segmentation.

The pipeline per engine is: pick the informative columns for the subset,
min-max scale them with statistics fitted on the training split only,
attach piecewise-linear RUL labels, left-pad with the first cycle so every
cycle owns a full window, and cut the stream into moving windows.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from typing import IO, Iterable, Sequence

import numpy as np

from .cmapss import COLUMN_NAMES, EngineTrajectory, _check_subset_id

logger = logging.getLogger(__name__)

# Channels with a clear ascending/descending trend over a run-to-failure
# trajectory under a single operating condition. The remaining sensors
# (1, 5, 6, 10, 14, 16, 18, 19) and setting_3 stay flat and carry no
# degradation signal.
TREND_SETTINGS = ("setting_1", "setting_2")
TREND_SENSORS = (2, 3, 4, 7, 8, 9, 11, 12, 13, 15, 17, 20, 21)


@dataclass(frozen=True)
class SensorSelection:
    """Ordered subset of the 24 feature columns used as model input."""

    subset_id: str
    columns: tuple[str, ...]
    indices: tuple[int, ...] = field(init=False)

    def __post_init__(self) -> None:
        if len(set(self.columns)) != len(self.columns):
            raise ValueError("duplicate columns in selection")
        try:
            indices = tuple(COLUMN_NAMES.index(c) for c in self.columns)
        except ValueError:
            unknown = [c for c in self.columns if c not in COLUMN_NAMES]
            raise ValueError(f"unknown columns: {unknown}") from None
        object.__setattr__(self, "indices", indices)

    @property
    def n_columns(self) -> int:
        return len(self.columns)


@dataclass(frozen=True)
class LabelPolicy:
    """Piecewise-linear RUL labeling: flat at the cap, then a countdown."""

    r_max: int = 120

    def __post_init__(self) -> None:
        if self.r_max <= 0:
            raise ValueError(f"r_max must be positive, got {self.r_max}")


@dataclass(frozen=True, eq=False)
class Scaler:
    """Per-column min/max fitted on the training split."""

    columns: tuple[str, ...]
    col_min: np.ndarray
    col_max: np.ndarray

    @property
    def degenerate(self) -> np.ndarray:
        """Boolean mask of constant columns (max == min)."""
        return self.col_max == self.col_min


@dataclass(frozen=True, eq=False)
class WindowedSample:
    """One w-by-m normalized window with its RUL label.

    ``cycle`` is the 1-based index of the original cycle the window ends
    on; the window's last row is that cycle's measurements.
    """

    matrix: np.ndarray
    label: float
    unit_id: int
    cycle: int


def select_columns(subset_id: str, include_sensor_14: bool = False) -> SensorSelection:
    """Input columns for a subset.

    FD001/FD003 run under a single operating condition, so only the
    trending settings and sensors are kept (15 columns). FD002/FD004 mix
    six operating conditions where no channel is visually flat, so all 3
    settings and 21 sensors are used (24 columns).

    ``include_sensor_14`` adds the nominally flat sensor 14 back into the
    FD001/FD003 selection for sensitivity checks.
    """
    sid = _check_subset_id(subset_id)
    if sid in ("FD002", "FD004"):
        return SensorSelection(subset_id=sid, columns=COLUMN_NAMES)
    sensors = sorted(TREND_SENSORS + (14,)) if include_sensor_14 else TREND_SENSORS
    columns = TREND_SETTINGS + tuple(f"sensor_{i}" for i in sensors)
    return SensorSelection(subset_id=sid, columns=columns)


def selection_matrix(trajectory: EngineTrajectory, selection: SensorSelection) -> np.ndarray:
    """Extract the selected columns of a trajectory as an (n, m) matrix."""
    return trajectory.values[:, selection.indices]


def fit_scaler(
    trajectories: Iterable[EngineTrajectory], selection: SensorSelection
) -> Scaler:
    """Fit per-column min/max over every cycle of every given trajectory.

    Call this with the training split only; test data must never leak
    into the statistics. Constant columns are legal but logged, since
    they normalize to 0 everywhere.
    """
    col_min: np.ndarray | None = None
    col_max: np.ndarray | None = None
    for traj in trajectories:
        matrix = selection_matrix(traj, selection)
        lo = matrix.min(axis=0)
        hi = matrix.max(axis=0)
        col_min = lo if col_min is None else np.minimum(col_min, lo)
        col_max = hi if col_max is None else np.maximum(col_max, hi)
    if col_min is None or col_max is None:
        raise ValueError("cannot fit a scaler on zero trajectories")
    degenerate = np.flatnonzero(col_max == col_min)
    if degenerate.size:
        names = [selection.columns[i] for i in degenerate]
        logger.warning("constant columns scale to 0: %s", ", ".join(names))
    return Scaler(columns=selection.columns, col_min=col_min, col_max=col_max)


def apply_scaler(
    trajectory: EngineTrajectory, scaler: Scaler, selection: SensorSelection
) -> np.ndarray:
    """Scale the selected columns into [-1, 1] via x' = 2(x-min)/(max-min) - 1.

    Training values land exactly in [-1, 1]; test values may fall outside
    and are intentionally not clipped. Degenerate columns map to 0.
    """
    if scaler.columns != selection.columns:
        raise ValueError(
            "scaler/selection column mismatch: "
            f"scaler has {scaler.columns}, selection has {selection.columns}"
        )
    matrix = selection_matrix(trajectory, selection)
    span = scaler.col_max - scaler.col_min
    safe_span = np.where(span == 0.0, 1.0, span)
    scaled = 2.0 * (matrix - scaler.col_min) / safe_span - 1.0
    scaled[:, scaler.degenerate] = 0.0
    return scaled


def assign_rul_labels(
    n_cycles: int, policy: LabelPolicy, terminal_rul: int = 0
) -> np.ndarray:
    """Labels for cycles 1..n: label(j) = min(r_max, terminal_rul + n - j).

    Run-to-failure training engines have terminal_rul = 0 (the last cycle
    is the failure). Test engines pass the RUL remaining after their last
    recorded cycle, extending the same capped countdown backwards.
    """
    if n_cycles < 1:
        raise ValueError(f"need at least one cycle, got {n_cycles}")
    if terminal_rul < 0:
        raise ValueError(f"terminal RUL must be >= 0, got {terminal_rul}")
    countdown = terminal_rul + n_cycles - np.arange(1, n_cycles + 1)
    return np.minimum(countdown, policy.r_max).astype(np.float64)


def pad_series(matrix: np.ndarray, window: int) -> np.ndarray:
    """Prepend window-1 copies of the first row.

    The result has n + window - 1 rows whose first ``window`` rows all
    equal the original first row, so even cycle 1 owns a full window.
    """
    if window < 1:
        raise ValueError(f"window must be >= 1, got {window}")
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2 or matrix.shape[0] < 1:
        raise ValueError(f"expected a nonempty 2-D matrix, got shape {matrix.shape}")
    if window == 1:
        return matrix
    return np.concatenate([np.repeat(matrix[:1], window - 1, axis=0), matrix])


def make_windows(
    padded: np.ndarray,
    window: int,
    labels: Sequence[float] | np.ndarray,
    unit_id: int = 0,
) -> list[WindowedSample]:
    """Cut a padded series into one window per original cycle.

    Window j (1-based) spans padded rows j..j+window-1 and ends on
    original cycle j, so an engine of length n yields exactly n windows.
    The window matrices are views into ``padded``.
    """
    labels = np.asarray(labels, dtype=np.float64)
    n_cycles = labels.shape[0]
    if padded.shape[0] != n_cycles + window - 1:
        raise ValueError(
            f"padded length {padded.shape[0]} does not match "
            f"{n_cycles} labels with window {window}"
        )
    return [
        WindowedSample(
            matrix=padded[j : j + window],
            label=float(labels[j]),
            unit_id=unit_id,
            cycle=j + 1,
        )
        for j in range(n_cycles)
    ]


def dump_windows_csv(
    samples: Iterable[WindowedSample],
    stream: IO[str],
    columns: Sequence[str] | None = None,
) -> None:
    """Debug dump: one block of w rows per window, under a single header."""
    writer = csv.writer(stream)
    header_written = False
    for sample in samples:
        if not header_written:
            names = list(columns) if columns is not None else [
                f"col_{i + 1}" for i in range(sample.matrix.shape[1])
            ]
            writer.writerow(["engine_id", "cycle", "label", "row"] + names)
            header_written = True
        for row_idx, row in enumerate(sample.matrix, start=1):
            writer.writerow(
                [sample.unit_id, sample.cycle, repr(sample.label), row_idx]
                + [repr(float(v)) for v in row]
            )
