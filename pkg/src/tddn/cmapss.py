"""C-MAPSS turbofan dataset ingestion.

Each subset FD001..FD004 ships as three text files following the NASA
naming convention: ``train_FDxxx.txt``, ``test_FDxxx.txt`` and
``RUL_FDxxx.txt``. Data rows carry 26 whitespace-separated numeric
columns:

    unit  cycle  setting_1..setting_3  sensor_1..sensor_21

Parsing is fail-fast: a malformed line raises with its 1-based line
number. Fields may be space- or tab-separated and trailing blank lines
are ignored, since copies of the dataset in the wild vary. Measurements
are held as float64; ``unit`` and ``cycle`` as ints.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import IO, Iterable, Sequence

import numpy as np

SUBSET_IDS = ("FD001", "FD002", "FD003", "FD004")

N_SETTINGS = 3
N_SENSORS = 21
N_FIELDS = 2 + N_SETTINGS + N_SENSORS

SETTING_NAMES = tuple(f"setting_{i}" for i in range(1, N_SETTINGS + 1))
SENSOR_NAMES = tuple(f"sensor_{i}" for i in range(1, N_SENSORS + 1))
#: Canonical feature order used everywhere downstream (26 columns minus unit/cycle).
COLUMN_NAMES = SETTING_NAMES + SENSOR_NAMES


class CmapssError(Exception):
    """Base class for dataset ingestion failures."""


class ParseError(CmapssError):
    """A line could not be parsed (wrong field count, non-numeric token)."""


class StructureError(CmapssError):
    """Parsed values violate dataset structure (cycle gaps, count mismatches)."""


@dataclass(frozen=True)
class RawRecord:
    """One data line: a single operational cycle of a single engine."""

    unit_id: int
    cycle: int
    settings: tuple[float, ...]
    sensors: tuple[float, ...]


@dataclass(frozen=True, eq=False)
class EngineTrajectory:
    """All cycles of one engine, ordered 1..n with no gaps.

    ``values`` is an (n, 24) float64 matrix in COLUMN_NAMES order.
    """

    unit_id: int
    values: np.ndarray

    @property
    def n_cycles(self) -> int:
        return self.values.shape[0]

    @property
    def settings(self) -> np.ndarray:
        return self.values[:, :N_SETTINGS]

    @property
    def sensors(self) -> np.ndarray:
        return self.values[:, N_SETTINGS:]


@dataclass(frozen=True, eq=False)
class DatasetBundle:
    """One subset: train/test trajectories plus the test-end RUL targets."""

    subset_id: str
    train: tuple[EngineTrajectory, ...]
    test: tuple[EngineTrajectory, ...]
    test_rul: np.ndarray  # (len(test),) nonnegative ints, test-engine order


def _check_subset_id(subset_id: str) -> str:
    sid = subset_id.strip().upper()
    if sid not in SUBSET_IDS:
        raise ValueError(f"unknown subset {subset_id!r}; expected one of {SUBSET_IDS}")
    return sid


def _parse_int_field(token: str, what: str, line_no: int) -> int:
    try:
        value = float(token)
    except ValueError:
        raise ParseError(f"line {line_no}: non-numeric {what} {token!r}") from None
    if not value.is_integer():
        raise ParseError(f"line {line_no}: {what} must be an integer, got {token!r}")
    return int(value)


def parse_data_file(lines: Iterable[str]) -> list[RawRecord]:
    """Parse a train/test data stream into records, preserving file order.

    Raises ParseError naming the offending 1-based line number on a wrong
    column count or a non-numeric token.
    """
    records: list[RawRecord] = []
    for line_no, line in enumerate(lines, start=1):
        fields = line.split()
        if not fields:
            continue
        if len(fields) != N_FIELDS:
            raise ParseError(
                f"line {line_no}: expected {N_FIELDS} columns, got {len(fields)}"
            )
        unit_id = _parse_int_field(fields[0], "unit id", line_no)
        cycle = _parse_int_field(fields[1], "cycle", line_no)
        if unit_id < 1:
            raise ParseError(f"line {line_no}: unit id must be >= 1, got {unit_id}")
        if cycle < 1:
            raise ParseError(f"line {line_no}: cycle must be >= 1, got {cycle}")
        numbers = []
        for tok in fields[2:]:
            try:
                numbers.append(float(tok))
            except ValueError:
                raise ParseError(f"line {line_no}: non-numeric value {tok!r}") from None
        records.append(
            RawRecord(
                unit_id=unit_id,
                cycle=cycle,
                settings=tuple(numbers[:N_SETTINGS]),
                sensors=tuple(numbers[N_SETTINGS:]),
            )
        )
    return records


def group_by_engine(records: Iterable[RawRecord]) -> list[EngineTrajectory]:
    """Group records into per-engine trajectories ordered by unit id.

    The (unit, cycle) sort is stable, so equal keys keep input order.
    Cycles of each engine must be exactly 1..n; a gap or duplicate raises
    StructureError naming the unit and cycle.
    """
    ordered = sorted(records, key=lambda r: (r.unit_id, r.cycle))
    trajectories: list[EngineTrajectory] = []
    i = 0
    while i < len(ordered):
        unit = ordered[i].unit_id
        j = i
        while j < len(ordered) and ordered[j].unit_id == unit:
            j += 1
        chunk = ordered[i:j]
        for expected, rec in enumerate(chunk, start=1):
            if rec.cycle == expected:
                continue
            if rec.cycle < expected:
                raise StructureError(f"unit {unit}: duplicate cycle {rec.cycle}")
            raise StructureError(f"unit {unit}: missing cycle {expected}")
        values = np.array(
            [rec.settings + rec.sensors for rec in chunk], dtype=np.float64
        )
        trajectories.append(EngineTrajectory(unit_id=unit, values=values))
        i = j
    return trajectories


def parse_rul_file(lines: Iterable[str]) -> list[int]:
    """Parse a RUL target stream: one nonnegative integer per line."""
    values: list[int] = []
    for line_no, line in enumerate(lines, start=1):
        fields = line.split()
        if not fields:
            continue
        if len(fields) != 1:
            raise ParseError(f"line {line_no}: expected one value, got {len(fields)}")
        rul = _parse_int_field(fields[0], "RUL", line_no)
        if rul < 0:
            raise ParseError(f"line {line_no}: RUL must be >= 0, got {rul}")
        values.append(rul)
    return values


def subset_file_names(subset_id: str) -> tuple[str, str, str]:
    """Conventional (train, test, RUL) file names for a subset."""
    sid = _check_subset_id(subset_id)
    return (f"train_{sid}.txt", f"test_{sid}.txt", f"RUL_{sid}.txt")


def load_subset(
    directory: str | Path,
    subset_id: str,
    *,
    train_file: str | Path | None = None,
    test_file: str | Path | None = None,
    rul_file: str | Path | None = None,
) -> DatasetBundle:
    """Load one subset from a directory holding the NASA-named text files.

    The ``*_file`` overrides point at renamed files; relative overrides
    resolve against ``directory``.
    """
    sid = _check_subset_id(subset_id)
    base = Path(directory)
    default_train, default_test, default_rul = subset_file_names(sid)
    paths = [
        base / (train_file or default_train),
        base / (test_file or default_test),
        base / (rul_file or default_rul),
    ]
    for path in paths:
        if not path.is_file():
            raise FileNotFoundError(f"missing C-MAPSS file: {path}")

    with open(paths[0], encoding="ascii") as fh:
        train = group_by_engine(parse_data_file(fh))
    with open(paths[1], encoding="ascii") as fh:
        test = group_by_engine(parse_data_file(fh))
    with open(paths[2], encoding="ascii") as fh:
        test_rul = parse_rul_file(fh)

    if len(test_rul) != len(test):
        raise StructureError(
            f"{sid}: {len(test)} test engines but {len(test_rul)} RUL lines"
        )
    return DatasetBundle(
        subset_id=sid,
        train=tuple(train),
        test=tuple(test),
        test_rul=np.asarray(test_rul, dtype=np.int64),
    )


def format_value(x: float) -> str:
    """Shortest decimal form that round-trips the exact float64 value."""
    return repr(float(x))


def write_data_file(trajectories: Iterable[EngineTrajectory], stream: IO[str]) -> None:
    """Write trajectories back to the 26-column text layout.

    Values are emitted with round-trip precision, so parse -> write ->
    parse is bit-exact.
    """
    for traj in trajectories:
        for idx in range(traj.n_cycles):
            row = traj.values[idx]
            fields = [str(traj.unit_id), str(idx + 1)]
            fields.extend(format_value(v) for v in row)
            stream.write(" ".join(fields) + "\n")


def write_rul_file(ruls: Sequence[int], stream: IO[str]) -> None:
    for rul in ruls:
        stream.write(f"{int(rul)}\n")
