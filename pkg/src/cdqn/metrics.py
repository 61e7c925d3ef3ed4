"""Per-episode training metrics and duel results, with CSV round-trip."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

TRAIN_COLUMNS = (
    "episode",
    "train_reward",
    "test_reward",
    "mean_peace",
    "sum_peace",
    "mean_loss",
    "mean_penalty",
    "epsilon",
)
DUEL_COLUMNS = ("round", "score_a", "score_b")


@dataclass(frozen=True)
class EpisodeRow:
    episode: int
    train_reward: float
    test_reward: float
    mean_peace: float
    sum_peace: float
    mean_loss: float
    mean_penalty: float
    epsilon: float


@dataclass
class MetricsLog:
    rows: list[EpisodeRow] = field(default_factory=list)


@dataclass(frozen=True)
class DuelRow:
    round: int
    score_a: float
    score_b: float


@dataclass
class DuelResult:
    rows: list[DuelRow] = field(default_factory=list)

    @property
    def mean_a(self) -> float:
        return sum(r.score_a for r in self.rows) / len(self.rows)

    @property
    def mean_b(self) -> float:
        return sum(r.score_b for r in self.rows) / len(self.rows)


def _cell(value) -> str:
    if isinstance(value, int):
        return str(value)
    return repr(float(value))  # repr round-trips doubles exactly


def write_metrics(log, path) -> None:
    """Write a MetricsLog or DuelResult as CSV; the header row is always present."""
    if isinstance(log, MetricsLog):
        columns, rows = TRAIN_COLUMNS, log.rows
    elif isinstance(log, DuelResult):
        columns, rows = DUEL_COLUMNS, log.rows
    else:
        raise TypeError(f"write_metrics: unsupported log type {type(log).__name__}")
    try:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(columns)
            for row in rows:
                writer.writerow([_cell(getattr(row, col)) for col in columns])
    except OSError as exc:
        raise OSError(f"write_metrics: cannot write {path}: {exc}") from exc


def read_rows(path) -> tuple[list[str], list[dict[str, float]]]:
    """Read any CSV written by `write_metrics`; values come back as floats."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"read_rows: {path} has no header row") from None
        rows = [dict(zip(header, map(float, record))) for record in reader if record]
    return header, rows
