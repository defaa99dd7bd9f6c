"""Counts, MAE/RMSE and k-fold bookkeeping."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .autograd import ContractViolation


@dataclass(frozen=True)
class EvalRecord:
    image_id: str
    y: int
    y_hat: float

    @property
    def abs_error(self) -> float:
        return abs(self.y - self.y_hat)


@dataclass(frozen=True)
class FoldPlan:
    k: int
    seed: int
    assignments: dict[str, int]

    def fold(self, i: int) -> list[str]:
        return [name for name, f in self.assignments.items() if f == i]

    def train_ids(self, i: int) -> list[str]:
        return [name for name, f in self.assignments.items() if f != i]


def count_of(density) -> float:
    """Sum of every entry, correctly rounded."""
    return math.fsum(np.asarray(density, dtype=np.float64).ravel().tolist())


def _errors(records: Sequence[EvalRecord]) -> np.ndarray:
    if not records:
        raise ContractViolation("metrics need at least one record")
    return np.array([r.y - r.y_hat for r in records], dtype=np.float64)


def mae(records: Sequence[EvalRecord]) -> float:
    e = _errors(records)
    return math.fsum(np.abs(e).tolist()) / len(e)


def rmse(records: Sequence[EvalRecord]) -> float:
    e = _errors(records)
    return math.sqrt(math.fsum((e * e).tolist()) / len(e))


def kfold_splits(ids: Iterable[str], k: int, seed: int = 0) -> FoldPlan:
    """Seeded shuffle then round-robin; fold sizes differ by at most one."""
    ids = list(ids)
    if len(set(ids)) != len(ids):
        raise ContractViolation("kfold_splits: duplicate ids")
    if not 1 <= k <= len(ids):
        raise ContractViolation(f"kfold_splits: need 1 <= k <= {len(ids)}, got k={k}")
    order = np.random.default_rng(seed).permutation(len(ids))
    return FoldPlan(k, seed, {ids[j]: pos % k for pos, j in enumerate(order)})


def records_csv(records: Sequence[EvalRecord]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["image_id", "y", "y_hat", "abs_error"])
    for r in records:
        writer.writerow([r.image_id, r.y, repr(float(r.y_hat)), repr(float(r.abs_error))])
    return buf.getvalue()


def format_table(rows: Sequence[Sequence], header: Sequence[str]) -> str:
    cells = [list(map(str, header))] + [[f"{v:.4f}" if isinstance(v, float) else str(v) for v in row] for row in rows]
    widths = [max(len(row[i]) for row in cells) for i in range(len(header))]
    lines = ["  ".join(c.rjust(w) for c, w in zip(row, widths)) for row in cells]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines)


def records_table(records: Sequence[EvalRecord]) -> str:
    rows = [(r.image_id, r.y, float(r.y_hat), float(r.abs_error)) for r in records]
    body = format_table(rows, ("image_id", "y", "y_hat", "abs_error"))
    return f"{body}\nMAE {mae(records):.4f}  RMSE {rmse(records):.4f}  (n={len(records)})"
