"""Lambda distribution analysis: fixed buckets, early/late phase tables, CSV export."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import InvalidInputError
from .losses import LambdaRecord

BUCKET_EDGES = (0.0, 0.2, 0.4, 0.6, 0.8, 1.0)
BUCKET_LABELS = ("0-0.2", "0.2-0.4", "0.4-0.6", "0.6-0.8", "0.8-1.0")
EARLY_FRACTION = 0.33
CSV_HEADER = ("step", "example_index", "lambda")


@dataclass
class LambdaHistogram:
    counts: list
    step_range: tuple | None = None
    bucket_edges: tuple = BUCKET_EDGES

    @property
    def total(self) -> int:
        return int(sum(self.counts))

    def percentages(self) -> list | None:
        if self.total == 0:
            return None
        return [100.0 * c / self.total for c in self.counts]


@dataclass
class PhaseStats:
    phase: str
    n_values: int
    percentages: list | None  # None marks an empty phase
    extreme_mass: float | None

    @property
    def empty(self) -> bool:
        return self.n_values == 0


def bucketize(lambdas, step_range=None) -> LambdaHistogram:
    """Half-open buckets ``[e_i, e_{i+1})``; the last bucket also takes 1.0."""
    vals = np.asarray(list(lambdas), dtype=np.float64)
    if vals.size and (np.any(~np.isfinite(vals)) or vals.min() < 0.0 or vals.max() > 1.0):
        raise InvalidInputError("lambda values must lie in [0, 1]")
    idx = np.searchsorted(np.asarray(BUCKET_EDGES), vals, side="right") - 1
    idx = np.clip(idx, 0, len(BUCKET_LABELS) - 1)
    counts = np.bincount(idx, minlength=len(BUCKET_LABELS))
    return LambdaHistogram([int(c) for c in counts], step_range)


def _phase(name, records):
    vals = [v for r in records for v in r.lambdas]
    hist = bucketize(vals)
    pct = hist.percentages()
    extreme = None if pct is None else pct[0] + pct[-1]
    return PhaseStats(name, hist.total, pct, extreme)


def phase_cut(total_steps: int) -> int:
    return math.floor(EARLY_FRACTION * total_steps)


def phase_summary(records, total_steps: int):
    """Early (steps below ``floor(0.33 * total_steps)``) and late phase statistics."""
    records = list(records)
    if not records:
        raise InvalidInputError("no lambda records")
    cut = phase_cut(total_steps)
    early = [r for r in records if r.step < cut]
    late = [r for r in records if r.step >= cut]
    return _phase("early", early), _phase("late", late)


def format_phase_table(early: PhaseStats, late: PhaseStats, title: str = "") -> str:
    lines = [title] if title else []
    lines.append(f"{'phase':<8}" + "".join(f"{b:>10}" for b in BUCKET_LABELS) + f"{'extreme':>10}")
    for ph in (early, late):
        if ph.empty:
            lines.append(f"{ph.phase:<8}  (no records)")
            continue
        cells = "".join(f"{p:>9.2f}%" for p in ph.percentages)
        lines.append(f"{ph.phase:<8}{cells}{ph.extreme_mass:>9.2f}%")
    return "\n".join(lines)


def phase_summary_json(early: PhaseStats, late: PhaseStats) -> str:
    return json.dumps({"buckets": list(BUCKET_LABELS), "early": asdict(early),
                       "late": asdict(late)}, indent=2)


def export_lambda_csv(records, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(CSV_HEADER)
        for r in records:
            for i, lam in enumerate(r.lambdas):
                w.writerow([r.step, i, format(float(lam), ".17g")])
    return path


def read_lambda_csv(path) -> list:
    records = {}
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if tuple(header or ()) != CSV_HEADER:
            raise InvalidInputError(f"{path}: unexpected header {header}")
        for step, _, lam in reader:
            records.setdefault(int(step), []).append(float(lam))
    return [LambdaRecord(s, v) for s, v in sorted(records.items())]
