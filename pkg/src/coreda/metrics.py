"""Evaluation statistics: Spearman correlation with tie handling, MAE, RMSE, R^2."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np
from scipy.stats import rankdata

from .numkernel import DimensionError


class Stat(NamedTuple):
    """A statistic that may be undefined on the given inputs.

    ``degenerate`` is True when the value is undefined (constant input or
    too few points); ``value`` is then NaN and must not be read as a score.
    """

    value: float
    degenerate: bool = False

    def __float__(self) -> float:
        return self.value


def _pair(preds, labels, min_n: int) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(preds, dtype=np.float64).ravel()
    y = np.asarray(labels, dtype=np.float64).ravel()
    if p.shape != y.shape:
        raise DimensionError(f"preds has {p.size} entries, labels {y.size}")
    if p.size < min_n:
        raise DimensionError(f"need at least {min_n} pairs, got {p.size}")
    return p, y


def spearman(preds: Sequence[float], labels: Sequence[float]) -> Stat:
    """Pearson correlation of average (fractional) ranks."""
    p = np.asarray(preds, dtype=np.float64).ravel()
    y = np.asarray(labels, dtype=np.float64).ravel()
    if p.shape != y.shape:
        raise DimensionError(f"preds has {p.size} entries, labels {y.size}")
    if p.size < 2:
        return Stat(math.nan, True)
    rp = rankdata(p, method="average")
    ry = rankdata(y, method="average")
    rp -= rp.mean()
    ry -= ry.mean()
    denom = math.sqrt(float(rp @ rp) * float(ry @ ry))
    if denom == 0.0:
        return Stat(math.nan, True)
    return Stat(float(np.clip((rp @ ry) / denom, -1.0, 1.0)))


def mae(preds, labels) -> float:
    p, y = _pair(preds, labels, 1)
    return float(np.mean(np.abs(p - y)))


def rmse(preds, labels) -> float:
    p, y = _pair(preds, labels, 1)
    return float(np.sqrt(np.mean((p - y) ** 2)))


def r2(preds, labels) -> Stat:
    p, y = _pair(preds, labels, 1)
    if p.size < 2:
        return Stat(math.nan, True)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot == 0.0:
        return Stat(math.nan, True)
    return Stat(1.0 - float(np.sum((p - y) ** 2)) / ss_tot)


@dataclass
class EvalReport:
    n: int
    scc: float
    mae: float
    rmse: float
    r2: float
    scc_degenerate: bool = False
    r2_degenerate: bool = False
    rows: list[dict] = field(default_factory=list)

    @classmethod
    def from_predictions(cls, preds, labels, rows: list[dict] | None = None) -> "EvalReport":
        s = spearman(preds, labels)
        q = r2(preds, labels)
        return cls(
            n=len(preds),
            scc=s.value,
            mae=mae(preds, labels),
            rmse=rmse(preds, labels),
            r2=q.value,
            scc_degenerate=s.degenerate,
            r2_degenerate=q.degenerate,
            rows=rows or [],
        )

    def summary(self) -> dict:
        d = asdict(self)
        d.pop("rows")
        return d

    def write(self, out_dir: str | Path, stem: str = "eval") -> tuple[Path, Path]:
        """Write ``<stem>.json`` (aggregates) and ``<stem>_rows.csv`` (per video)."""
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        summary_path = out_dir / f"{stem}.json"
        rows_path = out_dir / f"{stem}_rows.csv"
        summary = {k: (None if isinstance(v, float) and math.isnan(v) else v) for k, v in self.summary().items()}
        summary_path.write_text(json.dumps(summary, indent=1))
        with open(rows_path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["id", "true_label", "prediction", "per_exemplar"])
            for r in self.rows:
                per = r.get("per_exemplar") or []
                wr.writerow(
                    [
                        r["id"],
                        "" if r.get("true_label") is None else repr(float(r["true_label"])),
                        repr(float(r["prediction"])),
                        ";".join(repr(float(x)) for x in per),
                    ]
                )
        return summary_path, rows_path
