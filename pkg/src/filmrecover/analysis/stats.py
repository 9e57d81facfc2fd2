"""Paired t-scores, chi-square distances and per-feature significance reports."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

# Critical t values at 100 degrees of freedom for alpha = 0.05, 0.01, 0.001.
T_THRESHOLDS = (1.660, 2.364, 3.390)


class TableMismatchError(ValueError):
    pass


def paired_t_score(x, y) -> tuple[float, int]:
    """t of the paired differences ``x - y`` (sample std), with n - 1 dof.

    Zero-variance differences give +inf when their mean is nonzero, 0 otherwise.
    """
    x, y = np.asarray(x, np.float64), np.asarray(y, np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("paired_t_score needs two equal-length vectors")
    n = x.size
    if n < 2:
        raise ValueError("paired_t_score needs at least two samples")
    d = x - y
    mean = float(d.mean())
    sd = float(d.std(ddof=1))
    if sd <= 1e-12 * max(1.0, abs(mean)):
        return (math.inf if mean != 0.0 else 0.0), n - 1
    return mean / (sd / math.sqrt(n)), n - 1


def chi_square_stat(x, y, bins: int = 16) -> tuple[float, int]:
    """Two-sample chi-square over shared bins spanning the pooled range."""
    x, y = np.asarray(x, np.float64), np.asarray(y, np.float64)
    pooled = np.concatenate([x, y])
    lo, hi = float(pooled.min()), float(pooled.max())
    if hi == lo:
        lo, hi = lo - 0.5, hi + 0.5
    ox, _ = np.histogram(x, bins=bins, range=(lo, hi))
    oy, _ = np.histogram(y, bins=bins, range=(lo, hi))
    tot = ox + oy
    occ = tot > 0
    chi = float(((ox[occ] - oy[occ]) ** 2 / tot[occ]).sum())
    return chi, int(occ.sum()) - 1


@dataclass
class FeatureTable:
    names: list
    rows: np.ndarray
    sample_ids: list
    source: str = "PRED"

    def __post_init__(self) -> None:
        self.rows = np.asarray(self.rows, np.float64).reshape(len(self.sample_ids), len(self.names))
        if not np.all(np.isfinite(self.rows)):
            raise ValueError("feature table contains non-finite values")
        if self.source not in ("PRED", "GT"):
            raise ValueError(f"source must be PRED or GT, got {self.source!r}")

    @classmethod
    def from_records(cls, records: dict, source: str = "PRED") -> "FeatureTable":
        """``records`` maps sample id -> {feature name: value}."""
        ids = sorted(records)
        names = sorted(records[ids[0]]) if ids else []
        rows = [[records[i][n] for n in names] for i in ids]
        return cls(names, np.asarray(rows, float).reshape(len(ids), len(names)), ids, source)

    def column(self, name: str) -> np.ndarray:
        return self.rows[:, self.names.index(name)]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["sample_id", "source", *self.names])
        for sid, row in zip(self.sample_ids, self.rows):
            w.writerow([sid, self.source, *(repr(float(v)) for v in row)])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "FeatureTable":
        rd = list(csv.reader(io.StringIO(text)))
        header, body = rd[0], rd[1:]
        source = body[0][1] if body else "PRED"
        return cls(header[2:], [[float(v) for v in r[2:]] for r in body], [r[0] for r in body], source)

    def to_dict(self) -> dict:
        return {"source": self.source, "names": list(self.names), "sample_ids": list(self.sample_ids),
                "rows": self.rows.tolist()}


def _json_float(v: float):
    return "inf" if math.isinf(v) else float(v)


@dataclass
class SignificanceReport:
    features: dict
    thresholds: tuple = T_THRESHOLDS
    counts: list = field(default_factory=list)
    n_samples: int = 0

    def to_dict(self) -> dict:
        return {
            "n_samples": self.n_samples,
            "thresholds": list(self.thresholds),
            "counts_below": list(self.counts),
            "features": {
                name: {"t_score": _json_float(f["t_score"]), "dof": f["dof"],
                       "chi_square": f["chi_square"], "chi_dof": f["chi_dof"]}
                for name, f in sorted(self.features.items())
            },
        }


def significance_report(pred: FeatureTable, gt: FeatureTable, thresholds=T_THRESHOLDS) -> SignificanceReport:
    """Per-feature paired t and chi-square of predictions against ground truth."""
    if list(pred.names) != list(gt.names):
        odd = sorted(set(pred.names) ^ set(gt.names)) or [a for a, b in zip(pred.names, gt.names) if a != b]
        raise TableMismatchError(f"feature names differ: {', '.join(odd)}")
    if list(pred.sample_ids) != list(gt.sample_ids):
        odd = sorted(set(map(str, pred.sample_ids)) ^ set(map(str, gt.sample_ids)))
        raise TableMismatchError(f"sample ids differ: {', '.join(odd) or 'order'}")
    n = len(pred.sample_ids)
    bins = min(16, n)
    features = {}
    for k, name in enumerate(pred.names):
        t, dof = paired_t_score(pred.rows[:, k], gt.rows[:, k])
        chi, cdof = chi_square_stat(pred.rows[:, k], gt.rows[:, k], bins)
        features[name] = {"t_score": t, "dof": dof, "chi_square": chi, "chi_dof": cdof}
    counts = [sum(abs(f["t_score"]) < th for f in features.values()) for th in thresholds]
    return SignificanceReport(features, tuple(thresholds), counts, n)
