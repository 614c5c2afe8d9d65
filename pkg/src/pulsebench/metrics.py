"""Heart-rate evaluation metrics and report assembly."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class MetricsError(ValueError):
    pass


@dataclass(frozen=True)
class MetricSummary:
    """The six error statistics of a prediction set, errors in bpm.

    me: mean error, sd: sample standard deviation of the error, mae: mean
    absolute error, rmse: root mean squared error, mer_pct: mean of
    per-item |error|/truth as a percentage, r: Pearson correlation between
    predictions and truth (NaN with r_defined=False when either side is
    constant).
    """

    me: float
    sd: float
    mae: float
    rmse: float
    mer_pct: float
    r: float
    r_defined: bool
    n: int

    def as_dict(self) -> dict:
        return {"n": self.n, "me": self.me, "sd": self.sd, "mae": self.mae,
                "rmse": self.rmse, "mer_pct": self.mer_pct, "r": self.r,
                "r_defined": self.r_defined}


@dataclass
class HrReport:
    """Per-video rows (video_id, prediction, truth) plus their summary."""

    rows: list = field(default_factory=list)  # (video_id, hr_pred, hr_true)

    def add(self, video_id: str, hr_pred: float, hr_true: float):
        self.rows.append((video_id, float(hr_pred), float(hr_true)))

    def summary(self) -> MetricSummary:
        pred = np.array([r[1] for r in self.rows])
        true = np.array([r[2] for r in self.rows])
        return metrics(pred, true)


def metrics(pred, true) -> MetricSummary:
    """Compute the six-statistic summary of pred vs true (bpm)."""
    pred = np.asarray(pred, dtype=np.float64)
    true = np.asarray(true, dtype=np.float64)
    if pred.shape != true.shape or pred.ndim != 1 or pred.size < 2:
        raise MetricsError("pred and true must be equal-length 1-D, len >= 2")
    if np.any(true <= 0):
        raise MetricsError("true values must be positive for the error rate")
    e = pred - true
    me = float(e.mean())
    sd = float(e.std(ddof=1))
    mae = float(np.abs(e).mean())
    rmse = float(np.sqrt(np.mean(e * e)))
    mer = float(np.mean(np.abs(e) / true) * 100.0)
    sp, st = pred.std(), true.std()
    if sp < 1e-12 or st < 1e-12:
        r, r_defined = math.nan, False
    else:
        r = float(np.corrcoef(pred, true)[0, 1])
        r_defined = True
    return MetricSummary(me=me, sd=sd, mae=mae, rmse=rmse, mer_pct=mer,
                         r=r, r_defined=r_defined, n=pred.size)
