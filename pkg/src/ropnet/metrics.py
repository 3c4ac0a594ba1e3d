"""Regression quality measures on original-unit values.

All four measures take actuals first, predictions second:

  R^2   = 1 - sum((y - p)^2) / sum((y - mean(y))^2)
  MAE   = mean(|y - p|)
  RMSE  = sqrt(mean((y - p)^2))
  MAPE% = 100 * mean(|(y - p) / y|) over rows with |y| >= tolerance

Rows excluded from MAPE are counted and reported, never hidden.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, InsufficientDataError, UndefinedMetricError

MAPE_ZERO_TOLERANCE = 1e-8


@dataclass
class MetricsReport:
    r2: float
    mae: float
    rmse: float
    mape_pct: float
    n: int
    mape_excluded: int

    def to_dict(self):
        return {
            "r2": self.r2,
            "mae": self.mae,
            "rmse": self.rmse,
            "mape_pct": self.mape_pct,
            "n": self.n,
            "mape_excluded": self.mape_excluded,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def compute_metrics(actual, predicted, zero_tolerance: float = MAPE_ZERO_TOLERANCE) -> MetricsReport:
    actual = np.asarray(actual, dtype=np.float64).reshape(-1)
    predicted = np.asarray(predicted, dtype=np.float64).reshape(-1)
    if actual.shape != predicted.shape:
        raise DimensionError(
            f"actuals {actual.shape} and predictions {predicted.shape} differ"
        )
    n = actual.size
    if n < 2:
        raise InsufficientDataError(
            f"metrics need at least 2 samples, got {n}"
        )
    err = actual - predicted
    ss_res = float(err @ err)
    centered = actual - actual.mean()
    ss_tot = float(centered @ centered)
    if ss_tot == 0.0:
        raise UndefinedMetricError(
            "R^2 is undefined when all actual values are equal"
        )
    keep = np.abs(actual) >= zero_tolerance
    excluded = int(n - keep.sum())
    if excluded == n:
        raise UndefinedMetricError(
            "MAPE is undefined: every actual value is within the zero tolerance"
        )
    mape = 100.0 * float(np.mean(np.abs(err[keep] / actual[keep])))
    return MetricsReport(
        r2=1.0 - ss_res / ss_tot,
        mae=float(np.mean(np.abs(err))),
        rmse=float(np.sqrt(np.mean(err * err))),
        mape_pct=mape,
        n=n,
        mape_excluded=excluded,
    )
