"""Model-agnostic attribution: permutation importance, local surrogate.

Permutation importance scores a feature by how much the model's MSE
rises when that feature's values are shuffled across samples (in both
the window and the static vector, so the feature is destroyed
everywhere it enters).  The local surrogate fits a weighted linear
model to the predictor's behavior in a Gaussian neighborhood of one
anchor point, giving per-feature slopes that are exact for a linear
predictor.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import (
    DegenerateNeighborhoodError,
    DimensionError,
    InsufficientDataError,
    RangeError,
)
from .tensor import SeededRng

_CONDITION_LIMIT = 1e10


@dataclass
class ImportanceReport:
    feature_names: list[str]
    importances: list[float]
    base_mse: float
    repeats: int

    def ranking(self) -> list[int]:
        """Feature indices from most to least important."""
        order = sorted(
            range(len(self.importances)),
            key=lambda i: self.importances[i],
            reverse=True,
        )
        return order

    def write_csv(self, path):
        order = self.ranking()
        rank = {feat: pos + 1 for pos, feat in enumerate(order)}
        with open(path, "w", encoding="utf-8") as f:
            f.write("feature,importance,rank\n")
            for i, name in enumerate(self.feature_names):
                f.write(f"{name},{self.importances[i]!r},{rank[i]}\n")

    def to_json(self) -> str:
        return (
            json.dumps(
                {
                    "base_mse": self.base_mse,
                    "repeats": self.repeats,
                    "importances": dict(
                        zip(self.feature_names, self.importances)
                    ),
                },
                indent=2,
                sort_keys=True,
            )
            + "\n"
        )


def _permuted_mse(model, windows, statics, y, feature: int, perm) -> float:
    """MSE after rewiring one feature column through ``perm``."""
    w = windows.copy()
    s = statics.copy()
    w[:, :, feature] = windows[perm][:, :, feature]
    s[:, feature] = statics[perm, feature]
    pred = model.predict(w, s)
    diff = pred - y
    return float(np.mean(diff * diff))


def permutation_importance(
    model,
    windows,
    statics,
    y,
    feature_names,
    rng: SeededRng,
    repeats: int = 5,
) -> ImportanceReport:
    """Mean MSE increase per feature over ``repeats`` shuffles.

    Scores can be slightly negative for irrelevant features (shuffle
    noise); they are reported as computed.
    """
    if repeats < 3:
        raise RangeError(
            f"importance needs at least 3 repeats for a stable mean, got {repeats}"
        )
    n = windows.shape[0]
    if n < 2:
        raise InsufficientDataError(
            "permutation importance needs at least 2 samples"
        )
    if len(feature_names) != windows.shape[2]:
        raise DimensionError(
            f"{len(feature_names)} names for {windows.shape[2]} features"
        )
    pred = model.predict(windows, statics)
    diff = pred - y
    base_mse = float(np.mean(diff * diff))
    importances = []
    for feature in range(windows.shape[2]):
        rise = 0.0
        for _ in range(repeats):
            perm = rng.permutation(n)
            rise += _permuted_mse(model, windows, statics, y, feature, perm) - base_mse
        importances.append(rise / repeats)
    return ImportanceReport(
        feature_names=list(feature_names),
        importances=importances,
        base_mse=base_mse,
        repeats=repeats,
    )


@dataclass
class LocalSurrogate:
    """Weighted least-squares linear fit around one anchor input."""

    anchor: np.ndarray
    radius: float
    weights: np.ndarray
    intercept: float
    fit_r2: float
    n_samples: int

    def predict(self, x: np.ndarray) -> np.ndarray:
        return (x - self.anchor) @ self.weights + self.intercept


def local_surrogate(
    predict_fn,
    anchor: np.ndarray,
    rng: SeededRng,
    radius: float = 0.5,
    n_samples: int = 200,
) -> LocalSurrogate:
    """Explain one prediction by a linear fit in a local neighborhood.

    Samples are drawn from N(anchor, radius^2 I) and weighted by
    exp(-d^2 / radius^2).  The fit solves the weighted normal
    equations; a condition number beyond 1e10 (e.g. a vanishing
    radius) aborts rather than returning garbage slopes.
    """
    anchor = np.asarray(anchor, dtype=np.float64).reshape(-1)
    if radius <= 0:
        raise RangeError(f"radius must be positive, got {radius}")
    if n_samples < 50:
        raise RangeError(
            f"surrogate needs at least 50 samples for a stable fit, got {n_samples}"
        )
    d = anchor.size
    offsets = radius * rng.normal((n_samples, d))
    X = anchor + offsets
    y = np.asarray(predict_fn(X), dtype=np.float64).reshape(-1)
    if y.size != n_samples:
        raise DimensionError(
            f"predict_fn returned {y.size} values for {n_samples} inputs"
        )
    w = np.exp(-(offsets * offsets).sum(axis=1) / radius**2)

    design = np.column_stack([offsets, np.ones(n_samples)])
    wd = design * w[:, None]
    gram = design.T @ wd
    cond = np.linalg.cond(gram)
    if not np.isfinite(cond) or cond > _CONDITION_LIMIT:
        raise DegenerateNeighborhoodError(
            f"neighborhood is degenerate (condition number {cond:.3g}); "
            f"increase the radius"
        )
    beta = np.linalg.solve(gram, wd.T @ y)
    fitted = design @ beta
    resid = y - fitted
    y_bar = float((w * y).sum() / w.sum())
    ss_res = float((w * resid * resid).sum())
    ss_tot = float((w * (y - y_bar) ** 2).sum())
    fit_r2 = 1.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    return LocalSurrogate(
        anchor=anchor,
        radius=float(radius),
        weights=beta[:d],
        intercept=float(beta[d]),
        fit_r2=fit_r2,
        n_samples=n_samples,
    )
