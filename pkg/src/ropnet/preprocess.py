"""Row-level preparation: imputation, encoding, scaling, windowing.

Fit order matters and is leak-free: the window-index split is decided
first (it needs only the row count), then every statistic (imputation
fills, one-hot vocabularies, scaler moments, outlier fences) is fitted
on training rows only, where the training rows are the final rows of
training windows.  All rows are then transformed with the fitted state
and assembled into overlapping windows.

Scaling uses the population standard deviation.  One-hot columns pass
through the scaler with mean 0 and scale 1 so the transform stays a
single affine map per column.  The target has its own scaler; metrics
are computed after inverting it.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ConstantColumnError,
    DataError,
    EncodingError,
    InsufficientDataError,
    RangeError,
    SchemaError,
    UnimputableColumnError,
    WindowError,
)
from .tensor import SeededRng

SER = "SER"
HHP = "HHP"
DERIVED_NAMES = (SER, HHP)
_SER_SOURCES = ("Torque", "RPM", "WOB")
_HHP_SOURCES = ("Flow Rate", "Standpipe Pressure")
_EPS_DENOM = 1e-12


@dataclass
class SplitIndices:
    """Sorted window indices for the training and test partitions."""

    train: np.ndarray
    test: np.ndarray


def split_train_test(n_items: int, train_fraction: float = 0.8, seed: int = 42) -> SplitIndices:
    """Random, reproducible index split; both sides always nonempty."""
    if not 0.0 < train_fraction < 1.0:
        raise RangeError(
            f"train fraction must lie strictly in (0, 1), got {train_fraction}"
        )
    if n_items < 5:
        raise InsufficientDataError(
            f"need at least 5 items to split, got {n_items}"
        )
    n_train = int(round(train_fraction * n_items))
    if n_train < 1 or n_items - n_train < 1:
        raise InsufficientDataError(
            f"cannot split {n_items} items {train_fraction:.0%}/"
            f"{1 - train_fraction:.0%} with both sides nonempty"
        )
    perm = SeededRng(seed).permutation(n_items)
    return SplitIndices(
        train=np.sort(perm[:n_train]), test=np.sort(perm[n_train:])
    )


def impute_mean(column: np.ndarray, fit_rows: np.ndarray) -> tuple[np.ndarray, float]:
    """Replace NaNs with the mean of the non-missing fit-row values."""
    fit_vals = column[fit_rows]
    finite = fit_vals[~np.isnan(fit_vals)]
    if finite.size == 0:
        raise UnimputableColumnError(
            "column has no observed values in the training rows"
        )
    fill = float(finite.mean())
    out = column.copy()
    out[np.isnan(out)] = fill
    return out, fill


def fit_standard_scaler(rows: np.ndarray, names=None) -> tuple[np.ndarray, np.ndarray]:
    """Per-column mean and population std; zero spread is an error."""
    mean = rows.mean(axis=0)
    std = rows.std(axis=0)
    bad = np.flatnonzero(std == 0.0)
    if bad.size:
        label = names[bad[0]] if names is not None else f"column {bad[0]}"
        raise ConstantColumnError(
            f"{label} is constant on the training rows; scaling is undefined"
        )
    return mean, std


def apply_scaler(values: np.ndarray, mean, std) -> np.ndarray:
    return (values - mean) / std


def invert_scaler(values: np.ndarray, mean, std) -> np.ndarray:
    return values * std + mean


@dataclass
class OutlierReport:
    """Tukey-fence flags for one column (reported, never dropped)."""

    lower_fence: float
    upper_fence: float
    indices: np.ndarray

    @property
    def count(self) -> int:
        return int(self.indices.size)


def iqr_outlier_report(values: np.ndarray, k: float = 1.5) -> OutlierReport:
    """Flag values strictly outside [Q1 - k*IQR, Q3 + k*IQR].

    Quartiles use linear interpolation between order statistics.
    """
    if len(values) < 4:
        raise InsufficientDataError(
            f"quartile fences need at least 4 values, got {len(values)}"
        )
    q1, q3 = np.quantile(values, [0.25, 0.75])
    iqr = q3 - q1
    lo = q1 - k * iqr
    hi = q3 + k * iqr
    flagged = np.flatnonzero((values < lo) | (values > hi))
    return OutlierReport(lower_fence=float(lo), upper_fence=float(hi), indices=flagged)


def fit_vocabulary(values) -> list[str]:
    """Sorted unique category tokens."""
    return sorted(set(values))


def one_hot(values, vocab: list[str]) -> np.ndarray:
    """Encode tokens against a fixed vocabulary.

    Tokens outside the vocabulary map to all-zero rows and raise a
    warning naming them, so downstream shapes never change between fit
    and inference.
    """
    if not vocab:
        raise EncodingError("cannot encode against an empty vocabulary")
    index = {tok: i for i, tok in enumerate(vocab)}
    out = np.zeros((len(values), len(vocab)))
    unseen = set()
    for row, tok in enumerate(values):
        col = index.get(tok)
        if col is None:
            unseen.add(tok)
        else:
            out[row, col] = 1.0
    if unseen:
        warnings.warn(
            f"categories not seen during fitting encoded as zeros: "
            f"{sorted(unseen)}",
            stacklevel=2,
        )
    return out


def derive_features(features: np.ndarray, feature_names, target, which) -> tuple[np.ndarray, list[str]]:
    """Compute opt-in engineered columns from raw (unscaled) values.

    ``SER`` (specific energy ratio) is Torque * RPM / (WOB * target)
    and therefore needs the target column; ``HHP`` (hydraulic
    horsepower) is Flow Rate * Standpipe Pressure / 1714.  Vanishing
    denominators yield NaN, which the imputation stage fills.
    """
    cols = []
    names = []
    lookup = {n: i for i, n in enumerate(feature_names)}

    def col(name):
        if name not in lookup:
            raise SchemaError(
                f"derived feature needs column {name!r}, not in "
                f"{list(feature_names)}"
            )
        return features[:, lookup[name]]

    for name in which:
        if name == SER:
            if target is None:
                raise DataError(
                    "SER is derived from the target column, which is absent"
                )
            torque, rpm, wob = (col(c) for c in _SER_SOURCES)
            den = wob * target
            with np.errstate(divide="ignore", invalid="ignore"):
                val = np.where(
                    np.abs(den) < _EPS_DENOM, np.nan, torque * rpm / den
                )
        elif name == HHP:
            flow, pressure = (col(c) for c in _HHP_SOURCES)
            val = flow * pressure / 1714.0
        else:
            raise SchemaError(
                f"unknown derived feature {name!r}; available: {DERIVED_NAMES}"
            )
        cols.append(val)
        names.append(name)
    if not cols:
        return features, list(feature_names)
    return np.column_stack([features] + cols), list(feature_names) + names


def make_windows(features: np.ndarray, target, window_len: int):
    """Overlapping windows of consecutive rows.

    Window m covers rows [m, m + L); its static vector and target come
    from the final row, so N rows give N - L + 1 aligned samples.
    """
    n = features.shape[0]
    if window_len < 1:
        raise RangeError(f"window length must be positive, got {window_len}")
    if n < window_len:
        raise WindowError(
            f"need at least {window_len} rows to build one window, got {n}"
        )
    m = n - window_len + 1
    windows = np.stack([features[i : i + window_len] for i in range(m)])
    statics = features[window_len - 1 :].copy()
    y = None if target is None else target[window_len - 1 :].copy()
    return windows, statics, y


@dataclass
class PreprocessorState:
    """Everything needed to replay the fitted transform at inference.

    ``source_names`` are the raw continuous columns expected from a
    dataset; ``feature_names`` are the post-derivation, post-encoding
    columns the model actually consumes.
    """

    feature_names: list[str]
    source_names: list[str]
    window_len: int
    derived: list[str]
    fill_values: list[float]
    feat_mean: list[float]
    feat_std: list[float]
    target_name: str
    target_mean: float
    target_std: float
    vocab: dict[str, list[str]] = field(default_factory=dict)

    def to_dict(self):
        return {
            "feature_names": list(self.feature_names),
            "source_names": list(self.source_names),
            "window_len": self.window_len,
            "derived": list(self.derived),
            "fill_values": list(self.fill_values),
            "feat_mean": list(self.feat_mean),
            "feat_std": list(self.feat_std),
            "target_name": self.target_name,
            "target_mean": self.target_mean,
            "target_std": self.target_std,
            "vocab": {k: list(v) for k, v in self.vocab.items()},
        }

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class PreparedData:
    """Windowed, scaled tensors for one train/test split."""

    feature_names: list[str]
    split: SplitIndices
    train_windows: np.ndarray
    train_statics: np.ndarray
    train_y: np.ndarray
    test_windows: np.ndarray
    test_statics: np.ndarray
    test_y: np.ndarray
    train_y_raw: np.ndarray
    test_y_raw: np.ndarray
    outliers: dict[str, OutlierReport]


def transform_target(state: PreprocessorState, y: np.ndarray) -> np.ndarray:
    return apply_scaler(y, state.target_mean, state.target_std)


def inverse_target(state: PreprocessorState, y: np.ndarray) -> np.ndarray:
    return invert_scaler(y, state.target_mean, state.target_std)


def _assemble_columns(dataset, state: PreprocessorState, fit_rows=None):
    """Impute, derive, encode, and scale all rows into one matrix.

    With ``fit_rows`` given, fills, vocabularies, and scaler moments
    are (re)fitted on those rows and written into ``state``; otherwise
    the recorded state is applied as-is.
    """
    fitting = fit_rows is not None
    numeric = np.asarray(dataset.features, dtype=np.float64)
    names = list(dataset.feature_names)

    imputed = np.empty_like(numeric)
    fills = [] if fitting else list(state.fill_values)
    for j in range(numeric.shape[1]):
        if fitting:
            imputed[:, j], fill = impute_mean(numeric[:, j], fit_rows)
            fills.append(fill)
        else:
            col = numeric[:, j].copy()
            col[np.isnan(col)] = fills[j]
            imputed[:, j] = col

    target = getattr(dataset, "target", None)
    if state.derived:
        full, names = derive_features(imputed, names, target, state.derived)
        derived_block = full[:, numeric.shape[1] :]
        for j in range(derived_block.shape[1]):
            k = numeric.shape[1] + j
            if fitting:
                derived_block[:, j], fill = impute_mean(
                    derived_block[:, j], fit_rows
                )
                fills.append(fill)
            else:
                col = derived_block[:, j]
                col[np.isnan(col)] = fills[k]
        imputed = full

    blocks = [imputed]
    n_scaled = imputed.shape[1]
    categoricals = getattr(dataset, "categoricals", {}) or {}
    for cat_name in sorted(categoricals):
        tokens = categoricals[cat_name]
        if fitting:
            state.vocab[cat_name] = fit_vocabulary(tokens)
        vocab = state.vocab[cat_name]
        blocks.append(one_hot(tokens, vocab))
        names += [f"{cat_name}={tok}" for tok in vocab]
    matrix = np.hstack(blocks) if len(blocks) > 1 else imputed

    if fitting:
        mean, std = fit_standard_scaler(
            matrix[fit_rows][:, :n_scaled], names[:n_scaled]
        )
        full_mean = np.zeros(matrix.shape[1])
        full_std = np.ones(matrix.shape[1])
        full_mean[:n_scaled] = mean
        full_std[:n_scaled] = std
        state.fill_values = fills
        state.feat_mean = full_mean.tolist()
        state.feat_std = full_std.tolist()
        state.feature_names = names
    elif names != list(state.feature_names):
        raise SchemaError(
            f"columns {names} do not match the fitted transform "
            f"{list(state.feature_names)}"
        )
    return apply_scaler(
        matrix, np.asarray(state.feat_mean), np.asarray(state.feat_std)
    )


def fit_pipeline(
    dataset,
    window_len: int = 1,
    train_fraction: float = 0.8,
    split_seed: int = 42,
    derived=(),
    target_name: str = "ROP",
) -> tuple[PreprocessorState, PreparedData]:
    """Fit the full transform on a labelled dataset and window it."""
    if dataset.target is None:
        raise DataError("fitting requires the target column")
    n = dataset.features.shape[0]
    if n < window_len + 1:
        raise WindowError(
            f"need more than {window_len} rows to fit with window length "
            f"{window_len}, got {n}"
        )
    m = n - window_len + 1
    split = split_train_test(m, train_fraction, split_seed)
    fit_rows = split.train + window_len - 1

    state = PreprocessorState(
        feature_names=list(dataset.feature_names),
        source_names=list(dataset.feature_names),
        window_len=window_len,
        derived=list(derived),
        fill_values=[],
        feat_mean=[],
        feat_std=[],
        target_name=target_name,
        target_mean=0.0,
        target_std=1.0,
    )
    matrix = _assemble_columns(dataset, state, fit_rows=fit_rows)

    y_raw = np.asarray(dataset.target, dtype=np.float64)
    if np.isnan(y_raw).any():
        raise DataError("target column contains missing values")
    t_mean, t_std = fit_standard_scaler(y_raw[fit_rows, None], [target_name])
    state.target_mean = float(t_mean[0])
    state.target_std = float(t_std[0])
    y_scaled = transform_target(state, y_raw)

    outliers = {
        name: iqr_outlier_report(matrix[fit_rows, j])
        for j, name in enumerate(state.feature_names)
    }

    windows, statics, y_w = make_windows(matrix, y_scaled, window_len)
    _, _, y_w_raw = make_windows(matrix, y_raw, window_len)
    tr, te = split.train, split.test
    prepared = PreparedData(
        feature_names=list(state.feature_names),
        split=split,
        train_windows=windows[tr],
        train_statics=statics[tr],
        train_y=y_w[tr],
        test_windows=windows[te],
        test_statics=statics[te],
        test_y=y_w[te],
        train_y_raw=y_w_raw[tr],
        test_y_raw=y_w_raw[te],
        outliers=outliers,
    )
    return state, prepared


def transform(dataset, state: PreprocessorState):
    """Apply a fitted transform to new rows; returns windowed tensors.

    The result aligns window i with source row ``i + window_len - 1``.
    The raw (unscaled) target slice is returned when the dataset has
    one, else None.
    """
    matrix = _assemble_columns(dataset, state)
    target = getattr(dataset, "target", None)
    windows, statics, y_raw = make_windows(matrix, target, state.window_len)
    return windows, statics, y_raw
