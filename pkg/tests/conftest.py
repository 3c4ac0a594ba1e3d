"""Shared fixtures.

The expensive trained-model fixtures are session-scoped so the slow
acceptance checks and the data-quality invariants reuse one run.
"""

import time

import pytest

from ropnet.data import SyntheticSpec, generate_synthetic
from ropnet.metrics import compute_metrics
from ropnet.models import (
    ADVANCED_HYBRID,
    HYBRID_LSTM_MIXER,
    TS_MIXER,
    ModelSpec,
    build_model,
)
from ropnet.preprocess import fit_pipeline, inverse_target
from ropnet.tensor import SeededRng
from ropnet.train import TrainConfig, train_model


def train_kind(kind, dataset, window_len=4, epochs=100, seed=42):
    """Fit the pipeline and train one model; returns run artifacts."""
    state, prep = fit_pipeline(dataset, window_len=window_len)
    spec = ModelSpec(
        kind=kind,
        input_features=len(prep.feature_names),
        window_len=window_len,
    )
    model = build_model(spec, SeededRng(seed))
    cfg = TrainConfig(epochs=epochs, seed=seed)
    curve = train_model(
        model,
        cfg,
        (prep.train_windows, prep.train_statics, prep.train_y),
        (prep.test_windows, prep.test_statics, prep.test_y),
    )
    preds = inverse_target(state, model.predict(prep.test_windows, prep.test_statics))
    report = compute_metrics(prep.test_y_raw, preds)
    return {
        "state": state,
        "prep": prep,
        "model": model,
        "curve": curve,
        "report": report,
    }


@pytest.fixture(scope="session")
def default_benchmark():
    """The stock synthetic dataset plus its generating ground truth."""
    dataset, truth = generate_synthetic(SyntheticSpec())
    return dataset, truth


@pytest.fixture(scope="session")
def benchmark_run(default_benchmark):
    """AdvancedHybrid trained at defaults on the stock benchmark."""
    dataset, truth = default_benchmark
    started = time.perf_counter()
    run = train_kind(ADVANCED_HYBRID, dataset)
    run["elapsed"] = time.perf_counter() - started
    run["truth"] = truth
    return run


@pytest.fixture(scope="session")
def ordering_runs():
    """Test R² per architecture across five dataset seeds.

    Short runs on small regenerated datasets: enough signal to rank the
    sequence-aware models against the static mixer.
    """
    kinds = (ADVANCED_HYBRID, HYBRID_LSTM_MIXER, TS_MIXER)
    scores = {kind: {} for kind in kinds}
    for ds_seed in (1, 2, 3, 4, 5):
        dataset, _ = generate_synthetic(SyntheticSpec(n_rows=800, seed=ds_seed))
        for kind in kinds:
            run = train_kind(kind, dataset, epochs=30)
            scores[kind][ds_seed] = run["report"].r2
    return scores
