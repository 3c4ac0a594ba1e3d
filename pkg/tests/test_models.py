"""Model construction, sizing, and forward behavior for all five kinds."""

import numpy as np
import pytest

from ropnet.errors import ConfigurationError, DimensionError
from ropnet.layers import GradTape
from ropnet.models import (
    ADVANCED_HYBRID,
    BASELINE_LSTM,
    HYBRID_LSTM_MIXER,
    HYBRID_LSTM_MIXER_ATTENTION,
    MODEL_KINDS,
    TS_MIXER,
    ModelSpec,
    build_model,
    parameter_count,
)
from ropnet.tensor import SeededRng


def _lstm_count(F, H, layers):
    total = 0
    for layer in range(layers):
        in_dim = F if layer == 0 else H
        total += 4 * (H * in_dim + H * H + H)
    return total


def expected_count(kind, F=8, H=64, layers=2, mixer_hidden=128, branch=(128, 64), ffn=128):
    """Parameter total from the published layer dimensions."""
    if kind == BASELINE_LSTM:
        return _lstm_count(F, H, layers) + (H + 1)
    if kind == TS_MIXER:
        widths = [F, mixer_hidden] + [mixer_hidden] * 4
        linears = sum(
            widths[i + 1] * widths[i] + widths[i + 1] for i in range(len(widths) - 1)
        )
        norms = 2 * mixer_hidden * 5
        return linears + norms + (mixer_hidden + 1)
    branch_linears = branch[0] * F + branch[0] + branch[1] * branch[0] + branch[1]
    fusion = (H + branch[1]) * 1 + 1
    total = _lstm_count(F, H, layers) + branch_linears + fusion
    if kind in (HYBRID_LSTM_MIXER_ATTENTION, ADVANCED_HYBRID):
        total += H  # pooling vector
    if kind == ADVANCED_HYBRID:
        encoder = 4 * H * H  # q, k, v, o projections
        encoder += ffn * H + ffn + H * ffn + H  # two ffn linears
        encoder += 4 * H  # two layer norms
        total += encoder
    return total


def small_spec(kind, window_len=3):
    return ModelSpec(
        kind=kind,
        input_features=5,
        window_len=window_len,
        lstm_hidden=8,
        lstm_layers=2,
        heads=2,
        ffn_dim=12,
        mixer_hidden=10,
        branch_dims=(10, 6),
        dropout=0.2,
    )


def small_inputs(spec, batch=4, seed=3):
    rng = SeededRng(seed)
    window = rng.normal((batch, spec.window_len, spec.input_features))
    static = rng.normal((batch, spec.input_features))
    return window, static


class TestParameterCounts:
    @pytest.mark.parametrize("kind", MODEL_KINDS)
    def test_default_dims_match_formula(self, kind):
        spec = ModelSpec(kind=kind, input_features=8, window_len=4)
        model = build_model(spec, SeededRng(0))
        assert parameter_count(model) == expected_count(kind)

    def test_published_totals_at_default_dims(self):
        """Spot values implied by the layer dimension tables."""
        totals = {
            kind: parameter_count(
                build_model(ModelSpec(kind=kind, input_features=8), SeededRng(0))
            )
            for kind in MODEL_KINDS
        }
        assert totals[BASELINE_LSTM] == 51_777
        assert totals[TS_MIXER] == 68_609
        assert totals[HYBRID_LSTM_MIXER] == 61_249
        assert totals[HYBRID_LSTM_MIXER_ATTENTION] == 61_313
        assert totals[ADVANCED_HYBRID] == 94_529

    def test_buffers_not_counted_as_parameters(self):
        spec = ModelSpec(kind=TS_MIXER, input_features=8)
        model = build_model(spec, SeededRng(0))
        n_buffer_entries = sum(arr.size for _, arr in model.buffers())
        assert n_buffer_entries == 2 * 128 * 5
        assert parameter_count(model) == 68_609


class TestSpecValidation:
    def test_unknown_kind(self):
        with pytest.raises(ConfigurationError):
            ModelSpec(kind="perceptron", input_features=8)

    def test_bad_dropout(self):
        for rate in (-0.1, 1.0):
            with pytest.raises(ConfigurationError):
                ModelSpec(kind=BASELINE_LSTM, input_features=8, dropout=rate)

    def test_heads_must_divide_hidden(self):
        with pytest.raises(ConfigurationError):
            ModelSpec(kind=ADVANCED_HYBRID, input_features=8, lstm_hidden=64, heads=5)

    def test_positive_dims(self):
        with pytest.raises(ConfigurationError):
            ModelSpec(kind=BASELINE_LSTM, input_features=0)
        with pytest.raises(ConfigurationError):
            ModelSpec(kind=BASELINE_LSTM, input_features=8, window_len=0)

    def test_dict_round_trip(self):
        spec = small_spec(ADVANCED_HYBRID)
        again = ModelSpec.from_dict(spec.to_dict())
        assert again == spec


class TestForward:
    @pytest.mark.parametrize("kind", MODEL_KINDS)
    def test_output_shape(self, kind):
        spec = small_spec(kind)
        model = build_model(spec, SeededRng(1))
        window, static = small_inputs(spec)
        out = model.forward(window, static)
        assert out.shape == (4, 1)
        assert np.all(np.isfinite(out))

    @pytest.mark.parametrize("kind", MODEL_KINDS)
    def test_inference_deterministic(self, kind):
        spec = small_spec(kind)
        model = build_model(spec, SeededRng(1))
        window, static = small_inputs(spec)
        np.testing.assert_array_equal(
            model.forward(window, static), model.forward(window, static)
        )

    def test_same_seed_same_parameters(self):
        spec = small_spec(ADVANCED_HYBRID)
        a = build_model(spec, SeededRng(7))
        b = build_model(spec, SeededRng(7))
        for pa, pb in zip(a.params(), b.params()):
            assert pa.name == pb.name
            np.testing.assert_array_equal(pa.value, pb.value)

    def test_different_seed_different_parameters(self):
        spec = small_spec(ADVANCED_HYBRID)
        a = build_model(spec, SeededRng(7))
        b = build_model(spec, SeededRng(8))
        assert any(
            not np.array_equal(pa.value, pb.value)
            for pa, pb in zip(a.params(), b.params())
        )

    def test_mixer_kind_ignores_window_content(self):
        spec = small_spec(TS_MIXER)
        model = build_model(spec, SeededRng(2))
        window, static = small_inputs(spec)
        out_a = model.forward(window, static)
        out_b = model.forward(window * 100.0, static)
        np.testing.assert_array_equal(out_a, out_b)

    @pytest.mark.parametrize("kind", [BASELINE_LSTM, ADVANCED_HYBRID])
    def test_training_dropout_perturbs_output(self, kind):
        spec = small_spec(kind)
        model = build_model(spec, SeededRng(1))
        window, static = small_inputs(spec)
        eval_out = model.forward(window, static)
        train_out = model.forward(
            window, static, training=True, rng=SeededRng(11)
        )
        assert not np.array_equal(eval_out, train_out)

    def test_shape_validation(self):
        spec = small_spec(HYBRID_LSTM_MIXER)
        model = build_model(spec, SeededRng(1))
        window, static = small_inputs(spec)
        with pytest.raises(DimensionError):
            model.forward(window[:, :2, :], static)
        with pytest.raises(DimensionError):
            model.forward(window, static[:, :3])
        with pytest.raises(DimensionError):
            model.forward(window, static[:3])


class TestPredict:
    def test_batched_prediction_matches_single_pass(self):
        spec = small_spec(ADVANCED_HYBRID)
        model = build_model(spec, SeededRng(5))
        rng = SeededRng(6)
        windows = rng.normal((10, spec.window_len, spec.input_features))
        statics = rng.normal((10, spec.input_features))
        full = model.predict(windows, statics, batch_size=256)
        chunked = model.predict(windows, statics, batch_size=3)
        # matrix kernels may re-associate sums per batch shape: ulp slack
        np.testing.assert_allclose(full, chunked, rtol=0, atol=1e-12)
        assert full.shape == (10,)


class TestStateArrays:
    @pytest.mark.parametrize("kind", MODEL_KINDS)
    def test_names_unique_and_params_first(self, kind):
        model = build_model(small_spec(kind), SeededRng(0))
        names = [name for name, _ in model.state_arrays()]
        assert len(names) == len(set(names))
        n_params = len(model.params())
        param_names = {p.name for p in model.params()}
        assert set(names[:n_params]) == param_names

    def test_gradient_flows_through_every_parameter(self):
        """One backward touches all trainable arrays of the big model."""
        spec = small_spec(ADVANCED_HYBRID)
        model = build_model(spec, SeededRng(9))
        window, static = small_inputs(spec, batch=4)
        tape = GradTape()
        out = model.forward(window, static, tape)
        model.zero_grad()
        tape.backward(np.ones_like(out))
        for p in model.params():
            assert np.any(p.grad != 0.0), f"no gradient reached {p.name}"
