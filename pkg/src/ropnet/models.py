"""Model zoo: five architectures over windowed drilling data.

Every model consumes a window [B, T, F] of consecutive sensor rows and
the static vector [B, F] (the window's final row) and predicts the
target [B, 1].  The five kinds:

  - ``baseline_lstm``: two stacked recurrent layers with dropout
    between them, final hidden state into a dense output.
  - ``ts_mixer``: the standalone feedforward mixer on the static row
    only; the window is ignored.
  - ``hybrid_lstm_mixer``: recurrent branch (final hidden state) and
    mixer branch fused by concatenation into a dense output.
  - ``hybrid_lstm_mixer_attention``: as above, but the recurrent
    branch is pooled over time by learned attention instead of taking
    the last state.
  - ``advanced_hybrid``: recurrent stack, then a transformer encoder
    block over the hidden sequence, attention pooling, fused with the
    mixer branch.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from .errors import ConfigurationError, DimensionError
from .layers import (
    AttentionPool,
    FusionHead,
    GradTape,
    Linear,
    LstmStack,
    MixerBlock,
    Module,
    TransformerEncoderBlock,
    dropout_apply,
    last_step,
)
from .tensor import SeededRng

BASELINE_LSTM = "baseline_lstm"
TS_MIXER = "ts_mixer"
HYBRID_LSTM_MIXER = "hybrid_lstm_mixer"
HYBRID_LSTM_MIXER_ATTENTION = "hybrid_lstm_mixer_attention"
ADVANCED_HYBRID = "advanced_hybrid"

MODEL_KINDS = (
    BASELINE_LSTM,
    TS_MIXER,
    HYBRID_LSTM_MIXER,
    HYBRID_LSTM_MIXER_ATTENTION,
    ADVANCED_HYBRID,
)


@dataclass
class ModelSpec:
    """Architecture hyperparameters; serializable for checkpoints."""

    kind: str
    input_features: int
    window_len: int = 1
    lstm_hidden: int = 64
    lstm_layers: int = 2
    heads: int = 4
    ffn_dim: int = 128
    mixer_hidden: int = 128
    branch_dims: tuple[int, int] = (128, 64)
    dropout: float = 0.2

    def __post_init__(self):
        self.branch_dims = tuple(self.branch_dims)
        if self.kind not in MODEL_KINDS:
            raise ConfigurationError(
                f"unknown model kind {self.kind!r}; choose from {MODEL_KINDS}"
            )
        if self.input_features < 1:
            raise ConfigurationError("input_features must be at least 1")
        if self.window_len < 1:
            raise ConfigurationError("window_len must be at least 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigurationError(
                f"dropout must lie in [0, 1), got {self.dropout}"
            )
        if min(self.lstm_hidden, self.lstm_layers, self.heads, self.ffn_dim) < 1:
            raise ConfigurationError("all width settings must be positive")
        if self.lstm_hidden % self.heads != 0:
            raise ConfigurationError(
                f"lstm_hidden {self.lstm_hidden} must be divisible by "
                f"heads {self.heads}"
            )

    def to_dict(self):
        d = asdict(self)
        d["branch_dims"] = list(self.branch_dims)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


class Model(Module):
    """A built architecture: owns layers, exposes forward and predict."""

    def __init__(self, spec: ModelSpec, rng: SeededRng):
        self.spec = spec
        F = spec.input_features
        H = spec.lstm_hidden
        self.lstm = None
        self.mixer = None
        self.encoder = None
        self.pool = None
        self.head = None
        self.fusion = None
        self._ordered: list[Module] = []

        def add(layer):
            self._ordered.append(layer)
            return layer

        kind = spec.kind
        if kind == BASELINE_LSTM:
            self.lstm = add(LstmStack(F, H, spec.lstm_layers, rng))
            self.head = add(Linear(H, 1, rng, "head"))
        elif kind == TS_MIXER:
            self.mixer = add(
                MixerBlock(
                    MixerBlock.STANDALONE, F, rng, hidden_dim=spec.mixer_hidden
                )
            )
        else:
            self.lstm = add(LstmStack(F, H, spec.lstm_layers, rng))
            if kind == ADVANCED_HYBRID:
                self.encoder = add(
                    TransformerEncoderBlock(H, spec.heads, spec.ffn_dim, rng)
                )
            if kind in (HYBRID_LSTM_MIXER_ATTENTION, ADVANCED_HYBRID):
                self.pool = add(AttentionPool(H, rng))
            self.mixer = add(
                MixerBlock(
                    MixerBlock.BRANCH, F, rng, branch_dims=spec.branch_dims
                )
            )
            self.fusion = add(FusionHead(H, self.mixer.output_dim, rng))

    def params(self):
        out = []
        for layer in self._ordered:
            out += layer.params()
        return out

    def buffers(self):
        out = []
        for layer in self._ordered:
            out += layer.buffers()
        return out

    def state_arrays(self):
        """Every persistent array, parameters first, in stable order."""
        return [(p.name, p.value) for p in self.params()] + self.buffers()

    def _check_inputs(self, window, static):
        spec = self.spec
        if window.ndim != 3 or window.shape[1:] != (
            spec.window_len,
            spec.input_features,
        ):
            raise DimensionError(
                f"expected window [B, {spec.window_len}, "
                f"{spec.input_features}], got {window.shape}"
            )
        if static.ndim != 2 or static.shape != (
            window.shape[0],
            spec.input_features,
        ):
            raise DimensionError(
                f"expected static [B, {spec.input_features}] matching the "
                f"window batch, got {static.shape}"
            )

    def forward(self, window, static, tape=None, training=False, rng=None):
        """Predict [B, 1]; records on ``tape`` when given.

        ``rng`` drives dropout and is only consulted when ``training``
        is true and the architecture's dropout rate is nonzero.
        """
        self._check_inputs(window, static)
        spec = self.spec
        kind = spec.kind
        if kind == TS_MIXER:
            return self.mixer.forward(static, tape, training=training)
        if kind == BASELINE_LSTM:
            h = window
            for layer in range(self.lstm.num_layers):
                h = self.lstm.layer_forward(layer, h, tape)
                if layer < self.lstm.num_layers - 1:
                    h = dropout_apply(h, spec.dropout, rng, training, tape)
            return self.head.forward(last_step(h, tape), tape)
        h = self.lstm.forward(window, tape)
        if kind == ADVANCED_HYBRID:
            h = self.encoder.forward(h, tape)
        if self.pool is not None:
            temporal = self.pool.forward(h, tape)
        else:
            temporal = last_step(h, tape)
        mixed = self.mixer.forward(static, tape, training=training)
        return self.fusion.forward(
            temporal,
            mixed,
            tape,
            dropout_rate=spec.dropout,
            rng=rng,
            training=training,
        )

    def predict(self, windows, statics, batch_size=256):
        """Inference over N samples in batches; returns a flat [N] array."""
        n = windows.shape[0]
        out = np.empty(n)
        for start in range(0, n, batch_size):
            stop = min(start + batch_size, n)
            out[start:stop] = self.forward(
                windows[start:stop], statics[start:stop]
            )[:, 0]
        return out


def build_model(spec: ModelSpec, rng: SeededRng) -> Model:
    """Construct a model with fresh parameters drawn from ``rng``."""
    return Model(spec, rng)


def parameter_count(model: Model) -> int:
    """Total trainable scalar count (persistent buffers excluded)."""
    return sum(p.value.size for p in model.params())
