"""Mini-batch training with decoupled weight decay, plus checkpoints.

The optimizer follows the AdamW scheme: moment estimates with bias
correction drive the adaptive step, while weight decay is applied
directly to the parameter (never through the moments), so a parameter
with zero gradient decays by exactly (1 - lr * wd) per step.

One seeded generator drives both the per-epoch shuffle and dropout, so
a (model init, config, data) triple reproduces training bit for bit.

Checkpoint layout (all integers little-endian):

  bytes 0-3   magic "ROPH"
  u32         format version (currently 1)
  u32         length of a UTF-8 JSON block holding the architecture
              settings and the fitted preprocessor state
  ...         that JSON block
  then, per persistent array (parameters and running statistics):
  u32         name length, followed by the UTF-8 name
  u32         rank, then rank u64 extents
  ...         the float64 payload, C order
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ConfigurationError,
    CorruptCheckpointError,
    DimensionError,
    DivergenceError,
    EmptyBatchError,
    IncompatibleCheckpointError,
)
from .models import Model, ModelSpec, build_model
from .preprocess import PreprocessorState
from .tensor import SeededRng

CHECKPOINT_MAGIC = b"ROPH"
CHECKPOINT_VERSION = 1


@dataclass
class TrainConfig:
    learning_rate: float = 0.001
    weight_decay: float = 1e-5
    batch_size: int = 64
    epochs: int = 100
    seed: int = 42
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigurationError(
                f"learning rate must be positive, got {self.learning_rate}"
            )
        if self.weight_decay < 0:
            raise ConfigurationError(
                f"weight decay must be nonnegative, got {self.weight_decay}"
            )
        if self.batch_size < 1 or self.epochs < 1:
            raise ConfigurationError(
                "batch size and epoch count must be at least 1"
            )
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigurationError("betas must lie in [0, 1)")


def mse_loss(pred: np.ndarray, target: np.ndarray):
    """Mean squared error and its gradient w.r.t. the predictions."""
    if pred.size == 0:
        raise EmptyBatchError("loss over an empty batch is undefined")
    if pred.size != target.size:
        raise DimensionError(
            f"predictions {pred.shape} and targets {target.shape} differ in size"
        )
    t = np.asarray(target, dtype=np.float64).reshape(pred.shape)
    diff = pred - t
    # divergence shows up here as inf/nan; the caller checks the value,
    # so the overflow itself must not warn
    with np.errstate(over="ignore", invalid="ignore"):
        loss = float(np.mean(diff * diff))
        grad = (2.0 / pred.size) * diff
    return loss, grad


class AdamWState:
    """First and second moment accumulators, one pair per parameter."""

    def __init__(self, params):
        self.t = 0
        self.m = [np.zeros_like(p.value) for p in params]
        self.v = [np.zeros_like(p.value) for p in params]


def adamw_step(params, state: AdamWState, cfg: TrainConfig):
    """One update over all parameters from their accumulated gradients."""
    state.t += 1
    bc1 = 1.0 - cfg.beta1**state.t
    bc2 = 1.0 - cfg.beta2**state.t
    for p, m, v in zip(params, state.m, state.v):
        g = p.grad
        m[...] = cfg.beta1 * m + (1.0 - cfg.beta1) * g
        v[...] = cfg.beta2 * v + (1.0 - cfg.beta2) * (g * g)
        step = (m / bc1) / (np.sqrt(v / bc2) + cfg.eps)
        p.value *= 1.0 - cfg.learning_rate * cfg.weight_decay
        p.value -= cfg.learning_rate * step


@dataclass
class LossCurve:
    """Per-epoch mean squared errors, in the scaled target space."""

    rows: list[tuple[int, float, float]] = field(default_factory=list)

    def write_csv(self, path):
        with open(path, "w", encoding="utf-8") as f:
            f.write("epoch,train_mse,test_mse\n")
            for epoch, train_mse, test_mse in self.rows:
                f.write(f"{epoch},{train_mse!r},{test_mse!r}\n")

    @property
    def final_test_mse(self) -> float:
        return self.rows[-1][2]


def evaluate_mse(model: Model, windows, statics, y) -> float:
    pred = model.predict(windows, statics)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if y.size != pred.size:
        raise DimensionError(
            f"{pred.size} predictions against {y.size} targets"
        )
    diff = pred - y
    return float(np.mean(diff * diff))


def _batch_slices(perm: np.ndarray, batch_size: int):
    """Contiguous index chunks; a trailing singleton is folded into its
    predecessor so batch statistics stay defined."""
    n = perm.size
    bounds = list(range(0, n, batch_size)) + [n]
    if len(bounds) > 2 and bounds[-1] - bounds[-2] == 1:
        bounds.pop(-2)
    return [perm[a:b] for a, b in zip(bounds[:-1], bounds[1:])]


def train_model(model: Model, cfg: TrainConfig, train_data, test_data) -> LossCurve:
    """Fit ``model`` on (windows, statics, targets) triples.

    Targets are expected in scaled space.  Every epoch reshuffles the
    training set, runs forward/backward per batch, applies one
    optimizer step per batch, and records the running train MSE plus
    the full test MSE under inference mode.  A non-finite loss aborts
    with a divergence error.
    """
    from .layers import GradTape

    train_w, train_s, train_y = train_data
    test_w, test_s, test_y = test_data
    if train_w.shape[0] == 0:
        raise EmptyBatchError("training set is empty")
    n = train_w.shape[0]
    rng = SeededRng(cfg.seed)
    opt = AdamWState(model.params())
    curve = LossCurve()
    for epoch in range(1, cfg.epochs + 1):
        perm = rng.permutation(n)
        sq_sum = 0.0
        for batch_no, idx in enumerate(_batch_slices(perm, cfg.batch_size)):
            tape = GradTape()
            model.zero_grad()
            pred = model.forward(
                train_w[idx], train_s[idx], tape, training=True, rng=rng
            )
            loss, grad = mse_loss(pred, train_y[idx])
            if not np.isfinite(loss):
                raise DivergenceError(
                    f"loss became {loss} at epoch {epoch}, batch {batch_no}"
                )
            tape.backward(grad)
            adamw_step(model.params(), opt, cfg)
            sq_sum += loss * idx.size
        test_mse = evaluate_mse(model, test_w, test_s, test_y)
        curve.rows.append((epoch, sq_sum / n, test_mse))
    return curve


def save_checkpoint(path, model: Model, preprocessor: PreprocessorState | None = None):
    """Serialize architecture, preprocessor state, and all arrays."""
    header = {
        "model_spec": model.spec.to_dict(),
        "preprocessor": None if preprocessor is None else preprocessor.to_dict(),
    }
    payload = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", CHECKPOINT_VERSION))
        f.write(struct.pack("<I", len(payload)))
        f.write(payload)
        for name, arr in model.state_arrays():
            encoded = name.encode("utf-8")
            f.write(struct.pack("<I", len(encoded)))
            f.write(encoded)
            f.write(struct.pack("<I", arr.ndim))
            for extent in arr.shape:
                f.write(struct.pack("<Q", extent))
            f.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def _read_exact(f, count: int) -> bytes:
    buf = f.read(count)
    if len(buf) != count:
        raise CorruptCheckpointError(
            f"truncated checkpoint: wanted {count} bytes, got {len(buf)}"
        )
    return buf


def load_checkpoint(path) -> tuple[Model, PreprocessorState | None]:
    """Rebuild a model (and preprocessor) exactly as checkpointed."""
    with open(path, "rb") as f:
        magic = f.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise IncompatibleCheckpointError(
                f"bad magic {magic!r}; not a model checkpoint"
            )
        (version,) = struct.unpack("<I", _read_exact(f, 4))
        if version != CHECKPOINT_VERSION:
            raise IncompatibleCheckpointError(
                f"unsupported checkpoint version {version}; "
                f"this reader handles version {CHECKPOINT_VERSION}"
            )
        (json_len,) = struct.unpack("<I", _read_exact(f, 4))
        try:
            header = json.loads(_read_exact(f, json_len).decode("utf-8"))
            spec = ModelSpec.from_dict(header["model_spec"])
        except (ValueError, KeyError, TypeError) as exc:
            raise CorruptCheckpointError(
                f"unreadable checkpoint header: {exc}"
            ) from exc
        pre = header.get("preprocessor")
        preprocessor = None if pre is None else PreprocessorState.from_dict(pre)

        model = build_model(spec, SeededRng(0))
        arrays = dict(model.state_arrays())
        seen = set()
        while True:
            sizes = f.read(4)
            if not sizes:
                break
            if len(sizes) != 4:
                raise CorruptCheckpointError("truncated record header")
            (name_len,) = struct.unpack("<I", sizes)
            name = _read_exact(f, name_len).decode("utf-8")
            (rank,) = struct.unpack("<I", _read_exact(f, 4))
            shape = tuple(
                struct.unpack("<Q", _read_exact(f, 8))[0] for _ in range(rank)
            )
            data = np.frombuffer(
                _read_exact(f, 8 * int(np.prod(shape, dtype=np.int64))), "<f8"
            ).reshape(shape)
            if name not in arrays:
                raise CorruptCheckpointError(
                    f"checkpoint names unknown array {name!r}"
                )
            if name in seen:
                raise CorruptCheckpointError(f"duplicate array {name!r}")
            if arrays[name].shape != shape:
                raise CorruptCheckpointError(
                    f"array {name!r} has shape {shape}, expected "
                    f"{arrays[name].shape}"
                )
            arrays[name][...] = data
            seen.add(name)
        missing = sorted(set(arrays) - seen)
        if missing:
            raise CorruptCheckpointError(
                f"checkpoint is missing arrays: {missing}"
            )
    return model, preprocessor
