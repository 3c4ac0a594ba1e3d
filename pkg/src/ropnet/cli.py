"""Command-line pipeline: generate, train, evaluate, predict, explain.

Runs are configured by a flat ``key = value`` text file ('#' starts a
comment); every key is optional and falls back to the defaults listed
in ``--help``.  All artifacts land under ``--out`` with fixed names,
and every command is deterministic: rerunning with the same inputs
and seed rewrites identical bytes.

Exit codes: 0 success, 2 configuration problem, 3 data or checkpoint
problem, 4 numeric divergence during training.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import dataclass

from .data import (
    DEFAULT_NOISE_SIGMA,
    Dataset,
    DatasetSchema,
    FeatureSpec,
    SyntheticSpec,
    generate_synthetic,
    load_csv,
    write_csv,
    write_truth,
)
from .errors import (
    CheckpointError,
    ConfigurationError,
    DataError,
    DivergenceError,
    RangeError,
    RopnetError,
)
from .explain import permutation_importance
from .metrics import compute_metrics
from .models import MODEL_KINDS, ModelSpec, build_model
from .preprocess import fit_pipeline, inverse_target, transform
from .tensor import SeededRng
from .train import TrainConfig, load_checkpoint, save_checkpoint, train_model

_CONFIG_DOC = """\
config keys (flat `key = value` lines, '#' comments) and defaults:
  model.kind                 advanced_hybrid   one of: %s
  model.window_len           1                 rows per training window
  train.lr                   0.001             AdamW learning rate
  train.weight_decay         1e-05             decoupled decay coefficient
  train.batch_size           64
  train.epochs               100
  train.seed                 42                init, shuffling, dropout
  data.path                  (unset)           CSV to load; wins over synthetic
  data.synthetic.n_rows      2000
  data.synthetic.noise_sigma %s
  data.synthetic.regime_count 3
  data.synthetic.seed        42
  output.dir                 out               fallback when --out is absent

--seed overrides train.seed (data.synthetic.seed for gen-data);
--model overrides model.kind; --out overrides output.dir.
""" % (", ".join(MODEL_KINDS), DEFAULT_NOISE_SIGMA)


@dataclass
class RunConfig:
    model_kind: str = "advanced_hybrid"
    window_len: int = 1
    lr: float = 0.001
    weight_decay: float = 1e-5
    batch_size: int = 64
    epochs: int = 100
    seed: int = 42
    data_path: str = ""
    syn_rows: int = 2000
    syn_noise: float = DEFAULT_NOISE_SIGMA
    syn_regimes: int = 3
    syn_seed: int = 42
    out_dir: str = "out"


def _convert(key: str, raw: str, kind):
    try:
        return kind(raw)
    except ValueError:
        raise ConfigurationError(
            f"config key {key!r} needs a {kind.__name__}, got {raw!r}"
        ) from None


_KEY_SETTERS = {
    "model.kind": ("model_kind", str),
    "model.window_len": ("window_len", int),
    "train.lr": ("lr", float),
    "train.weight_decay": ("weight_decay", float),
    "train.batch_size": ("batch_size", int),
    "train.epochs": ("epochs", int),
    "train.seed": ("seed", int),
    "data.path": ("data_path", str),
    "data.synthetic.n_rows": ("syn_rows", int),
    "data.synthetic.noise_sigma": ("syn_noise", float),
    "data.synthetic.regime_count": ("syn_regimes", int),
    "data.synthetic.seed": ("syn_seed", int),
    "output.dir": ("out_dir", str),
}


def parse_config(path: str | None) -> RunConfig:
    """Read a flat key=value file; unknown keys are rejected."""
    cfg = RunConfig()
    if path is None:
        return cfg
    try:
        with open(path, "r", encoding="utf-8") as f:
            lines = f.readlines()
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
    for line_no, line in enumerate(lines, start=1):
        text = line.split("#", 1)[0].strip()
        if not text:
            continue
        if "=" not in text:
            raise ConfigurationError(
                f"{path}:{line_no}: expected `key = value`, got {text!r}"
            )
        key, raw = (part.strip() for part in text.split("=", 1))
        if key not in _KEY_SETTERS:
            raise ConfigurationError(
                f"{path}:{line_no}: unknown config key {key!r}; known keys: "
                f"{sorted(_KEY_SETTERS)}"
            )
        attr, kind = _KEY_SETTERS[key]
        setattr(cfg, attr, _convert(key, raw, kind))
    return cfg


def _load_dataset(cfg: RunConfig) -> Dataset:
    if cfg.data_path:
        return load_csv(cfg.data_path)
    dataset, _ = generate_synthetic(
        SyntheticSpec(
            n_rows=cfg.syn_rows,
            noise_sigma=cfg.syn_noise,
            regime_count=cfg.syn_regimes,
            seed=cfg.syn_seed,
        )
    )
    return dataset


def _prepare(cfg: RunConfig):
    dataset = _load_dataset(cfg)
    return fit_pipeline(dataset, window_len=cfg.window_len)


def _train_one(kind: str, cfg: RunConfig, state, prep):
    spec = ModelSpec(
        kind=kind,
        input_features=prep.train_windows.shape[2],
        window_len=cfg.window_len,
    )
    model = build_model(spec, SeededRng(cfg.seed))
    train_cfg = TrainConfig(
        learning_rate=cfg.lr,
        weight_decay=cfg.weight_decay,
        batch_size=cfg.batch_size,
        epochs=cfg.epochs,
        seed=cfg.seed,
    )
    curve = train_model(
        model,
        train_cfg,
        (prep.train_windows, prep.train_statics, prep.train_y),
        (prep.test_windows, prep.test_statics, prep.test_y),
    )
    pred = inverse_target(state, model.predict(prep.test_windows, prep.test_statics))
    report = compute_metrics(prep.test_y_raw, pred)
    return model, curve, report


def _write(path: str, content: str) -> str:
    with open(path, "w", encoding="utf-8") as f:
        f.write(content)
    return path


def _emit(path: str):
    print(f"wrote {path}")


def cmd_gen_data(args) -> int:
    cfg = parse_config(args.config)
    if args.seed is not None:
        cfg.syn_seed = args.seed
    out = _ensure_out(args, cfg)
    spec = SyntheticSpec(
        n_rows=cfg.syn_rows,
        noise_sigma=cfg.syn_noise,
        regime_count=cfg.syn_regimes,
        seed=cfg.syn_seed,
    )
    dataset, truth = generate_synthetic(spec)
    csv_path = os.path.join(out, "synthetic.csv")
    write_csv(csv_path, dataset)
    _emit(csv_path)
    truth_path = os.path.join(out, "synthetic.truth.json")
    write_truth(truth_path, truth)
    _emit(truth_path)
    print(
        f"{dataset.n_rows} rows; best attainable mse {truth['bayes_mse']:.4f} "
        f"(r2 {truth['bayes_r2']:.4f})"
    )
    return 0


def cmd_train(args) -> int:
    cfg = _run_config(args)
    out = _ensure_out(args, cfg)
    state, prep = _prepare(cfg)
    kind = cfg.model_kind
    model, curve, report = _train_one(kind, cfg, state, prep)
    curve.write_csv(os.path.join(out, f"losscurve_{kind}.csv"))
    _emit(os.path.join(out, f"losscurve_{kind}.csv"))
    ckpt = os.path.join(out, f"checkpoint_{kind}.roph")
    save_checkpoint(ckpt, model, state)
    _emit(ckpt)
    _emit(_write(os.path.join(out, f"metrics_{kind}.json"), report.to_json()))
    print(
        f"{kind}: test r2 {report.r2:.4f}, mae {report.mae:.4f}, "
        f"rmse {report.rmse:.4f}, mape {report.mape_pct:.4f}%"
    )
    return 0


def _eval_inputs(args):
    """Load a checkpoint plus a CSV shaped like its training data."""
    model, state = load_checkpoint(args.checkpoint)
    if state is None:
        raise DataError(
            f"{args.checkpoint} carries no preprocessor state; it cannot "
            f"score raw CSV rows"
        )
    columns = [FeatureSpec(n, "") for n in state.source_names]
    columns += [FeatureSpec(n, "", "categorical") for n in sorted(state.vocab)]
    columns.append(FeatureSpec(state.target_name, "", "target"))
    schema = DatasetSchema(columns=tuple(columns))
    return model, state, schema


def cmd_eval(args) -> int:
    model, state, schema = _eval_inputs(args)
    dataset = load_csv(args.data, schema)
    windows, statics, y_raw = transform(dataset, state)
    pred = inverse_target(state, model.predict(windows, statics))
    report = compute_metrics(y_raw, pred)
    out = _ensure_out(args, RunConfig())
    kind = model.spec.kind
    _emit(_write(os.path.join(out, f"metrics_{kind}.json"), report.to_json()))
    print(
        f"{kind} on {args.data}: r2 {report.r2:.4f}, mae {report.mae:.4f}, "
        f"rmse {report.rmse:.4f}, mape {report.mape_pct:.4f}% "
        f"(n {report.n})"
    )
    return 0


def cmd_predict(args) -> int:
    model, state, schema = _eval_inputs(args)
    dataset = load_csv(args.data, schema, require_target=False)
    windows, statics, y_raw = transform(dataset, state)
    pred = inverse_target(state, model.predict(windows, statics))
    out = _ensure_out(args, RunConfig())
    lines = []
    if y_raw is None:
        lines.append("sample_index,predicted\n")
        for i, p in enumerate(pred):
            lines.append(f"{i + state.window_len - 1},{float(p)!r}\n")
    else:
        lines.append("sample_index,actual,predicted,abs_error\n")
        for i, p in enumerate(pred):
            a = float(y_raw[i])
            p = float(p)
            lines.append(
                f"{i + state.window_len - 1},{a!r},{p!r},{abs(a - p)!r}\n"
            )
    path = _write(os.path.join(out, "predictions.csv"), "".join(lines))
    _emit(path)
    return 0


def cmd_compare(args) -> int:
    cfg = _run_config(args)
    out = _ensure_out(args, cfg)
    state, prep = _prepare(cfg)
    rows = ["model,r2,mae,rmse,mape_pct\n"]
    diverged = []
    for kind in MODEL_KINDS:
        try:
            _, curve, report = _train_one(kind, cfg, state, prep)
        except DivergenceError as exc:
            print(f"{kind}: diverged ({exc})", file=sys.stderr)
            rows.append(f"{kind},FAILED,FAILED,FAILED,FAILED\n")
            diverged.append(kind)
            continue
        curve.write_csv(os.path.join(out, f"losscurve_{kind}.csv"))
        _write(os.path.join(out, f"metrics_{kind}.json"), report.to_json())
        rows.append(
            f"{kind},{report.r2!r},{report.mae!r},{report.rmse!r},"
            f"{report.mape_pct!r}\n"
        )
        print(f"{kind}: test r2 {report.r2:.4f}")
    path = _write(os.path.join(out, "comparison.csv"), "".join(rows))
    _emit(path)
    if diverged:
        print(f"diverged: {', '.join(diverged)}", file=sys.stderr)
        return 4
    return 0


def cmd_explain(args) -> int:
    model, state, schema = _eval_inputs(args)
    dataset = load_csv(args.data, schema)
    windows, statics, y_raw = transform(dataset, state)

    def raw_predict(w, s):
        return inverse_target(state, model.predict(w, s))

    class _RawModel:
        predict = staticmethod(raw_predict)

    seed = args.seed if args.seed is not None else 42
    report = permutation_importance(
        _RawModel(),
        windows,
        statics,
        y_raw,
        state.feature_names,
        SeededRng(seed),
    )
    out = _ensure_out(args, RunConfig())
    csv_path = os.path.join(out, "importance.csv")
    report.write_csv(csv_path)
    _emit(csv_path)
    _emit(_write(os.path.join(out, "importance.json"), report.to_json()))
    top = report.ranking()[0]
    print(f"most influential feature: {report.feature_names[top]}")
    return 0


def _run_config(args) -> RunConfig:
    cfg = parse_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if getattr(args, "model", None):
        cfg.model_kind = args.model
    return cfg


def _ensure_out(args, cfg: RunConfig) -> str:
    out = args.out if args.out else cfg.out_dir
    os.makedirs(out, exist_ok=True)
    return out


def _add_common(p, config=True, checkpoint=False, data=False, model=False):
    if config:
        p.add_argument("--config", help="flat key=value config file")
    p.add_argument("--seed", type=int, help="override the run seed")
    p.add_argument("--out", help="artifact directory (default: output.dir)")
    if checkpoint:
        p.add_argument("--checkpoint", required=True, help=".roph model file")
    if data:
        p.add_argument("--data", required=True, help="input CSV")
    if model:
        p.add_argument(
            "--model", choices=MODEL_KINDS, help="override model.kind"
        )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ropnet",
        description="Train and explain drilling rate-of-penetration models.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, helptext, **kw):
        p = sub.add_parser(
            name,
            help=helptext,
            epilog=_CONFIG_DOC,
            formatter_class=argparse.RawDescriptionHelpFormatter,
        )
        _add_common(p, **kw)
        p.set_defaults(fn=fn)
        return p

    add("gen-data", cmd_gen_data, "write a synthetic well CSV plus its truth JSON")
    add("train", cmd_train, "train one model; writes checkpoint, loss curve, metrics", model=True)
    add("eval", cmd_eval, "score a checkpoint against a labelled CSV", config=False, checkpoint=True, data=True)
    add("predict", cmd_predict, "emit per-row predictions from a checkpoint", config=False, checkpoint=True, data=True)
    add("compare", cmd_compare, "train all five architectures on shared data")
    add("explain", cmd_explain, "permutation importance for a checkpoint", config=False, checkpoint=True, data=True)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigurationError, RangeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except (DataError, CheckpointError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except RopnetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
