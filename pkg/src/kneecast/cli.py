"""Command-line interface.

Subcommands: synth, preprocess, train, transfer, finetune, eval, predict.
Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numeric failure; each failure prints one machine-parsable line on
stderr of the form ``kneecast: <kind>-error: <message>``.

``KNEECAST_THREADS`` caps parallelism for multi-recording preprocessing;
all randomness flows from the per-run ``--seed`` / config seed.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .dataset import (
    SplitPolicy,
    load_example_cache,
    make_examples,
    save_example_cache,
    scenario_uses_forces,
    split_examples,
    validate_scenario,
)
from .errors import ConfigError, DataError, KneecastError
from .ioutil import write_text_atomic
from .metrics import evaluate_metrics, persistence_baseline, truth_matrix
from .models import build_model
from .preprocess import PreprocessConfig, preprocess_recording_channels
from .preprocess import KIND_EMG, KIND_FORCE, KIND_KINEMATIC
from .recordings import EMG_CHANNEL_NAMES, load_recording, save_recording
from .runconfig import RunConfig, dump_schema
from .stages import run_stage_plan
from .synth import SynthSpec, synthesize_subject
from .training import TrainConfig, finetune, predict_degrees, train


def thread_count() -> int:
    try:
        return max(1, int(os.environ.get("KNEECAST_THREADS", "1")))
    except ValueError:
        return 1


def examples_from_paths(paths, scenario, horizon, config: PreprocessConfig):
    """Load recordings (or caches) and build examples, order-preserving."""
    def build(path):
        if str(path).endswith(".npz"):
            examples, meta = load_example_cache(path)
            if meta["horizon"] != horizon:
                raise ConfigError(
                    f"{path}: cache horizon {meta['horizon']} != requested {horizon}")
            return examples
        return make_examples(load_recording(path), scenario, horizon, config=config)

    paths = list(paths)
    if not paths:
        raise ConfigError("no input data files given")
    workers = thread_count()
    if workers > 1 and len(paths) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            lists = list(pool.map(build, paths))
    else:
        lists = [build(p) for p in paths]
    examples = []
    for chunk in lists:
        examples.extend(chunk)
    return examples


def _preprocess_from_meta(model) -> PreprocessConfig:
    return PreprocessConfig.from_dict(model.meta.get("preprocess", {}))


def _write_json(path, obj) -> None:
    write_text_atomic(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


# -- subcommands ----------------------------------------------------------

def cmd_synth(args) -> int:
    spec = SynthSpec(
        n_cycles=args.cycles,
        cycle_period_s=args.period,
        condition=args.condition,
        jitter=args.jitter,
        seed=args.seed,
        include_forces=args.forces,
        trait_scale=args.trait_scale,
        subject_id=args.subject_id,
        trial_id=args.trial_id,
    )
    rec = synthesize_subject(spec)
    save_recording(rec, args.output)
    print(f"wrote {args.output}: {rec.n_samples} samples at {rec.sample_rate_hz} Hz, "
          f"subject {rec.subject_id} ({rec.condition})")
    return 0


def cmd_preprocess(args) -> int:
    config = PreprocessConfig()
    validate_scenario(args.scenario)
    examples = examples_from_paths(args.data, args.scenario, args.horizon, config)
    if not examples:
        raise ConfigError("inputs produced zero examples (recordings too short?)")
    save_example_cache(args.output, examples, config, args.scenario)
    print(f"wrote {args.output}: {len(examples)} examples, horizon {args.horizon}")
    return 0


def _single_train(cfg: RunConfig, outdir: Path) -> int:
    config = cfg.preprocess_config()
    examples = examples_from_paths(cfg.data_paths, cfg.scenario, cfg.horizon, config)
    parts = split_examples(examples, cfg.split_policy())
    train_key = "finetune" if "finetune" in parts else "train"
    eval_key = "evaluation" if "evaluation" in parts else "validation"
    model = build_model(cfg.scenario, cfg.hyper(), seed=cfg.seed)
    model.meta["preprocess"] = config.to_dict()
    model.meta["train_seed"] = cfg.seed
    model, history = train(model, parts[train_key], parts[eval_key],
                           cfg.train_config())
    preds = predict_degrees(model, parts[eval_key])
    report = evaluate_metrics(preds, truth_matrix(parts[eval_key]))

    outdir.mkdir(parents=True, exist_ok=True)
    ckpt = outdir / "model.ckpt"
    save_checkpoint(model, ckpt)
    _write_json(outdir / "history.json", history.to_dict())
    write_text_atomic(outdir / "metrics.json", report.to_json())
    print(f"trained {cfg.scenario} H={cfg.horizon}: best epoch "
          f"{history.best_epoch}, validation nmae {report.nmae:.4f}")
    print(f"wrote {ckpt}")
    return 0


def cmd_train(args) -> int:
    cfg = RunConfig.load(args.config)
    outdir = Path(args.output_dir) if args.output_dir else (cfg.output_dir or Path("."))
    if cfg.has_stages:
        preprocess = cfg.preprocess_config()
        artifacts = run_stage_plan(cfg.stages(), hyper=cfg.hyper(),
                                   preprocess=preprocess, workdir=outdir)
        for name, art in artifacts.items():
            line = f"stage {name}: checkpoint {art.checkpoint_path}"
            if art.metrics is not None:
                line += f", nmae {art.metrics.nmae:.4f}"
            print(line)
        return 0
    return _single_train(cfg, outdir)


def cmd_transfer(args) -> int:
    from .training import transfer_sic_to_dic

    source = load_checkpoint(args.source)
    hyper = source.hyper
    if args.horizon is not None:
        hyper = hyper.with_horizon(args.horizon)
    model, report = transfer_sic_to_dic(source, hyper, seed=args.seed,
                                        target_scenario=args.scenario)
    save_checkpoint(model, args.output)
    report_path = args.report or str(args.output) + ".graft.json"
    _write_json(report_path, report.to_dict())
    print(f"grafted {source.scenario} -> {args.scenario}: "
          f"{len(report.copied)} copied, {len(report.reinitialized)} reinitialized, "
          f"{len(report.created)} new")
    print(f"wrote {args.output}")
    return 0


def cmd_finetune(args) -> int:
    model = load_checkpoint(args.ckpt)
    config = _preprocess_from_meta(model)
    examples = examples_from_paths(args.data, model.scenario,
                                   model.hyper.horizon, config)
    policy = SplitPolicy(kind="half_half",
                         ordering="shuffled" if args.shuffled else "chronological",
                         seed=args.seed)
    parts = split_examples(examples, policy)
    tc = TrainConfig(batch_size=args.batch_size, max_epochs=args.epochs,
                     lr_scale=args.lr_scale, seed=args.seed)
    model, report, history = finetune(model, parts["finetune"],
                                      parts["evaluation"], tc)
    save_checkpoint(model, args.output)
    _write_json(str(args.output) + ".history.json", history.to_dict())
    write_text_atomic(str(args.output) + ".metrics.json", report.to_json())
    print(f"fine-tuned on {len(parts['finetune'])} examples at lr "
          f"{tc.effective_lr:g}: evaluation nmae {report.nmae:.4f}")
    print(f"wrote {args.output}")
    return 0


def _emit_plot_csv(path, examples, preds) -> None:
    horizon = examples[0].horizon
    rate = 1000.0
    header = ["end_time_ms", "truth_first", "pred_first"]
    if horizon > 1:
        header += ["truth_last", "pred_last"]
    lines = [",".join(header)]
    for ex, row in zip(examples, preds):
        t_ms = ex.inputs.end_index * 1000.0 / rate
        cells = [f"{t_ms:.10g}", f"{ex.target[0]:.10g}", f"{row[0]:.10g}"]
        if horizon > 1:
            cells += [f"{ex.target[-1]:.10g}", f"{row[-1]:.10g}"]
        lines.append(",".join(cells))
    write_text_atomic(path, "\n".join(lines) + "\n")


def cmd_eval(args) -> int:
    model = load_checkpoint(args.ckpt)
    if args.scenario is not None and args.scenario != model.scenario:
        raise ConfigError(
            f"checkpoint holds a {model.scenario} model but {args.scenario} was "
            f"requested; use the transfer subcommand for scenario changes")
    config = _preprocess_from_meta(model)
    examples = examples_from_paths(args.data, model.scenario,
                                   model.hyper.horizon, config)
    preds = predict_degrees(model, examples)
    report = evaluate_metrics(preds, truth_matrix(examples))
    if args.output:
        write_text_atomic(args.output, report.to_json())
    if args.plot_csv:
        _emit_plot_csv(args.plot_csv, examples, preds)
    print(report.text_table(), end="")
    if args.baseline:
        base = evaluate_metrics(persistence_baseline(examples),
                                truth_matrix(examples))
        print(f"persistence-baseline nmae {base.nmae:.6f} nrmse {base.nrmse:.6f}")
    return 0


def cmd_predict(args) -> int:
    model = load_checkpoint(args.ckpt)
    config = _preprocess_from_meta(model)
    rec = load_recording(args.data)
    if rec.sample_rate_hz != config.window.input_rate_hz:
        raise DataError(f"recording rate {rec.sample_rate_hz} Hz != model's "
                        f"preprocessing rate {config.window.input_rate_hz} Hz")
    if scenario_uses_forces(model.scenario) and not rec.has_forces:
        raise ConfigError(f"model scenario {model.scenario} needs interaction "
                          f"forces, but {args.data} has none")
    channels = [(KIND_EMG, ch) for ch in rec.emg]
    channels.append((KIND_KINEMATIC, rec.knee_angle_deg))
    if rec.has_forces:
        channels.append((KIND_FORCE, rec.force_thigh_n))
        channels.append((KIND_FORCE, rec.force_shank_n))
    windows = preprocess_recording_channels(channels, config)
    n = len(windows["end_indices"])
    if n == 0:
        raise ConfigError("recording shorter than one window; nothing to predict")

    batch = {"emg": windows["emg"]}
    if windows["kinematic"] is not None:
        batch["kinematic"] = windows["kinematic"]
    if windows["forces"] is not None:
        batch["forces"] = windows["forces"]

    horizon = model.hyper.horizon
    attn_cols = [f"attn_{name.lower()}" for name in EMG_CHANNEL_NAMES] \
        if model.scenario.startswith("DIC") else []
    header = ["end_time_ms"] + [f"pred_{i}" for i in range(1, horizon + 1)] + attn_cols
    lines = [",".join(header)]
    chunk = 512
    for start in range(0, n, chunk):
        idx = np.arange(start, min(start + chunk, n))
        sub = {k: v[idx] for k, v in batch.items()}
        degrees, attn = model.forward(sub)
        for j, i in enumerate(idx):
            t_ms = windows["end_indices"][i] * 1000.0 / rec.sample_rate_hz
            cells = [f"{t_ms:.10g}"] + [f"{v:.10g}" for v in degrees[j]]
            if attn_cols:
                cells += [f"{v:.10g}" for v in attn[j].mean(axis=0)]
            lines.append(",".join(cells))
    write_text_atomic(args.output, "\n".join(lines) + "\n")
    print(f"wrote {args.output}: {n} prediction rows")
    return 0


def cmd_schema(args) -> int:
    print(dump_schema(), end="")
    return 0


# -- parser ---------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="kneecast",
                     description="EMG-driven knee-angle forecasting pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic gait recording")
    p.add_argument("--cycles", type=int, required=True)
    p.add_argument("--period", type=float, default=1.2)
    p.add_argument("--condition", choices=["normal", "abnormal"], default="normal")
    p.add_argument("--jitter", type=float, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--forces", action="store_true")
    p.add_argument("--trait-scale", type=float, default=1.0)
    p.add_argument("--subject-id", default=None)
    p.add_argument("--trial-id", default="t0")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("preprocess", help="window recordings into a binary cache")
    p.add_argument("--data", nargs="+", required=True)
    p.add_argument("--scenario", default="DIC")
    p.add_argument("--horizon", type=int, default=1)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", help="run a training config or stage plan")
    p.add_argument("--config", required=True)
    p.add_argument("--output-dir", default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("transfer", help="graft a checkpoint into a new scenario")
    p.add_argument("--source", required=True)
    p.add_argument("--scenario", default="DIC")
    p.add_argument("--horizon", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--report", default=None)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_transfer)

    p = sub.add_parser("finetune", help="adapt a checkpoint to new data (50/50 split)")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", nargs="+", required=True)
    p.add_argument("--lr-scale", type=float, default=0.1)
    p.add_argument("--epochs", type=int, default=60)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--shuffled", action="store_true")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("eval", help="evaluate a checkpoint on recordings")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", nargs="+", required=True)
    p.add_argument("--scenario", default=None,
                   help="assert the checkpoint scenario matches")
    p.add_argument("-o", "--output", default=None)
    p.add_argument("--plot-csv", default=None)
    p.add_argument("--baseline", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="stream causal predictions over a recording")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("schema", help="print the run-config JSON schema")
    p.set_defaults(func=cmd_schema)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except KneecastError as exc:
        print(f"kneecast: {exc.kind}-error: {exc}", file=sys.stderr)
        return exc.exit_code
    except SystemExit as exc:  # argparse --help
        return int(exc.code or 0)


if __name__ == "__main__":
    sys.exit(main())
