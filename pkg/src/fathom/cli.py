"""Command-line entry point: train, eval, export-attention, synth.

Exit codes: 0 success, 1 runtime failure, 2 invalid configuration.
Set FATHOM_LOG=debug|info|warning to control verbosity.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .config import RunConfig
from .data import load_dataset_dir, synth_generate, synth_splits
from .errors import ConfigError, FathomError
from .federation import (
    MessageLog,
    build_model_for_splits,
    collect_attention_records,
    fit,
    macro_metrics,
    split_metrics,
)
from .layers import load_params, restore_params, save_params
from .metrics import export_attention

log = logging.getLogger("fathom")


def main(argv=None) -> int:
    _setup_logging()
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except (FathomError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


def _setup_logging() -> None:
    level = os.environ.get("FATHOM_LOG", "warning").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fathom",
        description="Federated multi-task hierarchical attention over sensor time series",
    )
    sub = parser.add_subparsers(required=True)

    p = sub.add_parser("train", help="train a model from a run config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None, help="override output_dir")
    p.add_argument("--seed", type=int, default=None, help="override seed")
    p.add_argument("--workers", type=int, default=None, help="cap node parallelism")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on its test split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--config", default=None, help="override the embedded config")
    p.add_argument("--out", default=None, help="directory for eval_report.json")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("export-attention", help="export attention matrices to CSV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--config", default=None, help="override the embedded config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_attention)

    p = sub.add_parser("synth", help="generate a synthetic dataset and manifest")
    p.add_argument("--config", required=True, help="run config with a synth block")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None, help="override seed")
    p.set_defaults(func=cmd_synth)
    return parser


def _load_config(args) -> RunConfig:
    cfg = RunConfig.from_json_file(args.config)
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "workers", None) is not None:
        cfg.workers = args.workers
    if getattr(args, "out", None) is not None:
        cfg.output_dir = args.out
    cfg.validate()
    return cfg


def _load_splits(cfg: RunConfig):
    if cfg.synth is not None:
        s = cfg.synth
        result = synth_generate(s.tasks, s.windows, cfg.window, s.features, s.labels,
                                seed=cfg.seed, kind=s.kind, boost=s.boost,
                                pulse_len=s.pulse_len, noise_sigma=s.noise_sigma,
                                distractor_scale=s.distractor_scale)
        return synth_splits(result), result
    return load_dataset_dir(cfg.dataset_dir, cfg.window, cfg.stride), None


def cmd_train(args) -> int:
    cfg = _load_config(args)
    splits, synth_result = _load_splits(cfg)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)

    message_log = MessageLog()
    result = fit(splits, cfg, log=message_log)

    (out / "report.json").write_text(result.report.to_json())
    meta = json.dumps({"config": cfg.to_dict()}, sort_keys=True)
    save_params(out / "checkpoint.npz", result.model.named_params(), meta=meta)
    message_log.write_jsonl(out / "messages.jsonl")
    if synth_result is not None:
        (out / "manifest.json").write_text(
            json.dumps(synth_result.manifest, sort_keys=True, indent=2))

    log.info("trained %s for %d epochs (best %d)", cfg.variant,
             result.report.epochs_run, result.report.best_epoch)
    print(f"report: {out / 'report.json'}")
    for key, val in sorted(result.report.macro.items()):
        print(f"  macro {key}: {val:.4f}")
    return 0


def _load_checkpoint_model(args):
    arrays, meta = load_params(args.checkpoint)
    if args.config is not None:
        cfg = RunConfig.from_json_file(args.config)
    else:
        if meta is None:
            raise ConfigError("checkpoint carries no config; pass --config")
        cfg = RunConfig.from_dict(json.loads(meta)["config"])
    splits, _ = _load_splits(cfg)
    model = build_model_for_splits(splits, cfg)
    restore_params(model.named_params(), arrays)
    return cfg, splits, model


def cmd_eval(args) -> int:
    cfg, splits, model = _load_checkpoint_model(args)
    per_task = split_metrics(model, splits, "test")
    payload = {
        "config": cfg.to_dict(),
        "per_task": per_task,
        "macro": macro_metrics(per_task),
    }
    text = json.dumps(payload, sort_keys=True, indent=2)
    if args.out:
        outdir = Path(args.out)
        outdir.mkdir(parents=True, exist_ok=True)
        (outdir / "eval_report.json").write_text(text)
    print(text)
    return 0


def cmd_export_attention(args) -> int:
    cfg, splits, model = _load_checkpoint_model(args)
    records = collect_attention_records(model, splits, "test",
                                        max_windows=cfg.export_windows)
    written = export_attention(records, args.out)
    print(f"wrote {len(written)} files to {args.out}")
    return 0


def cmd_synth(args) -> int:
    cfg = _load_config(args)
    if cfg.synth is None:
        raise ConfigError("synth: config has no synth block")
    splits, result = _load_splits(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "manifest.json").write_text(json.dumps(result.manifest, sort_keys=True, indent=2))
    for ds in result.datasets:
        np.savez(out / f"{ds.task_id}.npz", X=ds.X, Y=ds.Y,
                 feature_names=np.array(ds.feature_names),
                 label_names=np.array(ds.label_names))
    print(f"manifest: {out / 'manifest.json'}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
