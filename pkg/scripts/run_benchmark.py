#!/usr/bin/env python3
"""Synthetic multi-task benchmark: train the attention variants and the
baselines over several seeds and print median test metrics.

Usage:
    python scripts/run_benchmark.py                 # classification sweep
    python scripts/run_benchmark.py --kind regression
    python scripts/run_benchmark.py --seeds 3 --variants fathom,s_lstm
"""

import argparse
import json
import time
from pathlib import Path

import numpy as np

from fathom.config import RunConfig, SynthConfig
from fathom.data import synth_generate, synth_splits
from fathom.federation import fit

CLASSIFICATION_VARIANTS = ("fathom", "fathom_sa", "fathom_ca", "s_lstm")
REGRESSION_VARIANTS = ("fathom", "m_lstm")


def benchmark_config(variant: str, seed: int, kind: str = "classification") -> RunConfig:
    """The desk-scale benchmark setting: 5 tasks, 16 features (4 informative
    per task), windows of 20 steps, about 2000 windows per task."""
    cfg = RunConfig(
        variant=variant,
        synth=SynthConfig(tasks=5, windows=2000, features=16, labels=2, kind=kind),
        window=20,
        hidden=24,
        batch=120,
        lr=0.002,
        patience=6,
        max_epochs=30,
        dropout=0.25,
        recurrent_dropout=0.25,
        l2=1e-4,
        seed=seed,
        workers=1,
    )
    cfg.validate()
    return cfg


def run_one(cfg: RunConfig):
    s = cfg.synth
    result = synth_generate(s.tasks, s.windows, cfg.window, s.features, s.labels,
                            seed=cfg.seed, kind=s.kind, boost=s.boost,
                            pulse_len=s.pulse_len, noise_sigma=s.noise_sigma,
                            distractor_scale=s.distractor_scale)
    splits = synth_splits(result)
    return fit(splits, cfg), result


def main() -> int:
    ap = argparse.ArgumentParser()
    ap.add_argument("--kind", choices=("classification", "regression"),
                    default="classification")
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--variants", default=None,
                    help="comma-separated; defaults depend on --kind")
    ap.add_argument("--out", default=None, help="optional JSON results path")
    args = ap.parse_args()

    if args.variants:
        variants = tuple(args.variants.split(","))
    else:
        variants = CLASSIFICATION_VARIANTS if args.kind == "classification" \
            else REGRESSION_VARIANTS
    metric = "f1" if args.kind == "classification" else "smape"

    results = {v: [] for v in variants}
    for seed in range(args.seeds):
        for variant in variants:
            cfg = benchmark_config(variant, seed, args.kind)
            t0 = time.perf_counter()
            fit_result, _ = run_one(cfg)
            val = fit_result.report.macro[metric]
            results[variant].append(val)
            print(f"seed {seed} {variant:10s} {metric}={val:.4f} "
                  f"epochs={fit_result.report.epochs_run} "
                  f"({time.perf_counter() - t0:.0f}s)", flush=True)

    print()
    for variant in variants:
        med = float(np.median(results[variant]))
        print(f"{variant:10s} median {metric} = {med:.4f}   runs: "
              + " ".join(f"{v:.3f}" for v in results[variant]))
    if args.out:
        Path(args.out).write_text(json.dumps(results, indent=2, sort_keys=True))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
