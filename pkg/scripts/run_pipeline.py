#!/usr/bin/env python3
"""End-to-end sphere experiment pipeline.

Generates training and held-out scenes, produces oracle demonstrations,
trains the generator and discriminator, and writes ready-to-run benchmark
configs.  Everything flows through the package CLI, so each stage is
reproducible from its seed.

    python3 scripts/run_pipeline.py --out artifacts/ --train-scenes 10 \
        --pairs 200 --epochs 20

Stages are skipped when their outputs already exist (delete the output
directory to rebuild from scratch).
"""

import argparse
import json
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from manifoldplan.cli import main as cli


TRAIN_SEED_BASE = 0
HELD_OUT_SEEDS = (1000, 1001)
SCENARIO2_SEED = 2000


def run(args_list):
    rc = cli([str(a) for a in args_list])
    if rc != 0:
        raise SystemExit(f"pipeline stage failed: {args_list} -> {rc}")


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="artifacts")
    ap.add_argument("--train-scenes", type=int, default=10)
    ap.add_argument("--pairs", type=int, default=200)
    ap.add_argument("--held-out-pairs", type=int, default=50)
    ap.add_argument("--scenario2-pairs", type=int, default=100)
    ap.add_argument("--epochs", type=int, default=20)
    ap.add_argument("--batch-size", type=int, default=256)
    ap.add_argument("--disc-epochs", type=int, default=40)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    out = Path(args.out)
    scenes_dir = out / "scenes"
    data_dir = out / "data"
    model_dir = out / "models"
    for d in (scenes_dir, data_dir, model_dir):
        d.mkdir(parents=True, exist_ok=True)

    train_scenes = [
        scenes_dir / f"scene_1_{TRAIN_SEED_BASE + i:04d}.json" for i in range(args.train_scenes)
    ]
    held_out = [scenes_dir / f"scene_1_{s:04d}.json" for s in HELD_OUT_SEEDS]
    scenario2 = scenes_dir / f"scene_2_{SCENARIO2_SEED:04d}.json"

    if not all(f.exists() for f in train_scenes):
        run(["gen-scenes", "--scenario", 1, "--scenes", args.train_scenes,
             "--pairs", args.pairs, "--seed", TRAIN_SEED_BASE, "--out", scenes_dir])
    if not all(f.exists() for f in held_out):
        for s in HELD_OUT_SEEDS:
            run(["gen-scenes", "--scenario", 1, "--scenes", 1,
                 "--pairs", args.held_out_pairs, "--seed", s, "--out", scenes_dir])
    if not scenario2.exists():
        run(["gen-scenes", "--scenario", 2, "--scenes", 1,
             "--pairs", args.scenario2_pairs, "--seed", SCENARIO2_SEED, "--out", scenes_dir])

    dataset = data_dir / "dataset.jsonl"
    val_dataset = data_dir / "val_dataset.jsonl"
    if not dataset.exists():
        run(["gen-data", *train_scenes, "--out", data_dir, "--name", "dataset.jsonl",
             "--seed", args.seed, "--min-success", 0.9])
    if not val_dataset.exists():
        run(["gen-data", *held_out, "--out", data_dir, "--name", "val_dataset.jsonl",
             "--seed", args.seed + 1, "--min-success", 0.0])

    gen_ckpt = model_dir / "generator.ckpt"
    if not gen_ckpt.exists():
        run(["train", "--dataset", dataset, "--val-dataset", val_dataset,
             "--epochs", args.epochs, "--batch-size", args.batch_size,
             "--disc-epochs", args.disc_epochs, "--seed", args.seed, "--out", model_dir])

    # Benchmark configs: held-out scenario 1 and generalization scenario 2.
    common = {
        "max_iters": 20000,
        "time_budget": 60.0,
        "seed": 12345,
        "smoothing_attempts": 40,
        "generator_ckpt": str(gen_ckpt.resolve()),
        "discriminator_ckpt": str((model_dir / "discriminator.ckpt").resolve()),
    }
    cfg1 = dict(common, scene_files=[str(f.resolve()) for f in held_out],
                planners=["rrtconnect", "fmtstar"],
                adherences=["projection", "atlas", "tangent-bundle"],
                samplers=["classical", "compnetx"])
    (out / "bench_scenario1.json").write_text(json.dumps(cfg1, indent=1))
    cfg2 = dict(common, scene_files=[str(scenario2.resolve())],
                planners=["rrtconnect", "fmtstar"], adherences=["atlas"],
                samplers=["classical", "compnetx"])
    (out / "bench_scenario2.json").write_text(json.dumps(cfg2, indent=1))
    print(f"pipeline complete under {out}")


if __name__ == "__main__":
    main()
