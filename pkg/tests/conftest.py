"""Shared fixtures: the cached full-scale experiment pipeline for acceptance tests.

Building the pipeline (scenes, oracle demonstrations, trained models)
takes tens of minutes, so its artifacts live under .acceptance_cache/ in
the repo root, keyed by a version tag.  Bump PIPELINE_VERSION after any
change that affects generated data or training; the stale cache is then
ignored.  Delete the directory to force a clean rebuild.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import pytest

PIPELINE_VERSION = "v1"

TRAIN_SCENE_SEEDS = list(range(10))
HELD_OUT_SEEDS = [1000, 1001]
SCENARIO2_SEED = 2000

SCALE = {
    "train_pairs": 200,
    "held_out_pairs": 50,
    "scenario2_pairs": 100,
    "epochs": 20,
    "batch_size": 256,
    "disc_epochs": 40,
}


@dataclass
class Artifacts:
    root: Path
    train_scenes: list
    held_out_scenes: list
    scenario2_scene: Path
    dataset: Path
    val_dataset: Path
    generator_ckpt: Path
    discriminator_ckpt: Path
    generator_loss: Path
    oracle_report: Path


def _build(root: Path) -> None:
    from manifoldplan.cli import main as cli

    scenes = root / "scenes"
    data = root / "data"
    models = root / "models"
    for d in (scenes, data, models):
        d.mkdir(parents=True, exist_ok=True)

    def run(*args):
        rc = cli([str(a) for a in args])
        assert rc == 0, f"pipeline stage failed: {args}"

    run("gen-scenes", "--scenario", 1, "--scenes", len(TRAIN_SCENE_SEEDS),
        "--pairs", SCALE["train_pairs"], "--seed", TRAIN_SCENE_SEEDS[0], "--out", scenes)
    for s in HELD_OUT_SEEDS:
        run("gen-scenes", "--scenario", 1, "--scenes", 1,
            "--pairs", SCALE["held_out_pairs"], "--seed", s, "--out", scenes)
    run("gen-scenes", "--scenario", 2, "--scenes", 1,
        "--pairs", SCALE["scenario2_pairs"], "--seed", SCENARIO2_SEED, "--out", scenes)

    train_files = [scenes / f"scene_1_{s:04d}.json" for s in TRAIN_SCENE_SEEDS]
    held_files = [scenes / f"scene_1_{s:04d}.json" for s in HELD_OUT_SEEDS]
    run("gen-data", *train_files, "--out", data, "--name", "dataset.jsonl",
        "--seed", 0, "--min-success", 0.9)
    run("gen-data", *held_files, "--out", data, "--name", "val_dataset.jsonl",
        "--seed", 1, "--min-success", 0.0)
    run("train", "--dataset", data / "dataset.jsonl",
        "--val-dataset", data / "val_dataset.jsonl",
        "--epochs", SCALE["epochs"], "--batch-size", SCALE["batch_size"],
        "--disc-epochs", SCALE["disc_epochs"], "--seed", 0, "--out", models)


@pytest.fixture(scope="session")
def artifacts() -> Artifacts:
    root = Path(__file__).resolve().parents[1] / ".acceptance_cache" / PIPELINE_VERSION
    done = root / "DONE"
    if not done.exists():
        _build(root)
        done.write_text("ok")
    scenes = root / "scenes"
    return Artifacts(
        root=root,
        train_scenes=[scenes / f"scene_1_{s:04d}.json" for s in TRAIN_SCENE_SEEDS],
        held_out_scenes=[scenes / f"scene_1_{s:04d}.json" for s in HELD_OUT_SEEDS],
        scenario2_scene=scenes / f"scene_2_{SCENARIO2_SEED:04d}.json",
        dataset=root / "data" / "dataset.jsonl",
        val_dataset=root / "data" / "val_dataset.jsonl",
        generator_ckpt=root / "models" / "generator.ckpt",
        discriminator_ckpt=root / "models" / "discriminator.ckpt",
        generator_loss=root / "models" / "generator_loss.csv",
        oracle_report=root / "data" / "dataset.jsonl",
    )


def cached_bench(artifacts_root: Path, tag: str, cfg, cells=None):
    """Run a benchmark once per cache version; reuse its records afterwards."""
    import numpy as np

    from manifoldplan.bench import RunRecord, run_bench

    cache = artifacts_root / "bench" / f"{tag}.json"
    cache.parent.mkdir(parents=True, exist_ok=True)
    if cache.exists():
        rows = json.loads(cache.read_text())
        return [RunRecord(**r) for r in rows]
    records = run_bench(cfg, cells=cells)
    cache.write_text(json.dumps([r.__dict__ for r in records]))
    return records
