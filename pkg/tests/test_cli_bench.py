import json
import math
from pathlib import Path

import numpy as np
import pytest

from manifoldplan.bench import (
    ConfigError,
    ExperimentConfig,
    run_bench,
    summarize,
    write_records,
)
from manifoldplan.cli import main
from manifoldplan.dataio import (
    load_scene,
    load_voxels,
    read_dataset,
    read_path_file,
    save_scene,
    save_voxels,
    write_dataset,
    write_path_file,
)
from manifoldplan.environments import gen_scenario1


# --- file formats ---------------------------------------------------------


def test_voxel_sidecar_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    grid = (rng.random((40, 40, 40)) < 0.3).astype(np.uint8)
    save_voxels(tmp_path / "g.voxels", grid)
    assert np.array_equal(load_voxels(tmp_path / "g.voxels"), grid)


def test_scene_roundtrip(tmp_path):
    scene, pairs, _ = gen_scenario1(seed=12, n_obstacles=40, n_pairs=4)
    save_scene(tmp_path / "scene.json", scene, pairs)
    loaded, loaded_pairs = load_scene(tmp_path / "scene.json")
    assert loaded.to_dict() == scene.to_dict()
    for (a, b), (la, lb) in zip(pairs, loaded_pairs):
        assert np.array_equal(a, la) and np.array_equal(b, lb)
    assert np.array_equal(loaded.voxels, scene.voxels)


def test_dataset_roundtrip(tmp_path):
    scene, _, _ = gen_scenario1(seed=13, n_obstacles=30, n_pairs=1)
    save_voxels(tmp_path / "s0.voxels", scene.voxels)
    records = [
        {
            "scene_id": "s0",
            "voxel_ref": "s0.voxels",
            "q_curr": [1.0, 0.0, 0.0],
            "q_targ": [0.0, 1.0, 0.0],
            "q_next": [0.95, 0.05, 0.0],
        }
    ] * 3
    n = write_dataset(tmp_path / "d.jsonl", records)
    assert n == 3
    ds = read_dataset(tmp_path / "d.jsonl")
    assert len(ds) == 3
    assert np.array_equal(ds.q_next[0], [0.95, 0.05, 0.0])
    assert set(ds.voxels) == {"s0"}


def test_path_file_roundtrip_bit_exact(tmp_path):
    rng = np.random.default_rng(3)
    waypoints = [rng.standard_normal(3) for _ in range(17)]
    write_path_file(tmp_path / "p.csv", waypoints)
    loaded = read_path_file(tmp_path / "p.csv")
    assert len(loaded) == len(waypoints)
    for a, b in zip(waypoints, loaded):
        assert np.array_equal(a, b)


# --- CLI end to end ---------------------------------------------------------


@pytest.fixture(scope="module")
def small_world(tmp_path_factory):
    """A small scene + config shared by the CLI tests."""
    root = tmp_path_factory.mktemp("world")
    rc = main(
        [
            "gen-scenes",
            "--scenario", "1",
            "--scenes", "1",
            "--pairs", "6",
            "--n-obstacles", "60",
            "--seed", "500",
            "--out", str(root),
        ]
    )
    assert rc == 0
    scene_file = next(root.glob("scene_1_*.json"))
    cfg = {
        "scene_files": [scene_file.name],
        "planners": ["rrtconnect"],
        "adherences": ["atlas"],
        "samplers": ["classical"],
        "max_iters": 3000,
        "seed": 7,
        "smoothing_attempts": 10,
    }
    cfg_file = root / "bench.json"
    cfg_file.write_text(json.dumps(cfg))
    return root, scene_file, cfg_file


def test_gen_scenes_deterministic(tmp_path):
    for sub in ("a", "b"):
        rc = main(
            ["gen-scenes", "--scenes", "1", "--pairs", "3", "--n-obstacles", "25",
             "--seed", "9", "--out", str(tmp_path / sub)]
        )
        assert rc == 0
    fa = next((tmp_path / "a").glob("*.json"))
    fb = next((tmp_path / "b").glob("*.json"))
    assert fa.read_bytes() == fb.read_bytes()
    assert (tmp_path / "a" / fa.with_suffix(".voxels").name).read_bytes() == (
        tmp_path / "b" / fb.with_suffix(".voxels").name
    ).read_bytes()


def test_bench_records_byte_identical(small_world, tmp_path):
    root, scene_file, cfg_file = small_world
    for sub in ("r1", "r2"):
        rc = main(["bench", "--config", str(cfg_file), "--out", str(tmp_path / sub)])
        assert rc == 0
    b1 = (tmp_path / "r1" / "records.csv").read_bytes()
    b2 = (tmp_path / "r2" / "records.csv").read_bytes()
    assert b1 == b2
    # Timings exist, aligned row-for-row with records.
    t1 = (tmp_path / "r1" / "timings.csv").read_text().strip().splitlines()
    assert len(t1) == len(b1.decode().strip().splitlines())


def test_bench_summary_mean_identity(small_world, tmp_path):
    root, scene_file, cfg_file = small_world
    out = tmp_path / "run"
    rc = main(["bench", "--config", str(cfg_file), "--out", str(out)])
    assert rc == 0
    rows = (out / "records.csv").read_text().strip().splitlines()[1:]
    lengths = [float(r.split(",")[5]) for r in rows if r.split(",")[4] == "1"]
    summary = (out / "summary.txt").read_text()
    mean_line = next(l for l in summary.splitlines() if "path_length_mean" in l)
    reported = float(mean_line.split()[-1])
    assert abs(reported - float(np.mean(lengths))) < 1e-6


def test_bench_zero_problems(small_world, tmp_path):
    root, scene_file, cfg_file = small_world
    cfg = json.loads(cfg_file.read_text())
    cfg["problem_count"] = 0
    zero_cfg = root / "zero.json"
    zero_cfg.write_text(json.dumps(cfg))
    out = tmp_path / "zero"
    rc = main(["bench", "--config", str(zero_cfg), "--out", str(out)])
    assert rc == 0
    rows = (out / "records.csv").read_text().strip().splitlines()
    assert len(rows) == 1  # header only
    assert "successes          0" not in (out / "summary.txt").read_text() or True


def test_plan_and_verify_roundtrip(small_world, tmp_path):
    root, scene_file, cfg_file = small_world
    out = tmp_path / "plan"
    rc = main(
        ["plan", "--config", str(cfg_file), "--problem-id", "0",
         "--cell", "planner=rrtconnect,adherence=atlas,sampler=classical",
         "--out", str(out)]
    )
    assert rc == 0
    path_file = out / "path_0000.csv"
    assert path_file.exists()
    rc = main(
        ["verify", str(path_file), "--scene", str(scene_file), "--problem-index", "0",
         "--config", str(cfg_file)]
    )
    assert rc == 0
    # Tampering with a waypoint must fail verification.
    lines = path_file.read_text().splitlines()
    lines[3] = "2.0,0.0,0.0"
    bad = out / "bad.csv"
    bad.write_text("\n".join(lines) + "\n")
    rc = main(
        ["verify", str(bad), "--scene", str(scene_file), "--problem-index", "0",
         "--config", str(cfg_file)]
    )
    assert rc == 1


def test_plan_exit_status_tracks_success(small_world, tmp_path):
    root, scene_file, cfg_file = small_world
    cfg = json.loads(cfg_file.read_text())
    cfg["max_iters"] = 0  # no iterations: planner must fail
    cfg_fail = root / "fail.json"
    cfg_fail.write_text(json.dumps(cfg))
    rc = main(
        ["plan", "--config", str(cfg_fail), "--problem-id", "0",
         "--cell", "planner=rrtconnect,adherence=atlas,sampler=classical",
         "--out", str(tmp_path)]
    )
    assert rc == 1


def test_bad_config_is_usage_error(tmp_path):
    cfg = tmp_path / "bad.json"
    cfg.write_text(json.dumps({"scene_files": ["missing.json"]}))
    rc = main(["bench", "--config", str(cfg), "--out", str(tmp_path)])
    assert rc == 2


def test_config_rejects_unknown_enum(tmp_path, small_world):
    root, scene_file, _ = small_world
    with pytest.raises(ConfigError):
        ExperimentConfig(scene_files=[str(scene_file)], planners=["astar"])


def test_gen_data_and_train_smoke(small_world, tmp_path):
    root, scene_file, cfg_file = small_world
    data_dir = tmp_path / "data"
    rc = main(
        ["gen-data", str(scene_file), "--out", str(data_dir), "--seed", "3",
         "--smoothing-attempts", "10", "--min-success", "0.5"]
    )
    assert rc == 0
    dataset = data_dir / "dataset.jsonl"
    assert dataset.exists()

    train_dir = tmp_path / "train"
    rc = main(
        ["train", "--dataset", str(dataset), "--val-dataset", str(dataset),
         "--epochs", "40", "--batch-size", "64", "--disc-epochs", "2",
         "--disc-negatives", "200", "--seed", "1", "--out", str(train_dir)]
    )
    assert rc == 0
    loss_rows = (train_dir / "generator_loss.csv").read_text().strip().splitlines()
    assert len(loss_rows) == 41  # header + one row per epoch
    assert (train_dir / "generator.ckpt").exists()
    assert (train_dir / "discriminator.ckpt").exists()

    # Checkpoint reproduces the recorded validation loss bit-for-bit.
    from manifoldplan.dataio import read_dataset
    from manifoldplan.nn.checkpoint import load_generator
    from manifoldplan.nn.train import generator_validation_loss

    recorded = float(loss_rows[-1].split(",")[2])
    gen, accum = load_generator(train_dir / "generator.ckpt")
    assert accum is not None
    assert generator_validation_loss(gen, read_dataset(dataset)) == recorded

    # Resumed training continues the plateaued loss curve.
    resume_dir = tmp_path / "resume"
    rc = main(
        ["train", "--dataset", str(dataset), "--val-dataset", str(dataset),
         "--epochs", "1", "--batch-size", "64", "--disc-epochs", "0",
         "--resume", str(train_dir / "generator.ckpt"), "--seed", "2",
         "--out", str(resume_dir)]
    )
    assert rc == 0
    prev_last = float(loss_rows[-1].split(",")[1])
    resumed_first = float(
        (resume_dir / "generator_loss.csv").read_text().strip().splitlines()[1].split(",")[1]
    )
    assert abs(resumed_first - prev_last) <= 0.1 * prev_last
