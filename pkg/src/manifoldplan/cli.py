"""Benchmark command line: scene/dataset generation, training, planning, sweeps.

Subcommands: gen-scenes, gen-data, train, plan, bench, verify.  Every
command is deterministic given its config and seed (wall-clock timings
excepted, which is why they are written to a separate file).  The default
output directory comes from --out or the MANIFOLDPLAN_OUT environment
variable, falling back to the working directory.
"""

from __future__ import annotations

import argparse
import json
import os
import sys as _sys
import time
from pathlib import Path as FsPath

import numpy as np

from manifoldplan import bench as bench_mod
from manifoldplan.bench import ExperimentConfig, ModelBundle, RunRecord, run_problem
from manifoldplan.dataio import load_scene, save_scene, write_dataset, write_path_file
from manifoldplan.datagen import demonstration_records
from manifoldplan.environments import gen_scenario1, gen_scenario2


def _out_dir(args) -> FsPath:
    out = args.out or os.environ.get("MANIFOLDPLAN_OUT") or "."
    path = FsPath(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _parse_cell(text):
    fields = dict(part.split("=", 1) for part in text.split(","))
    missing = {"planner", "adherence", "sampler"} - set(fields)
    if missing:
        raise argparse.ArgumentTypeError(f"--cell missing {sorted(missing)}")
    return fields["planner"], fields["adherence"], fields["sampler"]


def cmd_gen_scenes(args) -> int:
    out = _out_dir(args)
    for i in range(args.scenes):
        seed = args.seed + i
        if args.scenario == 1:
            scene, pairs, report = gen_scenario1(
                seed, n_obstacles=args.n_obstacles, n_pairs=args.pairs
            )
        else:
            scene, pairs, report = gen_scenario2(seed, n_pairs=args.pairs)
        name = f"scene_{args.scenario}_{seed:04d}.json"
        save_scene(out / name, scene, pairs)
        print(
            f"{name}: {len(scene.obstacles)} obstacles, {len(pairs)} pairs "
            f"(filtered {report.infeasible_filtered} infeasible, {report.arc_free_filtered} trivial)"
        )
    return 0


def cmd_gen_data(args) -> int:
    out = _out_dir(args)
    dataset_path = out / args.name
    records = []
    rates = []
    for f in args.scene_files:
        scene_path = FsPath(f)
        scene, pairs = load_scene(scene_path)
        scene_id = scene_path.stem
        voxel_ref = os.path.relpath(scene_path.with_suffix(".voxels"), out)
        recs, report = demonstration_records(
            scene_id, voxel_ref, scene, pairs, seed=args.seed,
            smoothing_attempts=args.smoothing_attempts, max_iters=args.max_iters,
        )
        rates.append(report.success_rate)
        records.extend(recs)
        print(
            f"{scene_id}: solved {report.solved}/{report.solved + report.failed} "
            f"({report.success_rate:.1%}), {len(recs)} tuples"
        )
        if report.success_rate < args.min_success:
            print(f"error: oracle success below {args.min_success:.0%} on {scene_id}; "
                  "regenerate the scene with a different seed", file=_sys.stderr)
            return 1
    n = write_dataset(dataset_path, records)
    print(f"wrote {n} tuples to {dataset_path}")
    return 0


def cmd_train(args) -> int:
    from manifoldplan.dataio import read_dataset
    from manifoldplan.nn.checkpoint import load_generator, save_discriminator, save_generator
    from manifoldplan.nn.models import Discriminator, Generator
    from manifoldplan.nn.layers import MODE_DETERMINISTIC
    from manifoldplan.nn.train import (
        TrainState,
        train_discriminator,
        train_generator,
    )

    out = _out_dir(args)
    train_ds = read_dataset(args.dataset)
    val_ds = read_dataset(args.val_dataset) if args.val_dataset else None
    rng = np.random.default_rng(args.seed)

    state = None
    if args.resume:
        gen, accum = load_generator(args.resume)
        if accum is not None:
            state = TrainState(params=gen.params, accum=accum, lr=args.lr, seed=gen.seed)
    else:
        gen = Generator.fresh(seed=args.seed)
    state, curve = train_generator(
        gen, train_ds, epochs=args.epochs, lr=args.lr, rng=rng,
        batch_size=args.batch_size, val_ds=val_ds, state=state,
    )
    save_generator(out / "generator.ckpt", gen, accum=state.accum)
    with open(out / "generator_loss.csv", "w", encoding="utf-8") as f:
        f.write("epoch,train_loss,val_loss\n")
        for row in curve:
            val = "" if row.val_loss is None else repr(row.val_loss)
            f.write(f"{row.epoch},{repr(row.train_loss)},{val}\n")
    print(f"generator: epoch 1 train loss {curve[0].train_loss:.6f} -> "
          f"epoch {curve[-1].epoch} {curve[-1].train_loss:.6f}")

    if args.disc_epochs > 0:
        disc = Discriminator.fresh(seed=args.seed + 1)
        X, y = _discriminator_rows(gen, train_ds, rng, args.disc_negatives)
        _, disc_curve = train_discriminator(
            disc, X, y, epochs=args.disc_epochs, lr=args.lr, rng=rng, batch_size=64
        )
        save_discriminator(out / "discriminator.ckpt", disc)
        with open(out / "discriminator_loss.csv", "w", encoding="utf-8") as f:
            f.write("epoch,train_loss\n")
            for row in disc_curve:
                f.write(f"{row.epoch},{repr(row.train_loss)}\n")
        print(f"discriminator: epoch 1 train loss {disc_curve[0].train_loss:.6f} -> "
              f"epoch {disc_curve[-1].epoch} {disc_curve[-1].train_loss:.6f}")
    return 0


def _discriminator_rows(gen, ds, rng, n_negatives, bound=1.2):
    """Distance-regression rows: on-path positives plus ambient negatives."""
    from manifoldplan.nn.layers import MODE_DETERMINISTIC

    codes = {sid: gen.encode(v) for sid, v in ds.voxels.items()}
    scene_list = sorted(ds.voxels)
    n_pos = min(len(ds), n_negatives)
    pos_idx = rng.choice(len(ds), size=n_pos, replace=False)
    rows, labels = [], []
    for i in pos_idx:
        q = ds.q_curr[i]
        rows.append(np.concatenate([codes[ds.scene_ids[i]], q]))
        labels.append(abs(float(np.linalg.norm(q)) - 1.0))
    for _ in range(n_negatives):
        sid = scene_list[int(rng.integers(len(scene_list)))]
        q = rng.uniform(-bound, bound, size=3)
        rows.append(np.concatenate([codes[sid], q]))
        labels.append(abs(float(np.linalg.norm(q)) - 1.0))
    return np.asarray(rows), np.asarray(labels)


def _load_bench_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.from_file(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    return cfg


def cmd_plan(args) -> int:
    cfg = _load_bench_config(args)
    cells = [args.cell] if args.cell else cfg.cells()
    if len(cells) != 1:
        print("error: plan needs exactly one cell (use --cell)", file=_sys.stderr)
        return 2
    scenes, problems = bench_mod.load_problems(cfg)
    matches = [p for p in problems if p.problem_id == args.problem_id]
    if not matches:
        print(f"error: no problem with id {args.problem_id}", file=_sys.stderr)
        return 2
    prob = matches[0]
    models = ModelBundle(cfg) if cells[0][2] == "compnetx" else None
    record, path = run_problem(cfg, cells[0], scenes, prob, models)
    out = _out_dir(args)
    path_file = out / f"path_{prob.problem_id:04d}.csv"
    if path is not None:
        write_path_file(path_file, path.waypoints)
    print(json.dumps({k: v for k, v in record.__dict__.items()}, default=float))
    if path is None:
        return 1
    print(f"wrote {path_file}")
    return 0


def cmd_bench(args) -> int:
    cfg = _load_bench_config(args)
    cells = [args.cell] if args.cell else None
    out = _out_dir(args)
    records = bench_mod.run_bench(cfg, cells=cells, jobs=args.jobs)
    bench_mod.write_records(out / "records.csv", records)
    bench_mod.write_timings(out / "timings.csv", records)
    summary = bench_mod.summarize(records)
    (out / "summary.txt").write_text(summary, encoding="utf-8")
    print(summary, end="")
    return 0


def cmd_verify(args) -> int:
    cfg = ExperimentConfig.from_file(args.config) if args.config else None
    ok, msg = bench_mod.verify_path_file(args.path_file, args.scene, args.problem_index, cfg)
    print(("valid" if ok else "INVALID") + f": {msg}")
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="manifoldplan")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-scenes", help="generate benchmark scenes with endpoint pairs")
    p.add_argument("--scenario", type=int, choices=(1, 2), default=1)
    p.add_argument("--scenes", type=int, default=1)
    p.add_argument("--pairs", type=int, default=200)
    p.add_argument("--n-obstacles", type=int, default=500)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_gen_scenes)

    p = sub.add_parser("gen-data", help="solve scene pairs with the oracle planner and emit tuples")
    p.add_argument("scene_files", nargs="+")
    p.add_argument("--name", default="dataset.jsonl")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--smoothing-attempts", type=int, default=40)
    p.add_argument("--max-iters", type=int, default=4000)
    p.add_argument("--min-success", type=float, default=0.9)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("train", help="train the generator (and optionally the discriminator)")
    p.add_argument("--dataset", required=True)
    p.add_argument("--val-dataset", default=None)
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--batch-size", type=int, default=256)
    p.add_argument("--disc-epochs", type=int, default=40)
    p.add_argument("--disc-negatives", type=int, default=20000)
    p.add_argument("--resume", default=None, help="generator checkpoint to continue from")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("plan", help="solve one problem and write its path file")
    p.add_argument("--config", required=True)
    p.add_argument("--problem-id", type=int, required=True)
    p.add_argument("--cell", type=_parse_cell, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_plan)

    p = sub.add_parser("bench", help="run every configured cell over the problem set")
    p.add_argument("--config", required=True)
    p.add_argument("--cell", type=_parse_cell, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_bench)

    p = sub.add_parser("verify", help="re-validate a path file against scene and constraint")
    p.add_argument("path_file")
    p.add_argument("--scene", required=True)
    p.add_argument("--problem-index", type=int, required=True)
    p.add_argument("--config", default=None)
    p.set_defaults(fn=cmd_verify)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (bench_mod.ConfigError, FileNotFoundError, ValueError) as e:
        print(f"error: {e}", file=_sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
