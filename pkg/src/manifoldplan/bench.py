"""Benchmark harness: experiment cells, per-problem records, and summaries.

A benchmark run evaluates every requested (planner, adherence, sampler)
cell over a fixed problem set.  Per-problem results split into two files:
``records.csv`` holds the deterministic fields (success, path length,
iteration and projection counters) and is byte-identical across runs with
the same config and seed; ``timings.csv`` holds measured wall times,
which are not reproducible and live apart so the records file can be
diffed.  Wall time covers planning and smoothing only, never model
loading or scene parsing.
"""

from __future__ import annotations

import itertools
import json
import time
from dataclasses import dataclass, field, asdict
from pathlib import Path as FsPath
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from manifoldplan.atlas import AtlasParams
from manifoldplan.constraints import Stats, sphere_constraint
from manifoldplan.dataio import load_scene
from manifoldplan.environments import SphereScene
from manifoldplan.integrators import IntegratorParams
from manifoldplan.planners import (
    PlanProblem,
    Path,
    Steering,
    classical_sampler,
    fmt_star,
    rrt_connect,
    shortcut_smooth,
    validate_path,
)

PLANNERS = ("rrtconnect", "fmtstar")
ADHERENCES = ("projection", "atlas", "tangent-bundle")
SAMPLERS = ("classical", "compnetx")


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    scene_files: List[str]
    planners: List[str] = field(default_factory=lambda: ["rrtconnect"])
    adherences: List[str] = field(default_factory=lambda: ["atlas"])
    samplers: List[str] = field(default_factory=lambda: ["classical"])
    problem_count: Optional[int] = None
    time_budget: Optional[float] = None
    max_iters: int = 5000
    seed: int = 0
    epsilon: float = 1e-3
    gamma: float = 0.05
    lambda1: float = 2.0
    lambda2: float = 2.0
    integrator_max_steps: int = 500
    stall_eps: float = 1e-6
    rho: float = 0.9
    alpha: float = float(np.pi / 6)
    eps_chart: float = 0.01
    max_charts: int = 5000
    explore_prob: float = 0.9
    fmt_n_init: int = 500
    fmt_radius: float = 0.4
    smoothing_attempts: int = 0
    generator_ckpt: Optional[str] = None
    discriminator_ckpt: Optional[str] = None
    nu: float = 0.1
    nproj_step: float = 0.1
    nproj_max_steps: int = 10
    n_ismp: float = 300
    chain_width: int = 16

    def __post_init__(self) -> None:
        for p in self.planners:
            if p not in PLANNERS:
                raise ConfigError(f"unknown planner {p!r}")
        for a in self.adherences:
            if a not in ADHERENCES:
                raise ConfigError(f"unknown adherence {a!r}")
        for s in self.samplers:
            if s not in SAMPLERS:
                raise ConfigError(f"unknown sampler {s!r}")
        if not self.scene_files:
            raise ConfigError("config lists no scene files")
        for f in self.scene_files:
            if not FsPath(f).exists():
                raise ConfigError(f"scene file {f} does not exist")
        if "compnetx" in self.samplers:
            if self.generator_ckpt is None:
                raise ConfigError("compnetx cells need generator_ckpt")
            if not FsPath(self.generator_ckpt).exists():
                raise ConfigError(f"generator checkpoint {self.generator_ckpt} does not exist")
            if self.discriminator_ckpt is not None and not FsPath(self.discriminator_ckpt).exists():
                raise ConfigError(f"discriminator checkpoint {self.discriminator_ckpt} does not exist")

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        doc = json.loads(FsPath(path).read_text(encoding="utf-8"))
        base = FsPath(path).parent
        for key in ("scene_files",):
            if key in doc:
                doc[key] = [str((base / f)) if not FsPath(f).is_absolute() else f for f in doc[key]]
        for key in ("generator_ckpt", "discriminator_ckpt"):
            if doc.get(key) and not FsPath(doc[key]).is_absolute():
                doc[key] = str(base / doc[key])
        try:
            return cls(**doc)
        except TypeError as e:
            raise ConfigError(str(e)) from None

    def integrator_params(self) -> IntegratorParams:
        return IntegratorParams(
            gamma=self.gamma,
            lambda1=self.lambda1,
            lambda2=self.lambda2,
            max_steps=self.integrator_max_steps,
            stall_eps=self.stall_eps,
        )

    def atlas_params(self) -> AtlasParams:
        return AtlasParams(
            rho=self.rho,
            alpha=self.alpha,
            eps_chart=self.eps_chart,
            max_charts=self.max_charts,
            explore_prob=self.explore_prob,
        )

    def cells(self) -> List[Tuple[str, str, str]]:
        return list(itertools.product(self.planners, self.adherences, self.samplers))


@dataclass
class RunRecord:
    planner: str
    adherence: str
    sampler: str
    problem_id: int
    success: bool
    wall_time: float
    path_length: Optional[float]
    iterations: int
    charts_created: int
    projection_calls: int
    nproj_calls: int


@dataclass
class BenchProblem:
    problem_id: int
    scene_index: int
    q_init: np.ndarray
    q_goal: np.ndarray


def load_problems(cfg: ExperimentConfig) -> Tuple[List[SphereScene], List[BenchProblem]]:
    scenes: List[SphereScene] = []
    problems: List[BenchProblem] = []
    pid = 0
    for si, f in enumerate(cfg.scene_files):
        scene, pairs = load_scene(f)
        scenes.append(scene)
        for a, b in pairs:
            problems.append(BenchProblem(pid, si, a, b))
            pid += 1
    if cfg.problem_count is not None:
        problems = problems[: cfg.problem_count]
    return scenes, problems


class ModelBundle:
    """Loaded checkpoints plus per-scene encoding cache."""

    def __init__(self, cfg: ExperimentConfig):
        self.gen = None
        self.disc = None
        if cfg.generator_ckpt:
            from manifoldplan.nn.checkpoint import load_generator

            self.gen, _ = load_generator(cfg.generator_ckpt)
        if cfg.discriminator_ckpt:
            from manifoldplan.nn.checkpoint import load_discriminator

            self.disc, _ = load_discriminator(cfg.discriminator_ckpt)
        self._codes: Dict[int, np.ndarray] = {}

    def scene_code(self, scene_index: int, scene: SphereScene) -> np.ndarray:
        if scene_index not in self._codes:
            self._codes[scene_index] = self.gen.encode(scene.voxels.astype(float))
        return self._codes[scene_index]


def run_problem(
    cfg: ExperimentConfig,
    cell: Tuple[str, str, str],
    scenes: Sequence[SphereScene],
    prob: BenchProblem,
    models: Optional[ModelBundle],
) -> Tuple[RunRecord, Optional[Path]]:
    """Solve one problem in one cell.  Deterministic given (config, seed)."""
    planner, adherence, sampler_kind = cell
    sys = sphere_constraint(epsilon=cfg.epsilon)
    scene = scenes[prob.scene_index]
    stats = Stats()
    steering = Steering(adherence, sys, scene.in_collision, cfg.integrator_params(), cfg.atlas_params())
    # Stable per-(cell, problem) stream, independent of execution order.
    cell_key = [PLANNERS.index(planner), ADHERENCES.index(adherence), SAMPLERS.index(sampler_kind)]
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, prob.problem_id] + cell_key))
    problem = PlanProblem(
        sys, scene, prob.q_init, prob.q_goal,
        time_budget=cfg.time_budget, max_iters=cfg.max_iters,
    )
    z = None
    if sampler_kind == "compnetx":
        z = models.scene_code(prob.scene_index, scene)

    t0 = time.perf_counter()
    if planner == "rrtconnect":
        if sampler_kind == "classical":
            path = rrt_connect(
                problem, classical_sampler(sys, scene.in_collision, steering, stats), steering, rng, stats
            )
        else:
            from manifoldplan.nn.sampling import bidirectional_plan

            path = bidirectional_plan(
                models.gen, models.disc, problem, steering, z,
                n_ismp=cfg.n_ismp, nu=cfg.nu, rng=rng, stats=stats,
                nproj_step=cfg.nproj_step, nproj_max_steps=cfg.nproj_max_steps,
            )
    else:
        if sampler_kind == "classical":
            sampler = classical_sampler(sys, scene.in_collision, steering, stats)
            batch = lambda k, ctx: [sampler(ctx) for _ in range(k)]
        else:
            from manifoldplan.nn.sampling import informed_batch_sampler

            batch = informed_batch_sampler(
                models.gen, models.disc, sys, scene.in_collision, steering,
                prob.q_goal, z, chain_width=cfg.chain_width, nu=cfg.nu,
                n_ismp=cfg.n_ismp, stats=stats,
            )
        path = fmt_star(
            problem, batch, steering,
            n_init=cfg.fmt_n_init, radius=cfg.fmt_radius, rng=rng, stats=stats,
        )
    if path is not None and cfg.smoothing_attempts > 0:
        path = shortcut_smooth(path, steering, cfg.smoothing_attempts, rng, stats)
    wall = time.perf_counter() - t0

    record = RunRecord(
        planner=planner,
        adherence=adherence,
        sampler=sampler_kind,
        problem_id=prob.problem_id,
        success=path is not None,
        wall_time=wall,
        path_length=None if path is None else path.length,
        iterations=0 if path is None else path.iterations,
        charts_created=0 if steering.atlas is None else steering.atlas.created_count,
        projection_calls=stats.projection_calls + stats.exp_calls,
        nproj_calls=stats.nproj_calls,
    )
    return record, path


def run_bench(
    cfg: ExperimentConfig,
    cells: Optional[List[Tuple[str, str, str]]] = None,
    jobs: int = 1,
) -> List[RunRecord]:
    scenes, problems = load_problems(cfg)
    cells = cells if cells is not None else cfg.cells()
    models = ModelBundle(cfg) if any(s == "compnetx" for _, _, s in cells) else None
    records: List[RunRecord] = []
    if jobs <= 1:
        for cell in cells:
            for prob in problems:
                rec, _ = run_problem(cfg, cell, scenes, prob, models)
                records.append(rec)
        return records

    from concurrent.futures import ProcessPoolExecutor

    tasks = [(cell, prob) for cell in cells for prob in problems]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        futures = [
            pool.submit(_run_problem_task, cfg, cell, prob) for cell, prob in tasks
        ]
        records = [f.result()for f in futures]
    return records


def _run_problem_task(cfg: ExperimentConfig, cell, prob) -> RunRecord:
    # Worker-side entry: reload scenes/models (cheap relative to planning,
    # but excluded from the recorded wall time either way).
    scenes, _ = load_problems(cfg)
    models = ModelBundle(cfg) if cell[2] == "compnetx" else None
    rec, _ = run_problem(cfg, cell, scenes, prob, models)
    return rec


RECORD_COLUMNS = [
    "planner",
    "adherence",
    "sampler",
    "problem_id",
    "success",
    "path_length",
    "iterations",
    "charts_created",
    "projection_calls",
    "nproj_calls",
]


def write_records(path, records: Sequence[RunRecord]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(",".join(RECORD_COLUMNS) + "\n")
        for r in records:
            length = "" if r.path_length is None else repr(float(r.path_length))
            f.write(
                f"{r.planner},{r.adherence},{r.sampler},{r.problem_id},"
                f"{int(r.success)},{length},{r.iterations},{r.charts_created},"
                f"{r.projection_calls},{r.nproj_calls}\n"
            )


def write_timings(path, records: Sequence[RunRecord]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write("planner,adherence,sampler,problem_id,wall_time_s\n")
        for r in records:
            f.write(f"{r.planner},{r.adherence},{r.sampler},{r.problem_id},{r.wall_time:.6f}\n")


def summarize(records: Sequence[RunRecord]) -> str:
    lines = []
    by_cell: Dict[Tuple[str, str, str], List[RunRecord]] = {}
    for r in records:
        by_cell.setdefault((r.planner, r.adherence, r.sampler), []).append(r)
    for cell, recs in by_cell.items():
        n = len(recs)
        wins = [r for r in recs if r.success]
        lengths = np.array([r.path_length for r in wins]) if wins else np.array([])
        times = np.array([r.wall_time for r in recs])
        lines.append(f"cell planner={cell[0]} adherence={cell[1]} sampler={cell[2]}")
        lines.append(f"  problems           {n}")
        lines.append(f"  successes          {len(wins)}")
        lines.append(f"  success_rate       {len(wins) / n if n else 0.0:.4f}")
        if len(lengths):
            lines.append(f"  path_length_mean   {lengths.mean():.6f}")
            lines.append(f"  path_length_std    {lengths.std():.6f}")
        else:
            lines.append("  path_length_mean   n/a")
            lines.append("  path_length_std    n/a")
        lines.append(f"  wall_time_mean_s   {times.mean():.6f}" if n else "  wall_time_mean_s   n/a")
        lines.append(f"  wall_time_std_s    {times.std():.6f}" if n else "  wall_time_std_s    n/a")
    return "\n".join(lines) + "\n"


def verify_path_file(path_file, scene_file, problem_index: int, cfg: Optional[ExperimentConfig] = None):
    """Independent re-validation of an emitted path against scene + constraint."""
    from manifoldplan.dataio import read_path_file

    epsilon = cfg.epsilon if cfg is not None else 1e-3
    params = cfg.integrator_params() if cfg is not None else IntegratorParams()
    sys = sphere_constraint(epsilon=epsilon)
    scene, pairs = load_scene(scene_file)
    if not 0 <= problem_index < len(pairs):
        return False, f"scene has no pair {problem_index}"
    q_init, q_goal = pairs[problem_index]
    waypoints = read_path_file(path_file)
    return validate_path(
        sys, scene.in_collision, Path(waypoints), q_init, q_goal, params
    )
