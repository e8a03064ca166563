"""Oracle demonstration pipeline.

Solves each endpoint pair with the classical atlas-steered bidirectional
planner, shortcut-smooths the solution, and emits one training tuple per
consecutive waypoint pair: (scene voxels, current, path goal, next).
Unsolved pairs are skipped and reported.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from manifoldplan.atlas import AtlasParams
from manifoldplan.constraints import ConstraintSystem, Stats, sphere_constraint
from manifoldplan.environments import SphereScene
from manifoldplan.integrators import IntegratorParams
from manifoldplan.planners import (
    PlanProblem,
    Steering,
    classical_sampler,
    rrt_connect,
    shortcut_smooth,
)

Array = np.ndarray


@dataclass
class OracleReport:
    solved: int = 0
    failed: int = 0
    failures: List[int] = field(default_factory=list)  # pair indices

    @property
    def success_rate(self) -> float:
        total = self.solved + self.failed
        return self.solved / total if total else 0.0


def oracle_solve(
    sys: ConstraintSystem,
    scene: SphereScene,
    q_init: Array,
    q_goal: Array,
    rng: np.random.Generator,
    integrator: Optional[IntegratorParams] = None,
    atlas_params: Optional[AtlasParams] = None,
    smoothing_attempts: int = 40,
    max_iters: int = 4000,
):
    """One oracle query: atlas-RRTConnect with classical sampling, then smoothing."""
    integrator = integrator if integrator is not None else IntegratorParams()
    atlas_params = atlas_params if atlas_params is not None else AtlasParams(rho=0.9)
    steering = Steering("atlas", sys, scene.in_collision, integrator, atlas_params)
    stats = Stats()
    sampler = classical_sampler(sys, scene.in_collision, steering, stats)
    problem = PlanProblem(sys, scene, q_init, q_goal, max_iters=max_iters)
    path = rrt_connect(problem, sampler, steering, rng, stats)
    if path is None:
        return None
    if smoothing_attempts > 0:
        path = shortcut_smooth(path, steering, smoothing_attempts, rng, stats)
    return path


def demonstration_records(
    scene_id: str,
    voxel_ref: str,
    scene: SphereScene,
    pairs: List[Tuple[Array, Array]],
    seed: int,
    sys: Optional[ConstraintSystem] = None,
    integrator: Optional[IntegratorParams] = None,
    atlas_params: Optional[AtlasParams] = None,
    smoothing_attempts: int = 40,
    max_iters: int = 4000,
) -> Tuple[List[dict], OracleReport]:
    """Training tuples for one scene.  Deterministic in (seed, pair index)."""
    sys = sys if sys is not None else sphere_constraint()
    records: List[dict] = []
    report = OracleReport()
    for pair_idx, (q_init, q_goal) in enumerate(pairs):
        rng = np.random.default_rng([seed, pair_idx])
        path = oracle_solve(
            sys, scene, q_init, q_goal, rng, integrator, atlas_params,
            smoothing_attempts, max_iters,
        )
        if path is None:
            report.failed += 1
            report.failures.append(pair_idx)
            continue
        report.solved += 1
        wps = path.waypoints
        q_T = [float(x) for x in wps[-1]]
        for j in range(len(wps) - 1):
            records.append(
                {
                    "scene_id": scene_id,
                    "voxel_ref": voxel_ref,
                    "q_curr": [float(x) for x in wps[j]],
                    "q_targ": q_T,
                    "q_next": [float(x) for x in wps[j + 1]],
                }
            )
    return records, report
