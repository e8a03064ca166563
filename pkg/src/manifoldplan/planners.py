"""Constrained RRTConnect and FMT* over implicit manifold configuration spaces.

Planners are parameterized by a steering handle (one of the three
constraint-adhering integrators, owning a per-query atlas when applicable)
and a sampler callback.  All stochastic choices flow through an explicit
numpy Generator, so a fixed seed yields an identical path.
"""

from __future__ import annotations

import heapq
import time
from dataclasses import dataclass, field, replace
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from manifoldplan.atlas import Atlas, AtlasParams, psi_exp
from manifoldplan.constraints import ConstraintSystem, ContractError, Stats, proj
from manifoldplan.integrators import (
    IntegratorParams,
    Motion,
    atlas_integrate,
    projection_integrate,
    tb_integrate,
)

Array = np.ndarray

ADHERENCE_KINDS = ("projection", "atlas", "tangent-bundle")
SAMPLE_REJECTION_BUDGET = 1000
CONNECT_REPEAT_CAP = 64


class SamplingError(RuntimeError):
    """Rejection sampling exhausted its budget."""


class Timeout(Exception):
    pass


@dataclass
class PlanProblem:
    sys: ConstraintSystem
    scene: object  # anything with in_collision(q) -> bool; None means obstacle-free
    q_init: Array
    q_goal: Array
    time_budget: Optional[float] = None  # seconds; None = iteration-limited only
    max_iters: int = 5000

    def __post_init__(self) -> None:
        self.q_init = np.asarray(self.q_init, dtype=float)
        self.q_goal = np.asarray(self.q_goal, dtype=float)
        collision = self.collision_fn()
        for name, q in (("q_init", self.q_init), ("q_goal", self.q_goal)):
            if not self.sys.on_manifold(q):
                raise ContractError(f"{name} is not on the manifold")
            if collision(q):
                raise ContractError(f"{name} is in collision")

    def collision_fn(self) -> Callable[[Array], bool]:
        if self.scene is None:
            return lambda q: False
        return self.scene.in_collision


class Steering:
    """Per-query steering handle: integrator kind plus a query-owned atlas."""

    def __init__(
        self,
        kind: str,
        sys: ConstraintSystem,
        collision_fn: Callable[[Array], bool],
        params: Optional[IntegratorParams] = None,
        atlas_params: Optional[AtlasParams] = None,
    ):
        if kind not in ADHERENCE_KINDS:
            raise ContractError(f"unknown adherence kind {kind!r}")
        self.kind = kind
        self.sys = sys
        self.collision_fn = collision_fn
        self.params = params if params is not None else IntegratorParams()
        ap = atlas_params if atlas_params is not None else AtlasParams()
        if kind == "projection":
            self.atlas: Optional[Atlas] = None
        else:
            self.atlas = Atlas(sys, replace(ap, separate=(kind == "atlas")))

    def steer(self, q_s: Array, q_e: Array, stats: Optional[Stats] = None) -> Motion:
        if self.kind == "projection":
            return projection_integrate(self.sys, self.collision_fn, q_s, q_e, self.params, stats)
        if self.kind == "atlas":
            return atlas_integrate(
                self.sys, self.collision_fn, self.atlas, q_s, q_e, self.params, stats
            )
        return tb_integrate(self.sys, self.collision_fn, self.atlas, q_s, q_e, self.params, stats)

    def prepare_target(self, q: Array, stats: Optional[Stats] = None) -> Optional[Array]:
        """Make a raw sample usable as a steering target.

        Continuation integrators require on-manifold endpoints, so raw
        (e.g. learned) samples are projected first; the projection
        integrator accepts ambient targets as-is.  None means the sample
        is unusable this iteration.
        """
        if self.kind == "projection" or self.sys.on_manifold(q):
            return q
        return proj(self.sys, q, stats=stats)

    def seed_chart(self, q: Array) -> None:
        if self.atlas is not None:
            self.atlas.get_chart(q)

    @property
    def reach_tol(self) -> float:
        return self.params.reach_tol


class Tree:
    """Planning tree with parent links and vectorized nearest-node lookup."""

    def __init__(self, root: Array):
        root = np.asarray(root, dtype=float)
        self._configs = np.empty((64, len(root)))
        self._configs[0] = root
        self.parents: List[int] = [-1]
        self.size = 1
        self.last_added = 0

    def config(self, idx: int) -> Array:
        return self._configs[idx].copy()

    def add(self, parent: int, config: Array) -> int:
        if self.size == len(self._configs):
            grown = np.empty((2 * self.size, self._configs.shape[1]))
            grown[: self.size] = self._configs[: self.size]
            self._configs = grown
        self._configs[self.size] = config
        self.parents.append(parent)
        self.size += 1
        self.last_added = self.size - 1
        return self.last_added

    def nearest(self, q: Array) -> int:
        d = np.linalg.norm(self._configs[: self.size] - q, axis=1)
        return int(np.argmin(d))

    def chain(self, idx: int) -> List[Array]:
        out = []
        while idx >= 0:
            out.append(self._configs[idx].copy())
            idx = self.parents[idx]
        out.reverse()
        return out


@dataclass
class Path:
    waypoints: List[Array]
    iterations: int = 0
    wall_time: float = 0.0

    @property
    def length(self) -> float:
        pts = np.asarray(self.waypoints)
        if len(pts) < 2:
            return 0.0
        return float(np.sum(np.linalg.norm(np.diff(pts, axis=0), axis=1)))


def validate_path(
    sys: ConstraintSystem,
    collision_fn: Callable[[Array], bool],
    path: Path,
    q_init: Array,
    q_goal: Array,
    p: IntegratorParams,
) -> Tuple[bool, str]:
    """Independent re-check of the Path invariants."""
    wps = path.waypoints
    if not wps:
        return False, "empty path"
    if np.linalg.norm(wps[0] - q_init) > 1e-9:
        return False, "path does not start at q_init"
    if np.linalg.norm(wps[-1] - q_goal) > p.reach_tol:
        return False, "path does not end within tolerance of q_goal"
    for i, q in enumerate(wps):
        if not sys.on_manifold(q):
            return False, f"waypoint {i} off-manifold"
        if collision_fn(q):
            return False, f"waypoint {i} in collision"
    return True, "ok"


# --- samplers ----------------------------------------------------------------


def uniform_manifold_sample(
    sys: ConstraintSystem,
    collision_fn: Callable[[Array], bool],
    atlas: Optional[Atlas],
    rng: np.random.Generator,
    stats: Optional[Stats] = None,
    budget: int = SAMPLE_REJECTION_BUDGET,
) -> Array:
    """Collision-free on-manifold sample.

    Projection mode (atlas is None): draw uniformly from the ambient
    bounding box and project.  Atlas mode: draw a chart tangent point and
    map it through the exponential map.
    """
    for _ in range(budget):
        if atlas is None:
            if sys.bounds is None:
                raise ContractError("projection-mode sampling requires ambient bounds")
            q0 = rng.uniform(sys.bounds[:, 0], sys.bounds[:, 1])
            q = proj(sys, q0, stats=stats)
        else:
            chart, u = atlas.sample_uniform(rng)
            q = psi_exp(sys, chart, u, stats=stats)
        if q is None or collision_fn(q):
            continue
        return q
    raise SamplingError("manifold sampling rejection budget exhausted")


@dataclass
class SamplerContext:
    """Per-iteration view handed to sampler callbacks by the planners."""

    iteration: int
    rng: np.random.Generator
    active_tree: Optional[Tree] = None
    opposite_tree: Optional[Tree] = None
    q_curr: Optional[Array] = None  # last-extended node of the active tree
    q_targ: Optional[Array] = None  # last-extended node of the opposite tree
    tree: Optional[Tree] = None  # the single tree, for batch planners
    q_goal: Optional[Array] = None


Sampler = Callable[[SamplerContext], Array]
BatchSampler = Callable[[int, SamplerContext], List[Array]]


def classical_sampler(
    sys: ConstraintSystem,
    collision_fn: Callable[[Array], bool],
    steering: Steering,
    stats: Optional[Stats] = None,
) -> Sampler:
    def sample(ctx: SamplerContext) -> Array:
        return uniform_manifold_sample(sys, collision_fn, steering.atlas, ctx.rng, stats)

    return sample


# --- RRTConnect ---------------------------------------------------------------


def _finalize_waypoints(
    steering: Steering, waypoints: List[Array], stats: Optional[Stats]
) -> Optional[List[Array]]:
    """Pull lazily off-manifold waypoints back onto the manifold.

    Only the tangent-bundle integrator produces such states.  Returns None
    when a waypoint resists projection or its projection collides, which
    the caller reports as planner failure.
    """
    if steering.kind != "tangent-bundle":
        return waypoints
    out = []
    for w in waypoints:
        if not steering.sys.on_manifold(w):
            w = proj(steering.sys, w, stats=stats)
            if w is None or steering.collision_fn(w):
                return None
        out.append(w)
    return out


def _grow(tree: Tree, root_idx: int, motion: Motion) -> int:
    tip = root_idx
    for s in motion.states[1:]:
        tip = tree.add(tip, s)
    return tip


def _connect(
    tree: Tree, q_target: Array, steering: Steering, stats: Optional[Stats]
) -> Tuple[int, bool]:
    """Greedy connect: repeated extension toward q_target until reached or stuck."""
    tip = tree.nearest(q_target)
    for _ in range(CONNECT_REPEAT_CAP):
        near = tree.nearest(q_target)
        motion = steering.steer(tree.config(near), q_target, stats)
        tip = _grow(tree, near, motion)
        if motion.reached:
            return tip, True
        if tip == near:
            return tip, False
    return tip, False


def rrt_connect(
    problem: PlanProblem,
    sampler: Sampler,
    steering: Steering,
    rng: np.random.Generator,
    stats: Optional[Stats] = None,
) -> Optional[Path]:
    """Bidirectional constrained RRTConnect.

    Per iteration: extend the active tree from its nearest node toward the
    sampled configuration, then greedily connect the opposite tree to the
    newly added node; the trees swap roles every iteration.
    """
    collision = problem.collision_fn()
    q_init, q_goal = problem.q_init, problem.q_goal
    if np.linalg.norm(q_goal - q_init) <= steering.reach_tol:
        return Path([q_init.copy()], iterations=0)
    steering.seed_chart(q_init)
    steering.seed_chart(q_goal)
    trees = (Tree(q_init), Tree(q_goal))
    active = 0
    deadline = None if problem.time_budget is None else time.perf_counter() + problem.time_budget
    for it in range(problem.max_iters):
        if deadline is not None and time.perf_counter() > deadline:
            return None
        ta, tb = trees[active], trees[1 - active]
        ctx = SamplerContext(
            iteration=it,
            rng=rng,
            active_tree=ta,
            opposite_tree=tb,
            q_curr=ta.config(ta.last_added),
            q_targ=tb.config(tb.last_added),
            q_goal=q_goal,
        )
        q_rand = steering.prepare_target(sampler(ctx), stats)
        if q_rand is None:
            active = 1 - active
            continue
        near = ta.nearest(q_rand)
        motion = steering.steer(ta.config(near), q_rand, stats)
        tip = _grow(ta, near, motion)
        if tip != near:
            q_new = ta.config(tip)
            tip_b, connected = _connect(tb, q_new, steering, stats)
            if connected:
                if active == 0:
                    forward, backward = trees[0].chain(tip), trees[1].chain(tip_b)
                else:
                    forward, backward = trees[0].chain(tip_b), trees[1].chain(tip)
                backward.reverse()
                waypoints = _finalize_waypoints(steering, forward + backward, stats)
                if waypoints is None:
                    active = 1 - active
                    continue
                return Path(waypoints, iterations=it + 1)
        active = 1 - active
    return None


# --- FMT* ---------------------------------------------------------------------


def _fmt_march(
    positions: Array,
    goal_idx: int,
    steering: Steering,
    radius: float,
    stats: Optional[Stats],
    deadline: Optional[float],
) -> Optional[List[Array]]:
    n = len(positions)
    cost = np.full(n, np.inf)
    cost[0] = 0.0
    status = np.zeros(n, dtype=np.int8)  # 0 unvisited, 1 open, 2 closed
    status[0] = 1
    parent_motion: dict = {}
    heap: List[Tuple[float, int]] = [(0.0, 0)]
    while heap:
        if deadline is not None and time.perf_counter() > deadline:
            raise Timeout
        c, z = heapq.heappop(heap)
        if status[z] != 1 or c > cost[z]:
            continue
        if z == goal_idx:
            waypoints: List[Array] = [positions[0].copy()]
            edges = []
            node = goal_idx
            while node != 0:
                y, m = parent_motion[node]
                edges.append(m)
                node = y
            for m in reversed(edges):
                waypoints.extend(s.copy() for s in m.states[1:])
            return waypoints
        d_z = np.linalg.norm(positions - positions[z], axis=1)
        for x in np.flatnonzero((d_z <= radius) & (status == 0)):
            d_x = np.linalg.norm(positions[: len(positions)] - positions[x], axis=1)
            open_near = np.flatnonzero((d_x <= radius) & (status == 1))
            if len(open_near) == 0:
                continue
            y = int(open_near[np.argmin(cost[open_near] + d_x[open_near])])
            motion = steering.steer(positions[y], positions[x], stats)
            if not motion.reached:
                continue
            if x != goal_idx:
                positions[x] = motion.states[-1]
            cost[x] = cost[y] + motion.length()
            parent_motion[x] = (y, motion)
            status[x] = 1
            heapq.heappush(heap, (cost[x], int(x)))
        status[z] = 2
    return None


def fmt_star(
    problem: PlanProblem,
    batch_sampler: BatchSampler,
    steering: Steering,
    n_init: int = 500,
    radius: float = 0.4,
    rng: Optional[np.random.Generator] = None,
    stats: Optional[Stats] = None,
    remarch_every: int = 50,
) -> Optional[Path]:
    """Batch fast-marching planner over a radius-neighborhood sample graph.

    Draws an initial batch of on-manifold samples (the goal included) and
    runs forward fast-marching with the integrator as the local steering
    and validity check.  If the batch yields no path, new samples accrue
    one per iteration and the marching re-runs over the augmented set.
    """
    rng = rng if rng is not None else np.random.default_rng()
    q_init, q_goal = problem.q_init, problem.q_goal
    if np.linalg.norm(q_goal - q_init) <= steering.reach_tol:
        return Path([q_init.copy()], iterations=0)
    steering.seed_chart(q_init)
    steering.seed_chart(q_goal)
    deadline = None if problem.time_budget is None else time.perf_counter() + problem.time_budget
    ctx = SamplerContext(iteration=0, rng=rng, q_goal=q_goal)
    batch = batch_sampler(max(n_init - 1, 1), ctx)
    positions = np.vstack([np.asarray(q_init)[None, :], np.asarray(batch), np.asarray(q_goal)[None, :]])
    added = 0
    while True:
        try:
            waypoints = _fmt_march(positions, len(positions) - 1, steering, radius, stats, deadline)
        except Timeout:
            return None
        if waypoints is not None:
            waypoints = _finalize_waypoints(steering, waypoints, stats)
        if waypoints is not None:
            return Path(waypoints, iterations=added)
        if added >= problem.max_iters:
            return None
        if deadline is not None and time.perf_counter() > deadline:
            return None
        ctx = SamplerContext(iteration=added, rng=rng, q_goal=q_goal)
        fresh = batch_sampler(min(remarch_every, problem.max_iters - added), ctx)
        added += len(fresh)
        goal_row = positions[-1][None, :]
        positions = np.vstack([positions[:-1], np.asarray(fresh), goal_row])


# --- smoothing ----------------------------------------------------------------


def _segment_length(wps: Sequence[Array], i: int, j: int) -> float:
    pts = np.asarray(wps[i : j + 1])
    return float(np.sum(np.linalg.norm(np.diff(pts, axis=0), axis=1)))


def shortcut_smooth(
    path: Path,
    steering: Steering,
    attempts: int,
    rng: np.random.Generator,
    stats: Optional[Stats] = None,
) -> Path:
    """Random-pair shortcutting; output stays a valid path, never longer.

    A candidate shortcut replaces the waypoints strictly between two random
    indices with the integrator motion connecting them.  Candidates whose
    states resist projection to the manifold, collide, or fail to shorten
    the path by more than a re-discretization artifact (1e-3) are
    discarded, so an already-straight path comes back untouched.
    """
    sys = steering.sys
    collision = steering.collision_fn
    wps = [np.asarray(w, dtype=float).copy() for w in path.waypoints]
    for _ in range(attempts):
        if len(wps) < 3:
            break
        i = int(rng.integers(0, len(wps) - 2))
        j = int(rng.integers(i + 2, len(wps)))
        motion = steering.steer(wps[i], wps[j], stats)
        if not motion.reached:
            continue
        segment: List[Array] = []
        ok = True
        for s in motion.states[1:]:
            if not sys.on_manifold(s):
                s = proj(sys, s, stats=stats)
                if s is None or collision(s):
                    ok = False
                    break
            segment.append(s)
        if not ok:
            continue
        new_len = _segment_length([wps[i]] + segment + [wps[j]], 0, len(segment) + 1)
        if new_len < _segment_length(wps, i, j) - 1e-3:
            wps[i + 1 : j] = segment
    return Path(wps, iterations=path.iterations, wall_time=path.wall_time)
