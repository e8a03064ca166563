"""Learned sampling heuristics: gradient-based sample repair, single and
batched informed proposals, and the hybrid exploitation/exploration policy
that hands control to classical sampling after a fixed number of informed
iterations so the underlying planner keeps its completeness guarantees.
"""

from __future__ import annotations

from typing import Callable, List, Optional

import numpy as np

from manifoldplan.constraints import ConstraintSystem, Stats, proj
from manifoldplan.nn.layers import MODE_DETERMINISTIC, MODE_STOCHASTIC
from manifoldplan.nn.models import Discriminator, Generator
from manifoldplan.planners import (
    PlanProblem,
    Path,
    Sampler,
    SamplerContext,
    Steering,
    Tree,
    classical_sampler,
    rrt_connect,
    uniform_manifold_sample,
)

Array = np.ndarray

DEFAULT_NU = 0.1
DEFAULT_NPROJ_STEP = 0.1
DEFAULT_NPROJ_MAX_STEPS = 10
DEFAULT_N_ISMP = 300


def scene_code(gen: Generator, voxels_or_code: Array) -> Array:
    """Scene encoding, accepting either a raw voxel grid or a precomputed code."""
    v = np.asarray(voxels_or_code, dtype=float)
    if v.ndim == 1:
        return v
    return gen.encode(v, MODE_DETERMINISTIC)


def nproj(
    disc: Discriminator,
    z_row: Array,
    q: Array,
    nu: float = DEFAULT_NU,
    step: float = DEFAULT_NPROJ_STEP,
    max_steps: int = DEFAULT_NPROJ_MAX_STEPS,
    stats: Optional[Stats] = None,
) -> Array:
    """Gradient descent on the learned manifold-distance surrogate.

    Returns q unchanged when its predicted distance is already within nu;
    otherwise descends the input gradient until the prediction clears the
    threshold or the step budget runs out, in which case the iterate with
    the lowest prediction wins.
    """
    q = np.asarray(q, dtype=float)
    d, grad = disc.distance_and_input_grad(z_row, q)
    if d <= nu:
        return q
    if stats is not None:
        stats.nproj_calls += 1
    best_q, best_d = q, d
    for _ in range(max_steps):
        q = q - step * grad
        d, grad = disc.distance_and_input_grad(z_row, q)
        if d < best_d:
            best_q, best_d = q, d
        if d <= nu:
            return q
    return best_q


def propose_next(
    gen: Generator,
    disc: Optional[Discriminator],
    z_row: Array,
    q_curr: Array,
    q_targ: Array,
    nu: float,
    rng: np.random.Generator,
    stats: Optional[Stats] = None,
    nproj_step: float = DEFAULT_NPROJ_STEP,
    nproj_max_steps: int = DEFAULT_NPROJ_MAX_STEPS,
    dropout_masks=None,
) -> Array:
    """Stochastic next-configuration proposals for a batch of (current, target) rows.

    The scene is encoded once per query and its code replicated across the
    batch; proposals are not guaranteed on-manifold (the constrained
    integrator enforces adherence downstream).
    """
    qc = np.atleast_2d(np.asarray(q_curr, dtype=float))
    qt = np.atleast_2d(np.asarray(q_targ, dtype=float))
    z_rows = np.repeat(z_row[None, :], len(qc), axis=0)
    out = gen.propose(z_rows, qc, qt, MODE_STOCHASTIC, rng=rng, dropout_masks=dropout_masks)
    if disc is not None and np.isfinite(nu):
        for i in range(len(out)):
            out[i] = nproj(disc, z_row, out[i], nu, nproj_step, nproj_max_steps, stats)
    return out


def compnetx_sample(
    gen: Generator,
    disc: Optional[Discriminator],
    voxels_or_code: Array,
    q_curr: Array,
    q_targ: Array,
    nu: float = DEFAULT_NU,
    rng: Optional[np.random.Generator] = None,
    stats: Optional[Stats] = None,
    **kw,
) -> Array:
    """One informed sample toward q_targ from q_curr (Eq.-gated by the distance model)."""
    z = scene_code(gen, voxels_or_code)
    rng = rng if rng is not None else np.random.default_rng()
    return propose_next(gen, disc, z, q_curr, q_targ, nu, rng, stats, **kw)[0]


def kbatch_sample(
    gen: Generator,
    disc: Optional[Discriminator],
    tree: Tree,
    q_goal: Array,
    K: int,
    nu: float = DEFAULT_NU,
    rng: Optional[np.random.Generator] = None,
    voxels_or_code: Optional[Array] = None,
    stats: Optional[Stats] = None,
    **kw,
) -> Array:
    """K informed samples from K uniformly chosen tree nodes toward the goal.

    Node selection uses a spawned child stream so the proposal randomness
    matches a single-sample call with the same generator state; the scene
    code and goal are replicated K times and evaluated as one batched
    forward pass.
    """
    if K < 1:
        raise ValueError("K must be >= 1")
    rng = rng if rng is not None else np.random.default_rng()
    z = scene_code(gen, voxels_or_code)
    sel_rng = rng.spawn(1)[0]
    idx = sel_rng.integers(0, tree.size, size=K)
    q_curr = np.array([tree.config(int(i)) for i in idx])
    q_targ = np.repeat(np.asarray(q_goal, dtype=float)[None, :], K, axis=0)
    return propose_next(gen, disc, z, q_curr, q_targ, nu, rng, stats, **kw)


def hybrid_sampler(learned: Sampler, classical: Sampler, n_ismp: float) -> Sampler:
    """Exploit the learned sampler for the first n_ismp iterations, then explore."""

    def sample(ctx: SamplerContext) -> Array:
        if ctx.iteration < n_ismp:
            return learned(ctx)
        return classical(ctx)

    return sample


def bidirectional_plan(
    gen: Generator,
    disc: Optional[Discriminator],
    problem: PlanProblem,
    steering: Steering,
    voxels_or_code: Array,
    n_ismp: float = DEFAULT_N_ISMP,
    nu: float = DEFAULT_NU,
    rng: Optional[np.random.Generator] = None,
    stats: Optional[Stats] = None,
    nproj_step: float = DEFAULT_NPROJ_STEP,
    nproj_max_steps: int = DEFAULT_NPROJ_MAX_STEPS,
) -> Optional[Path]:
    """RRTConnect driven by informed samples between the trees' latest nodes.

    Each iteration proposes a sample conditioned on the active tree's
    last-extended node (current) and the opposite tree's last-extended
    node (target); the planner's tree swap alternates those roles.  After
    n_ismp iterations sampling falls back to the classical uniform
    manifold sampler.
    """
    rng = rng if rng is not None else np.random.default_rng()
    z = scene_code(gen, voxels_or_code)
    collision = problem.collision_fn()

    def learned(ctx: SamplerContext) -> Array:
        return propose_next(
            gen, disc, z, ctx.q_curr, ctx.q_targ, nu, ctx.rng, stats,
            nproj_step=nproj_step, nproj_max_steps=nproj_max_steps,
        )[0]

    classical = classical_sampler(problem.sys, collision, steering, stats)
    return rrt_connect(problem, hybrid_sampler(learned, classical, n_ismp), steering, rng, stats)


def informed_batch_sampler(
    gen: Generator,
    disc: Optional[Discriminator],
    sys: ConstraintSystem,
    collision: Callable[[Array], bool],
    steering: Steering,
    q_goal: Array,
    voxels_or_code: Array,
    chain_width: int = 16,
    nu: float = DEFAULT_NU,
    n_ismp: float = DEFAULT_N_ISMP,
    stats: Optional[Stats] = None,
):
    """Batch sampler for the fast-marching planner.

    The initial batch is gathered by chaining informed proposals: the
    previous round's outputs become the next round's current
    configurations, all targeting the goal.  Proposals are projected onto
    the manifold (batch planners need on-manifold nodes) with a classical
    uniform fallback for rejects.  Incremental samples after the initial
    batch stay informed until n_ismp of them have been generated.
    """
    z = scene_code(gen, voxels_or_code)
    state = {"initial_done": False, "incremental": 0}

    def classical(rng: np.random.Generator) -> Array:
        return uniform_manifold_sample(sys, collision, steering.atlas, rng, stats)

    def batch(k: int, ctx: SamplerContext) -> List[Array]:
        rng = ctx.rng
        informed = not state["initial_done"] or state["incremental"] < n_ismp
        if state["initial_done"]:
            state["incremental"] += k
        state["initial_done"] = True
        if not informed:
            return [classical(rng) for _ in range(k)]
        out: List[Array] = []
        chain = np.array([classical(rng) for _ in range(min(chain_width, k))])
        stale_rounds = 0
        while len(out) < k:
            rows = propose_next(gen, disc, z, chain, np.repeat(np.asarray(q_goal)[None, :], len(chain), 0), nu, rng, stats)
            accepted = 0
            for r in rows:
                if len(out) >= k:
                    break
                p = proj(sys, r, stats=stats)
                if p is not None and not collision(p):
                    out.append(p)
                    accepted += 1
                else:
                    out.append(classical(rng))
            stale_rounds = stale_rounds + 1 if accepted == 0 else 0
            chain = rows if stale_rounds < 3 else np.array(
                [classical(rng) for _ in range(len(chain))]
            )
        return out[:k]

    return batch
