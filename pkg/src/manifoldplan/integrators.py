"""Constrained local planners connecting two configurations along the manifold.

Three interchangeable integrators walk from a start toward an end
configuration in small steps, each enforcing constraint adherence its own
way: the projection integrator projects every ambient step back to the
manifold; the atlas integrator walks in chart tangent coordinates and
exponentially maps every step; the tangent-bundle integrator walks the
tangent plane lazily and projects only at chart switches and at the final
state.  All three share the same break conditions: collision, divergence
from the target, overstep, stall, path-length budget, and an iteration cap.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np

from manifoldplan.atlas import Atlas, in_validity, psi_exp
from manifoldplan.constraints import ConstraintSystem, ContractError, Stats, proj

Array = np.ndarray


def _norm(v: Array) -> float:
    return math.sqrt(float(v @ v))


# Loop cap for one integrator call.  The per-step loop limit is not the same
# quantity as the projection operator's Newton cap; a geometric approach to a
# target across the sphere needs on the order of a hundred accepted steps.
DEFAULT_INTEGRATOR_ITERS = 500


@dataclass
class IntegratorParams:
    """Step size and divergence guards shared by all integrators.

    gamma: step size; lambda1/lambda2: overstep and path-length guards;
    max_steps: accepted-step cap per call; stall_eps: minimum ambient
    progress per step before the walk counts as stalled.
    """

    gamma: float = 0.05
    lambda1: float = 2.0
    lambda2: float = 2.0
    max_steps: int = DEFAULT_INTEGRATOR_ITERS
    stall_eps: float = 1e-6

    def __post_init__(self) -> None:
        if self.gamma <= 0:
            raise ContractError("gamma must be positive")
        if self.lambda1 < 1 or self.lambda2 < 1:
            raise ContractError("lambda1 and lambda2 must be >= 1")
        if self.max_steps < 1:
            raise ContractError("max_steps must be >= 1")
        if not 0 < self.stall_eps < self.gamma:
            raise ContractError("need 0 < stall_eps < gamma")

    @property
    def reach_tol(self) -> float:
        """Ambient distance at which the target counts as reached."""
        return self.gamma * self.lambda1


@dataclass
class Motion:
    """Result of one integrator call: the accepted states, in order.

    states[0] is always the start configuration; reached is True when the
    final state lies within gamma * lambda1 of the target in ambient norm.
    """

    states: List[Array]
    reached: bool

    def length(self) -> float:
        pts = np.asarray(self.states)
        if len(pts) < 2:
            return 0.0
        return float(np.sum(np.linalg.norm(np.diff(pts, axis=0), axis=1)))


CollisionFn = Callable[[Array], bool]


def _no_collision(_: Array) -> bool:
    return False


def projection_integrate(
    sys: ConstraintSystem,
    in_collision: Optional[CollisionFn],
    q_s: Array,
    q_e: Array,
    p: IntegratorParams,
    stats: Optional[Stats] = None,
) -> Motion:
    """Walk toward q_e by projecting each incremental ambient step.

    Steps q <- Proj(q + gamma (q_e - q)) until the target is within reach,
    a break condition fires, or the step budget runs out.  The state that
    triggers a break is never part of the returned motion, so every
    returned state is collision-free and on-manifold.
    """
    in_collision = in_collision or _no_collision
    q = np.asarray(q_s, dtype=float)
    if not sys.on_manifold(q):
        raise ContractError("projection integrator start must be on-manifold")
    q_e = np.asarray(q_e, dtype=float)
    states = [q.copy()]
    d_w = _norm(q_e - q)
    if d_w <= p.reach_tol:
        return Motion(states, reached=True)
    D = 0.0
    reached = False
    for _ in range(p.max_steps):
        q_next = proj(sys, q + p.gamma * (q_e - q), stats=stats)
        if q_next is None:
            break
        d = _norm(q_next - q)
        D += d
        d1 = _norm(q - q_e)
        d2 = _norm(q_next - q_e)
        if in_collision(q_next) or d2 > d1 or d > p.lambda1 * p.gamma or D > p.lambda2 * d_w:
            break
        q = q_next
        states.append(q)
        if d2 <= p.gamma:
            reached = True
            break
    if not reached:
        reached = _norm(states[-1] - q_e) <= p.reach_tol
    return Motion(states, reached)


def _check_continuation_endpoints(sys: ConstraintSystem, q_s: Array, q_e: Array) -> None:
    if not sys.on_manifold(q_s):
        raise ContractError("continuation integrator start must be on-manifold")
    if not sys.on_manifold(q_e):
        raise ContractError("continuation integrator end must be on-manifold")


def atlas_integrate(
    sys: ConstraintSystem,
    in_collision: Optional[CollisionFn],
    atlas: Atlas,
    q_s: Array,
    q_e: Array,
    p: IntegratorParams,
    stats: Optional[Stats] = None,
) -> Motion:
    """Walk in tangent coordinates, exponentially mapping every step.

    Unit-direction steps of length gamma move toward the log image of the
    target; each step is projected through the chart's exponential map so
    every returned state is on-manifold.  When a step leaves the chart's
    validity region or polytope, the walk switches charts (creating one if
    needed) and recomputes both tangent images.
    """
    in_collision = in_collision or _no_collision
    q = np.asarray(q_s, dtype=float)
    q_e = np.asarray(q_e, dtype=float)
    _check_continuation_endpoints(sys, q, q_e)
    states = [q.copy()]
    d_w = _norm(q_e - q)
    if d_w <= p.reach_tol:
        return Motion(states, reached=True)

    chart = atlas.get_chart(q)
    u = chart.log(q)
    u_e = chart.log(q_e)
    D = 0.0
    i = 0
    recharted_without_step = False
    while _norm(u - u_e) > p.gamma:
        if i >= p.max_steps:
            break
        du = u_e - u
        ndu = _norm(du)
        if ndu == 0.0:
            break
        u_next = u + p.gamma * du / ndu
        q_next = psi_exp(sys, chart, u_next, stats=stats)
        if q_next is None:
            # Treat as leaving the validity region: re-chart at the current
            # state and retry the step once; a fresh chart that still fails
            # ends the walk.
            if recharted_without_step:
                break
            chart = atlas.get_chart(q)
            u = chart.log(q)
            u_e = chart.log(q_e)
            recharted_without_step = True
            continue
        d = _norm(q_next - q)
        D += d
        d1 = _norm(q - q_e)
        d2 = _norm(q_next - q_e)
        if (
            in_collision(q_next)
            or d2 > d1
            or d > p.lambda1 * p.gamma
            or d < p.stall_eps
            or D > p.lambda2 * d_w
        ):
            break
        i += 1
        recharted_without_step = False
        q = q_next
        states.append(q)
        u = u_next
        if not (chart.in_polytope(u) and in_validity(sys, chart, u, q, atlas.params)):
            chart = atlas.get_chart(q)
            u = chart.log(q)
            u_e = chart.log(q_e)
    reached = _norm(states[-1] - q_e) <= p.reach_tol
    return Motion(states, reached)


def tb_integrate(
    sys: ConstraintSystem,
    in_collision: Optional[CollisionFn],
    atlas: Atlas,
    q_s: Array,
    q_e: Array,
    p: IntegratorParams,
    stats: Optional[Stats] = None,
) -> Motion:
    """Lazy tangent-bundle walk: project only at chart switches and at the end.

    Intermediate states live on the tangent plane and may drift off the
    manifold by up to eps_chart; the drift itself (plus the rho ball and
    polytope) is the chart-switch trigger.  On a switch the current state
    is replaced by its exponential-map projection before the new chart is
    fetched.  The final state is always projected so the motion endpoint
    is on-manifold; if that projection fails or collides, trailing states
    are dropped until one projects cleanly.
    """
    in_collision = in_collision or _no_collision
    q = np.asarray(q_s, dtype=float)
    q_e = np.asarray(q_e, dtype=float)
    _check_continuation_endpoints(sys, q, q_e)
    states = [q.copy()]
    d_w = _norm(q_e - q)
    if d_w <= p.reach_tol:
        return Motion(states, reached=True)

    chart = atlas.get_chart(q)
    u = chart.log(q)
    u_e = chart.log(q_e)
    D = 0.0
    i = 0
    truncated = False
    while _norm(u - u_e) > p.gamma:
        if i >= p.max_steps:
            break
        du = u_e - u
        ndu = _norm(du)
        if ndu == 0.0:
            break
        u_next = u + p.gamma * du / ndu
        q_next = chart.phi(u_next)
        d = _norm(q_next - q)
        D += d
        d1 = _norm(q - q_e)
        d2 = _norm(q_next - q_e)
        if (
            in_collision(q_next)
            or d2 > d1
            or d > p.lambda1 * p.gamma
            or d < p.stall_eps
            or D > p.lambda2 * d_w
        ):
            break
        i += 1
        q = q_next
        states.append(q)
        u = u_next
        drift = _norm(sys.evaluate(q))
        if (
            drift > atlas.params.eps_chart
            or _norm(u) > atlas.params.rho
            or not chart.in_polytope(u)
        ):
            q_proj = psi_exp(sys, chart, u, stats=stats)
            if q_proj is None or in_collision(q_proj):
                states.pop()
                truncated = True
                break
            q = q_proj
            states[-1] = q
            chart = atlas.get_chart(q)
            u = chart.log(q)
            u_e = chart.log(q_e)

    _finalize_tb_states(sys, in_collision, states, stats)
    if truncated:
        return Motion(states, reached=False)
    reached = bool(states) and _norm(states[-1] - q_e) <= p.reach_tol
    return Motion(states, reached)


def _finalize_tb_states(
    sys: ConstraintSystem,
    in_collision: CollisionFn,
    states: List[Array],
    stats: Optional[Stats],
) -> None:
    """Project the trailing state onto the manifold, dropping states that resist."""
    while len(states) > 1:
        if sys.on_manifold(states[-1]):
            return
        q_proj = proj(sys, states[-1], stats=stats)
        if q_proj is not None and not in_collision(q_proj):
            states[-1] = q_proj
            return
        states.pop()
