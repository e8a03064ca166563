"""Charts, tangent-space maps, validity regions, and the atlas store.

A chart is a local parameterization of the constraint manifold: an
on-manifold center plus an orthonormal basis of the tangent space
(the null space of the constraint Jacobian).  Points move between
tangent coordinates and the manifold through an exponential map
(tangent step followed by an orthogonal Newton projection) and its
trivial logarithmic inverse.  Charts carry a convex polytope of
half-spaces separating them from neighboring charts so the atlas
covers the manifold without overlap.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
import scipy.linalg

from manifoldplan.constraints import ConstraintSystem, ContractError, Stats

Array = np.ndarray

NEWTON_MAX_ITERS = 50
NEWTON_UPDATE_TOL = 1e-9
HALFSPACE_TOL = 1e-12
CENTER_COINCIDES_TOL = 1e-12
GET_CHART_SCAN = 10
SAMPLE_REJECTION_BUDGET = 100


class DegeneratePointError(RuntimeError):
    """The constraint Jacobian is rank-deficient, so no tangent basis exists."""


class ChartCapacityError(RuntimeError):
    """The atlas reached its configured chart limit."""


@dataclass
class AtlasParams:
    """Validity-region and growth parameters shared by all charts.

    rho: tangent ball radius; alpha: maximum chart/manifold angle;
    eps_chart: maximum chart/manifold distance; explore_prob: probability
    of pushing a sampled tangent point to the rho boundary (classical
    sampling only); separate: install separating half-spaces between
    neighboring charts (the tangent-bundle integrator runs without them).
    """

    rho: float = 1.5
    alpha: float = math.pi / 6.0
    eps_chart: float = 0.01
    max_charts: int = 5000
    explore_prob: float = 0.9
    separate: bool = True


@dataclass
class Chart:
    """Local tangent parameterization: center on the manifold, orthonormal basis."""

    id: int
    center: Array
    basis: Array  # n x (n - k), orthonormal columns spanning null(J(center))
    halfspaces: List[Tuple[Array, float]] = field(default_factory=list)

    def __post_init__(self) -> None:
        self._A: Optional[Array] = None  # stacked half-space normals
        self._b: Optional[Array] = None

    def phi(self, u: Array) -> Array:
        """Tangent coordinates to ambient space: center + basis @ u (no projection)."""
        return self.center + self.basis @ np.asarray(u, dtype=float)

    def log(self, q: Array) -> Array:
        """Ambient point to tangent coordinates: basis^T (q - center)."""
        return self.basis.T @ (np.asarray(q, dtype=float) - self.center)

    def in_polytope(self, u: Array) -> bool:
        if not self.halfspaces:
            return True
        if self._A is None:
            self._A = np.array([a for a, _ in self.halfspaces])
            self._b = np.array([b for _, b in self.halfspaces])
        return bool(np.all(self._A @ u <= self._b + HALFSPACE_TOL))

    def add_halfspace(self, a: Array, b: float) -> None:
        self.halfspaces.append((np.asarray(a, dtype=float), float(b)))
        self._A = None
        self._b = None


def tangent_basis(sys: ConstraintSystem, q: Array) -> Array:
    """Orthonormal basis of null(J(q)) via SVD.

    Raises DegeneratePointError when J(q) is rank-deficient, in which case
    the tangent space is not (n-k)-dimensional.
    """
    J = sys.jacobian(q)
    basis = scipy.linalg.null_space(J)
    if basis.shape != (sys.n, sys.n - sys.k):
        raise DegeneratePointError(
            f"null space of J has dimension {basis.shape[1]}, expected {sys.n - sys.k}"
        )
    return basis


def psi_exp(
    sys: ConstraintSystem,
    chart: Chart,
    u: Array,
    max_newton: int = NEWTON_MAX_ITERS,
    stats: Optional[Stats] = None,
) -> Optional[Array]:
    """Exponential map: step to phi(u), then Newton-project orthogonally to the manifold.

    Solves F(q) = 0, basis^T (q - phi(u)) = 0 as a stacked n x n system.
    Returns None when Newton fails to converge (the caller treats this as
    leaving the chart's validity region).
    """
    if stats is not None:
        stats.exp_calls += 1
    target = chart.phi(u)
    q = target.copy()
    bt = chart.basis.T
    eps2 = sys.epsilon * sys.epsilon
    # Inner iterates are internally generated; skip boundary re-validation.
    f = sys.eval_fn
    jac = sys.jac_fn if sys.jac_fn is not None else sys.jacobian
    for _ in range(max_newton):
        fq = np.asarray(f(q), dtype=float)
        tangential = bt @ (q - target)
        if float(fq @ fq) < eps2 and float(tangential @ tangential) < eps2:
            return q
        M = np.vstack([jac(q), bt])
        rhs = np.concatenate([fq, tangential])
        try:
            dq = np.linalg.solve(M, rhs)
        except np.linalg.LinAlgError:
            return None
        if not np.all(np.isfinite(dq)):
            return None
        q = q - dq
        if float(dq @ dq) < NEWTON_UPDATE_TOL * NEWTON_UPDATE_TOL:
            break
    fq = np.asarray(f(q), dtype=float)
    tangential = bt @ (q - target)
    if float(fq @ fq) < eps2 and float(tangential @ tangential) < eps2:
        return q
    return None


def psi_log(chart: Chart, q: Array) -> Array:
    """Logarithmic map, the exact inverse direction: basis^T (q - center)."""
    return chart.log(q)


def phi_map(chart: Chart, u: Array) -> Array:
    return chart.phi(u)


def in_validity(sys: ConstraintSystem, chart: Chart, u: Array, q: Array, params: AtlasParams) -> bool:
    """Check the three validity-region conditions of a chart at (u, q).

    q is the manifold point corresponding to tangent coordinates u; phi(u)
    is its pre-projection image on the tangent plane.  Conditions: the
    chart/manifold gap ||phi(u) - q|| stays within eps_chart, the angular
    deviation stays within alpha, and u stays inside the rho ball.  The
    angle condition compares ||u|| / ||center - q|| against cos(alpha) and
    must hold with >=: a flat manifold gives ratio 1 and is maximally
    valid.  At q == center the angle condition is vacuous.
    """
    u = np.asarray(u, dtype=float)
    q = np.asarray(q, dtype=float)
    nu = math.sqrt(float(u @ u))
    if nu > params.rho:
        return False
    gap = chart.phi(u) - q
    if float(gap @ gap) > params.eps_chart * params.eps_chart:
        return False
    dc = chart.center - q
    dcq = math.sqrt(float(dc @ dc))
    if dcq > CENTER_COINCIDES_TOL and nu / dcq < math.cos(params.alpha):
        return False
    return True


class Atlas:
    """Growable collection of charts with nearest-center lookup.

    Single-owner mutable state: one planner query owns one atlas.  Charts
    are append-only; the only mutation of an existing chart is the
    addition of separating half-spaces when a neighbor appears.
    """

    def __init__(self, sys: ConstraintSystem, params: Optional[AtlasParams] = None):
        self.sys = sys
        self.params = params if params is not None else AtlasParams()
        self.charts: List[Chart] = []
        self._centers = np.empty((64, sys.n))
        self.created_count = 0

    def __len__(self) -> int:
        return len(self.charts)

    def _nearest_ids(self, q: Array, limit: int) -> Array:
        centers = self._centers[: len(self.charts)]
        d2 = np.einsum("ij,ij->i", centers - q, centers - q)
        order = np.argsort(d2, kind="stable")
        return order[:limit]

    def add_chart(self, q: Array) -> Chart:
        """Create a chart centered at q and install mutual separating half-spaces."""
        if len(self.charts) >= self.params.max_charts:
            raise ChartCapacityError(f"atlas reached max_charts={self.params.max_charts}")
        if not self.sys.on_manifold(q):
            raise ContractError("chart center must satisfy ||F(q)|| < epsilon")
        q = np.asarray(q, dtype=float).copy()
        chart = Chart(id=len(self.charts), center=q, basis=tangent_basis(self.sys, q))
        if self.params.separate and self.charts:
            centers = self._centers[: len(self.charts)]
            d = np.sqrt(np.einsum("ij,ij->i", centers - q, centers - q))
            for idx in np.flatnonzero(d < 2.0 * self.params.rho):
                other = self.charts[int(idx)]
                v = other.log(chart.center)
                nv = float(np.linalg.norm(v))
                if nv > CENTER_COINCIDES_TOL:
                    other.add_halfspace(v, nv * nv / 2.0)
                w = chart.log(other.center)
                nw = float(np.linalg.norm(w))
                if nw > CENTER_COINCIDES_TOL:
                    chart.add_halfspace(w, nw * nw / 2.0)
        if len(self.charts) == len(self._centers):
            grown = np.empty((2 * len(self._centers), self.sys.n))
            grown[: len(self.charts)] = self._centers
            self._centers = grown
        self._centers[len(self.charts)] = q
        self.charts.append(chart)
        self.created_count += 1
        return chart

    def get_chart(self, q: Array) -> Chart:
        """Return a chart that validly covers q, creating one centered at q if none does.

        Existing charts are scanned nearest-center first; a chart covers q
        when the log image of q lies in its validity region and polytope.
        """
        if not self.sys.on_manifold(q):
            raise ContractError("get_chart requires an on-manifold configuration")
        q = np.asarray(q, dtype=float)
        if self.charts:
            for idx in self._nearest_ids(q, GET_CHART_SCAN):
                chart = self.charts[int(idx)]
                u = chart.log(q)
                if chart.in_polytope(u) and in_validity(self.sys, chart, u, q, self.params):
                    return chart
        return self.add_chart(q)

    def sample_uniform(self, rng: np.random.Generator) -> Tuple[Chart, Array]:
        """Draw (chart, u): chart uniform over the atlas, u uniform in the rho ball
        intersected with the chart polytope (by rejection).  With probability
        explore_prob the accepted u is pushed out to the rho boundary.
        """
        if not self.charts:
            raise ContractError("cannot sample from an empty atlas")
        d = self.sys.n - self.sys.k
        while True:
            chart = self.charts[int(rng.integers(len(self.charts)))]
            for _ in range(SAMPLE_REJECTION_BUDGET):
                direction = rng.standard_normal(d)
                norm = np.linalg.norm(direction)
                if norm == 0.0:
                    continue
                r = self.params.rho * rng.random() ** (1.0 / d)
                u = direction / norm * r
                if not chart.in_polytope(u):
                    continue
                if self.params.explore_prob > 0.0 and rng.random() < self.params.explore_prob:
                    nu = np.linalg.norm(u)
                    if nu > 0.0:
                        u = u * (self.params.rho / nu)
                return chart, u
            # Rejection budget exhausted for this chart; try another one.
