"""Sphere benchmark worlds: obstacles, collision checking, voxel maps, problems.

Two scenario families live here.  Scenario 1 scatters many small angular
blocks over the unit sphere; scenario 2 builds longitudinal obstacle strips
pierced by narrow latitude passages, with polar caps closing the
over-the-pole shortcuts.  Scene generation is a pure function of its seed.
Collision checks are analytic (angular plus radial membership); the voxel
grid is a lossy rasterization used as the perception input.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

Array = np.ndarray

VOXEL_GRID = 40
CUBE_HALF = 1.2
RASTER_THETA = 96
RASTER_PHI = 192


class GenerationError(RuntimeError):
    """Scene or problem generation could not satisfy its constraints."""


def _wrap_angle(x):
    """Wrap to (-pi, pi]."""
    return (x + math.pi) % (2.0 * math.pi) - math.pi


@dataclass
class Block:
    """Angular rectangle on the sphere with a radial shell thickness."""

    theta: float  # polar angle of the center, in [0, pi]
    phi: float  # azimuth of the center, in (-pi, pi]
    dtheta: float  # polar half-width
    dphi: float  # azimuth half-width
    radial: float = 0.06  # radial half-thickness around r = 1

    kind = "block"

    def to_dict(self) -> dict:
        return {
            "kind": "block",
            "theta": self.theta,
            "phi": self.phi,
            "dtheta": self.dtheta,
            "dphi": self.dphi,
            "radial": self.radial,
        }


@dataclass
class Strip:
    """Longitudinal band covering all latitudes except the gap passages."""

    phi_lo: float
    phi_hi: float
    gaps: List[Tuple[float, float]] = field(default_factory=list)  # free polar intervals
    radial: float = 0.06

    kind = "strip"

    @property
    def width(self) -> float:
        return (self.phi_hi - self.phi_lo) % (2.0 * math.pi)

    def to_dict(self) -> dict:
        return {
            "kind": "strip",
            "phi_lo": self.phi_lo,
            "phi_hi": self.phi_hi,
            "gaps": [list(g) for g in self.gaps],
            "radial": self.radial,
        }


def obstacle_from_dict(d: dict):
    if d["kind"] == "block":
        return Block(d["theta"], d["phi"], d["dtheta"], d["dphi"], d["radial"])
    if d["kind"] == "strip":
        return Strip(d["phi_lo"], d["phi_hi"], [tuple(g) for g in d["gaps"]], d["radial"])
    raise ValueError(f"unknown obstacle kind {d['kind']!r}")


class SphereScene:
    """Obstacle set plus its cached occupancy voxel grid."""

    def __init__(self, obstacles: Sequence, seed: int = 0, params: Optional[dict] = None):
        self.obstacles = list(obstacles)
        self.seed = seed
        self.params = dict(params or {})
        self._voxels: Optional[Array] = None
        self._raster_labels: Optional[Array] = None
        blocks = [o for o in self.obstacles if o.kind == "block"]
        self._blk = None
        if blocks:
            self._blk = (
                np.array([b.theta for b in blocks]),
                np.array([b.phi for b in blocks]),
                np.array([b.dtheta for b in blocks]),
                np.array([b.dphi for b in blocks]),
                np.array([b.radial for b in blocks]),
            )
        self.strips = [o for o in self.obstacles if o.kind == "strip"]

    # --- collision -----------------------------------------------------

    def in_collision_many(self, pts: Array) -> Array:
        """Vectorized membership test for an (m, 3) array of points."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        r = np.linalg.norm(pts, axis=1)
        safe_r = np.where(r == 0.0, 1.0, r)
        theta = np.arccos(np.clip(pts[:, 2] / safe_r, -1.0, 1.0))
        phi = np.arctan2(pts[:, 1], pts[:, 0])
        hit = np.zeros(len(pts), dtype=bool)
        if self._blk is not None:
            tc, pc, dt, dp, rad = self._blk
            ang_ok = (np.abs(theta[:, None] - tc[None, :]) <= dt[None, :]) & (
                np.abs(_wrap_angle(phi[:, None] - pc[None, :])) <= dp[None, :]
            )
            rad_ok = np.abs(r[:, None] - 1.0) <= rad[None, :]
            hit |= np.any(ang_ok & rad_ok, axis=1)
        for s in self.strips:
            in_band = ((phi - s.phi_lo) % (2.0 * math.pi)) <= s.width
            rad_ok = np.abs(r - 1.0) <= s.radial
            in_gap = np.zeros(len(pts), dtype=bool)
            for lo, hi in s.gaps:
                in_gap |= (theta >= lo) & (theta <= hi)
            hit |= in_band & rad_ok & ~in_gap
        return hit

    def in_collision(self, q: Array) -> bool:
        x, y, z = float(q[0]), float(q[1]), float(q[2])
        r = math.sqrt(x * x + y * y + z * z)
        if r == 0.0:
            return False
        theta = math.acos(max(-1.0, min(1.0, z / r)))
        phi = math.atan2(y, x)
        if self._blk is not None:
            tc, pc, dt, dp, rad = self._blk
            dphi = np.abs((phi - pc + math.pi) % (2.0 * math.pi) - math.pi)
            if bool(
                np.any(
                    (np.abs(theta - tc) <= dt)
                    & (dphi <= dp)
                    & (abs(r - 1.0) <= rad)
                )
            ):
                return True
        for s in self.strips:
            if abs(r - 1.0) > s.radial:
                continue
            if ((phi - s.phi_lo) % (2.0 * math.pi)) > s.width:
                continue
            if not any(lo <= theta <= hi for lo, hi in s.gaps):
                return True
        return False

    # --- voxel grid ------------------------------------------------------

    @property
    def voxels(self) -> Array:
        if self._voxels is None:
            self._voxels = voxelize(self)
        return self._voxels

    # --- surface raster and reachability --------------------------------

    def _raster_points(self):
        th = (np.arange(RASTER_THETA) + 0.5) * math.pi / RASTER_THETA
        ph = -math.pi + (np.arange(RASTER_PHI) + 0.5) * 2.0 * math.pi / RASTER_PHI
        tt, pp = np.meshgrid(th, ph, indexing="ij")
        pts = np.stack(
            [np.sin(tt) * np.cos(pp), np.sin(tt) * np.sin(pp), np.cos(tt)], axis=-1
        )
        return pts.reshape(-1, 3)

    def raster_labels(self) -> Array:
        """Connected-component labels of the free surface raster (-1 = occupied)."""
        if self._raster_labels is not None:
            return self._raster_labels
        free = ~self.in_collision_many(self._raster_points())
        free = free.reshape(RASTER_THETA, RASTER_PHI)
        labels = -np.ones(free.shape, dtype=int)
        next_label = 0
        for i in range(RASTER_THETA):
            for j in range(RASTER_PHI):
                if not free[i, j] or labels[i, j] >= 0:
                    continue
                stack = [(i, j)]
                labels[i, j] = next_label
                while stack:
                    a, b = stack.pop()
                    for na, nb in ((a - 1, b), (a + 1, b), (a, (b - 1) % RASTER_PHI), (a, (b + 1) % RASTER_PHI)):
                        if 0 <= na < RASTER_THETA and free[na, nb] and labels[na, nb] < 0:
                            labels[na, nb] = next_label
                            stack.append((na, nb))
                next_label += 1
        self._raster_labels = labels
        return labels

    def _raster_cell(self, q: Array) -> Tuple[int, int]:
        q = np.asarray(q, dtype=float)
        r = np.linalg.norm(q)
        theta = math.acos(max(-1.0, min(1.0, q[2] / r)))
        phi = math.atan2(q[1], q[0])
        i = min(RASTER_THETA - 1, int(theta / math.pi * RASTER_THETA))
        j = min(RASTER_PHI - 1, int((phi + math.pi) / (2 * math.pi) * RASTER_PHI))
        return i, j

    def surface_connected(self, q_a: Array, q_b: Array) -> bool:
        """Feasibility pre-check on the rasterized free surface."""
        labels = self.raster_labels()
        la = labels[self._raster_cell(q_a)]
        lb = labels[self._raster_cell(q_b)]
        return la >= 0 and la == lb

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "params": self.params,
            "obstacles": [o.to_dict() for o in self.obstacles],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SphereScene":
        return cls([obstacle_from_dict(o) for o in d["obstacles"]], d["seed"], d.get("params"))


def voxelize(scene: SphereScene, grid: int = VOXEL_GRID, half: float = CUBE_HALF) -> Array:
    """Occupancy grid over the bounding cube; a cell is occupied iff its center collides."""
    centers_1d = -half + (np.arange(grid) + 0.5) * (2.0 * half / grid)
    xx, yy, zz = np.meshgrid(centers_1d, centers_1d, centers_1d, indexing="ij")
    pts = np.stack([xx, yy, zz], axis=-1).reshape(-1, 3)
    occ = np.zeros(len(pts), dtype=bool)
    chunk = 8192
    for lo in range(0, len(pts), chunk):
        occ[lo : lo + chunk] = scene.in_collision_many(pts[lo : lo + chunk])
    return occ.reshape(grid, grid, grid).astype(np.uint8)


def in_collision(scene: SphereScene, q: Array) -> bool:
    return scene.in_collision(q)


def _uniform_sphere_point(rng: np.random.Generator) -> Array:
    while True:
        v = rng.standard_normal(3)
        n = np.linalg.norm(v)
        if n > 1e-12:
            return v / n


def _sample_free_point(scene: SphereScene, rng, budget: int = 10_000) -> Array:
    for _ in range(budget):
        q = _uniform_sphere_point(rng)
        if not scene.in_collision(q):
            return q
    raise GenerationError("could not sample a collision-free on-manifold point")


@dataclass
class GenReport:
    """Bookkeeping from problem generation: how many candidate pairs were rejected."""

    infeasible_filtered: int = 0
    arc_free_filtered: int = 0


def gen_scenario1(
    seed: int,
    n_obstacles: int = 500,
    n_pairs: int = 200,
    half_width_range: Tuple[float, float] = (0.03, 0.06),
    radial: float = 0.06,
) -> Tuple[SphereScene, List[Tuple[Array, Array]], GenReport]:
    """Scatter n_obstacles small blocks uniformly; sample feasible endpoint pairs."""
    rng = np.random.default_rng(seed)
    lo, hi = half_width_range
    obstacles = []
    for _ in range(n_obstacles):
        c = _uniform_sphere_point(rng)
        theta = math.acos(max(-1.0, min(1.0, c[2])))
        phi = math.atan2(c[1], c[0])
        obstacles.append(Block(theta, phi, rng.uniform(lo, hi), rng.uniform(lo, hi), radial))
    scene = SphereScene(
        obstacles,
        seed,
        params={
            "scenario": 1,
            "n_obstacles": n_obstacles,
            "half_width_range": [lo, hi],
            "radial": radial,
        },
    )
    report = GenReport()
    pairs: List[Tuple[Array, Array]] = []
    budget = 200 * max(n_pairs, 1) + 1000
    while len(pairs) < n_pairs:
        budget -= 1
        if budget <= 0:
            raise GenerationError("pair sampling budget exhausted (scene too crowded?)")
        a = _sample_free_point(scene, rng)
        b = _sample_free_point(scene, rng)
        if not scene.surface_connected(a, b):
            report.infeasible_filtered += 1
            continue
        pairs.append((a, b))
    return scene, pairs, report


def _slerp(a: Array, b: Array, t: float) -> Array:
    theta = math.acos(max(-1.0, min(1.0, float(a @ b))))
    if theta < 1e-12:
        return a.copy()
    return (math.sin((1 - t) * theta) * a + math.sin(t * theta) * b) / math.sin(theta)


def _direct_arc_blocked(scene: SphereScene, a: Array, b: Array, n: int = 200) -> bool:
    pts = np.array([_slerp(a, b, t) for t in np.linspace(0.0, 1.0, n)])
    return bool(np.any(scene.in_collision_many(pts)))


def _angles_to_point(theta: float, phi: float) -> Array:
    return np.array(
        [math.sin(theta) * math.cos(phi), math.sin(theta) * math.sin(phi), math.cos(theta)]
    )


def sample_scenario2_pairs(
    scene: SphereScene,
    rng: np.random.Generator,
    n_pairs: int,
    wedges: Tuple[Tuple[float, float], Tuple[float, float]],
    polar_range: Tuple[float, float],
    require_blocked_arc: bool = True,
) -> Tuple[List[Tuple[Array, Array]], GenReport]:
    """Sample endpoint pairs from two azimuth wedges, keeping feasible, nontrivial ones."""
    report = GenReport()
    pairs: List[Tuple[Array, Array]] = []
    budget = 500 * max(n_pairs, 1) + 1000
    feasible_seen = False
    while len(pairs) < n_pairs:
        budget -= 1
        if budget <= 0:
            if not feasible_seen:
                raise GenerationError("no feasible endpoint pair exists (passages closed?)")
            raise GenerationError("pair sampling budget exhausted")
        points = []
        ok = True
        for wlo, whi in wedges:
            span = (whi - wlo) % (2.0 * math.pi)
            phi = _wrap_angle(wlo + rng.uniform(0.1 * span, 0.9 * span))
            theta = rng.uniform(*polar_range)
            q = _angles_to_point(theta, phi)
            if scene.in_collision(q):
                ok = False
                break
            points.append(q)
        if not ok:
            continue
        a, b = points
        if not scene.surface_connected(a, b):
            report.infeasible_filtered += 1
            continue
        feasible_seen = True
        if require_blocked_arc and not _direct_arc_blocked(scene, a, b):
            report.arc_free_filtered += 1
            continue
        pairs.append((a, b))
    return pairs, report


def gen_scenario2(
    seed: int,
    n_strips: int = 4,
    gap_width: float = 0.3,
    n_pairs: int = 500,
    strip_width: float = 0.4,
    cap_half_angle: float = 0.45,
    radial: float = 0.06,
    gamma: float = 0.05,
) -> Tuple[SphereScene, List[Tuple[Array, Array]], GenReport]:
    """Longitudinal strips with 1-2 latitude passages each, plus polar caps.

    Endpoints are drawn from two azimuthally opposite free wedges so any
    solution crosses several strips; pairs whose direct great-circle arc is
    obstacle-free are rejected to keep problems nontrivial.
    """
    if n_strips < 2:
        raise GenerationError("need at least 2 strips")
    if gap_width <= 2.0 * gamma:
        raise GenerationError("gap_width must exceed 2 * gamma")
    rng = np.random.default_rng(seed)
    obstacles: List = [
        Block(0.0, 0.0, cap_half_angle, math.pi + 0.01, radial),
        Block(math.pi, 0.0, cap_half_angle, math.pi + 0.01, radial),
    ]
    sector = 2.0 * math.pi / n_strips
    gap_lo = cap_half_angle + 0.1 + gap_width / 2.0
    gap_hi = math.pi - cap_half_angle - 0.1 - gap_width / 2.0
    if gap_lo >= gap_hi:
        raise GenerationError("caps leave no room for passages")
    for j in range(n_strips):
        center = -math.pi + (j + 0.5) * sector
        lo = _wrap_angle(center - strip_width / 2.0)
        hi = _wrap_angle(center + strip_width / 2.0)
        n_gaps = int(rng.integers(1, 3))
        gaps: List[Tuple[float, float]] = []
        for _ in range(n_gaps):
            for _ in range(50):
                c = rng.uniform(gap_lo, gap_hi)
                cand = (c - gap_width / 2.0, c + gap_width / 2.0)
                if all(cand[1] < g[0] - 0.05 or cand[0] > g[1] + 0.05 for g in gaps):
                    gaps.append(cand)
                    break
        obstacles.append(Strip(lo, hi, gaps, radial))
    scene = SphereScene(
        obstacles,
        seed,
        params={
            "scenario": 2,
            "n_strips": n_strips,
            "gap_width": gap_width,
            "strip_width": strip_width,
            "cap_half_angle": cap_half_angle,
            "radial": radial,
        },
    )
    # Endpoint wedges: between strips 0 and 1, and the azimuthally opposite one.
    strips = [o for o in scene.obstacles if o.kind == "strip"]
    half = n_strips // 2
    wedge_a = (strips[0].phi_hi, strips[1].phi_lo)
    wedge_b = (strips[half].phi_hi, strips[(half + 1) % n_strips].phi_lo)
    polar_range = (cap_half_angle + 0.15, math.pi - cap_half_angle - 0.15)
    pairs, report = sample_scenario2_pairs(scene, rng, n_pairs, (wedge_a, wedge_b), polar_range)
    return scene, pairs, report
