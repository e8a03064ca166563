"""Implicit constraint systems and the Jacobian-pseudoinverse projection.

A constraint system is a smooth map F: R^n -> R^k (0 < k < n) whose zero
set is the motion-planning manifold.  A configuration q counts as
on-manifold when ||F(q)||_2 < epsilon.  The projection operator drives an
arbitrary ambient point onto the manifold by Newton steps through the
Moore-Penrose pseudoinverse of the constraint Jacobian.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

Array = np.ndarray

DEFAULT_EPSILON = 1e-3
DEFAULT_PROJ_ITERS = 50
FD_STEP = 1e-6
SINGULAR_GRAD_NORM = 1e-9
PINV_RCOND = 1e-10


class ContractError(ValueError):
    """An argument violates a documented precondition."""


@dataclass
class Stats:
    """Mutable per-query counters, threaded through projection-heavy code."""

    projection_calls: int = 0
    exp_calls: int = 0
    nproj_calls: int = 0


@dataclass
class ConstraintSystem:
    """F: R^n -> R^k with its Jacobian and on-manifold tolerance.

    ``jac_fn`` may be omitted, in which case the Jacobian is estimated by
    central finite differences with step ``fd_step``.
    """

    n: int
    k: int
    eval_fn: Callable[[Array], Array]
    jac_fn: Optional[Callable[[Array], Array]] = None
    epsilon: float = DEFAULT_EPSILON
    fd_step: float = FD_STEP
    # Ambient sampling box, one (lo, hi) per coordinate.
    bounds: Optional[Array] = None

    def __post_init__(self) -> None:
        if not 0 < self.k < self.n:
            raise ContractError(f"need 0 < k < n, got k={self.k}, n={self.n}")
        if self.epsilon <= 0:
            raise ContractError(f"epsilon must be positive, got {self.epsilon}")
        if self.bounds is not None:
            self.bounds = np.asarray(self.bounds, dtype=float)
            if self.bounds.shape != (self.n, 2):
                raise ContractError(f"bounds must have shape ({self.n}, 2)")

    def _check_config(self, q: Array) -> Array:
        q = np.asarray(q, dtype=float)
        if q.shape != (self.n,):
            raise ContractError(f"config has shape {q.shape}, expected ({self.n},)")
        if not np.all(np.isfinite(q)):
            raise ContractError("config has non-finite entries")
        return q

    def evaluate(self, q: Array) -> Array:
        """F(q), a length-k residual vector."""
        q = self._check_config(q)
        x = np.atleast_1d(np.asarray(self.eval_fn(q), dtype=float))
        if x.shape != (self.k,):
            raise ContractError(f"constraint returned shape {x.shape}, expected ({self.k},)")
        return x

    def jacobian(self, q: Array) -> Array:
        """J(q), the k x n Jacobian of F (analytic if given, else central differences)."""
        q = self._check_config(q)
        if self.jac_fn is not None:
            J = np.asarray(self.jac_fn(q), dtype=float).reshape(self.k, self.n)
            return J
        J = np.empty((self.k, self.n))
        h = self.fd_step
        for i in range(self.n):
            step = np.zeros(self.n)
            step[i] = h
            fp = np.atleast_1d(np.asarray(self.eval_fn(q + step), dtype=float))
            fm = np.atleast_1d(np.asarray(self.eval_fn(q - step), dtype=float))
            if not (np.all(np.isfinite(fp)) and np.all(np.isfinite(fm))):
                raise FloatingPointError("constraint non-finite in finite-difference neighborhood")
            J[:, i] = (fp - fm) / (2.0 * h)
        return J

    def on_manifold(self, q: Array) -> bool:
        return float(np.linalg.norm(self.evaluate(q))) < self.epsilon


def pseudoinverse(J: Array) -> Array:
    """Moore-Penrose pseudoinverse via SVD with singular-value thresholding."""
    J = np.asarray(J, dtype=float)
    return np.linalg.pinv(J, rcond=PINV_RCOND)


def proj(
    sys: ConstraintSystem,
    q: Array,
    max_iters: int = DEFAULT_PROJ_ITERS,
    stats: Optional[Stats] = None,
) -> Optional[Array]:
    """Project q onto the manifold by iterating q <- q - J(q)^+ F(q).

    Returns the projected configuration, or None when the iteration does
    not converge within ``max_iters`` steps or the constraint gradient is
    numerically singular at an iterate.
    """
    q = sys._check_config(q).copy()
    if stats is not None:
        stats.projection_calls += 1
    eps2 = sys.epsilon * sys.epsilon
    # Iterates past the validated entry point are internally generated.
    f = sys.eval_fn
    jac = sys.jac_fn if sys.jac_fn is not None else sys.jacobian
    x = np.asarray(f(q), dtype=float)
    if float(x @ x) < eps2:
        return q
    for _ in range(max_iters):
        J = np.asarray(jac(q), dtype=float)
        jj = float(np.sum(J * J))
        if jj < SINGULAR_GRAD_NORM * SINGULAR_GRAD_NORM:
            return None
        if sys.k == 1:
            # Rank-1 rows invert in closed form: J+ = J^T / ||J||^2.
            q = q - (x[0] / jj) * J.reshape(sys.n)
        else:
            q = q - pseudoinverse(J) @ x
        if not np.all(np.isfinite(q)):
            return None
        x = np.asarray(f(q), dtype=float)
        if float(x @ x) < eps2:
            return q
    return None


def sphere_constraint(epsilon: float = DEFAULT_EPSILON, bound: float = 1.2) -> ConstraintSystem:
    """Unit sphere in R^3: F(q) = ||q|| - 1, J(q) = q^T / ||q||.

    The gradient direction is undefined at the origin; within a tiny
    neighborhood of it the Jacobian is reported as zero so the
    projection operator fails with a singular gradient instead of
    amplifying float noise into an arbitrary direction.
    """

    def f(q: Array) -> Array:
        return np.array([np.linalg.norm(q) - 1.0])

    def jac(q: Array) -> Array:
        r = np.linalg.norm(q)
        if r < SINGULAR_GRAD_NORM:
            return np.zeros((1, 3))
        return (q / r).reshape(1, 3)

    bounds = np.array([[-bound, bound]] * 3)
    return ConstraintSystem(n=3, k=1, eval_fn=f, jac_fn=jac, epsilon=epsilon, bounds=bounds)
