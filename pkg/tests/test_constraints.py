import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from manifoldplan.constraints import (
    ConstraintSystem,
    ContractError,
    proj,
    pseudoinverse,
    sphere_constraint,
)


@pytest.fixture
def sphere():
    return sphere_constraint()


def test_evaluate_on_manifold_point(sphere):
    assert sphere.evaluate(np.array([1.0, 0.0, 0.0])) == pytest.approx([0.0])


def test_evaluate_off_manifold_point(sphere):
    assert sphere.evaluate(np.array([2.0, 0.0, 0.0])) == pytest.approx([1.0])


def test_evaluate_pythagorean_point(sphere):
    # ||(0.6, 0.8, 0)|| = 1 exactly
    assert sphere.evaluate(np.array([0.6, 0.8, 0.0])) == pytest.approx([0.0], abs=1e-15)


def test_evaluate_dimension_mismatch(sphere):
    with pytest.raises(ContractError):
        sphere.evaluate(np.array([1.0, 0.0]))


def test_evaluate_rejects_non_finite(sphere):
    with pytest.raises(ContractError):
        sphere.evaluate(np.array([np.nan, 0.0, 0.0]))


def test_constraint_system_requires_k_below_n():
    with pytest.raises(ContractError):
        ConstraintSystem(n=3, k=3, eval_fn=lambda q: q)


def test_jacobian_analytic(sphere):
    assert sphere.jacobian(np.array([0.0, 0.0, 1.0])) == pytest.approx(
        np.array([[0.0, 0.0, 1.0]])
    )
    assert sphere.jacobian(np.array([0.6, 0.8, 0.0])) == pytest.approx(
        np.array([[0.6, 0.8, 0.0]])
    )


def test_finite_difference_jacobian_matches_analytic():
    analytic = sphere_constraint()
    fd = ConstraintSystem(n=3, k=1, eval_fn=analytic.eval_fn)
    rng = np.random.default_rng(11)
    worst = 0.0
    for _ in range(100):
        q = rng.standard_normal(3)
        q /= np.linalg.norm(q)
        dev = np.max(np.abs(fd.jacobian(q) - analytic.jacobian(q)))
        worst = max(worst, dev)
    assert worst < 1e-6


def test_pseudoinverse_unit_row():
    assert pseudoinverse(np.array([[0.0, 0.0, 1.0]])) == pytest.approx(
        np.array([[0.0], [0.0], [1.0]])
    )


def test_pseudoinverse_scaled_row():
    # J+ = J^T / ||J||^2 for a rank-1 row
    assert pseudoinverse(np.array([[2.0, 0.0, 0.0]])) == pytest.approx(
        np.array([[0.5], [0.0], [0.0]])
    )


def test_pseudoinverse_zero_matrix():
    assert pseudoinverse(np.zeros((2, 4))) == pytest.approx(np.zeros((4, 2)))


def test_pseudoinverse_reconstruction(sphere):
    rng = np.random.default_rng(3)
    for _ in range(20):
        J = rng.standard_normal((2, 5))
        assert J @ pseudoinverse(J) @ J == pytest.approx(J, abs=1e-8)


@given(
    k=st.integers(min_value=1, max_value=5),
    n=st.integers(min_value=2, max_value=6),
    seed=st.integers(min_value=0, max_value=2**31),
)
@settings(max_examples=60, deadline=None)
def test_pseudoinverse_moore_penrose_identities(k, n, seed):
    if k >= n:
        k = n - 1
    J = np.random.default_rng(seed).standard_normal((k, n))
    P = pseudoinverse(J)
    assert np.allclose(J @ P @ J, J, atol=1e-8)
    assert np.allclose(P @ J @ P, P, atol=1e-8)
    assert np.allclose((J @ P).T, J @ P, atol=1e-8)
    assert np.allclose((P @ J).T, P @ J, atol=1e-8)


def test_proj_radial_point(sphere):
    q = proj(sphere, np.array([2.0, 0.0, 0.0]))
    assert q is not None
    assert q == pytest.approx([1.0, 0.0, 0.0], abs=1e-3)


def test_proj_already_on_manifold_is_identity(sphere):
    q0 = np.array([1.0, 0.0, 0.0])
    q = proj(sphere, q0)
    assert q is not None
    assert np.array_equal(q, q0)


def test_proj_matches_normalization_oracle(sphere):
    q0 = np.array([0.3, -1.2, 0.4])
    q = proj(sphere, q0)
    assert q is not None
    assert q == pytest.approx(q0 / np.linalg.norm(q0), abs=1e-3)


def test_proj_singular_gradient_near_origin(sphere):
    assert proj(sphere, np.array([1e-12, 0.0, 0.0])) is None


def test_proj_sphere_oracle_equivalence(sphere):
    # 1000 random ambient points with 0.1 < ||q|| < 10 against the analytic
    # radial projection.
    rng = np.random.default_rng(7)
    count = 0
    while count < 1000:
        q0 = rng.uniform(-10, 10, size=3)
        r = np.linalg.norm(q0)
        if not 0.1 < r < 10.0:
            continue
        count += 1
        q = proj(sphere, q0)
        assert q is not None
        assert np.linalg.norm(q - q0 / r) < 10 * sphere.epsilon


@given(seed=st.integers(min_value=0, max_value=2**31))
@settings(max_examples=40, deadline=None)
def test_proj_success_implies_on_manifold(seed):
    sphere = sphere_constraint()
    q0 = np.random.default_rng(seed).uniform(-3, 3, size=3)
    q = proj(sphere, q0)
    if q is not None:
        assert np.linalg.norm(sphere.evaluate(q)) < sphere.epsilon


def test_proj_failure_at_iteration_limit():
    # A constraint whose projection iteration cannot converge in one step
    # from far away: limit N=0 means no Newton steps are allowed.
    sphere = sphere_constraint()
    assert proj(sphere, np.array([5.0, 0.0, 0.0]), max_iters=0) is None
