import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from manifoldplan.constraints import Stats
from manifoldplan.nn.checkpoint import (
    load_discriminator,
    load_generator,
    save_discriminator,
    save_generator,
)
from manifoldplan.nn.layers import MODE_DETERMINISTIC, MODE_STOCHASTIC
from manifoldplan.nn.models import Discriminator, Generator
from manifoldplan.nn.sampling import compnetx_sample, hybrid_sampler, kbatch_sample, nproj
from manifoldplan.nn.train import (
    EpochLoss,
    PlanningDataset,
    TrainState,
    adagrad_step,
    train_discriminator,
    train_generator,
)
from manifoldplan.planners import SamplerContext, Tree


def tiny_voxels(rng):
    return (rng.random((40, 40, 40)) < 0.05).astype(float)


# --- Adagrad ------------------------------------------------------------------


def test_adagrad_zero_gradient_is_identity():
    state = TrainState.fresh(np.array([1.0, -2.0]), lr=0.01)
    adagrad_step(state, np.zeros(2))
    assert np.array_equal(state.params, [1.0, -2.0])
    assert np.array_equal(state.accum, [0.0, 0.0])


def test_adagrad_hand_computed_two_steps():
    state = TrainState.fresh(np.array([1.0]), lr=0.01)
    adagrad_step(state, np.array([2.0]))
    assert state.accum[0] == pytest.approx(4.0, abs=1e-15)
    assert state.params[0] == pytest.approx(0.99, abs=1e-12)
    adagrad_step(state, np.array([2.0]))
    assert state.accum[0] == pytest.approx(8.0, abs=1e-15)
    assert state.params[0] == pytest.approx(0.99 - 0.02 / np.sqrt(8.0), abs=1e-12)


@given(seed=st.integers(min_value=0, max_value=2**31))
@settings(max_examples=30, deadline=None)
def test_adagrad_accumulator_monotone(seed):
    rng = np.random.default_rng(seed)
    state = TrainState.fresh(rng.standard_normal(16), lr=0.01)
    prev = state.accum.copy()
    for _ in range(5):
        adagrad_step(state, rng.standard_normal(16))
        assert np.all(state.accum >= prev)
        prev = state.accum.copy()


# --- checkpoints --------------------------------------------------------------


def test_generator_checkpoint_roundtrip(tmp_path):
    gen = Generator.fresh(seed=3)
    rng = np.random.default_rng(0)
    v = tiny_voxels(rng)
    z = gen.encode(v)
    out = gen.propose(z[None, :], np.zeros((1, 3)), np.ones((1, 3)), MODE_DETERMINISTIC)
    path = tmp_path / "generator.ckpt"
    save_generator(path, gen, accum=np.abs(rng.standard_normal(gen.params.shape)))
    loaded, accum = load_generator(path)
    assert accum is not None
    assert np.array_equal(loaded.params, gen.params)
    z2 = loaded.encode(v)
    out2 = loaded.propose(z2[None, :], np.zeros((1, 3)), np.ones((1, 3)), MODE_DETERMINISTIC)
    assert np.array_equal(out, out2)


def test_discriminator_checkpoint_roundtrip(tmp_path):
    disc = Discriminator.fresh(seed=5)
    x_z = np.random.default_rng(1).standard_normal(128)
    q = np.array([0.3, -0.4, 0.9])
    d1 = disc.distance(x_z[None, :], q[None, :])[0]
    path = tmp_path / "disc.ckpt"
    save_discriminator(path, disc)
    loaded, accum = load_discriminator(path)
    assert accum is None
    d2 = loaded.distance(x_z[None, :], q[None, :])[0]
    assert d1 == d2


def test_checkpoint_bytes_deterministic(tmp_path):
    gen = Generator.fresh(seed=9)
    p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    save_generator(p1, gen)
    save_generator(p2, gen)
    assert p1.read_bytes() == p2.read_bytes()


# --- training loops -----------------------------------------------------------


def single_tuple_dataset(rng, repeats=1):
    v = tiny_voxels(rng)
    return PlanningDataset(
        voxels={"s0": v},
        scene_ids=["s0"] * repeats,
        q_curr=np.tile([[1.0, 0.0, 0.0]], (repeats, 1)),
        q_targ=np.tile([[0.0, 1.0, 0.0]], (repeats, 1)),
        q_next=np.tile([[0.95, 0.05, 0.0]], (repeats, 1)),
    )


def test_generator_overfits_single_repeated_tuple():
    import threadpoolctl

    rng = np.random.default_rng(2)
    ds = single_tuple_dataset(rng, repeats=16)
    gen = Generator.fresh(seed=1)
    from manifoldplan.nn.train import generator_validation_loss

    initial = generator_validation_loss(gen, ds)
    with threadpoolctl.threadpool_limits(1):  # batch-1 steps; BLAS threads only add overhead
        _, curve = train_generator(gen, ds, epochs=200, lr=0.01, rng=rng, batch_size=1)
    final = generator_validation_loss(gen, ds)
    assert final < 0.01 * initial
    assert len(curve) == 200


def test_generator_training_deterministic_given_seed():
    def run():
        rng = np.random.default_rng(7)
        ds = single_tuple_dataset(np.random.default_rng(3))
        gen = Generator.fresh(seed=4)
        train_generator(gen, ds, epochs=3, rng=rng, batch_size=1)
        return gen.params.copy()

    assert np.array_equal(run(), run())


def test_discriminator_regression_converges():
    # Learn d = |r - 1| from (fixed scene code, point) rows.
    rng = np.random.default_rng(5)
    z = rng.standard_normal(128) * 0.1
    pts = rng.uniform(-1.5, 1.5, size=(6000, 3))
    d = np.abs(np.linalg.norm(pts, axis=1) - 1.0)
    X = np.concatenate([np.repeat(z[None, :], len(pts), 0), pts], axis=1)
    disc = Discriminator.fresh(seed=6)
    _, curve = train_discriminator(disc, X, d, epochs=80, lr=0.01, rng=rng, batch_size=64)
    pred = disc.net.forward(X[:1000], MODE_DETERMINISTIC)[:, 0]
    assert float(np.mean(np.abs(pred - d[:1000]))) < 0.05
    assert curve[-1].train_loss < curve[0].train_loss


def test_zero_weight_discriminator_predicts_bias():
    disc = Discriminator()  # zero parameters
    W_last, b_last = disc.net.layer_params(4)
    b_last[...] = 0.7
    rng = np.random.default_rng(8)
    X = rng.standard_normal((10, 131))
    assert np.allclose(disc.net.forward(X, MODE_DETERMINISTIC)[:, 0], 0.7)


# --- learned sampling ----------------------------------------------------------


def test_nproj_infinite_threshold_is_identity():
    disc = Discriminator.fresh(seed=11)
    z = np.random.default_rng(0).standard_normal(128)
    q = np.array([1.5, 0.0, 0.0])
    out = nproj(disc, z, q, nu=np.inf)
    assert np.array_equal(out, q)


def test_nproj_descends_predicted_distance():
    disc = Discriminator.fresh(seed=12)
    z = np.random.default_rng(1).standard_normal(128) * 0.1
    q = np.array([1.5, 0.0, 0.0])
    d0 = disc.distance(z[None, :], q[None, :])[0]
    stats = Stats()
    out = nproj(disc, z, q, nu=0.0, max_steps=10, stats=stats)
    d1 = disc.distance(z[None, :], out[None, :])[0]
    assert d1 <= d0
    assert stats.nproj_calls == 1


def test_nproj_input_gradient_matches_finite_differences():
    disc = Discriminator.fresh(seed=13)
    rng = np.random.default_rng(2)
    z = rng.standard_normal(128) * 0.2
    q = rng.standard_normal(3)
    _, grad = disc.distance_and_input_grad(z, q)
    h = 1e-5
    for i in range(3):
        e = np.zeros(3)
        e[i] = h
        hi = disc.distance(z[None, :], (q + e)[None, :])[0]
        lo = disc.distance(z[None, :], (q - e)[None, :])[0]
        fd = (hi - lo) / (2 * h)
        assert abs(grad[i] - fd) / max(1e-6, abs(fd), abs(grad[i])) < 1e-4


def test_compnetx_sample_gate_disabled_returns_raw_generator_output():
    gen = Generator.fresh(seed=14)
    rng = np.random.default_rng(3)
    v = tiny_voxels(rng)
    z = gen.encode(v)
    q_c = np.array([1.0, 0.0, 0.0])
    q_t = np.array([0.0, 1.0, 0.0])
    raw = gen.propose(
        z[None, :], q_c[None, :], q_t[None, :], MODE_STOCHASTIC, rng=np.random.default_rng(55)
    )[0]
    disc = Discriminator.fresh(seed=15)
    gated = compnetx_sample(gen, disc, z, q_c, q_t, nu=np.inf, rng=np.random.default_rng(55))
    assert np.array_equal(raw, gated)


def test_compnetx_sample_stochastic_across_rngs():
    gen = Generator.fresh(seed=16)
    v = tiny_voxels(np.random.default_rng(4))
    q_c = np.array([1.0, 0.0, 0.0])
    q_t = np.array([0.0, 1.0, 0.0])
    s1 = compnetx_sample(gen, None, v, q_c, q_t, rng=np.random.default_rng(1))
    s2 = compnetx_sample(gen, None, v, q_c, q_t, rng=np.random.default_rng(2))
    assert not np.array_equal(s1, s2)


def test_kbatch_reduces_to_single_sample():
    gen = Generator.fresh(seed=17)
    v = tiny_voxels(np.random.default_rng(5))
    z = gen.encode(v)
    root = np.array([1.0, 0.0, 0.0])
    goal = np.array([0.0, 0.0, 1.0])
    tree = Tree(root)
    batch = kbatch_sample(gen, None, tree, goal, K=1, rng=np.random.default_rng(77), voxels_or_code=z)
    single = compnetx_sample(gen, None, z, root, goal, rng=np.random.default_rng(77))
    assert np.array_equal(batch[0], single)


def test_kbatch_replicates_root_when_tree_small():
    gen = Generator.fresh(seed=18)
    z = gen.encode(tiny_voxels(np.random.default_rng(6)))
    tree = Tree(np.array([1.0, 0.0, 0.0]))
    rng = np.random.default_rng(9)
    sel = rng.spawn(1)[0]
    del sel
    batch = kbatch_sample(gen, None, tree, np.array([0.0, 1.0, 0.0]), K=4, rng=np.random.default_rng(9), voxels_or_code=z)
    assert batch.shape == (4, 3)
    # All four proposals share the root as their current configuration,
    # differing only through dropout.


def test_kbatch_batched_equals_singles_with_matched_masks():
    gen = Generator.fresh(seed=19)
    z = gen.encode(tiny_voxels(np.random.default_rng(7)))
    rng = np.random.default_rng(21)
    K = 5
    q_curr = np.repeat(np.array([[1.0, 0.0, 0.0]]), K, axis=0)
    q_targ = np.repeat(np.array([[0.0, 1.0, 0.0]]), K, axis=0)
    widths = [896, 512, 256, 128]
    masks = [rng.random((K, w)) >= 0.5 for w in widths]
    from manifoldplan.nn.sampling import propose_next

    batched = propose_next(gen, None, z, q_curr, q_targ, np.inf, rng, dropout_masks=masks)
    for i in range(K):
        row_masks = [m[i : i + 1] for m in masks]
        single = propose_next(
            gen, None, z, q_curr[i : i + 1], q_targ[i : i + 1], np.inf, rng, dropout_masks=row_masks
        )
        assert np.array_equal(batched[i], single[0])


def test_hybrid_sampler_switchover():
    calls = []

    def learned(ctx):
        calls.append("learned")
        return np.zeros(3)

    def classical(ctx):
        calls.append("classical")
        return np.ones(3)

    always_classical = hybrid_sampler(learned, classical, n_ismp=0)
    always_learned = hybrid_sampler(learned, classical, n_ismp=np.inf)
    mixed = hybrid_sampler(learned, classical, n_ismp=2)
    rng = np.random.default_rng(0)
    for i in range(4):
        always_classical(SamplerContext(iteration=i, rng=rng))
        always_learned(SamplerContext(iteration=i, rng=rng))
        mixed(SamplerContext(iteration=i, rng=rng))
    assert calls.count("classical") == 4 + 2
    assert calls.count("learned") == 4 + 2
