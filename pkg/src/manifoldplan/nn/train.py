"""Training: Adagrad updates, the proposal-model loss, and the distance-model loss.

The generator trains end-to-end with its scene encoder on oracle-path
tuples (voxels, current, target, next): squared-error between the
proposed and the demonstrated next configuration, averaged over the
tuples in each minibatch.  The discriminator regresses the
manifold-distance labels of on-path positives and ambient negatives.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from manifoldplan.nn.layers import MODE_DETERMINISTIC, MODE_TRAIN
from manifoldplan.nn.models import Discriminator, Generator

Array = np.ndarray

ADAGRAD_EPS = 1e-10
DEFAULT_LR = 0.01


@dataclass
class TrainState:
    """Flat parameters plus the Adagrad squared-gradient history."""

    params: Array
    accum: Array
    lr: float = DEFAULT_LR
    seed: int = 0
    _scratch: Optional[Array] = field(default=None, repr=False)

    @classmethod
    def fresh(cls, params: Array, lr: float = DEFAULT_LR, seed: int = 0) -> "TrainState":
        return cls(params=params, accum=np.zeros_like(params), lr=lr, seed=seed)


def adagrad_step(state: TrainState, grads: Array) -> TrainState:
    """accum += g^2; params -= lr * g / (sqrt(accum) + 1e-10), in place."""
    grads = np.asarray(grads, dtype=float)
    if grads.shape != state.params.shape:
        raise ValueError("gradient length does not match parameters")
    if state._scratch is None or state._scratch.shape != grads.shape:
        state._scratch = np.empty_like(grads)
    tmp = state._scratch
    np.multiply(grads, grads, out=tmp)
    state.accum += tmp
    np.sqrt(state.accum, out=tmp)
    tmp += ADAGRAD_EPS
    np.divide(grads, tmp, out=tmp)
    tmp *= state.lr
    state.params -= tmp
    return state


@dataclass
class PlanningDataset:
    """Oracle-path tuples grouped by scene: (voxels, q_curr, q_targ, q_next)."""

    voxels: Dict[str, Array]  # scene id -> (40, 40, 40)
    scene_ids: List[str]  # one per tuple
    q_curr: Array  # (N, n)
    q_targ: Array
    q_next: Array

    def __len__(self) -> int:
        return len(self.scene_ids)

    def subset(self, idx: Sequence[int]) -> "PlanningDataset":
        ids = [self.scene_ids[i] for i in idx]
        return PlanningDataset(
            self.voxels, ids, self.q_curr[idx], self.q_targ[idx], self.q_next[idx]
        )


@dataclass
class EpochLoss:
    epoch: int
    train_loss: float
    val_loss: Optional[float] = None


def _batch_scene_codes(gen: Generator, voxels: Dict[str, Array], ids: Sequence[str], mode: str, want_cache: bool):
    uniq, inv = np.unique(np.asarray(ids), return_inverse=True)
    V = np.stack([voxels[u] for u in uniq])
    out = gen.encode(V, mode, want_cache=want_cache)
    if want_cache:
        z, cache = out
        return z, inv, cache
    return out, inv, None


def generator_validation_loss(gen: Generator, ds: PlanningDataset, batch_size: int = 512) -> float:
    """Mean squared next-configuration error in deterministic-infer mode."""
    if len(ds) == 0:
        raise ValueError("empty dataset")
    total = 0.0
    for lo in range(0, len(ds), batch_size):
        idx = np.arange(lo, min(lo + batch_size, len(ds)))
        ids = [ds.scene_ids[i] for i in idx]
        z, inv, _ = _batch_scene_codes(gen, ds.voxels, ids, MODE_DETERMINISTIC, False)
        pred = gen.propose(z[inv], ds.q_curr[idx], ds.q_targ[idx], MODE_DETERMINISTIC)
        total += float(np.sum((pred - ds.q_next[idx]) ** 2))
    return total / len(ds)


def train_generator(
    gen: Generator,
    train_ds: PlanningDataset,
    epochs: int,
    lr: float = DEFAULT_LR,
    rng: Optional[np.random.Generator] = None,
    batch_size: int = 256,
    val_ds: Optional[PlanningDataset] = None,
    state: Optional[TrainState] = None,
) -> Tuple[TrainState, List[EpochLoss]]:
    """End-to-end Adagrad training of the encoder + trunk; returns the loss curve."""
    if len(train_ds) == 0:
        raise ValueError("empty dataset")
    rng = rng if rng is not None else np.random.default_rng(0)
    if state is None:
        state = TrainState.fresh(gen.params, lr=lr, seed=gen.seed)
    else:
        state.lr = lr
    z_dim = gen.trunk.specs[0].in_features - 2 * gen.n
    grad_buf = np.empty_like(gen.params)
    g_enc_view = grad_buf[: gen.n_enc]
    g_trunk_view = grad_buf[gen.n_enc :]
    curve: List[EpochLoss] = []
    for epoch in range(1, epochs + 1):
        perm = rng.permutation(len(train_ds))
        epoch_sum = 0.0
        for lo in range(0, len(perm), batch_size):
            idx = perm[lo : lo + batch_size]
            ids = [train_ds.scene_ids[i] for i in idx]
            z, inv, enc_cache = _batch_scene_codes(gen, train_ds.voxels, ids, MODE_TRAIN, True)
            pred, trunk_cache = gen.propose(
                z[inv], train_ds.q_curr[idx], train_ds.q_targ[idx], MODE_TRAIN, rng=rng, want_cache=True
            )
            resid = pred - train_ds.q_next[idx]
            epoch_sum += float(np.sum(resid**2))
            dy = 2.0 * resid / len(idx)
            _, dx = gen.trunk.backward(trunk_cache, dy, grads_out=g_trunk_view)
            dz = np.zeros((z.shape[0], z_dim))
            np.add.at(dz, inv, dx[:, :z_dim])
            gen.encoder.backward(enc_cache, dz, need_input_grad=False, grads_out=g_enc_view)
            adagrad_step(state, grad_buf)
        val = generator_validation_loss(gen, val_ds) if val_ds is not None else None
        curve.append(EpochLoss(epoch, epoch_sum / len(perm), val))
    return state, curve


def regression_validation_loss(disc: Discriminator, X: Array, y: Array, batch_size: int = 1024) -> float:
    total = 0.0
    for lo in range(0, len(X), batch_size):
        pred = disc.net.forward(X[lo : lo + batch_size], MODE_DETERMINISTIC)[:, 0]
        total += float(np.sum((pred - y[lo : lo + batch_size]) ** 2))
    return total / len(X)


def train_discriminator(
    disc: Discriminator,
    X: Array,
    y: Array,
    epochs: int,
    lr: float = DEFAULT_LR,
    rng: Optional[np.random.Generator] = None,
    batch_size: int = 256,
    val: Optional[Tuple[Array, Array]] = None,
    state: Optional[TrainState] = None,
) -> Tuple[TrainState, List[EpochLoss]]:
    """Adagrad MSE regression of manifold distances on (scene code, config) rows."""
    if len(X) == 0:
        raise ValueError("empty dataset")
    rng = rng if rng is not None else np.random.default_rng(0)
    if state is None:
        state = TrainState.fresh(disc.params, lr=lr, seed=disc.seed)
    else:
        state.lr = lr
    curve: List[EpochLoss] = []
    for epoch in range(1, epochs + 1):
        perm = rng.permutation(len(X))
        epoch_sum = 0.0
        for lo in range(0, len(perm), batch_size):
            idx = perm[lo : lo + batch_size]
            pred, cache = disc.net.forward(X[idx], MODE_TRAIN, want_cache=True)
            resid = pred[:, 0] - y[idx]
            epoch_sum += float(np.sum(resid**2))
            dy = (2.0 * resid / len(idx))[:, None]
            grads, _ = disc.net.backward(cache, dy)
            adagrad_step(state, grads)
        val_loss = regression_validation_loss(disc, *val) if val is not None else None
        curve.append(EpochLoss(epoch, epoch_sum / len(perm), val_loss))
    return state, curve
