"""Sphere-environment network architectures: sample generator and distance model.

The generator pairs a small 2-D CNN scene encoder with a six-layer MLP
trunk.  The 40x40x40 occupancy grid enters the CNN as a 40-channel 40x40
image (channels = first grid axis).  The trunk consumes the scene code
concatenated with the current and target configurations and proposes the
next configuration; dropout on its first four layers supplies the
sampling stochasticity.  The distance model (discriminator) regresses a
configuration's distance to the constraint manifold from the same scene
code; its input gradient drives the learned projection step.
"""

from __future__ import annotations

from typing import List, Optional

import numpy as np

from manifoldplan.nn.layers import (
    MODE_DETERMINISTIC,
    LayerSpec,
    Network,
    ShapeError,
)

Array = np.ndarray

SCENE_CODE_DIM = 128
VOXEL_SIDE = 40


def param_count(specs) -> int:
    return sum(int(np.prod(shape)) for spec in specs for shape in spec.param_shapes())


def scene_encoder_specs() -> List[LayerSpec]:
    # 40ch 40x40 -> conv 5x5/2 -> 16ch 18x18 -> conv 3x3/1 -> 8ch 16x16
    # -> maxpool 2 -> 8ch 8x8 -> flatten 512 -> 128 -> 128
    return [
        LayerSpec("conv2d", in_channels=VOXEL_SIDE, out_channels=16, kernel=5, stride=2),
        LayerSpec("prelu"),
        LayerSpec("conv2d", in_channels=16, out_channels=8, kernel=3, stride=1),
        LayerSpec("prelu"),
        LayerSpec("maxpool2d", pool=2),
        LayerSpec("flatten"),
        LayerSpec("linear", in_features=512, out_features=128),
        LayerSpec("prelu"),
        LayerSpec("linear", in_features=128, out_features=SCENE_CODE_DIM),
    ]


def generator_trunk_specs(n: int = 3) -> List[LayerSpec]:
    sizes = [SCENE_CODE_DIM + 2 * n, 896, 512, 256, 128, 64, n]
    specs: List[LayerSpec] = []
    for i in range(4):
        specs.append(LayerSpec("linear", in_features=sizes[i], out_features=sizes[i + 1]))
        specs.append(LayerSpec("prelu"))
        specs.append(LayerSpec("dropout", p=0.5))
    specs.append(LayerSpec("linear", in_features=sizes[4], out_features=sizes[5]))
    specs.append(LayerSpec("prelu"))
    specs.append(LayerSpec("linear", in_features=sizes[5], out_features=sizes[6]))
    return specs


def discriminator_specs(n: int = 3) -> List[LayerSpec]:
    return [
        LayerSpec("linear", in_features=SCENE_CODE_DIM + n, out_features=256),
        LayerSpec("prelu"),
        LayerSpec("linear", in_features=256, out_features=256),
        LayerSpec("prelu"),
        LayerSpec("linear", in_features=256, out_features=1),
    ]


class Generator:
    """Scene encoder + proposal trunk over one flat parameter vector."""

    def __init__(self, n: int = 3, params: Optional[Array] = None, seed: int = 0):
        self.n = n
        self.seed = seed
        enc_specs = scene_encoder_specs()
        trunk_specs = generator_trunk_specs(n)
        n_enc = param_count(enc_specs)
        n_trunk = param_count(trunk_specs)
        if params is None:
            params = np.zeros(n_enc + n_trunk)
        if params.shape != (n_enc + n_trunk,):
            raise ShapeError(f"generator params must have shape ({n_enc + n_trunk},)")
        self.params = params
        self.encoder = Network(enc_specs, self.params[:n_enc])
        self.trunk = Network(trunk_specs, self.params[n_enc:])
        self.n_enc = n_enc

    @classmethod
    def fresh(cls, n: int = 3, seed: int = 0) -> "Generator":
        gen = cls(n=n, params=None, seed=seed)
        rng = np.random.default_rng(seed)
        gen.encoder.init_params(rng)
        gen.trunk.init_params(rng)
        return gen

    def encode(self, voxels: Array, mode: str = MODE_DETERMINISTIC, want_cache: bool = False):
        """Scene code(s) for one (40,40,40) grid or a (B,40,40,40) batch."""
        v = np.asarray(voxels, dtype=float)
        single = v.ndim == 3
        if single:
            v = v[None]
        if v.shape[1:] != (VOXEL_SIDE, VOXEL_SIDE, VOXEL_SIDE):
            raise ShapeError(f"expected voxel grids of shape (40,40,40), got {v.shape[1:]}")
        out = self.encoder.forward(v, mode, want_cache=want_cache)
        if want_cache:
            z, cache = out
            return (z[0] if single else z), cache
        return out[0] if single else out

    def propose(
        self,
        z_rows: Array,
        q_curr: Array,
        q_targ: Array,
        mode: str,
        rng: Optional[np.random.Generator] = None,
        want_cache: bool = False,
        dropout_masks=None,
    ):
        """Next-configuration proposals for rows of (scene code, current, target)."""
        x = np.concatenate(
            [np.atleast_2d(z_rows), np.atleast_2d(q_curr), np.atleast_2d(q_targ)], axis=1
        )
        return self.trunk.forward(x, mode, rng=rng, want_cache=want_cache, dropout_masks=dropout_masks)


class Discriminator:
    """Manifold-distance regressor on (scene code, configuration) rows."""

    def __init__(self, n: int = 3, params: Optional[Array] = None, seed: int = 0):
        self.n = n
        self.seed = seed
        specs = discriminator_specs(n)
        self.net = Network(specs, params)
        self.params = self.net.params

    @classmethod
    def fresh(cls, n: int = 3, seed: int = 0) -> "Discriminator":
        disc = cls(n=n)
        disc.net.init_params(np.random.default_rng(seed))
        disc.seed = seed
        return disc

    def distance(self, z_rows: Array, q_rows: Array, want_cache: bool = False):
        x = np.concatenate([np.atleast_2d(z_rows), np.atleast_2d(q_rows)], axis=1)
        out = self.net.forward(x, MODE_DETERMINISTIC, want_cache=want_cache)
        if want_cache:
            y, cache = out
            return y[:, 0], cache
        return out[:, 0]

    def distance_and_input_grad(self, z_row: Array, q: Array):
        """Predicted distance and its gradient with respect to q."""
        x = np.concatenate([z_row, q])[None, :]
        y, cache = self.net.forward(x, MODE_DETERMINISTIC, want_cache=True)
        _, dx = self.net.backward(cache, np.ones((1, 1)))
        return float(y[0, 0]), dx[0, len(z_row):]
