"""Neural layer toolkit with explicit reverse-mode gradients.

Six layer kinds (linear, prelu, dropout, conv2d, maxpool2d, flatten)
compose into feed-forward networks whose parameters live in one flat
float64 vector.  Backward passes are written out by hand; no autograd.

Three forward modes: "train" caches activations and keeps dropout live;
"stochastic-infer" keeps dropout live without caching (the sampling
layer's source of randomness); "deterministic-infer" is a pure function.
Inference-mode matrix products run row by row so a sample's output is
bit-identical whether it is evaluated alone or inside a batch; training
uses batched BLAS products for throughput, where no such contract holds.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

Array = np.ndarray

MODE_TRAIN = "train"
MODE_STOCHASTIC = "stochastic-infer"
MODE_DETERMINISTIC = "deterministic-infer"
MODES = (MODE_TRAIN, MODE_STOCHASTIC, MODE_DETERMINISTIC)

PRELU_INIT = 0.25


class ShapeError(ValueError):
    pass


@dataclass
class LayerSpec:
    """One layer's kind and sizes; shapes of consecutive layers must compose."""

    kind: str
    in_features: int = 0
    out_features: int = 0
    in_channels: int = 0
    out_channels: int = 0
    kernel: int = 0
    stride: int = 1
    pool: int = 2
    p: float = 0.5

    def param_shapes(self) -> List[Tuple[int, ...]]:
        if self.kind == "linear":
            return [(self.in_features, self.out_features), (self.out_features,)]
        if self.kind == "conv2d":
            return [
                (self.out_channels, self.in_channels, self.kernel, self.kernel),
                (self.out_channels,),
            ]
        if self.kind == "prelu":
            return [(1,)]
        if self.kind in ("dropout", "maxpool2d", "flatten"):
            return []
        raise ShapeError(f"unknown layer kind {self.kind!r}")

    def to_dict(self) -> dict:
        d = {"kind": self.kind}
        defaults = LayerSpec(kind=self.kind)
        for name in (
            "in_features",
            "out_features",
            "in_channels",
            "out_channels",
            "kernel",
            "stride",
            "pool",
            "p",
        ):
            v = getattr(self, name)
            if v != getattr(defaults, name):
                d[name] = v
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "LayerSpec":
        return cls(**d)


def _matmul_rows(x: Array, W: Array) -> Array:
    """x @ W computed row by row; each row's bits are batch-size independent."""
    out = np.empty((x.shape[0], W.shape[1]))
    for i in range(x.shape[0]):
        out[i] = x[i] @ W
    return out


_IM2COL_CACHE: dict = {}


def _im2col_indices(C: int, H: int, W: int, k: int, s: int):
    key = (C, H, W, k, s)
    hit = _IM2COL_CACHE.get(key)
    if hit is not None:
        return hit
    oh = (H - k) // s + 1
    ow = (W - k) // s + 1
    c_idx = np.repeat(np.arange(C), k * k).reshape(-1, 1)
    i0 = np.tile(np.repeat(np.arange(k), k), C).reshape(-1, 1)
    j0 = np.tile(np.arange(k), k * C).reshape(-1, 1)
    i1 = s * np.repeat(np.arange(oh), ow).reshape(1, -1)
    j1 = s * np.tile(np.arange(ow), oh).reshape(1, -1)
    out = (c_idx, i0 + i1, j0 + j1, oh, ow)
    _IM2COL_CACHE[key] = out
    return out


class Network:
    """Feed-forward composition of LayerSpecs over a flat parameter vector.

    ``params`` may be a view into a larger buffer (models that train
    several networks end-to-end keep one flat vector for all of them).
    """

    def __init__(
        self,
        specs: Sequence[LayerSpec],
        params: Optional[Array] = None,
        rng: Optional[np.random.Generator] = None,
    ):
        self.specs = list(specs)
        self._offsets: List[List[Tuple[int, Tuple[int, ...]]]] = []
        total = 0
        for spec in self.specs:
            entries = []
            for shape in spec.param_shapes():
                entries.append((total, shape))
                total += int(np.prod(shape))
            self._offsets.append(entries)
        self.num_params = total
        if params is None:
            self.params = np.zeros(total)
            if rng is not None:
                self.init_params(rng)
        else:
            if params.shape != (total,):
                raise ShapeError(f"params must have shape ({total},)")
            self.params = params

    def layer_params(self, layer: int, params: Optional[Array] = None) -> List[Array]:
        buf = self.params if params is None else params
        return [buf[off : off + int(np.prod(shape))].reshape(shape) for off, shape in self._offsets[layer]]

    def init_params(self, rng: np.random.Generator) -> None:
        """Glorot-uniform weights, zero biases, 0.25 prelu slopes."""
        for li, spec in enumerate(self.specs):
            arrays = self.layer_params(li)
            if spec.kind == "linear":
                W, b = arrays
                bound = np.sqrt(6.0 / (spec.in_features + spec.out_features))
                W[...] = rng.uniform(-bound, bound, W.shape)
                b[...] = 0.0
            elif spec.kind == "conv2d":
                W, b = arrays
                fan_in = spec.in_channels * spec.kernel * spec.kernel
                fan_out = spec.out_channels * spec.kernel * spec.kernel
                bound = np.sqrt(6.0 / (fan_in + fan_out))
                W[...] = rng.uniform(-bound, bound, W.shape)
                b[...] = 0.0
            elif spec.kind == "prelu":
                arrays[0][...] = PRELU_INIT

    # --- forward ---------------------------------------------------------

    def forward(
        self,
        x: Array,
        mode: str,
        rng: Optional[np.random.Generator] = None,
        want_cache: bool = False,
        dropout_masks: Optional[List[Array]] = None,
    ):
        """Run the composition; returns y, or (y, cache) when want_cache.

        ``dropout_masks`` overrides mask sampling (one boolean array per
        dropout layer, in order); used by the batching-consistency checks.
        """
        if mode not in MODES:
            raise ShapeError(f"unknown mode {mode!r}")
        x = np.asarray(x, dtype=float)
        fast = mode == MODE_TRAIN
        cache: List[tuple] = []
        drop_i = 0
        for li, spec in enumerate(self.specs):
            if spec.kind == "linear":
                W, b = self.layer_params(li)
                if x.ndim != 2 or x.shape[1] != spec.in_features:
                    raise ShapeError(
                        f"layer {li} (linear) expects (B, {spec.in_features}), got {x.shape}"
                    )
                x_in = x
                x = (x @ W if fast else _matmul_rows(x, W)) + b
                if want_cache:
                    cache.append(("linear", x_in))
            elif spec.kind == "prelu":
                (a,) = self.layer_params(li)
                x_in = x
                x = np.where(x > 0, x, a[0] * x)
                if want_cache:
                    cache.append(("prelu", x_in))
            elif spec.kind == "dropout":
                if mode == MODE_DETERMINISTIC:
                    if want_cache:
                        cache.append(("dropout", None))
                else:
                    if dropout_masks is not None:
                        mask = dropout_masks[drop_i]
                    else:
                        if rng is None:
                            raise ShapeError("dropout needs an rng in train/stochastic modes")
                        mask = rng.random(x.shape) >= spec.p
                    drop_i += 1
                    x = x * mask / (1.0 - spec.p)
                    if want_cache:
                        cache.append(("dropout", (mask, spec.p)))
            elif spec.kind == "conv2d":
                x, c = self._conv_forward(li, spec, x, fast)
                if want_cache:
                    cache.append(("conv2d", c))
            elif spec.kind == "maxpool2d":
                x, c = self._pool_forward(spec, x)
                if want_cache:
                    cache.append(("maxpool2d", c))
            elif spec.kind == "flatten":
                if want_cache:
                    cache.append(("flatten", x.shape))
                x = x.reshape(x.shape[0], -1)
        if want_cache:
            return x, cache
        return x

    def _conv_forward(self, li: int, spec: LayerSpec, x: Array, fast: bool):
        W, b = self.layer_params(li)
        if x.ndim != 4 or x.shape[1] != spec.in_channels:
            raise ShapeError(f"conv2d expects (B, {spec.in_channels}, H, W), got {x.shape}")
        B, C, H, Wd = x.shape
        c_idx, i_idx, j_idx, oh, ow = _im2col_indices(C, H, Wd, spec.kernel, spec.stride)
        cols = x[:, c_idx, i_idx, j_idx]  # (B, C*k*k, oh*ow)
        Wmat = W.reshape(spec.out_channels, -1)
        if fast:
            out = np.matmul(Wmat, cols)
        else:
            out = np.empty((B, spec.out_channels, oh * ow))
            for bi in range(B):
                out[bi] = Wmat @ cols[bi]
        out += b[None, :, None]
        y = out.reshape(B, spec.out_channels, oh, ow)
        return y, (cols, x.shape, (c_idx, i_idx, j_idx))

    @staticmethod
    def _pool_forward(spec: LayerSpec, x: Array):
        p = spec.pool
        B, C, H, W = x.shape
        if H % p or W % p:
            raise ShapeError(f"maxpool2d needs H, W divisible by {p}, got {x.shape}")
        oh, ow = H // p, W // p
        windows = x.reshape(B, C, oh, p, ow, p).transpose(0, 1, 2, 4, 3, 5).reshape(B, C, oh, ow, p * p)
        arg = np.argmax(windows, axis=-1)
        y = np.take_along_axis(windows, arg[..., None], axis=-1)[..., 0]
        return y, (arg, x.shape)

    # --- backward --------------------------------------------------------

    def backward(
        self,
        cache: List[tuple],
        dy: Array,
        need_input_grad: bool = True,
        grads_out: Optional[Array] = None,
    ) -> Tuple[Array, Optional[Array]]:
        """Exact reverse-mode gradients.  Returns (flat parameter grads, input grad).

        With need_input_grad=False the first layer's input gradient is not
        materialized (the col2im scatter dominates conv backward cost and
        a network's input rarely needs a gradient during training).
        ``grads_out`` recycles a caller-owned gradient buffer.
        """
        if grads_out is None:
            grads = np.zeros(self.num_params)
        else:
            grads = grads_out
            grads[...] = 0.0
        dx = np.asarray(dy, dtype=float)
        ci = len(cache) - 1
        for li in range(len(self.specs) - 1, -1, -1):
            spec = self.specs[li]
            kind, payload = cache[ci]
            if kind != spec.kind:
                raise ShapeError("cache does not match network structure")
            ci -= 1
            last = li == 0 and not need_input_grad
            if spec.kind == "linear":
                x_in = payload
                W, _ = self.layer_params(li)
                gW, gb = self.layer_params(li, grads)
                gW += x_in.T @ dx
                gb += dx.sum(axis=0)
                if last:
                    return grads, None
                dx = dx @ W.T
            elif spec.kind == "prelu":
                x_in = payload
                (a,) = self.layer_params(li)
                (ga,) = self.layer_params(li, grads)
                ga += np.sum(dx * np.where(x_in > 0, 0.0, x_in))
                dx = dx * np.where(x_in > 0, 1.0, a[0])
            elif spec.kind == "dropout":
                if payload is not None:
                    mask, p = payload
                    dx = dx * mask / (1.0 - p)
            elif spec.kind == "conv2d":
                dx = self._conv_backward(li, spec, payload, dx, grads, skip_input_grad=last)
                if last:
                    return grads, None
            elif spec.kind == "maxpool2d":
                dx = self._pool_backward(spec, payload, dx)
            elif spec.kind == "flatten":
                dx = dx.reshape(payload)
        return grads, dx

    def _conv_backward(
        self, li: int, spec: LayerSpec, payload, dy: Array, grads: Array, skip_input_grad: bool = False
    ) -> Optional[Array]:
        cols, x_shape, (c_idx, i_idx, j_idx) = payload
        W, _ = self.layer_params(li)
        gW, gb = self.layer_params(li, grads)
        B = dy.shape[0]
        dy_mat = dy.reshape(B, spec.out_channels, -1)  # (B, out_c, L)
        gb += dy_mat.sum(axis=(0, 2))
        gW += np.einsum("bol,bkl->ok", dy_mat, cols).reshape(gW.shape)
        if skip_input_grad:
            return None
        Wmat = W.reshape(spec.out_channels, -1)
        dcols = np.matmul(Wmat.T, dy_mat)  # (B, C*k*k, L)
        dx = np.zeros(x_shape)
        np.add.at(dx, (slice(None), c_idx, i_idx, j_idx), dcols)
        return dx

    @staticmethod
    def _pool_backward(spec: LayerSpec, payload, dy: Array) -> Array:
        arg, x_shape = payload
        p = spec.pool
        B, C, H, W = x_shape
        oh, ow = H // p, W // p
        dwin = np.zeros((B, C, oh, ow, p * p))
        np.put_along_axis(dwin, arg[..., None], dy[..., None], axis=-1)
        return dwin.reshape(B, C, oh, ow, p, p).transpose(0, 1, 2, 4, 3, 5).reshape(x_shape)
