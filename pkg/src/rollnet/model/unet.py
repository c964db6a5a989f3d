"""Residual U-net mapping a CQT segment to pianoroll logits."""

from __future__ import annotations

import itertools
from dataclasses import asdict, dataclass, field

import numpy as np

from . import layers as L

_generation = itertools.count(1)


class ModelConfigError(ValueError):
    pass


class StaleCacheError(RuntimeError):
    """backward() called with a cache that does not belong to these params."""


@dataclass(frozen=True)
class ModelConfig:
    n_instruments: int
    widths: tuple[int, ...] = (16, 32, 64, 128)
    n_freq: int = 88
    n_frames: int = 320
    kernel: int = 3
    slope: float = 0.2
    bn_eps: float = 1e-5
    bn_momentum: float = 0.1
    head_bias: float = -2.0
    dtype: str = "float32"

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        if self.n_instruments < 1:
            raise ModelConfigError("need at least one instrument")
        if not self.widths or min(self.widths) < 1:
            raise ModelConfigError("channel widths must be positive")
        if self.n_frames % self.factor:
            raise ModelConfigError(f"segment length {self.n_frames} not divisible by {self.factor}")
        if self.kernel % 2 != 1:
            raise ModelConfigError("kernel size must be odd")
        if self.dtype not in ("float32", "float64"):
            raise ModelConfigError(f"unsupported dtype {self.dtype}")

    @property
    def levels(self) -> int:
        return len(self.widths)

    @property
    def factor(self) -> int:
        return 2 ** self.levels

    @property
    def padded_freq(self) -> int:
        return -(-self.n_freq // self.factor) * self.factor

    def to_dict(self) -> dict:
        d = asdict(self)
        d["widths"] = list(self.widths)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**{**d, "widths": tuple(d["widths"])})

    def block_shapes(self):
        """(name, in_channels, out_channels, stride) for every residual block, in forward order."""
        blocks = []
        cin = 1
        for k, w in enumerate(self.widths):
            blocks.append((f"enc{k}", cin, w, 2))
            cin = w
        for k in reversed(range(self.levels)):
            skip = self.widths[k - 1] if k > 0 else 1
            out = self.widths[max(k - 1, 0)]
            blocks.append((f"dec{k}", cin + skip, out, 1))
            cin = out
        return blocks

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        k = self.kernel
        shapes: dict[str, tuple[int, ...]] = {}
        for name, cin, cout, stride in self.block_shapes():
            shapes[f"{name}.conv1.w"] = (k, k, cin, cout)
            for bn in ("bn1", "bn2"):
                for part in ("gamma", "beta", "running_mean", "running_var"):
                    shapes[f"{name}.{bn}.{part}"] = (cout,)
                if bn == "bn1":
                    shapes[f"{name}.conv2.w"] = (k, k, cout, cout)
            shapes[f"{name}.conv3.w"] = (k, k, cout, cout)
            shapes[f"{name}.conv3.b"] = (cout,)
            if cin != cout or stride != 1:
                shapes[f"{name}.skip.w"] = (1, 1, cin, cout)
        last = self.block_shapes()[-1][2]
        shapes["head.w"] = (1, 1, last, self.n_instruments)
        shapes["head.b"] = (self.n_instruments,)
        return shapes


def is_learnable(name: str) -> bool:
    return ".running_" not in name


class ModelParams:
    """Named weight tensors. ``generation`` changes whenever weights are replaced."""

    def __init__(self, config: ModelConfig, tensors: dict[str, np.ndarray]):
        expected = config.param_shapes()
        if list(tensors) != list(expected):
            missing = set(expected) - set(tensors)
            extra = set(tensors) - set(expected)
            raise ModelConfigError(f"parameter names differ from config (missing {sorted(missing)}, extra {sorted(extra)})")
        for name, shape in expected.items():
            if tuple(tensors[name].shape) != shape:
                raise ModelConfigError(f"{name}: shape {tensors[name].shape} != expected {shape}")
        self.config = config
        self.tensors = {k: np.asarray(v, dtype=config.dtype) for k, v in tensors.items()}
        self.generation = next(_generation)

    def __getitem__(self, name):
        return self.tensors[name]

    def __iter__(self):
        return iter(self.tensors)

    def items(self):
        return self.tensors.items()

    def learnable(self):
        return [k for k in self.tensors if is_learnable(k)]

    def copy(self) -> "ModelParams":
        return ModelParams(self.config, {k: v.copy() for k, v in self.tensors.items()})

    def astype(self, dtype: str) -> "ModelParams":
        cfg = ModelConfig.from_dict({**self.config.to_dict(), "dtype": dtype})
        return ModelParams(cfg, {k: v.astype(dtype) for k, v in self.tensors.items()})

    def n_learnable(self) -> int:
        return sum(self.tensors[k].size for k in self.learnable())


def init_params(config: ModelConfig, seed: int = 0) -> ModelParams:
    """Seeded initialization.

    Convolutions feeding BN + leaky ReLU are He-normal; the linear-output
    shortcut and head convolutions are LeCun-normal. The last convolution of
    each residual branch starts at zero, so every block begins as its shortcut
    and activation variance does not compound with depth. BN scale starts at 1
    and the head bias is negative (rolls are sparse).
    """
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape in config.param_shapes().items():
        if name.endswith(".w"):
            fan_in = shape[0] * shape[1] * shape[2]
            gain = 2.0 if name.endswith(("conv1.w", "conv2.w")) else 1.0
            t = rng.standard_normal(shape) * np.sqrt(gain / fan_in)
            if name.endswith("conv3.w"):
                t = np.zeros(shape)
        elif name.endswith("gamma") or name.endswith("running_var"):
            t = np.ones(shape)
        elif name == "head.b":
            t = np.full(shape, config.head_bias)
        else:
            t = np.zeros(shape)
        tensors[name] = t
    return ModelParams(config, tensors)


@dataclass
class ForwardCache:
    params: ModelParams
    generation: int
    blocks: dict = field(default_factory=dict)
    head: tuple | None = None
    input_shape: tuple = ()


def _block_forward(p, cfg, name, x, stride, train):
    g = lambda s: p[f"{name}.{s}"]  # noqa: E731
    bn = lambda h, b: L.batchnorm_forward(  # noqa: E731
        h, g(f"{b}.gamma"), g(f"{b}.beta"), g(f"{b}.running_mean"), g(f"{b}.running_var"),
        train, cfg.bn_eps, cfg.bn_momentum,
    )
    h, c1 = L.conv_forward(x, g("conv1.w"), None, stride)
    h, n1 = bn(h, "bn1")
    h, a1 = L.leaky_relu_forward(h, cfg.slope)
    h, c2 = L.conv_forward(h, g("conv2.w"), None, 1)
    h, n2 = bn(h, "bn2")
    h, a2 = L.leaky_relu_forward(h, cfg.slope)
    h, c3 = L.conv_forward(h, g("conv3.w"), g("conv3.b"), 1)
    if f"{name}.skip.w" in p.tensors:
        s, cs = L.conv_forward(x, g("skip.w"), None, stride)
    else:
        s, cs = x, None
    cache = (c1, n1, a1, c2, n2, a2, c3, cs) if train else None
    return h + s, cache


def _block_backward(name, dout, cache, grads):
    c1, n1, a1, c2, n2, a2, c3, cs = cache
    dh, grads[f"{name}.conv3.w"], grads[f"{name}.conv3.b"] = L.conv_backward(dout, c3)
    dh = L.leaky_relu_backward(dh, a2)
    dh, grads[f"{name}.bn2.gamma"], grads[f"{name}.bn2.beta"] = L.batchnorm_backward(dh, n2)
    dh, grads[f"{name}.conv2.w"], _ = L.conv_backward(dh, c2)
    dh = L.leaky_relu_backward(dh, a1)
    dh, grads[f"{name}.bn1.gamma"], grads[f"{name}.bn1.beta"] = L.batchnorm_backward(dh, n1)
    dx, grads[f"{name}.conv1.w"], _ = L.conv_backward(dh, c1)
    if cs is not None:
        dxs, grads[f"{name}.skip.w"], _ = L.conv_backward(dout, cs)
        dx = dx + dxs
    else:
        dx = dx + dout
    return dx


def unet_forward(x, params: ModelParams, train: bool = False):
    """Logits for a batch of segments.

    x: (N, n_freq, n_frames) or (n_freq, n_frames). Returns logits of shape
    (N, n_freq, n_frames, M) (batch axis dropped if the input had none) and,
    in train mode, a cache for :func:`backward`. Train mode normalizes with
    batch statistics and updates the running estimates in ``params``.
    """
    cfg = params.config
    x = np.asarray(x)
    squeeze = x.ndim == 2
    if squeeze:
        x = x[None]
    if x.ndim != 3 or x.shape[1:] != (cfg.n_freq, cfg.n_frames):
        raise ModelConfigError(f"input shape {x.shape} does not match ({cfg.n_freq}, {cfg.n_frames})")
    n = x.shape[0]
    x0 = np.zeros((n, cfg.padded_freq, cfg.n_frames, 1), dtype=cfg.dtype)
    x0[:, : cfg.n_freq, :, 0] = x

    cache = ForwardCache(params, params.generation, input_shape=x.shape) if train else None
    skips = [x0]
    h = x0
    blocks = cfg.block_shapes()
    for name, _, _, stride in blocks[: cfg.levels]:
        h, bc = _block_forward(params, cfg, name, h, stride, train)
        skips.append(h)
        if train:
            cache.blocks[name] = (bc, None)
    skips.pop()  # deepest activation feeds the decoder directly
    for name, _, _, stride in blocks[cfg.levels:]:
        skip = skips.pop()
        cat = np.concatenate([L.upsample_forward(h), skip], axis=3)
        h, bc = _block_forward(params, cfg, name, cat, stride, train)
        if train:
            cache.blocks[name] = (bc, skip.shape[3])
    out, hc = L.conv_forward(h, params["head.w"], params["head.b"], 1)
    logits = out[:, : cfg.n_freq]
    if train:
        cache.head = hc
    if squeeze:
        logits = logits[0]
    return (logits, cache) if train else logits


def backward(cache: ForwardCache, dlogits, params: ModelParams) -> dict[str, np.ndarray]:
    """Gradients of the loss w.r.t. every learnable tensor, given dL/dlogits."""
    if cache is None or cache.head is None:
        raise StaleCacheError("no train-mode forward cache")
    if cache.params is not params or cache.generation != params.generation:
        raise StaleCacheError("cache was produced by different parameters")
    cfg = params.config
    d = np.asarray(dlogits, dtype=cfg.dtype)
    if d.ndim == 3:
        d = d[None]
    n = cache.input_shape[0]
    if d.shape != (n, cfg.n_freq, cfg.n_frames, cfg.n_instruments):
        raise ValueError(f"dlogits shape {d.shape} does not match the forward pass")
    dpad = np.zeros((n, cfg.padded_freq, cfg.n_frames, cfg.n_instruments), dtype=cfg.dtype)
    dpad[:, : cfg.n_freq] = d

    grads: dict[str, np.ndarray] = {}
    dh, grads["head.w"], grads["head.b"] = L.conv_backward(dpad, cache.head)
    blocks = cfg.block_shapes()
    dskips = []
    for name, _, _, _ in reversed(blocks[cfg.levels:]):
        bc, n_skip = cache.blocks[name]
        dcat = _block_backward(name, dh, bc, grads)
        dskips.append(dcat[..., -n_skip:])
        dh = L.upsample_backward(dcat[..., :-n_skip])
    # dskips now runs input-level first; encoder k's output also received dskips[k + 1]
    for k in reversed(range(cfg.levels)):
        name = blocks[k][0]
        if k < cfg.levels - 1:
            dh = dh + dskips[k + 1]
        bc, _ = cache.blocks[name]
        dh = _block_backward(name, dh, bc, grads)
    return {k: grads[k] for k in params.learnable()}
