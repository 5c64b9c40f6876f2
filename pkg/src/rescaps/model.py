"""Res2Net-augmented capsule network with intermediate capsules and dynamic routing."""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from typing import Callable

import numpy as np

from . import tensor as T
from .tensor import ConvSpec, Tensor

Activation = Callable[[Tensor], Tensor]

CLASSES = ("benign", "malignant")


@dataclass(frozen=True)
class Res2NetConfig:
    channels: int
    scale: int = 4

    def __post_init__(self):
        if self.channels < 1 or self.scale < 1:
            raise ValueError("Res2Net channels and scale must be positive")
        if self.channels % self.scale:
            raise ValueError(
                f"Res2Net channels {self.channels} not divisible by scale {self.scale}"
            )

    @property
    def width(self) -> int:
        return self.channels // self.scale


@dataclass(frozen=True)
class ArchitectureConfig:
    input_height: int = 128
    input_width: int = 128
    conv_channels: tuple[int, ...] = (32, 64, 128, 128)
    conv_strides: tuple[int, ...] = (1, 2, 2, 2)
    res2net_scale: int = 4
    primary_channels: int = 32
    primary_dim: int = 8
    intermediate_caps: int = 32
    intermediate_dim: int = 12
    class_caps: int = 2
    class_dim: int = 16
    routing_iterations: int = 3

    def __post_init__(self):
        object.__setattr__(self, "conv_channels", tuple(int(c) for c in self.conv_channels))
        object.__setattr__(self, "conv_strides", tuple(int(s) for s in self.conv_strides))
        if len(self.conv_channels) != 4 or len(self.conv_strides) != 4:
            raise ValueError("exactly 4 convolutional stages are required")
        if any(c < 1 for c in self.conv_channels) or any(s < 1 for s in self.conv_strides):
            raise ValueError("conv channels and strides must be positive")
        for c in self.conv_channels:
            Res2NetConfig(c, self.res2net_scale)
        if self.class_caps != len(CLASSES):
            raise ValueError(f"class_caps must equal the number of classes ({len(CLASSES)})")
        if self.routing_iterations < 1:
            raise ValueError("routing_iterations must be >= 1")
        if self.primary_channels % self.primary_dim:
            raise ValueError(
                f"primary_channels {self.primary_channels} not divisible by "
                f"primary_dim {self.primary_dim}"
            )
        h4, w4 = self.feature_size
        if h4 < 1 or w4 < 1:
            raise ValueError(
                f"input {self.input_height}x{self.input_width} too small for strides "
                f"{self.conv_strides}"
            )
        if self.intermediate_caps >= self.num_primary:
            raise ValueError(
                f"intermediate_caps ({self.intermediate_caps}) must be fewer than the "
                f"{self.num_primary} primary capsules"
            )

    @property
    def feature_size(self) -> tuple[int, int]:
        h, w = self.input_height, self.input_width
        for s in self.conv_strides:
            # kernel 3, padding 1
            h = (h - 1) // s + 1
            w = (w - 1) // s + 1
        return h, w

    @property
    def num_primary(self) -> int:
        h4, w4 = self.feature_size
        return self.primary_channels * h4 * w4 // self.primary_dim

    @property
    def num_routed(self) -> int:
        return self.num_primary + self.intermediate_caps

    def to_items(self) -> list[tuple[str, str]]:
        out = []
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, tuple):
                value = ", ".join(str(v) for v in value)
            out.append((f.name, str(value)))
        return out

    @classmethod
    def from_items(cls, items: dict[str, str]) -> "ArchitectureConfig":
        kwargs = {}
        names = {f.name for f in fields(cls)}
        for key, raw in items.items():
            if key not in names:
                raise KeyError(f"unknown architecture key {key!r}")
            if key in ("conv_channels", "conv_strides"):
                kwargs[key] = tuple(int(v) for v in raw.split(","))
            else:
                kwargs[key] = int(raw)
        return cls(**kwargs)


@dataclass(frozen=True)
class MarginLossConfig:
    m_plus: float = 0.9
    m_minus: float = 0.1
    lambda_down: float = 0.5

    def __post_init__(self):
        if not 0 < self.m_minus < self.m_plus < 1:
            raise ValueError("margins must satisfy 0 < m_minus < m_plus < 1")
        if self.lambda_down <= 0:
            raise ValueError("lambda_down must be positive")


@dataclass
class RoutingState:
    predictions: np.ndarray
    logits: np.ndarray
    couplings: np.ndarray
    weighted_sums: np.ndarray
    outputs: np.ndarray
    coupling_history: list[np.ndarray] = field(default_factory=list)
    logit_history: list[np.ndarray] = field(default_factory=list)


# ---------------------------------------------------------------------------
# parameters


def _res2net_shapes(prefix: str, cfg: Res2NetConfig) -> list[tuple[str, tuple[int, ...]]]:
    n, w = cfg.channels, cfg.width
    shapes = [(f"{prefix}.in.weight", (n, n, 1, 1)), (f"{prefix}.in.bias", (n,))]
    for g in range(1, cfg.scale):
        shapes += [(f"{prefix}.group{g}.weight", (w, w, 3, 3)), (f"{prefix}.group{g}.bias", (w,))]
    shapes += [(f"{prefix}.out.weight", (n, n, 1, 1)), (f"{prefix}.out.bias", (n,))]
    return shapes


def parameter_shapes(cfg: ArchitectureConfig) -> list[tuple[str, tuple[int, ...]]]:
    """Ordered (name, shape) list of every learnable tensor."""
    shapes = []
    c_in = 3
    for i, c in enumerate(cfg.conv_channels):
        shapes += [(f"stage{i}.conv.weight", (c, c_in, 3, 3)), (f"stage{i}.conv.bias", (c,))]
        shapes += _res2net_shapes(f"stage{i}.res2net", Res2NetConfig(c, cfg.res2net_scale))
        c_in = c
    shapes += [
        ("primary.weight", (cfg.primary_channels, c_in, 3, 3)),
        ("primary.bias", (cfg.primary_channels,)),
        ("intermediate.weight",
         (cfg.intermediate_caps, cfg.intermediate_dim, cfg.num_primary, cfg.primary_dim)),
        ("intermediate.bias", (cfg.intermediate_caps, cfg.intermediate_dim)),
        ("routing.primary.weight",
         (cfg.num_primary, cfg.class_caps, cfg.class_dim, cfg.primary_dim)),
        ("routing.intermediate.weight",
         (cfg.intermediate_caps, cfg.class_caps, cfg.class_dim, cfg.intermediate_dim)),
    ]
    return shapes


def _fan_in(name: str, shape: tuple[int, ...]) -> int:
    if name.startswith("intermediate"):
        return shape[2] * shape[3]
    if name.startswith("routing"):
        return shape[3]
    return int(np.prod(shape[1:]))


def init_params(cfg: ArchitectureConfig, seed: int = 0) -> dict[str, Tensor]:
    """Fan-in scaled uniform weights, zero biases."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in parameter_shapes(cfg):
        if name.endswith("bias"):
            data = np.zeros(shape)
        else:
            fan_in = _fan_in(name, shape)
            # He-uniform for ReLU convolutions, unit-variance-preserving for capsule maps
            gain = 6.0 if name.startswith("stage") else 3.0
            bound = np.sqrt(gain / fan_in)
            data = rng.uniform(-bound, bound, size=shape)
        params[name] = Tensor(data, requires_grad=True, name=name)
    return params


def count_parameters(params: dict[str, Tensor]) -> int:
    return int(sum(p.data.size for p in params.values()))


# ---------------------------------------------------------------------------
# forward pieces


def squash(s: Tensor, axis: int = -1) -> Tensor:
    return T.squash(s, axis=axis)


def _conv(x: Tensor, params: dict[str, Tensor], prefix: str, stride: int = 1) -> Tensor:
    w = params[f"{prefix}.weight"]
    o, c, k, _ = w.shape
    spec = ConvSpec(c, o, k, stride=stride, padding=k // 2)
    return T.conv2d(x, w, params[f"{prefix}.bias"], spec)


def res2net_block_forward(x: Tensor, cfg: Res2NetConfig, params: dict[str, Tensor],
                          prefix: str = "res2net", activation: Activation = T.relu) -> Tensor:
    """1x1 conv, hierarchical 3x3 group convs (first group passed through), concat, 1x1 fuse."""
    if x.ndim != 4 or x.shape[1] != cfg.channels:
        raise T.ShapeError(f"res2net: expected {cfg.channels} input channels, got shape {x.shape}")
    h = activation(_conv(x, params, f"{prefix}.in"))
    groups = T.split(h, cfg.scale, axis=1)
    ys = [groups[0]]
    for g in range(1, cfg.scale):
        inp = groups[g] if g == 1 else T.add(groups[g], ys[-1])
        ys.append(activation(_conv(inp, params, f"{prefix}.group{g}")))
    merged = ys[0] if cfg.scale == 1 else T.concat(ys, axis=1)
    return activation(_conv(merged, params, f"{prefix}.out"))


def conv_stack_forward(images: Tensor, cfg: ArchitectureConfig, params: dict[str, Tensor],
                       activation: Activation = T.relu) -> Tensor:
    """Four stages of strided 3x3 conv -> activation -> Res2Net block. No pooling."""
    if images.ndim != 4 or images.shape[1] != 3:
        raise T.ShapeError(f"expected an [N,3,H,W] image batch, got shape {images.shape}")
    if images.shape[2:] != (cfg.input_height, cfg.input_width):
        raise T.ShapeError(
            f"image size {images.shape[2]}x{images.shape[3]} does not match configured "
            f"{cfg.input_height}x{cfg.input_width}"
        )
    x = images
    for i, stride in enumerate(cfg.conv_strides):
        x = activation(_conv(x, params, f"stage{i}.conv", stride=stride))
        x = res2net_block_forward(x, Res2NetConfig(cfg.conv_channels[i], cfg.res2net_scale),
                                  params, prefix=f"stage{i}.res2net", activation=activation)
    return x


def primary_caps(features: Tensor, cfg: ArchitectureConfig, params: dict[str, Tensor]) -> Tensor:
    """Project features with a 3x3 conv and regroup channels into squashed capsules.

    Channels are grouped in blocks of ``primary_dim``; each block at each spatial
    location is one capsule.
    """
    proj = _conv(features, params, "primary")
    n, c, h, w = proj.shape
    d = cfg.primary_dim
    if c % d:
        raise T.ShapeError(f"primary capsules: {c} channels not divisible by dimension {d}")
    types = c // d
    x = T.reshape(proj, (n, types, d, h * w))
    x = T.transpose(x, (0, 1, 3, 2))
    x = T.reshape(x, (n, types * h * w, d))
    return T.squash(x, axis=-1)


def intermediate_caps(primary: Tensor, params: dict[str, Tensor]) -> Tensor:
    """Each intermediate capsule is squash(sum_i W_ji u_i + b_j) over all primary capsules."""
    w = params["intermediate.weight"]
    b = params["intermediate.bias"]
    if primary.ndim != 3 or primary.shape[1:] != w.shape[2:]:
        raise T.ShapeError(
            f"intermediate capsules: primary {primary.shape} incompatible with weights {w.shape}"
        )
    s = T.einsum("npd,mepd->nme", primary, w)
    s = T.add(s, _tile_batch(b, primary.shape[0]))
    return T.squash(s, axis=-1)


class _TileBatch(T.Function):
    def forward(self, b, n):
        return np.broadcast_to(b, (n,) + b.shape).copy()

    def backward(self, grad):
        return (grad.sum(axis=0),)


def _tile_batch(b: Tensor, n: int) -> Tensor:
    return _TileBatch.apply(b, n=n)


def predictions(in_caps: Tensor, weight: Tensor) -> Tensor:
    """u_hat[n, i, j] = W[i, j] @ u[n, i]."""
    return T.einsum("nid,ijcd->nijc", in_caps, weight)


def route(u_hat: Tensor, iterations: int) -> tuple[Tensor, RoutingState]:
    """Routing-by-agreement over predictions u_hat of shape [N, N_in, K, d_c]."""
    if iterations < 1:
        raise ValueError(f"routing iterations must be >= 1, got {iterations}")
    n, n_in, k, _ = u_hat.shape
    b = Tensor(np.zeros((n, n_in, k)))
    state = RoutingState(u_hat.data, b.data, b.data, None, None)
    for _ in range(iterations):
        c = T.softmax(b, axis=2)
        s = T.einsum("nij,nijc->njc", c, u_hat)
        v = T.squash(s, axis=-1)
        state.coupling_history.append(c.data)
        b = T.add(b, T.einsum("nijc,njc->nij", u_hat, v))
        state.logit_history.append(b.data)
        state.couplings, state.weighted_sums, state.outputs = c.data, s.data, v.data
    state.logits = b.data
    return v, state


def dynamic_routing(in_caps: Tensor, weight: Tensor, iterations: int) -> tuple[Tensor, RoutingState]:
    """Route capsules [N, N_in, d_in] through transforms [N_in, K, d_c, d_in]."""
    if in_caps.ndim != 3 or weight.ndim != 4 or in_caps.shape[1:] != (weight.shape[0],
                                                                      weight.shape[3]):
        raise T.ShapeError(
            f"routing: capsules {in_caps.shape} incompatible with transforms {weight.shape}"
        )
    if iterations < 1:
        raise ValueError(f"routing iterations must be >= 1, got {iterations}")
    return route(predictions(in_caps, weight), iterations)


def classify(v: Tensor) -> tuple[Tensor, np.ndarray]:
    """Class scores are capsule lengths; argmax picks the lowest index on ties."""
    scores = T.norm(v, axis=-1)
    return scores, np.argmax(scores.data, axis=1)


def one_hot(labels, k: int = 2) -> np.ndarray:
    labels = np.asarray(labels, dtype=int)
    out = np.zeros((labels.size, k))
    out[np.arange(labels.size), labels] = 1.0
    return out


def margin_loss(scores: Tensor, targets, cfg: MarginLossConfig = MarginLossConfig()) -> Tensor:
    """Batch mean of sum_k T_k relu(m+ - |v_k|)^2 + lambda (1 - T_k) relu(|v_k| - m-)^2."""
    t = np.asarray(targets, dtype=float)
    if t.shape != scores.shape:
        raise T.ShapeError(f"margin loss: targets {t.shape} vs scores {scores.shape}")
    if not (np.isin(t, (0.0, 1.0)).all() and (t.sum(axis=1) == 1).all()):
        raise ValueError("margin loss targets must be one-hot rows")
    n = scores.shape[0]
    pos = T.square(T.relu(T.sub(np.full(scores.shape, cfg.m_plus), scores)))
    neg = T.square(T.relu(T.sub(scores, np.full(scores.shape, cfg.m_minus))))
    per = T.add(T.mul(pos, t), T.mul(neg, cfg.lambda_down * (1.0 - t)))
    return T.mul(T.sum(per), 1.0 / max(n, 1))


@dataclass
class ForwardResult:
    scores: Tensor
    poses: Tensor
    predicted: np.ndarray
    routing: RoutingState


def forward(images: Tensor, cfg: ArchitectureConfig, params: dict[str, Tensor]) -> ForwardResult:
    feats = conv_stack_forward(images, cfg, params)
    prim = primary_caps(feats, cfg, params)
    inter = intermediate_caps(prim, params)
    u_hat = T.concat([
        predictions(prim, params["routing.primary.weight"]),
        predictions(inter, params["routing.intermediate.weight"]),
    ], axis=1)
    v, state = route(u_hat, cfg.routing_iterations)
    scores, predicted = classify(v)
    return ForwardResult(scores, v, predicted, state)


def as_batch(images: np.ndarray) -> Tensor:
    """[N, H, W, 3] float images -> [N, 3, H, W] tensor."""
    arr = np.asarray(images, dtype=float)
    if arr.ndim == 3:
        arr = arr[None]
    return Tensor(np.ascontiguousarray(arr.transpose(0, 3, 1, 2)))
