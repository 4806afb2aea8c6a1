"""The landmark network: shared-MLP encoder, heatmap head, presence head.

Reference backbone: a per-point shared MLP lifts each point to a feature
vector, a max-pool over all points (null included) gives one global
feature, the heatmap head concatenates that global feature back onto every
per-point feature and regresses one score per landmark and point, and the
presence head maps the global feature to per-tooth probabilities through
three fully connected layers with batchnorm, ReLU, and dropout.

Conditioning runs inside the graph so training backpropagates through it:
the presence vector is expanded to one weight per landmark row (a constant
0/1 matrix product), mesh rows multiply by p_t and the null row by 1-p_t.
Elementwise, these are the exact same IEEE products the standalone
`char_condition` computes, so the two routes agree bitwise.

Tensors flow as (batch, points, features); heatmaps live as (N, K) inside
the graph and are transposed to the (K, N) layout at the numpy boundary.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import RunningStats, Tensor, batchnorm, concat, dropout
from .dental import LANDMARKS_PER_TOOTH
from .errors import InputError
from .heatmaps import HeatmapSet, char_condition, decode_landmarks
from .pointcloud import PointCloud

__all__ = [
    "ArchDescriptor",
    "LinearBlock",
    "ModelParams",
    "ForwardOutput",
    "init_params",
    "count_parameters",
    "batch_forward",
    "encoder_forward",
    "heatmap_head_forward",
    "presence_head_forward",
    "charnet_forward",
    "predict_landmarks",
]


@dataclass(frozen=True)
class ArchDescriptor:
    """Layer widths and sizes that fix every parameter shape."""

    num_teeth: int = 16
    num_points: int = 10001
    encoder_widths: tuple[int, ...] = (64, 128, 256)
    decoder_widths: tuple[int, ...] = (256, 128)
    presence_widths: tuple[int, ...] = (256, 256)
    sigmoid_head: bool = True

    def __post_init__(self):
        widths = (*self.encoder_widths, *self.decoder_widths, *self.presence_widths)
        if not widths or any(int(w) <= 0 for w in widths):
            raise InputError(f"descriptor widths must be positive, got {widths}")
        if self.num_teeth < 1:
            raise InputError(f"descriptor num_teeth must be >= 1, got {self.num_teeth}")
        if self.num_points < 2:
            raise InputError(f"descriptor num_points must be >= 2, got {self.num_points}")
        object.__setattr__(self, "encoder_widths", tuple(int(w) for w in self.encoder_widths))
        object.__setattr__(self, "decoder_widths", tuple(int(w) for w in self.decoder_widths))
        object.__setattr__(self, "presence_widths", tuple(int(w) for w in self.presence_widths))

    @property
    def num_landmarks(self) -> int:
        return self.num_teeth * LANDMARKS_PER_TOOTH

    @property
    def global_dim(self) -> int:
        return self.encoder_widths[-1]

    @property
    def decoder_in(self) -> int:
        return self.encoder_widths[-1] + self.global_dim

    @classmethod
    def toy(cls) -> "ArchDescriptor":
        """Small instance for finite-difference checks: 32 mesh points plus
        the null, 2 teeth (10 landmarks), narrow layers."""
        return cls(
            num_teeth=2,
            num_points=33,
            encoder_widths=(8, 16),
            decoder_widths=(16, 8),
            presence_widths=(16, 16),
        )

    def to_dict(self) -> dict:
        return {
            "num_teeth": self.num_teeth,
            "num_points": self.num_points,
            "encoder_widths": list(self.encoder_widths),
            "decoder_widths": list(self.decoder_widths),
            "presence_widths": list(self.presence_widths),
            "sigmoid_head": self.sigmoid_head,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ArchDescriptor":
        try:
            return cls(
                num_teeth=int(data["num_teeth"]),
                num_points=int(data["num_points"]),
                encoder_widths=tuple(data["encoder_widths"]),
                decoder_widths=tuple(data["decoder_widths"]),
                presence_widths=tuple(data["presence_widths"]),
                sigmoid_head=bool(data["sigmoid_head"]),
            )
        except KeyError as exc:
            raise InputError(f"descriptor dict missing key {exc}") from exc


@dataclass
class LinearBlock:
    """One linear layer, optionally followed by batch normalization."""

    w: Tensor
    b: Tensor
    gamma: Tensor | None = None
    beta: Tensor | None = None
    running: RunningStats | None = None

    @property
    def has_bn(self) -> bool:
        return self.gamma is not None

    def tensors(self) -> list[Tensor]:
        out = [self.w, self.b]
        if self.has_bn:
            out += [self.gamma, self.beta]
        return out


@dataclass
class ModelParams:
    """All weights plus batchnorm state, in one fixed canonical block order."""

    descriptor: ArchDescriptor
    encoder: list[LinearBlock]
    decoder: list[LinearBlock]
    heatmap_out: LinearBlock
    presence: list[LinearBlock]
    presence_out: LinearBlock

    def blocks(self) -> list[LinearBlock]:
        """Canonical order; the checkpoint format serializes in this order."""
        return [*self.encoder, *self.decoder, self.heatmap_out, *self.presence, self.presence_out]

    def parameters(self) -> list[Tensor]:
        return [t for blk in self.blocks() for t in blk.tensors()]

    def running_stats(self) -> list[RunningStats]:
        return [blk.running for blk in self.blocks() if blk.has_bn]

    def copy(self) -> "ModelParams":
        def copy_block(blk: LinearBlock) -> LinearBlock:
            return LinearBlock(
                w=Tensor(blk.w.data.copy(), requires_grad=True),
                b=Tensor(blk.b.data.copy(), requires_grad=True),
                gamma=None if blk.gamma is None else Tensor(blk.gamma.data.copy(), requires_grad=True),
                beta=None if blk.beta is None else Tensor(blk.beta.data.copy(), requires_grad=True),
                running=None if blk.running is None else blk.running.copy(),
            )

        return ModelParams(
            descriptor=self.descriptor,
            encoder=[copy_block(b) for b in self.encoder],
            decoder=[copy_block(b) for b in self.decoder],
            heatmap_out=copy_block(self.heatmap_out),
            presence=[copy_block(b) for b in self.presence],
            presence_out=copy_block(self.presence_out),
        )


def _init_block(fan_in: int, fan_out: int, rng: np.random.Generator, bn: bool) -> LinearBlock:
    bound = 1.0 / np.sqrt(fan_in)
    w = Tensor(rng.uniform(-bound, bound, size=(fan_in, fan_out)), requires_grad=True)
    b = Tensor(rng.uniform(-bound, bound, size=fan_out), requires_grad=True)
    if not bn:
        return LinearBlock(w, b)
    return LinearBlock(
        w,
        b,
        gamma=Tensor(np.ones(fan_out), requires_grad=True),
        beta=Tensor(np.zeros(fan_out), requires_grad=True),
        running=RunningStats.initial(fan_out),
    )


def init_params(descriptor: ArchDescriptor, rng: np.random.Generator) -> ModelParams:
    """Fan-in-scaled uniform weights; batchnorm starts at identity."""
    enc, prev = [], 3
    for width in descriptor.encoder_widths:
        enc.append(_init_block(prev, width, rng, bn=True))
        prev = width
    dec, prev = [], descriptor.decoder_in
    for width in descriptor.decoder_widths:
        dec.append(_init_block(prev, width, rng, bn=True))
        prev = width
    heatmap_out = _init_block(prev, descriptor.num_landmarks, rng, bn=False)
    cls, prev = [], descriptor.global_dim
    for width in descriptor.presence_widths:
        cls.append(_init_block(prev, width, rng, bn=True))
        prev = width
    presence_out = _init_block(prev, descriptor.num_teeth, rng, bn=False)
    return ModelParams(descriptor, enc, dec, heatmap_out, cls, presence_out)


def count_parameters(params: ModelParams) -> int:
    return sum(t.size for t in params.parameters())


def _expand_matrix(num_teeth: int) -> np.ndarray:
    """(T, K) 0/1 matrix replicating each tooth probability to its 5 rows."""
    return np.repeat(np.eye(num_teeth), LANDMARKS_PER_TOOTH, axis=1)


def _null_mask(n: int) -> np.ndarray:
    """(1, N, 1) mask: 1 on mesh rows, 0 on the null row (last)."""
    m = np.ones((1, n, 1))
    m[0, -1, 0] = 0.0
    return m


def _encode(x: Tensor, params: ModelParams, mode: str) -> tuple[Tensor, Tensor]:
    h = x
    for blk in params.encoder:
        h = batchnorm(h @ blk.w + blk.b, blk.gamma, blk.beta, blk.running, mode).relu()
    return h, h.max(axis=1)


def _heatmap_head(f: Tensor, g: Tensor, params: ModelParams, mode: str) -> Tensor:
    b, n = f.shape[0], f.shape[1]
    tiled = g.reshape(b, 1, g.shape[-1]) * Tensor(np.ones((1, n, 1)))
    h = concat([f, tiled], axis=-1)
    for blk in params.decoder:
        h = batchnorm(h @ blk.w + blk.b, blk.gamma, blk.beta, blk.running, mode).relu()
    scores = h @ params.heatmap_out.w + params.heatmap_out.b
    return scores.sigmoid() if params.descriptor.sigmoid_head else scores


def _presence_head(
    g: Tensor,
    params: ModelParams,
    mode: str,
    rng: np.random.Generator | None,
    dropout_rate: float,
) -> Tensor:
    h = g
    for blk in params.presence:
        h = batchnorm(h @ blk.w + blk.b, blk.gamma, blk.beta, blk.running, mode).relu()
        h = dropout(h, dropout_rate, mode, rng)
    return (h @ params.presence_out.w + params.presence_out.b).sigmoid()


def _condition(raw: Tensor, p: Tensor, num_teeth: int) -> Tensor:
    """In-graph conditioning on (B, N, K) heatmaps.

    weight = mask * p_k + (1 - mask) * (1 - p_k) with mask zero only on the
    null row; the 0/1 constants make every product identical to the ones
    `char_condition` computes, keeping the two routes bitwise equal.
    """
    b, n = raw.shape[0], raw.shape[1]
    per_row = (p @ Tensor(_expand_matrix(num_teeth))).reshape(b, 1, p.shape[-1] * LANDMARKS_PER_TOOTH)
    mask = _null_mask(n)
    weight = Tensor(mask) * per_row + Tensor(1.0 - mask) * (1.0 - per_row)
    return raw * weight


def batch_forward(
    points: np.ndarray,
    params: ModelParams,
    mode: str,
    rng: np.random.Generator | None = None,
    dropout_rate: float = 0.5,
    condition: bool = True,
) -> tuple[Tensor, Tensor, Tensor]:
    """Forward a (B, N, 3) batch; every sample's null point must be last.

    Returns (raw heatmaps (B, N, K), presence (B, T), conditioned (B, N, K));
    with condition=False the third element is the raw tensor itself.
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 3 or points.shape[-1] != 3:
        raise InputError(f"batch_forward: points must be (B, N, 3), got {points.shape}")
    x = Tensor(points)
    f, g = _encode(x, params, mode)
    raw = _heatmap_head(f, g, params, mode)
    p = _presence_head(g, params, mode, rng, dropout_rate)
    cond = _condition(raw, p, params.descriptor.num_teeth) if condition else raw
    return raw, p, cond


@dataclass(frozen=True)
class ForwardOutput:
    """Single-sample outputs in (K, N) layout plus the presence vector."""

    raw_heatmaps: np.ndarray
    presence: np.ndarray
    conditioned: np.ndarray

    def __post_init__(self):
        if np.asarray(self.presence).min() < 0.0 or np.asarray(self.presence).max() > 1.0:
            raise InputError("ForwardOutput: presence probabilities outside [0, 1]")
        expected = char_condition(HeatmapSet(self.raw_heatmaps, "raw-prediction"), self.presence)
        if not np.array_equal(self.conditioned, expected.values):
            raise InputError("ForwardOutput: conditioned heatmaps do not match char_condition")


def encoder_forward(pc: PointCloud, params: ModelParams, mode: str = "infer") -> tuple[np.ndarray, np.ndarray]:
    """Per-point features (N, d_p) and the pooled global feature (d_g,)."""
    if not pc.has_null:
        raise InputError("encoder_forward: cloud must carry a null point")
    f, g = _encode(Tensor(pc.points[None]), params, mode)
    return f.data[0], g.data[0]


def heatmap_head_forward(f: np.ndarray, g: np.ndarray, params: ModelParams, mode: str = "infer") -> np.ndarray:
    """Raw heatmaps in (K, N) layout from single-sample encoder outputs."""
    raw = _heatmap_head(Tensor(f[None]), Tensor(g[None]), params, mode)
    return raw.data[0].T.copy()


def presence_head_forward(
    g: np.ndarray,
    params: ModelParams,
    mode: str = "infer",
    rng: np.random.Generator | None = None,
    dropout_rate: float = 0.5,
) -> np.ndarray:
    """Per-tooth presence probabilities from the global feature."""
    p = _presence_head(Tensor(g[None]), params, mode, rng, dropout_rate)
    return p.data[0].copy()


def charnet_forward(
    pc: PointCloud,
    params: ModelParams,
    mode: str = "infer",
    rng: np.random.Generator | None = None,
    dropout_rate: float = 0.5,
) -> ForwardOutput:
    """Full single-sample pipeline: encode, both heads, conditioning."""
    if not pc.has_null:
        raise InputError("charnet_forward: cloud must carry a null point")
    raw, p, cond = batch_forward(pc.points[None], params, mode, rng, dropout_rate)
    return ForwardOutput(
        raw_heatmaps=raw.data[0].T.copy(),
        presence=p.data[0].copy(),
        conditioned=cond.data[0].T.copy(),
    )


def predict_landmarks(
    pc: PointCloud, params: ModelParams, condition: bool = True
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Decode one preprocessed cloud into landmark positions.

    Returns (K, 3) positions, K in-mesh flags, and the T presence
    probabilities. With condition=False the raw heatmaps are decoded
    directly, which is how unconditioned baselines predict.
    """
    out = charnet_forward(pc, params)
    if condition:
        h = HeatmapSet(out.conditioned, "conditioned")
    else:
        h = HeatmapSet(out.raw_heatmaps, "raw-prediction")
    positions, in_mesh = decode_landmarks(h, pc)
    return positions, in_mesh, out.presence
