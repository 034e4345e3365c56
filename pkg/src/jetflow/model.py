"""The full flow: layer schedule, change-of-variables likelihood, sampling.

A model is an ordered stack of coupling layers following a
channel:spatial schedule — `channel_ratio` channel couplings, then one
spatial coupling, repeated until `num_couplings` layers exist.  Under
the ALTERNATE policy successive spatial layers cycle row -> column ->
checkerboard.  Each layer owns its backbone and its frozen split plan;
channel-plan permutations derive from (model seed, layer index) and are
fixed before training.

The likelihood is exact: the latent is unit Gaussian per dimension and
the total log-determinant is the sum of the per-layer ones.  Reported
numbers are bits per dimension including all constant terms plus the
log2(256) correction for the [0,256) -> [-0.5, 0.5) input rescale.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Union

import numpy as np

from . import numerics as nm
from .coupling import (
    CouplingLayer,
    CouplingMode,
    backbone_config,
    couple_forward,
    couple_inverse,
    spatial_backbone_config,
)
from .errors import ConfigError
from .numerics import Parameter, Tensor
from .patches import PatchGeometry, unpatchify
from .seeding import derive_seed, stream
from .splitting import SplitKind, build_channel_plan, build_spatial_plan
from .vit import init_vit

# Sentinel for `channel_ratio`: every coupling is channel-wise.
ALL_CHANNEL = "all"

# Bits per dimension accounted to the 1/256 input rescale.
RESCALE_BPD = 8.0

_LN2 = math.log(2.0)
_LN_2PI = math.log(2.0 * math.pi)


class SpatialPolicy(Enum):
    ROW_ONLY = "row"
    COLUMN_ONLY = "column"
    CHECKERBOARD_ONLY = "checkerboard"
    ALTERNATE = "alternate"


_POLICY_CYCLE = {
    SpatialPolicy.ROW_ONLY: (SplitKind.ROW,),
    SpatialPolicy.COLUMN_ONLY: (SplitKind.COLUMN,),
    SpatialPolicy.CHECKERBOARD_ONLY: (SplitKind.CHECKERBOARD,),
    SpatialPolicy.ALTERNATE: (SplitKind.ROW, SplitKind.COLUMN, SplitKind.CHECKERBOARD),
}


@dataclass(frozen=True)
class BackboneSpec:
    """Per-layer transformer shape shared by every coupling."""

    depth: int = 2
    width: int = 64
    heads: int = 4
    mlp_ratio: int = 4


@dataclass(frozen=True)
class JetConfig:
    geom: PatchGeometry
    num_couplings: int = 8
    channel_ratio: Union[int, str] = 2
    spatial_policy: SpatialPolicy = SpatialPolicy.ALTERNATE
    backbone: BackboneSpec = field(default_factory=BackboneSpec)
    mode: CouplingMode = CouplingMode.PAIRING
    seed: int = 0
    dtype: str = "float32"

    def __post_init__(self):
        if self.num_couplings < 1:
            raise ConfigError("num_couplings must be >= 1")
        if self.channel_ratio != ALL_CHANNEL:
            if not isinstance(self.channel_ratio, int) or self.channel_ratio < 0:
                raise ConfigError(
                    f"channel_ratio must be a non-negative integer or {ALL_CHANNEL!r}, "
                    f"got {self.channel_ratio!r}"
                )
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32 or float64, got {self.dtype!r}")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")

    @property
    def np_dtype(self):
        return np.dtype(self.dtype)


@dataclass
class JetModel:
    config: JetConfig
    layers: list[CouplingLayer]

    @property
    def geom(self) -> PatchGeometry:
        return self.config.geom

    @property
    def dimensions(self) -> int:
        return self.config.geom.dimensions

    def parameters(self) -> list[Parameter]:
        out = []
        for layer in self.layers:
            out.extend(layer.parameters())
        return out

    def parameter_registry(self) -> dict[str, Parameter]:
        registry: dict[str, Parameter] = {}
        for p in self.parameters():
            if p.name in registry:
                raise ConfigError(f"duplicate parameter name {p.name}")
            registry[p.name] = p
        return registry

    def zero_grads(self) -> None:
        for p in self.parameters():
            p.zero_grad()


@dataclass
class FlowResult:
    latent: Tensor
    log_det: Tensor  # scalar, nats


def schedule(num_couplings: int, channel_ratio, policy: SpatialPolicy) -> list[SplitKind]:
    """Kind sequence: `channel_ratio` channel layers then one spatial, repeated.

    A trailing partial group is emitted channel-first and truncated.  With
    channel_ratio == 0 every layer is spatial; with ALL_CHANNEL every
    layer is channel-wise.
    """
    if channel_ratio == ALL_CHANNEL:
        return [SplitKind.CHANNEL] * num_couplings
    cycle = _POLICY_CYCLE[policy]
    kinds: list[SplitKind] = []
    spatial_count = 0
    while len(kinds) < num_couplings:
        group = [SplitKind.CHANNEL] * channel_ratio
        group.append(cycle[spatial_count % len(cycle)])
        spatial_count += 1
        kinds.extend(group[: num_couplings - len(kinds)])
    return kinds


def build_jet(cfg: JetConfig) -> JetModel:
    """Construct the layer stack; deterministic in cfg.seed."""
    geom = cfg.geom
    kinds = schedule(cfg.num_couplings, cfg.channel_ratio, cfg.spatial_policy)
    spec = cfg.backbone
    layers = []
    for i, kind in enumerate(kinds):
        if kind is SplitKind.CHANNEL:
            plan = build_channel_plan(geom.token_width, derive_seed(cfg.seed, i))
            net_cfg = backbone_config(plan, geom.tokens, spec.depth, spec.width,
                                      spec.heads, spec.mlp_ratio)
        else:
            plan = build_spatial_plan(geom.grid_h, geom.grid_w, kind)
            net_cfg = spatial_backbone_config(plan, geom.token_width, cfg.mode,
                                              spec.depth, spec.width, spec.heads,
                                              spec.mlp_ratio)
        net = init_vit(net_cfg, derive_seed(cfg.seed, i, 1), dtype=cfg.np_dtype,
                       prefix=f"coupling{i:03d}")
        layers.append(CouplingLayer(plan=plan, net=net, mode=cfg.mode, index=i))
    return JetModel(config=cfg, layers=layers)


def flow_forward(model: JetModel, x: Tensor) -> FlowResult:
    """Compose every coupling; the log-determinants add."""
    log_det = Tensor(np.zeros((), dtype=x.dtype))
    for layer in model.layers:
        result = couple_forward(layer, x)
        x = result.y
        log_det = log_det + result.log_det
    return FlowResult(latent=x, log_det=log_det)


def flow_inverse(model: JetModel, z: Tensor) -> Tensor:
    """Invert the stack in reverse order."""
    for layer in reversed(model.layers):
        z = couple_inverse(layer, z)
    return z


def nll_bpd(model: JetModel, x_dequantized: Tensor, rescale_bpd: float = RESCALE_BPD) -> Tensor:
    """Negative log-likelihood of one token sequence, in bits per dimension.

    Unit-Gaussian latent term plus the change-of-variables log-determinant,
    all constants kept, divided by the total dimension count, plus the
    rescale correction (`rescale_bpd=0` scores unrescaled inputs).
    """
    dims = model.dimensions
    result = flow_forward(model, x_dequantized)
    z = result.latent
    nats = (z * z).sum() * 0.5 + (0.5 * _LN_2PI * dims) - result.log_det
    bpd = nats * (1.0 / (dims * _LN2)) + rescale_bpd
    nm.require_finite(bpd, "bits-per-dimension loss")
    return bpd


def sample_continuous(model: JetModel, count: int, rng_seed: int):
    """Draw latents and invert the flow; returns (latents, token sequences)."""
    dtype = model.config.np_dtype
    geom = model.geom
    latents, tokens = [], []
    for i in range(count):
        rng = stream(rng_seed, i)
        z = rng.standard_normal((geom.tokens, geom.token_width)).astype(dtype)
        latents.append(z)
        tokens.append(flow_inverse(model, Tensor(z)).data)
    return latents, tokens


def sample(model: JetModel, count: int, rng_seed: int) -> np.ndarray:
    """Sample (count, H, W, C) uint8 images.

    Latents are unit Gaussian per dimension, one Philox stream per sample
    index, so regenerating with the same seed reproduces the same images.
    Token values map back through [0, 256), clamp to [0, 255] and round.
    """
    geom = model.geom
    _, tokens = sample_continuous(model, count, rng_seed)
    images = np.empty((count, geom.image_height, geom.image_width, geom.channels), np.uint8)
    for i, seq in enumerate(tokens):
        pixels = (unpatchify(seq, geom) + 0.5) * 256.0
        images[i] = np.rint(np.clip(pixels, 0.0, 255.0)).astype(np.uint8)
    return images
