"""Transformer backbone mapping a token sequence to scale/bias fields.

Pre-norm blocks (norm -> multi-head self-attention -> residual, then
norm -> GELU MLP -> residual) on learned position embeddings, with no
initial patchification, pooling or class token.  The final projection is
zero-initialized so a freshly built backbone outputs exactly zero, which
makes the coupling layer wrapping it start as the identity map.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr, ndtri

from . import numerics as nm
from .errors import ConfigError, DimensionError
from .numerics import Parameter, Tensor
from .seeding import stream

LAYER_NORM_EPS = 1e-6
INIT_STD = 0.02


@dataclass(frozen=True)
class ViTConfig:
    depth: int
    width: int
    heads: int
    tokens: int
    in_width: int
    out_width: int
    mlp_ratio: int = 4

    def __post_init__(self):
        if self.depth < 0:
            raise ConfigError(f"backbone depth must be >= 0, got {self.depth}")
        if min(self.width, self.heads, self.tokens, self.in_width, self.out_width) < 1:
            raise ConfigError("backbone extents must be positive")
        if self.width % self.heads:
            raise ConfigError(
                f"width {self.width} not divisible by {self.heads} heads"
            )

    @property
    def head_dim(self) -> int:
        return self.width // self.heads

    @property
    def hidden_width(self) -> int:
        return self.mlp_ratio * self.width

    def parameter_count(self) -> int:
        """Closed-form count of all learnable scalars."""
        w, t = self.width, self.tokens
        embed = self.in_width * w + w
        pos = t * w
        attn = 4 * (w * w + w)
        mlp = w * self.hidden_width + self.hidden_width + self.hidden_width * w + w
        block = 2 * w + attn + 2 * w + mlp
        head = w * self.out_width + self.out_width
        return embed + pos + self.depth * block + 2 * w + head


@dataclass
class BlockParams:
    norm1_gain: Parameter
    norm1_bias: Parameter
    wq: Parameter
    bq: Parameter
    wk: Parameter
    bk: Parameter
    wv: Parameter
    bv: Parameter
    wo: Parameter
    bo: Parameter
    norm2_gain: Parameter
    norm2_bias: Parameter
    w_up: Parameter
    b_up: Parameter
    w_down: Parameter
    b_down: Parameter

    def parameters(self) -> list[Parameter]:
        return [
            self.norm1_gain, self.norm1_bias,
            self.wq, self.bq, self.wk, self.bk, self.wv, self.bv, self.wo, self.bo,
            self.norm2_gain, self.norm2_bias,
            self.w_up, self.b_up, self.w_down, self.b_down,
        ]


@dataclass
class ViTParams:
    cfg: ViTConfig
    w_embed: Parameter
    b_embed: Parameter
    pos: Parameter
    blocks: list[BlockParams]
    norm_out_gain: Parameter
    norm_out_bias: Parameter
    w_head: Parameter
    b_head: Parameter

    def parameters(self) -> list[Parameter]:
        out = [self.w_embed, self.b_embed, self.pos]
        for block in self.blocks:
            out.extend(block.parameters())
        out.extend([self.norm_out_gain, self.norm_out_bias, self.w_head, self.b_head])
        return out


def _trunc_normal(rng: np.random.Generator, shape, std: float) -> np.ndarray:
    """Normal(0, std^2) truncated at two standard deviations, via inverse CDF."""
    lo, hi = ndtr(-2.0), ndtr(2.0)
    u = rng.uniform(lo, hi, size=shape)
    return ndtri(u) * std


def init_vit(cfg: ViTConfig, seed: int, dtype=np.float32, prefix: str = "net") -> ViTParams:
    """Build backbone parameters; deterministic in `seed`.

    Weights are truncated normal (std 0.02), biases zero, position
    embeddings normal (std 0.02).  The final projection weight and bias
    are exactly zero.
    """
    rng = stream(seed)

    def weight(name, rows, cols):
        return Parameter(f"{prefix}.{name}", _trunc_normal(rng, (rows, cols), INIT_STD), dtype)

    def zeros(name, *shape):
        return Parameter(f"{prefix}.{name}", np.zeros(shape), dtype)

    def ones(name, n):
        return Parameter(f"{prefix}.{name}", np.ones(n), dtype)

    w_embed = weight("embed.weight", cfg.in_width, cfg.width)
    b_embed = zeros("embed.bias", cfg.width)
    pos = Parameter(
        f"{prefix}.pos",
        rng.normal(0.0, INIT_STD, size=(cfg.tokens, cfg.width)),
        dtype,
    )
    blocks = []
    for i in range(cfg.depth):
        b = f"block{i:02d}"
        blocks.append(
            BlockParams(
                norm1_gain=ones(f"{b}.norm1.gain", cfg.width),
                norm1_bias=zeros(f"{b}.norm1.bias", cfg.width),
                wq=weight(f"{b}.attn.wq", cfg.width, cfg.width),
                bq=zeros(f"{b}.attn.bq", cfg.width),
                wk=weight(f"{b}.attn.wk", cfg.width, cfg.width),
                bk=zeros(f"{b}.attn.bk", cfg.width),
                wv=weight(f"{b}.attn.wv", cfg.width, cfg.width),
                bv=zeros(f"{b}.attn.bv", cfg.width),
                wo=weight(f"{b}.attn.wo", cfg.width, cfg.width),
                bo=zeros(f"{b}.attn.bo", cfg.width),
                norm2_gain=ones(f"{b}.norm2.gain", cfg.width),
                norm2_bias=zeros(f"{b}.norm2.bias", cfg.width),
                w_up=weight(f"{b}.mlp.up", cfg.width, cfg.hidden_width),
                b_up=zeros(f"{b}.mlp.up_bias", cfg.hidden_width),
                w_down=weight(f"{b}.mlp.down", cfg.hidden_width, cfg.width),
                b_down=zeros(f"{b}.mlp.down_bias", cfg.width),
            )
        )
    return ViTParams(
        cfg=cfg,
        w_embed=w_embed,
        b_embed=b_embed,
        pos=pos,
        blocks=blocks,
        norm_out_gain=ones("norm_out.gain", cfg.width),
        norm_out_bias=zeros("norm_out.bias", cfg.width),
        w_head=zeros("head.weight", cfg.width, cfg.out_width),
        b_head=zeros("head.bias", cfg.out_width),
    )


def _attention(block: BlockParams, x: Tensor, cfg: ViTConfig) -> Tensor:
    h = nm.layer_norm(x, block.norm1_gain.value, block.norm1_bias.value, LAYER_NORM_EPS)
    q = nm.matmul(h, block.wq.value) + block.bq.value
    k = nm.matmul(h, block.wk.value) + block.bk.value
    v = nm.matmul(h, block.wv.value) + block.bv.value
    scale = 1.0 / math.sqrt(cfg.head_dim)
    outputs = []
    for i in range(cfg.heads):
        lo, hi = i * cfg.head_dim, (i + 1) * cfg.head_dim
        qi = nm.col_slice(q, lo, hi)
        ki = nm.col_slice(k, lo, hi)
        vi = nm.col_slice(v, lo, hi)
        scores = nm.matmul(qi, nm.transpose(ki)) * scale
        outputs.append(nm.matmul(nm.softmax_rows(scores), vi))
    merged = nm.concat_cols(outputs) if len(outputs) > 1 else outputs[0]
    return nm.matmul(merged, block.wo.value) + block.bo.value


def _mlp(block: BlockParams, x: Tensor) -> Tensor:
    h = nm.layer_norm(x, block.norm2_gain.value, block.norm2_bias.value, LAYER_NORM_EPS)
    h = nm.gelu(nm.matmul(h, block.w_up.value) + block.b_up.value)
    return nm.matmul(h, block.w_down.value) + block.b_down.value


def vit_forward(params: ViTParams, tokens: Tensor) -> Tensor:
    """Map (tokens, in_width) to (tokens, out_width)."""
    cfg = params.cfg
    if tokens.shape != (cfg.tokens, cfg.in_width):
        raise DimensionError(
            f"backbone expects {(cfg.tokens, cfg.in_width)} tokens, got {tokens.shape}"
        )
    x = nm.matmul(tokens, params.w_embed.value) + params.b_embed.value
    x = x + params.pos.value
    for block in params.blocks:
        x = x + _attention(block, x, cfg)
        x = x + _mlp(block, x)
    x = nm.layer_norm(x, params.norm_out_gain.value, params.norm_out_bias.value, LAYER_NORM_EPS)
    return nm.matmul(x, params.w_head.value) + params.b_head.value
