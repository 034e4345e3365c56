"""Shared builders for small test models."""

import numpy as np

from jetflow.coupling import (
    CouplingLayer,
    CouplingMode,
    backbone_config,
    spatial_backbone_config,
)
from jetflow.model import JetModel
from jetflow.seeding import stream
from jetflow.splitting import SplitKind, build_channel_plan, build_spatial_plan
from jetflow.vit import init_vit


def randomize_head(net, seed, scale=0.05):
    """Overwrite the zero-initialized output projection with small random values."""
    rng = stream(seed, 999)
    net.w_head.assign(rng.normal(0.0, scale, net.w_head.shape))
    net.b_head.assign(rng.normal(0.0, scale, net.b_head.shape))


def randomize_all(net, seed, scale=0.1):
    """Randomize every parameter, including norms and the head (gradient tests)."""
    rng = stream(seed, 998)
    for p in net.parameters():
        p.assign(rng.normal(0.0, scale, p.shape))


def make_layer(
    kind,
    mode=CouplingMode.PAIRING,
    grid=(4, 4),
    token_width=6,
    depth=1,
    width=16,
    heads=2,
    dtype=np.float64,
    seed=0,
    head_scale=0.0,
    index=0,
):
    tokens = grid[0] * grid[1]
    if kind is SplitKind.CHANNEL:
        plan = build_channel_plan(token_width, seed=seed)
        cfg = backbone_config(plan, tokens, depth, width, heads)
    else:
        plan = build_spatial_plan(grid[0], grid[1], kind)
        cfg = spatial_backbone_config(plan, token_width, mode, depth, width, heads)
    net = init_vit(cfg, seed, dtype=dtype)
    if head_scale:
        randomize_head(net, seed, head_scale)
    return CouplingLayer(plan=plan, net=net, mode=mode, index=index)


def stack_model(layers, config):
    return JetModel(config=config, layers=list(layers))
