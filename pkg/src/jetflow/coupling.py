"""One invertible affine coupling layer.

The input splits into a conditioning half and a transformed half.  The
backbone reads the conditioning half and produces a raw scale and a
shift; the transformed half is shifted, then multiplied by
sigmoid(raw_scale) * scale_cap, so every multiplier lies strictly inside
(0, scale_cap).  The log-determinant is the sum of the logs of those
multipliers.  Because the conditioning half passes through unchanged,
the inverse is closed-form and costs the same as the forward pass.

Channel-kind plans condition on half of every token's features, so the
backbone sees all K tokens.  Spatial-kind plans condition on half of the
tokens and come in two wirings:

  pairing  the backbone processes only the K/2 conditioning tokens and
           each output row is routed to its partner token via the plan's
           pairing bijection;
  masking  the backbone processes all K tokens with the transformed
           group zeroed out, and only the transformed group's output
           rows are used.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import numerics as nm
from .errors import NumericError
from .numerics import PrecisionMode, Tensor
from .splitting import SplitKind, SplitPlan, merge, pairing_matrix, split
from .vit import ViTConfig, ViTParams, vit_forward

SCALE_CAP = 2.0


class CouplingMode(Enum):
    MASKING = "masking"
    PAIRING = "pairing"


@dataclass
class CouplingLayer:
    plan: SplitPlan
    net: ViTParams
    mode: CouplingMode
    scale_cap: float = SCALE_CAP
    index: int = 0  # position in the stack, used in error messages

    def parameters(self):
        return self.net.parameters()


@dataclass
class CouplingResult:
    y: Tensor
    log_det: Tensor  # scalar, nats


def backbone_config(plan: SplitPlan, tokens: int, depth: int, width: int,
                    heads: int, mlp_ratio: int = 4) -> ViTConfig:
    """Backbone geometry implied by a split plan and coupling mode.

    For channel plans the net maps all K tokens of width d to width 2d.
    For spatial plans it maps tokens of width 2d to width 4d; pairing
    mode feeds it the K/2 conditioning tokens, masking mode all K.
    """
    if plan.kind is SplitKind.CHANNEL:
        return ViTConfig(depth, width, heads, tokens,
                         in_width=plan.half_extent,
                         out_width=2 * plan.half_extent,
                         mlp_ratio=mlp_ratio)
    raise ValueError("spatial plans need the mode; use spatial_backbone_config")


def spatial_backbone_config(plan: SplitPlan, token_width: int, mode: CouplingMode,
                            depth: int, width: int, heads: int,
                            mlp_ratio: int = 4) -> ViTConfig:
    net_tokens = plan.half_extent if mode is CouplingMode.PAIRING else plan.full_extent
    return ViTConfig(depth, width, heads, net_tokens,
                     in_width=token_width,
                     out_width=2 * token_width,
                     mlp_ratio=mlp_ratio)


def _split_fields(out: Tensor, width: int) -> tuple[Tensor, Tensor]:
    # Raw scale occupies the first half of the output width, shift the second.
    return nm.col_slice(out, 0, width), nm.col_slice(out, width, 2 * width)


def _route_pairing(field: Tensor, plan: SplitPlan) -> Tensor:
    routing = Tensor(pairing_matrix(plan).astype(field.dtype))
    return nm.matmul(routing, field, PrecisionMode.FULL)


def _select_group_b(field: Tensor, plan: SplitPlan) -> Tensor:
    selector = Tensor(plan.select_b.astype(field.dtype))
    return nm.matmul(selector, field, PrecisionMode.FULL)


def scale_bias(layer: CouplingLayer, x1: Tensor) -> tuple[Tensor, Tensor]:
    """Raw scale and shift fields for the transformed half, aligned to x2."""
    plan = layer.plan
    if plan.kind is SplitKind.CHANNEL:
        out = vit_forward(layer.net, x1)
        return _split_fields(out, x1.shape[1])

    width = x1.shape[1]
    if layer.mode is CouplingMode.PAIRING:
        out = vit_forward(layer.net, x1)
        raw_scale, shift = _split_fields(out, width)
        return _route_pairing(raw_scale, plan), _route_pairing(shift, plan)

    # Masking: rebuild the full sequence with the transformed group zeroed.
    zeros = Tensor(np.zeros_like(x1.data))
    full = merge(x1, zeros, plan)
    out = vit_forward(layer.net, full)
    raw_scale, shift = _split_fields(out, width)
    return _select_group_b(raw_scale, plan), _select_group_b(shift, plan)


def couple_forward(layer: CouplingLayer, x: Tensor) -> CouplingResult:
    """Forward transform with its exact log-determinant (nats)."""
    x1, x2 = split(x, layer.plan)
    raw_scale, shift = scale_bias(layer, x1)
    scale = nm.sigmoid(raw_scale) * layer.scale_cap
    y2 = (x2 + shift) * scale
    y = merge(x1, y2, layer.plan)
    log_det = nm.log(scale).sum()
    try:
        nm.require_finite(y, "coupling output")
        nm.require_finite(log_det, "coupling log-determinant")
    except NumericError as exc:
        raise NumericError(f"coupling layer {layer.index}: {exc}") from None
    return CouplingResult(y=y, log_det=log_det)


def couple_inverse(layer: CouplingLayer, y: Tensor) -> Tensor:
    """Closed-form inverse; round-trips `couple_forward` within float error."""
    with nm.no_grad():
        y1, y2 = split(y, layer.plan)
        raw_scale, shift = scale_bias(layer, y1)
        scale = nm.sigmoid(raw_scale) * layer.scale_cap
        x2 = y2 / scale - shift
        x = merge(y1, x2, layer.plan)
    try:
        nm.require_finite(x, "coupling inverse output")
    except NumericError as exc:
        raise NumericError(f"coupling layer {layer.index}: {exc}") from None
    return x
