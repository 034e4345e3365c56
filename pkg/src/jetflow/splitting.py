"""Invertible dimension partitions applied as frozen 0/1 matrix multiplies.

Four split kinds are supported.  CHANNEL partitions each token's feature
dimensions into two halves through a seeded permutation; ROW, COLUMN and
CHECKERBOARD partition the token grid itself.  A plan stores the two
selection matrices whose stacked rows form a permutation matrix, so
splitting and merging are exact inverses of each other.  All splits and
merges go through full-precision matmuls, which keeps the round trip
bitwise even at 32-bit width.

Spatial plans also carry a pairing: a bijection from group-A token
positions to group-B token positions used by pairing-mode couplings.
  ROW           partner is the token directly below
  COLUMN        partner is the token directly to the right
  CHECKERBOARD  partner is the horizontal neighbour (c+1), wrapping at
                the end of the row to that row's first column
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import ConfigError, DimensionError
from .numerics import PrecisionMode, Tensor, matmul, add, transpose
from .seeding import stream

# Out-of-band seed accepted by `build_channel_plan` to request the identity
# permutation; intended for tests that need a predictable plan.
IDENTITY_PLAN_SEED = -1


class SplitKind(Enum):
    CHANNEL = "channel"
    ROW = "row"
    COLUMN = "column"
    CHECKERBOARD = "checkerboard"


SPATIAL_KINDS = (SplitKind.ROW, SplitKind.COLUMN, SplitKind.CHECKERBOARD)


@dataclass(frozen=True)
class SplitPlan:
    """Frozen invertible partition of one axis into two halves."""

    kind: SplitKind
    axis: str  # "channel" or "token"
    select_a: np.ndarray  # (half, full) 0/1 matrix
    select_b: np.ndarray
    pairing: np.ndarray | None  # group-A position -> group-B position
    seed: int | None = None

    @property
    def full_extent(self) -> int:
        return self.select_a.shape[1]

    @property
    def half_extent(self) -> int:
        return self.select_a.shape[0]


def _selection_matrices(order: np.ndarray, full: int) -> tuple[np.ndarray, np.ndarray]:
    half = order.size // 2
    eye = np.eye(full, dtype=np.float64)
    return eye[order[:half]], eye[order[half:]]


def build_channel_plan(channels: int, seed: int) -> SplitPlan:
    """Partition `channels` feature dimensions via a seeded permutation.

    The first half of the permuted channels forms group A, the rest group
    B.  `IDENTITY_PLAN_SEED` requests the identity permutation.
    """
    if channels < 2 or channels % 2:
        raise ConfigError(f"channel split needs an even channel count, got {channels}")
    if seed == IDENTITY_PLAN_SEED:
        order = np.arange(channels)
    else:
        order = stream(seed, 0).permutation(channels)
    select_a, select_b = _selection_matrices(order, channels)
    return SplitPlan(SplitKind.CHANNEL, "channel", select_a, select_b, None, seed)


def _token_index(r: np.ndarray, c: np.ndarray, grid_w: int) -> np.ndarray:
    return r * grid_w + c


def build_spatial_plan(grid_h: int, grid_w: int, kind: SplitKind) -> SplitPlan:
    """Partition the (grid_h, grid_w) token grid; both extents must be even."""
    if kind not in SPATIAL_KINDS:
        raise ConfigError(f"not a spatial split kind: {kind}")
    if grid_h % 2 or grid_w % 2:
        raise ConfigError(f"spatial splits need an even grid, got {grid_h}x{grid_w}")
    rr, cc = np.meshgrid(np.arange(grid_h), np.arange(grid_w), indexing="ij")
    rr, cc = rr.reshape(-1), cc.reshape(-1)
    if kind is SplitKind.ROW:
        in_a = rr % 2 == 0
        partner = _token_index(rr + 1, cc, grid_w)
    elif kind is SplitKind.COLUMN:
        in_a = cc % 2 == 0
        partner = _token_index(rr, cc + 1, grid_w)
    else:  # checkerboard
        in_a = (rr + cc) % 2 == 0
        partner = _token_index(rr, (cc + 1) % grid_w, grid_w)

    tokens = grid_h * grid_w
    a_tokens = np.flatnonzero(in_a)
    b_tokens = np.flatnonzero(~in_a)
    order = np.concatenate([a_tokens, b_tokens])
    select_a, select_b = _selection_matrices(order, tokens)

    b_position = np.empty(tokens, dtype=np.int64)
    b_position[b_tokens] = np.arange(b_tokens.size)
    pairing = b_position[partner[a_tokens]]
    if np.bincount(pairing, minlength=pairing.size).max() != 1:
        raise ConfigError(f"{kind.value} pairing is not a bijection")  # pragma: no cover
    return SplitPlan(kind, "token", select_a, select_b, pairing, None)


def _selector(plan: SplitPlan, which: str, dtype: np.dtype) -> Tensor:
    mat = plan.select_a if which == "a" else plan.select_b
    return Tensor(mat.astype(dtype))


def split(x: Tensor, plan: SplitPlan) -> tuple[Tensor, Tensor]:
    """Apply the plan's selection matrices; exact at the declared width."""
    full = plan.full_extent
    axis_extent = x.shape[1] if plan.axis == "channel" else x.shape[0]
    if axis_extent != full:
        raise DimensionError(
            f"split plan covers extent {full} but tensor has {axis_extent} on its {plan.axis} axis"
        )
    sel_a = _selector(plan, "a", x.dtype)
    sel_b = _selector(plan, "b", x.dtype)
    if plan.axis == "channel":
        x1 = matmul(x, transpose(sel_a), PrecisionMode.FULL)
        x2 = matmul(x, transpose(sel_b), PrecisionMode.FULL)
    else:
        x1 = matmul(sel_a, x, PrecisionMode.FULL)
        x2 = matmul(sel_b, x, PrecisionMode.FULL)
    return x1, x2


def merge(y1: Tensor, y2: Tensor, plan: SplitPlan) -> Tensor:
    """Exact inverse of `split` via the transposed selection matrices."""
    half = plan.half_extent
    for part in (y1, y2):
        extent = part.shape[1] if plan.axis == "channel" else part.shape[0]
        if extent != half:
            raise DimensionError(
                f"merge expects halves of extent {half} on the {plan.axis} axis, "
                f"got {part.shape}"
            )
    sel_a = _selector(plan, "a", y1.dtype)
    sel_b = _selector(plan, "b", y1.dtype)
    if plan.axis == "channel":
        return add(
            matmul(y1, sel_a, PrecisionMode.FULL),
            matmul(y2, sel_b, PrecisionMode.FULL),
        )
    return add(
        matmul(transpose(sel_a), y1, PrecisionMode.FULL),
        matmul(transpose(sel_b), y2, PrecisionMode.FULL),
    )


def pairing_matrix(plan: SplitPlan) -> np.ndarray:
    """0/1 matrix P with P[pairing[i], i] = 1, routing A outputs to B rows."""
    if plan.pairing is None:
        raise ConfigError(f"{plan.kind.value} plan has no pairing")
    n = plan.pairing.size
    mat = np.zeros((n, n), dtype=np.float64)
    mat[plan.pairing, np.arange(n)] = 1.0
    return mat
