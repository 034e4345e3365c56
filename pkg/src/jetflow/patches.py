"""Image <-> patch-sequence layout.

An image of shape (H, W, C) becomes a sequence of K tokens, one per
patch cell of the (H/p, W/p) grid, each token holding the p*p*C patch
values flattened row-major in (row, column, channel) order.  Both
directions are pure element permutations, so they contribute exactly
zero to any log-determinant and invert each other bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DimensionError
from .numerics import Tensor


@dataclass(frozen=True)
class PatchGeometry:
    """Fixed patch layout for one image shape.

    `token_width` may be odd (e.g. p=1 on RGB); models that include
    channel couplings require it to be even and reject odd widths when
    the channel split is built.
    """

    image_height: int
    image_width: int
    channels: int
    patch: int
    grid_h: int = field(init=False)
    grid_w: int = field(init=False)
    tokens: int = field(init=False)
    token_width: int = field(init=False)

    def __post_init__(self):
        if min(self.image_height, self.image_width, self.channels, self.patch) < 1:
            raise ConfigError("patch geometry extents must be positive")
        if self.image_height % self.patch or self.image_width % self.patch:
            raise ConfigError(
                f"patch size {self.patch} does not divide image "
                f"{self.image_height}x{self.image_width}"
            )
        object.__setattr__(self, "grid_h", self.image_height // self.patch)
        object.__setattr__(self, "grid_w", self.image_width // self.patch)
        object.__setattr__(self, "tokens", self.grid_h * self.grid_w)
        object.__setattr__(self, "token_width", self.patch * self.patch * self.channels)

    @property
    def dimensions(self) -> int:
        """Total dimension count K * token_width = H * W * C."""
        return self.tokens * self.token_width


def _unwrap(x):
    if isinstance(x, Tensor):
        return x.data, True
    return np.asarray(x), False


def patchify(image, geom: PatchGeometry):
    """Flatten an (H, W, C) image into its (K, token_width) token sequence."""
    data, was_tensor = _unwrap(image)
    expected = (geom.image_height, geom.image_width, geom.channels)
    if data.shape != expected:
        raise DimensionError(f"image shape {data.shape} does not match geometry {expected}")
    p = geom.patch
    tokens = (
        data.reshape(geom.grid_h, p, geom.grid_w, p, geom.channels)
        .transpose(0, 2, 1, 3, 4)
        .reshape(geom.tokens, geom.token_width)
    )
    tokens = np.ascontiguousarray(tokens)
    return Tensor(tokens) if was_tensor else tokens


def unpatchify(tokens, geom: PatchGeometry):
    """Exact inverse of `patchify` (pure permutation, bit-identical)."""
    data, was_tensor = _unwrap(tokens)
    expected = (geom.tokens, geom.token_width)
    if data.shape != expected:
        raise DimensionError(f"token shape {data.shape} does not match geometry {expected}")
    p = geom.patch
    image = (
        data.reshape(geom.grid_h, geom.grid_w, p, p, geom.channels)
        .transpose(0, 2, 1, 3, 4)
        .reshape(geom.image_height, geom.image_width, geom.channels)
    )
    image = np.ascontiguousarray(image)
    return Tensor(image) if was_tensor else image
