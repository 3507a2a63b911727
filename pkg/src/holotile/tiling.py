"""Pixel-unshuffle / pixel-shuffle reorganization between space and channels.

A 2-D array of size (H, W) is divided by a scale factor r into r^2 sub-images
of size (H/r, W/r); the inverse reassembles them losslessly. The channel
layout is fixed package-wide: sub-image c holds source offset
(c div r, c mod r), row-major over (row offset, column offset). Every module
that rearranges tiles must share this one convention so learned weights stay
portable across runs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError


@dataclass(frozen=True)
class TileStack:
    """r^2 sub-images of a common parent array.

    ``tiles`` has shape (r^2, H/r, W/r); channel c corresponds to source
    offset (c div r, c mod r).
    """

    tiles: np.ndarray
    scale: int

    def __post_init__(self):
        t = np.asarray(self.tiles)
        if t.ndim != 3:
            raise DimensionError(f"tiles must be 3-D, got shape {t.shape}")
        if self.scale < 1:
            raise DimensionError(f"scale must be >= 1, got {self.scale}")
        if t.shape[0] != self.scale**2:
            raise DimensionError(
                f"expected {self.scale ** 2} tiles for scale {self.scale}, "
                f"got {t.shape[0]}"
            )
        object.__setattr__(self, "tiles", t)

    @property
    def count(self) -> int:
        return self.tiles.shape[0]

    @property
    def sub_height(self) -> int:
        return self.tiles.shape[1]

    @property
    def sub_width(self) -> int:
        return self.tiles.shape[2]


def pixel_unshuffle(x: np.ndarray, r: int) -> TileStack:
    """Divide ``x`` into r^2 sub-images: tile c at (i, j) = x[i*r + c//r, j*r + c%r]."""
    x = np.asarray(x)
    if x.ndim != 2:
        raise DimensionError(f"expected a 2-D array, got shape {x.shape}")
    if r < 1:
        raise DimensionError(f"scale must be >= 1, got {r}")
    h, w = x.shape
    if h % r or w % r:
        raise DimensionError(f"array shape {x.shape} not divisible by scale {r}")
    tiles = (
        x.reshape(h // r, r, w // r, r)
        .transpose(1, 3, 0, 2)
        .reshape(r * r, h // r, w // r)
    )
    return TileStack(tiles.copy(), scale=r)


def pixel_shuffle(stack: TileStack, r: int | None = None) -> np.ndarray:
    """Exact inverse of :func:`pixel_unshuffle` under the fixed layout."""
    if r is None:
        r = stack.scale
    if stack.count != r * r:
        raise DimensionError(
            f"stack holds {stack.count} tiles, cannot shuffle at scale {r}"
        )
    _, sh, sw = stack.tiles.shape
    return (
        stack.tiles.reshape(r, r, sh, sw).transpose(2, 0, 3, 1).reshape(sh * r, sw * r)
    )


def pyramid_group_indices() -> list[list[int]]:
    """Channel index lists splitting 16 scale-4 tiles into four scale-2 groups.

    Group g collects channels whose offsets (a, b) satisfy
    (a mod 2, b mod 2) = (g div 2, g mod 2); within a group, channels are
    ordered by the coarse offset (a div 2, b div 2). Two successive scale-2
    shuffles under this grouping reproduce one scale-4 shuffle exactly.
    """
    groups: list[list[int]] = []
    for ga in range(2):
        for gb in range(2):
            members = {}
            for c in range(16):
                a, b = divmod(c, 4)
                if (a % 2, b % 2) == (ga, gb):
                    members[(a // 2) * 2 + (b // 2)] = c
            groups.append([members[k] for k in sorted(members)])
    return groups


def group_tiles(stack: TileStack) -> list[TileStack]:
    """Split a 16-tile stack into four 4-tile stacks for the two-stage merge."""
    if stack.count != 16:
        raise DimensionError(f"grouping needs exactly 16 tiles, got {stack.count}")
    return [
        TileStack(stack.tiles[idx], scale=2) for idx in pyramid_group_indices()
    ]
