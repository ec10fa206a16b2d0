"""Token lattice bookkeeping: the (f, h, w) grid and its flattening orders.

A video latent is a 3D lattice of tokens. Attention kernels see it as a 1D
sequence, and *which* 1D order is used decides how well block-sparsity can
exploit spatial locality. Two orders are provided: plain raster (frame,
then row, then column) and tiled (small 3D-contiguous tiles made
contiguous in the sequence).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NonDivisibleTile, OutOfRange, ValidationError


@dataclass(frozen=True)
class VideoGrid:
    """Latent video lattice: ``f`` frames of ``h`` x ``w`` tokens."""

    f: int
    h: int
    w: int

    def __post_init__(self):
        for name in ("f", "h", "w"):
            if getattr(self, name) < 1:
                raise ValidationError(f"grid.{name} must be >= 1")

    @property
    def tokens(self) -> int:
        return self.f * self.h * self.w

    @property
    def frame_tokens(self) -> int:
        return self.h * self.w


@dataclass(frozen=True)
class TileShape:
    """3D tile extent; must divide the grid exactly along every axis."""

    tf: int
    th: int
    tw: int

    def __post_init__(self):
        for name in ("tf", "th", "tw"):
            if getattr(self, name) < 1:
                raise ValidationError(f"tile.{name} must be >= 1")

    @property
    def tokens(self) -> int:
        return self.tf * self.th * self.tw

    def divides(self, grid: VideoGrid) -> bool:
        return grid.f % self.tf == 0 and grid.h % self.th == 0 and grid.w % self.tw == 0


@dataclass(frozen=True)
class TokenCoord:
    """Position of one token: frame ``t``, row ``y``, column ``x``."""

    t: int
    y: int
    x: int


@dataclass(frozen=True, eq=False)
class Permutation:
    """Bijection between raster indices and sequence positions.

    ``forward[i]`` is the sequence position of raster token ``i``;
    ``inverse[p]`` is the raster token sitting at position ``p``.
    """

    forward: np.ndarray
    inverse: np.ndarray

    @classmethod
    def from_forward(cls, forward: np.ndarray) -> "Permutation":
        forward = np.asarray(forward, dtype=np.int64)
        n = forward.shape[0]
        if not np.array_equal(np.sort(forward), np.arange(n)):
            raise ValidationError("forward is not a bijection on [0, n)")
        inverse = np.empty(n, dtype=np.int64)
        inverse[forward] = np.arange(n)
        return cls(forward=forward, inverse=inverse)

    def __len__(self) -> int:
        return self.forward.shape[0]

    def __eq__(self, other) -> bool:
        if not isinstance(other, Permutation):
            return NotImplemented
        return np.array_equal(self.forward, other.forward)

    __hash__ = None  # type: ignore[assignment]


def index_of(grid: VideoGrid, coord: TokenCoord) -> int:
    """Raster index of a coordinate (frame-major, then row, then column)."""
    if not (0 <= coord.t < grid.f and 0 <= coord.y < grid.h and 0 <= coord.x < grid.w):
        raise OutOfRange(f"coordinate {coord} outside grid {grid}")
    return (coord.t * grid.h + coord.y) * grid.w + coord.x


def coord_of(grid: VideoGrid, raster_index: int) -> TokenCoord:
    """Inverse of :func:`index_of`."""
    if not 0 <= raster_index < grid.tokens:
        raise OutOfRange(f"index {raster_index} outside [0, {grid.tokens})")
    t, rest = divmod(raster_index, grid.frame_tokens)
    y, x = divmod(rest, grid.w)
    return TokenCoord(t=t, y=y, x=x)


def raster_order(grid: VideoGrid) -> Permutation:
    """Identity order: flatten the lattice directly."""
    idx = np.arange(grid.tokens, dtype=np.int64)
    return Permutation(forward=idx, inverse=idx.copy())


def tile_order(grid: VideoGrid, tile: TileShape) -> Permutation:
    """Order that makes each 3D tile a contiguous run of the sequence.

    Tiles appear in raster order of their tile indices; tokens inside a
    tile keep raster order of their local coordinates. Raises
    :class:`NonDivisibleTile` unless the tile divides the grid exactly
    (no padding is performed).
    """
    if not tile.divides(grid):
        raise NonDivisibleTile(
            f"tile {tile.tf}x{tile.th}x{tile.tw} does not divide grid "
            f"{grid.f}x{grid.h}x{grid.w}"
        )
    # Raster coordinates of every token, decomposed into (tile index, local
    # offset) per axis; sequence position is raster-of-tiles then
    # raster-of-locals.
    t, y, x = _coord_components(grid)
    tt, lt = t // tile.tf, t % tile.tf
    ty, ly = y // tile.th, y % tile.th
    tx, lx = x // tile.tw, x % tile.tw
    nt_y = grid.h // tile.th
    nt_x = grid.w // tile.tw
    tile_rank = (tt * nt_y + ty) * nt_x + tx
    local_rank = (lt * tile.th + ly) * tile.tw + lx
    forward = tile_rank * tile.tokens + local_rank
    return Permutation.from_forward(forward)


def _coord_components(grid: VideoGrid) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    idx = np.arange(grid.tokens, dtype=np.int64)
    t = idx // grid.frame_tokens
    rest = idx % grid.frame_tokens
    return t, rest // grid.w, rest % grid.w


def position_coords(grid: VideoGrid, perm: Permutation) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-position coordinate arrays ``(t, y, x)`` under a permutation.

    Entry ``p`` describes the token occupying sequence position ``p``.
    """
    if len(perm) != grid.tokens:
        raise ValidationError("permutation length does not match grid")
    t, y, x = _coord_components(grid)
    return t[perm.inverse], y[perm.inverse], x[perm.inverse]
