"""Frame-grouped dual-window sparse patterns and their block rasterization.

A head's sparse geometry is a list of frame groups. Each group owns a pair
of axis-aligned spatial windows around the query position; their union can
express a local box, a cross of two corridors, or full-frame coverage with
the same primitive. Rasterization lowers the token-level membership
predicate to a boolean grid over (query-block, key-block) pairs with ANY
semantics: a block is computed if any token pair inside it is a member.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    EmptyQueryRow,
    GroupBoundaryMismatch,
    InvariantViolation,
    ValidationError,
)
from .layout import Permutation, TokenCoord, VideoGrid, position_coords


@dataclass(frozen=True)
class SpatialWindow:
    """Half-extents around the query: ``omega`` columns, ``eta`` rows.

    Zero means only the query's own column/row; the window always contains
    the query position itself.
    """

    omega: int
    eta: int

    def __post_init__(self):
        if self.omega < 0 or self.eta < 0:
            raise ValidationError("window extents must be >= 0")

    def contains(self, dx: int, dy: int) -> bool:
        return abs(dx) <= self.omega and abs(dy) <= self.eta


@dataclass(frozen=True)
class DualWindow:
    """Union of up to two spatial windows; ``None`` marks an absent slot."""

    w1: SpatialWindow | None
    w2: SpatialWindow | None = None

    @property
    def windows(self) -> tuple[SpatialWindow, ...]:
        return tuple(w for w in (self.w1, self.w2) if w is not None)

    @property
    def is_empty(self) -> bool:
        return self.w1 is None and self.w2 is None

    def contains(self, dx: int, dy: int) -> bool:
        return any(w.contains(dx, dy) for w in self.windows)


EMPTY_WINDOW = DualWindow(w1=None, w2=None)


@dataclass(frozen=True)
class FrameGroup:
    """Inclusive band of absolute frame distances sharing one dual window."""

    d_lo: int
    d_hi: int
    window: DualWindow

    def __post_init__(self):
        if not 0 <= self.d_lo <= self.d_hi:
            raise ValidationError(f"bad distance band [{self.d_lo}, {self.d_hi}]")

    def covers(self, distance: int) -> bool:
        return self.d_lo <= distance <= self.d_hi


@dataclass(frozen=True)
class HeadMaskConfig:
    """Per-head sparse geometry: an ordered partition of frame distances.

    Groups must tile the distance axis contiguously starting at 0, and the
    nearest group (the one containing distance 0) must keep a non-empty
    window so rasterized masks never lose a query's own block.
    """

    groups: tuple[FrameGroup, ...]

    def __post_init__(self):
        if not self.groups:
            raise InvariantViolation("config has no frame groups")
        groups = tuple(sorted(self.groups, key=lambda g: g.d_lo))
        object.__setattr__(self, "groups", groups)
        if groups[0].d_lo != 0:
            raise InvariantViolation("frame groups must start at distance 0")
        for prev, cur in zip(groups, groups[1:]):
            if cur.d_lo != prev.d_hi + 1:
                raise InvariantViolation(
                    f"frame groups not contiguous at distance {cur.d_lo}"
                )
        if groups[0].window.is_empty:
            raise InvariantViolation("distance-0 group must have a non-empty window")

    @property
    def boundaries(self) -> tuple[tuple[int, int], ...]:
        return tuple((g.d_lo, g.d_hi) for g in self.groups)

    @property
    def max_distance(self) -> int:
        return self.groups[-1].d_hi

    def group_for(self, distance: int) -> FrameGroup:
        for g in self.groups:
            if g.covers(distance):
                return g
        raise InvariantViolation(f"no frame group covers distance {distance}")

    def validate_for_grid(self, grid: VideoGrid) -> None:
        if self.max_distance < grid.f - 1:
            raise InvariantViolation(
                f"frame groups cover distances up to {self.max_distance}, "
                f"grid needs {grid.f - 1}"
            )


def default_group_boundaries(f: int) -> tuple[tuple[int, int], ...]:
    """Geometric distance buckets {0}, {1-2}, {3-6}, {7-...} clipped to a grid."""
    edges = [(0, 0), (1, 2), (3, 6), (7, max(7, f - 1))]
    out = []
    for lo, hi in edges:
        if lo > f - 1:
            break
        out.append((lo, min(hi, f - 1)))
    if out and out[-1][1] < f - 1:
        out[-1] = (out[-1][0], f - 1)
    return tuple(out)


def full_config(
    grid: VideoGrid,
    group_boundaries: tuple[tuple[int, int], ...],
    dual_windows: bool = True,
) -> HeadMaskConfig:
    """Config whose every group covers the whole frame (sparsity 0).

    With ``dual_windows`` both slots start at full extents so boundary
    contraction can specialise them into complementary corridors; a single
    full slot is used for window-constrained searches.
    """
    full = SpatialWindow(omega=grid.w - 1, eta=grid.h - 1)
    window = DualWindow(w1=full, w2=full if dual_windows else None)
    groups = tuple(FrameGroup(lo, hi, window) for lo, hi in group_boundaries)
    return HeadMaskConfig(groups=groups)


def member(config: HeadMaskConfig, grid: VideoGrid, q: TokenCoord, k: TokenCoord) -> bool:
    """Token-level membership: does query ``q`` attend to key ``k``?

    True iff the group owning the absolute frame distance |k.t - q.t| has a
    window containing the spatial offset (k.x - q.x, k.y - q.y).
    """
    group = config.group_for(abs(k.t - q.t))
    return group.window.contains(k.x - q.x, k.y - q.y)


def member_grid(config: HeadMaskConfig, grid: VideoGrid, perm: Permutation) -> np.ndarray:
    """Full n x n boolean membership matrix in the given token order."""
    config.validate_for_grid(grid)
    t, y, x = position_coords(grid, perm)
    dt = np.abs(t[:, None] - t[None, :])
    dy = np.abs(y[:, None] - y[None, :])
    dx = np.abs(x[:, None] - x[None, :])
    out = np.zeros((grid.tokens, grid.tokens), dtype=bool)
    for g in config.groups:
        if g.window.is_empty:
            continue
        band = (dt >= g.d_lo) & (dt <= g.d_hi)
        spatial = np.zeros_like(out)
        for w in g.window.windows:
            spatial |= (dx <= w.omega) & (dy <= w.eta)
        out |= band & spatial
    return out


@dataclass(eq=False)
class BlockMask:
    """Boolean keep/skip grid over (query-block, key-block) pairs."""

    block_size: int
    allowed: np.ndarray

    def __post_init__(self):
        self.allowed = np.asarray(self.allowed, dtype=bool)
        if self.block_size < 1:
            raise ValidationError("block_size must be >= 1")
        if self.allowed.ndim != 2:
            raise ValidationError("allowed grid must be 2-D")

    def __eq__(self, other) -> bool:
        if not isinstance(other, BlockMask):
            return NotImplemented
        return self.block_size == other.block_size and np.array_equal(
            self.allowed, other.allowed
        )

    __hash__ = None  # type: ignore[assignment]

    @property
    def shape(self) -> tuple[int, int]:
        return self.allowed.shape

    def check_rows(self) -> None:
        """Raise :class:`EmptyQueryRow` if any query block keeps no key block."""
        empty = ~self.allowed.any(axis=1)
        if empty.any():
            raise EmptyQueryRow(
                f"query blocks {np.flatnonzero(empty).tolist()} have no allowed key block"
            )

    def token_level(self, n: int) -> np.ndarray:
        """Expand to an n x n boolean matrix over token pairs."""
        bidx = np.arange(n) // self.block_size
        return self.allowed[np.ix_(bidx, bidx)]


def num_blocks(n: int, block_size: int) -> int:
    return -(-n // block_size)


def block_reduce_any(token_matrix: np.ndarray, block_size: int) -> np.ndarray:
    """OR-reduce an n x n boolean matrix to its block grid."""
    n = token_matrix.shape[0]
    nb = num_blocks(n, block_size)
    padded = n != nb * block_size
    if padded:
        full = np.zeros((nb * block_size, nb * block_size), dtype=bool)
        full[:n, :n] = token_matrix
        token_matrix = full
    return token_matrix.reshape(nb, block_size, nb, block_size).any(axis=(1, 3))


def rasterize(
    config: HeadMaskConfig,
    grid: VideoGrid,
    perm: Permutation,
    block_size: int,
) -> BlockMask:
    """Lower a config to a :class:`BlockMask` with ANY semantics.

    A block pair is kept iff some token pair inside it satisfies
    :func:`member`; masks therefore never drop a modelled interaction.
    """
    allowed = block_reduce_any(member_grid(config, grid, perm), block_size)
    mask = BlockMask(block_size=block_size, allowed=allowed)
    mask.check_rows()
    return mask


def sparsity(mask: BlockMask) -> float:
    """Fraction of block pairs skipped."""
    return 1.0 - float(mask.allowed.mean())


def _union_windows(a: SpatialWindow | None, b: SpatialWindow | None) -> SpatialWindow | None:
    if a is None:
        return b
    if b is None:
        return a
    return SpatialWindow(omega=max(a.omega, b.omega), eta=max(a.eta, b.eta))


def union(a: HeadMaskConfig, b: HeadMaskConfig) -> HeadMaskConfig:
    """Conservative merge: componentwise max of extents per group and slot.

    The result's membership is a superset of both inputs' at every token
    pair; supersethood is the contract, the slotwise max is the mechanism.
    """
    if a.boundaries != b.boundaries:
        raise GroupBoundaryMismatch(
            f"group boundaries differ: {a.boundaries} vs {b.boundaries}"
        )
    groups = []
    for ga, gb in zip(a.groups, b.groups):
        window = DualWindow(
            w1=_union_windows(ga.window.w1, gb.window.w1),
            w2=_union_windows(ga.window.w2, gb.window.w2),
        )
        groups.append(FrameGroup(ga.d_lo, ga.d_hi, window))
    return HeadMaskConfig(groups=tuple(groups))


@dataclass(frozen=True)
class ScheduleEntry:
    """One (layer, head) config valid for an inclusive denoising-step range."""

    layer: int
    head: int
    step_lo: int
    step_hi: int
    config: HeadMaskConfig

    def __post_init__(self):
        if self.step_lo > self.step_hi:
            raise ValidationError("step_lo must be <= step_hi")


@dataclass(frozen=True)
class ModelMaskSchedule:
    """Dense warm-up prefix plus per-(layer, head, step-range) configs."""

    full_attention_prefix: int
    entries: tuple[ScheduleEntry, ...]

    def __post_init__(self):
        if self.full_attention_prefix < 0:
            raise ValidationError("full_attention_prefix must be >= 0")
        object.__setattr__(
            self,
            "entries",
            tuple(sorted(self.entries, key=lambda e: (e.layer, e.head, e.step_lo))),
        )
        per_head: dict[tuple[int, int], list[ScheduleEntry]] = {}
        for e in self.entries:
            per_head.setdefault((e.layer, e.head), []).append(e)
        for (layer, head), items in per_head.items():
            if items[0].step_lo != self.full_attention_prefix:
                raise InvariantViolation(
                    f"(layer {layer}, head {head}) sparse steps must start at the "
                    f"prefix boundary {self.full_attention_prefix}"
                )
            for prev, cur in zip(items, items[1:]):
                if cur.step_lo != prev.step_hi + 1:
                    raise InvariantViolation(
                        f"(layer {layer}, head {head}) step ranges overlap or leave "
                        f"a gap at step {cur.step_lo}"
                    )

    def config_at(self, layer: int, head: int, step: int) -> HeadMaskConfig | None:
        """Config in force at a step; ``None`` means run dense."""
        if step < self.full_attention_prefix:
            return None
        for e in self.entries:
            if e.layer == layer and e.head == head and e.step_lo <= step <= e.step_hi:
                return e.config
        raise InvariantViolation(
            f"no schedule entry for layer {layer}, head {head}, step {step}"
        )
