"""Offline auto-search of sparse configs by greedy boundary contraction.

Starting from full coverage, the search repeatedly applies the candidate
move that loses the least recall per unit of compute saved, until the
recall floor ``tau`` would be crossed, the marginal ratio exceeds the cost
threshold ``lam``, or no shrinking move remains. Every applied move must
actually remove at least one block: a shrink that leaves the rasterized
mask unchanged (because it moved within a tile's interior) is absorbed
into the same move until the mask responds.

While a group's two windows coincide they are degenerate (each fully
shadows the other), so moves come in coupled forms there: box moves shrink
both windows along one axis, and a split move flattens one window while
narrowing the other, which is how cross-shaped corridors emerge from a
square start.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    GroupBoundaryMismatch,
    IncompatibleGrid,
    InvariantViolation,
    MissingDump,
    ShapeMismatch,
    ValidationError,
)
from .layout import TileShape, position_coords
from .masks import (
    EMPTY_WINDOW,
    DualWindow,
    FrameGroup,
    HeadMaskConfig,
    ModelMaskSchedule,
    ScheduleEntry,
    SpatialWindow,
    default_group_boundaries,
    full_config,
    num_blocks,
    rasterize,
    sparsity,
    union,
)
from .metrics import AttentionProbMap, recall

_AXIS_ORDER = {"x": 0, "y": 1, "xy": 2, "": 3}


@dataclass(frozen=True)
class SearchParams:
    """Thresholds and granularity of the boundary-contraction search.

    ``tau`` is the minimum recall a returned config may have; ``lam`` caps
    the recall-lost-per-cost-saved ratio of any applied move. Extents
    shrink in steps of one tile along each axis so masks stay tile-aligned.
    ``dual_windows`` / ``share_groups`` constrain the move set, which is
    how the single-window and shared-window ablation baselines are run.
    """

    tau: float = 0.9
    lam: float = 0.011
    tile: TileShape = TileShape(1, 4, 4)
    block_size: int = 64
    group_boundaries: tuple[tuple[int, int], ...] | None = None
    step_reuse_n: int = 5
    full_prefix: int = 15
    dual_windows: bool = True
    share_groups: bool = False

    def __post_init__(self):
        if not 0 < self.tau <= 1:
            raise ValidationError("tau must be in (0, 1]")
        if self.lam <= 0:
            raise ValidationError("lam must be > 0")
        if self.block_size < 1:
            raise ValidationError("block_size must be >= 1")
        if self.step_reuse_n < 1:
            raise ValidationError("step_reuse_n must be >= 1")
        if self.full_prefix < 0:
            raise ValidationError("full_prefix must be >= 0")


@dataclass(frozen=True)
class CandidateMove:
    """One shrinking action on a config.

    ``kind`` is ``shrink`` (one window, one axis), ``box`` (both coincident
    windows, one axis), ``split`` (flatten window 1 in y, narrow window 2
    in x), or ``disable`` (empty a non-nearest group). ``group`` is -1 when
    the move applies to every group of a shared-window search. ``steps``
    counts the tile steps absorbed before the block mask changed.
    """

    kind: str
    group: int
    slot: int
    axis: str
    steps: int = 1

    @property
    def sort_key(self) -> tuple[int, int, int]:
        return (self.group, self.slot, _AXIS_ORDER[self.axis])


@dataclass(frozen=True)
class TraceEntry:
    move: CandidateMove
    recall_after: float
    cost_after: float
    ratio: float


@dataclass
class SearchTrace:
    """Audit record of a search: applied moves and why it stopped."""

    entries: list[TraceEntry] = field(default_factory=list)
    termination: str = ""

    def to_jsonable(self) -> dict:
        return {
            "termination": self.termination,
            "entries": [
                {
                    "move": dataclasses.asdict(e.move),
                    "recall_after": e.recall_after,
                    "cost_after": e.cost_after,
                    "ratio": e.ratio,
                }
                for e in self.entries
            ],
        }


@dataclass(frozen=True)
class ConfigReport:
    """Deterministic evaluation of one config against one or more maps."""

    recalls: tuple[float, ...]
    mean_recall: float
    sparsity: float
    flop_proxy: float


class _Workspace:
    """Precomputed geometry and block-aggregated mass for one search."""

    def __init__(self, prob_map: AttentionProbMap, block_size: int):
        grid = prob_map.grid
        self.n = grid.tokens
        self.nb = num_blocks(self.n, block_size)
        self.block_size = block_size
        t, y, x = position_coords(grid, prob_map.perm)
        self.dt = np.abs(t[:, None] - t[None, :]).astype(np.int32)
        self.dy = np.abs(y[:, None] - y[None, :]).astype(np.int32)
        self.dx = np.abs(x[:, None] - x[None, :]).astype(np.int32)
        # Row mass aggregated onto the block grid: recall of a mask is then
        # a single weighted sum over its boolean entries.
        padded = np.zeros((self.nb * block_size, self.nb * block_size))
        padded[: self.n, : self.n] = prob_map.probs
        self.block_mass = padded.reshape(
            self.nb, block_size, self.nb, block_size
        ).sum(axis=(1, 3))
        self._band_cache: dict[tuple[int, int], np.ndarray] = {}

    def band(self, d_lo: int, d_hi: int) -> np.ndarray:
        key = (d_lo, d_hi)
        if key not in self._band_cache:
            self._band_cache[key] = (self.dt >= d_lo) & (self.dt <= d_hi)
        return self._band_cache[key]

    def rasterize(self, config: HeadMaskConfig) -> np.ndarray:
        member = np.zeros((self.n, self.n), dtype=bool)
        for g in config.groups:
            if g.window.is_empty:
                continue
            spatial = np.zeros_like(member)
            for w in g.window.windows:
                spatial |= (self.dx <= w.omega) & (self.dy <= w.eta)
            member |= self.band(g.d_lo, g.d_hi) & spatial
        bs, nb = self.block_size, self.nb
        if nb * bs != self.n:
            full = np.zeros((nb * bs, nb * bs), dtype=bool)
            full[: self.n, : self.n] = member
            member = full
        return member.reshape(nb, bs, nb, bs).any(axis=(1, 3))

    def recall(self, allowed: np.ndarray) -> float:
        return float((self.block_mass * allowed).sum() / self.n)

    @staticmethod
    def cost(allowed: np.ndarray) -> float:
        return float(allowed.mean())


def _shrunk(window: SpatialWindow, axis: str, step: int) -> SpatialWindow:
    if axis == "x":
        return SpatialWindow(omega=max(0, window.omega - step), eta=window.eta)
    return SpatialWindow(omega=window.omega, eta=max(0, window.eta - step))


def _apply_to_group(window: DualWindow, move: CandidateMove, tile: TileShape) -> DualWindow:
    step_x, step_y = tile.tw, tile.th
    if move.kind == "disable":
        return EMPTY_WINDOW
    if move.kind == "box":
        step = step_x if move.axis == "x" else step_y
        return DualWindow(
            w1=_shrunk(window.w1, move.axis, step),
            w2=_shrunk(window.w2, move.axis, step),
        )
    if move.kind == "split":
        return DualWindow(
            w1=_shrunk(window.w1, "y", step_y),
            w2=_shrunk(window.w2, "x", step_x),
        )
    # plain shrink of one slot
    step = step_x if move.axis == "x" else step_y
    if move.slot == 1:
        return DualWindow(w1=_shrunk(window.w1, move.axis, step), w2=window.w2)
    return DualWindow(w1=window.w1, w2=_shrunk(window.w2, move.axis, step))


def _apply(config: HeadMaskConfig, move: CandidateMove, tile: TileShape) -> HeadMaskConfig:
    groups = []
    for idx, g in enumerate(config.groups):
        if move.group in (-1, idx) and not (move.group == -1 and g.window.is_empty):
            groups.append(FrameGroup(g.d_lo, g.d_hi, _apply_to_group(g.window, move, tile)))
        else:
            groups.append(g)
    return HeadMaskConfig(groups=tuple(groups))


def _group_moves(window: DualWindow, group_idx: int, dual: bool) -> list[CandidateMove]:
    moves: list[CandidateMove] = []
    w1, w2 = window.w1, window.w2
    if dual and w1 is not None and w2 is not None and w1 == w2:
        if w1.omega > 0:
            moves.append(CandidateMove("box", group_idx, 0, "x"))
        if w1.eta > 0:
            moves.append(CandidateMove("box", group_idx, 0, "y"))
        if w1.eta > 0 and w2.omega > 0:
            moves.append(CandidateMove("split", group_idx, 0, "xy"))
        return moves
    for slot, w in ((1, w1), (2, w2)):
        if w is None:
            continue
        if w.omega > 0:
            moves.append(CandidateMove("shrink", group_idx, slot, "x"))
        if w.eta > 0:
            moves.append(CandidateMove("shrink", group_idx, slot, "y"))
    return moves


def _enumerate_moves(config: HeadMaskConfig, params: SearchParams) -> list[CandidateMove]:
    moves: list[CandidateMove] = []
    enabled = [i for i, g in enumerate(config.groups) if not g.window.is_empty]
    if params.share_groups:
        moves.extend(_group_moves(config.groups[enabled[0]].window, -1, params.dual_windows))
        farthest = enabled[-1]
        if config.groups[farthest].d_lo > 0:
            moves.append(CandidateMove("disable", farthest, 3, ""))
    else:
        for idx in enabled:
            g = config.groups[idx]
            moves.extend(_group_moves(g.window, idx, params.dual_windows))
            if g.d_lo > 0:
                moves.append(CandidateMove("disable", idx, 3, ""))
    return sorted(moves, key=lambda m: m.sort_key)


def _can_reapply(config: HeadMaskConfig, move: CandidateMove) -> bool:
    """A shrink can repeat while its target extents are still positive."""
    if move.kind == "disable":
        return False
    idx = move.group if move.group >= 0 else next(
        i for i, g in enumerate(config.groups) if not g.window.is_empty
    )
    window = config.groups[idx].window
    if move.kind == "box":
        w = window.w1
        return (w.omega if move.axis == "x" else w.eta) > 0
    if move.kind == "split":
        return window.w1.eta > 0 and window.w2.omega > 0
    w = window.w1 if move.slot == 1 else window.w2
    return (w.omega if move.axis == "x" else w.eta) > 0


def shrink_search(
    prob_map: AttentionProbMap, params: SearchParams
) -> tuple[HeadMaskConfig, SearchTrace]:
    """Greedy boundary contraction of one head's mask under (tau, lam).

    Returns the final config together with a trace of every applied move.
    The returned config always has recall >= tau; with tau = 1 on a map
    with mass everywhere, that is the unchanged full config.
    """
    grid = prob_map.grid
    boundaries = params.group_boundaries or default_group_boundaries(grid.f)
    try:
        config = full_config(grid, boundaries, dual_windows=params.dual_windows)
        config.validate_for_grid(grid)
    except InvariantViolation as exc:
        raise IncompatibleGrid(str(exc)) from exc
    ws = _Workspace(prob_map, params.block_size)
    allowed = ws.rasterize(config)
    cur_recall = ws.recall(allowed)
    cur_cost = ws.cost(allowed)
    trace = SearchTrace()

    while True:
        best = None
        for move in _enumerate_moves(config, params):
            cand_cfg = _apply(config, move, params.tile)
            cand_allowed = ws.rasterize(cand_cfg)
            steps = 1
            # Absorb steps that stay inside the current mask: a candidate
            # must save at least one block so its ratio is well defined.
            while np.array_equal(cand_allowed, allowed) and _can_reapply(cand_cfg, move):
                cand_cfg = _apply(cand_cfg, move, params.tile)
                cand_allowed = ws.rasterize(cand_cfg)
                steps += 1
            if np.array_equal(cand_allowed, allowed):
                continue
            cand_recall = ws.recall(cand_allowed)
            cand_cost = ws.cost(cand_allowed)
            delta_cost = cur_cost - cand_cost
            ratio = max(0.0, cur_recall - cand_recall) / delta_cost
            if best is None or ratio < best[0]:
                best = (
                    ratio,
                    dataclasses.replace(move, steps=steps),
                    cand_cfg,
                    cand_allowed,
                    cand_recall,
                    cand_cost,
                )
        if best is None:
            trace.termination = "exhausted"
            break
        ratio, move, cand_cfg, cand_allowed, cand_recall, cand_cost = best
        if cand_recall < params.tau - 1e-12:
            trace.termination = "recall-threshold"
            break
        if ratio > params.lam:
            trace.termination = "cost-threshold"
            break
        config, allowed = cand_cfg, cand_allowed
        cur_recall, cur_cost = cand_recall, cand_cost
        trace.entries.append(TraceEntry(move, cur_recall, cur_cost, ratio))
    return config, trace


def merge_prompts(configs: list[HeadMaskConfig]) -> HeadMaskConfig:
    """Union-fold configs searched on different prompts of the same head."""
    if not configs:
        raise ValidationError("merge_prompts needs at least one config")
    merged = configs[0]
    for other in configs[1:]:
        if other.boundaries != merged.boundaries:
            raise GroupBoundaryMismatch(
                f"group boundaries differ: {merged.boundaries} vs {other.boundaries}"
            )
        merged = union(merged, other)
    return merged


def schedule_search(
    dumps: dict[tuple[int, int, int], AttentionProbMap],
    params: SearchParams,
) -> ModelMaskSchedule:
    """Build a full-model schedule from (layer, head, step)-keyed dumps.

    Steps below ``full_prefix`` run dense. The remaining steps are split
    into ranges of ``step_reuse_n``; each (layer, head, range) is searched
    on the map of the range's first step and the config is reused across
    the whole range.
    """
    if not dumps:
        raise ValidationError("schedule_search needs at least one dump")
    steps = sorted({s for (_, _, s) in dumps})
    if steps != list(range(steps[0], steps[-1] + 1)):
        raise ValidationError("dump steps must form a contiguous range")
    last_step = steps[-1]
    heads = sorted({(layer, head) for (layer, head, _) in dumps})
    entries = []
    for layer, head in heads:
        lo = params.full_prefix
        while lo <= last_step:
            hi = min(lo + params.step_reuse_n - 1, last_step)
            key = (layer, head, lo)
            if key not in dumps:
                raise MissingDump(
                    f"no probability map for layer {layer}, head {head}, step {lo}"
                )
            config, _ = shrink_search(dumps[key], params)
            entries.append(ScheduleEntry(layer, head, lo, hi, config))
            lo = hi + 1
    return ModelMaskSchedule(
        full_attention_prefix=params.full_prefix, entries=tuple(entries)
    )


def evaluate_config(
    config: HeadMaskConfig,
    maps: list[AttentionProbMap],
    block_size: int,
) -> ConfigReport:
    """Recall of one config on each map plus its mask-level cost figures."""
    if not maps:
        raise ValidationError("evaluate_config needs at least one map")
    first = maps[0]
    for m in maps[1:]:
        if m.grid != first.grid or m.perm != first.perm:
            raise ShapeMismatch("all maps must share one grid and token order")
    mask = rasterize(config, first.grid, first.perm, block_size)
    recalls = tuple(recall(m, mask) for m in maps)
    return ConfigReport(
        recalls=recalls,
        mean_recall=float(np.mean(recalls)),
        sparsity=sparsity(mask),
        flop_proxy=float(mask.allowed.mean()),
    )


def tau_sweep(
    maps: list[AttentionProbMap],
    taus: list[float],
    params: SearchParams,
) -> list[dict]:
    """Search each map at every tau; rows feed the sparsity-vs-tau plot."""
    rows = []
    for tau in taus:
        run = dataclasses.replace(params, tau=tau)
        sparsities = []
        recalls = []
        for m in maps:
            config, _ = shrink_search(m, run)
            report = evaluate_config(config, [m], params.block_size)
            sparsities.append(report.sparsity)
            recalls.append(report.mean_recall)
        rows.append(
            {
                "tau": tau,
                "mean_sparsity": float(np.mean(sparsities)),
                "mean_recall": float(np.mean(recalls)),
            }
        )
    return rows
