"""Quantitative analysis of attention probability maps and block masks.

Everything here is offline tooling: recall of a mask against a map, the
top-k block count needed to retain a target recall, Jaccard similarity of
binarized masks, spatial/temporal pattern classification, and PSNR/MSE
helpers for comparing attention outputs.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import ShapeMismatch, SingleFrame, ValidationError
from .layout import Permutation, VideoGrid, position_coords, raster_order
from .masks import BlockMask, num_blocks

ROW_SUM_TOL = 1e-6


@dataclass(eq=False)
class AttentionProbMap:
    """Row-stochastic n x n attention probabilities for one head.

    Rows and columns follow the token order described by ``perm`` over
    ``grid``; metrics that reason about 3D structure recover coordinates
    through that permutation.
    """

    probs: np.ndarray
    grid: VideoGrid
    perm: Permutation | None = None

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=np.float64)
        if self.perm is None:
            self.perm = raster_order(self.grid)
        n = self.grid.tokens
        if self.probs.shape != (n, n):
            raise ShapeMismatch(
                f"probability map shape {self.probs.shape} does not match "
                f"grid with {n} tokens"
            )
        if len(self.perm) != n:
            raise ShapeMismatch("permutation length does not match grid")
        if (self.probs < 0).any():
            raise ValidationError("probability map has negative entries")
        row_err = np.abs(self.probs.sum(axis=1) - 1.0).max()
        if row_err > ROW_SUM_TOL:
            raise ValidationError(
                f"rows must sum to 1 within {ROW_SUM_TOL}, worst error {row_err:.3g}"
            )

    @property
    def n(self) -> int:
        return self.grid.tokens


def normalize_rows(probs: np.ndarray) -> np.ndarray:
    """Rescale rows to sum exactly to 1 (for ingesting float32 dumps)."""
    probs = np.asarray(probs, dtype=np.float64)
    sums = probs.sum(axis=1, keepdims=True)
    if (sums <= 0).any():
        raise ValidationError("cannot normalize a row with no mass")
    return probs / sums


def with_order(prob_map: AttentionProbMap, perm: Permutation) -> AttentionProbMap:
    """The same head expressed in a different token order."""
    gather = prob_map.perm.forward[perm.inverse]
    return AttentionProbMap(
        probs=prob_map.probs[np.ix_(gather, gather)],
        grid=prob_map.grid,
        perm=perm,
    )


class SpatialPattern(enum.Enum):
    LOCAL = "local"
    CROSS = "cross"
    GLOBAL = "global"


class TemporalPattern(enum.Enum):
    TIME_VARIANT = "time-variant"
    TIME_INVARIANT = "time-invariant"


@dataclass(frozen=True)
class PatternLabel:
    spatial: SpatialPattern
    temporal: TemporalPattern


def _check_map_mask(prob_map: AttentionProbMap, mask: BlockMask) -> None:
    nb = num_blocks(prob_map.n, mask.block_size)
    if mask.allowed.shape != (nb, nb):
        raise ShapeMismatch(
            f"mask grid {mask.allowed.shape} does not cover {prob_map.n} tokens "
            f"at block size {mask.block_size}"
        )


def recall(prob_map: AttentionProbMap, mask: BlockMask) -> float:
    """Mean over query rows of probability mass falling in allowed blocks."""
    _check_map_mask(prob_map, mask)
    keep = mask.token_level(prob_map.n)
    return float((prob_map.probs * keep).sum(axis=1).mean())


def topk_block_fraction(prob_map: AttentionProbMap, block_size: int, target: float) -> float:
    """Mean fraction of key blocks needed per row to retain ``target`` recall.

    Per query row, key blocks are taken greedily by contained mass until
    the cumulative mass reaches the target; the count is averaged over
    rows and divided by the number of blocks. A 1e-9 slack absorbs
    summation-order rounding so ``target=1.0`` counts exactly the nonzero
    blocks.
    """
    if not 0 < target <= 1:
        raise ValidationError("target must be in (0, 1]")
    n = prob_map.n
    nb = num_blocks(n, block_size)
    padded = np.zeros((n, nb * block_size), dtype=np.float64)
    padded[:, :n] = prob_map.probs
    block_mass = padded.reshape(n, nb, block_size).sum(axis=2)
    ranked = -np.sort(-block_mass, axis=1)
    cum = np.cumsum(ranked, axis=1)
    need = target * prob_map.probs.sum(axis=1) - 1e-9
    counts = 1 + (cum >= need[:, None]).argmax(axis=1)
    return float(counts.mean()) / nb


def jaccard(a: BlockMask, b: BlockMask) -> float:
    """|a AND b| / |a OR b| on binarized masks; two empty masks count as 1."""
    if a.allowed.shape != b.allowed.shape or a.block_size != b.block_size:
        raise ShapeMismatch("masks must share shape and block size")
    union_count = int((a.allowed | b.allowed).sum())
    if union_count == 0:
        return 1.0
    return int((a.allowed & b.allowed).sum()) / union_count


def _offset_mass(prob_map: AttentionProbMap) -> np.ndarray:
    """Attention mass per signed spatial offset (dy, dx), summing to 1."""
    grid = prob_map.grid
    t, y, x = position_coords(grid, prob_map.perm)
    h2, w2 = 2 * grid.h - 1, 2 * grid.w - 1
    dy = y[:, None] - y[None, :] + (grid.h - 1)
    dx = x[:, None] - x[None, :] + (grid.w - 1)
    flat = (dy * w2 + dx).ravel()
    mass = np.bincount(flat, weights=prob_map.probs.ravel(), minlength=h2 * w2)
    return (mass / prob_map.n).reshape(h2, w2)


def _centered_box_sums(mass: np.ndarray, h: int, w: int) -> np.ndarray:
    """M[eta, omega] = mass captured by the centred box of those half-extents."""
    padded = np.zeros((mass.shape[0] + 1, mass.shape[1] + 1))
    padded[1:, 1:] = np.cumsum(np.cumsum(mass, axis=0), axis=1)
    etas = np.arange(h)
    omegas = np.arange(w)
    top, bottom = h - 1 - etas, h - 1 + etas
    left, right = w - 1 - omegas, w - 1 + omegas
    return (
        padded[np.ix_(bottom + 1, right + 1)]
        - padded[np.ix_(top, right + 1)]
        - padded[np.ix_(bottom + 1, left)]
        + padded[np.ix_(top, left)]
    )


def _axis_coverage(length: int, extents: np.ndarray) -> np.ndarray:
    """Mean fraction of an axis covered by a centred half-extent window.

    Averages the clamped span over all query positions, so a window that
    exceeds the frame saturates at 1.
    """
    pos = np.arange(length)
    hi = np.minimum(pos[None, :] + extents[:, None], length - 1)
    lo = np.maximum(pos[None, :] - extents[:, None], 0)
    return (hi - lo + 1).sum(axis=1) / (length * length)


def fit_dual_window(
    prob_map: AttentionProbMap, extent_mass: float
) -> tuple[tuple[int, int], tuple[int, int], float]:
    """Smallest centred dual window capturing ``extent_mass`` of the map's mass.

    Capture is measured on raw attention mass (the recall of the centred
    region); size is the window union's mean clamped frame coverage, so
    "smallest" means "attending to the least of the frame". Returns
    ``((omega1, eta1), (omega2, eta2), coverage_fraction)`` with the
    wider-in-x window first. The search is exhaustive over all pairs of
    centred boxes, using inclusion-exclusion on the shared centre.
    """
    grid = prob_map.grid
    h, w = grid.h, grid.w
    box_mass = _centered_box_sums(_offset_mass(prob_map), h, w)
    etas, omegas = np.divmod(np.arange(h * w), w)
    cov_y = _axis_coverage(h, np.arange(h))
    cov_x = _axis_coverage(w, np.arange(w))
    box_cov = cov_y[etas] * cov_x[omegas]
    flat_mass = box_mass.ravel()
    min_eta = np.minimum.outer(etas, etas)
    min_omega = np.minimum.outer(omegas, omegas)
    pair_mass = flat_mass[:, None] + flat_mass[None, :] - box_mass[min_eta, min_omega]
    pair_cov = box_cov[:, None] + box_cov[None, :] - cov_y[min_eta] * cov_x[min_omega]
    feasible = pair_mass >= extent_mass - 1e-12
    pair_cov = np.where(feasible, pair_cov, np.inf)
    best = int(np.argmin(pair_cov))
    i, j = divmod(best, h * w)
    w1 = (int(omegas[i]), int(etas[i]))
    w2 = (int(omegas[j]), int(etas[j]))
    if w1[0] < w2[0]:
        w1, w2 = w2, w1
    return w1, w2, float(pair_cov.ravel()[best])


def classify_spatial(
    prob_map: AttentionProbMap,
    extent_mass: float = 0.85,
    area_threshold: float = 0.85,
    cross_aspect: float = 4.0,
) -> SpatialPattern:
    """Label a head's spatial behaviour as local, cross-shaped, or global.

    The smallest centred dual window capturing ``extent_mass`` of the
    attention mass is fitted first. A fit covering more than
    ``area_threshold`` of the spatial extent is global. Otherwise the fit
    is a cross when its two windows dominate complementary axes
    ((omega1-omega2)(eta1-eta2) < 0) and each corridor is at least
    ``cross_aspect`` times longer than it is wide; anything else is local.
    """
    (o1, e1), (o2, e2), fraction = fit_dual_window(prob_map, extent_mass)
    if fraction > area_threshold:
        return SpatialPattern.GLOBAL
    if (o1 - o2) * (e1 - e2) < 0:
        wide_aspect = (2 * o1 + 1) / (2 * e1 + 1)
        tall_aspect = (2 * e2 + 1) / (2 * o2 + 1)
        if min(wide_aspect, tall_aspect) >= cross_aspect:
            return SpatialPattern.CROSS
    return SpatialPattern.LOCAL


def temporal_profile(prob_map: AttentionProbMap) -> np.ndarray:
    """Mean probability per absolute frame distance, normalized by pair counts."""
    grid = prob_map.grid
    if grid.f < 2:
        raise SingleFrame("temporal profile needs at least two frames")
    t, _, _ = position_coords(grid, prob_map.perm)
    dist = np.abs(t[:, None] - t[None, :]).ravel()
    mass = np.bincount(dist, weights=prob_map.probs.ravel(), minlength=grid.f)
    counts = np.bincount(dist, minlength=grid.f)
    return mass / counts


def classify_temporal(
    prob_map: AttentionProbMap, ratio_threshold: float = 2.0
) -> TemporalPattern:
    """Time-variant when the per-distance profile spans more than the ratio."""
    profile = temporal_profile(prob_map)
    if profile.max() > ratio_threshold * profile.min():
        return TemporalPattern.TIME_VARIANT
    return TemporalPattern.TIME_INVARIANT


def mse(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeMismatch(f"shapes differ: {a.shape} vs {b.shape}")
    return float(np.mean((a - b) ** 2))


def psnr(a: np.ndarray, b: np.ndarray, max_val: float) -> float:
    """Peak signal-to-noise ratio in dB; identical inputs return +inf."""
    if max_val <= 0:
        raise ValidationError("max_val must be > 0")
    err = mse(a, b)
    if err == 0.0:
        return float("inf")
    return float(10.0 * np.log10(max_val * max_val / err))
