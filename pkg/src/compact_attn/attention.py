"""Dense reference attention and the block-sparse online-softmax kernel.

Three execution paths over the same inputs: a numerically stable dense
reference, a masked dense oracle (disallowed blocks excluded from the
softmax), and the block-sparse kernel that visits only allowed key blocks
while maintaining running max / denominator / weighted-sum statistics.
The kernel must agree with the oracle to 1e-5; that equivalence is the
artifact's central correctness claim.

Arithmetic is 32-bit with 64-bit accumulation of the softmax statistics,
mirroring mixed-precision kernel practice at desk scale.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ShapeMismatch
from .layout import Permutation, VideoGrid, raster_order
from .masks import BlockMask, num_blocks
from .metrics import AttentionProbMap


@dataclass
class AttentionInputs:
    """One head's Q/K/V matrices (n x d) and the score scale."""

    q: np.ndarray
    k: np.ndarray
    v: np.ndarray
    scale: float

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=np.float32)
        self.k = np.asarray(self.k, dtype=np.float32)
        self.v = np.asarray(self.v, dtype=np.float32)
        if self.q.ndim != 2 or self.q.shape != self.k.shape or self.k.shape != self.v.shape:
            raise ShapeMismatch(
                f"Q/K/V must share an n x d shape, got {self.q.shape}, "
                f"{self.k.shape}, {self.v.shape}"
            )
        if not (
            np.isfinite(self.q).all()
            and np.isfinite(self.k).all()
            and np.isfinite(self.v).all()
        ):
            raise ShapeMismatch("Q/K/V entries must be finite")

    @classmethod
    def from_qkv(cls, q, k, v, scale: float | None = None) -> "AttentionInputs":
        q = np.asarray(q, dtype=np.float32)
        if scale is None:
            scale = 1.0 / math.sqrt(q.shape[1])
        return cls(q=q, k=np.asarray(k), v=np.asarray(v), scale=scale)

    @property
    def n(self) -> int:
        return self.q.shape[0]


def _scores(inputs: AttentionInputs) -> np.ndarray:
    return (inputs.q @ inputs.k.T) * np.float32(inputs.scale)


def _softmax_rows(scores: np.ndarray) -> np.ndarray:
    """Row softmax with row-max subtraction; float64 denominators."""
    shifted = scores - scores.max(axis=1, keepdims=True)
    weights = np.exp(shifted.astype(np.float64))
    return weights / weights.sum(axis=1, keepdims=True)


def dense_attention(inputs: AttentionInputs) -> np.ndarray:
    """Reference scaled-dot-product attention, output n x d float32."""
    probs = _softmax_rows(_scores(inputs))
    return (probs @ inputs.v.astype(np.float64)).astype(np.float32)


def attention_prob_map(
    q: np.ndarray,
    k: np.ndarray,
    scale: float | None = None,
    grid: VideoGrid | None = None,
    perm: Permutation | None = None,
) -> AttentionProbMap:
    """Post-softmax probability map of one head, for offline analysis.

    When no grid is supplied the sequence is treated as a single-frame row
    of tokens, which suffices for kernel-level checks.
    """
    q = np.asarray(q, dtype=np.float32)
    k = np.asarray(k, dtype=np.float32)
    if q.ndim != 2 or q.shape != k.shape:
        raise ShapeMismatch(f"Q and K must share an n x d shape, got {q.shape}, {k.shape}")
    if scale is None:
        scale = 1.0 / math.sqrt(q.shape[1])
    probs = _softmax_rows((q @ k.T) * np.float32(scale))
    if grid is None:
        grid = VideoGrid(f=1, h=1, w=q.shape[0])
    if perm is None:
        perm = raster_order(grid)
    return AttentionProbMap(probs=probs, grid=grid, perm=perm)


def _check_mask(inputs: AttentionInputs, mask: BlockMask) -> int:
    nb = num_blocks(inputs.n, mask.block_size)
    if mask.allowed.shape != (nb, nb):
        raise ShapeMismatch(
            f"mask grid {mask.allowed.shape} does not cover {inputs.n} tokens "
            f"at block size {mask.block_size}"
        )
    mask.check_rows()
    return nb


def masked_dense_oracle(inputs: AttentionInputs, mask: BlockMask) -> np.ndarray:
    """Ground truth for the sparse kernel: disallowed blocks scored -inf."""
    _check_mask(inputs, mask)
    scores = _scores(inputs)
    keep = mask.token_level(inputs.n)
    scores = np.where(keep, scores, np.float32(-np.inf))
    probs = _softmax_rows(scores)
    return (probs @ inputs.v.astype(np.float64)).astype(np.float32)


def block_sparse_attention(inputs: AttentionInputs, mask: BlockMask) -> np.ndarray:
    """Blockwise attention visiting only allowed key blocks.

    Each query block walks its allowed key blocks once, keeping a running
    row maximum, a running float64 denominator, and a running float64
    weighted sum; stale statistics are rescaled by exp(old_max - new_max)
    as the maximum tightens.
    """
    nb = _check_mask(inputs, mask)
    n, d = inputs.q.shape
    bs = mask.block_size
    out = np.empty((n, d), dtype=np.float32)
    kt = inputs.k.T
    v64 = inputs.v.astype(np.float64)
    for qb in range(nb):
        q_lo, q_hi = qb * bs, min((qb + 1) * bs, n)
        q_block = inputs.q[q_lo:q_hi]
        rows = q_hi - q_lo
        running_max = np.full(rows, -np.inf, dtype=np.float32)
        denom = np.zeros(rows, dtype=np.float64)
        acc = np.zeros((rows, d), dtype=np.float64)
        for kb in np.flatnonzero(mask.allowed[qb]):
            k_lo, k_hi = kb * bs, min((kb + 1) * bs, n)
            scores = (q_block @ kt[:, k_lo:k_hi]) * np.float32(inputs.scale)
            new_max = np.maximum(running_max, scores.max(axis=1))
            correction = np.exp((running_max - new_max).astype(np.float64))
            weights = np.exp((scores - new_max[:, None]).astype(np.float64))
            denom = denom * correction + weights.sum(axis=1)
            acc = acc * correction[:, None] + weights @ v64[k_lo:k_hi]
            running_max = new_max
        out[q_lo:q_hi] = (acc / denom[:, None]).astype(np.float32)
    return out


def flop_proxy(mask: BlockMask) -> float:
    """Fraction of (query-block, key-block) pairs actually computed."""
    return float(mask.allowed.mean())
