"""Deterministic synthetic heads planting the observed pattern families.

Maps are planted directly in probability space: each query row places a
known mass fraction ``p`` inside its pattern region (weighted by the
temporal profile across frame distances) and spreads the remainder over
the complement. That makes recall, top-k, classification, and search
results exactly derivable, which is what the test batteries rely on. The
row seed only ripples the outside mass, so the planted split stays exact
while different "prompts" still produce different maps.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .errors import ExtentTooLarge, ValidationError
from .layout import VideoGrid, position_coords, raster_order
from .masks import DualWindow, EMPTY_WINDOW, FrameGroup, HeadMaskConfig, SpatialWindow
from .metrics import AttentionProbMap

SPATIAL_KINDS = ("local", "cross", "global")
TEMPORAL_KINDS = ("invariant", "decay", "band")


@dataclass(frozen=True)
class SyntheticHeadSpec:
    """Recipe for one planted head.

    For ``local`` heads (omega, eta) are the box half-extents. For
    ``cross`` heads eta is the half-height of the full-width horizontal
    corridor and omega the half-width of the full-height vertical one.
    ``global`` ignores the extents. The temporal kind scales the region
    across frame distances: flat, geometric decay, or a band of distances
    around ``band_center``.
    """

    spatial: str
    temporal: str = "invariant"
    omega: int = 2
    eta: int = 2
    p: float = 0.9
    noise: float = 0.0
    seed: int = 0
    decay_rate: float = 0.5
    band_center: int = 1
    band_width: int = 1

    def __post_init__(self):
        if self.spatial not in SPATIAL_KINDS:
            raise ValidationError(f"spatial kind must be one of {SPATIAL_KINDS}")
        if self.temporal not in TEMPORAL_KINDS:
            raise ValidationError(f"temporal kind must be one of {TEMPORAL_KINDS}")
        if not 0 < self.p <= 1:
            raise ValidationError("in-pattern mass p must be in (0, 1]")
        if not 0 <= self.noise < 1:
            raise ValidationError("noise floor must be in [0, 1)")
        if self.temporal == "decay" and not 0 < self.decay_rate < 1:
            raise ValidationError("decay_rate must be in (0, 1)")


def temporal_weights(spec: SyntheticHeadSpec, f: int) -> np.ndarray:
    """Relative in-region weight per absolute frame distance."""
    d = np.arange(f)
    if spec.temporal == "invariant":
        return np.ones(f)
    if spec.temporal == "decay":
        return spec.decay_rate**d
    return (np.abs(d - spec.band_center) <= spec.band_width).astype(np.float64)


def _spatial_region(spec: SyntheticHeadSpec, dx: np.ndarray, dy: np.ndarray) -> np.ndarray:
    if spec.spatial == "global":
        return np.ones_like(dx, dtype=bool)
    if spec.spatial == "local":
        return (dx <= spec.omega) & (dy <= spec.eta)
    return (dy <= spec.eta) | (dx <= spec.omega)


def _check_extents(spec: SyntheticHeadSpec, grid: VideoGrid) -> None:
    if spec.spatial != "global":
        if spec.omega > grid.w - 1:
            raise ExtentTooLarge(f"omega={spec.omega} exceeds frame width {grid.w}")
        if spec.eta > grid.h - 1:
            raise ExtentTooLarge(f"eta={spec.eta} exceeds frame height {grid.h}")
    if spec.temporal == "band" and spec.band_center > grid.f - 1:
        raise ExtentTooLarge(
            f"band_center={spec.band_center} beyond max frame distance {grid.f - 1}"
        )


def gen_probmap(spec: SyntheticHeadSpec, grid: VideoGrid) -> AttentionProbMap:
    """Materialize the spec as a row-stochastic map in raster order."""
    _check_extents(spec, grid)
    perm = raster_order(grid)
    t, y, x = position_coords(grid, perm)
    dt = np.abs(t[:, None] - t[None, :])
    dy = np.abs(y[:, None] - y[None, :])
    dx = np.abs(x[:, None] - x[None, :])
    profile = temporal_weights(spec, grid.f)
    weights = _spatial_region(spec, dx, dy) * profile[dt]
    region = weights > 0

    rng = np.random.default_rng(spec.seed)
    ripple = rng.uniform(0.5, 1.5, size=weights.shape)
    outside = np.where(region, 0.0, ripple)

    in_sum = weights.sum(axis=1, keepdims=True)
    out_sum = outside.sum(axis=1, keepdims=True)
    has_in = in_sum[:, 0] > 0
    has_out = out_sum[:, 0] > 0
    in_share = np.where(has_in & has_out, spec.p, np.where(has_in, 1.0, 0.0))
    probs = np.zeros_like(weights)
    np.divide(weights, in_sum, out=probs, where=in_sum > 0)
    probs *= in_share[:, None]
    out_part = np.zeros_like(outside)
    np.divide(outside, out_sum, out=out_part, where=out_sum > 0)
    probs += out_part * (1.0 - in_share)[:, None]
    if spec.noise > 0:
        probs = (1.0 - spec.noise) * probs + spec.noise / grid.tokens
    return AttentionProbMap(probs=probs, grid=grid, perm=perm)


def gen_qkv(grid: VideoGrid, d: int, seed: int):
    """Reproducible Q/K/V in [-1, 1] for kernel-equivalence tests."""
    from .attention import AttentionInputs

    if d < 1:
        raise ValidationError("head dimension d must be >= 1")
    rng = np.random.default_rng(seed)
    n = grid.tokens
    q, k, v = (
        rng.uniform(-1.0, 1.0, size=(n, d)).astype(np.float32) for _ in range(3)
    )
    return AttentionInputs.from_qkv(q, k, v)


def gen_prompt_variant(
    spec: SyntheticHeadSpec,
    extent_jitter: int = 1,
    mass_jitter: float = 0.02,
    seed: int = 0,
) -> SyntheticHeadSpec:
    """A nearby spec from the same family, simulating prompt variation.

    Jitter is bounded to one tile step on extents and 0.02 on the mass
    fraction; zero jitter returns the spec unchanged.
    """
    if extent_jitter < 0 or extent_jitter > 4:
        raise ValidationError("extent_jitter must be in [0, 4] tokens")
    if mass_jitter < 0 or mass_jitter > 0.02 + 1e-12:
        raise ValidationError("mass_jitter must be in [0, 0.02]")
    if extent_jitter == 0 and mass_jitter == 0:
        return spec
    rng = np.random.default_rng(seed)
    omega = max(0, spec.omega + int(rng.integers(-extent_jitter, extent_jitter + 1)))
    eta = max(0, spec.eta + int(rng.integers(-extent_jitter, extent_jitter + 1)))
    p = float(np.clip(spec.p + rng.uniform(-mass_jitter, mass_jitter), 0.05, 1.0))
    return dataclasses.replace(
        spec, omega=omega, eta=eta, p=p, seed=int(rng.integers(0, 2**31))
    )


def matching_config(
    spec: SyntheticHeadSpec,
    grid: VideoGrid,
    boundaries: tuple[tuple[int, int], ...] | None = None,
) -> HeadMaskConfig:
    """Config whose membership mirrors the planted region.

    With single-group boundaries and a distance-supported temporal kind the
    token-level mask equals the region exactly, so its recall is the
    planted mass fraction. Distance bands that exclude nearby frames fall
    back to a minimal own-token window there (configs must keep the
    distance-0 group non-empty).
    """
    if spec.spatial == "global":
        window = DualWindow(w1=SpatialWindow(grid.w - 1, grid.h - 1))
    elif spec.spatial == "local":
        window = DualWindow(w1=SpatialWindow(spec.omega, spec.eta))
    else:
        window = DualWindow(
            w1=SpatialWindow(grid.w - 1, spec.eta),
            w2=SpatialWindow(spec.omega, grid.h - 1),
        )
    if boundaries is None:
        boundaries = ((0, max(0, grid.f - 1)),) if spec.temporal != "band" else tuple(
            (d, d) for d in range(grid.f)
        )
    profile = temporal_weights(spec, grid.f)
    groups = []
    for lo, hi in boundaries:
        band = profile[lo : min(hi, grid.f - 1) + 1]
        supported = band.size > 0 and band.max() > 0
        if supported:
            groups.append(FrameGroup(lo, hi, window))
        elif lo == 0:
            groups.append(FrameGroup(lo, hi, DualWindow(w1=SpatialWindow(0, 0))))
        else:
            groups.append(FrameGroup(lo, hi, EMPTY_WINDOW))
    return HeadMaskConfig(groups=tuple(groups))


def pattern_battery(grid: VideoGrid, seed: int = 0) -> dict[str, SyntheticHeadSpec]:
    """One spec per pattern family, keyed by a readable name."""
    return {
        "local-invariant": SyntheticHeadSpec(
            spatial="local", temporal="invariant", omega=2, eta=2, p=0.9, seed=seed
        ),
        "cross-invariant": SyntheticHeadSpec(
            spatial="cross", temporal="invariant", omega=0, eta=0, p=0.9, seed=seed + 1
        ),
        "global-invariant": SyntheticHeadSpec(
            spatial="global", temporal="invariant", p=0.9, seed=seed + 2
        ),
        "local-decay": SyntheticHeadSpec(
            spatial="local",
            temporal="decay",
            omega=2,
            eta=2,
            p=0.9,
            decay_rate=0.5,
            seed=seed + 3,
        ),
        "cross-band": SyntheticHeadSpec(
            spatial="cross",
            temporal="band",
            omega=0,
            eta=0,
            p=0.9,
            band_center=1,
            band_width=1,
            seed=seed + 4,
        ),
    }
