import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from compact_attn import (
    DualWindow,
    FrameGroup,
    HeadMaskConfig,
    SpatialWindow,
    VideoGrid,
)

settings.register_profile(
    "suite",
    max_examples=25,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("suite")


def random_config(grid: VideoGrid, rng: np.random.Generator) -> HeadMaskConfig:
    """A structurally valid config with random boundaries and windows."""
    cuts = sorted(
        rng.choice(np.arange(1, grid.f), size=min(grid.f - 1, int(rng.integers(0, 3))), replace=False).tolist()
    ) if grid.f > 1 else []
    edges = [0, *cuts, grid.f]
    boundaries = [(edges[i], edges[i + 1] - 1) for i in range(len(edges) - 1)]
    groups = []
    for idx, (lo, hi) in enumerate(boundaries):
        if idx > 0 and rng.random() < 0.2:
            groups.append(FrameGroup(lo, hi, DualWindow(w1=None, w2=None)))
            continue
        w1 = SpatialWindow(
            omega=int(rng.integers(0, grid.w)), eta=int(rng.integers(0, grid.h))
        )
        w2 = None
        if rng.random() < 0.6:
            w2 = SpatialWindow(
                omega=int(rng.integers(0, grid.w)), eta=int(rng.integers(0, grid.h))
            )
        groups.append(FrameGroup(lo, hi, DualWindow(w1=w1, w2=w2)))
    return HeadMaskConfig(groups=tuple(groups))


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
