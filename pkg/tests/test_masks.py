import numpy as np
import pytest

from compact_attn import (
    BlockMask,
    DualWindow,
    FrameGroup,
    HeadMaskConfig,
    ModelMaskSchedule,
    ScheduleEntry,
    SpatialWindow,
    TileShape,
    TokenCoord,
    VideoGrid,
    coord_of,
    default_group_boundaries,
    full_config,
    member,
    member_grid,
    raster_order,
    rasterize,
    sparsity,
    tile_order,
    union,
)
from compact_attn.errors import (
    EmptyQueryRow,
    GroupBoundaryMismatch,
    InvariantViolation,
)
from conftest import random_config


def single_group(window: DualWindow, f: int) -> HeadMaskConfig:
    return HeadMaskConfig(groups=(FrameGroup(0, max(0, f - 1), window),))


def brute_force_mask(config, grid, perm, block_size):
    """Blockwise OR of member() over every token pair."""
    n = grid.tokens
    nb = -(-n // block_size)
    allowed = np.zeros((nb, nb), dtype=bool)
    for qp in range(n):
        q = coord_of(grid, int(perm.inverse[qp]))
        for kp in range(n):
            k = coord_of(grid, int(perm.inverse[kp]))
            if member(config, grid, q, k):
                allowed[qp // block_size, kp // block_size] = True
    return allowed


class TestMember:
    def test_global_config_all_pairs(self):
        grid = VideoGrid(2, 3, 3)
        config = single_group(DualWindow(w1=SpatialWindow(grid.w - 1, grid.h - 1)), grid.f)
        for qi in range(grid.tokens):
            for ki in range(grid.tokens):
                assert member(config, grid, coord_of(grid, qi), coord_of(grid, ki))

    def test_cross_window_pair(self):
        grid = VideoGrid(1, 8, 8)
        window = DualWindow(
            w1=SpatialWindow(omega=grid.w - 1, eta=0),
            w2=SpatialWindow(omega=0, eta=grid.h - 1),
        )
        config = single_group(window, grid.f)
        assert member(config, grid, TokenCoord(0, 3, 3), TokenCoord(0, 3, 7))
        assert not member(config, grid, TokenCoord(0, 3, 3), TokenCoord(0, 5, 7))

    def test_distant_group_with_empty_window(self):
        grid = VideoGrid(4, 4, 4)
        config = HeadMaskConfig(
            groups=(
                FrameGroup(0, 1, DualWindow(w1=SpatialWindow(1, 1))),
                FrameGroup(2, 3, DualWindow(w1=None, w2=None)),
            )
        )
        q = TokenCoord(0, 2, 2)
        assert not member(config, grid, q, TokenCoord(2, 2, 2))
        assert not member(config, grid, q, TokenCoord(3, 1, 1))
        assert member(config, grid, q, TokenCoord(1, 2, 3))

    def test_translation_consistency(self, rng):
        # Membership depends only on the absolute coordinate deltas.
        grid = VideoGrid(4, 8, 8)
        config = random_config(grid, rng)
        for _ in range(200):
            dt, dy, dx = rng.integers(0, 4), rng.integers(-7, 8), rng.integers(-7, 8)
            spots = []
            for _ in range(2):
                qt = rng.integers(0, grid.f - dt)
                qy = rng.integers(max(0, -dy), min(grid.h, grid.h - dy))
                qx = rng.integers(max(0, -dx), min(grid.w, grid.w - dx))
                q = TokenCoord(int(qt), int(qy), int(qx))
                k = TokenCoord(int(qt + dt), int(qy + dy), int(qx + dx))
                spots.append(member(config, grid, q, k))
            assert spots[0] == spots[1]

    def test_shrinking_extent_is_antitone(self, rng):
        grid = VideoGrid(2, 6, 6)
        big = single_group(DualWindow(w1=SpatialWindow(3, 2)), grid.f)
        small = single_group(DualWindow(w1=SpatialWindow(2, 2)), grid.f)
        grid_big = member_grid(big, grid, raster_order(grid))
        grid_small = member_grid(small, grid, raster_order(grid))
        assert not (grid_small & ~grid_big).any()

    def test_cross_region_smaller_than_bounding_box(self):
        # Complementary windows leave the box corners out.
        grid = VideoGrid(1, 8, 8)
        for w1, w2 in (((5, 1), (1, 4)), ((6, 0), (2, 5)), ((4, 2), (0, 6))):
            assert (w1[0] - w2[0]) * (w1[1] - w2[1]) < 0
            cross = single_group(
                DualWindow(w1=SpatialWindow(*w1), w2=SpatialWindow(*w2)), grid.f
            )
            bbox = single_group(
                DualWindow(w1=SpatialWindow(max(w1[0], w2[0]), max(w1[1], w2[1]))),
                grid.f,
            )
            perm = raster_order(grid)
            cross_pairs = member_grid(cross, grid, perm)
            bbox_pairs = member_grid(bbox, grid, perm)
            assert not (cross_pairs & ~bbox_pairs).any()
            assert cross_pairs.sum() < bbox_pairs.sum()


class TestRasterize:
    def test_global_config_full_mask(self):
        grid = VideoGrid(2, 4, 4)
        config = full_config(grid, default_group_boundaries(grid.f))
        mask = rasterize(config, grid, raster_order(grid), 8)
        assert mask.allowed.all()
        assert sparsity(mask) == 0.0

    def test_frame_local_identity_blocks(self):
        # Distance-0 frames only, global spatial window, one tile per frame.
        grid = VideoGrid(2, 2, 2)
        config = HeadMaskConfig(
            groups=(
                FrameGroup(0, 0, DualWindow(w1=SpatialWindow(1, 1))),
                FrameGroup(1, 1, DualWindow(w1=None, w2=None)),
            )
        )
        perm = tile_order(grid, TileShape(1, 2, 2))
        mask = rasterize(config, grid, perm, 4)
        assert np.array_equal(mask.allowed, np.eye(2, dtype=bool))

    def test_block_one_raster_equals_member_grid(self, rng):
        grid = VideoGrid(2, 4, 5)
        config = random_config(grid, rng)
        perm = raster_order(grid)
        mask = rasterize(config, grid, perm, 1)
        assert np.array_equal(mask.allowed, member_grid(config, grid, perm))

    @pytest.mark.parametrize("block_size", [1, 3, 4, 16])
    def test_matches_brute_force_or(self, block_size, rng):
        grid = VideoGrid(2, 4, 4)
        for _ in range(4):
            config = random_config(grid, rng)
            for perm in (raster_order(grid), tile_order(grid, TileShape(1, 2, 2))):
                mask = rasterize(config, grid, perm, block_size)
                assert np.array_equal(
                    mask.allowed, brute_force_mask(config, grid, perm, block_size)
                )

    def test_member_pair_implies_block_allowed(self, rng):
        grid = VideoGrid(3, 4, 4)
        config = random_config(grid, rng)
        perm = raster_order(grid)
        mask = rasterize(config, grid, perm, 8)
        token = member_grid(config, grid, perm)
        for qp, kp in zip(*np.nonzero(token)):
            assert mask.allowed[qp // 8, kp // 8]


class TestSparsity:
    def test_full_mask(self):
        assert sparsity(BlockMask(4, np.ones((4, 4), dtype=bool))) == 0.0

    def test_diagonal_mask(self):
        assert sparsity(BlockMask(4, np.eye(4, dtype=bool))) == 0.75

    def test_headline_fraction(self):
        allowed = np.ones(1000, dtype=bool)
        allowed[:459] = False
        mask = BlockMask(4, allowed.reshape(25, 40))
        assert sparsity(mask) == pytest.approx(0.459)


class TestUnion:
    def grid(self):
        return VideoGrid(4, 8, 8)

    def test_full_is_absorbing(self, rng):
        grid = self.grid()
        boundaries = default_group_boundaries(grid.f)
        full = full_config(grid, boundaries)
        cfg = random_config_with_boundaries(grid, boundaries, rng)
        assert union(cfg, full) == full
        assert union(full, cfg) == full

    def test_idempotent(self, rng):
        grid = self.grid()
        cfg = random_config(grid, rng)
        assert union(cfg, cfg) == cfg

    def test_membership_superset(self, rng):
        grid = self.grid()
        boundaries = default_group_boundaries(grid.f)
        perm = raster_order(grid)
        for _ in range(5):
            a = random_config_with_boundaries(grid, boundaries, rng)
            b = random_config_with_boundaries(grid, boundaries, rng)
            merged = union(a, b)
            either = member_grid(a, grid, perm) | member_grid(b, grid, perm)
            assert not (either & ~member_grid(merged, grid, perm)).any()

    def test_boundary_mismatch(self, rng):
        grid = self.grid()
        a = full_config(grid, ((0, 0), (1, 3)))
        b = full_config(grid, ((0, 1), (2, 3)))
        with pytest.raises(GroupBoundaryMismatch):
            union(a, b)


def random_config_with_boundaries(grid, boundaries, rng):
    groups = []
    for idx, (lo, hi) in enumerate(boundaries):
        if idx > 0 and rng.random() < 0.25:
            groups.append(FrameGroup(lo, hi, DualWindow(w1=None, w2=None)))
            continue
        w1 = SpatialWindow(int(rng.integers(0, grid.w)), int(rng.integers(0, grid.h)))
        w2 = (
            SpatialWindow(int(rng.integers(0, grid.w)), int(rng.integers(0, grid.h)))
            if rng.random() < 0.6
            else None
        )
        groups.append(FrameGroup(lo, hi, DualWindow(w1=w1, w2=w2)))
    return HeadMaskConfig(groups=tuple(groups))


class TestFullConfig:
    def test_member_everywhere_and_zero_sparsity(self):
        grid = VideoGrid(3, 4, 4)
        config = full_config(grid, default_group_boundaries(grid.f))
        perm = raster_order(grid)
        assert member_grid(config, grid, perm).all()
        assert sparsity(rasterize(config, grid, perm, 8)) == 0.0


class TestConfigInvariants:
    def test_distance_zero_group_must_be_nonempty(self):
        with pytest.raises(InvariantViolation):
            HeadMaskConfig(groups=(FrameGroup(0, 3, DualWindow(w1=None, w2=None)),))

    def test_groups_must_start_at_zero(self):
        with pytest.raises(InvariantViolation):
            HeadMaskConfig(groups=(FrameGroup(1, 3, DualWindow(w1=SpatialWindow(1, 1))),))

    def test_groups_must_be_contiguous(self):
        with pytest.raises(InvariantViolation):
            HeadMaskConfig(
                groups=(
                    FrameGroup(0, 0, DualWindow(w1=SpatialWindow(1, 1))),
                    FrameGroup(2, 3, DualWindow(w1=SpatialWindow(1, 1))),
                )
            )

    def test_coverage_check_against_grid(self):
        config = HeadMaskConfig(groups=(FrameGroup(0, 1, DualWindow(w1=SpatialWindow(1, 1))),))
        with pytest.raises(InvariantViolation):
            config.validate_for_grid(VideoGrid(4, 2, 2))

    def test_default_boundaries_cover_grid(self):
        for f in (1, 2, 3, 7, 8, 12, 40):
            boundaries = default_group_boundaries(f)
            assert boundaries[0][0] == 0
            assert boundaries[-1][1] >= f - 1
            for (lo1, hi1), (lo2, hi2) in zip(boundaries, boundaries[1:]):
                assert lo2 == hi1 + 1

    def test_empty_query_row_detected(self):
        mask = BlockMask(2, np.array([[True, False], [False, False]]))
        with pytest.raises(EmptyQueryRow):
            mask.check_rows()


class TestSchedule:
    def window(self):
        return DualWindow(w1=SpatialWindow(1, 1))

    def config(self):
        return HeadMaskConfig(groups=(FrameGroup(0, 3, self.window()),))

    def test_overlapping_ranges_rejected(self):
        with pytest.raises(InvariantViolation):
            ModelMaskSchedule(
                full_attention_prefix=2,
                entries=(
                    ScheduleEntry(0, 0, 2, 6, self.config()),
                    ScheduleEntry(0, 0, 5, 9, self.config()),
                ),
            )

    def test_gap_rejected(self):
        with pytest.raises(InvariantViolation):
            ModelMaskSchedule(
                full_attention_prefix=2,
                entries=(
                    ScheduleEntry(0, 0, 2, 4, self.config()),
                    ScheduleEntry(0, 0, 6, 8, self.config()),
                ),
            )

    def test_must_start_at_prefix(self):
        with pytest.raises(InvariantViolation):
            ModelMaskSchedule(
                full_attention_prefix=2,
                entries=(ScheduleEntry(0, 0, 3, 5, self.config()),),
            )

    def test_config_lookup(self):
        schedule = ModelMaskSchedule(
            full_attention_prefix=2,
            entries=(
                ScheduleEntry(0, 0, 2, 4, self.config()),
                ScheduleEntry(0, 0, 5, 7, self.config()),
            ),
        )
        assert schedule.config_at(0, 0, 1) is None
        assert schedule.config_at(0, 0, 4) == self.config()
        with pytest.raises(InvariantViolation):
            schedule.config_at(0, 0, 8)
