import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from compact_attn import (
    TileShape,
    TokenCoord,
    VideoGrid,
    coord_of,
    index_of,
    raster_order,
    tile_order,
)
from compact_attn.errors import NonDivisibleTile, OutOfRange, ValidationError
from compact_attn.layout import Permutation, position_coords


def brute_force_tile_order(grid: VideoGrid, tile: TileShape) -> list[int]:
    """Independent oracle: enumerate tiles in raster order, locals within."""
    sequence = []
    for tt in range(grid.f // tile.tf):
        for ty in range(grid.h // tile.th):
            for tx in range(grid.w // tile.tw):
                for lt in range(tile.tf):
                    for ly in range(tile.th):
                        for lx in range(tile.tw):
                            coord = TokenCoord(
                                t=tt * tile.tf + lt,
                                y=ty * tile.th + ly,
                                x=tx * tile.tw + lx,
                            )
                            sequence.append(index_of(grid, coord))
    return sequence


small_grids = st.builds(
    VideoGrid,
    f=st.integers(1, 3),
    h=st.integers(1, 6),
    w=st.integers(1, 6),
)


def divisible_tiles(grid: VideoGrid):
    def divisors(n):
        return [d for d in range(1, n + 1) if n % d == 0]

    return st.builds(
        TileShape,
        tf=st.sampled_from(divisors(grid.f)),
        th=st.sampled_from(divisors(grid.h)),
        tw=st.sampled_from(divisors(grid.w)),
    )


class TestRasterOrder:
    def test_single_token(self):
        assert raster_order(VideoGrid(1, 1, 1)).forward.tolist() == [0]

    def test_2x2x2_identity(self):
        assert raster_order(VideoGrid(2, 2, 2)).forward.tolist() == list(range(8))

    @given(small_grids)
    def test_forward_inverse_compose_to_identity(self, grid):
        perm = raster_order(grid)
        assert np.array_equal(perm.forward[perm.inverse], np.arange(grid.tokens))
        assert np.array_equal(perm.inverse[perm.forward], np.arange(grid.tokens))


class TestTileOrder:
    def test_tile_equals_grid_is_identity(self):
        perm = tile_order(VideoGrid(2, 2, 2), TileShape(2, 2, 2))
        assert perm.forward.tolist() == list(range(8))

    def test_column_pair_grouping(self):
        # Columns {0,1} of both rows come before columns {2,3}.
        perm = tile_order(VideoGrid(1, 2, 4), TileShape(1, 2, 2))
        assert perm.forward.tolist() == [0, 1, 4, 5, 2, 3, 6, 7]
        assert perm.inverse.tolist() == [0, 1, 4, 5, 2, 3, 6, 7]

    def test_frame_tiles_are_identity(self):
        perm = tile_order(VideoGrid(2, 2, 2), TileShape(1, 2, 2))
        assert perm.forward.tolist() == list(range(8))

    def test_unit_tile_equals_raster(self):
        grid = VideoGrid(2, 3, 4)
        assert tile_order(grid, TileShape(1, 1, 1)) == raster_order(grid)

    def test_non_divisible_tile_rejected(self):
        with pytest.raises(NonDivisibleTile):
            tile_order(VideoGrid(2, 3, 4), TileShape(1, 2, 2))

    @given(small_grids.flatmap(lambda g: st.tuples(st.just(g), divisible_tiles(g))))
    def test_matches_brute_force_enumeration(self, grid_and_tile):
        grid, tile = grid_and_tile
        perm = tile_order(grid, tile)
        # The oracle lists raster indices in their new order, i.e. the inverse.
        assert perm.inverse.tolist() == brute_force_tile_order(grid, tile)

    @given(small_grids.flatmap(lambda g: st.tuples(st.just(g), divisible_tiles(g))))
    def test_bijection(self, grid_and_tile):
        grid, tile = grid_and_tile
        perm = tile_order(grid, tile)
        assert sorted(perm.forward.tolist()) == list(range(grid.tokens))

    def test_tile_tokens_contiguous(self):
        grid, tile = VideoGrid(2, 4, 4), TileShape(1, 2, 2)
        perm = tile_order(grid, tile)
        t, y, x = position_coords(grid, perm)
        tile_ids = (t // tile.tf, y // tile.th, x // tile.tw)
        runs = {}
        for pos in range(grid.tokens):
            key = (tile_ids[0][pos], tile_ids[1][pos], tile_ids[2][pos])
            runs.setdefault(key, []).append(pos)
        for positions in runs.values():
            assert positions == list(range(positions[0], positions[0] + tile.tokens))


class TestCoordIndex:
    def test_first_token(self):
        assert coord_of(VideoGrid(2, 3, 4), 0) == TokenCoord(0, 0, 0)

    def test_last_token(self):
        assert coord_of(VideoGrid(2, 3, 4), 23) == TokenCoord(1, 2, 3)

    def test_roundtrip_all_indices(self):
        grid = VideoGrid(3, 4, 5)
        for i in range(grid.tokens):
            assert index_of(grid, coord_of(grid, i)) == i

    def test_out_of_range(self):
        with pytest.raises(OutOfRange):
            coord_of(VideoGrid(2, 3, 4), 24)
        with pytest.raises(OutOfRange):
            index_of(VideoGrid(2, 3, 4), TokenCoord(0, 3, 0))


class TestValidation:
    def test_bad_grid(self):
        with pytest.raises(ValidationError):
            VideoGrid(0, 1, 1)

    def test_bad_tile(self):
        with pytest.raises(ValidationError):
            TileShape(1, 0, 1)

    def test_from_forward_rejects_non_bijection(self):
        with pytest.raises(ValidationError):
            Permutation.from_forward(np.array([0, 0, 1]))
