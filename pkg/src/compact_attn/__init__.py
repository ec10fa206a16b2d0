"""Desk-scale toolkit for tile-reordered block-sparse video attention."""

from .attention import (
    AttentionInputs,
    attention_prob_map,
    block_sparse_attention,
    dense_attention,
    flop_proxy,
    masked_dense_oracle,
)
from .layout import (
    Permutation,
    TileShape,
    TokenCoord,
    VideoGrid,
    coord_of,
    index_of,
    raster_order,
    tile_order,
)
from .masks import (
    BlockMask,
    DualWindow,
    FrameGroup,
    HeadMaskConfig,
    ModelMaskSchedule,
    ScheduleEntry,
    SpatialWindow,
    default_group_boundaries,
    full_config,
    member,
    member_grid,
    rasterize,
    sparsity,
    union,
)
from .metrics import (
    AttentionProbMap,
    PatternLabel,
    SpatialPattern,
    TemporalPattern,
    classify_spatial,
    classify_temporal,
    jaccard,
    mse,
    psnr,
    recall,
    topk_block_fraction,
    with_order,
)
from .search import (
    CandidateMove,
    ConfigReport,
    SearchParams,
    SearchTrace,
    evaluate_config,
    merge_prompts,
    schedule_search,
    shrink_search,
    tau_sweep,
)
from .synth import (
    SyntheticHeadSpec,
    gen_probmap,
    gen_prompt_variant,
    gen_qkv,
    matching_config,
    pattern_battery,
)

__version__ = "0.1.0"
