"""Sparse attention engine for 3D video-latent sequences.

Banded (spatial/temporal) and reduced-key (textural) attention patterns,
online per-head classification from sampled recall, a block-sparse executor
validated against an exact dense oracle, and FLOP/wall-clock accounting.
"""

from .attention import (
    AdditiveMask,
    AttentionHead,
    attention_scores,
    cross_attention,
    dense_attention,
    softmax_row,
)
from .classify import (
    RecallReport,
    SampledPair,
    SampleMode,
    classify_from_recalls,
    classify_head,
    downsample_mask,
    global_sample,
    local_sample,
    recall,
    select_bandwidth,
)
from .executor import (
    HeadAssignment,
    RunMetrics,
    SparsePlan,
    benchmark_head,
    estimate_speedup,
    run_band_attention,
    run_head,
    run_plan,
    run_textural_attention,
)
from .patterns import (
    BlockMask,
    CheckerboardSet,
    Kind,
    LatentShape,
    PatternMask,
    build_block_mask,
    checkerboard_indices,
    kept_fraction,
    render_mask_pgm,
    spatial_mask_contains,
    temporal_mask_contains,
)
from .workload import (
    DumpError,
    PlantedSpec,
    generate_planted,
    read_dump,
    write_dump,
)

__version__ = "0.1.0"
