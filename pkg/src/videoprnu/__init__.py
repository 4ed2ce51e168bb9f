"""PRNU-based source camera verification for stabilized videos.

Library layout:

* :mod:`videoprnu.prnu` - noise residuals, fingerprints, NCC/PCE matching
* :mod:`videoprnu.geometry` - corner warps, homographies, NN warping
* :mod:`videoprnu.search` - hierarchical grid search over inverse warps
* :mod:`videoprnu.pipeline` - triage, validation, aggregation, decision
* :mod:`videoprnu.synth` - synthetic ground-truth bench and oracles
* :mod:`videoprnu.io` - frame ingestion, fingerprint files, run config
* :mod:`videoprnu.cli` - command-line interface
"""

from .geometry import (
    BlockGeometry,
    CornerWarp,
    Homography,
    corners_to_homography,
    decompose_fixed_vertex,
    inverse_warp,
)
from .prnu import (
    Fingerprint,
    Frame,
    NoiseResidual,
    PceResult,
    compute_pce,
    estimate_fingerprint,
    extract_noise,
    ncc_surface,
)
from .pipeline import (
    PipelineConfig,
    ValidationParams,
    VideoVerdict,
    aggregate_and_decide,
    crop_center,
    stb_chk,
    stb_lite,
    sub_blocks,
    validate_transform,
    verify_video,
)
from .search import ScoredTransform, SearchConfig, SearchTrace, hgs_search, shift_search

__version__ = "0.1.0"

__all__ = [
    "BlockGeometry",
    "CornerWarp",
    "Homography",
    "corners_to_homography",
    "decompose_fixed_vertex",
    "inverse_warp",
    "Fingerprint",
    "Frame",
    "NoiseResidual",
    "PceResult",
    "compute_pce",
    "estimate_fingerprint",
    "extract_noise",
    "ncc_surface",
    "PipelineConfig",
    "ValidationParams",
    "VideoVerdict",
    "aggregate_and_decide",
    "crop_center",
    "stb_chk",
    "stb_lite",
    "sub_blocks",
    "validate_transform",
    "verify_video",
    "ScoredTransform",
    "SearchConfig",
    "SearchTrace",
    "hgs_search",
    "shift_search",
    "__version__",
]
