"""Seven-step verification pipeline: triage, crop, search, validate, aggregate, decide.

Triage first classifies the video: a high self-consistency match between
fingerprints from the first and last thirds means unstabilized (attributed
by direct matching); otherwise a frame-level affine alignment test detects
weak stabilization (attributed when the aligned aggregate matches the
reference); the remainder runs the strong pipeline: per-frame block
search over projective corner warps, transform validation against block
and sub-block PCE thresholds, rank-wise weighted aggregation of the top-5
transforms, and a 3-of-5 decision rule.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .geometry import BlockGeometry, affine_about_center, nn_resample, translation_homography
from .prnu import (
    CorrelationWindow,
    Fingerprint,
    Frame,
    NoiseResidual,
    compute_pce,
    estimate_fingerprint,
    extract_noise,
    score_blocks,
)
from .search import (
    ScoredTransform,
    SearchConfig,
    SearchTrace,
    build_reference_window,
    hgs_search,
    unwarp_block_values,
)

__all__ = [
    "ValidationParams",
    "PipelineConfig",
    "TransformVerdict",
    "FrameVerdict",
    "RankEstimate",
    "VideoVerdict",
    "crop_center",
    "sub_blocks",
    "weight_mask_default",
    "transform_passes",
    "decide",
    "stb_chk",
    "stb_lite",
    "validate_transform",
    "aggregate_and_decide",
    "verify_video",
    "decision_score",
    "build_report",
    "report_json",
]

REPORT_SCHEMA_VERSION = "1"


@dataclass(frozen=True)
class ValidationParams:
    """Transform acceptance thresholds: block PCE and sub-block coherence."""

    pce_vld: float = 28.0
    n_sub: int = 2
    pce_sub: float = 2.0

    def __post_init__(self):
        if not np.isfinite(self.pce_vld) or self.pce_vld < 0:
            raise ValueError("pce_vld must be finite and >= 0")
        if not 0 <= self.n_sub <= 4:
            raise ValueError("n_sub must be in 0..4")
        if not np.isfinite(self.pce_sub):
            raise ValueError("pce_sub must be finite")


@dataclass(frozen=True)
class PipelineConfig:
    block_size: int = 500
    n_frames: int = 5
    stb_chk_threshold: float = 60.0
    stb_lite_threshold: float = 100.0
    stb_lite_frame_accept: float = 38.0
    decision_threshold: float = 60.0
    stb_scales: tuple[float, ...] = (0.99, 1.0, 1.01)
    stb_rotation_max_deg: float = 1.5
    stb_rotation_step_deg: float = 0.1
    denoise_strength: float = 3.0
    search: SearchConfig = field(default_factory=SearchConfig)
    validation: ValidationParams = field(default_factory=ValidationParams)
    triage_mode: str = "auto"  # "auto" | "skip_to_strong"
    include_timings: bool = False

    def __post_init__(self):
        if self.block_size < 2 or self.block_size % 2:
            raise ValueError("block_size must be even and >= 2")
        if self.n_frames < 1:
            raise ValueError("n_frames must be >= 1")
        for name in ("stb_chk_threshold", "stb_lite_threshold", "stb_lite_frame_accept", "decision_threshold"):
            if not np.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        if self.triage_mode not in ("auto", "skip_to_strong"):
            raise ValueError("triage_mode must be 'auto' or 'skip_to_strong'")

    @classmethod
    def test_mode(cls, **overrides) -> "PipelineConfig":
        """Reduced-scale configuration for fast runs.

        Same grid structure as the full pipeline (steps 4/2/1, top-5), with
        128x128 blocks, a +/-20 shift window, and float32 scoring; only the
        PCE signal-to-noise changes, never the evaluation counts.
        """
        base = dict(
            block_size=128,
            search=SearchConfig(shift_range=20, dtype="float32"),
        )
        base.update(overrides)
        return cls(**base)

    def rotations_deg(self) -> np.ndarray:
        n = int(round(self.stb_rotation_max_deg / self.stb_rotation_step_deg))
        return self.stb_rotation_step_deg * np.arange(-n, n + 1)


@dataclass(frozen=True)
class TransformVerdict:
    transform: ScoredTransform
    validated: bool
    sub_pces: tuple[float, float, float, float]


@dataclass(frozen=True)
class FrameVerdict:
    frame_index: int
    top: tuple[TransformVerdict, ...]

    @property
    def eliminated(self) -> bool:
        return not any(t.validated for t in self.top)


@dataclass(frozen=True)
class RankEstimate:
    rank: int
    pce: float
    n_frames: int


@dataclass(frozen=True)
class StbChkResult:
    stabilized: bool
    pce: float


@dataclass(frozen=True)
class StbLiteFrame:
    frame_index: int
    pce: float
    rotation_deg: float
    scale: float
    shift: tuple[int, int]
    accepted: bool


@dataclass(frozen=True)
class StbLiteResult:
    weakly_stabilized: bool
    aggregate_pce: float
    per_frame: tuple[StbLiteFrame, ...]


@dataclass(frozen=True)
class VideoVerdict:
    triage: str  # unstabilized | weakly_stabilized | strongly_stabilized
    decision: str  # match | no_match
    decision_rule: str  # triage_direct | stb_lite | rank_top5
    rank_estimates: tuple[RankEstimate, ...]
    frames_eliminated: int
    frame_verdicts: tuple[FrameVerdict, ...]
    stb_chk_pce: Optional[float]
    stb_lite_pce: Optional[float]
    transforms_evaluated: int
    unique_transforms: int
    flags: tuple[str, ...] = ()


def crop_center(values, size: int) -> tuple[np.ndarray, BlockGeometry]:
    """Central square block; floor division splits odd margins."""
    arr = values.values if isinstance(values, NoiseResidual) else np.asarray(values)
    h, w = arr.shape
    if h < size or w < size:
        raise ValueError(f"frame {w}x{h} smaller than block size {size}")
    x0 = (w - size) // 2
    y0 = (h - size) // 2
    return arr[y0 : y0 + size, x0 : x0 + size], BlockGeometry(origin_xy=(x0, y0), size=size)


def sub_blocks(block: np.ndarray) -> list[tuple[np.ndarray, tuple[int, int]]]:
    """Four non-overlapping quadrants with their (x, y) origins in the block."""
    s = block.shape[0]
    if block.shape[0] != block.shape[1] or s % 2:
        raise ValueError("block must be square with even size")
    h = s // 2
    return [
        (block[0:h, 0:h], (0, 0)),
        (block[0:h, h:s], (h, 0)),
        (block[h:s, 0:h], (0, h)),
        (block[h:s, h:s], (h, h)),
    ]


def weight_mask_default(frame: Frame) -> np.ndarray:
    """Per-pixel reliability weights: the frame's mask, or uniform ones."""
    if frame.weight_mask is not None:
        return frame.weight_mask
    return np.ones_like(frame.pixels, dtype=np.float64)


def transform_passes(pce: float, sub_pces, params: ValidationParams) -> bool:
    """The transform validation rule.

    Accepted iff the block PCE clears ``pce_vld`` and at least ``n_sub`` of
    the sub-block PCEs clear ``pce_sub`` (both thresholds inclusive).
    """
    n_pass = sum(1 for p in sub_pces if p >= params.pce_sub)
    return pce >= params.pce_vld and n_pass >= params.n_sub


def decide(rank_pces, decision_threshold: float) -> str:
    """The 3-of-top-5 attribution rule over rank-estimate PCEs."""
    n_match = sum(1 for p in rank_pces if p >= decision_threshold)
    return "match" if n_match >= 3 else "no_match"


def full_frame_pce(a: np.ndarray, b: np.ndarray, exclude_radius: int = 5, at_zero: bool = False):
    """Equal-size circular PCE; peak searched over all shifts or pinned at lag 0."""
    if a.shape != b.shape:
        raise ValueError("fields must have equal shape")
    m = (min(a.shape) - 1) // 2
    return compute_pce(
        a, b, max_shift=m, exclude_radius=exclude_radius, peak_at=(0, 0) if at_zero else None
    )


def _residuals_for(frames: Sequence[Frame], cfg: PipelineConfig, cache: Optional[dict] = None):
    out = []
    for f in frames:
        key = id(f)
        if cache is not None and key in cache:
            out.append(cache[key])
            continue
        res = extract_noise(f, denoise_strength=cfg.denoise_strength)
        if cache is not None:
            cache[key] = res
        out.append(res)
    return out


def stb_chk(
    frames: Sequence[Frame], cfg: PipelineConfig, residuals: Optional[Sequence[NoiseResidual]] = None
) -> StbChkResult:
    """Stabilization presence test.

    Fingerprints estimated from the first and last thirds of the frame list
    are matched against each other at their natural alignment (peak pinned
    at lag zero); a PCE below the threshold means the pattern moved between
    segments, i.e. the video is stabilized.  A rigid whole-video crop is
    deliberately not compensated here: such a video routes through the
    affine test, which searches all shifts.
    """
    n = len(frames)
    if n < 6:
        raise ValueError("stb_chk needs at least 6 frames")
    if residuals is None:
        residuals = _residuals_for(frames, cfg)
    third = n // 3
    first = estimate_fingerprint(residuals[:third], frames[:third])
    last = estimate_fingerprint(residuals[n - third :], frames[n - third :])
    res = full_frame_pce(
        first.values.astype(np.float64), last.values.astype(np.float64), at_zero=True
    )
    return StbChkResult(stabilized=res.pce < cfg.stb_chk_threshold, pce=res.pce)


def stb_lite(
    frames: Sequence[Frame],
    ref: Fingerprint,
    cfg: PipelineConfig,
    residuals: Optional[Sequence[NoiseResidual]] = None,
) -> StbLiteResult:
    """Weak-stabilization test by frame-level affine alignment.

    Each frame's residual is aligned to the reference over the configured
    scale factors, rotations, and all shifts; frames whose best PCE clears
    the acceptance threshold are aggregated, and the video is weakly
    stabilized when the aggregate matches the reference.
    """
    if len(frames) < 1:
        raise ValueError("stb_lite needs at least one frame")
    if residuals is None:
        residuals = _residuals_for(frames, cfg)
    ref_vals = ref.values.astype(np.float64)
    if residuals[0].values.shape != ref_vals.shape:
        raise ValueError("stb_lite expects frame-sized reference")
    h, w = ref_vals.shape
    center = ((w - 1) / 2.0, (h - 1) / 2.0)
    rotations = cfg.rotations_deg()
    window = CorrelationWindow(ref_vals, max_shift=(min(h, w) - 1) // 2)
    per_frame = []
    aligned_sum = np.zeros((h, w))
    aligned_weight = np.zeros((h, w))
    n_accepted = 0
    for frame, res in zip(frames, residuals):
        best = None
        for scale in cfg.stb_scales:
            for rot in rotations:
                a = affine_about_center(center, float(rot), float(scale))
                vals, valid = nn_resample(res.values, a.m, (0, 0), (h, w))
                pce, peak_xy, _, _ = score_blocks(
                    vals[None],
                    window,
                    masks=None if valid.all() else valid[None],
                    workers=cfg.search.workers,
                )
                if not np.isfinite(pce[0]):
                    continue
                key = (-pce[0], abs(rot), rot, scale)
                if best is None or key < best[0]:
                    best = (
                        key,
                        StbLiteFrame(
                            frame_index=frame.frame_index,
                            pce=float(pce[0]),
                            rotation_deg=float(rot),
                            scale=float(scale),
                            shift=(int(peak_xy[0, 0]), int(peak_xy[0, 1])),
                            accepted=False,
                        ),
                    )
        if best is None:
            continue
        entry = best[1]
        accepted = entry.pce >= cfg.stb_lite_frame_accept
        entry = replace(entry, accepted=accepted)
        per_frame.append(entry)
        if accepted:
            a = affine_about_center(center, entry.rotation_deg, entry.scale)
            vals, valid = nn_resample(
                res.values, a.m, (-entry.shift[0], -entry.shift[1]), (h, w)
            )
            aligned_sum += np.where(valid, vals, 0.0)
            aligned_weight += valid
            n_accepted += 1
    if n_accepted == 0:
        return StbLiteResult(False, 0.0, tuple(per_frame))
    aggregate = np.divide(
        aligned_sum, aligned_weight, out=np.zeros_like(aligned_sum), where=aligned_weight > 0
    )
    agg = full_frame_pce(aggregate, ref_vals)
    return StbLiteResult(agg.pce >= cfg.stb_lite_threshold, agg.pce, tuple(per_frame))


def _sub_windows(ref, geom: BlockGeometry, cfg: PipelineConfig, dtype):
    half = geom.size // 2
    windows = []
    for off in [(0, 0), (half, 0), (0, half), (half, half)]:
        sub_geom = BlockGeometry(
            origin_xy=(geom.origin_xy[0] + off[0], geom.origin_xy[1] + off[1]), size=half
        )
        windows.append(build_reference_window(ref, sub_geom, cfg.search.shift_range, dtype=dtype))
    return windows


def validate_transform(
    block: np.ndarray,
    transform: ScoredTransform,
    geom: BlockGeometry,
    params: ValidationParams,
    cfg: PipelineConfig,
    sub_windows,
) -> TransformVerdict:
    """Transform acceptance: block PCE plus sub-block coherence.

    The four quadrants of the inverse-warped block are matched at the
    transform's own shift (no new search); the transform is validated when
    the block PCE clears pce_vld and at least n_sub quadrant PCEs clear
    pce_sub.
    """
    und, valid = unwarp_block_values(block, transform.warp, geom)
    subs = sub_blocks(und)
    masks = sub_blocks(valid.astype(np.float64))
    sub_pces = []
    for (sub, _), (mask, _), window in zip(subs, masks, sub_windows):
        mask_b = mask > 0
        if not mask_b.any():
            sub_pces.append(0.0)  # fully masked quadrant can never validate
            continue
        pce, _, _, _ = score_blocks(
            sub[None],
            window,
            peak_at=np.asarray([transform.shift]),
            masks=None if mask_b.all() else mask_b[None],
            workers=cfg.search.workers,
        )
        sub_pces.append(float(pce[0]) if np.isfinite(pce[0]) else 0.0)
    validated = transform_passes(transform.pce, sub_pces, params)
    return TransformVerdict(transform=transform, validated=validated, sub_pces=tuple(sub_pces))


def aggregate_and_decide(
    frame_verdicts: Sequence[FrameVerdict],
    frames: Sequence[Frame],
    residuals: Sequence[NoiseResidual],
    ref: Fingerprint,
    geom: BlockGeometry,
    cfg: PipelineConfig,
) -> tuple[tuple[RankEstimate, ...], str, int]:
    """Rank-wise weighted aggregation and the 3-of-top-5 decision.

    For rank r, the r-th best validated transform of each frame contributes
    its inverse-warped block, aligned at the matched shift; weight masks are
    warped by the same transform and normalize the per-pixel average.  The
    video matches when at least three rank estimates clear the decision
    threshold.  Frames with no validated transform contribute nothing (a
    fully eliminated video scores zero everywhere).
    """
    if len(frame_verdicts) == 0:
        raise ValueError("need at least one frame verdict")
    window = build_reference_window(ref, geom, cfg.search.shift_range)
    n_ranks = cfg.search.top_k
    estimates = []
    for rank in range(1, n_ranks + 1):
        num = np.zeros((geom.size, geom.size))
        den = np.zeros((geom.size, geom.size))
        n_used = 0
        for fv, frame, res in zip(frame_verdicts, frames, residuals):
            if len(fv.top) < rank:
                continue
            tv = fv.top[rank - 1]
            if not tv.validated:
                continue
            t = tv.transform
            block, bgeom = crop_center(res.values, geom.size)
            mask_block, _ = crop_center(weight_mask_default(frame), geom.size)
            offset = (-t.shift[0], -t.shift[1])
            vals, valid = unwarp_block_values(block, t.warp, bgeom, offset_xy=offset)
            wvals, wvalid = unwarp_block_values(mask_block, t.warp, bgeom, offset_xy=offset)
            weight = wvals * (valid & wvalid)
            num += vals * weight
            den += weight
            n_used += 1
        if n_used == 0:
            estimates.append(RankEstimate(rank=rank, pce=0.0, n_frames=0))
            continue
        est = np.divide(num, den, out=np.zeros_like(num), where=den > 0)
        try:
            res_pce = compute_pce(est, window, max_shift=cfg.search.shift_range)
            pce_val = res_pce.pce
        except ValueError:
            pce_val = 0.0
        estimates.append(RankEstimate(rank=rank, pce=pce_val, n_frames=n_used))
    decision = decide([e.pce for e in estimates], cfg.decision_threshold)
    eliminated = sum(1 for fv in frame_verdicts if fv.eliminated)
    return tuple(estimates), decision, eliminated


def decision_score(rank_estimates: Sequence[RankEstimate]) -> float:
    """Third-largest rank PCE: the video matches at threshold t iff score >= t."""
    pces = sorted((e.pce for e in rank_estimates), reverse=True)
    while len(pces) < 3:
        pces.append(0.0)
    return pces[2]


def verify_video(
    frames: Sequence[Frame],
    ref: Fingerprint,
    cfg: PipelineConfig,
) -> VideoVerdict:
    """Full seven-step verification of one video against one camera."""
    if len(frames) == 0:
        raise ValueError("no frames to verify")
    flags: list[str] = []
    res_cache: dict = {}
    residuals = _residuals_for(frames, cfg, res_cache)

    stb_chk_pce = None
    stb_lite_pce = None
    triage = "strongly_stabilized"
    if cfg.triage_mode == "skip_to_strong":
        flags.append("triage_skipped_by_config")
    else:
        if len(frames) < 6:
            flags.append("short_video_stb_chk_skipped")
            chk_stabilized = True
        else:
            chk = stb_chk(frames, cfg, residuals)
            stb_chk_pce = chk.pce
            chk_stabilized = chk.stabilized
        if not chk_stabilized:
            triage = "unstabilized"
            fp = estimate_fingerprint(residuals, frames)
            direct = full_frame_pce(fp.values.astype(np.float64), ref.values.astype(np.float64))
            decision = "match" if direct.pce >= cfg.decision_threshold else "no_match"
            return VideoVerdict(
                triage=triage,
                decision=decision,
                decision_rule="triage_direct",
                rank_estimates=(RankEstimate(rank=1, pce=direct.pce, n_frames=len(frames)),),
                frames_eliminated=0,
                frame_verdicts=(),
                stb_chk_pce=stb_chk_pce,
                stb_lite_pce=None,
                transforms_evaluated=0,
                unique_transforms=0,
                flags=tuple(flags),
            )
        lite = stb_lite(frames, ref, cfg, residuals)
        stb_lite_pce = lite.aggregate_pce
        if lite.weakly_stabilized:
            triage = "weakly_stabilized"
            return VideoVerdict(
                triage=triage,
                decision="match",
                decision_rule="stb_lite",
                rank_estimates=(
                    RankEstimate(
                        rank=1,
                        pce=lite.aggregate_pce,
                        n_frames=sum(1 for f in lite.per_frame if f.accepted),
                    ),
                ),
                frames_eliminated=sum(1 for f in lite.per_frame if not f.accepted),
                frame_verdicts=(),
                stb_chk_pce=stb_chk_pce,
                stb_lite_pce=stb_lite_pce,
                transforms_evaluated=0,
                unique_transforms=0,
                flags=tuple(flags),
            )

    # Strong pipeline: per-frame block search, validation, aggregation.
    _, geom = crop_center(residuals[0].values, cfg.block_size)
    window = build_reference_window(ref, geom, cfg.search.shift_range, dtype=cfg.search.dtype)
    sub_wins = _sub_windows(ref, geom, cfg, cfg.search.dtype)
    verdicts = []
    total_eval = 0
    total_unique = 0
    for frame, res in zip(frames, residuals):
        block, bgeom = crop_center(res.values, cfg.block_size)
        top, trace = hgs_search(block, window, bgeom, cfg.search)
        total_eval += trace.transforms_evaluated
        total_unique += trace.unique_transforms
        tvs = tuple(
            validate_transform(block, t, bgeom, cfg.validation, cfg, sub_wins) for t in top
        )
        verdicts.append(FrameVerdict(frame_index=frame.frame_index, top=tvs))
    estimates, decision, eliminated = aggregate_and_decide(
        verdicts, frames, residuals, ref, geom, cfg
    )
    return VideoVerdict(
        triage=triage,
        decision=decision,
        decision_rule="rank_top5",
        rank_estimates=estimates,
        frames_eliminated=eliminated,
        frame_verdicts=tuple(verdicts),
        stb_chk_pce=stb_chk_pce,
        stb_lite_pce=stb_lite_pce,
        transforms_evaluated=total_eval,
        unique_transforms=total_unique,
        flags=tuple(flags),
    )


def _config_echo(cfg: PipelineConfig) -> dict:
    return {
        "block_size": cfg.block_size,
        "n_frames": cfg.n_frames,
        "stb_chk_threshold": cfg.stb_chk_threshold,
        "stb_lite_threshold": cfg.stb_lite_threshold,
        "stb_lite_frame_accept": cfg.stb_lite_frame_accept,
        "decision_threshold": cfg.decision_threshold,
        "stb_scales": list(cfg.stb_scales),
        "stb_rotation_max_deg": cfg.stb_rotation_max_deg,
        "stb_rotation_step_deg": cfg.stb_rotation_step_deg,
        "denoise_strength": cfg.denoise_strength,
        "triage_mode": cfg.triage_mode,
        "validation": {
            "pce_vld": cfg.validation.pce_vld,
            "n_sub": cfg.validation.n_sub,
            "pce_sub": cfg.validation.pce_sub,
        },
        "search": {
            "level_steps": list(cfg.search.level_steps),
            "candidates_per_level": list(cfg.search.candidates_per_level),
            "top_k": cfg.search.top_k,
            "shift_range": cfg.search.shift_range,
            "variant": cfg.search.variant,
            "pce_exclude_radius": cfg.search.pce_exclude_radius,
            "dtype": cfg.search.dtype,
        },
    }


def build_report(verdict: VideoVerdict, cfg: PipelineConfig, timings: Optional[dict] = None) -> dict:
    """Schema-versioned verdict report; deterministic unless timings are included."""
    report = {
        "schema_version": REPORT_SCHEMA_VERSION,
        "config": _config_echo(cfg),
        "triage": verdict.triage,
        "decision": verdict.decision,
        "decision_rule": verdict.decision_rule,
        "decision_score": decision_score(verdict.rank_estimates),
        "stb": {"chk_pce": verdict.stb_chk_pce, "lite_pce": verdict.stb_lite_pce},
        "rank_estimates": [
            {"rank": e.rank, "pce": e.pce, "n_frames": e.n_frames} for e in verdict.rank_estimates
        ],
        "frames_eliminated": verdict.frames_eliminated,
        "frames": [
            {
                "frame_index": fv.frame_index,
                "eliminated": fv.eliminated,
                "top": [
                    {
                        "warp": list(tv.transform.warp.components),
                        "shift": list(tv.transform.shift),
                        "pce": tv.transform.pce,
                        "peak_corr": tv.transform.peak_corr,
                        "validated": tv.validated,
                        "sub_pces": list(tv.sub_pces),
                    }
                    for tv in fv.top
                ],
            }
            for fv in verdict.frame_verdicts
        ],
        "evaluation": {
            "transforms_evaluated": verdict.transforms_evaluated,
            "unique_transforms": verdict.unique_transforms,
        },
        "flags": list(verdict.flags),
    }
    if cfg.include_timings and timings is not None:
        report["timings"] = timings
    return report


def report_json(report: dict) -> str:
    return json.dumps(report, sort_keys=True, indent=2)
