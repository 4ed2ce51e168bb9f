"""Hierarchical grid search for inverse stabilization transforms.

Each candidate is an integer corner-displacement warp applied to a PRNU
block; the candidate is "inverted" on the block (``out[p] = block[rint(H p)]``)
and the result is matched against the reference over a +/-shift_range
translation window in one frequency-domain correlation.  A three-level
coarse-to-fine refinement with top-5 tracking covers per-axis displacements
up to the sum of the level steps (default 4+2+1 = 7).

The constrained variant pins corner A and enumerates only B, C, D; the
global shift found by the translation search supplies A's displacement, so
both variants describe the same (warp, shift) equivalence classes.
"""

from __future__ import annotations

import itertools
import json
import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .geometry import BlockGeometry, CornerWarp, corners_to_homography, nn_gather
from .prnu import CorrelationWindow, score_blocks, _residual_values

__all__ = [
    "SearchConfig",
    "ScoredTransform",
    "SearchTrace",
    "hgs_search",
    "shift_search",
    "build_reference_window",
    "unwarp_block_values",
]

_VARIANTS = ("full", "constrained")


@dataclass(frozen=True)
class SearchConfig:
    level_steps: tuple[int, ...] = (4, 2, 1)
    candidates_per_level: tuple[int, ...] = (1, 5, 5)
    top_k: int = 5
    shift_range: int = 50
    variant: str = "full"
    pce_exclude_radius: int = 5
    chunk_size: int = 32
    workers: int = 1
    dtype: Optional[str] = None  # "float32" | "float64" | None (follow inputs)

    def __post_init__(self):
        steps = tuple(int(s) for s in self.level_steps)
        cands = tuple(int(c) for c in self.candidates_per_level)
        object.__setattr__(self, "level_steps", steps)
        object.__setattr__(self, "candidates_per_level", cands)
        if not steps or any(s <= 0 for s in steps):
            raise ValueError("level_steps must be positive")
        if any(a <= b for a, b in zip(steps, steps[1:])):
            raise ValueError("level_steps must be strictly decreasing")
        if len(cands) != len(steps):
            raise ValueError("candidates_per_level must match level_steps")
        if cands[0] != 1:
            raise ValueError("the first level runs exactly one search")
        if any(c < 1 for c in cands):
            raise ValueError("candidates_per_level must be >= 1")
        if self.top_k < 1:
            raise ValueError("top_k must be >= 1")
        if self.shift_range < 1:
            raise ValueError("shift_range must be >= 1")
        if self.variant not in _VARIANTS:
            raise ValueError(f"variant must be one of {_VARIANTS}")

    @property
    def window_halfwidth(self) -> int:
        return sum(self.level_steps)

    @property
    def moving_corners(self) -> int:
        return 4 if self.variant == "full" else 3

    def expected_evaluations(self) -> int:
        per_search = 3 ** (2 * self.moving_corners)
        return sum(self.candidates_per_level) * per_search


@dataclass(frozen=True)
class ScoredTransform:
    warp: CornerWarp
    shift: tuple[int, int]
    pce: float
    peak_corr: float

    def to_dict(self) -> dict:
        return {
            "warp": list(self.warp.components),
            "shift": list(self.shift),
            "pce": self.pce,
            "peak_corr": self.peak_corr,
        }


@dataclass
class SearchTrace:
    """Instrumentation of one hierarchical search.

    ``transforms_evaluated`` counts scoring requests (the closed-form
    level-by-level accounting); ``unique_transforms`` counts distinct warps
    actually scored after duplicate suppression.
    """

    transforms_evaluated: int = 0
    unique_transforms: int = 0
    per_level_candidates: list = field(default_factory=list)
    config: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)

    def to_json(self, include_timings: bool = True) -> str:
        payload = {
            "schema_version": "1",
            "config": self.config,
            "transforms_evaluated": self.transforms_evaluated,
            "unique_transforms": self.unique_transforms,
            "levels": self.per_level_candidates,
        }
        if include_timings:
            payload["timings"] = self.timings
        return json.dumps(payload, sort_keys=True, indent=2)


def build_reference_window(
    ref, geom: BlockGeometry, shift_range: int, dtype: Optional[str] = None
) -> CorrelationWindow:
    """Cut the reference window around the block location with shift margins."""
    values = _residual_values(ref)
    ox, oy = geom.origin_xy
    s = geom.size
    m = int(shift_range)
    if ox - m < 0 or oy - m < 0 or ox + s + m > values.shape[1] or oy + s + m > values.shape[0]:
        raise ValueError(
            "reference too small: needs block_size + 2*shift_range coverage "
            f"around origin {geom.origin_xy}"
        )
    win = values[oy - m : oy + s + m, ox - m : ox + s + m]
    if dtype is not None:
        win = win.astype(dtype)
    return CorrelationWindow(win, max_shift=m, origin_xy=(ox - m, oy - m))


def unwarp_block_values(
    pattern: np.ndarray,
    warp: CornerWarp,
    geom: BlockGeometry,
    offset_xy: tuple[int, int] = (0, 0),
) -> tuple[np.ndarray, np.ndarray]:
    """Invert a hypothesized corner warp on a cropped block.

    ``pattern`` is the block cut at ``geom`` (its [0, 0] sample sits at the
    block origin).  ``out[p] = pattern[rint(H_warp (p + offset))]`` over the
    block grid; a nonzero ``offset_xy`` samples a translated output grid,
    used to place a matched block back onto its reference position.
    Returns (values, valid_mask).
    """
    h = corners_to_homography(warp, geom)
    pat = np.asarray(pattern)
    x0, y0 = geom.origin_xy
    s = geom.size
    xs = np.arange(x0, x0 + s, dtype=np.float64) + float(offset_xy[0])
    ys = np.arange(y0, y0 + s, dtype=np.float64) + float(offset_xy[1])
    gx, gy = np.meshgrid(xs, ys)
    return nn_gather(pat, h.m, gx, gy, geom.origin_xy)


class _CandidateScorer:
    """Scores corner-warp candidates against a fixed block and reference."""

    def __init__(self, block, window, geom, cfg):
        values = _residual_values(block)
        if values.shape != (geom.size, geom.size):
            raise ValueError("block must match the block geometry size")
        if cfg.dtype is not None:
            values = values.astype(cfg.dtype)
        self.block = values
        self.window = window
        self.geom = geom
        self.cfg = cfg
        x0, y0 = geom.origin_xy
        s = geom.size
        xs = np.arange(x0, x0 + s, dtype=np.float64)
        ys = np.arange(y0, y0 + s, dtype=np.float64)
        self._gx, self._gy = np.meshgrid(xs, ys)
        self.unique_scored = 0

    def score(self, warp_tuples: Sequence[tuple]) -> dict:
        """Score unique warp tuples; returns {tuple: (pce, shift, peak_corr)}."""
        cfg = self.cfg
        out = {}
        n = len(warp_tuples)
        for start in range(0, n, cfg.chunk_size):
            chunk = warp_tuples[start : start + cfg.chunk_size]
            blocks = np.empty((len(chunk),) + self.block.shape, dtype=self.block.dtype)
            masks = np.ones((len(chunk),) + self.block.shape, dtype=bool)
            ok = np.ones(len(chunk), dtype=bool)
            any_invalid = False
            for i, t in enumerate(chunk):
                warp = CornerWarp.from_components(t)
                try:
                    h = corners_to_homography(warp, self.geom)
                except ValueError:
                    ok[i] = False
                    blocks[i] = 0
                    continue
                vals, valid = nn_gather(
                    self.block, h.m, self._gx, self._gy, self.geom.origin_xy
                )
                blocks[i] = vals
                masks[i] = valid
                if not valid.all():
                    any_invalid = True
            pce, peak_xy, peak_corr, _ = score_blocks(
                blocks,
                self.window,
                exclude_radius=cfg.pce_exclude_radius,
                masks=masks if any_invalid else None,
                workers=cfg.workers,
            )
            for i, t in enumerate(chunk):
                if not ok[i] or not np.isfinite(pce[i]):
                    out[t] = (-np.inf, (0, 0), 0.0)
                else:
                    out[t] = (
                        float(pce[i]),
                        (int(peak_xy[i, 0]), int(peak_xy[i, 1])),
                        float(peak_corr[i]),
                    )
                self.unique_scored += 1
        return out


def _level_offsets(step: int, moving_corners: int) -> np.ndarray:
    per_axis = (-step, 0, step)
    dims = 2 * moving_corners
    combos = np.array(list(itertools.product(per_axis, repeat=dims)), dtype=np.int64)
    if moving_corners == 3:  # corner A pinned at zero displacement
        combos = np.concatenate([np.zeros((len(combos), 2), dtype=np.int64), combos], axis=1)
    return combos


def hgs_search(
    block,
    ref,
    geom: BlockGeometry,
    cfg: SearchConfig,
) -> tuple[list[ScoredTransform], SearchTrace]:
    """Three-level hierarchical grid search over corner-displacement warps.

    Returns the final ``top_k`` transforms sorted by PCE descending and an
    instrumented trace.  Ties break lexicographically on (warp components,
    shift) so results are fully deterministic.
    """
    t_start = time.perf_counter()
    window = ref if isinstance(ref, CorrelationWindow) else build_reference_window(
        ref, geom, cfg.shift_range, dtype=cfg.dtype
    )
    if window.max_shift != cfg.shift_range:
        raise ValueError("reference window shift margin does not match config")
    scorer = _CandidateScorer(block, window, geom, cfg)
    trace = SearchTrace(config=_config_dict(cfg))

    memo: dict[tuple, tuple] = {}
    parents = [tuple([0] * 8)]
    ranked: list[tuple] = []
    n_levels = len(cfg.level_steps)
    for li, step in enumerate(cfg.level_steps):
        offsets = _level_offsets(step, cfg.moving_corners)
        requested: list[tuple] = []
        seen: set[tuple] = set()
        for par in parents:
            cands = np.asarray(par, dtype=np.int64)[None, :] + offsets
            trace.transforms_evaluated += len(cands)
            for t in map(tuple, cands):
                if t not in seen:
                    seen.add(t)
                    requested.append(t)
        new = [t for t in requested if t not in memo]
        memo.update(scorer.score(new))
        ranked = sorted(requested, key=lambda t: (-memo[t][0], t, memo[t][1]))
        retain = cfg.candidates_per_level[li + 1] if li + 1 < n_levels else cfg.top_k
        parents = ranked[:retain]
        if not np.isfinite(memo[ranked[0]][0]):
            raise ValueError("all candidate transforms are degenerate")
        trace.per_level_candidates.append(
            [
                {"warp": list(t), "shift": list(memo[t][1]), "pce": memo[t][0]}
                for t in parents
            ]
        )
    trace.unique_transforms = scorer.unique_scored
    trace.timings["search_seconds"] = time.perf_counter() - t_start
    top = [
        ScoredTransform(
            warp=CornerWarp.from_components(t),
            shift=memo[t][1],
            pce=memo[t][0],
            peak_corr=memo[t][2],
        )
        for t in ranked[: cfg.top_k]
        if np.isfinite(memo[t][0])
    ]
    return top, trace


def shift_search(
    warped_block,
    ref,
    nominal_origin_xy: tuple[int, int],
    shift_range: int,
    exclude_radius: int = 5,
    workers: int = 1,
) -> tuple[tuple[int, int], float]:
    """Best global translation of a block within the reference.

    Scores all (2*shift_range+1)^2 translations with one frequency-domain
    correlation; returns the PCE-maximizing shift (where the block content
    actually sits relative to its nominal origin) and its PCE.
    """
    values = _residual_values(warped_block)
    geom = BlockGeometry(origin_xy=nominal_origin_xy, size=values.shape[0])
    window = build_reference_window(ref, geom, shift_range)
    pce, peak_xy, _, _ = score_blocks(
        values[None], window, exclude_radius=exclude_radius, workers=workers
    )
    if not np.isfinite(pce[0]):
        raise ValueError("zero-variance block")
    return (int(peak_xy[0, 0]), int(peak_xy[0, 1])), float(pce[0])


def _config_dict(cfg: SearchConfig) -> dict:
    return {
        "level_steps": list(cfg.level_steps),
        "candidates_per_level": list(cfg.candidates_per_level),
        "top_k": cfg.top_k,
        "shift_range": cfg.shift_range,
        "variant": cfg.variant,
        "pce_exclude_radius": cfg.pce_exclude_radius,
        "dtype": cfg.dtype,
    }
