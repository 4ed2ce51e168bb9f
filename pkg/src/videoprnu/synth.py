"""Synthetic ground-truth bench: sensors, scenes, stabilized videos, oracles.

The sensor model is multiplicative: a frame is ``scene * (1 + strength * K)
+ noise`` for a fixed per-sensor pattern K.  Stabilization is simulated by
nearest-neighbor warping of the rendered frame with a logged ground-truth
corner warp and crop shift, so search results can be checked coordinate-
exact.  Everything is bit-reproducible from (seed, config).

Shift convention: the ``shift`` logged with a stabilized frame is the crop
displacement the verification's translation search recovers, i.e. the
block content is found at ``nominal position + shift`` in the reference.
"""

from __future__ import annotations

import csv
import itertools
import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.ndimage import gaussian_filter

from .geometry import (
    BlockGeometry,
    CornerWarp,
    Homography,
    affine_about_center,
    corners_to_homography,
    nn_resample,
    translation_homography,
)
from .prnu import Frame, compute_pce, extract_noise
from .pipeline import ValidationParams
from .search import ScoredTransform, build_reference_window, unwarp_block_values

__all__ = [
    "SyntheticSensor",
    "GroundTruthEntry",
    "GroundTruthWarpLog",
    "VideoSample",
    "make_sensor",
    "make_scene",
    "render_frame",
    "stabilize_frame",
    "stabilize_frame_affine",
    "make_video",
    "exhaustive_small_search",
    "LabeledRun",
    "SweepResult",
    "sweep_validation_params",
    "RocTable",
    "roc_experiment",
]


@dataclass(frozen=True)
class SyntheticSensor:
    """Ground-truth multiplicative sensor pattern."""

    k: np.ndarray
    strength: float
    seed: int

    @property
    def shape(self) -> tuple[int, int]:
        return self.k.shape


def make_sensor(shape: tuple[int, int], strength: float, seed: int) -> SyntheticSensor:
    rng = np.random.default_rng(seed)
    k = rng.standard_normal(shape)
    k -= k.mean()
    k /= k.std()
    return SyntheticSensor(k=k, strength=float(strength), seed=int(seed))


def make_scene(
    shape: tuple[int, int],
    seed: int,
    smooth_sigma: float = 3.0,
    low: float = 60.0,
    high: float = 196.0,
) -> np.ndarray:
    """Procedurally textured scene (filtered noise), scaled to [low, high]."""
    rng = np.random.default_rng(seed)
    raw = gaussian_filter(rng.standard_normal(shape), smooth_sigma)
    rmin, rmax = raw.min(), raw.max()
    if rmax > rmin:
        raw = (raw - rmin) / (rmax - rmin)
    else:
        raw = np.full(shape, 0.5)
    return low + (high - low) * raw


def render_frame(
    scene: np.ndarray,
    sensor: SyntheticSensor,
    noise_sigma: float,
    seed: int,
    frame_index: int = 0,
    is_iframe: bool = True,
) -> Frame:
    """Render one frame: scene * (1 + strength*K) + Gaussian noise."""
    if scene.shape != sensor.shape:
        raise ValueError("scene and sensor shapes differ")
    rng = np.random.default_rng(seed)
    px = scene * (1.0 + sensor.strength * sensor.k)
    if noise_sigma > 0:
        px = px + noise_sigma * rng.standard_normal(scene.shape)
    return Frame(pixels=px, frame_index=frame_index, is_iframe=is_iframe)


def _stabilize_pixels(frame: Frame, sample_matrix: np.ndarray) -> Frame:
    h, w = frame.pixels.shape
    vals, valid = nn_resample(frame.pixels, sample_matrix, (0, 0), (h, w))
    mask = valid.astype(np.float64)
    if frame.weight_mask is not None:
        mvals, mvalid = nn_resample(frame.weight_mask, sample_matrix, (0, 0), (h, w))
        mask = mvals * (valid & mvalid)
    return Frame(
        pixels=vals,
        frame_index=frame.frame_index,
        is_iframe=frame.is_iframe,
        weight_mask=mask,
    )


def stabilize_frame(frame: Frame, warp: CornerWarp, shift: tuple[int, int], geom: BlockGeometry) -> Frame:
    """Apply a corner warp plus crop shift to a frame's pixel field.

    ``out[p] = frame[rint(H^-1 p) + shift]`` with NN resampling, so a
    verification run against the unwarped reference recovers exactly
    (warp, shift).  The weight mask, when present, is transformed the same
    way; out-of-bounds samples get zero weight.
    """
    h = corners_to_homography(warp, geom)
    sample = translation_homography(shift).m @ h.inverse().m
    return _stabilize_pixels(frame, sample)


def stabilize_frame_affine(
    frame: Frame, rotation_deg: float, scale: float, shift: tuple[int, int]
) -> Frame:
    """Frame-level affine stabilization (rotation/scale about frame center)."""
    h, w = frame.pixels.shape
    center = ((w - 1) / 2.0, (h - 1) / 2.0)
    a = affine_about_center(center, rotation_deg, scale)
    sample = translation_homography(shift).m @ a.inverse().m
    return _stabilize_pixels(frame, sample)


@dataclass(frozen=True)
class GroundTruthEntry:
    frame_index: int
    warp: CornerWarp
    shift: tuple[int, int]
    rotation_deg: float = 0.0
    scale: float = 1.0


@dataclass
class GroundTruthWarpLog:
    entries: list[GroundTruthEntry] = field(default_factory=list)
    seed: int = 0
    noise_sigma: float = 0.0
    kind: str = "strong"

    def to_json(self) -> str:
        return json.dumps(
            {
                "schema_version": "1",
                "kind": self.kind,
                "seed": self.seed,
                "noise_sigma": self.noise_sigma,
                "frames": [
                    {
                        "frame_index": e.frame_index,
                        "corners": list(e.warp.components),
                        "shift": list(e.shift),
                        "rotation_deg": e.rotation_deg,
                        "scale": e.scale,
                    }
                    for e in self.entries
                ],
            },
            sort_keys=True,
            indent=2,
        )

    @classmethod
    def from_json(cls, text: str) -> "GroundTruthWarpLog":
        data = json.loads(text)
        log = cls(seed=data["seed"], noise_sigma=data["noise_sigma"], kind=data["kind"])
        for f in data["frames"]:
            log.entries.append(
                GroundTruthEntry(
                    frame_index=f["frame_index"],
                    warp=CornerWarp.from_components(f["corners"]),
                    shift=tuple(f["shift"]),
                    rotation_deg=f.get("rotation_deg", 0.0),
                    scale=f.get("scale", 1.0),
                )
            )
        return log


@dataclass
class VideoSample:
    frames: list[Frame]
    sensor: SyntheticSensor
    kind: str
    truth: GroundTruthWarpLog
    geom: BlockGeometry


def central_block_geometry(frame_shape: tuple[int, int], block_size: int) -> BlockGeometry:
    h, w = frame_shape
    if h < block_size or w < block_size:
        raise ValueError("frame smaller than block")
    return BlockGeometry(origin_xy=((w - block_size) // 2, (h - block_size) // 2), size=block_size)


def make_video(
    sensor: SyntheticSensor,
    kind: str,
    n_frames: int,
    seed: int,
    block_size: int,
    noise_sigma: float = 2.0,
    warp_halfwidth: int = 7,
    shift_max: int = 10,
    relative_window: Optional[int] = None,
    rotation_max_deg: float = 1.2,
    rotation_step_deg: float = 0.1,
) -> VideoSample:
    """Generate a synthetic video of the given stabilization kind.

    kinds: ``unstabilized`` (aligned pattern), ``weak`` (per-frame affine:
    grid rotation + integer shift), ``strong`` (per-frame corner warp +
    shift).  With ``relative_window`` set, strong warps keep displacements
    relative to corner A within that window (recoverable by the
    constrained search).
    """
    if kind not in ("unstabilized", "weak", "strong"):
        raise ValueError(f"unknown video kind: {kind}")
    geom = central_block_geometry(sensor.shape, block_size)
    rng = np.random.default_rng(seed)
    log = GroundTruthWarpLog(seed=seed, noise_sigma=noise_sigma, kind=kind)
    frames = []
    for i in range(n_frames):
        scene = make_scene(sensor.shape, seed=int(rng.integers(2**31)))
        frame = render_frame(
            scene, sensor, noise_sigma, seed=int(rng.integers(2**31)), frame_index=i
        )
        if kind == "unstabilized":
            frames.append(frame)
            log.entries.append(GroundTruthEntry(i, CornerWarp(), (0, 0)))
            continue
        if kind == "weak":
            n_steps = int(round(rotation_max_deg / rotation_step_deg))
            rot = rotation_step_deg * int(rng.integers(-n_steps, n_steps + 1))
            shift = (int(rng.integers(-shift_max, shift_max + 1)),
                     int(rng.integers(-shift_max, shift_max + 1)))
            frames.append(stabilize_frame_affine(frame, rot, 1.0, shift))
            log.entries.append(
                GroundTruthEntry(i, CornerWarp(), shift, rotation_deg=rot, scale=1.0)
            )
            continue
        warp = _random_warp(rng, warp_halfwidth, relative_window)
        shift = (int(rng.integers(-shift_max, shift_max + 1)),
                 int(rng.integers(-shift_max, shift_max + 1)))
        frames.append(stabilize_frame(frame, warp, shift, geom))
        log.entries.append(GroundTruthEntry(i, warp, shift))
    return VideoSample(frames=frames, sensor=sensor, kind=kind, truth=log, geom=geom)


def _random_warp(rng, halfwidth: int, relative_window: Optional[int]) -> CornerWarp:
    if relative_window is None:
        comps = rng.integers(-halfwidth, halfwidth + 1, size=8)
        return CornerWarp.from_components(comps)
    a = rng.integers(-halfwidth, halfwidth + 1, size=2)
    rel = rng.integers(-relative_window, relative_window + 1, size=6)
    return CornerWarp(
        a=(int(a[0]), int(a[1])),
        b=(int(a[0] + rel[0]), int(a[1] + rel[1])),
        c=(int(a[0] + rel[2]), int(a[1] + rel[3])),
        d=(int(a[0] + rel[4]), int(a[1] + rel[5])),
    )


def exhaustive_small_search(
    block,
    ref,
    geom: BlockGeometry,
    window: int,
    shift_range: int,
    fixed_vertex: bool = False,
    exclude_radius: int = 5,
) -> ScoredTransform:
    """Brute-force argmax over every integer warp in a small window.

    Independent oracle for the hierarchical search: enumerates the full
    integer lattice (not the coarse grid) and scores each candidate one by
    one through the public single-candidate path.  Window is limited to
    keep the enumeration feasible (3^8 for four corners, 7^6 fixed-vertex).
    """
    limit = 3 if fixed_vertex else 1
    if window > limit:
        raise ValueError(
            f"window {window} too large for exhaustive search "
            f"(max {limit} with fixed_vertex={fixed_vertex})"
        )
    win = build_reference_window(ref, geom, shift_range)
    moving = 3 if fixed_vertex else 4
    values = np.asarray(block if isinstance(block, np.ndarray) else block.values)
    best = None
    span = range(-window, window + 1)
    for comps in itertools.product(span, repeat=2 * moving):
        if fixed_vertex:
            full = (0, 0) + comps
        else:
            full = comps
        warp = CornerWarp.from_components(full)
        try:
            und, valid = unwarp_block_values(values, warp, geom)
        except ValueError:
            continue
        res = compute_pce(
            und,
            win,
            max_shift=shift_range,
            exclude_radius=exclude_radius,
            mask=None if valid.all() else valid,
        )
        key = (-res.pce, full, res.peak_xy)
        if best is None or key < best[0]:
            best = (key, ScoredTransform(warp, res.peak_xy, res.pce, res.peak_corr))
    if best is None:
        raise ValueError("all candidates degenerate")
    return best[1]


@dataclass(frozen=True)
class LabeledRun:
    """One block-level search outcome with a matched/mismatched label."""

    pce: float
    sub_pces: tuple[float, float, float, float]
    matched: bool


@dataclass(frozen=True)
class SweepResult:
    params: ValidationParams
    feasible: bool
    matched_validated: int
    grid_points: int


def sweep_validation_params(
    runs: Sequence[LabeledRun],
    pce_vld_range: tuple[int, int] = (0, 40),
    n_sub_range: tuple[int, int] = (0, 4),
    pce_sub_range: tuple[int, int] = (0, 5),
) -> SweepResult:
    """Grid sweep of validation parameters at zero false validations.

    Maximizes the matched validation count subject to zero mismatched
    validations; ties break toward larger (pce_vld, n_sub, pce_sub).  When
    no zero-false-positive point exists, or none validates any matched
    run, the most conservative corner is returned flagged infeasible.
    """
    pces = np.array([r.pce for r in runs])
    subs = np.array([r.sub_pces for r in runs])
    matched = np.array([r.matched for r in runs], dtype=bool)
    best = None
    grid_points = 0
    for vld in range(pce_vld_range[0], pce_vld_range[1] + 1):
        pass_vld = pces >= vld
        for psub in range(pce_sub_range[0], pce_sub_range[1] + 1):
            sub_count = (subs >= psub).sum(axis=1)
            for nsub in range(n_sub_range[0], n_sub_range[1] + 1):
                grid_points += 1
                ok = pass_vld & (sub_count >= nsub)
                if ok[~matched].sum() > 0:
                    continue
                tp = int(ok[matched].sum())
                key = (tp, vld, nsub, psub)
                if best is None or key > best:
                    best = key
    corner = ValidationParams(
        pce_vld=float(pce_vld_range[1]), n_sub=n_sub_range[1], pce_sub=float(pce_sub_range[1])
    )
    if best is None or best[0] == 0:
        return SweepResult(params=corner, feasible=False, matched_validated=0, grid_points=grid_points)
    tp, vld, nsub, psub = best
    return SweepResult(
        params=ValidationParams(pce_vld=float(vld), n_sub=nsub, pce_sub=float(psub)),
        feasible=True,
        matched_validated=tp,
        grid_points=grid_points,
    )


@dataclass
class RocTable:
    """(threshold, TPR, FPR) rows, thresholds descending."""

    rows: list[tuple[float, float, float]]

    def best_tpr_at_zero_fpr(self) -> float:
        candidates = [tpr for _, tpr, fpr in self.rows if fpr == 0.0]
        return max(candidates) if candidates else 0.0

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["threshold", "tpr", "fpr"])
            for thr, tpr, fpr in self.rows:
                writer.writerow([thr, tpr, fpr])

    def to_json(self) -> str:
        return json.dumps(
            {
                "schema_version": "1",
                "rows": [
                    {"threshold": t, "tpr": a, "fpr": b} for t, a, b in self.rows
                ],
            },
            sort_keys=True,
            indent=2,
        )


def roc_experiment(matched_scores: Sequence[float], mismatched_scores: Sequence[float]) -> RocTable:
    """Sweep a decision threshold over observed video scores.

    A video is attributed when its score is >= threshold; eliminated videos
    carry score 0.  Returns TPR/FPR rows for every observed score plus an
    above-maximum anchor.
    """
    matched = np.asarray(list(matched_scores), dtype=np.float64)
    mismatched = np.asarray(list(mismatched_scores), dtype=np.float64)
    if matched.size == 0 or mismatched.size == 0:
        raise ValueError("both labeled sets must be non-empty")
    thresholds = sorted(set(matched.tolist()) | set(mismatched.tolist()) | {0.0})
    hi = max(thresholds) + 1.0
    rows = []
    for thr in [hi] + thresholds[::-1]:
        tpr = float((matched >= thr).mean())
        fpr = float((mismatched >= thr).mean())
        rows.append((float(thr), tpr, fpr))
    return RocTable(rows=rows)
