"""Frame ingestion, fingerprint persistence, and run configuration.

Decoding is delegated: users produce frame sequences with any decoder
(optionally one that compensates the codec loop filter) and point the tool
at a directory of images or a raw 8-bit luma stream.  Color inputs are
converted to luminance with fixed ITU-R BT.601 weights.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from PIL import Image, UnidentifiedImageError

from .pipeline import PipelineConfig, ValidationParams
from .prnu import Fingerprint, Frame
from .search import SearchConfig

__all__ = [
    "VideoPrnuError",
    "UnreadableSourceError",
    "DimensionMismatchError",
    "MalformedIndexError",
    "FingerprintFormatError",
    "ConfigError",
    "FrameSource",
    "load_frames",
    "select_frames",
    "save_fingerprint",
    "load_fingerprint",
    "load_config",
    "default_config_dict",
]

BT601_WEIGHTS = (0.299, 0.587, 0.114)
FINGERPRINT_MAGIC = b"PRNU1"
_IMAGE_EXTS = (".png", ".jpg", ".jpeg", ".pgm", ".bmp", ".tif", ".tiff")


class VideoPrnuError(Exception):
    """Base for typed, machine-reportable errors."""


class UnreadableSourceError(VideoPrnuError):
    pass


class DimensionMismatchError(VideoPrnuError):
    pass


class MalformedIndexError(VideoPrnuError):
    pass


class FingerprintFormatError(VideoPrnuError):
    pass


class ConfigError(VideoPrnuError):
    pass


@dataclass(frozen=True)
class FrameSource:
    kind: str  # "image_sequence_dir" | "raw_luma_stream"
    path: str
    width: Optional[int] = None
    height: Optional[int] = None
    iframe_index_file: Optional[str] = None

    def __post_init__(self):
        if self.kind not in ("image_sequence_dir", "raw_luma_stream"):
            raise ConfigError(f"unknown frame source kind: {self.kind}")
        if self.kind == "raw_luma_stream" and (not self.width or not self.height):
            raise ConfigError("raw_luma_stream requires width and height")


def _to_luma(arr: np.ndarray) -> np.ndarray:
    if arr.ndim == 2:
        return arr.astype(np.float32)
    if arr.ndim == 3 and arr.shape[2] >= 3:
        r, g, b = BT601_WEIGHTS
        return (
            r * arr[:, :, 0].astype(np.float32)
            + g * arr[:, :, 1].astype(np.float32)
            + b * arr[:, :, 2].astype(np.float32)
        )
    raise UnreadableSourceError(f"unsupported image layout with shape {arr.shape}")


def _read_iframe_indices(path: str) -> list[int]:
    try:
        lines = Path(path).read_text().split()
    except OSError as exc:
        raise MalformedIndexError(f"cannot read I-frame index file: {exc}") from exc
    try:
        idx = [int(tok) for tok in lines]
    except ValueError as exc:
        raise MalformedIndexError(f"non-integer entry in I-frame index file: {exc}") from exc
    if sorted(set(idx)) != idx:
        raise MalformedIndexError("I-frame indices must be sorted and unique")
    if idx and idx[0] < 0:
        raise MalformedIndexError("I-frame indices must be non-negative")
    return idx


def load_frames(src: FrameSource) -> list[Frame]:
    """Load all frames in index order with I-frame flags from the sidecar."""
    iframe_set = set(_read_iframe_indices(src.iframe_index_file)) if src.iframe_index_file else set()
    frames: list[Frame] = []
    if src.kind == "image_sequence_dir":
        root = Path(src.path)
        if not root.is_dir():
            raise UnreadableSourceError(f"not a directory: {src.path}")
        paths = sorted(p for p in root.iterdir() if p.suffix.lower() in _IMAGE_EXTS)
        if not paths:
            raise UnreadableSourceError(f"no image files in {src.path}")
        for i, p in enumerate(paths):
            try:
                with Image.open(p) as im:
                    arr = np.asarray(im)
            except (OSError, UnidentifiedImageError) as exc:
                raise UnreadableSourceError(f"cannot decode {p}: {exc}") from exc
            luma = _to_luma(arr)
            if frames and luma.shape != frames[0].pixels.shape:
                raise DimensionMismatchError(
                    f"{p} has shape {luma.shape}, expected {frames[0].pixels.shape}"
                )
            frames.append(Frame(pixels=luma, frame_index=i, is_iframe=i in iframe_set))
        return frames
    # raw 8-bit luma stream
    try:
        data = np.fromfile(src.path, dtype=np.uint8)
    except OSError as exc:
        raise UnreadableSourceError(f"cannot read {src.path}: {exc}") from exc
    fsize = src.width * src.height
    if data.size == 0 or data.size % fsize:
        raise DimensionMismatchError(
            f"file size {data.size} is not a multiple of {src.width}x{src.height}"
        )
    n = data.size // fsize
    stack = data.reshape(n, src.height, src.width)
    for i in range(n):
        frames.append(
            Frame(pixels=stack[i].astype(np.float32), frame_index=i, is_iframe=i in iframe_set)
        )
    return frames


def select_frames(frames: Sequence[Frame], n: int, exclude_first_iframe: bool = True) -> list[Frame]:
    """Pick frames for attribution: I-frames after the first, padded evenly.

    I-frames (excluding the first, which may be unstabilized) are taken in
    order; if fewer than ``n`` exist, the remainder is filled with evenly
    spaced non-I frames.  Without any I-frame flags the selection is evenly
    spaced over the whole video.  Deterministic.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    iframes = [f for f in frames if f.is_iframe]
    if exclude_first_iframe and iframes:
        iframes = iframes[1:]
    picked = iframes[:n]
    if len(picked) < n:
        chosen = {f.frame_index for f in picked}
        rest = [f for f in frames if f.frame_index not in chosen]
        need = min(n - len(picked), len(rest))
        if need > 0:
            pos = np.linspace(0, len(rest) - 1, need).round().astype(int)
            picked = picked + [rest[i] for i in dict.fromkeys(pos.tolist())]
    picked.sort(key=lambda f: f.frame_index)
    return picked


def save_fingerprint(fp: Fingerprint, path) -> None:
    """Binary fingerprint format: magic, dims, source count, label, float32 rows."""
    label = fp.camera_label.encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(FINGERPRINT_MAGIC)
        fh.write(struct.pack("<IIIH", fp.width, fp.height, fp.n_sources, len(label)))
        fh.write(label)
        fh.write(np.ascontiguousarray(fp.values, dtype="<f4").tobytes())


def load_fingerprint(path) -> Fingerprint:
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise FingerprintFormatError(f"cannot read fingerprint file: {exc}") from exc
    if len(blob) < 5 or blob[:5] != FINGERPRINT_MAGIC:
        raise FingerprintFormatError("bad magic: not a fingerprint file")
    header = struct.Struct("<IIIH")
    if len(blob) < 5 + header.size:
        raise FingerprintFormatError("truncated fingerprint header")
    width, height, n_sources, label_len = header.unpack_from(blob, 5)
    off = 5 + header.size
    if len(blob) < off + label_len:
        raise FingerprintFormatError("truncated fingerprint label")
    label = blob[off : off + label_len].decode("utf-8")
    off += label_len
    expect = width * height * 4
    if len(blob) != off + expect:
        raise FingerprintFormatError(
            f"payload size {len(blob) - off} does not match {width}x{height} float32"
        )
    values = np.frombuffer(blob, dtype="<f4", offset=off).reshape(height, width)
    return Fingerprint(values=values.copy(), n_sources=n_sources, camera_label=label)


_PIPELINE_KEYS = {
    "block_size": int,
    "n_frames": int,
    "stb_chk_threshold": float,
    "stb_lite_threshold": float,
    "stb_lite_frame_accept": float,
    "decision_threshold": float,
    "stb_scales": list,
    "stb_rotation_max_deg": float,
    "stb_rotation_step_deg": float,
    "denoise_strength": float,
    "triage_mode": str,
    "include_timings": bool,
}
_SEARCH_KEYS = {
    "level_steps": list,
    "candidates_per_level": list,
    "top_k": int,
    "shift_range": int,
    "variant": str,
    "pce_exclude_radius": int,
    "chunk_size": int,
    "workers": int,
    "dtype": (str, type(None)),
}
_VALIDATION_KEYS = {"pce_vld": float, "n_sub": int, "pce_sub": float}


def _check_section(section: dict, allowed: dict, name: str) -> dict:
    if not isinstance(section, dict):
        raise ConfigError(f"config section '{name}' must be an object")
    out = {}
    for key, value in section.items():
        if key not in allowed:
            raise ConfigError(f"unknown key '{key}' in config section '{name}'")
        want = allowed[key]
        if want is float and isinstance(value, (int, float)) and not isinstance(value, bool):
            value = float(value)
        elif want is int and isinstance(value, bool):
            raise ConfigError(f"config key '{name}.{key}' must be {want}")
        elif not isinstance(value, want if isinstance(want, tuple) else (want,)):
            raise ConfigError(f"config key '{name}.{key}' has wrong type")
        if isinstance(value, list):
            value = tuple(value)
        out[key] = value
    return out


def load_config(path) -> PipelineConfig:
    """Load and validate a JSON run configuration; unknown keys are errors."""
    try:
        data = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config file: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config root must be a JSON object")
    known = {"pipeline", "search", "validation"}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    pipe_kwargs = _check_section(data.get("pipeline", {}), _PIPELINE_KEYS, "pipeline")
    search_kwargs = _check_section(data.get("search", {}), _SEARCH_KEYS, "search")
    valid_kwargs = _check_section(data.get("validation", {}), _VALIDATION_KEYS, "validation")
    try:
        cfg = PipelineConfig(
            search=SearchConfig(**search_kwargs),
            validation=ValidationParams(**valid_kwargs),
            **pipe_kwargs,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return cfg


def default_config_dict() -> dict:
    """The documented defaults (paper-parameter values), as a config document."""
    cfg = PipelineConfig()
    return {
        "pipeline": {
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
            "include_timings": cfg.include_timings,
        },
        "search": {
            "level_steps": list(cfg.search.level_steps),
            "candidates_per_level": list(cfg.search.candidates_per_level),
            "top_k": cfg.search.top_k,
            "shift_range": cfg.search.shift_range,
            "variant": cfg.search.variant,
            "pce_exclude_radius": cfg.search.pce_exclude_radius,
            "chunk_size": cfg.search.chunk_size,
            "workers": cfg.search.workers,
            "dtype": cfg.search.dtype,
        },
        "validation": {
            "pce_vld": cfg.validation.pce_vld,
            "n_sub": cfg.validation.n_sub,
            "pce_sub": cfg.validation.pce_sub,
        },
    }
