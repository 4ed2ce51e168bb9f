"""Sensor-noise residuals, camera fingerprints, and PCE matching.

Conventions used throughout the package:

* arrays are row-major with origin at the top-left; a point is an ``(x, y)``
  pair with ``x`` the column and ``y`` the row;
* correlation lags are ``(dx, dy)`` pairs; a peak at lag ``d`` means the
  residual content is found in the reference displaced by ``+d`` from its
  nominal (centered) position;
* the correlation is circular over the reference block's own shape, with
  the residual embedded at the centered anchor.  When the reference leaves
  a margin of at least ``max_shift`` around the residual the values are
  identical to plain (non-wrapped) correlation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.fft as sfft

from .wavelet import noise_residual

__all__ = [
    "Frame",
    "NoiseResidual",
    "Fingerprint",
    "PceResult",
    "CorrelationWindow",
    "extract_noise",
    "estimate_fingerprint",
    "ncc_surface",
    "compute_pce",
    "zero_mean_field",
]

DEFAULT_DENOISE_STRENGTH = 3.0
DEFAULT_EXCLUDE_RADIUS = 5


@dataclass(frozen=True)
class Frame:
    """One decoded luminance frame."""

    pixels: np.ndarray
    frame_index: int = 0
    is_iframe: bool = False
    weight_mask: Optional[np.ndarray] = None

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 2:
            raise ValueError("Frame.pixels must be 2-D luminance")
        if not np.all(np.isfinite(px)):
            raise ValueError("Frame.pixels must be finite")
        object.__setattr__(self, "pixels", px)
        if self.weight_mask is not None:
            wm = np.asarray(self.weight_mask, dtype=np.float64)
            if wm.shape != px.shape:
                raise ValueError("weight_mask shape must match pixels")
            object.__setattr__(self, "weight_mask", wm)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


@dataclass(frozen=True)
class NoiseResidual:
    """Zero-mean noise residual extracted from a single frame."""

    values: np.ndarray
    source_frame: int = 0
    low_information: bool = False

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim != 2:
            raise ValueError("NoiseResidual.values must be 2-D")
        if not np.all(np.isfinite(v)):
            raise ValueError("NoiseResidual.values must be finite")
        object.__setattr__(self, "values", v)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class Fingerprint:
    """Aggregated reference PRNU pattern for one camera.

    Values are stored as float32 (zero-mean, unit variance); the on-disk
    format round-trips bit-exactly.
    """

    values: np.ndarray
    n_sources: int
    camera_label: str = ""

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float32)
        if v.ndim != 2:
            raise ValueError("Fingerprint.values must be 2-D")
        object.__setattr__(self, "values", v)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class PceResult:
    pce: float
    peak_xy: tuple[int, int]
    peak_corr: float
    energy: float


def zero_mean_field(values: np.ndarray) -> np.ndarray:
    """Remove the global mean, then per-row and per-column means."""
    x = np.asarray(values, dtype=np.float64)
    x = x - x.mean()
    x = x - x.mean(axis=1, keepdims=True)
    x = x - x.mean(axis=0, keepdims=True)
    return x


def extract_noise(frame: Frame, denoise_strength: float = DEFAULT_DENOISE_STRENGTH) -> NoiseResidual:
    """Extract the PRNU noise residual of one frame.

    The residual is ``pixels - denoised(pixels)`` for a wavelet-domain
    local-Wiener denoiser, zero-meaned globally and per row/column.  A
    constant (degenerate) frame yields an all-zero residual flagged
    ``low_information`` rather than an error.
    """
    if denoise_strength <= 0:
        raise ValueError("denoise_strength must be > 0")
    w = noise_residual(frame.pixels, noise_sigma=denoise_strength)
    w = zero_mean_field(w)
    low = float(np.max(np.abs(w), initial=0.0)) < 1e-12
    if low:
        w = np.zeros_like(w)
    return NoiseResidual(values=w, source_frame=frame.frame_index, low_information=low)


def estimate_fingerprint(
    residuals: Sequence[NoiseResidual],
    frames: Sequence[Frame],
    camera_label: str = "",
) -> Fingerprint:
    """Maximum-likelihood fingerprint estimate from per-frame residuals.

    ``K = sum(W_i * I_i) / sum(I_i^2)`` elementwise, followed by zero-mean
    (global plus row/column) and unit-variance normalization.
    """
    if len(residuals) == 0:
        raise ValueError("need at least one residual")
    if len(residuals) != len(frames):
        raise ValueError("residuals and frames must pair up")
    shape = residuals[0].values.shape
    num = np.zeros(shape, dtype=np.float64)
    den = np.zeros(shape, dtype=np.float64)
    for res, frm in zip(residuals, frames):
        if res.values.shape != shape or frm.pixels.shape != shape:
            raise ValueError("all residuals and frames must share dimensions")
        intensity = np.asarray(frm.pixels, dtype=np.float64)
        num += res.values * intensity
        den += intensity * intensity
    k = np.divide(num, den, out=np.zeros_like(num), where=den > 0)
    k = zero_mean_field(k)
    sd = k.std()
    if sd > 0:
        k = k / sd
    return Fingerprint(values=k.astype(np.float32), n_sources=len(residuals), camera_label=camera_label)


def _residual_values(residual) -> np.ndarray:
    if isinstance(residual, NoiseResidual):
        return residual.values
    if isinstance(residual, Fingerprint):
        return residual.values
    return np.asarray(residual)


class CorrelationWindow:
    """Precomputed reference side of the circular NCC at lags |d| <= max_shift.

    The correlation is circular over this window's own shape, with the
    residual embedded at the centered anchor.  ``origin_xy`` records the
    absolute coordinate of the window's top-left sample when the window was
    cut from a larger reference.
    """

    def __init__(self, reference_block: np.ndarray, max_shift: int, origin_xy: tuple[int, int] = (0, 0)):
        ref = np.asarray(_residual_values(reference_block))
        if ref.ndim != 2:
            raise ValueError("reference block must be 2-D")
        if max_shift < 0:
            raise ValueError("max_shift must be >= 0")
        h, w = ref.shape
        if 2 * max_shift + 1 > min(h, w):
            raise ValueError("max_shift too large for reference block")
        self.shape = (h, w)
        self.max_shift = int(max_shift)
        self.origin_xy = (int(origin_xy[0]), int(origin_xy[1]))
        self.dtype = np.float32 if ref.dtype == np.float32 else np.float64
        ref = ref.astype(self.dtype, copy=False)
        ref0 = ref - ref.mean()
        self.norm = float(np.sqrt(np.sum(ref0 * ref0)))
        if self.norm == 0.0:
            raise ValueError("zero-variance reference block")
        self._ref0 = ref0
        self._fft = None

    def anchor(self, block_shape: tuple[int, int]) -> tuple[int, int]:
        bh, bw = block_shape
        h, w = self.shape
        if bh > h or bw > w:
            raise ValueError("residual does not fit inside the reference block")
        return ((h - bh) // 2, (w - bw) // 2)

    def ref_fft(self, workers: int = 1) -> np.ndarray:
        if self._fft is None:
            self._fft = sfft.rfft2(self._ref0, workers=workers)
        return self._fft


def score_blocks(
    blocks: np.ndarray,
    window: CorrelationWindow,
    exclude_radius: int = DEFAULT_EXCLUDE_RADIUS,
    peak_at: Optional[np.ndarray] = None,
    masks: Optional[np.ndarray] = None,
    workers: int = 1,
):
    """Score a batch of residual blocks against a correlation window.

    The peak is searched over lags |d| <= max_shift; the energy is the mean
    squared correlation over the window's full circular plane outside the
    (2*exclude_radius+1)^2 wrapped neighborhood of the peak, which makes
    PCE exactly equivariant under circular shifts.  Degenerate
    (zero-variance) blocks score ``pce = -inf``.  When ``peak_at`` (batch
    of ``(dx, dy)`` lags) is given the peak is pinned there instead of
    taking the argmax ("no new search").

    Returns ``(pce, peak_xy, peak_corr, energy)`` arrays over the batch.
    """
    blocks = np.asarray(blocks)
    if blocks.ndim == 2:
        blocks = blocks[None]
    b, bh, bw = blocks.shape
    m = window.max_shift
    if exclude_radius < 1:
        raise ValueError("exclude_radius must be >= 1")
    side = 2 * m + 1
    ch, cw = window.shape
    if (2 * exclude_radius + 1) ** 2 >= ch * cw:
        raise ValueError("exclude neighborhood covers the whole correlation plane")
    dt = np.promote_types(window.dtype, np.float32 if blocks.dtype == np.float32 else np.float64)
    blocks = blocks.astype(dt, copy=True)
    if masks is not None:
        masks = np.asarray(masks, dtype=bool)
        counts = masks.sum(axis=(1, 2))
        counts = np.maximum(counts, 1)
        sums = np.where(masks, blocks, 0).sum(axis=(1, 2))
        blocks = np.where(masks, blocks - (sums / counts)[:, None, None], 0).astype(dt)
    else:
        blocks -= blocks.mean(axis=(1, 2), keepdims=True)
    norms = np.sqrt(np.sum(blocks * blocks, axis=(1, 2)))
    degenerate = norms == 0.0

    ay, ax = window.anchor((bh, bw))
    pad = np.zeros((b, ch, cw), dtype=dt)
    pad[:, ay : ay + bh, ax : ax + bw] = blocks
    bf = sfft.rfft2(pad, workers=workers)
    np.conjugate(bf, out=bf)
    bf *= window.ref_fft(workers=workers)[None]
    corr = sfft.irfft2(bf, s=(ch, cw), workers=workers)

    lags = np.arange(-m, m + 1)
    iy = lags % ch
    ix = lags % cw
    surf = corr[:, iy[:, None], ix[None, :]]

    if peak_at is not None:
        peak_at = np.asarray(peak_at, dtype=np.int64)
        if peak_at.ndim == 1:
            peak_at = np.tile(peak_at, (b, 1))
        if np.any(np.abs(peak_at) > m):
            raise ValueError("pinned peak outside the searched shift range")
        pdx = peak_at[:, 0]
        pdy = peak_at[:, 1]
    else:
        flat = surf.reshape(b, -1).argmax(axis=1)
        pi, pj = np.unravel_index(flat, (side, side))
        pdy = pi - m
        pdx = pj - m

    r = exclude_radius
    total = np.sum(corr * corr, axis=(1, 2))
    span = np.arange(-r, r + 1)
    peak_raw = np.empty(b, dtype=np.float64)
    energy_raw = np.empty(b, dtype=np.float64)
    n_out = ch * cw - (2 * r + 1) ** 2
    for i in range(b):
        peak_raw[i] = corr[i, pdy[i] % ch, pdx[i] % cw]
        ny = (pdy[i] + span) % ch
        nx = (pdx[i] + span) % cw
        neigh = corr[i][np.ix_(ny, nx)]
        energy_raw[i] = (total[i] - np.sum(neigh * neigh)) / n_out

    scale = np.zeros(b, dtype=np.float64)
    np.divide(1.0, norms * window.norm, out=scale, where=~degenerate)
    peak_corr = peak_raw * scale
    energy = energy_raw * scale * scale
    with np.errstate(divide="ignore", invalid="ignore"):
        pce = np.where(energy > 0, peak_corr * peak_corr / energy, 0.0)
    pce = np.where(degenerate, -np.inf, pce)
    peak_xy = np.stack([pdx, pdy], axis=1)
    return pce, peak_xy, peak_corr, energy


def ncc_surface(residual, fingerprint_block, max_shift: int, workers: int = 1) -> np.ndarray:
    """Normalized circular cross-correlation surface at lags |d| <= max_shift.

    ``surface[i, j]`` is the correlation at lag ``(dy, dx) = (i - m, j - m)``.
    Equals the direct-definition computation within float rounding.
    """
    r = np.asarray(_residual_values(residual), dtype=np.float64)
    f = np.asarray(_residual_values(fingerprint_block), dtype=np.float64)
    window = CorrelationWindow(f, max_shift)
    r0 = r - r.mean()
    norm_r = float(np.sqrt(np.sum(r0 * r0)))
    if norm_r == 0.0:
        raise ValueError("zero-variance residual")
    ay, ax = window.anchor(r.shape)
    ch, cw = window.shape
    pad = np.zeros((ch, cw), dtype=np.float64)
    pad[ay : ay + r.shape[0], ax : ax + r.shape[1]] = r0
    bf = sfft.rfft2(pad, workers=workers)
    np.conjugate(bf, out=bf)
    bf *= window.ref_fft(workers=workers)
    corr = sfft.irfft2(bf, s=(ch, cw), workers=workers)
    m = max_shift
    lags = np.arange(-m, m + 1)
    iy = lags % ch
    ix = lags % cw
    return corr[iy[:, None], ix[None, :]] / (norm_r * window.norm)


def compute_pce(
    residual,
    fingerprint_block,
    max_shift: int,
    exclude_radius: int = DEFAULT_EXCLUDE_RADIUS,
    peak_at: Optional[tuple[int, int]] = None,
    mask: Optional[np.ndarray] = None,
    workers: int = 1,
) -> PceResult:
    """Peak-to-correlation-energy match statistic.

    The peak is the maximum signed correlation over the searched lags (or
    the pinned ``peak_at`` lag); the energy is the mean squared correlation
    over the full circular plane outside the ``(2*exclude_radius+1)^2``
    wrapped neighborhood of the peak.
    """
    r = _residual_values(residual)
    if isinstance(fingerprint_block, CorrelationWindow):
        window = fingerprint_block
        if window.max_shift != max_shift:
            raise ValueError("max_shift does not match the prepared window")
    else:
        window = CorrelationWindow(_residual_values(fingerprint_block), max_shift)
    pce, peak_xy, peak_corr, energy = score_blocks(
        r[None],
        window,
        exclude_radius=exclude_radius,
        peak_at=None if peak_at is None else np.asarray([peak_at]),
        masks=None if mask is None else np.asarray(mask)[None],
        workers=workers,
    )
    if not np.isfinite(pce[0]):
        raise ValueError("zero-variance residual")
    return PceResult(
        pce=float(pce[0]),
        peak_xy=(int(peak_xy[0, 0]), int(peak_xy[0, 1])),
        peak_corr=float(peak_corr[0]),
        energy=float(energy[0]),
    )
