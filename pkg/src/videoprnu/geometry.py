"""Corner-displacement warps, projective matrices, and nearest-neighbor warping.

A stabilization transform acting on a block is parameterized by integer
displacements of the block's four corner vertices, ordered clockwise from
the top-left: A (top-left), B (top-right), C (bottom-right), D
(bottom-left).  Corner positions are pixel centers, so a block of size S
spans an extent of S-1 between opposite corners.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

__all__ = [
    "CornerWarp",
    "Homography",
    "BlockGeometry",
    "corners_to_homography",
    "inverse_warp",
    "nn_resample",
    "nn_gather",
    "decompose_fixed_vertex",
    "translation_homography",
    "affine_about_center",
]


@dataclass(frozen=True)
class CornerWarp:
    """Integer displacements (dx, dy) of corners A, B, C, D."""

    a: tuple[int, int] = (0, 0)
    b: tuple[int, int] = (0, 0)
    c: tuple[int, int] = (0, 0)
    d: tuple[int, int] = (0, 0)

    def __post_init__(self):
        for name in ("a", "b", "c", "d"):
            dx, dy = getattr(self, name)
            object.__setattr__(self, name, (int(dx), int(dy)))

    @property
    def components(self) -> tuple[int, ...]:
        return (*self.a, *self.b, *self.c, *self.d)

    @classmethod
    def from_components(cls, comps) -> "CornerWarp":
        c = [int(v) for v in comps]
        if len(c) != 8:
            raise ValueError("expected 8 components")
        return cls(a=(c[0], c[1]), b=(c[2], c[3]), c=(c[4], c[5]), d=(c[6], c[7]))

    def max_abs(self) -> int:
        return max(abs(v) for v in self.components)

    def is_zero(self) -> bool:
        return all(v == 0 for v in self.components)


@dataclass(frozen=True)
class BlockGeometry:
    """Placement of a square analysis block inside a frame.

    ``origin_xy`` is the (x, y) coordinate of the block's top-left pixel.
    """

    origin_xy: tuple[int, int]
    size: int

    def __post_init__(self):
        if self.size < 2:
            raise ValueError("block size must be >= 2")
        object.__setattr__(self, "origin_xy", (int(self.origin_xy[0]), int(self.origin_xy[1])))

    def corners(self) -> np.ndarray:
        """Corner pixel centers A, B, C, D as (4, 2) array of (x, y)."""
        x0, y0 = self.origin_xy
        e = self.size - 1
        return np.array(
            [[x0, y0], [x0 + e, y0], [x0 + e, y0 + e], [x0, y0 + e]],
            dtype=np.float64,
        )


class Homography:
    """3x3 projective matrix normalized so m[2, 2] == 1."""

    __slots__ = ("m",)

    def __init__(self, m: np.ndarray):
        m = np.asarray(m, dtype=np.float64)
        if m.shape != (3, 3):
            raise ValueError("homography must be 3x3")
        if abs(m[2, 2]) < 1e-12:
            raise ValueError("cannot normalize homography with m[2,2] ~ 0")
        m = m / m[2, 2]
        if abs(np.linalg.det(m)) <= 1e-9:
            raise ValueError("homography is not invertible")
        self.m = m

    def inverse(self) -> "Homography":
        return Homography(np.linalg.inv(self.m))

    def compose(self, other: "Homography") -> "Homography":
        """Returns self after other (apply ``other`` first)."""
        return Homography(self.m @ other.m)

    def apply(self, points_xy: np.ndarray) -> np.ndarray:
        """Map (..., 2) points through the homography."""
        p = np.asarray(points_xy, dtype=np.float64)
        x, y = p[..., 0], p[..., 1]
        w = self.m[2, 0] * x + self.m[2, 1] * y + self.m[2, 2]
        u = (self.m[0, 0] * x + self.m[0, 1] * y + self.m[0, 2]) / w
        v = (self.m[1, 0] * x + self.m[1, 1] * y + self.m[1, 2]) / w
        return np.stack([u, v], axis=-1)

    def is_identity(self, tol: float = 0.0) -> bool:
        return np.allclose(self.m, np.eye(3), atol=tol)


def translation_homography(shift_xy) -> Homography:
    m = np.eye(3)
    m[0, 2] = float(shift_xy[0])
    m[1, 2] = float(shift_xy[1])
    return Homography(m)


def affine_about_center(center_xy, rotation_deg: float = 0.0, scale: float = 1.0) -> Homography:
    """Rotation/scale about a center point, as a homography."""
    if scale <= 0:
        raise ValueError("scale must be > 0")
    th = np.deg2rad(rotation_deg)
    cx, cy = float(center_xy[0]), float(center_xy[1])
    r = scale * np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
    m = np.eye(3)
    m[:2, :2] = r
    m[0, 2] = cx - r[0, 0] * cx - r[0, 1] * cy
    m[1, 2] = cy - r[1, 0] * cx - r[1, 1] * cy
    return Homography(m)


def _quad_is_convex(quad: np.ndarray) -> bool:
    """Strict convexity with clockwise (screen) orientation preserved."""
    for i in range(4):
        p0 = quad[i]
        p1 = quad[(i + 1) % 4]
        p2 = quad[(i + 2) % 4]
        e1 = p1 - p0
        e2 = p2 - p1
        if e1[0] * e2[1] - e1[1] * e2[0] <= 0:
            return False
    return True


def warped_corners(warp: CornerWarp, geom: BlockGeometry) -> np.ndarray:
    disp = np.array([warp.a, warp.b, warp.c, warp.d], dtype=np.float64)
    return geom.corners() + disp


def corners_to_homography(warp: CornerWarp, geom: BlockGeometry) -> Homography:
    """Homography mapping each block corner to its displaced position.

    Solved exactly via the standard 4-point direct linear mapping (8x8
    system).  Raises for displacements producing a degenerate (non-convex
    or collapsed) quadrilateral.
    """
    src = geom.corners()
    dst = warped_corners(warp, geom)
    if not _quad_is_convex(dst):
        raise ValueError("corner displacements produce a degenerate quadrilateral")
    a = np.zeros((8, 8))
    rhs = np.zeros(8)
    for i in range(4):
        x, y = src[i]
        u, v = dst[i]
        a[2 * i] = [x, y, 1, 0, 0, 0, -u * x, -u * y]
        rhs[2 * i] = u
        a[2 * i + 1] = [0, 0, 0, x, y, 1, -v * x, -v * y]
        rhs[2 * i + 1] = v
    try:
        sol = np.linalg.solve(a, rhs)
    except np.linalg.LinAlgError as exc:
        raise ValueError("degenerate corner configuration") from exc
    h = Homography(np.append(sol, 1.0).reshape(3, 3))
    residual = np.max(np.abs(h.apply(src) - dst))
    if residual > 1e-9:
        raise ValueError(f"corner mapping residual too large: {residual:g}")
    return h


def nn_gather(
    pattern: np.ndarray,
    matrix: np.ndarray,
    grid_x: np.ndarray,
    grid_y: np.ndarray,
    pattern_origin_xy: tuple[int, int] = (0, 0),
) -> tuple[np.ndarray, np.ndarray]:
    """Nearest-neighbor lookup ``out[g] = pattern[rint(matrix @ g)]``.

    Grid coordinates and the pattern origin are absolute; out-of-bounds
    sources produce zeros and a False entry in the returned validity mask.
    This is the single resampling kernel shared by the warp generator, the
    inverse search, and the pipeline, so their rounding is identical.
    """
    pat = np.asarray(pattern)
    w = matrix[2, 0] * grid_x + matrix[2, 1] * grid_y + matrix[2, 2]
    sx = (matrix[0, 0] * grid_x + matrix[0, 1] * grid_y + matrix[0, 2]) / w
    sy = (matrix[1, 0] * grid_x + matrix[1, 1] * grid_y + matrix[1, 2]) / w
    ix = np.rint(sx).astype(np.int64) - int(pattern_origin_xy[0])
    iy = np.rint(sy).astype(np.int64) - int(pattern_origin_xy[1])
    valid = (ix >= 0) & (ix < pat.shape[1]) & (iy >= 0) & (iy < pat.shape[0])
    out = np.zeros(grid_x.shape, dtype=pat.dtype)
    out[valid] = pat[iy[valid], ix[valid]]
    return out, valid


def nn_resample(
    pattern: np.ndarray,
    matrix: np.ndarray,
    out_origin_xy: tuple[int, int],
    out_shape: tuple[int, int],
    pattern_origin_xy: tuple[int, int] = (0, 0),
) -> tuple[np.ndarray, np.ndarray]:
    """Apply :func:`nn_gather` over a rectangular output grid."""
    h, w = out_shape
    xs = np.arange(out_origin_xy[0], out_origin_xy[0] + w, dtype=np.float64)
    ys = np.arange(out_origin_xy[1], out_origin_xy[1] + h, dtype=np.float64)
    gx, gy = np.meshgrid(xs, ys)
    return nn_gather(pattern, matrix, gx, gy, pattern_origin_xy)


def inverse_warp(
    pattern: np.ndarray,
    h: Homography,
    out_geom: BlockGeometry,
    pattern_origin_xy: tuple[int, int] = (0, 0),
) -> tuple[np.ndarray, np.ndarray]:
    """Warp ``pattern`` by ``h`` with nearest-neighbor inverse mapping.

    ``out[p] = pattern[rint(h^-1 p)]`` for every output grid point p of the
    block described by ``out_geom`` (absolute coordinates).  Source
    coordinates falling outside the pattern produce zeros; the returned
    boolean mask marks in-bounds samples.
    """
    return nn_resample(
        pattern,
        h.inverse().m,
        out_geom.origin_xy,
        (out_geom.size, out_geom.size),
        pattern_origin_xy,
    )


def decompose_fixed_vertex(warp: CornerWarp) -> tuple[CornerWarp, tuple[int, int]]:
    """Split a warp into an A-pinned relative warp plus a global shift.

    ``shift`` is A's displacement; the relative warp displaces every corner
    by its offset from A.  Composing translation(shift) after the relative
    warp maps the four corners to the same targets as the original warp,
    coordinate-exact.
    """
    sx, sy = warp.a
    rel = CornerWarp(
        a=(0, 0),
        b=(warp.b[0] - sx, warp.b[1] - sy),
        c=(warp.c[0] - sx, warp.c[1] - sy),
        d=(warp.d[0] - sx, warp.d[1] - sy),
    )
    return rel, (sx, sy)
