"""Shape descriptors for predicted objects: circle evidence and oriented boxes."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_HOUGH_FILL = 0.9
_ANNULUS_HALFWIDTH = 0.75
_RADIUS_STEP = 0.5
_BOUNDARY_CAP = 144
_offset_cache: dict[float, tuple[np.ndarray, np.ndarray]] = {}
_value_cache: dict[bytes, float] = {}
_VALUE_CACHE_CAP = 4096


def boundary_pixels(mask: np.ndarray) -> np.ndarray:
    """(B, 2) coordinates of mask pixels with a 4-neighbor outside the mask.

    The image border counts as outside.
    """
    m = np.asarray(mask, dtype=bool)
    inner = np.zeros_like(m)
    inner[1:-1, 1:-1] = (m[:-2, 1:-1] & m[2:, 1:-1]
                         & m[1:-1, :-2] & m[1:-1, 2:])
    return np.argwhere(m & ~inner)


def _annulus_offsets(r: float) -> tuple[np.ndarray, np.ndarray]:
    """Integer offsets whose length is within the annulus half-width of r."""
    if r not in _offset_cache:
        hi = int(np.ceil(r + 1))
        rr = np.arange(-hi, hi + 1)
        dy, dx = np.meshgrid(rr, rr, indexing="ij")
        d = np.hypot(dy, dx)
        keep = np.abs(d - r) <= _ANNULUS_HALFWIDTH
        _offset_cache[r] = (dy[keep].copy(), dx[keep].copy())
    return _offset_cache[r]


def circle_hough_value(mask: np.ndarray, r_min: float, r_max: float,
                       min_mass: int = 12) -> float:
    """Best normalized circle vote over centers and radii, clamped to [0, 1].

    Boundary pixels of the mask vote into annuli of half-width 0.75 around
    candidate centers; radii step in halves so the rasterized rim of any
    disk in range lands fully inside some bin. The score of a candidate
    (center, r) is votes / (2*pi*r*0.9). Objects with fewer than min_mass
    pixels score 0 (nothing in a sane radius range is that small, and it
    keeps reward evaluation cheap during early training when partitions
    contain many fragments).
    """
    m = np.asarray(mask, dtype=bool)
    mass = int(m.sum())
    if mass == 0:
        raise ValueError("circle_hough_value of an empty mask")
    if mass < min_mass:
        return 0.0
    ys, xs = np.nonzero(m)
    crop = m[ys.min():ys.max() + 1, xs.min():xs.max() + 1]
    key = b"%d,%d,%g,%g," % (crop.shape[0], crop.shape[1], r_min, r_max) \
        + np.packbits(crop).tobytes()
    hit = _value_cache.get(key)
    if hit is not None:
        return hit

    pts = boundary_pixels(crop)
    scale = 1.0
    if len(pts) > _BOUNDARY_CAP:
        stride = int(np.ceil(len(pts) / _BOUNDARY_CAP))
        kept = pts[::stride]
        scale = len(pts) / len(kept)
        pts = kept

    margin = int(np.ceil(r_max)) + 2
    acc_h = crop.shape[0] + 2 * margin
    acc_w = crop.shape[1] + 2 * margin
    best = 0.0
    for r in np.arange(r_min, r_max + _RADIUS_STEP / 2, _RADIUS_STEP):
        ody, odx = _annulus_offsets(float(r))
        cy = (pts[:, 0][:, None] + margin + ody[None, :]).ravel()
        cx = (pts[:, 1][:, None] + margin + odx[None, :]).ravel()
        votes = np.bincount(cy * acc_w + cx, minlength=acc_h * acc_w).max()
        best = max(best, votes * scale / (2.0 * np.pi * r * _HOUGH_FILL))

    value = float(min(best, 1.0))
    if len(_value_cache) >= _VALUE_CACHE_CAP:
        _value_cache.pop(next(iter(_value_cache)))
    _value_cache[key] = value
    return value


@dataclass(frozen=True)
class BoxStats:
    center: tuple[float, float]  # (row, col)
    length: float                # extent along the principal axis
    width: float                 # extent along the minor axis
    orientation: float           # principal axis angle in [0, pi)


def fit_rotated_bbox(mask: np.ndarray) -> BoxStats:
    """Principal-axes bounding box of the mask pixels."""
    pts = np.argwhere(np.asarray(mask, dtype=bool)).astype(np.float64)
    if len(pts) == 0:
        raise ValueError("fit_rotated_bbox of an empty mask")
    center = pts.mean(axis=0)
    if len(pts) == 1:
        # A lone pixel has no extent and no axis worth reporting.
        return BoxStats((center[0], center[1]), 0.0, 0.0, 0.0)
    d = pts - center
    cov = d.T @ d / len(pts)
    evals, evecs = np.linalg.eigh(cov)  # ascending eigenvalues
    major = evecs[:, 1]
    minor = evecs[:, 0]
    span_l = d @ major
    span_w = d @ minor
    length = float(span_l.max() - span_l.min()) + 1.0
    width = float(span_w.max() - span_w.min()) + 1.0
    angle = float(np.mod(np.arctan2(major[0], major[1]), np.pi))
    return BoxStats((float(center[0]), float(center[1])), length, width, angle)
