"""Superpixel-level features: pooled pixel features and handcrafted polar ones."""

from __future__ import annotations

import numpy as np

from .filters import gaussian_smooth


def pool_node_features(pixel_features: np.ndarray, superpixels: np.ndarray) -> np.ndarray:
    """Mean pixel feature per superpixel.

    pixel_features: (H, W, D) or (H*W, D); superpixels: (H, W) int labels
    0..n-1. Returns (n, D).
    """
    sp = np.asarray(superpixels)
    feats = np.asarray(pixel_features, dtype=np.float64)
    if feats.ndim == 3:
        feats = feats.reshape(-1, feats.shape[2])
    flat = sp.ravel()
    if feats.shape[0] != flat.size:
        raise ValueError(f"feature/superpixel size mismatch: "
                         f"{feats.shape[0]} vs {flat.size}")
    n = int(flat.max()) + 1
    out = np.zeros((n, feats.shape[1]))
    np.add.at(out, flat, feats)
    counts = np.bincount(flat, minlength=n)
    if (counts == 0).any():
        raise ValueError("superpixel labels are not contiguous")
    return out / counts[:, None]


def handcrafted_node_features(superpixels: np.ndarray) -> np.ndarray:
    """Polar position and mass per superpixel: [r/half_diag, sin, cos, mass].

    Radius is the distance of the superpixel centroid from the image center
    over the half-diagonal, the angle is the centroid's polar angle, and mass
    is the pixel count as a fraction of the image.
    """
    sp = np.asarray(superpixels)
    h, w = sp.shape
    n = int(sp.max()) + 1
    flat = sp.ravel()
    counts = np.bincount(flat, minlength=n).astype(np.float64)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    cy = np.bincount(flat, weights=yy.ravel(), minlength=n) / counts
    cx = np.bincount(flat, weights=xx.ravel(), minlength=n) / counts
    dy = cy - (h - 1) / 2.0
    dx = cx - (w - 1) / 2.0
    dist = np.hypot(dy, dx)
    half_diag = np.hypot((h - 1) / 2.0, (w - 1) / 2.0)
    theta = np.arctan2(dy, dx)
    return np.stack([dist / half_diag, np.sin(theta), np.cos(theta),
                     counts / (h * w)], axis=1)


def superpixel_boundary_map(superpixels: np.ndarray) -> np.ndarray:
    """1.0 on pixels adjacent (4-neighborhood) to a different superpixel."""
    sp = np.asarray(superpixels)
    out = np.zeros(sp.shape)
    horiz = sp[:, 1:] != sp[:, :-1]
    vert = sp[1:, :] != sp[:-1, :]
    out[:, 1:][horiz] = 1.0
    out[:, :-1][horiz] = 1.0
    out[1:, :][vert] = 1.0
    out[:-1, :][vert] = 1.0
    return out


def smoothed_boundary_map(superpixels: np.ndarray, sigma: float = 1.0) -> np.ndarray:
    return gaussian_smooth(superpixel_boundary_map(superpixels), sigma)
