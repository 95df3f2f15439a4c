"""Synthetic scenes: textured disks on a striped background, and ring tissues.

Both generators are fully deterministic given the passed Generator and return
the image in [0, 1] together with a dense instance label map (0 = background,
objects numbered from 1).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class GenerationError(RuntimeError):
    """Raised when a scene cannot be placed within the retry budget."""


@dataclass
class CircleScene:
    image: np.ndarray
    labels: np.ndarray
    centers: np.ndarray  # (n, 2) row, col
    radii: np.ndarray    # (n,) nominal radius before boundary perturbation


@dataclass
class RingScene:
    image: np.ndarray
    labels: np.ndarray
    n_cells: int
    center: tuple[float, float]
    ring_radius: float
    band_halfwidth: float


def _stripes(shape: tuple[int, int], rng: np.random.Generator,
             wavelength: tuple[float, float]) -> np.ndarray:
    """Unit-amplitude sinusoidal stripes at a random orientation."""
    h, w = shape
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    beta = rng.uniform(0, np.pi)
    lam = rng.uniform(*wavelength)
    phase = rng.uniform(0, 2 * np.pi)
    return np.sin(2 * np.pi * (np.cos(beta) * xx + np.sin(beta) * yy) / lam + phase)


def generate_circles(size: int, rng: np.random.Generator,
                     count_range: tuple[int, int] = (5, 5),
                     radius_range: tuple[float, float] = (6.0, 9.0),
                     boundary_perturb: float = 0.05,
                     noise: float = 0.03,
                     max_attempts: int = 200) -> CircleScene:
    """Non-overlapping textured disks with perturbed rims on striped ground."""
    n = int(rng.integers(count_range[0], count_range[1] + 1))
    r_max_eff = radius_range[1] * (1.0 + boundary_perturb)
    margin = r_max_eff + 2.0
    if 2 * margin >= size:
        raise GenerationError(f"size {size} too small for radius range {radius_range}")

    centers: list[tuple[float, float]] = []
    radii: list[float] = []
    # greedy placement can paint itself into a corner on tight layouts, so
    # a failed fill restarts the whole scene rather than giving up
    for restart in range(25):
        centers.clear()
        radii.clear()
        for _ in range(n):
            for attempt in range(max_attempts):
                r = rng.uniform(*radius_range)
                cy = rng.uniform(margin, size - 1 - margin)
                cx = rng.uniform(margin, size - 1 - margin)
                gap = 3.0
                ok = all(np.hypot(cy - py, cx - px) >=
                         (r + pr) * (1 + boundary_perturb) + gap
                         for (py, px), pr in zip(centers, radii))
                if ok:
                    centers.append((cy, cx))
                    radii.append(r)
                    break
            else:
                break
        if len(centers) == n:
            break
    else:
        raise GenerationError(
            f"could not place {n} disks of radius {radius_range} "
            f"in a {size}x{size} image")

    img = 0.35 + 0.10 * _stripes((size, size), rng, (10.0, 16.0))
    labels = np.zeros((size, size), dtype=np.int32)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)

    for k, ((cy, cx), r) in enumerate(zip(centers, radii), start=1):
        a2, a3 = rng.uniform(0.2, 1.0, size=2)
        norm = a2 + a3
        a2, a3 = a2 / norm, a3 / norm
        p2, p3 = rng.uniform(0, 2 * np.pi, size=2)
        dy, dx = yy - cy, xx - cx
        theta = np.arctan2(dy, dx)
        rho = r * (1.0 + boundary_perturb * (a2 * np.sin(2 * theta + p2)
                                             + a3 * np.sin(3 * theta + p3)))
        mask = dy * dy + dx * dx <= rho * rho
        base = rng.uniform(0.74, 0.84)
        tex = 0.05 * _stripes((size, size), rng, (7.0, 10.0))
        img[mask] = base + tex[mask]
        labels[mask] = k

    img += rng.normal(0.0, noise, size=img.shape)
    return CircleScene(np.clip(img, 0.0, 1.0), labels,
                       np.array(centers, dtype=np.float64),
                       np.array(radii, dtype=np.float64))


def generate_rings(size: int, rng: np.random.Generator,
                   cell_range: tuple[int, int] = (8, 12),
                   ring_radius_ratio: float = 0.3,
                   band_halfwidth_ratio: float = 0.12,
                   noise: float = 0.02) -> RingScene:
    """A ring of membrane-bounded cells around the image center."""
    n = int(rng.integers(cell_range[0], cell_range[1] + 1))
    c = (size - 1) / 2.0
    j = ring_radius_ratio * size
    w = band_halfwidth_ratio * size
    r_in, r_out = j - w, j + w
    if r_in <= 2 or r_out >= c:
        raise GenerationError(f"ring geometry does not fit into size {size}")

    # near-regular angular walls with jitter, strictly increasing
    base = 2 * np.pi * np.arange(n) / n
    walls = base + rng.uniform(-0.25, 0.25, size=n) * (2 * np.pi / n)
    walls += rng.uniform(0, 2 * np.pi)
    walls = np.sort(np.mod(walls, 2 * np.pi))

    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    dy, dx = yy - c, xx - c
    rad = np.hypot(dy, dx)
    phi = np.mod(np.arctan2(dy, dx), 2 * np.pi)

    in_band = (rad >= r_in) & (rad <= r_out)
    sector = np.searchsorted(walls, phi, side="right") - 1
    sector = np.where(sector < 0, n - 1, sector)
    labels = np.where(in_band, sector + 1, 0).astype(np.int32)

    img = 0.18 + rng.normal(0.0, noise, size=(size, size))
    cell_tone = rng.uniform(0.42, 0.58, size=n)
    img[in_band] = cell_tone[sector[in_band]] \
        + rng.normal(0.0, noise, size=int(in_band.sum()))

    membrane_halfwidth = 1.1
    rim = in_band & ((np.abs(rad - r_in) < membrane_halfwidth)
                     | (np.abs(rad - r_out) < membrane_halfwidth))
    ang_dist = np.abs(phi[:, :, None] - walls[None, None, :])
    ang_dist = np.minimum(ang_dist, 2 * np.pi - ang_dist)
    radial_wall = in_band & ((ang_dist * rad[:, :, None]).min(axis=2)
                             < membrane_halfwidth)
    img[rim | radial_wall] = 0.92

    return RingScene(np.clip(img, 0.0, 1.0), labels, n, (c, c), j, w)
