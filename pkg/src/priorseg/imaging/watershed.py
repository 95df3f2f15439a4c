"""Superpixel generation: seeded watershed and a grid mutex watershed.

Both return a dense int32 label map, labels 0..n-1, where every label region
is 4-connected. All tie-breaking is deterministic (raster order / stable
sorts), so a fixed input always yields the identical partition.
"""

from __future__ import annotations

import heapq

import numpy as np

from .filters import gaussian_smooth

_N4 = ((-1, 0), (1, 0), (0, -1), (0, 1))


def regional_minima(img: np.ndarray) -> np.ndarray:
    """Label connected equal-value plateaus with no lower 4-neighbor.

    Returns an int32 map: 0 for non-minimum pixels, minima numbered from 1
    in raster order of their first pixel.
    """
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape
    comp = np.full((h, w), -1, dtype=np.int32)
    is_min: list[bool] = []
    order: list[int] = []
    for sy in range(h):
        for sx in range(w):
            if comp[sy, sx] != -1:
                continue
            cid = len(is_min)
            val = img[sy, sx]
            comp[sy, sx] = cid
            stack = [(sy, sx)]
            minimum = True
            while stack:
                y, x = stack.pop()
                for dy, dx in _N4:
                    ny, nx = y + dy, x + dx
                    if not (0 <= ny < h and 0 <= nx < w):
                        continue
                    v = img[ny, nx]
                    if v < val:
                        minimum = False
                    elif v == val and comp[ny, nx] == -1:
                        comp[ny, nx] = cid
                        stack.append((ny, nx))
            is_min.append(minimum)
            order.append(cid)
    remap = np.zeros(len(is_min), dtype=np.int32)
    nxt = 1
    for cid in order:
        if is_min[cid]:
            remap[cid] = nxt
            nxt += 1
    return remap[comp]


def seeded_watershed(boundary: np.ndarray, smoothing_sigma: float = 1.0) -> np.ndarray:
    """Priority flood from the regional minima of the smoothed boundary map."""
    b = np.asarray(boundary, dtype=np.float64)
    if b.ndim != 2:
        raise ValueError(f"boundary map must be 2-D, got {b.shape}")
    if smoothing_sigma > 0:
        b = gaussian_smooth(b, smoothing_sigma)
    seeds = regional_minima(b)
    h, w = b.shape
    labels = np.full((h, w), -1, dtype=np.int32)
    heap: list[tuple[float, int, int, int]] = []
    counter = 0
    for y in range(h):
        for x in range(w):
            if seeds[y, x]:
                labels[y, x] = seeds[y, x] - 1
                heapq.heappush(heap, (b[y, x], counter, y, x))
                counter += 1
    while heap:
        _, _, y, x = heapq.heappop(heap)
        lab = labels[y, x]
        for dy, dx in _N4:
            ny, nx = y + dy, x + dx
            if 0 <= ny < h and 0 <= nx < w and labels[ny, nx] == -1:
                labels[ny, nx] = lab
                heapq.heappush(heap, (b[ny, nx], counter, ny, nx))
                counter += 1
    return labels


def _line_max(b: np.ndarray, dy: int, dx: int) -> np.ndarray:
    """Max of b along the discrete segment to offset (dy, dx), per start pixel.

    Output shape matches the valid start region (h-|dy|, w-|dx|); starts are
    the top-left corner of the offset bounding box when dy/dx are negative.
    """
    h, w = b.shape
    steps = max(abs(dy), abs(dx))
    oh, ow = h - abs(dy), w - abs(dx)
    out = np.full((oh, ow), -np.inf)
    y0 = max(0, -dy)
    x0 = max(0, -dx)
    for t in range(steps + 1):
        sy = y0 + int(round(t * dy / steps))
        sx = x0 + int(round(t * dx / steps))
        out = np.maximum(out, b[sy:sy + oh, sx:sx + ow])
    return out


def grid_mutex_watershed(boundary: np.ndarray,
                         offsets: tuple[tuple[int, int], ...] = ((0, 6), (6, 0), (4, 4), (-4, 4)),
                         repulsion_scale: float = 1.0,
                         smoothing_sigma: float = 1.0) -> np.ndarray:
    """Mutex watershed on the pixel grid.

    Attractive edges join 4-neighbors with weight 1 - max(boundary values);
    repulsive edges at the given offsets carry repulsion_scale * the max
    boundary value along the connecting segment. Edges are processed in
    descending weight; attractive edges merge unless a mutex exists,
    repulsive edges install a mutex between the two regions.
    """
    b = np.asarray(boundary, dtype=np.float64)
    h, w = b.shape
    if smoothing_sigma > 0:
        b = gaussian_smooth(b, smoothing_sigma)
    # normalize so attraction/repulsion balance is scale-free
    peak = b.max()
    if peak > 0:
        b = b / peak

    def pid(y, x):
        return y * w + x

    rows: list[np.ndarray] = []  # weight, kind (0 att, 1 rep), p, q
    yy, xx = np.mgrid[0:h, 0:w]
    for dy, dx in ((0, 1), (1, 0)):
        p = pid(yy[:h - dy, :w - dx], xx[:h - dy, :w - dx]).ravel()
        q = pid(yy[dy:, dx:], xx[dy:, dx:]).ravel()
        wgt = 1.0 - np.maximum(b[:h - dy, :w - dx], b[dy:, dx:]).ravel()
        rows.append(np.stack([wgt, np.zeros_like(wgt), p, q]))
    for dy, dx in offsets:
        if abs(dy) >= h or abs(dx) >= w:
            continue
        oh, ow = h - abs(dy), w - abs(dx)
        sy, sx = max(0, -dy), max(0, -dx)
        p = pid(yy[sy:sy + oh, sx:sx + ow], xx[sy:sy + oh, sx:sx + ow]).ravel()
        ty, tx = max(0, dy), max(0, dx)
        q = pid(yy[ty:ty + oh, tx:tx + ow], xx[ty:ty + oh, tx:tx + ow]).ravel()
        wgt = repulsion_scale * _line_max(b, dy, dx).ravel()
        rows.append(np.stack([wgt, np.ones_like(wgt), p, q]))

    table = np.concatenate(rows, axis=1)
    roots = mutex_cluster(h * w, table[0], table[1].astype(np.int64),
                          table[2].astype(np.int64),
                          table[3].astype(np.int64))
    return compact_labels(roots).reshape(h, w)


def mutex_cluster(num_items: int, weights: np.ndarray, kinds: np.ndarray,
                  ps: np.ndarray, qs: np.ndarray) -> np.ndarray:
    """Greedy constrained agglomeration over an explicit edge list.

    kinds: 0 = attractive (merge unless a mutex forbids it), 1 = repulsive
    (install a mutex between the clusters). Edges are taken in descending
    weight; ties prefer attractive edges, then the lowest (p, q) pair, so
    the result is deterministic. Returns a root label per item.
    """
    order = np.lexsort((qs, ps, kinds,
                        -np.asarray(weights, dtype=np.float64)))
    kinds = np.asarray(kinds)[order]
    ps = np.asarray(ps)[order]
    qs = np.asarray(qs)[order]

    parent = np.arange(num_items)
    size = np.ones(num_items, dtype=np.int64)
    mutex: dict[int, set[int]] = {}

    def find(x: int) -> int:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for k in range(len(ps)):
        rp, rq = find(int(ps[k])), find(int(qs[k]))
        if rp == rq:
            continue
        if kinds[k] == 0:
            if rq in mutex.get(rp, ()):
                continue
            if size[rp] < size[rq]:
                rp, rq = rq, rp
            parent[rq] = rp
            size[rp] += size[rq]
            mq = mutex.pop(rq, None)
            if mq:
                mp = mutex.setdefault(rp, set())
                mp |= mq
                mp.discard(rp)
                for r in mq:
                    s = mutex[r]
                    s.discard(rq)
                    s.add(rp)
        else:
            mutex.setdefault(rp, set()).add(rq)
            mutex.setdefault(rq, set()).add(rp)

    return np.array([find(i) for i in range(num_items)])


def compact_labels(raw: np.ndarray) -> np.ndarray:
    """Renumber arbitrary labels to 0..n-1 in order of first occurrence."""
    flat = np.asarray(raw).ravel()
    _, first, inverse = np.unique(flat, return_index=True, return_inverse=True)
    ranks = np.argsort(np.argsort(first))  # appearance rank per unique value
    return ranks[inverse].reshape(np.shape(raw)).astype(np.int32)
