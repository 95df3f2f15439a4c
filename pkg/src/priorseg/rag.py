"""Region adjacency graphs over superpixels and dense subgraph extraction."""

from __future__ import annotations

import heapq
from dataclasses import dataclass

import numpy as np

from .graph import GraphError, GraphTopology


@dataclass(frozen=True)
class Rag:
    """Region adjacency graph with per-node geometry.

    contact counts the 4-neighbor pixel pairs spanning each edge; masses and
    centers describe each superpixel's pixel support.
    """

    topo: GraphTopology
    superpixels: np.ndarray
    contact: np.ndarray
    masses: np.ndarray
    centers: np.ndarray
    node_features: np.ndarray | None = None


def build_rag(superpixels: np.ndarray,
              node_features: np.ndarray | None = None) -> Rag:
    """RAG from a label map: one node per region, edges by 4-adjacency."""
    sp = np.asarray(superpixels)
    n = int(sp.max()) + 1
    masses = np.bincount(sp.ravel(), minlength=n).astype(np.float64)
    if (masses == 0).any():
        raise GraphError("superpixel labels are not contiguous")
    if node_features is not None and len(node_features) != n:
        raise GraphError(
            f"feature rows ({len(node_features)}) != region count ({n})")
    rows, cols = np.indices(sp.shape)
    centers = np.stack([
        np.bincount(sp.ravel(), weights=rows.ravel(), minlength=n) / masses,
        np.bincount(sp.ravel(), weights=cols.ravel(), minlength=n) / masses,
    ], axis=1)
    pairs = []
    for a, b in ((sp[:, :-1], sp[:, 1:]), (sp[:-1, :], sp[1:, :])):
        diff = a != b
        lo = np.minimum(a[diff], b[diff])
        hi = np.maximum(a[diff], b[diff])
        pairs.append(np.stack([lo, hi], axis=1))
    allp = np.concatenate(pairs, axis=0)
    edges, contact = np.unique(allp, axis=0, return_counts=True)
    return Rag(GraphTopology(n, edges), sp, contact.astype(np.float64),
               masses, centers, node_features)


def subgraph_sizes_schedule(sizes: list[int], num_edges: int) -> list[int]:
    """Requested subgraph sizes that fit into the graph."""
    return [s for s in sizes if s <= num_edges]


def extract_subgraphs(topo: GraphTopology, size: int,
                      rng: np.random.Generator) -> list[np.ndarray]:
    """Cover all edges with connected subgraphs of exactly `size` edges.

    Subgraphs are grown around random uncovered start edges by a priority
    queue over frontier vertices. Popping a vertex pulls every edge it has
    into the current vertex set (capped at `size`); vertices that still lead
    outside are re-pushed with their priority lowered by the number of
    just-internalized edges minus one. When the queue has been cycled
    without progress (queue size <= draws since the last addition), the
    popped vertex's lowest outside neighbor is pulled in to force growth.
    Subgraphs overlap in general; each covers at least one new edge.
    """
    n_edges = topo.num_edges
    if size < 1 or size > n_edges:
        raise GraphError(f"subgraph size {size} not in [1, {n_edges}]")
    adj = topo.adjacency()
    deg = topo.degrees
    eid_of = topo.edge_index_map()
    uncovered = np.ones(n_edges, dtype=bool)
    out: list[np.ndarray] = []

    while uncovered.any():
        remaining = np.flatnonzero(uncovered)
        start = int(remaining[rng.integers(len(remaining))])
        i, j = (int(v) for v in topo.edges[start])
        sg_edges = {start}
        sg_vtx = {i, j}
        heap: list[tuple[int, int]] = [(0, i), (0, j)]
        heapq.heapify(heap)
        stall_prio = 0
        n_draws = 0
        while len(sg_edges) < size:
            if not heap:
                raise GraphError(
                    f"connected component exhausted below subgraph size {size}")
            prio, node = heapq.heappop(heap)
            n_draws += 1
            inside = [(v, e) for v, e in adj[node] if v in sg_vtx]
            for _, e in inside:
                if e not in sg_edges:
                    sg_edges.add(e)
                    n_draws = 0
                    if len(sg_edges) == size:
                        break
            if len(sg_edges) == size:
                break
            if len(inside) < deg[node]:
                heapq.heappush(heap, (prio - (len(inside) - 1), node))
            if len(heap) <= n_draws:
                outside = [v for v, _ in adj[node] if v not in sg_vtx]
                if outside:
                    new = outside[0]
                    sg_edges.add(eid_of[(min(node, new), max(node, new))])
                    n_draws = 0
                    sg_vtx.add(new)
                    stall_prio += 1
                    heapq.heappush(heap, (stall_prio, new))
        covered = np.fromiter(sg_edges, dtype=np.int64, count=len(sg_edges))
        uncovered[covered] = False
        out.append(np.sort(covered))
    return out


def superpixel_gt_majority(superpixels: np.ndarray, gt_labels: np.ndarray) -> np.ndarray:
    """Majority ground-truth object id per superpixel."""
    sp = np.asarray(superpixels).ravel()
    gt = np.asarray(gt_labels).ravel()
    n = int(sp.max()) + 1
    g = int(gt.max()) + 1
    joint = np.bincount(sp * g + gt, minlength=n * g).reshape(n, g)
    return joint.argmax(axis=1)


def gt_edge_actions(topo: GraphTopology, superpixels: np.ndarray,
                    gt_labels: np.ndarray) -> np.ndarray:
    """Oracle merge action per edge: 1.0 if both superpixels lie in the same
    ground-truth object (by majority vote), else 0.0."""
    maj = superpixel_gt_majority(superpixels, gt_labels)
    same = maj[topo.edges[:, 0]] == maj[topo.edges[:, 1]]
    return same.astype(np.float64)
