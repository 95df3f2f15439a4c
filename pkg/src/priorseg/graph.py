"""Undirected graph topology shared by the GNN, RAG and partitioning code."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class GraphError(ValueError):
    pass


@dataclass
class GraphTopology:
    """Simple undirected graph with a canonical edge order.

    Edges are stored as an (E, 2) int array with i < j per row, sorted
    lexicographically and de-duplicated; every algorithm downstream indexes
    edges by their position in this canonical order.
    """

    num_nodes: int
    edges: np.ndarray
    own: np.ndarray = field(init=False, repr=False)      # (2E,) receiver per directed edge
    nbr: np.ndarray = field(init=False, repr=False)      # (2E,) sender per directed edge
    dir_eids: np.ndarray = field(init=False, repr=False)  # (2E,) undirected edge id
    degrees: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        e = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        if e.size and (e.min() < 0 or e.max() >= self.num_nodes):
            raise GraphError("edge endpoint out of range")
        if np.any(e[:, 0] == e[:, 1]):
            raise GraphError("self loops are not allowed")
        e = np.sort(e, axis=1)
        e = np.unique(e, axis=0) if e.size else e
        self.edges = e
        n_e = len(e)
        self.own = np.concatenate([e[:, 0], e[:, 1]])
        self.nbr = np.concatenate([e[:, 1], e[:, 0]])
        self.dir_eids = np.concatenate([np.arange(n_e), np.arange(n_e)])
        self.degrees = np.bincount(self.own, minlength=self.num_nodes)

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    def adjacency(self) -> list[list[tuple[int, int]]]:
        """Per node: (neighbor, edge id) pairs sorted by neighbor index."""
        adj: list[list[tuple[int, int]]] = [[] for _ in range(self.num_nodes)]
        for eid, (i, j) in enumerate(self.edges):
            adj[int(i)].append((int(j), eid))
            adj[int(j)].append((int(i), eid))
        for lst in adj:
            lst.sort()
        return adj

    def edge_index_map(self) -> dict[tuple[int, int], int]:
        return {(int(i), int(j)): eid for eid, (i, j) in enumerate(self.edges)}


def connected_components(num_nodes: int, edges: np.ndarray,
                         mask: np.ndarray | None = None) -> np.ndarray:
    """Component label per node, labels ordered by smallest member node.

    `mask` optionally restricts the traversal to a subset of edges.
    """
    parent = np.arange(num_nodes)

    def find(x: int) -> int:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    use = edges if mask is None else edges[mask]
    for i, j in use:
        ri, rj = find(int(i)), find(int(j))
        if ri != rj:
            if rj < ri:
                ri, rj = rj, ri
            parent[rj] = ri
    roots = np.array([find(i) for i in range(num_nodes)])
    _, labels = np.unique(roots, return_inverse=True)
    return labels


def is_connected(topo: GraphTopology) -> bool:
    if topo.num_nodes == 0:
        return True
    return len(np.unique(connected_components(topo.num_nodes, topo.edges))) == 1
