"""Message-passing layers on the region adjacency graph.

One convolution updates node features as

    f_i <- gamma(f_i, mean_{j in N(i)} phi(f_i, f_j))

with phi and gamma small MLPs; the critic variant appends the edge action to
each phi input. Nodes without neighbors aggregate to the zero vector. All
layers are built from autodiff primitives, so gradients flow through.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .graph import GraphTopology


@dataclass
class MLP:
    """Fully connected stack: relu between layers, optional final squash."""

    weights: list[Tensor]
    biases: list[Tensor]
    final_activation: str | None = None

    def __call__(self, x: Tensor) -> Tensor:
        n = len(self.weights)
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            x = ad.add(ad.matmul(x, w), b)
            if k < n - 1:
                x = ad.relu(x)
        if self.final_activation == "relu":
            x = ad.relu(x)
        elif self.final_activation == "tanh":
            x = ad.tanh(x)
        elif self.final_activation is not None:
            raise ValueError(f"unknown activation {self.final_activation!r}")
        return x

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[1]


def make_mlp(pset: ad.ParameterSet, prefix: str, sizes: list[int],
             rng: np.random.Generator,
             final_activation: str | None = None) -> MLP:
    """Register fan-in uniform weights and zero biases under `prefix`."""
    ws, bs = [], []
    for k in range(len(sizes) - 1):
        fan_in, fan_out = sizes[k], sizes[k + 1]
        ws.append(pset.add(f"{prefix}.w{k}",
                           ad.fan_in_uniform(rng, fan_in, (fan_in, fan_out))))
        bs.append(pset.add(f"{prefix}.b{k}", np.zeros(fan_out)))
    return MLP(ws, bs, final_activation)


def _aggregate(topo: GraphTopology, messages: Tensor) -> Tensor:
    """Mean of incoming messages per node; zero vector for isolated nodes."""
    total = ad.segment_sum(messages, topo.own, topo.num_nodes)
    inv_deg = 1.0 / np.maximum(topo.degrees, 1)
    return ad.mul(total, inv_deg[:, None])


def actor_conv(topo: GraphTopology, feats: Tensor, phi: MLP, gamma: MLP) -> Tensor:
    f_own = ad.gather_rows(feats, topo.own)
    f_nbr = ad.gather_rows(feats, topo.nbr)
    msgs = phi(ad.concat([f_own, f_nbr], axis=1))
    agg = _aggregate(topo, msgs)
    return gamma(ad.concat([feats, agg], axis=1))


def critic_conv(topo: GraphTopology, feats: Tensor, actions: Tensor,
                phi: MLP, gamma: MLP) -> Tensor:
    """Like actor_conv but phi also sees the (symmetric) edge action."""
    f_own = ad.gather_rows(feats, topo.own)
    f_nbr = ad.gather_rows(feats, topo.nbr)
    a_dir = ad.gather_rows(actions, topo.dir_eids)
    msgs = phi(ad.concat([f_own, f_nbr, a_dir], axis=1))
    agg = _aggregate(topo, msgs)
    return gamma(ad.concat([feats, agg], axis=1))


def edge_readout(topo: GraphTopology, feats: Tensor, head: MLP) -> Tensor:
    """Per-edge features from both endpoint orders, averaged.

    Symmetrizing keeps the readout equivariant under node relabeling, which
    would otherwise leak through the i < j canonicalization of the edge list.
    """
    e = topo.edges
    f_i = ad.gather_rows(feats, e[:, 0])
    f_j = ad.gather_rows(feats, e[:, 1])
    fwd = head(ad.concat([f_i, f_j], axis=1))
    rev = head(ad.concat([f_j, f_i], axis=1))
    return ad.mul(ad.add(fwd, rev), 0.5)
