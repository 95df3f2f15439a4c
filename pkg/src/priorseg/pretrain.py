"""Self-supervised superpixel-contrastive pretraining of the pixel encoder.

Pixel embeddings are pulled toward the mean embedding of their superpixel
and the means of adjacent superpixels are pushed apart, with the push
strength of each region-graph edge scaled by a normalized boundary weight.
The trained encoder is frozen afterwards and its mean-pooled node
embeddings serve as fixed environment features.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .encoder import ConvEncoder, encoder_input
from .graph import GraphTopology
from .imaging.filters import gaussian_gradient_magnitude
from .rag import Rag, build_rag

_WEIGHT_TOL = 1e-9


class PretrainError(ValueError):
    """Contract violation in the contrastive pretraining stack."""


@dataclass(frozen=True)
class EmbeddingConfig:
    """Margins and push weights of the contrastive embedding loss.

    weights holds one non-negative entry per region-graph edge, summing to
    one; None means uniform. The pull hinge activates beyond delta_v, the
    push hinge below 2 * delta_d.
    """

    dim: int = 8
    delta_v: float = 0.1
    delta_d: float = 1.0
    weights: np.ndarray | None = None
    distance: str = "euclidean"

    def __post_init__(self) -> None:
        if self.dim < 1:
            raise PretrainError(f"embedding dim must be positive, got {self.dim}")
        if self.delta_v < 0:
            raise PretrainError(f"delta_v must be >= 0, got {self.delta_v}")
        if self.delta_d <= self.delta_v:
            raise PretrainError(
                f"delta_d ({self.delta_d}) must exceed delta_v ({self.delta_v})")
        if self.distance != "euclidean":
            raise PretrainError(f"unknown distance {self.distance!r}")
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=np.float64)
            if (w < 0).any():
                raise PretrainError("edge weights must be non-negative")
            if abs(w.sum() - 1.0) > _WEIGHT_TOL:
                raise PretrainError(
                    f"edge weights must sum to 1, got {w.sum():.12f}")
            object.__setattr__(self, "weights", w)


def boundary_edge_weights(image: np.ndarray, rag: Rag,
                          sigma: float = 1.2) -> np.ndarray:
    """Normalized push weight per edge: mean gradient along its boundary.

    Every 4-neighbor pixel pair spanning an edge contributes the mean of its
    two gradient values; a flat image falls back to uniform weights.
    """
    grad = gaussian_gradient_magnitude(np.asarray(image, dtype=np.float64),
                                       sigma)
    sp = rag.superpixels
    n = rag.topo.num_nodes
    sums = np.zeros(rag.topo.num_edges)
    for (a, b), (ga, gb) in (((sp[:, :-1], sp[:, 1:]),
                              (grad[:, :-1], grad[:, 1:])),
                             ((sp[:-1, :], sp[1:, :]),
                              (grad[:-1, :], grad[1:, :]))):
        diff = a != b
        lo = np.minimum(a[diff], b[diff])
        hi = np.maximum(a[diff], b[diff])
        vals = 0.5 * (ga[diff] + gb[diff])
        # edges are lex-sorted, so the (lo, hi) key is searchable directly
        eids = np.searchsorted(rag.topo.edges[:, 0] * n + rag.topo.edges[:, 1],
                               lo.astype(np.int64) * n + hi)
        np.add.at(sums, eids, vals)
    mean = sums / rag.contact
    total = mean.sum()
    if total <= 0.0:
        return np.full(len(mean), 1.0 / max(len(mean), 1))
    return mean / total


def contrastive_loss(embeddings: Tensor | np.ndarray, superpixels: np.ndarray,
                     cfg: EmbeddingConfig,
                     topo: GraphTopology | None = None) -> Tensor:
    """Pull-to-mean plus weighted push-apart loss over one image.

    embeddings is (H*W, D) in raster order. The push term runs over the
    region graph of `superpixels`, derived here unless `topo` is passed.
    """
    emb = ad.as_tensor(embeddings)
    sp = np.asarray(superpixels)
    flat = sp.ravel()
    if emb.data.ndim != 2 or emb.shape[0] != flat.size:
        raise PretrainError(f"embedding shape {emb.shape} does not match "
                            f"{flat.size} pixels")
    n = int(flat.max()) + 1
    masses = np.bincount(flat, minlength=n).astype(np.float64)
    if (masses == 0).any():
        raise PretrainError(f"empty superpixels: {np.flatnonzero(masses == 0)}")
    if topo is None:
        topo = build_rag(sp).topo

    means = ad.mul(ad.segment_sum(emb, flat, n), 1.0 / masses[:, None])
    pix_diff = ad.sub(emb, ad.gather_rows(means, flat))
    pix_dist = ad.sqrt(ad.reduce_sum(ad.square(pix_diff), axis=1))
    var_hinge = ad.square(ad.relu(ad.sub(pix_dist, cfg.delta_v)))
    per_node = ad.mul(ad.segment_sum(ad.reshape(var_hinge, (flat.size, 1)),
                                     flat, n), 1.0 / masses[:, None])
    l_var = ad.reduce_mean(per_node)

    e = topo.edges
    weights = cfg.weights
    if weights is None:
        weights = np.full(topo.num_edges, 1.0 / max(topo.num_edges, 1))
    if len(weights) != topo.num_edges:
        raise PretrainError(f"{len(weights)} edge weights for "
                            f"{topo.num_edges} edges")
    gap = ad.sub(ad.gather_rows(means, e[:, 0]), ad.gather_rows(means, e[:, 1]))
    edge_dist = ad.sqrt(ad.reduce_sum(ad.square(gap), axis=1))
    push_hinge = ad.square(ad.relu(ad.sub(2.0 * cfg.delta_d, edge_dist)))
    l_dist = ad.reduce_sum(ad.mul(push_hinge, weights))
    return ad.add(l_var, l_dist)


@dataclass
class PretrainResult:
    """Trained encoder plus its parameters and the per-epoch mean loss."""

    encoder: ConvEncoder
    pset: ad.ParameterSet
    epoch_losses: list[float]


def pretrain_features(dataset: Sequence[tuple[np.ndarray, np.ndarray]],
                      cfg: EmbeddingConfig, *, epochs: int = 8,
                      lr: float = 1e-3, seed: int = 0, hidden: int = 16,
                      num_layers: int = 3, smooth_sigma: float = 1.0,
                      weight_sigma: float = 1.2) -> PretrainResult:
    """Train a fresh encoder on (image, superpixels) pairs.

    Adam over the contrastive loss, one step per image per epoch. Only the
    seed feeds the rng, so a fixed seed reproduces the encoder exactly.
    """
    if not dataset:
        raise PretrainError("pretraining needs at least one image")
    if epochs < 1:
        raise PretrainError(f"epochs must be positive, got {epochs}")
    rng = np.random.default_rng(seed)
    pset = ad.ParameterSet()
    encoder = ConvEncoder(pset, "enc", rng, in_channels=2, hidden=hidden,
                          out_dim=cfg.dim, num_layers=num_layers)
    opt = ad.Adam(pset, lr)
    items = []
    for image, sp in dataset:
        sp = np.asarray(sp)
        rag = build_rag(sp)
        weights = boundary_edge_weights(image, rag, sigma=weight_sigma)
        items.append((encoder_input(image, sp, smooth_sigma), sp, rag.topo,
                      replace(cfg, weights=weights)))
    epoch_losses = []
    for _ in range(epochs):
        total = 0.0
        for stack, sp, topo, icfg in items:
            pset.zero_grad()
            with ad.Tape():
                loss = contrastive_loss(encoder(stack), sp, icfg, topo)
            total += float(loss.data)
            ad.backpropagate(loss)
            opt.step()
        epoch_losses.append(total / len(items))
    return PretrainResult(encoder, pset, epoch_losses)


def encode_node_features(encoder: ConvEncoder, image: np.ndarray,
                         superpixels: np.ndarray,
                         smooth_sigma: float = 1.0) -> np.ndarray:
    """Frozen per-node features: mean pixel embedding per superpixel."""
    sp = np.asarray(superpixels)
    flat = sp.ravel()
    n = int(flat.max()) + 1
    masses = np.bincount(flat, minlength=n).astype(np.float64)
    if (masses == 0).any():
        raise PretrainError(f"empty superpixels: {np.flatnonzero(masses == 0)}")
    emb = encoder(encoder_input(image, sp, smooth_sigma)).data
    sums = np.zeros((n, emb.shape[1]))
    np.add.at(sums, flat, emb)
    return sums / masses[:, None]
