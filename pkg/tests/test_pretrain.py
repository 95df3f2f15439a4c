"""Tests for superpixel-contrastive encoder pretraining."""

import numpy as np
import pytest

from priorseg import autodiff as ad
from priorseg.imaging.filters import gaussian_gradient_magnitude
from priorseg.imaging.synth import generate_circles
from priorseg.imaging.watershed import seeded_watershed
from priorseg.pretrain import (EmbeddingConfig, PretrainError,
                               boundary_edge_weights, contrastive_loss,
                               encode_node_features, pretrain_features)
from priorseg.rag import build_rag

from gradcheck import check_gradients


def _np_l_var(emb: np.ndarray, sp: np.ndarray, delta_v: float) -> float:
    flat = sp.ravel()
    n = flat.max() + 1
    masses = np.bincount(flat, minlength=n).astype(float)
    means = np.zeros((n, emb.shape[1]))
    np.add.at(means, flat, emb)
    means /= masses[:, None]
    hinge = np.maximum(np.linalg.norm(emb - means[flat], axis=1) - delta_v,
                       0.0) ** 2
    per_node = np.zeros(n)
    np.add.at(per_node, flat, hinge)
    return float((per_node / masses).mean())


def _strip_scene():
    """Three vertical superpixel strips on a 4x6 canvas."""
    sp = np.repeat(np.arange(3), 2)[None, :].repeat(4, axis=0)
    return sp


class TestContrastiveLoss:
    def test_zero_when_both_hinges_inactive(self):
        sp = np.array([[0, 0, 1, 1], [0, 0, 1, 1]])
        emb = np.where(sp.ravel()[:, None] == 0, [0.0, 0.0], [3.0, 0.0])
        loss = contrastive_loss(emb, sp, EmbeddingConfig(dim=2))
        assert loss.data == 0.0

    def test_identical_embeddings_cost_full_push(self):
        sp = np.array([[0, 0, 1, 1], [0, 0, 1, 1]])
        emb = np.ones((8, 2))
        loss = contrastive_loss(emb, sp, EmbeddingConfig(dim=2, delta_d=1.0))
        # sqrt clamps coincident means 1e-6 apart, hence the loose atol
        np.testing.assert_allclose(loss.data, 4.0, atol=1e-5)

    def test_explicit_weights_respected(self):
        sp = _strip_scene()
        emb = np.array([[0.0], [1.0], [1.0]])[sp.ravel()]
        cfg = EmbeddingConfig(dim=1, weights=np.array([0.25, 0.75]))
        # edge (0,1): gap 1 -> hinge 1; edge (1,2): gap 0 -> hinge 4
        loss = contrastive_loss(emb, sp, cfg)
        np.testing.assert_allclose(loss.data, 0.25 * 1.0 + 0.75 * 4.0,
                                   atol=1e-5)

    def test_push_contribution_linear_in_weights(self):
        rng = np.random.default_rng(0)
        sp = _strip_scene()
        emb = rng.normal(size=(sp.size, 3))
        l_var = _np_l_var(emb, sp, 0.1)
        hinges = []
        for k in range(2):
            one_hot = np.zeros(2)
            one_hot[k] = 1.0
            cfg = EmbeddingConfig(dim=3, weights=one_hot)
            hinges.append(float(contrastive_loss(emb, sp, cfg).data) - l_var)
        w = np.array([0.3, 0.7])
        got = contrastive_loss(emb, sp, EmbeddingConfig(dim=3, weights=w))
        np.testing.assert_allclose(got.data, l_var + w @ hinges, rtol=1e-12)

    def test_raising_delta_v_never_increases_loss(self):
        rng = np.random.default_rng(1)
        sp = _strip_scene()
        emb = rng.normal(size=(sp.size, 2))
        losses = [float(contrastive_loss(
            emb, sp, EmbeddingConfig(dim=2, delta_v=dv)).data)
            for dv in (0.05, 0.1, 0.3, 0.9)]
        assert all(a >= b for a, b in zip(losses, losses[1:]))

    def test_empty_superpixel_rejected(self):
        sp = np.array([[0, 0], [2, 2]])
        with pytest.raises(PretrainError, match="empty"):
            contrastive_loss(np.zeros((4, 2)), sp, EmbeddingConfig(dim=2))

    def test_embedding_shape_mismatch_rejected(self):
        sp = np.array([[0, 1]])
        with pytest.raises(PretrainError, match="pixels"):
            contrastive_loss(np.zeros((3, 2)), sp, EmbeddingConfig(dim=2))

    def test_weight_count_mismatch_rejected(self):
        sp = np.array([[0, 1]])
        cfg = EmbeddingConfig(dim=2, weights=np.full(5, 0.2))
        with pytest.raises(PretrainError, match="edge"):
            contrastive_loss(np.zeros((2, 2)), sp, cfg)

    def test_gradients_match_finite_differences(self):
        rng = np.random.default_rng(2)
        sp = _strip_scene()
        pset = ad.ParameterSet()
        emb = pset.add("emb", rng.normal(size=(sp.size, 2)))
        cfg = EmbeddingConfig(dim=2, weights=np.array([0.6, 0.4]))

        def builder():
            return contrastive_loss(emb, sp, cfg)

        assert check_gradients(pset, builder) <= 1e-4


class TestEmbeddingConfig:
    def test_negative_delta_v_rejected(self):
        with pytest.raises(PretrainError, match="delta_v"):
            EmbeddingConfig(delta_v=-0.1)

    def test_push_margin_must_exceed_pull(self):
        with pytest.raises(PretrainError, match="delta_d"):
            EmbeddingConfig(delta_v=0.5, delta_d=0.5)

    def test_bad_dim_rejected(self):
        with pytest.raises(PretrainError, match="dim"):
            EmbeddingConfig(dim=0)

    def test_negative_weights_rejected(self):
        with pytest.raises(PretrainError, match="non-negative"):
            EmbeddingConfig(weights=np.array([1.5, -0.5]))

    def test_unnormalized_weights_rejected(self):
        with pytest.raises(PretrainError, match="sum to 1"):
            EmbeddingConfig(weights=np.array([0.5, 0.6]))

    def test_unknown_distance_rejected(self):
        with pytest.raises(PretrainError, match="distance"):
            EmbeddingConfig(distance="manhattan")


class TestBoundaryEdgeWeights:
    def test_weights_sum_to_one_and_follow_contrast(self):
        sp = np.repeat(np.repeat(np.arange(4).reshape(2, 2), 4, 0), 4, 1)
        image = np.zeros((8, 8))
        image[:, 4:] = 1.0  # strong vertical boundary only
        rag = build_rag(sp)
        w = boundary_edge_weights(image, rag, sigma=1.0)
        np.testing.assert_allclose(w.sum(), 1.0)
        eid = rag.topo.edge_index_map()
        assert w[eid[(0, 1)]] > w[eid[(0, 2)]]
        assert w[eid[(2, 3)]] > w[eid[(1, 3)]]

    def test_flat_image_falls_back_to_uniform(self):
        sp = np.repeat(np.repeat(np.arange(4).reshape(2, 2), 2, 0), 2, 1)
        rag = build_rag(sp)
        w = boundary_edge_weights(np.zeros((4, 4)), rag)
        np.testing.assert_allclose(w, 1.0 / rag.topo.num_edges)


def _tiny_dataset(count=3, size=24, seed=0):
    items = []
    for k in range(count):
        scene = generate_circles(size, np.random.default_rng(seed + k),
                                 count_range=(2, 2), radius_range=(3.0, 4.0))
        sp = seeded_watershed(gaussian_gradient_magnitude(scene.image, 1.2),
                              smoothing_sigma=1.5)
        items.append((scene.image, sp))
    return items


class TestPretrainFeatures:
    def test_fixed_seed_reproduces_encoder(self):
        data = _tiny_dataset(count=1)
        runs = [pretrain_features(data, EmbeddingConfig(dim=4), epochs=2,
                                  hidden=4, seed=3) for _ in range(2)]
        a, b = (r.pset.state_arrays() for r in runs)
        assert {k: v.tobytes() for k, v in a.items()} == \
               {k: v.tobytes() for k, v in b.items()}
        other = pretrain_features(data, EmbeddingConfig(dim=4), epochs=2,
                                  hidden=4, seed=4)
        assert any(a[k].tobytes() != v.tobytes()
                   for k, v in other.pset.state_arrays().items())

    def test_epoch_loss_does_not_increase(self):
        data = _tiny_dataset(count=2)
        result = pretrain_features(data, EmbeddingConfig(dim=4), epochs=5,
                                   hidden=8, seed=0)
        assert result.epoch_losses[-1] <= result.epoch_losses[0]

    def test_intra_distance_below_adjacent_after_training(self):
        data = _tiny_dataset(count=3)
        heldout_image, heldout_sp = data.pop()
        result = pretrain_features(data, EmbeddingConfig(dim=4), epochs=30,
                                   hidden=8, seed=1)

        feats = encode_node_features(result.encoder, heldout_image,
                                     heldout_sp)
        from priorseg.encoder import encoder_input
        emb = result.encoder(encoder_input(heldout_image, heldout_sp)).data
        flat = heldout_sp.ravel()
        intra = float(np.linalg.norm(emb - feats[flat], axis=1).mean())
        topo = build_rag(heldout_sp).topo
        gaps = feats[topo.edges[:, 0]] - feats[topo.edges[:, 1]]
        adjacent = float(np.linalg.norm(gaps, axis=1).mean())
        assert intra < adjacent

    def test_empty_dataset_rejected(self):
        with pytest.raises(PretrainError, match="image"):
            pretrain_features([], EmbeddingConfig())

    def test_bad_epochs_rejected(self):
        with pytest.raises(PretrainError, match="epochs"):
            pretrain_features(_tiny_dataset(count=1), EmbeddingConfig(),
                              epochs=0)


class TestEncodeNodeFeatures:
    def test_matches_manual_segment_mean(self):
        rng = np.random.default_rng(5)
        sp = np.repeat(np.repeat(np.arange(4).reshape(2, 2), 3, 0), 3, 1)
        image = rng.uniform(size=(6, 6))
        pset = ad.ParameterSet()
        from priorseg.encoder import ConvEncoder, encoder_input
        enc = ConvEncoder(pset, "enc", rng, in_channels=2, hidden=4,
                          out_dim=3, num_layers=2)
        got = encode_node_features(enc, image, sp)
        emb = enc(encoder_input(image, sp)).data
        flat = sp.ravel()
        want = np.stack([emb[flat == k].mean(axis=0) for k in range(4)])
        np.testing.assert_allclose(got, want, atol=1e-12)

    def test_empty_superpixel_rejected(self):
        pset = ad.ParameterSet()
        from priorseg.encoder import ConvEncoder
        enc = ConvEncoder(pset, "enc", np.random.default_rng(0),
                          in_channels=2)
        sp = np.array([[0, 0], [2, 2]])
        with pytest.raises(PretrainError, match="empty"):
            encode_node_features(enc, np.zeros((2, 2)), sp)
