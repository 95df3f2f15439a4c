"""Tests for the convolutional pixel encoder and its input stack."""

import numpy as np
import pytest

from priorseg import autodiff as ad
from priorseg.autodiff import ShapeError
from priorseg.encoder import ConvEncoder, encoder_input
from priorseg.imaging.features import smoothed_boundary_map

from gradcheck import _jitter, check_gradients


def _direct_conv3x3(image: np.ndarray, w: np.ndarray,
                    b: np.ndarray) -> np.ndarray:
    """Reference 3x3 correlation with zero padding, channel-last layout."""
    h, wd, c = image.shape
    padded = np.pad(image, ((1, 1), (1, 1), (0, 0)))
    out = np.empty((h, wd, w.shape[1]))
    for r in range(h):
        for q in range(wd):
            patch = padded[r:r + 3, q:q + 3, :].reshape(9 * c)
            out[r, q] = patch @ w + b
    return out.reshape(h * wd, w.shape[1])


class TestConvEncoder:
    def test_output_shape(self):
        rng = np.random.default_rng(0)
        pset = ad.ParameterSet()
        enc = ConvEncoder(pset, "enc", rng, in_channels=2, hidden=4,
                          out_dim=3, num_layers=2)
        out = enc(rng.normal(size=(5, 6, 2)))
        assert out.shape == (30, 3)

    def test_single_layer_matches_direct_correlation(self):
        rng = np.random.default_rng(1)
        pset = ad.ParameterSet()
        enc = ConvEncoder(pset, "enc", rng, in_channels=2, out_dim=3,
                          num_layers=1)
        enc.biases[0].data[:] = rng.normal(size=3)
        image = rng.normal(size=(4, 5, 2))
        want = _direct_conv3x3(image, enc.weights[0].data,
                               enc.biases[0].data)
        np.testing.assert_allclose(enc(image).data, want, atol=1e-12)

    def test_wrong_channel_count_rejected(self):
        pset = ad.ParameterSet()
        enc = ConvEncoder(pset, "enc", np.random.default_rng(2),
                          in_channels=2)
        with pytest.raises(ShapeError):
            enc(np.zeros((4, 4, 3)))
        with pytest.raises(ShapeError):
            enc(np.zeros((4, 4)))

    def test_gradients_match_finite_differences(self):
        rng = np.random.default_rng(3)
        pset = ad.ParameterSet()
        enc = ConvEncoder(pset, "enc", rng, in_channels=1, hidden=3,
                          out_dim=2, num_layers=2)
        _jitter(pset, rng)
        image = rng.normal(size=(3, 4, 1))

        def builder():
            return ad.reduce_mean(ad.square(enc(image)))

        assert check_gradients(pset, builder) <= 1e-4


class TestEncoderInput:
    def test_stacks_image_and_boundaries(self):
        sp = np.repeat(np.repeat(np.arange(4).reshape(2, 2), 2, 0), 2, 1)
        image = np.linspace(0.0, 1.0, 16).reshape(4, 4)
        stack = encoder_input(image, sp, smooth_sigma=0.8)
        assert stack.shape == (4, 4, 2)
        np.testing.assert_allclose(stack[:, :, 0], image)
        np.testing.assert_allclose(stack[:, :, 1],
                                   smoothed_boundary_map(sp, 0.8))

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError, match="shape"):
            encoder_input(np.zeros((4, 4)), np.zeros((4, 5), dtype=int))
