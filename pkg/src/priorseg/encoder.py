"""Small convolutional pixel encoder.

A stack of 3x3 stride-1 convolutions (relu between layers, zero padding)
maps an (H, W, C) input to one embedding row per pixel. The same encoder
serves both feature paths: trained jointly inside the agent, or
contrastively pretrained and then frozen inside the environment.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .imaging.features import smoothed_boundary_map


class ConvEncoder:
    """3x3 convolution stack registered on a ParameterSet.

    Weight rows follow the im2col patch layout: row k*C + c is offset k
    (row-major over the 3x3 window) of input channel c.
    """

    def __init__(self, pset: ad.ParameterSet, prefix: str,
                 rng: np.random.Generator, in_channels: int,
                 hidden: int = 16, out_dim: int = 8,
                 num_layers: int = 3) -> None:
        chans = [in_channels] + [hidden] * (num_layers - 1) + [out_dim]
        self.weights: list[Tensor] = []
        self.biases: list[Tensor] = []
        for k in range(num_layers):
            fan_in = 9 * chans[k]
            self.weights.append(pset.add(
                f"{prefix}.conv{k}.w",
                ad.fan_in_uniform(rng, fan_in, (fan_in, chans[k + 1]))))
            self.biases.append(pset.add(f"{prefix}.conv{k}.b",
                                        np.zeros(chans[k + 1])))
        self.in_channels = in_channels
        self.out_dim = out_dim

    def __call__(self, stack: np.ndarray | Tensor) -> Tensor:
        """Per-pixel embeddings, shape (H*W, out_dim), rows in raster order."""
        x = ad.as_tensor(stack)
        if x.data.ndim != 3 or x.data.shape[2] != self.in_channels:
            raise ad.ShapeError("ConvEncoder", x.data.shape)
        h, w, _ = x.data.shape
        last = len(self.weights) - 1
        for k, (wt, b) in enumerate(zip(self.weights, self.biases)):
            out = ad.add(ad.matmul(ad.im2col3x3(x), wt), b)
            if k == last:
                return out
            x = ad.reshape(ad.relu(out), (h, w, wt.shape[1]))
        raise AssertionError("unreachable")


def encoder_input(image: np.ndarray, superpixels: np.ndarray,
                  smooth_sigma: float = 1.0) -> np.ndarray:
    """Encoder input stack: the raw image plus a smoothed boundary map.

    The image is expected as floats on a unit-ish scale; loaders are
    responsible for normalization.
    """
    img = np.asarray(image, dtype=np.float64)
    if img.shape != np.asarray(superpixels).shape:
        raise ValueError(f"image shape {img.shape} != superpixel shape "
                         f"{np.asarray(superpixels).shape}")
    return np.stack([img, smoothed_boundary_map(superpixels, smooth_sigma)],
                    axis=-1)
