"""Image likelihoods: a per-pixel color term and a conv-feature term.

The color term scores the rendered-minus-observed residual of every pixel
under a truncated normal on [-1, 1]. The feature term compares activations
of a single 3x3 convolution layer (loaded from a BIGW weight file) on a
small set of channels chosen for low rendered-vs-real discrepancy.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .distributions import TruncNormal

BIGW_MAGIC = b"BIGW"
BIGW_VERSION = 1

__all__ = [
    "ConvFeatureExtractor",
    "ChannelSelection",
    "LikelihoodConfig",
    "write_bigw",
    "read_bigw",
    "random_weights",
    "select_channels",
    "color_loglik",
    "neural_loglik",
]


def write_bigw(tensors, path):
    """Write tensors as magic, version, then (rank, dims, f32 values) each."""
    with open(path, "wb") as fh:
        fh.write(BIGW_MAGIC)
        fh.write(struct.pack("<I", BIGW_VERSION))
        for t in tensors:
            arr = np.asarray(t, dtype=np.float32)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.astype("<f4").tobytes(order="C"))


def read_bigw(path):
    with open(path, "rb") as fh:
        if fh.read(4) != BIGW_MAGIC:
            raise ValueError("not a BIGW file")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != BIGW_VERSION:
            raise ValueError(f"unsupported BIGW version {version}")
        tensors = []
        while True:
            head = fh.read(4)
            if not head:
                break
            (rank,) = struct.unpack("<I", head)
            dims = struct.unpack(f"<{rank}I", fh.read(4 * rank))
            count = int(np.prod(dims))
            data = np.frombuffer(fh.read(count * 4), dtype="<f4")
            if data.size != count:
                raise ValueError("truncated BIGW payload")
            tensors.append(data.reshape(dims).astype(np.float64))
    return tensors


def random_weights(seed=0, out_channels=64):
    """Seeded random kernel/bias standing in for pretrained weights."""
    rng = np.random.default_rng(seed)
    kernel = rng.normal(0.0, 0.2, size=(out_channels, 3, 3, 3))
    bias = rng.normal(0.0, 0.05, size=out_channels)
    return kernel, bias


class ConvFeatureExtractor:
    """One 3x3 convolution layer with same-padding, stride 1, and ReLU."""

    def __init__(self, kernel, bias):
        kernel = np.asarray(kernel, dtype=np.float64)
        bias = np.asarray(bias, dtype=np.float64)
        if kernel.ndim != 4 or kernel.shape[1:] != (3, 3, 3):
            raise ValueError("kernel must have shape [out, 3, 3, 3]")
        if bias.shape != (kernel.shape[0],):
            raise ValueError("bias length must match the output channels")
        self.kernel = kernel
        self.bias = bias
        self.out_channels = kernel.shape[0]

    @classmethod
    def from_bigw(cls, path):
        tensors = read_bigw(path)
        if len(tensors) != 2:
            raise ValueError("weight file must hold kernel then bias")
        return cls(tensors[0], tensors[1])

    def save(self, path):
        write_bigw([self.kernel, self.bias], path)

    def features(self, image, channels=None):
        """Feature maps [C, H, W] for an H x W x 3 image in [0, 1].

        ``channels`` restricts computation to the given output channels.
        """
        img = np.asarray(image, dtype=np.float64)
        if img.ndim != 3 or img.shape[2] != 3:
            raise ValueError("image must have shape H x W x 3")
        if channels is None:
            kernel = self.kernel
            bias = self.bias
        else:
            idx = np.asarray(channels, dtype=int)
            kernel = self.kernel[idx]
            bias = self.bias[idx]
        h, w, _ = img.shape
        padded = np.zeros((h + 2, w + 2, 3))
        padded[1:-1, 1:-1] = img
        out = np.tile(bias[:, None, None], (1, h, w))
        # nine shifted views replace the explicit spatial loop
        for i in range(3):
            for j in range(3):
                patch = padded[i : i + h, j : j + w, :]  # H x W x 3
                out += np.einsum("hwc,oc->ohw", patch, kernel[:, :, i, j])
        return np.maximum(out, 0.0)


@dataclass
class ChannelSelection:
    """Channels ordered by ascending rendered-vs-observed feature loss."""

    indices: list
    losses: list  # accumulated per-channel mean squared feature difference

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(
                {
                    "indices": [int(i) for i in self.indices],
                    "losses": [float(v) for v in self.losses],
                },
                fh,
            )

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            d = json.load(fh)
        return cls(indices=d["indices"], losses=d["losses"])


def select_channels(pairs, extractor, top_k=3):
    """Rank feature channels by the mean squared difference between the
    features of each observed image and its rendered reconstruction.

    ``pairs``: list of (observed, rendered) H x W x 3 images. Returns the
    ``top_k`` lowest-loss channels (ascending, stable order).
    """
    if not pairs:
        raise ValueError("need at least one image pair")
    total = np.zeros(extractor.out_channels)
    for observed, rendered in pairs:
        fo = extractor.features(observed)
        fr = extractor.features(rendered)
        total += ((fo - fr) ** 2).mean(axis=(1, 2))
    loss = total / len(pairs)
    order = np.argsort(loss, kind="stable")[:top_k]
    return ChannelSelection(
        indices=[int(i) for i in order], losses=[float(loss[i]) for i in order]
    )


@dataclass
class LikelihoodConfig:
    """Scales for the two likelihood terms and the inference mode.

    ``mode`` "p3" uses the color term only; "np3" adds the feature term.
    ``sigma_image`` defaults to 1.0 (0.35 suits dark scenes).
    """

    sigma_image: float = 1.0
    neural_scale: float = 0.05
    mode: str = "p3"

    def validate(self):
        if self.sigma_image <= 0 or self.neural_scale <= 0:
            raise ValueError("likelihood scales must be > 0")
        if self.mode not in ("p3", "np3"):
            raise ValueError("mode must be 'p3' or 'np3'")


def color_loglik(rendered, observed, sigma):
    """Sum over pixels/channels of the truncated-normal log density of the
    residual rendered - observed on [-1, 1]. Maximal when the images match."""
    r = np.asarray(rendered, dtype=np.float64)
    o = np.asarray(observed, dtype=np.float64)
    if r.shape != o.shape:
        raise ValueError(f"image shape mismatch: {r.shape} vs {o.shape}")
    resid = np.clip(r - o, -1.0, 1.0)
    d = TruncNormal(loc=0.0, scale=float(sigma), low=-1.0, high=1.0)
    return float(np.sum(d.logpdf(resid)))


def neural_loglik(rendered, observed, extractor, selection, scale, literal_exp=False):
    """Feature-space log likelihood over the selected channels.

    Gaussian-in-feature-space form: -(1/scale) * sum of squared feature
    differences; 0 at feature equality. ``literal_exp`` switches to the
    unbounded sum-of-exponentiated-differences form for debugging only.
    """
    r = np.asarray(rendered, dtype=np.float64)
    o = np.asarray(observed, dtype=np.float64)
    if r.shape != o.shape:
        raise ValueError(f"image shape mismatch: {r.shape} vs {o.shape}")
    idx = list(selection.indices)
    fr = extractor.features(r, channels=idx)
    fo = extractor.features(o, channels=idx)
    if literal_exp:
        return float(np.sum(np.exp(fo - fr)))
    return float(-np.sum((fo - fr) ** 2) / scale)
