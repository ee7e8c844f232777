"""Encoder, projector and linear-classifier definitions.

The encoder is a small convnet trainable in minutes on CPU: a 3x3 stride-1
stem (the small-image replacement for a 7x7 stride-2 stem), three
conv -> batchnorm -> relu -> 2x2 average-pool blocks, and a global average
pool. The projector maps features to a unit-norm embedding.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


@dataclass
class EncoderSpec:
    in_channels: int = 3
    in_size: int = 32
    widths: tuple[int, ...] = (32, 64, 128)

    def __post_init__(self):
        if not self.widths or any(w <= 0 for w in self.widths):
            raise ValueError(f"widths must be positive, got {self.widths}")
        if self.in_size % (2 ** len(self.widths)) != 0:
            raise ValueError(
                f"in_size {self.in_size} not divisible by pooling factor "
                f"{2 ** len(self.widths)}"
            )

    @property
    def feature_dim(self) -> int:
        return self.widths[-1]

    def param_count(self) -> int:
        """Closed-form count of trainable parameters (excl. running stats)."""
        total = 0
        c = self.in_channels
        for w in self.widths:
            total += w * c * 9 + 2 * w  # conv kernel + bn gamma/beta
            c = w
        return total


@dataclass
class ProjectorSpec:
    in_dim: int = 128
    hidden_dim: int = 512
    out_dim: int = 256
    hidden_batchnorm: bool = True

    def param_count(self) -> int:
        total = self.hidden_dim * self.in_dim + self.hidden_dim
        if self.hidden_batchnorm:
            total += 2 * self.hidden_dim
        total += self.out_dim * self.hidden_dim + self.out_dim
        return total


def _he_conv(rng, f, c, k):
    std = np.sqrt(2.0 / (c * k * k))
    return Tensor(rng.normal(0.0, std, size=(f, c, k, k)), requires_grad=True)


def _he_linear(rng, out_dim, in_dim):
    std = np.sqrt(2.0 / in_dim)
    return Tensor(rng.normal(0.0, std, size=(out_dim, in_dim)), requires_grad=True)


def _bn_params(dim):
    return {
        "gamma": Tensor(np.ones(dim), requires_grad=True),
        "beta": Tensor(np.zeros(dim), requires_grad=True),
        "running_mean": Tensor(np.zeros(dim)),
        "running_var": Tensor(np.ones(dim)),
    }


def build_encoder(spec: EncoderSpec, seed: int) -> dict[str, Tensor]:
    rng = np.random.default_rng(seed)
    params: dict[str, Tensor] = {}
    c = spec.in_channels
    for i, w in enumerate(spec.widths):
        params[f"block{i}.conv.w"] = _he_conv(rng, w, c, 3)
        for k, v in _bn_params(w).items():
            params[f"block{i}.bn.{k}"] = v
        c = w
    return params


def build_projector(spec: ProjectorSpec, seed: int) -> dict[str, Tensor]:
    rng = np.random.default_rng(seed)
    params = {
        "fc1.w": _he_linear(rng, spec.hidden_dim, spec.in_dim),
        "fc1.b": Tensor(np.zeros(spec.hidden_dim), requires_grad=True),
        "fc2.w": _he_linear(rng, spec.out_dim, spec.hidden_dim),
        "fc2.b": Tensor(np.zeros(spec.out_dim), requires_grad=True),
    }
    if spec.hidden_batchnorm:
        for k, v in _bn_params(spec.hidden_dim).items():
            params[f"bn1.{k}"] = v
    return params


def build_classifier(feature_dim: int, classes: int, seed: int) -> dict[str, Tensor]:
    rng = np.random.default_rng(seed)
    return {
        "w": Tensor(rng.normal(0.0, 0.01, size=(classes, feature_dim)),
                    requires_grad=True),
        "b": Tensor(np.zeros(classes), requires_grad=True),
    }


def encoder_forward(
    params: dict[str, Tensor],
    spec: EncoderSpec,
    images: Tensor,
    train: bool = False,
    update_running: bool = True,
) -> Tensor:
    if images.data.ndim != 4 or images.data.shape[1] != spec.in_channels:
        raise ad.ShapeError(
            f"encoder expects NxCxHxW with C={spec.in_channels}, "
            f"got {images.data.shape}"
        )
    x = images
    for i in range(len(spec.widths)):
        x = ad.conv2d(x, params[f"block{i}.conv.w"], stride=1, padding=1)
        x = ad.batchnorm(
            x,
            params[f"block{i}.bn.gamma"],
            params[f"block{i}.bn.beta"],
            params[f"block{i}.bn.running_mean"],
            params[f"block{i}.bn.running_var"],
            train=train,
            update_running=update_running,
        )
        x = ad.relu(x)
        x = ad.avg_pool2d(x, 2)
    return ad.global_avg_pool(x)


def projector_forward(
    params: dict[str, Tensor],
    spec: ProjectorSpec,
    features: Tensor,
    train: bool = False,
    update_running: bool = True,
) -> Tensor:
    if features.data.shape[1] != spec.in_dim:
        raise ad.ShapeError(
            f"projector expects NxF with F={spec.in_dim}, got {features.data.shape}"
        )
    h = ad.linear(features, params["fc1.w"], params["fc1.b"])
    if spec.hidden_batchnorm:
        h = ad.batchnorm(
            h,
            params["bn1.gamma"],
            params["bn1.beta"],
            params["bn1.running_mean"],
            params["bn1.running_var"],
            train=train,
            update_running=update_running,
        )
    h = ad.relu(h)
    z = ad.linear(h, params["fc2.w"], params["fc2.b"])
    return ad.l2_normalize_rows(z)


def classifier_forward(params: dict[str, Tensor], features: Tensor) -> Tensor:
    return ad.linear(features, params["w"], params["b"])


def merge_prefixed(*named: tuple[str, dict[str, Tensor]]) -> dict[str, Tensor]:
    """Flatten several parameter dicts under dotted prefixes."""
    out = {}
    for prefix, params in named:
        for k, v in params.items():
            out[f"{prefix}.{k}"] = v
    return out


def split_prefixed(params: dict[str, Tensor], prefix: str) -> dict[str, Tensor]:
    plen = len(prefix) + 1
    return {k[plen:]: v for k, v in params.items() if k.startswith(prefix + ".")}
