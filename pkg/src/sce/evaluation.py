"""Linear-probe evaluation and analysis artifacts: view-similarity
histograms, temperature sharpening tables, and distribution entropies."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import augment as aug
from . import autodiff as ad
from . import models
from .autodiff import Tensor


@dataclass
class ProbeConfig:
    epochs: int = 100
    lr: float = 30.0
    momentum: float = 0.9
    weight_decay: float = 0.0
    decay_epochs: tuple[int, ...] = (60, 80)
    decay_factor: float = 0.1
    batch_size: int = 128

    def __post_init__(self):
        if any(e >= self.epochs for e in self.decay_epochs):
            raise ValueError(
                f"decay epochs {self.decay_epochs} must precede total "
                f"epochs {self.epochs}"
            )


def desk_probe_config(n_train: int) -> ProbeConfig:
    """Scaled-down schedule (30 epochs, decays at 18/24) for small datasets.

    The initial learning rate is also scaled down: 30 is tuned for
    large-scale features and oscillates without converging on desk-scale
    feature statistics.
    """
    if n_train < 10_000:
        return ProbeConfig(epochs=30, decay_epochs=(18, 24), lr=1.0)
    return ProbeConfig()


def encode_features(encoder_params: dict, spec: models.EncoderSpec,
                    images: np.ndarray, batch_size: int = 256) -> np.ndarray:
    """Frozen eval-mode encoder features, computed off-tape."""
    out = []
    for i in range(0, images.shape[0], batch_size):
        feats = models.encoder_forward(
            encoder_params, spec, Tensor(images[i:i + batch_size]), train=False
        )
        out.append(feats.data)
    return np.concatenate(out, axis=0)


def top1_accuracy(logits: np.ndarray, labels: np.ndarray) -> float:
    """Fraction of argmax hits; ties break toward the lowest class index."""
    logits = np.asarray(logits)
    labels = np.asarray(labels)
    if logits.shape[1] < 2:
        raise ValueError("top1_accuracy needs at least 2 classes")
    if labels.min() < 0 or labels.max() >= logits.shape[1]:
        raise ValueError(
            f"label out of range [0, {logits.shape[1]}): "
            f"[{labels.min()}, {labels.max()}]"
        )
    return float(np.mean(np.argmax(logits, axis=1) == labels))


def _one_hot(labels: np.ndarray, classes: int) -> np.ndarray:
    out = np.zeros((labels.shape[0], classes), dtype=np.float64)
    out[np.arange(labels.shape[0]), labels] = 1.0
    return out


def linear_probe_train(encoder_params: dict, spec: models.EncoderSpec,
                       train_images: np.ndarray, train_labels: np.ndarray,
                       test_images: np.ndarray, test_labels: np.ndarray,
                       cfg: ProbeConfig, seed: int = 0,
                       features: tuple[np.ndarray, np.ndarray] | None = None):
    """Train a linear classifier on frozen encoder features.

    Returns (classifier params, held-out top-1 accuracy). The encoder is
    only read; precomputed (train, test) feature matrices can be passed to
    skip encoding.
    """
    if train_images.shape[0] == 0 or test_images.shape[0] == 0:
        raise ValueError("probe needs non-empty train and test splits")
    if features is None:
        f_train = encode_features(encoder_params, spec, train_images)
        f_test = encode_features(encoder_params, spec, test_images)
    else:
        f_train, f_test = features
    classes = int(train_labels.max()) + 1
    clf = models.build_classifier(f_train.shape[1], classes, seed)
    opt_v = {k: np.zeros_like(t.data) for k, t in clf.items()}
    rng = np.random.default_rng(seed)
    onehot = _one_hot(train_labels, classes)

    lr = cfg.lr
    for epoch in range(cfg.epochs):
        if epoch in cfg.decay_epochs:
            lr *= cfg.decay_factor
        order = rng.permutation(f_train.shape[0])
        for i in range(0, len(order), cfg.batch_size):
            idx = order[i:i + cfg.batch_size]
            for t in clf.values():
                t.zero_grad()
            with ad.Tape() as tape:
                logits = models.classifier_forward(clf, Tensor(f_train[idx]))
                p = ad.softmax_rows(logits, 1.0)
                loss = ad.cross_entropy_rows(onehot[idx], p)
            ad.backward(tape, loss)
            for k, t in clf.items():
                g = t.grad
                if cfg.weight_decay:
                    g = g + cfg.weight_decay * t.data
                opt_v[k] = cfg.momentum * opt_v[k] + g
                t.data = t.data - lr * opt_v[k]

    test_logits = models.classifier_forward(clf, Tensor(f_test)).data
    return clf, top1_accuracy(test_logits, test_labels)


@dataclass
class SimilarityReport:
    weak_similarities: np.ndarray
    strong_similarities: np.ndarray
    bins: np.ndarray = field(default_factory=lambda: np.linspace(-1, 1, 51))

    @property
    def weak_mean(self) -> float:
        return float(self.weak_similarities.mean())

    @property
    def strong_mean(self) -> float:
        return float(self.strong_similarities.mean())

    def histogram(self, which: str) -> np.ndarray:
        sims = self.weak_similarities if which == "weak" else self.strong_similarities
        counts, _ = np.histogram(sims, bins=self.bins)
        return counts

    def to_json(self) -> str:
        return json.dumps({
            "bins": self.bins.tolist(),
            "weak_counts": self.histogram("weak").tolist(),
            "strong_counts": self.histogram("strong").tolist(),
            "weak_mean": self.weak_mean,
            "strong_mean": self.strong_mean,
            "n_samples": int(self.weak_similarities.shape[0]),
        })


def similarity_shift_histogram(online_params: dict, state_specs,
                               images: np.ndarray, n_samples: int,
                               seed: int = 0) -> SimilarityReport:
    """Cosine similarity of projector outputs between each original image
    and its weak- and strong-augmented versions."""
    if n_samples < 100:
        raise ValueError(f"need at least 100 samples, got {n_samples}")
    enc_spec, proj_spec = state_specs
    rng = np.random.default_rng(seed)
    idx = rng.choice(images.shape[0], size=n_samples,
                     replace=images.shape[0] < n_samples)
    batch = images[idx]
    size = enc_spec.in_size
    weak = aug.apply_policy(aug.weak_policy(size), batch, seed, 0, 2,
                            sample_indices=idx)
    strong = aug.apply_policy(aug.strong_policy(size), batch, seed, 0, 1,
                              sample_indices=idx)

    def project(x):
        feats = models.encoder_forward(
            models.split_prefixed(online_params, "enc"), enc_spec,
            Tensor(x), train=False)
        return models.projector_forward(
            models.split_prefixed(online_params, "proj"), proj_spec,
            feats, train=False).data

    z0 = project(batch)
    zw = project(weak)
    zs = project(strong)
    # unit-norm rounding can leave dot products epsilon outside [-1, 1]
    return SimilarityReport(
        weak_similarities=np.clip(np.einsum("nd,nd->n", z0, zw), -1.0, 1.0),
        strong_similarities=np.clip(np.einsum("nd,nd->n", z0, zs), -1.0, 1.0),
    )


def sharpening_curve(tau_list) -> dict:
    """exp(1/tau) per temperature, plus exp(x/0.05) for x in {0, 0.1, .., 1}."""
    tau_list = list(tau_list)
    if any(t <= 0 for t in tau_list):
        raise ValueError("temperatures must be positive")
    xs = [round(0.1 * i, 1) for i in range(11)]
    return {
        "tau": tau_list,
        "exp_inv_tau": [float(np.exp(1.0 / t)) for t in tau_list],
        "similarity": xs,
        "exp_sim_over_005": [float(np.exp(x / 0.05)) for x in xs],
    }


def distribution_entropy(p: np.ndarray) -> np.ndarray:
    """Per-row entropy -sum p log p with 0 log 0 = 0."""
    p = np.asarray(p, dtype=np.float64)
    if np.any(p < 0):
        raise ValueError("entropy of a distribution with negative entries")
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * np.log(p), 0.0)
    return -terms.sum(axis=-1)
