"""Stochastic view pipelines: a strong policy (crop, flip, color jitter,
grayscale, blur) for the online branch and a weak policy (crop, flip) for
the momentum branch.

Every draw is a pure function of (global seed, epoch, sample index, view
index), so distinct samples can be augmented concurrently or re-run with
identical results.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class AugmentationPolicy:
    crop_min_area: float = 0.2
    out_size: int = 32
    flip_p: float = 0.5
    color_p: float = 0.0
    color_strength: float = 0.5
    grayscale_p: float = 0.0
    blur_p: float = 0.0
    blur_sigma: tuple[float, float] = (0.1, 2.0)
    identity: bool = False

    def __post_init__(self):
        if not 0.0 < self.crop_min_area <= 1.0:
            raise ValueError(f"crop_min_area must be in (0, 1], got {self.crop_min_area}")
        for name in ("flip_p", "color_p", "grayscale_p", "blur_p"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {p}")


def strong_policy(out_size: int = 32) -> AugmentationPolicy:
    return AugmentationPolicy(
        crop_min_area=0.2, out_size=out_size, flip_p=0.5,
        color_p=0.8, color_strength=0.5, grayscale_p=0.2, blur_p=0.5,
    )


def weak_policy(out_size: int = 32) -> AugmentationPolicy:
    return AugmentationPolicy(crop_min_area=0.2, out_size=out_size, flip_p=0.5)


def identity_policy(out_size: int = 32) -> AugmentationPolicy:
    return AugmentationPolicy(out_size=out_size, flip_p=0.0, identity=True)


def sample_rng(global_seed: int, epoch: int, sample_index: int,
               view_index: int) -> np.random.Generator:
    return np.random.default_rng(
        np.random.SeedSequence([global_seed, epoch, sample_index, view_index])
    )


def _bilinear_resize(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    c, h, w = img.shape
    if (h, w) == (out_h, out_w):
        return img.copy()
    ys = (np.arange(out_h) + 0.5) * h / out_h - 0.5
    xs = (np.arange(out_w) + 0.5) * w / out_w - 0.5
    y0 = np.clip(np.floor(ys).astype(int), 0, h - 1)
    x0 = np.clip(np.floor(xs).astype(int), 0, w - 1)
    y1 = np.clip(y0 + 1, 0, h - 1)
    x1 = np.clip(x0 + 1, 0, w - 1)
    wy = np.clip(ys - y0, 0.0, 1.0)[None, :, None]
    wx = np.clip(xs - x0, 0.0, 1.0)[None, None, :]
    top = img[:, y0][:, :, x0] * (1 - wx) + img[:, y0][:, :, x1] * wx
    bot = img[:, y1][:, :, x0] * (1 - wx) + img[:, y1][:, :, x1] * wx
    return (top * (1 - wy) + bot * wy).astype(img.dtype)


def random_resized_crop(img: np.ndarray, min_area_ratio: float, out_h: int,
                        out_w: int, rng: np.random.Generator) -> np.ndarray:
    """Sample a crop with area ratio U(min, 1) and aspect U(3/4, 4/3), then
    bilinear-resize; falls back to a center crop after 10 failed attempts."""
    if not 0.0 < min_area_ratio <= 1.0:
        raise ValueError(f"min_area_ratio must be in (0, 1], got {min_area_ratio}")
    c, h, w = img.shape
    area = h * w
    for _ in range(10):
        target = area * rng.uniform(min_area_ratio, 1.0)
        aspect = rng.uniform(3.0 / 4.0, 4.0 / 3.0)
        cw = int(round(np.sqrt(target * aspect)))
        ch = int(round(np.sqrt(target / aspect)))
        if 0 < cw <= w and 0 < ch <= h:
            top = rng.integers(0, h - ch + 1)
            left = rng.integers(0, w - cw + 1)
            crop = img[:, top:top + ch, left:left + cw]
            return _bilinear_resize(crop, out_h, out_w)
    side = min(h, w)
    top = (h - side) // 2
    left = (w - side) // 2
    return _bilinear_resize(img[:, top:top + side, left:left + side], out_h, out_w)


def horizontal_flip(img: np.ndarray, p: float, rng: np.random.Generator) -> np.ndarray:
    if rng.random() < p:
        return img[:, :, ::-1].copy()
    return img


def _rgb_to_hsv(img):
    r, g, b = img[0], img[1], img[2]
    mx = np.maximum(np.maximum(r, g), b)
    mn = np.minimum(np.minimum(r, g), b)
    diff = mx - mn
    safe = np.where(diff == 0, 1.0, diff)
    h = np.where(
        mx == r, (g - b) / safe % 6.0,
        np.where(mx == g, (b - r) / safe + 2.0, (r - g) / safe + 4.0),
    ) / 6.0
    h = np.where(diff == 0, 0.0, h)
    s = np.where(mx == 0, 0.0, diff / np.where(mx == 0, 1.0, mx))
    return np.stack([h, s, mx])


def _hsv_to_rgb(hsv):
    h, s, v = hsv[0] * 6.0, hsv[1], hsv[2]
    i = np.floor(h).astype(int) % 6
    f = h - np.floor(h)
    p = v * (1 - s)
    q = v * (1 - s * f)
    t = v * (1 - s * (1 - f))
    r = np.choose(i, [v, q, p, p, t, v])
    g = np.choose(i, [t, v, v, q, p, p])
    b = np.choose(i, [p, p, t, v, v, q])
    return np.stack([r, g, b])


def _luma(img):
    return 0.299 * img[0] + 0.587 * img[1] + 0.114 * img[2]


def color_distortion(img: np.ndarray, strength: float,
                     rng: np.random.Generator, apply_p: float = 0.8) -> np.ndarray:
    """Jitter brightness/contrast/saturation by factors in [1-0.8s, 1+0.8s]
    and hue in [-0.2s, 0.2s], in random order, with probability ``apply_p``."""
    if strength < 0:
        raise ValueError(f"strength must be nonnegative, got {strength}")
    do_apply = rng.random() < apply_p
    jitter = 0.8 * strength
    factors = rng.uniform(max(0.0, 1 - jitter), 1 + jitter, size=3)
    hue_shift = rng.uniform(-0.2 * strength, 0.2 * strength)
    order = rng.permutation(4)
    if not do_apply:
        return img
    out = img.astype(np.float64)
    for op in order:
        if op == 0:  # brightness
            out = out * factors[0]
        elif op == 1:  # contrast: blend with the mean gray level
            mean = _luma(np.clip(out, 0.0, 1.0)).mean()
            out = factors[1] * out + (1 - factors[1]) * mean
        elif op == 2:  # saturation: blend with per-pixel gray
            gray = _luma(np.clip(out, 0.0, 1.0))
            out = factors[2] * out + (1 - factors[2]) * gray[None]
        else:  # hue rotation in HSV space
            hsv = _rgb_to_hsv(np.clip(out, 0.0, 1.0))
            hsv[0] = (hsv[0] + hue_shift) % 1.0
            out = _hsv_to_rgb(hsv)
    return np.clip(out, 0.0, 1.0).astype(img.dtype)


def grayscale(img: np.ndarray, p: float, rng: np.random.Generator) -> np.ndarray:
    if img.shape[0] != 3:
        raise ValueError(f"grayscale needs a 3-channel image, got {img.shape[0]}")
    if rng.random() < p:
        return np.broadcast_to(_luma(img), img.shape).astype(img.dtype).copy()
    return img


def _gauss_kernel(sigma: float) -> np.ndarray:
    radius = int(np.ceil(2 * sigma))
    xs = np.arange(-radius, radius + 1)
    k = np.exp(-0.5 * (xs / sigma) ** 2)
    return k / k.sum()


def gaussian_blur(img: np.ndarray, p: float, sigma_range: tuple[float, float],
                  rng: np.random.Generator) -> np.ndarray:
    lo, hi = sigma_range
    if lo <= 0:
        raise ValueError(f"sigma range must be positive, got {sigma_range}")
    sigma = rng.uniform(lo, hi)
    if rng.random() >= p:
        return img
    k = _gauss_kernel(sigma)
    r = (len(k) - 1) // 2
    out = img.astype(np.float64)
    for axis in (1, 2):
        padded = np.pad(out, [(0, 0)] + [(r, r) if a == axis else (0, 0)
                                         for a in (1, 2)], mode="reflect")
        acc = np.zeros_like(out)
        for i, kv in enumerate(k):
            sl = [slice(None)] * 3
            sl[axis] = slice(i, i + out.shape[axis])
            acc += kv * padded[tuple(sl)]
        out = acc
    return out.astype(img.dtype)


def augment_image(policy: AugmentationPolicy, img: np.ndarray,
                  rng: np.random.Generator) -> np.ndarray:
    if policy.identity:
        return _bilinear_resize(img, policy.out_size, policy.out_size)
    out = random_resized_crop(img, policy.crop_min_area,
                              policy.out_size, policy.out_size, rng)
    out = horizontal_flip(out, policy.flip_p, rng)
    if policy.color_p > 0:
        out = color_distortion(out, policy.color_strength, rng,
                               apply_p=policy.color_p)
    if policy.grayscale_p > 0:
        out = grayscale(out, policy.grayscale_p, rng)
    if policy.blur_p > 0:
        out = gaussian_blur(out, policy.blur_p, policy.blur_sigma, rng)
    return out


def apply_policy(policy: AugmentationPolicy, batch: np.ndarray,
                 global_seed: int, epoch: int, view_index: int,
                 sample_indices=None) -> np.ndarray:
    """Augment a batch; each sample draws from its own derived RNG stream."""
    n = batch.shape[0]
    if sample_indices is None:
        sample_indices = np.arange(n)
    out = np.empty((n, batch.shape[1], policy.out_size, policy.out_size),
                   dtype=batch.dtype)
    for i in range(n):
        rng = sample_rng(global_seed, epoch, int(sample_indices[i]), view_index)
        out[i] = augment_image(policy, batch[i], rng)
    return out
