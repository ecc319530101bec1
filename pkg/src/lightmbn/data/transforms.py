"""Image augmentation: resize, random crop, flip, normalisation and random erasing.

Images are 3 x H x W float arrays.  Every random choice is drawn from an
explicit ``numpy.random.Generator``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

CROP_HW = (384, 128)


@dataclass
class REAConfig:
    p: float = 0.5
    area_frac: tuple = (0.02, 0.4)
    aspect: tuple = (0.3, 10 / 3)
    max_attempts: int = 100


@dataclass
class AugmentConfig:
    resize_factor: float = 1.05
    crop: tuple = CROP_HW
    hflip_p: float = 0.5
    rea: REAConfig = None

    def __post_init__(self):
        if self.rea is None:
            self.rea = REAConfig()
        for name, p in (("hflip_p", self.hflip_p), ("rea.p", self.rea.p)):
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {p}")
        lo, hi = self.rea.area_frac
        if not 0.0 < lo <= hi < 1.0:
            raise ValueError(f"rea.area_frac must lie within (0, 1), got {self.rea.area_frac}")

    @property
    def resized(self) -> tuple:
        return tuple(int(round(self.resize_factor * n)) for n in self.crop)


@lru_cache(maxsize=32)
def _interp_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Bilinear resampling matrix (n_out x n_in), half-pixel centres."""
    m = np.zeros((n_out, n_in), dtype=np.float32)
    src = (np.arange(n_out) + 0.5) * n_in / n_out - 0.5
    src = np.clip(src, 0, n_in - 1)
    i0 = np.floor(src).astype(int)
    i1 = np.minimum(i0 + 1, n_in - 1)
    w = (src - i0).astype(np.float32)
    rows = np.arange(n_out)
    np.add.at(m, (rows, i0), 1 - w)
    np.add.at(m, (rows, i1), w)
    return m


def resize(img: np.ndarray, hw) -> np.ndarray:
    _, h, w = img.shape
    oh, ow = hw
    if (h, w) == (oh, ow):
        return img.astype(np.float32, copy=True)
    ry, rx = _interp_matrix(h, oh), _interp_matrix(w, ow)
    return np.matmul(np.matmul(ry, img.astype(np.float32)), rx.T)


def crop(img: np.ndarray, top: int, left: int, hw) -> np.ndarray:
    return img[:, top:top + hw[0], left:left + hw[1]]


def hflip(img: np.ndarray) -> np.ndarray:
    return img[:, :, ::-1]


def normalize(img: np.ndarray, mean, std) -> np.ndarray:
    mean = np.asarray(mean, dtype=np.float32)[:, None, None]
    std = np.asarray(std, dtype=np.float32)[:, None, None]
    return (img - mean) / std


def sample_erase_rect(h: int, w: int, cfg: REAConfig, rng: np.random.Generator):
    """Draw (top, left, eh, ew) whose area fraction lies within ``cfg.area_frac``, or None."""
    lo, hi = cfg.area_frac
    log_r = (math.log(cfg.aspect[0]), math.log(cfg.aspect[1]))
    area = h * w
    for _ in range(cfg.max_attempts):
        target = rng.uniform(lo, hi) * area
        aspect = math.exp(rng.uniform(*log_r))
        eh = int(round(math.sqrt(target * aspect)))
        ew = int(round(math.sqrt(target / aspect)))
        if 0 < eh < h and 0 < ew < w and lo <= eh * ew / area <= hi:
            top = int(rng.integers(0, h - eh + 1))
            left = int(rng.integers(0, w - ew + 1))
            return top, left, eh, ew
    return None


def erase(img: np.ndarray, rect) -> np.ndarray:
    """Fill ``rect`` with the per-channel mean of ``img`` (computed before erasing)."""
    top, left, eh, ew = rect
    out = img.copy()
    out[:, top:top + eh, left:left + ew] = img.mean(axis=(1, 2), keepdims=True)
    return out


def random_erasing(img: np.ndarray, cfg: REAConfig, rng: np.random.Generator, rect=None) -> np.ndarray:
    """With probability ``cfg.p`` replace a random rectangle by the image mean.

    ``rect`` forces the rectangle (the probability draw still happens).
    """
    if rng.random() >= cfg.p:
        return img
    if rect is None:
        rect = sample_erase_rect(img.shape[1], img.shape[2], cfg, rng)
        if rect is None:
            return img
    return erase(img, rect)


def augment(img: np.ndarray, cfg: AugmentConfig, mode: str, rng=None,
            mean=(0.485, 0.456, 0.406), std=(0.229, 0.224, 0.225)) -> np.ndarray:
    """Train: resize 105 %, random crop, flip, normalise, random erasing.  Eval: resize + normalise."""
    if mode == "eval":
        return normalize(resize(img, cfg.crop), mean, std).astype(np.float32)
    if mode != "train":
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    big = resize(img, cfg.resized)
    top = int(rng.integers(0, big.shape[1] - cfg.crop[0] + 1))
    left = int(rng.integers(0, big.shape[2] - cfg.crop[1] + 1))
    x = crop(big, top, left, cfg.crop)
    if rng.random() < cfg.hflip_p:
        x = hflip(x)
    x = normalize(x, mean, std)
    x = random_erasing(x, cfg.rea, rng)
    return np.ascontiguousarray(x, dtype=np.float32)
