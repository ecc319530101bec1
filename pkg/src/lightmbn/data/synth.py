"""Procedural stand-in for a person re-identification dataset.

Each identity gets a fixed appearance (hair, upper-body colour and texture,
lower-body colour, shoes, optional bag); every sample re-renders it with
random placement, scale, brightness, a camera colour cast, background and
pixel noise.  All randomness flows from integer seeds so the output is
bit-reproducible.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..errors import ConfigError
from .dataset import NORMAL, DatasetIndex, Sample

H, W = 384, 128
N_CAMERAS = 6
ROLE_FRACTIONS = (0.5, 1 / 6)  # train, query; the rest go to the gallery


def _identity_style(rng: np.random.Generator) -> dict:
    return {
        "hair": rng.uniform(0.0, 0.5, 3),
        "skin": np.array([0.85, 0.7, 0.55]) * rng.uniform(0.6, 1.1),
        "upper": rng.uniform(0.05, 0.95, 3),
        "upper2": rng.uniform(0.05, 0.95, 3),
        "lower": rng.uniform(0.05, 0.95, 3),
        "shoes": rng.uniform(0.0, 0.6, 3),
        "pattern": int(rng.integers(0, 4)),
        "period": int(rng.integers(10, 24)),
        "bag": bool(rng.random() < 0.5),
        "bag_color": rng.uniform(0.05, 0.95, 3),
        "bag_side": int(rng.choice([-1, 1])),
        "width": rng.uniform(0.85, 1.1),
    }


def _camera_tint(camid: int) -> np.ndarray:
    tints = np.random.default_rng([9001, camid]).uniform(0.85, 1.15, 3)
    return tints


def render_person(style: dict, camid: int, rng: np.random.Generator) -> np.ndarray:
    """Render one 3 x 384 x 128 sample of an identity."""
    yy, xx = np.mgrid[0:H, 0:W].astype(np.float32)
    dy = rng.uniform(-14, 14)
    dx = rng.uniform(-10, 10)
    scale = style["width"] * rng.uniform(0.9, 1.1)
    cx = W / 2 + dx

    bg_a, bg_b = rng.uniform(0.2, 0.8, 3), rng.uniform(0.2, 0.8, 3)
    t = (yy / H)[None]
    img = bg_a[:, None, None] * (1 - t) + bg_b[:, None, None] * t

    def paint(mask, color):
        img[:, mask] = np.asarray(color)[:, None]

    head_cy = 52 + dy
    head = ((yy - head_cy) / 24) ** 2 + ((xx - cx) / (17 * scale)) ** 2 <= 1
    paint(head, style["skin"])
    hair = head & (yy < head_cy - 6)
    paint(hair, style["hair"])

    torso_top, torso_bot = 82 + dy, 212 + dy
    half_w = 34 * scale
    torso = (yy >= torso_top) & (yy < torso_bot) & (np.abs(xx - cx) < half_w)
    p, ry, rx = style["period"], yy - torso_top, xx - cx
    if style["pattern"] == 0:
        second = np.zeros_like(torso)
    elif style["pattern"] == 1:
        second = (ry // p) % 2 == 1
    elif style["pattern"] == 2:
        second = (np.floor(rx / (p * 0.7)) % 2) == 1
    else:
        second = ((ry // p) + np.floor(rx / p)) % 2 == 1
    paint(torso, style["upper"])
    paint(torso & second, style["upper2"])

    leg_top, leg_bot = torso_bot, 346 + dy
    legs = (yy >= leg_top) & (yy < leg_bot) & (np.abs(xx - cx) < 28 * scale) & (np.abs(xx - cx) > 3)
    paint(legs, style["lower"])
    shoes = (yy >= leg_bot) & (yy < leg_bot + 16) & (np.abs(xx - cx) < 30 * scale) & (np.abs(xx - cx) > 3)
    paint(shoes, style["shoes"])

    if style["bag"]:
        bx = cx + style["bag_side"] * (half_w + 8)
        bag = (yy >= torso_top + 30) & (yy < torso_top + 90) & (np.abs(xx - bx) < 10)
        paint(bag, style["bag_color"])

    img = img * _camera_tint(camid)[:, None, None] * rng.uniform(0.8, 1.2)
    img = img + rng.normal(0.0, 0.04, img.shape)
    return np.clip(img, 0.0, 1.0).astype(np.float32)


def synth_dataset(n_ids: int = 20, per_id: int = 12, seed: int = 7) -> DatasetIndex:
    """Deterministic synthetic dataset; every identity appears in all three roles.

    Per identity, the first half of its samples are train, the next sixth
    query and the rest gallery.  Cameras cycle through 1..6 with a
    per-identity offset, so query and gallery cameras differ.
    """
    if n_ids < 2:
        raise ConfigError(f"synthetic dataset needs n_ids >= 2, got {n_ids}", field="synth_ids")
    if per_id < 2:
        raise ConfigError(f"synthetic dataset needs per_id >= 2, got {per_id}", field="synth_per_id")
    n_train = max(1, int(round(per_id * ROLE_FRACTIONS[0])))
    n_query = max(1, int(round(per_id * ROLE_FRACTIONS[1]))) if per_id - n_train >= 2 else 0
    samples = []
    for k in range(n_ids):
        pid = k + 1
        style = _identity_style(np.random.default_rng([seed, pid]))
        offset = int(np.random.default_rng([seed, pid, 1]).integers(0, N_CAMERAS))
        for j in range(per_id):
            camid = 1 + (j + offset) % N_CAMERAS
            img = render_person(style, camid, np.random.default_rng([seed, pid, 2, j]))
            if j < n_train:
                role = "train"
            elif j < n_train + n_query:
                role = "query"
            else:
                role = "gallery"
            samples.append(Sample(pid, camid, role, NORMAL, image=img))
    index = DatasetIndex(samples, meta={"synthetic": {"seed": seed, "n_ids": n_ids, "per_id": per_id}})
    mean, std = index.compute_stats("train")
    return index.with_stats(mean, std)


def write_synth_manifest(path, n_ids: int, per_id: int, seed: int) -> None:
    Path(path).write_text(json.dumps({"seed": seed, "n_ids": n_ids, "per_id": per_id}, indent=2) + "\n")


def structural_similarity(a: np.ndarray, b: np.ndarray, factor: int = 8) -> float:
    """Pearson correlation of block-averaged images; a cheap layout-similarity score."""
    def pooled(x):
        c, h, w = x.shape
        return x.reshape(c, h // factor, factor, w // factor, factor).mean(axis=(2, 4)).ravel()

    pa, pb = pooled(a), pooled(b)
    pa, pb = pa - pa.mean(), pb - pb.mean()
    return float(pa @ pb / (np.linalg.norm(pa) * np.linalg.norm(pb) + 1e-12))
