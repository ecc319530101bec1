"""Samples, dataset indices and on-disk dataset ingestion."""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from ..errors import DataError, ParseError, ValidationError

log = logging.getLogger(__name__)

NORMAL, DISTRACTOR, JUNK = "normal", "distractor", "junk"
FLAG_CODES = {NORMAL: 0, DISTRACTOR: 1, JUNK: 2}
FLAG_NAMES = {v: k for k, v in FLAG_CODES.items()}
ROLES = ("train", "query", "gallery")
MARKET_DIRS = {"train": "bounding_box_train", "query": "query", "gallery": "bounding_box_test"}
IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)

_NAME_RE = re.compile(r"^(-?\d+)_c(\d+)s(\d+)_.*\.(jpg|png)$")


def flag_for_pid(pid: int) -> str:
    if pid == -1:
        return DISTRACTOR
    if pid == 0:
        return JUNK
    return NORMAL


def parse_reid_filename(name: str):
    """'0002_c1s1_000451_03.jpg' -> (2, 1, 'normal')."""
    m = _NAME_RE.match(name)
    if m is None:
        raise ParseError(f"not a re-id filename: {name!r}", text=name)
    pid, camid = int(m.group(1)), int(m.group(2))
    return pid, camid, flag_for_pid(pid)


def format_reid_filename(pid: int, camid: int, seq: int = 1, frame: int = 0, ext: str = "png") -> str:
    head = f"{pid:04d}" if pid >= 0 else str(pid)
    return f"{head}_c{camid}s{seq}_{frame:06d}_00.{ext}"


def read_image(path) -> np.ndarray:
    """Load an RGB image as a 3 x H x W float32 array in [0, 1]."""
    from PIL import Image

    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read image {path}: {exc}") from exc
    return np.ascontiguousarray(arr.transpose(2, 0, 1))


def write_image(path, img: np.ndarray) -> None:
    from PIL import Image

    arr = np.clip(np.rint(np.asarray(img).transpose(1, 2, 0) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr, "RGB").save(path)


@dataclass(frozen=True)
class Sample:
    pid: int
    camid: int
    role: str
    flag: str = NORMAL
    path: Optional[str] = None
    image: Optional[np.ndarray] = field(default=None, repr=False, compare=False)

    def load(self) -> np.ndarray:
        if self.image is not None:
            return self.image
        if self.path is None:
            raise DataError("sample has neither an in-memory image nor a path")
        return read_image(self.path)


class DatasetIndex:
    """Immutable list of samples with the train-identity map and normalisation stats."""

    def __init__(self, samples, mean=IMAGENET_MEAN, std=IMAGENET_STD, meta: Optional[dict] = None):
        self.samples = tuple(samples)
        self.mean = tuple(float(v) for v in mean)
        self.std = tuple(float(v) for v in std)
        self.meta = dict(meta or {})
        id_to_indices: dict = {}
        for i, s in enumerate(self.samples):
            if s.role == "train" and s.flag == NORMAL:
                id_to_indices.setdefault(s.pid, []).append(i)
        self.id_to_indices = {k: tuple(v) for k, v in id_to_indices.items()}
        # class labels in order of first appearance in the train split
        self.label_of = {pid: n for n, pid in enumerate(self.id_to_indices)}

    def __len__(self):
        return len(self.samples)

    def __getitem__(self, i) -> Sample:
        return self.samples[i]

    @property
    def num_classes(self) -> int:
        return len(self.label_of)

    def positions(self, role: str) -> list:
        return [i for i, s in enumerate(self.samples) if s.role == role]

    def image(self, i: int) -> np.ndarray:
        return self.samples[i].load()

    def with_stats(self, mean, std) -> "DatasetIndex":
        return DatasetIndex(self.samples, mean, std, self.meta)

    def compute_stats(self, role: str = "train") -> tuple:
        """Per-channel mean/std over every image of ``role``."""
        total = np.zeros(3)
        total_sq = np.zeros(3)
        count = 0
        for i in self.positions(role):
            img = self.image(i).astype(np.float64)
            total += img.sum(axis=(1, 2))
            total_sq += (img * img).sum(axis=(1, 2))
            count += img.shape[1] * img.shape[2]
        if count == 0:
            raise DataError(f"no {role} images to compute statistics from")
        mean = total / count
        std = np.sqrt(np.maximum(total_sq / count - mean ** 2, 1e-12))
        return tuple(mean.tolist()), tuple(std.tolist())

    def counts(self) -> dict:
        out = {}
        for role in ROLES:
            pos = self.positions(role)
            pids = {self.samples[i].pid for i in pos if self.samples[i].flag == NORMAL}
            out[role] = {"images": len(pos), "ids": len(pids)}
        return out


def _list_images(directory: Path) -> list:
    return sorted(p for p in directory.iterdir() if p.suffix.lower() in (".jpg", ".png"))


def load_dataset(root, layout: str = "market") -> DatasetIndex:
    """Index a Market-1501 style directory tree (train / query / gallery folders)."""
    if layout != "market":
        raise DataError(f"unsupported dataset layout {layout!r}")
    root = Path(root)
    samples = []
    for role in ROLES:
        d = root / MARKET_DIRS[role]
        if not d.is_dir():
            raise DataError(f"missing dataset directory {d}")
        for p in _list_images(d):
            try:
                pid, camid, flag = parse_reid_filename(p.name)
            except ParseError as exc:
                raise ParseError(f"{p}: {exc}", text=str(p)) from None
            samples.append(Sample(pid, camid, role, flag, path=str(p)))
    index = DatasetIndex(samples, meta={"root": str(root), "layout": layout})
    if not index.id_to_indices:
        raise DataError(f"{root / MARKET_DIRS['train']} holds no usable training images")
    log.info("loaded %s: %s", root, index.counts())
    return index


def load_split(file, root=None) -> DatasetIndex:
    """Build an index from a JSON split file.

    The file maps each of "train", "query", "gallery" to a list of
    ``{"file", "pid", "camid"}`` records; paths resolve against ``root``
    (default: the split file's directory).
    """
    file = Path(file)
    try:
        spec = json.loads(file.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read split file {file}: {exc}") from exc
    base = Path(root) if root is not None else file.parent
    samples = []
    for role in ROLES:
        entries = spec.get(role)
        if not isinstance(entries, list):
            raise ValidationError(f"split file {file} lacks a '{role}' list")
        if not entries and role != "train":
            raise ValidationError(f"split file {file} has an empty '{role}' list")
        for e in entries:
            path = base / e["file"]
            if not path.is_file():
                raise ValidationError(f"split references missing image {e['file']}")
            pid, camid = int(e["pid"]), int(e["camid"])
            samples.append(Sample(pid, camid, role, flag_for_pid(pid), path=str(path)))
    index = DatasetIndex(samples, meta={"split": str(file)})
    if not index.id_to_indices:
        raise ValidationError(f"split file {file} has no usable training images")
    return index


def write_market_layout(index: DatasetIndex, root) -> list:
    """Write every sample as a PNG under a Market-style tree; returns the paths."""
    root = Path(root)
    for d in MARKET_DIRS.values():
        (root / d).mkdir(parents=True, exist_ok=True)
    paths = []
    for n, s in enumerate(index.samples):
        name = format_reid_filename(s.pid, s.camid, seq=1, frame=n)
        p = root / MARKET_DIRS[s.role] / name
        write_image(p, index.image(n))
        paths.append(p)
    return paths


