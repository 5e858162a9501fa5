"""Dataset manifests (``path,label,split`` CSV) and stratified splitting."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from ..errors import EmptyDataset, MalformedHeader, RatioOutOfRange
from .ppm import load_ppm
from .transforms import resize_bilinear, square

SPLITS = ("train", "test")
CLASSES_FILE = "classes.txt"


@dataclass(frozen=True)
class Record:
    path: str
    label: int
    split: str


@dataclass
class DatasetManifest:
    records: list[Record]
    class_names: list[str]
    seed: int = 0
    root: Path = field(default_factory=Path)

    def __post_init__(self):
        seen = set()
        for r in self.records:
            if not 0 <= r.label < len(self.class_names):
                raise ValueError(f"label {r.label} out of range for {len(self.class_names)} classes")
            if r.split not in SPLITS:
                raise ValueError(f"unknown split tag {r.split!r}")
            if r.path in seen:
                raise ValueError(f"duplicate path {r.path!r}")
            seen.add(r.path)

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    def subset(self, split_tag: str) -> list[Record]:
        return [r for r in self.records if r.split == split_tag]


def split(manifest: DatasetManifest, train_ratio: float, seed: int) -> DatasetManifest:
    """Stratified train/test split, deterministic under ``seed``.

    Each class keeps ``round(train_ratio * n)`` training samples and at least
    one test sample.
    """
    if not 0.0 < train_ratio < 1.0:
        raise RatioOutOfRange(f"train ratio {train_ratio} must lie in (0, 1)")
    by_class: dict[int, list[int]] = {}
    for i, r in enumerate(manifest.records):
        by_class.setdefault(r.label, []).append(i)
    tags = [""] * len(manifest.records)
    for label, idx in sorted(by_class.items()):
        n = len(idx)
        n_train = int(np.floor(train_ratio * n + 0.5))
        if n_train >= n:
            raise RatioOutOfRange(f"ratio {train_ratio} leaves class {label} without test samples")
        if n_train < 1:
            raise RatioOutOfRange(f"ratio {train_ratio} leaves class {label} without training samples")
        perm = np.random.default_rng([seed, label]).permutation(n)
        chosen = set(perm[:n_train].tolist())
        for j, i in enumerate(idx):
            tags[i] = "train" if j in chosen else "test"
    records = [replace(r, split=t) for r, t in zip(manifest.records, tags)]
    return DatasetManifest(records, list(manifest.class_names), seed, manifest.root)


def repeated_splits(manifest: DatasetManifest, train_ratio: float,
                    seeds: Iterable[int]) -> Iterator[DatasetManifest]:
    for s in seeds:
        yield split(manifest, train_ratio, s)


def manifest_csv(manifest: DatasetManifest) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["path", "label", "split"])
    for r in manifest.records:
        w.writerow([r.path, r.label, r.split])
    return buf.getvalue()


def write_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    path = Path(path)
    path.write_text(manifest_csv(manifest), encoding="utf-8", newline="\n")
    (path.parent / CLASSES_FILE).write_text(
        "".join(f"{name}\n" for name in manifest.class_names), encoding="utf-8", newline="\n")


def read_manifest(path: str | Path) -> DatasetManifest:
    path = Path(path)
    with path.open(encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != ["path", "label", "split"]:
        raise MalformedHeader(f"{path}: manifest header must be 'path,label,split'")
    records = [Record(p, int(lbl), s) for p, lbl, s in rows[1:] if p]
    if not records:
        raise EmptyDataset(f"{path}: manifest has no records")
    names_file = path.parent / CLASSES_FILE
    if names_file.exists():
        names = [ln for ln in names_file.read_text(encoding="utf-8").splitlines() if ln]
    else:
        names = [str(i) for i in range(max(r.label for r in records) + 1)]
    return DatasetManifest(records, names, 0, path.parent)


def load_images(manifest: DatasetManifest, split_tag: str,
                image_size: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Load one split as ``(images[B, S, S, C], labels[B])``.

    Non-square images are center-cropped square; ``image_size`` resizes.
    """
    recs = manifest.subset(split_tag)
    if not recs:
        raise EmptyDataset(f"split {split_tag!r} is empty")
    imgs = []
    for r in recs:
        img = square(load_ppm(manifest.root / r.path))
        if image_size is not None and img.shape[0] != image_size:
            img = resize_bilinear(img, image_size)
        imgs.append(img)
    channels = {im.shape for im in imgs}
    if len(channels) != 1:
        raise ValueError(f"images in split {split_tag!r} disagree in shape: {sorted(channels)}")
    return np.stack(imgs), np.array([r.label for r in recs], dtype=np.int64)
