"""YOLO text-label datasets: boxes, images, splits and on-disk layout.

Label files hold one box per line as ``class_id cx cy w h`` with every
coordinate normalized to the image size.  A dataset directory is either
*flat* (``images/<id>.png`` + ``labels/<id>.txt``) or *split*
(``images/{train,val,test}/<id>.png`` and the matching label tree).
"""
from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from PIL import Image

DEFAULT_CLASSES = ("plastic_bottle", "glass_bottle", "waste")
DEFAULT_RATIO = (0.6, 0.2, 0.2)
SPLIT_NAMES = ("train", "val", "test")
PROVENANCES = ("raw", "negative", "geom", "mosaic", "cutmix")

# tolerance on box extents; transforms may land a hair outside [0, 1]
EDGE_TOL = 1e-6
IMAGE_EXTS = (".png", ".jpg", ".jpeg", ".bmp")
LABEL_DECIMALS = 6


class DatasetError(ValueError):
    """Invalid dataset contents or layout."""


class LabelParseError(DatasetError):
    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


@dataclass(frozen=True)
class NormBox:
    """Center-format box in fractions of the image size."""

    cx: float
    cy: float
    w: float
    h: float

    @classmethod
    def from_corners(cls, x0: float, y0: float, x1: float, y1: float) -> "NormBox":
        return cls((x0 + x1) / 2.0, (y0 + y1) / 2.0, x1 - x0, y1 - y0)

    def corners(self) -> tuple[float, float, float, float]:
        return (self.cx - self.w / 2.0, self.cy - self.h / 2.0,
                self.cx + self.w / 2.0, self.cy + self.h / 2.0)

    @property
    def area(self) -> float:
        return self.w * self.h

    def clipped(self) -> "NormBox":
        x0, y0, x1, y1 = self.corners()
        x0, y0 = max(0.0, x0), max(0.0, y0)
        x1, y1 = min(1.0, x1), min(1.0, y1)
        return NormBox.from_corners(x0, y0, max(x0, x1), max(y0, y1))

    def quantized(self, decimals: int = LABEL_DECIMALS) -> "NormBox":
        return NormBox(*(float(f"{v:.{decimals}f}") for v in (self.cx, self.cy, self.w, self.h)))


@dataclass(frozen=True)
class Annotation:
    class_id: int
    box: NormBox


@dataclass(frozen=True, eq=False)
class LabeledImage:
    """An RGB raster (``height x width x 3`` uint8) with its boxes.

    An empty annotation list marks a background ("negative") image.
    """

    id: str
    pixels: np.ndarray
    annotations: tuple[Annotation, ...] = ()
    provenance: str = "raw"

    def __post_init__(self):
        px = self.pixels
        if px.ndim != 3 or px.shape[2] != 3 or px.dtype != np.uint8:
            raise DatasetError(f"{self.id}: pixels must be HxWx3 uint8, got {px.shape} {px.dtype}")
        if self.provenance not in PROVENANCES:
            raise DatasetError(f"{self.id}: unknown provenance {self.provenance!r}")
        if self.provenance == "negative" and self.annotations:
            raise DatasetError(f"{self.id}: negative image carries {len(self.annotations)} boxes")
        object.__setattr__(self, "annotations", tuple(self.annotations))

    @property
    def width_px(self) -> int:
        return int(self.pixels.shape[1])

    @property
    def height_px(self) -> int:
        return int(self.pixels.shape[0])

    def with_(self, **changes) -> "LabeledImage":
        return replace(self, **changes)


@dataclass(frozen=True)
class DatasetSplit:
    train: tuple[str, ...]
    val: tuple[str, ...]
    test: tuple[str, ...]
    split_ratio: tuple[float, float, float] = DEFAULT_RATIO

    def sizes(self) -> tuple[int, int, int]:
        return len(self.train), len(self.val), len(self.test)

    def items(self):
        return zip(SPLIT_NAMES, (self.train, self.val, self.test))

    def to_dict(self) -> dict:
        return {"train": list(self.train), "val": list(self.val), "test": list(self.test),
                "split_ratio": list(self.split_ratio)}


@dataclass(frozen=True)
class Descriptor:
    classes: tuple[str, ...] = DEFAULT_CLASSES
    splits: tuple[float, float, float] = DEFAULT_RATIO
    seed: int = 0


def load_descriptor(path: str | os.PathLike | None) -> Descriptor:
    """Read a dataset descriptor JSON; ``None`` gives the three-class default."""
    if path is None:
        return Descriptor()
    with open(path) as fh:
        doc = json.load(fh)
    classes = tuple(doc.get("classes", DEFAULT_CLASSES))
    if not classes or not all(isinstance(c, str) for c in classes):
        raise DatasetError("descriptor 'classes' must be a non-empty list of names")
    splits = tuple(float(x) for x in doc.get("splits", DEFAULT_RATIO))
    if len(splits) != 3:
        raise DatasetError("descriptor 'splits' must have three entries")
    return Descriptor(classes, splits, int(doc.get("seed", 0)))


def parse_label_file(text: str, class_count: int) -> list[Annotation]:
    annotations = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        tokens = line.split()
        if not tokens:
            continue
        if len(tokens) != 5:
            raise LabelParseError(lineno, f"expected 5 tokens, got {len(tokens)}")
        try:
            class_id = int(tokens[0])
        except ValueError:
            raise LabelParseError(lineno, f"class id {tokens[0]!r} is not an integer") from None
        try:
            cx, cy, w, h = (float(t) for t in tokens[1:])
        except ValueError:
            raise LabelParseError(lineno, "non-numeric coordinate") from None
        if not 0 <= class_id < class_count:
            raise LabelParseError(lineno, f"class id {class_id} outside [0, {class_count})")
        for name, v in zip(("cx", "cy", "w", "h"), (cx, cy, w, h)):
            if not (0.0 <= v <= 1.0):
                raise LabelParseError(lineno, f"{name}={v} outside [0, 1]")
        if w <= 0 or h <= 0:
            raise LabelParseError(lineno, "box has zero width or height")
        for axis, c, size in (("x", cx, w), ("y", cy, h)):
            lo, hi = c - size / 2, c + size / 2
            if lo < -EDGE_TOL:
                raise LabelParseError(lineno, f"box {'left' if axis == 'x' else 'top'} edge {lo:g} < 0")
            if hi > 1 + EDGE_TOL:
                raise LabelParseError(lineno, f"box {'right' if axis == 'x' else 'bottom'} edge {hi:g} > 1")
        annotations.append(Annotation(class_id, NormBox(cx, cy, w, h)))
    return annotations


def format_label_file(annotations: Iterable[Annotation]) -> str:
    lines = []
    for a in annotations:
        b = a.box
        lines.append(f"{a.class_id} {b.cx:.6f} {b.cy:.6f} {b.w:.6f} {b.h:.6f}\n")
    return "".join(lines)


def split_dataset(ids: Sequence[str], ratio: Sequence[float] = DEFAULT_RATIO, seed: int = 0) -> DatasetSplit:
    """Shuffle ``ids`` with ``seed`` and cut them into train/val/test.

    Sizes are ``floor(n * r)`` per split; leftover images go to train, then
    val, then test, one each.
    """
    ratio = tuple(float(r) for r in ratio)
    if len(ratio) != 3 or any(r < 0 for r in ratio) or abs(sum(ratio) - 1.0) > 1e-9:
        raise DatasetError(f"split ratio must be three non-negative fractions summing to 1, got {ratio}")
    ids = list(ids)
    if len(set(ids)) != len(ids):
        seen, dups = set(), []
        for i in ids:
            if i in seen:
                dups.append(i)
            seen.add(i)
        raise DatasetError(f"duplicate ids: {sorted(set(dups))[:5]}")
    n = len(ids)
    sizes = [math.floor(n * r + 1e-9) for r in ratio]
    k = 0
    while sum(sizes) < n:
        sizes[k % 3] += 1
        k += 1
    order = np.random.default_rng(seed).permutation(n)
    shuffled = [ids[i] for i in order]
    a, b = sizes[0], sizes[0] + sizes[1]
    return DatasetSplit(tuple(shuffled[:a]), tuple(shuffled[a:b]), tuple(shuffled[b:]), ratio)


def _class_counts(images: Iterable[LabeledImage], classes: Sequence[str]) -> dict[str, int]:
    counts = {name: 0 for name in classes}
    for img in images:
        for a in img.annotations:
            name = classes[a.class_id] if a.class_id < len(classes) else str(a.class_id)
            counts[name] = counts.get(name, 0) + 1
    return counts


def manifest_summary(images: Sequence[LabeledImage], split: DatasetSplit | None,
                     classes: Sequence[str] = DEFAULT_CLASSES) -> dict:
    by_id = {img.id: img for img in images}
    doc: dict = {"images": len(images), "classes": list(classes),
                 "class_boxes": _class_counts(images, classes),
                 "negatives": sum(1 for img in images if not img.annotations)}
    if split is not None:
        doc["splits"] = {name: len(ids) for name, ids in split.items()}
        doc["split_class_boxes"] = {name: _class_counts((by_id[i] for i in ids), classes)
                                    for name, ids in split.items()}
    return doc


def _save_png(path: Path, pixels: np.ndarray) -> None:
    Image.fromarray(pixels, mode="RGB").save(path, format="PNG")


def load_image(path: str | os.PathLike) -> np.ndarray:
    """Any Pillow-readable raster as an ``H x W x 3`` uint8 array."""
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8).copy()


load_png = load_image


def write_dataset(root: str | os.PathLike, images: Sequence[LabeledImage], split: DatasetSplit | None,
                  classes: Sequence[str] = DEFAULT_CLASSES) -> dict:
    """Write images and labels under ``root`` and return the manifest.

    With ``split=None`` the flat layout is written.  ``manifest.json`` is
    always written next to the two trees.
    """
    root = Path(root)
    by_id: dict[str, LabeledImage] = {}
    for img in images:
        if img.id in by_id:
            raise DatasetError(f"id collision: {img.id!r}")
        by_id[img.id] = img
    if split is None:
        groups = [("", [img.id for img in images])]
    else:
        groups = list(split.items())
        seen: set[str] = set()
        for _, ids in groups:
            for i in ids:
                if i not in by_id:
                    raise DatasetError(f"split references unknown image {i!r}")
                if i in seen:
                    raise DatasetError(f"id collision: {i!r} appears in more than one split")
                seen.add(i)
    for sub, ids in groups:
        img_dir = root / "images" / sub
        lbl_dir = root / "labels" / sub
        img_dir.mkdir(parents=True, exist_ok=True)
        lbl_dir.mkdir(parents=True, exist_ok=True)
        for i in ids:
            img = by_id[i]
            _save_png(img_dir / f"{i}.png", img.pixels)
            with open(lbl_dir / f"{i}.txt", "w", newline="\n") as fh:
                fh.write(format_label_file(img.annotations))
    written = [by_id[i] for _, ids in groups for i in ids]
    manifest = manifest_summary(written, split, classes)
    with open(root / "manifest.json", "w", newline="\n") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest


def is_split_layout(root: str | os.PathLike) -> bool:
    return any((Path(root) / "labels" / s).is_dir() for s in SPLIT_NAMES)


def read_labels(root: str | os.PathLike, class_count: int, split_name: str | None = None
                ) -> dict[str, list[Annotation]]:
    """Label files only, keyed by image id (no pixels are decoded)."""
    root = Path(root)
    if is_split_layout(root):
        names = SPLIT_NAMES if split_name is None else (split_name,)
        dirs = [root / "labels" / s for s in names]
    else:
        dirs = [root / "labels"]
    out: dict[str, list[Annotation]] = {}
    for d in dirs:
        if not d.is_dir():
            raise DatasetError(f"missing label directory {d}")
        for path in sorted(d.glob("*.txt")):
            try:
                out[path.stem] = parse_label_file(path.read_text(), class_count)
            except LabelParseError as exc:
                raise DatasetError(f"{path}: {exc}") from None
    return out


def read_dataset(root: str | os.PathLike, class_count: int = len(DEFAULT_CLASSES),
                 provenance: str = "raw") -> tuple[list[LabeledImage], DatasetSplit | None]:
    """Load a flat or split dataset directory.

    Images without a label file are treated as negatives.
    """
    root = Path(root)
    split_layout = is_split_layout(root)
    subs = SPLIT_NAMES if split_layout else ("",)
    images: list[LabeledImage] = []
    members: dict[str, list[str]] = {s: [] for s in SPLIT_NAMES}
    seen: set[str] = set()
    for sub in subs:
        img_dir = root / "images" / sub
        lbl_dir = root / "labels" / sub
        if not img_dir.is_dir():
            if split_layout:
                continue
            raise DatasetError(f"missing image directory {img_dir}")
        for path in sorted(p for p in img_dir.iterdir() if p.suffix.lower() in IMAGE_EXTS):
            lbl = lbl_dir / f"{path.stem}.txt"
            anns: list[Annotation] = []
            if lbl.exists():
                try:
                    anns = parse_label_file(lbl.read_text(), class_count)
                except LabelParseError as exc:
                    raise DatasetError(f"{lbl}: {exc}") from None
            prov = provenance
            if provenance == "negative" and anns:
                raise DatasetError(f"{lbl}: negative image carries boxes")
            if path.stem in seen:
                raise DatasetError(f"id collision: {path.stem!r} appears twice under {root}")
            seen.add(path.stem)
            images.append(LabeledImage(path.stem, load_image(path), tuple(anns), prov))
            if split_layout:
                members[sub].append(path.stem)
    split = None
    if split_layout:
        split = DatasetSplit(tuple(members["train"]), tuple(members["val"]), tuple(members["test"]))
    return images, split
