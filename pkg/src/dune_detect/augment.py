"""Dataset variants: geometric/photometric copies, Mosaic, CutMix and
background-image injection.

Every box-moving operation shares the same survival rule: the remapped box
is clipped to its valid region and dropped when less than ``min_keep`` of
its pre-clip area remains.
"""
from __future__ import annotations

import hashlib
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .dataset import (
    DEFAULT_CLASSES,
    Annotation,
    DatasetError,
    DatasetSplit,
    LabeledImage,
    NormBox,
    manifest_summary,
    split_dataset,
)

log = logging.getLogger(__name__)

FILL_VALUE = 114
MIN_KEEP = 0.25
CUTMIX_VISIBILITY = 0.5
PATCH_RANGE = (0.1, 0.4)


@dataclass(frozen=True)
class GeomTransform:
    hflip: bool = False
    scale: float = 1.0
    translate: tuple[float, float] = (0.0, 0.0)
    brightness: float = 0.0
    contrast: float = 1.0

    @classmethod
    def sample(cls, rng: np.random.Generator) -> "GeomTransform":
        return cls(hflip=bool(rng.random() < 0.5),
                   scale=float(rng.uniform(0.5, 1.5)),
                   translate=(float(rng.uniform(-0.2, 0.2)), float(rng.uniform(-0.2, 0.2))),
                   brightness=float(rng.uniform(-0.2, 0.2)),
                   contrast=float(rng.uniform(0.7, 1.3)))

    def map_x(self, x):
        if self.hflip:
            x = 1.0 - x
        return self.scale * (x - 0.5) + 0.5 + self.translate[0]

    def map_y(self, y):
        return self.scale * (y - 0.5) + 0.5 + self.translate[1]


@dataclass(frozen=True)
class AugConfig:
    num_geom: int = 0
    num_cutmix: int = 0
    num_mosaic: int = 0
    negatives: int = 0
    seed: int = 0
    paper_faithful_split: bool = False
    split_ratio: tuple[float, float, float] = (0.6, 0.2, 0.2)
    mosaic_canvas: int | None = None
    mosaic_jitter: float = 0.2
    patch_frac_range: tuple[float, float] = PATCH_RANGE
    min_keep: float = MIN_KEEP
    cutmix_visibility: float = CUTMIX_VISIBILITY

    def __post_init__(self):
        for name in ("num_geom", "num_cutmix", "num_mosaic", "negatives"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")


@dataclass
class BoxStats:
    clipped: int = 0
    dropped: int = 0

    def add(self, other: "BoxStats") -> None:
        self.clipped += other.clipped
        self.dropped += other.dropped


def _keep_box(x0, y0, x1, y1, bounds, min_keep, stats: BoxStats):
    """Clip a corner box to ``bounds``; ``None`` when too little survives."""
    bx0, by0, bx1, by1 = bounds
    area = (x1 - x0) * (y1 - y0)
    cx0, cy0 = max(x0, bx0), max(y0, by0)
    cx1, cy1 = min(x1, bx1), min(y1, by1)
    if cx1 <= cx0 or cy1 <= cy0 or area <= 0:
        stats.dropped += 1
        return None
    if (cx1 - cx0) * (cy1 - cy0) < min_keep * area:
        stats.dropped += 1
        return None
    if (cx0, cy0, cx1, cy1) != (x0, y0, x1, y1):
        stats.clipped += 1
    return cx0, cy0, cx1, cy1


def _photometric(pixels: np.ndarray, brightness: float, contrast: float) -> np.ndarray:
    if brightness == 0.0 and contrast == 1.0:
        return pixels
    out = (pixels.astype(np.float64) - 128.0) * contrast + 128.0 + brightness * 255.0
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


def _geom(img: LabeledImage, t: GeomTransform, min_keep: float = MIN_KEEP) -> tuple[LabeledImage, BoxStats]:
    h, w = img.height_px, img.width_px
    # inverse map of output pixel centres, nearest-neighbour sampling
    u = (np.arange(w) + 0.5) / w
    v = (np.arange(h) + 0.5) / h
    sx = (u - 0.5 - t.translate[0]) / t.scale + 0.5
    if t.hflip:
        sx = 1.0 - sx
    sy = (v - 0.5 - t.translate[1]) / t.scale + 0.5
    ix = np.floor(sx * w).astype(np.int64)
    iy = np.floor(sy * h).astype(np.int64)
    vx = (ix >= 0) & (ix < w)
    vy = (iy >= 0) & (iy < h)
    out = np.full_like(img.pixels, FILL_VALUE)
    src = img.pixels[np.clip(iy, 0, h - 1)][:, np.clip(ix, 0, w - 1)]
    mask = vy[:, None] & vx[None, :]
    out[mask] = src[mask]
    out = _photometric(out, t.brightness, t.contrast)

    stats = BoxStats()
    if not t.hflip and t.scale == 1.0 and t.translate == (0.0, 0.0):
        return img.with_(pixels=out, provenance="geom"), stats
    anns = []
    for a in img.annotations:
        x0, y0, x1, y1 = a.box.corners()
        xa, xb = t.map_x(x0), t.map_x(x1)
        ya, yb = t.map_y(y0), t.map_y(y1)
        kept = _keep_box(min(xa, xb), min(ya, yb), max(xa, xb), max(ya, yb), (0.0, 0.0, 1.0, 1.0),
                         min_keep, stats)
        if kept is not None:
            anns.append(Annotation(a.class_id, NormBox.from_corners(*kept)))
    return img.with_(pixels=out, annotations=tuple(anns), provenance="geom"), stats


def apply_geom(img: LabeledImage, t: GeomTransform, min_keep: float = MIN_KEEP) -> LabeledImage:
    """Apply flip/scale/translate about the image centre, then brightness
    and contrast.  Boxes follow the same affine map."""
    return _geom(img, t, min_keep)[0]


def _resize_nearest(pixels: np.ndarray, out_w: int, out_h: int) -> np.ndarray:
    h, w = pixels.shape[:2]
    iy = np.minimum((np.arange(out_h) + 0.5) * h / out_h, h - 1).astype(np.int64)
    ix = np.minimum((np.arange(out_w) + 0.5) * w / out_w, w - 1).astype(np.int64)
    return pixels[iy][:, ix]


def _mosaic(imgs: Sequence[LabeledImage], canvas: int, center_jitter: float, seed,
            min_keep: float = MIN_KEEP, out_id: str | None = None) -> tuple[LabeledImage, BoxStats]:
    if len(imgs) != 4:
        raise ValueError(f"mosaic needs exactly 4 images, got {len(imgs)}")
    if canvas < 2:
        raise ValueError("mosaic canvas side must be >= 2 px")
    rng = np.random.default_rng(seed)
    j = center_jitter * canvas
    xc = int(round(canvas / 2 + rng.uniform(-j, j))) if j > 0 else canvas // 2
    yc = int(round(canvas / 2 + rng.uniform(-j, j))) if j > 0 else canvas // 2
    xc = min(max(xc, 1), canvas - 1)
    yc = min(max(yc, 1), canvas - 1)
    out = np.full((canvas, canvas, 3), FILL_VALUE, dtype=np.uint8)
    stats = BoxStats()
    anns: list[Annotation] = []
    # quadrant bounds in px: (x0, y0, x1, y1) and which corner touches the centre
    quads = [((0, 0, xc, yc), "br"), ((xc, 0, canvas, yc), "bl"),
             ((0, yc, xc, canvas), "tr"), ((xc, yc, canvas, canvas), "tl")]
    for img, ((qx0, qy0, qx1, qy1), anchor) in zip(imgs, quads):
        qw, qh = qx1 - qx0, qy1 - qy0
        h, w = img.height_px, img.width_px
        s = max(qw / w, qh / h)
        sw, sh = w * s, h * s
        # origin of the scaled image on the canvas
        ox = xc - sw if anchor in ("br", "tr") else xc
        oy = yc - sh if anchor in ("br", "bl") else yc
        u = np.arange(qx0, qx1) + 0.5
        v = np.arange(qy0, qy1) + 0.5
        ix = np.clip(np.floor((u - ox) / s).astype(np.int64), 0, w - 1)
        iy = np.clip(np.floor((v - oy) / s).astype(np.int64), 0, h - 1)
        out[qy0:qy1, qx0:qx1] = img.pixels[iy][:, ix]
        for a in img.annotations:
            x0, y0, x1, y1 = a.box.corners()
            kept = _keep_box((ox + x0 * sw) / canvas, (oy + y0 * sh) / canvas,
                             (ox + x1 * sw) / canvas, (oy + y1 * sh) / canvas,
                             (qx0 / canvas, qy0 / canvas, qx1 / canvas, qy1 / canvas), min_keep, stats)
            if kept is not None:
                anns.append(Annotation(a.class_id, NormBox.from_corners(*kept)))
    ident = out_id or "mosaic_" + "_".join(i.id for i in imgs)
    return LabeledImage(ident, out, tuple(anns), "mosaic"), stats


def mosaic(imgs: Sequence[LabeledImage], canvas: int, center_jitter: float = 0.2, seed=0,
           min_keep: float = MIN_KEEP) -> LabeledImage:
    """Compose four images around a jittered centre point.

    Image *i* fills quadrant *i* (TL, TR, BL, BR), scaled uniformly to cover
    it with the corner nearest the centre pinned to the centre point.
    """
    return _mosaic(imgs, canvas, center_jitter, seed, min_keep)[0]


def _box_overlap(box: NormBox, rect) -> float:
    """Fraction of ``box`` area inside ``rect`` (corner tuple)."""
    x0, y0, x1, y1 = box.corners()
    iw = min(x1, rect[2]) - max(x0, rect[0])
    ih = min(y1, rect[3]) - max(y0, rect[1])
    if iw <= 0 or ih <= 0 or box.area <= 0:
        return 0.0
    return iw * ih / box.area


@dataclass(frozen=True)
class CutmixPatch:
    """Patch geometry in pixels: source corner in the donor, destination
    corner in the base, size."""

    src_x: int
    src_y: int
    dst_x: int
    dst_y: int
    pw: int
    ph: int


def cutmix_patch(width: int, height: int, patch_frac: float, rng: np.random.Generator) -> CutmixPatch:
    side = math.sqrt(patch_frac)
    pw = min(width, max(1, int(round(width * side))))
    ph = min(height, max(1, int(round(height * side))))
    sx, dx = (int(rng.integers(0, width - pw + 1)) for _ in range(2))
    sy, dy = (int(rng.integers(0, height - ph + 1)) for _ in range(2))
    return CutmixPatch(sx, sy, dx, dy, pw, ph)


def _cutmix(base: LabeledImage, donor: LabeledImage, patch_frac: float, seed,
            visibility: float = CUTMIX_VISIBILITY, out_id: str | None = None
            ) -> tuple[LabeledImage, BoxStats, CutmixPatch, np.ndarray]:
    if not PATCH_RANGE[0] <= patch_frac <= PATCH_RANGE[1]:
        raise ValueError(f"patch_frac {patch_frac} outside {PATCH_RANGE}")
    rng = np.random.default_rng(seed)
    h, w = base.height_px, base.width_px
    donor_px = donor.pixels
    if donor_px.shape[:2] != (h, w):
        donor_px = _resize_nearest(donor_px, w, h)
    p = cutmix_patch(w, h, patch_frac, rng)
    out = base.pixels.copy()
    out[p.dst_y:p.dst_y + p.ph, p.dst_x:p.dst_x + p.pw] = \
        donor_px[p.src_y:p.src_y + p.ph, p.src_x:p.src_x + p.pw]

    stats = BoxStats()
    dst = (p.dst_x / w, p.dst_y / h, (p.dst_x + p.pw) / w, (p.dst_y + p.ph) / h)
    src = (p.src_x / w, p.src_y / h, (p.src_x + p.pw) / w, (p.src_y + p.ph) / h)
    anns = []
    for a in base.annotations:
        if _box_overlap(a.box, dst) >= visibility:
            stats.dropped += 1
            continue
        anns.append(a)
    ox, oy = (p.dst_x - p.src_x) / w, (p.dst_y - p.src_y) / h
    for a in donor.annotations:
        if _box_overlap(a.box, src) < visibility:
            continue
        x0, y0, x1, y1 = a.box.corners()
        cx0, cy0 = max(x0, src[0]), max(y0, src[1])
        cx1, cy1 = min(x1, src[2]), min(y1, src[3])
        if (cx0, cy0, cx1, cy1) != (x0, y0, x1, y1):
            stats.clipped += 1
        anns.append(Annotation(a.class_id, NormBox.from_corners(cx0 + ox, cy0 + oy, cx1 + ox, cy1 + oy)))
    ident = out_id or f"cutmix_{base.id}_{donor.id}"
    return LabeledImage(ident, out, tuple(anns), "cutmix"), stats, p, donor_px


def cutmix(base: LabeledImage, donor: LabeledImage, patch_frac: float, seed=0,
           visibility: float = CUTMIX_VISIBILITY) -> LabeledImage:
    """Paste a random donor rectangle covering ``patch_frac`` of the canvas
    at a random spot of ``base``.  Donor boxes mostly inside the rectangle
    come along; base boxes mostly hidden by it are removed."""
    return _cutmix(base, donor, patch_frac, seed, visibility)[0]


def inject_negatives(dataset: Sequence[LabeledImage], negatives: Sequence[LabeledImage]) -> list[LabeledImage]:
    out = list(dataset)
    for neg in negatives:
        if neg.annotations:
            raise DatasetError(f"negative image {neg.id!r} carries {len(neg.annotations)} boxes")
        out.append(neg.with_(provenance="negative"))
    return out


def derive_seed(seed: int, source_id: str, op: str, index: int) -> int:
    """Stable per-output seed, independent of execution order."""
    digest = hashlib.sha256(f"{seed}|{source_id}|{op}|{index}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def _augment_one(job, pool: Sequence[LabeledImage], cfg: AugConfig, canvas: int):
    src, op, i = job
    rng = np.random.default_rng(derive_seed(cfg.seed, src.id, op, i))
    out_id = f"{src.id}_{op}{i}"
    if op == "geom":
        img, st = _geom(src, GeomTransform.sample(rng), cfg.min_keep)
        return img.with_(id=out_id), st
    if op == "cutmix":
        donor = pool[int(rng.integers(len(pool)))]
        frac = float(rng.uniform(*cfg.patch_frac_range))
        img, st, _, _ = _cutmix(src, donor, frac, rng, cfg.cutmix_visibility, out_id)
        return img, st
    partners = [pool[int(k)] for k in rng.integers(len(pool), size=3)]
    return _mosaic([src, *partners], canvas, cfg.mosaic_jitter, rng, cfg.min_keep, out_id)


def augment_images(pool: Sequence[LabeledImage], cfg: AugConfig, threads: int = 1
                   ) -> tuple[list[LabeledImage], BoxStats]:
    """All per-source copies for ``pool`` (partners also drawn from ``pool``)."""
    if not pool:
        return [], BoxStats()
    canvas = cfg.mosaic_canvas or max(max(p.width_px, p.height_px) for p in pool)
    jobs = [(src, op, i) for src in pool
            for op, n in (("geom", cfg.num_geom), ("cutmix", cfg.num_cutmix), ("mosaic", cfg.num_mosaic))
            for i in range(n)]
    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            results = list(ex.map(lambda j: _augment_one(j, pool, cfg, canvas), jobs))
    else:
        results = [_augment_one(j, pool, cfg, canvas) for j in jobs]
    stats = BoxStats()
    for _, st in results:
        stats.add(st)
    return [img for img, _ in results], stats


@dataclass
class Variant:
    images: list[LabeledImage]
    split: DatasetSplit
    manifest: dict = field(default_factory=dict)


def generate_variant(raw: Sequence[LabeledImage], cfg: AugConfig, negatives: Sequence[LabeledImage] = (),
                     classes: Sequence[str] = DEFAULT_CLASSES, threads: int = 1) -> Variant:
    """Build one dataset variant from ``raw`` images.

    The first ``cfg.negatives`` background images are appended, then every
    image in the pool gets ``num_geom + num_cutmix + num_mosaic`` copies.
    With ``paper_faithful_split`` the split is drawn over everything after
    augmentation; otherwise the pool is split first and only train images
    are augmented, so val/test hold originals only.
    """
    if not raw:
        raise ValueError("raw dataset is empty")
    if cfg.negatives > len(negatives):
        raise ValueError(f"config asks for {cfg.negatives} negatives, only {len(negatives)} given")
    pool = inject_negatives(raw, list(negatives)[:cfg.negatives])
    if cfg.paper_faithful_split:
        extra, stats = augment_images(pool, cfg, threads)
        images = pool + extra
        split = split_dataset([img.id for img in images], cfg.split_ratio, cfg.seed)
    else:
        base_split = split_dataset([img.id for img in pool], cfg.split_ratio, cfg.seed)
        by_id = {img.id: img for img in pool}
        train_pool = [by_id[i] for i in base_split.train]
        extra, stats = augment_images(train_pool, cfg, threads)
        images = pool + extra
        split = DatasetSplit(base_split.train + tuple(img.id for img in extra),
                             base_split.val, base_split.test, base_split.split_ratio)
    if stats.clipped or stats.dropped:
        log.info("augmentation clipped %d boxes and dropped %d", stats.clipped, stats.dropped)
    manifest = manifest_summary(images, split, classes)
    prov = {p: 0 for p in ("raw", "negative", "geom", "cutmix", "mosaic")}
    for img in images:
        prov[img.provenance] += 1
    manifest["provenance"] = prov
    manifest["boxes_clipped"] = stats.clipped
    manifest["boxes_dropped"] = stats.dropped
    manifest["config"] = {"num_geom": cfg.num_geom, "num_cutmix": cfg.num_cutmix,
                          "num_mosaic": cfg.num_mosaic, "negatives": cfg.negatives, "seed": cfg.seed,
                          "paper_faithful_split": cfg.paper_faithful_split}
    return Variant(images, split, manifest)
