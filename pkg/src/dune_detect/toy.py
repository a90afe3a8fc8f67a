"""A tiny numpy grid detector with analytic gradients, trained with
single-step self-adversarial perturbations.

The network is ``conv(k, stride 2) -> SiLU -> conv(k, stride 2) -> SiLU ->
1x1 head`` on a single-channel ``side x side`` image, giving a
``grid x grid`` map with ``5 + C`` outputs per cell: objectness logit,
``tx, ty, tw, th`` and class logits.  Centres decode as
``(cell + sigmoid(t)) / grid`` and sizes as ``exp(t) / grid``.
"""
from __future__ import annotations

import csv
import io
import json
import math
import struct
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .dataset import Annotation, LabeledImage, NormBox
from .metrics import Detection, EvalReport, evaluate, mean_ap, nms

SAT_MODES = ("sign_ascent", "objectness_hide")


# ------------------------------------------------------------ synthetic data


def _shape_mask(kind: int, size: int) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size]
    c = (size - 1) / 2
    if kind == 0:  # filled square
        m = np.ones((size, size), bool)
    elif kind == 1:  # disk
        m = (xx - c) ** 2 + (yy - c) ** 2 <= (size / 2) ** 2
    elif kind == 2:  # triangle, apex up
        m = np.abs(xx - c) <= (yy + 1) / 2
    elif kind == 3:  # plus
        t = max(1, size // 3)
        lo = (size - t) // 2
        m = np.zeros((size, size), bool)
        m[lo:lo + t, :] = True
        m[:, lo:lo + t] = True
    elif kind == 4:  # hollow square
        m = np.ones((size, size), bool)
        m[2:-2, 2:-2] = False
    else:
        raise ValueError(f"no shape for class {kind}")
    return m


def make_synthetic_shapes(n: int, side: int = 32, classes: int = 3, seed: int = 0,
                          min_shapes: int = 1, max_shapes: int = 3, prefix: str = "syn") -> list[LabeledImage]:
    """Noisy sandy background with 1-3 bright, non-touching shapes.

    Class ``k`` always draws the same shape (square, disk, triangle, plus,
    hollow square), and each box is the exact pixel extent of its shape.
    Classes come from shuffled blocks of ``range(classes)``, so the class
    histogram is balanced to within one block.
    """
    if side < 16:
        raise ValueError("side must be >= 16")
    if not 1 <= classes <= 5:
        raise ValueError("between 1 and 5 classes are supported")
    rng = np.random.default_rng(seed)
    lo_size, hi_size = max(4, side // 6), max(5, side // 3)
    class_stream: list[int] = []
    out = []
    for idx in range(n):
        g = rng.uniform(20, 90, size=(side, side))
        occupied = np.zeros((side, side), bool)
        anns = []
        for _ in range(int(rng.integers(min_shapes, max_shapes + 1))):
            if not class_stream:
                class_stream = list(rng.permutation(classes))
            cls = int(class_stream.pop())
            for _attempt in range(50):
                size = int(rng.integers(lo_size, hi_size + 1))
                mask = _shape_mask(cls, size)
                y0 = int(rng.integers(0, side - size + 1))
                x0 = int(rng.integers(0, side - size + 1))
                ys, xs = slice(max(0, y0 - 1), y0 + size + 1), slice(max(0, x0 - 1), x0 + size + 1)
                if not occupied[ys, xs].any():
                    break
            else:
                class_stream.append(cls)
                continue
            occupied[y0:y0 + size, x0:x0 + size] |= mask
            g[y0:y0 + size, x0:x0 + size][mask] = rng.uniform(180, 235)
            rows = np.flatnonzero(mask.any(axis=1))
            cols = np.flatnonzero(mask.any(axis=0))
            box = NormBox.from_corners((x0 + cols[0]) / side, (y0 + rows[0]) / side,
                                       (x0 + cols[-1] + 1) / side, (y0 + rows[-1] + 1) / side)
            anns.append(Annotation(cls, box))
        rgb = np.stack([g + 20, g + 10, g], axis=-1)
        pixels = np.clip(np.rint(rgb), 0, 255).astype(np.uint8)
        out.append(LabeledImage(f"{prefix}{idx:05d}", pixels, tuple(anns), "raw"))
    return out


def make_backgrounds(n: int, side: int = 32, seed: int = 0, prefix: str = "neg") -> list[LabeledImage]:
    """Shape-free images drawn from the synthetic background distribution."""
    return [img.with_(id=f"{prefix}{i:05d}", annotations=(), provenance="negative")
            for i, img in enumerate(make_synthetic_shapes(n, max(side, 16), 1, seed, 0, 0, prefix))]


def to_gray(images: Sequence[LabeledImage], side: int | None = None) -> np.ndarray:
    """Stack of ``[0, 1]`` grey rasters, nearest-resized to ``side`` if given."""
    out = []
    for img in images:
        px = img.pixels
        if side is not None and px.shape[:2] != (side, side):
            h, w = px.shape[:2]
            iy = np.minimum(((np.arange(side) + 0.5) * h / side).astype(int), h - 1)
            ix = np.minimum(((np.arange(side) + 0.5) * w / side).astype(int), w - 1)
            px = px[iy][:, ix]
        out.append(px.astype(np.float64).mean(axis=2) / 255.0)
    return np.stack(out) if out else np.zeros((0, side or 0, side or 0))


# ------------------------------------------------------------------- model


@dataclass(frozen=True)
class DetectorConfig:
    side: int = 32
    grid: int = 8
    channels: tuple[int, int] = (16, 32)
    kernel: int = 5
    num_classes: int = 3
    box_weight: float = 5.0
    noobj_weight: float = 1.0

    def __post_init__(self):
        if self.side != 4 * self.grid:
            raise ValueError("side must be 4 * grid (two stride-2 convolutions)")
        if self.kernel % 2 == 0:
            raise ValueError("kernel must be odd")


def param_layout(cfg: DetectorConfig) -> list[tuple[str, tuple[int, ...]]]:
    c1, c2 = cfg.channels
    k = cfg.kernel
    out = 5 + cfg.num_classes
    return [("conv1.w", (c1, 1, k, k)), ("conv1.b", (c1,)),
            ("conv2.w", (c2, c1, k, k)), ("conv2.b", (c2,)),
            ("head.w", (out, c2, 1, 1)), ("head.b", (out,))]


@dataclass
class LossResult:
    loss: float
    param_grad: np.ndarray
    input_grad: np.ndarray


class ToyDetector:
    """Parameters live in one flat float64 vector; ``self.p[name]`` gives
    reshaped views into it."""

    def __init__(self, cfg: DetectorConfig = DetectorConfig(), params: np.ndarray | None = None):
        self.cfg = cfg
        self.layout = param_layout(cfg)
        size = sum(math.prod(shape) for _, shape in self.layout)
        if params is None:
            params = np.zeros(size)
        params = np.ascontiguousarray(params, dtype=np.float64)
        if params.shape != (size,):
            raise ValueError(f"expected {size} parameters, got {params.shape}")
        self.params = params

    @classmethod
    def init(cls, cfg: DetectorConfig = DetectorConfig(), seed: int = 0) -> "ToyDetector":
        det = cls(cfg)
        rng = np.random.default_rng(seed)
        for name, shape in det.layout:
            if name.endswith(".w"):
                fan_in = math.prod(shape[1:])
                det.p[name][...] = rng.standard_normal(shape) * math.sqrt(2.0 / fan_in)
        det.p["head.w"][...] *= 0.1
        det.p["head.b"][0] = -2.0  # most cells are background
        return det

    @property
    def p(self) -> dict[str, np.ndarray]:
        views, off = {}, 0
        for name, shape in self.layout:
            n = math.prod(shape)
            views[name] = self.params[off:off + n].reshape(shape)
            off += n
        return views

    def copy(self) -> "ToyDetector":
        return ToyDetector(self.cfg, self.params.copy())

    def layout_descriptor(self) -> list[dict]:
        return [{"name": n, "shape": list(s)} for n, s in self.layout]

    def _check(self, images: np.ndarray) -> np.ndarray:
        images = np.asarray(images, dtype=np.float64)
        if images.ndim == 2:
            images = images[None]
        s = self.cfg.side
        if images.ndim != 3 or images.shape[1:] != (s, s):
            raise ValueError(f"expected images of shape (N, {s}, {s}), got {images.shape}")
        return images

    def _forward(self, images: np.ndarray):
        p = self.p
        x = images[:, None]
        z1, c1 = _conv_forward(x, p["conv1.w"], p["conv1.b"], 2)
        a1 = _silu(z1)
        z2, c2 = _conv_forward(a1, p["conv2.w"], p["conv2.b"], 2)
        a2 = _silu(z2)
        out, c3 = _conv_forward(a2, p["head.w"], p["head.b"], 1)
        return out, (c1, z1, c2, z2, c3)

    def predict_raw(self, images: np.ndarray) -> np.ndarray:
        """Raw outputs, shape ``(N, grid, grid, 5 + C)``."""
        out, _ = self._forward(self._check(images))
        return out.transpose(0, 2, 3, 1)

    def loss_and_grad(self, images: np.ndarray, gts: Sequence[Sequence[Annotation]],
                      mode: str = "full") -> LossResult:
        images = self._check(images)
        if len(gts) != len(images):
            raise ValueError("one annotation list per image is required")
        out, (c1, z1, c2, z2, c3) = self._forward(images)
        raw = out.transpose(0, 2, 3, 1)
        targets = build_targets(gts, self.cfg.grid, self.cfg.num_classes)
        loss, d_raw = head_loss(raw, targets, self.cfg, mode)
        n = len(images)
        loss /= n
        d_out = (d_raw / n).transpose(0, 3, 1, 2)
        grads = {}
        d_a2, grads["head.w"], grads["head.b"] = _conv_backward(d_out, c3, self.p["head.w"], 1)
        d_z2 = d_a2 * _silu_grad(z2)
        d_a1, grads["conv2.w"], grads["conv2.b"] = _conv_backward(d_z2, c2, self.p["conv2.w"], 2)
        d_z1 = d_a1 * _silu_grad(z1)
        d_x, grads["conv1.w"], grads["conv1.b"] = _conv_backward(d_z1, c1, self.p["conv1.w"], 2)
        flat = np.concatenate([grads[name].ravel() for name, _ in self.layout])
        return LossResult(float(loss), flat, d_x[:, 0])


def forward(det: ToyDetector, img: np.ndarray) -> np.ndarray:
    """Raw grid predictions for one ``side x side`` image (or a stack)."""
    raw = det.predict_raw(img)
    return raw[0] if np.ndim(img) == 2 else raw


def detection_loss(det, images: np.ndarray, gts, mode: str = "full") -> LossResult:
    """Batch-mean loss with exact gradients for parameters and pixels.

    Objectness is binary cross-entropy on every cell, boxes use squared
    error on ``sigmoid(tx), sigmoid(ty), tw, th`` and classes use softmax
    cross-entropy; the last two only on cells holding a GT centre.
    ``mode="objectness_hide"`` keeps only the objectness term of positive
    cells.
    """
    return det.loss_and_grad(images, gts, mode)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _silu(z):
    return z * _sigmoid(z)


def _silu_grad(z):
    s = _sigmoid(z)
    return s * (1.0 + z * (1.0 - s))


def _conv_forward(x, w, b, stride):
    n, c, h, wd = x.shape
    o, _, k, _ = w.shape
    pad = k // 2
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    ho, wo = win.shape[2], win.shape[3]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * k * k)
    out = cols @ w.reshape(o, -1).T + b
    return out.reshape(n, ho, wo, o).transpose(0, 3, 1, 2), (cols, x.shape)


def _conv_backward(d_out, cache, w, stride):
    cols, (n, c, h, wd) = cache
    o, _, k, _ = w.shape
    pad = k // 2
    ho, wo = d_out.shape[2], d_out.shape[3]
    d2 = d_out.transpose(0, 2, 3, 1).reshape(-1, o)
    dw = (d2.T @ cols).reshape(w.shape)
    db = d2.sum(axis=0)
    dcols = (d2 @ w.reshape(o, -1)).reshape(n, ho, wo, c, k, k)
    dxp = np.zeros((n, c, h + 2 * pad, wd + 2 * pad))
    for i in range(k):
        for j in range(k):
            dxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += dcols[..., i, j].transpose(0, 3, 1, 2)
    dx = dxp[:, :, pad:pad + h, pad:pad + wd] if pad else dxp
    return dx, dw, db


@dataclass
class Targets:
    obj: np.ndarray     # (N, G, G) 0/1
    box: np.ndarray     # (N, G, G, 4): x offset, y offset, log(w*G), log(h*G)
    cls: np.ndarray     # (N, G, G) int, -1 where negative


def build_targets(gts: Sequence[Sequence[Annotation]], grid: int, num_classes: int) -> Targets:
    """Centre-cell assignment; if two centres share a cell the first wins."""
    n = len(gts)
    obj = np.zeros((n, grid, grid))
    box = np.zeros((n, grid, grid, 4))
    cls = np.full((n, grid, grid), -1, dtype=np.int64)
    for i, anns in enumerate(gts):
        for a in anns:
            if not 0 <= a.class_id < num_classes:
                raise ValueError(f"class id {a.class_id} outside [0, {num_classes})")
            b = a.box
            gx = min(int(b.cx * grid), grid - 1)
            gy = min(int(b.cy * grid), grid - 1)
            if obj[i, gy, gx]:
                continue
            obj[i, gy, gx] = 1.0
            box[i, gy, gx] = (b.cx * grid - gx, b.cy * grid - gy, math.log(b.w * grid), math.log(b.h * grid))
            cls[i, gy, gx] = a.class_id
    return Targets(obj, box, cls)


def head_loss(raw: np.ndarray, t: Targets, cfg: DetectorConfig, mode: str = "full"
              ) -> tuple[float, np.ndarray]:
    """Summed (not averaged) loss over the batch and its gradient w.r.t. raw outputs."""
    d = np.zeros_like(raw)
    o = raw[..., 0]
    pos = t.obj > 0
    sig_o = _sigmoid(o)
    if mode == "objectness_hide":
        loss = float(np.sum(np.logaddexp(0.0, -o[pos])))
        d[..., 0][pos] = sig_o[pos] - 1.0
        return loss, d
    if mode not in ("full", "sign_ascent"):
        raise ValueError(f"unknown loss mode {mode!r}")
    weight = np.where(pos, 1.0, cfg.noobj_weight)
    loss = float(np.sum(weight * (np.logaddexp(0.0, o) - t.obj * o)))
    d[..., 0] = weight * (sig_o - t.obj)
    if pos.any():
        lam = cfg.box_weight
        txy = raw[..., 1:3][pos]
        s = _sigmoid(txy)
        r_xy = s - t.box[pos][:, :2]
        r_wh = raw[..., 3:5][pos] - t.box[pos][:, 2:]
        loss += lam * float(np.sum(r_xy ** 2) + np.sum(r_wh ** 2))
        g = np.zeros((int(pos.sum()), 4))
        g[:, :2] = 2 * lam * r_xy * s * (1 - s)
        g[:, 2:] = 2 * lam * r_wh
        d[..., 1:5][pos] = g
        logits = raw[..., 5:][pos]
        m = logits.max(axis=1, keepdims=True)
        lse = m[:, 0] + np.log(np.exp(logits - m).sum(axis=1))
        labels = t.cls[pos]
        loss += float(np.sum(lse - logits[np.arange(len(labels)), labels]))
        soft = np.exp(logits - lse[:, None])
        soft[np.arange(len(labels)), labels] -= 1.0
        d[..., 5:][pos] = soft
    return loss, d


def decode(raw: np.ndarray, image_id: str, conf_thr: float = 0.01, nms_thr: float = 0.5,
           max_det: int = 30) -> list[Detection]:
    """Detections for one image from its ``(G, G, 5 + C)`` raw outputs."""
    g = raw.shape[0]
    obj = _sigmoid(raw[..., 0])
    logits = raw[..., 5:]
    e = np.exp(logits - logits.max(axis=-1, keepdims=True))
    probs = e / e.sum(axis=-1, keepdims=True)
    cls = probs.argmax(axis=-1)
    score = obj * probs.max(axis=-1)
    dets = []
    for gy, gx in zip(*np.nonzero(score >= conf_thr)):
        cx = (gx + _sigmoid(raw[gy, gx, 1])) / g
        cy = (gy + _sigmoid(raw[gy, gx, 2])) / g
        w = math.exp(min(raw[gy, gx, 3], 5.0)) / g
        h = math.exp(min(raw[gy, gx, 4], 5.0)) / g
        box = NormBox(cx, cy, w, h).clipped()
        if box.w <= 0 or box.h <= 0:
            continue
        dets.append(Detection(image_id, int(cls[gy, gx]), float(min(1.0, score[gy, gx])), box))
    return nms(dets, nms_thr)[:max_det]


def detect(det: ToyDetector, images: np.ndarray, ids: Sequence[str], batch: int = 64, **kw) -> list[Detection]:
    out = []
    for start in range(0, len(images), batch):
        raw = det.predict_raw(images[start:start + batch])
        for r, image_id in zip(raw, ids[start:start + batch]):
            out.extend(decode(r, image_id, **kw))
    return out


class LinearToy:
    """One linear unit with a BCE loss: convex in its input, for checking
    that a sign step really ascends the loss."""

    def __init__(self, weights: np.ndarray, bias: float = 0.0):
        self.w = np.asarray(weights, dtype=np.float64)
        self.b = float(bias)

    def loss_and_grad(self, images, labels, mode: str = "full") -> LossResult:
        x = np.asarray(images, dtype=np.float64)
        if x.shape == self.w.shape:
            x = x[None]
        y = np.asarray(labels, dtype=np.float64).reshape(len(x))
        z = x.reshape(len(x), -1) @ self.w.ravel() + self.b
        loss = float(np.mean(np.logaddexp(0.0, z) - y * z))
        dz = (_sigmoid(z) - y) / len(x)
        d_x = dz[:, None] * self.w.ravel()[None, :]
        grad = np.concatenate([(dz[:, None] * x.reshape(len(x), -1)).sum(axis=0), [dz.sum()]])
        return LossResult(loss, grad, d_x.reshape(x.shape))


# --------------------------------------------------------------- training


@dataclass(frozen=True)
class SATConfig:
    epsilon: float = 0.03
    apply_prob: float = 0.5
    mode: str = "sign_ascent"
    lo: float = 0.0
    hi: float = 1.0

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")
        if not 0 <= self.apply_prob <= 1:
            raise ValueError("apply_prob must be in [0, 1]")
        if self.mode not in SAT_MODES:
            raise ValueError(f"mode must be one of {SAT_MODES}")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 60
    early_stop_patience: int = 15
    batch_size: int = 8
    side: int = 32
    lr: float = 0.05
    seed: int = 0
    grad_clip: float | None = 10.0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.early_stop_patience > self.epochs:
            raise ValueError("patience cannot exceed epochs")


def sat_perturb(det, img: np.ndarray, gt, cfg: SATConfig) -> np.ndarray:
    """First SAT pass: one signed gradient step of size ``epsilon`` that
    increases the detection loss (hides the objects), clamped to the pixel
    range.  Labels are left untouched.  ``img`` may be a single image with
    its annotation list or a batch with a list of lists."""
    img = np.asarray(img, dtype=np.float64)
    if cfg.epsilon == 0:
        return img.copy()
    single = img.ndim == 2
    batch = img[None] if single else img
    gts = [gt] if single else gt
    mode = "objectness_hide" if cfg.mode == "objectness_hide" else "full"
    g = det.loss_and_grad(batch, gts, mode).input_grad
    out = np.clip(batch + cfg.epsilon * np.sign(g), cfg.lo, cfg.hi)
    return out[0] if single else out


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_map50: float
    sat_batches: int = 0


class TrainingDiverged(RuntimeError):
    def __init__(self, message: str, detector: ToyDetector, history: list[EpochRecord]):
        super().__init__(message)
        self.detector = detector
        self.history = history


@dataclass
class TrainResult:
    detector: ToyDetector
    history: list[EpochRecord]
    best_map50: float
    best_epoch: int
    stopped_epoch: int
    final_params: np.ndarray = field(repr=False, default=None)


def val_map50(det: ToyDetector, images: np.ndarray, gts: Sequence[Sequence[Annotation]], ids=None) -> float:
    ids = ids or [str(i) for i in range(len(images))]
    dets = detect(det, images, ids)
    return mean_ap({i: g for i, g in zip(ids, gts)}, dets, 0.5)


def train(train_set: Sequence[LabeledImage], val_set: Sequence[LabeledImage], det: ToyDetector,
          tcfg: TrainConfig = TrainConfig(), scfg: SATConfig | None = None) -> TrainResult:
    """SGD on the detection loss with optional SAT.

    Each batch is, with probability ``scfg.apply_prob``, first replaced by
    its adversarial version (:func:`sat_perturb` under the current
    weights) and then used for one descent step.  Validation mAP@0.5 is
    measured after every epoch; training stops once it has not improved
    for ``early_stop_patience`` epochs and the best weights are returned.
    """
    if not train_set or not val_set:
        raise ValueError("train and val sets must be non-empty")
    det = det.copy()
    side = det.cfg.side
    x_train = to_gray(train_set, side)
    y_train = [list(img.annotations) for img in train_set]
    x_val = to_gray(val_set, side)
    y_val = [list(img.annotations) for img in val_set]
    val_ids = [img.id for img in val_set]
    rng = np.random.default_rng(tcfg.seed)
    sat_rng = np.random.default_rng([tcfg.seed, 1])
    history: list[EpochRecord] = []
    best, best_epoch, best_params, wait = -1.0, 0, det.params.copy(), 0
    last_good = det.params.copy()
    epoch = 0
    for epoch in range(1, tcfg.epochs + 1):
        order = rng.permutation(len(x_train))
        losses, sat_batches = [], 0
        for start in range(0, len(order), tcfg.batch_size):
            idx = order[start:start + tcfg.batch_size]
            xb = x_train[idx]
            yb = [y_train[i] for i in idx]
            if scfg is not None and sat_rng.random() < scfg.apply_prob:
                xb = sat_perturb(det, xb, yb, scfg)
                sat_batches += 1
            res = det.loss_and_grad(xb, yb)
            grad = res.param_grad
            if tcfg.grad_clip is not None:
                norm = float(np.linalg.norm(grad))
                if norm > tcfg.grad_clip:
                    grad = grad * (tcfg.grad_clip / norm)
            if not math.isfinite(res.loss) or not np.all(np.isfinite(grad)):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}",
                                       ToyDetector(det.cfg, last_good), history)
            last_good = det.params.copy()
            det.params -= tcfg.lr * grad
            if not np.all(np.isfinite(det.params)):
                raise TrainingDiverged(f"non-finite parameters at epoch {epoch}",
                                       ToyDetector(det.cfg, last_good), history)
            losses.append(res.loss)
        score = val_map50(det, x_val, y_val, val_ids)
        history.append(EpochRecord(epoch, float(np.mean(losses)), score, sat_batches))
        if score > best:
            best, best_epoch, best_params, wait = score, epoch, det.params.copy(), 0
        else:
            wait += 1
            if wait >= tcfg.early_stop_patience:
                break
    final = det.params.copy()
    return TrainResult(ToyDetector(det.cfg, best_params), history, best, best_epoch, epoch, final)


def corrupt(det: ToyDetector, images: np.ndarray, gts: Sequence[Sequence[Annotation]], epsilon: float,
            kind: str = "fgsm", seed: int = 0, batch: int = 64) -> np.ndarray:
    """Test-time corruption of size ``epsilon`` per pixel.

    ``fgsm`` takes one signed gradient step on the full detection loss of
    ``det`` (a white-box attack on that model); ``noise`` adds random
    +/-epsilon signs that do not depend on the model.
    """
    images = np.asarray(images, dtype=np.float64)
    if kind == "noise":
        signs = np.random.default_rng(seed).choice([-1.0, 1.0], size=images.shape)
        return np.clip(images + epsilon * signs, 0.0, 1.0)
    if kind != "fgsm":
        raise ValueError(f"unknown corruption {kind!r}")
    cfg = SATConfig(epsilon=epsilon, apply_prob=1.0)
    out = [sat_perturb(det, images[i:i + batch], list(gts[i:i + batch]), cfg)
           for i in range(0, len(images), batch)]
    return np.concatenate(out) if out else images.copy()


def evaluate_detector(det: ToyDetector, images: np.ndarray, gts: Sequence[Sequence[Annotation]],
                      ids: Sequence[str] | None = None) -> EvalReport:
    ids = list(ids) if ids is not None else [str(i) for i in range(len(images))]
    return evaluate({i: list(g) for i, g in zip(ids, gts)}, detect(det, images, ids),
                    class_count=det.cfg.num_classes)


def history_csv(history: Sequence[EpochRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["epoch", "train_loss", "val_map50"])
    for r in history:
        w.writerow([r.epoch, repr(r.train_loss), repr(r.val_map50)])
    return buf.getvalue()


def read_history_csv(text: str) -> list[EpochRecord]:
    rows = csv.DictReader(io.StringIO(text))
    return [EpochRecord(int(r["epoch"]), float(r["train_loss"]), float(r["val_map50"])) for r in rows]


# ------------------------------------------------------------- checkpoints

MAGIC = b"DDTOYCK1"


def save_checkpoint(path, det: ToyDetector, extra: dict | None = None) -> None:
    """Magic, little-endian u32 header length, JSON header, float64 LE params."""
    header = {"config": asdict(det.cfg), "layout": det.layout_descriptor(),
              "count": int(det.params.size), "dtype": "<f8"}
    if extra:
        header["extra"] = extra
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(det.params.astype("<f8").tobytes())


def load_checkpoint(path) -> tuple[ToyDetector, dict]:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:len(MAGIC)] != MAGIC:
        raise ValueError(f"{path}: not a toy detector checkpoint")
    (n,) = struct.unpack("<I", data[len(MAGIC):len(MAGIC) + 4])
    start = len(MAGIC) + 4
    header = json.loads(data[start:start + n])
    cfg_doc = header["config"]
    cfg_doc["channels"] = tuple(cfg_doc["channels"])
    cfg = DetectorConfig(**cfg_doc)
    params = np.frombuffer(data[start + n:], dtype="<f8").astype(np.float64)
    if params.size != header["count"]:
        raise ValueError(f"{path}: truncated parameter block")
    return ToyDetector(cfg, params), header
