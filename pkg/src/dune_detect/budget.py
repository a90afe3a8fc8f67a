"""Width-multiplier pruning arithmetic, params/FLOPs/size estimates and a
latency micro-benchmark.

Channel counts in a :class:`ModelSpec` are *base* counts; the effective
count is ``scale_channels(base, width_multiple, max_channels)``.  Two
counts are literal and never scaled: the ``in_ch`` of the first layer
(image channels) and the ``out_ch`` of a ``detect_head`` (prediction
channels).
"""
from __future__ import annotations

import json
import math
import os
import platform
import statistics
import threading
import time
from dataclasses import asdict, dataclass, field, replace
from importlib import resources
from typing import Callable, Sequence

import numpy as np

LAYER_KINDS = ("conv", "depthwise_conv", "linear", "detect_head")


class BudgetError(ValueError):
    pass


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    in_ch: int
    out_ch: int
    kernel: int = 1
    stride: int = 1
    repeats: int = 1

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise BudgetError(f"unknown layer kind {self.kind!r}")
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise BudgetError(f"kernel must be odd and >= 1, got {self.kernel}")
        if self.stride < 1 or self.repeats < 1 or self.in_ch < 1 or self.out_ch < 1:
            raise BudgetError(f"bad layer {self}")
        if self.kind == "depthwise_conv" and self.in_ch != self.out_ch:
            raise BudgetError("depthwise_conv needs in_ch == out_ch")


@dataclass(frozen=True)
class ModelSpec:
    layers: tuple[LayerSpec, ...]
    width_multiple: float = 1.0
    depth_multiple: float = 1.0
    max_channels: int = 1024
    input_side: int = 640
    name: str = ""

    def __post_init__(self):
        if not 0 < self.width_multiple <= 1:
            raise BudgetError(f"width_multiple {self.width_multiple} outside (0, 1]")
        if not 0 < self.depth_multiple <= 1:
            raise BudgetError(f"depth_multiple {self.depth_multiple} outside (0, 1]")
        if self.max_channels < 8:
            raise BudgetError("max_channels must be >= 8")
        if self.input_side < 1:
            raise BudgetError("input_side must be positive")
        object.__setattr__(self, "layers", tuple(self.layers))

    @classmethod
    def from_dict(cls, doc: dict) -> "ModelSpec":
        try:
            layers = tuple(LayerSpec(**layer) for layer in doc["layers"])
            return cls(layers, float(doc.get("width_multiple", 1.0)), float(doc.get("depth_multiple", 1.0)),
                       int(doc.get("max_channels", 1024)), int(doc.get("input_side", 640)),
                       str(doc.get("name", "")))
        except (KeyError, TypeError) as exc:
            raise BudgetError(f"malformed model spec: {exc}") from None

    def to_dict(self) -> dict:
        return {"name": self.name, "layers": [asdict(layer) for layer in self.layers],
                "width_multiple": self.width_multiple, "depth_multiple": self.depth_multiple,
                "max_channels": self.max_channels, "input_side": self.input_side}


def load_spec(path: str | os.PathLike) -> ModelSpec:
    with open(path) as fh:
        return ModelSpec.from_dict(json.load(fh))


def reference_spec(width_multiple: float = 0.50) -> ModelSpec:
    """Desk-scale surrogate of the pruned nano detector.

    Not the real layer graph: layer widths were fitted so the parameter
    count lands near 2.56 M at width 0.50 and 2.17 M at width 0.33.
    """
    doc = json.loads(resources.files("dune_detect").joinpath("data/reference_spec.json").read_text())
    return replace(ModelSpec.from_dict(doc), width_multiple=width_multiple)


def scale_channels(base_ch: int, width_multiple: float, max_channels: int = 1024) -> int:
    if base_ch < 1:
        raise BudgetError("base_ch must be >= 1")
    # tolerance keeps exact products such as 800 * 0.33 from rounding up a step
    scaled = 8 * math.ceil(base_ch * width_multiple / 8 - 1e-9)
    return max(8, min(max_channels, scaled))


def scaled_repeats(repeats: int, depth_multiple: float) -> int:
    return max(1, round(repeats * depth_multiple))


@dataclass(frozen=True)
class ResolvedLayer:
    kind: str
    in_ch: int
    out_ch: int
    kernel: int
    stride: int
    repeats: int


def resolve(spec: ModelSpec) -> list[ResolvedLayer]:
    """Effective channel and repeat counts for every layer."""
    out = []
    for i, layer in enumerate(spec.layers):
        def sc(c):
            return scale_channels(c, spec.width_multiple, spec.max_channels)
        cin = layer.in_ch if i == 0 else sc(layer.in_ch)
        cout = layer.out_ch if layer.kind == "detect_head" else sc(layer.out_ch)
        if layer.kind == "depthwise_conv":
            cout = cin
        out.append(ResolvedLayer(layer.kind, cin, cout, layer.kernel, layer.stride,
                                 scaled_repeats(layer.repeats, spec.depth_multiple)))
    return out


def _weights(kind: str, cin: int, cout: int, k: int) -> int:
    if kind == "depthwise_conv":
        return cin * k * k
    if kind == "linear":
        return cin * cout
    return cin * cout * k * k


def _instances(layer: ResolvedLayer):
    """(in_ch, out_ch, stride) per repeat: the first repeat carries the
    declared stride and channel change, later repeats are out->out, stride 1."""
    yield layer.in_ch, layer.out_ch, layer.stride
    for _ in range(layer.repeats - 1):
        yield layer.out_ch, layer.out_ch, 1


def count_params(spec: ModelSpec) -> int:
    total = 0
    for layer in resolve(spec):
        for cin, cout, _ in _instances(layer):
            total += _weights(layer.kind, cin, cout, layer.kernel) + cout
    return total


def count_macs(spec: ModelSpec) -> int:
    """Multiply-accumulates for one forward pass at ``input_side``.

    Spatial size follows ``floor((H + 2*(k//2) - k) / s) + 1``; a linear
    layer pools to 1x1 first.  A stride larger than the incoming side is
    an underflow.
    """
    side = spec.input_side
    total = 0
    for i, layer in enumerate(resolve(spec)):
        for cin, cout, stride in _instances(layer):
            if layer.kind == "linear":
                side = 1
                total += _weights("linear", cin, cout, 1)
                continue
            if stride > side:
                raise BudgetError(f"layer {i} ({layer.kind}) stride {stride} collapses spatial size {side}")
            pad = layer.kernel // 2
            side = (side + 2 * pad - layer.kernel) // stride + 1
            total += _weights(layer.kind, cin, cout, layer.kernel) * side * side
    return total


def count_flops(spec: ModelSpec) -> int:
    return 2 * count_macs(spec)


def prune(spec: ModelSpec, new_width: float) -> ModelSpec:
    if not 0 < new_width:
        raise BudgetError("new width must be positive")
    if new_width > spec.width_multiple:
        raise BudgetError(f"prune cannot widen: {new_width} > {spec.width_multiple}")
    return replace(spec, width_multiple=new_width)


def estimate_size_mb(params: int, bytes_per_param: float = 2.0, overhead_mb: float = 0.35) -> float:
    if params < 0:
        raise BudgetError("params must be >= 0")
    return params * bytes_per_param / 2**20 + overhead_mb


@dataclass
class BudgetReport:
    params: int
    macs: int
    flops: int
    gflops: float
    size_mb: float
    latency_ms: float | None = None
    width_multiple: float = 1.0
    depth_multiple: float = 1.0
    max_channels: int = 1024
    input_side: int = 640
    bytes_per_param: float = 2.0
    overhead_mb: float = 0.35

    def to_dict(self) -> dict:
        return asdict(self)


def budget(spec: ModelSpec, bytes_per_param: float = 2.0, overhead_mb: float = 0.35) -> BudgetReport:
    params = count_params(spec)
    macs = count_macs(spec)
    return BudgetReport(params, macs, 2 * macs, 2 * macs / 1e9,
                        estimate_size_mb(params, bytes_per_param, overhead_mb),
                        None, spec.width_multiple, spec.depth_multiple, spec.max_channels, spec.input_side,
                        bytes_per_param, overhead_mb)


# ---------------------------------------------------------------- latency


class BenchmarkError(RuntimeError):
    def __init__(self, message: str, samples: list[float]):
        super().__init__(message)
        self.samples = samples


@dataclass
class LatencyStats:
    mean: float
    median: float
    p95: float
    samples: list[float]
    warmup: int
    iters: int
    conditions: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


_bench_lock = threading.Lock()


def bench_conditions() -> dict:
    return {"python": platform.python_version(), "machine": platform.machine(),
            "system": platform.system(), "cpu_count": os.cpu_count(), "numpy": np.__version__,
            "clock": "time.perf_counter_ns", "batch": 1}


def bench_latency(f: Callable[[], object], warmup: int = 3, iters: int = 50) -> LatencyStats:
    """Time ``f`` on a dedicated thread; statistics are in milliseconds.

    Only one benchmark may run per process at a time.
    """
    if iters < 10:
        raise ValueError("iters must be >= 10")
    if warmup < 0:
        raise ValueError("warmup must be >= 0")
    if not _bench_lock.acquire(blocking=False):
        raise RuntimeError("another benchmark is already running in this process")
    try:
        samples: list[float] = []
        failure: list[BaseException] = []

        def run():
            try:
                for _ in range(warmup):
                    f()
                for _ in range(iters):
                    t0 = time.perf_counter_ns()
                    f()
                    samples.append((time.perf_counter_ns() - t0) / 1e6)
            except BaseException as exc:  # reported to the caller below
                failure.append(exc)

        worker = threading.Thread(target=run, name="bench-latency")
        worker.start()
        worker.join()
    finally:
        _bench_lock.release()
    if failure:
        raise BenchmarkError(f"benchmarked callable failed after {len(samples)} samples: {failure[0]!r}",
                             samples) from failure[0]
    return LatencyStats(statistics.fmean(samples), statistics.median(samples),
                        float(np.percentile(samples, 95)), samples, warmup, iters, bench_conditions())


def spec_forward(spec: ModelSpec, seed: int = 0, dtype=np.float32) -> Callable[[], np.ndarray]:
    """A numpy forward pass over the resolved layers with random weights,
    usable as a latency stand-in.  Layers must chain channel-wise."""
    rng = np.random.default_rng(seed)
    layers = resolve(spec)
    plan = []
    ch = layers[0].in_ch if layers else 3
    for layer in layers:
        for cin, cout, stride in _instances(layer):
            if cin != ch:
                raise BudgetError(f"layer expects {cin} channels but receives {ch}")
            if layer.kind == "depthwise_conv":
                w = rng.standard_normal((cin, layer.kernel, layer.kernel)).astype(dtype)
            elif layer.kind == "linear":
                w = rng.standard_normal((cout, cin)).astype(dtype)
            else:
                w = rng.standard_normal((cout, cin * layer.kernel * layer.kernel)).astype(dtype)
            plan.append((layer.kind, w, layer.kernel, stride))
            ch = cout
    x0 = rng.standard_normal((layers[0].in_ch if layers else 3, spec.input_side, spec.input_side)).astype(dtype)

    def run():
        x = x0
        for kind, w, k, s in plan:
            if kind == "linear":
                x = w @ x.reshape(x.shape[0], -1).mean(axis=1)
                x = x[:, None, None]
                continue
            p = k // 2
            xp = np.pad(x, ((0, 0), (p, p), (p, p))) if p else x
            win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(1, 2))[:, ::s, ::s]
            if kind == "depthwise_conv":
                x = np.einsum("chwij,cij->chw", win, w)
            else:
                c, ho, wo = win.shape[:3]
                cols = win.transpose(1, 2, 0, 3, 4).reshape(ho * wo, -1)
                x = (cols @ w.T).T.reshape(-1, ho, wo)
            if kind != "detect_head":
                x = np.maximum(x, 0)
        return x

    return run
