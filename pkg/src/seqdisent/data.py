"""Synthetic labeled sequence datasets and their on-disk format.

Two generators, both fully determined by their seed:

* ``gen_shape_motion``: RGB glyphs (static class = glyph and colour template)
  moving along parametric trajectories (dynamic class = motion).
* ``gen_timeseries``: multivariate signals with a per-class offset vector
  (static) and a per-class seasonal pattern (dynamic).
"""

import csv
import io
import json
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, Optional

import numpy as np

FORMAT_MAGIC = b"SQDS"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sHI")

MOTIONS = ("right", "left", "down", "up", "circle_cw", "diag_down_right", "diag_up_left", "circle_ccw")
GLYPHS = ("square", "plus", "cross", "diamond", "frame", "disc")
COLORS = np.array([
    [1.0, 0.2, 0.2],
    [0.2, 1.0, 0.2],
    [0.3, 0.4, 1.0],
    [1.0, 1.0, 0.2],
    [1.0, 0.3, 1.0],
    [0.2, 1.0, 1.0],
], dtype=np.float32)


class DatasetFormatError(ValueError):
    """The file is not a readable dataset container."""


class SpecError(ValueError):
    """A generator spec cannot be realized."""


@dataclass
class ShapeMotionSpec:
    n_static_classes: int = 6
    n_motion_classes: int = 4
    seq_len: int = 8
    frame_size: int = 16
    samples_per_pair: int = 10
    seed: int = 0
    test_fraction: float = 0.2
    jitter: int = 1
    amplitude: Optional[float] = None

    def validate(self):
        if self.n_static_classes < 2 or self.n_static_classes > len(GLYPHS) * len(COLORS):
            raise SpecError(f"n_static_classes must be in [2, {len(GLYPHS) * len(COLORS)}]")
        if self.n_motion_classes < 2 or self.n_motion_classes > len(MOTIONS):
            raise SpecError(f"n_motion_classes must be in [2, {len(MOTIONS)}]")
        if self.seq_len < 4:
            raise SpecError("seq_len must be >= 4")
        if self.frame_size not in (16, 32, 64):
            raise SpecError("frame_size must be 16, 32 or 64")
        if self.samples_per_pair < 1:
            raise SpecError("samples_per_pair must be >= 1")
        if not 0 <= self.test_fraction < 1:
            raise SpecError("test_fraction must be in [0, 1)")
        if self.max_amplitude < 1:
            raise SpecError("frame too small for the glyph and jitter")
        if self.resolved_amplitude > self.max_amplitude:
            raise SpecError(f"amplitude {self.resolved_amplitude} exceeds {self.max_amplitude} for this frame")

    @property
    def glyph_size(self) -> int:
        return 2 * (self.frame_size // 8) + 1

    @property
    def max_amplitude(self) -> float:
        # glyph centre must stay on pixels whose glyph fits fully in frame
        half = self.glyph_size // 2
        return (self.frame_size - 1) / 2 - half - self.jitter - 0.5

    @property
    def resolved_amplitude(self) -> float:
        return math.floor(self.max_amplitude) if self.amplitude is None else self.amplitude


@dataclass
class TimeSeriesSpec:
    n_static_classes: int = 4
    n_motion_classes: int = 3
    seq_len: int = 16
    feature_dim: int = 6
    samples_per_pair: int = 10
    noise_sigma: float = 0.1
    seed: int = 0
    test_fraction: float = 0.2

    def validate(self):
        if self.n_static_classes < 2 or self.n_motion_classes < 2:
            raise SpecError("need at least two static and two dynamic classes")
        if self.seq_len < 4:
            raise SpecError("seq_len must be >= 4")
        if self.n_motion_classes > self.seq_len // 2 - 1:
            raise SpecError("seq_len too short for that many distinct seasonal frequencies")
        if self.feature_dim < 1 or self.samples_per_pair < 1 or self.noise_sigma < 0:
            raise SpecError("feature_dim and samples_per_pair must be positive, noise_sigma nonnegative")
        if not 0 <= self.test_fraction < 1:
            raise SpecError("test_fraction must be in [0, 1)")


@dataclass
class LabeledDataset:
    data: np.ndarray
    static_labels: np.ndarray
    dynamic_labels: np.ndarray
    is_test: np.ndarray
    spec: Dict = field(default_factory=dict)
    factors: Dict[str, np.ndarray] = field(default_factory=dict)

    def __len__(self):
        return len(self.data)

    @property
    def seq_len(self) -> int:
        return self.data.shape[1]

    @property
    def frame_shape(self):
        return tuple(self.data.shape[2:])

    @property
    def n_static_classes(self) -> int:
        return int(self.spec.get("n_static_classes", self.static_labels.max() + 1))

    @property
    def n_dynamic_classes(self) -> int:
        return int(self.spec.get("n_motion_classes", self.dynamic_labels.max() + 1))

    def subset(self, mask) -> "LabeledDataset":
        mask = np.asarray(mask)
        return LabeledDataset(self.data[mask], self.static_labels[mask], self.dynamic_labels[mask],
                              self.is_test[mask], dict(self.spec), {k: v[mask] for k, v in self.factors.items()})

    def train(self) -> "LabeledDataset":
        return self.subset(~self.is_test)

    def test(self) -> "LabeledDataset":
        return self.subset(self.is_test)


def glyph_mask(name: str, size: int) -> np.ndarray:
    r = size // 2
    yy, xx = np.mgrid[-r:r + 1, -r:r + 1]
    if name == "square":
        m = np.ones_like(xx, dtype=bool)
    elif name == "plus":
        m = (np.abs(xx) <= max(r // 3, 0)) | (np.abs(yy) <= max(r // 3, 0))
    elif name == "cross":
        m = (np.abs(xx - yy) <= r // 4) | (np.abs(xx + yy) <= r // 4)
    elif name == "diamond":
        m = np.abs(xx) + np.abs(yy) <= r
    elif name == "frame":
        m = np.maximum(np.abs(xx), np.abs(yy)) >= r - max(r // 3, 0)
    elif name == "disc":
        m = xx ** 2 + yy ** 2 <= r * r + r
    else:
        raise SpecError(f"unknown glyph {name!r}")
    return m


def static_template(k: int):
    """(glyph name, RGB colour) for static class ``k``; every class differs in glyph or colour."""
    glyph = GLYPHS[k % len(GLYPHS)]
    color = COLORS[(k + k // len(GLYPHS)) % len(COLORS)]
    return glyph, color


def trajectory(motion: int, seq_len: int, frame_size: int, amplitude: float) -> np.ndarray:
    """Closed-form glyph centre ``(T, 2)`` as (row, col) for a motion class, before jitter."""
    c = (frame_size - 1) / 2
    t = np.arange(seq_len, dtype=np.float64)
    lin = -amplitude + 2 * amplitude * t / (seq_len - 1)
    ang = 2 * np.pi * t / seq_len
    zero = np.zeros_like(t)
    name = MOTIONS[motion]
    if name == "right":
        dy, dx = zero, lin
    elif name == "left":
        dy, dx = zero, -lin
    elif name == "down":
        dy, dx = lin, zero
    elif name == "up":
        dy, dx = -lin, zero
    elif name == "circle_cw":
        dy, dx = amplitude * np.sin(ang), amplitude * np.cos(ang)
    elif name == "diag_down_right":
        dy, dx = lin, lin
    elif name == "diag_up_left":
        dy, dx = -lin, -lin
    else:
        dy, dx = -amplitude * np.sin(ang), amplitude * np.cos(ang)
    return np.stack([c + dy, c + dx], axis=1)


def render_frame(glyph: np.ndarray, color: np.ndarray, center, frame_size: int) -> np.ndarray:
    frame = np.zeros((3, frame_size, frame_size), dtype=np.float32)
    r = glyph.shape[0] // 2
    cy, cx = (int(np.floor(v + 0.5)) for v in center)
    ys, xs = np.nonzero(glyph)
    frame[:, ys + cy - r, xs + cx - r] = color[:, None]
    return frame


def _split(n_per_pair: int, test_fraction: float) -> int:
    n_test = int(round(n_per_pair * test_fraction))
    return min(n_test, n_per_pair - 1)


def gen_shape_motion(spec: ShapeMotionSpec) -> LabeledDataset:
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    K, M, T, F = spec.n_static_classes, spec.n_motion_classes, spec.seq_len, spec.frame_size
    amp = spec.resolved_amplitude
    n_test = _split(spec.samples_per_pair, spec.test_fraction)
    frames, s_lab, d_lab, test, offsets = [], [], [], [], []
    for k in range(K):
        name, color = static_template(k)
        mask = glyph_mask(name, spec.glyph_size)
        for m in range(M):
            base = trajectory(m, T, F, amp)
            for j in range(spec.samples_per_pair):
                off = rng.integers(-spec.jitter, spec.jitter + 1, size=2)
                centers = base + off
                frames.append(np.stack([render_frame(mask, color, c, F) for c in centers]))
                s_lab.append(k)
                d_lab.append(m)
                test.append(j >= spec.samples_per_pair - n_test)
                offsets.append(off)
    order = rng.permutation(len(frames))
    pick = lambda v, dtype: np.asarray(v, dtype=dtype)[order]  # noqa: E731
    return LabeledDataset(
        data=np.stack(frames).astype(np.float32)[order],
        static_labels=pick(s_lab, np.int64),
        dynamic_labels=pick(d_lab, np.int64),
        is_test=pick(test, bool),
        spec={"kind": "shape_motion", **asdict(spec), "amplitude": amp},
        factors={"offset": pick(offsets, np.int64)},
    )


def gen_timeseries(spec: TimeSeriesSpec) -> LabeledDataset:
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    K, M, T, F = spec.n_static_classes, spec.n_motion_classes, spec.seq_len, spec.feature_dim
    class_offsets = rng.normal(0.0, 2.0, size=(K, F))
    loadings = rng.normal(0.0, 1.0, size=(M, F))
    t = np.arange(T)
    n_test = _split(spec.samples_per_pair, spec.test_fraction)
    seqs, s_lab, d_lab, test, phases = [], [], [], [], []
    for k in range(K):
        for m in range(M):
            for j in range(spec.samples_per_pair):
                phase = rng.uniform(0, 2 * np.pi)
                # integer frequency: the pattern sums to zero over the window
                season = np.sin(2 * np.pi * (m + 1) * t / T + phase)
                clean = class_offsets[k] + season[:, None] * loadings[m]
                seqs.append(clean + spec.noise_sigma * rng.normal(size=(T, F)))
                s_lab.append(k)
                d_lab.append(m)
                test.append(j >= spec.samples_per_pair - n_test)
                phases.append(phase)
    order = rng.permutation(len(seqs))
    pick = lambda v, dtype: np.asarray(v, dtype=dtype)[order]  # noqa: E731
    return LabeledDataset(
        data=np.stack(seqs).astype(np.float32)[order],
        static_labels=pick(s_lab, np.int64),
        dynamic_labels=pick(d_lab, np.int64),
        is_test=pick(test, bool),
        spec={"kind": "timeseries", **asdict(spec)},
        factors={"phase": pick(phases, np.float64), "class_offsets": np.repeat(class_offsets[None], len(seqs), 0)},
    )


def _arrays(ds: LabeledDataset) -> Dict[str, np.ndarray]:
    out = {"data": ds.data, "static_labels": ds.static_labels, "dynamic_labels": ds.dynamic_labels,
           "is_test": ds.is_test}
    out.update({f"factor:{k}": v for k, v in sorted(ds.factors.items())})
    return out


def dumps_dataset(ds: LabeledDataset) -> bytes:
    arrays = {k: np.ascontiguousarray(v) for k, v in _arrays(ds).items()}
    for k, v in arrays.items():
        if v.dtype.byteorder == ">":
            arrays[k] = v.astype(v.dtype.newbyteorder("<"))
    header = {
        "spec": ds.spec,
        "arrays": [{"name": k, "dtype": v.dtype.str, "shape": list(v.shape)} for k, v in arrays.items()],
    }
    head = json.dumps(header, sort_keys=True).encode()
    buf = io.BytesIO()
    buf.write(_HEADER.pack(FORMAT_MAGIC, FORMAT_VERSION, len(head)))
    buf.write(head)
    for v in arrays.values():
        buf.write(v.tobytes(order="C"))
    return buf.getvalue()


def loads_dataset(raw: bytes) -> LabeledDataset:
    if len(raw) < _HEADER.size:
        raise DatasetFormatError("file too short to be a dataset container")
    magic, version, head_len = _HEADER.unpack_from(raw)
    if magic != FORMAT_MAGIC:
        raise DatasetFormatError("not a dataset container (bad magic)")
    if version != FORMAT_VERSION:
        raise DatasetFormatError(f"unsupported dataset format version {version} (expected {FORMAT_VERSION})")
    pos = _HEADER.size
    try:
        header = json.loads(raw[pos:pos + head_len].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DatasetFormatError("corrupt dataset header") from exc
    pos += head_len
    arrays = {}
    for entry in header["arrays"]:
        dtype = np.dtype(entry["dtype"])
        count = int(np.prod(entry["shape"], dtype=np.int64))
        nbytes = count * dtype.itemsize
        if pos + nbytes > len(raw):
            raise DatasetFormatError(f"truncated payload in array {entry['name']!r}")
        arrays[entry["name"]] = np.frombuffer(raw, dtype, count, pos).reshape(entry["shape"]).copy()
        pos += nbytes
    if pos != len(raw):
        raise DatasetFormatError("trailing bytes after payload")
    factors = {k.split(":", 1)[1]: v for k, v in arrays.items() if k.startswith("factor:")}
    return LabeledDataset(arrays["data"], arrays["static_labels"], arrays["dynamic_labels"], arrays["is_test"],
                          header["spec"], factors)


def save_dataset(ds: LabeledDataset, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(dumps_dataset(ds))
    return path


def load_dataset(path) -> LabeledDataset:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    return loads_dataset(path.read_bytes())


def export_timeseries_csv(ds: LabeledDataset, path) -> Path:
    """One row per (sequence, step): index, split, labels, step, features."""
    if ds.data.ndim != 3:
        raise ValueError("CSV export is only defined for time-series datasets")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    n, T, F = ds.data.shape
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sequence", "split", "static_label", "dynamic_label", "step"] + [f"x{i}" for i in range(F)])
        for i in range(n):
            split = "test" if ds.is_test[i] else "train"
            for t in range(T):
                w.writerow([i, split, int(ds.static_labels[i]), int(ds.dynamic_labels[i]), t]
                           + [repr(float(v)) for v in ds.data[i, t]])
    return path


PRESETS = {
    "shapes-tiny": ShapeMotionSpec(samples_per_pair=40),
    "sprites-like": ShapeMotionSpec(n_static_classes=6, n_motion_classes=8, seq_len=8, frame_size=32,
                                    samples_per_pair=10),
    "mug-like": ShapeMotionSpec(n_static_classes=12, n_motion_classes=6, seq_len=15, frame_size=32,
                                samples_per_pair=5),
    "timeseries": TimeSeriesSpec(),
}


def generate(spec) -> LabeledDataset:
    if isinstance(spec, ShapeMotionSpec):
        return gen_shape_motion(spec)
    if isinstance(spec, TimeSeriesSpec):
        return gen_timeseries(spec)
    raise TypeError(f"unsupported spec type {type(spec).__name__}")
