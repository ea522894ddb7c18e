"""Synthetic cardiac-like phantoms, raw volume I/O and slice windowing.

On-disk format for a volume named ``base``:

* ``base.vol``  raw little-endian float32 intensities, ``S*H*W`` values, C order
* ``base.lbl``  raw uint8 labels, same layout
* ``base.json`` ``{"shape": [S, H, W], "dtype": "f32", "spacing": [z, y, x],
  "classes": K, "version": 1}``

A label-only volume (e.g. a prediction) has ``"dtype": "u8"`` and no ``.vol``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import List, Tuple

import numpy as np

__all__ = [
    "DataError",
    "VolumePair",
    "SliceBatch",
    "PhantomGeometry",
    "generate_phantom",
    "phantom_geometry",
    "geometry_for_seed",
    "normalize",
    "slice_batches",
    "window_starts",
    "slice_assignment",
    "save_volume",
    "load_volume",
    "save_labels",
    "load_labels",
    "FORMAT_VERSION",
]

FORMAT_VERSION = 1
_F32 = np.dtype("<f4")
_U8 = np.dtype("u1")

# label ids used by the phantom
MYOCARDIUM, TUBE, CAVITY = 1, 2, 3


class DataError(ValueError):
    """Malformed volumes, headers or payloads."""


@dataclass
class VolumePair:
    intensities: np.ndarray  # (S, H, W) float32
    labels: np.ndarray  # (S, H, W) uint8
    spacing: Tuple[float, float, float] = (1.0, 1.0, 1.0)
    num_classes: int = 4

    def __post_init__(self):
        if self.intensities.shape != self.labels.shape:
            raise DataError(f"intensity {self.intensities.shape} and label {self.labels.shape} shapes differ")
        if self.intensities.ndim != 3:
            raise DataError(f"volumes must be (S, H, W), got {self.intensities.shape}")
        if self.labels.size and int(self.labels.max()) >= self.num_classes:
            raise DataError(f"label {int(self.labels.max())} >= num_classes {self.num_classes}")

    @property
    def num_slices(self) -> int:
        return self.intensities.shape[0]

    @property
    def shape(self) -> Tuple[int, int, int]:
        return tuple(self.intensities.shape)


@dataclass
class SliceBatch:
    images: np.ndarray  # (B, 1, H, W)
    labels: np.ndarray  # (B, H, W)
    start: int

    @property
    def size(self) -> int:
        return self.images.shape[0]


@dataclass(frozen=True)
class PhantomGeometry:
    """Parameters of one phantom, enough to re-derive every label voxel."""

    center: Tuple[float, float, float]
    outer: Tuple[float, float, float]  # ellipsoid semi-axes (z, y, x)
    thickness: float
    tube_z: Tuple[float, float]
    tube_angle: Tuple[float, float]
    tube_offset: float
    tube_radius: float
    blobs: Tuple[Tuple[float, float, float, float], ...]  # (z, y, x, radius)

    @property
    def inner(self) -> Tuple[float, float, float]:
        return tuple(max(a - self.thickness * (0.6 if k == 0 else 1.0), 1.0) for k, a in enumerate(self.outer))

    def tube_center(self, z: float) -> Tuple[float, float]:
        """In-plane centre ``(y, x)`` of the tube on slice ``z``."""
        z0, z1 = self.tube_z
        t = (z - z0) / (z1 - z0)
        theta = self.tube_angle[0] + t * (self.tube_angle[1] - self.tube_angle[0])
        cz, cy, cx = self.center
        # ellipse cross-section of the outer shell at this z, pushed outward
        rz, ry, rx = self.outer
        scale = math.sqrt(max(1.0 - ((z - cz) / rz) ** 2, 0.0))
        ry_z, rx_z = ry * scale + self.tube_offset, rx * scale + self.tube_offset
        return cy + ry_z * math.sin(theta), cx + rx_z * math.cos(theta)

    def tube_slices(self) -> range:
        z0, z1 = self.tube_z
        return range(int(math.ceil(z0)), int(math.floor(z1)) + 1)


def phantom_geometry(rng: np.random.Generator, S: int, H: int, W: int) -> PhantomGeometry:
    center = (
        (S - 1) / 2 + rng.uniform(-0.05, 0.05) * S,
        (H - 1) / 2 + rng.uniform(-0.05, 0.05) * H,
        (W - 1) / 2 + rng.uniform(-0.05, 0.05) * W,
    )
    outer = (
        rng.uniform(0.40, 0.48) * S,
        rng.uniform(0.24, 0.30) * H,
        rng.uniform(0.24, 0.30) * W,
    )
    thickness = rng.uniform(0.06, 0.08) * min(H, W)
    span = rng.uniform(0.7, 0.85) * (S - 1)
    z0 = rng.uniform(0, (S - 1) - span)
    a0 = rng.uniform(0, 2 * math.pi)
    turn = rng.uniform(0.6, 1.2) * rng.choice([-1, 1])
    # the tube and its clearance shrink on small grids, never below one voxel
    scale = min(max(min(H, W) / 64, 0.5), 1.0)
    tube_radius = max(rng.uniform(1.5, 2.0) * scale, 1.0)
    geom = PhantomGeometry(center, outer, thickness, (z0, z0 + span), (a0, a0 + turn),
                           tube_offset=tube_radius + 1.5 * scale, tube_radius=tube_radius, blobs=())
    # distractor blobs in the corners, clear of the heart and tube
    blobs = []
    corners = [(0.15, 0.15), (0.15, 0.85), (0.85, 0.15), (0.85, 0.85), (0.5, 0.06), (0.5, 0.94), (0.06, 0.5), (0.94, 0.5)]
    order = rng.permutation(len(corners))
    count = int(rng.integers(3, 7))
    for idx in order:
        if len(blobs) == count:
            break
        fy, fx = corners[idx]
        r = rng.uniform(0.04, 0.06) * min(H, W)
        by = fy * (H - 1) + rng.uniform(-0.03, 0.03) * H
        bx = fx * (W - 1) + rng.uniform(-0.03, 0.03) * W
        # skip positions that would touch the shell or tube
        reach = geom.tube_offset + tube_radius + r + scale
        ny, nx = (by - center[1]) / (outer[1] + reach), (bx - center[2]) / (outer[2] + reach)
        if ny * ny + nx * nx <= 1.0:
            continue
        bz = rng.uniform(0.2, 0.8) * (S - 1)
        blobs.append((bz, by, bx, r))
    if len(blobs) < 3:
        raise DataError(f"volume {H}x{W} too small to place distractor blobs")
    return PhantomGeometry(center, outer, thickness, geom.tube_z, geom.tube_angle,
                           geom.tube_offset, tube_radius, tuple(blobs))


def _labels_from_geometry(geom: PhantomGeometry, S: int, H: int, W: int, num_classes: int) -> np.ndarray:
    z, y, x = np.meshgrid(np.arange(S), np.arange(H), np.arange(W), indexing="ij")
    cz, cy, cx = geom.center
    oz, oy, ox = geom.outer
    iz, iy, ix = geom.inner
    outer = ((z - cz) / oz) ** 2 + ((y - cy) / oy) ** 2 + ((x - cx) / ox) ** 2 <= 1.0
    inner = ((z - cz) / iz) ** 2 + ((y - cy) / iy) ** 2 + ((x - cx) / ix) ** 2 <= 1.0
    labels = np.zeros((S, H, W), dtype=np.uint8)
    labels[outer] = MYOCARDIUM
    if num_classes >= 4:
        labels[inner] = CAVITY
        # additional classes split the cavity into slabs along x
        extra = num_classes - 3
        if extra > 1:
            edges = np.linspace(cx - ix, cx + ix, extra + 1)
            slab = np.clip(np.searchsorted(edges, x, side="right") - 1, 0, extra - 1)
            labels[inner] = (CAVITY + slab[inner]).astype(np.uint8)
    else:
        labels[inner] = 0
    for s in geom.tube_slices():
        ty, tx = geom.tube_center(s)
        disk = (y[s] - ty) ** 2 + (x[s] - tx) ** 2 <= geom.tube_radius ** 2
        labels[s][disk] = TUBE
    return labels


def generate_phantom(seed: int, S: int = 16, H: int = 64, W: int = 64, num_classes: int = 4,
                     spacing=(1.0, 1.0, 1.0), noise: float = 0.05) -> VolumePair:
    """Deterministic synthetic heart-like volume.

    Contains a myocardium-like ellipsoidal shell around a cavity, a thin tube
    (radius 1.5-2 voxels) winding along the outside of the shell through most
    of the z-extent, 3-6 background blobs as bright as the shell, and Gaussian
    noise with ``sigma = noise`` of the dynamic range.
    """
    if num_classes < 3:
        raise DataError(f"phantom needs num_classes >= 3, got {num_classes}")
    if S < 3 or H < 16 or W < 16:
        raise DataError(f"degenerate phantom size {(S, H, W)}")
    rng = np.random.default_rng(seed)
    geom = phantom_geometry(rng, S, H, W)
    labels = _labels_from_geometry(geom, S, H, W, num_classes)

    level = {0: 0.10, MYOCARDIUM: 0.70, TUBE: 0.95}
    vol = np.full((S, H, W), level[0], dtype=np.float64)
    vol[labels == MYOCARDIUM] = level[MYOCARDIUM]
    vol[labels == TUBE] = level[TUBE]
    for c in range(CAVITY, num_classes):
        vol[labels == c] = 0.40 + 0.05 * (c - CAVITY)
    z, y, x = np.meshgrid(np.arange(S), np.arange(H), np.arange(W), indexing="ij")
    for bz, by, bx, r in geom.blobs:
        blob = ((z - bz) / (1.5 * r)) ** 2 + ((y - by) / r) ** 2 + ((x - bx) / r) ** 2 <= 1.0
        vol[blob & (labels == 0)] = level[MYOCARDIUM] + rng.uniform(-0.05, 0.05)
    vol += rng.normal(0.0, noise, size=vol.shape)
    return VolumePair(normalize(vol).astype(np.float32), labels, tuple(float(s) for s in spacing), num_classes)


def geometry_for_seed(seed: int, S: int = 16, H: int = 64, W: int = 64) -> PhantomGeometry:
    """The geometry ``generate_phantom`` uses for the same seed and size."""
    return phantom_geometry(np.random.default_rng(seed), S, H, W)


def normalize(volume: np.ndarray) -> np.ndarray:
    """Per-volume min-max scaling to ``[0, 1]``; a constant volume maps to zeros."""
    volume = np.asarray(volume)
    if not np.isfinite(volume).all():
        raise DataError("cannot normalize a volume with non-finite values")
    lo, hi = volume.min(), volume.max()
    if hi == lo:
        return np.zeros_like(volume)
    return (volume - lo) / (hi - lo)


def window_starts(S: int, B: int, mode: str) -> List[int]:
    if B < 1:
        raise DataError(f"window size must be >= 1, got {B}")
    if S < B:
        raise DataError(f"volume has {S} slices, fewer than the window size {B}")
    if mode == "train":
        return list(range(0, S - B + 1, B))
    if mode == "eval":
        stride = max(B - 2, 1)
        starts = list(range(0, S - B + 1, stride))
        if starts[-1] + B < S:
            starts.append(S - B)
        return starts
    raise ValueError(f"unknown slicing mode {mode!r}")


def slice_assignment(S: int, B: int, starts: List[int]) -> List[Tuple[int, int]]:
    """For each slice, the ``(window index, offset)`` whose prediction it takes.

    A slice takes the first window where it is interior. Slices that are never
    interior (the first and last of the volume) take the nearest window that
    contains them.
    """
    out = []
    for s in range(S):
        pick = None
        for w, st in enumerate(starts):
            if st < s < st + B - 1:
                pick = (w, s - st)
                break
        if pick is None:
            containing = [(w, st) for w, st in enumerate(starts) if st <= s < st + B]
            w, st = min(containing, key=lambda ws: abs((ws[1] + (B - 1) / 2) - s))
            pick = (w, s - st)
        out.append(pick)
    return out


def slice_batches(pair: VolumePair, B: int, mode: str = "train") -> List[SliceBatch]:
    """Consecutive-slice windows of ``pair`` in increasing start order."""
    batches = []
    for st in window_starts(pair.num_slices, B, mode):
        img = pair.intensities[st:st + B][:, None].astype(np.float32)
        batches.append(SliceBatch(img, pair.labels[st:st + B].copy(), st))
    return batches


def _header(path: Path) -> dict:
    try:
        meta = json.loads(path.with_suffix(".json").read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise DataError(f"missing header {path.with_suffix('.json')}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"corrupt header {path.with_suffix('.json')}: {exc}") from exc
    try:
        shape = tuple(int(v) for v in meta["shape"])
        spacing = tuple(float(v) for v in meta["spacing"])
        classes = int(meta["classes"])
        version = int(meta["version"])
        dtype = meta["dtype"]
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"corrupt header {path.with_suffix('.json')}: {exc}") from exc
    if len(shape) != 3 or len(spacing) != 3 or min(shape) < 1:
        raise DataError(f"corrupt header: shape {shape}, spacing {spacing}")
    if version != FORMAT_VERSION:
        raise DataError(f"unsupported format version {version}")
    if dtype not in ("f32", "u8"):
        raise DataError(f"unsupported dtype {dtype!r}")
    return {"shape": shape, "spacing": spacing, "classes": classes, "dtype": dtype}


def _read_raw(path: Path, dtype: np.dtype, shape) -> np.ndarray:
    try:
        payload = path.read_bytes()
    except FileNotFoundError as exc:
        raise DataError(f"missing payload {path}") from exc
    expected = int(np.prod(shape)) * dtype.itemsize
    if len(payload) != expected:
        raise DataError(f"{path}: payload has {len(payload)} bytes, header implies {expected}")
    return np.frombuffer(payload, dtype=dtype).reshape(shape).copy()


def _base(path) -> Path:
    path = Path(path)
    return path.with_suffix("") if path.suffix in (".vol", ".lbl", ".json") else path


def _write_header(base: Path, shape, spacing, classes, dtype):
    meta = {"shape": [int(s) for s in shape], "dtype": dtype, "spacing": [float(s) for s in spacing],
            "classes": int(classes), "version": FORMAT_VERSION}
    base.with_suffix(".json").write_text(json.dumps(meta, indent=2) + "\n", encoding="utf-8")


def save_volume(pair: VolumePair, path) -> Path:
    """Write the ``.vol``/``.lbl``/``.json`` triple; returns the base path."""
    base = _base(path)
    base.parent.mkdir(parents=True, exist_ok=True)
    base.with_suffix(".vol").write_bytes(np.ascontiguousarray(pair.intensities, dtype=_F32).tobytes())
    base.with_suffix(".lbl").write_bytes(np.ascontiguousarray(pair.labels, dtype=_U8).tobytes())
    _write_header(base, pair.shape, pair.spacing, pair.num_classes, "f32")
    return base


def load_volume(path) -> VolumePair:
    base = _base(path)
    meta = _header(base)
    if meta["dtype"] != "f32":
        raise DataError(f"{base}: header describes a label-only volume")
    vol = _read_raw(base.with_suffix(".vol"), _F32, meta["shape"]).astype(np.float32)
    lbl = _read_raw(base.with_suffix(".lbl"), _U8, meta["shape"])
    return VolumePair(vol, lbl, meta["spacing"], meta["classes"])


def save_labels(labels: np.ndarray, path, spacing=(1.0, 1.0, 1.0), num_classes: int = 4) -> Path:
    base = _base(path)
    base.parent.mkdir(parents=True, exist_ok=True)
    base.with_suffix(".lbl").write_bytes(np.ascontiguousarray(labels, dtype=_U8).tobytes())
    _write_header(base, labels.shape, spacing, num_classes, "u8")
    return base


def load_labels(path) -> np.ndarray:
    base = _base(path)
    meta = _header(base)
    lbl = _read_raw(base.with_suffix(".lbl"), _U8, meta["shape"])
    if lbl.size and int(lbl.max()) >= meta["classes"]:
        raise DataError(f"{base}: label {int(lbl.max())} >= classes {meta['classes']}")
    return lbl
