"""Synthetic paired patches, splitting, and the SYMREGD1 dataset file.

Each sample has a latent severity ``s ~ U[y_min, y_max]``.  The two targets
are ``clamp(s + eps)`` with independent Gaussian ``eps``; the left patch holds
a Gaussian bump whose peak contrast grows with ``y_l``, and the right patch is
the lateral mirror of an independently noised rendering driven by ``y_r``.

File layout (little-endian)::

    b"SYMREGD1" | u64 header length | JSON header
    | per sample: x_r voxels, x_l voxels (float32, W fastest)
    | target table: per sample y_r, y_l (float64)
"""
from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from symreg.errors import ConfigError, FormatError

DATA_MAGIC = b"SYMREGD1"
Y_RANGE = (0.44, 6.84)
TARGET_CORRELATION = 0.93
SPLIT_NAMES = ("train", "val", "test")
DEFAULT_FRACTIONS = (0.70, 0.15, 0.15)


def pair_noise_for_correlation(rho: float, y_range: Tuple[float, float] = Y_RANGE) -> float:
    """Noise SD giving ``corr(s + e1, s + e2) = rho`` for uniform ``s`` (before clamping)."""
    var_s = (y_range[1] - y_range[0]) ** 2 / 12.0
    return math.sqrt(var_s * (1.0 - rho) / rho)


@dataclass
class GenConfig:
    n_samples: int = 860
    dims: Tuple[int, int, int] = (16, 16, 8)
    y_range: Tuple[float, float] = Y_RANGE
    sigma_pair: float = field(default_factory=lambda: pair_noise_for_correlation(TARGET_CORRELATION))
    blob_radius: float = 1.6
    blob_contrast: float = 2.0
    blob_offset: float = 0.25
    noise_sd: float = 1.0
    seed: int = 0

    def __post_init__(self):
        self.dims = tuple(int(e) for e in self.dims)
        self.y_range = tuple(float(e) for e in self.y_range)
        if self.n_samples < 1:
            raise ConfigError(f"n_samples must be >= 1, got {self.n_samples}")
        if self.sigma_pair < 0:
            raise ConfigError(f"sigma_pair must be >= 0, got {self.sigma_pair}")
        if len(self.dims) != 3 or any(e < 1 for e in self.dims):
            raise ConfigError(f"dims must be three positive extents, got {self.dims}")
        if not self.y_range[0] < self.y_range[1]:
            raise ConfigError(f"y_range must be increasing, got {self.y_range}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["dims"] = list(self.dims)
        d["y_range"] = list(self.y_range)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "GenConfig":
        return cls(**d)

    def blob_center(self) -> Tuple[float, float, float]:
        w, h, d = self.dims
        return ((w - 1) / 2.0 + self.blob_offset * w, (h - 1) / 2.0, (d - 1) / 2.0)


@dataclass
class PairedDataset:
    """In-memory paired samples; patches are ``(N, W, H, D)`` float32."""

    x_r: np.ndarray
    x_l: np.ndarray
    y_r: np.ndarray
    y_l: np.ndarray
    y_range: Tuple[float, float] = Y_RANGE
    generator: Optional[dict] = None
    split: Optional[np.ndarray] = None

    def __post_init__(self):
        n = len(self.y_r)
        if not (len(self.x_r) == len(self.x_l) == len(self.y_l) == n):
            raise ConfigError("x_r, x_l, y_r, y_l must have equal lengths")

    def __len__(self) -> int:
        return len(self.y_r)

    @property
    def dims(self) -> Tuple[int, int, int]:
        return tuple(int(e) for e in self.x_r.shape[1:4])

    @property
    def span(self) -> float:
        return float(self.y_range[1] - self.y_range[0])

    def take(self, idx) -> "PairedDataset":
        idx = np.asarray(idx)
        split = self.split[idx] if self.split is not None else None
        return PairedDataset(self.x_r[idx], self.x_l[idx], self.y_r[idx], self.y_l[idx],
                             self.y_range, self.generator, split)

    def subset(self, name: str) -> "PairedDataset":
        if self.split is None:
            raise ConfigError("dataset has no split assignment")
        if name not in SPLIT_NAMES:
            raise ConfigError(f"unknown split {name!r}")
        return self.take(np.flatnonzero(self.split == SPLIT_NAMES.index(name)))

    def has_split(self, name: str) -> bool:
        return self.split is not None and bool(np.any(self.split == SPLIT_NAMES.index(name)))


def lateral_flip(patch: np.ndarray) -> np.ndarray:
    """Reverse the lateral W axis of a ``(W, H, D)`` patch or ``(N, W, H, D)`` batch."""
    patch = np.asarray(patch)
    axis = 0 if patch.ndim == 3 else 1
    return np.flip(patch, axis=axis).copy()


def _render(y: float, cfg: GenConfig, grid: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    peak = cfg.blob_contrast * (y - cfg.y_range[0]) / (cfg.y_range[1] - cfg.y_range[0])
    bump = peak * np.exp(-grid / (2.0 * cfg.blob_radius ** 2))
    return (bump + cfg.noise_sd * rng.standard_normal(cfg.dims)).astype(np.float32)


def _squared_distance_grid(cfg: GenConfig) -> np.ndarray:
    cw, ch, cd = cfg.blob_center()
    w, h, d = np.meshgrid(*(np.arange(e, dtype=np.float64) for e in cfg.dims), indexing="ij")
    return (w - cw) ** 2 + (h - ch) ** 2 + (d - cd) ** 2


def blob_mask(cfg: GenConfig) -> np.ndarray:
    """Voxels within one blob radius of the (left-side) blob center."""
    return _squared_distance_grid(cfg) <= cfg.blob_radius ** 2


def gen_dataset(cfg: GenConfig) -> PairedDataset:
    """Generate ``cfg.n_samples`` pairs; sample ``i`` uses the RNG stream ``(seed, i)``."""
    grid = _squared_distance_grid(cfg)
    lo, hi = cfg.y_range
    n = cfg.n_samples
    x_r = np.empty((n,) + cfg.dims, dtype=np.float32)
    x_l = np.empty_like(x_r)
    y_r = np.empty(n)
    y_l = np.empty(n)
    for i in range(n):
        rng = np.random.default_rng([cfg.seed, i])
        s = rng.uniform(lo, hi)
        e_r, e_l = rng.normal(0.0, cfg.sigma_pair, size=2) if cfg.sigma_pair > 0 else (0.0, 0.0)
        y_r[i] = min(max(s + e_r, lo), hi)
        y_l[i] = min(max(s + e_l, lo), hi)
        x_l[i] = _render(y_l[i], cfg, grid, rng)
        x_r[i] = lateral_flip(_render(y_r[i], cfg, grid, rng))
    return PairedDataset(x_r, x_l, y_r, y_l, cfg.y_range, cfg.to_dict(), None)


def split_counts(n: int, fractions: Sequence[float]) -> Tuple[int, ...]:
    """Largest-remainder rounding of ``n * fractions``."""
    raw = [n * f for f in fractions]
    counts = [int(math.floor(r)) for r in raw]
    order = sorted(range(len(raw)), key=lambda i: (-(raw[i] - counts[i]), i))
    for i in order[: n - sum(counts)]:
        counts[i] += 1
    return tuple(counts)


def split_dataset(n_or_dataset, fractions: Sequence[float] = DEFAULT_FRACTIONS, seed: int = 0) -> np.ndarray:
    """Seeded shuffle into train/val/test labels (0/1/2), one per sample."""
    n = len(n_or_dataset) if not isinstance(n_or_dataset, (int, np.integer)) else int(n_or_dataset)
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or any(f < 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise ConfigError(f"split fractions must be three non-negative values summing to 1, got {fractions}")
    return _labels_from_counts(n, split_counts(n, fractions), seed)


def with_split(ds: PairedDataset, fractions=DEFAULT_FRACTIONS, seed: int = 0) -> PairedDataset:
    return replace(ds, split=split_dataset(len(ds), fractions, seed))


def split_by_counts(ds: PairedDataset, counts: Sequence[int], seed: int = 0) -> PairedDataset:
    """Assign exactly ``counts`` (train, val, test) samples by seeded shuffle."""
    if sum(counts) != len(ds):
        raise ConfigError(f"split counts {tuple(counts)} do not sum to {len(ds)}")
    return replace(ds, split=_labels_from_counts(len(ds), counts, seed))


def _labels_from_counts(n: int, counts: Sequence[int], seed: int) -> np.ndarray:
    perm = np.random.default_rng(seed).permutation(n)
    labels = np.empty(n, dtype=np.int8)
    start = 0
    for label, c in enumerate(counts):
        labels[perm[start:start + c]] = label
        start += c
    return labels


# -- persistence -------------------------------------------------------------

def _header(ds: PairedDataset) -> dict:
    return {
        "format": DATA_MAGIC.decode(),
        "version": 1,
        "count": len(ds),
        "dims": list(ds.dims),
        "y_range": list(ds.y_range),
        "voxel_dtype": "<f4",
        "target_dtype": "<f8",
        "layout": "per sample x_r then x_l, W fastest; then targets y_r, y_l",
        "generator": ds.generator,
        "split": None if ds.split is None else [int(v) for v in ds.split],
        "split_names": list(SPLIT_NAMES),
    }


def dataset_bytes(ds: PairedDataset) -> bytes:
    header = json.dumps(_header(ds), sort_keys=True, separators=(",", ":")).encode()
    parts = [DATA_MAGIC, struct.pack("<Q", len(header)), header]
    for i in range(len(ds)):
        for x in (ds.x_r[i], ds.x_l[i]):
            # W fastest == Fortran order of a (W, H, D) array
            parts.append(np.asarray(x, dtype="<f4").ravel(order="F").tobytes())
    parts.append(np.stack([ds.y_r, ds.y_l], axis=1).astype("<f8").tobytes())
    return b"".join(parts)


def save_dataset(ds: PairedDataset, path) -> None:
    Path(path).write_bytes(dataset_bytes(ds))


def parse_dataset(buf: bytes) -> PairedDataset:
    if len(buf) < 16:
        raise FormatError("file too short for magic and header length", 0)
    if buf[:8] != DATA_MAGIC:
        raise FormatError(f"bad magic {buf[:8]!r}, expected {DATA_MAGIC!r}", 0)
    (hlen,) = struct.unpack_from("<Q", buf, 8)
    if 16 + hlen > len(buf):
        raise FormatError(f"header length {hlen} runs past end of file ({len(buf)} bytes)", 8)
    try:
        header = json.loads(buf[16:16 + hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"unreadable JSON header: {exc}", 16) from exc
    for key in ("count", "dims", "y_range"):
        if key not in header:
            raise FormatError(f"header missing {key!r}", 16)
    n = int(header["count"])
    dims = tuple(int(e) for e in header["dims"])
    if n < 0 or len(dims) != 3 or any(e < 1 for e in dims):
        raise FormatError(f"invalid count/dims in header: {n}, {dims}", 16)
    voxels = dims[0] * dims[1] * dims[2]
    blob_bytes = voxels * 4
    blobs_start = 16 + hlen
    table_bytes = n * 16
    payload = len(buf) - blobs_start - table_bytes
    expected = 2 * n * blob_bytes
    if payload < expected:
        found = max(payload, 0) // blob_bytes
        raise FormatError(f"truncated: header declares {2 * n} blobs but file holds {found} complete blobs"
                          f" (blob {found} starts at offset {blobs_start + found * blob_bytes})",
                          blobs_start + found * blob_bytes)
    if payload > expected:
        raise FormatError(f"count mismatch: header declares {2 * n} blobs ({expected} bytes from offset "
                          f"{blobs_start}) but {payload} blob bytes precede the target table",
                          blobs_start + expected)
    raw = np.frombuffer(buf, dtype="<f4", count=2 * n * voxels, offset=blobs_start)
    raw = raw.reshape(n, 2, dims[2], dims[1], dims[0]).transpose(0, 1, 4, 3, 2).astype(np.float32)
    targets = np.frombuffer(buf, dtype="<f8", count=2 * n, offset=blobs_start + expected).reshape(n, 2)
    split = header.get("split")
    if split is not None:
        split = np.asarray(split, dtype=np.int8)
        if len(split) != n:
            raise FormatError(f"split has {len(split)} labels for {n} samples", 16)
        if np.any((split < 0) | (split >= len(SPLIT_NAMES))):
            raise FormatError("split labels outside 0..2", 16)
    return PairedDataset(np.ascontiguousarray(raw[:, 0]), np.ascontiguousarray(raw[:, 1]),
                         targets[:, 0].copy(), targets[:, 1].copy(),
                         tuple(header["y_range"]), header.get("generator"), split)


def load_dataset(path) -> PairedDataset:
    return parse_dataset(Path(path).read_bytes())


def summary(ds: PairedDataset) -> Dict[str, float]:
    y = np.concatenate([ds.y_r, ds.y_l])
    corr = float(np.corrcoef(ds.y_r, ds.y_l)[0, 1]) if len(ds) > 1 and np.std(ds.y_r) > 0 and np.std(ds.y_l) > 0 else float("nan")
    out = {"count": len(ds), "corr_r_l": corr, "y_min": float(y.min()), "y_max": float(y.max())}
    if ds.split is not None:
        for i, name in enumerate(SPLIT_NAMES):
            out[f"n_{name}"] = int(np.sum(ds.split == i))
    return out
