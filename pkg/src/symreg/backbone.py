"""VGG-style 3D CNN regressor mapping one patch to one scalar."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from symreg.autodiff import Tensor, conv3d, dense, dropout, flatten, maxpool3d, relu
from symreg.autodiff.ops import check_mode, check_rate
from symreg.errors import ConfigError, DimensionError, NumericError

FULL_DIMS = (50, 50, 20)
FULL_PLAN = (64, 128, 256, 512)
DESK_DIMS = (16, 16, 8)
DESK_PLAN = (8, 16, 32, 64)


@dataclass
class BackboneConfig:
    patch_dims: Tuple[int, int, int] = DESK_DIMS
    channel_plan: Tuple[int, ...] = DESK_PLAN
    convs_per_stage: int = 2
    dropout_rate: float = 0.5
    kernel_size: int = 3
    pool_window: int = 2
    # strict: an axis that would pool from 1 to 0 is an error instead of being skipped
    strict_pooling: bool = False
    standardize: bool = True
    dtype: str = "float64"
    output_dim: int = field(default=1, init=False)

    def __post_init__(self):
        self.patch_dims = tuple(int(e) for e in self.patch_dims)
        self.channel_plan = tuple(int(c) for c in self.channel_plan)

    @classmethod
    def full(cls, **overrides) -> "BackboneConfig":
        """The 50x50x20 geometry with the 64/128/256/512 plan."""
        return cls(patch_dims=FULL_DIMS, channel_plan=FULL_PLAN, **overrides)

    @classmethod
    def from_dict(cls, d: dict) -> "BackboneConfig":
        d = {k: v for k, v in d.items() if k != "output_dim"}
        return cls(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["patch_dims"] = list(self.patch_dims)
        d["channel_plan"] = list(self.channel_plan)
        return d

    def pool_windows(self) -> List[Tuple[int, int, int]]:
        """Per-stage pooling windows; raises ConfigError on a collapsing extent."""
        self.validate_basic()
        extents = list(self.patch_dims)
        windows = []
        for stage in range(len(self.channel_plan)):
            win = []
            for axis, e in enumerate(extents):
                if e >= self.pool_window:
                    win.append(self.pool_window)
                elif self.strict_pooling or e < 1:
                    raise ConfigError(
                        f"stage {stage + 1} pooling collapses axis {'WHD'[axis]} "
                        f"(extent {e}) below 1 for patch dims {self.patch_dims}")
                else:
                    win.append(1)
            extents = [e // w for e, w in zip(extents, win)]
            windows.append(tuple(win))
        return windows

    def validate_basic(self) -> None:
        if len(self.patch_dims) != 3 or any(e < 1 for e in self.patch_dims):
            raise ConfigError(f"patch_dims must be three positive extents, got {self.patch_dims}")
        if not self.channel_plan or any(c < 1 for c in self.channel_plan):
            raise ConfigError(f"channel_plan must be non-empty and positive, got {self.channel_plan}")
        if self.convs_per_stage < 1:
            raise ConfigError("convs_per_stage must be >= 1")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ConfigError(f"kernel_size must be odd, got {self.kernel_size}")
        check_rate(self.dropout_rate)
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32 or float64, got {self.dtype!r}")

    def shape_ledger(self) -> List[Tuple[str, Tuple[int, ...]]]:
        """Layer names and output shapes, laid out like the architecture table."""
        rows = [("Input", self.patch_dims + (1,))]
        extents = self.patch_dims
        for s, (width, win) in enumerate(zip(self.channel_plan, self.pool_windows()), start=1):
            for j in range(1, self.convs_per_stage + 1):
                rows.append((f"Conv{s}-{j}", extents + (width,)))
            extents = tuple(e // w for e, w in zip(extents, win))
            rows.append((f"Pool{s}", extents + (width,)))
        rows.append(("Flatten", (self.flatten_width,)))
        rows.append(("FC", (1,)))
        return rows

    @property
    def flatten_width(self) -> int:
        extents = self.patch_dims
        for win in self.pool_windows():
            extents = tuple(e // w for e, w in zip(extents, win))
        return int(np.prod(extents)) * self.channel_plan[-1]

    def parameter_shapes(self) -> Dict[str, Tuple[int, ...]]:
        k = self.kernel_size
        shapes = {}
        cin = 1
        for s, width in enumerate(self.channel_plan, start=1):
            for j in range(1, self.convs_per_stage + 1):
                shapes[f"conv{s}_{j}.weight"] = (k, k, k, cin, width)
                shapes[f"conv{s}_{j}.bias"] = (width,)
                cin = width
        shapes["fc.weight"] = (self.flatten_width, 1)
        shapes["fc.bias"] = (1,)
        return shapes

    def parameter_count(self) -> int:
        return int(sum(np.prod(s) for s in self.parameter_shapes().values()))


def standardize_patches(x: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """Zero-mean, unit-variance normalization of each patch in a batch."""
    axes = tuple(range(1, x.ndim))
    mean = x.mean(axis=axes, keepdims=True)
    std = x.std(axis=axes, keepdims=True)
    return (x - mean) / (std + eps)


class Backbone:
    """Shared regressor F: conv stages, one dropout layer, linear head."""

    def __init__(self, config: BackboneConfig, params: Dict[str, Tensor], seed: Optional[int] = None):
        self.config = config
        self.params = params
        self.windows = config.pool_windows()
        self.mode = "eval"
        self.rng = np.random.default_rng(seed)
        self.check_finite = True

    @property
    def dtype(self):
        return np.dtype(self.config.dtype)

    def set_mode(self, mode: str) -> None:
        self.mode = check_mode(mode)

    def parameter_count(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def _check(self, t: Tensor, layer: str) -> Tensor:
        if self.check_finite and not np.all(np.isfinite(t.data)):
            raise NumericError(f"non-finite activation in layer {layer}")
        return t

    def prepare(self, patches) -> np.ndarray:
        """Batch ``(N, W, H, D)`` patches as standardized ``(N, W, H, D, 1)`` input."""
        x = np.asarray(patches.data if isinstance(patches, Tensor) else patches)
        if x.ndim == 3:
            x = x[None]
        if x.ndim == 5 and x.shape[-1] == 1:
            x = x[..., 0]
        if x.ndim != 4 or tuple(x.shape[1:]) != self.config.patch_dims:
            raise DimensionError(f"patch shape {x.shape[1:] if x.ndim == 4 else x.shape} does not match "
                                 f"backbone dims {self.config.patch_dims}")
        x = x.astype(self.dtype, copy=False)
        if self.config.standardize:
            x = standardize_patches(x)
        return x[..., None]

    def features(self, patches) -> Tensor:
        """Conv stages and flatten; deterministic, no dropout."""
        h = Tensor(self.prepare(patches))
        p = self.params
        for s, win in enumerate(self.windows, start=1):
            for j in range(1, self.config.convs_per_stage + 1):
                name = f"conv{s}_{j}"
                h = self._check(relu(conv3d(h, p[f"{name}.weight"], p[f"{name}.bias"])), name)
            h = maxpool3d(h, win)
        return flatten(h)

    def head(self, feats: Tensor, mode: Optional[str] = None,
             rng: Optional[np.random.Generator] = None) -> Tensor:
        mode = self.mode if mode is None else check_mode(mode)
        h = dropout(feats, self.config.dropout_rate, mode, rng if rng is not None else self.rng)
        out = dense(h, self.params["fc.weight"], self.params["fc.bias"])
        return self._check(out, "fc").reshape(-1)

    def forward(self, patches, mode: Optional[str] = None, rng=None) -> Tensor:
        """Predictions of shape (N,) for a batch of patches."""
        return self.head(self.features(patches), mode, rng)

    __call__ = forward

    def copy_params(self) -> Dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_params(self, values: Dict[str, np.ndarray]) -> None:
        for k, v in values.items():
            if k not in self.params:
                raise DimensionError(f"unknown parameter {k!r}")
            if tuple(v.shape) != self.params[k].shape:
                raise DimensionError(f"parameter {k!r} shape {v.shape} != {self.params[k].shape}")
            self.params[k].data[...] = v


def build_backbone(config: BackboneConfig, rng=None) -> Backbone:
    """Instantiate parameters with He-uniform weights and zero biases.

    ``rng`` may be a seed or a numpy Generator; the same seed yields identical
    initial parameters.
    """
    config.validate_basic()
    config.pool_windows()
    gen = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    dtype = np.dtype(config.dtype)
    params = {}
    for name, shape in config.parameter_shapes().items():
        if name.endswith(".bias"):
            data = np.zeros(shape, dtype=dtype)
        else:
            fan_in = int(np.prod(shape[:-1]))
            bound = np.sqrt(6.0 / fan_in)
            data = gen.uniform(-bound, bound, size=shape).astype(dtype)
        params[name] = Tensor(data, requires_grad=True, name=name)
    seed = int(gen.integers(2 ** 63 - 1))
    return Backbone(config, params, seed=seed)


def predict(backbone: Backbone, patch, mode: str = "eval") -> float:
    """Scalar prediction for a single ``(W, H, D)`` patch."""
    return backbone.forward(np.asarray(patch)[None], mode).item()
