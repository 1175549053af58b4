"""Paired regressors and the regression / symmetric / final losses."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, NamedTuple, Optional, Tuple

import numpy as np

from symreg.autodiff import Tensor, as_tensor, concat
from symreg.autodiff.ops import note_decision
from symreg.backbone import Backbone, BackboneConfig, build_backbone
from symreg.data import lateral_flip
from symreg.errors import ConfigError, DimensionError

SBR_MAX = 6.84


@dataclass
class SymmetricLossConfig:
    """``alpha`` is the clip margin as a fraction of ``sbr_max``; ``beta`` weights L_sym."""

    alpha: float = 0.04
    beta: float = 1.0
    sbr_max: float = SBR_MAX

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0 or self.sbr_max <= 0:
            raise ConfigError(f"need alpha >= 0, beta >= 0, sbr_max > 0; got "
                              f"{self.alpha}, {self.beta}, {self.sbr_max}")

    @property
    def margin(self) -> float:
        """Raw clip margin in target units."""
        return self.alpha * self.sbr_max


class SymmetricRegressor:
    """One shared backbone F applied to (flip(x_r), x_l)."""

    kind = "symmetric"

    def __init__(self, backbone: Backbone, flip_right: bool = True):
        self.backbone = backbone
        self.flip_right = flip_right

    @property
    def params(self) -> Dict[str, Tensor]:
        return self.backbone.params

    @property
    def rng(self) -> np.random.Generator:
        return self.backbone.rng

    @property
    def dims(self):
        return self.backbone.config.patch_dims

    def set_mode(self, mode: str) -> None:
        self.backbone.set_mode(mode)

    @property
    def mode(self) -> str:
        return self.backbone.mode

    def parameter_count(self) -> int:
        return self.backbone.parameter_count()

    def _check(self, x, side: str) -> np.ndarray:
        x = np.asarray(x)
        if x.ndim == 3:
            x = x[None]
        if x.ndim != 4 or tuple(x.shape[1:]) != self.dims:
            raise DimensionError(f"{side} patch shape {x.shape} does not match backbone dims {self.dims}")
        return x

    def pair_features(self, x_r, x_l) -> Tuple[Tensor, Tensor]:
        x_r, x_l = self._check(x_r, "right"), self._check(x_l, "left")
        if len(x_r) != len(x_l):
            raise DimensionError(f"right batch {len(x_r)} and left batch {len(x_l)} differ")
        if self.flip_right:
            x_r = lateral_flip(x_r)
        feats = self.backbone.features(np.concatenate([x_r, x_l], axis=0))
        n = len(x_l)
        return feats[:n], feats[n:]

    def pair_head(self, f_r: Tensor, f_l: Tensor, mode: Optional[str] = None,
                  rng: Optional[np.random.Generator] = None) -> Tuple[Tensor, Tensor]:
        n = f_r.shape[0]
        out = self.backbone.head(concat([f_r, f_l]), mode, rng)
        return out[:n], out[n:]

    def forward_pair(self, x_r, x_l, mode: Optional[str] = None,
                     rng: Optional[np.random.Generator] = None) -> Tuple[Tensor, Tensor]:
        """Predictions ``(y_r_hat, y_l_hat)``, each of shape (N,)."""
        return self.pair_head(*self.pair_features(x_r, x_l), mode, rng)

    def reseed(self, seed) -> None:
        """Restart the dropout mask stream."""
        self.backbone.rng = np.random.default_rng(seed)

    def init_output_bias(self, value: float) -> None:
        self.backbone.params["fc.bias"].data[...] = value

    def copy_params(self) -> Dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_params(self, values: Dict[str, np.ndarray]) -> None:
        self.backbone.load_params(values)

    def architecture(self) -> dict:
        return {"kind": self.kind, "flip_right": self.flip_right, "backbone": self.backbone.config.to_dict()}


class UnpairedRegressor:
    """Baseline: independent right and left backbones, no weight sharing, no flip."""

    kind = "unpaired"

    def __init__(self, right: Backbone, left: Backbone):
        self.right = right
        self.left = left
        self.rng = right.rng

    @property
    def params(self) -> Dict[str, Tensor]:
        out = {f"right.{k}": v for k, v in self.right.params.items()}
        out.update({f"left.{k}": v for k, v in self.left.params.items()})
        return out

    @property
    def dims(self):
        return self.right.config.patch_dims

    @property
    def mode(self) -> str:
        return self.right.mode

    def set_mode(self, mode: str) -> None:
        self.right.set_mode(mode)
        self.left.set_mode(mode)

    def parameter_count(self) -> int:
        return self.right.parameter_count() + self.left.parameter_count()

    def pair_features(self, x_r, x_l) -> Tuple[Tensor, Tensor]:
        return self.right.features(x_r), self.left.features(x_l)

    def pair_head(self, f_r, f_l, mode=None, rng=None):
        rng = rng if rng is not None else self.rng
        return self.right.head(f_r, mode, rng), self.left.head(f_l, mode, rng)

    def forward_pair(self, x_r, x_l, mode=None, rng=None):
        return self.pair_head(*self.pair_features(x_r, x_l), mode, rng)

    def reseed(self, seed) -> None:
        self.rng = np.random.default_rng(seed)

    def init_output_bias(self, value: float) -> None:
        self.right.params["fc.bias"].data[...] = value
        self.left.params["fc.bias"].data[...] = value

    def copy_params(self) -> Dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_params(self, values: Dict[str, np.ndarray]) -> None:
        params = self.params
        for k, v in values.items():
            if k not in params:
                raise DimensionError(f"unknown parameter {k!r}")
            params[k].data[...] = v

    def architecture(self) -> dict:
        return {"kind": self.kind, "flip_right": False, "backbone": self.right.config.to_dict()}


def build_model(config: BackboneConfig, seed: int = 0, unpaired: bool = False, flip_right: bool = True):
    if unpaired:
        ss = np.random.SeedSequence(seed).spawn(2)
        return UnpairedRegressor(build_backbone(config, np.random.default_rng(ss[0])),
                                 build_backbone(config, np.random.default_rng(ss[1])))
    return SymmetricRegressor(build_backbone(config, seed), flip_right=flip_right)


# -- losses -----------------------------------------------------------------

def clip(a, alpha_sq: float):
    """``a`` where ``a > alpha_sq``, else 0; gradient passes only above the margin.

    Works on floats and on Tensors (elementwise).
    """
    if not isinstance(a, Tensor):
        return float(a) if a > alpha_sq else 0.0
    gate = a.data > alpha_sq
    note_decision(gate)
    return Tensor.from_op(np.where(gate, a.data, 0.0).astype(a.dtype, copy=False), (a,),
                          lambda g: (g * gate,), "clip")


def _pairs(preds):
    p_r, p_l = preds
    return as_tensor(p_r), as_tensor(p_l)


def _targets(targets, dtype):
    y_r, y_l = targets
    return np.asarray(y_r, dtype=dtype).reshape(-1), np.asarray(y_l, dtype=dtype).reshape(-1)


def loss_reg(preds, targets) -> Tensor:
    """Mean over samples of ``(y_r - p_r)^2 + (y_l - p_l)^2``."""
    p_r, p_l = _pairs(preds)
    y_r, y_l = _targets(targets, p_r.dtype)
    if p_r.size == 0:
        raise ConfigError("regression loss of an empty batch")
    if not (p_r.size == p_l.size == y_r.size == y_l.size):
        raise DimensionError(f"prediction/target counts differ: {p_r.size}, {p_l.size}, {y_r.size}, {y_l.size}")
    return ((p_r.reshape(-1) - y_r).square() + (p_l.reshape(-1) - y_l).square()).mean()


def loss_sym(preds, cfg: SymmetricLossConfig) -> Tensor:
    """Mean over samples of ``clip((p_r - p_l)^2, (alpha * sbr_max)^2)``."""
    p_r, p_l = _pairs(preds)
    return clip((p_r - p_l).square(), cfg.margin ** 2).mean()


class LossTerms(NamedTuple):
    final: Tensor
    reg: Tensor
    sym: Tensor


def loss_terms(preds, targets, cfg: SymmetricLossConfig) -> LossTerms:
    reg = loss_reg(preds, targets)
    sym = loss_sym(preds, cfg)
    return LossTerms(reg + cfg.beta * sym, reg, sym)


def loss_final(preds, targets, cfg: SymmetricLossConfig) -> Tensor:
    """``loss_reg + beta * loss_sym``."""
    return loss_terms(preds, targets, cfg).final
