"""Learned inter-layer mixing.

Destination layer ``n`` (1..N) reads a convex combination of the outputs of
layers ``0..n-1`` (layer 0 is the embedding). The weights are the softmax of
a raw vector with ``n`` entries. An optional destination ``N+1`` feeds the
LM head from all ``N+1`` outputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import (
    ConfigError,
    EmptyVector,
    InvalidLayerIndex,
    LengthMismatch,
    RowNotNormalized,
    ShapeMismatch,
)

STANDARD = "standard-residual"
ELC = "elc"
NORMALIZE_EPS = 1e-7


@dataclass(frozen=True)
class WiringMode:
    scheme: str = ELC
    init: str | None = "biased"
    mlp_residual: bool = False
    normalize_outputs: bool = False
    weighted_output: bool = False

    def __post_init__(self):
        if self.scheme == STANDARD:
            # the plain transformer layer always keeps its MLP residual
            if self.init is not None or not self.mlp_residual or self.normalize_outputs \
                    or self.weighted_output:
                raise ConfigError("standard-residual wiring takes no ELC flags", key="wiring")
        elif self.scheme == ELC:
            if self.init not in ("biased", "zero"):
                raise ConfigError(f"unknown init {self.init!r}", key="init")
        else:
            raise ConfigError(f"unknown wiring scheme {self.scheme!r}", key="scheme")

    @property
    def is_elc(self):
        return self.scheme == ELC

    def to_dict(self):
        return {
            "scheme": self.scheme,
            "init": self.init,
            "mlp_residual": self.mlp_residual,
            "normalize_outputs": self.normalize_outputs,
            "weighted_output": self.weighted_output,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


_ZERO = WiringMode(ELC, "zero", mlp_residual=True)

PRESETS = {
    "bert-baseline": WiringMode(STANDARD, None, mlp_residual=True),
    "elc": WiringMode(ELC, "biased", mlp_residual=False),
    "elc-zero": _ZERO,
    "elc-norm": WiringMode(ELC, "zero", mlp_residual=True, normalize_outputs=True),
    "elc-weighted": WiringMode(ELC, "zero", mlp_residual=True, weighted_output=True),
}


def preset(name: str) -> WiringMode:
    try:
        return PRESETS[name]
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}",
                          key="preset") from None


def init_mix_weights(n: int, scheme: str) -> np.ndarray:
    """Raw weights for destination ``n``: zeros, plus a 1 on source ``n-1`` when biased."""
    if n < 1:
        raise InvalidLayerIndex(f"destination layer must be >= 1, got {n}")
    raw = np.zeros(n)
    if scheme == "biased":
        raw[n - 1] = 1.0
    elif scheme != "zero":
        raise ConfigError(f"unknown init {scheme!r}", key="init")
    return raw


def mix_alphas(raw) -> np.ndarray:
    raw = np.asarray(raw, dtype=np.float64)
    if raw.ndim != 1 or raw.size == 0:
        raise EmptyVector("mixing weights need at least one entry")
    z = np.exp(raw - raw.max())
    return z / z.sum()


@dataclass
class MixWeights:
    """Raw mixing vectors keyed by destination layer; ``raw[n]`` has ``n`` entries.

    When the weighted-output head is on, ``raw[N+1]`` has ``N+1`` entries.
    The tensors are the trainable parameters themselves.
    """

    num_layers: int
    raw: dict[int, Tensor] = field(default_factory=dict)

    @classmethod
    def initialize(cls, num_layers, init, weighted_output=False):
        raw = {n: Tensor(init_mix_weights(n, init), requires_grad=True)
               for n in range(1, num_layers + 1)}
        if weighted_output:
            # head weights always start uniform
            raw[num_layers + 1] = Tensor(np.zeros(num_layers + 1), requires_grad=True)
        return cls(num_layers, raw)

    @property
    def has_head(self):
        return (self.num_layers + 1) in self.raw

    def destinations(self):
        return sorted(self.raw)

    def alpha(self, n) -> np.ndarray:
        return mix_alphas(self.raw[n].data)

    def alpha_tensor(self, n) -> Tensor:
        return ad.softmax_rows(self.raw[n])

    def alpha_rows(self) -> list[np.ndarray]:
        return [self.alpha(n) for n in self.destinations()]


def unit_normalize(h: Tensor, eps: float = NORMALIZE_EPS) -> Tensor:
    """Scale every token vector (last axis) to L2 norm 1, dividing by ``norm + eps``."""
    norm = ad.sqrt(ad.tsum(h * h, axis=-1, keepdims=True))
    return ad.div(h, norm + eps)


def _check_same_shape(kind, outputs):
    shapes = {t.shape for t in outputs}
    if len(shapes) != 1:
        raise ShapeMismatch(kind, *sorted(shapes))


def combine(prev_outputs: Sequence[Tensor], alpha, normalize=False, eps=NORMALIZE_EPS) -> Tensor:
    """Weighted sum ``sum_i alpha[i] * g_i`` of earlier layer outputs.

    ``g_i`` is the output itself, or its per-token unit-normalized version
    when ``normalize`` is set. Differentiable in both ``alpha`` and outputs.
    """
    if not prev_outputs:
        raise LengthMismatch("combine needs at least one source")
    _check_same_shape("combine", prev_outputs)
    alpha = ad.as_tensor(alpha)
    if alpha.shape != (len(prev_outputs),):
        raise LengthMismatch(f"alpha has shape {alpha.shape}, expected ({len(prev_outputs)},)")
    if normalize:
        if not eps > 0:
            raise ValueError("eps must be positive")
        prev_outputs = [unit_normalize(h, eps) for h in prev_outputs]
    stacked = ad.stack(prev_outputs, axis=0)
    w = ad.reshape(alpha, (len(prev_outputs),) + (1,) * (stacked.ndim - 1))
    return ad.tsum(stacked * w, axis=0)


def residual_combine(prev_outputs: Sequence[Tensor]) -> Tensor:
    """Unweighted sum of all earlier outputs: the plain residual stream."""
    if not prev_outputs:
        raise LengthMismatch("residual_combine needs at least one source")
    _check_same_shape("residual_combine", prev_outputs)
    total = prev_outputs[0]
    for h in prev_outputs[1:]:
        total = total + h
    return total


def rescale_for_display(rows: Sequence[Sequence[float]], tol=1e-6) -> list[np.ndarray]:
    """Multiply row ``k`` (1-based, ``k`` entries) by ``k`` so that it sums to ``k``."""
    out = []
    for k, row in enumerate(rows, start=1):
        row = np.asarray(row, dtype=np.float64)
        if row.shape != (k,):
            raise RowNotNormalized(f"row {k} has {row.size} entries, expected {k}")
        if abs(row.sum() - 1.0) > tol:
            raise RowNotNormalized(f"row {k} sums to {row.sum()!r}")
        out.append(row * k)
    return out


def entropy(p) -> float:
    p = np.asarray(p, dtype=np.float64)
    nz = p[p > 0]
    return float(-(nz * np.log(nz)).sum()) + 0.0  # no -0.0 for one-hot rows


def alpha_csv(rows: Sequence[np.ndarray]) -> str:
    """CSV text, one line per (destination, source) pair."""
    rescaled = rescale_for_display(rows)
    lines = ["dest_layer,src_layer,alpha,rescaled"]
    for n, (row, rrow) in enumerate(zip(rows, rescaled), start=1):
        for i, (a, r) in enumerate(zip(row, rrow)):
            lines.append(f"{n},{i},{float(a)!r},{float(r)!r}")
    return "\n".join(lines) + "\n"


def alpha_pgm(rows: Sequence[np.ndarray]) -> str:
    """Plain (P2) grayscale heatmap of the rescaled matrix; empty cells are 0."""
    rescaled = rescale_for_display(rows)
    width = len(rescaled[-1]) if rescaled else 0
    top = max((float(r.max()) for r in rescaled), default=0.0)
    lines = ["P2", f"{width} {len(rescaled)}", "255"]
    for r in rescaled:
        cells = np.zeros(width)
        cells[: r.size] = np.clip(r, 0.0, top)
        pix = np.rint(cells / top * 255).astype(int) if top > 0 else cells.astype(int)
        lines.append(" ".join(str(int(v)) for v in pix))
    return "\n".join(lines) + "\n"

