"""Pre-norm transformer encoder with pluggable inter-layer wiring.

Layer ``n`` computes ``att(h) + mlp(h + att(h))`` (MLP residual kept) or
``att(h) + mlp(att(h))`` (removed), where ``h`` is the layer input. The input
is the plain sum of all earlier outputs under standard-residual wiring, or a
learned convex combination of them under ELC wiring.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import (
    ConfigError,
    IndexOutOfVocab,
    MissingHeadWeights,
    SequenceTooLong,
    ShapeMismatch,
)
from .mixing import PRESETS, MixWeights, WiringMode, combine, residual_combine
from .rng import make_rng

_NEG = -1e30


@dataclass(frozen=True)
class EncoderConfig:
    num_layers: int = 4
    hidden_size: int = 32
    num_heads: int = 4
    ff_size: int = 64
    vocab_size: int = 64
    max_seq_len: int = 16
    wiring: WiringMode = PRESETS["elc"]
    dropout: float = 0.0
    ln_eps: float = 1e-7
    init_std: float = 0.02

    def __post_init__(self):
        for key in ("hidden_size", "num_heads", "ff_size", "vocab_size", "max_seq_len"):
            v = getattr(self, key)
            if not isinstance(v, int) or v <= 0:
                raise ConfigError(f"{key} must be a positive integer, got {v!r}", key=key)
        if not isinstance(self.num_layers, int) or self.num_layers < 0:
            raise ConfigError(f"num_layers must be a nonnegative integer, got {self.num_layers!r}",
                              key="num_layers")
        if self.hidden_size % self.num_heads:
            raise ConfigError("hidden_size must be divisible by num_heads", key="num_heads")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)", key="dropout")
        if not self.ln_eps > 0:
            raise ConfigError("ln_eps must be positive", key="ln_eps")
        if isinstance(self.wiring, dict):
            object.__setattr__(self, "wiring", WiringMode.from_dict(self.wiring))

    def to_dict(self):
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d["wiring"] = self.wiring.to_dict()
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown encoder keys {sorted(unknown)}", key=sorted(unknown)[0])
        if "wiring" in d:
            d["wiring"] = WiringMode.from_dict(d["wiring"])
        return cls(**d)


@dataclass
class EncoderState:
    """All parameters of one encoder; ``params`` is the flat, ordered name->tensor table."""

    config: EncoderConfig
    params: dict[str, Tensor] = field(default_factory=dict)
    mix: MixWeights | None = None

    def layer(self, n) -> dict[str, Tensor]:
        prefix = f"layers.{n}."
        return {k[len(prefix):]: v for k, v in self.params.items() if k.startswith(prefix)}

    def parameters(self):
        return list(self.params.values())

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def copy(self):
        params = {k: Tensor(v.data, requires_grad=True) for k, v in self.params.items()}
        return _assemble(self.config, params)


def _assemble(config, params):
    mix = None
    if config.wiring.is_elc:
        raw = {int(k.split(".")[1]): v for k, v in params.items() if k.startswith("mix.")}
        mix = MixWeights(config.num_layers, raw)
    return EncoderState(config, params, mix)


def parameter_shapes(config: EncoderConfig) -> dict[str, tuple]:
    H, F, V = config.hidden_size, config.ff_size, config.vocab_size
    shapes = {
        "embed.tok": (V, H),
        "embed.pos": (config.max_seq_len, H),
        "embed.ln.g": (H,),
        "embed.ln.b": (H,),
    }
    for n in range(1, config.num_layers + 1):
        p = f"layers.{n}."
        shapes[p + "att.ln.g"] = (H,)
        shapes[p + "att.ln.b"] = (H,)
        for proj in ("q", "k", "v", "o"):
            shapes[p + f"att.{proj}.w"] = (H, H)
            # a key bias shifts every score in a row equally, so it never gets a gradient
            if proj != "k":
                shapes[p + f"att.{proj}.b"] = (H,)
        shapes[p + "mlp.ln.g"] = (H,)
        shapes[p + "mlp.ln.b"] = (H,)
        shapes[p + "mlp.up.w"] = (H, F)
        shapes[p + "mlp.up.b"] = (F,)
        shapes[p + "mlp.down.w"] = (F, H)
        shapes[p + "mlp.down.b"] = (H,)
    shapes["head.ln.g"] = (H,)
    shapes["head.ln.b"] = (H,)
    shapes["head.w"] = (H, V)
    shapes["head.b"] = (V,)
    if config.wiring.is_elc:
        for n in range(1, config.num_layers + 1):
            shapes[f"mix.{n}"] = (n,)
        if config.wiring.weighted_output:
            shapes[f"mix.{config.num_layers + 1}"] = (config.num_layers + 1,)
    return shapes


def init_encoder(config: EncoderConfig, seed: int = 0) -> EncoderState:
    """Gaussian(0, init_std) matrices, zero biases, unit gains, wiring-specific mix weights."""
    rng = make_rng(seed, "init")
    params = {}
    for name, shape in parameter_shapes(config).items():
        if name.startswith("mix."):
            continue
        if name.endswith(".g"):
            data = np.ones(shape)
        elif len(shape) == 2:
            data = rng.normal(0.0, config.init_std, size=shape)
        else:
            data = np.zeros(shape)
        params[name] = Tensor(data, requires_grad=True, name=name)
    if config.wiring.is_elc:
        mix = MixWeights.initialize(config.num_layers, config.wiring.init,
                                    config.wiring.weighted_output)
        for n in mix.destinations():
            mix.raw[n].name = f"mix.{n}"
            params[f"mix.{n}"] = mix.raw[n]
    return _assemble(config, params)


def state_from_arrays(config: EncoderConfig, arrays: dict[str, np.ndarray]) -> EncoderState:
    shapes = parameter_shapes(config)
    if set(arrays) != set(shapes):
        missing = sorted(set(shapes) - set(arrays))
        extra = sorted(set(arrays) - set(shapes))
        raise ConfigError(f"parameter table mismatch: missing {missing}, unexpected {extra}")
    params = {}
    for name, shape in shapes.items():
        a = np.asarray(arrays[name], dtype=np.float64)
        if a.shape != shape:
            raise ShapeMismatch(f"parameter {name}", a.shape, shape)
        params[name] = Tensor(a, requires_grad=True, name=name)
    return _assemble(config, params)


def constant_logit_state(config: EncoderConfig, seed: int = 0) -> EncoderState:
    """Freshly initialised encoder whose head is zeroed, so every position predicts uniformly."""
    state = init_encoder(config, seed)
    state.params["head.w"].data[...] = 0.0
    state.params["head.b"].data[...] = 0.0
    return state


def _as_batch(ids):
    ids = np.asarray(ids)
    if ids.dtype.kind not in "iu":
        if ids.size == 0:
            ids = ids.astype(np.int64)
        else:
            raise TypeError("token ids must be integers")
    return ids


def embed(state: EncoderState, ids) -> Tensor:
    """Token plus learned absolute position embedding, then layer norm."""
    cfg = state.config
    ids = _as_batch(ids)
    L = ids.shape[-1] if ids.ndim else 0
    if L > cfg.max_seq_len:
        raise SequenceTooLong(f"sequence length {L} exceeds max_seq_len {cfg.max_seq_len}")
    if ids.size and (ids.min() < 0 or ids.max() >= cfg.vocab_size):
        raise IndexOutOfVocab(f"token id outside [0, {cfg.vocab_size})")
    p = state.params
    tok = ad.embedding(p["embed.tok"], ids)
    pos = ad.embedding(p["embed.pos"], np.arange(L))
    return ad.layer_norm(tok + pos, p["embed.ln.g"], p["embed.ln.b"], cfg.ln_eps)


def _dropout(x, rate, rng):
    if rng is None or rate <= 0.0:
        return x
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return x * Tensor(keep)


def _linear(x, lp, name):
    y = x @ lp[name + ".w"]
    b = lp.get(name + ".b")
    return y if b is None else y + b


def attention(h: Tensor, lp: dict, num_heads: int, mask=None, eps: float = 1e-7,
              dropout: float = 0.0, rng=None) -> Tensor:
    """Pre-norm bidirectional multi-head self-attention with output projection.

    ``mask`` is a boolean keep-mask over positions (True = real token).
    Masked keys get zero weight; masked queries get a zero context vector.
    """
    squeeze = h.ndim == 2
    if squeeze:
        h = ad.reshape(h, (1,) + h.shape)
    if h.ndim != 3:
        raise ShapeMismatch("attention", h.shape)
    B, L, H = h.shape
    if lp["att.q.w"].shape != (H, H):
        raise ShapeMismatch("attention", h.shape, lp["att.q.w"].shape)
    d = H // num_heads
    x = ad.layer_norm(h, lp["att.ln.g"], lp["att.ln.b"], eps)

    def heads(t, axes):
        return ad.transpose(ad.reshape(t, (B, L, num_heads, d)), axes)

    q = heads(_linear(x, lp, "att.q"), (0, 2, 1, 3))
    kt = heads(_linear(x, lp, "att.k"), (0, 2, 3, 1))
    v = heads(_linear(x, lp, "att.v"), (0, 2, 1, 3))
    scores = (q @ kt) * (1.0 / math.sqrt(d))
    keep = None
    if mask is not None:
        keep = np.asarray(mask, dtype=bool)
        if squeeze and keep.shape == (L,):
            keep = keep[None]
        if keep.shape != (B, L):
            raise ShapeMismatch("attention mask", np.shape(mask), (B, L))
        scores = scores + Tensor(np.where(keep, 0.0, _NEG)[:, None, None, :])
    probs = ad.softmax_rows(scores)
    if keep is not None:
        probs = probs * Tensor(keep[:, None, :, None].astype(np.float64))
    probs = _dropout(probs, dropout, rng)
    ctx = ad.reshape(ad.transpose(probs @ v, (0, 2, 1, 3)), (B, L, H))
    out = _linear(ctx, lp, "att.o")
    if squeeze:
        out = ad.reshape(out, (L, H))
    return out


def mlp(x: Tensor, lp: dict, eps: float = 1e-7) -> Tensor:
    y = ad.layer_norm(x, lp["mlp.ln.g"], lp["mlp.ln.b"], eps)
    return _linear(ad.gelu(_linear(y, lp, "mlp.up")), lp, "mlp.down")


def layer_forward(h_in: Tensor, lp: dict, mlp_residual: bool, num_heads: int, mask=None,
                  eps: float = 1e-7, dropout: float = 0.0, rng=None) -> Tensor:
    a = attention(h_in, lp, num_heads, mask, eps, dropout, rng)
    a = _dropout(a, dropout, rng)
    m = mlp(h_in + a if mlp_residual else a, lp, eps)
    return a + _dropout(m, dropout, rng)


def encode(state: EncoderState, ids, mask=None, rng=None) -> list[Tensor]:
    """Return ``[h0, h1, ..., hN]``; ``rng`` enables dropout when the config asks for it."""
    cfg = state.config
    wiring = cfg.wiring
    outputs = [embed(state, ids)]
    for n in range(1, cfg.num_layers + 1):
        if wiring.is_elc:
            h_in = combine(outputs, state.mix.alpha_tensor(n), normalize=wiring.normalize_outputs)
        else:
            h_in = residual_combine(outputs)
        outputs.append(layer_forward(h_in, state.layer(n), wiring.mlp_residual, cfg.num_heads,
                                     mask, cfg.ln_eps, cfg.dropout, rng))
    return outputs


def lm_logits(state: EncoderState, outputs: list[Tensor], alpha_override=None) -> Tensor:
    """Layer norm then vocabulary projection of the last output (or of the weighted sum).

    ``alpha_override`` replaces the learned head weights; it exists for tests.
    """
    cfg = state.config
    if len(outputs) != cfg.num_layers + 1:
        raise ShapeMismatch("lm_logits", (len(outputs),), (cfg.num_layers + 1,))
    if cfg.wiring.weighted_output:
        if alpha_override is not None:
            alpha = alpha_override
        elif state.mix is None or not state.mix.has_head:
            raise MissingHeadWeights(f"no mixing weights for destination {cfg.num_layers + 1}")
        else:
            alpha = state.mix.alpha_tensor(cfg.num_layers + 1)
        h = combine(outputs, alpha)
    else:
        h = outputs[-1]
    p = state.params
    h = ad.layer_norm(h, p["head.ln.g"], p["head.ln.b"], cfg.ln_eps)
    return h @ p["head.w"] + p["head.b"]


def forward(state: EncoderState, ids, mask=None, rng=None) -> Tensor:
    return lm_logits(state, encode(state, ids, mask, rng))


def with_wiring(config: EncoderConfig, wiring: WiringMode) -> EncoderConfig:
    return replace(config, wiring=wiring)
