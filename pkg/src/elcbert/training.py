"""Masked-language-model pretraining: masking, loss, schedule, optimizer, loop."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .checkpoint import Checkpoint, save_checkpoint
from .data import MASK, SPECIAL_IDS, Corpus, batches, batches_per_epoch
from .encoder import EncoderState, forward, state_from_arrays
from .errors import (
    ConfigError,
    EmptyCorpus,
    NoLabeledPositions,
    NoMaskableTokens,
    NonFiniteGradient,
    StepOutOfRange,
    WiringMismatch,
)
from .rng import check_seed, make_rng

log = logging.getLogger(__name__)

IGNORE = -100
BETA1, BETA2, ADAM_EPS = 0.9, 0.98, 1e-6


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 2000
    batch_size: int = 32
    seq_len: int = 12
    mask_ratio: float = 0.15
    peak_lr: float = 3e-3
    final_lr: float = 3e-4
    warmup_ratio: float = 0.016
    weight_decay: float = 0.1
    grad_clip: float = 2.0
    seed: int = 0
    optimizer: str = "adamw"

    def __post_init__(self):
        if not isinstance(self.steps, int) or self.steps < 0:
            raise ConfigError("steps must be a nonnegative integer", key="steps")
        for key in ("batch_size", "seq_len"):
            v = getattr(self, key)
            if not isinstance(v, int) or v <= 0:
                raise ConfigError(f"{key} must be a positive integer", key=key)
        if not 0.0 < self.mask_ratio < 1.0:
            raise ConfigError("mask_ratio must lie in (0, 1)", key="mask_ratio")
        if not self.peak_lr > 0:
            raise ConfigError("peak_lr must be positive", key="peak_lr")
        if not 0 <= self.final_lr <= self.peak_lr:
            raise ConfigError("final_lr must lie in [0, peak_lr]", key="final_lr")
        if not 0.0 <= self.warmup_ratio < 1.0:
            raise ConfigError("warmup_ratio must lie in [0, 1)", key="warmup_ratio")
        if self.steps > 0 and self.warmup_steps >= self.steps:
            raise ConfigError("warmup must end before the last step", key="warmup_ratio")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be nonnegative", key="weight_decay")
        if not self.grad_clip > 0:
            raise ConfigError("grad_clip must be positive", key="grad_clip")
        try:
            check_seed(self.seed)
        except ValueError as exc:
            raise ConfigError(str(exc), key="seed") from None
        if self.optimizer not in ("adamw", "lamb"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}", key="optimizer")

    @property
    def warmup_steps(self):
        return round(self.warmup_ratio * self.steps)

    def to_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown train keys {sorted(unknown)}", key=sorted(unknown)[0])
        return cls(**d)


def mask_tokens(batch, mask_ratio, rng, vocab_size, special_ids=SPECIAL_IDS, min_selected=0):
    """BERT-style corruption of a token matrix.

    Each non-special position is selected with probability ``mask_ratio``;
    selected positions become [MASK] (80%), a random non-special token (10%)
    or stay unchanged (10%). Labels hold the original id at selected
    positions and ``IGNORE`` elsewhere. ``min_selected`` forces that many
    picks (uniformly among maskable positions) when the draw comes up short.
    """
    if not 0.0 < mask_ratio < 1.0:
        raise ValueError("mask_ratio must lie in (0, 1)")
    batch = np.asarray(batch, dtype=np.int64)
    maskable = ~np.isin(batch, list(special_ids))
    if not maskable.any():
        raise NoMaskableTokens("every position holds a special token")
    selected = (rng.random(batch.shape) < mask_ratio) & maskable
    short = min_selected - int(selected.sum())
    if short > 0:
        free = np.flatnonzero(maskable & ~selected)
        pick = rng.choice(free, size=min(short, free.size), replace=False)
        selected.reshape(-1)[pick] = True
    labels = np.where(selected, batch, IGNORE)
    action = rng.random(batch.shape)
    first = max(special_ids) + 1
    random_tokens = rng.integers(first, vocab_size, size=batch.shape)
    masked = batch.copy()
    masked[selected & (action < 0.8)] = MASK
    swap = selected & (action >= 0.8) & (action < 0.9)
    masked[swap] = random_tokens[swap]
    return masked, labels


def mlm_loss(logits, labels) -> ad.Tensor:
    """Mean cross-entropy over positions whose label is not ``IGNORE``."""
    labels = np.asarray(labels, dtype=np.int64)
    if logits.shape[:-1] != labels.shape:
        raise ad.ShapeMismatch("mlm_loss", logits.shape, labels.shape)
    if not (labels != IGNORE).any():
        raise NoLabeledPositions("batch has no labelled positions")
    V = logits.shape[-1]
    return ad.cross_entropy(ad.reshape(logits, (-1, V)), labels.reshape(-1), IGNORE)


def lr_at(step: int, config: TrainConfig) -> float:
    """Linear warmup to ``peak_lr``, then cosine decay to ``final_lr`` at ``steps``."""
    if not 0 <= step <= config.steps:
        raise StepOutOfRange(f"step {step} outside [0, {config.steps}]")
    w = config.warmup_steps
    if step < w:
        return config.peak_lr * step / w
    span = config.steps - w
    progress = (step - w) / span if span > 0 else 1.0
    return config.final_lr + (config.peak_lr - config.final_lr) * 0.5 * (1.0 + math.cos(math.pi * progress))


def decays(name: str, shape) -> bool:
    """Weight decay hits weight matrices only, never biases, norms or mixing weights."""
    return len(shape) >= 2 and not name.startswith("mix.")


def clip_grad_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    """Scale ``grads`` in place to global norm ``max_norm`` if larger; return the pre-clip norm."""
    sq = 0.0
    for g in grads.values():
        sq += float(np.dot(g.reshape(-1), g.reshape(-1)))
    norm = math.sqrt(sq)
    if not math.isfinite(norm):
        raise NonFiniteGradient("gradient has non-finite entries")
    if norm > max_norm:
        factor = max_norm / norm
        for g in grads.values():
            g *= factor
    return norm


@dataclass
class OptimizerState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def optimizer_step(params: dict[str, ad.Tensor], opt: OptimizerState, lr: float,
                   config: TrainConfig) -> float:
    """Clip, then one AdamW (or LAMB) update of every parameter in place.

    Parameters without a gradient are treated as having gradient zero.
    Returns the global gradient norm before clipping.
    """
    grads = {k: (np.zeros_like(p.data) if p.grad is None else p.grad.copy()) for k, p in params.items()}
    norm = clip_grad_norm(grads, config.grad_clip)
    opt.step += 1
    t = opt.step
    bc1 = 1.0 - BETA1**t
    bc2 = 1.0 - BETA2**t
    for name, p in params.items():
        g = grads[name]
        m = opt.m.get(name)
        if m is None:
            m = opt.m[name] = np.zeros_like(p.data)
            opt.v[name] = np.zeros_like(p.data)
        v = opt.v[name]
        m *= BETA1
        m += (1.0 - BETA1) * g
        v *= BETA2
        v += (1.0 - BETA2) * g * g
        update = (m / bc1) / (np.sqrt(v / bc2) + ADAM_EPS)
        wd = config.weight_decay if decays(name, p.shape) else 0.0
        if config.optimizer == "adamw":
            if wd:
                p.data *= 1.0 - lr * wd
            p.data -= lr * update
        else:
            if wd:
                update = update + wd * p.data
            wnorm = float(np.linalg.norm(p.data))
            unorm = float(np.linalg.norm(update))
            trust = wnorm / unorm if wnorm > 0 and unorm > 0 else 1.0
            p.data -= lr * trust * update
    return norm


@dataclass
class TraceRow:
    step: int
    lr: float
    loss: float
    grad_norm: float


def trace_csv(rows: Sequence[TraceRow]) -> str:
    lines = ["step,lr,loss,grad_norm"]
    lines += [f"{r.step},{r.lr!r},{r.loss!r},{r.grad_norm!r}" for r in rows]
    return "\n".join(lines) + "\n"


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    trace: list[TraceRow]
    state: EncoderState


def make_checkpoint(state: EncoderState, opt: OptimizerState, step: int, config: TrainConfig,
                    vocab=None) -> Checkpoint:
    return Checkpoint(
        encoder=state.config,
        train=config,
        step=step,
        params={k: p.data.copy() for k, p in state.params.items()},
        opt_step=opt.step,
        opt_m={k: v.copy() for k, v in opt.m.items()},
        opt_v={k: v.copy() for k, v in opt.v.items()},
        vocab=None if vocab is None else list(vocab.tokens),
    )


def resume_from(checkpoint: Checkpoint, encoder_config=None):
    """Rebuild encoder and optimizer state from a checkpoint."""
    if encoder_config is not None and encoder_config.wiring != checkpoint.encoder.wiring:
        raise WiringMismatch(
            f"checkpoint wiring {checkpoint.encoder.wiring} != requested {encoder_config.wiring}")
    state = state_from_arrays(checkpoint.encoder, checkpoint.params)
    opt = OptimizerState(checkpoint.opt_step,
                         {k: v.copy() for k, v in checkpoint.opt_m.items()},
                         {k: v.copy() for k, v in checkpoint.opt_v.items()})
    return state, opt


class BatchSchedule:
    """Maps update index ``s`` (0-based) to its batch; epochs reshuffle under ``(seed, epoch)``."""

    def __init__(self, corpus: Corpus, config: TrainConfig):
        self.corpus, self.config = corpus, config
        self.per_epoch = batches_per_epoch(corpus, config.batch_size)
        if self.per_epoch == 0:
            raise EmptyCorpus("corpus yields no complete batch")
        self._epoch, self._batches = None, []

    def __getitem__(self, step):
        epoch, idx = divmod(step, self.per_epoch)
        if epoch != self._epoch:
            c = self.config
            self._batches = list(batches(self.corpus, c.seq_len, c.batch_size, c.seed, epoch))
            self._epoch = epoch
        return self._batches[idx]


def train(state: EncoderState, corpus: Corpus, config: TrainConfig,
          callbacks: Sequence[Callable] = (), *, resume: Checkpoint | None = None,
          stop_at: int | None = None, checkpoint_every: int = 0, checkpoint_dir=None,
          vocab=None, log_every: int = 100) -> TrainResult:
    """Run MLM updates ``start+1 .. stop_at`` (default ``config.steps``).

    Update ``s`` (1-based) uses the batch for index ``s-1``, masking drawn
    from stream ``(seed, "mask", s)``, dropout from ``(seed, "dropout", s)``
    and learning rate ``lr_at(s)``. Every random draw is a function of
    ``(seed, s)``, so resuming from a checkpoint at step ``k`` reproduces the
    uninterrupted run exactly. Callbacks receive ``(row, state)``.
    """
    if corpus is None or not corpus.sentences():
        raise EmptyCorpus("training corpus is empty")
    if resume is not None:
        state, opt = resume_from(resume, state.config if state is not None else None)
        start = resume.step
    else:
        opt = OptimizerState()
        start = 0
    end = config.steps if stop_at is None else stop_at
    if not start <= end <= config.steps:
        raise StepOutOfRange(f"cannot train from step {start} to {end} of {config.steps}")
    schedule = BatchSchedule(corpus, config) if end > start else None
    V = state.config.vocab_size
    trace: list[TraceRow] = []
    params = state.params
    for s in range(start + 1, end + 1):
        batch = schedule[s - 1]
        masked, labels = mask_tokens(batch.ids, config.mask_ratio, make_rng(config.seed, "mask", s),
                                     V, min_selected=1)
        drop_rng = make_rng(config.seed, "dropout", s) if state.config.dropout > 0 else None
        state.zero_grad()
        with ad.Tape() as tape:
            loss = mlm_loss(forward(state, masked, batch.keep, drop_rng), labels)
        tape.backward(loss)
        lr = lr_at(s, config)
        norm = optimizer_step(params, opt, lr, config)
        row = TraceRow(s, lr, loss.item(), norm)
        trace.append(row)
        if log_every and s % log_every == 0:
            log.info("step %d lr %.3g loss %.4f grad_norm %.3f", s, lr, row.loss, norm)
        for cb in callbacks:
            cb(row, state)
        if checkpoint_every and checkpoint_dir is not None and s % checkpoint_every == 0:
            Path(checkpoint_dir).mkdir(parents=True, exist_ok=True)
            save_checkpoint(Path(checkpoint_dir) / f"step_{s:06d}.elcb",
                            make_checkpoint(state, opt, s, config, vocab))
    state.zero_grad()
    return TrainResult(make_checkpoint(state, opt, end, config, vocab), trace, state)


def smoothed(trace: Sequence[TraceRow], window: int = 100) -> float:
    """Mean loss over the last ``window`` rows."""
    tail = [r.loss for r in trace[-window:]]
    return float(np.mean(tail))
