"""Finite-difference check of the full MLM loss on a tiny encoder."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .encoder import EncoderConfig, forward, init_encoder
from .mixing import preset as get_preset
from .rng import make_rng
from .training import IGNORE, mlm_loss

DESK = dict(num_layers=2, hidden_size=8, num_heads=2, ff_size=16, vocab_size=11, max_seq_len=5)


def desk_problem(preset_name: str, seed: int = 0, init_std: float = 0.3):
    """State, inputs and labels for a 2-layer hidden-8 model on two length-5 sequences.

    The second sequence ends in one padded position so masking is exercised.
    """
    cfg = EncoderConfig(**DESK, wiring=get_preset(preset_name), init_std=init_std)
    state = init_encoder(cfg, seed)
    rng = make_rng(seed, "gradcheck")
    # move biases, gains and mixing logits off their symmetric init values
    for p in state.params.values():
        if p.ndim == 1:
            p.data += rng.normal(0.0, 0.3, size=p.shape)
    ids = rng.integers(5, cfg.vocab_size, size=(2, 5))
    keep = np.ones((2, 5), dtype=bool)
    keep[1, -1] = False
    ids[1, -1] = 0
    labels = np.full((2, 5), IGNORE)
    labels[0, [1, 3]] = ids[0, [1, 3]]
    labels[1, [0, 2]] = ids[1, [0, 2]]
    ids[0, 1] = ids[1, 2] = 2  # [MASK]
    return state, ids, keep, labels


def desk_gradcheck(preset_name: str, seed: int = 0, corrupt: bool = False, h: float = 1e-4):
    """Return ``(max relative error, number of entries checked)`` over every parameter.

    ``corrupt`` flips the sign of the largest analytic gradient entry first,
    which the check must then report.
    """
    state, ids, keep, labels = desk_problem(preset_name, seed)
    params = state.parameters()

    def f():
        return mlm_loss(forward(state, ids, keep), labels)

    analytic = None
    if corrupt:
        state.zero_grad()
        with ad.Tape() as tape:
            loss = f()
        tape.backward(loss)
        analytic = [p.grad.copy() for p in params]
        k = int(np.argmax([np.abs(g).max() for g in analytic]))
        g = analytic[k].reshape(-1)
        g[np.argmax(np.abs(g))] *= -1.0
        state.zero_grad()
    err = ad.finite_diff_check(f, params, h=h, analytic=analytic)
    return err, sum(p.size for p in params)
