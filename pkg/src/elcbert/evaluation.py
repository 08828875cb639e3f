"""Zero-shot grammatical preference via pseudo-log-likelihood, and layer-weight reports."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .autodiff import no_grad
from .data import CLS, MASK, SEP, UNK, Vocab
from .encoder import EncoderState, forward, state_from_arrays
from .errors import EmptySentence, InvalidPair, NoScorablePairs, NotElcCheckpoint, SequenceTooLong
from .mixing import alpha_csv, alpha_pgm, entropy, init_mix_weights, mix_alphas, rescale_for_display


@dataclass(frozen=True)
class MinimalPair:
    good: tuple[str, ...]
    bad: tuple[str, ...]
    phenomenon: str = "default"

    def __post_init__(self):
        object.__setattr__(self, "good", tuple(self.good))
        object.__setattr__(self, "bad", tuple(self.bad))
        if self.good == self.bad:
            raise InvalidPair("good and bad sentences are identical")


def _log_softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def pll_terms(state: EncoderState, ids: Sequence[int]) -> np.ndarray:
    """``log p(token_j | sentence with position j masked)`` for every token ``j``.

    Each masked copy is one row of a single batched forward pass; rows do not
    interact.
    """
    ids = list(ids)
    L = len(ids)
    if L == 0:
        raise EmptySentence("cannot score an empty sentence")
    if L + 2 > state.config.max_seq_len:
        raise SequenceTooLong(f"sentence of {L} tokens does not fit max_seq_len")
    row = np.array([CLS] + ids + [SEP], dtype=np.int64)
    batch = np.tile(row, (L, 1))
    batch[np.arange(L), np.arange(1, L + 1)] = MASK
    with no_grad():
        logits = forward(state, batch).data
    logp = _log_softmax(logits[np.arange(L), np.arange(1, L + 1)])
    return logp[np.arange(L), ids]


def pll_score(state: EncoderState, ids: Sequence[int]) -> float:
    return float(pll_terms(state, ids).sum())


@dataclass
class PhenomenonResult:
    count: int = 0
    correct: float = 0.0
    skipped: int = 0

    @property
    def accuracy(self):
        return self.correct / self.count if self.count else float("nan")


@dataclass
class EvalResult:
    accuracy: float
    phenomena: dict[str, PhenomenonResult] = field(default_factory=dict)
    scored: int = 0
    skipped: int = 0

    def to_csv(self) -> str:
        lines = ["phenomenon,count,accuracy,skipped"]
        for name in sorted(self.phenomena):
            r = self.phenomena[name]
            lines.append(f"{name},{r.count},{r.accuracy!r},{r.skipped}")
        lines.append(f"all,{self.scored},{self.accuracy!r},{self.skipped}")
        return "\n".join(lines) + "\n"


def minimal_pair_eval(state: EncoderState, vocab: Vocab, pairs: Sequence[MinimalPair]) -> EvalResult:
    """Fraction of pairs whose good sentence outscores the bad one; exact ties count half.

    Pairs containing out-of-vocabulary tokens are skipped and counted.
    """
    phen: dict[str, PhenomenonResult] = {}
    correct, scored, skipped = 0.0, 0, 0
    for pair in pairs:
        r = phen.setdefault(pair.phenomenon, PhenomenonResult())
        good, bad = vocab.encode(pair.good), vocab.encode(pair.bad)
        if UNK in good or UNK in bad:
            r.skipped += 1
            skipped += 1
            continue
        sg, sb = pll_score(state, good), pll_score(state, bad)
        c = 1.0 if sg > sb else 0.5 if sg == sb else 0.0
        r.count += 1
        r.correct += c
        scored += 1
        correct += c
    if scored == 0:
        raise NoScorablePairs(f"no scorable pairs ({skipped} skipped)")
    return EvalResult(correct / scored, phen, scored, skipped)


def write_pairs(path, pairs: Sequence[MinimalPair]):
    text = "".join(f"{' '.join(p.good)}\t{' '.join(p.bad)}\t{p.phenomenon}\n" for p in pairs)
    Path(path).write_text(text, encoding="utf-8")


def read_pairs(path) -> list[MinimalPair]:
    from .data import tokenize

    pairs = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise ValueError(f"{path}:{lineno}: expected good<TAB>bad<TAB>phenomenon")
        pairs.append(MinimalPair(tuple(tokenize(parts[0])), tuple(tokenize(parts[1])), parts[2]))
    return pairs


@dataclass
class LayerReport:
    alpha: list[np.ndarray]
    rescaled: list[np.ndarray]
    entropy: list[float]
    initial_entropy: list[float]
    argmax: list[int]
    embedding_profile: list[float]
    tv_from_init: list[float]

    def csv(self) -> str:
        return alpha_csv(self.alpha)

    def pgm(self) -> str:
        return alpha_pgm(self.alpha)

    def write(self, out_dir):
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "alpha.csv").write_text(self.csv(), encoding="utf-8")
        (out / "alpha.pgm").write_text(self.pgm(), encoding="ascii")


def layer_report(source) -> LayerReport:
    """Summarise learnt mixing weights from a Checkpoint or an EncoderState."""
    if isinstance(source, EncoderState):
        config = source.config
        raws = {n: t.data for n, t in source.mix.raw.items()} if source.mix else {}
    else:
        config = source.encoder
        raws = {int(k.split(".")[1]): v for k, v in source.params.items() if k.startswith("mix.")}
    if not config.wiring.is_elc:
        raise NotElcCheckpoint("layer report needs a checkpoint with ELC wiring")
    alpha, init_alpha = [], []
    for n in sorted(raws):
        alpha.append(mix_alphas(raws[n]))
        if n <= config.num_layers:
            init_alpha.append(mix_alphas(init_mix_weights(n, config.wiring.init)))
        else:
            init_alpha.append(mix_alphas(np.zeros(n)))
    return LayerReport(
        alpha=alpha,
        rescaled=rescale_for_display(alpha),
        entropy=[entropy(a) for a in alpha],
        initial_entropy=[entropy(a) for a in init_alpha],
        argmax=[int(np.argmax(a)) for a in alpha],
        embedding_profile=[float(a[0]) for a in alpha],
        tv_from_init=[float(0.5 * np.abs(a - b).sum()) for a, b in zip(alpha, init_alpha)],
    )


def state_from_checkpoint(ckpt) -> EncoderState:
    return state_from_arrays(ckpt.encoder, ckpt.params)
