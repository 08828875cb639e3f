"""The toy agreement experiment: corpus, one run per preset, held-out preference accuracy."""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field

from .data import Corpus, build_vocab
from .encoder import EncoderConfig, init_encoder
from .evaluation import layer_report, minimal_pair_eval
from .grammar import gen_agreement_pairs
from .mixing import preset as get_preset
from .training import TrainConfig, smoothed, train


@dataclass(frozen=True)
class ToyConfig:
    num_pairs: int = 500
    num_sentences: int = 16000
    data_seed: int = 0
    max_vocab_size: int = 128
    num_layers: int = 6
    hidden_size: int = 32
    num_heads: int = 4
    ff_size: int = 64
    max_seq_len: int = 12
    train: TrainConfig = field(default_factory=TrainConfig)

    def encoder_config(self, preset_name, vocab_size):
        return EncoderConfig(num_layers=self.num_layers, hidden_size=self.hidden_size,
                             num_heads=self.num_heads, ff_size=self.ff_size, vocab_size=vocab_size,
                             max_seq_len=self.max_seq_len, wiring=get_preset(preset_name))


@dataclass
class ToyData:
    task: object
    vocab: object
    corpus: Corpus


def toy_data(cfg: ToyConfig) -> ToyData:
    task = gen_agreement_pairs(cfg.num_pairs, cfg.data_seed)
    docs = [[" ".join(s) for s in task.corpus_sentences(cfg.num_sentences)]]
    vocab = build_vocab(docs, cfg.max_vocab_size)
    return ToyData(task, vocab, Corpus.from_documents(docs, vocab))


@dataclass
class ToyRun:
    preset: str
    vocab_size: int
    num_tokens: int
    initial_loss: float
    uniform_loss: float
    final_smoothed_loss: float
    seconds: float
    untrained_accuracy: float | None = None
    accuracy: float | None = None
    phenomena: dict = field(default_factory=dict)
    alpha: list | None = None
    entropy: list | None = None
    initial_entropy: list | None = None
    tv_from_init: list | None = None
    result: object = field(default=None, repr=False)
    initial_state: object = field(default=None, repr=False)

    def summary(self):
        d = asdict(self)
        d.pop("result")
        d.pop("initial_state")
        return d


def run_preset(preset_name: str, data: ToyData, cfg: ToyConfig = ToyConfig(),
               evaluate: bool = False) -> ToyRun:
    """Train ``preset_name`` on the toy corpus; ``evaluate`` adds the held-out pair scores."""
    ecfg = cfg.encoder_config(preset_name, len(data.vocab))
    state = init_encoder(ecfg, cfg.train.seed)
    initial = state.copy()
    t0 = time.perf_counter()
    result = train(state, data.corpus, cfg.train, vocab=data.vocab, log_every=0)
    run = ToyRun(
        preset=preset_name,
        vocab_size=len(data.vocab),
        num_tokens=data.corpus.num_tokens(),
        initial_loss=result.trace[0].loss,
        uniform_loss=math.log(len(data.vocab)),
        final_smoothed_loss=smoothed(result.trace, 100),
        seconds=time.perf_counter() - t0,
        result=result,
        initial_state=initial,
    )
    if ecfg.wiring.is_elc:
        rep = layer_report(result.state)
        run.alpha = [a.tolist() for a in rep.alpha]
        run.entropy, run.initial_entropy, run.tv_from_init = rep.entropy, rep.initial_entropy, rep.tv_from_init
    if evaluate:
        pairs = data.task.test_pairs
        run.untrained_accuracy = minimal_pair_eval(initial, data.vocab, pairs).accuracy
        ev = minimal_pair_eval(result.state, data.vocab, pairs)
        run.accuracy = ev.accuracy
        run.phenomena = {k: v.accuracy for k, v in ev.phenomena.items()}
    return run
