"""Command line entry point: ``elcbert {train,eval,inspect,gradcheck,gen-data}``.

Exit codes: 0 success, 1 usage/config/input error, 2 runtime or numerical failure.
``ELCB_LOG`` (error, info, debug) sets log verbosity.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

from . import errors
from .checkpoint import load_checkpoint, save_checkpoint
from .data import Corpus, build_vocab, ingest
from .encoder import EncoderConfig, init_encoder
from .evaluation import layer_report, minimal_pair_eval, read_pairs, state_from_checkpoint, write_pairs
from .gradcheck import desk_gradcheck
from .grammar import gen_agreement_pairs
from .mixing import preset
from .training import TrainConfig, make_checkpoint, OptimizerState, trace_csv, train

log = logging.getLogger("elcbert")

CORPUS_SENTENCES = 16000


@dataclass(frozen=True)
class RunConfig:
    """Flat JSON run description: encoder and training fields plus data, output and preset."""

    preset: str
    train_files: list
    out_dir: str
    steps: int
    num_layers: int = 6
    hidden_size: int = 32
    num_heads: int = 4
    ff_size: int = 64
    max_seq_len: int = 12
    dropout: float = 0.0
    init_std: float = 0.02
    ln_eps: float = 1e-7
    max_vocab_size: int = 128
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
    checkpoint_every: int = 0
    log_every: int = 100

    REQUIRED = ("preset", "train_files", "out_dir", "steps")

    @classmethod
    def from_dict(cls, d: dict, base_dir="."):
        if not isinstance(d, dict):
            raise errors.ConfigError("config must be a JSON object")
        known = {f.name for f in fields(cls)}
        for key in sorted(d):
            if key not in known:
                raise errors.ConfigError(f"unknown config key {key!r}", key=key)
        for key in cls.REQUIRED:
            if key not in d:
                raise errors.ConfigError(f"missing required config key {key!r}", key=key)
        d = dict(d)
        files = d["train_files"]
        if isinstance(files, str):
            files = [files]
        if not isinstance(files, list) or not files:
            raise errors.ConfigError("train_files must be a non-empty list of paths", key="train_files")
        base = Path(base_dir)
        d["train_files"] = [str(base / f) for f in files]
        d["out_dir"] = str(base / d["out_dir"])
        cfg = cls(**d)
        preset(cfg.preset)
        cfg.train_config()
        return cfg

    @classmethod
    def load(cls, path):
        path = Path(path)
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, ValueError) as exc:
            raise errors.ConfigError(f"cannot read config {path}: {exc}") from None
        return cls.from_dict(raw, path.parent)

    def encoder_config(self, vocab_size) -> EncoderConfig:
        return EncoderConfig(
            num_layers=self.num_layers, hidden_size=self.hidden_size, num_heads=self.num_heads,
            ff_size=self.ff_size, vocab_size=vocab_size, max_seq_len=self.max_seq_len,
            wiring=preset(self.preset), dropout=self.dropout, ln_eps=self.ln_eps,
            init_std=self.init_std,
        )

    def train_config(self) -> TrainConfig:
        names = {f.name for f in fields(TrainConfig)}
        return TrainConfig(**{k: getattr(self, k) for k in names})


def run_training(cfg: RunConfig):
    """Library form of ``elcbert train``; returns the TrainResult."""
    docs = ingest(cfg.train_files)
    vocab = build_vocab(docs, cfg.max_vocab_size)
    corpus = Corpus.from_documents(docs, vocab)
    ecfg = cfg.encoder_config(len(vocab))
    if cfg.seq_len > ecfg.max_seq_len:
        raise errors.ConfigError("seq_len exceeds max_seq_len", key="seq_len")
    tcfg = cfg.train_config()
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    vocab.save(out / "vocab.txt")
    state = init_encoder(ecfg, tcfg.seed)
    save_checkpoint(out / "initial.elcb", make_checkpoint(state, OptimizerState(), 0, tcfg, vocab))
    result = train(state, corpus, tcfg, checkpoint_every=cfg.checkpoint_every,
                   checkpoint_dir=out / "checkpoints", vocab=vocab, log_every=cfg.log_every)
    save_checkpoint(out / "final.elcb", result.checkpoint)
    (out / "loss.csv").write_text(trace_csv(result.trace), encoding="utf-8")
    if ecfg.wiring.is_elc:
        layer_report(result.checkpoint).write(out)
    return result


def cmd_train(args):
    cfg = RunConfig.load(args.config)
    result = run_training(cfg)
    last = result.trace[-1].loss if result.trace else float("nan")
    print(f"trained {result.checkpoint.step} steps; final loss {last:.4f}; outputs in {cfg.out_dir}")
    return 0


def _load_for_eval(path):
    ckpt = load_checkpoint(path)
    if not ckpt.vocab:
        raise errors.ConfigError(f"checkpoint {path} carries no vocabulary")
    from .data import Vocab

    return ckpt, Vocab(list(ckpt.vocab))


def cmd_eval(args):
    ckpt, vocab = _load_for_eval(args.checkpoint)
    try:
        pairs = read_pairs(args.pairs)
    except OSError as exc:
        raise errors.IoFailure(args.pairs, str(exc)) from None
    result = minimal_pair_eval(state_from_checkpoint(ckpt), vocab, pairs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "results.csv").write_text(result.to_csv(), encoding="utf-8")
    print(f"accuracy {result.accuracy!r} ({result.scored} scored, {result.skipped} skipped)")
    return 0


def cmd_inspect(args):
    rep = layer_report(load_checkpoint(args.checkpoint))
    rep.write(args.out)
    for n, (h, k) in enumerate(zip(rep.entropy, rep.argmax), start=1):
        print(f"dest {n}: argmax source {k}, entropy {h:.6f}")
    return 0


def cmd_gradcheck(args):
    err, count = desk_gradcheck(args.preset, args.seed, corrupt=args.corrupt_grad)
    print(f"max relative error {err:.3e} over {count} entries ({args.preset})")
    return 0 if err < 1e-4 else 2


def gen_data(out_dir, n, seed, num_sentences=CORPUS_SENTENCES):
    task = gen_agreement_pairs(n, seed)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "corpus.txt").write_text(task.corpus_text(num_sentences), encoding="utf-8")
    write_pairs(out / "train_pairs.tsv", task.train_pairs)
    write_pairs(out / "test_pairs.tsv", task.test_pairs)
    return task


def cmd_gen_data(args):
    try:
        gen_data(args.out, args.n, args.seed)
    except OSError as exc:
        raise errors.IoFailure(args.out, str(exc)) from None
    print(f"wrote corpus.txt, train_pairs.tsv, test_pairs.tsv to {args.out}")
    return 0


def _u64(text):
    v = int(text)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("expected an unsigned 64-bit integer")
    return v


def build_parser():
    p = argparse.ArgumentParser(prog="elcbert", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="pretrain an encoder from a JSON run config")
    t.add_argument("--config", required=True)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="minimal-pair preference accuracy")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--pairs", required=True)
    e.add_argument("--out", default=".")
    e.set_defaults(func=cmd_eval)

    i = sub.add_parser("inspect", help="export the layer-weight matrix as CSV and PGM")
    i.add_argument("--checkpoint", required=True)
    i.add_argument("--out", default=".")
    i.set_defaults(func=cmd_inspect)

    g = sub.add_parser("gradcheck", help="finite-difference check of the desk model")
    g.add_argument("--preset", required=True)
    g.add_argument("--seed", type=_u64, default=0)
    g.add_argument("--corrupt-grad", action="store_true", help=argparse.SUPPRESS)
    g.set_defaults(func=cmd_gradcheck)

    d = sub.add_parser("gen-data", help="write the synthetic agreement corpus and pair files")
    d.add_argument("kind", choices=["agreement"])
    d.add_argument("--n", type=_u64, default=500)
    d.add_argument("--seed", type=_u64, default=0)
    d.add_argument("--out", required=True)
    d.set_defaults(func=cmd_gen_data)
    return p


_INPUT_ERRORS = (
    errors.ConfigError, errors.CorruptCheckpoint, errors.VersionMismatch, errors.WiringMismatch,
    errors.NoScorablePairs, errors.NotElcCheckpoint, errors.IoFailure, errors.InvalidUtf8,
    errors.EmptyCorpus, errors.InvalidPair,
)


def main(argv=None):
    level = os.environ.get("ELCB_LOG", "error").upper()
    logging.basicConfig(level=getattr(logging, level, logging.ERROR), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    if getattr(args, "n", 1) < 1:
        print("error: --n must be at least 1", file=sys.stderr)
        return 1
    try:
        return args.func(args)
    except _INPUT_ERRORS as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except (ValueError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
