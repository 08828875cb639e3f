"""Plain-text corpus ingestion, word-level vocabulary and deterministic batching.

Input files are UTF-8; each non-blank line is one sentence and blank lines
separate documents. Text is lowercased and split into word runs, with every
other non-space character becoming its own token.
"""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .errors import EmptyCorpus, InvalidUtf8, IoFailure
from .rng import make_rng

PAD, UNK, MASK, CLS, SEP = 0, 1, 2, 3, 4
RESERVED = ("[PAD]", "[UNK]", "[MASK]", "[CLS]", "[SEP]")
SPECIAL_IDS = frozenset(range(len(RESERVED)))

_TOKEN = re.compile(r"\w+|[^\w\s]")


def normalize_line(line: str) -> str:
    return " ".join(line.split())


def tokenize(text: str) -> list[str]:
    return _TOKEN.findall(text.lower())


def detokenize(tokens: Sequence[str]) -> str:
    return " ".join(tokens)


def _read_text(path: Path) -> str:
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise IoFailure(path, exc.strerror or str(exc)) from exc
    try:
        return raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise InvalidUtf8(path, exc.start) from None


def ingest(paths) -> list[list[str]]:
    """Read files (sorted by path) into documents, each a list of normalized lines."""
    if isinstance(paths, (str, Path)):
        paths = [paths]
    docs = []
    for path in sorted(Path(p) for p in paths):
        text = _read_text(path).replace("\r\n", "\n").replace("\r", "\n")
        current: list[str] = []
        for line in text.split("\n"):
            line = normalize_line(line)
            if line:
                current.append(line)
            elif current:
                docs.append(current)
                current = []
        if current:
            docs.append(current)
    return docs


@dataclass
class Vocab:
    tokens: list[str]
    index: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        if tuple(self.tokens[: len(RESERVED)]) != RESERVED:
            raise ValueError("vocabulary must start with the reserved block")
        self.index = {t: i for i, t in enumerate(self.tokens)}
        if len(self.index) != len(self.tokens):
            raise ValueError("duplicate tokens in vocabulary")

    def __len__(self):
        return len(self.tokens)

    def encode(self, tokens: Sequence[str]) -> list[int]:
        return [self.index.get(t, UNK) if t not in RESERVED else UNK for t in tokens]

    def encode_text(self, text: str) -> list[int]:
        return self.encode(tokenize(text))

    def decode(self, ids: Sequence[int]) -> list[str]:
        return [self.tokens[i] for i in ids]

    def save(self, path):
        lines = [
            "# elcbert vocabulary: one token per line, id = line index + 5",
            "# reserved ids: " + " ".join(f"{i}={t}" for i, t in enumerate(RESERVED)),
        ]
        lines.extend(self.tokens[len(RESERVED):])
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path):
        text = _read_text(Path(path))
        lines = text.split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        i = 0
        while i < len(lines) and lines[i].startswith("# "):
            i += 1
        return cls(list(RESERVED) + lines[i:])


def build_vocab(documents, max_size: int) -> Vocab:
    """Frequency-ranked lowercased tokens (ties lexicographic), truncated to ``max_size`` ids."""
    if max_size <= len(RESERVED):
        raise ValueError(f"max_size must exceed the {len(RESERVED)} reserved ids")
    counts = Counter(t for doc in documents for line in doc for t in tokenize(line))
    if not counts:
        raise EmptyCorpus("no tokens to build a vocabulary from")
    ranked = sorted(counts, key=lambda t: (-counts[t], t))
    return Vocab(list(RESERVED) + ranked[: max_size - len(RESERVED)])


@dataclass
class Corpus:
    documents: list[list[list[int]]]

    @classmethod
    def from_documents(cls, documents, vocab: Vocab):
        return cls([[vocab.encode_text(line) for line in doc] for doc in documents])

    def sentences(self) -> list[list[int]]:
        return [s for doc in self.documents for s in doc if s]

    def num_tokens(self):
        return sum(len(s) for s in self.sentences())


def pack(sentence: Sequence[int], seq_len: int) -> tuple[np.ndarray, np.ndarray]:
    """``[CLS] tokens [SEP]`` truncated or [PAD]-filled to ``seq_len``, plus the keep-mask."""
    body = list(sentence)[: seq_len - 2]
    ids = np.full(seq_len, PAD, dtype=np.int64)
    ids[0] = CLS
    ids[1:1 + len(body)] = body
    ids[1 + len(body)] = SEP
    keep = np.zeros(seq_len, dtype=bool)
    keep[: len(body) + 2] = True
    return ids, keep


@dataclass
class Batch:
    ids: np.ndarray
    keep: np.ndarray


def batches(corpus: Corpus, seq_len: int, batch_size: int, seed: int, epoch: int) -> Iterator[Batch]:
    """One epoch of shuffled, fixed-shape batches; the incomplete tail batch is dropped."""
    if seq_len < 3:
        raise ValueError("seq_len must be at least 3")
    sents = corpus.sentences()
    if len(sents) < batch_size or batch_size < 1:
        raise EmptyCorpus(f"corpus has {len(sents)} sentences, fewer than one batch of {batch_size}")
    order = make_rng(seed, "shuffle", epoch).permutation(len(sents))
    for start in range(0, len(order) - batch_size + 1, batch_size):
        packed = [pack(sents[j], seq_len) for j in order[start:start + batch_size]]
        yield Batch(np.stack([p[0] for p in packed]), np.stack([p[1] for p in packed]))


def batches_per_epoch(corpus: Corpus, batch_size: int) -> int:
    return len(corpus.sentences()) // batch_size
