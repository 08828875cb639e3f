import pytest

from elcbert.data import Corpus, build_vocab
from elcbert.encoder import EncoderConfig
from elcbert.grammar import gen_agreement_pairs
from elcbert.mixing import PRESETS

TINY = dict(num_layers=2, hidden_size=8, num_heads=2, ff_size=16, max_seq_len=12)


@pytest.fixture(scope="session")
def tiny_corpus():
    """A few hundred agreement sentences with their vocabulary."""
    task = gen_agreement_pairs(20, seed=0)
    docs = [[" ".join(s) for s in task.corpus_sentences(320)]]
    vocab = build_vocab(docs, 128)
    return Corpus.from_documents(docs, vocab), vocab


def tiny_config(vocab_size, preset="elc", **kw):
    return EncoderConfig(**{**TINY, **kw}, vocab_size=vocab_size, wiring=PRESETS[preset])


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
