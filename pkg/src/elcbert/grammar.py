"""Synthetic subject-verb agreement grammar.

Sentences follow ``DET NOUN [that DET NOUN VERB] VERB DET NOUN .`` where
every determiner is number-marked, the optional object relative clause
carries its own (agreeing) subject, and the main verb agrees with the main
subject across it. A minimal pair flips the number of the main verb only.

Noun lemmas are split into a training set and a held-out set. Held-out
nouns never head a subject in the training corpus; they occur there only as
main-clause objects, so they are in the vocabulary but their
subject-agreement behaviour has never been observed.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .evaluation import MinimalPair
from .rng import make_rng

SG, PL = 0, 1


@dataclass(frozen=True)
class Lexicon:
    det: tuple[tuple[str, ...], tuple[str, ...]]
    train_nouns: tuple[tuple[str, str], ...]
    test_nouns: tuple[tuple[str, str], ...]
    verbs: tuple[tuple[str, str], ...]
    rel: str = "that"
    end: str = "."


DEFAULT_LEXICON = Lexicon(
    det=(("a", "this", "one"), ("these", "two", "many")),
    train_nouns=(
        ("dog", "dogs"), ("cat", "cats"), ("bird", "birds"), ("horse", "horses"),
        ("teacher", "teachers"), ("farmer", "farmers"), ("doctor", "doctors"),
        ("student", "students"),
    ),
    test_nouns=(("lawyer", "lawyers"), ("pilot", "pilots"), ("king", "kings"), ("baker", "bakers")),
    verbs=(
        ("sees", "see"), ("likes", "like"), ("helps", "help"), ("finds", "find"),
        ("knows", "know"), ("calls", "call"),
    ),
)

SIMPLE = "agreement_simple"
ACROSS_RC = "agreement_across_rc"


@dataclass(frozen=True)
class Skeleton:
    """Lexical choices of one sentence, independent of the main subject's number."""

    det: int
    noun: int
    verb: int
    rc: tuple[int, int, int, int] | None  # (number, det, noun, verb)
    obj: tuple[int, int, int]  # (number, det, noun) over train + test nouns


def _draw_skeleton(rng, lex: Lexicon, subject_pool_size: int, rc_prob: float) -> Skeleton:
    nd = len(lex.det[0])
    rc = None
    if rng.random() < rc_prob:
        rc = (int(rng.integers(2)), int(rng.integers(nd)), int(rng.integers(len(lex.train_nouns))),
              int(rng.integers(len(lex.verbs))))
    n_obj = len(lex.train_nouns) + len(lex.test_nouns)
    obj = (int(rng.integers(2)), int(rng.integers(nd)), int(rng.integers(n_obj)))
    return Skeleton(int(rng.integers(nd)), int(rng.integers(subject_pool_size)),
                    int(rng.integers(len(lex.verbs))), rc, obj)


def realize(sk: Skeleton, number: int, subject_nouns, lex: Lexicon = DEFAULT_LEXICON,
            verb_number: int | None = None) -> list[str]:
    verb_number = number if verb_number is None else verb_number
    words = [lex.det[number][sk.det], subject_nouns[sk.noun][number]]
    if sk.rc is not None:
        rn, rd, rnoun, rv = sk.rc
        words += [lex.rel, lex.det[rn][rd], lex.train_nouns[rnoun][rn], lex.verbs[rv][rn]]
    words.append(lex.verbs[sk.verb][verb_number])
    on, od, onoun = sk.obj
    all_nouns = lex.train_nouns + lex.test_nouns
    words += [lex.det[on][od], all_nouns[onoun][on], lex.end]
    return words


def _pairs(rng, n, subject_nouns, lex, rc_prob):
    """``n`` pairs in sg/pl twins sharing one skeleton, so the two numbers are balanced."""
    pairs = []
    sk = None
    for i in range(n):
        number = SG if i % 2 == 0 else PL
        if number == SG:
            sk = _draw_skeleton(rng, lex, len(subject_nouns), rc_prob)
        good = realize(sk, number, subject_nouns, lex)
        bad = realize(sk, number, subject_nouns, lex, verb_number=1 - number)
        pairs.append(MinimalPair(tuple(good), tuple(bad), ACROSS_RC if sk.rc else SIMPLE))
    return pairs


@dataclass
class AgreementTask:
    seed: int
    lexicon: Lexicon
    test_pairs: list[MinimalPair]
    train_pairs: list[MinimalPair]
    rc_prob: float

    def corpus_sentences(self, num_sentences: int) -> list[list[str]]:
        """Grammatical training sentences; subjects use training nouns only."""
        rng = make_rng(self.seed, "grammar", 2)
        lex = self.lexicon
        out = []
        for _ in range(num_sentences):
            sk = _draw_skeleton(rng, lex, len(lex.train_nouns), self.rc_prob)
            out.append(realize(sk, int(rng.integers(2)), lex.train_nouns, lex))
        return out

    def corpus_text(self, num_sentences: int, doc_size: int = 50) -> str:
        lines = []
        for i, s in enumerate(self.corpus_sentences(num_sentences)):
            if i and i % doc_size == 0:
                lines.append("")
            lines.append(" ".join(s))
        return "\n".join(lines) + "\n"


def gen_agreement_pairs(n: int, seed: int = 0, lexicon: Lexicon = DEFAULT_LEXICON,
                        rc_prob: float = 0.3) -> AgreementTask:
    """``n`` held-out test pairs (held-out subject nouns) and ``n`` training-noun pairs."""
    if n < 1:
        raise ValueError("n must be at least 1")
    test = _pairs(make_rng(seed, "grammar", 0), n, lexicon.test_nouns, lexicon, rc_prob)
    train = _pairs(make_rng(seed, "grammar", 1), n, lexicon.train_nouns, lexicon, rc_prob)
    return AgreementTask(seed, lexicon, test, train, rc_prob)


def agreement_checker(lexicon: Lexicon = DEFAULT_LEXICON):
    """Regular-expression recognizer for grammatical sentences, built from word classes only."""

    def alt(words):
        return "(?:" + "|".join(re.escape(w) for w in words) + ")"

    nouns = lexicon.train_nouns + lexicon.test_nouns
    np_ = [alt(lexicon.det[k]) + " " + alt(n[k] for n in nouns) for k in (SG, PL)]
    verb = [alt(v[k] for v in lexicon.verbs) for k in (SG, PL)]
    clause = [np_[k] + " " + verb[k] for k in (SG, PL)]
    rc = " " + re.escape(lexicon.rel) + " (?:" + clause[SG] + "|" + clause[PL] + ")"
    main = "|".join(np_[k] + "(?:" + rc + ")? " + verb[k] for k in (SG, PL))
    obj = "(?:" + np_[SG] + "|" + np_[PL] + ")"
    pattern = re.compile("^(?:" + main + ") " + obj + " " + re.escape(lexicon.end) + "$")

    def accepts(tokens) -> bool:
        return pattern.match(" ".join(tokens)) is not None

    return accepts
