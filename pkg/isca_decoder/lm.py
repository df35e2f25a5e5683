"""
Back-off n-gram language models: absolute-discount training, ARPA I/O, scoring.

The table stores ARPA-convention log10 values; every score this module returns
is natural-log.
"""

import math
from collections import Counter, defaultdict
from pathlib import Path
from typing import Iterable, Optional, Sequence

from pydantic import BaseModel, ConfigDict, PrivateAttr, ValidationError, model_validator

from .config import DEFAULT_DISCOUNT, log
from .constants import (
    ARPA_MISSING_LOG10,
    BOS,
    EOS,
    LN10,
    MAX_LM_ORDER,
    UNK,
)
from .errors import ConfigError, InputFormatError
from .formats import atomic_write_text, fmt_float

Ngram = tuple[str, ...]


class NGramLM(BaseModel):
    """Back-off n-gram model.

    table maps an n-gram to (log10 probability, log10 backoff or None).
    """

    model_config = ConfigDict(frozen=True)

    order: int
    table: dict[Ngram, tuple[float, Optional[float]]]
    vocabulary: tuple[str, ...]

    _vocab: frozenset[str] = PrivateAttr(default_factory=frozenset)

    @model_validator(mode="after")
    def _histories_have_backoffs(self) -> "NGramLM":
        if not 1 <= self.order <= MAX_LM_ORDER:
            raise ValueError(f"order must be in 1..{MAX_LM_ORDER}, got {self.order}")
        for ngram in self.table:
            if not 1 <= len(ngram) <= self.order:
                raise ValueError(f"n-gram {' '.join(ngram)!r} longer than order {self.order}")
            if len(ngram) > 1:
                hist = self.table.get(ngram[:-1])
                if hist is None or hist[1] is None:
                    raise ValueError(f"history {' '.join(ngram[:-1])!r} has no backoff weight")
        return self

    def model_post_init(self, __context) -> None:
        self._vocab = frozenset(self.vocabulary)

    @property
    def predicted_vocabulary(self) -> list[str]:
        """Words that can follow a history (everything except <s>)."""
        return [w for w in self.vocabulary if w != BOS]

    def map_word(self, word: str) -> str:
        return word if word in self._vocab else UNK

    def _log10(self, word: str, context: Ngram) -> float:
        entry = self.table.get(context + (word,))
        if entry is not None:
            return entry[0]
        if not context:
            unk = self.table.get((UNK,))
            return unk[0] if unk is not None and word != BOS else ARPA_MISSING_LOG10
        hist = self.table.get(context)
        backoff = hist[1] if hist is not None and hist[1] is not None else 0.0
        return backoff + self._log10(word, context[1:])

    def conditional_logprob(self, word: str, history: Sequence[str]) -> float:
        """ln P(word | history); history is truncated to order−1 words."""
        context = tuple(self.map_word(w) for w in history)
        keep = self.order - 1
        context = context[-keep:] if keep > 0 else ()
        return self._log10(self.map_word(word), context) * LN10

    def history_mass(self, history: Sequence[str]) -> float:
        """Σ_w P(w | history) over the predicted vocabulary (should be 1)."""
        return math.fsum(math.exp(self.conditional_logprob(w, history)) for w in self.predicted_vocabulary)

    def initial_state(self) -> Ngram:
        return (BOS,) if self.order > 1 else ()

    def advance(self, state: Ngram, word: str) -> Ngram:
        """Next LM state: the last order−1 words of *state* + *word*."""
        keep = self.order - 1
        if keep <= 0:
            return ()
        return (state + (self.map_word(word),))[-keep:]


def score_sequence(lm: NGramLM, words: Sequence[str], include_eos: bool = True) -> float:
    """ln P(w_1 … w_n [</s>]) with an implicit <s> context."""
    history: list[str] = [BOS]
    total = 0.0
    targets = list(words) + ([EOS] if include_eos else [])
    for w in targets:
        total += lm.conditional_logprob(w, history)
        history.append(w)
    return total


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


def read_corpus(path: Path) -> list[list[str]]:
    """One sentence per line, whitespace tokenised, uppercased."""
    return [line.upper().split() for line in Path(path).read_text(encoding="utf-8").splitlines() if line.strip()]


def _count(corpus: Sequence[Sequence[str]], order: int) -> list[Counter]:
    counts = [Counter() for _ in range(order + 1)]
    for sentence in corpus:
        toks = [BOS, *sentence, EOS]
        for i in range(1, len(toks)):
            for n in range(1, order + 1):
                if i - n + 1 < 0:
                    break
                counts[n][tuple(toks[i - n + 1:i + 1])] += 1
    return counts


def train_ngram(corpus: Sequence[Sequence[str]], order: int = 3,
                discount: float = DEFAULT_DISCOUNT) -> NGramLM:
    """Absolute-discounting back-off model.

    Each seen n-gram loses *discount* counts; the freed mass goes to the
    back-off distribution (to <unk> at the unigram level).
    """
    if not corpus:
        raise ConfigError("cannot train a language model on an empty corpus")
    if not 1 <= order <= MAX_LM_ORDER:
        raise ConfigError(f"order must be in 1..{MAX_LM_ORDER}, got {order}")
    if not 0.0 < discount < 1.0:
        raise ConfigError(f"discount must lie in (0, 1), got {discount}")

    counts = _count(corpus, order)
    words = sorted({w for (w,) in counts[1]} - {EOS, UNK})
    vocabulary = (BOS, EOS, UNK, *words)

    probs: dict[Ngram, float] = {}
    backoffs: dict[Ngram, float] = {}

    total = sum(counts[1].values())
    for (w,), c in counts[1].items():
        probs[(w,)] = (c - discount) / total
    probs[(UNK,)] = probs.get((UNK,), 0.0) + discount * len(counts[1]) / total
    probs[(BOS,)] = 0.0

    def lower_prob(word: str, context: Ngram) -> float:
        while True:
            p = probs.get(context + (word,))
            if p is not None and (context or word != BOS):
                return p
            if not context:
                return probs[(UNK,)] if word != BOS else 0.0
            bo = backoffs.get(context, 1.0)
            return bo * lower_prob(word, context[1:])

    for n in range(2, order + 1):
        by_history: dict[Ngram, dict[str, int]] = defaultdict(dict)
        for gram, c in counts[n].items():
            by_history[gram[:-1]][gram[-1]] = c
        for hist, followers in by_history.items():
            c_hist = sum(followers.values())
            seen = {w: (c - discount) / c_hist for w, c in followers.items()}
            left = 1.0 - sum(seen.values())
            denom = 1.0 - sum(lower_prob(w, hist[1:]) for w in followers)
            if denom <= 1e-12:
                scale = 1.0 / sum(seen.values())
                seen = {w: p * scale for w, p in seen.items()}
                backoffs[hist] = 1.0
            else:
                backoffs[hist] = left / denom
            for w, p in seen.items():
                probs[hist + (w,)] = p

    table: dict[Ngram, tuple[float, Optional[float]]] = {}
    for gram, p in probs.items():
        lp = math.log10(p) if p > 0 else ARPA_MISSING_LOG10
        bo: Optional[float] = None
        if len(gram) < order:
            bo = math.log10(backoffs.get(gram, 1.0))
        table[gram] = (lp, bo)

    lm = NGramLM(order=order, table=table, vocabulary=vocabulary)
    log.info("Trained %d-gram LM: %d words, %d n-grams", order, len(vocabulary), len(table))
    return lm


# ---------------------------------------------------------------------------
# ARPA I/O
# ---------------------------------------------------------------------------


def write_arpa(lm: NGramLM, path: Path) -> None:
    by_order: dict[int, list[Ngram]] = defaultdict(list)
    for gram in lm.table:
        by_order[len(gram)].append(gram)
    lines = ["", "\\data\\"]
    for n in range(1, lm.order + 1):
        lines.append(f"ngram {n}={len(by_order[n])}")
    for n in range(1, lm.order + 1):
        lines += ["", f"\\{n}-grams:"]
        for gram in sorted(by_order[n]):
            lp, bo = lm.table[gram]
            fields = [fmt_float(lp), " ".join(gram)]
            if bo is not None:
                fields.append(fmt_float(bo))
            lines.append("\t".join(fields))
    lines += ["", "\\end\\", ""]
    atomic_write_text(path, "\n".join(lines))


def read_arpa(path: Path) -> NGramLM:
    path = Path(path)
    declared: dict[int, int] = {}
    table: dict[Ngram, tuple[float, Optional[float]]] = {}
    section: Optional[int] = None  # 0 = \data\, n = \n-grams:
    section_start = 0
    seen_per_order: Counter = Counter()
    ended = False

    def close_section(lineno: int) -> None:
        if section and seen_per_order[section] != declared.get(section, -1):
            raise InputFormatError(
                f"{section}-gram section has {seen_per_order[section]} entries, "
                f"header declares {declared.get(section, 0)}",
                path, section_start,
            )

    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = raw.strip()
        if not line:
            continue
        if line == "\\data\\":
            section = 0
            continue
        if line == "\\end\\":
            close_section(lineno)
            ended = True
            break
        if line.startswith("\\") and line.endswith("-grams:"):
            close_section(lineno)
            try:
                section = int(line[1:-len("-grams:")])
            except ValueError:
                raise InputFormatError(f"bad section header {line!r}", path, lineno) from None
            if section not in declared:
                raise InputFormatError(f"section {line!r} not declared in \\data\\", path, lineno)
            section_start = lineno
            continue
        if section is None:
            continue  # preamble text before \data\
        if section == 0:
            key, sep, value = line.partition("=")
            parts = key.split()
            if not sep or len(parts) != 2 or parts[0] != "ngram":
                raise InputFormatError(f"malformed count line {line!r}", path, lineno)
            try:
                declared[int(parts[1])] = int(value)
            except ValueError:
                raise InputFormatError(f"malformed count line {line!r}", path, lineno) from None
            continue

        fields = raw.split("\t") if "\t" in raw else line.split()
        if "\t" in raw:
            fields = [f.strip() for f in fields if f.strip()]
            gram = tuple(fields[1].split()) if len(fields) > 1 else ()
            rest = fields[2:]
        else:
            gram = tuple(fields[1:1 + section])
            rest = fields[1 + section:]
        if len(gram) != section or len(rest) > 1:
            raise InputFormatError(f"malformed {section}-gram line {line!r}", path, lineno)
        try:
            lp = float(fields[0])
            bo = float(rest[0]) if rest else None
        except ValueError:
            raise InputFormatError(f"malformed {section}-gram line {line!r}", path, lineno) from None
        if gram in table:
            raise InputFormatError(f"duplicate n-gram {' '.join(gram)!r}", path, lineno)
        table[gram] = (lp, bo)
        seen_per_order[section] += 1

    if not ended:
        raise InputFormatError("missing \\end\\ marker", path)
    if not declared:
        raise InputFormatError("missing \\data\\ section", path)

    order = max(declared)
    vocabulary = sorted({g[0] for g in table if len(g) == 1})
    head = [w for w in (BOS, EOS, UNK) if w in vocabulary]
    vocabulary = tuple(head + [w for w in vocabulary if w not in head])
    try:
        return NGramLM(order=order, table=table, vocabulary=vocabulary)
    except ValidationError as exc:
        raise InputFormatError(exc.errors()[0]["msg"], path) from None
