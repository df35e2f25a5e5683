"""
Seeded toy corpora: graphemic inventories, random vocabularies, frame
posteriors rendered around a true transcript, and noisy stand-in scorer tables.
"""

from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict

from .config import log
from .constants import DEFAULT_BLANK_LABEL
from .errors import ConfigError
from .formats import (
    atomic_write_text,
    write_inventory,
    write_posteriors,
    write_score_table,
    write_transcripts,
)
from .isca import FileScorerTable, pronunciation_variants
from .lexicon import derive_graphemic_lexicon, write_lexicon
from .lm import train_ngram, write_arpa
from .schemas import Lexicon, NBestList, PosteriorMatrix, UnitInventory
from .topology import concatenate_units
from .wer import edit_stats

LETTERS = "abcdefghijklmnopqrstuvwxyz"


class SyntheticCorpus(BaseModel):
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    inventory: UnitInventory
    lexicon: Lexicon
    lm_sentences: tuple[tuple[str, ...], ...]
    references: dict[str, tuple[str, ...]]
    posteriors: dict[str, PosteriorMatrix]


def make_inventory(num_letters: int) -> UnitInventory:
    """Blank at index 0 followed by the first *num_letters* lowercase letters."""
    if not 2 <= num_letters <= len(LETTERS):
        raise ConfigError(f"num_letters must be in 2..{len(LETTERS)}, got {num_letters}")
    return UnitInventory(labels=(DEFAULT_BLANK_LABEL, *LETTERS[:num_letters]), blank_index=0)


def make_vocabulary(rng: np.random.Generator, size: int, num_letters: int,
                    max_length: int = 3) -> list[str]:
    """*size* distinct uppercase words of 1..max_length letters."""
    capacity = sum(num_letters ** n for n in range(1, max_length + 1))
    if size > capacity:
        raise ConfigError(f"cannot draw {size} distinct words of <= {max_length} letters")
    words: set[str] = set()
    while len(words) < size:
        n = int(rng.integers(1, max_length + 1))
        words.add("".join(LETTERS[int(i)] for i in rng.integers(0, num_letters, n)).upper())
    return sorted(words)


def render_posteriors(utterance_id: str, units: Sequence[int], inventory: UnitInventory,
                      rng: np.random.Generator, label_prob: float = 0.8,
                      blank_on_label: float = 0.1, blank_frame_prob: float = 0.9,
                      noise: float = 0.0, blank_frames: tuple[int, int] = (1, 2),
                      label_frames: tuple[int, int] = (1, 2)) -> PosteriorMatrix:
    """Frame posteriors for an alignment ∅ᵏ u₁ᵐ ∅ᵏ u₂ᵐ … ∅ᵏ with random run lengths.

    Each row is mixed with a Dirichlet draw of weight *noise*.
    """
    size = inventory.size
    blank = inventory.blank_index
    if blank is None or size < 3:
        raise ConfigError("rendering needs a blank and at least two other units")
    if label_prob + blank_on_label > 1.0 or not 0.0 <= noise <= 1.0:
        raise ConfigError("label_prob + blank_on_label must be <= 1 and noise in [0, 1]")

    def blank_row() -> np.ndarray:
        row = np.full(size, (1.0 - blank_frame_prob) / (size - 1))
        row[blank] = blank_frame_prob
        return row

    def label_row(u: int) -> np.ndarray:
        row = np.full(size, (1.0 - label_prob - blank_on_label) / (size - 2))
        row[blank] = blank_on_label
        row[u] = label_prob
        return row

    rows: list[np.ndarray] = []
    for u in units:
        rows += [blank_row() for _ in range(int(rng.integers(blank_frames[0], blank_frames[1] + 1)))]
        rows += [label_row(u) for _ in range(int(rng.integers(label_frames[0], label_frames[1] + 1)))]
    rows += [blank_row() for _ in range(int(rng.integers(blank_frames[0], blank_frames[1] + 1)))]
    frames = np.vstack(rows)
    if noise:
        frames = (1.0 - noise) * frames + noise * rng.dirichlet(np.ones(size), size=len(rows))
    frames /= frames.sum(axis=1, keepdims=True)
    return PosteriorMatrix(utterance_id=utterance_id, frames=frames)


def make_corpus(seed: int = 0, vocab_size: int = 10, num_utterances: int = 50,
                num_letters: int = 8, max_words: int = 3, lm_sentences: int = 200,
                **render) -> SyntheticCorpus:
    """Random transcripts over a random graphemic vocabulary plus rendered posteriors.

    Extra keyword arguments go to render_posteriors.
    """
    rng = np.random.default_rng(seed)
    inventory = make_inventory(num_letters)
    vocab = make_vocabulary(rng, vocab_size, num_letters)
    lexicon = derive_graphemic_lexicon(vocab, inventory)

    def sentence() -> tuple[str, ...]:
        n = int(rng.integers(1, max_words + 1))
        return tuple(vocab[int(i)] for i in rng.integers(0, len(vocab), n))

    training = tuple(sentence() for _ in range(lm_sentences))
    references: dict[str, tuple[str, ...]] = {}
    posteriors: dict[str, PosteriorMatrix] = {}
    width = len(str(num_utterances))
    for k in range(num_utterances):
        utt = f"utt{k:0{width}d}"
        words = sentence()
        references[utt] = words
        posteriors[utt] = render_posteriors(utt, concatenate_units(lexicon, words), inventory, rng, **render)
    log.info("Synthetic corpus: %d utterances, %d words, seed %d", num_utterances, vocab_size, seed)
    return SyntheticCorpus(
        inventory=inventory,
        lexicon=lexicon,
        lm_sentences=training,
        references=references,
        posteriors=posteriors,
    )


def noisy_scorer_table(nbests: Mapping[str, NBestList], references: Mapping[str, Sequence[str]],
                       lexicon: Lexicon, rng: np.random.Generator, noise: float = 1.0,
                       error_cost: float = 2.0, cap: int = 64) -> FileScorerTable:
    """Stand-in label-synchronous scores: −error_cost·(unit edit distance to the truth) + N(0, noise²).

    Entries are written for every pronunciation the rescorer will look up.
    """
    scores: dict[tuple[str, tuple[str, ...]], float] = {}
    for utt in sorted(nbests):
        truth = lexicon.inventory.label_sequence(concatenate_units(lexicon, references[utt]))
        for h in nbests[utt].hypotheses:
            for units in pronunciation_variants(lexicon, h.words, cap, utt)[0]:
                labels = lexicon.inventory.label_sequence(units)
                if (utt, labels) in scores:
                    continue
                distance = edit_stats(truth, labels).errors
                scores[(utt, labels)] = -error_cost * distance + noise * float(rng.standard_normal())
    return FileScorerTable(scores=scores)


def write_corpus(corpus: SyntheticCorpus, directory: Path, lm_order: int = 2,
                 scorer: Optional[FileScorerTable] = None) -> Path:
    """Write a fixture directory with a run.conf wiring every file together."""
    directory = Path(directory)
    post_dir = directory / "posteriors"
    for utt, post in corpus.posteriors.items():
        write_posteriors(post, post_dir / f"{utt}.post")
    write_inventory(corpus.inventory, directory / "units.txt")
    write_lexicon(corpus.lexicon, directory / "lexicon.txt")
    write_transcripts(corpus.references, directory / "references.txt")
    atomic_write_text(directory / "corpus.txt", "".join(" ".join(s) + "\n" for s in corpus.lm_sentences))
    write_arpa(train_ngram(corpus.lm_sentences, order=lm_order), directory / "lm.arpa")

    conf = [
        "# synthetic fixture",
        "posteriors_dir=posteriors",
        "inventory=units.txt",
        "lexicon=lexicon.txt",
        "lm=lm.arpa",
        "references=references.txt",
        "nbest_dir=nbest",
        "output_dir=out",
    ]
    if scorer is not None:
        write_score_table(scorer.scores, directory / "scores.txt")
        conf.append("scorer_table=scores.txt")
    atomic_write_text(directory / "run.conf", "\n".join(conf) + "\n")
    return directory / "run.conf"
