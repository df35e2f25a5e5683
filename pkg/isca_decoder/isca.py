"""
Extended source-channel rescoring and weight tuning.

An n-best hypothesis W is rescored with a label-synchronous scorer by summing
the scorer's probability over every unit sequence the lexicon can spell W
with, then re-ranked by

    total = acoustic + α·lm + β·scorer + nnlm_scale·nnlm + insertion_penalty·words

The scaling factors are tuned with CMA-ES against the WER of the re-ranked
1-best on a development set.
"""

import heapq
import math
from pathlib import Path
from typing import Callable, Mapping, NamedTuple, Optional, Protocol, Sequence, Union, runtime_checkable

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator

from .acoustic import ScoredFrames, forward_loglik, log_posteriors
from .cmaes import CMAES
from .config import DEFAULT_GENERATIONS, DEFAULT_SIGMA0, PRONUNCIATION_CAP, log
from .constants import NEG_INF
from .errors import ConfigError, LexiconError
from .formats import read_score_table
from .jobs import map_ordered
from .schemas import Hypothesis, Lexicon, NBestList, PosteriorMatrix, ScoreWeights, UnitInventory
from .topology import build_ctc_sequence_graph
from .wer import edit_stats

UnitLabels = tuple[str, ...]


# ---------------------------------------------------------------------------
# Scorers
# ---------------------------------------------------------------------------


@runtime_checkable
class LabelScorer(Protocol):
    """score(utterance_id, C) → ln P(C | O); -inf for anything it cannot score."""

    def score(self, utterance_id: str, units: UnitLabels) -> float: ...


class FileScorerTable(BaseModel):
    """Externally computed scores keyed by (utterance id, unit labels)."""

    model_config = ConfigDict(frozen=True)

    scores: dict[tuple[str, UnitLabels], float]

    @field_validator("scores")
    @classmethod
    def _finite(cls, scores: dict) -> dict:
        for key, value in scores.items():
            if not math.isfinite(value):
                raise ValueError(f"score for {key[0]!r} {' '.join(key[1])!r} is not finite")
        return scores

    @classmethod
    def from_file(cls, path: Path) -> "FileScorerTable":
        return cls(scores=read_score_table(path))

    def score(self, utterance_id: str, units: UnitLabels) -> float:
        return self.scores.get((utterance_id, tuple(units)), NEG_INF)

    def __len__(self) -> int:
        return len(self.scores)


class CtcLabelScorer:
    """Complete-sequence CTC probability of C under per-utterance posteriors (no prior)."""

    def __init__(self, posteriors: Mapping[str, PosteriorMatrix], inventory: UnitInventory):
        if inventory.blank_index is None:
            raise ConfigError("the CTC scorer needs an inventory with a blank unit")
        for utt, post in posteriors.items():
            if post.num_units != inventory.size:
                raise ConfigError(f"{utt}: posteriors have {post.num_units} units, inventory {inventory.size}")
        self.inventory = inventory
        self._frames = {
            utt: ScoredFrames(utterance_id=utt, scores=log_posteriors(post), blank_index=inventory.blank_index)
            for utt, post in posteriors.items()
        }

    def score(self, utterance_id: str, units: UnitLabels) -> float:
        frames = self._frames.get(utterance_id)
        if frames is None:
            return NEG_INF
        indices = []
        for label in units:
            idx = self.inventory.index_of(label)
            if idx is None or idx == self.inventory.blank_index:
                return NEG_INF
            indices.append(idx)
        graph = build_ctc_sequence_graph(indices, self.inventory)
        return forward_loglik(graph, frames)


def ctc_prefix_label_scorer(posteriors: Union[PosteriorMatrix, Mapping[str, PosteriorMatrix]],
                            inventory: UnitInventory) -> CtcLabelScorer:
    """A scorer backed by CTC posteriors; a single matrix answers for its own utterance id."""
    if isinstance(posteriors, PosteriorMatrix):
        posteriors = {posteriors.utterance_id: posteriors}
    return CtcLabelScorer(posteriors, inventory)


class LengthNormalizedScorer:
    """Divide a scorer's log-probability by the number of labels in C."""

    def __init__(self, base: LabelScorer):
        self.base = base

    def score(self, utterance_id: str, units: UnitLabels) -> float:
        value = self.base.score(utterance_id, units)
        if not units or value == NEG_INF:
            return value
        return value / len(units)


# ---------------------------------------------------------------------------
# Pronunciation sum and score combination
# ---------------------------------------------------------------------------


class PronunciationSum(NamedTuple):
    logp: float
    truncated: bool
    terms: int


def _shortest_combinations(options: list[list[tuple[int, ...]]], cap: int):
    start = tuple(0 for _ in options)
    heap = [(sum(len(o[0]) for o in options), start)]
    seen = {start}
    emitted = 0
    while heap and emitted < cap:
        length, idx = heapq.heappop(heap)
        yield tuple(options[i][k] for i, k in enumerate(idx))
        emitted += 1
        for i, k in enumerate(idx):
            if k + 1 < len(options[i]):
                nxt = idx[:i] + (k + 1,) + idx[i + 1:]
                if nxt not in seen:
                    seen.add(nxt)
                    heapq.heappush(heap, (length - len(options[i][k]) + len(options[i][k + 1]), nxt))


def pronunciation_variants(lexicon: Lexicon, words: Sequence[str], cap: int = PRONUNCIATION_CAP,
                           utterance_id: str = "") -> tuple[list[tuple[int, ...]], int]:
    """Up to *cap* unit sequences spelling *words*, fewest units first, and the full count.

    Equal lengths are ordered by the per-word choice indices, with each word's
    pronunciations pre-sorted by length then lexicon order.
    """
    if cap < 1:
        raise ConfigError(f"pronunciation cap must be >= 1, got {cap}")
    options = []
    for word in words:
        prons = lexicon.entries.get(word)
        if prons is None:
            where = f"{utterance_id}: " if utterance_id else ""
            raise LexiconError(f"{where}word {word!r} is not in the lexicon")
        options.append(sorted(prons, key=lambda p, ps=prons: (len(p), ps.index(p))))
    variants = [tuple(u for p in prons for u in p) for prons in _shortest_combinations(options, cap)]
    return variants, math.prod(len(o) for o in options)


def pronunciation_sum_detail(lexicon: Lexicon, words: Sequence[str], scorer: LabelScorer,
                             utterance_id: str, cap: int = PRONUNCIATION_CAP) -> PronunciationSum:
    """ln Σ_C exp(score(C)) over the pronunciations of *words*, plus a truncation flag."""
    variants, total = pronunciation_variants(lexicon, words, cap, utterance_id)
    terms = [scorer.score(utterance_id, lexicon.inventory.label_sequence(units)) for units in variants]
    finite = np.asarray([v for v in terms if v != NEG_INF], dtype=np.float64)
    logp = float(np.logaddexp.reduce(finite)) if finite.size else NEG_INF
    truncated = total > cap
    if truncated:
        log.debug("%s: pronunciation sum truncated to %d of %d sequences", utterance_id, cap, total)
    return PronunciationSum(logp, truncated, len(terms))


def pronunciation_sum(lexicon: Lexicon, words: Sequence[str], scorer: LabelScorer,
                      utterance_id: str, cap: int = PRONUNCIATION_CAP) -> float:
    return pronunciation_sum_detail(lexicon, words, scorer, utterance_id, cap).logp


def combine_scores(h: Hypothesis, weights: ScoreWeights) -> float:
    """acoustic + α·lm + β·scorer + nnlm_scale·nnlm + insertion_penalty·word_count.

    A missing scorer (or nnlm) score contributes nothing; a zero weight drops
    its term entirely, so a -inf score under weight 0 stays harmless.
    """
    total = h.acoustic_logp + weights.insertion_penalty * h.word_count
    if weights.lm_scale:
        total += weights.lm_scale * h.lm_logp
    if weights.scorer_scale and h.scorer_logp is not None:
        total += weights.scorer_scale * h.scorer_logp
    if weights.nnlm_scale and h.nnlm_logp is not None:
        total += weights.nnlm_scale * h.nnlm_logp
    return total


def rank_hypotheses(hypotheses: Sequence[Hypothesis], weights: ScoreWeights) -> list[Hypothesis]:
    """Descending combined score; ties go to the lexicographically smaller word sequence."""
    return sorted(hypotheses, key=lambda h: (-combine_scores(h, weights), h.words))


def attach_nnlm_scores(nbest: NBestList, table: FileScorerTable) -> NBestList:
    """Fill nnlm_logp from a word-level score table (-inf where it has no entry)."""
    hyps = tuple(
        h.model_copy(update={"nnlm_logp": table.score(nbest.utterance_id, h.words)})
        for h in nbest.hypotheses
    )
    return nbest.model_copy(update={"hypotheses": hyps})


def rescore_nbest(nbest: NBestList, scorer: LabelScorer, lexicon: Lexicon, weights: ScoreWeights,
                  cap: int = PRONUNCIATION_CAP) -> NBestList:
    """Annotate every hypothesis with its pronunciation-summed scorer score and re-rank."""
    rescored = []
    for h in nbest.hypotheses:
        summed = pronunciation_sum_detail(lexicon, h.words, scorer, nbest.utterance_id, cap)
        rescored.append(h.model_copy(update={"scorer_logp": summed.logp, "scorer_truncated": summed.truncated}))
    warnings = nbest.warnings
    if any(h.scorer_truncated for h in rescored) and "pronunciation-sum-truncated" not in warnings:
        warnings = warnings + ("pronunciation-sum-truncated",)
    return NBestList(
        utterance_id=nbest.utterance_id,
        hypotheses=tuple(rank_hypotheses(rescored, weights)),
        warnings=warnings,
    )


def truncate_nbest(nbest: NBestList, n: int) -> NBestList:
    if n < 1:
        raise ConfigError(f"n-best limit must be >= 1, got {n}")
    return nbest.model_copy(update={"hypotheses": nbest.hypotheses[:n]})


# ---------------------------------------------------------------------------
# Tuning
# ---------------------------------------------------------------------------

DevSet = Sequence[tuple[NBestList, Sequence[str]]]


class _UtteranceArrays(NamedTuple):
    acoustic: np.ndarray
    lm: np.ndarray
    scorer: np.ndarray
    nnlm: np.ndarray
    words: np.ndarray
    errors: np.ndarray


class RerankObjective:
    """Corpus WER of the re-ranked 1-best as a function of the weights.

    Per-hypothesis edit counts are computed once; hypotheses are stored in
    lexicographic order so argmax ties resolve to the smaller word sequence.
    """

    def __init__(self, dev: DevSet):
        if not dev:
            raise ConfigError("empty development set")
        self._utts: list[_UtteranceArrays] = []
        self._empty_errors = 0
        self.reference_words = 0
        for nbest, ref in dev:
            ref = tuple(ref)
            self.reference_words += len(ref)
            if not nbest.hypotheses:
                self._empty_errors += len(ref)
                continue
            hyps = sorted(nbest.hypotheses, key=lambda h: h.words)
            self._utts.append(_UtteranceArrays(
                acoustic=np.array([h.acoustic_logp for h in hyps]),
                lm=np.array([h.lm_logp for h in hyps]),
                scorer=np.array([0.0 if h.scorer_logp is None else h.scorer_logp for h in hyps]),
                nnlm=np.array([0.0 if h.nnlm_logp is None else h.nnlm_logp for h in hyps]),
                words=np.array([h.word_count for h in hyps], dtype=np.float64),
                errors=np.array([edit_stats(ref, h.words).errors for h in hyps]),
            ))

    def errors(self, weights: ScoreWeights) -> int:
        total = self._empty_errors
        for u in self._utts:
            score = u.acoustic + weights.insertion_penalty * u.words
            if weights.lm_scale:
                score = score + weights.lm_scale * u.lm
            if weights.scorer_scale:
                score = score + weights.scorer_scale * u.scorer
            if weights.nnlm_scale:
                score = score + weights.nnlm_scale * u.nnlm
            total += int(u.errors[int(np.argmax(score))])
        return total

    def __call__(self, weights: ScoreWeights) -> float:
        errors = self.errors(weights)
        if self.reference_words == 0:
            return math.inf if errors else 0.0
        return errors / self.reference_words


def rerank_wer(dev: DevSet, weights: ScoreWeights) -> float:
    return RerankObjective(dev)(weights)


class _Space:
    """Map search vectors to weights: α, β (and nnlm) are squared, the penalty is taken as-is."""

    def __init__(self, init: ScoreWeights, tune_insertion: bool, tune_nnlm: bool):
        self.init = init
        self.tune_insertion = tune_insertion
        self.tune_nnlm = tune_nnlm

    def encode(self) -> list[float]:
        x = [math.sqrt(self.init.lm_scale), math.sqrt(self.init.scorer_scale)]
        if self.tune_insertion:
            x.append(self.init.insertion_penalty)
        if self.tune_nnlm:
            x.append(math.sqrt(self.init.nnlm_scale))
        return x

    def decode(self, x: Sequence[float]) -> ScoreWeights:
        update = {"lm_scale": float(x[0]) ** 2, "scorer_scale": float(x[1]) ** 2}
        i = 2
        if self.tune_insertion:
            update["insertion_penalty"] = float(x[i])
            i += 1
        if self.tune_nnlm:
            update["nnlm_scale"] = float(x[i]) ** 2
        return self.init.model_copy(update=update)


def tune_weights(dev: DevSet, init: ScoreWeights, population: Optional[int] = None,
                 generations: int = DEFAULT_GENERATIONS, seed: int = 0,
                 tune_insertion: bool = False, tune_nnlm: bool = False,
                 sigma0: float = DEFAULT_SIGMA0, jobs: int = 1,
                 on_generation: Optional[Callable[[int, float, ScoreWeights], None]] = None) -> ScoreWeights:
    """Minimise dev WER of the re-ranked 1-best with CMA-ES; return the best weights ever seen.

    The init weights are evaluated first, so the result never has a higher
    dev WER than *init*. Among equal-WER candidates the smaller β wins.
    """
    objective = RerankObjective(dev)
    if generations < 0:
        raise ConfigError(f"generations must be >= 0, got {generations}")
    if population is not None and population < 4:
        raise ConfigError(f"population must be >= 4, got {population}")

    def key(weights: ScoreWeights) -> tuple[float, float]:
        return objective(weights), weights.scorer_scale

    best_w = init
    best_key = key(init)
    log.info("Tuning start: WER %.4f at alpha=%.4g beta=%.4g", best_key[0], init.lm_scale, init.scorer_scale)
    if generations == 0:
        return init

    space = _Space(init, tune_insertion, tune_nnlm)
    es = CMAES(space.encode(), sigma0, population=population, seed=seed)
    for gen in range(1, generations + 1):
        xs = es.ask()
        candidates = [space.decode(x) for x in xs]
        keys = map_ordered(key, candidates, jobs=jobs)
        ranks = sorted(range(len(keys)), key=lambda i: keys[i])
        fitness = [0.0] * len(keys)
        for r, i in enumerate(ranks):
            fitness[i] = float(r)
        es.tell(xs, fitness)

        top = ranks[0]
        if keys[top] < best_key:
            best_key, best_w = keys[top], candidates[top]
        log.info("Generation %d: best WER %.4f (sigma %.3g)", gen, best_key[0], es.sigma)
        if on_generation is not None:
            on_generation(gen, best_key[0], best_w)
    return best_w


def grid_search_weights(dev: DevSet, alphas: Sequence[float], betas: Sequence[float],
                        base: Optional[ScoreWeights] = None) -> tuple[ScoreWeights, float]:
    """Exhaustive search over α × β; the first grid point reaching the minimum wins."""
    objective = RerankObjective(dev)
    base = base or ScoreWeights()
    best_w, best_wer = base, math.inf
    for a in alphas:
        for b in betas:
            w = base.model_copy(update={"lm_scale": float(a), "scorer_scale": float(b)})
            wer = objective(w)
            if wer < best_wer:
                best_w, best_wer = w, wer
    return best_w, best_wer
