"""
Acoustic scoring: priors, pseudo log-likelihoods, and dynamic programming over
state graphs (forward sum, Viterbi alignment, CTC prefix scores).

All scores are natural-log. -inf is the sentinel for "no path".
"""

from typing import Iterable, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator

from .config import PRIOR_FLOOR, log
from .constants import NEG_INF, POSTERIOR_FLOOR
from .errors import DimensionMismatch, InputFormatError, InventoryError, NoFeasiblePath
from .schemas import PosteriorMatrix, ScoreWeights, UnitInventory, UnitPrior
from .topology import StateGraph


class ScoredFrames(BaseModel):
    """T×U log-domain acoustic scores after prior subtraction and blank penalty."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    utterance_id: str = ""
    scores: np.ndarray
    blank_index: Optional[int] = None

    @field_validator("scores", mode="before")
    @classmethod
    def _finite_matrix(cls, value) -> np.ndarray:
        arr = np.array(value, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] < 1:
            raise ValueError(f"scores must be a non-empty T×U matrix, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("scores must be finite")
        arr.setflags(write=False)
        return arr

    @property
    def num_frames(self) -> int:
        return int(self.scores.shape[0])

    @property
    def num_units(self) -> int:
        return int(self.scores.shape[1])


def log_posteriors(posteriors: PosteriorMatrix) -> np.ndarray:
    return np.log(np.maximum(posteriors.frames, POSTERIOR_FLOOR))


# ---------------------------------------------------------------------------
# Priors and frame scores
# ---------------------------------------------------------------------------


def estimate_priors(posteriors: Iterable[PosteriorMatrix], floor: float = PRIOR_FLOOR) -> UnitPrior:
    """Average the posteriors over every frame of every utterance, then floor."""
    total: Optional[np.ndarray] = None
    frames = 0
    for post in posteriors:
        if total is None:
            total = np.zeros(post.num_units)
        elif post.num_units != total.size:
            raise DimensionMismatch(
                f"{post.utterance_id}: {post.num_units} units, expected {total.size}"
            )
        total += post.frames.sum(axis=0)
        frames += post.num_frames
    if total is None:
        raise InputFormatError("no posterior matrices to estimate priors from")
    log.info("Estimated priors from %d frames", frames)
    return UnitPrior.from_probabilities(total / frames, floor)


def score_frames(posteriors: PosteriorMatrix, priors: Optional[UnitPrior], weights: ScoreWeights,
                 prior_scale: float = 1.0, blank_index: Optional[int] = None) -> ScoredFrames:
    """entry(t, u) = ln P(u|o_t) − κ·ln P(u) − γ·[u is blank].

    ln p(o_t) is dropped as a per-frame constant. *priors* may be None only
    when κ = 0.
    """
    if prior_scale < 0:
        raise DimensionMismatch(f"prior scale must be non-negative, got {prior_scale}")
    scores = log_posteriors(posteriors)
    if prior_scale > 0:
        if priors is None:
            raise DimensionMismatch("prior subtraction requested without priors")
        if priors.size != posteriors.num_units:
            raise DimensionMismatch(
                f"{posteriors.utterance_id}: {posteriors.num_units} units vs {priors.size} priors"
            )
        scores = scores - prior_scale * np.log(priors.priors)[None, :]
    if blank_index is not None:
        if not 0 <= blank_index < posteriors.num_units:
            raise DimensionMismatch(f"blank index {blank_index} outside {posteriors.num_units} units")
        if weights.blank_penalty:
            scores = scores.copy()
            scores[:, blank_index] -= weights.blank_penalty
    return ScoredFrames(utterance_id=posteriors.utterance_id, scores=scores, blank_index=blank_index)


# ---------------------------------------------------------------------------
# Graph dynamic programming
# ---------------------------------------------------------------------------


def _emission_columns(graph: StateGraph, frames: ScoredFrames) -> tuple[np.ndarray, np.ndarray]:
    """Return (emitting state ids, their unit columns), checking ranges."""
    states, cols = [], []
    for sid, unit in enumerate(graph.emissions):
        if unit is None:
            continue
        if not 0 <= unit < frames.num_units:
            raise DimensionMismatch(f"state {sid} emits unit {unit}, frames have {frames.num_units} units")
        states.append(sid)
        cols.append(unit)
    return np.asarray(states, dtype=np.int64), np.asarray(cols, dtype=np.int64)


def forward_loglik(graph: StateGraph, frames: ScoredFrames) -> float:
    """ln Σ over length-T paths start→final of Π transition·emission."""
    emitting, cols = _emission_columns(graph, frames)
    arcs = np.asarray([(a, b) for a, b, _ in graph.transitions], dtype=np.int64).reshape(-1, 2)
    src, dst = arcs[:, 0], arcs[:, 1]
    lp = np.asarray([w for _, _, w in graph.transitions], dtype=np.float64)
    is_emitting = np.zeros(graph.num_states, dtype=bool)
    is_emitting[emitting] = True
    into_emitting = is_emitting[dst]

    alpha = np.full(graph.num_states, NEG_INF)
    alpha[graph.start] = 0.0
    with np.errstate(invalid="ignore"):
        for t in range(frames.num_frames):
            nxt = np.full(graph.num_states, NEG_INF)
            cand = alpha[src[into_emitting]] + lp[into_emitting]
            np.logaddexp.at(nxt, dst[into_emitting], cand)
            nxt[emitting] += frames.scores[t, cols]
            alpha = nxt
        final_mask = np.isin(dst, list(graph.final))
        cand = alpha[src[final_mask]] + lp[final_mask]
    if cand.size == 0 or np.all(cand == NEG_INF):
        return NEG_INF
    result = float(np.logaddexp.reduce(cand))
    return result


def viterbi_align(graph: StateGraph, frames: ScoredFrames) -> tuple[tuple[int, ...], float]:
    """Best single path (emitting state ids, one per frame) and its score.

    Exact score ties go to the path that, at the first frame where the tied
    paths differ, emits a non-blank unit, then to the lower state id.
    """
    emitting, cols = _emission_columns(graph, frames)
    unit_of = dict(zip(emitting.tolist(), cols.tolist()))
    incoming: dict[int, list[tuple[int, float]]] = {s: [] for s in unit_of}
    finals: list[tuple[int, float]] = []
    for a, b, w in graph.transitions:
        if b in unit_of:
            incoming[b].append((a, w))
        elif b in graph.final:
            finals.append((a, w))

    score = {graph.start: 0.0}
    rank = {graph.start: 0}
    backptrs: list[dict[int, int]] = []
    blank = frames.blank_index
    for t in range(frames.num_frames):
        row = frames.scores[t]
        new_score: dict[int, float] = {}
        back: dict[int, int] = {}
        for dst, arcs in incoming.items():
            best, best_src = NEG_INF, -1
            for src, w in arcs:
                if src not in score:
                    continue
                s = score[src] + w
                if s > best or (s == best and best_src >= 0 and rank[src] < rank[best_src]):
                    best, best_src = s, src
            if best_src >= 0 and best > NEG_INF:
                new_score[dst] = best + float(row[unit_of[dst]])
                back[dst] = best_src
        order = sorted(new_score, key=lambda s: (rank[back[s]], unit_of[s] == blank, s))
        rank = {s: i for i, s in enumerate(order)}
        score = new_score
        backptrs.append(back)
        if not score:
            break

    best, last = NEG_INF, -1
    for src, w in finals:
        if src not in score:
            continue
        s = score[src] + w
        if s > best or (s == best and last >= 0 and rank[src] < rank[last]):
            best, last = s, src
    if last < 0 or best == NEG_INF:
        raise NoFeasiblePath(
            f"{frames.utterance_id or 'utterance'}: no {frames.num_frames}-frame path through the graph"
        )

    path = [last]
    for back in reversed(backptrs[1:]):
        path.append(back[path[-1]])
    path.reverse()
    return tuple(path), float(best)


# ---------------------------------------------------------------------------
# CTC two-stream recursion
# ---------------------------------------------------------------------------


def _label_indices(labels: Sequence[int], inventory: UnitInventory) -> tuple[int, ...]:
    blank = inventory.blank_index
    if blank is None:
        raise InventoryError("CTC scoring needs an inventory with a blank unit")
    for u in labels:
        if u == blank:
            raise InventoryError("label sequence contains the blank unit")
        if not 0 <= u < inventory.size:
            raise InventoryError(f"unit index {u} out of range")
    return tuple(labels)


def _two_stream(logy: np.ndarray, labels: tuple[int, ...], blank: int) -> tuple[float, np.ndarray, np.ndarray]:
    """Run the blank-ending / label-ending recursion along *labels*.

    Returns (prefix log-score of *labels*, r_n, r_b) where r_n[t] / r_b[t] are the
    log-probabilities of emitting exactly *labels* in frames 0..t and ending in a
    label / blank frame.
    """
    num_frames = logy.shape[0]
    r_n = np.full(num_frames, NEG_INF)
    r_b = np.cumsum(logy[:, blank])
    prefix = 0.0
    last: Optional[int] = None
    for c in labels:
        phi = r_b.copy() if last == c else np.logaddexp(r_b, r_n)
        new_n = np.full(num_frames, NEG_INF)
        new_b = np.full(num_frames, NEG_INF)
        if last is None:
            new_n[0] = logy[0, c]
        # mass entering label c for the first time at frame t, per t
        entry = np.full(num_frames, NEG_INF)
        entry[0] = new_n[0]
        for t in range(1, num_frames):
            entry[t] = phi[t - 1] + logy[t, c]
            new_n[t] = np.logaddexp(new_n[t - 1], phi[t - 1]) + logy[t, c]
            new_b[t] = np.logaddexp(new_b[t - 1], new_n[t - 1]) + logy[t, blank]
        prefix = float(np.logaddexp.reduce(entry))
        r_n, r_b, last = new_n, new_b, c
    return prefix, r_n, r_b


def ctc_prefix_score(posteriors: PosteriorMatrix, prefix: Sequence[int],
                     inventory: UnitInventory) -> float:
    """ln P(the T-frame CTC output starts with *prefix*)."""
    labels = _label_indices(prefix, inventory)
    if not labels:
        return 0.0
    if len(labels) > posteriors.num_frames:
        return NEG_INF
    with np.errstate(invalid="ignore"):
        score, _, _ = _two_stream(log_posteriors(posteriors), labels, inventory.blank_index)
    return score


def ctc_sequence_loglik(posteriors: PosteriorMatrix, labels: Sequence[int],
                        inventory: UnitInventory) -> float:
    """ln P(the T-frame CTC output collapses to exactly *labels*)."""
    labels = _label_indices(labels, inventory)
    with np.errstate(invalid="ignore"):
        _, r_n, r_b = _two_stream(log_posteriors(posteriors), labels, inventory.blank_index)
    return float(np.logaddexp(r_n[-1], r_b[-1]))
