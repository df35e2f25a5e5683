"""
Frame-synchronous decoding over a lexical prefix tree.

beam_decode is token-passing Viterbi search: a token is a partial hypothesis
sitting in one tree position, and it carries its full word history, its n-gram
state and its separate acoustic / LM scores. Each (position, LM state) cell
keeps the top-k distinct word histories, which is enough to extract an exact
k-best list without a lattice. exhaustive_decode is the brute-force reference.

Transitions inside the search use the uniform-1.0 convention (log 0).
"""

import itertools
from typing import ClassVar, Literal, NamedTuple, Optional

from pydantic import BaseModel, ConfigDict, PositiveInt, PrivateAttr

from .acoustic import ScoredFrames, forward_loglik, score_frames, viterbi_align
from .config import log
from .constants import EOS, MAX_EXHAUSTIVE_SEQUENCES, NEG_INF
from .errors import (
    DimensionMismatch,
    EnumerationLimitExceeded,
    InventoryError,
    LexiconError,
    NoFeasiblePath,
    TopologyError,
)
from .isca import combine_scores
from .lm import NGramLM, score_sequence
from .schemas import (
    DecodeConfig,
    Hypothesis,
    Lexicon,
    NBestList,
    PosteriorMatrix,
    ScoreWeights,
    UnitInventory,
    UnitPrior,
)
from .topology import build_sequence_graph

Position = tuple[int, int]  # (tree node, sub-state)
_LABEL, _BLANK = 0, 1  # CTC sub-states


class PrefixTree(BaseModel):
    """Trie over pronunciations; node 0 is the root and emits nothing.

    Under the CTC kind every node carries a label state plus, when it has
    children, an optional blank state before them; the root's blank is the
    between-words blank. Under the HMM kind every node is a chain of
    states_per_unit looped states.
    """

    model_config = ConfigDict(frozen=True)

    ROOT: ClassVar[int] = 0

    inventory: UnitInventory
    kind: Literal["ctc", "hmm"] = "ctc"
    states_per_unit: PositiveInt = 1
    units: tuple[Optional[int], ...]
    parents: tuple[int, ...]
    children: tuple[tuple[int, ...], ...]
    ends: tuple[tuple[tuple[str, int], ...], ...]  # (word, pronunciation index) ending at the node

    _arcs: dict[Position, list[tuple[Position, Optional[str]]]] = PrivateAttr(default_factory=dict)
    _accept: dict[Position, tuple[Optional[str], ...]] = PrivateAttr(default_factory=dict)
    _starts: tuple[Position, ...] = PrivateAttr(default=())

    def model_post_init(self, __context) -> None:
        if self.kind == "ctc":
            self._build_ctc_arcs()
        else:
            self._build_hmm_arcs()

    @property
    def num_nodes(self) -> int:
        return len(self.units)

    def word_set(self, node: int) -> tuple[str, ...]:
        """Distinct words ending at *node*, sorted."""
        return tuple(sorted({w for w, _ in self.ends[node]}))

    def find(self, units) -> Optional[int]:
        """Node reached by spelling *units* from the root, or None."""
        node = self.ROOT
        for u in units:
            node = next((c for c in self.children[node] if self.units[c] == u), None)
            if node is None:
                return None
        return node

    def spelling(self, node: int) -> tuple[int, ...]:
        out = []
        while node != self.ROOT:
            out.append(self.units[node])
            node = self.parents[node]
        return tuple(reversed(out))

    def position_unit(self, pos: Position) -> int:
        node, sub = pos
        if self.kind == "ctc" and sub == _BLANK:
            return self.inventory.blank_index
        return self.units[node]

    # -- search graph ---------------------------------------------------------

    @property
    def arcs(self) -> dict[Position, list[tuple[Position, Optional[str]]]]:
        """Outgoing arcs per position; the second item is the word emitted on the arc, if any."""
        return self._arcs

    @property
    def accept(self) -> dict[Position, tuple[Optional[str], ...]]:
        """Positions an utterance may end in, with the word still to be emitted (None for none)."""
        return self._accept

    @property
    def starts(self) -> tuple[Position, ...]:
        return self._starts

    def _build_ctc_arcs(self) -> None:
        root_blank = (self.ROOT, _BLANK)
        roots = self.children[self.ROOT]
        arcs = {root_blank: [(root_blank, None)] + [((c, _LABEL), None) for c in roots]}
        accept: dict[Position, tuple[Optional[str], ...]] = {root_blank: (None,)}
        for node in range(1, self.num_nodes):
            unit = self.units[node]
            label = (node, _LABEL)
            out = [(label, None)]
            if self.children[node]:
                blank = (node, _BLANK)
                out.append((blank, None))
                out += [((c, _LABEL), None) for c in self.children[node] if self.units[c] != unit]
                arcs[blank] = [(blank, None)] + [((c, _LABEL), None) for c in self.children[node]]
            words = self.word_set(node)
            for w in words:
                out.append((root_blank, w))
                out += [((c, _LABEL), w) for c in roots if self.units[c] != unit]
            if words:
                accept[label] = words
            arcs[label] = out
        self._arcs = arcs
        self._accept = accept
        self._starts = (root_blank,) + tuple((c, _LABEL) for c in roots)

    def _build_hmm_arcs(self) -> None:
        last = self.states_per_unit - 1
        roots = self.children[self.ROOT]
        arcs: dict[Position, list[tuple[Position, Optional[str]]]] = {}
        accept: dict[Position, tuple[Optional[str], ...]] = {}
        for node in range(1, self.num_nodes):
            for sub in range(self.states_per_unit):
                pos = (node, sub)
                out = [(pos, None)]
                if sub < last:
                    out.append(((node, sub + 1), None))
                else:
                    out += [((c, 0), None) for c in self.children[node]]
                    words = self.word_set(node)
                    for w in words:
                        out += [((c, 0), w) for c in roots]
                    if words:
                        accept[pos] = words
                arcs[pos] = out
        self._arcs = arcs
        self._accept = accept
        self._starts = tuple((c, 0) for c in roots)


def build_prefix_tree(lexicon: Lexicon, inventory: Optional[UnitInventory] = None,
                      kind: str = "ctc", states_per_unit: int = 1) -> PrefixTree:
    """Share common pronunciation prefixes; children are ordered by unit index."""
    inventory = inventory or lexicon.inventory
    if inventory != lexicon.inventory:
        raise InventoryError("lexicon was built over a different unit inventory")
    if not len(lexicon):
        raise LexiconError("cannot build a prefix tree from an empty lexicon")
    if kind not in ("ctc", "hmm"):
        raise TopologyError(f"unknown topology kind {kind!r}")
    if kind == "ctc" and inventory.blank_index is None:
        raise TopologyError("CTC topology needs an inventory with a blank unit")
    if states_per_unit < 1:
        raise TopologyError(f"states_per_unit must be >= 1, got {states_per_unit}")

    units: list[Optional[int]] = [None]
    parents = [-1]
    children: list[dict[int, int]] = [{}]
    ends: list[list[tuple[str, int]]] = [[]]
    for word in lexicon.words:
        for k, pron in enumerate(lexicon.entries[word]):
            node = PrefixTree.ROOT
            for u in pron:
                nxt = children[node].get(u)
                if nxt is None:
                    nxt = len(units)
                    units.append(u)
                    parents.append(node)
                    children.append({})
                    ends.append([])
                    children[node][u] = nxt
                node = nxt
            ends[node].append((word, k))

    tree = PrefixTree(
        inventory=inventory,
        kind=kind,
        states_per_unit=states_per_unit if kind == "hmm" else 1,
        units=tuple(units),
        parents=tuple(parents),
        children=tuple(tuple(ch[u] for u in sorted(ch)) for ch in children),
        ends=tuple(tuple(e) for e in ends),
    )
    log.debug("Prefix tree: %d words, %d nodes (%s)", len(lexicon), tree.num_nodes, kind)
    return tree


# ---------------------------------------------------------------------------
# Beam search
# ---------------------------------------------------------------------------


class _Token(NamedTuple):
    total: float
    acoustic: float
    lm: float
    words: tuple[str, ...]


def _rank_key(tok: _Token):
    return (-tok.total, tok.words)


def _rank(hyps: list[Hypothesis], weights: ScoreWeights) -> list[Hypothesis]:
    return sorted(hyps, key=lambda h: (-combine_scores(h, weights), h.words))


def beam_decode(frames: ScoredFrames, tree: PrefixTree, lm: NGramLM, config: DecodeConfig) -> NBestList:
    """Token-passing Viterbi search; returns the top config.nbest distinct word sequences.

    Each hypothesis carries its Viterbi acoustic score and unscaled ln P(W)
    (with </s>); scorer_logp stays unset.
    """
    if frames.num_units != tree.inventory.size:
        raise DimensionMismatch(
            f"{frames.utterance_id}: frames have {frames.num_units} units, "
            f"inventory has {tree.inventory.size}"
        )
    weights = config.weights
    alpha, penalty = weights.lm_scale, weights.insertion_penalty
    k = config.nbest
    arcs, accept = tree.arcs, tree.accept

    lm_cache: dict[tuple[str, tuple], tuple[float, tuple]] = {}

    def word_step(word: str, state: tuple) -> tuple[float, tuple]:
        hit = lm_cache.get((word, state))
        if hit is None:
            hit = (lm.conditional_logprob(word, state), lm.advance(state, word))
            lm_cache[(word, state)] = hit
        return hit

    scores = frames.scores
    unit_of = {pos: tree.position_unit(pos) for pos in arcs}
    init_state = lm.initial_state()

    cells: dict[tuple[Position, tuple], dict[tuple[str, ...], _Token]] = {}
    for pos in tree.starts:
        e = float(scores[0, unit_of[pos]])
        cells[(pos, init_state)] = {(): _Token(e, e, 0.0, ())}

    for t in range(1, frames.num_frames):
        row = scores[t]
        nxt: dict[tuple[Position, tuple], dict[tuple[str, ...], _Token]] = {}
        for (pos, state), toks in cells.items():
            for dst, word in arcs[pos]:
                e = float(row[unit_of[dst]])
                if word is None:
                    lp, new_state, add = 0.0, state, e
                else:
                    lp, new_state = word_step(word, state)
                    add = e + alpha * lp + penalty
                bucket = nxt.setdefault((dst, new_state), {})
                for tok in toks.values():
                    words = tok.words if word is None else tok.words + (word,)
                    total = tok.total + add
                    old = bucket.get(words)
                    if old is None or total > old.total:
                        bucket[words] = _Token(total, tok.acoustic + e, tok.lm + lp, words)
        cells = _prune(nxt, k, config.beam_width, config.score_margin)
        if config.verbose:
            log.debug("%s frame %d: %d live tokens in %d cells", frames.utterance_id, t,
                      sum(len(v) for v in cells.values()), len(cells))
        if not cells:
            break

    finals: dict[tuple[str, ...], _Token] = {}
    for (pos, state), toks in cells.items():
        for pending in accept.get(pos, ()):
            if pending is None:
                lp_w, end_state, extra = 0.0, state, 0.0
            else:
                lp_w, end_state = word_step(pending, state)
                extra = penalty
            lp_eos = lm.conditional_logprob(EOS, end_state)
            for tok in toks.values():
                words = tok.words if pending is None else tok.words + (pending,)
                total = tok.total + alpha * (lp_w + lp_eos) + extra
                old = finals.get(words)
                if old is None or total > old.total:
                    finals[words] = _Token(total, tok.acoustic, tok.lm + lp_w + lp_eos, words)

    if not finals:
        log.warning("%s: no token survived to the last frame", frames.utterance_id or "utterance")
        return NBestList(utterance_id=frames.utterance_id, warnings=("no-surviving-token",))

    hyps = [Hypothesis(words=tok.words, acoustic_logp=tok.acoustic, lm_logp=tok.lm)
            for tok in finals.values()]
    return NBestList(utterance_id=frames.utterance_id, hypotheses=tuple(_rank(hyps, weights)[:k]))


def _prune(cells, k: int, beam_width: int, margin: float):
    """Keep the top-k histories per cell, then apply margin and beam-width pruning."""
    flat: list[tuple[tuple, _Token]] = []
    for key, toks in cells.items():
        kept = sorted(toks.values(), key=_rank_key)[:k]
        flat += [(key, tok) for tok in kept]
    if not flat:
        return {}
    best = max(tok.total for _, tok in flat)
    if margin != float("inf"):
        flat = [(key, tok) for key, tok in flat if tok.total >= best - margin]
    if len(flat) > beam_width:
        flat.sort(key=lambda item: _rank_key(item[1]))
        flat = flat[:beam_width]
    out: dict[tuple, dict[tuple[str, ...], _Token]] = {}
    for key, tok in flat:
        out.setdefault(key, {})[tok.words] = tok
    return out


# ---------------------------------------------------------------------------
# Exhaustive reference decoder
# ---------------------------------------------------------------------------


def exhaustive_decode(frames: ScoredFrames, lexicon: Lexicon, lm: NGramLM, weights: ScoreWeights,
                      max_words: int, kind: str = "ctc", states_per_unit: int = 1,
                      acoustic: Literal["viterbi", "forward"] = "viterbi",
                      nbest: Optional[int] = None) -> NBestList:
    """Score every word sequence of up to *max_words* words (the empty one included).

    The acoustic score of W is the best, over pronunciation choices, of the
    Viterbi (or forward-sum) score of W's composed sequence graph. Sequences
    with no feasible alignment are left out.
    """
    vocab = lexicon.words
    total = sum(len(vocab) ** n for n in range(max_words + 1))
    if total > MAX_EXHAUSTIVE_SEQUENCES:
        raise EnumerationLimitExceeded(
            f"{total} word sequences exceed the limit of {MAX_EXHAUSTIVE_SEQUENCES}"
        )
    if frames.num_units != lexicon.inventory.size:
        raise DimensionMismatch(
            f"{frames.utterance_id}: frames have {frames.num_units} units, "
            f"inventory has {lexicon.inventory.size}"
        )

    unit_cache: dict[tuple[int, ...], float] = {}

    def unit_score(units: tuple[int, ...]) -> float:
        if units not in unit_cache:
            graph = build_sequence_graph(units, lexicon.inventory, kind, states_per_unit)
            if acoustic == "forward":
                unit_cache[units] = forward_loglik(graph, frames)
            else:
                try:
                    unit_cache[units] = viterbi_align(graph, frames)[1]
                except NoFeasiblePath:
                    unit_cache[units] = NEG_INF
        return unit_cache[units]

    hyps: list[Hypothesis] = []
    for n in range(max_words + 1):
        if n == 0 and kind == "hmm":
            continue
        for words in itertools.product(vocab, repeat=n):
            best = NEG_INF
            for prons in itertools.product(*(lexicon.entries[w] for w in words)):
                best = max(best, unit_score(tuple(u for p in prons for u in p)))
            if best == NEG_INF:
                continue
            hyps.append(Hypothesis(words=words, acoustic_logp=best, lm_logp=score_sequence(lm, words)))

    ranked = _rank(hyps, weights)
    if nbest is not None:
        ranked = ranked[:nbest]
    return NBestList(utterance_id=frames.utterance_id, hypotheses=tuple(ranked))


def decode_posteriors(posteriors: PosteriorMatrix, tree: PrefixTree, lm: NGramLM, config: DecodeConfig,
                      priors: Optional[UnitPrior] = None, prior_scale: float = 1.0) -> NBestList:
    """Prior subtraction and blank penalty, then beam search."""
    frames = score_frames(posteriors, priors, config.weights, prior_scale=prior_scale,
                          blank_index=tree.inventory.blank_index)
    return beam_decode(frames, tree, lm, config)
