"""
HMM state graphs for unit sequences.

Every graph has exactly one non-emitting start state and one non-emitting end
state; all other states emit one unit. A length-T path is
start → e_1 → … → e_T → end, so the end state is the only final state.

Two topologies are supported:
  * CTC: alternating skippable blank states and unit states (2L+1 emitting
    positions), self-loops everywhere, no direct skip between repeated labels.
  * HMM: a left-to-right chain with states_per_unit emitting states per unit.

Transition log-probabilities default to 0 (every transition "forced to 1.0");
``normalized=True`` gives each state uniform outgoing probabilities instead.
"""

import math
from collections import defaultdict
from typing import Optional, Sequence

from pydantic import BaseModel, ConfigDict

from .errors import LexiconError, TopologyError
from .schemas import Lexicon, UnitInventory


class StateGraph(BaseModel):
    model_config = ConfigDict(frozen=True)

    emissions: tuple[Optional[int], ...]
    transitions: tuple[tuple[int, int, float], ...]
    start: int
    final: frozenset[int]
    uniform_one: bool = True

    @property
    def num_states(self) -> int:
        return len(self.emissions)

    @property
    def num_emitting(self) -> int:
        return sum(e is not None for e in self.emissions)


def _outgoing_logp(arcs: list[tuple[int, int]], normalized: bool) -> list[tuple[int, int, float]]:
    if not normalized:
        return [(a, b, 0.0) for a, b in arcs]
    fanout: dict[int, int] = defaultdict(int)
    for a, _ in arcs:
        fanout[a] += 1
    return [(a, b, -math.log(fanout[a])) for a, b in arcs]


def build_ctc_sequence_graph(units: Sequence[int], inventory: UnitInventory,
                             normalized: bool = False) -> StateGraph:
    """CTC-equivalent topology for *units*: ∅ u1 ∅ u2 … uL ∅."""
    if inventory.size == 0:
        raise TopologyError("empty unit inventory")
    blank = inventory.blank_index
    if blank is None:
        raise TopologyError("CTC topology needs an inventory with a blank unit")
    units = tuple(units)
    for u in units:
        if u == blank:
            raise TopologyError("label sequence contains the blank unit")
        if not 0 <= u < inventory.size:
            raise TopologyError(f"unit index {u} out of range")

    ext: list[int] = [blank]
    for u in units:
        ext += [u, blank]
    n_ext = len(ext)
    start, end = 0, n_ext + 1
    emissions: list[Optional[int]] = [None, *ext, None]

    arcs: list[tuple[int, int]] = [(start, 1)]
    if units:
        arcs.append((start, 2))
    for s in range(n_ext):
        sid = s + 1
        arcs.append((sid, sid))
        if s + 1 < n_ext:
            arcs.append((sid, sid + 1))
        if ext[s] != blank and s + 2 < n_ext and ext[s + 2] != ext[s]:
            arcs.append((sid, sid + 2))
    arcs.append((n_ext, end))
    if units:
        arcs.append((n_ext - 1, end))

    return StateGraph(
        emissions=tuple(emissions),
        transitions=tuple(_outgoing_logp(arcs, normalized)),
        start=start,
        final=frozenset({end}),
        uniform_one=not normalized,
    )


def build_hmm_sequence_graph(units: Sequence[int], states_per_unit: int = 1,
                             loop_prob: Optional[float] = None,
                             normalized: bool = False) -> StateGraph:
    """Left-to-right chain; each unit expands to *states_per_unit* looped states.

    *loop_prob* sets an estimated self-loop probability (forward arc gets the rest);
    otherwise transitions follow the uniform-1.0 or *normalized* convention.
    """
    units = tuple(units)
    if not units:
        raise TopologyError("HMM sequence graph needs at least one unit")
    if states_per_unit < 1:
        raise TopologyError(f"states_per_unit must be >= 1, got {states_per_unit}")
    if loop_prob is not None and not 0.0 < loop_prob < 1.0:
        raise TopologyError(f"loop_prob must lie in (0, 1), got {loop_prob}")

    emissions: list[Optional[int]] = [None]
    for u in units:
        emissions += [u] * states_per_unit
    n_emit = len(emissions) - 1
    start, end = 0, n_emit + 1
    emissions.append(None)

    arcs = [(start, 1)]
    for sid in range(1, n_emit + 1):
        arcs.append((sid, sid))
        arcs.append((sid, sid + 1))  # sid + 1 == end for the last state

    if loop_prob is not None:
        loop, fwd = math.log(loop_prob), math.log1p(-loop_prob)
        transitions = [(a, b, 0.0 if a == start else (loop if a == b else fwd)) for a, b in arcs]
        uniform_one = False
    else:
        transitions = _outgoing_logp(arcs, normalized)
        uniform_one = not normalized

    return StateGraph(
        emissions=tuple(emissions),
        transitions=tuple(transitions),
        start=start,
        final=frozenset({end}),
        uniform_one=uniform_one,
    )


def validate_graph(graph: StateGraph, tolerance: float = 1e-6) -> None:
    """Raise TopologyError unless the graph satisfies the StateGraph invariants."""
    n = graph.num_states
    if not 0 <= graph.start < n or graph.emissions[graph.start] is not None:
        raise TopologyError("start state must exist and be non-emitting")
    if not graph.final or any(not 0 <= f < n for f in graph.final):
        raise TopologyError("final states must exist")

    succ: dict[int, list[int]] = defaultdict(list)
    pred: dict[int, list[int]] = defaultdict(list)
    out_mass: dict[int, list[float]] = defaultdict(list)
    for a, b, lp in graph.transitions:
        if not (0 <= a < n and 0 <= b < n):
            raise TopologyError(f"transition {a}->{b} references a missing state")
        if graph.uniform_one and lp != 0.0:
            raise TopologyError(f"transition {a}->{b} has log-prob {lp} under the uniform-1.0 convention")
        if lp > 0.0:
            raise TopologyError(f"transition {a}->{b} has positive log-prob {lp}")
        succ[a].append(b)
        pred[b].append(a)
        out_mass[a].append(lp)

    def closure(seeds, edges) -> set[int]:
        seen, stack = set(seeds), list(seeds)
        while stack:
            for nxt in edges[stack.pop()]:
                if nxt not in seen:
                    seen.add(nxt)
                    stack.append(nxt)
        return seen

    reach = closure([graph.start], succ)
    coreach = closure(list(graph.final), pred)
    for s in range(n):
        if s not in reach:
            raise TopologyError(f"state {s} is unreachable from start")
        if s not in coreach:
            raise TopologyError(f"state {s} cannot reach a final state")

    if not graph.uniform_one:
        for s, lps in out_mass.items():
            total = math.fsum(math.exp(lp) for lp in lps)
            if abs(total - 1.0) > tolerance:
                raise TopologyError(f"outgoing probabilities of state {s} sum to {total:.9g}")


def dump_graph(graph: StateGraph, inventory: Optional[UnitInventory] = None) -> str:
    """Debug dump: one line per transition "from to logp emission-label"."""
    lines = []
    for a, b, lp in graph.transitions:
        emit = graph.emissions[b]
        if emit is None:
            label = "-"
        elif inventory is not None:
            label = inventory.labels[emit]
        else:
            label = str(emit)
        lines.append(f"{a} {b} {lp!r} {label}")
    return "\n".join(lines) + "\n"


def build_sequence_graph(units: Sequence[int], inventory: UnitInventory, kind: str = "ctc",
                         states_per_unit: int = 1, normalized: bool = False) -> StateGraph:
    """Dispatch on topology *kind* ("ctc" or "hmm")."""
    if kind == "ctc":
        return build_ctc_sequence_graph(units, inventory, normalized=normalized)
    if kind == "hmm":
        return build_hmm_sequence_graph(units, states_per_unit, normalized=normalized)
    raise TopologyError(f"unknown topology kind {kind!r}")


def concatenate_units(lexicon: Lexicon, words: Sequence[str],
                      choice: Optional[Sequence[int]] = None) -> tuple[int, ...]:
    """Spell *words* as one unit sequence, using pronunciation *choice[i]* for word i (default 0)."""
    if choice is not None and len(choice) != len(words):
        raise TopologyError(f"{len(choice)} pronunciation choices for {len(words)} words")
    units: list[int] = []
    for i, word in enumerate(words):
        prons = lexicon.entries.get(word)
        if prons is None:
            raise LexiconError(f"word {word!r} is not in the lexicon")
        k = 0 if choice is None else choice[i]
        if not 0 <= k < len(prons):
            raise TopologyError(f"word {word!r} has no pronunciation #{k}")
        units.extend(prons[k])
    return tuple(units)
