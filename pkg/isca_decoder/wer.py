"""
Word error rate: Levenshtein alignment, pooled corpus WER, text reports.
"""

from typing import Iterable, Literal, Mapping, Optional, Sequence

from .errors import ConfigError, InputFormatError
from .formats import fmt_float
from .schemas import EditStats, NBestList

Op = Literal["C", "S", "I", "D"]
AlignedPair = tuple[Op, Optional[str], Optional[str]]


def align_words(reference: Sequence[str], hypothesis: Sequence[str]) -> tuple[EditStats, list[AlignedPair]]:
    """Minimum-edit alignment with unit costs.

    Among equal-cost alignments the backtrace prefers a substitution (or match),
    then an insertion, then a deletion.
    """
    ref, hyp = list(reference), list(hypothesis)
    n, m = len(ref), len(hyp)
    dist = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(1, n + 1):
        dist[i][0] = i
    for j in range(1, m + 1):
        dist[0][j] = j
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            dist[i][j] = min(
                dist[i - 1][j - 1] + (ref[i - 1] != hyp[j - 1]),
                dist[i][j - 1] + 1,
                dist[i - 1][j] + 1,
            )

    ops: list[AlignedPair] = []
    i, j = n, m
    while i > 0 or j > 0:
        if i > 0 and j > 0 and dist[i][j] == dist[i - 1][j - 1] + (ref[i - 1] != hyp[j - 1]):
            ops.append(("C" if ref[i - 1] == hyp[j - 1] else "S", ref[i - 1], hyp[j - 1]))
            i, j = i - 1, j - 1
        elif j > 0 and dist[i][j] == dist[i][j - 1] + 1:
            ops.append(("I", None, hyp[j - 1]))
            j -= 1
        else:
            ops.append(("D", ref[i - 1], None))
            i -= 1
    ops.reverse()

    stats = EditStats(
        substitutions=sum(op == "S" for op, _, _ in ops),
        insertions=sum(op == "I" for op, _, _ in ops),
        deletions=sum(op == "D" for op, _, _ in ops),
        reference_length=n,
    )
    return stats, ops


def edit_stats(reference: Sequence[str], hypothesis: Sequence[str]) -> EditStats:
    return align_words(reference, hypothesis)[0]


def corpus_wer(pairs: Iterable[tuple[Sequence[str], Sequence[str]]]) -> EditStats:
    """Pool edit counts over (reference, hypothesis) pairs."""
    total: Optional[EditStats] = None
    for ref, hyp in pairs:
        stats = edit_stats(ref, hyp)
        total = stats if total is None else total + stats
    if total is None:
        raise ConfigError("no utterances to score")
    return total


def score_transcripts(references: Mapping[str, Sequence[str]],
                      hypotheses: Mapping[str, Sequence[str]]) -> list[tuple[str, EditStats]]:
    """Per-utterance stats, sorted by utterance id; both sides must list the same ids."""
    missing = sorted(set(references) - set(hypotheses))
    if missing:
        raise InputFormatError(f"utterance {missing[0]!r} has no hypothesis")
    extra = sorted(set(hypotheses) - set(references))
    if extra:
        raise InputFormatError(f"utterance {extra[0]!r} has no reference")
    if not references:
        raise ConfigError("no utterances to score")
    return [(utt, edit_stats(references[utt], hypotheses[utt])) for utt in sorted(references)]


def _report_line(name: str, stats: EditStats) -> str:
    return (f"{name} {fmt_float(stats.wer)} {stats.substitutions} {stats.insertions} "
            f"{stats.deletions} {stats.reference_length}")


def format_report(per_utterance: Sequence[tuple[str, EditStats]]) -> str:
    """Lines of "id WER S I D N" followed by the pooled TOTAL line."""
    if not per_utterance:
        raise ConfigError("no utterances to report")
    total = per_utterance[0][1]
    for _, stats in per_utterance[1:]:
        total = total + stats
    lines = [_report_line(utt, stats) for utt, stats in per_utterance]
    lines.append(_report_line("TOTAL", total))
    return "\n".join(lines) + "\n"


def nbest_oracle_wer(pairs: Iterable[tuple[NBestList, Sequence[str]]]) -> EditStats:
    """Pooled stats when every utterance picks its lowest-error hypothesis.

    An empty n-best list counts as the empty hypothesis.
    """
    chosen = []
    for nbest, ref in pairs:
        candidates = [h.words for h in nbest.hypotheses] or [()]
        best = min(candidates, key=lambda words: edit_stats(ref, words).errors)
        chosen.append((ref, best))
    return corpus_wer(chosen)
