"""
Readers and writers for the plain-text file formats.

Posteriors: "T U" header then T rows of U probabilities.
N-best:     utterance_id, rank, acoustic_logp, lm_logp, scorer_logp|NA,
            word_count, words[, nnlm_logp]  (tab-separated, one hypothesis per line).
References / transcripts: "utterance_id word word ...".
Priors:     "label probability" per line.
Scores:     "utterance_id <tab> logp <tab> unit unit ...".
Weights:    "key=value" lines.

Floats are written with repr() so a write/read cycle is exact.
"""

import math
import os
import tempfile
from pathlib import Path
from typing import Iterable, Optional

import numpy as np
from pydantic import ValidationError

from .config import log
from .constants import (
    BINARY_POSTERIOR_MAGIC,
    NA,
    NBEST_SUFFIX,
    POSTERIOR_SUFFIX,
    ROW_SUM_TOLERANCE,
)
from .errors import InputFormatError, InventoryError
from .schemas import (
    Hypothesis,
    NBestList,
    PosteriorMatrix,
    ScoreWeights,
    UnitInventory,
    UnitPrior,
)


def fmt_float(value: float) -> str:
    return repr(float(value))


def _parse_float(token: str, path: Path, line: int, what: str) -> float:
    try:
        return float(token)
    except ValueError:
        raise InputFormatError(f"cannot parse {what} {token!r}", path, line) from None


def atomic_write_text(path: Path, text: str) -> None:
    """Write *text* to *path* via a temp file in the same directory plus rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def is_junk(p: Path) -> bool:
    """Return True for dotfiles, editor backups and temp files from atomic writes."""
    return p.name.startswith(".") or p.name.endswith("~")


def list_files(root: Path, suffix: str) -> list[Path]:
    """Return regular files in *root* with *suffix*, sorted by name."""
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"directory not found: {root}")
    return sorted(
        p for p in root.iterdir()
        if p.suffix == suffix and p.is_file() and not is_junk(p)
    )


def list_posterior_files(root: Path) -> list[Path]:
    return list_files(root, POSTERIOR_SUFFIX)


def list_nbest_files(root: Path) -> list[Path]:
    return list_files(root, NBEST_SUFFIX)


# ---------------------------------------------------------------------------
# Unit inventory
# ---------------------------------------------------------------------------


def read_inventory(path: Path, blank_label: Optional[str] = "<blank>",
                   kind: str = "graphemic") -> UnitInventory:
    """One unit label per line; *blank_label*, if present, marks the blank."""
    path = Path(path)
    labels: list[str] = []
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        label = raw.strip()
        if not label or label.startswith("#"):
            continue
        if len(label.split()) != 1:
            raise InputFormatError(f"expected one unit label, got {label!r}", path, lineno)
        labels.append(label)
    blank = labels.index(blank_label) if blank_label in labels else None
    try:
        return UnitInventory(labels=tuple(labels), blank_index=blank, kind=kind)
    except ValidationError as exc:
        raise InputFormatError(f"invalid unit inventory: {exc.errors()[0]['msg']}", path) from None


def write_inventory(inventory: UnitInventory, path: Path) -> None:
    atomic_write_text(path, "".join(f"{lab}\n" for lab in inventory.labels))


# ---------------------------------------------------------------------------
# Posteriors
# ---------------------------------------------------------------------------


def load_posteriors(path: Path, utterance_id: Optional[str] = None) -> PosteriorMatrix:
    """Parse a posterior text file; rows within 1e-6 of 1 are renormalised.

    The utterance id defaults to the file stem.
    """
    path = Path(path)
    data = path.read_bytes()
    if data.startswith(BINARY_POSTERIOR_MAGIC):
        raise InputFormatError("binary posterior format is reserved and not supported", path, 1)
    lines = data.decode("utf-8").splitlines()
    if not lines:
        raise InputFormatError("empty file, expected 'T U' header", path, 1)

    header = lines[0].split()
    if len(header) != 2 or not all(tok.isascii() and tok.isdigit() for tok in header):
        raise InputFormatError(f"malformed header {lines[0]!r}, expected 'T U'", path, 1)
    num_frames, num_units = int(header[0]), int(header[1])
    if num_frames < 1 or num_units < 1:
        raise InputFormatError(f"header declares an empty matrix ({num_frames}x{num_units})", path, 1)

    body = [(i, ln) for i, ln in enumerate(lines[1:], 2) if ln.strip()]
    if len(body) != num_frames:
        raise InputFormatError(
            f"header declares {num_frames} frames, file has {len(body)}",
            path, body[-1][0] if body else 1,
        )

    rows = np.empty((num_frames, num_units), dtype=np.float64)
    for t, (lineno, ln) in enumerate(body):
        tokens = ln.split()
        if len(tokens) != num_units:
            raise InputFormatError(f"row has {len(tokens)} entries, expected {num_units}", path, lineno)
        row = [_parse_float(tok, path, lineno, "probability") for tok in tokens]
        if any(not math.isfinite(v) or v < 0.0 for v in row):
            raise InputFormatError("negative or non-finite probability", path, lineno)
        if any(v > 1.0 + ROW_SUM_TOLERANCE for v in row):
            raise InputFormatError("probability greater than 1", path, lineno)
        total = math.fsum(row)
        if abs(total - 1.0) > ROW_SUM_TOLERANCE:
            raise InputFormatError(f"row sum {total:.9g} differs from 1 by more than 1e-6", path, lineno)
        rows[t] = row

    return PosteriorMatrix(utterance_id=utterance_id or path.stem, frames=rows)


def write_posteriors(matrix: PosteriorMatrix, path: Path) -> None:
    t, u = matrix.frames.shape
    lines = [f"{t} {u}"]
    lines += [" ".join(fmt_float(v) for v in row) for row in matrix.frames]
    atomic_write_text(path, "\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# Priors
# ---------------------------------------------------------------------------


def read_priors(path: Path, inventory: UnitInventory, floor: float) -> UnitPrior:
    path = Path(path)
    probs = np.full(inventory.size, np.nan)
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not raw.strip():
            continue
        parts = raw.split()
        if len(parts) != 2:
            raise InputFormatError("expected 'label probability'", path, lineno)
        idx = inventory.index_of(parts[0])
        if idx is None:
            raise InventoryError(f"{path}:{lineno}: unknown unit label {parts[0]!r}")
        probs[idx] = _parse_float(parts[1], path, lineno, "prior")
    if np.isnan(probs).any():
        missing = [inventory.labels[i] for i in np.flatnonzero(np.isnan(probs))]
        raise InputFormatError(f"no prior for unit(s) {', '.join(missing)}", path)
    try:
        return UnitPrior.from_probabilities(probs, floor)
    except ValueError as exc:
        raise InputFormatError(str(exc), path) from None


def write_priors(prior: UnitPrior, inventory: UnitInventory, path: Path) -> None:
    atomic_write_text(
        path,
        "".join(f"{lab} {fmt_float(p)}\n" for lab, p in zip(inventory.labels, prior.priors)),
    )


# ---------------------------------------------------------------------------
# N-best lists
# ---------------------------------------------------------------------------


def _opt_float(token: str, path: Path, line: int, what: str) -> Optional[float]:
    return None if token == NA else _parse_float(token, path, line, what)


def format_nbest(nbest: NBestList) -> str:
    lines = []
    for rank, h in enumerate(nbest.hypotheses, 1):
        fields = [
            nbest.utterance_id,
            str(rank),
            fmt_float(h.acoustic_logp),
            fmt_float(h.lm_logp),
            NA if h.scorer_logp is None else fmt_float(h.scorer_logp),
            str(h.word_count),
            " ".join(h.words),
        ]
        if h.nnlm_logp is not None:
            fields.append(fmt_float(h.nnlm_logp))
        lines.append("\t".join(fields) + "\n")
    return "".join(lines)


def write_nbest(nbest: NBestList, path: Path) -> None:
    atomic_write_text(path, format_nbest(nbest))


def read_nbest(path: Path, utterance_id: Optional[str] = None) -> NBestList:
    """Read one utterance's n-best file; ranks must run 1, 2, 3, ..."""
    path = Path(path)
    hyps: list[Hypothesis] = []
    utt = utterance_id
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not raw.strip():
            continue
        fields = raw.split("\t")
        if len(fields) not in (7, 8):
            raise InputFormatError(f"expected 7 or 8 tab-separated fields, got {len(fields)}", path, lineno)
        if utt is None:
            utt = fields[0]
        elif fields[0] != utt:
            raise InputFormatError(f"utterance id {fields[0]!r} differs from {utt!r}", path, lineno)
        if fields[1] != str(len(hyps) + 1):
            raise InputFormatError(f"rank {fields[1]!r} out of sequence", path, lineno)
        words = tuple(fields[6].split())
        try:
            count = int(fields[5])
        except ValueError:
            raise InputFormatError(f"bad word count {fields[5]!r}", path, lineno) from None
        try:
            hyps.append(Hypothesis(
                words=words,
                acoustic_logp=_parse_float(fields[2], path, lineno, "acoustic_logp"),
                lm_logp=_parse_float(fields[3], path, lineno, "lm_logp"),
                scorer_logp=_opt_float(fields[4], path, lineno, "scorer_logp"),
                word_count=count,
                nnlm_logp=_opt_float(fields[7], path, lineno, "nnlm_logp") if len(fields) == 8 else None,
            ))
        except ValidationError as exc:
            raise InputFormatError(exc.errors()[0]["msg"], path, lineno) from None
    try:
        return NBestList(utterance_id=utt or path.stem, hypotheses=tuple(hyps))
    except ValidationError as exc:
        raise InputFormatError(exc.errors()[0]["msg"], path) from None


# ---------------------------------------------------------------------------
# Transcripts
# ---------------------------------------------------------------------------


def read_transcripts(path: Path) -> dict[str, tuple[str, ...]]:
    """Read "utterance_id word ..." lines; words are uppercased."""
    path = Path(path)
    out: dict[str, tuple[str, ...]] = {}
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        parts = raw.split()
        if not parts:
            continue
        utt = parts[0]
        if utt in out:
            raise InputFormatError(f"duplicate utterance id {utt!r}", path, lineno)
        out[utt] = tuple(w.upper() for w in parts[1:])
    return out


def write_transcripts(transcripts: dict[str, Iterable[str]], path: Path) -> None:
    lines = [" ".join([utt, *words]).rstrip() + "\n" for utt, words in sorted(transcripts.items())]
    atomic_write_text(path, "".join(lines))


# ---------------------------------------------------------------------------
# Score tables
# ---------------------------------------------------------------------------


def read_score_table(path: Path) -> dict[tuple[str, tuple[str, ...]], float]:
    """Map (utterance_id, token sequence) → log-probability."""
    path = Path(path)
    table: dict[tuple[str, tuple[str, ...]], float] = {}
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not raw.strip():
            continue
        fields = raw.split("\t")
        if len(fields) != 3:
            raise InputFormatError("expected 'utterance_id<TAB>logp<TAB>units'", path, lineno)
        logp = _parse_float(fields[1], path, lineno, "logp")
        if not math.isfinite(logp):
            raise InputFormatError(f"score must be finite, got {fields[1]!r}", path, lineno)
        key = (fields[0], tuple(fields[2].split()))
        if key in table:
            raise InputFormatError(f"duplicate entry for {fields[0]!r} {fields[2]!r}", path, lineno)
        table[key] = logp
    log.debug("Loaded %d scores from %s", len(table), path)
    return table


def write_score_table(table: dict[tuple[str, tuple[str, ...]], float], path: Path) -> None:
    lines = [f"{utt}\t{fmt_float(v)}\t{' '.join(units)}\n" for (utt, units), v in sorted(table.items())]
    atomic_write_text(path, "".join(lines))


# ---------------------------------------------------------------------------
# Weights
# ---------------------------------------------------------------------------

_WEIGHT_KEYS = {
    "alpha": "lm_scale",
    "beta": "scorer_scale",
    "insertion_penalty": "insertion_penalty",
    "blank_penalty": "blank_penalty",
    "nnlm_scale": "nnlm_scale",
}


def write_weights(weights: ScoreWeights, path: Path) -> None:
    lines = [
        f"alpha={fmt_float(weights.lm_scale)}",
        f"beta={fmt_float(weights.scorer_scale)}",
        f"insertion_penalty={fmt_float(weights.insertion_penalty)}",
        f"blank_penalty={fmt_float(weights.blank_penalty)}",
    ]
    if weights.nnlm_scale:
        lines.append(f"nnlm_scale={fmt_float(weights.nnlm_scale)}")
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_weights(path: Path) -> ScoreWeights:
    path = Path(path)
    values: dict[str, float] = {}
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not raw.strip():
            continue
        key, sep, value = raw.partition("=")
        key = key.strip()
        if not sep or key not in _WEIGHT_KEYS:
            raise InputFormatError(f"unknown weights line {raw!r}", path, lineno)
        values[_WEIGHT_KEYS[key]] = _parse_float(value.strip(), path, lineno, key)
    try:
        return ScoreWeights(**values)
    except ValidationError as exc:
        raise InputFormatError(exc.errors()[0]["msg"], path) from None
