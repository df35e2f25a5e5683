"""
Pydantic models for the domain types shared by every stage of the pipeline.

All models are frozen; numpy payloads are made read-only on construction so
instances can be shared across worker threads.
"""

import math
from pathlib import Path
from typing import Annotated, Literal, Optional

import numpy as np
from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    NonNegativeInt,
    PositiveInt,
    PrivateAttr,
    field_validator,
    model_validator,
)

from .config import (
    DEFAULT_BEAM_WIDTH,
    DEFAULT_GENERATIONS,
    DEFAULT_JOBS,
    DEFAULT_NBEST,
    DEFAULT_SCORE_MARGIN,
    DEFAULT_SIGMA0,
    PRONUNCIATION_CAP,
)
from .constants import ROW_SUM_TOLERANCE

NonNegFinite = Annotated[float, Field(ge=0.0, allow_inf_nan=False)]
Finite = Annotated[float, Field(allow_inf_nan=False)]


def _frozen_array(value, ndim: int) -> np.ndarray:
    arr = np.array(value, dtype=np.float64)
    if arr.ndim != ndim:
        raise ValueError(f"expected a {ndim}-d array, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


# ---------------------------------------------------------------------------
# Units and lexicon
# ---------------------------------------------------------------------------


class UnitInventory(BaseModel):
    model_config = ConfigDict(frozen=True)

    labels: tuple[str, ...]
    blank_index: Optional[int] = None
    kind: Literal["graphemic", "phonetic"] = "graphemic"

    _index: dict[str, int] = PrivateAttr(default_factory=dict)

    @field_validator("labels")
    @classmethod
    def _unique_labels(cls, labels: tuple[str, ...]) -> tuple[str, ...]:
        if not labels:
            raise ValueError("unit inventory is empty")
        if any(not lab or lab != lab.strip() or " " in lab for lab in labels):
            raise ValueError("unit labels must be non-empty and contain no whitespace")
        if len(set(labels)) != len(labels):
            raise ValueError("unit labels must be unique")
        return labels

    @model_validator(mode="after")
    def _blank_in_range(self) -> "UnitInventory":
        if self.blank_index is not None and not 0 <= self.blank_index < len(self.labels):
            raise ValueError(f"blank_index {self.blank_index} outside 0..{len(self.labels) - 1}")
        return self

    def model_post_init(self, __context) -> None:
        self._index = {lab: i for i, lab in enumerate(self.labels)}

    @property
    def size(self) -> int:
        return len(self.labels)

    @property
    def blank_label(self) -> Optional[str]:
        return None if self.blank_index is None else self.labels[self.blank_index]

    def index_of(self, label: str) -> Optional[int]:
        """Return the index of *label*, or None when it is not in the inventory."""
        return self._index.get(label)

    def label_sequence(self, units) -> tuple[str, ...]:
        return tuple(self.labels[u] for u in units)


class Lexicon(BaseModel):
    """Word → pronunciations (unit-index sequences) over a fixed inventory."""

    model_config = ConfigDict(frozen=True)

    inventory: UnitInventory
    entries: dict[str, tuple[tuple[int, ...], ...]]

    @model_validator(mode="after")
    def _valid_entries(self) -> "Lexicon":
        size = self.inventory.size
        blank = self.inventory.blank_index
        for word, prons in self.entries.items():
            if not prons:
                raise ValueError(f"word {word!r} has no pronunciation")
            if len(set(prons)) != len(prons):
                raise ValueError(f"word {word!r} has duplicate pronunciations")
            for pron in prons:
                if not pron:
                    raise ValueError(f"word {word!r} has an empty pronunciation")
                for u in pron:
                    if not 0 <= u < size:
                        raise ValueError(f"word {word!r}: unit index {u} out of range")
                    if u == blank:
                        raise ValueError(f"word {word!r}: pronunciation uses the blank unit")
        return self

    @property
    def words(self) -> list[str]:
        return sorted(self.entries)

    def __contains__(self, word: str) -> bool:
        return word in self.entries

    def __len__(self) -> int:
        return len(self.entries)


# ---------------------------------------------------------------------------
# Acoustic evidence
# ---------------------------------------------------------------------------


class PosteriorMatrix(BaseModel):
    """T×U frame posteriors P(s_t = u | o_t) for one utterance."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    utterance_id: str
    frames: np.ndarray

    @field_validator("frames", mode="before")
    @classmethod
    def _row_stochastic(cls, value) -> np.ndarray:
        arr = np.array(value, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError(f"posteriors must be a non-empty T×U matrix, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)) or np.any(arr < 0.0) or np.any(arr > 1.0 + ROW_SUM_TOLERANCE):
            raise ValueError("posterior entries must lie in [0, 1]")
        sums = arr.sum(axis=1)
        bad = np.flatnonzero(np.abs(sums - 1.0) > ROW_SUM_TOLERANCE)
        if bad.size:
            raise ValueError(f"row {int(bad[0])} sums to {sums[bad[0]]:.9g}")
        arr = np.minimum(arr / sums[:, None], 1.0)
        arr.setflags(write=False)
        return arr

    @property
    def num_frames(self) -> int:
        return int(self.frames.shape[0])

    @property
    def num_units(self) -> int:
        return int(self.frames.shape[1])


class UnitPrior(BaseModel):
    """Unit priors P(s); every entry is at least *floor*."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    priors: np.ndarray
    floor: Annotated[float, Field(gt=0.0, lt=1.0)]

    @field_validator("priors", mode="before")
    @classmethod
    def _as_vector(cls, value) -> np.ndarray:
        return _frozen_array(value, 1)

    @model_validator(mode="after")
    def _floored_distribution(self) -> "UnitPrior":
        p = self.priors
        if p.size == 0:
            raise ValueError("priors are empty")
        if np.any(p < self.floor * (1.0 - 1e-9)):
            raise ValueError("prior entry below floor")
        if abs(float(p.sum()) - 1.0) > ROW_SUM_TOLERANCE:
            raise ValueError(f"priors sum to {float(p.sum()):.9g}")
        return self

    @classmethod
    def from_probabilities(cls, probs, floor: float) -> "UnitPrior":
        """Floor *probs* at *floor*, taking the mass from the unfloored entries.

        *probs* must sum to 1 within the row tolerance before flooring.
        """
        p = np.array(probs, dtype=np.float64)
        if p.ndim != 1 or p.size == 0:
            raise ValueError("priors must be a non-empty vector")
        if np.any(p < 0) or abs(float(p.sum()) - 1.0) > ROW_SUM_TOLERANCE:
            raise ValueError(f"priors must be a distribution (sum {float(p.sum()):.9g})")
        if floor * p.size >= 1.0:
            raise ValueError(f"floor {floor} too large for {p.size} units")
        p = p / p.sum()
        floored = np.zeros(p.size, dtype=bool)
        for _ in range(p.size):
            newly = (p < floor) & ~floored
            if not newly.any():
                break
            floored |= newly
            free = ~floored
            p[floored] = floor
            p[free] *= (1.0 - floor * floored.sum()) / p[free].sum()
        return cls(priors=p, floor=floor)

    @property
    def size(self) -> int:
        return int(self.priors.size)


# ---------------------------------------------------------------------------
# Hypotheses and weights
# ---------------------------------------------------------------------------


def _no_nan_or_posinf(value: Optional[float], name: str) -> None:
    if value is None:
        return
    if math.isnan(value) or value == math.inf:
        raise ValueError(f"{name} must be finite or -inf, got {value}")


class Hypothesis(BaseModel):
    model_config = ConfigDict(frozen=True)

    words: tuple[str, ...]
    acoustic_logp: float
    lm_logp: float
    scorer_logp: Optional[float] = None
    word_count: NonNegativeInt
    nnlm_logp: Optional[float] = None
    scorer_truncated: bool = False

    @model_validator(mode="before")
    @classmethod
    def _default_word_count(cls, data):
        if isinstance(data, dict) and data.get("word_count") is None and "words" in data:
            data = {**data, "word_count": len(data["words"])}
        return data

    @model_validator(mode="after")
    def _consistent(self) -> "Hypothesis":
        if self.word_count != len(self.words):
            raise ValueError(f"word_count {self.word_count} != {len(self.words)} words")
        _no_nan_or_posinf(self.acoustic_logp, "acoustic_logp")
        _no_nan_or_posinf(self.lm_logp, "lm_logp")
        _no_nan_or_posinf(self.scorer_logp, "scorer_logp")
        _no_nan_or_posinf(self.nnlm_logp, "nnlm_logp")
        return self

    @property
    def text(self) -> str:
        return " ".join(self.words)


class NBestList(BaseModel):
    """Ranked hypotheses for one utterance, best first."""

    model_config = ConfigDict(frozen=True)

    utterance_id: str
    hypotheses: tuple[Hypothesis, ...] = ()
    warnings: tuple[str, ...] = ()

    @model_validator(mode="after")
    def _distinct(self) -> "NBestList":
        seen = {h.words for h in self.hypotheses}
        if len(seen) != len(self.hypotheses):
            raise ValueError(f"{self.utterance_id}: n-best list repeats a word sequence")
        return self

    def __len__(self) -> int:
        return len(self.hypotheses)

    @property
    def best(self) -> Optional[Hypothesis]:
        return self.hypotheses[0] if self.hypotheses else None


class ScoreWeights(BaseModel):
    """Scaling factors of the combined decision rule.

    total = acoustic + lm_scale·lm + scorer_scale·scorer
            + nnlm_scale·nnlm + insertion_penalty·words;
    blank_penalty is subtracted from blank log-posteriors before decoding.
    """

    model_config = ConfigDict(frozen=True)

    lm_scale: NonNegFinite = 1.0
    scorer_scale: NonNegFinite = 0.0
    blank_penalty: Finite = 0.0
    insertion_penalty: Finite = 0.0
    nnlm_scale: NonNegFinite = 0.0


class DecodeConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    beam_width: PositiveInt = DEFAULT_BEAM_WIDTH
    score_margin: Annotated[float, Field(ge=0.0)] = DEFAULT_SCORE_MARGIN  # +inf disables margin pruning
    nbest: PositiveInt = DEFAULT_NBEST
    weights: ScoreWeights = Field(default_factory=ScoreWeights)
    verbose: bool = False


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------


class EditStats(BaseModel):
    model_config = ConfigDict(frozen=True)

    substitutions: NonNegativeInt = 0
    insertions: NonNegativeInt = 0
    deletions: NonNegativeInt = 0
    reference_length: NonNegativeInt = 0

    @property
    def errors(self) -> int:
        return self.substitutions + self.insertions + self.deletions

    @property
    def wer(self) -> float:
        if self.reference_length == 0:
            return math.inf if self.insertions > 0 else 0.0
        return self.errors / self.reference_length

    def __add__(self, other: "EditStats") -> "EditStats":
        return EditStats(
            substitutions=self.substitutions + other.substitutions,
            insertions=self.insertions + other.insertions,
            deletions=self.deletions + other.deletions,
            reference_length=self.reference_length + other.reference_length,
        )


# ---------------------------------------------------------------------------
# Command-line run configuration
# ---------------------------------------------------------------------------


class RunConfig(BaseModel):
    """Everything one CLI invocation needs; loaded from key=value plus flags."""

    model_config = ConfigDict(frozen=True)

    # paths
    posteriors_dir: Optional[Path] = None
    inventory: Optional[Path] = None
    blank_label: str = "<blank>"
    unit_kind: Literal["graphemic", "phonetic"] = "graphemic"
    lexicon: Optional[Path] = None
    lm: Optional[Path] = None
    priors: Optional[Path] = None
    scorer_table: Optional[Path] = None
    scorer_inventory: Optional[Path] = None
    scorer_lexicon: Optional[Path] = None
    nnlm_table: Optional[Path] = None
    references: Optional[Path] = None
    nbest_dir: Optional[Path] = None
    hypotheses: Optional[Path] = None
    weights_file: Optional[Path] = None
    output_dir: Optional[Path] = None

    # decoding
    beam_width: PositiveInt = DEFAULT_BEAM_WIDTH
    score_margin: Annotated[float, Field(ge=0.0)] = DEFAULT_SCORE_MARGIN
    nbest: PositiveInt = DEFAULT_NBEST
    topology: Literal["ctc", "hmm"] = "ctc"
    states_per_unit: PositiveInt = 1
    prior_scale: NonNegFinite = 1.0

    # weights
    lm_scale: NonNegFinite = 1.0
    scorer_scale: NonNegFinite = 0.0
    blank_penalty: Finite = 0.0
    insertion_penalty: Finite = 0.0
    nnlm_scale: NonNegFinite = 0.0

    # rescoring / tuning
    scorer: Literal["file", "ctc-prefix"] = "file"
    pron_cap: PositiveInt = PRONUNCIATION_CAP
    length_normalize: bool = False
    nbest_limit: Optional[PositiveInt] = None
    population: Optional[PositiveInt] = None
    generations: NonNegativeInt = DEFAULT_GENERATIONS
    seed: int = 0
    sigma0: Annotated[float, Field(gt=0.0, allow_inf_nan=False)] = DEFAULT_SIGMA0
    tune_insertion: bool = False

    jobs: PositiveInt = DEFAULT_JOBS
    verbose: bool = False

    @property
    def weights(self) -> ScoreWeights:
        return ScoreWeights(
            lm_scale=self.lm_scale,
            scorer_scale=self.scorer_scale,
            blank_penalty=self.blank_penalty,
            insertion_penalty=self.insertion_penalty,
            nnlm_scale=self.nnlm_scale,
        )

    @property
    def decode_config(self) -> DecodeConfig:
        return DecodeConfig(
            beam_width=self.beam_width,
            score_margin=self.score_margin,
            nbest=self.nbest,
            weights=self.weights,
            verbose=self.verbose,
        )
