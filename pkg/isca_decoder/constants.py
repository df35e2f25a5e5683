"""
Canonical constants shared by the file formats and the scoring code.

Every tolerance here is part of a documented file-format or model invariant.
"""

import math

# ---------------------------------------------------------------------------
# Special tokens (word level, ARPA conventions)
# ---------------------------------------------------------------------------
BOS = "<s>"
EOS = "</s>"
UNK = "<unk>"
SPECIAL_WORDS = frozenset({BOS, EOS, UNK})

DEFAULT_BLANK_LABEL = "<blank>"

# ---------------------------------------------------------------------------
# Numeric tolerances and floors
# ---------------------------------------------------------------------------
ROW_SUM_TOLERANCE = 1e-6  # posterior rows and priors must sum to 1 within this
POSTERIOR_FLOOR = 1e-10  # applied before ln(posterior)
LM_NORMALISATION_TOLERANCE = 1e-4
ARPA_MISSING_LOG10 = -99.0  # conventional "impossible" value, e.g. P(<s>)

NEG_INF = -math.inf
LN10 = math.log(10.0)

# ---------------------------------------------------------------------------
# Enumeration guards
# ---------------------------------------------------------------------------
MAX_EXHAUSTIVE_SEQUENCES = 10**6
MAX_LM_ORDER = 4

# ---------------------------------------------------------------------------
# File formats
# ---------------------------------------------------------------------------
BINARY_POSTERIOR_MAGIC = b"ISCAPOST"  # reserved for a future binary format
POSTERIOR_SUFFIX = ".post"
NBEST_SUFFIX = ".nbest"
NA = "NA"

UNIT_KINDS = frozenset({"graphemic", "phonetic"})
TOPOLOGY_KINDS = frozenset({"ctc", "hmm"})

# ---------------------------------------------------------------------------
# Exit codes
# ---------------------------------------------------------------------------
EXIT_OK = 0
EXIT_INPUT_ERROR = 1
EXIT_INTERNAL_ERROR = 2
