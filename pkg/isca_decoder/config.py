"""
Global configuration: environment-driven defaults and the shared package logger.
"""

import logging
import os

from dotenv import load_dotenv

load_dotenv()

log = logging.getLogger("isca-decoder")

# ---------------------------------------------------------------------------
# Runtime defaults (override via environment or .env)
# ---------------------------------------------------------------------------

LOG_LEVEL = os.getenv("ISCA_LOG_LEVEL", "WARNING").upper()
DEFAULT_JOBS = int(os.getenv("ISCA_JOBS", "1"))
PRIOR_FLOOR = float(os.getenv("ISCA_PRIOR_FLOOR", "1e-8"))
PRONUNCIATION_CAP = int(os.getenv("ISCA_PRON_CAP", "64"))

# ---------------------------------------------------------------------------
# Decoding / tuning defaults
# ---------------------------------------------------------------------------

DEFAULT_BEAM_WIDTH = 256
DEFAULT_SCORE_MARGIN = 50.0
DEFAULT_NBEST = 20
DEFAULT_DISCOUNT = 0.5
DEFAULT_SIGMA0 = 0.3
DEFAULT_GENERATIONS = 30


def setup_logging(verbose: bool = False) -> None:
    """Attach a stderr handler to the package logger.

    *verbose* forces DEBUG; otherwise ISCA_LOG_LEVEL decides.
    Calling twice does not duplicate handlers.
    """
    level = logging.DEBUG if verbose else getattr(logging, LOG_LEVEL, logging.WARNING)
    log.setLevel(level)
    if not any(getattr(h, "_isca_handler", False) for h in log.handlers):
        handler = logging.StreamHandler()
        handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
        handler._isca_handler = True  # type: ignore[attr-defined]
        log.addHandler(handler)
