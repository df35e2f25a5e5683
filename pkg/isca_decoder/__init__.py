"""
isca_decoder: source-channel speech decoding with label-synchronous n-best rescoring.

Frame-synchronous beam search over CTC or HMM acoustic scores, a lexicon and a
back-off n-gram LM produces n-best lists; an extended source-channel rule then
re-ranks them with label-synchronous scores, with CMA-ES tuning of the weights.
"""

from .cli import main  # noqa: F401  re-export for the console script

__all__ = ["main"]
