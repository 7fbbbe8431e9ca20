"""Trailing-loop detection and the repetition score it induces.

A sequence "degenerates" when some suffix is just a block repeated over and
over (a partial final copy is allowed).  The score is the fraction of the
sequence covered by the earliest such suffix, so loops that start earlier
are penalized harder.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence


@dataclass(frozen=True)
class LoopSpan:
    """Suffix ``tokens[start:]`` made of ``repeats`` full copies of a block
    of length ``period`` plus an optional partial copy at the end."""

    start: int
    period: int
    repeats: int


def _border_table(seq: Sequence[int]) -> list[int]:
    """KMP failure function: border[i] = length of the longest proper border
    of seq[:i+1]."""
    border = [0] * len(seq)
    j = 0
    for i in range(1, len(seq)):
        while j > 0 and seq[i] != seq[j]:
            j = border[j - 1]
        if seq[i] == seq[j]:
            j += 1
        border[i] = j
    return border


def _periods(seq: Sequence[int]):
    """All periods of seq in increasing order (partial final block allowed).

    p is a period iff seq[i] == seq[i+p] for every valid i, which holds iff
    seq has a border of length len(seq) - p; walking the border chain from
    the longest border enumerates the periods smallest first.
    """
    n = len(seq)
    border = _border_table(seq)
    b = border[-1]
    while b > 0:
        yield n - b
        b = border[b - 1]
    yield n


def detect_loop(
    tokens: Sequence[int], min_period: int = 1, min_repeats: int = 3
) -> Optional[LoopSpan]:
    """Earliest trailing loop, ties broken by the smallest period.

    A candidate (start, period) qualifies when tokens[start:] holds at least
    ``min_repeats`` full consecutive copies of its leading ``period`` tokens,
    a partial final copy permitted.  Returns None when nothing qualifies.
    """
    n = len(tokens)
    if n == 0:
        raise ValueError("tokens must be nonempty")
    for start in range(n):
        suffix = tokens[start:]
        m = n - start
        for period in _periods(suffix):
            repeats = m // period
            if repeats < min_repeats:
                break  # periods only grow, so repeats only shrink
            if period >= min_period:
                return LoopSpan(start=start, period=period, repeats=repeats)
    return None


def repetition_score(
    tokens: Sequence[int], min_period: int = 1, min_repeats: int = 3
) -> float:
    """Fraction of the sequence inside the detected loop; 0 when loop-free."""
    span = detect_loop(tokens, min_period=min_period, min_repeats=min_repeats)
    if span is None:
        return 0.0
    return (len(tokens) - span.start) / len(tokens)
