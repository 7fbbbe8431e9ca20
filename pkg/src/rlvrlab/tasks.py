"""Synthetic verifiable arithmetic tasks for the toy policy.

Queries and responses share one small alphabet: the ten digits, the two
operators, '=', and eos.  Every task has a single integer answer that the
cascade verifier can check, so rewards are exact.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .policy import Vocab

TASK_FAMILIES = ("modular-add", "modular-mul", "digit-sum")

PLUS = 10
TIMES = 11
EQUALS = 12
EOS = 13

VOCAB = Vocab(size=14, eos=EOS)

_CHARS = "0123456789+*="
_CHAR_TO_TOKEN = {c: i for i, c in enumerate(_CHARS)}


@dataclass(frozen=True)
class TaskSpec:
    family: str = "modular-add"
    modulus: int = 10
    num_digits: int = 3  # digit-sum only

    def __post_init__(self) -> None:
        if self.family not in TASK_FAMILIES:
            raise ValueError(f"unknown task family {self.family!r}")
        if not 2 <= self.modulus <= 10:
            raise ValueError("modulus must be in [2, 10] for single-token answers")
        if self.num_digits < 1:
            raise ValueError("num_digits must be positive")

    @property
    def query_length(self) -> int:
        if self.family == "digit-sum":
            return self.num_digits + 1
        return 4  # "a+b=" / "a*b="


def generate_task(
    spec: TaskSpec, rng: np.random.Generator
) -> tuple[tuple[int, ...], str]:
    """One (query tokens, gold answer string) pair."""
    if spec.family == "modular-add":
        a, b = int(rng.integers(0, 10)), int(rng.integers(0, 10))
        return (a, PLUS, b, EQUALS), str((a + b) % spec.modulus)
    if spec.family == "modular-mul":
        a, b = int(rng.integers(0, 10)), int(rng.integers(0, 10))
        return (a, TIMES, b, EQUALS), str((a * b) % spec.modulus)
    digits = [int(rng.integers(0, 10)) for _ in range(spec.num_digits)]
    return tuple(digits) + (EQUALS,), str(sum(digits))


def decode_tokens(tokens) -> str:
    """Token ids back to text, stopping at the first eos."""
    chars = []
    for tok in tokens:
        if tok == EOS:
            break
        chars.append(_CHARS[tok])
    return "".join(chars)


def encode_text(text: str) -> tuple[int, ...]:
    try:
        return tuple(_CHAR_TO_TOKEN[c] for c in text)
    except KeyError as exc:
        raise ValueError(f"character {exc.args[0]!r} not in the task alphabet")


def policy_answerer(params, max_len: int, temperature: float = 1.0):
    """Adapt a policy into a question-answering callable.

    Returns ``fn(question, rng) -> (answer, truncated)`` suitable for
    pass-rate estimation: the question text is tokenized, rolled out, and
    the response decoded back to an answer string.
    """
    from .policy import sample_response

    def answer(question: str, rng) -> tuple[str, bool]:
        rollout = sample_response(
            params, encode_text(question), max_len, temperature, rng
        )
        return decode_tokens(rollout.response), rollout.truncated

    return answer
