"""Tabular autoregressive categorical policy with analytic gradients.

The policy conditions on the last ``k`` token ids (query included, short
prefixes padded with a reserved begin marker), hashes that window into a
fixed number of buckets, and keeps one logit row per bucket.  Sampling,
log-probabilities and their gradients are all explicit, so every objective
built on top can be checked against finite differences.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

CHECKPOINT_VERSION = 1

DEFAULT_ORDER = 3
DEFAULT_BUCKETS = 4096

# Polynomial rolling hash over the window; 64-bit wraparound keeps it
# platform independent.
_HASH_MULT = 1000003
_HASH_MASK = (1 << 64) - 1


@dataclass(frozen=True)
class Vocab:
    """Token alphabet of ``size`` ids, one of which terminates responses."""

    size: int
    eos: int

    def __post_init__(self) -> None:
        if self.size < 2:
            raise ValueError(f"vocab size must be >= 2, got {self.size}")
        if not 0 <= self.eos < self.size:
            raise ValueError(f"eos id {self.eos} outside vocab of size {self.size}")

    @property
    def begin_marker(self) -> int:
        # Reserved id used only for padding short context windows; it is
        # never a sampleable token, so vocab.size itself is safe.
        return self.size


@dataclass(frozen=True)
class Context:
    """A fixed-width conditioning window: the last ``order`` token ids."""

    order: int
    window: tuple[int, ...]

    def __post_init__(self) -> None:
        if self.order < 1:
            raise ValueError("context order must be positive")
        if len(self.window) != self.order:
            raise ValueError(
                f"window length {len(self.window)} != order {self.order}"
            )


def bucket_of(window: tuple[int, ...] | Context, buckets: int) -> int:
    """Hash a context window into a logits-table row index."""
    if isinstance(window, Context):
        window = window.window
    h = 0
    for tok in window:
        h = (h * _HASH_MULT + int(tok) + 1) & _HASH_MASK
    return h % buckets


def context_for(
    query: tuple[int, ...],
    response_prefix: tuple[int, ...],
    order: int,
    begin_marker: int,
) -> Context:
    """Window seen by the policy just before emitting the next response token."""
    history = (begin_marker,) * order + tuple(query) + tuple(response_prefix)
    return Context(order, history[-order:])


@dataclass
class PolicyParams:
    """Dense logits table indexed by (context bucket, token id)."""

    vocab: Vocab
    k: int
    logits: np.ndarray  # shape (buckets, vocab.size), float64

    def __post_init__(self) -> None:
        self.logits = np.asarray(self.logits, dtype=np.float64)
        if self.logits.ndim != 2 or self.logits.shape[1] != self.vocab.size:
            raise ValueError(
                f"logits must have shape (buckets, {self.vocab.size}), "
                f"got {self.logits.shape}"
            )
        if self.k < 1:
            raise ValueError("context order k must be positive")
        if not np.isfinite(self.logits).all():
            raise ValueError("logits table contains non-finite entries")

    @property
    def buckets(self) -> int:
        return self.logits.shape[0]

    @classmethod
    def uniform(
        cls, vocab: Vocab, k: int = DEFAULT_ORDER, buckets: int = DEFAULT_BUCKETS
    ) -> "PolicyParams":
        return cls(vocab, k, np.zeros((buckets, vocab.size)))

    def copy(self) -> "PolicyParams":
        return PolicyParams(self.vocab, self.k, self.logits.copy())

    def bucket(self, window: tuple[int, ...] | Context) -> int:
        return bucket_of(window, self.buckets)


@dataclass(frozen=True)
class Rollout:
    """One sampled response with the log-probs recorded at sampling time."""

    query: tuple[int, ...]
    response: tuple[int, ...]
    old_logprobs: np.ndarray  # one entry per response token, each <= 0
    truncated: bool  # hit the length cap without emitting eos

    def __post_init__(self) -> None:
        if len(self.old_logprobs) != len(self.response):
            raise ValueError("old_logprobs length must match response length")

    def content(self, eos: int) -> tuple[int, ...]:
        """Response tokens without the trailing eos, if any."""
        if self.response and self.response[-1] == eos:
            return self.response[:-1]
        return self.response


def _log_softmax_at(row: np.ndarray, tok: int) -> float:
    m = row.max()
    return float(row[tok] - m - np.log(np.exp(row - m).sum()))


def token_logprob(params: PolicyParams, ctx: Context, tok: int) -> float:
    """log pi(tok | ctx); exp of this sums to 1 over the vocab per context."""
    if not 0 <= tok < params.vocab.size:
        raise ValueError(f"token id {tok} outside vocab of size {params.vocab.size}")
    row = params.logits[params.bucket(ctx)]
    if not np.isfinite(row).all():
        raise ValueError("non-finite logits in context row")
    return _log_softmax_at(row, tok)


def token_logprob_grad(
    params: PolicyParams, ctx: Context, tok: int
) -> tuple[int, np.ndarray]:
    """Gradient of token_logprob w.r.t. the logits table.

    Only the row for ``bucket(ctx)`` is nonzero; the entry for token ``w``
    is ``1{w == tok} - softmax_w``, so each row gradient sums to zero.
    Returned as ``(bucket_index, row_gradient)``.
    """
    if not 0 <= tok < params.vocab.size:
        raise ValueError(f"token id {tok} outside vocab of size {params.vocab.size}")
    b = params.bucket(ctx)
    row = params.logits[b]
    if not np.isfinite(row).all():
        raise ValueError("non-finite logits in context row")
    shifted = row - row.max()
    probs = np.exp(shifted)
    probs /= probs.sum()
    grad = -probs
    grad[tok] += 1.0
    return b, grad


def sample_response(
    params: PolicyParams,
    query: tuple[int, ...],
    max_len: int,
    temperature: float,
    rng: np.random.Generator,
    greedy: bool = False,
) -> Rollout:
    """Sample autoregressively until eos or ``max_len`` tokens.

    Temperature scales the sampling distribution only; the recorded
    log-probs are always those of the unscaled policy, which is what the
    likelihood ratio in the surrogate objectives is defined on.
    """
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    if temperature <= 0:
        raise ValueError("temperature must be positive (use greedy=True for argmax)")
    if not np.isfinite(params.logits).all():
        raise ValueError("logits table contains non-finite entries")

    vocab = params.vocab
    window = ((vocab.begin_marker,) * params.k + tuple(query))[-params.k :]
    response: list[int] = []
    logprobs: list[float] = []
    truncated = True
    for _ in range(max_len):
        row = params.logits[bucket_of(window, params.buckets)]
        if greedy:
            tok = int(np.argmax(row))
        else:
            # Gumbel-max draw from softmax(row / temperature).
            gumbel = -np.log(-np.log(rng.random(vocab.size)))
            tok = int(np.argmax(row / temperature + gumbel))
        response.append(tok)
        logprobs.append(_log_softmax_at(row, tok))
        if tok == vocab.eos:
            truncated = False
            break
        window = window[1:] + (tok,)
    return Rollout(
        query=tuple(query),
        response=tuple(response),
        old_logprobs=np.array(logprobs, dtype=np.float64),
        truncated=truncated,
    )


def response_buckets(
    params: PolicyParams, query: tuple[int, ...], response: tuple[int, ...]
) -> np.ndarray:
    """Bucket index of the context before each response position."""
    window = ((params.vocab.begin_marker,) * params.k + tuple(query))[-params.k :]
    out = np.empty(len(response), dtype=np.int64)
    for t, tok in enumerate(response):
        out[t] = bucket_of(window, params.buckets)
        window = window[1:] + (tok,)
    return out


def sequence_logprobs(
    params: PolicyParams,
    query: tuple[int, ...],
    response: tuple[int, ...],
    buckets: np.ndarray | None = None,
    with_probs: bool = False,
) -> tuple[np.ndarray, np.ndarray, np.ndarray | None]:
    """Per-token log-probs of ``response`` given ``query``, vectorized.

    Returns ``(buckets, logprobs, probs)``; ``probs`` is the per-position
    softmax row matrix when ``with_probs`` is set, else None.
    """
    if buckets is None:
        buckets = response_buckets(params, query, response)
    rows = params.logits[buckets]  # (T, V)
    m = rows.max(axis=1, keepdims=True)
    expd = np.exp(rows - m)
    denom = expd.sum(axis=1)
    toks = np.fromiter(response, dtype=np.int64, count=len(response))
    logprobs = rows[np.arange(len(response)), toks] - m[:, 0] - np.log(denom)
    probs = expd / denom[:, None] if with_probs else None
    return buckets, logprobs, probs


def save_checkpoint(params: PolicyParams, path: str) -> None:
    """Write the binary checkpoint: 5 LE uint32 header fields + f32 logits."""
    header = struct.pack(
        "<5I",
        CHECKPOINT_VERSION,
        params.k,
        params.buckets,
        params.vocab.size,
        params.vocab.eos,
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(params.logits.astype("<f4").tobytes(order="C"))


def load_checkpoint(path: str) -> PolicyParams:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 20:
        raise ValueError(f"checkpoint too short: {path}")
    version, k, buckets, vocab_size, eos = struct.unpack("<5I", raw[:20])
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    expected = 20 + 4 * buckets * vocab_size
    if len(raw) != expected:
        raise ValueError(
            f"checkpoint size mismatch: expected {expected} bytes, got {len(raw)}"
        )
    logits = np.frombuffer(raw[20:], dtype="<f4").reshape(buckets, vocab_size)
    return PolicyParams(Vocab(vocab_size, eos), k, logits.astype(np.float64))
