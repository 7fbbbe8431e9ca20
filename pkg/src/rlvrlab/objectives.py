"""Group-normalized advantages and clipped policy-gradient surrogates.

Two objective flavors are provided: a token-mean form that normalizes by
the total token count of the batch (so long rollouts are not down-weighted)
with decoupled clip bounds, and a sequence-mean form that averages per
rollout and per group and adds a K3 KL penalty against a frozen reference.
Both return the objective value together with its analytic gradient over
the policy logits table, checked elsewhere against finite differences.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from .policy import PolicyParams, Rollout, sequence_logprobs

STD_FLOOR = 1e-6

# A clip bound is either a point value or a uniform interval (lo, hi).
ClipSpec = Union[float, tuple[float, float]]


@dataclass(frozen=True)
class Group:
    """The rollouts sampled for one query, with their rewards and penalties."""

    query_id: int
    rollouts: tuple[Rollout, ...]
    rewards: np.ndarray  # {0, 1} per rollout
    penalties: np.ndarray  # repetition scores in [0, 1] per rollout

    def __post_init__(self) -> None:
        if not (len(self.rollouts) == len(self.rewards) == len(self.penalties)):
            raise ValueError("rollouts, rewards and penalties must align")
        if len(self.rollouts) < 2:
            raise ValueError("a group needs at least 2 rollouts")

    @property
    def size(self) -> int:
        return len(self.rollouts)


@dataclass(frozen=True)
class AdvantageSet:
    """Per-rollout advantages, constant across each rollout's tokens."""

    values: np.ndarray
    degenerate: bool  # all-zero because the group std fell below the floor


@dataclass(frozen=True)
class RefModel:
    """Frozen snapshot of policy parameters used as the KL reference."""

    params: PolicyParams

    @classmethod
    def capture(cls, params: PolicyParams) -> "RefModel":
        frozen = params.copy()
        frozen.logits.setflags(write=False)
        return cls(frozen)


@dataclass(frozen=True)
class ClipSchedule:
    """Per-stage clip bound specifications (low, high)."""

    stages: tuple[tuple[ClipSpec, ClipSpec], ...]

    def __post_init__(self) -> None:
        for low, high in self.stages:
            for spec in (low, high):
                vals = spec if isinstance(spec, tuple) else (spec, spec)
                for v in vals:
                    if not 0.0 < v < 1.0:
                        raise ValueError(f"clip value {v} outside (0, 1)")


def shaped_advantages(
    rewards: Sequence[float], penalties: Sequence[float]
) -> AdvantageSet:
    """Normalize reward-minus-penalty within the group.

    Uses the population std; when it falls below the floor the advantages
    are all zero and the set is flagged degenerate.
    """
    r = np.asarray(rewards, dtype=np.float64)
    p = np.asarray(penalties, dtype=np.float64)
    if r.shape != p.shape:
        raise ValueError(f"length mismatch: {r.shape} vs {p.shape}")
    if r.size < 2:
        raise ValueError("need at least 2 rollouts to normalize")
    shaped = r - p
    std = float(shaped.std())
    if std < STD_FLOOR:
        return AdvantageSet(np.zeros_like(shaped), degenerate=True)
    return AdvantageSet((shaped - shaped.mean()) / std, degenerate=False)


def reward_advantages(rewards: Sequence[float]) -> AdvantageSet:
    """Group-normalized rewards: shaped_advantages with zero penalties."""
    r = np.asarray(rewards, dtype=np.float64)
    return shaped_advantages(r, np.zeros_like(r))


def k3_divergence(ratio_ref_over_theta: float) -> float:
    """Non-negative KL estimator rho - ln(rho) - 1, rho = pi_ref / pi_theta."""
    if ratio_ref_over_theta <= 0:
        raise ValueError("ratio must be positive")
    rho = ratio_ref_over_theta
    return rho - math.log(rho) - 1.0


def clipped_term(
    ratio: float, advantage: float, eps_low: float, eps_high: float
) -> float:
    """min(ratio * adv, clip(ratio, 1 - eps_low, 1 + eps_high) * adv)."""
    clipped = min(max(ratio, 1.0 - eps_low), 1.0 + eps_high)
    return min(ratio * advantage, clipped * advantage)


def filter_mixed_groups(groups: Sequence[Group]) -> list[Group]:
    """Keep only groups whose rollouts are neither all correct nor all wrong."""
    kept = []
    for g in groups:
        correct = int((g.rewards > 0.5).sum())
        if 0 < correct < g.size:
            kept.append(g)
    return kept


def sample_clip_ratios(
    schedule: ClipSchedule, stage: int, rng: np.random.Generator
) -> tuple[float, float]:
    """Resolve the stage's clip specs; intervals are sampled uniformly."""
    if not 0 <= stage < len(schedule.stages):
        raise ValueError(f"stage {stage} outside schedule of {len(schedule.stages)}")
    out = []
    for spec in schedule.stages[stage]:
        if isinstance(spec, tuple):
            lo, hi = spec
            out.append(float(rng.uniform(lo, hi)))
        else:
            out.append(float(spec))
    return out[0], out[1]


def _accumulate_clipped(
    grad: np.ndarray,
    params: PolicyParams,
    old_params: PolicyParams,
    rollout: Rollout,
    advantage: float,
    eps_low: float,
    eps_high: float,
    weight: float,
) -> tuple[float, np.ndarray, np.ndarray, np.ndarray]:
    """Add one rollout's clipped-surrogate gradient; returns the summed term
    value plus (buckets, new logprobs, softmax rows) for reuse."""
    buckets, lp_new, probs = sequence_logprobs(
        params, rollout.query, rollout.response, with_probs=True
    )
    _, lp_old, _ = sequence_logprobs(
        old_params, rollout.query, rollout.response, buckets=buckets
    )
    ratio = np.exp(lp_new - lp_old)
    clipped = np.clip(ratio, 1.0 - eps_low, 1.0 + eps_high)
    unclipped_val = ratio * advantage
    clipped_val = clipped * advantage
    term_sum = float(np.minimum(unclipped_val, clipped_val).sum())
    # Gradient flows only where the unclipped branch attains the min; at a
    # tie the branches coincide so the choice is immaterial.
    coef = np.where(unclipped_val <= clipped_val, advantage * ratio, 0.0) * weight
    toks = np.fromiter(rollout.response, dtype=np.int64, count=len(rollout.response))
    contrib = -probs * coef[:, None]
    contrib[np.arange(len(toks)), toks] += coef
    np.add.at(grad, buckets, contrib)
    return term_sum, buckets, lp_new, probs


def token_mean_objective(
    groups: Sequence[Group],
    params: PolicyParams,
    old_params: PolicyParams,
    eps_low: float,
    eps_high: float,
) -> tuple[float, np.ndarray]:
    """Token-normalized clipped surrogate with penalty-shaped advantages.

    J = (1 / sum_i |o_i|) * sum_i sum_t min(r A, clip(r) A) over every
    rollout of every group, so each token carries equal weight regardless
    of its rollout's length.  The gradient treats old log-probs as
    constants.  Maximize J (or equivalently minimize -J).
    """
    if not groups:
        raise ValueError("empty batch")
    total_tokens = sum(len(r.response) for g in groups for r in g.rollouts)
    if total_tokens == 0:
        raise ValueError("batch contains no tokens")
    grad = np.zeros_like(params.logits)
    j_sum = 0.0
    for g in groups:
        adv = shaped_advantages(g.rewards, g.penalties)
        for a, rollout in zip(adv.values, g.rollouts):
            if not rollout.response:
                continue
            term_sum, _, _, _ = _accumulate_clipped(
                grad, params, old_params, rollout, float(a),
                eps_low, eps_high, 1.0 / total_tokens,
            )
            j_sum += term_sum
    return j_sum / total_tokens, grad


def sequence_mean_objective(
    groups: Sequence[Group],
    params: PolicyParams,
    old_params: PolicyParams,
    ref: RefModel,
    beta: float,
    eps: float,
) -> tuple[float, np.ndarray]:
    """Sequence-averaged clipped surrogate with a K3 KL penalty.

    Per-token terms are averaged within each rollout (1/|o_i|), then across
    the group (1/G), then across groups; each token additionally pays
    beta * (rho - ln rho - 1) with rho = pi_ref / pi_theta, whose
    dependence on the current policy is part of the gradient.
    """
    if not groups:
        raise ValueError("empty batch")
    grad = np.zeros_like(params.logits)
    n_groups = len(groups)
    j = 0.0
    for g in groups:
        adv = reward_advantages(g.rewards)
        for a, rollout in zip(adv.values, g.rollouts):
            t_len = len(rollout.response)
            if t_len == 0:
                continue
            w = 1.0 / (n_groups * g.size * t_len)
            term_sum, buckets, lp_new, probs = _accumulate_clipped(
                grad, params, old_params, rollout, float(a), eps, eps, w
            )
            _, lp_ref, _ = sequence_logprobs(
                ref.params, rollout.query, rollout.response, buckets=None
            )
            rho = np.exp(lp_ref - lp_new)
            k3 = rho - (lp_ref - lp_new) - 1.0
            j += w * (term_sum - beta * k3.sum())
            # d/dtheta of -beta*k3 contributes beta*(rho - 1) per token.
            coef = beta * (rho - 1.0) * w
            toks = np.fromiter(
                rollout.response, dtype=np.int64, count=len(rollout.response)
            )
            contrib = -probs * coef[:, None]
            contrib[np.arange(len(toks)), toks] += coef
            np.add.at(grad, buckets, contrib)
    return j, grad
