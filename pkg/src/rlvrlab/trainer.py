"""Multi-stage on-policy training of the toy policy on synthetic tasks.

Each stage fixes a response-length cap and a pair of clip bounds (sampled
once per stage); within a stage every step snapshots the policy, collects a
batch of mixed-correctness rollout groups, and ascends the token-mean
clipped surrogate.  A stage ends when its step budget runs out or when the
mean response length saturates, and the cap then grows.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import repetition, tasks, verifier
from .objectives import (
    ClipSchedule,
    ClipSpec,
    Group,
    filter_mixed_groups,
    sample_clip_ratios,
    token_mean_objective,
)
from .policy import PolicyParams, bucket_of, sample_response
from .tasks import TaskSpec

DIGITS = tuple(range(10))


class CollectAbort(RuntimeError):
    """Raised when batch collection cannot find mixed-correctness groups."""


@dataclass(frozen=True)
class StagePlan:
    """Length cap, clip specs and stopping rules for one curriculum stage."""

    max_response_len: int
    clip_low: ClipSpec = 0.2
    clip_high: ClipSpec = 0.2
    max_steps: int = 400
    saturation_window: int = 0  # 0 disables the saturation test
    saturation_threshold: float = 0.01

    def to_dict(self) -> dict:
        def spec(s: ClipSpec):
            return list(s) if isinstance(s, tuple) else s

        return {
            "max_response_len": self.max_response_len,
            "clip_low": spec(self.clip_low),
            "clip_high": spec(self.clip_high),
            "max_steps": self.max_steps,
            "saturation_window": self.saturation_window,
            "saturation_threshold": self.saturation_threshold,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "StagePlan":
        def spec(v) -> ClipSpec:
            return (float(v[0]), float(v[1])) if isinstance(v, (list, tuple)) else float(v)

        return cls(
            max_response_len=int(d["max_response_len"]),
            clip_low=spec(d.get("clip_low", 0.2)),
            clip_high=spec(d.get("clip_high", 0.2)),
            max_steps=int(d.get("max_steps", 400)),
            saturation_window=int(d.get("saturation_window", 0)),
            saturation_threshold=float(d.get("saturation_threshold", 0.01)),
        )


@dataclass(frozen=True)
class TrainConfig:
    stages: tuple[StagePlan, ...] = ()
    task: TaskSpec = field(default_factory=TaskSpec)
    group_size: int = 16  # rollouts per query
    batch_groups: int = 32  # valid groups per update
    learning_rate: float = 0.05
    inner_iterations: int = 1  # strictly on-policy by default
    temperature: float = 1.0
    seed: int = 0
    context_order: int = 4
    buckets: int = 16384
    repetition_penalty: bool = True
    min_period: int = 1
    min_repeats: int = 3
    init: str = "format"  # "format" (answer-shaped scaffold) or "uniform"
    format_bias: float = 5.0
    eos_floor: float = 2.0  # global eos suppression outside scaffolded windows
    loop_boost: float = 0.0
    eval_every: int = 0
    eval_k: int = 32
    eval_tasks: int = 200

    def __post_init__(self) -> None:
        if self.group_size < 2:
            raise ValueError("group_size must be >= 2")
        if self.batch_groups < 1:
            raise ValueError("batch_groups must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.init not in ("format", "uniform"):
            raise ValueError(f"unknown init mode {self.init!r}")
        if self.context_order < self.task.query_length:
            raise ValueError(
                "context_order must cover the whole query "
                f"({self.task.query_length} tokens) or the task is unlearnable"
            )
        lengths = [s.max_response_len for s in self.stages]
        if any(b <= a for a, b in zip(lengths, lengths[1:])):
            raise ValueError("stage max_response_len must strictly increase")

    def to_dict(self) -> dict:
        return {
            "stages": [s.to_dict() for s in self.stages],
            "task": {
                "family": self.task.family,
                "modulus": self.task.modulus,
                "num_digits": self.task.num_digits,
            },
            "group_size": self.group_size,
            "batch_groups": self.batch_groups,
            "learning_rate": self.learning_rate,
            "inner_iterations": self.inner_iterations,
            "temperature": self.temperature,
            "seed": self.seed,
            "context_order": self.context_order,
            "buckets": self.buckets,
            "repetition_penalty": self.repetition_penalty,
            "min_period": self.min_period,
            "min_repeats": self.min_repeats,
            "init": self.init,
            "format_bias": self.format_bias,
            "eos_floor": self.eos_floor,
            "loop_boost": self.loop_boost,
            "eval_every": self.eval_every,
            "eval_k": self.eval_k,
            "eval_tasks": self.eval_tasks,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        task_d = d.get("task", {})
        kwargs = {k: v for k, v in d.items() if k not in ("stages", "task")}
        return cls(
            stages=tuple(StagePlan.from_dict(s) for s in d.get("stages", [])),
            task=TaskSpec(
                family=task_d.get("family", "modular-add"),
                modulus=int(task_d.get("modulus", 10)),
                num_digits=int(task_d.get("num_digits", 3)),
            ),
            **kwargs,
        )


# Toy-scale default curriculum: the 1:2:3 cap progression at desk scale.
DEFAULT_STAGES = (
    StagePlan(max_response_len=24),
    StagePlan(max_response_len=48),
    StagePlan(max_response_len=72),
)


@dataclass(frozen=True)
class MetricsRecord:
    step: int
    stage: int
    mean_response_len: float
    mean_reward: float
    dropped_group_fraction: float
    mean_repetition: float
    objective: float
    grad_norm: float
    avg_at_k: Optional[float] = None

    def to_dict(self) -> dict:
        out = {
            "step": self.step,
            "stage": self.stage,
            "mean_response_len": self.mean_response_len,
            "mean_reward": self.mean_reward,
            "dropped_group_fraction": self.dropped_group_fraction,
            "mean_repetition": self.mean_repetition,
            "objective": self.objective,
            "grad_norm": self.grad_norm,
        }
        if self.avg_at_k is not None:
            out["avg_at_k"] = self.avg_at_k
        return out


@dataclass
class TrainResult:
    policy: PolicyParams
    metrics: list[MetricsRecord]
    stage_checkpoints: list[PolicyParams]


def _enumerate_queries(spec: TaskSpec):
    if spec.family in ("modular-add", "modular-mul"):
        op = tasks.PLUS if spec.family == "modular-add" else tasks.TIMES
        for a in DIGITS:
            for b in DIGITS:
                yield (a, op, b, tasks.EQUALS)
    else:
        for combo in np.ndindex(*(10,) * spec.num_digits):
            yield tuple(int(d) for d in combo) + (tasks.EQUALS,)


def init_policy(config: TrainConfig) -> PolicyParams:
    """Initial logits table, optionally scaffolded.

    The "format" scaffold makes the policy guess a uniformly random digit
    right after '=' and then stop, which puts initial accuracy at the
    chance level for the task's residues.  Outside the scaffolded windows
    eos is suppressed by ``eos_floor``, so rollouts that drift off the
    answer format run long and press against the stage length cap.  A
    positive ``loop_boost`` additionally makes repeating the previous digit
    attractive, seeding the degenerate loops the repetition penalty is
    meant to suppress.
    """
    params = PolicyParams.uniform(tasks.VOCAB, config.context_order, config.buckets)
    if config.init == "uniform":
        return params
    logits = params.logits
    logits[:, tasks.EOS] = -config.eos_floor
    k = config.context_order
    begin = tasks.VOCAB.begin_marker
    non_digit = [t for t in range(tasks.VOCAB.size) if t not in DIGITS]
    for query in _enumerate_queries(config.task):
        padded = (begin,) * k + query
        first = padded[-k:]
        logits[bucket_of(first, config.buckets), non_digit] = -config.format_bias
        for d in DIGITS:
            after = (padded + (d,))[-k:]
            row = bucket_of(after, config.buckets)
            logits[row, tasks.EOS] = config.format_bias
            if config.loop_boost > 0:
                logits[row, d] = config.loop_boost
    if config.loop_boost > 0 and k >= 2:
        # Loop-continuation windows (..., d, d) for every digit d.
        for prefix in np.ndindex(*(tasks.VOCAB.size + 1,) * (k - 2)):
            pre = tuple(int(x) for x in prefix)
            for d in DIGITS:
                logits[bucket_of(pre + (d, d), config.buckets), d] = config.loop_boost
    return params


def _roll_group(
    old_params: PolicyParams,
    query: tuple[int, ...],
    gold: str,
    query_id: int,
    max_len: int,
    config: TrainConfig,
) -> Group:
    rng = np.random.default_rng([config.seed, 1, query_id])
    rollouts, rewards, penalties = [], [], []
    for _ in range(config.group_size):
        ro = sample_response(old_params, query, max_len, config.temperature, rng)
        answer = tasks.decode_tokens(ro.response)
        rewards.append(verifier.reward(answer, gold, ro.truncated))
        content = ro.content(tasks.EOS)
        if config.repetition_penalty and content:
            penalties.append(
                repetition.repetition_score(
                    content, config.min_period, config.min_repeats
                )
            )
        else:
            penalties.append(0.0)
        rollouts.append(ro)
    return Group(
        query_id=query_id,
        rollouts=tuple(rollouts),
        rewards=np.array(rewards),
        penalties=np.array(penalties),
    )


@dataclass
class BatchStats:
    attempted_groups: int = 0
    invalid_groups: int = 0  # dropped by the mixed-correctness filter
    response_tokens: int = 0
    rollouts: int = 0
    reward_sum: float = 0.0
    repetition_sum: float = 0.0

    def absorb(self, group: Group, penalty_on: bool, config: TrainConfig) -> None:
        self.attempted_groups += 1
        for ro, rew in zip(group.rollouts, group.rewards):
            self.rollouts += 1
            self.response_tokens += len(ro.response)
            self.reward_sum += float(rew)
        if penalty_on:
            self.repetition_sum += float(group.penalties.sum())
        else:
            for ro in group.rollouts:
                content = ro.content(tasks.EOS)
                if content:
                    self.repetition_sum += repetition.repetition_score(
                        content, config.min_period, config.min_repeats
                    )


def collect_batch(
    old_params: PolicyParams,
    stage: StagePlan,
    config: TrainConfig,
    task_rng: np.random.Generator,
    query_counter: int,
    jobs: int = 1,
) -> tuple[list[Group], BatchStats, int]:
    """Accumulate exactly ``batch_groups`` mixed-correctness groups.

    Queries are consumed in chunks with per-query derived seeds, so the
    result is identical whether rollouts run sequentially or on a thread
    pool.  Aborts when 100 * batch_groups consecutive queries yield no
    valid group, which signals a collapsed policy or a degenerate task.
    """
    n = config.batch_groups
    abort_after = 100 * n
    valid: list[Group] = []
    stats = BatchStats()
    consecutive_invalid = 0
    while len(valid) < n:
        chunk = []
        for _ in range(n):
            query, gold = tasks.generate_task(config.task, task_rng)
            chunk.append((query, gold, query_counter))
            query_counter += 1

        def roll(item):
            query, gold, qid = item
            return _roll_group(
                old_params, query, gold, qid, stage.max_response_len, config
            )

        if jobs > 1:
            with ThreadPoolExecutor(max_workers=jobs) as pool:
                groups = list(pool.map(roll, chunk))
        else:
            groups = [roll(item) for item in chunk]
        for group in groups:
            stats.absorb(group, config.repetition_penalty, config)
            if filter_mixed_groups([group]):
                valid.append(group)
                consecutive_invalid = 0
            else:
                stats.invalid_groups += 1
                consecutive_invalid += 1
                if consecutive_invalid >= abort_after:
                    raise CollectAbort(
                        f"no mixed-correctness group in {abort_after} consecutive "
                        "queries; the policy answers uniformly (all correct or all "
                        "incorrect) or the task is degenerate"
                    )
    return valid[:n], stats, query_counter


def stage_saturated(lengths: Sequence[float], threshold: float = 0.01) -> bool:
    """True when mean response length stopped moving across the window.

    Compares the mean of the last half of the window against the mean of
    the first half; saturation is a relative change below ``threshold``.
    """
    w = len(lengths)
    if w < 2:
        raise ValueError("saturation window must hold at least 2 entries")
    half = w // 2
    first = float(np.mean(lengths[:half]))
    last = float(np.mean(lengths[-half:]))
    return abs(last - first) < threshold * max(abs(first), 1e-12)


def evaluate(
    params: PolicyParams,
    spec: TaskSpec,
    k: int,
    temperature: float,
    max_len: int,
    seed: int,
    n_tasks: int = 200,
) -> float:
    """avg@k: mean reward over k sampled attempts per task, over a fixed
    seed-derived evaluation set."""
    if k < 1:
        raise ValueError("k must be >= 1")
    rng = np.random.default_rng([seed, 2])
    total = 0.0
    for _ in range(n_tasks):
        query, gold = tasks.generate_task(spec, rng)
        hits = 0.0
        for _ in range(k):
            ro = sample_response(params, query, max_len, temperature, rng)
            hits += verifier.reward(
                tasks.decode_tokens(ro.response), gold, ro.truncated
            )
        total += hits / k
    return total / n_tasks


def train(
    config: TrainConfig,
    metrics_sink: Optional[Callable[[MetricsRecord], None]] = None,
    jobs: int = 1,
) -> TrainResult:
    """Run every stage and return the trained policy with its metrics log."""
    policy = init_policy(config)
    metrics: list[MetricsRecord] = []
    stage_checkpoints: list[PolicyParams] = []
    if not config.stages:
        return TrainResult(policy, metrics, stage_checkpoints)

    schedule = ClipSchedule(tuple((s.clip_low, s.clip_high) for s in config.stages))
    task_rng = np.random.default_rng([config.seed, 0])
    query_counter = 0
    global_step = 0
    for stage_idx, stage in enumerate(config.stages):
        clip_rng = np.random.default_rng([config.seed, 3, stage_idx])
        eps_low, eps_high = sample_clip_ratios(schedule, stage_idx, clip_rng)
        window: list[float] = []
        for _ in range(stage.max_steps):
            old = policy.copy()
            groups, stats, query_counter = collect_batch(
                old, stage, config, task_rng, query_counter, jobs=jobs
            )
            for group in groups:
                assert 0 < int((group.rewards > 0.5).sum()) < group.size
            objective, grad = 0.0, None
            for _ in range(config.inner_iterations):
                objective, grad = token_mean_objective(
                    groups, policy, old, eps_low, eps_high
                )
                policy.logits += config.learning_rate * grad
            global_step += 1
            avg_at_k = None
            if config.eval_every and global_step % config.eval_every == 0:
                avg_at_k = evaluate(
                    policy,
                    config.task,
                    config.eval_k,
                    config.temperature,
                    stage.max_response_len,
                    seed=config.seed,
                    n_tasks=config.eval_tasks,
                )
            record = MetricsRecord(
                step=global_step,
                stage=stage_idx,
                mean_response_len=stats.response_tokens / stats.rollouts,
                mean_reward=stats.reward_sum / stats.rollouts,
                dropped_group_fraction=stats.invalid_groups / stats.attempted_groups,
                mean_repetition=stats.repetition_sum / stats.rollouts,
                objective=objective,
                grad_norm=float(np.linalg.norm(grad)),
                avg_at_k=avg_at_k,
            )
            metrics.append(record)
            if metrics_sink is not None:
                metrics_sink(record)
            if stage.saturation_window:
                window.append(record.mean_response_len)
                if len(window) > stage.saturation_window:
                    window.pop(0)
                if len(window) == stage.saturation_window and stage_saturated(
                    window, stage.saturation_threshold
                ):
                    break
        stage_checkpoints.append(policy.copy())
    return TrainResult(policy, metrics, stage_checkpoints)


def load_config(path: str) -> TrainConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return TrainConfig.from_dict(json.load(fh))
