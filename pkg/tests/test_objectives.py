
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rlvrlab.objectives import (
    AdvantageSet,
    ClipSchedule,
    Group,
    RefModel,
    clipped_term,
    filter_mixed_groups,
    k3_divergence,
    reward_advantages,
    sample_clip_ratios,
    sequence_mean_objective,
    shaped_advantages,
    token_mean_objective,
)
from rlvrlab.policy import (
    PolicyParams,
    Rollout,
    Vocab,
    sequence_logprobs,
    token_logprob_grad,
    response_buckets,
)


def make_params(rng, vocab_size=8, k=2, buckets=16, scale=1.0):
    vocab = Vocab(vocab_size, vocab_size - 1)
    return PolicyParams(vocab, k, rng.normal(0, scale, (buckets, vocab_size)))


def make_rollout(rng, params, length):
    query = tuple(int(t) for t in rng.integers(0, params.vocab.size, size=2))
    response = tuple(int(t) for t in rng.integers(0, params.vocab.size, size=length))
    _, lps, _ = sequence_logprobs(params, query, response)
    return Rollout(query, response, lps, truncated=params.vocab.eos not in response)


def make_group(rng, old_params, query_id=0, size=None):
    size = size or int(rng.integers(2, 5))
    rollouts = tuple(
        make_rollout(rng, old_params, int(rng.integers(1, 7))) for _ in range(size)
    )
    ones = int(rng.integers(1, size))  # mixed by construction
    rewards = np.zeros(size)
    rewards[rng.permutation(size)[:ones]] = 1.0
    penalties = rng.uniform(0, 1, size)
    return Group(query_id, rollouts, rewards, penalties)


def fd_table_gradient(loss_fn, params, step=1e-5):
    """Central finite differences over every logits entry."""
    grad = np.zeros_like(params.logits)
    for b in range(params.buckets):
        for w in range(params.vocab.size):
            params.logits[b, w] += step
            up = loss_fn(params)
            params.logits[b, w] -= 2 * step
            down = loss_fn(params)
            params.logits[b, w] += step
            grad[b, w] = (up - down) / (2 * step)
    return grad


def ratios_clear_of_clip_edges(groups, params, old_params, eps_low, eps_high, margin=1e-3):
    for g in groups:
        for ro in g.rollouts:
            _, lp_new, _ = sequence_logprobs(params, ro.query, ro.response)
            _, lp_old, _ = sequence_logprobs(old_params, ro.query, ro.response)
            ratio = np.exp(lp_new - lp_old)
            if np.any(np.abs(ratio - (1 - eps_low)) < margin):
                return False
            if np.any(np.abs(ratio - (1 + eps_high)) < margin):
                return False
    return True


class TestShapedAdvantages:
    def test_two_rollout_example(self):
        adv = shaped_advantages([1.0, 0.0], [0.0, 0.0])
        np.testing.assert_allclose(adv.values, [1.0, -1.0], atol=1e-12)
        assert not adv.degenerate

    def test_penalty_shifts_the_shaped_reward(self):
        adv = shaped_advantages([1, 1, 0, 0], [0, 0.5, 0, 0])
        np.testing.assert_allclose(
            adv.values, [1.50755672, 0.30151134, -0.90453403, -0.90453403], atol=1e-6
        )

    def test_zero_variance_is_degenerate(self):
        adv = shaped_advantages([1, 1, 1], [0, 0, 0])
        assert adv.degenerate
        np.testing.assert_array_equal(adv.values, [0, 0, 0])

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValueError):
            shaped_advantages([1, 0], [0])
        with pytest.raises(ValueError):
            shaped_advantages([1], [0])

    def test_reward_advantages_match_zero_penalty(self):
        rewards = [1.0, 0.0, 0.0, 0.0]
        np.testing.assert_array_equal(
            reward_advantages(rewards).values,
            shaped_advantages(rewards, [0, 0, 0, 0]).values,
        )
        np.testing.assert_allclose(
            reward_advantages(rewards).values,
            [1.73205081, -0.57735027, -0.57735027, -0.57735027],
            atol=1e-6,
        )

    @given(
        st.lists(st.integers(0, 1), min_size=2, max_size=16),
        st.data(),
    )
    @settings(max_examples=200, deadline=None)
    def test_normalization_moments(self, rewards, data):
        penalties = data.draw(
            st.lists(
                st.floats(0, 1, allow_nan=False),
                min_size=len(rewards),
                max_size=len(rewards),
            )
        )
        adv = shaped_advantages(rewards, penalties)
        if adv.degenerate:
            np.testing.assert_array_equal(adv.values, np.zeros(len(rewards)))
        else:
            assert abs(adv.values.mean()) < 1e-9
            assert abs(adv.values.std() - 1.0) < 1e-6

    @given(
        st.lists(st.integers(0, 1), min_size=2, max_size=12),
        st.floats(-5, 5, allow_nan=False),
        st.floats(0.1, 10, allow_nan=False),
    )
    @settings(max_examples=200, deadline=None)
    def test_shift_and_scale_invariance(self, rewards, shift, scale):
        base = shaped_advantages(rewards, [0.0] * len(rewards))
        shifted = shaped_advantages([r + shift for r in rewards], [0.0] * len(rewards))
        scaled = shaped_advantages(
            [r * scale for r in rewards], [0.0] * len(rewards)
        )
        np.testing.assert_allclose(base.values, shifted.values, atol=1e-9)
        np.testing.assert_allclose(base.values, scaled.values, atol=1e-9)
        if not base.degenerate:
            assert np.argmax(base.values) == np.argmax(shifted.values)
            assert np.argmax(base.values) == np.argmax(scaled.values)


class TestK3:
    def test_minimum_at_one(self):
        assert k3_divergence(1.0) == 0.0

    def test_reference_values(self):
        assert k3_divergence(2.0) == pytest.approx(0.30685281944)
        assert k3_divergence(0.5) == pytest.approx(0.19314718056)

    def test_rejects_nonpositive(self):
        for rho in (0.0, -1.0):
            with pytest.raises(ValueError):
                k3_divergence(rho)

    @given(st.floats(1e-6, 1e6))
    @settings(max_examples=200, deadline=None)
    def test_nonnegative(self, rho):
        assert k3_divergence(rho) >= 0.0


class TestClippedTerm:
    def test_reference_values(self):
        assert clipped_term(1.5, 1.0, 0.2, 0.2) == pytest.approx(1.2)
        assert clipped_term(0.5, -1.0, 0.2, 0.2) == pytest.approx(-0.8)

    def test_unit_ratio_passes_advantage_through(self):
        for adv in (-2.0, 0.0, 3.5):
            assert clipped_term(1.0, adv, 0.1, 0.9) == adv

    @given(
        st.floats(0.01, 5.0),
        st.floats(-3, 3),
        st.floats(-3, 3),
        st.floats(0.01, 0.99),
        st.floats(0.01, 0.99),
    )
    @settings(max_examples=300, deadline=None)
    def test_monotone_in_advantage_and_bounded(self, ratio, a1, a2, lo, hi):
        lo_a, hi_a = min(a1, a2), max(a1, a2)
        assert clipped_term(ratio, lo_a, lo, hi) <= clipped_term(ratio, hi_a, lo, hi)
        if hi_a > 0:
            assert clipped_term(ratio, hi_a, lo, hi) <= (1 + hi) * hi_a


class TestDynamicFilter:
    def test_uniform_groups_dropped_mixed_kept(self):
        rng = np.random.default_rng(0)
        params = make_params(rng)

        def group_with(rewards):
            rollouts = tuple(make_rollout(rng, params, 3) for _ in rewards)
            return Group(0, rollouts, np.array(rewards, dtype=float), np.zeros(len(rewards)))

        assert filter_mixed_groups([group_with([1, 1, 1, 1])]) == []
        assert filter_mixed_groups([group_with([0, 0, 0, 0])]) == []
        kept = filter_mixed_groups([group_with([1, 0, 1, 0])])
        assert len(kept) == 1

    def test_exhaustive_patterns_g4(self):
        rng = np.random.default_rng(1)
        params = make_params(rng)
        rollouts = tuple(make_rollout(rng, params, 2) for _ in range(4))
        kept_patterns = []
        for mask in range(16):
            rewards = np.array([float((mask >> i) & 1) for i in range(4)])
            g = Group(mask, rollouts, rewards, np.zeros(4))
            if filter_mixed_groups([g]):
                kept_patterns.append(mask)
        assert len(kept_patterns) == 14
        assert 0 not in kept_patterns and 15 not in kept_patterns


class TestClipSchedule:
    def test_point_and_interval_sampling(self):
        schedule = ClipSchedule(((0.2, 0.2), ((0.2, 0.28), (0.3, 0.3))))
        rng = np.random.default_rng(0)
        assert sample_clip_ratios(schedule, 0, rng) == (0.2, 0.2)
        lo, hi = sample_clip_ratios(schedule, 1, rng)
        assert 0.2 <= lo <= 0.28
        assert hi == 0.3

    def test_degenerate_interval(self):
        schedule = ClipSchedule((((0.2, 0.2), 0.25),))
        lo, hi = sample_clip_ratios(schedule, 0, np.random.default_rng(3))
        assert lo == pytest.approx(0.2)
        assert hi == 0.25

    def test_stage_out_of_range(self):
        schedule = ClipSchedule(((0.2, 0.2),))
        with pytest.raises(ValueError):
            sample_clip_ratios(schedule, 1, np.random.default_rng(0))

    def test_values_must_be_in_unit_interval(self):
        with pytest.raises(ValueError):
            ClipSchedule(((0.0, 0.2),))
        with pytest.raises(ValueError):
            ClipSchedule((((0.2, 1.0), 0.2),))


class TestTokenMeanObjective:
    def test_empty_batch_rejected(self):
        rng = np.random.default_rng(0)
        params = make_params(rng)
        with pytest.raises(ValueError):
            token_mean_objective([], params, params, 0.2, 0.2)

    def test_on_policy_identity(self):
        # With params == old_params every ratio is 1: J is the
        # token-weighted mean advantage and the gradient is the plain
        # advantage-weighted policy gradient divided by the token count.
        rng = np.random.default_rng(5)
        params = make_params(rng)
        groups = [make_group(rng, params, i) for i in range(2)]
        j, grad = token_mean_objective(groups, params, params, 0.2, 0.2)

        total = sum(len(r.response) for g in groups for r in g.rollouts)
        expect_j = 0.0
        expect_grad = np.zeros_like(params.logits)
        from rlvrlab.policy import Context

        for g in groups:
            adv = shaped_advantages(g.rewards, g.penalties)
            for a, ro in zip(adv.values, g.rollouts):
                expect_j += a * len(ro.response)
                buckets = response_buckets(params, ro.query, ro.response)
                window = ((params.vocab.begin_marker,) * params.k + ro.query)[-params.k:]
                for t, tok in enumerate(ro.response):
                    b, row_grad = token_logprob_grad(
                        params, Context(params.k, window), tok
                    )
                    assert b == buckets[t]
                    expect_grad[b] += a * row_grad / total
                    window = window[1:] + (tok,)
        assert j == pytest.approx(expect_j / total)
        np.testing.assert_allclose(grad, expect_grad, atol=1e-12)

    def test_degenerate_group_contributes_nothing(self):
        rng = np.random.default_rng(8)
        params = make_params(rng)
        rollouts = tuple(make_rollout(rng, params, 3) for _ in range(3))
        g = Group(0, rollouts, np.ones(3), np.ones(3))  # zero variance
        j, grad = token_mean_objective([g], params, params, 0.2, 0.2)
        assert j == 0.0
        np.testing.assert_array_equal(grad, np.zeros_like(grad))

    def test_matches_finite_differences(self):
        checked = 0
        seed = 0
        while checked < 20:
            seed += 1
            rng = np.random.default_rng(seed)
            old = make_params(rng, scale=0.8)
            params = make_params(rng, scale=0.8)
            groups = [make_group(rng, old, i) for i in range(int(rng.integers(1, 3)))]
            if not ratios_clear_of_clip_edges(groups, params, old, 0.2, 0.3):
                continue
            j, grad = token_mean_objective(groups, params, old, 0.2, 0.3)
            fd = fd_table_gradient(
                lambda p: token_mean_objective(groups, p, old, 0.2, 0.3)[0], params
            )
            rel = np.linalg.norm(grad - fd) / max(np.linalg.norm(fd), 1e-12)
            assert rel < 1e-4, f"seed {seed}: rel err {rel}"
            checked += 1


class TestSequenceMeanObjective:
    def test_beta_zero_equal_lengths_matches_token_mean(self):
        rng = np.random.default_rng(21)
        old = make_params(rng)
        params = make_params(rng)
        ref = RefModel.capture(old)
        groups = []
        for i in range(2):
            rollouts = tuple(make_rollout(rng, old, 4) for _ in range(3))
            rewards = np.array([1.0, 0.0, 0.0])
            groups.append(Group(i, rollouts, rewards, np.zeros(3)))
        j_seq, g_seq = sequence_mean_objective(groups, params, old, ref, 0.0, 0.2)
        j_tok, g_tok = token_mean_objective(groups, params, old, 0.2, 0.2)
        assert j_seq == pytest.approx(j_tok, rel=1e-12)
        np.testing.assert_allclose(g_seq, g_tok, atol=1e-12)

    def test_ref_equal_params_kills_kl(self):
        rng = np.random.default_rng(22)
        old = make_params(rng)
        params = make_params(rng)
        groups = [make_group(rng, old, 0)]
        ref = RefModel.capture(params)
        j0, g0 = sequence_mean_objective(groups, params, old, ref, 0.0, 0.2)
        j1, g1 = sequence_mean_objective(groups, params, old, ref, 0.7, 0.2)
        assert j0 == pytest.approx(j1, abs=1e-12)
        np.testing.assert_allclose(g0, g1, atol=1e-12)

    def test_length_bias_contrast(self):
        # One short and one long rollout with opposite advantages: the
        # token-mean form tilts toward the long rollout while the
        # sequence-mean form weighs both rollouts equally.
        rng = np.random.default_rng(23)
        params = make_params(rng)
        short = make_rollout(rng, params, 2)
        long = make_rollout(rng, params, 20)
        g = Group(0, (short, long), np.array([1.0, 0.0]), np.zeros(2))
        ref = RefModel.capture(params)
        j_tok, _ = token_mean_objective([g], params, params, 0.2, 0.2)
        j_seq, _ = sequence_mean_objective([g], params, params, ref, 0.0, 0.2)
        assert j_tok == pytest.approx((2 * 1.0 + 20 * -1.0) / 22)
        assert j_seq == pytest.approx(0.0, abs=1e-12)
        assert abs(j_tok - j_seq) > 0.5

    def test_matches_finite_differences_with_kl(self):
        checked = 0
        seed = 100
        while checked < 20:
            seed += 1
            rng = np.random.default_rng(seed)
            old = make_params(rng, scale=0.8)
            params = make_params(rng, scale=0.8)
            ref = RefModel.capture(make_params(rng, scale=0.8))
            groups = [make_group(rng, old, i) for i in range(int(rng.integers(1, 3)))]
            if not ratios_clear_of_clip_edges(groups, params, old, 0.2, 0.2):
                continue
            j, grad = sequence_mean_objective(groups, params, old, ref, 0.04, 0.2)
            fd = fd_table_gradient(
                lambda p: sequence_mean_objective(groups, p, old, ref, 0.04, 0.2)[0],
                params,
            )
            rel = np.linalg.norm(grad - fd) / max(np.linalg.norm(fd), 1e-12)
            assert rel < 1e-4, f"seed {seed}: rel err {rel}"
            checked += 1


class TestRefModel:
    def test_snapshot_is_frozen_and_detached(self):
        rng = np.random.default_rng(2)
        params = make_params(rng)
        ref = RefModel.capture(params)
        params.logits[0, 0] += 1.0
        assert ref.params.logits[0, 0] != params.logits[0, 0]
        with pytest.raises(ValueError):
            ref.params.logits[0, 0] = 5.0
