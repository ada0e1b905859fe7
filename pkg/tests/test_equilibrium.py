import itertools
import random
from dataclasses import replace

import numpy as np
import pytest

from karmalab.core import GameConfig, FeeParams, Scheme, preset
from karmalab.equilibrium import (
    EquilibriumError,
    MeanField,
    Policy,
    SolverOptions,
    best_response,
    exante_efficient_gain,
    solve_cached,
    solve_equilibrium,
    stationary_distribution,
    win_probability,
    zero_policy,
)


def field_from_bids(config, bid_probs, karma_dist=None, rate=0.0):
    kd = karma_dist or [0.0] * (config.karma_max + 1)
    if karma_dist is None:
        kd[config.karma_init] = 1.0
    nu = list(bid_probs) + [0.0] * (config.karma_max + 1 - len(bid_probs))
    return MeanField(
        urgency_levels=(config.urgency_low, config.urgency_high),
        urgency_probs=(1.0 - config.p_high, config.p_high),
        karma_dist=kd,
        bid_dist=nu,
        mean_payment=rate,
        effective_rate=rate,
    )


class TestExAnteGain:
    def test_low_stake_exact_third(self):
        assert exante_efficient_gain(1, 5, 0.5) == 1 / 3

    def test_high_stake_exact_half(self):
        assert exante_efficient_gain(1, 9, 0.25) == 0.5

    def test_no_heterogeneity(self):
        assert exante_efficient_gain(1, 5, 0.0) == 0.0
        assert exante_efficient_gain(1, 5, 1.0) == 0.0

    def test_matches_enumeration(self):
        # Brute force over the four joint urgency outcomes of a pair.
        rng = random.Random(0)
        for _ in range(50):
            ul, uh = sorted(rng.sample(range(1, 30), 2))
            p = rng.random()
            e_max = e_u = 0.0
            for a, b in itertools.product([0, 1], repeat=2):
                pa = p if a else (1 - p)
                pb = p if b else (1 - p)
                ua = uh if a else ul
                ub = uh if b else ul
                e_max += pa * pb * max(ua, ub)
                e_u += pa * pb * (ua + ub) / 2
            expected = (e_max - e_u) / e_u
            assert exante_efficient_gain(ul, uh, p) == pytest.approx(expected, abs=1e-12)


class TestWinProbability:
    def test_dominating_bid(self):
        cfg = preset("low-full")
        mf = field_from_bids(cfg, [1.0])          # opponent always bids 0
        assert win_probability(1, mf) == 1.0

    def test_pure_tie(self):
        cfg = preset("low-full")
        mf = field_from_bids(cfg, [0.0, 0.0, 1.0])  # opponent always bids 2
        assert win_probability(2, mf) == 0.5

    def test_uniform_three(self):
        cfg = preset("low-full")
        mf = field_from_bids(cfg, [1 / 3, 1 / 3, 1 / 3])
        assert win_probability(1, mf) == pytest.approx(0.5)

    def test_nondecreasing_in_bid(self):
        cfg = preset("low-full")
        rng = random.Random(3)
        raw = [rng.random() for _ in range(10)]
        total = sum(raw)
        mf = field_from_bids(cfg, [v / total for v in raw])
        probs = [win_probability(b, mf) for b in range(15)]
        assert all(b >= a for a, b in zip(probs, probs[1:]))

    def test_negative_bid_rejected(self):
        cfg = preset("low-full")
        with pytest.raises(EquilibriumError):
            win_probability(-1, field_from_bids(cfg, [1.0]))


class TestBestResponse:
    def test_myopic_minimum_winning_bid(self):
        # Opponents all bid zero; with no future, any urgency is worth one
        # karma for a sure win over a coin flip.
        cfg = preset("low-full")
        mf = field_from_bids(cfg, [1.0])
        policy = best_response(mf, cfg, SolverOptions(discount=0.0))
        for k in range(1, cfg.karma_max + 1):
            assert policy.table[(cfg.urgency_high, k)] == [(1, 1.0)]
            assert policy.table[(cfg.urgency_low, k)] == [(1, 1.0)]
        assert policy.table[(cfg.urgency_high, 0)] == [(0, 1.0)]

    def test_myopic_matches_one_shot_argmax(self):
        cfg = preset("low-full")
        rng = random.Random(9)
        for _ in range(10):
            raw = [rng.random() for _ in range(7)]
            tot = sum(raw)
            mf = field_from_bids(cfg, [v / tot for v in raw])
            policy = best_response(mf, cfg, SolverOptions(discount=0.0))
            for u in (cfg.urgency_low, cfg.urgency_high):
                for k in range(cfg.karma_max + 1):
                    best_bid, best_val = 0, -1.0
                    for b in range(k + 1):
                        val = u * win_probability(b, mf)
                        if val > best_val + 1e-12:
                            best_bid, best_val = b, val
                    assert policy.table[(u, k)] == [(best_bid, 1.0)]

    def test_binary_support_restriction(self):
        cfg = preset("low-binary")
        mf = field_from_bids(cfg, [0.5, 0.25, 0.25], rate=1.0)
        policy = best_response(mf, cfg, SolverOptions(discount=0.7))
        for (u, k), pairs in policy.table.items():
            for bid, _ in pairs:
                assert bid in (0, k // 2)


class TestStationaryDistribution:
    def test_zero_policy_stays_at_init(self):
        cfg = preset("low-full")
        mf = stationary_distribution(zero_policy(cfg), cfg)
        assert mf.karma_dist[cfg.karma_init] == pytest.approx(1.0)
        assert mf.mean_payment == 0.0

    def test_urgency_marginal_exogenous(self):
        cfg = preset("high-full")
        mf = stationary_distribution(zero_policy(cfg), cfg)
        assert mf.urgency_probs == (0.75, 0.25)

    def test_per_capita_karma_conserved(self):
        # Redistribution is solved against cap clipping, so the stationary
        # mean must sit at the initial endowment for any policy.
        for name in ("low-full", "high-binary"):
            cfg = preset(name)
            res = solve_cached(cfg, 0.6)
            mu = np.array(res.mean_field.karma_dist)
            mean = float((mu * np.arange(cfg.karma_max + 1)).sum())
            assert mean == pytest.approx(cfg.karma_init, abs=1e-6)

    def test_state_dist_sums_to_one(self):
        cfg = preset("low-full")
        mf = stationary_distribution(zero_policy(cfg), cfg)
        assert sum(mf.state_dist().values()) == pytest.approx(1.0)


class TestSolveEquilibrium:
    def test_converges_at_moderate_discount(self):
        for name in ("low-full", "high-binary"):
            res = solve_cached(preset(name), 0.5)
            assert res.converged
            assert res.residual < 1e-6

    def test_myopic_fixed_point_self_consistent(self):
        # At discount zero the best response maximizes u*w(b) one-shot; the
        # returned policy must attain that maximum against its own field.
        # (Comparing argmax bids directly is brittle: on win-probability
        # plateaus every bid is payoff-identical.)
        cfg = preset("low-full")
        res = solve_cached(cfg, 0.0)
        assert res.converged
        mf = res.mean_field
        for (u, k), pairs in res.policy.table.items():
            best = max(u * win_probability(b, mf) for b in range(k + 1))
            got = sum(p * u * win_probability(b, mf) for b, p in pairs)
            assert got == pytest.approx(best, abs=1e-6)

    def test_policy_supports_are_legal(self):
        res = solve_cached(preset("high-binary"), 0.5)
        res.policy.validate()
        for (u, k), pairs in res.policy.table.items():
            for bid, _ in pairs:
                assert bid in (0, k // 2)

    def test_bid_dist_consistent_with_policy_and_states(self):
        cfg = preset("low-full")
        res = solve_cached(cfg, 0.5)
        mf = res.mean_field
        nu = [0.0] * (cfg.karma_max + 1)
        for (u, k), p_state in mf.state_dist().items():
            for bid, p_bid in res.policy.table[(u, k)]:
                nu[bid] += p_state * p_bid
        assert nu == pytest.approx(mf.bid_dist, abs=1e-6)

    def test_cache_returns_same_object(self):
        a = solve_cached(preset("low-full", seed=1), 0.5)
        b = solve_cached(preset("low-full", seed=2), 0.5)
        assert a is b

    def test_invalid_options(self):
        cfg = preset("low-full")
        with pytest.raises(EquilibriumError):
            solve_equilibrium(cfg, SolverOptions(discount=1.0))
        with pytest.raises(EquilibriumError):
            solve_equilibrium(cfg, SolverOptions(discount=0.5, tol=-1.0))


class TestPolicySerialization:
    def test_roundtrip(self, tmp_path):
        res = solve_cached(preset("low-full"), 0.5)
        path = tmp_path / "policy.json"
        res.policy.to_json(path)
        loaded = Policy.from_json(path)
        assert loaded.table == res.policy.table
        assert loaded.scheme == res.policy.scheme

    def test_validation_rejects_bad_support(self):
        cfg = preset("low-binary")
        policy = zero_policy(cfg)
        policy.table[(cfg.urgency_high, 9)] = [(3, 1.0)]   # not in {0, 4}
        with pytest.raises(EquilibriumError):
            policy.validate()

    def test_validation_rejects_bad_weights(self):
        cfg = preset("low-full")
        policy = zero_policy(cfg)
        policy.table[(cfg.urgency_low, 5)] = [(0, 0.5)]
        with pytest.raises(EquilibriumError):
            policy.validate()
