import statistics
from dataclasses import replace

import pytest

from karmalab.agents import AgentSpec, build_agents
from karmalab.core import ConfigError, FeeParams, GameConfig, Scheme, preset
from karmalab.simulator import (
    BatchSpec,
    Dataset,
    run_batch,
    run_game,
    simulate_random_allocation,
    simulate_turn_taking,
)


def zero_population():
    return [AgentSpec("zero", 20)]


class TestRunGame:
    def test_all_zero_bidders_tie_every_contest(self):
        cfg = preset("low-full", seed=10)
        result = run_game(cfg, build_agents(zero_population(), cfg, 10))
        for rec in result.records:
            assert all(b == 0 for b in rec.bids)
            assert all(rec.ties)
        assert all(k == cfg.karma_init for k in result.records[-1].karma_after)

    def test_all_zero_median_gain_near_zero(self):
        gains = []
        for s in range(60):
            cfg = preset("low-full", seed=s)
            gains.extend(run_game(cfg, build_agents(zero_population(), cfg, s), keep_trace=False).gains())
        assert abs(statistics.median(gains)) < 0.03

    def test_threshold_agent_beats_zero_field(self):
        # The urgent bidder wins every high-urgency round it can afford a
        # positive bid in; averaged over games its gain is strictly positive
        # (single games can lose once its karma is exhausted and rounds
        # degenerate to coin flips).
        gains = []
        for s in range(50):
            cfg = preset("low-full", seed=s)
            agents = build_agents(
                [AgentSpec("threshold", 1), AgentSpec("zero", 19)], cfg, s
            )
            result = run_game(cfg, agents)
            gains.append(result.gains()[0])
            for rec in result.records:
                if rec.urgencies[0] == cfg.urgency_high and rec.bids[0] > 0:
                    assert 0 in rec.winners
        assert statistics.mean(gains) > 0.01

    def test_fixed_seed_reproducible(self):
        cfg = preset("high-binary", seed=42)
        a = run_game(cfg, build_agents([AgentSpec("uniform", 20)], cfg, 42))
        b = run_game(cfg, build_agents([AgentSpec("uniform", 20)], cfg, 42))
        assert a.scores == b.scores
        assert a.s_rand == b.s_rand
        assert [r.karma_after for r in a.records] == [r.karma_after for r in b.records]

    def test_s_rand_is_half_urgency_sum(self):
        cfg = preset("low-full", seed=2)
        result = run_game(cfg, build_agents(zero_population(), cfg, 2))
        for i in range(cfg.n_participants):
            assert result.s_rand[i] == 0.5 * sum(result.urgency_traces[i])
            assert len(result.urgency_traces[i]) == cfg.n_rounds

    def test_population_size_enforced(self):
        cfg = preset("low-full")
        with pytest.raises(ConfigError):
            run_game(cfg, [])


class TestRunBatch:
    def test_row_count_and_bounds(self):
        cfg = preset("low-full")
        spec = BatchSpec(cfg, [AgentSpec("uniform", 20)], n_games=5, base_seed=100)
        ds = run_batch(spec)
        assert len(ds.rows) == 5 * 20
        for row in ds.rows:
            assert row.score <= 2 * row.s_rand   # S <= total urgency
            assert row.gain == (row.score - row.s_rand) / row.s_rand

    def test_singleton_batch_equals_run_game(self):
        cfg = preset("low-full")
        spec = BatchSpec(cfg, [AgentSpec("uniform", 20)], n_games=1, base_seed=55)
        ds = run_batch(spec)
        direct_cfg = preset("low-full", seed=55)
        direct = run_game(direct_cfg, build_agents([AgentSpec("uniform", 20)], direct_cfg, 55))
        assert [r.score for r in ds.rows] == direct.scores
        assert [r.s_rand for r in ds.rows] == direct.s_rand

    def test_population_must_fill_seats(self):
        cfg = preset("low-full")
        spec = BatchSpec(cfg, [AgentSpec("zero", 12)], n_games=1)
        with pytest.raises(ConfigError):
            run_batch(spec)

    def test_deterministic(self):
        cfg = preset("low-binary")
        spec = BatchSpec(cfg, [AgentSpec("uniform", 20)], n_games=3, base_seed=9)
        assert run_batch(spec).gains() == run_batch(spec).gains()


class TestRandomAllocation:
    def test_mean_gain_near_zero(self):
        ds = simulate_random_allocation(preset("low-full"), 400, seed=0)
        assert abs(statistics.mean(ds.gains())) < 0.01

    def test_shares_urgency_draws_with_karma_runs(self):
        cfg = preset("low-full", seed=77)
        karma = run_game(cfg, build_agents(zero_population(), cfg, 77))
        ds = simulate_random_allocation(cfg, 1, seed=77)
        assert [r.s_rand for r in ds.rows] == karma.s_rand

    def test_row_shape(self):
        ds = simulate_random_allocation(preset("high-full"), 3, seed=1)
        assert len(ds.rows) == 60
        assert ds.source == "random"


class TestTurnTaking:
    def test_aggregate_matches_random(self):
        cfg = preset("low-full")
        rnd = simulate_random_allocation(cfg, 300, seed=5)
        tt = simulate_turn_taking(cfg, 300, seed=5)
        assert abs(statistics.mean(tt.gains()) - statistics.mean(rnd.gains())) < 0.01

    def test_strictly_smaller_spread(self):
        cfg = preset("low-full")
        rnd = simulate_random_allocation(cfg, 300, seed=5)
        tt = simulate_turn_taking(cfg, 300, seed=5)
        assert statistics.pvariance(tt.gains()) < statistics.pvariance(rnd.gains())

    def test_two_player_alternation_exact(self):
        # With all urgencies equal, score counts wins; token order forces
        # each side to take exactly half the rounds of an even game.
        cfg = GameConfig(
            n_participants=2, n_rounds=50, n_test_rounds=5,
            karma_init=9, karma_max=18, urgency_low=1, urgency_high=5,
            p_high=0.0, scheme=Scheme.FULL_RANGE,
            fee=FeeParams(90.0, 37.5, 10.0, 1.0, 1.5), seed=0,
        )
        for s in range(10):
            ds = simulate_turn_taking(replace(cfg, seed=s), 1, seed=s)
            assert [r.score for r in ds.rows] == [25, 25]


class TestDatasetIO:
    def test_csv_roundtrip(self, tmp_path):
        cfg = preset("low-full")
        ds = run_batch(BatchSpec(cfg, [AgentSpec("uniform", 20)], n_games=2, base_seed=3))
        path = tmp_path / "runs.csv"
        ds.write_csv(path)
        loaded = Dataset.read_csv(path)
        assert loaded.gains() == ds.gains()
        assert loaded.config == ds.config
        assert loaded.source == "karma"
        assert loaded.n_games == 2

    def test_missing_meta_rejected(self, tmp_path):
        path = tmp_path / "orphan.csv"
        path.write_text("game,participant,agent_kind,S,S_rand,gain\n")
        with pytest.raises(ConfigError):
            Dataset.read_csv(path)
