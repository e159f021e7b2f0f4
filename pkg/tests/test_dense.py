import random
from fractions import Fraction

import numpy as np
import pytest

from conftest import make_game, make_net
from hubplatoon.dense import (TableLimitError, dense_delay_row,
                              rounded_mean_rows, scaled_weights)
from hubplatoon.feedback import PolicySpec, run_closed_loop
from hubplatoon.game import Scenario
from hubplatoon.network import DelayProfile
from hubplatoon.solver import (DeterministicOracle, enumerate_actions,
                               spaces_for_fleet)
from hubplatoon.stochastic import (ExpectedUtilityOracle,
                                   SampledUtilityOracle,
                                   ScenarioDistribution, sample_scenarios,
                                   uniform_profile_distribution)


def random_instance(rng, n_profiles=2):
    """Small line network + fleet, with per-edge delay profiles."""
    n_edges = rng.randint(1, 3)
    profiles = {}
    for pid in range(n_profiles):
        profiles[pid] = {(k, t): rng.randint(0, 3)
                         for k in range(n_edges) for t in range(14)
                         if rng.random() < 0.4}
    rows = [(k, k, k + 1, rng.choice((50, 100, 150)), rng.randint(1, 3),
             tuple(range(n_profiles)))
            for k in range(n_edges)]
    net = make_net(rows, profiles=profiles)
    vrows = []
    for vid in range(rng.randint(2, 3)):
        a = rng.randrange(n_edges)
        b = rng.randrange(a, n_edges)
        vrows.append((vid, tuple(range(a, b + 1)), rng.randint(0, 2),
                      rng.randint(0, 3)))
    return make_game(net, vrows), n_edges


def random_profile(rng, spaces):
    return {vid: rng.choice(space) for vid, space in spaces.items()}


class TestScaledWeights:
    def test_lcm_scaling_is_exact(self):
        probs = [Fraction(1, 2), Fraction(1, 3), Fraction(1, 6)]
        weights, scale = scaled_weights(probs)
        assert weights == [3, 2, 1]
        assert scale == 6
        assert all(Fraction(w, scale) == p for w, p in zip(weights, probs))

    def test_point_mass(self):
        weights, scale = scaled_weights([Fraction(1)])
        assert weights == [1] and scale == 1

    def test_huge_denominator_rejected(self):
        eps = Fraction(1, 2 ** 70)
        with pytest.raises(TableLimitError):
            scaled_weights([eps, 1 - eps])


class TestDenseRows:
    def test_delay_row_matches_profile_lookup(self):
        prof = DelayProfile(id=0, delay_at={(5, 2): 3, (5, 4): 1})
        row = dense_delay_row(prof, 5, 0, 6)
        assert row.tolist() == [prof.delay(5, t) for t in range(6)]

    def test_negative_delay_rejected(self):
        prof = DelayProfile(id=0, delay_at={(1, 0): -2})
        with pytest.raises(TableLimitError):
            dense_delay_row(prof, 1, 0, 3)

    def test_rounded_mean_half_away_from_zero(self):
        # posterior mean 1.5 rounds up to 2, mean 0.5 rounds to 1
        rows = [np.array([1, 0], dtype=np.int32),
                np.array([2, 1], dtype=np.int32)]
        out = rounded_mean_rows(rows, [Fraction(1, 2), Fraction(1, 2)])
        assert out.tolist() == [2, 1]

    def test_rounded_mean_exact_thirds(self):
        rows = [np.array([1], dtype=np.int32),
                np.array([1], dtype=np.int32),
                np.array([4], dtype=np.int32)]
        out = rounded_mean_rows(rows, [Fraction(1, 3)] * 3)
        assert out.tolist() == [2]    # mean 2 exactly


class TestDeterministicEquivalence:
    def test_fast_path_matches_loops_on_random_instances(self):
        rng = random.Random(4242)
        checked = 0
        for _case in range(40):
            game, n_edges = random_instance(rng)
            s = Scenario(profile_assignment={k: rng.randrange(2)
                                             for k in range(n_edges)},
                         start_steps={})
            oracle = DeterministicOracle(game, s)
            spaces = spaces_for_fleet(game.fleet.values())
            for _trial in range(3):
                profile = random_profile(rng, spaces)
                for vid in game.vehicle_ids:
                    fast = oracle.action_values(vid, spaces[vid], profile)
                    slow = oracle._action_values_by_loop(vid, spaces[vid],
                                                         profile)
                    assert fast == slow
                    checked += len(fast)
        assert checked > 1000

    def test_falls_back_on_negative_delay(self, line_net):
        net = make_net([(0, 0, 1, 100, 3, (7,))],
                       profiles={7: {(0, 1): -1}})
        game = make_game(net, [(0, (0,), 0, 2), (1, (0,), 0, 2)])
        s = Scenario(profile_assignment={0: 7}, start_steps={})
        oracle = DeterministicOracle(game, s)
        profile = {0: (0,), 1: (1,)}
        space = enumerate_actions(1, 2)
        assert oracle.action_values(0, space, profile) == \
            oracle._action_values_by_loop(0, space, profile)


class TestStochasticEquivalence:
    def test_expected_oracle_matches_loops(self):
        rng = random.Random(777)
        for _case in range(25):
            game, n_edges = random_instance(rng)
            dist = uniform_profile_distribution(game.net, game.fleet.values())
            oracle = ExpectedUtilityOracle(game, dist)
            spaces = spaces_for_fleet(game.fleet.values())
            profile = random_profile(rng, spaces)
            for vid in game.vehicle_ids:
                fast = oracle.action_values(vid, spaces[vid], profile)
                slow = oracle._action_values_by_loop(vid, spaces[vid], profile)
                assert fast == slow

    def test_sampled_oracle_matches_loops(self):
        rng = random.Random(778)
        for _case in range(15):
            game, n_edges = random_instance(rng, n_profiles=3)
            dist = uniform_profile_distribution(game.net, game.fleet.values())
            oracle = SampledUtilityOracle(game, dist, draws=8, seed=_case)
            spaces = spaces_for_fleet(game.fleet.values())
            profile = random_profile(rng, spaces)
            for vid in game.vehicle_ids:
                fast = oracle.action_values(vid, spaces[vid], profile)
                slow = oracle._action_values_by_loop(vid, spaces[vid], profile)
                assert fast == slow

    def test_tiny_probability_falls_back(self):
        net = make_net([(0, 0, 1, 100, 3, (0, 1))],
                       profiles={0: {}, 1: {(0, 0): 1}})
        game = make_game(net, [(0, (0,), 0, 1), (1, (0,), 0, 1)])
        eps = Fraction(1, 2 ** 70)
        dist = ScenarioDistribution(edge_profiles={0: ((0, eps), (1, 1 - eps))},
                                    start_steps={0: ((0, Fraction(1)),),
                                                 1: ((0, Fraction(1)),)})
        oracle = ExpectedUtilityOracle(game, dist)
        space = enumerate_actions(1, 1)
        profile = {0: (0,), 1: (0,)}
        vals = oracle.action_values(0, space, profile)
        assert vals == oracle._action_values_by_loop(0, space, profile)
        assert oracle._no_table is True


class TestHorizonEquivalence:
    def closed_loop_pair(self, kind, seed, monkeypatch):
        rng = random.Random(seed)
        game, n_edges = random_instance(rng, n_profiles=3)
        dist = uniform_profile_distribution(game.net, game.fleet.values())
        truth = Scenario(profile_assignment={k: rng.randrange(3)
                                             for k in range(n_edges)},
                         start_steps={})
        policy = PolicySpec(kind=kind, horizon=2)
        fast = run_closed_loop(game, dist, truth, policy, seed=seed)
        import hubplatoon.feedback as fb

        def refuse(*args, **kwargs):
            raise TableLimitError("disabled for test")

        monkeypatch.setattr(fb, "_horizon_table", refuse)
        slow = run_closed_loop(game, dist, truth, policy, seed=seed)
        return fast, slow

    @pytest.mark.parametrize("kind", ["drhs", "srhs"])
    def test_traces_identical_with_and_without_table(self, kind, monkeypatch):
        for seed in (0, 1, 2, 3, 4):
            fast, slow = self.closed_loop_pair(kind, seed, monkeypatch)
            monkeypatch.undo()
            assert fast == slow


class TestStratifiedSampling:
    def two_marginal_dist(self):
        return ScenarioDistribution(
            edge_profiles={0: ((0, Fraction(1, 4)), (1, Fraction(3, 4))),
                           1: ((0, Fraction(1, 2)), (1, Fraction(1, 2)))},
            start_steps={0: ((5, Fraction(1)),)})

    def test_marginal_counts_are_proportional(self):
        dist = self.two_marginal_dist()
        draws = 16
        out = sample_scenarios(dist, draws, random.Random(3))
        assert len(out) == draws
        c0 = sum(s.profile_assignment[0] for s in out)
        c1 = sum(s.profile_assignment[1] for s in out)
        assert c0 == 12     # 3/4 of 16 exactly
        assert c1 == 8      # 1/2 of 16 exactly
        assert all(s.start_steps == {0: 5} for s in out)

    def test_deterministic_for_a_seed(self):
        dist = self.two_marginal_dist()
        a = sample_scenarios(dist, 8, random.Random(11))
        b = sample_scenarios(dist, 8, random.Random(11))
        assert a == b
