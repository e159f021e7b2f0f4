import random
from fractions import Fraction

import pytest

from conftest import make_game, make_net
from hubplatoon.errors import InputError, ModelInconsistencyError
from hubplatoon.feedback import (PolicySpec, SimulationTrace, TraceEvent,
                                 VehicleState, WorldState, build_views,
                                 conditional_distribution,
                                 detect_decision_instance, gating_steps,
                                 horizon_departure_times, run_closed_loop,
                                 step_world)
from hubplatoon.game import Scenario, deterministic_scenario
from hubplatoon.stochastic import (ScenarioDistribution,
                                   uniform_profile_distribution)

ONE = Fraction(1)
HALF = Fraction(1, 2)


def spec(kind, **kw):
    return PolicySpec(kind=kind, **kw)


class TestPolicySpec:
    def test_valid_kinds(self):
        for kind in ("sp", "ip", "ktt", "drhs", "srhs"):
            assert spec(kind).kind == kind

    def test_rejects_unknown_kind_and_bad_horizon(self):
        with pytest.raises(InputError, match="unknown policy kind"):
            spec("magic")
        with pytest.raises(InputError, match="horizon"):
            spec("drhs", horizon=0)

    def test_gating_steps(self):
        assert gating_steps(spec("drhs", gating_minutes=20), 5) == 4
        assert gating_steps(spec("drhs", gating_minutes=18), 5) == 3


def world_with(game, states, now=0, completed=None):
    return WorldState(now=now, vehicles={s.vid: s for s in states},
                      completed=dict(completed or {}))


class TestDetection:
    def setup_game(self):
        net = make_net([(0, 0, 1, 100, 15), (1, 1, 2, 100, 15)])
        return make_game(net, [(0, (0, 1), 0, 4), (1, (0, 1), 0, 4)])

    def test_no_instance_without_a_vehicle_at_a_node(self):
        game = self.setup_game()
        moving = VehicleState(vid=0, status="on_edge", edge_index=0,
                              entered_at=0, budget_left=4,
                              planned_waits=[0, 0])
        world = world_with(game, [moving], now=14)
        assert detect_decision_instance(world, game, 4) == ()

    def test_gating_pulls_in_nearby_vehicles(self):
        game = self.setup_game()
        at_node = VehicleState(vid=0, status="at_node", node_index=1,
                               budget_left=4, planned_waits=[0, 0])
        moving = VehicleState(vid=1, status="on_edge", edge_index=0,
                              entered_at=0, budget_left=4,
                              planned_waits=[0, 0])
        # free-flow remaining = 0 + 15 - now
        world = world_with(game, [at_node, moving], now=10)
        assert detect_decision_instance(world, game, 4) == (0,)
        world = world_with(game, [at_node, moving], now=11)
        assert detect_decision_instance(world, game, 4) == (0, 1)

    def test_pending_vehicles_never_eligible(self):
        game = self.setup_game()
        at_node = VehicleState(vid=0, status="at_node", node_index=0,
                               budget_left=4, planned_waits=[0, 0])
        pending = VehicleState(vid=1, status="pending", budget_left=4,
                               planned_waits=[0, 0])
        world = world_with(game, [at_node, pending], now=0)
        assert detect_decision_instance(world, game, 4) == (0,)


class TestConditioning:
    def setup(self):
        net = make_net([(0, 0, 1, 100, 3, (0, 1)), (1, 1, 2, 100, 3)],
                       profiles={0: {}, 1: {(0, 2): 2}})
        game = make_game(net, [(0, (0, 1), 0, 4)])
        dist = ScenarioDistribution(
            edge_profiles={0: ((0, HALF), (1, HALF))},
            start_steps={0: ((0, ONE),)})
        return game, dist

    def test_completed_traversal_pins_the_profile(self):
        game, dist = self.setup()
        state = VehicleState(vid=0, status="at_node", node_index=1,
                             budget_left=4, planned_waits=[0, 0],
                             realized_start=0)
        world = world_with(game, [state], now=7, completed={0: [(2, 5)]})
        post = conditional_distribution(dist, world, game)
        assert post.edge_profiles[0] == ((1, ONE),)
        world = world_with(game, [state], now=5, completed={0: [(2, 3)]})
        post = conditional_distribution(dist, world, game)
        assert post.edge_profiles[0] == ((0, ONE),)

    def test_en_route_elimination(self):
        game, dist = self.setup()
        state = VehicleState(vid=0, status="on_edge", edge_index=0,
                             entered_at=2, budget_left=4,
                             planned_waits=[0, 0], realized_start=2)
        # elapsed 4 steps: the flat profile (travel 3) would have arrived
        world = world_with(game, [state], now=6)
        post = conditional_distribution(dist, world, game)
        assert post.edge_profiles[0] == ((1, ONE),)
        # elapsed 2 steps: both profiles still possible, renormalized as-is
        world = world_with(game, [state], now=4)
        post = conditional_distribution(dist, world, game)
        assert post.edge_profiles[0] == ((0, HALF), (1, HALF))

    def test_renormalization_is_exact(self):
        net = make_net([(0, 0, 1, 100, 3, (0, 1, 2))],
                       profiles={0: {}, 1: {(0, 0): 1}, 2: {(0, 0): 5}})
        game = make_game(net, [(0, (0,), 0, 4)])
        dist = ScenarioDistribution(
            edge_profiles={0: ((0, Fraction(1, 4)), (1, Fraction(1, 4)),
                               (2, HALF))},
            start_steps={0: ((0, ONE),)})
        state = VehicleState(vid=0, status="on_edge", edge_index=0,
                             entered_at=0, budget_left=4, planned_waits=[0],
                             realized_start=0)
        world = world_with(game, [state], now=3)  # flat would have arrived
        post = conditional_distribution(dist, world, game)
        assert post.edge_profiles[0] == ((1, Fraction(1, 3)),
                                         (2, Fraction(2, 3)))

    def test_contradiction_raises(self):
        game, dist = self.setup()
        state = VehicleState(vid=0, status="at_node", node_index=1,
                             budget_left=4, planned_waits=[0, 0],
                             realized_start=0)
        world = world_with(game, [state], now=9, completed={0: [(2, 9)]})
        with pytest.raises(ModelInconsistencyError):
            conditional_distribution(dist, world, game)

    def test_start_marginals_collapse_or_condition(self):
        net = make_net([(0, 0, 1, 100, 3)])
        game = make_game(net, [(0, (0,), 3, 4)])
        dist = ScenarioDistribution(
            edge_profiles={},
            start_steps={0: ((3, HALF), (5, HALF))})
        started = VehicleState(vid=0, status="at_node", node_index=0,
                               budget_left=4, planned_waits=[0],
                               realized_start=3)
        world = world_with(game, [started], now=3)
        post = conditional_distribution(dist, world, game)
        assert post.start_steps[0] == ((3, ONE),)
        pending = VehicleState(vid=0, status="pending", budget_left=4,
                               planned_waits=[0])
        world = world_with(game, [pending], now=3)
        post = conditional_distribution(dist, world, game)
        assert post.start_steps[0] == ((5, ONE),)
        world = world_with(game, [pending], now=5)
        with pytest.raises(ModelInconsistencyError):
            conditional_distribution(dist, world, game)

    def test_ground_truth_is_never_eliminated(self):
        # simulate a truth world forward and condition at every step
        net = make_net([(0, 0, 1, 100, 3, (0, 1)), (1, 1, 2, 100, 3, (2, 3))],
                       profiles={0: {}, 1: {(0, 0): 2},
                                 2: {}, 3: {(1, 3): 1, (1, 5): 2}})
        game = make_game(net, [(0, (0, 1), 0, 2), (1, (0, 1), 1, 2)])
        dist = ScenarioDistribution(
            edge_profiles={0: ((0, HALF), (1, HALF)),
                           1: ((2, HALF), (3, HALF))},
            start_steps={0: ((0, ONE),), 1: ((1, HALF), (2, HALF))})
        truth = Scenario(profile_assignment={0: 1, 1: 3},
                         start_steps={0: 0, 1: 2})
        trace = run_closed_loop(game, dist, truth, spec("drhs"), seed=3)
        assert set(trace.finish_steps) == {0, 1}


class TestHorizonViews:
    def setup_game(self):
        net = make_net([(k, k, k + 1, 100, 3) for k in range(5)])
        return make_game(net, [(0, (0, 1, 2, 3, 4), 0, 4)])

    def test_at_node_span(self):
        game = self.setup_game()
        state = VehicleState(vid=0, status="at_node", node_index=1,
                             budget_left=3, planned_waits=[0, 2, 0, 1, 0])
        world = world_with(game, [state], now=9)
        [view] = build_views(game, world, (0,), horizon=2)
        assert view.span_nodes == (1, 2, 3)
        assert view.window_edges == (1, 2, 3)
        assert view.committed == (2, 0, 1)
        assert view.player is True
        assert view.kind == "at_node"

    def test_waits_beyond_window_reduce_the_view_budget(self):
        # committed waits past the window still count against the budget,
        # otherwise a window solve could overspend and leave the plan
        # infeasible at the next decision instance
        game = self.setup_game()
        state = VehicleState(vid=0, status="at_node", node_index=0,
                             budget_left=4, planned_waits=[0, 1, 0, 2, 1])
        world = world_with(game, [state], now=0)
        [view] = build_views(game, world, (0,), horizon=2)
        assert view.span_nodes == (0, 1, 2)
        assert view.budget_left == 1    # 4 minus the 2+1 planned at nodes 3, 4

    def test_on_edge_span_and_clamping(self):
        game = self.setup_game()
        state = VehicleState(vid=0, status="on_edge", edge_index=3,
                             entered_at=9, budget_left=2,
                             planned_waits=[0, 0, 0, 0, 1])
        world = world_with(game, [state], now=10)
        [view] = build_views(game, world, (0,), horizon=2)
        assert view.span_nodes == (4,)      # clamped at the last wait node
        assert view.window_edges == (4,)
        assert view.current_edge == 3
        assert view.entered_at == 9

    def test_final_edge_has_no_view(self):
        game = self.setup_game()
        state = VehicleState(vid=0, status="on_edge", edge_index=4,
                             entered_at=12, budget_left=2,
                             planned_waits=[0] * 5)
        world = world_with(game, [state], now=13)
        assert build_views(game, world, (0,), horizon=2) == []

    def test_pending_view_is_environment(self):
        game = self.setup_game()
        state = VehicleState(vid=0, status="pending", budget_left=4,
                             planned_waits=[0, 1, 0, 0, 0])
        world = world_with(game, [state], now=0)
        [view] = build_views(game, world, (), horizon=1)
        assert view.span_nodes == (0, 1)
        assert view.player is False
        assert view.kind == "pending"

    def test_departure_chain(self):
        game = self.setup_game()
        state = VehicleState(vid=0, status="at_node", node_index=0,
                             budget_left=4, planned_waits=[0] * 5)
        world = world_with(game, [state], now=4)
        [view] = build_views(game, world, (0,), horizon=2)
        travel = lambda eid, t: 3 + (1 if t >= 6 else 0)
        # wait 1: enter edge 0 at 5, travel 3; enter edge 1 at 8 (+1 slow), ...
        assert horizon_departure_times(view, (1, 0, 0), 4, travel) == (5, 8, 12)
        with pytest.raises(InputError, match="span needs 3 waits"):
            horizon_departure_times(view, (1, 0), 4, travel)


class TestStepWorld:
    def test_wait_burns_budget_and_departure_rewards(self):
        net = make_net([(0, 0, 1, 100, 3)])
        game = make_game(net, [(0, (0,), 0, 4), (1, (0,), 0, 4)])
        s0 = VehicleState(vid=0, status="at_node", node_index=0,
                          budget_left=4, planned_waits=[1])
        s1 = VehicleState(vid=1, status="at_node", node_index=0,
                          budget_left=4, planned_waits=[0])
        world = world_with(game, [s0, s1], now=0)
        events = []
        step_world(game, world, {}, events)
        assert world.now == 1
        assert s0.waited_steps == 1 and s0.budget_left == 3
        assert s0.planned_waits == [0]
        assert s1.status == "on_edge" and s1.arrival_step == 3
        assert s1.reward_centi == 0    # alone on the edge
        kinds = [e.kind for e in events]
        assert kinds == ["wait", "depart"]

    def test_joint_departure_forms_platoon(self):
        net = make_net([(0, 0, 1, 100, 3)])
        game = make_game(net, [(0, (0,), 0, 4), (1, (0,), 0, 4)])
        s0 = VehicleState(vid=0, status="at_node", node_index=0,
                          budget_left=4, planned_waits=[0])
        s1 = VehicleState(vid=1, status="at_node", node_index=0,
                          budget_left=4, planned_waits=[0])
        world = world_with(game, [s0, s1], now=5)
        events = []
        step_world(game, world, {}, events)
        assert s0.reward_centi == s1.reward_centi == 8500
        platoons = [e for e in events if e.kind == "platoon"]
        assert len(platoons) == 1
        assert platoons[0].data == {"edge": 0, "members": [0, 1], "travel": 3}

    def test_wait_without_budget_raises(self):
        net = make_net([(0, 0, 1, 100, 3)])
        game = make_game(net, [(0, (0,), 0, 4)])
        s0 = VehicleState(vid=0, status="at_node", node_index=0,
                          budget_left=0, planned_waits=[2])
        world = world_with(game, [s0], now=0)
        with pytest.raises(InputError, match="no budget"):
            step_world(game, world, {}, [])


def separation_setup():
    """Vehicle 0 learns its first-edge speed on arrival; 1 is a fixed train.

    Edge 0 travels 2 or 6 steps (uniform). Vehicle 1 enters the shared
    150 km edge at step 5 with no slack. Joining from the fast arrival
    costs 3 waits: worth it once the speed is known (12750 - 6600), not in
    expectation (12750/2 - 6600 < 0).
    """
    net = make_net([(0, 0, 1, 50, 2, (0, 1)), (1, 1, 2, 150, 3)],
                   profiles={0: {},
                             1: {(0, t): 4 for t in range(0, 10)}})
    game = make_game(net, [(0, (0, 1), 0, 4), (1, (1,), 5, 0)])
    dist = uniform_profile_distribution(net, game.fleet.values())
    truth = Scenario(profile_assignment={0: 0}, start_steps={0: 0, 1: 5})
    return game, dist, truth


class TestClosedLoop:
    def totals(self, game, dist, truth, kind, **kw):
        trace = run_closed_loop(game, dist, truth, spec(kind, **kw), seed=11)
        return trace, trace.total_utility_centi()

    def test_replanning_catches_what_open_loop_misses(self):
        game, dist, truth = separation_setup()
        _sp, sp_total = self.totals(game, dist, truth, "sp")
        _ip, ip_total = self.totals(game, dist, truth, "ip")
        drhs, drhs_total = self.totals(game, dist, truth, "drhs")
        srhs, srhs_total = self.totals(game, dist, truth, "srhs")
        ktt, ktt_total = self.totals(game, dist, truth, "ktt")
        assert sp_total == 0
        assert ip_total == 0       # waiting is negative in expectation
        assert drhs_total == 18900  # 12750 - 6600 + 12750, learned on arrival
        assert srhs_total == 18900
        assert ktt_total == 18900
        assert drhs.platoon_events() == {(1, 5, (0, 1))}
        assert drhs.waited_steps == {0: 3, 1: 0}

    def test_decide_event_records_the_replan(self):
        game, dist, truth = separation_setup()
        trace, _ = self.totals(game, dist, truth, "drhs")
        decides = [e for e in trace.events
                   if e.kind == "decide" and 0 in e.data["eligible"]]
        # the decisive replan happens on arrival at node 1 (step 2)
        assert any(e.t == 2 and e.data["waits"]["0"] == [3] for e in decides)

    def test_point_mass_collapse_and_sp_difference(self, line_net):
        game = make_game(line_net, [(0, (0, 1, 2), 0, 4), (1, (0, 1, 2), 1, 4)])
        dist = uniform_profile_distribution(line_net, game.fleet.values())
        assert dist.is_degenerate()
        truth = deterministic_scenario(line_net, game.fleet.values())
        traces = {kind: run_closed_loop(game, dist, truth, spec(kind), seed=2)
                  for kind in ("sp", "ip", "ktt", "drhs", "srhs")}
        solved = {k: traces[k].platoon_events() for k in traces}
        assert solved["ip"] == solved["ktt"] == solved["drhs"] == solved["srhs"]
        assert len(solved["ktt"]) == 3     # full-route platoon of two
        assert solved["sp"] == set()
        assert traces["sp"].waited_steps == {0: 0, 1: 0}
        for kind in ("ip", "ktt", "drhs", "srhs"):
            assert traces[kind].total_utility_centi() == 48800  # 6*8500 - 2200

    def test_trace_is_internally_consistent(self):
        game, dist, truth = separation_setup()
        for kind in ("sp", "ip", "ktt", "drhs", "srhs"):
            trace = run_closed_loop(game, dist, truth, spec(kind), seed=4)
            rewards = {vid: 0 for vid in game.vehicle_ids}
            waits = {vid: 0 for vid in game.vehicle_ids}
            finishes = {}
            for e in trace.events:
                if e.kind == "platoon":
                    n = len(e.data["members"])
                    r = game.reward_model.reward(n, game.net.edges[e.data["edge"]])
                    for vid in e.data["members"]:
                        rewards[vid] += r
                elif e.kind == "wait":
                    waits[e.data["vehicle"]] += 1
                elif e.kind == "finish":
                    finishes[e.data["vehicle"]] = e.t
            for vid in game.vehicle_ids:
                expect = rewards[vid] - game.cost_model.step_cost_centi * waits[vid]
                assert trace.utility_centi[vid] == expect
                assert trace.waited_steps[vid] == waits[vid]
                assert trace.finish_steps[vid] == finishes[vid]
                assert waits[vid] <= game.fleet[vid].waiting_budget_steps

    def test_rerun_is_identical(self):
        game, dist, truth = separation_setup()
        for kind in ("ip", "srhs"):
            a = run_closed_loop(game, dist, truth, spec(kind), seed=9)
            b = run_closed_loop(game, dist, truth, spec(kind), seed=9)
            assert [e.to_json() for e in a.events] == \
                [e.to_json() for e in b.events]
            assert a.utility_centi == b.utility_centi

    def test_runaway_guard(self):
        game, dist, truth = separation_setup()
        with pytest.raises(RuntimeError, match="exceeded"):
            run_closed_loop(game, dist, truth, spec("sp"), max_steps=3)

    def test_trace_jsonl_output(self, tmp_path):
        game, dist, truth = separation_setup()
        trace = run_closed_loop(game, dist, truth, spec("ktt"), seed=0)
        p = tmp_path / "trace.jsonl"
        trace.write_jsonl(p)
        lines = p.read_text().splitlines()
        assert len(lines) == len(trace.events)
        import json as _json

        first = _json.loads(lines[0])
        assert set(first) >= {"t", "kind"}


def test_srhs_sampled_worlds_when_support_is_large():
    # 6 uncertain edges x 4 profiles: posterior support 4096 > tiny cap
    rows = [(k, k, k + 1, 60, 2, (4 * k, 4 * k + 1, 4 * k + 2, 4 * k + 3))
            for k in range(6)]
    profiles = {}
    for k in range(6):
        for j in range(4):
            profiles[4 * k + j] = {(k, t): j for t in range(30)} if j else {}
    net = make_net(rows, profiles=profiles)
    game = make_game(net, [(0, tuple(range(6)), 0, 2),
                           (1, tuple(range(6)), 1, 2)])
    dist = uniform_profile_distribution(net, game.fleet.values())
    truth = Scenario(profile_assignment={k: 4 * k + (k % 4) for k in range(6)},
                     start_steps={0: 0, 1: 1})
    policy = spec("srhs", support_cap=8, oracle_draws=5)
    a = run_closed_loop(game, dist, truth, policy, seed=21)
    b = run_closed_loop(game, dist, truth, policy, seed=21)
    assert [e.to_json() for e in a.events] == [e.to_json() for e in b.events]
    assert set(a.finish_steps) == {0, 1}
