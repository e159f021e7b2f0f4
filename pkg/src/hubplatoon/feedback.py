"""Closed-loop simulation with receding-horizon replanning.

The world advances on the global step grid. Whenever some vehicle sits at
a node, a decision instance fires: vehicles at nodes, plus vehicles close
enough to their next node (free-flow remaining time within the gating
window), re-solve a small coordination game over their next few nodes.
Everyone else keeps committed plans and enters the game as a fixed
environment. Two information models are supported: DRHS replaces
uncertain travel times with their rounded posterior means and solves a
deterministic horizon game; SRHS keeps the posterior and solves the
expected-utility game. Open-loop baselines (SP never waits, IP solves the
stochastic game once, KTT solves the deterministic game on the realized
scenario) run through the same world loop without replanning.

Horizon games live on truncated paths: nodes beyond a vehicle's horizon
window do not exist in the game, neither as rewards nor as platoon
partners, which keeps the horizon game an exact-potential coordination
game and the solve terminating.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping, Sequence

import numpy as np

from .dense import (EntryTable, TableLimitError, dense_delay_row,
                    rounded_mean_rows, scaled_weights)
from .errors import InputError, ModelInconsistencyError
from .game import CoordinationGame, Scenario, round_half_away, zero_profile
from .network import travel_time
from .seeding import derive_seed
from .solver import (DEFAULT_ROUND_CAP, DeterministicOracle, enumerate_actions,
                     nash_seek, solve_deterministic, spaces_for_fleet)
from .stochastic import (ScenarioDistribution, enumerate_support,
                         sample_scenarios, stochastic_oracle)

POLICY_KINDS = ("sp", "ip", "ktt", "drhs", "srhs")


@dataclass(frozen=True)
class PolicySpec:
    """Which decision rule drives the fleet, and its knobs."""

    kind: str
    horizon: int = 2
    gating_minutes: int = 20
    support_cap: int = 128        # horizon-game posterior enumeration cap
    oracle_draws: int = 16        # sample count above either cap
    open_loop_cap: int = 4096     # IP one-shot enumeration cap
    round_cap: int = DEFAULT_ROUND_CAP

    def __post_init__(self):
        if self.kind not in POLICY_KINDS:
            raise InputError(f"unknown policy kind {self.kind!r}")
        if self.horizon < 1:
            raise InputError("horizon must be >= 1")


@dataclass
class VehicleState:
    vid: int
    status: str                   # pending | at_node | on_edge | done
    node_index: int = 0           # meaningful when at_node
    edge_index: int = 0           # meaningful when on_edge
    entered_at: int = 0           # entry step of the current edge
    arrival_step: int = 0         # ground-truth arrival at the next node
    budget_left: int = 0
    planned_waits: list[int] = field(default_factory=list)
    waited_steps: int = 0
    reward_centi: int = 0
    finish_step: int | None = None
    realized_start: int | None = None


@dataclass
class WorldState:
    """Everything observable plus the bookkeeping the policies rely on."""

    now: int
    vehicles: dict[int, VehicleState]
    # edge id -> list of (entry step, realized travel) for finished traversals
    completed: dict[int, list[tuple[int, int]]] = field(default_factory=dict)

    def active_at_nodes(self) -> list[VehicleState]:
        return [v for v in self.vehicles.values() if v.status == "at_node"]

    def in_progress(self) -> list[VehicleState]:
        return [v for v in self.vehicles.values() if v.status == "on_edge"]


@dataclass
class TraceEvent:
    t: int
    kind: str
    data: dict

    def to_json(self) -> str:
        doc = {"t": self.t, "kind": self.kind}
        doc.update(self.data)
        return json.dumps(doc, sort_keys=True)


@dataclass
class SimulationTrace:
    policy: str
    events: list[TraceEvent]
    utility_centi: dict[int, int]
    waited_steps: dict[int, int]
    finish_steps: dict[int, int]

    def total_utility_centi(self) -> int:
        return sum(self.utility_centi.values())

    def platoon_events(self) -> set[tuple[int, int, tuple[int, ...]]]:
        """Set of (edge id, entry step, member ids) with two or more members."""
        return {(e.data["edge"], e.t, tuple(e.data["members"]))
                for e in self.events if e.kind == "platoon"}

    def write_jsonl(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for event in self.events:
                fh.write(event.to_json() + "\n")


def gating_steps(policy: PolicySpec, step_minutes: int) -> int:
    return policy.gating_minutes // step_minutes


def detect_decision_instance(world: WorldState, game: CoordinationGame,
                             gate_steps: int) -> tuple[int, ...]:
    """Eligible vehicle ids, ascending; empty unless someone is at a node."""
    at_nodes = world.active_at_nodes()
    if not at_nodes:
        return ()
    eligible = {v.vid for v in at_nodes}
    for v in world.in_progress():
        edge = game.net.edges[game.fleet[v.vid].edge_sequence[v.edge_index]]
        free_flow_left = max(0, v.entered_at + edge.base_travel_steps - world.now)
        if free_flow_left <= gate_steps:
            eligible.add(v.vid)
    return tuple(sorted(eligible))


def conditional_distribution(dist: ScenarioDistribution, world: WorldState,
                             game: CoordinationGame) -> ScenarioDistribution:
    """Posterior after eliminating profiles contradicted by observations.

    A finished traversal pins the delay the profile must produce at that
    entry step; a truck still en route rules out every profile under which
    it would already have arrived. Start marginals collapse to the
    realized step once a vehicle has appeared and condition on being later
    than now while it has not. Probabilities renormalize exactly.
    """
    edges = game.net.edges
    profiles = game.net.delay_profiles
    posterior_edges: dict[int, tuple[tuple[int, Fraction], ...]] = {}
    for eid, pairs in dist.edge_profiles.items():
        base = edges[eid].base_travel_steps
        observations = world.completed.get(eid, ())
        en_route = [(v.entered_at, world.now - v.entered_at)
                    for v in world.in_progress()
                    if game.fleet[v.vid].edge_sequence[v.edge_index] == eid]
        kept = []
        for pid, p in pairs:
            prof = profiles[pid]
            ok = all(base + prof.delay(eid, t_in) == travel
                     for t_in, travel in observations)
            if ok:
                ok = all(base + prof.delay(eid, t_in) > elapsed
                         for t_in, elapsed in en_route)
            if ok:
                kept.append((pid, p))
        if not kept:
            raise ModelInconsistencyError(
                f"every profile on edge {eid} is contradicted by observations")
        total = sum(p for _pid, p in kept)
        posterior_edges[eid] = tuple((pid, p / total) for pid, p in kept)
    posterior_starts: dict[int, tuple[tuple[int, Fraction], ...]] = {}
    for vid, pairs in dist.start_steps.items():
        state = world.vehicles.get(vid)
        if state is not None and state.status != "pending" \
                and state.realized_start is not None:
            posterior_starts[vid] = ((state.realized_start, Fraction(1)),)
        else:
            kept = tuple((t, p) for t, p in pairs if t > world.now)
            if not kept:
                raise ModelInconsistencyError(
                    f"vehicle {vid} has not appeared but every start step is <= {world.now}")
            total = sum(p for _t, p in kept)
            posterior_starts[vid] = tuple((t, p / total) for t, p in kept)
    return ScenarioDistribution(edge_profiles=posterior_edges,
                                start_steps=posterior_starts)


# --- horizon game ------------------------------------------------------


@dataclass
class HorizonView:
    """One vehicle's slice of the world at a decision instance."""

    vid: int
    kind: str                     # at_node | on_edge | pending
    span_nodes: tuple[int, ...]   # path node indices whose waits are decided
    window_edges: tuple[int, ...] # edge ids out of the span nodes
    committed: tuple[int, ...]    # current plan over the span
    budget_left: int
    player: bool
    current_edge: int | None = None
    entered_at: int | None = None


def build_views(game: CoordinationGame, world: WorldState,
                eligible: Sequence[int], horizon: int) -> list[HorizonView]:
    views = []
    for vid in sorted(game.vehicle_ids):
        state = world.vehicles[vid]
        if state.status == "done":
            continue
        seq = game.fleet[vid].edge_sequence
        last_wait_node = len(seq) - 1
        if state.status == "on_edge":
            first = state.edge_index + 1
            last = min(state.edge_index + horizon, last_wait_node)
            current_edge = seq[state.edge_index]
            entered_at = state.entered_at
        else:  # at_node or pending (pending behaves as at origin from its start)
            first = state.node_index if state.status == "at_node" else 0
            last = min(first + horizon, last_wait_node)
            current_edge = None
            entered_at = None
        if first > last:
            continue  # nothing left to decide; final edge underway
        span = tuple(range(first, last + 1))
        # waits already committed beyond the window still count against
        # the budget, so the window may only allocate what they leave
        beyond = sum(state.planned_waits[k]
                     for k in range(last + 1, last_wait_node + 1))
        views.append(HorizonView(
            vid=vid, kind=state.status, span_nodes=span,
            window_edges=tuple(seq[k] for k in span),
            committed=tuple(state.planned_waits[k] for k in span),
            budget_left=state.budget_left - beyond,
            player=(vid in eligible) and state.status != "pending",
            current_edge=current_edge, entered_at=entered_at))
    return views


def horizon_departure_times(view: HorizonView, waits: Sequence[int], avail: int,
                            travel) -> tuple[int, ...]:
    """Predicted entry step for each window edge.

    ``avail`` is when the vehicle can first leave the span's first node;
    ``travel(edge_id, step)`` supplies the travel model in force.
    """
    if len(waits) != len(view.span_nodes):
        raise InputError(f"vehicle {view.vid} span needs {len(view.span_nodes)} waits")
    entries = []
    t = avail
    for w, eid in zip(waits, view.window_edges):
        t += w
        entries.append(t)
        t += travel(eid, t)
    return tuple(entries)


def _horizon_table(game: CoordinationGame, views: Sequence[HorizonView],
                   worlds) -> EntryTable:
    """Dense batch evaluator for one decision instance.

    Raises TableLimitError when the instance does not fit the integer
    table model (caller falls back to the reference loops).
    """
    edge_ids = sorted({eid for v in views for eid in v.window_edges})
    if not edge_ids:
        raise TableLimitError("no window edges")
    weights, scale = scaled_weights([p for p, _a, _t in worlds])
    avail = {v.vid: [a[v.vid] for _p, a, _t in worlds] for v in views}
    max_delta = {eid: max(t.max_extra(eid) for _p, _a, t in worlds)
                 for eid in edge_ids}
    t0 = min(min(a) for a in avail.values())
    horizon = 1
    max_budget = 1
    max_len = 1
    for v in views:
        span = max(avail[v.vid]) + v.budget_left
        for eid in v.window_edges:
            span += game.net.edges[eid].base_travel_steps + max_delta[eid]
        horizon = max(horizon, span - t0 + 1)
        max_budget = max(max_budget, v.budget_left)
        max_len = max(max_len, len(v.window_edges))
    table = EntryTable(len(worlds), edge_ids, horizon, t0, weights, scale,
                       game.cost_model.step_cost_centi)
    rows: dict = {}
    for w, (_p, _a, travel) in enumerate(worlds):
        for eid in edge_ids:
            token = travel.row_token(eid)
            row = rows.get(token)
            if row is None:
                row = travel.dense_row(eid, t0, t0 + horizon)
                rows[token] = row
            table.set_travel(w, eid, row)
    table.finish_travel(game.reward_model, game.net.edges,
                        max_platoon=len(views), max_budget=max_budget,
                        max_track_len=max_len)
    for v in views:
        table.add_track(v.vid, v.window_edges, avail[v.vid], v.committed,
                        v.budget_left)
    return table


class _HorizonOracle:
    """Expected horizon utility over a list of weighted scenario worlds.

    Each world is (probability, avail map, travel function). Rewards count
    only a vehicle's own window edges; waiting cost covers its span.
    """

    def __init__(self, game: CoordinationGame, views: Sequence[HorizonView],
                 worlds: Sequence[tuple[Fraction, Mapping[int, int], object]]):
        self.game = game
        self.views = {v.vid: v for v in views}
        self.players = tuple(sorted(v.vid for v in views if v.player))
        self.worlds = list(worlds)
        try:
            self._table = _horizon_table(game, views, self.worlds)
        except TableLimitError:
            self._table = None
        self._env = None

    def _env_counts(self):
        if self._env is None:
            self._env = []
            env = [v for v in self.views.values() if not v.player]
            for _p, avail, travel in self.worlds:
                counts: dict[tuple[int, int], int] = {}
                for view in env:
                    entries = horizon_departure_times(view, view.committed,
                                                      avail[view.vid], travel)
                    for eid, t in zip(view.window_edges, entries):
                        key = (eid, t)
                        counts[key] = counts.get(key, 0) + 1
                self._env.append(counts)
        return self._env

    def _counts_without(self, vid, profile):
        per_world = []
        env_counts = self._env_counts()
        for w, (_p, avail, travel) in enumerate(self.worlds):
            counts = dict(env_counts[w])
            for other in self.players:
                if other == vid:
                    continue
                view = self.views[other]
                entries = horizon_departure_times(view, profile[other],
                                                  avail[other], travel)
                for eid, t in zip(view.window_edges, entries):
                    key = (eid, t)
                    counts[key] = counts.get(key, 0) + 1
            per_world.append(counts)
        return per_world

    def action_values(self, vid, actions, profile):
        table = self._table
        if table is not None:
            try:
                table.sync({v: profile[v] for v in self.players})
                scaled = table.scaled_values(vid, actions)
            except TableLimitError:
                self._table = None
            else:
                return [Fraction(int(v), table.scale) for v in scaled]
        return self._values_by_loop(vid, actions, profile)

    def _values_by_loop(self, vid, actions, profile):
        view = self.views[vid]
        per_world = self._counts_without(vid, profile)
        reward = self.game.reward_model.reward
        edges = self.game.net.edges
        step_cost = self.game.cost_model.step_cost_centi
        values = []
        for waits in actions:
            total = Fraction(0)
            cost = step_cost * sum(waits)
            for (prob, avail, travel), counts in zip(self.worlds, per_world):
                entries = horizon_departure_times(view, waits, avail[vid], travel)
                u = -cost
                for eid, t in zip(view.window_edges, entries):
                    u += reward(counts.get((eid, t), 0) + 1, edges[eid])
                total += prob * u
            values.append(total)
        return values

    def utility(self, vid, profile):
        actions = [tuple(profile[vid])]
        return self.action_values(vid, actions, profile)[0]

    def potential(self, profile):
        """Expected truncated-path potential; used for instrumentation."""
        reward_cum = self.game.reward_model.cumulative
        edges = self.game.net.edges
        step_cost = self.game.cost_model.step_cost_centi
        total = Fraction(0)
        for w, (prob, avail, travel) in enumerate(self.worlds):
            groups: dict[tuple[int, int], int] = {}
            for vid, view in self.views.items():
                waits = profile[vid] if view.player else view.committed
                entries = horizon_departure_times(view, waits, avail[vid], travel)
                for eid, t in zip(view.window_edges, entries):
                    key = (eid, t)
                    groups[key] = groups.get(key, 0) + 1
            val = 0
            for (eid, _t), n in groups.items():
                val += reward_cum(n, edges[eid])
            for vid, view in self.views.items():
                waits = profile[vid] if view.player else view.committed
                val -= step_cost * sum(waits)
            total += prob * val
        return total


class _MeanTravel:
    """Rounded posterior-mean travel time, cached per (edge, step)."""

    def __init__(self, game: CoordinationGame, posterior: ScenarioDistribution):
        self._edges = game.net.edges
        self._profiles = game.net.delay_profiles
        self._posterior = posterior
        self._cache: dict[tuple[int, int], int] = {}

    def __call__(self, eid: int, t: int) -> int:
        key = (eid, t)
        got = self._cache.get(key)
        if got is None:
            base = self._edges[eid].base_travel_steps
            pairs = self._posterior.edge_profiles.get(eid)
            if not pairs:
                got = base
            else:
                mean = Fraction(0)
                for pid, p in pairs:
                    mean += p * self._profiles[pid].delay(eid, t)
                got = base + round_half_away(mean)
            self._cache[key] = got
        return got

    def row_token(self, eid: int):
        return ("mean", id(self), eid)

    def max_extra(self, eid: int) -> int:
        pairs = self._posterior.edge_profiles.get(eid)
        worst = 0
        for pid, _p in pairs or ():
            for (e, _t), d in self._profiles[pid].delay_at.items():
                if e == eid and d > worst:
                    worst = d
        return worst

    def dense_row(self, eid: int, t0: int, t1: int):
        base = self._edges[eid].base_travel_steps
        pairs = self._posterior.edge_profiles.get(eid)
        if not pairs:
            return np.full(t1 - t0, base, dtype=np.int32)
        rows = [dense_delay_row(self._profiles[pid], eid, t0, t1)
                for pid, _p in pairs]
        return base + rounded_mean_rows(rows, [p for _pid, p in pairs])


class _ScenarioTravel:
    """Travel times under one fixed profile assignment."""

    def __init__(self, game: CoordinationGame, scenario: Scenario):
        self._edges = game.net.edges
        self._profiles = game.net.delay_profiles
        self._assign = scenario.profile_assignment

    def __call__(self, eid: int, t: int) -> int:
        pid = self._assign.get(eid)
        if pid is None:
            return self._edges[eid].base_travel_steps
        return self._edges[eid].base_travel_steps + self._profiles[pid].delay(eid, t)

    def row_token(self, eid: int):
        return ("pid", self._assign.get(eid), eid)

    def max_extra(self, eid: int) -> int:
        pid = self._assign.get(eid)
        if pid is None:
            return 0
        return max((d for (e, _t), d in self._profiles[pid].delay_at.items()
                    if e == eid), default=0)

    def dense_row(self, eid: int, t0: int, t1: int):
        base = self._edges[eid].base_travel_steps
        pid = self._assign.get(eid)
        if pid is None:
            return np.full(t1 - t0, base, dtype=np.int32)
        return base + dense_delay_row(self._profiles[pid], eid, t0, t1)


def _avail_map(game: CoordinationGame, world: WorldState,
               views: Sequence[HorizonView], travel, starts: Mapping[int, int]):
    """When each vehicle can first leave its span's first node."""
    avail = {}
    for view in views:
        if view.kind == "at_node":
            avail[view.vid] = world.now
        elif view.kind == "pending":
            # no marginal => the start is deterministic from the fleet spec
            avail[view.vid] = starts.get(view.vid,
                                         game.fleet[view.vid].start_step)
        else:
            remaining = travel(view.current_edge, view.entered_at) \
                - (world.now - view.entered_at)
            avail[view.vid] = world.now + max(remaining, 0)
    return avail


def _mean_starts(posterior: ScenarioDistribution) -> dict[int, int]:
    out = {}
    for vid, pairs in posterior.start_steps.items():
        mean = Fraction(0)
        for t, p in pairs:
            mean += p * t
        out[vid] = round_half_away(mean)
    return out


def _solve_horizon(game: CoordinationGame, views: Sequence[HorizonView],
                   worlds, policy: PolicySpec) -> dict[int, tuple[int, ...]]:
    oracle = _HorizonOracle(game, views, worlds)
    players = oracle.players
    if not players:
        return {}
    spaces = {vid: enumerate_actions(len(oracle.views[vid].span_nodes),
                                     oracle.views[vid].budget_left)
              for vid in players}
    initial = {vid: oracle.views[vid].committed for vid in players}
    report = nash_seek(oracle, spaces, initial=initial,
                       round_cap=policy.round_cap)
    return report.profile


def drhs_decide(game: CoordinationGame, world: WorldState,
                dist: ScenarioDistribution, eligible: Sequence[int],
                policy: PolicySpec) -> dict[int, tuple[int, ...]]:
    """Deterministic receding-horizon step: certainty-equivalent solve."""
    posterior = conditional_distribution(dist, world, game)
    views = build_views(game, world, eligible, policy.horizon)
    travel = _MeanTravel(game, posterior)
    starts = _mean_starts(posterior)
    avail = _avail_map(game, world, views, travel, starts)
    worlds = [(Fraction(1), avail, travel)]
    return _solve_horizon(game, views, worlds, policy)


def srhs_decide(game: CoordinationGame, world: WorldState,
                dist: ScenarioDistribution, eligible: Sequence[int],
                policy: PolicySpec, seed: int = 0) -> dict[int, tuple[int, ...]]:
    """Stochastic receding-horizon step: expectation over the posterior.

    Only the marginals the horizon game can see (window edges, current
    edges of moving participants, pending starts) enter the joint support;
    exact enumeration under the policy cap, seeded sampling above it.
    """
    posterior = conditional_distribution(dist, world, game)
    views = build_views(game, world, eligible, policy.horizon)
    relevant_edges: set[int] = set()
    relevant_vids: set[int] = set()
    for view in views:
        relevant_edges.update(view.window_edges)
        if view.current_edge is not None:
            relevant_edges.add(view.current_edge)
        if view.kind == "pending":
            relevant_vids.add(view.vid)
    reduced = ScenarioDistribution(
        edge_profiles={eid: pairs for eid, pairs in posterior.edge_profiles.items()
                       if eid in relevant_edges},
        start_steps={vid: pairs for vid, pairs in posterior.start_steps.items()
                     if vid in relevant_vids})
    if reduced.support_size() <= policy.support_cap:
        weighted = enumerate_support(reduced, policy.support_cap)
    else:
        rng = random.Random(seed)
        weight = Fraction(1, policy.oracle_draws)
        weighted = [(s, weight)
                    for s in sample_scenarios(reduced, policy.oracle_draws, rng)]
    worlds = []
    for scenario, prob in weighted:
        travel = _ScenarioTravel(game, scenario)
        starts = dict(scenario.start_steps)
        avail = _avail_map(game, world, views, travel, starts)
        worlds.append((prob, avail, travel))
    return _solve_horizon(game, views, worlds, policy)


# --- world dynamics ----------------------------------------------------


def step_world(game: CoordinationGame, world: WorldState,
               truth_profiles, events: list[TraceEvent]) -> None:
    """Execute one step: committed zero-waits depart, positive waits burn one.

    Decision logic has already run for this step; this applies plans
    against the ground truth, forms platoons, and advances the clock.
    """
    now = world.now
    departures: dict[int, list[int]] = {}  # same step => same entry time
    for vid in sorted(world.vehicles):
        state = world.vehicles[vid]
        if state.status != "at_node":
            continue
        k = state.node_index
        seq = game.fleet[vid].edge_sequence
        wait = state.planned_waits[k]
        if wait > 0:
            if state.budget_left <= 0:
                raise InputError(f"vehicle {vid} plans to wait with no budget left")
            state.planned_waits[k] = wait - 1
            state.budget_left -= 1
            state.waited_steps += 1
            events.append(TraceEvent(now, "wait", {"vehicle": vid, "node": k}))
            continue
        eid = seq[k]
        edge = game.net.edges[eid]
        steps = travel_time(edge, now, truth_profiles)
        state.status = "on_edge"
        state.edge_index = k
        state.entered_at = now
        state.arrival_step = now + steps
        events.append(TraceEvent(now, "depart",
                                 {"vehicle": vid, "edge": eid, "travel": steps}))
        departures.setdefault(eid, []).append(vid)
    for eid, members in sorted(departures.items()):
        n = len(members)
        per_member = game.reward_model.reward(n, game.net.edges[eid])
        for vid in members:
            world.vehicles[vid].reward_centi += per_member
        if n >= 2:
            travel = world.vehicles[members[0]].arrival_step - now
            events.append(TraceEvent(now, "platoon",
                                     {"edge": eid, "members": sorted(members),
                                      "travel": travel}))
    world.now = now + 1


def _arrivals_and_starts(game: CoordinationGame, world: WorldState,
                         truth: Scenario, events: list[TraceEvent]) -> None:
    now = world.now
    for vid in sorted(world.vehicles):
        state = world.vehicles[vid]
        if state.status == "pending" and game.start_of(vid, truth) == now:
            state.status = "at_node"
            state.node_index = 0
            state.realized_start = now
            events.append(TraceEvent(now, "start", {"vehicle": vid, "node": 0}))
        elif state.status == "on_edge" and state.arrival_step == now:
            seq = game.fleet[vid].edge_sequence
            eid = seq[state.edge_index]
            travel = now - state.entered_at
            world.completed.setdefault(eid, []).append((state.entered_at, travel))
            node = state.edge_index + 1
            events.append(TraceEvent(now, "arrive",
                                     {"vehicle": vid, "node": node, "edge": eid,
                                      "entered": state.entered_at, "travel": travel}))
            if node == len(seq):
                state.status = "done"
                state.finish_step = now
                events.append(TraceEvent(now, "finish", {"vehicle": vid, "node": node}))
            else:
                state.status = "at_node"
                state.node_index = node


def open_loop_anchor(game: CoordinationGame, dist: ScenarioDistribution,
                     policy: PolicySpec, seed: int = 0) -> dict[int, tuple[int, ...]]:
    """The common open-loop equilibrium plan every planning policy starts from."""
    oracle = stochastic_oracle(game, dist, cap=policy.open_loop_cap,
                               draws=policy.oracle_draws,
                               seed=derive_seed(seed, "ip"))
    spaces = spaces_for_fleet(game.fleet.values())
    return nash_seek(oracle, spaces, round_cap=policy.round_cap).profile


def clairvoyant_plan(game: CoordinationGame, truth: Scenario,
                     anchor: Mapping[int, tuple[int, ...]],
                     round_cap: int = DEFAULT_ROUND_CAP
                     ) -> dict[int, tuple[int, ...]]:
    """Equilibrium plan against the realized travel times.

    Best-response dynamics can settle on different equilibria depending
    on where it starts. The coordinator runs it twice, from the shared
    open-loop plan and from the no-wait profile, and proposes whichever
    equilibrium yields more total utility (the anchor start on ties).
    """
    oracle = DeterministicOracle(game, truth)
    spaces = spaces_for_fleet(game.fleet.values())
    best, best_total = None, None
    for start in (anchor, zero_profile(game.fleet.values())):
        profile = nash_seek(oracle, spaces, initial=start,
                            round_cap=round_cap).profile
        total = sum(oracle.utility(vid, profile) for vid in profile)
        if best is None or total > best_total:
            best, best_total = profile, total
    return best


def run_closed_loop(game: CoordinationGame, dist: ScenarioDistribution,
                    truth: Scenario, policy: PolicySpec, seed: int = 0,
                    max_steps: int = 20_000,
                    anchor: Mapping[int, tuple[int, ...]] | None = None
                    ) -> SimulationTrace:
    """Simulate one realized day under a policy; returns the full trace.

    ``anchor`` lets a caller running several policies on one instance
    reuse the open-loop plan instead of recomputing it; it must equal
    open_loop_anchor(...) for the same seed, or determinism breaks.
    """
    truth_profiles = game.resolve_profiles(truth)
    plans: dict[int, tuple[int, ...]]
    if policy.kind == "sp":
        plans = {vid: (0,) * len(game.fleet[vid].edge_sequence)
                 for vid in game.vehicle_ids}
    else:
        # every planning policy starts from the same open-loop plan. ip
        # executes it as-is, the receding-horizon kinds revise it as
        # observations arrive, and ktt refines it against the realized
        # travel times up front. Sharing the anchor keeps the policies on
        # common random numbers: they diverge only where information does.
        if anchor is None:
            anchor = open_loop_anchor(game, dist, policy, seed)
        plans = {vid: tuple(anchor[vid]) for vid in game.vehicle_ids}
        if policy.kind == "ktt":
            plans = clairvoyant_plan(game, truth, plans,
                                     round_cap=policy.round_cap)

    start_min = min(game.start_of(vid, truth) for vid in game.vehicle_ids)
    world = WorldState(now=start_min, vehicles={
        vid: VehicleState(vid=vid, status="pending",
                          budget_left=game.fleet[vid].waiting_budget_steps,
                          planned_waits=list(plans[vid]))
        for vid in game.vehicle_ids})
    events: list[TraceEvent] = []
    gate = gating_steps(policy, game.net.time_step_minutes)
    replanning = policy.kind in ("drhs", "srhs")
    steps = 0
    while True:
        _arrivals_and_starts(game, world, truth, events)
        if all(v.status == "done" for v in world.vehicles.values()):
            break
        eligible = detect_decision_instance(world, game, gate)
        if eligible and replanning:
            if policy.kind == "drhs":
                solved = drhs_decide(game, world, dist, eligible, policy)
            else:
                solved = srhs_decide(game, world, dist, eligible, policy,
                                     seed=derive_seed(seed, "srhs", world.now))
            if solved:
                views = {v.vid: v for v in build_views(game, world, eligible,
                                                       policy.horizon)}
                for vid, waits in solved.items():
                    state = world.vehicles[vid]
                    for k, w in zip(views[vid].span_nodes, waits):
                        state.planned_waits[k] = w
                events.append(TraceEvent(world.now, "decide",
                                         {"eligible": list(eligible),
                                          "waits": {str(v): list(w)
                                                    for v, w in sorted(solved.items())}}))
        step_world(game, world, truth_profiles, events)
        steps += 1
        if steps > max_steps:
            raise RuntimeError(f"simulation exceeded {max_steps} steps")

    utility = {}
    waited = {}
    finished = {}
    for vid in game.vehicle_ids:
        state = world.vehicles[vid]
        utility[vid] = state.reward_centi \
            - game.cost_model.step_cost_centi * state.waited_steps
        waited[vid] = state.waited_steps
        finished[vid] = state.finish_step
    return SimulationTrace(policy=policy.kind, events=events,
                           utility_centi=utility, waited_steps=waited,
                           finish_steps=finished)
