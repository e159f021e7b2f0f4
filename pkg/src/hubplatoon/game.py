"""Platoon coordination game on a road network.

Vehicles follow fixed hub-to-hub routes and choose how many steps to wait
at each node before entering the next edge. Trucks entering the same edge
at the same step form a platoon and each member collects a reward that
grows with platoon size; waiting costs money per step. All money is
integer centi-SEK. The game admits an exact potential: the change in any
vehicle's utility under a unilateral change of its waiting vector equals
the change of the potential, which is what makes best-response iteration
terminate.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping, Sequence

from .errors import FormatError, InputError
from .network import DelayProfile, RoadNetwork, travel_time

DEFAULT_KM_REWARD_CENTI = 170     # 1.70 SEK saved per platooned km
DEFAULT_STEP_COST_CENTI = 2200    # 22 SEK per waited 5-minute step
DEFAULT_WAIT_BUDGET_STEPS = 4


def round_half_away(x) -> int:
    """Round to the nearest integer, halves away from zero."""
    f = Fraction(x)
    if f >= 0:
        return int((2 * f.numerator + f.denominator) // (2 * f.denominator))
    return -int((-2 * f.numerator + f.denominator) // (2 * f.denominator))


@dataclass(frozen=True)
class VehicleSpec:
    """A truck: fixed edge route, nominal start step, waiting budget."""

    id: int
    edge_sequence: tuple[int, ...]
    start_step: int
    waiting_budget_steps: int = DEFAULT_WAIT_BUDGET_STEPS


@dataclass(frozen=True)
class Scenario:
    """One realization: a delay profile per edge and a start step per vehicle."""

    profile_assignment: Mapping[int, int]
    start_steps: Mapping[int, int]


class RewardModel:
    """Per-member platooning reward R(n, e), rounded once per (n, edge).

    Default model: a follower saves ``km_rate_centi`` per km, the platoon
    splits total savings equally, so each of n members gets
    km_rate * length * (n-1)/n, rounded half away from zero. A custom
    table maps (n, edge id) to centi-SEK directly; platoon sizes missing
    from the table are an error.
    """

    def __init__(self, km_rate_centi: int = DEFAULT_KM_REWARD_CENTI,
                 table: Mapping[tuple[int, int], int] | None = None):
        if table is None and km_rate_centi < 0:
            raise InputError("km_rate_centi must be nonnegative")
        if table is not None and any(v < 0 for v in table.values()):
            raise InputError("custom reward table must be nonnegative")
        self.km_rate_centi = km_rate_centi
        self.table = dict(table) if table is not None else None
        self._reward_cache: dict[tuple[int, int], int] = {}
        self._cumulative_cache: dict[tuple[int, int], int] = {}

    def reward(self, n: int, edge) -> int:
        """Per-member reward for an n-truck platoon on ``edge``."""
        if n < 1:
            raise InputError(f"platoon size must be >= 1, got {n}")
        if self.table is not None:
            try:
                return self.table[(n, edge.id)]
            except KeyError:
                raise InputError(
                    f"reward table has no entry for size {n} on edge {edge.id}") from None
        key = (n, edge.id)
        got = self._reward_cache.get(key)
        if got is None:
            # str() first: 0.3 km means 3/10, not the binary float near it
            got = round_half_away(
                Fraction(self.km_rate_centi) * Fraction(str(edge.length_km))
                * Fraction(n - 1, n))
            self._reward_cache[key] = got
        return got

    def cumulative(self, n: int, edge) -> int:
        """r(n, e) = sum of reward(j, e) for j = 1..n; the potential's edge term."""
        if n < 1:
            raise InputError(f"platoon size must be >= 1, got {n}")
        key = (n, edge.id)
        got = self._cumulative_cache.get(key)
        if got is None:
            got = sum(self.reward(j, edge) for j in range(1, n + 1))
            self._cumulative_cache[key] = got
        return got


@dataclass(frozen=True)
class WaitingCostModel:
    """Linear waiting cost: step_cost_centi per waited step."""

    step_cost_centi: int = DEFAULT_STEP_COST_CENTI

    def cost(self, waits: Sequence[int]) -> int:
        return self.step_cost_centi * sum(waits)


class CoordinationGame:
    """Deterministic coordination game bound to a network and a fleet."""

    def __init__(self, net: RoadNetwork, fleet: Sequence[VehicleSpec],
                 reward_model: RewardModel | None = None,
                 cost_model: WaitingCostModel | None = None):
        self.net = net
        self.fleet = {v.id: v for v in fleet}
        if len(self.fleet) != len(fleet):
            raise InputError("duplicate vehicle ids in fleet")
        self.vehicle_ids = tuple(sorted(self.fleet))
        self.reward_model = reward_model if reward_model is not None else RewardModel()
        self.cost_model = cost_model if cost_model is not None else WaitingCostModel()
        for v in fleet:
            self._check_route(v)

    def _check_route(self, v: VehicleSpec) -> None:
        if not v.edge_sequence:
            raise InputError(f"vehicle {v.id} has an empty route")
        if v.waiting_budget_steps < 0:
            raise InputError(f"vehicle {v.id} has a negative waiting budget")
        prev_head = None
        for eid in v.edge_sequence:
            edge = self.net.edges.get(eid)
            if edge is None:
                raise InputError(f"vehicle {v.id} routes over unknown edge {eid}")
            if prev_head is not None and edge.tail != prev_head:
                raise InputError(
                    f"vehicle {v.id} route breaks at edge {eid}: tail {edge.tail} != {prev_head}")
            prev_head = edge.head

    def resolve_profiles(self, scenario: Scenario) -> dict[int, DelayProfile]:
        out: dict[int, DelayProfile] = {}
        for eid, pid in scenario.profile_assignment.items():
            if eid not in self.net.edges:
                raise InputError(f"scenario assigns a profile to unknown edge {eid}")
            prof = self.net.delay_profiles.get(pid)
            if prof is None:
                raise InputError(f"scenario references unknown delay profile {pid}")
            out[eid] = prof
        return out

    def start_of(self, vid: int, scenario: Scenario) -> int:
        try:
            return scenario.start_steps[vid]
        except KeyError:
            return self.fleet[vid].start_step

    def departure_times(self, vid: int, waits: Sequence[int],
                        scenario: Scenario,
                        profiles: Mapping[int, DelayProfile] | None = None) -> tuple[int, ...]:
        """Step at which the vehicle enters each route edge.

        waits[k] is the wait at the k-th route node (the destination has
        none); entry to edge k happens after arriving at node k and
        waiting, so entries are strictly increasing.
        """
        v = self.fleet[vid]
        if len(waits) != len(v.edge_sequence):
            raise InputError(
                f"vehicle {vid} needs {len(v.edge_sequence)} waits, got {len(waits)}")
        if profiles is None:
            profiles = self.resolve_profiles(scenario)
        out = []
        t = self.start_of(vid, scenario) + waits[0]
        out.append(t)
        for k in range(1, len(v.edge_sequence)):
            prev_edge = self.net.edges[v.edge_sequence[k - 1]]
            t = t + travel_time(prev_edge, t, profiles) + waits[k]
            out.append(t)
        return tuple(out)

    def platoon_sets(self, profile: Mapping[int, Sequence[int]],
                     scenario: Scenario) -> dict[tuple[int, int], tuple[int, ...]]:
        """Group vehicles by (edge id, entry step); values sorted by id."""
        self._check_profile(profile)
        profiles = self.resolve_profiles(scenario)
        groups: dict[tuple[int, int], list[int]] = {}
        for vid in self.vehicle_ids:
            entries = self.departure_times(vid, profile[vid], scenario, profiles)
            for eid, t in zip(self.fleet[vid].edge_sequence, entries):
                groups.setdefault((eid, t), []).append(vid)
        return {key: tuple(sorted(vids)) for key, vids in groups.items()}

    def utility(self, vid: int, profile: Mapping[int, Sequence[int]],
                scenario: Scenario) -> int:
        """Platoon rewards along the route minus the waiting cost, centi-SEK."""
        groups = self.platoon_sets(profile, scenario)
        profiles = self.resolve_profiles(scenario)
        entries = self.departure_times(vid, profile[vid], scenario, profiles)
        total = 0
        for eid, t in zip(self.fleet[vid].edge_sequence, entries):
            edge = self.net.edges[eid]
            total += self.reward_model.reward(len(groups[(eid, t)]), edge)
        return total - self.cost_model.cost(profile[vid])

    def potential(self, profile: Mapping[int, Sequence[int]],
                  scenario: Scenario) -> int:
        """Exact potential: cumulative platoon value minus all waiting costs.

        A unilateral change of one vehicle's waits moves this by exactly
        that vehicle's utility change.
        """
        groups = self.platoon_sets(profile, scenario)
        total = 0
        for (eid, _t), members in groups.items():
            total += self.reward_model.cumulative(len(members), self.net.edges[eid])
        for vid in self.vehicle_ids:
            total -= self.cost_model.cost(profile[vid])
        return total

    def _check_profile(self, profile: Mapping[int, Sequence[int]]) -> None:
        if set(profile) != set(self.vehicle_ids):
            raise InputError("action profile ids do not match the fleet")

    def check_budgets(self, profile: Mapping[int, Sequence[int]]) -> None:
        self._check_profile(profile)
        for vid, waits in profile.items():
            v = self.fleet[vid]
            if any(w < 0 for w in waits):
                raise InputError(f"vehicle {vid} has a negative wait")
            if sum(waits) > v.waiting_budget_steps:
                raise InputError(
                    f"vehicle {vid} waits {sum(waits)} > budget {v.waiting_budget_steps}")


def zero_profile(fleet: Sequence[VehicleSpec]) -> dict[int, tuple[int, ...]]:
    return {v.id: (0,) * len(v.edge_sequence) for v in fleet}


def deterministic_scenario(net: RoadNetwork, fleet: Sequence[VehicleSpec],
                           profile_assignment: Mapping[int, int] | None = None) -> Scenario:
    """Point scenario from nominal starts; free flow unless profiles given."""
    return Scenario(profile_assignment=dict(profile_assignment or {}),
                    start_steps={v.id: v.start_step for v in fleet})


# --- fleet / profile / scenario serialization ---------------------------

_VEHICLE_FIELDS = {"id", "edge_sequence", "start_step", "waiting_budget_steps"}
_SCENARIO_FIELDS = {"profile_assignment", "start_steps"}


def fleet_from_list(doc) -> list[VehicleSpec]:
    if not isinstance(doc, list):
        raise FormatError("fleet document must be a JSON array")
    out = []
    for raw in doc:
        if not isinstance(raw, dict):
            raise FormatError("fleet entries must be objects")
        unknown = sorted(set(raw) - _VEHICLE_FIELDS)
        if unknown:
            raise FormatError(f"vehicle has unknown fields: {', '.join(unknown)}")
        missing = sorted(_VEHICLE_FIELDS - set(raw))
        if missing:
            raise FormatError(f"vehicle is missing fields: {', '.join(missing)}")
        out.append(VehicleSpec(id=int(raw["id"]),
                               edge_sequence=tuple(int(e) for e in raw["edge_sequence"]),
                               start_step=int(raw["start_step"]),
                               waiting_budget_steps=int(raw["waiting_budget_steps"])))
    return out


def fleet_to_list(fleet: Sequence[VehicleSpec]) -> list[dict]:
    return [{"id": v.id, "edge_sequence": list(v.edge_sequence),
             "start_step": v.start_step,
             "waiting_budget_steps": v.waiting_budget_steps}
            for v in sorted(fleet, key=lambda v: v.id)]


def load_fleet(path) -> list[VehicleSpec]:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: not valid JSON: {exc}") from exc
    return fleet_from_list(doc)


def save_fleet(fleet: Sequence[VehicleSpec], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(fleet_to_list(fleet), fh, indent=2, sort_keys=True)
        fh.write("\n")


def profile_to_dict(profile: Mapping[int, Sequence[int]]) -> dict:
    return {str(vid): list(waits) for vid, waits in sorted(profile.items())}


def profile_from_dict(doc: dict) -> dict[int, tuple[int, ...]]:
    if not isinstance(doc, dict):
        raise FormatError("profile document must be an object")
    return {int(vid): tuple(int(w) for w in waits) for vid, waits in doc.items()}


def scenario_from_dict(doc: dict) -> Scenario:
    if not isinstance(doc, dict):
        raise FormatError("scenario document must be an object")
    unknown = sorted(set(doc) - _SCENARIO_FIELDS)
    if unknown:
        raise FormatError(f"scenario has unknown fields: {', '.join(unknown)}")
    missing = sorted(_SCENARIO_FIELDS - set(doc))
    if missing:
        raise FormatError(f"scenario is missing fields: {', '.join(missing)}")
    return Scenario(
        profile_assignment={int(k): int(v) for k, v in doc["profile_assignment"].items()},
        start_steps={int(k): int(v) for k, v in doc["start_steps"].items()})


def scenario_to_dict(scenario: Scenario) -> dict:
    return {"profile_assignment": {str(k): v for k, v in sorted(scenario.profile_assignment.items())},
            "start_steps": {str(k): v for k, v in sorted(scenario.start_steps.items())}}
