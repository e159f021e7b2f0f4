"""Best-response dynamics and Nash equilibrium search.

Round-robin best response over the fleet. Utilities come from an oracle
object so the same loop solves the deterministic game, the expected-value
game over a scenario distribution, and the horizon games of the feedback
policies. Because all of these admit an exact potential, every
action-changing best response strictly increases a bounded function and
the iteration terminates.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping, Sequence

from .dense import TableLimitError, static_table
from .errors import InputError, NonConvergenceError
from .game import CoordinationGame, Scenario

DEFAULT_ROUND_CAP = 10_000


def enumerate_actions(length: int, budget: int) -> list[tuple[int, ...]]:
    """All nonnegative integer wait vectors with sum <= budget, lex order."""
    if length < 1:
        raise InputError(f"action length must be >= 1, got {length}")
    if budget < 0:
        raise InputError(f"budget must be >= 0, got {budget}")
    out: list[tuple[int, ...]] = []

    def rec(prefix: tuple[int, ...], left: int, slots: int) -> None:
        if slots == 0:
            out.append(prefix)
            return
        for w in range(left + 1):
            rec(prefix + (w,), left - w, slots - 1)

    rec((), budget, length)
    return out


def spaces_for_fleet(fleet) -> dict[int, list[tuple[int, ...]]]:
    """Per-vehicle action space keyed by id; fleet is any VehicleSpec iterable."""
    return {v.id: enumerate_actions(len(v.edge_sequence), v.waiting_budget_steps)
            for v in fleet}


class DeterministicOracle:
    """Utilities of a CoordinationGame under one fixed scenario.

    ``action_values`` holds every other vehicle fixed, so the platoon
    contributions of the rest are tallied once and each candidate only
    recomputes the moving vehicle's own entries.
    """

    approximate = False

    def __init__(self, game: CoordinationGame, scenario: Scenario):
        self.game = game
        self.scenario = scenario
        self._profiles = game.resolve_profiles(scenario)
        self._table = None
        self._no_table = False

    def utility(self, vid: int, profile: Mapping[int, Sequence[int]]):
        return self.game.utility(vid, profile, self.scenario)

    def potential(self, profile: Mapping[int, Sequence[int]]):
        return self.game.potential(profile, self.scenario)

    def _dense(self, profile):
        if self._table is None and not self._no_table:
            try:
                self._table = static_table(self.game,
                                           [(self.scenario, Fraction(1))],
                                           [self._profiles], profile)
            except TableLimitError:
                self._no_table = True
        return self._table

    def _other_counts(self, vid: int,
                      profile: Mapping[int, Sequence[int]]) -> dict[tuple[int, int], int]:
        game = self.game
        counts: dict[tuple[int, int], int] = {}
        for other in game.vehicle_ids:
            if other == vid:
                continue
            entries = game.departure_times(other, profile[other], self.scenario,
                                           self._profiles)
            for eid, t in zip(game.fleet[other].edge_sequence, entries):
                key = (eid, t)
                counts[key] = counts.get(key, 0) + 1
        return counts

    def action_values(self, vid: int, actions: Sequence[Sequence[int]],
                      profile: Mapping[int, Sequence[int]]) -> list:
        table = self._dense(profile)
        if table is not None:
            try:
                table.sync(profile)
                scaled = table.scaled_values(vid, actions)
            except TableLimitError:
                self._table, self._no_table = None, True
            else:
                return [int(v) for v in scaled]    # scale is 1
        return self._action_values_by_loop(vid, actions, profile)

    def _action_values_by_loop(self, vid: int, actions: Sequence[Sequence[int]],
                               profile: Mapping[int, Sequence[int]]) -> list:
        game = self.game
        counts = self._other_counts(vid, profile)
        edge_seq = game.fleet[vid].edge_sequence
        reward = game.reward_model.reward
        edges = game.net.edges
        values = []
        for waits in actions:
            entries = game.departure_times(vid, waits, self.scenario, self._profiles)
            total = -game.cost_model.cost(waits)
            for eid, t in zip(edge_seq, entries):
                total += reward(counts.get((eid, t), 0) + 1, edges[eid])
            values.append(total)
        return values


def best_response(oracle, vid: int, actions: Sequence[tuple[int, ...]],
                  profile: Mapping[int, Sequence[int]]) -> tuple[tuple[int, ...], int]:
    """Best wait vector for ``vid`` against the rest of ``profile``.

    Returns (waits, candidates evaluated). Ties keep the current action if
    it attains the maximum, otherwise the lexicographically smallest
    maximizer wins; ``actions`` must already be in lex order.
    """
    values = oracle.action_values(vid, actions, profile)
    best_value = max(values)
    current = tuple(profile[vid])
    choice = None
    for waits, value in zip(actions, values):
        if value == best_value:
            if choice is None:
                choice = tuple(waits)
            if tuple(waits) == current:
                choice = current
                break
    return choice, len(actions)


@dataclass
class SolveReport:
    """Outcome of a Nash search: final profile plus effort accounting."""

    profile: dict[int, tuple[int, ...]]
    rounds: int
    evaluations: int
    verified: bool = False
    potential_trajectory: list | None = field(default=None)

    def to_dict(self) -> dict:
        doc = {"profile": {str(vid): list(w) for vid, w in sorted(self.profile.items())},
               "rounds": self.rounds, "evaluations": self.evaluations,
               "verified": self.verified}
        if self.potential_trajectory is not None:
            doc["potential_trajectory"] = [
                (float(p) if not isinstance(p, int) else p)
                for p in self.potential_trajectory]
        return doc

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def nash_seek(oracle, spaces: Mapping[int, Sequence[tuple[int, ...]]],
              initial: Mapping[int, Sequence[int]] | None = None,
              order: Sequence[int] | None = None,
              round_cap: int = DEFAULT_ROUND_CAP,
              track_potential: bool = False,
              verify: bool = False) -> SolveReport:
    """Round-robin best response until a full pass changes nothing.

    ``spaces`` maps vehicle id to its lex-ordered action set. The default
    start is the first (all-zero) action of every space; the default
    update order is ascending id. ``rounds`` counts full passes including
    the final confirming one.
    """
    ids = tuple(order) if order is not None else tuple(sorted(spaces))
    if set(ids) != set(spaces) or len(ids) != len(spaces):
        raise InputError("update order must list every vehicle exactly once")
    if initial is None:
        profile = {vid: spaces[vid][0] for vid in ids}
    else:
        profile = {vid: tuple(initial[vid]) for vid in ids}
        for vid in ids:
            if profile[vid] not in set(spaces[vid]):
                raise InputError(f"initial action of vehicle {vid} is not in its space")
    trajectory = None
    if track_potential:
        trajectory = [oracle.potential(profile)]
    rounds = 0
    evaluations = 0
    changed = True
    while changed:
        rounds += 1
        if rounds > round_cap:
            raise NonConvergenceError(f"no equilibrium after {round_cap} rounds")
        changed = False
        for vid in ids:
            waits, n_eval = best_response(oracle, vid, spaces[vid], profile)
            evaluations += n_eval
            if waits != profile[vid]:
                profile[vid] = waits
                changed = True
                if trajectory is not None:
                    trajectory.append(oracle.potential(profile))
    verified = False
    if verify:
        verified = verify_ne(oracle, spaces, profile)
    return SolveReport(profile=dict(profile), rounds=rounds, evaluations=evaluations,
                       verified=verified, potential_trajectory=trajectory)


def verify_ne(oracle, spaces: Mapping[int, Sequence[tuple[int, ...]]],
              profile: Mapping[int, Sequence[int]]) -> bool:
    """Exhaustive unilateral-deviation check; exact comparisons."""
    for vid in sorted(spaces):
        values = oracle.action_values(vid, spaces[vid], profile)
        here = values[list(map(tuple, spaces[vid])).index(tuple(profile[vid]))]
        if any(v > here for v in values):
            return False
    return True


def solve_deterministic(game: CoordinationGame, scenario: Scenario,
                        initial: Mapping[int, Sequence[int]] | None = None,
                        order: Sequence[int] | None = None,
                        round_cap: int = DEFAULT_ROUND_CAP,
                        track_potential: bool = False,
                        verify: bool = False) -> SolveReport:
    oracle = DeterministicOracle(game, scenario)
    spaces = spaces_for_fleet(game.fleet.values())
    return nash_seek(oracle, spaces, initial=initial, order=order,
                     round_cap=round_cap, track_potential=track_potential,
                     verify=verify)
