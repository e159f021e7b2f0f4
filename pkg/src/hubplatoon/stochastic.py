"""Stochastic coordination game: expectation over a scenario distribution.

Travel-time uncertainty is a delay profile drawn independently per edge;
start-step uncertainty is drawn independently per vehicle. Probabilities
are exact rationals so expected utilities and the expected potential stay
exact. Joint supports are enumerated fully below a cap; above it a seeded
sample defines an empirical (uniform) measure, which is itself a
finite-support stochastic game, so the solver's termination argument is
unchanged; results from the sampled oracle are flagged approximate.
"""

from __future__ import annotations

import itertools
import json
import random
from dataclasses import dataclass
from fractions import Fraction
from typing import Mapping, Sequence

from .dense import TableLimitError, static_table
from .errors import FormatError, InputError, SupportTooLargeError
from .game import CoordinationGame, Scenario

DEFAULT_SUPPORT_CAP = 4096


@dataclass(frozen=True)
class ScenarioDistribution:
    """Independent marginals: per-edge profile choices, per-vehicle starts.

    Each marginal is a tuple of (value, probability) with exact Fraction
    probabilities summing to one.
    """

    edge_profiles: Mapping[int, tuple[tuple[int, Fraction], ...]]
    start_steps: Mapping[int, tuple[tuple[int, Fraction], ...]]

    def __post_init__(self):
        for label, marginals in (("edge", self.edge_profiles),
                                 ("vehicle", self.start_steps)):
            for key, pairs in marginals.items():
                if not pairs:
                    raise InputError(f"{label} {key} has an empty marginal")
                total = Fraction(0)
                seen = set()
                for value, p in pairs:
                    if not isinstance(p, Fraction) or p <= 0:
                        raise InputError(
                            f"{label} {key} needs positive Fraction probabilities")
                    if value in seen:
                        raise InputError(f"{label} {key} repeats value {value}")
                    seen.add(value)
                    total += p
                if total != 1:
                    raise InputError(f"{label} {key} probabilities sum to {total}, not 1")

    def support_size(self) -> int:
        n = 1
        for pairs in self.edge_profiles.values():
            n *= len(pairs)
        for pairs in self.start_steps.values():
            n *= len(pairs)
        return n

    def is_degenerate(self) -> bool:
        return self.support_size() == 1


def degenerate_distribution(scenario: Scenario) -> ScenarioDistribution:
    """Point mass on one scenario."""
    one = Fraction(1)
    return ScenarioDistribution(
        edge_profiles={eid: ((pid, one),)
                       for eid, pid in sorted(scenario.profile_assignment.items())},
        start_steps={vid: ((t, one),)
                     for vid, t in sorted(scenario.start_steps.items())})


def uniform_profile_distribution(net, fleet, starts: Mapping[int, int] | None = None
                                 ) -> ScenarioDistribution:
    """Equiprobable admissible profiles per edge; deterministic starts."""
    edge_profiles = {}
    for eid, edge in sorted(net.edges.items()):
        if edge.delay_profile_ids:
            n = len(edge.delay_profile_ids)
            edge_profiles[eid] = tuple((pid, Fraction(1, n))
                                       for pid in edge.delay_profile_ids)
    if starts is None:
        starts = {v.id: v.start_step for v in fleet}
    start_steps = {vid: ((t, Fraction(1)),) for vid, t in sorted(starts.items())}
    return ScenarioDistribution(edge_profiles=edge_profiles, start_steps=start_steps)


def enumerate_support(dist: ScenarioDistribution,
                      cap: int = DEFAULT_SUPPORT_CAP) -> list[tuple[Scenario, Fraction]]:
    """Full joint support as (scenario, probability), deterministic order.

    Raises SupportTooLargeError above ``cap``; callers should fall back to
    the sampled oracle.
    """
    size = dist.support_size()
    if size > cap:
        raise SupportTooLargeError(
            f"joint support has {size} scenarios, above the cap of {cap}; "
            "use the sampled oracle")
    edge_ids = sorted(dist.edge_profiles)
    vehicle_ids = sorted(dist.start_steps)
    axes = [dist.edge_profiles[eid] for eid in edge_ids]
    axes += [dist.start_steps[vid] for vid in vehicle_ids]
    out = []
    for combo in itertools.product(*axes):
        prob = Fraction(1)
        for _value, p in combo:
            prob *= p
        assignment = {eid: combo[i][0] for i, eid in enumerate(edge_ids)}
        starts = {vid: combo[len(edge_ids) + j][0]
                  for j, vid in enumerate(vehicle_ids)}
        out.append((Scenario(profile_assignment=assignment, start_steps=starts), prob))
    return out


def sample_scenario(dist: ScenarioDistribution, rng: random.Random) -> Scenario:
    assignment = {}
    for eid in sorted(dist.edge_profiles):
        pairs = dist.edge_profiles[eid]
        assignment[eid] = _draw(pairs, rng)
    starts = {}
    for vid in sorted(dist.start_steps):
        starts[vid] = _draw(dist.start_steps[vid], rng)
    return Scenario(profile_assignment=assignment, start_steps=starts)


def sample_scenarios(dist: ScenarioDistribution, draws: int,
                     rng: random.Random) -> list[Scenario]:
    """``draws`` joint scenarios, each marginal systematically stratified.

    Every marginal is sampled on an evenly spaced probability grid with a
    shared random offset and then shuffled, so the draw set covers each
    marginal in proportion to its weights while the pairing across
    marginals stays random. Same cost as independent draws, lower
    variance for effects that decompose per marginal.
    """
    cols: list[tuple[str, int, list[int]]] = []
    for eid in sorted(dist.edge_profiles):
        cols.append(("edge", eid, _systematic(dist.edge_profiles[eid], draws, rng)))
    for vid in sorted(dist.start_steps):
        cols.append(("start", vid, _systematic(dist.start_steps[vid], draws, rng)))
    out = []
    for k in range(draws):
        assignment = {eid: col[k] for kind, eid, col in cols if kind == "edge"}
        starts = {vid: col[k] for kind, vid, col in cols if kind == "start"}
        out.append(Scenario(profile_assignment=assignment, start_steps=starts))
    return out


def _systematic(pairs: Sequence[tuple[int, Fraction]], draws: int,
                rng: random.Random) -> list[int]:
    if len(pairs) == 1:
        return [pairs[0][0]] * draws
    u = rng.random()
    out = []
    it = iter(pairs)
    value, p = next(it)
    acc = float(p)
    for k in range(draws):
        x = (u + k) / draws
        while x >= acc:
            nxt = next(it, None)
            if nxt is None:
                break  # float round-off at the tail of the CDF
            value, p = nxt
            acc += float(p)
        out.append(value)
    rng.shuffle(out)
    return out


def _draw(pairs: Sequence[tuple[int, Fraction]], rng: random.Random) -> int:
    if len(pairs) == 1:
        return pairs[0][0]
    x = rng.random()
    acc = 0.0
    for value, p in pairs:
        acc += float(p)
        if x < acc:
            return value
    return pairs[-1][0]


def expected_utility(game: CoordinationGame, vid: int,
                     profile: Mapping[int, Sequence[int]],
                     support: Sequence[tuple[Scenario, Fraction]]) -> Fraction:
    total = Fraction(0)
    for scenario, prob in support:
        total += prob * game.utility(vid, profile, scenario)
    return total


def expected_potential(game: CoordinationGame,
                       profile: Mapping[int, Sequence[int]],
                       support: Sequence[tuple[Scenario, Fraction]]) -> Fraction:
    total = Fraction(0)
    for scenario, prob in support:
        total += prob * game.potential(profile, scenario)
    return total


class _ScenarioTable:
    """Shared per-scenario machinery for the expectation oracles."""

    def __init__(self, game: CoordinationGame,
                 weighted: Sequence[tuple[Scenario, Fraction]]):
        self.game = game
        self.weighted = list(weighted)
        self._profiles = [game.resolve_profiles(s) for s, _p in self.weighted]
        self._table = None
        self._no_table = False

    def _dense(self, profile):
        if self._table is None and not self._no_table:
            try:
                self._table = static_table(self.game, self.weighted,
                                           self._profiles, profile)
            except TableLimitError:
                self._no_table = True
        return self._table

    def _other_counts(self, vid, profile):
        game = self.game
        per_scenario = []
        for (scenario, _p), profiles in zip(self.weighted, self._profiles):
            counts: dict[tuple[int, int], int] = {}
            for other in game.vehicle_ids:
                if other == vid:
                    continue
                entries = game.departure_times(other, profile[other], scenario, profiles)
                for eid, t in zip(game.fleet[other].edge_sequence, entries):
                    key = (eid, t)
                    counts[key] = counts.get(key, 0) + 1
            per_scenario.append(counts)
        return per_scenario

    def action_values(self, vid, actions, profile):
        table = self._dense(profile)
        if table is not None:
            try:
                table.sync(profile)
                scaled = table.scaled_values(vid, actions)
            except TableLimitError:
                self._table, self._no_table = None, True
            else:
                return [Fraction(int(v), table.scale) for v in scaled]
        return self._action_values_by_loop(vid, actions, profile)

    def _action_values_by_loop(self, vid, actions, profile):
        game = self.game
        per_scenario = self._other_counts(vid, profile)
        edge_seq = game.fleet[vid].edge_sequence
        reward = game.reward_model.reward
        edges = game.net.edges
        values = []
        for waits in actions:
            total = Fraction(0)
            cost = game.cost_model.cost(waits)
            for ((scenario, prob), profiles, counts) in zip(
                    self.weighted, self._profiles, per_scenario):
                entries = game.departure_times(vid, waits, scenario, profiles)
                u = -cost
                for eid, t in zip(edge_seq, entries):
                    u += reward(counts.get((eid, t), 0) + 1, edges[eid])
                total += prob * u
            values.append(total)
        return values

    def utility(self, vid, profile):
        total = Fraction(0)
        for scenario, prob in self.weighted:
            total += prob * self.game.utility(vid, profile, scenario)
        return total

    def potential(self, profile):
        total = Fraction(0)
        for scenario, prob in self.weighted:
            total += prob * self.game.potential(profile, scenario)
        return total


class ExpectedUtilityOracle(_ScenarioTable):
    """Exact expectation over an enumerated support."""

    approximate = False

    def __init__(self, game: CoordinationGame, dist: ScenarioDistribution,
                 cap: int = DEFAULT_SUPPORT_CAP):
        super().__init__(game, enumerate_support(dist, cap))


class SampledUtilityOracle(_ScenarioTable):
    """Empirical mean over scenarios drawn once (common random numbers).

    Deterministic for a given seed; self-reports as approximate.
    """

    approximate = True

    def __init__(self, game: CoordinationGame, dist: ScenarioDistribution,
                 draws: int, seed: int):
        if draws < 1:
            raise InputError(f"draws must be >= 1, got {draws}")
        rng = random.Random(seed)
        weight = Fraction(1, draws)
        weighted = [(s, weight) for s in sample_scenarios(dist, draws, rng)]
        super().__init__(game, weighted)
        self.draws = draws
        self.seed = seed


def stochastic_oracle(game: CoordinationGame, dist: ScenarioDistribution,
                      cap: int = DEFAULT_SUPPORT_CAP, draws: int = 16,
                      seed: int = 0):
    """Exact oracle when the support fits under the cap, else sampled."""
    if dist.support_size() <= cap:
        return ExpectedUtilityOracle(game, dist, cap)
    return SampledUtilityOracle(game, dist, draws, seed)


# --- JSON serialization ------------------------------------------------

_DIST_FIELDS = {"edges", "starts"}
_EDGE_ROW_FIELDS = {"edge", "profiles"}
_PROB_FIELDS = {"id", "p_num", "p_den"}
_START_ROW_FIELDS = {"vehicle", "steps"}
_STEP_FIELDS = {"t", "p_num", "p_den"}


def distribution_from_dict(doc: dict) -> ScenarioDistribution:
    if not isinstance(doc, dict):
        raise FormatError("distribution document must be an object")
    unknown = sorted(set(doc) - _DIST_FIELDS)
    if unknown:
        raise FormatError(f"distribution has unknown fields: {', '.join(unknown)}")
    missing = sorted(_DIST_FIELDS - set(doc))
    if missing:
        raise FormatError(f"distribution is missing fields: {', '.join(missing)}")
    edge_profiles = {}
    for row in doc["edges"]:
        _check(row, _EDGE_ROW_FIELDS, "distribution edge row")
        pairs = []
        for cell in row["profiles"]:
            _check(cell, _PROB_FIELDS, "profile probability")
            pairs.append((int(cell["id"]),
                          Fraction(int(cell["p_num"]), int(cell["p_den"]))))
        edge_profiles[int(row["edge"])] = tuple(pairs)
    start_steps = {}
    for row in doc["starts"]:
        _check(row, _START_ROW_FIELDS, "distribution start row")
        pairs = []
        for cell in row["steps"]:
            _check(cell, _STEP_FIELDS, "start probability")
            pairs.append((int(cell["t"]),
                          Fraction(int(cell["p_num"]), int(cell["p_den"]))))
        start_steps[int(row["vehicle"])] = tuple(pairs)
    try:
        return ScenarioDistribution(edge_profiles=edge_profiles, start_steps=start_steps)
    except InputError as exc:
        raise FormatError(str(exc)) from exc


def _check(obj, fields, what):
    if not isinstance(obj, dict):
        raise FormatError(f"{what} must be an object")
    unknown = sorted(set(obj) - fields)
    if unknown:
        raise FormatError(f"{what} has unknown fields: {', '.join(unknown)}")
    missing = sorted(fields - set(obj))
    if missing:
        raise FormatError(f"{what} is missing fields: {', '.join(missing)}")


def distribution_to_dict(dist: ScenarioDistribution) -> dict:
    return {"edges": [{"edge": eid,
                       "profiles": [{"id": pid, "p_num": p.numerator, "p_den": p.denominator}
                                    for pid, p in pairs]}
                      for eid, pairs in sorted(dist.edge_profiles.items())],
            "starts": [{"vehicle": vid,
                        "steps": [{"t": t, "p_num": p.numerator, "p_den": p.denominator}
                                  for t, p in pairs]}
                       for vid, pairs in sorted(dist.start_steps.items())]}


def load_distribution(path) -> ScenarioDistribution:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: not valid JSON: {exc}") from exc
    return distribution_from_dict(doc)


def save_distribution(dist: ScenarioDistribution, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(distribution_to_dict(dist), fh, indent=2, sort_keys=True)
        fh.write("\n")
