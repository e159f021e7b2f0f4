"""Dense integer tables for batch evaluation of candidate wait vectors.

The best-response oracles all answer the same question: for one vehicle,
for every candidate wait vector, what is the (expected) utility against a
fixed profile of everyone else. Answering it one action and one scenario
at a time is exact but slow; this module tabulates travel times, entry
counts and platoon rewards as integer arrays so a whole action space is
valued with a handful of numpy gathers.

Everything stays exact: probabilities enter as lcm-scaled integer
weights, so a value here equals the reference Fraction times the scale.
Construction raises TableLimitError when the tables would be too large
or the integers could overflow; callers then keep their plain loop.
"""

from __future__ import annotations

import math
from fractions import Fraction
from typing import Mapping, Sequence

import numpy as np

# beyond these, fall back to the reference evaluation path
MAX_TABLE_CELLS = 32_000_000
MAX_VALUE_BOUND = 2 ** 62


class TableLimitError(Exception):
    """The dense representation does not fit; use the reference path."""


def scaled_weights(probs: Sequence[Fraction]) -> tuple[list[int], int]:
    """Integer weights preserving exact ordering: weight[i] = prob[i] * scale."""
    scale = 1
    for p in probs:
        scale = scale * p.denominator // math.gcd(scale, p.denominator)
    if scale > MAX_VALUE_BOUND:
        raise TableLimitError(f"weight scale {scale} too large")
    return [int(p * scale) for p in probs], scale


def dense_delay_row(profile, eid: int, t0: int, t1: int) -> np.ndarray:
    """The profile's extra steps on one edge over [t0, t1)."""
    row = np.zeros(t1 - t0, dtype=np.int32)
    for (e, t), d in profile.delay_at.items():
        if e == eid and t0 <= t < t1:
            if d < 0:
                raise TableLimitError(f"negative delay on edge {e} at {t}")
            row[t - t0] = d
    return row


def rounded_mean_rows(rows: Sequence[np.ndarray],
                      probs: Sequence[Fraction]) -> np.ndarray:
    """Pointwise round-half-away-from-zero of sum(p_i * rows_i), exactly."""
    denom = 1
    for p in probs:
        denom = denom * p.denominator // math.gcd(denom, p.denominator)
    if denom > 2 ** 31:
        raise TableLimitError(f"posterior denominator {denom} too large")
    total = np.zeros(rows[0].shape, dtype=np.int64)
    for row, p in zip(rows, probs):
        total += int(p.numerator * (denom // p.denominator)) * row.astype(np.int64)
    mags = np.abs(total)
    rounded = (2 * mags + denom) // (2 * denom)
    return np.where(total >= 0, rounded, -rounded).astype(np.int32)


class EntryTable:
    """Entry times and platoon counts over W weighted worlds.

    A *track* is one vehicle's list of edges with a per-world availability
    step and a committed wait vector; player tracks can be re-valued and
    re-committed, environment tracks only contribute counts.
    """

    def __init__(self, worlds: int, edge_ids: Sequence[int], horizon_steps: int,
                 t0: int, weights: Sequence[int], scale: int,
                 step_cost_centi: int):
        if worlds < 1 or not edge_ids or horizon_steps < 1:
            raise TableLimitError("empty table")
        cells = worlds * len(edge_ids) * horizon_steps
        if cells > MAX_TABLE_CELLS:
            raise TableLimitError(f"{cells} cells exceed the dense limit")
        self.w = worlds
        self.t0 = t0
        self.steps = horizon_steps
        self.scale = scale
        self.step_cost = step_cost_centi
        self.col = {eid: i for i, eid in enumerate(edge_ids)}
        self.travel = np.zeros((worlds, len(edge_ids), horizon_steps),
                               dtype=np.int32)
        self.counts = np.zeros_like(self.travel)
        self.weights = np.asarray(weights, dtype=np.int64)
        self._w_idx = np.arange(worlds)[:, None]
        self._cols: dict[int, np.ndarray] = {}
        self._avail: dict[int, np.ndarray] = {}
        self._budget: dict[int, int] = {}
        self._waits: dict[int, tuple[int, ...]] = {}
        self._entries: dict[int, np.ndarray] = {}
        self._acts: dict[int, tuple] = {}
        self._rt: np.ndarray | None = None
        self._reward = None

    # -- construction -----------------------------------------------------

    def set_travel(self, world: int, eid: int, row: np.ndarray) -> None:
        """Absolute travel steps for one edge over [t0, t0 + steps)."""
        if row.min() < 0:
            raise TableLimitError(f"negative travel on edge {eid}")
        self.travel[world, self.col[eid]] = row

    def finish_travel(self, reward_model, edges: Mapping, max_platoon: int,
                      max_budget: int, max_track_len: int) -> None:
        """Freeze travel tables and build the reward lookup."""
        rt = np.zeros((len(self.col), max_platoon + 1), dtype=np.int64)
        for eid, c in self.col.items():
            edge = edges[eid]
            for n in range(1, max_platoon + 1):
                rt[c, n] = reward_model.reward(n, edge)
        self._rt = rt
        bound = self.scale * (max_track_len * int(abs(rt).max(initial=1))
                              + max_budget * self.step_cost + 1)
        if bound > MAX_VALUE_BOUND:
            raise TableLimitError(f"value bound {bound} risks overflow")

    def add_track(self, vid: int, edge_ids: Sequence[int],
                  avail: Sequence[int], waits: Sequence[int],
                  budget: int) -> None:
        cols = np.asarray([self.col[e] for e in edge_ids], dtype=np.int64)
        self._cols[vid] = cols
        self._avail[vid] = np.asarray(avail, dtype=np.int64) - self.t0
        self._budget[vid] = budget
        entries = self._trace(vid, tuple(waits))
        self._entries[vid] = entries
        self._waits[vid] = tuple(waits)
        np.add.at(self.counts, (self._w_idx, cols[None, :], entries), 1)

    def _trace(self, vid: int, waits: tuple[int, ...]) -> np.ndarray:
        """Entry step (relative to t0) per world for one wait vector."""
        cols = self._cols[vid]
        entries = np.empty((self.w, len(cols)), dtype=np.int64)
        t = self._avail[vid] + waits[0]
        w_idx = np.arange(self.w)
        for k, c in enumerate(cols):
            entries[:, k] = t
            if k + 1 < len(cols):
                t = t + self.travel[w_idx, c, t] + waits[k + 1]
        if entries.max() >= self.steps or entries.min() < 0:
            raise TableLimitError("entry outside the tabulated window")
        return entries

    # -- queries ----------------------------------------------------------

    def commit(self, vid: int, waits: Sequence[int]) -> None:
        """Adopt a new wait vector for an existing track."""
        waits = tuple(waits)
        if waits == self._waits[vid]:
            return
        cols = self._cols[vid]
        np.subtract.at(self.counts,
                       (self._w_idx, cols[None, :], self._entries[vid]), 1)
        entries = self._trace(vid, waits)
        self._entries[vid] = entries
        self._waits[vid] = waits
        np.add.at(self.counts, (self._w_idx, cols[None, :], entries), 1)

    def sync(self, profile: Mapping[int, Sequence[int]]) -> None:
        for vid, waits in profile.items():
            if tuple(waits) != self._waits[vid]:
                self.commit(vid, waits)

    def action_matrix(self, vid: int, actions: Sequence[Sequence[int]]
                      ) -> np.ndarray:
        cached = self._acts.get(vid)
        if cached is not None and cached[0] is actions:
            return cached[1]
        got = np.asarray(actions, dtype=np.int64)
        self._acts[vid] = (actions, got)   # keep the list alive with its array
        return got

    def scaled_values(self, vid: int,
                      actions: Sequence[Sequence[int]]) -> np.ndarray:
        """scale * expected utility for each action, as int64."""
        cols = self._cols[vid]
        acts = self.action_matrix(vid, actions)
        own = self._entries[vid]
        np.subtract.at(self.counts, (self._w_idx, cols[None, :], own), 1)
        try:
            t = self._avail[vid][:, None] + acts[None, :, 0]
            rewards = np.zeros((self.w, len(acts)), dtype=np.int64)
            for k, c in enumerate(cols):
                if t.max() >= self.steps or t.min() < 0:
                    raise TableLimitError("entry outside the tabulated window")
                n = self.counts[self._w_idx, c, t]
                rewards += self._rt[c, n + 1]
                if k + 1 < len(cols):
                    t = t + self.travel[self._w_idx, c, t] + acts[None, :, k + 1]
        finally:
            np.add.at(self.counts, (self._w_idx, cols[None, :], own), 1)
        totals = rewards - self.step_cost * acts.sum(axis=1)[None, :]
        return self.weights @ totals


def static_table(game, weighted, resolved,
                 profile: Mapping[int, Sequence[int]]) -> EntryTable:
    """EntryTable over full routes for weighted (scenario, probability) pairs.

    ``resolved`` pairs each scenario with {edge id: DelayProfile};
    ``profile`` supplies the committed waits the table starts from.
    """
    fleet = game.fleet
    vids = game.vehicle_ids
    edge_ids = sorted({eid for v in fleet.values() for eid in v.edge_sequence})
    wints, scale = scaled_weights([p for _s, p in weighted])
    max_delta = {eid: 0 for eid in edge_ids}
    for res in resolved:
        for eid in edge_ids:
            prof = res.get(eid)
            if prof is None:
                continue
            for (e, _t), d in prof.delay_at.items():
                if e == eid and d > max_delta[eid]:
                    max_delta[eid] = d
    starts = {vid: [game.start_of(vid, s) for s, _p in weighted]
              for vid in vids}
    t0 = min(min(s) for s in starts.values())
    horizon = 1
    max_budget = 0
    max_len = 1
    for vid in vids:
        v = fleet[vid]
        span = max(starts[vid]) + v.waiting_budget_steps
        for eid in v.edge_sequence:
            span += game.net.edges[eid].base_travel_steps + max_delta[eid]
        horizon = max(horizon, span - t0 + 1)
        max_budget = max(max_budget, v.waiting_budget_steps)
        max_len = max(max_len, len(v.edge_sequence))
    table = EntryTable(len(weighted), edge_ids, horizon, t0, wints, scale,
                       game.cost_model.step_cost_centi)
    rows: dict[tuple, np.ndarray] = {}
    for w, res in enumerate(resolved):
        for eid in edge_ids:
            prof = res.get(eid)
            key = (eid, None if prof is None else prof.id)
            row = rows.get(key)
            if row is None:
                base = game.net.edges[eid].base_travel_steps
                if prof is None:
                    row = np.full(horizon, base, dtype=np.int32)
                else:
                    row = base + dense_delay_row(prof, eid, t0, t0 + horizon)
                rows[key] = row
            table.set_travel(w, eid, row)
    table.finish_travel(game.reward_model, game.net.edges,
                        max_platoon=len(vids), max_budget=max_budget,
                        max_track_len=max_len)
    for vid in vids:
        v = fleet[vid]
        table.add_track(vid, v.edge_sequence, starts[vid], profile[vid],
                        v.waiting_budget_steps)
    return table
