import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))  # tests/oracles.py

from hubplatoon.game import (CoordinationGame, RewardModel, VehicleSpec,
                             WaitingCostModel)
from hubplatoon.network import DelayProfile, Edge, Hub, RoadNetwork


def make_net(edge_rows, profiles=None, hubs=None, step_minutes=5):
    """edge_rows: (id, tail, head, km, base_steps, profile_ids).

    profiles: {pid: {(eid, t): extra}}. Hubs are inferred unless given as
    {hid: weight}.
    """
    hub_ids = set()
    edges = {}
    for row in edge_rows:
        eid, tail, head, km, base = row[:5]
        pids = tuple(row[5]) if len(row) > 5 else ()
        edges[eid] = Edge(id=eid, tail=tail, head=head, length_km=float(km),
                          base_travel_steps=base, delay_profile_ids=pids)
        hub_ids.update((tail, head))
    if hubs is None:
        hubs = {h: 1.0 for h in hub_ids}
    hub_map = {h: Hub(id=h, name=f"H{h}", population_weight=w, lat=0.0, lon=0.0)
               for h, w in hubs.items()}
    prof_map = {pid: DelayProfile(id=pid, delay_at=dict(table))
                for pid, table in (profiles or {}).items()}
    return RoadNetwork(hubs=hub_map, edges=edges, delay_profiles=prof_map,
                       time_step_minutes=step_minutes)


def make_game(net, vehicle_rows, km_rate=170, step_cost=2200):
    """vehicle_rows: (id, edge_sequence, start, budget)."""
    fleet = [VehicleSpec(id=vid, edge_sequence=tuple(seq), start_step=start,
                         waiting_budget_steps=budget)
             for vid, seq, start, budget in vehicle_rows]
    return CoordinationGame(net, fleet, RewardModel(km_rate_centi=km_rate),
                            WaitingCostModel(step_cost_centi=step_cost))


@pytest.fixture
def line_net():
    """Three 100 km edges in a row (0-1-2-3), free flow 3 steps each."""
    return make_net([(0, 0, 1, 100, 3), (1, 1, 2, 100, 3), (2, 2, 3, 100, 3)])


@pytest.fixture
def delay_net():
    """One 100 km edge with two profiles: flat zero and a 2-step bump at t>=2."""
    profiles = {0: {}, 1: {(0, 2): 2, (0, 3): 2, (0, 4): 2, (0, 5): 2}}
    return make_net([(0, 0, 1, 100, 3, (0, 1))], profiles=profiles)
