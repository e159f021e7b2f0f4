"""Regenerate the bundled network files.

Usage: python3 tools/gen_networks.py

Writes src/hubplatoon/data/sweden.json (34 hubs, 55 bidirectional trunk
links as 110 directed edges, approximate road distances) and
src/hubplatoon/data/synthetic10.json (a 10-hub corridor for experiments).
Distances and populations are round-number approximations; coordinates
are only for plotting. Free-flow speed 80 km/h on a 5-minute grid.
"""

import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from hubplatoon.network import Edge, Hub, RoadNetwork, save_network, validate_network

KM_PER_STEP = 80.0 / 12.0   # 80 km/h on 5-minute steps

# (id, name, population in thousands, lat, lon)
SWEDEN_HUBS = [
    (0, "Stockholm", 975, 59.33, 18.06),
    (1, "Goteborg", 580, 57.71, 11.97),
    (2, "Malmo", 350, 55.61, 13.00),
    (3, "Uppsala", 235, 59.86, 17.64),
    (4, "Vasteras", 155, 59.61, 16.55),
    (5, "Orebro", 155, 59.27, 15.21),
    (6, "Linkoping", 165, 58.41, 15.62),
    (7, "Helsingborg", 150, 56.05, 12.69),
    (8, "Jonkoping", 140, 57.78, 14.16),
    (9, "Norrkoping", 143, 58.59, 16.18),
    (10, "Lund", 125, 55.70, 13.19),
    (11, "Umea", 130, 63.83, 20.26),
    (12, "Gavle", 103, 60.67, 17.14),
    (13, "Boras", 113, 57.72, 12.94),
    (14, "Sodertalje", 100, 59.20, 17.63),
    (15, "Eskilstuna", 107, 59.37, 16.51),
    (16, "Halmstad", 104, 56.67, 12.86),
    (17, "Vaxjo", 95, 56.88, 14.81),
    (18, "Karlstad", 95, 59.38, 13.50),
    (19, "Sundsvall", 99, 62.39, 17.31),
    (20, "Ostersund", 64, 63.18, 14.64),
    (21, "Trollhattan", 59, 58.28, 12.29),
    (22, "Lulea", 78, 65.58, 22.15),
    (23, "Borlange", 52, 60.48, 15.42),
    (24, "Kristianstad", 86, 56.03, 14.16),
    (25, "Kalmar", 71, 56.66, 16.36),
    (26, "Skovde", 56, 58.39, 13.85),
    (27, "Karlskrona", 66, 56.16, 15.59),
    (28, "Skelleftea", 73, 64.75, 20.95),
    (29, "Ornskoldsvik", 56, 63.29, 18.72),
    (30, "Nykoping", 57, 58.75, 17.01),
    (31, "Hudiksvall", 37, 61.73, 17.11),
    (32, "Ystad", 20, 55.43, 13.82),
    (33, "Mora", 20, 61.00, 14.54),
]

# (hub a, hub b, km) -- each becomes a pair of directed edges
SWEDEN_LINKS = [
    (2, 10, 20),     # Malmo - Lund
    (10, 7, 50),     # Lund - Helsingborg
    (2, 32, 60),     # Malmo - Ystad
    (32, 24, 75),    # Ystad - Kristianstad
    (2, 24, 95),     # Malmo - Kristianstad
    (24, 27, 110),   # Kristianstad - Karlskrona
    (27, 25, 90),    # Karlskrona - Kalmar
    (25, 9, 240),    # Kalmar - Norrkoping
    (24, 17, 120),   # Kristianstad - Vaxjo
    (7, 16, 80),     # Helsingborg - Halmstad
    (16, 1, 145),    # Halmstad - Goteborg
    (16, 17, 130),   # Halmstad - Vaxjo
    (17, 8, 130),    # Vaxjo - Jonkoping
    (17, 25, 110),   # Vaxjo - Kalmar
    (7, 8, 240),     # Helsingborg - Jonkoping
    (8, 6, 130),     # Jonkoping - Linkoping
    (6, 9, 45),      # Linkoping - Norrkoping
    (9, 30, 60),     # Norrkoping - Nykoping
    (30, 14, 70),    # Nykoping - Sodertalje
    (14, 0, 35),     # Sodertalje - Stockholm
    (0, 3, 70),      # Stockholm - Uppsala
    (3, 12, 110),    # Uppsala - Gavle
    (12, 31, 130),   # Gavle - Hudiksvall
    (31, 19, 85),    # Hudiksvall - Sundsvall
    (19, 29, 160),   # Sundsvall - Ornskoldsvik
    (29, 11, 110),   # Ornskoldsvik - Umea
    (11, 28, 140),   # Umea - Skelleftea
    (28, 22, 135),   # Skelleftea - Lulea
    (1, 13, 70),     # Goteborg - Boras
    (13, 8, 85),     # Boras - Jonkoping
    (1, 21, 75),     # Goteborg - Trollhattan
    (21, 18, 180),   # Trollhattan - Karlstad
    (18, 5, 110),    # Karlstad - Orebro
    (5, 4, 95),      # Orebro - Vasteras
    (4, 0, 110),     # Vasteras - Stockholm
    (4, 3, 75),      # Vasteras - Uppsala
    (5, 15, 90),     # Orebro - Eskilstuna
    (15, 14, 80),    # Eskilstuna - Sodertalje
    (15, 4, 35),     # Eskilstuna - Vasteras
    (1, 26, 150),    # Goteborg - Skovde
    (26, 5, 120),    # Skovde - Orebro
    (5, 6, 120),     # Orebro - Linkoping
    (8, 26, 85),     # Jonkoping - Skovde
    (21, 26, 100),   # Trollhattan - Skovde
    (18, 23, 175),   # Karlstad - Borlange
    (23, 12, 95),    # Borlange - Gavle
    (23, 4, 95),     # Borlange - Vasteras
    (23, 33, 70),    # Borlange - Mora
    (33, 20, 230),   # Mora - Ostersund
    (20, 19, 190),   # Ostersund - Sundsvall
    (9, 5, 130),     # Norrkoping - Orebro
    (10, 24, 85),    # Lund - Kristianstad
    (17, 27, 110),   # Vaxjo - Karlskrona
    (11, 20, 360),   # Umea - Ostersund
    (5, 23, 140),    # Orebro - Borlange
]


def base_steps(km: float) -> int:
    return max(1, round(km / KM_PER_STEP))


def build(hub_rows, link_rows) -> RoadNetwork:
    hubs = {hid: Hub(id=hid, name=name, population_weight=float(pop),
                     lat=lat, lon=lon)
            for hid, name, pop, lat, lon in hub_rows}
    edges = {}
    for i, (a, b, km) in enumerate(link_rows):
        for eid, tail, head in ((2 * i, a, b), (2 * i + 1, b, a)):
            edges[eid] = Edge(id=eid, tail=tail, head=head, length_km=float(km),
                              base_travel_steps=base_steps(km),
                              delay_profile_ids=())
    return RoadNetwork(hubs=hubs, edges=edges, delay_profiles={})


def corridor(n: int = 10, spacing_km: float = 100.0) -> RoadNetwork:
    hubs = {i: Hub(id=i, name=f"H{i}", population_weight=100.0,
                   lat=55.0 + 0.9 * i, lon=13.0)
            for i in range(n)}
    edges = {}
    for i in range(n - 1):
        for eid, tail, head in ((2 * i, i, i + 1), (2 * i + 1, i + 1, i)):
            edges[eid] = Edge(id=eid, tail=tail, head=head,
                              length_km=spacing_km,
                              base_travel_steps=base_steps(spacing_km),
                              delay_profile_ids=())
    return RoadNetwork(hubs=hubs, edges=edges, delay_profiles={})


def main() -> None:
    out_dir = os.path.join(os.path.dirname(__file__), "..",
                           "src", "hubplatoon", "data")
    os.makedirs(out_dir, exist_ok=True)
    sweden = build(SWEDEN_HUBS, SWEDEN_LINKS)
    issues = validate_network(sweden)
    if issues:
        raise SystemExit("sweden network invalid: " + "; ".join(issues))
    save_network(sweden, os.path.join(out_dir, "sweden.json"))
    print(f"sweden.json: {len(sweden.hubs)} hubs, {len(sweden.edges)} edges")

    synth = corridor()
    issues = validate_network(synth)
    if issues:
        raise SystemExit("synthetic network invalid: " + "; ".join(issues))
    save_network(synth, os.path.join(out_dir, "synthetic10.json"))
    print(f"synthetic10.json: {len(synth.hubs)} hubs, {len(synth.edges)} edges")


if __name__ == "__main__":
    main()
