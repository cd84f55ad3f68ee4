"""Synthetic benchmark fixtures.

Stands in for proprietary corridor data: a small grid with four corner
zones for the estimation pipeline (ground-truth demand, simulated detector
counts, a noisy prior), a single-bottleneck corridor for incident studies,
and seeded AR(1) demand fleets for forecasting exercises. Everything is
driven by one RNG seed; a given seed always produces byte-identical files.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np

from . import io_files
from .network import Link, Network, Node, TimeGrid, Zone
from .forecast import DemandSeries
from .simulator import AssignConfig, ODMatrixSeries, assign

DEFAULT_SEED = 20170301  # the corridor study week
MORNING_START = 6 * 3600.0
INTERVAL_S = 900.0
NUM_INTERVALS = 16


@dataclass
class Fixture:
    name: str
    network: Network
    grid: TimeGrid
    truth: ODMatrixSeries
    prior: ODMatrixSeries
    counts: dict                 # (link, interval) -> simulated count
    watched_link: int
    incident_link: int
    incident_start: float        # wall-clock seconds
    assign_config: AssignConfig


def grid_network() -> Network:
    """3x4 grid, one-way links in both directions, zones at the corners.

    The middle column pair carries reduced capacity so the morning peak
    queues there without gridlocking.
    """
    cols, rows = 4, 3
    nodes = [
        Node(id=r * cols + c + 1, x=1000.0 * c, y=1000.0 * r)
        for r in range(rows) for c in range(cols)
    ]
    edges = []
    for r in range(rows):
        for c in range(cols):
            nid = r * cols + c + 1
            if c + 1 < cols:
                edges.append((nid, nid + 1))
            if r + 1 < rows:
                edges.append((nid, nid + cols))
    middle_columns = {2, 3, 6, 7, 10, 11}
    links = []
    lid = 0
    for (u, v) in sorted(edges):
        for (a, b) in ((u, v), (v, u)):
            lid += 1
            middle = {a, b} <= middle_columns
            links.append(Link(
                id=lid, from_node=a, to_node=b,
                free_flow_time=60.0, capacity=1500.0 if middle else 2200.0,
                lanes=1 if middle else 2,
            ))
    zones = [Zone(1, 1), Zone(2, 4), Zone(3, 9), Zone(4, 12)]
    return Network(nodes, links, zones)


def bottleneck_network() -> Network:
    """Linear corridor A -> bottleneck -> B used for incident sweeps."""
    nodes = [Node(i, 1000.0 * (i - 1), 0.0) for i in range(1, 5)]
    links = [
        Link(1, 1, 2, free_flow_time=60.0, capacity=3600.0, lanes=2),
        Link(2, 2, 3, free_flow_time=60.0, capacity=1800.0, lanes=1),
        Link(3, 3, 4, free_flow_time=60.0, capacity=3600.0, lanes=2),
        Link(4, 4, 3, free_flow_time=60.0, capacity=3600.0, lanes=2),
        Link(5, 3, 2, free_flow_time=60.0, capacity=1800.0, lanes=1),
        Link(6, 2, 1, free_flow_time=60.0, capacity=3600.0, lanes=2),
    ]
    zones = [Zone(1, 1), Zone(2, 4)]
    return Network(nodes, links, zones)


def peaked_profile(t: int, peak: float, width: float) -> float:
    return 0.55 + 0.9 * math.exp(-((t - peak) ** 2) / (2.0 * width ** 2))


def grid_truth_demand(grid: TimeGrid, rng: np.random.Generator) -> ODMatrixSeries:
    entries = {}
    pairs = [(o, d) for o in (1, 2, 3, 4) for d in (1, 2, 3, 4) if o != d]
    for (o, d) in pairs:
        base = float(rng.uniform(35.0, 95.0))
        peak = float(rng.uniform(6.0, 11.0))
        width = float(rng.uniform(3.0, 5.0))
        for t in range(1, grid.num_intervals + 1):
            entries[(o, d, t)] = base * peaked_profile(t, peak, width)
    return ODMatrixSeries(entries, grid)


def noisy_prior(truth: ODMatrixSeries, noise: float, rng: np.random.Generator) -> ODMatrixSeries:
    entries = {}
    for key in truth.keys_sorted():
        factor = 1.0 + noise * float(rng.uniform(-1.0, 1.0))
        entries[key] = max(truth.entries[key] * factor, 0.0)
    return ODMatrixSeries(entries, truth.time_grid)


def make_grid_fixture(seed: int = DEFAULT_SEED, noise: float = 0.3) -> Fixture:
    rng = np.random.default_rng(seed)
    network = grid_network()
    grid = TimeGrid(MORNING_START, INTERVAL_S, NUM_INTERVALS)
    truth = grid_truth_demand(grid, rng)
    prior = noisy_prior(truth, noise, rng)
    config = AssignConfig(max_iterations=30, gap_tolerance=1e-3)
    sim = assign(network, truth, config)
    counts = {key: flow for key, flow in sorted(sim.link_flows.items())}
    # the link out of the congested middle joint, and its downstream detector
    incident_link = next(
        lid for lid, l in sorted(network.links.items())
        if l.from_node == 6 and l.to_node == 7
    )
    watched_link = next(
        lid for lid, l in sorted(network.links.items())
        if l.from_node == 7 and l.to_node == 8
    )
    return Fixture(
        name="grid", network=network, grid=grid, truth=truth, prior=prior,
        counts=counts, watched_link=watched_link, incident_link=incident_link,
        incident_start=MORNING_START + 14220.0,  # 09:57
        assign_config=config,
    )


def make_bottleneck_fixture(demand_per_interval: float = 560.0,
                            num_intervals: int = 4) -> Fixture:
    """Corridor pushed slightly above the bottleneck's service rate."""
    network = bottleneck_network()
    grid = TimeGrid(MORNING_START, INTERVAL_S, num_intervals)
    entries = {(1, 2, t): demand_per_interval for t in range(1, num_intervals + 1)}
    demand = ODMatrixSeries(entries, grid)
    config = AssignConfig(max_iterations=10, gap_tolerance=1e-3)
    sim = assign(network, demand, config)
    return Fixture(
        name="bottleneck", network=network, grid=grid, truth=demand, prior=demand,
        counts=dict(sorted(sim.link_flows.items())),
        watched_link=3, incident_link=2,
        incident_start=MORNING_START + INTERVAL_S + 180.0,
        assign_config=config,
    )


def make_ar1_fleet(seed: int, n_series: int, length: int = 200,
                   phi: float = 0.6, c: float = 10.0, sigma: float = 1.0,
                   interval_length: float = INTERVAL_S):
    """Seeded AR(1) demand fleet: x_t = phi x_{t-1} + c + N(0, sigma^2)."""
    rng = np.random.default_rng(seed)
    mean = c / (1.0 - phi)
    fleet = []
    for i in range(n_series):
        values = np.empty(length)
        values[0] = mean + sigma * float(rng.standard_normal())
        shocks = rng.standard_normal(length - 1)
        for t in range(1, length):
            values[t] = phi * values[t - 1] + c + sigma * float(shocks[t - 1])
        fleet.append(DemandSeries(
            od_pair=(9000 + i, 9500 + i),
            values=tuple(np.maximum(values, 0.0)),
            interval_length=interval_length,
        ))
    return fleet


def _clock_hhmm(seconds: float) -> str:
    minutes = int(round(seconds / 60.0))
    return f"{minutes // 60:02d}:{minutes % 60:02d}"


def write_fixture(out_dir: str, fixture: Fixture, fleet, seed: int, noise: float):
    """Write the fixture CSVs plus ready-to-run config and scenario files."""
    os.makedirs(out_dir, exist_ok=True)
    join = lambda name: os.path.join(out_dir, name)

    network = fixture.network
    io_files.write_csv(join("nodes.csv"), ["node_id", "x", "y"], [
        (n.id, io_files.fmt(n.x), io_files.fmt(n.y))
        for n in sorted(network.nodes.values(), key=lambda n: n.id)
    ])
    io_files.write_csv(
        join("links.csv"),
        ["link_id", "from_node", "to_node", "free_flow_time_s", "capacity_vph", "lanes"],
        [
            (l.id, l.from_node, l.to_node, io_files.fmt(l.free_flow_time),
             io_files.fmt(l.capacity), l.lanes)
            for l in sorted(network.links.values(), key=lambda l: l.id)
        ],
    )
    io_files.write_csv(join("zones.csv"), ["zone_id", "node_id"], [
        (z.id, z.attach_node)
        for z in sorted(network.zones.values(), key=lambda z: z.id)
    ])
    io_files.write_demand(join("demand_true.csv"), fixture.truth)
    io_files.write_demand(join("demand_prior.csv"), fixture.prior)
    io_files.write_counts(join("counts.csv"), fixture.counts)
    io_files.write_demand(join("fleet.csv"), _fleet_as_demand(fleet))

    with open(join("scenario.cfg"), "w", encoding="utf-8") as fh:
        fh.write(f"link_ids = {fixture.incident_link}\n")
        fh.write(f"start_time = {_clock_hhmm(fixture.incident_start)}\n")
        fh.write("duration_s = 600\n")
        fh.write(f"capacity_factor = {io_files.fmt(1.0 / 3.0)}\n")
        fh.write("lanes_blocked = 2\n")

    grid = fixture.grid
    with open(join("tripflow.cfg"), "w", encoding="utf-8") as fh:
        for key, value in [
            ("nodes", "nodes.csv"),
            ("links", "links.csv"),
            ("zones", "zones.csv"),
            ("demand", "demand_prior.csv"),
            ("prior", "demand_prior.csv"),
            ("counts", "counts.csv"),
            ("scenario", "scenario.cfg"),
            ("start", _clock_hhmm(grid.start)),
            ("interval_s", io_files.fmt(grid.interval_length)),
            ("num_intervals", grid.num_intervals),
            ("omega", "0.9"),
            ("max_outer_iterations", "20"),
            ("msa_iterations", fixture.assign_config.max_iterations),
            ("gap_tolerance", io_files.fmt(fixture.assign_config.gap_tolerance)),
            ("forecast_spec", "1,0,0"),
            ("forecast_steps", "2"),
            ("validation_intervals", "2"),
            ("watched_link", fixture.watched_link),
            ("durations", "180,300,420,600"),
            ("seed", seed),
            ("noise", io_files.fmt(noise)),
        ]:
            fh.write(f"{key} = {value}\n")


def _fleet_as_demand(fleet) -> ODMatrixSeries:
    length = max(len(series.values) for series in fleet)
    grid = TimeGrid(MORNING_START, INTERVAL_S, length)
    entries = {}
    for series in fleet:
        o, d = series.od_pair
        for t, v in enumerate(series.values, start=1):
            entries[(o, d, t)] = float(v)
    return ODMatrixSeries(entries, grid)
