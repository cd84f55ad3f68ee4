"""Road network model: nodes, links, zones, time discretization and routing.

The network is immutable after loading and safe to share across threads.
Shortest paths are time-dependent with piecewise-constant link times read at
link entry (the traversal time of a link is frozen at the moment a vehicle
enters it), which keeps first-in-first-out ordering by construction.
"""

from __future__ import annotations

import csv
import heapq
import math
from dataclasses import dataclass, field

from .errors import DataError, NoPathError


@dataclass(frozen=True)
class Node:
    id: int
    x: float
    y: float


@dataclass(frozen=True)
class Link:
    id: int
    from_node: int
    to_node: int
    free_flow_time: float  # seconds
    capacity: float        # vehicles per hour
    lanes: int = 1

    def __post_init__(self):
        if self.from_node == self.to_node:
            raise DataError(f"link {self.id}: self loop at node {self.from_node}")
        if not self.free_flow_time > 0:
            raise DataError(f"link {self.id}: free_flow_time_s must be > 0")
        if not self.capacity > 0:
            raise DataError(f"link {self.id}: capacity_vph must be > 0")
        if self.lanes < 1:
            raise DataError(f"link {self.id}: lanes must be >= 1")


@dataclass(frozen=True)
class Zone:
    id: int
    attach_node: int


@dataclass(frozen=True)
class TimeGrid:
    """Uniform departure/measurement intervals. Interval indices are 1-based."""

    start: float            # wall-clock seconds
    interval_length: float  # seconds
    num_intervals: int

    def __post_init__(self):
        if not self.interval_length > 0:
            raise DataError("interval_length must be > 0")
        if self.num_intervals < 1:
            raise DataError("num_intervals must be >= 1")

    @property
    def end(self) -> float:
        return self.start + self.interval_length * self.num_intervals

    def interval_of(self, clock: float) -> int:
        """1-based interval containing `clock`, clamped to [1, T]."""
        h = int(math.floor((clock - self.start) / self.interval_length)) + 1
        return min(max(h, 1), self.num_intervals)

    def interval_start(self, h: int) -> float:
        return self.start + (h - 1) * self.interval_length


class Network:
    """Directed road network with zones attached to nodes.

    `capacity_windows` optionally narrows link capacity over time spans;
    it maps link id -> tuple of (start_clock, end_clock, factor) with the
    remaining-capacity factor in [0, 1]. An empty mapping means capacity is
    constant. Instances are treated as immutable once built.
    """

    def __init__(self, nodes, links, zones, capacity_windows=None):
        self.nodes: dict[int, Node] = {n.id: n for n in nodes}
        self.links: dict[int, Link] = {l.id: l for l in links}
        self.zones: dict[int, Zone] = {z.id: z for z in zones}
        self.capacity_windows: dict[int, tuple] = dict(capacity_windows or {})
        if len(self.nodes) != len(list(nodes)):
            raise DataError("duplicate node ids")
        if len(self.links) != len(list(links)):
            raise DataError("duplicate link ids")
        if len(self.zones) != len(list(zones)):
            raise DataError("duplicate zone ids")
        self._out: dict[int, tuple[Link, ...]] = {n: () for n in self.nodes}
        self._in: dict[int, tuple[Link, ...]] = {n: () for n in self.nodes}
        out_tmp: dict[int, list[Link]] = {n: [] for n in self.nodes}
        in_tmp: dict[int, list[Link]] = {n: [] for n in self.nodes}
        for link in self.links.values():
            for end in (link.from_node, link.to_node):
                if end not in self.nodes:
                    raise DataError(f"link {link.id}: unknown node {end}")
            out_tmp[link.from_node].append(link)
            in_tmp[link.to_node].append(link)
        for n in self.nodes:
            # deterministic expansion order: lowest next node first
            self._out[n] = tuple(sorted(out_tmp[n], key=lambda l: (l.to_node, l.id)))
            self._in[n] = tuple(sorted(in_tmp[n], key=lambda l: (l.from_node, l.id)))
        self._validate_zones()

    def _validate_zones(self):
        attach_seen: dict[int, int] = {}
        for zone in self.zones.values():
            if zone.attach_node not in self.nodes:
                raise DataError(f"zone {zone.id}: unknown node {zone.attach_node}")
            if zone.attach_node in attach_seen:
                raise DataError(
                    f"zone {zone.id}: node {zone.attach_node} already attaches "
                    f"zone {attach_seen[zone.attach_node]}"
                )
            attach_seen[zone.attach_node] = zone.id
            if not self._out[zone.attach_node] and not self._in[zone.attach_node]:
                raise DataError(
                    f"zone {zone.id}: attach node {zone.attach_node} has no links"
                )
        # zones must be weakly connected; directed reachability of a specific
        # OD pair is checked when a route is actually requested
        zone_nodes = {z.attach_node for z in self.zones.values()}
        if len(zone_nodes) > 1:
            start = min(zone_nodes)
            seen = {start}
            stack = [start]
            while stack:
                node = stack.pop()
                for link in self._out[node] + self._in[node]:
                    for end in (link.from_node, link.to_node):
                        if end not in seen:
                            seen.add(end)
                            stack.append(end)
            missing = sorted(zone_nodes - seen)
            if missing:
                raise DataError(
                    f"unreachable OD pair: zone attach nodes {missing} are "
                    "disconnected from the rest of the zone set"
                )

    def out_links(self, node_id: int) -> tuple[Link, ...]:
        return self._out[node_id]

    def in_links(self, node_id: int) -> tuple[Link, ...]:
        return self._in[node_id]

    def zone_node(self, zone_id: int) -> int:
        if zone_id not in self.zones:
            raise DataError(f"unknown zone {zone_id}")
        return self.zones[zone_id].attach_node

    def capacity_profile(self, link_id: int) -> tuple:
        """Time windows (start, end, factor) narrowing this link's capacity."""
        return self.capacity_windows.get(link_id, ())

    def with_capacity_windows(self, windows) -> "Network":
        """New network sharing topology, with the given capacity windows."""
        merged = dict(self.capacity_windows)
        for link_id, spans in windows.items():
            if link_id not in self.links:
                raise DataError(f"unknown link {link_id}")
            merged[link_id] = tuple(merged.get(link_id, ())) + tuple(spans)
        return Network(
            self.nodes.values(), self.links.values(), self.zones.values(),
            capacity_windows=merged,
        )


def _read_rows(path, expected_header):
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"{path}: {exc.strerror or exc}") from exc
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [c.strip() for c in header] != expected_header:
            raise DataError(
                f"{path}:1: expected header {','.join(expected_header)}"
            )
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(expected_header):
                raise DataError(f"{path}:{lineno}: expected {len(expected_header)} fields")
            rows.append((lineno, row))
    return rows


def _parse(path, lineno, value, kind, name):
    try:
        return kind(value)
    except ValueError as exc:
        raise DataError(f"{path}:{lineno}: bad {name} {value!r}") from exc


def load_network(nodes_file, links_file, zones_file) -> Network:
    """Load and validate a network from the three CSV files.

    Schemas: nodes.csv `node_id,x,y`; links.csv `link_id,from_node,to_node,
    free_flow_time_s,capacity_vph,lanes`; zones.csv `zone_id,node_id`.
    """
    nodes = []
    for lineno, row in _read_rows(nodes_file, ["node_id", "x", "y"]):
        nodes.append(Node(
            id=_parse(nodes_file, lineno, row[0], int, "node_id"),
            x=_parse(nodes_file, lineno, row[1], float, "x"),
            y=_parse(nodes_file, lineno, row[2], float, "y"),
        ))
    node_ids = {n.id for n in nodes}

    links = []
    header = ["link_id", "from_node", "to_node", "free_flow_time_s", "capacity_vph", "lanes"]
    for lineno, row in _read_rows(links_file, header):
        from_node = _parse(links_file, lineno, row[1], int, "from_node")
        to_node = _parse(links_file, lineno, row[2], int, "to_node")
        for end in (from_node, to_node):
            if end not in node_ids:
                raise DataError(f"{links_file}:{lineno}: unknown node {end}")
        try:
            links.append(Link(
                id=_parse(links_file, lineno, row[0], int, "link_id"),
                from_node=from_node,
                to_node=to_node,
                free_flow_time=_parse(links_file, lineno, row[3], float, "free_flow_time_s"),
                capacity=_parse(links_file, lineno, row[4], float, "capacity_vph"),
                lanes=_parse(links_file, lineno, row[5], int, "lanes"),
            ))
        except DataError as exc:
            raise DataError(f"{links_file}:{lineno}: {exc}") from exc

    zones = []
    for lineno, row in _read_rows(zones_file, ["zone_id", "node_id"]):
        attach = _parse(zones_file, lineno, row[1], int, "node_id")
        if attach not in node_ids:
            raise DataError(f"{zones_file}:{lineno}: unknown node {attach}")
        zones.append(Zone(
            id=_parse(zones_file, lineno, row[0], int, "zone_id"),
            attach_node=attach,
        ))

    return Network(nodes, links, zones)


class TravelTimeTable:
    """Per-(link, interval) travel times in seconds, entry-time evaluated.

    Lookups at clock times outside the grid clamp to the first/last interval,
    so routes extending past the horizon keep the last interval's speeds.
    """

    def __init__(self, grid: TimeGrid, values: dict):
        self.grid = grid
        self.values = values

    @classmethod
    def free_flow(cls, network: Network, grid: TimeGrid) -> "TravelTimeTable":
        values = {}
        for link_id in sorted(network.links):
            fft = network.links[link_id].free_flow_time
            for h in range(1, grid.num_intervals + 1):
                values[(link_id, h)] = fft
        return cls(grid, values)

    def at(self, link_id: int, h: int) -> float:
        return self.values[(link_id, h)]

    def at_clock(self, link_id: int, clock: float) -> float:
        return self.values[(link_id, self.grid.interval_of(clock))]

    def items(self):
        return self.values.items()


@dataclass(frozen=True)
class Path:
    """An ordered sequence of link ids plus the wall-clock arrival time."""

    links: tuple[int, ...]
    arrival: float

    def travel_time(self, depart_clock: float) -> float:
        return self.arrival - depart_clock


def trace_path_cost(network: Network, times: TravelTimeTable, links, depart_clock: float) -> float:
    """Clock time after traversing `links` starting at `depart_clock`."""
    clock = depart_clock
    for link_id in links:
        tt = times.at_clock(link_id, clock)
        if not tt > 0:
            raise DataError(f"nonpositive travel time on link {link_id}")
        clock = clock + tt
    return clock - depart_clock


def time_dependent_shortest_path(
    network: Network,
    times: TravelTimeTable,
    origin_zone: int,
    dest_zone: int,
    depart_interval: int,
) -> Path:
    """Least-arrival-time route between two zones for one departure interval.

    Departure is at the interval's start instant. Ties between equal-arrival
    labels are settled by lowest node id, so repeated calls are bit-identical.
    Raises NoPathError when the destination cannot be reached.
    """
    if origin_zone == dest_zone:
        raise DataError("origin and destination zones must differ")
    grid = times.grid
    if not 1 <= depart_interval <= grid.num_intervals:
        raise DataError(f"departure interval {depart_interval} outside [1, {grid.num_intervals}]")
    source = network.zone_node(origin_zone)
    target = network.zone_node(dest_zone)
    depart_clock = grid.interval_start(depart_interval)

    arrival = {source: depart_clock}
    pred: dict[int, tuple[int, int]] = {}
    settled: set[int] = set()
    heap = [(depart_clock, source)]
    while heap:
        clock, node = heapq.heappop(heap)
        if node in settled:
            continue
        settled.add(node)
        if node == target:
            break
        for link in network.out_links(node):
            tt = times.at_clock(link.id, clock)
            if not tt > 0:
                raise DataError(f"nonpositive travel time on link {link.id}")
            cand = clock + tt
            if cand < arrival.get(link.to_node, math.inf):
                arrival[link.to_node] = cand
                pred[link.to_node] = (node, link.id)
                heapq.heappush(heap, (cand, link.to_node))

    if target not in settled:
        raise NoPathError(f"zone {dest_zone} unreachable from zone {origin_zone}")

    links_rev = []
    node = target
    while node != source:
        prev, link_id = pred[node]
        links_rev.append(link_id)
        node = prev
    return Path(links=tuple(reversed(links_rev)), arrival=arrival[target])
