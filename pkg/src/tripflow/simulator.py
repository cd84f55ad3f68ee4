"""Dynamic network loading and equilibrium assignment.

Each link is a deterministic fluid point queue: flow traverses the link at
free-flow time, then exits through a server whose rate is bounded by the
link's (possibly time-varying) capacity, with excess waiting in a FIFO queue
of unlimited storage.

The loading runs on a fixed sub-interval resolution no coarser than the
smallest free-flow time: demand departs as a uniform inflow over its
departure interval, and all flow profiles are piecewise uniform over the
resolution bins. Queue bookkeeping uses cumulative arrival/exit curves, so
totals (flows, delays, travel times) are exact for inputs whose free-flow
times and capacity switch instants are multiples of the resolution, which
holds for every fixture shipped with the package. Two runs with identical
inputs are bit-identical.

Link flows y and assignment proportions p are attributed to the interval of
link ENTRY (detector at the upstream end), so queueing inside a link never
shifts its own count between intervals.
"""

from __future__ import annotations

import logging
import math
from collections import deque
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, DataError
from .network import (
    Network,
    TimeGrid,
    TravelTimeTable,
    time_dependent_shortest_path,
    trace_path_cost,
)

log = logging.getLogger(__name__)

_MASS_EPS = 1e-15


@dataclass(frozen=True)
class ODMatrixSeries:
    """Trips per (origin zone, dest zone, departure interval)."""

    entries: dict
    time_grid: TimeGrid

    def __post_init__(self):
        T = self.time_grid.num_intervals
        for (o, d, t), trips in self.entries.items():
            if trips < 0:
                raise DataError(f"negative demand for OD ({o},{d}) interval {t}")
            if not 1 <= t <= T:
                raise DataError(f"departure interval {t} outside [1, {T}]")

    def total(self) -> float:
        return float(sum(self.entries.values()))

    def keys_sorted(self):
        return sorted(self.entries)

    def scaled(self, factor: float) -> "ODMatrixSeries":
        return ODMatrixSeries(
            {k: v * factor for k, v in self.entries.items()}, self.time_grid
        )


@dataclass(frozen=True)
class PathFlowBundle:
    """Route shares per (origin, dest, departure interval).

    `flows` maps (o, d, t) to a mapping path (tuple of link ids) -> share.
    Shares over each key sum to 1 for keys carrying positive demand.
    """

    flows: dict


@dataclass(frozen=True)
class AssignmentProportions:
    """Sparse p[(link, origin, dest, crossing interval h, departure t)].

    Entries are the fraction of the (o, d, t) demand that enters the link
    during interval h. Zero proportions are not stored, and h >= t always
    (flow cannot cross a link before it departs).
    """

    entries: dict

    def __post_init__(self):
        for (a, o, d, h, t), p in self.entries.items():
            if not -1e-12 <= p <= 1 + 1e-9:
                raise DataError(f"proportion outside [0,1] on link {a}")
            if h < t:
                raise DataError(f"acausal proportion on link {a}: h={h} < t={t}")


@dataclass
class SimulationResult:
    link_flows: dict            # (link, h) -> vehicles entering during h
    link_times: TravelTimeTable  # experienced traversal seconds per (link, h)
    proportions: AssignmentProportions
    total_travel_time: float    # vehicle-seconds spent in the network
    total_delay: float          # vehicle-seconds above free flow
    vehicles_unfinished: float  # flow still in the network at horizon end
    relative_gap: float = 0.0
    link_exit_flows: dict = field(default_factory=dict)  # (link, h) -> vehicles leaving
    completed_trips: dict = field(default_factory=dict)  # (o, d, t) -> arrived flow


@dataclass(frozen=True)
class AssignConfig:
    max_iterations: int = 50
    gap_tolerance: float = 1e-3


def _loading_resolution(network: Network, grid: TimeGrid):
    fft_min = min(l.free_flow_time for l in network.links.values())
    target = min(60.0, fft_min)
    bins_per_interval = max(1, math.ceil(grid.interval_length / target - 1e-9))
    return grid.interval_length / bins_per_interval, bins_per_interval


def _capacity_bins(network, link, start, delta, nbins):
    """Vehicles servable per resolution bin, honoring capacity windows."""
    rate = link.capacity / 3600.0
    caps = np.full(nbins, rate * delta)
    for (w0, w1, factor) in network.capacity_profile(link.id):
        b0 = max(0, int(math.floor((w0 - start) / delta)))
        b1 = min(nbins, int(math.ceil((w1 - start) / delta)))
        for b in range(b0, b1):
            t0 = start + b * delta
            overlap = max(0.0, min(w1, t0 + delta) - max(w0, t0))
            caps[b] -= (1.0 - factor) * rate * overlap
    np.maximum(caps, 0.0, out=caps)
    return caps


def _validate_bundle(network, path_flows, demand):
    for key in demand.keys_sorted():
        if demand.entries[key] <= 0:
            continue
        o, d, t = key
        routes = path_flows.flows.get(key)
        if not routes:
            raise DataError(f"no path flows for OD ({o},{d}) interval {t}")
        share_sum = 0.0
        for path, share in routes.items():
            if share < 0:
                raise DataError(f"negative path share for OD ({o},{d})")
            share_sum += share
            if not path:
                raise DataError(f"empty path for OD ({o},{d})")
            node = network.zone_node(o)
            for link_id in path:
                link = network.links.get(link_id)
                if link is None:
                    raise DataError(f"path references unknown link {link_id}")
                if link.from_node != node:
                    raise DataError(
                        f"discontinuous path for OD ({o},{d}): link {link_id} "
                        f"does not start at node {node}"
                    )
                node = link.to_node
            if node != network.zone_node(d):
                raise DataError(f"path for OD ({o},{d}) does not end at zone {d}")
        if abs(share_sum - 1.0) > 1e-9:
            raise DataError(f"path shares for OD ({o},{d}) t={t} sum to {share_sum}")


class _LinkState:
    __slots__ = (
        "shift_int", "shift_frac", "fft", "caps", "buckets", "queue",
        "backlog", "arr_bin", "ent_bin", "dex_bin",
    )

    def __init__(self, link, caps, delta, nbins):
        ratio = link.free_flow_time / delta
        self.shift_int = int(math.floor(ratio + 1e-9))
        self.shift_frac = ratio - self.shift_int
        if self.shift_frac < 1e-9:
            self.shift_frac = 0.0
        self.fft = link.free_flow_time
        self.caps = caps
        self.buckets = {}          # bin -> list of [key, mass] parcels
        self.queue = deque()       # FIFO parcels waiting at the exit server
        self.backlog = 0.0
        self.arr_bin = np.zeros(nbins)
        self.ent_bin = np.zeros(nbins)
        self.dex_bin = np.zeros(nbins)


def dynamic_network_loading(
    network: Network, path_flows: PathFlowBundle, demand: ODMatrixSeries
) -> SimulationResult:
    """Load route flows onto the network and measure flows, times and delay.

    Returns entry counts per (link, interval), assignment proportions keyed
    by departure provenance, experienced per-interval link times (free-flow
    where nothing entered), and network totals. Flow still in the network at
    horizon end is reported as `vehicles_unfinished` (a warning, not an
    error); its travel time and queueing delay accrue up to the horizon.
    """
    grid = demand.time_grid
    _validate_bundle(network, path_flows, demand)
    start, interval, T = grid.start, grid.interval_length, grid.num_intervals
    horizon_end = grid.end
    delta, bpi = _loading_resolution(network, grid)
    nbins = T * bpi

    link_ids = sorted(network.links)
    state = {
        lid: _LinkState(
            network.links[lid],
            _capacity_bins(network, network.links[lid], start, delta, nbins),
            delta, nbins,
        )
        for lid in link_ids
    }

    flows: dict = {}
    prov_mass: dict = {}
    completed: dict = {}
    time_num: dict = {}
    time_mass: dict = {}

    def deliver(link_id, key, b, mass):
        # entry of `mass` into `link_id`, uniform over resolution bin b
        st = state[link_id]
        h = b // bpi + 1
        flows[(link_id, h)] = flows.get((link_id, h), 0.0) + mass
        o, d, t0, _path, _leg = key
        pkey = (link_id, o, d, h, t0)
        prov_mass[pkey] = prov_mass.get(pkey, 0.0) + mass
        st.ent_bin[b] += mass
        entry_mid = start + (b + 0.5) * delta
        b2 = b + st.shift_int
        frac = st.shift_frac
        main = mass if frac == 0.0 else mass * (1.0 - frac)
        for bb, mm in ((b2, main), (b2 + 1, mass * frac)):
            if mm <= _MASS_EPS:
                continue
            if bb < nbins:
                st.buckets.setdefault(bb, []).append([key, mm])
                st.arr_bin[bb] += mm
            else:
                # still inside the free-flow pipe at horizon end
                tkey = (link_id, h)
                time_num[tkey] = time_num.get(tkey, 0.0) + mm * (horizon_end - entry_mid)
                time_mass[tkey] = time_mass.get(tkey, 0.0) + mm

    # inject demand: uniform inflow over the departure interval
    for key in demand.keys_sorted():
        trips = demand.entries[key]
        if trips <= 0:
            continue
        o, d, t = key
        for path in sorted(path_flows.flows[key]):
            mass = trips * path_flows.flows[key][path]
            if mass <= _MASS_EPS:
                continue
            per_bin = mass / bpi
            first = (t - 1) * bpi
            pkey = (o, d, t, path, 0)
            for b in range(first, first + bpi):
                deliver(path[0], pkey, b, per_bin)

    # march the horizon bin by bin; entries made during a bin reach their
    # downstream server at least one bin later (delta <= min free-flow time)
    for b in range(nbins):
        for lid in link_ids:
            st = state[lid]
            arrivals = st.buckets.pop(b, None)
            if arrivals:
                st.queue.extend(arrivals)
                for parcel in arrivals:
                    st.backlog += parcel[1]
            if st.backlog <= _MASS_EPS:
                st.backlog = max(st.backlog, 0.0)
                continue
            out = min(st.backlog, st.caps[b])
            if out <= _MASS_EPS:
                continue
            st.dex_bin[b] = out
            st.backlog -= out
            remaining = out
            q = st.queue
            while remaining > _MASS_EPS and q:
                parcel = q[0]
                if parcel[1] <= remaining + _MASS_EPS:
                    take = parcel[1]
                    q.popleft()
                else:
                    take = remaining
                    parcel[1] -= take
                remaining -= take
                o, d, t0, path, leg = parcel[0]
                if leg == len(path) - 1:
                    ckey = (o, d, t0)
                    completed[ckey] = completed.get(ckey, 0.0) + take
                else:
                    deliver(path[leg + 1], (o, d, t0, path, leg + 1), b, take)

    total_delay = 0.0
    total_travel = 0.0
    link_exit_flows: dict = {}
    boundary_times = start + delta * np.arange(nbins + 1)

    for lid in link_ids:
        st = state[lid]
        if not st.ent_bin.any():
            continue
        ent_cum = np.concatenate([[0.0], np.cumsum(st.ent_bin)])
        arr_cum = np.concatenate([[0.0], np.cumsum(st.arr_bin)])
        dex_cum = np.concatenate([[0.0], np.cumsum(st.dex_bin)])
        total_delay += float(np.trapezoid(arr_cum - dex_cum, dx=delta))
        total_travel += float(np.trapezoid(ent_cum - dex_cum, dx=delta))
        for h in range(1, T + 1):
            ex = float(st.dex_bin[(h - 1) * bpi:h * bpi].sum())
            if ex > 0.0:
                link_exit_flows[(lid, h)] = ex
        # mean wait per arrival bin via the FIFO map between cumulative curves
        exit_int = _exit_time_integral(dex_cum, boundary_times, horizon_end)
        served_total = dex_cum[-1]
        for b in np.nonzero(st.arr_bin)[0]:
            m = st.arr_bin[b]
            lo = _eval_time_integral(dex_cum, exit_int, boundary_times,
                                     served_total, horizon_end, arr_cum[b])
            hi = _eval_time_integral(dex_cum, exit_int, boundary_times,
                                     served_total, horizon_end, arr_cum[b + 1])
            mean_exit = (hi - lo) / m
            wait = mean_exit - (start + (b + 0.5) * delta)
            if wait < 0.0:
                wait = 0.0
            h = (b - st.shift_int) // bpi + 1
            tkey = (lid, h)
            time_num[tkey] = time_num.get(tkey, 0.0) + m * (wait + st.fft)
            time_mass[tkey] = time_mass.get(tkey, 0.0) + m

    time_values = {}
    for lid in link_ids:
        fft = network.links[lid].free_flow_time
        for h in range(1, T + 1):
            mass = time_mass.get((lid, h), 0.0)
            if mass > 0.0:
                time_values[(lid, h)] = time_num[(lid, h)] / mass
            else:
                time_values[(lid, h)] = fft

    proportions = {}
    for (a, o, d, h, t0), mass in prov_mass.items():
        x = demand.entries[(o, d, t0)]
        p = mass / x
        if p > 0.0:
            proportions[(a, o, d, h, t0)] = min(p, 1.0)

    total_demand = sum(v for v in demand.entries.values() if v > 0)
    unfinished = total_demand - sum(completed.values())
    if unfinished < 1e-9 * max(total_demand, 1.0):
        unfinished = 0.0
    if unfinished > 0.0:
        log.warning(
            "%.1f of %.1f vehicles still in the network at horizon end",
            unfinished, total_demand,
        )

    return SimulationResult(
        link_flows=flows,
        link_times=TravelTimeTable(grid, time_values),
        proportions=AssignmentProportions(proportions),
        total_travel_time=total_travel,
        total_delay=max(total_delay, 0.0),
        vehicles_unfinished=unfinished,
        link_exit_flows=link_exit_flows,
        completed_trips=completed,
    )


def _exit_time_integral(dex_cum, boundary_times, horizon_end):
    """Cumulative integral of exit time over exited mass, per bin boundary."""
    dm = np.diff(dex_cum)
    mid = (boundary_times[:-1] + boundary_times[1:]) / 2.0
    return np.concatenate([[0.0], np.cumsum(dm * mid)])


def _eval_time_integral(dex_cum, exit_int, boundary_times, served_total,
                        horizon_end, x):
    """Integral of exit time over the first `x` units of arrived mass.

    Mass never served by the horizon is assigned exit time `horizon_end`
    (accrual up to the horizon).
    """
    if x <= 0.0:
        return 0.0
    extra = 0.0
    if x > served_total:
        extra = (x - served_total) * horizon_end
        x = served_total
    j = int(np.searchsorted(dex_cum, x, side="left"))
    if j == 0:
        return extra
    d0, d1 = dex_cum[j - 1], dex_cum[j]
    if x >= d1:
        return exit_int[j] + extra
    t0, t1 = boundary_times[j - 1], boundary_times[j]
    tx = t0 + (x - d0) / (d1 - d0) * (t1 - t0)
    return exit_int[j - 1] + (x - d0) * (t0 + tx) / 2.0 + extra


def compute_relative_gap(
    network: Network,
    times: TravelTimeTable,
    path_flows: PathFlowBundle,
    demand: ODMatrixSeries,
) -> float:
    """Flow-weighted excess of experienced route cost over shortest cost.

    (sum experienced path cost - sum shortest path cost) / sum shortest cost,
    with path costs traced through `times` from the departure instant.
    Returns 0 for zero demand or when every used path is shortest.
    """
    grid = demand.time_grid
    num = 0.0
    den = 0.0
    for key in demand.keys_sorted():
        trips = demand.entries[key]
        if trips <= 0:
            continue
        o, d, t = key
        depart = grid.interval_start(t)
        experienced = 0.0
        for path, share in sorted(path_flows.flows[key].items()):
            experienced += share * trace_path_cost(network, times, path, depart)
        best = time_dependent_shortest_path(network, times, o, d, t)
        shortest = best.arrival - depart
        num += trips * max(0.0, experienced - shortest)
        den += trips * shortest
    return num / den if den > 0 else 0.0


def _blend(old_flows: dict, aon: dict, weight: float) -> dict:
    blended = {}
    for key in sorted(aon):
        shares: dict = {}
        for path, share in old_flows.get(key, {}).items():
            kept = share * (1.0 - weight)
            if kept > 0.0:
                shares[path] = kept
        for path, share in aon[key].items():
            shares[path] = shares.get(path, 0.0) + share * weight
        blended[key] = {p: shares[p] for p in sorted(shares)}
    return blended


def assign(
    network: Network, demand: ODMatrixSeries, config: AssignConfig = AssignConfig()
) -> SimulationResult:
    """Equilibrate route choice by the method of successive averages.

    Iteration k routes all demand on the previous iteration's experienced
    link times (free flow for k=1), folds that all-or-nothing assignment
    into the path flows with weight 1/k, reloads the network, and stops when
    the relative gap drops below `gap_tolerance` or `max_iterations` is hit.
    """
    if config.max_iterations < 1:
        raise ConfigError("max_iterations must be >= 1")
    grid = demand.time_grid
    times = TravelTimeTable.free_flow(network, grid)
    flows: dict = {}
    result = None
    for k in range(1, config.max_iterations + 1):
        aon = {}
        for key in demand.keys_sorted():
            if demand.entries[key] <= 0:
                continue
            o, d, t = key
            best = time_dependent_shortest_path(network, times, o, d, t)
            aon[key] = {best.links: 1.0}
        flows = _blend(flows, aon, 1.0 / k)
        bundle = PathFlowBundle(flows)
        result = dynamic_network_loading(network, bundle, demand)
        result.relative_gap = compute_relative_gap(
            network, result.link_times, bundle, demand
        )
        times = result.link_times
        if result.relative_gap < config.gap_tolerance:
            break
    return result
