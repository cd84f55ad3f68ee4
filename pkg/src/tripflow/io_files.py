"""CSV schemas shared by the CLI and the library.

All files are comma-separated UTF-8 with `.` decimals and no thousands
separators. Floats are written with 12 significant digits; rewriting a file
the tool has read back is byte-identical.
"""

from __future__ import annotations

import csv

from .errors import DataError
from .network import TimeGrid
from .simulator import ODMatrixSeries, SimulationResult

DEMAND_HEADER = ["origin_zone", "dest_zone", "interval", "trips"]
COUNTS_HEADER = ["link_id", "interval", "count_veh"]
FLOWS_HEADER = ["link_id", "interval", "flow_veh"]
PROPORTIONS_HEADER = ["link_id", "od_origin", "od_dest", "interval_h", "interval_t", "proportion"]
TRACE_HEADER = ["iteration", "objective", "r_squared"]
SCATTER_HEADER = ["phase", "link_id", "interval", "observed_veh", "simulated_veh"]
FORECAST_HEADER = ["origin_zone", "dest_zone", "interval", "predicted_trips"]
SELECTION_HEADER = ["spec", "nrmse", "r_squared"]
INCIDENT_HEADER = ["scenario", "duration_s", "capacity_factor", "avg_delay_s",
                   "delay_ratio_vs_baseline", "min_throughput_vph"]


def fmt(value) -> str:
    return format(float(value), ".12g")


def write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _read_csv(path, header):
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"{path}: {exc.strerror or exc}") from exc
    with fh:
        reader = csv.reader(fh)
        first = next(reader, None)
        if first is None or [c.strip() for c in first] != header:
            raise DataError(f"{path}:1: expected header {','.join(header)}")
        out = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DataError(f"{path}:{lineno}: expected {len(header)} fields")
            out.append((lineno, row))
        return out


def read_demand(path, grid: TimeGrid, rebase: bool = False) -> ODMatrixSeries:
    """Demand CSV -> ODMatrixSeries on `grid`.

    With `rebase`, interval indices are shifted so the earliest one in the
    file becomes interval 1 (used to feed forecast output, which carries
    absolute interval indices, into a fresh simulation horizon).
    """
    entries = {}
    for lineno, row in _read_csv(path, DEMAND_HEADER):
        try:
            key = (int(row[0]), int(row[1]), int(row[2]))
            trips = float(row[3])
        except ValueError as exc:
            raise DataError(f"{path}:{lineno}: bad demand row") from exc
        if key in entries:
            raise DataError(f"{path}:{lineno}: duplicate OD/interval {key}")
        entries[key] = trips
    if not entries:
        raise DataError(f"{path}: no demand rows")
    if rebase:
        first = min(t for (_o, _d, t) in entries)
        entries = {(o, d, t - first + 1): v for (o, d, t), v in entries.items()}
    return ODMatrixSeries(entries, grid)


def write_demand(path, demand: ODMatrixSeries):
    rows = [
        (o, d, t, fmt(demand.entries[(o, d, t)]))
        for (o, d, t) in demand.keys_sorted()
    ]
    write_csv(path, DEMAND_HEADER, rows)


def read_counts(path) -> dict:
    entries = {}
    for lineno, row in _read_csv(path, COUNTS_HEADER):
        try:
            key = (int(row[0]), int(row[1]))
            entries[key] = float(row[2])
        except ValueError as exc:
            raise DataError(f"{path}:{lineno}: bad count row") from exc
    if not entries:
        raise DataError(f"{path}: no count rows")
    return entries


def write_counts(path, entries: dict):
    rows = [(a, h, fmt(entries[(a, h)])) for (a, h) in sorted(entries)]
    write_csv(path, COUNTS_HEADER, rows)


def write_flows(path, result: SimulationResult):
    rows = [
        (a, h, fmt(result.link_flows[(a, h)]))
        for (a, h) in sorted(result.link_flows)
    ]
    write_csv(path, FLOWS_HEADER, rows)


def write_proportions(path, result: SimulationResult):
    rows = [
        (a, o, d, h, t, fmt(result.proportions.entries[(a, o, d, h, t)]))
        for (a, o, d, h, t) in sorted(result.proportions.entries)
    ]
    write_csv(path, PROPORTIONS_HEADER, rows)


def write_trace(path, trace):
    rows = [(row.iteration, fmt(row.objective), fmt(row.r_squared)) for row in trace]
    write_csv(path, TRACE_HEADER, rows)


def write_scatter(path, counts: dict, before: SimulationResult, after: SimulationResult):
    rows = []
    for phase, sim in (("before", before), ("after", after)):
        for (a, h) in sorted(counts):
            rows.append((phase, a, h, fmt(counts[(a, h)]),
                         fmt(sim.link_flows.get((a, h), 0.0))))
    write_csv(path, SCATTER_HEADER, rows)


def write_forecast(path, predictions: dict):
    """`predictions` maps (origin, dest) -> sequence, intervals continue the grid."""
    rows = []
    for (o, d) in sorted(predictions):
        start_interval, values = predictions[(o, d)]
        for i, v in enumerate(values):
            rows.append((o, d, start_interval + i, fmt(v)))
    write_csv(path, FORECAST_HEADER, rows)


def write_selection(path, report):
    rows = [(row.label, fmt(row.nrmse), fmt(row.r_squared)) for row in report.rows]
    write_csv(path, SELECTION_HEADER, rows)


def write_incident_report(path, rows):
    out = [
        (r.scenario, fmt(r.duration_s), fmt(r.capacity_factor), fmt(r.avg_delay_s),
         fmt(r.delay_ratio_vs_baseline), fmt(r.min_throughput_vph))
        for r in rows
    ]
    write_csv(path, INCIDENT_HEADER, out)


def demand_to_fleet(demand: ODMatrixSeries):
    """Per-OD demand series ordered by OD pair; missing intervals read 0."""
    from .forecast import DemandSeries

    T = demand.time_grid.num_intervals
    pairs = sorted({(o, d) for (o, d, _t) in demand.entries})
    fleet = []
    for (o, d) in pairs:
        values = tuple(demand.entries.get((o, d, t), 0.0) for t in range(1, T + 1))
        fleet.append(DemandSeries(od_pair=(o, d), values=values,
                                  interval_length=demand.time_grid.interval_length))
    return fleet
