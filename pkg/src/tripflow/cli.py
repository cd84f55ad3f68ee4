"""Command-line driver: simulate / estimate / forecast / incident / synth,
plus a `pipeline` command chaining estimate -> forecast -> incident.

Configuration is a flat key = value text file; every key can be overridden
by the command-line flag of the same name. Times are accepted as HH:MM or
seconds. Exit codes: 0 success, 1 usage or configuration error, 2 data or
validation error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import time

from . import __version__, io_files, plots, synth
from .errors import ConfigError, DataError, NumericalError, TripflowError
from .estimation import EstimationConfig, LinkCountSeries, bilevel_estimate
from .forecast import ArimaSpec, fit_fleet, forecast as run_forecast, naive_forecast, select_model
from .incident import IncidentScenario, duration_sweep
from .io_files import demand_to_fleet, fmt, read_counts, read_demand
from .metrics import fit_report
from .network import TimeGrid, load_network
from .simulator import AssignConfig, ODMatrixSeries, assign

log = logging.getLogger("tripflow")

DEFAULT_CANDIDATES = "1,0,0;1,1,0;0,0,1;0,1,1"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def parse_clock(text) -> float:
    """HH:MM or plain seconds -> wall-clock seconds."""
    s = str(text).strip()
    if ":" in s:
        parts = s.split(":")
        if len(parts) != 2:
            raise ConfigError(f"bad time {text!r}, expected HH:MM")
        try:
            return int(parts[0]) * 3600.0 + int(parts[1]) * 60.0
        except ValueError as exc:
            raise ConfigError(f"bad time {text!r}") from exc
    try:
        return float(s)
    except ValueError as exc:
        raise ConfigError(f"bad time {text!r}") from exc


def read_config_file(path) -> dict:
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    values = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            if "=" not in stripped:
                raise ConfigError(f"{path}:{lineno}: expected key = value")
            key, _, value = stripped.partition("=")
            values[key.strip()] = value.strip()
    return values


def _resolve(args, defaults) -> dict:
    """defaults < config file < explicit CLI flags."""
    merged = dict(defaults)
    config_path = getattr(args, "config", None)
    config_dir = ""
    if config_path:
        merged.update(read_config_file(config_path))
        config_dir = os.path.dirname(os.path.abspath(config_path))
    for key in defaults:
        flag_value = getattr(args, key, None)
        if flag_value is not None:
            merged[key] = flag_value
    merged["_config_dir"] = config_dir
    return merged


def _path(cfg, key, required=True):
    value = cfg.get(key)
    if not value:
        if required:
            raise ConfigError(f"missing required setting '{key}'")
        return None
    path = str(value)
    if not os.path.isabs(path) and cfg.get("_config_dir"):
        candidate = os.path.join(cfg["_config_dir"], path)
        if os.path.exists(candidate) or not os.path.exists(path):
            path = candidate
    if not os.path.exists(path):
        raise ConfigError(f"file not found: {path} (setting '{key}')")
    return path


def _int(cfg, key):
    try:
        return int(cfg[key])
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"bad integer for '{key}': {cfg.get(key)!r}") from exc


def _float(cfg, key):
    try:
        return float(cfg[key])
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"bad number for '{key}': {cfg.get(key)!r}") from exc


def _bool(value) -> bool:
    return str(value).strip().lower() in ("1", "true", "yes", "on")


def _grid(cfg) -> TimeGrid:
    return TimeGrid(
        start=parse_clock(cfg["start"]),
        interval_length=_float(cfg, "interval_s"),
        num_intervals=_int(cfg, "num_intervals"),
    )


def _network(cfg):
    return load_network(_path(cfg, "nodes"), _path(cfg, "links"), _path(cfg, "zones"))


def _assign_config(cfg) -> AssignConfig:
    if _int(cfg, "msa_iterations") < 1:
        raise ConfigError("msa_iterations must be >= 1")
    return AssignConfig(
        max_iterations=_int(cfg, "msa_iterations"),
        gap_tolerance=_float(cfg, "gap_tolerance"),
    )


def _out_dir(cfg) -> str:
    out = str(cfg.get("out_dir") or "out")
    os.makedirs(out, exist_ok=True)
    return out


def _config_echo(cfg) -> list:
    return [
        f"{key} = {cfg[key]}"
        for key in sorted(cfg)
        if not key.startswith("_") and cfg[key] is not None
    ]


def _write_report(out, command, cfg, sections):
    lines = [f"tripflow {__version__}", f"command = {command}", "", "[config]"]
    lines += _config_echo(cfg)
    for title, rows in sections:
        lines += ["", f"[{title}]"]
        lines += rows
    with open(os.path.join(out, "run_report.txt"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def _parse_specs(text):
    return [ArimaSpec.parse(part) for part in str(text).split(";") if part.strip()]


def _parse_durations(text):
    try:
        values = [float(part) for part in str(text).split(",") if part.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad durations {text!r}") from exc
    if not values:
        raise ConfigError("durations must be nonempty")
    return values


def _scenario(cfg) -> IncidentScenario:
    values = {}
    scenario_path = cfg.get("scenario")
    if scenario_path:
        values = read_config_file(_path(cfg, "scenario"))
    for key in ("link_ids", "start_time", "duration_s", "capacity_factor", "lanes_blocked"):
        if cfg.get(key) is not None:
            values[key] = cfg[key]
    for key in ("link_ids", "start_time", "duration_s", "capacity_factor"):
        if key not in values:
            raise ConfigError(f"scenario is missing '{key}'")
    try:
        link_ids = tuple(int(part) for part in str(values["link_ids"]).split(",") if part.strip())
    except ValueError as exc:
        raise ConfigError(f"bad scenario link_ids {values['link_ids']!r}") from exc
    return IncidentScenario(
        link_ids=link_ids,
        start_time=parse_clock(values["start_time"]),
        duration=float(values["duration_s"]),
        capacity_factor=float(values["capacity_factor"]),
        lanes_blocked=int(values.get("lanes_blocked", 0)),
    )


GRID_DEFAULTS = {
    "nodes": None, "links": None, "zones": None,
    "start": "06:00", "interval_s": "900", "num_intervals": "16",
    "out_dir": "out", "plots": "true",
    "msa_iterations": "50", "gap_tolerance": "1e-3",
}


def _stage_simulate(cfg, out):
    network = _network(cfg)
    grid = _grid(cfg)
    demand = read_demand(_path(cfg, "demand"), grid)
    started = time.perf_counter()
    result = assign(network, demand, _assign_config(cfg))
    log.info("simulate: %.2fs, relative gap %.2e", time.perf_counter() - started,
             result.relative_gap)
    io_files.write_flows(os.path.join(out, "flows.csv"), result)
    if _bool(cfg.get("dump_proportions", "false")):
        io_files.write_proportions(os.path.join(out, "proportions.csv"), result)
    if _bool(cfg.get("plots", "true")):
        plots.save_flows_plot(result, grid, os.path.join(out, "flows.png"))
    rows = [
        f"relative_gap = {fmt(result.relative_gap)}",
        f"total_travel_time_veh_s = {fmt(result.total_travel_time)}",
        f"total_delay_veh_s = {fmt(result.total_delay)}",
        f"vehicles_unfinished = {fmt(result.vehicles_unfinished)}",
    ]
    return result, ("simulate", rows)


def cmd_simulate(args) -> int:
    cfg = _resolve(args, {**GRID_DEFAULTS, "demand": None, "dump_proportions": None})
    out = _out_dir(cfg)
    _, section = _stage_simulate(cfg, out)
    _write_report(out, "simulate", cfg, [section])
    print(f"simulate: wrote {out}/flows.csv")
    return 0


ESTIMATE_DEFAULTS = {
    **GRID_DEFAULTS,
    "prior": None, "counts": None,
    "omega": "0.9", "max_outer_iterations": "20", "r2_tolerance": "1e-3",
    "max_gradient_steps": "500", "step_tolerance": "1e-9",
}


def _stage_estimate(cfg, out):
    network = _network(cfg)
    grid = _grid(cfg)
    prior = read_demand(_path(cfg, "prior"), grid)
    counts = LinkCountSeries(read_counts(_path(cfg, "counts")))
    config = EstimationConfig(
        omega=_float(cfg, "omega"),
        max_outer_iterations=_int(cfg, "max_outer_iterations"),
        r2_variation_tolerance=_float(cfg, "r2_tolerance"),
        max_gradient_steps=_int(cfg, "max_gradient_steps"),
        step_tolerance=_float(cfg, "step_tolerance"),
        assign=_assign_config(cfg),
    )
    started = time.perf_counter()
    result = bilevel_estimate(network, prior, counts, config)
    log.info("estimate: %.2fs over %d outer iterations",
             time.perf_counter() - started, len(result.trace))
    io_files.write_demand(os.path.join(out, "estimated_demand.csv"), result.estimated_demand)
    io_files.write_trace(os.path.join(out, "convergence_trace.csv"), result.trace)
    io_files.write_scatter(os.path.join(out, "scatter.csv"), counts.entries,
                           result.initial_simulation, result.final_simulation)
    if _bool(cfg.get("plots", "true")):
        plots.save_convergence_plot(result.trace, os.path.join(out, "convergence.png"))
        plots.save_scatter_plot(counts.entries, result.initial_simulation,
                                result.final_simulation, os.path.join(out, "scatter.png"))
    T = grid.num_intervals
    observed = counts.vector(T)
    simulated = [result.final_simulation.link_flows.get((a, h), 0.0)
                 for a in counts.observed_links for h in range(1, T + 1)]
    fit = fit_report(observed, simulated)
    rows = [
        f"outer_iterations = {len(result.trace)}",
        f"best_r_squared = {fmt(max(row.r_squared for row in result.trace))}",
        f"final_objective = {fmt(result.trace[-1].objective)}",
        f"initial_objective = {fmt(result.trace[0].objective)}",
        f"fit_r_squared = {fmt(fit.r_squared)}",
        f"fit_rmse = {fmt(fit.rmse)}",
        f"gridlock = {result.gridlock}",
    ]
    return result, ("estimate", rows)


def cmd_estimate(args) -> int:
    cfg = _resolve(args, ESTIMATE_DEFAULTS)
    out = _out_dir(cfg)
    result, section = _stage_estimate(cfg, out)
    _write_report(out, "estimate", cfg, [section])
    best = max(row.r_squared for row in result.trace)
    print(f"estimate: best R^2 {best:.4f} in {len(result.trace)} iterations; wrote {out}/")
    return 0


FORECAST_DEFAULTS = {
    "demand": None, "out_dir": "out", "plots": "true",
    "forecast_spec": "1,0,0", "forecast_steps": "2",
    "validation_intervals": "2", "candidates": DEFAULT_CANDIDATES,
    "select": None,
    "start": "06:00", "interval_s": "900", "num_intervals": "16",
}


def _stage_forecast(cfg, out, demand=None):
    if demand is None:
        grid = _grid(cfg)
        demand = read_demand(_path(cfg, "demand"), grid)
    fleet = demand_to_fleet(demand)
    steps = _int(cfg, "forecast_steps")
    if steps < 1:
        raise ConfigError("forecast_steps must be >= 1")
    report = None
    spec = ArimaSpec.parse(str(cfg["forecast_spec"]))
    if _bool(cfg.get("select", "false")):
        candidates = _parse_specs(cfg["candidates"])
        report = select_model(fleet, candidates, _int(cfg, "validation_intervals"))
        io_files.write_selection(os.path.join(out, "selection_report.csv"), report)
        if _bool(cfg.get("plots", "true")):
            plots.save_selection_plot(report, os.path.join(out, "selection.png"))
        if report.winner.spec is not None:
            spec = report.winner.spec
        log.info("forecast: selected %s (NRMSE %.4f)", report.winner.label,
                 report.winner.nrmse)

    fit = fit_fleet(fleet, spec)
    T = demand.time_grid.num_intervals
    predictions = {}
    for series in fleet:
        model = fit.models[series.od_pair]
        if report is not None and report.winner.spec is None:
            values = naive_forecast(series.values, steps)
        else:
            values = run_forecast(model, series.values, steps)
        predictions[series.od_pair] = (T + 1, list(values))
    io_files.write_forecast(os.path.join(out, "forecast.csv"), predictions)
    if _bool(cfg.get("plots", "true")):
        plots.save_forecast_plot(fleet, predictions, os.path.join(out, "forecast.png"))
    rows = [
        f"spec = {spec.label if report is None or report.winner.spec is not None else 'naive'}",
        f"od_pairs = {len(fleet)}",
        f"steps = {steps}",
        f"flagged_fits = {len(fit.flagged)}",
    ]
    if report is not None:
        rows.append(f"winner = {report.winner.label}")
        rows.append(f"winner_nrmse = {fmt(report.winner.nrmse)}")
    return demand, predictions, ("forecast", rows)


def cmd_forecast(args) -> int:
    cfg = _resolve(args, FORECAST_DEFAULTS)
    out = _out_dir(cfg)
    _, predictions, section = _stage_forecast(cfg, out)
    _write_report(out, "forecast", cfg, [section])
    print(f"forecast: predicted {len(predictions)} OD pairs; wrote {out}/forecast.csv")
    return 0


INCIDENT_DEFAULTS = {
    **GRID_DEFAULTS,
    "demand": None, "scenario": None, "watched_link": None,
    "durations": None, "link_ids": None, "start_time": None,
    "duration_s": None, "capacity_factor": None, "lanes_blocked": None,
}


def _stage_incident(cfg, out, network=None, demand=None):
    if network is None:
        network = _network(cfg)
    if demand is None:
        grid = _grid(cfg)
        demand = read_demand(_path(cfg, "demand"), grid, rebase=True)
    if cfg.get("watched_link") is None:
        raise ConfigError("missing required setting 'watched_link'")
    watched = _int(cfg, "watched_link")
    template = _scenario(cfg)
    durations = (_parse_durations(cfg["durations"])
                 if cfg.get("durations") else [template.duration])
    started = time.perf_counter()
    rows = duration_sweep(network, demand, template, durations, watched,
                          _assign_config(cfg))
    log.info("incident: %.2fs for baseline + %d scenarios",
             time.perf_counter() - started, len(durations))
    io_files.write_incident_report(os.path.join(out, "incident_report.csv"), rows)
    if _bool(cfg.get("plots", "true")):
        plots.save_incident_plot(rows, os.path.join(out, "incident.png"))
    lines = [
        f"{r.scenario}: delay_ratio = {fmt(r.delay_ratio_vs_baseline)}, "
        f"min_throughput_vph = {fmt(r.min_throughput_vph)}"
        for r in rows
    ]
    return rows, ("incident", lines)


def cmd_incident(args) -> int:
    cfg = _resolve(args, INCIDENT_DEFAULTS)
    out = _out_dir(cfg)
    rows, section = _stage_incident(cfg, out)
    _write_report(out, "incident", cfg, [section])
    print(f"incident: wrote {out}/incident_report.csv ({len(rows)} rows)")
    return 0


SYNTH_DEFAULTS = {
    "out_dir": "out", "seed": str(synth.DEFAULT_SEED), "noise": "0.3",
    "od_pairs": "12", "fleet_length": "16", "preset": "grid",
}


def cmd_synth(args) -> int:
    cfg = _resolve(args, SYNTH_DEFAULTS)
    out = _out_dir(cfg)
    seed = _int(cfg, "seed")
    noise = _float(cfg, "noise")
    preset = str(cfg["preset"])
    if preset == "grid":
        fixture = synth.make_grid_fixture(seed=seed, noise=noise)
    elif preset == "bottleneck":
        fixture = synth.make_bottleneck_fixture()
    else:
        raise ConfigError(f"unknown preset {preset!r} (grid or bottleneck)")
    fleet = synth.make_ar1_fleet(seed + 1, _int(cfg, "od_pairs"),
                                 length=_int(cfg, "fleet_length"))
    synth.write_fixture(out, fixture, fleet, seed, noise)
    print(f"synth: wrote {preset} fixture to {out}/ (seed {seed})")
    return 0


PIPELINE_DEFAULTS = {
    **ESTIMATE_DEFAULTS,
    **{k: v for k, v in FORECAST_DEFAULTS.items() if k not in ESTIMATE_DEFAULTS},
    **{k: v for k, v in INCIDENT_DEFAULTS.items() if k not in ESTIMATE_DEFAULTS},
}


def cmd_pipeline(args) -> int:
    """estimate -> forecast -> incident on the forecast horizon."""
    cfg = _resolve(args, PIPELINE_DEFAULTS)
    out = _out_dir(cfg)
    sections = []

    est_dir = os.path.join(out, "estimate")
    os.makedirs(est_dir, exist_ok=True)
    est_result, est_section = _stage_estimate(cfg, est_dir)
    sections.append(est_section)

    fc_dir = os.path.join(out, "forecast")
    os.makedirs(fc_dir, exist_ok=True)
    demand, predictions, fc_section = _stage_forecast(
        cfg, fc_dir, demand=est_result.estimated_demand
    )
    sections.append(fc_section)

    inc_dir = os.path.join(out, "incident")
    os.makedirs(inc_dir, exist_ok=True)
    grid = demand.time_grid
    steps = _int(cfg, "forecast_steps")
    horizon = TimeGrid(grid.end, grid.interval_length, steps)
    entries = {}
    for (o, d), (_start, values) in predictions.items():
        for i, v in enumerate(values, start=1):
            entries[(o, d, i)] = float(v)
    forecast_demand = ODMatrixSeries(entries, horizon)
    network = _network(cfg)
    _, inc_section = _stage_incident(cfg, inc_dir, network=network,
                                     demand=forecast_demand)
    sections.append(inc_section)

    _write_report(out, "pipeline", cfg, sections)
    print(f"pipeline: wrote {out}/ (estimate, forecast, incident)")
    return 0


def _add_common(parser):
    parser.add_argument("--config", help="flat key = value configuration file")
    parser.add_argument("--out-dir", dest="out_dir", help="output directory")
    parser.add_argument("--no-plots", dest="plots", action="store_const",
                        const="false", help="skip figure rendering")


def _add_grid(parser):
    parser.add_argument("--nodes")
    parser.add_argument("--links")
    parser.add_argument("--zones")
    parser.add_argument("--start", help="horizon start, HH:MM or seconds")
    parser.add_argument("--interval-s", dest="interval_s")
    parser.add_argument("--num-intervals", dest="num_intervals")
    parser.add_argument("--msa-iterations", dest="msa_iterations")
    parser.add_argument("--gap-tolerance", dest="gap_tolerance")


def build_parser() -> _Parser:
    parser = _Parser(prog="tripflow",
                     description="OD estimation, forecasting and incident analysis")
    parser.add_argument("--version", action="version", version=f"tripflow {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="assign demand and write link flows")
    _add_common(p); _add_grid(p)
    p.add_argument("--demand")
    p.add_argument("--dump-proportions", dest="dump_proportions",
                   action="store_const", const="true")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("estimate", help="bi-level OD estimation from counts")
    _add_common(p); _add_grid(p)
    p.add_argument("--prior")
    p.add_argument("--counts")
    p.add_argument("--omega")
    p.add_argument("--max-outer-iterations", dest="max_outer_iterations")
    p.add_argument("--r2-tolerance", dest="r2_tolerance")
    p.add_argument("--max-gradient-steps", dest="max_gradient_steps")
    p.add_argument("--step-tolerance", dest="step_tolerance")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("forecast", help="ARIMA demand prediction per OD pair")
    _add_common(p)
    p.add_argument("--demand")
    p.add_argument("--start")
    p.add_argument("--interval-s", dest="interval_s")
    p.add_argument("--num-intervals", dest="num_intervals")
    p.add_argument("--spec", dest="forecast_spec", help="p,d,q")
    p.add_argument("--steps", dest="forecast_steps")
    p.add_argument("--select", action="store_const", const="true",
                   help="pick the best candidate on a validation window")
    p.add_argument("--candidates", help="semicolon-separated p,d,q triples")
    p.add_argument("--validation-intervals", dest="validation_intervals")
    p.set_defaults(func=cmd_forecast)

    p = sub.add_parser("incident", help="capacity-cut scenarios vs baseline")
    _add_common(p); _add_grid(p)
    p.add_argument("--demand")
    p.add_argument("--scenario", help="scenario definition file")
    p.add_argument("--watched-link", dest="watched_link")
    p.add_argument("--durations", help="comma-separated seconds for a sweep")
    p.add_argument("--link-ids", dest="link_ids")
    p.add_argument("--start-time", dest="start_time")
    p.add_argument("--duration-s", dest="duration_s")
    p.add_argument("--capacity-factor", dest="capacity_factor")
    p.add_argument("--lanes-blocked", dest="lanes_blocked")
    p.set_defaults(func=cmd_incident)

    p = sub.add_parser("synth", help="generate the synthetic benchmark fixtures")
    _add_common(p)
    p.add_argument("--seed")
    p.add_argument("--noise", help="multiplicative prior noise, e.g. 0.3")
    p.add_argument("--od-pairs", dest="od_pairs")
    p.add_argument("--fleet-length", dest="fleet_length")
    p.add_argument("--preset", choices=("grid", "bottleneck"))
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("pipeline", help="estimate, then forecast, then incident")
    _add_common(p); _add_grid(p)
    p.add_argument("--prior")
    p.add_argument("--counts")
    p.add_argument("--omega")
    p.add_argument("--max-outer-iterations", dest="max_outer_iterations")
    p.add_argument("--r2-tolerance", dest="r2_tolerance")
    p.add_argument("--max-gradient-steps", dest="max_gradient_steps")
    p.add_argument("--step-tolerance", dest="step_tolerance")
    p.add_argument("--spec", dest="forecast_spec")
    p.add_argument("--steps", dest="forecast_steps")
    p.add_argument("--select", action="store_const", const="true")
    p.add_argument("--candidates")
    p.add_argument("--validation-intervals", dest="validation_intervals")
    p.add_argument("--scenario")
    p.add_argument("--watched-link", dest="watched_link")
    p.add_argument("--durations")
    p.add_argument("--link-ids", dest="link_ids")
    p.add_argument("--start-time", dest="start_time")
    p.add_argument("--duration-s", dest="duration_s")
    p.add_argument("--capacity-factor", dest="capacity_factor")
    p.add_argument("--lanes-blocked", dest="lanes_blocked")
    p.set_defaults(func=cmd_pipeline)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(stream=sys.stderr, level=logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except TripflowError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
