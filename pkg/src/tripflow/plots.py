"""Figure rendering for the CLI report path.

Every command that writes delimited output also renders a PNG next to it:
estimation convergence, observed-vs-simulated scatter, forecast model
comparison, and the incident duration sweep. Files are written without
volatile metadata so repeated runs are byte-identical.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

_SAVE_KW = dict(dpi=130, metadata={"Software": None})


def _finish(fig, path):
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)


def save_convergence_plot(trace, path):
    """Objective value and count fit per outer estimation iteration."""
    iterations = [row.iteration for row in trace]
    fig, ax1 = plt.subplots(figsize=(6.0, 3.6))
    ax1.plot(iterations, [row.objective for row in trace], "o-", color="tab:blue")
    ax1.set_xlabel("outer iteration")
    ax1.set_ylabel("objective", color="tab:blue")
    ax1.tick_params(axis="y", labelcolor="tab:blue")
    ax2 = ax1.twinx()
    ax2.plot(iterations, [row.r_squared for row in trace], "s--", color="tab:red")
    ax2.set_ylabel("R$^2$ (counts)", color="tab:red")
    ax2.tick_params(axis="y", labelcolor="tab:red")
    ax1.set_title("estimation convergence")
    _finish(fig, path)


def save_scatter_plot(counts, before, after, path):
    """Observed vs simulated link counts before and after estimation."""
    keys = sorted(counts)
    obs = [counts[k] for k in keys]
    fig, axes = plt.subplots(1, 2, figsize=(7.6, 3.8), sharex=True, sharey=True)
    for ax, sim, title in ((axes[0], before, "before"), (axes[1], after, "after")):
        vals = [sim.link_flows.get(k, 0.0) for k in keys]
        ax.scatter(obs, vals, s=12, alpha=0.6)
        top = max(max(obs, default=1.0), max(vals, default=1.0))
        ax.plot([0, top], [0, top], "k--", linewidth=0.8)
        ax.set_title(title)
        ax.set_xlabel("observed (veh)")
    axes[0].set_ylabel("simulated (veh)")
    _finish(fig, path)


def save_selection_plot(report, path):
    """Validation NRMSE per forecasting candidate."""
    labels = [row.label for row in report.rows]
    values = [row.nrmse for row in report.rows]
    colors = ["tab:green" if row is report.winner else "tab:gray" for row in report.rows]
    fig, ax = plt.subplots(figsize=(6.0, 3.6))
    ax.bar(range(len(labels)), values, color=colors)
    ax.set_xticks(range(len(labels)))
    ax.set_xticklabels(labels, rotation=20, ha="right")
    ax.set_ylabel("validation NRMSE")
    ax.set_title("demand forecasting model comparison")
    _finish(fig, path)


def save_forecast_plot(fleet, predictions, path, max_series: int = 6):
    """A few demand series with their forecast horizon appended."""
    chosen = sorted(fleet, key=lambda s: -sum(s.values))[:max_series]
    fig, ax = plt.subplots(figsize=(6.6, 3.8))
    for series in chosen:
        n = len(series.values)
        start_interval, preds = predictions[series.od_pair]
        line, = ax.plot(range(1, n + 1), series.values, linewidth=1.0,
                        label=f"{series.od_pair[0]}->{series.od_pair[1]}")
        ax.plot(range(start_interval, start_interval + len(preds)), preds,
                "o--", color=line.get_color(), markersize=3)
    ax.set_xlabel("interval")
    ax.set_ylabel("trips")
    ax.set_title("demand history and forecast")
    ax.legend(fontsize=7, ncol=2)
    _finish(fig, path)


def save_incident_plot(rows, path):
    """Watched-link throughput floor and delay ratio across the sweep."""
    durations = [r.duration_s / 60.0 for r in rows]
    fig, axes = plt.subplots(1, 2, figsize=(7.6, 3.6))
    axes[0].plot(durations, [r.min_throughput_vph for r in rows], "o-")
    axes[0].set_xlabel("incident duration (min)")
    axes[0].set_ylabel("min throughput (veh/h)")
    axes[1].plot(durations, [r.delay_ratio_vs_baseline for r in rows], "o-",
                 color="tab:red")
    axes[1].set_xlabel("incident duration (min)")
    axes[1].set_ylabel("delay ratio vs baseline")
    fig.suptitle("incident duration sweep")
    _finish(fig, path)


def save_flows_plot(result, grid, path, top_links: int = 5):
    """Per-interval entering flow for the busiest links."""
    totals = {}
    for (a, _h), flow in result.link_flows.items():
        totals[a] = totals.get(a, 0.0) + flow
    busiest = sorted(totals, key=lambda a: (-totals[a], a))[:top_links]
    intervals = range(1, grid.num_intervals + 1)
    fig, ax = plt.subplots(figsize=(6.6, 3.8))
    for a in busiest:
        ax.plot(intervals, [result.link_flows.get((a, h), 0.0) for h in intervals],
                "o-", markersize=3, label=f"link {a}")
    ax.set_xlabel("interval")
    ax.set_ylabel("entering flow (veh)")
    ax.set_title("simulated link flows")
    ax.legend(fontsize=7)
    _finish(fig, path)
