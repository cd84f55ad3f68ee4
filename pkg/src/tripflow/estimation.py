"""Bi-level OD demand estimation from observed link counts.

The outer loop alternates a simulator run (which maps the current demand to
link flows and assignment proportions) with a bound-constrained least-squares
adjustment of the demand. The upper-level objective is

    omega * sum_i,t (x - x_prior)^2  +  (1 - omega) * sum_a,h (P x - counts)^2

with proportions P held fixed during each inner solve; only links in the
observed count set enter the second term. The inner solver is projected
gradient descent with Armijo backtracking, which is exact enough here since
the problem is a convex quadratic under x >= 0.

Termination follows the fit criterion: stop when the R-squared between
observed and simulated counts changes by less than a tolerance between outer
iterations. The demand returned is the iterate with the best R-squared seen,
not necessarily the last one.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError
from .metrics import r_squared
from .network import Network
from .simulator import (
    AssignConfig,
    AssignmentProportions,
    ODMatrixSeries,
    SimulationResult,
    assign,
)

log = logging.getLogger(__name__)

GRIDLOCK_UNFINISHED_SHARE = 0.10


@dataclass(frozen=True)
class LinkCountSeries:
    """Observed vehicle counts per (link, interval)."""

    entries: dict

    def __post_init__(self):
        for (a, h), c in self.entries.items():
            if c < 0:
                raise DataError(f"negative count on link {a} interval {h}")

    @property
    def observed_links(self) -> tuple:
        return tuple(sorted({a for (a, _h) in self.entries}))

    def vector(self, num_intervals: int) -> np.ndarray:
        """Counts ordered by (link, interval); missing pairs read as zero."""
        return np.array([
            self.entries.get((a, h), 0.0)
            for a in self.observed_links
            for h in range(1, num_intervals + 1)
        ])


@dataclass(frozen=True)
class EstimationConfig:
    omega: float = 0.9
    max_outer_iterations: int = 20
    r2_variation_tolerance: float = 1e-3
    max_gradient_steps: int = 500
    step_tolerance: float = 1e-9
    assign: AssignConfig = field(default_factory=AssignConfig)

    def __post_init__(self):
        if not 0.0 <= self.omega <= 1.0:
            raise ConfigError(f"omega must be in [0, 1], got {self.omega}")
        if self.max_outer_iterations < 1:
            raise ConfigError("max_outer_iterations must be >= 1")
        if not self.r2_variation_tolerance > 0:
            raise ConfigError("r2_variation_tolerance must be > 0")


@dataclass(frozen=True)
class TraceRow:
    iteration: int
    objective: float
    r_squared: float
    upper_steps: int


@dataclass
class EstimationResult:
    estimated_demand: ODMatrixSeries
    trace: list
    final_simulation: SimulationResult
    initial_simulation: SimulationResult
    gridlock: bool = False


@dataclass
class UpperLevelSolution:
    demand: ODMatrixSeries
    steps: int
    projected_gradient_norm: float
    non_unique: bool = False


def _key_order(x_prior: ODMatrixSeries):
    return x_prior.keys_sorted()


def _demand_vector(x: ODMatrixSeries, keys) -> np.ndarray:
    if set(x.entries) != set(keys):
        raise DataError("demand index sets differ")
    return np.array([x.entries[k] for k in keys])


def _proportion_matrix(P: AssignmentProportions, keys, counts: LinkCountSeries,
                       num_intervals: int) -> np.ndarray:
    key_idx = {k: i for i, k in enumerate(keys)}
    links = counts.observed_links
    row_idx = {
        (a, h): i
        for i, (a, h) in enumerate(
            (a, h) for a in links for h in range(1, num_intervals + 1)
        )
    }
    mat = np.zeros((len(row_idx), len(keys)))
    for (a, o, d, h, t), p in P.entries.items():
        row = row_idx.get((a, h))
        col = key_idx.get((o, d, t))
        if row is not None and col is not None:
            mat[row, col] = p
    return mat


def objective_value(x, x_prior, P, counts, omega) -> float:
    """Weighted squared deviation from the prior demand and observed counts."""
    keys = _key_order(x_prior)
    xv = _demand_vector(x, keys)
    pv = _demand_vector(x_prior, keys)
    T = x_prior.time_grid.num_intervals
    mat = _proportion_matrix(P, keys, counts, T)
    yv = counts.vector(T)
    demand_term = float(((xv - pv) ** 2).sum())
    count_term = float(((mat @ xv - yv) ** 2).sum())
    return omega * demand_term + (1.0 - omega) * count_term


def objective_gradient(x, x_prior, P, counts, omega) -> dict:
    """Analytic gradient of objective_value with respect to each demand entry."""
    keys = _key_order(x_prior)
    xv = _demand_vector(x, keys)
    pv = _demand_vector(x_prior, keys)
    T = x_prior.time_grid.num_intervals
    mat = _proportion_matrix(P, keys, counts, T)
    yv = counts.vector(T)
    grad = 2.0 * omega * (xv - pv) + 2.0 * (1.0 - omega) * (mat.T @ (mat @ xv - yv))
    return dict(zip(keys, grad.tolist()))


def _solve_vec(mat, yv, pv, omega, max_steps, step_tol):
    """Projected gradient descent with Armijo backtracking, from the prior."""

    def f(v):
        return omega * float(((v - pv) ** 2).sum()) \
            + (1.0 - omega) * float(((mat @ v - yv) ** 2).sum())

    x = np.maximum(pv, 0.0)
    fx = f(x)
    steps = 0
    pg_norm = 0.0
    for _ in range(max_steps):
        grad = 2.0 * omega * (x - pv) + 2.0 * (1.0 - omega) * (mat.T @ (mat @ x - yv))
        pg_norm = float(np.abs(x - np.maximum(x - grad, 0.0)).max()) if x.size else 0.0
        if pg_norm <= step_tol:
            break
        alpha = 1.0
        accepted = False
        for _ in range(60):
            cand = np.maximum(x - alpha * grad, 0.0)
            fc = f(cand)
            if fc <= fx + 1e-4 * float(grad @ (cand - x)):
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            break
        x, fx = cand, fc
        steps += 1
    return x, steps, pg_norm


def upper_level_solve(P, x_prior, counts, config: EstimationConfig) -> UpperLevelSolution:
    """Minimize the estimation objective over x >= 0 with P held fixed.

    For omega = 0 the Gram matrix can be rank deficient; the solver then
    converges to the minimizer nearest the prior along the unresolved
    directions and the result carries a non-unique-solution flag.
    """
    keys = _key_order(x_prior)
    pv = _demand_vector(x_prior, keys)
    T = x_prior.time_grid.num_intervals
    mat = _proportion_matrix(P, keys, counts, T)
    yv = counts.vector(T)
    x, steps, pg_norm = _solve_vec(
        mat, yv, pv, config.omega, config.max_gradient_steps, config.step_tolerance
    )
    non_unique = False
    if config.omega == 0.0 and len(keys):
        non_unique = np.linalg.matrix_rank(mat) < len(keys)
        if non_unique:
            log.warning("omega = 0 with rank-deficient proportions: "
                        "returning the minimum-deviation solution")
    demand = ODMatrixSeries(dict(zip(keys, x.tolist())), x_prior.time_grid)
    return UpperLevelSolution(demand=demand, steps=steps,
                              projected_gradient_norm=pg_norm, non_unique=non_unique)


def _count_fit(sim: SimulationResult, counts: LinkCountSeries, T: int) -> float:
    observed = counts.vector(T)
    simulated = np.array([
        sim.link_flows.get((a, h), 0.0)
        for a in counts.observed_links
        for h in range(1, T + 1)
    ])
    try:
        return r_squared(observed, simulated)
    except DataError:
        return float("nan")


def bilevel_estimate(network: Network, x_prior: ODMatrixSeries,
                     counts: LinkCountSeries,
                     config: EstimationConfig = EstimationConfig()) -> EstimationResult:
    """Iterate simulate -> compare fit -> re-solve demand until the fit settles."""
    for a in counts.observed_links:
        if a not in network.links:
            raise DataError(f"counts reference unknown link {a}")
    T = x_prior.time_grid.num_intervals
    total_demand = x_prior.total()

    x = x_prior
    trace: list = []
    best = None          # (r2, iteration, demand, simulation)
    initial_sim = None
    gridlock = False
    prev_r2 = None
    for k in range(1, config.max_outer_iterations + 1):
        sim = assign(network, x, config.assign)
        if initial_sim is None:
            initial_sim = sim
        if total_demand > 0 and sim.vehicles_unfinished > GRIDLOCK_UNFINISHED_SHARE * total_demand:
            gridlock = True
            log.warning("iteration %d: %.0f%% of demand stuck in the network",
                        k, 100.0 * sim.vehicles_unfinished / total_demand)
        r2 = _count_fit(sim, counts, T)
        obj = objective_value(x, x_prior, sim.proportions, counts, config.omega)
        r2_valid = r2 == r2  # not NaN
        if best is None or (r2_valid and (best[0] != best[0] or r2 > best[0])):
            best = (r2, k, x, sim)
        stop = k == config.max_outer_iterations or (
            prev_r2 is not None and r2 == r2 and prev_r2 == prev_r2
            and abs(r2 - prev_r2) < config.r2_variation_tolerance
        )
        if stop:
            trace.append(TraceRow(k, obj, r2, 0))
            break
        solution = upper_level_solve(sim.proportions, x_prior, counts, config)
        trace.append(TraceRow(k, obj, r2, solution.steps))
        x = solution.demand
        prev_r2 = r2

    _, _, best_x, best_sim = best
    return EstimationResult(
        estimated_demand=best_x,
        trace=trace,
        final_simulation=best_sim,
        initial_simulation=initial_sim,
        gridlock=gridlock,
    )
