"""Goodness-of-fit measures: R squared, NRMSE and RMSE."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DataError


@dataclass(frozen=True)
class FitReport:
    r_squared: float
    nrmse: float
    rmse: float
    n_points: int


def _aligned(a, b, min_len=1):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise DataError("series must be 1-d and of equal length")
    if a.size < min_len:
        raise DataError(f"series too short ({a.size} < {min_len})")
    return a, b


def r_squared(observed, simulated, mean_mode: str = "simulated") -> float:
    """1 - sum((obs - sim)^2) / sum((obs - mean)^2).

    `mean_mode` picks the grand mean in the denominator: "simulated" (the
    default, used everywhere calibration fit is reported) or "observed"
    (the textbook definition). The value can be negative for fits worse
    than the grand-mean predictor.
    """
    obs, sim = _aligned(observed, simulated, min_len=2)
    if mean_mode == "simulated":
        grand_mean = float(sim.mean())
    elif mean_mode == "observed":
        grand_mean = float(obs.mean())
    else:
        raise DataError(f"unknown mean_mode {mean_mode!r}")
    denom = float(((obs - grand_mean) ** 2).sum())
    if denom <= 0.0:
        raise DataError("degenerate R^2 denominator (no variation around the mean)")
    num = float(((obs - sim) ** 2).sum())
    return 1.0 - num / denom


def nrmse(actual, predicted) -> float:
    """sqrt( sum((x - xhat)^2) / sum((x + xhat)^2) ) over aligned series.

    Both series must be nonnegative, which bounds the result to [0, 1].
    """
    act, pred = _aligned(actual, predicted)
    if (act < 0).any() or (pred < 0).any():
        raise DataError("nrmse requires nonnegative series")
    denom = float(((act + pred) ** 2).sum())
    if denom <= 0.0:
        raise DataError("degenerate NRMSE denominator (both series identically zero)")
    return math.sqrt(float(((act - pred) ** 2).sum()) / denom)


def rmse(actual, predicted) -> float:
    act, pred = _aligned(actual, predicted)
    return math.sqrt(float(((act - pred) ** 2).mean()))


def fit_report(actual, predicted, mean_mode: str = "simulated") -> FitReport:
    act, pred = _aligned(actual, predicted)
    try:
        r2 = r_squared(act, pred, mean_mode=mean_mode)
    except DataError:
        r2 = float("nan")
    try:
        nr = nrmse(act, pred)
    except DataError:
        nr = float("nan")
    return FitReport(r_squared=r2, nrmse=nr, rmse=rmse(act, pred), n_points=act.size)
