"""ARIMA(p, d, q) demand forecasting per OD pair.

Parameters are estimated by conditional least squares with presample
innovations set to zero: ordinary least squares on the lagged series when
q = 0, and a two-stage Hannan-Rissanen regression (long autoregression for
proxy residuals, then least squares on lagged values and lagged residuals)
followed by a single Gauss-Newton refinement of the conditional sum of
squares when q > 0. Near-constant series short-circuit to the mean model,
since fleets of OD demand series routinely contain many almost-empty pairs.

Forecasts iterate the recursion with future innovations at zero, integrate
the differencing back to the original scale, and clamp at zero (demand is
nonnegative).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError
from .metrics import nrmse, r_squared

ZERO_VARIANCE = 1e-12


@dataclass(frozen=True)
class ArimaSpec:
    p: int
    d: int
    q: int

    def __post_init__(self):
        if self.p < 0 or self.d < 0 or self.q < 0:
            raise DataError("ARIMA orders must be nonnegative")
        if self.p + self.q == 0 and (self.p, self.d, self.q) != (0, 0, 0):
            raise DataError("need p + q >= 1 unless the spec is the pure-mean (0,0,0)")

    @property
    def label(self) -> str:
        return f"({self.p},{self.d},{self.q})"

    @property
    def min_length(self) -> int:
        return self.p + self.q + self.d + max(self.p, self.q) + 5

    @classmethod
    def parse(cls, text: str) -> "ArimaSpec":
        parts = text.replace("(", "").replace(")", "").split(",")
        if len(parts) != 3:
            raise DataError(f"cannot parse ARIMA spec {text!r}")
        try:
            p, d, q = (int(s) for s in parts)
        except ValueError as exc:
            raise DataError(f"cannot parse ARIMA spec {text!r}") from exc
        return cls(p, d, q)


@dataclass(frozen=True)
class ArimaModel:
    spec: ArimaSpec
    phi: tuple
    theta: tuple
    c: float
    residuals: tuple
    sigma2: float
    degenerate: bool = False

    @property
    def ar_stationary(self) -> bool:
        """Whether the AR polynomial's roots lie outside the unit circle.

        Reported only; differencing is the stationarity mechanism.
        """
        if not self.phi:
            return True
        roots = np.roots(np.concatenate([[1.0], -np.asarray(self.phi)]))
        return bool((np.abs(roots) < 1.0 - 1e-9).all())


@dataclass(frozen=True)
class DemandSeries:
    od_pair: tuple
    values: tuple
    interval_length: float = 900.0

    def __post_init__(self):
        if any(v < 0 for v in self.values):
            raise DataError(f"negative demand in series for OD {self.od_pair}")


@dataclass(frozen=True)
class CandidateScore:
    label: str
    spec: ArimaSpec | None   # None marks the naive baseline
    nrmse: float
    r_squared: float


@dataclass(frozen=True)
class SelectionReport:
    rows: tuple
    winner: CandidateScore
    flagged: tuple = ()


@dataclass(frozen=True)
class FleetFit:
    models: dict
    flagged: tuple = ()


def _values(series) -> np.ndarray:
    vals = getattr(series, "values", series)
    arr = np.asarray(vals, dtype=float)
    if arr.ndim != 1:
        raise DataError("demand series must be 1-d")
    if not np.isfinite(arr).all():
        raise DataError("demand series contains non-finite values")
    return arr


def difference(series, d: int) -> np.ndarray:
    arr = _values(series)
    if arr.size <= d:
        raise DataError(f"series of length {arr.size} too short to difference {d} times")
    for _ in range(d):
        arr = np.diff(arr)
    return arr


def integrate(diffed, heads) -> np.ndarray:
    """Invert `difference`: `heads` are the leading values dropped per pass."""
    arr = np.asarray(diffed, dtype=float)
    heads = list(heads)
    for head in reversed(heads):
        arr = np.concatenate([[head], head + np.cumsum(arr)])
    return arr


def acf(series, max_lag: int) -> np.ndarray:
    """Autocorrelations for lags 0..max_lag (biased covariance estimator)."""
    arr = _values(series)
    if arr.size <= max_lag:
        raise DataError("series shorter than max_lag")
    centered = arr - arr.mean()
    c0 = float((centered ** 2).mean())
    if c0 < ZERO_VARIANCE:
        raise DataError("zero-variance series has no autocorrelation")
    out = np.empty(max_lag + 1)
    out[0] = 1.0
    n = arr.size
    for k in range(1, max_lag + 1):
        out[k] = float((centered[:-k] * centered[k:]).sum()) / n / c0
    return out


def pacf(series, max_lag: int) -> np.ndarray:
    """Partial autocorrelations via the Durbin-Levinson recursion on the acf."""
    rho = acf(series, max_lag)
    out = np.empty(max_lag + 1)
    out[0] = 1.0
    if max_lag == 0:
        return out
    phi_prev = np.array([rho[1]])
    out[1] = rho[1]
    for k in range(2, max_lag + 1):
        num = rho[k] - float(phi_prev @ rho[k - 1:0:-1])
        den = 1.0 - float(phi_prev @ rho[1:k])
        phi_kk = num / den
        phi_new = np.empty(k)
        phi_new[:-1] = phi_prev - phi_kk * phi_prev[::-1]
        phi_new[-1] = phi_kk
        phi_prev = phi_new
        out[k] = phi_kk
    return out


def _css_residuals(w, phi, theta, c):
    p, q = len(phi), len(theta)
    eps = np.zeros(w.size)
    for t in range(p, w.size):
        acc = w[t] - c
        for j in range(p):
            acc -= phi[j] * w[t - 1 - j]
        for j in range(q):
            if t - 1 - j >= 0:
                acc -= theta[j] * eps[t - 1 - j]
        eps[t] = acc
    return eps


def _ols(rows, target):
    design = np.asarray(rows)
    coef, *_ = np.linalg.lstsq(design, np.asarray(target), rcond=None)
    return coef


def _fit_css(w, spec: ArimaSpec):
    p, q = spec.p, spec.q
    if p == 0 and q == 0:
        c = float(w.mean())
        eps = w - c
        return np.empty(0), np.empty(0), c, eps

    if q == 0:
        rows = [
            np.concatenate([w[t - 1::-1][:p], [1.0]])
            for t in range(p, w.size)
        ]
        coef = _ols(rows, w[p:])
        phi, c = coef[:p], float(coef[p])
        theta = np.empty(0)
    else:
        m = max(p, q, min(10, max(1, w.size // 4)))
        if m >= w.size:
            m = w.size - 1
        long_rows = [
            np.concatenate([w[t - 1::-1][:m], [1.0]])
            for t in range(m, w.size)
        ]
        long_coef = _ols(long_rows, w[m:])
        proxy = np.zeros(w.size)
        for t in range(m, w.size):
            proxy[t] = w[t] - float(long_coef[:m] @ w[t - m:t][::-1]) - long_coef[m]
        start = max(p, q)
        rows = []
        for t in range(start, w.size):
            lagged_w = w[t - 1::-1][:p] if p else np.empty(0)
            lagged_e = np.array([proxy[t - 1 - j] for j in range(q)])
            rows.append(np.concatenate([lagged_w, lagged_e, [1.0]]))
        coef = _ols(rows, w[start:])
        phi, theta, c = coef[:p], coef[p:p + q], float(coef[p + q])
        phi, theta, c = _gauss_newton_refine(w, phi, theta, c)
    eps = _css_residuals(w, phi, theta, c)
    return np.asarray(phi), np.asarray(theta), c, eps


def _gauss_newton_refine(w, phi, theta, c):
    """One Gauss-Newton pass on the conditional sum of squares."""
    p, q = len(phi), len(theta)
    n = w.size
    eps = _css_residuals(w, phi, theta, c)
    nparam = p + q + 1
    jac = np.zeros((n, nparam))
    for t in range(p, n):
        for j in range(p):
            jac[t, j] = -w[t - 1 - j]
        for j in range(q):
            if t - 1 - j >= 0:
                jac[t, p + j] = -eps[t - 1 - j]
        jac[t, p + q] = -1.0
        for l in range(q):
            if t - 1 - l >= p:
                jac[t] -= theta[l] * jac[t - 1 - l]
    step, *_ = np.linalg.lstsq(jac[p:], -eps[p:], rcond=None)
    cand = np.concatenate([phi, theta, [c]]) + step
    phi2, theta2, c2 = cand[:p], cand[p:p + q], float(cand[p + q])
    if float((_css_residuals(w, phi2, theta2, c2) ** 2).sum()) < float((eps ** 2).sum()):
        return phi2, theta2, c2
    return phi, theta, c


def fit_arima(series, spec: ArimaSpec) -> ArimaModel:
    """Estimate ARIMA coefficients for one series by conditional least squares."""
    arr = _values(series)
    if arr.size < spec.min_length:
        raise DataError(
            f"series of length {arr.size} too short for ARIMA{spec.label} "
            f"(needs {spec.min_length})"
        )
    w = difference(arr, spec.d)
    if float(w.var()) < ZERO_VARIANCE:
        c = float(w.mean())
        return ArimaModel(
            spec=spec, phi=(0.0,) * spec.p, theta=(0.0,) * spec.q, c=c,
            residuals=tuple(np.zeros(w.size)), sigma2=0.0, degenerate=True,
        )
    phi, theta, c, eps = _fit_css(w, spec)
    used = eps[spec.p:]
    sigma2 = float((used ** 2).mean()) if used.size else 0.0
    return ArimaModel(
        spec=spec, phi=tuple(float(v) for v in phi),
        theta=tuple(float(v) for v in theta), c=c,
        residuals=tuple(float(v) for v in eps), sigma2=sigma2,
    )


def forecast(model: ArimaModel, history, steps: int) -> np.ndarray:
    """Predict `steps` future values from the end of `history`.

    Future innovations are zero; earlier predictions fill in for lags that
    run past the end of the data. Predictions are clamped at zero after
    integrating the differencing back to the original scale.
    """
    if steps < 1:
        raise DataError("steps must be >= 1")
    arr = _values(history)
    spec = model.spec
    if arr.size < spec.p + spec.d:
        raise DataError("history too short to forecast from")
    w = difference(arr, spec.d) if spec.d else arr.copy()
    eps = _css_residuals(w, np.asarray(model.phi), np.asarray(model.theta), model.c)

    w_ext = list(w)
    eps_ext = list(eps)
    for _ in range(steps):
        t = len(w_ext)
        val = model.c
        for j, ph in enumerate(model.phi):
            val += ph * w_ext[t - 1 - j]
        for j, th in enumerate(model.theta):
            idx = t - 1 - j
            if 0 <= idx < len(eps_ext):
                val += th * eps_ext[idx]
        w_ext.append(val)
        eps_ext.append(0.0)
    raw = np.asarray(w_ext[len(w):])

    if spec.d:
        # integrate using the trailing values of each differencing stage
        tails = []
        stage = arr
        for _ in range(spec.d):
            tails.append(stage[-1])
            stage = np.diff(stage)
        preds = raw
        for tail in reversed(tails):
            preds = tail + np.cumsum(preds)
        raw = preds
    return np.maximum(raw, 0.0)


def naive_forecast(history, steps: int) -> np.ndarray:
    """Repeat the last observed value."""
    arr = _values(history)
    if arr.size == 0:
        raise DataError("empty history")
    if steps < 1:
        raise DataError("steps must be >= 1")
    return np.full(steps, arr[-1])


def fit_fleet(od_series, spec: ArimaSpec) -> FleetFit:
    """One model per OD pair, all sharing `spec`.

    Pairs whose series cannot be fitted (too short, degenerate fit) fall
    back to the mean model and are flagged rather than failing the fleet.
    """
    models = {}
    flagged = []
    for series in sorted(od_series, key=lambda s: s.od_pair):
        try:
            models[series.od_pair] = fit_arima(series, spec)
        except DataError:
            arr = _values(series)
            mean = float(arr.mean()) if arr.size else 0.0
            models[series.od_pair] = ArimaModel(
                spec=spec, phi=(0.0,) * spec.p, theta=(0.0,) * spec.q,
                c=mean if spec.d == 0 else 0.0,
                residuals=(), sigma2=0.0, degenerate=True,
            )
            flagged.append(series.od_pair)
    return FleetFit(models=models, flagged=tuple(flagged))


def select_model(fleet, candidates, validation_intervals: int) -> SelectionReport:
    """Compare forecasting specs on a held-out window pooled over the fleet.

    Every series is split into a training prefix and the last
    `validation_intervals` points; each candidate is fitted per series on
    the prefix and scored by NRMSE pooled over all series and validation
    points, with the naive last-value baseline always included. The winner
    is the row with the smallest NRMSE (earlier rows win ties).
    """
    fleet = sorted(fleet, key=lambda s: s.od_pair)
    if not fleet:
        raise DataError("empty series fleet")
    if validation_intervals < 1:
        raise DataError("validation_intervals must be >= 1")
    for series in fleet:
        if len(series.values) <= validation_intervals:
            raise DataError(
                f"series for OD {series.od_pair} not longer than the validation window"
            )

    actual = np.concatenate([
        _values(s)[-validation_intervals:] for s in fleet
    ])
    flagged = []

    def score(label, preds):
        try:
            r2 = r_squared(actual, preds, mean_mode="observed")
        except DataError:
            r2 = float("nan")
        return CandidateScore(label=label, spec=None, nrmse=nrmse(actual, preds), r_squared=r2)

    naive_preds = np.concatenate([
        naive_forecast(_values(s)[:-validation_intervals], validation_intervals)
        for s in fleet
    ])
    rows = [score("naive", naive_preds)]

    for spec in candidates:
        preds = []
        for series in fleet:
            train = _values(series)[:-validation_intervals]
            try:
                model = fit_arima(train, spec)
                preds.append(forecast(model, train, validation_intervals))
            except DataError:
                flagged.append((series.od_pair, spec.label))
                preds.append(naive_forecast(train, validation_intervals))
        row = score(f"ARIMA{spec.label}", np.concatenate(preds))
        rows.append(CandidateScore(row.label, spec, row.nrmse, row.r_squared))

    best = min(range(len(rows)),
               key=lambda i: (rows[i].nrmse if rows[i].nrmse == rows[i].nrmse else float("inf"), i))
    return SelectionReport(rows=tuple(rows), winner=rows[best], flagged=tuple(flagged))
