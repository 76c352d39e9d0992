"""Transport-coefficient estimators and their statistics.

Every estimator reduces per-realization response series on a uniform time
grid: the naive transient and subtraction estimators integrate R (or the
coupled difference) and divide by the forcing magnitude; Green-Kubo and TTCF
weight the integral by the conjugate response at time zero; NEMD
time-averages a single driven trajectory.

Aggregation across realizations goes through :class:`SeriesAccumulator`,
which keeps counts, sums and sums of squares per time index for both the
instantaneous and the time-integrated series. Merging accumulators is
associative and order-insensitive (up to roundoff), which is what makes the
parallel harness reductions deterministic for a fixed chunking.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import cumulative_trapezoid

__all__ = [
    "EstimatorError",
    "EstimatorResult",
    "NEMDResult",
    "ResponseSeries",
    "SeriesAccumulator",
    "VarianceTable",
    "green_kubo_estimate",
    "integrate_series",
    "naive_transient_estimate",
    "nemd_estimate",
    "result_from_accumulator",
    "subtraction_estimate",
    "ttcf_estimate",
    "variance_report",
]


class EstimatorError(ValueError):
    """Misuse of an estimator (bad magnitude, missing inputs, grid mismatch)."""


def integrate_series(values, dt):
    """Running trapezoidal integral along the last axis; curve[0] = 0."""
    values = np.asarray(values, dtype=float)
    if values.shape[-1] < 2:
        raise EstimatorError("need at least 2 samples to integrate")
    return cumulative_trapezoid(values, dx=dt, axis=-1, initial=0.0)


@dataclass
class ResponseSeries:
    """Per-realization samples of a response observable on a uniform grid.

    values : (K, n_t) array, R evaluated along each trajectory.
    paired : optional (K, n_t) array, R along the coupled equilibrium
        trajectories (subtraction estimator).
    weights : optional (K,) array, conjugate response at time zero
        (Green-Kubo / TTCF).
    """

    dt: float
    values: np.ndarray
    paired: np.ndarray | None = None
    weights: np.ndarray | None = None

    def __post_init__(self):
        self.values = np.atleast_2d(np.asarray(self.values, dtype=float))
        if self.paired is not None:
            self.paired = np.atleast_2d(np.asarray(self.paired, dtype=float))
            if self.paired.shape != self.values.shape:
                raise EstimatorError("paired series must match values shape")
        if self.weights is not None:
            self.weights = np.asarray(self.weights, dtype=float)
            if self.weights.shape != (self.values.shape[0],):
                raise EstimatorError("weights must be one scalar per realization")
        if self.dt <= 0:
            raise EstimatorError("dt must be positive")

    @property
    def n_realizations(self):
        return self.values.shape[0]

    @property
    def n_times(self):
        return self.values.shape[1]

    @property
    def times(self):
        return self.dt * np.arange(self.n_times)


class SeriesAccumulator:
    """Streaming moments of normalized response series across realizations.

    Tracks, per time index, the count and the (sum, sum of squares) of both
    the instantaneous samples and their running trapezoidal integrals.
    """

    def __init__(self, dt, n_times):
        self.dt = float(dt)
        self.n_times = int(n_times)
        self.count = 0
        self.sum_inst = np.zeros(n_times)
        self.sumsq_inst = np.zeros(n_times)
        self.sum_int = np.zeros(n_times)
        self.sumsq_int = np.zeros(n_times)

    def add(self, values):
        """Accumulate a (K, n_t) batch of per-realization samples."""
        values = np.atleast_2d(np.asarray(values, dtype=float))
        if values.shape[1] != self.n_times:
            raise EstimatorError("batch grid length does not match accumulator")
        if self.n_times >= 2:
            curves = integrate_series(values, self.dt)
        else:
            curves = np.zeros_like(values)
        self.count += values.shape[0]
        self.sum_inst += values.sum(axis=0)
        self.sumsq_inst += (values * values).sum(axis=0)
        self.sum_int += curves.sum(axis=0)
        self.sumsq_int += (curves * curves).sum(axis=0)

    def merge(self, other):
        """In-place associative merge; returns self."""
        if other.n_times != self.n_times or other.dt != self.dt:
            raise EstimatorError("cannot merge accumulators on different grids")
        self.count += other.count
        self.sum_inst += other.sum_inst
        self.sumsq_inst += other.sumsq_inst
        self.sum_int += other.sum_int
        self.sumsq_int += other.sumsq_int
        return self

    @property
    def times(self):
        return self.dt * np.arange(self.n_times)

    @staticmethod
    def _moments(s, s2, n):
        mean = s / n
        if n > 1:
            var = np.maximum((s2 - n * mean * mean) / (n - 1), 0.0)
        else:
            var = np.zeros_like(mean)
        return mean, var

    def integrated_moments(self):
        return self._moments(self.sum_int, self.sumsq_int, max(self.count, 1))

    def instantaneous_moments(self):
        return self._moments(self.sum_inst, self.sumsq_inst, max(self.count, 1))


@dataclass
class EstimatorResult:
    """Estimate plus mean/error curves and per-time sample variances.

    ``mean_curve`` is the across-realization mean of the integrated response
    at each grid time; ``stderr_curve`` its standard error
    sqrt(variance / K). ``variance_at`` maps requested times to the sample
    variance (ddof = 1) of the per-realization estimator truncated there.
    """

    estimator: str
    eta: float | None
    estimate: float
    estimate_stderr: float
    times: np.ndarray
    mean_curve: np.ndarray
    stderr_curve: np.ndarray
    inst_mean: np.ndarray
    inst_stderr: np.ndarray
    variance_at: dict
    n_realizations: int

    def write_csv(self, path):
        """Response curves: t, instantaneous mean/stderr, integrated mean/stderr."""
        with open(path, "w") as fh:
            fh.write("t,inst_mean,inst_stderr,int_mean,int_stderr\n")
            for row in zip(self.times, self.inst_mean, self.inst_stderr,
                           self.mean_curve, self.stderr_curve):
                fh.write(",".join(f"{x:.17g}" for x in row) + "\n")


def _time_index(t, dt, n_times):
    i = int(round(t / dt))
    if i < 0 or i >= n_times or abs(i * dt - t) > 1e-9 * max(1.0, abs(t)):
        raise EstimatorError(f"time {t} is not on the sampling grid")
    return i


def result_from_accumulator(acc, estimator, eta, T=None, variance_times=()):
    """Finalize streamed moments into an :class:`EstimatorResult`.

    The accumulator must already hold the normalized integrand of the
    estimator in question (e.g. R/eta for the naive transient); this is the
    entry point used by the parallel harness.
    """
    n = acc.count
    mean_int, var_int = acc.integrated_moments()
    mean_inst, var_inst = acc.instantaneous_moments()
    stderr_int = np.sqrt(var_int / max(n, 1))
    stderr_inst = np.sqrt(var_inst / max(n, 1))
    times = acc.times
    iT = acc.n_times - 1 if T is None else _time_index(T, acc.dt, acc.n_times)
    variance_at = {}
    for t in variance_times:
        variance_at[float(t)] = float(var_int[_time_index(t, acc.dt, acc.n_times)])
    variance_at.setdefault(float(times[iT]), float(var_int[iT]))
    return EstimatorResult(
        estimator=estimator,
        eta=eta,
        estimate=float(mean_int[iT]),
        estimate_stderr=float(stderr_int[iT]),
        times=times,
        mean_curve=mean_int,
        stderr_curve=stderr_int,
        inst_mean=mean_inst,
        inst_stderr=stderr_inst,
        variance_at=variance_at,
        n_realizations=n,
    )


def _accumulate(values, dt):
    acc = SeriesAccumulator(dt, np.atleast_2d(values).shape[1])
    acc.add(values)
    return acc


def naive_transient_estimate(series, eta, T=None, variance_times=()):
    """Mean over realizations of (1/eta) * int_0^T R(X_t) dt."""
    if eta == 0.0:
        raise EstimatorError("division by zero forcing: eta must be nonzero")
    acc = _accumulate(series.values / eta, series.dt)
    return result_from_accumulator(acc, "naive_transient", eta, T, variance_times)


def subtraction_estimate(series, eta, T=None, variance_times=()):
    """Coupled-difference estimator: (1/eta) * int_0^T [R(X_t) - R(Y_t)] dt."""
    if eta == 0.0:
        raise EstimatorError("division by zero forcing: eta must be nonzero")
    if series.paired is None:
        raise EstimatorError("subtraction estimator needs the paired series")
    acc = _accumulate((series.values - series.paired) / eta, series.dt)
    return result_from_accumulator(acc, "subtraction", eta, T, variance_times)


def green_kubo_estimate(series, T=None, variance_times=()):
    """Equilibrium correlation estimator: mean of S(X_0) * int_0^T R(X_t) dt."""
    if series.weights is None:
        raise EstimatorError("Green-Kubo estimator needs per-realization weights")
    acc = _accumulate(series.weights[:, None] * series.values, series.dt)
    return result_from_accumulator(acc, "green_kubo", None, T, variance_times)


def ttcf_estimate(series, eta, T=None, recenter=False, steady_mean=None,
                  variance_times=()):
    """Transient-correlation estimator on driven trajectories started at equilibrium.

    Plain: mean of S(Y_0) * int_0^T R(Y_t) dt, which converges to the full
    nonlinear response (E_eta(R) - E_0(R)) / eta as T grows, for any eta.
    Recentered: R is replaced by R - steady_mean before integrating, which
    removes the O(T^2) variance growth while leaving the expectation
    unchanged.
    """
    if series.weights is None:
        raise EstimatorError("TTCF estimator needs per-realization weights")
    if recenter:
        if steady_mean is None:
            raise EstimatorError("missing steady-state estimate for recentering")
        values = series.values - steady_mean
    else:
        values = series.values
    acc = _accumulate(series.weights[:, None] * values, series.dt)
    name = "ttcf_recentered" if recenter else "ttcf"
    return result_from_accumulator(acc, name, eta, T, variance_times)


@dataclass(frozen=True)
class NEMDResult:
    """Steady-state time average of one driven trajectory.

    ``rate`` is the transport-coefficient estimate mean(R)/eta; ``steady_mean``
    the undivided average of R (usable for TTCF recentering). Standard errors
    come from batch means over the post-burn-in window.
    """

    rate: float
    rate_stderr: float
    steady_mean: float
    steady_mean_stderr: float
    n_samples: int


def nemd_estimate(values, dt, eta, burn_in=0.0, n_batches=20):
    """Time-average estimator over one long driven trajectory.

    ``values`` are R samples on the uniform grid of one trajectory; the
    average runs over [burn_in, T]. Requires eta != 0 and burn_in < T.
    """
    if eta == 0.0:
        raise EstimatorError("division by zero forcing: eta must be nonzero")
    values = np.asarray(values, dtype=float).reshape(-1)
    total_time = dt * (len(values) - 1)
    if burn_in >= total_time:
        raise EstimatorError("burn-in must be shorter than the trajectory")
    start = int(np.ceil(burn_in / dt))
    window = values[start:]
    mean = float(window.mean())
    nb = max(2, min(n_batches, len(window)))
    batches = np.array_split(window, nb)
    bmeans = np.array([b.mean() for b in batches])
    se_mean = float(bmeans.std(ddof=1) / np.sqrt(nb))
    return NEMDResult(
        rate=mean / eta,
        rate_stderr=se_mean / abs(eta),
        steady_mean=mean,
        steady_mean_stderr=se_mean,
        n_samples=len(window),
    )


@dataclass
class VarianceTable:
    """Rows (eta, T, var_naive, var_subtraction, ratio)."""

    rows: list = field(default_factory=list)

    def append(self, eta, t, var_naive, var_sub):
        ratio = var_naive / var_sub if var_sub > 0 else float("inf")
        self.rows.append((eta, t, var_naive, var_sub, ratio))

    def write_csv(self, path):
        with open(path, "w") as fh:
            fh.write("eta,T,var_naive,var_subtraction,ratio\n")
            for row in self.rows:
                fh.write(",".join(f"{x:.17g}" for x in row) + "\n")

    def format_text(self):
        header = f"{'eta':>10} {'T':>8} {'var_naive':>14} {'var_sub':>14} {'ratio':>12}"
        lines = [header, "-" * len(header)]
        for eta, t, vn, vs, ratio in self.rows:
            lines.append(f"{eta:>10.4g} {t:>8.4g} {vn:>14.6g} {vs:>14.6g} {ratio:>12.5g}")
        return "\n".join(lines)


def variance_report(entries, times):
    """Variance comparison between naive and subtraction estimators.

    ``entries`` is an iterable of (naive_result, subtraction_result) pairs
    sharing grid and realization count; ``times`` the report times.
    """
    table = VarianceTable()
    for naive, sub in entries:
        if naive.n_realizations != sub.n_realizations:
            raise EstimatorError("naive and subtraction results must share K")
        if len(naive.times) != len(sub.times):
            raise EstimatorError("naive and subtraction results must share the grid")
        for t in times:
            try:
                vn = naive.variance_at[float(t)]
                vs = sub.variance_at[float(t)]
            except KeyError:
                raise EstimatorError(
                    f"variance at t={t} was not requested when estimating"
                ) from None
            table.append(naive.eta, t, vn, vs)
    return table
