"""Goodness-of-fit diagnostics and estimability experiments.

Residuals are compensator increments between consecutive same-type events;
under the true model they are i.i.d. unit exponentials (time rescaling), so
Q-Q tables against Exp(1) and Kolmogorov-Smirnov statistics quantify fit
quality.  The conditional-maximum scan evaluates the profile surface over a
decay grid and counts its local maxima, which drives the sample-size /
branching-ratio success-rate experiment.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit
from scipy import stats as sps

from .estimate import _solve_inner, default_beta_axes, profile_scan
from .likelihood import as_seconds
from .model import ConstraintProfile, ModelParams, ParamMap
from .simulate import INIT_STATIONARY_MEAN, SimConfig, simulate_path

PLATEAU_TOL = 1e-6


# ---------------------------------------------------------------------------
# residuals
# ---------------------------------------------------------------------------

@njit(cache=True)
def _compensator_walk(times, types0, mu, alpha, beta, duration):
    """Cumulative compensator of every target at each event time and at T.

    Returns (cum, total) where cum[n, i] is the integral of lambda_i over
    [0, t_n] evaluated in closed form, and total[i] the integral over [0, T].
    """
    n = times.size
    K = alpha.shape[0]
    m = mu.shape[0]
    g = np.zeros((K, m, m))
    cum = np.empty((n, m))
    acc = np.zeros(m)
    t_prev = 0.0
    for idx in range(n):
        dt = times[idx] - t_prev
        for i in range(m):
            seg = mu[i] * dt
            for k in range(K):
                for j in range(m):
                    if g[k, i, j] > 0.0:
                        seg += (
                            alpha[k, i, j]
                            * g[k, i, j]
                            * (1.0 - np.exp(-beta[k, i, j] * dt))
                            / beta[k, i, j]
                        )
            acc[i] += seg
            cum[idx, i] = acc[i]
        if dt > 0.0:
            for k in range(K):
                for i in range(m):
                    for j in range(m):
                        g[k, i, j] *= np.exp(-beta[k, i, j] * dt)
        d = types0[idx]
        for k in range(K):
            for i in range(m):
                g[k, i, d] += 1.0
        t_prev = times[idx]

    dt = duration - t_prev
    total = np.empty(m)
    for i in range(m):
        seg = mu[i] * dt
        for k in range(K):
            for j in range(m):
                if g[k, i, j] > 0.0:
                    seg += (
                        alpha[k, i, j]
                        * g[k, i, j]
                        * (1.0 - np.exp(-beta[k, i, j] * dt))
                        / beta[k, i, j]
                    )
        total[i] = acc[i] + seg
    return cum, total


@dataclass(frozen=True)
class ResidualSet:
    """Compensator increments of a fitted model on its stream.

    per_type holds the increments between consecutive same-type events (the
    sets whose union is used for Q-Q and KS checks); the opening segment from
    the window start and the censored closing segment to the horizon are kept
    separately so that the total per-type compensator is available exactly.
    """

    per_type: list
    initial: np.ndarray
    tail: np.ndarray
    total_compensator: np.ndarray

    def pooled(self):
        """Union of the per-type increment sets."""
        if not self.per_type:
            return np.zeros(0)
        return np.concatenate([r for r in self.per_type])

    def counts(self):
        return np.array([r.size for r in self.per_type])


def residuals(params, stream):
    """Closed-form compensator increments of the stream under params."""
    if stream.m != params.m:
        raise ValueError("stream and params dimensions differ")
    data = as_seconds(stream)
    cum, total = _compensator_walk(
        data.times, data.types0, params.mu, params.alpha, params.beta_full(), data.duration
    )
    per_type, initial, tail = [], np.full(params.m, np.nan), np.full(params.m, np.nan)
    for i in range(params.m):
        vals = cum[data.types0 == i, i]
        per_type.append(np.diff(vals))
        if vals.size:
            initial[i] = vals[0]
            tail[i] = total[i] - vals[-1]
    return ResidualSet(per_type=per_type, initial=initial, tail=tail, total_compensator=total)


def qq_exponential(residual_values):
    """Sorted residuals against unit-exponential plotting quantiles.

    Returns an (n, 2) table of (empirical quantile, Exp(1) quantile) using the
    plotting positions (i - 0.5) / n.
    """
    values = np.sort(np.asarray(residual_values, dtype=float))
    n = values.size
    if n == 0:
        raise ValueError("empty residual set")
    theo = -np.log1p(-(np.arange(1, n + 1) - 0.5) / n)
    return np.column_stack([values, theo])


def qq_max_deviation(qq_table, central=0.98):
    """Max |empirical - theoretical| over the central quantile band."""
    n = qq_table.shape[0]
    pos = (np.arange(1, n + 1) - 0.5) / n
    edge = (1.0 - central) / 2.0
    keep = (pos >= edge) & (pos <= 1.0 - edge)
    return float(np.abs(qq_table[keep, 0] - qq_table[keep, 1]).max())


def ks_exponential(residual_values):
    """Kolmogorov-Smirnov statistic and p-value against Exp(1)."""
    res = sps.kstest(np.asarray(residual_values, dtype=float), "expon")
    return float(res.statistic), float(res.pvalue)


# ---------------------------------------------------------------------------
# conditional-maximum scan
# ---------------------------------------------------------------------------

def count_local_maxima(values, tol=PLATEAU_TOL):
    """Number of strict local maxima of a 1-d or 2-d grid of values.

    Neighboring cells within ``tol`` of each other are merged into plateaus
    first; a plateau is a local maximum when every adjacent cell outside it is
    strictly lower.  Counting uses only the value ordering, so it is invariant
    to monotone reparameterizations of the grid coordinates.
    """
    values = np.asarray(values, dtype=float)
    if values.ndim == 1:
        values = values[:, None]
    if values.ndim != 2:
        raise ValueError("values must be 1-d or 2-d")
    ni, nj = values.shape
    labels = -np.ones((ni, nj), dtype=np.intp)

    def neighbors(i, j):
        if i > 0:
            yield i - 1, j
        if i < ni - 1:
            yield i + 1, j
        if j > 0:
            yield i, j - 1
        if j < nj - 1:
            yield i, j + 1

    n_clusters = 0
    for i in range(ni):
        for j in range(nj):
            if labels[i, j] >= 0:
                continue
            stack = [(i, j)]
            labels[i, j] = n_clusters
            while stack:
                ci, cj = stack.pop()
                for qi, qj in neighbors(ci, cj):
                    if labels[qi, qj] < 0 and abs(values[qi, qj] - values[ci, cj]) <= tol:
                        labels[qi, qj] = n_clusters
                        stack.append((qi, qj))
            n_clusters += 1

    is_max = np.ones(n_clusters, dtype=bool)
    for i in range(ni):
        for j in range(nj):
            c = labels[i, j]
            for qi, qj in neighbors(i, j):
                if labels[qi, qj] != c and values[qi, qj] >= values[i, j]:
                    is_max[c] = False
    return int(is_max.sum())


@dataclass(frozen=True)
class ScanResult:
    """Profile surface over a decay grid with its local-maximum census."""

    axes: list
    values: np.ndarray
    n_local_max: int
    best_beta: np.ndarray
    best_value: float
    failures: list


def scan_conditional_max(stream, K, beta_grid=None,
                         profile=ConstraintProfile.SCALAR_PER_KERNEL, tol=PLATEAU_TOL):
    """Evaluate the conditional maximum over a decay grid and count maxima.

    The grid is one axis per free decay coordinate (one- or two-dimensional
    scans are supported).  Inner-solve failures are recorded per point and the
    affected cells excluded from the census.
    """
    data = as_seconds(stream)
    pm = ParamMap(profile, data.m, K)
    if pm.n_beta not in (1, 2):
        raise ValueError("scan supports one or two free decay coordinates")
    axes = beta_grid if beta_grid is not None else default_beta_axes(data, pm)
    axes = [np.asarray(a, dtype=float) for a in axes]
    if len(axes) != pm.n_beta:
        raise ValueError(f"grid must supply {pm.n_beta} axes")
    values, solutions, failures = profile_scan(data, pm, axes)
    flat_best = int(np.argmax(values))
    combo = np.unravel_index(flat_best, values.shape)
    best_beta = np.array([axes[c][i] for c, i in enumerate(combo)])
    return ScanResult(
        axes=axes,
        values=values,
        n_local_max=count_local_maxima(values, tol=tol),
        best_beta=best_beta,
        best_value=float(values.flat[flat_best]),
        failures=failures,
    )


# ---------------------------------------------------------------------------
# success-rate experiment
# ---------------------------------------------------------------------------

def _simulate_fixed_count(params, n_events, seed_seq, rate_hint):
    """Simulate until at least n_events arrive, then truncate at the n-th."""
    horizon = 1.5 * n_events / rate_hint + 10.0
    for attempt in range(8):
        config = SimConfig(horizon=horizon, seed=0, init=INIT_STATIONARY_MEAN)
        stream = simulate_path(params, config, seed_seq)
        if stream.n_events >= n_events:
            return stream.head(n_events)
        horizon *= 2.0
    raise RuntimeError(f"could not reach {n_events} events")


@dataclass(frozen=True)
class SuccessRateRow:
    branching: float
    n_events: int
    reps: int
    successes: int

    @property
    def rate(self):
        return self.successes / self.reps


def success_rate_experiment(branching_list, size_list, reps, seed,
                            beta_true=1.0, mu_true=0.2, grid=None):
    """Unique-local-maximum rate of the univariate profile surface.

    For each (branching ratio, sample size) cell, ``reps`` univariate paths
    are simulated, the conditional maximum is scanned over a decay grid, and
    a replication counts as a success exactly when the scanned surface has a
    single local maximum.  Returns a list of SuccessRateRow.
    """
    root = np.random.SeedSequence(seed)
    rows = []
    for branching in branching_list:
        params = ModelParams(
            mu=[mu_true],
            alpha=[[[branching * beta_true]]],
            beta=[beta_true],
            constraint_profile=ConstraintProfile.SCALAR_PER_KERNEL,
        )
        rate_hint = mu_true / (1.0 - branching)
        for n_events in size_list:
            successes = 0
            for rep in range(reps):
                child = root.spawn(1)[0]
                stream = _simulate_fixed_count(params, n_events, child, rate_hint)
                axes = grid if grid is not None else None
                scan = scan_conditional_max(stream, K=1, beta_grid=axes)
                if scan.n_local_max == 1:
                    successes += 1
            rows.append(SuccessRateRow(branching=float(branching), n_events=int(n_events),
                                       reps=int(reps), successes=successes))
    return rows
