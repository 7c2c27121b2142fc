"""Exact log-likelihood of the multi-kernel model and its building blocks.

For an observation window of length T (seconds, measured from the stream's
window start) the log-likelihood is

    L = sum_i [ sum_n log lambda_i(t_in) - integral_0^T lambda_i(u) du ]

with left limits at jump times, so an event never excites itself.  Excitation
accumulated before the window start is dropped; the resulting truncation error
decays like exp(-beta * t_first).

Two per-event quantity families make evaluation linear in the event count:

    a[n, k, j] = sum over earlier type-(j+1) events of exp(-beta[k, d_n, j] * gap)
                 (decayed event pressure at event n toward its own type d_n)
    b[n, k, i] = (1 - exp(-beta[k, i, j_n] * (T - t_n))) / beta[k, i, j_n]
                 (compensator weight of source event n toward target i)

so that lambda at event n is mu[d_n] + sum_kj alpha[k, d_n, j] a[n, k, j] and
the integral is mu_i T + sum over sources of alpha * b.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from .model import ParamMap


@dataclass(frozen=True)
class StreamData:
    """Seconds-domain view of an event stream used by all likelihood code."""

    times: np.ndarray    # (n,) float64, seconds from window start, increasing
    types0: np.ndarray   # (n,) int64, zero-based event types
    duration: float      # window length in seconds
    m: int

    @property
    def n(self):
        return self.times.size

    def counts(self):
        return np.bincount(self.types0, minlength=self.m)


def as_seconds(stream):
    """Convert an EventStream to the float-seconds representation."""
    return StreamData(
        times=stream.times_seconds(),
        types0=(stream.types - 1).astype(np.int64),
        duration=stream.duration,
        m=stream.m,
    )


@njit(cache=True)
def _pressure_walk(times, types0, beta):
    """Decayed unit event pressure at each event toward its own type.

    Maintains the running state g[k, i, j] = sum of exp(-beta[k, i, j] * gap)
    over past type-(j+1) events and reads row d (the event's own type) just
    before adding the event's own unit jump.
    """
    n = times.size
    K = beta.shape[0]
    m = beta.shape[1]
    g = np.zeros((K, m, m))
    out = np.empty((n, K, m))
    t_prev = 0.0
    for idx in range(n):
        dt = times[idx] - t_prev
        if dt < 0.0:
            raise ValueError("event times must be nondecreasing")
        if dt > 0.0:
            for k in range(K):
                for i in range(m):
                    for j in range(m):
                        g[k, i, j] *= np.exp(-beta[k, i, j] * dt)
        d = types0[idx]
        for k in range(K):
            for j in range(m):
                out[idx, k, j] = g[k, d, j]
        for k in range(K):
            for i in range(m):
                g[k, i, d] += 1.0
        t_prev = times[idx]
    return out


def _compensator_weights(times, types0, beta, duration):
    """Per-source-event compensator weights b[n, k, i]."""
    rem = duration - times
    bsel = beta[:, :, types0]                            # (K, m, n)
    out = -np.expm1(-bsel * rem[None, None, :]) / bsel
    return np.ascontiguousarray(out.transpose(2, 0, 1))


@njit(cache=True)
def _b_totals_walk(times, types0, beta, duration):
    """Summed compensator weights by (kernel, target, source) without per-event storage."""
    n = times.size
    K = beta.shape[0]
    m = beta.shape[1]
    out = np.zeros((K, m, m))
    for idx in range(n):
        rem = duration - times[idx]
        j = types0[idx]
        for k in range(K):
            for i in range(m):
                b = beta[k, i, j]
                out[k, i, j] += (1.0 - np.exp(-b * rem)) / b
    return out


@dataclass(frozen=True)
class SufficientStats:
    """Per-event statistics of a stream at fixed decay rates.

    a : (n, K, m) decayed event-pressure sums, see module docstring
    b : (n, K, m) compensator weights of each source event, or None when the
        stats were built totals-only for the optimizer hot path
    """

    a: np.ndarray
    b: np.ndarray | None
    beta_full: np.ndarray
    data: StreamData
    _b_totals: np.ndarray = None

    def b_totals(self):
        """Summed compensator weights, shape (K, m, m) indexed [k, i, j]."""
        return self._b_totals


def sufficient_stats(beta_full, stream_or_data, per_event_b=True):
    """Compute SufficientStats for the given dense (K, m, m) decay array.

    ``per_event_b=False`` skips the per-event compensator weights and stores
    only their (K, m, m) totals, which is all the likelihood needs.
    """
    data = stream_or_data if isinstance(stream_or_data, StreamData) else as_seconds(stream_or_data)
    beta_full = np.ascontiguousarray(beta_full, dtype=float)
    if beta_full.ndim != 3 or beta_full.shape[1:] != (data.m, data.m):
        raise ValueError(f"beta must have shape (K, {data.m}, {data.m})")
    if np.any(np.diff(data.times) <= 0):
        raise ValueError("stream must be strictly increasing in time")
    K = beta_full.shape[0]
    if data.n:
        a = _pressure_walk(data.times, data.types0, beta_full)
        b = None
        if per_event_b:
            b = _compensator_weights(data.times, data.types0, beta_full, data.duration)
        totals = _b_totals_walk(data.times, data.types0, beta_full, data.duration)
    else:
        a = np.zeros((0, K, data.m))
        b = np.zeros((0, K, data.m)) if per_event_b else None
        totals = np.zeros((K, data.m, data.m))
    return SufficientStats(a=a, b=b, beta_full=beta_full, data=data, _b_totals=totals)


class ConditionalObjective:
    """Concave log-likelihood in (mu, alpha) at fixed decay rates.

    Precomputes per-target design matrices from SufficientStats so repeated
    evaluations during optimization are plain matrix-vector products over a
    reduced free vector defined by a ParamMap (mu block then alpha block).
    """

    def __init__(self, stats, pm):
        self.pm = pm
        self.data = stats.data
        m, K = pm.m, pm.K
        self.duration = stats.data.duration
        self.b_totals = stats.b_totals()                 # (K, m, m)
        self.design = []                                 # per target: (N_i, K*m)
        self.masks = []
        for i in range(m):
            mask = stats.data.types0 == i
            self.masks.append(mask)
            self.design.append(stats.a[mask].reshape(-1, K * m))
        # free-vector slot layout for the (mu, alpha) sub-problem
        self.n_free = pm.n_mu_alpha
        self.mu_slots = pm.mu_slots
        self.alpha_slots = pm.alpha_slots

    def _unpack(self, x):
        mu = x[self.mu_slots]
        alpha = x[self.alpha_slots]
        return mu, alpha

    def lambdas(self, x):
        """Intensity at each target's own events, list of (N_i,) arrays."""
        mu, alpha = self._unpack(x)
        return [
            mu[i] + self.design[i] @ alpha[:, i, :].reshape(-1)
            for i in range(self.pm.m)
        ]

    def value_grad(self, x):
        mu, alpha = self._unpack(x)
        m, K = self.pm.m, self.pm.K
        value = 0.0
        gmu = np.empty(m)
        galpha = np.empty((K, m, m))
        for i in range(m):
            lam = mu[i] + self.design[i] @ alpha[:, i, :].reshape(-1)
            if lam.size and lam.min() <= 0.0:
                return -np.inf, np.zeros(self.n_free)
            value -= mu[i] * self.duration
            value -= float((alpha[:, i, :] * self.b_totals[:, i, :]).sum())
            gmu[i] = -self.duration
            if lam.size:
                inv = 1.0 / lam
                value += float(np.sum(np.log(lam)))
                gmu[i] += inv.sum()
                galpha[:, i, :] = (self.design[i].T @ inv).reshape(K, m)
            else:
                galpha[:, i, :] = 0.0
            galpha[:, i, :] -= self.b_totals[:, i, :]
        grad = self.pm.reduce_grad(gmu, galpha)[: self.n_free]
        return value, grad

    def hessian(self, x):
        """Exact Hessian over the free (mu, alpha) vector; always NSD."""
        mu, alpha = self._unpack(x)
        m, K = self.pm.m, self.pm.K
        H = np.zeros((self.n_free, self.n_free))
        for i in range(m):
            lam = mu[i] + self.design[i] @ alpha[:, i, :].reshape(-1)
            if not lam.size:
                continue
            # rank-one curvature of log(mu_i + a . alpha_i) per event
            V = np.empty((lam.size, 1 + K * m))
            V[:, 0] = 1.0
            V[:, 1:] = self.design[i]
            Hi = -(V / (lam * lam)[:, None]).T @ V
            slots = np.concatenate(
                ([self.mu_slots[i]], self.alpha_slots[:, i, :].reshape(-1))
            )
            H[np.ix_(slots, slots)] += Hi
        return H

    def default_start(self, beta_full):
        """Feasible interior start: half the empirical rate, branching 1/2."""
        m, K = self.pm.m, self.pm.K
        counts = np.maximum(self.data.counts(), 1)
        mu0 = 0.5 * counts / max(self.duration, 1e-12)
        if K:
            alpha0 = 0.5 * beta_full / (m * K)
        else:
            alpha0 = np.zeros((0, m, m))
        x0 = np.zeros(self.n_free)
        x0[self.mu_slots] = mu0
        x0[self.alpha_slots.reshape(-1)] = alpha0.reshape(-1)
        return x0


def log_likelihood(params, stream):
    """Exact log-likelihood of the stream under the given parameters."""
    pm = ParamMap(params.constraint_profile, params.m, params.K)
    stats = sufficient_stats(params.beta_full(), stream)
    obj = ConditionalObjective(stats, pm)
    x = pm.pack(params)[: pm.n_mu_alpha]
    value, _ = obj.value_grad(x)
    if not np.isfinite(value):
        raise ValueError("non-positive intensity at an event time")
    return float(value)


def conditional_gradient(params, stream):
    """Gradient of the log-likelihood in (mu, alpha) at fixed decay.

    Returns
    -------
    grad_mu : (m,) array
    grad_alpha : (K, m, m) array
    """
    stats = sufficient_stats(params.beta_full(), stream)
    data = stats.data
    m, K = params.m, params.K
    bt = stats.b_totals()
    gmu = np.full(m, -data.duration)
    galpha = np.zeros((K, m, m))
    for i in range(m):
        mask = data.types0 == i
        D = stats.a[mask].reshape(-1, K * m)
        lam = params.mu[i] + D @ params.alpha[:, i, :].reshape(-1)
        if lam.size and lam.min() <= 0.0:
            raise ValueError("non-positive intensity at an event time")
        if lam.size:
            inv = 1.0 / lam
            gmu[i] += inv.sum()
            galpha[:, i, :] = (D.T @ inv).reshape(K, m)
        galpha[:, i, :] -= bt[:, i, :]
    return gmu, galpha


def conditional_hessian(params, stream):
    """Hessian of the log-likelihood in the free (mu, alpha) coordinates."""
    pm = ParamMap(params.constraint_profile, params.m, params.K)
    stats = sufficient_stats(params.beta_full(), stream)
    obj = ConditionalObjective(stats, pm)
    x = pm.pack(params)[: pm.n_mu_alpha]
    return obj.hessian(x)


def compensator_totals(params, stream):
    """Integral of each intensity over the observation window, shape (m,)."""
    stats = sufficient_stats(params.beta_full(), stream)
    bt = stats.b_totals()
    return params.mu * stats.data.duration + np.einsum("kij,kij->i", params.alpha, bt)
