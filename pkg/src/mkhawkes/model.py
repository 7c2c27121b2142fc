"""Core parameterization of the m-variate, K-kernel exponential Hawkes model.

The intensity of component i is

    lambda_i(t) = mu_i + sum_j sum_k sum_{t_jn < t} alpha[k,i,j] * exp(-beta[k,i,j] * (t - t_jn))

where events of type j (1-based) excite every target i through K exponential
kernels.  Kernels are kept in canonical order of decreasing decay speed so that
kernel 1 is always the fastest; this pins down the labelling that is otherwise
ambiguous under permutation of the kernel sum.

Time convention: event timestamps are integer nanoseconds, every rate
parameter (mu, alpha, beta) is per second, and the nanosecond-to-second factor
is applied once at the arithmetic boundary.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field

import numpy as np

NS_PER_SEC = 1_000_000_000


class ConstraintProfile(str, enum.Enum):
    """Decay/parameter tying schemes.

    FULL                 every (kernel, target, source) entry has its own decay
    MARKOV_ROW           decay shared across sources within each target row,
                         which makes the intensity jointly Markov
    SCALAR_PER_KERNEL    one decay per kernel
    SYMMETRIC_BIVARIATE  m = 2 with a shared baseline, symmetric self/cross
                         excitation per kernel and one decay per kernel
    """

    FULL = "full"
    MARKOV_ROW = "markov"
    SCALAR_PER_KERNEL = "scalar"
    SYMMETRIC_BIVARIATE = "sym2"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            names = ", ".join(p.value for p in cls)
            raise ValueError(f"unknown constraint profile {value!r}; expected one of: {names}")


def _beta_layout_shape(profile, K, m):
    if profile is ConstraintProfile.FULL:
        return (K, m, m)
    if profile is ConstraintProfile.MARKOV_ROW:
        return (K, m)
    return (K,)


def expand_beta(profile, beta, K, m):
    """Broadcast a layout-shaped decay array to the dense (K, m, m) form."""
    beta = np.asarray(beta, dtype=float)
    expected = _beta_layout_shape(profile, K, m)
    if beta.shape != expected:
        raise ValueError(
            f"beta shape {beta.shape} does not match layout {expected} for profile {profile.value}"
        )
    if profile is ConstraintProfile.FULL:
        return beta.copy()
    if profile is ConstraintProfile.MARKOV_ROW:
        return np.repeat(beta[:, :, None], m, axis=2)
    return np.broadcast_to(beta[:, None, None], (K, m, m)).copy()


@dataclass(frozen=True)
class ModelParams:
    """Immutable parameter set of the multi-kernel model.

    Attributes
    ----------
    mu : array, shape (m,)
        Baseline intensities in events per second, all > 0.
    alpha : array, shape (K, m, m)
        Excitation jump sizes per second; alpha[k, i, j] is the jump of
        target i's intensity when a type-(j+1) event occurs, all >= 0.
    beta : array
        Decay rates per second, layout determined by the constraint profile:
        (K, m, m) for FULL, (K, m) for MARKOV_ROW and (K,) otherwise.
    constraint_profile : ConstraintProfile
        Parameter tying scheme; also fixes the beta layout above.

    K = 0 is allowed and degenerates to a homogeneous Poisson model.
    Kernels are reordered on construction so decay speeds are decreasing.
    """

    mu: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    constraint_profile: ConstraintProfile = ConstraintProfile.SCALAR_PER_KERNEL

    def __post_init__(self):
        profile = ConstraintProfile.parse(self.constraint_profile)
        mu = np.atleast_1d(np.asarray(self.mu, dtype=float))
        alpha = np.asarray(self.alpha, dtype=float)
        m = mu.shape[0]
        if alpha.size == 0:
            alpha = alpha.reshape(0, m, m)
        if alpha.ndim != 3 or alpha.shape[1:] != (m, m):
            raise ValueError(f"alpha must have shape (K, {m}, {m}), got {alpha.shape}")
        K = alpha.shape[0]
        beta = np.asarray(self.beta, dtype=float).reshape(_beta_layout_shape(profile, K, m))

        if not np.all(mu > 0):
            raise ValueError("all baseline intensities mu must be > 0")
        if not np.all(alpha >= 0):
            raise ValueError("all excitation sizes alpha must be >= 0")
        if not np.all(beta > 0):
            raise ValueError("all decay rates beta must be > 0")
        if profile is ConstraintProfile.SYMMETRIC_BIVARIATE:
            if m != 2:
                raise ValueError("SYMMETRIC_BIVARIATE requires m = 2")
            if mu[0] != mu[1]:
                raise ValueError("SYMMETRIC_BIVARIATE requires equal baselines")
            for k in range(K):
                a = alpha[k]
                if a[0, 0] != a[1, 1] or a[0, 1] != a[1, 0]:
                    raise ValueError(
                        "SYMMETRIC_BIVARIATE requires alpha_k = [[s, c], [c, s]]"
                    )

        # canonical ordering: fastest kernel first (stable under ties)
        if K > 1:
            speed = expand_beta(profile, beta, K, m).max(axis=(1, 2))
            order = np.argsort(-speed, kind="stable")
            if not np.array_equal(order, np.arange(K)):
                alpha = alpha[order]
                beta = beta[order]

        for arr in (mu, alpha, beta):
            arr.flags.writeable = False
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "constraint_profile", profile)

    @property
    def m(self):
        return self.mu.shape[0]

    @property
    def K(self):
        return self.alpha.shape[0]

    def beta_full(self):
        """Dense (K, m, m) decay array regardless of the stored layout."""
        return expand_beta(self.constraint_profile, self.beta, self.K, self.m)

    def has_row_shared_decay(self):
        """True when decay rates do not vary with the source type."""
        if self.constraint_profile is not ConstraintProfile.FULL:
            return True
        bf = self.beta_full()
        return bool(np.all(bf == bf[:, :, :1]))

    def as_dict(self):
        return {
            "schema_version": 1,
            "constraint_profile": self.constraint_profile.value,
            "mu": self.mu.tolist(),
            "alpha": self.alpha.tolist(),
            "beta": self.beta.tolist(),
        }

    @classmethod
    def from_dict(cls, doc):
        return cls(
            mu=np.asarray(doc["mu"], dtype=float),
            alpha=np.asarray(doc["alpha"], dtype=float),
            beta=np.asarray(doc["beta"], dtype=float),
            constraint_profile=ConstraintProfile.parse(doc["constraint_profile"]),
        )

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.as_dict(), fh, indent=2)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


@dataclass(frozen=True)
class EventStream:
    """Time-sorted event records on an observation window.

    Attributes
    ----------
    times_ns : int64 array, shape (n,)
        Strictly increasing timestamps, nanoseconds since epoch or since the
        window start.
    types : int64 array, shape (n,)
        Event type indices in [1, m].
    m : int
        Number of event types the stream can carry.
    start_ns, horizon_ns : int
        Observation window [start_ns, horizon_ns]; horizon_ns >= last event.
    """

    times_ns: np.ndarray
    types: np.ndarray
    m: int
    horizon_ns: int
    start_ns: int = 0

    def __post_init__(self):
        times = np.asarray(self.times_ns, dtype=np.int64)
        types = np.asarray(self.types, dtype=np.int64)
        if times.shape != types.shape or times.ndim != 1:
            raise ValueError("times_ns and types must be 1-d arrays of equal length")
        if times.size and np.any(np.diff(times) <= 0):
            raise ValueError("timestamps must be strictly increasing")
        if times.size and (types.min() < 1 or types.max() > self.m):
            raise ValueError(f"event types must lie in [1, {self.m}]")
        if times.size and times[0] < self.start_ns:
            raise ValueError("first event precedes the window start")
        if times.size and self.horizon_ns < times[-1]:
            raise ValueError("horizon_ns must be >= the last event timestamp")
        if self.horizon_ns < self.start_ns:
            raise ValueError("horizon_ns must be >= start_ns")
        for arr in (times, types):
            arr.flags.writeable = False
        object.__setattr__(self, "times_ns", times)
        object.__setattr__(self, "types", types)

    @property
    def n_events(self):
        return self.times_ns.size

    @property
    def duration(self):
        """Window length in seconds."""
        return (self.horizon_ns - self.start_ns) / NS_PER_SEC

    def counts(self):
        """Event count per type, shape (m,)."""
        return np.bincount(self.types, minlength=self.m + 1)[1:]

    def times_seconds(self):
        """Event times in seconds measured from the window start."""
        return (self.times_ns - self.start_ns) / NS_PER_SEC

    def head(self, n):
        """First n events, horizon clipped to the n-th event time."""
        if n <= 0 or n > self.n_events:
            raise ValueError("head size must be in [1, n_events]")
        return EventStream(
            times_ns=self.times_ns[:n].copy(),
            types=self.types[:n].copy(),
            m=self.m,
            horizon_ns=int(self.times_ns[n - 1]),
            start_ns=self.start_ns,
        )

    def shifted(self, offset_ns):
        """Stream with every time field translated by offset_ns."""
        return EventStream(
            times_ns=self.times_ns + int(offset_ns),
            types=self.types.copy(),
            m=self.m,
            horizon_ns=self.horizon_ns + int(offset_ns),
            start_ns=self.start_ns + int(offset_ns),
        )


@dataclass
class MarkovState:
    """Running excitation state enabling O(1) event updates.

    components[k, i, j] is the current contribution to target i's intensity
    from past type-(j+1) events through kernel k, so

        lambda_i(t) = mu_i + components[:, i, :].sum().

    The per-kernel, per-target vector (summed over sources) is exposed via
    :meth:`lambda_components`.  Single-owner mutable; operations below return
    fresh states.
    """

    components: np.ndarray
    t_ns: int = 0

    @classmethod
    def zero(cls, params, t_ns=0):
        return cls(components=np.zeros((params.K, params.m, params.m)), t_ns=t_ns)

    def lambda_components(self):
        """Per-kernel, per-target intensity components, shape (K * m,)."""
        return self.components.sum(axis=2).reshape(-1)

    def copy(self):
        return MarkovState(components=self.components.copy(), t_ns=self.t_ns)


def intensity_at(params, state):
    """Current intensity vector mu + summed excitation components."""
    if state.components.shape != (params.K, params.m, params.m):
        raise ValueError("state shape does not match the model dimensions")
    return params.mu + state.components.sum(axis=(0, 2))


def advance_state(params, state, dt):
    """Decay every component over dt seconds; no events occur in between."""
    if dt < 0:
        raise ValueError("dt must be >= 0")
    comp = state.components * np.exp(-params.beta_full() * dt)
    return MarkovState(components=comp, t_ns=state.t_ns + int(round(dt * NS_PER_SEC)))


def apply_event(params, state, event_type):
    """Apply the excitation jumps of one event of the given 1-based type."""
    if not 1 <= event_type <= params.m:
        raise ValueError(f"event type {event_type} outside [1, {params.m}]")
    comp = state.components.copy()
    comp[:, :, event_type - 1] += params.alpha[:, :, event_type - 1]
    return MarkovState(components=comp, t_ns=state.t_ns)


def branching_matrix(params):
    """Expected offspring matrix: total integrated kernel mass per (i, j)."""
    if params.K == 0:
        return np.zeros((params.m, params.m))
    return (params.alpha / params.beta_full()).sum(axis=0)


def spectral_radius(params):
    """Spectral radius of the branching matrix; < 1 means stationary."""
    if params.K == 0:
        return 0.0
    return float(np.abs(np.linalg.eigvals(branching_matrix(params))).max())


class ParamMap:
    """Mapping between tied model parameters and a free coefficient vector.

    The free vector is laid out as [mu block | alpha block | beta block].
    For SYMMETRIC_BIVARIATE the blocks collapse to the shared baseline, the
    per-kernel (self, cross) pair, and one decay per kernel, giving the
    reporting order mu, a_1s, a_1c, ..., b_1, ..., b_K.
    """

    def __init__(self, profile, m, K):
        profile = ConstraintProfile.parse(profile)
        self.profile = profile
        self.m = m
        self.K = K
        sym = profile is ConstraintProfile.SYMMETRIC_BIVARIATE
        if sym and m != 2:
            raise ValueError("SYMMETRIC_BIVARIATE requires m = 2")

        if sym:
            self.n_mu = 1
            self.mu_slots = np.zeros(m, dtype=np.intp)
            self.n_alpha = 2 * K
            slots = np.empty((K, m, m), dtype=np.intp)
            for k in range(K):
                s, c = 1 + 2 * k, 2 + 2 * k
                slots[k] = [[s, c], [c, s]]
            self.alpha_slots = slots
        else:
            self.n_mu = m
            self.mu_slots = np.arange(m, dtype=np.intp)
            self.n_alpha = K * m * m
            self.alpha_slots = (self.n_mu + np.arange(K * m * m, dtype=np.intp)).reshape(K, m, m)

        base = self.n_mu + self.n_alpha
        if profile is ConstraintProfile.FULL:
            self.n_beta = K * m * m
            rel = np.arange(K * m * m, dtype=np.intp).reshape(K, m, m)
        elif profile is ConstraintProfile.MARKOV_ROW:
            self.n_beta = K * m
            rel = np.repeat(np.arange(K * m, dtype=np.intp).reshape(K, m, 1), m, axis=2)
        else:
            self.n_beta = K
            rel = np.broadcast_to(np.arange(K, dtype=np.intp)[:, None, None], (K, m, m)).copy()
        self.beta_slots = base + rel
        self.n_free = base + self.n_beta
        self.n_mu_alpha = base

    # -- packing -----------------------------------------------------------
    def pack(self, params):
        """Free coefficient vector of a ModelParams instance."""
        x = np.empty(self.n_free)
        x[self.mu_slots] = params.mu
        x[self.alpha_slots.reshape(-1)] = params.alpha.reshape(-1)
        x[self.beta_slots.reshape(-1)] = params.beta_full().reshape(-1)
        return x

    def mu_of(self, x):
        return x[self.mu_slots]

    def alpha_of(self, x):
        return x[self.alpha_slots]

    def beta_full_of(self, x):
        return x[self.beta_slots]

    def beta_layout_of(self, x):
        bf = self.beta_full_of(x)
        if self.profile is ConstraintProfile.FULL:
            return bf
        if self.profile is ConstraintProfile.MARKOV_ROW:
            return bf[:, :, 0]
        return bf[:, 0, 0]

    def to_params(self, x):
        return ModelParams(
            mu=self.mu_of(x).copy(),
            alpha=self.alpha_of(x).copy(),
            beta=self.beta_layout_of(x).copy(),
            constraint_profile=self.profile,
        )

    def reduce_grad(self, grad_mu, grad_alpha, grad_beta_full=None):
        """Accumulate full-parameter gradients onto the free vector."""
        idx = [self.mu_slots, self.alpha_slots.reshape(-1)]
        val = [np.asarray(grad_mu, dtype=float), np.asarray(grad_alpha, dtype=float).reshape(-1)]
        if grad_beta_full is not None:
            idx.append(self.beta_slots.reshape(-1))
            val.append(np.asarray(grad_beta_full, dtype=float).reshape(-1))
        return np.bincount(
            np.concatenate(idx), weights=np.concatenate(val), minlength=self.n_free
        )

    def param_names(self):
        """Names of the free coefficients, in vector order."""
        sym = self.profile is ConstraintProfile.SYMMETRIC_BIVARIATE
        names = []
        if sym:
            names.append("mu")
            for k in range(self.K):
                names += [f"alpha_{k + 1}s", f"alpha_{k + 1}c"]
            names += [f"beta_{k + 1}" for k in range(self.K)]
            return names
        names += [f"mu_{i + 1}" for i in range(self.m)]
        for k in range(self.K):
            for i in range(self.m):
                for j in range(self.m):
                    names.append(f"alpha_{k + 1}_{i + 1}{j + 1}")
        if self.profile is ConstraintProfile.FULL:
            for k in range(self.K):
                for i in range(self.m):
                    for j in range(self.m):
                        names.append(f"beta_{k + 1}_{i + 1}{j + 1}")
        elif self.profile is ConstraintProfile.MARKOV_ROW:
            for k in range(self.K):
                for i in range(self.m):
                    names.append(f"beta_{k + 1}_{i + 1}")
        else:
            names += [f"beta_{k + 1}" for k in range(self.K)]
        return names
