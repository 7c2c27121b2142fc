"""Closed-form stationary moments of the multi-kernel model.

These formulas serve as the analytic oracle for the simulator and as a sanity
check on fitted parameters.  The second-moment chain needs the row-shared
(Markov) decay restriction; the stationary mean is available for any profile.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import ConstraintProfile, ModelParams, branching_matrix, spectral_radius


class NonStationaryError(ValueError):
    """Raised when moments are requested for a model with branching >= 1."""


class DegenerateModelError(ValueError):
    """Raised when the second-moment linear system is singular."""


def _require_stationary(params):
    rho = spectral_radius(params)
    if rho >= 1.0:
        raise NonStationaryError(
            f"branching spectral radius {rho:.4f} >= 1; stationary moments do not exist"
        )
    return rho


def _require_row_shared(params):
    if not params.has_row_shared_decay():
        raise ValueError(
            "second-moment formulas need row-shared decay "
            "(MARKOV_ROW, SCALAR_PER_KERNEL or SYMMETRIC_BIVARIATE)"
        )


def stationary_intensity(params):
    """Stationary mean intensity and its per-kernel decomposition.

    Returns
    -------
    E_lambda : array, shape (m,)
        Solution of (I - branching) E = mu.
    E_lambda_k : array, shape (K, m)
        Per-kernel component means, summing to E_lambda - mu.
    """
    _require_stationary(params)
    m, K = params.m, params.K
    E_lambda = np.linalg.solve(np.eye(m) - branching_matrix(params), params.mu)
    if K == 0:
        return E_lambda, np.zeros((0, m))
    ratios = params.alpha / params.beta_full()
    E_lambda_k = np.einsum("kij,j->ki", ratios, E_lambda)
    return E_lambda, E_lambda_k


def stationary_mean_components(params):
    """Stationary mean of the (K, m, m) excitation state, per source."""
    E_lambda, _ = stationary_intensity(params)
    if params.K == 0:
        return np.zeros((0, params.m, params.m))
    return params.alpha * E_lambda[None, None, :] / params.beta_full()


def _stacked_system(params):
    """Stacked (m*K) representation: alpha block, diagonal decay, summing map."""
    m, K = params.m, params.K
    alpha_st = params.alpha.reshape(K * m, m)
    beta_rows = params.beta_full()[:, :, 0].reshape(K * m)
    J = np.tile(np.eye(m), (1, K))
    return alpha_st, np.diag(beta_rows), J


def second_moment_LL(params):
    """Stationary second moment of the stacked component vector.

    Solves the linear (Sylvester-type) fixed-point equation for
    E[Lambda Lambda^T] by Kronecker vectorization and returns the
    symmetrized (m*K, m*K) solution.
    """
    _require_stationary(params)
    _require_row_shared(params)
    m, K = params.m, params.K
    n = m * K
    if K == 0:
        return np.zeros((0, 0))
    E_lambda, E_lambda_k = stationary_intensity(params)
    E_Lam = E_lambda_k.reshape(n)
    alpha_st, beta_st, J = _stacked_system(params)

    drift = beta_st - alpha_st @ J
    amu = alpha_st @ params.mu
    rhs = np.outer(amu, E_Lam) + np.outer(E_Lam, amu) + alpha_st @ np.diag(E_lambda) @ alpha_st.T
    system = np.kron(np.eye(n), drift) + np.kron(drift, np.eye(n))
    try:
        vec = np.linalg.solve(system, rhs.reshape(-1, order="F"))
    except np.linalg.LinAlgError as exc:
        raise DegenerateModelError(f"second-moment system is singular: {exc}") from exc
    X = vec.reshape((n, n), order="F")
    return 0.5 * (X + X.T)


def lambda_N_coefficients(params):
    """Linear-growth coefficients of E[lambda_t N_t^T] ~ A t + B.

    A is the outer product of the stationary intensity with itself; B collects
    the per-kernel covariance corrections.  Transient terms decaying from the
    window start are excluded.
    """
    _require_stationary(params)
    _require_row_shared(params)
    m, K = params.m, params.K
    E_lambda, E_lambda_k = stationary_intensity(params)
    A = np.outer(E_lambda, E_lambda)
    if K == 0:
        return A, np.zeros((m, m))
    X = second_moment_LL(params)
    alpha_st, _, J = _stacked_system(params)
    E_Lam = E_lambda_k.reshape(m * K)
    # E[Lambda lambda^T] = E[Lambda] mu^T + E[Lambda Lambda^T] J^T
    lam_cross = np.outer(E_Lam, params.mu) + X @ J.T

    acc = np.zeros((m, m))
    beta_rows = params.beta_full()[:, :, 0]
    dg = np.diag(E_lambda)
    for k in range(K):
        binv = np.diag(1.0 / beta_rows[k])
        cross_k = lam_cross[k * m:(k + 1) * m]
        acc += binv @ (-binv @ params.alpha[k] @ A + cross_k + params.alpha[k] @ dg)
    B = np.linalg.solve(np.eye(m) - branching_matrix(params), acc)
    return A, B


def second_moment_N(params, t):
    """E[N_t N_t^T] = A t^2 + (B + B^T + Dg(E[lambda])) t for horizon t > 0."""
    if t <= 0:
        raise ValueError("horizon t must be > 0")
    A, B = lambda_N_coefficients(params)
    E_lambda, _ = stationary_intensity(params)
    return A * t * t + (B + B.T + np.diag(E_lambda)) * t


def variance_mid_price(params, t):
    """Var(N_1(t) - N_2(t)) for a bivariate model at horizon t.

    The linear-in-t coefficient 2 [1,-1] B [1,-1]^T + [1,1] E[lambda] follows
    exactly from the count second moment: the quadratic terms cancel against
    the squared mean difference.
    """
    if params.m != 2:
        raise ValueError("mid-price variance is defined for bivariate models")
    if t <= 0:
        raise ValueError("horizon t must be > 0")
    A, B = lambda_N_coefficients(params)
    E_lambda, _ = stationary_intensity(params)
    u = np.array([1.0, -1.0])
    return float(t * (2.0 * u @ B @ u + E_lambda.sum()))


@dataclass(frozen=True)
class MomentReport:
    """Analytic moment summary at one horizon."""

    t: float
    E_lambda: np.ndarray
    E_lambda_k: np.ndarray
    E_LL: np.ndarray
    A: np.ndarray
    B: np.ndarray
    E_NN: np.ndarray
    var_diff: float | None

    def as_dict(self):
        return {
            "schema_version": 1,
            "t": self.t,
            "E_lambda": self.E_lambda.tolist(),
            "E_N": (self.E_lambda * self.t).tolist(),
            "E_lambda_k": self.E_lambda_k.tolist(),
            "E_LL": self.E_LL.tolist(),
            "A": self.A.tolist(),
            "B": self.B.tolist(),
            "E_NN": self.E_NN.tolist(),
            "var_diff": self.var_diff,
        }


def moment_report(params, t):
    """Full closed-form moment report at horizon t (seconds)."""
    if t <= 0:
        raise ValueError("horizon t must be > 0")
    E_lambda, E_lambda_k = stationary_intensity(params)
    E_LL = second_moment_LL(params)
    A, B = lambda_N_coefficients(params)
    E_NN = A * t * t + (B + B.T + np.diag(E_lambda)) * t
    var_diff = None
    if params.m == 2:
        u = np.array([1.0, -1.0])
        var_diff = float(t * (2.0 * u @ B @ u + E_lambda.sum()))
    return MomentReport(
        t=float(t),
        E_lambda=E_lambda,
        E_lambda_k=E_lambda_k,
        E_LL=E_LL,
        A=A,
        B=B,
        E_NN=E_NN,
        var_diff=var_diff,
    )
