"""Kalman filter and stochastic (perturbed-observation) ensemble Kalman filter.

Both filters follow the same cycle: the belief at step ``t`` starts as a
forecast, observation ``y_t`` is assimilated into it (analysis), and the
analysis is propagated by the model to give the forecast at ``t+1``.  The
user-supplied prior is the forecast at ``t = 0``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from .errors import DivergedError, DomainError, IllConditionedError
from .models import DIVERGENCE_BOUND, HmmSpec, _as_obs_array, _psd_factor

Role = Literal["forecast", "analysis"]

# Innovation covariances with a larger condition number are rejected.
MAX_CONDITION = 1e14


def symmetrize(P: np.ndarray) -> np.ndarray:
    return 0.5 * (P + P.T)


@dataclass(frozen=True, eq=False)
class GaussianBelief:
    mean: np.ndarray
    cov: np.ndarray
    role: Role = "forecast"
    t: int = 0

    def __post_init__(self):
        m = np.atleast_1d(np.asarray(self.mean, dtype=float))
        P = np.atleast_2d(np.asarray(self.cov, dtype=float))
        if P.shape != (m.size, m.size):
            raise DomainError(f"covariance shape {P.shape} does not match mean of size {m.size}")
        if self.role not in ("forecast", "analysis"):
            raise DomainError(f"unknown belief role {self.role!r}")
        object.__setattr__(self, "mean", m)
        object.__setattr__(self, "cov", symmetrize(P))

    @property
    def dim(self) -> int:
        return self.mean.size


@dataclass(frozen=True, eq=False)
class Ensemble:
    members: np.ndarray
    t: int = 0

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.members, dtype=float))
        if X.shape[0] < 2:
            raise DomainError(f"an ensemble needs at least 2 members, got {X.shape[0]}")
        if not np.all(np.isfinite(X)):
            raise DivergedError(self.t, f"non-finite ensemble member at step {self.t}")
        object.__setattr__(self, "members", X)

    @property
    def size(self) -> int:
        return self.members.shape[0]


@dataclass(frozen=True, eq=False)
class FilterRun:
    forecasts: list[GaussianBelief]
    analyses: list[GaussianBelief]
    gains: list[np.ndarray] = field(default_factory=list)
    method: str = "kf"
    ensemble_size: int | None = None
    inflation: float = 1.0


def innovation_cholesky(P: np.ndarray, H: np.ndarray, R: np.ndarray):
    """Cholesky factor of ``H P H' + R``; raises if it is not positive definite."""
    S = symmetrize(H @ P @ H.T + R)
    try:
        L = np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        raise IllConditionedError("innovation covariance is not positive definite",
                                  float(np.linalg.cond(S))) from None
    d = np.diag(L)
    if d.min() <= 0 or (d.max() / d.min()) ** 2 > MAX_CONDITION:
        raise IllConditionedError("innovation covariance is ill-conditioned",
                                  float(np.linalg.cond(S)))
    return L


def _chol_solve(L, B):
    return np.linalg.solve(L.T, np.linalg.solve(L, B))


def kalman_gain(P, H, R):
    L = innovation_cholesky(P, H, R)
    # K' = S^{-1} H P
    return _chol_solve(L, H @ P).T


def kf_analysis(fb: GaussianBelief, y, H, R, return_gain: bool = False):
    H = np.atleast_2d(np.asarray(H, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if y.shape != (H.shape[0],):
        raise DomainError(f"observation of shape {y.shape} does not match H {H.shape}")
    K = kalman_gain(fb.cov, H, R)
    mean = fb.mean + K @ (y - H @ fb.mean)
    cov = (np.eye(fb.dim) - K @ H) @ fb.cov
    ab = GaussianBelief(mean, cov, "analysis", fb.t)
    return (ab, K) if return_gain else ab


def kf_forecast(ab: GaussianBelief, M, Q) -> GaussianBelief:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    if M.shape[1] != ab.dim or Q.shape != (M.shape[0], M.shape[0]):
        raise DomainError(f"shape mismatch: M {M.shape}, Q {Q.shape}, state {ab.dim}")
    return GaussianBelief(M @ ab.mean, M @ ab.cov @ M.T + Q, "forecast", ab.t + 1)


def kf_run(spec: HmmSpec, prior: GaussianBelief, y) -> FilterRun:
    if not spec.is_linear:
        raise DomainError("the exact Kalman filter needs linear dynamics; use the EnKF")
    Y = _as_obs_array(y)
    fb = GaussianBelief(prior.mean, prior.cov, "forecast", 0)
    forecasts, analyses, gains = [], [], []
    for t in range(Y.shape[0]):
        forecasts.append(fb)
        ab, K = kf_analysis(fb, Y[t], spec.H, spec.R, return_gain=True)
        analyses.append(ab)
        gains.append(K)
        if t < Y.shape[0] - 1:
            fb = kf_forecast(ab, spec.M, spec.Q)
    return FilterRun(forecasts, analyses, gains, method="kf")


def rts_smoother(run: FilterRun, spec: HmmSpec) -> list[GaussianBelief]:
    """Rauch-Tung-Striebel smoothed marginals for a linear :func:`kf_run`."""
    M = spec.M
    T = len(run.analyses) - 1
    smoothed = [None] * (T + 1)
    smoothed[T] = run.analyses[T]
    for t in range(T - 1, -1, -1):
        a, f_next = run.analyses[t], run.forecasts[t + 1]
        J = np.linalg.solve(f_next.cov, M @ a.cov).T
        mean = a.mean + J @ (smoothed[t + 1].mean - f_next.mean)
        cov = a.cov + J @ (smoothed[t + 1].cov - f_next.cov) @ J.T
        smoothed[t] = GaussianBelief(mean, cov, "analysis", t)
    return smoothed


def ensemble_moments(e: Ensemble, role: Role = "forecast") -> GaussianBelief:
    X = e.members
    mean = X.mean(axis=0)
    A = X - mean
    return GaussianBelief(mean, A.T @ A / (e.size - 1), role, e.t)


def sample_ensemble(belief: GaussianBelief, size: int, rng: np.random.Generator) -> Ensemble:
    L = _psd_factor(belief.cov)
    return Ensemble(belief.mean + rng.standard_normal((size, belief.dim)) @ L.T, belief.t)


def inflate(e: Ensemble, factor: float) -> Ensemble:
    """Multiplicative inflation: anomalies scaled so the sample covariance grows by ``factor``."""
    if factor == 1.0:
        return e
    mean = e.members.mean(axis=0)
    return Ensemble(mean + np.sqrt(factor) * (e.members - mean), e.t)


def enkf_forecast(e: Ensemble, spec: HmmSpec, rng: np.random.Generator) -> Ensemble:
    X = spec.propagate(e.members) + spec.model_noise(rng, size=e.size)
    if not np.all(np.abs(X) < DIVERGENCE_BOUND):
        raise DivergedError(e.t + 1, f"ensemble member diverged at step {e.t + 1}")
    return Ensemble(X, e.t + 1)


def enkf_analysis(e: Ensemble, y, H, R, rng: np.random.Generator, inflation: float = 1.0) -> Ensemble:
    """Perturbed-observation EnKF update."""
    H = np.atleast_2d(np.asarray(H, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    e = inflate(e, inflation)
    X = e.members
    A = X - X.mean(axis=0)
    P = A.T @ A / (e.size - 1)
    K = kalman_gain(P, H, R)
    perturbed = y + rng.standard_normal((e.size, H.shape[0])) @ _psd_factor(R).T
    return Ensemble(X + (perturbed - X @ H.T) @ K.T, e.t)


def enkf_run(spec: HmmSpec, prior: GaussianBelief, y, rng: np.random.Generator,
             ensemble_size: int = 100, inflation: float = 1.0) -> FilterRun:
    """Stochastic EnKF over ``y_0..y_T``.

    The forecast belief at ``t = 0`` is the prior itself; later forecasts are
    the (inflated) ensemble sample moments.
    """
    Y = _as_obs_array(y)
    e = sample_ensemble(prior, ensemble_size, rng)
    forecasts, analyses = [], []
    for t in range(Y.shape[0]):
        if t == 0:
            forecasts.append(GaussianBelief(prior.mean, prior.cov, "forecast", 0))
        else:
            e = inflate(e, inflation)
            forecasts.append(ensemble_moments(e))
        e = enkf_analysis(e, Y[t], spec.H, spec.R, rng)
        analyses.append(ensemble_moments(e, "analysis"))
        if t < Y.shape[0] - 1:
            e = enkf_forecast(e, spec, rng)
    return FilterRun(forecasts, analyses, method="enkf",
                     ensemble_size=ensemble_size, inflation=inflation)
