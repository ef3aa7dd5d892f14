"""Model evidence from filter output, and causal probabilities.

The log-evidence of ``y_0..y_T`` is accumulated one step at a time from the
forecast moments of a filter: each increment is the Gaussian log-density of
``y_t`` under ``N(H x^f_t, H P^f_t H' + R)``.  At ``t = 0`` the forecast is
the prior, so the first increment is the prior-predictive density of ``y_0``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np

from .errors import DomainError, UndefinedProbabilityError
from .filters import GaussianBelief, enkf_run, innovation_cholesky, kf_run
from .models import HmmSpec, _as_obs_array

LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True, eq=False)
class EvidenceTrace:
    increments: np.ndarray
    cumulative: np.ndarray
    model_label: str = "factual"
    method: str = "kf"
    ensemble_size: int | None = None

    @property
    def total(self) -> float:
        return float(self.cumulative[-1])

    @classmethod
    def from_increments(cls, increments, **kw) -> "EvidenceTrace":
        inc = np.asarray(increments, dtype=float)
        if not np.all(np.isfinite(inc)):
            raise DomainError("non-finite evidence increment")
        return cls(inc, np.cumsum(inc), **kw)


@dataclass(frozen=True)
class CausalProbs:
    pn: float
    ps: float
    pns: float
    source: Literal["from-densities", "from-probabilities"]

    @property
    def far(self) -> float:
        return self.pn

    @property
    def pn_clipped(self) -> float:
        return min(max(self.pn, 0.0), 1.0)


def gaussian_logpdf_chol(r: np.ndarray, L: np.ndarray) -> float:
    """log N(r; 0, L L') from a lower Cholesky factor."""
    z = np.linalg.solve(L, r)
    return float(-0.5 * (r.size * LOG_2PI + z @ z) - np.sum(np.log(np.diag(L))))


def evidence_increment(fb: GaussianBelief, y, H, R) -> float:
    H = np.atleast_2d(np.asarray(H, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    L = innovation_cholesky(fb.cov, H, R)
    return gaussian_logpdf_chol(y - H @ fb.mean, L)


def evidence_trace(spec: HmmSpec, prior: GaussianBelief, y, filter: str = "kf",
                   rng: np.random.Generator | None = None, ensemble_size: int = 100,
                   inflation: float = 1.0, model_label: str = "factual") -> EvidenceTrace:
    Y = _as_obs_array(y)
    if Y.shape[1] != spec.obs_dim:
        raise DomainError(f"observation dim {Y.shape[1]} != model observation dim {spec.obs_dim}")
    if filter == "kf":
        run = kf_run(spec, prior, Y)
    elif filter == "enkf":
        if rng is None:
            raise DomainError("the EnKF needs a random generator")
        run = enkf_run(spec, prior, Y, rng, ensemble_size, inflation)
    else:
        raise DomainError(f"unknown filter {filter!r}")
    inc = [evidence_increment(fb, Y[t], spec.H, spec.R) for t, fb in enumerate(run.forecasts)]
    return EvidenceTrace.from_increments(inc, model_label=model_label, method=filter,
                                         ensemble_size=run.ensemble_size)


def joint_state_moments(spec: HmmSpec, prior: GaussianBelief, T: int):
    """Mean (T+1, N) and full covariance of the stacked linear-Gaussian state path."""
    M, Q = spec.M, spec.Q
    N = spec.state_dim
    means = np.empty((T + 1, N))
    marg = [None] * (T + 1)
    means[0], marg[0] = prior.mean, prior.cov
    for t in range(1, T + 1):
        means[t] = M @ means[t - 1]
        marg[t] = M @ marg[t - 1] @ M.T + Q
    S = np.zeros((N * (T + 1), N * (T + 1)))
    for s in range(T + 1):
        block = marg[s]
        for t in range(s, T + 1):
            # Cov(x_t, x_s) = M^{t-s} P_s
            S[t * N:(t + 1) * N, s * N:(s + 1) * N] = block
            S[s * N:(s + 1) * N, t * N:(t + 1) * N] = block.T
            block = M @ block
    return means, S


def _stacked_obs_moments(spec, prior, T):
    mx, Sxx = joint_state_moments(spec, prior, T)
    Hb = np.kron(np.eye(T + 1), spec.H)
    Rb = np.kron(np.eye(T + 1), spec.R)
    return mx, Sxx, Hb, (mx @ spec.H.T).ravel(), Hb @ Sxx @ Hb.T + Rb


def _dense_logpdf(v, mean, cov):
    L = np.linalg.cholesky(0.5 * (cov + cov.T))
    return gaussian_logpdf_chol(v - mean, L)


def joint_gaussian_loglik(spec: HmmSpec, prior: GaussianBelief, y) -> float:
    """Log-density of the whole stacked sequence ``(y_0..y_T)`` as one Gaussian vector.

    Independent of the filter recursion; used as a check on :func:`evidence_trace`.
    """
    Y = _as_obs_array(y)
    _, _, _, my, Syy = _stacked_obs_moments(spec, prior, Y.shape[0] - 1)
    return _dense_logpdf(Y.ravel(), my, Syy)


def bayes_ratio_check(spec: HmmSpec, prior: GaussianBelief, y, x=None) -> float:
    """``log p(y|x) + log p(x) - log p(x|y)`` minus the filter log-evidence.

    Holds for any state path ``x``; defaults to the posterior mean path.
    Returns the residual, which is zero up to round-off for a correct filter.
    """
    Y = _as_obs_array(y)
    T = Y.shape[0] - 1
    N = spec.state_dim
    mx, Sxx, Hb, my, Syy = _stacked_obs_moments(spec, prior, T)
    Sxy = Sxx @ Hb.T
    Ly = np.linalg.cholesky(Syy)
    G = np.linalg.solve(Ly.T, np.linalg.solve(Ly, Sxy.T)).T  # Sxy Syy^{-1}
    post_mean = mx.ravel() + G @ (Y.ravel() - my)
    post_cov = Sxx - G @ Sxy.T
    if x is None:
        X = post_mean.reshape(T + 1, N)
    else:
        X = np.asarray(x, dtype=float).reshape(T + 1, N)

    LR = np.linalg.cholesky(spec.R)
    log_lik = sum(gaussian_logpdf_chol(Y[t] - spec.H @ X[t], LR) for t in range(T + 1))
    log_prior = gaussian_logpdf_chol(X[0] - prior.mean, np.linalg.cholesky(prior.cov))
    if T > 0:
        LQ = np.linalg.cholesky(spec.Q)
        log_prior += sum(gaussian_logpdf_chol(X[t] - spec.M @ X[t - 1], LQ) for t in range(1, T + 1))
    log_post = _dense_logpdf(X.ravel(), post_mean, post_cov)
    total = evidence_trace(spec, prior, Y, "kf").total
    return float(log_lik + log_prior - log_post - total)


def causal_probs_from_rates(p0: float, p1: float) -> CausalProbs:
    """PN, PS and PNS from event probabilities in the counterfactual (p0) and factual (p1) worlds."""
    for name, p in (("p0", p0), ("p1", p1)):
        if not 0.0 <= p <= 1.0:
            raise DomainError(f"{name} must be a probability, got {p}")
    if p1 == 0:
        raise UndefinedProbabilityError("PN is undefined when p1 = 0")
    if p0 == 1:
        raise UndefinedProbabilityError("PS is undefined when p0 = 1")
    return CausalProbs(pn=1.0 - p0 / p1, ps=1.0 - (1.0 - p1) / (1.0 - p0), pns=p1 - p0,
                       source="from-probabilities")


def causal_probs_from_evidence(logf0: float, logf1: float) -> CausalProbs:
    """PN = 1 - f0/f1 for the singleton event; PS and PNS vanish.

    PN is left unclipped: negative values mean the counterfactual model
    explains the data better.
    """
    with np.errstate(over="ignore"):
        pn = -float(np.expm1(logf0 - logf1))
    return CausalProbs(pn=pn, ps=0.0, pns=0.0, source="from-densities")
