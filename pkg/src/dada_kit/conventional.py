"""Threshold-exceedance attribution: event probabilities, GPD tails, FAR.

An event occurs in a window ``y_0..y_T`` when the projection ``phi' y_t``
reaches ``u`` for some ``t``.  Probabilities are estimated by splitting one
long stationary run into non-overlapping windows and counting.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .errors import DomainError
from .evidence import causal_probs_from_rates
from .models import (BURN_IN, Ar1Spec, HmmSpec, _as_obs_array, ar1_loglik,
                     observe, simulate_ar1, simulate_stationary)

MIN_EXCEEDANCES = 30


@dataclass(frozen=True, eq=False)
class EventSpec:
    phi: np.ndarray
    u: float
    T: int

    def __post_init__(self):
        phi = np.atleast_1d(np.asarray(self.phi, dtype=float))
        if abs(np.linalg.norm(phi) - 1.0) > 1e-12:
            raise DomainError(f"phi must be a unit vector, |phi| = {np.linalg.norm(phi)!r}")
        object.__setattr__(self, "phi", phi)


def unit(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    n = np.linalg.norm(v)
    if n == 0:
        raise DomainError("cannot normalise the zero vector")
    return v / n


def random_direction(dim: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform draw on the unit sphere."""
    return unit(rng.standard_normal(dim))


def _as_segments(segments) -> np.ndarray:
    if isinstance(segments, np.ndarray) and segments.ndim == 3:
        return segments
    return np.stack([_as_obs_array(s) for s in segments])


def segment_maxima(segments, phi) -> np.ndarray:
    """max_t phi' y_t for every window; ``segments`` is (n, T+1, d) or a list of sequences."""
    S = _as_segments(segments)
    return (S @ np.asarray(phi, dtype=float)).max(axis=1)


def event_occurs(y, ev: EventSpec) -> bool:
    Y = _as_obs_array(y)
    if Y.shape[0] != ev.T + 1:
        raise DomainError(f"window has {Y.shape[0]} steps, event is defined on {ev.T + 1}")
    return bool((Y @ ev.phi).max() >= ev.u)


def calibrate_threshold(segments, phi, target_p: float) -> float:
    """Threshold such that at least a fraction ``target_p`` of windows exceed it.

    Returns the k-th largest window maximum with ``k = ceil(target_p * n)``.
    """
    if not 0 < target_p <= 1:
        raise DomainError(f"target_p must be in (0, 1], got {target_p}")
    maxima = np.sort(segment_maxima(segments, phi))
    n = maxima.size
    if n < math.ceil(1.0 / target_p - 1e-9):
        raise DomainError(f"need at least {math.ceil(1 / target_p)} segments, got {n}")
    k = math.ceil(target_p * n - 1e-9)
    return float(maxima[n - k])


def simulate_segments(spec: HmmSpec, n: int, T: int, rng: np.random.Generator,
                      x0=None, burn_in: int = BURN_IN) -> np.ndarray:
    """Observed windows (n, T+1, d) cut from a single stationary run."""
    traj = simulate_stationary(spec, n * (T + 1), rng, x0=x0, burn_in=burn_in)
    y = observe(traj, spec, rng).obs
    return y.reshape(n, T + 1, spec.obs_dim)


@dataclass(frozen=True)
class ProbEstimate:
    p: float
    se: float
    n: int


def event_frequency(segments, ev: EventSpec) -> ProbEstimate:
    S = _as_segments(segments)
    if S.shape[1] != ev.T + 1:
        raise DomainError(f"segments have {S.shape[1]} steps, event is defined on {ev.T + 1}")
    hits = segment_maxima(S, ev.phi) >= ev.u
    n = hits.size
    p = float(hits.mean())
    return ProbEstimate(p, math.sqrt(p * (1 - p) / n), n)


def estimate_event_probs(spec: HmmSpec, ev: EventSpec, n: int, rng: np.random.Generator,
                         x0=None) -> ProbEstimate:
    return event_frequency(simulate_segments(spec, n, ev.T, rng, x0=x0), ev)


def pn_conventional(p0_hat: float, p1_hat: float) -> float:
    return causal_probs_from_rates(p0_hat, p1_hat).pn


@dataclass(frozen=True)
class GpdFit:
    xi: float
    sigma_gpd: float
    threshold: float
    n_exceedances: int
    n_total: int

    @property
    def exceed_rate(self) -> float:
        return self.n_exceedances / self.n_total

    def tail_prob(self, u: float) -> float:
        """P(X >= u) for ``u`` at or above the fit threshold."""
        if u < self.threshold:
            raise DomainError(f"u={u} is below the GPD threshold {self.threshold}")
        return float(self.exceed_rate * stats.genpareto.sf(u - self.threshold, self.xi,
                                                           scale=self.sigma_gpd))

    def return_level(self, period: float) -> float:
        """Level exceeded on average once every ``period`` samples."""
        q = 1.0 / (period * self.exceed_rate)
        return float(self.threshold + stats.genpareto.isf(q, self.xi, scale=self.sigma_gpd))


def gpd_pwm(excesses) -> tuple[float, float]:
    """Probability-weighted-moment estimates (xi, sigma) of a GPD (Hosking & Wallis 1987)."""
    x = np.sort(np.asarray(excesses, dtype=float))
    n = x.size
    a0 = x.mean()
    a1 = np.sum((n - np.arange(1, n + 1)) / (n - 1) * x) / n
    k = a0 / (a0 - 2 * a1) - 2.0
    sigma = 2 * a0 * a1 / (a0 - 2 * a1)
    return -k, sigma


def gpd_tail_fit(maxima, fit_threshold: float | None = None) -> GpdFit:
    x = np.asarray(maxima, dtype=float)
    if fit_threshold is None:
        fit_threshold = float(np.quantile(x, 0.95))
    exc = x[x > fit_threshold] - fit_threshold
    if exc.size < MIN_EXCEEDANCES:
        raise DomainError(f"only {exc.size} exceedances of {fit_threshold:.6g}; "
                          f"need at least {MIN_EXCEEDANCES}")
    xi, sigma = gpd_pwm(exc)
    if not sigma > 0:
        raise DomainError(f"degenerate GPD fit (sigma={sigma})")
    return GpdFit(float(xi), float(sigma), float(fit_threshold), int(exc.size), int(x.size))


def gpd_tail_band(maxima, u: float, rng: np.random.Generator, n_boot: int = 200,
                  level: float = 0.95, quantile: float = 0.95) -> tuple[float, float, float]:
    """GPD estimate of P(X >= u) with a percentile-bootstrap band."""
    x = np.asarray(maxima, dtype=float)
    est = gpd_tail_fit(x, np.quantile(x, quantile)).tail_prob(u)
    boots = np.empty(n_boot)
    for b in range(n_boot):
        xb = x[rng.integers(0, x.size, x.size)]
        thr = np.quantile(xb, quantile)
        fit = gpd_tail_fit(xb, thr)
        boots[b] = fit.tail_prob(u) if u >= thr else np.mean(xb >= u)
    alpha = (1 - level) / 2
    lo, hi = np.quantile(boots, [alpha, 1 - alpha])
    return est, float(lo), float(hi)


# --- scalar AR(1) demonstration ------------------------------------------

def ar1_window_mean_std(a: float, noise_std: float, window: int) -> float:
    """Std of the average of ``window`` consecutive values of a stationary scalar AR(1)."""
    var = noise_std**2 / (1 - a**2)
    lags = np.arange(window)
    acov = var * a**np.abs(lags[:, None] - lags[None, :])
    return float(np.sqrt(acov.sum()) / window)


def ar1_true_threshold(a: float, noise_std: float, window: int, p: float) -> float:
    """Threshold ``u`` with P(window average >= u) = p exactly."""
    return float(ar1_window_mean_std(a, noise_std, window) * stats.norm.isf(p))


def ar1_window_averages(spec: Ar1Spec, n: int, window: int, rng: np.random.Generator) -> np.ndarray:
    """Window averages of the first component over ``n`` consecutive windows of one run."""
    y = simulate_ar1(spec, n * window - 1, rng)[:, 0]
    return y.reshape(n, window).mean(axis=1)


@dataclass
class Ar1DemoResult:
    u: float
    true_p: float
    return_levels: list[tuple]
    tail_vs_n: list[tuple]
    timings: list[tuple]


def _best_time(fn, repeats):
    best = math.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def run_ar1_demo(a: float = 0.9, noise_std: float = 1.0, window: int = 24, true_p: float = 0.01,
                 n_grid=(1000, 2000, 5000, 10000, 20000, 50000), n_boot: int = 200,
                 return_periods=(25, 50, 100, 200, 500, 1000, 2000, 5000, 10000), seed_for=None,
                 timing_repeats: int = 3) -> Ar1DemoResult:
    """Conventional exceedance-probability estimation on an AR(1) versus closed-form evidence.

    ``seed_for(tag, n)`` must return a fresh Generator for each purpose; it
    keeps every table independent of the others and of ``n_grid``.
    """
    spec = Ar1Spec(np.array([[a]]), noise_std)
    u = ar1_true_threshold(a, noise_std, window, true_p)

    n_max = max(n_grid)
    big = ar1_window_averages(spec, n_max, window, seed_for("sample", n_max))
    fit = gpd_tail_fit(big)
    rl = []
    boot_rng = seed_for("rl-boot", n_max)
    boot_levels = np.empty((n_boot, len(return_periods)))
    for b in range(n_boot):
        xb = big[boot_rng.integers(0, big.size, big.size)]
        fb = gpd_tail_fit(xb)
        boot_levels[b] = [fb.return_level(rp) for rp in return_periods]
    empirical = np.sort(big)[::-1]
    for j, rp in enumerate(return_periods):
        k = int(round(n_max / rp))
        emp = float(empirical[k - 1]) if 1 <= k <= n_max else math.nan
        lo, hi = np.quantile(boot_levels[:, j], [0.025, 0.975])
        rl.append((rp, emp, fit.return_level(rp), float(lo), float(hi)))

    tail = []
    for n in n_grid:
        x = ar1_window_averages(spec, n, window, seed_for("tail", n))
        est, lo, hi = gpd_tail_band(x, u, seed_for("tail-boot", n), n_boot=n_boot)
        tail.append((n, float(np.mean(x >= u)), est, lo, hi))

    y_obs = simulate_ar1(spec, window - 1, seed_for("observed", 0))
    timings = []
    for n in n_grid:
        t_cf = _best_time(lambda: ar1_loglik(y_obs, spec), timing_repeats)
        mc_rng = seed_for("timing", n)
        t_mc = _best_time(lambda: gpd_tail_fit(ar1_window_averages(spec, n, window, mc_rng)).tail_prob(u),
                          timing_repeats)
        timings.append((n, window, t_cf, t_mc))
    return Ar1DemoResult(u, true_p, rl, tail, timings)
