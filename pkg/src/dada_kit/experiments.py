"""Forced Lorenz-63 twin experiments: attractor statistics, the attribution sweep and ROC scoring."""
from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .conventional import (EventSpec, calibrate_threshold, event_frequency, pn_conventional,
                           random_direction, segment_maxima, simulate_segments)
from .errors import DadaError, DomainError
from .evidence import causal_probs_from_evidence, evidence_trace
from .filters import GaussianBelief
from .models import BURN_IN, HmmSpec, L63Params, Trajectory, observe, simulate_stationary

log = logging.getLogger(__name__)

# Purpose codes mixed into derived seeds.
SEED_ATTRACTOR = 1
SEED_PROB = 2
SEED_DIRECTION = 3
SEED_EVAL = 4
SEED_DA = 5
SEED_TRUTH = 6


def task_rng(master_seed: int, *key: int) -> np.random.Generator:
    """Counter-based generator keyed on (master seed, task identity)."""
    ss = np.random.SeedSequence(int(master_seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


# --- attractor statistics ------------------------------------------------

@dataclass(frozen=True, eq=False)
class AttractorSample:
    samples: np.ndarray
    mean: np.ndarray
    cov: np.ndarray

    def prior(self) -> GaussianBelief:
        return GaussianBelief(self.mean, self.cov, "forecast", 0)


def attractor_sample(p: L63Params, n_samples: int, rng: np.random.Generator,
                     thin: int = 10, burn_in: int = BURN_IN) -> AttractorSample:
    """Stationary states of the stochastic L63 model, one every ``thin`` steps."""
    if n_samples < 1000:
        raise DomainError(f"n_samples must be >= 1000, got {n_samples}")
    spec = HmmSpec.l63(p, sigma_r=1.0)
    traj = simulate_stationary(spec, n_samples * thin, rng, burn_in=burn_in)
    X = traj.states[::thin]
    mean = X.mean(axis=0)
    A = X - mean
    cov = A.T @ A / (X.shape[0] - 1)
    return AttractorSample(X, mean, 0.5 * (cov + cov.T))


def leading_plane(sample) -> tuple[np.ndarray, np.ndarray]:
    """Two leading principal directions of a sample; each has a positive largest-magnitude entry."""
    X = np.asarray(sample.samples if isinstance(sample, AttractorSample) else sample, dtype=float)
    C = np.cov(X, rowvar=False)
    w, V = np.linalg.eigh(C)
    if w[-2] <= 1e-12 * max(w[-1], 1e-300):
        raise DomainError("sample covariance has rank < 2")
    out = []
    for j in (-1, -2):
        v = V[:, j]
        if v[np.argmax(np.abs(v))] < 0:
            v = -v
        out.append(v / np.linalg.norm(v))
    v1, v2 = out
    v2 = v2 - (v1 @ v2) * v1
    return v1, v2 / np.linalg.norm(v2)


def scott_bandwidth(points: np.ndarray) -> np.ndarray:
    n = points.shape[0]
    return points.std(axis=0, ddof=1) * n ** (-1.0 / 6.0)


def kde2d(points, grid_x, grid_y, bandwidth=None) -> np.ndarray:
    """Gaussian product-kernel density on a rectangular grid, indexed [ix, iy]."""
    P = np.atleast_2d(np.asarray(points, dtype=float))
    if P.shape[0] == 0:
        raise DomainError("empty sample")
    h = scott_bandwidth(P) if bandwidth is None else np.broadcast_to(np.asarray(bandwidth, float), (2,))
    if np.any(h <= 0):
        raise DomainError("KDE bandwidth must be positive")
    gx = np.asarray(grid_x, dtype=float)
    gy = np.asarray(grid_y, dtype=float)
    kx = np.exp(-0.5 * ((gx[None, :] - P[:, :1]) / h[0]) ** 2)
    ky = np.exp(-0.5 * ((gy[None, :] - P[:, 1:2]) / h[1]) ** 2)
    return (kx.T @ ky) / (P.shape[0] * 2 * np.pi * h[0] * h[1])


@dataclass
class AttractorFigure:
    v1: np.ndarray
    v2: np.ndarray
    grid_x: np.ndarray
    grid_y: np.ndarray
    density_factual: np.ndarray
    density_counterfactual: np.ndarray
    factual: AttractorSample
    counterfactual: AttractorSample

    @property
    def difference(self) -> np.ndarray:
        return self.density_factual - self.density_counterfactual


def attractor_figure(p1: L63Params, n_samples: int, seed: int, grid_size: int = 101,
                     thin: int = 10) -> AttractorFigure:
    """Projected factual/counterfactual densities on the leading plane of the factual sample."""
    fac = attractor_sample(p1, n_samples, task_rng(seed, SEED_ATTRACTOR, 1), thin=thin)
    cf = attractor_sample(p1.counterfactual(), n_samples, task_rng(seed, SEED_ATTRACTOR, 0), thin=thin)
    v1, v2 = leading_plane(fac)
    B = np.stack([v1, v2], axis=1)
    pf, pc = fac.samples @ B, cf.samples @ B
    both = np.vstack([pf, pc])
    h = scott_bandwidth(pf)
    lo, hi = both.min(axis=0) - 4 * h, both.max(axis=0) + 4 * h
    gx = np.linspace(lo[0], hi[0], grid_size)
    gy = np.linspace(lo[1], hi[1], grid_size)
    return AttractorFigure(v1, v2, gx, gy, kde2d(pf, gx, gy, h), kde2d(pc, gx, gy, h), fac, cf)


# --- ROC -----------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class RocCurve:
    points: np.ndarray
    thresholds: np.ndarray
    auc: float

    @property
    def gini(self) -> float:
        return 2.0 * self.auc - 1.0


def roc_curve(scores, labels) -> RocCurve:
    """ROC of the rule "positive when score >= threshold"; tied scores switch together.

    ``labels`` are 1 (factual, positive) or 0 (counterfactual).
    """
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels).astype(bool)
    if s.shape != y.shape:
        raise DomainError("scores and labels must have the same length")
    n_pos, n_neg = int(y.sum()), int((~y).sum())
    if n_pos == 0 or n_neg == 0:
        raise DomainError("ROC needs both classes")
    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    last = np.r_[np.nonzero(np.diff(s))[0], s.size - 1]
    tp = np.cumsum(y)[last]
    fp = np.cumsum(~y)[last]
    fpr = np.r_[0.0, fp / n_neg]
    tpr = np.r_[0.0, tp / n_pos]
    auc = float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2))
    return RocCurve(np.column_stack([fpr, tpr]), np.r_[np.inf, s[last]], auc)


def gini_or_nan(scores, labels) -> float:
    labels = np.asarray(labels)
    if labels.size == 0 or labels.all() or not labels.any():
        return math.nan
    return roc_curve(scores, labels).gini


# --- sweep ---------------------------------------------------------------

@dataclass
class SweepConfig:
    lambda_grid: list[float] = field(default_factory=lambda: list(np.linspace(0, 40, 10)))
    sigma_q_grid: list[float] = field(default_factory=lambda: list(np.linspace(0.1, 0.5, 10)))
    sigma_r_grid: list[float] = field(default_factory=lambda: list(np.linspace(0.1, 1.0, 10)))
    theta1: float = -140.0
    n_directions: int = 10
    n_eval_sequences: int = 100
    T: int = 20
    n_prob_segments: int = 50_000
    seed: int = 0
    target_p: float = 0.01
    filter: str = "enkf"
    ensemble_size: int = 100
    inflation: float = 1.0
    conditioned: bool = True
    shared_prior: bool = False
    attractor_samples: int = 20_000
    attractor_thin: int = 10
    dt: float = 0.01

    def __post_init__(self):
        for name in ("lambda_grid", "sigma_q_grid", "sigma_r_grid"):
            if len(getattr(self, name)) == 0:
                raise DomainError(f"{name} must not be empty")
            setattr(self, name, [float(v) for v in getattr(self, name)])
        if self.T < 1:
            raise DomainError("T must be >= 1")
        if self.filter not in ("enkf", "kf"):
            raise DomainError(f"unknown filter {self.filter!r}")
        if self.filter == "kf":
            raise DomainError("the L63 sweep needs the EnKF (the model is nonlinear)")

    def triplets(self):
        for i, lam in enumerate(self.lambda_grid):
            for j, sq in enumerate(self.sigma_q_grid):
                for k, sr in enumerate(self.sigma_r_grid):
                    yield (i, j, k), (lam, sq, sr)


@dataclass(frozen=True)
class LabeledScore:
    true_world: str
    score_dada: float
    score_conv: float
    log_ratio: float
    quintuplet: int
    lam: float
    sigma_q: float
    sigma_r: float
    direction: int
    sequence: int

    @property
    def label(self) -> int:
        return int(self.true_world == "factual")


@dataclass(frozen=True)
class Quintuplet:
    id: int
    lam: float
    sigma_q: float
    sigma_r: float
    direction: int
    phi: tuple
    u: float
    p0: float
    p1: float
    se0: float
    se1: float
    n_factual: int
    n_counterfactual: int


@dataclass
class SweepResult:
    scores: list[LabeledScore]
    quintuplets: list[Quintuplet]
    failures: list[dict]
    config: SweepConfig

    def arrays(self):
        """Labels, DADA ranking scores and conventional scores.

        DADA sequences are ranked by log(f1/f0): PN = 1 - f0/f1 is a strictly
        increasing function of it, so the ROC is the same, but the log ratio does
        not saturate at PN = 1 or overflow to -inf in double precision.
        """
        lab = np.array([s.label for s in self.scores], dtype=int)
        dada = np.array([s.log_ratio for s in self.scores])
        conv = np.array([s.score_conv for s in self.scores])
        return lab, dada, conv

    def gini(self, mask=None) -> tuple[float, float]:
        lab, dada, conv = self.arrays()
        if mask is not None:
            lab, dada, conv = lab[mask], dada[mask], conv[mask]
        return gini_or_nan(dada, lab), gini_or_nan(conv, lab)


def mixture_counts(n: int, p0: float, p1: float) -> tuple[int, int]:
    """(factual, counterfactual) counts in proportion p1 : p0."""
    n_f = int(round(n * p1 / (p0 + p1)))
    return n_f, n - n_f


def draw_event_windows(spec: HmmSpec, ev: EventSpec, count: int, rng: np.random.Generator,
                       conditioned: bool = True, chunk: int = 5000,
                       max_segments: int = 2_000_000) -> np.ndarray:
    """``count`` observed windows from a stationary run, optionally only those with an event."""
    T = ev.T
    out = []
    x0 = None
    burn = BURN_IN
    drawn = 0
    while sum(len(o) for o in out) < count:
        if drawn >= max_segments:
            raise DadaError(f"only {sum(len(o) for o in out)} of {count} event windows "
                            f"found in {drawn} segments")
        traj = simulate_stationary(spec, chunk * (T + 1) + 1, rng, x0=x0, burn_in=burn)
        burn = 0
        x0 = traj.states[-1]
        y = observe(Trajectory(traj.states[:-1]), spec, rng).obs.reshape(chunk, T + 1, -1)
        drawn += chunk
        if conditioned:
            y = y[segment_maxima(y, ev.phi) >= ev.u]
        out.append(y)
    return np.concatenate(out)[:count]


def dada_score(y, spec_f: HmmSpec, spec_c: HmmSpec, prior_f: GaussianBelief,
               prior_c: GaussianBelief, rng_factory, ensemble_size: int = 100,
               inflation: float = 1.0, filter: str = "enkf"):
    """Assimilate ``y`` in both worlds with common random numbers; return (PN, logf0, logf1)."""
    tr1 = evidence_trace(spec_f, prior_f, y, filter, rng_factory(), ensemble_size, inflation, "factual")
    tr0 = evidence_trace(spec_c, prior_c, y, filter, rng_factory(), ensemble_size, inflation,
                         "counterfactual")
    return causal_probs_from_evidence(tr0.total, tr1.total).pn, tr0, tr1


def _run_triplet(args):
    cfg, idx, (lam, sq, sr) = args
    i, j, k = idx
    seed = cfg.seed
    scores, quints, failures = [], [], []
    tid = (i * len(cfg.sigma_q_grid) + j) * len(cfg.sigma_r_grid) + k
    p_f = L63Params(lam=lam, theta=cfg.theta1, sigma_q=sq, dt=cfg.dt)
    p_c = p_f.counterfactual()
    spec_f, spec_c = HmmSpec.l63(p_f, sr), HmmSpec.l63(p_c, sr)
    try:
        att_c = attractor_sample(p_c, cfg.attractor_samples, task_rng(seed, SEED_ATTRACTOR, 0, j),
                                 thin=cfg.attractor_thin)
        if lam == 0:
            att_f = att_c
        else:
            att_f = attractor_sample(p_f, cfg.attractor_samples, task_rng(seed, SEED_ATTRACTOR, 1, j, i),
                                     thin=cfg.attractor_thin)
        prior_c = att_c.prior()
        prior_f = prior_c if cfg.shared_prior else att_f.prior()
        seg1 = simulate_segments(spec_f, cfg.n_prob_segments, cfg.T, task_rng(seed, SEED_PROB, tid, 1))
        seg0 = simulate_segments(spec_c, cfg.n_prob_segments, cfg.T, task_rng(seed, SEED_PROB, tid, 0))
    except DadaError as exc:
        failures.append({"lam": lam, "sigma_q": sq, "sigma_r": sr, "stage": "setup", "error": str(exc)})
        return scores, quints, failures

    for d in range(cfg.n_directions):
        qid = tid * cfg.n_directions + d
        try:
            phi = random_direction(3, task_rng(seed, SEED_DIRECTION, tid, d))
            u = calibrate_threshold(seg1, phi, cfg.target_p)
            ev = EventSpec(phi, u, cfg.T)
            e1, e0 = event_frequency(seg1, ev), event_frequency(seg0, ev)
            pn_p = pn_conventional(e0.p, e1.p)
            n_f, n_c = mixture_counts(cfg.n_eval_sequences, e0.p, e1.p)
            quints.append(Quintuplet(qid, lam, sq, sr, d, tuple(float(v) for v in phi), u,
                                     e0.p, e1.p, e0.se, e1.se, n_f, n_c))
            windows = []
            for world, spec, count in (("factual", spec_f, n_f), ("counterfactual", spec_c, n_c)):
                if count:
                    w = draw_event_windows(spec, ev, count,
                                           task_rng(seed, SEED_EVAL, tid, d, world == "factual"),
                                           conditioned=cfg.conditioned)
                    windows += [(world, y) for y in w]
        except DadaError as exc:
            failures.append({"lam": lam, "sigma_q": sq, "sigma_r": sr, "direction": d,
                             "stage": "event", "error": str(exc)})
            continue
        for s, (world, y) in enumerate(windows):
            try:
                pn_f, tr0, tr1 = dada_score(y, spec_f, spec_c, prior_f, prior_c,
                                        lambda: task_rng(seed, SEED_DA, tid, d, s),
                                        cfg.ensemble_size, cfg.inflation, cfg.filter)
            except DadaError as exc:
                failures.append({"lam": lam, "sigma_q": sq, "sigma_r": sr, "direction": d,
                                 "sequence": s, "stage": "assimilation", "error": str(exc)})
                continue
            scores.append(LabeledScore(world, pn_f, pn_p, tr1.total - tr0.total, qid, lam, sq, sr, d, s))
    return scores, quints, failures


def default_workers() -> int:
    return int(os.environ.get("DADA_KIT_WORKERS", "1"))


def run_sweep(cfg: SweepConfig, workers: int | None = None) -> SweepResult:
    """Full attribution sweep; result order depends only on the grid, never on scheduling."""
    workers = default_workers() if workers is None else workers
    tasks = [(cfg, idx, vals) for idx, vals in cfg.triplets()]
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_triplet, tasks))
    else:
        results = [_run_triplet(t) for t in tasks]
    scores, quints, failures = [], [], []
    for s, q, f in results:
        scores += s
        quints += q
        failures += f
    if failures:
        log.warning("%d sweep tasks failed", len(failures))
    return SweepResult(scores, quints, failures, cfg)


def gini_table(result: SweepResult, key: str) -> list[tuple]:
    """(value, n, gini_dada, gini_conv) for each distinct value of ``key`` among the scores."""
    vals = np.array([getattr(s, key) for s in result.scores])
    rows = []
    for v in sorted(set(vals.tolist())):
        m = vals == v
        gd, gc = result.gini(m)
        rows.append((v, int(m.sum()), gd, gc))
    return rows


def gini_by_contrast(result: SweepResult, edges=(0.0, 0.25, 0.5, 1.0, 2.0, 4.0)) -> list[tuple]:
    """Gini within bins of log(p1/p0); p0 = 0 falls into the last, open-ended bin."""
    q = {x.id: x for x in result.quintuplets}
    contrast = []
    for s in result.scores:
        x = q[s.quintuplet]
        contrast.append(math.inf if x.p0 == 0 else math.log(x.p1 / x.p0))
    contrast = np.array(contrast)
    bounds = [-math.inf, *edges, math.inf]
    rows = []
    for lo, hi in zip(bounds[:-1], bounds[1:]):
        m = (contrast >= lo) & (contrast < hi) if hi != math.inf else contrast >= lo
        gd, gc = result.gini(m)
        rows.append((lo, hi, int(m.sum()), gd, gc))
    return rows


# --- single-sequence evidence traces -------------------------------------

@dataclass
class EvidenceTable:
    t: np.ndarray
    inc0: np.ndarray
    inc1: np.ndarray
    cum0: np.ndarray
    cum1: np.ndarray

    @property
    def pn(self) -> np.ndarray:
        return -np.expm1(self.cum0 - self.cum1)

    def rows(self):
        return list(zip(self.t.tolist(), self.inc0.tolist(), self.inc1.tolist(),
                        self.cum0.tolist(), self.cum1.tolist(), self.pn.tolist()))


def evidence_figure_export(tr0, tr1) -> EvidenceTable:
    """Per-step table of both worlds' increments, cumulative log-evidence and running PN."""
    if tr0.increments.shape != tr1.increments.shape:
        raise DomainError("traces cover different windows")
    t = np.arange(tr0.increments.size)
    return EvidenceTable(t, tr0.increments, tr1.increments, tr0.cumulative, tr1.cumulative)


@dataclass
class TwinRun:
    truth: np.ndarray
    obs: np.ndarray
    table: EvidenceTable

    @property
    def final_pn(self) -> float:
        return float(self.table.pn[-1])


def twin_experiment(lam: float, theta: float, sigma_q: float, sigma_r: float, T: int, seed: int,
                    ensemble_size: int = 100, inflation: float = 1.0, attractor_samples: int = 20_000,
                    priors=None, dt: float = 0.01) -> TwinRun:
    """Factual-world truth and observations, assimilated in both worlds."""
    p_f = L63Params(lam=lam, theta=theta, sigma_q=sigma_q, dt=dt)
    p_c = p_f.counterfactual()
    spec_f, spec_c = HmmSpec.l63(p_f, sigma_r), HmmSpec.l63(p_c, sigma_r)
    if priors is None:
        priors = twin_priors(p_f, attractor_samples, seed)
    prior_c, prior_f = priors
    truth = simulate_stationary(spec_f, T + 1, task_rng(seed, SEED_TRUTH, 0))
    y = observe(truth, spec_f, task_rng(seed, SEED_TRUTH, 1)).obs
    _, tr0, tr1 = dada_score(y, spec_f, spec_c, prior_f, prior_c, lambda: task_rng(seed, SEED_DA, 0),
                             ensemble_size, inflation)
    return TwinRun(truth.states, y, evidence_figure_export(tr0, tr1))


def twin_priors(p_f: L63Params, attractor_samples: int, seed: int):
    att_c = attractor_sample(p_f.counterfactual(), attractor_samples, task_rng(seed, SEED_ATTRACTOR, 0))
    att_f = att_c if p_f.lam == 0 else attractor_sample(p_f, attractor_samples,
                                                        task_rng(seed, SEED_ATTRACTOR, 1))
    return att_c.prior(), att_f.prior()


def sweep_config_dict(cfg: SweepConfig) -> dict:
    return asdict(cfg)
