"""Dynamical and observation models.

The factual/counterfactual testbed is the Lorenz-63 system with an extra
constant forcing of intensity ``lam`` in direction ``theta`` (degrees) in the
x-y plane.  It is discretised with an explicit Euler step and turned into a
stochastic difference equation by adding ``v_t ~ N(0, Q)`` once per step:

    x_{t+1} = x_t + dt * drift(x_t) + v_t
    y_t     = H x_t + w_t,            w_t ~ N(0, R)

A scalar/multivariate AR(1) process is also provided for the closed-form
likelihood demonstration.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from numba import njit

from .errors import DivergedError, DomainError

BURN_IN = 10_000
# Any coordinate beyond this magnitude is treated as a blow-up.
DIVERGENCE_BOUND = 1e8


@dataclass(frozen=True)
class L63Params:
    lam: float = 0.0
    theta: float = 0.0
    sigma_q: float = 0.0
    dt: float = 0.01
    sigma: float = 10.0
    rho: float = 28.0
    beta: float = 8.0 / 3.0

    def __post_init__(self):
        if not self.dt > 0:
            raise DomainError(f"dt must be > 0, got {self.dt}")
        if not self.sigma_q >= 0:
            raise DomainError(f"sigma_q must be >= 0, got {self.sigma_q}")
        if not self.lam >= 0:
            raise DomainError(f"lam must be >= 0, got {self.lam}")

    @property
    def forcing(self) -> np.ndarray:
        th = np.deg2rad(self.theta)
        return np.array([self.lam * np.cos(th), self.lam * np.sin(th), 0.0])

    def counterfactual(self) -> "L63Params":
        return replace(self, lam=0.0)


def l63_drift(state, p: L63Params) -> np.ndarray:
    """Right-hand side of the forced Lorenz-63 equations.

    Works on a single 3-vector or on any array whose last axis has length 3.
    """
    s = np.asarray(state, dtype=float)
    if s.shape[-1] != 3:
        raise DomainError(f"L63 state must have 3 components, got shape {s.shape}")
    if not np.all(np.isfinite(s)):
        raise DomainError("non-finite L63 state")
    x, y, z = s[..., 0], s[..., 1], s[..., 2]
    f = p.forcing
    out = np.empty_like(s)
    out[..., 0] = p.sigma * (y - x) + f[0]
    out[..., 1] = p.rho * x - y - x * z + f[1]
    out[..., 2] = x * y - p.beta * z
    return out


def _psd_factor(C: np.ndarray) -> np.ndarray:
    """Return L with L @ L.T == C for a symmetric PSD matrix C."""
    if np.count_nonzero(C - np.diag(np.diag(C))) == 0:
        return np.diag(np.sqrt(np.clip(np.diag(C), 0.0, None)))
    w, V = np.linalg.eigh(C)
    return V * np.sqrt(np.clip(w, 0.0, None))


def _check_psd(name, C):
    if not np.allclose(C, C.T, rtol=0, atol=1e-12 * max(1.0, np.abs(C).max())):
        raise DomainError(f"{name} must be symmetric")
    if C.size and np.linalg.eigvalsh(C).min() < -1e-10 * max(np.trace(C), 1e-300):
        raise DomainError(f"{name} must be positive semidefinite")


@dataclass(frozen=True, eq=False)
class HmmSpec:
    """State-space model: dynamics, observation operator and noise covariances.

    ``dynamics`` is either an :class:`L63Params` (nonlinear Euler step) or an
    N x N matrix ``M`` (linear step ``x -> M x``).
    """

    dynamics: L63Params | np.ndarray
    H: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    _q_factor: np.ndarray = field(init=False, repr=False)
    _r_factor: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        H = np.atleast_2d(np.asarray(self.H, dtype=float))
        Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        R = np.atleast_2d(np.asarray(self.R, dtype=float))
        if isinstance(self.dynamics, L63Params):
            n = 3
        else:
            M = np.atleast_2d(np.asarray(self.dynamics, dtype=float))
            if M.shape[0] != M.shape[1]:
                raise DomainError(f"dynamics matrix must be square, got {M.shape}")
            object.__setattr__(self, "dynamics", M)
            n = M.shape[0]
        if Q.shape != (n, n):
            raise DomainError(f"Q must be {n}x{n}, got {Q.shape}")
        if H.ndim != 2 or H.shape[1] != n:
            raise DomainError(f"H must be d x {n}, got {H.shape}")
        d = H.shape[0]
        if R.shape != (d, d):
            raise DomainError(f"R must be {d}x{d}, got {R.shape}")
        _check_psd("Q", Q)
        _check_psd("R", R)
        for name, val in (("H", H), ("Q", Q), ("R", R)):
            val.setflags(write=False)
            object.__setattr__(self, name, val)
        object.__setattr__(self, "_q_factor", _psd_factor(Q))
        object.__setattr__(self, "_r_factor", _psd_factor(R))

    @classmethod
    def l63(cls, params: L63Params, sigma_r: float, H=None) -> "HmmSpec":
        H = np.eye(3) if H is None else np.atleast_2d(np.asarray(H, dtype=float))
        d = H.shape[0]
        return cls(params, H, params.sigma_q**2 * np.eye(3), sigma_r**2 * np.eye(d))

    @property
    def state_dim(self) -> int:
        return self.Q.shape[0]

    @property
    def obs_dim(self) -> int:
        return self.H.shape[0]

    @property
    def is_linear(self) -> bool:
        return not isinstance(self.dynamics, L63Params)

    @property
    def M(self) -> np.ndarray:
        if not self.is_linear:
            raise DomainError("nonlinear (L63) dynamics have no transition matrix")
        return self.dynamics

    @property
    def dt(self) -> float:
        return self.dynamics.dt if not self.is_linear else 1.0

    def with_dynamics(self, dynamics) -> "HmmSpec":
        return HmmSpec(dynamics, self.H, self.Q, self.R)

    def propagate(self, states: np.ndarray) -> np.ndarray:
        """Deterministic part of one step, applied along the last axis."""
        if self.is_linear:
            return states @ self.dynamics.T
        return states + self.dynamics.dt * l63_drift(states, self.dynamics)

    def model_noise(self, rng: np.random.Generator, size=None) -> np.ndarray:
        return rng.standard_normal(_shape(size, self.state_dim)) @ self._q_factor.T

    def obs_noise(self, rng: np.random.Generator, size=None) -> np.ndarray:
        return rng.standard_normal(_shape(size, self.obs_dim)) @ self._r_factor.T


def _shape(size, dim):
    if size is None:
        return (dim,)
    return tuple(np.atleast_1d(size)) + (dim,)


@dataclass(frozen=True, eq=False)
class Trajectory:
    states: np.ndarray
    dt_per_step: float = 1.0

    def __post_init__(self):
        s = np.atleast_2d(np.asarray(self.states, dtype=float))
        if s.shape[0] < 1:
            raise DomainError("trajectory must contain at least one state")
        if not np.all(np.isfinite(s)):
            raise DomainError("trajectory has non-finite entries")
        object.__setattr__(self, "states", s)

    @property
    def T(self) -> int:
        return self.states.shape[0] - 1

    def __len__(self):
        return self.states.shape[0]


@dataclass(frozen=True, eq=False)
class ObservationSequence:
    obs: np.ndarray

    def __post_init__(self):
        y = np.asarray(self.obs, dtype=float)
        if y.ndim == 1:
            y = y[:, None]
        if y.ndim != 2 or y.shape[0] < 1:
            raise DomainError(f"observations must be a (T+1, d) array, got shape {y.shape}")
        if not np.all(np.isfinite(y)):
            bad = int(np.argwhere(~np.isfinite(y))[0, 0])
            raise DomainError(f"observation row {bad} is not finite")
        object.__setattr__(self, "obs", y)

    @property
    def T(self) -> int:
        return self.obs.shape[0] - 1

    @property
    def dim(self) -> int:
        return self.obs.shape[1]

    def __len__(self):
        return self.obs.shape[0]


def _as_obs_array(y) -> np.ndarray:
    if isinstance(y, ObservationSequence):
        return y.obs
    return ObservationSequence(y).obs


def step_stochastic(state, spec: HmmSpec, rng: np.random.Generator, step_index: int = 0) -> np.ndarray:
    x = np.asarray(state, dtype=float)
    new = spec.propagate(x) + spec.model_noise(rng)
    if not np.all(np.isfinite(new)) or np.abs(new).max() > DIVERGENCE_BOUND:
        raise DivergedError(step_index + 1)
    return new


@njit(cache=True)
def _l63_integrate(out, noise, sigma, rho, beta, fx, fy, dt, bound):
    for t in range(noise.shape[0]):
        x = out[t, 0]
        y = out[t, 1]
        z = out[t, 2]
        nx = x + dt * (sigma * (y - x) + fx) + noise[t, 0]
        ny = y + dt * (rho * x - y - x * z + fy) + noise[t, 1]
        nz = z + dt * (x * y - beta * z) + noise[t, 2]
        out[t + 1, 0] = nx
        out[t + 1, 1] = ny
        out[t + 1, 2] = nz
        if not (abs(nx) < bound and abs(ny) < bound and abs(nz) < bound):
            return t + 1
    return -1


def _integrate(spec: HmmSpec, x0: np.ndarray, noise: np.ndarray) -> np.ndarray:
    T = noise.shape[0]
    out = np.empty((T + 1, spec.state_dim))
    out[0] = x0
    if spec.is_linear:
        M = spec.dynamics
        for t in range(T):
            out[t + 1] = M @ out[t] + noise[t]
            if not np.all(np.abs(out[t + 1]) < DIVERGENCE_BOUND):
                raise DivergedError(t + 1)
        return out
    p = spec.dynamics
    f = p.forcing
    bad = _l63_integrate(out, noise, p.sigma, p.rho, p.beta, f[0], f[1], p.dt, DIVERGENCE_BOUND)
    if bad >= 0:
        raise DivergedError(bad)
    return out


def simulate(spec: HmmSpec, x0, T: int, rng: np.random.Generator) -> Trajectory:
    """Run ``T`` stochastic steps from ``x0``.

    Consumes the random stream exactly as ``T`` successive calls to
    :func:`step_stochastic` would.
    """
    if T < 0:
        raise DomainError(f"T must be >= 0, got {T}")
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (spec.state_dim,) or not np.all(np.isfinite(x0)):
        raise DomainError(f"x0 must be a finite {spec.state_dim}-vector")
    noise = spec.model_noise(rng, size=T) if T > 0 else np.zeros((0, spec.state_dim))
    return Trajectory(_integrate(spec, x0, noise), spec.dt)


def simulate_stationary(spec: HmmSpec, n_steps: int, rng: np.random.Generator,
                        x0=None, burn_in: int = BURN_IN) -> Trajectory:
    """Long run after discarding ``burn_in`` steps; returns ``n_steps`` states."""
    if x0 is None:
        x0 = np.ones(spec.state_dim)
    traj = simulate(spec, x0, burn_in + n_steps - 1, rng)
    return Trajectory(traj.states[burn_in:], spec.dt)


def observe(traj: Trajectory, spec: HmmSpec, rng: np.random.Generator) -> ObservationSequence:
    x = traj.states
    if x.shape[1] != spec.state_dim:
        raise DomainError(f"H expects {spec.state_dim}-dim states, trajectory has {x.shape[1]}")
    y = x @ spec.H.T + spec.obs_noise(rng, size=x.shape[0])
    return ObservationSequence(y)


@dataclass(frozen=True, eq=False)
class Ar1Spec:
    """AR(1) process ``Y_{t+1} = A Y_t + w_t`` with Gaussian noise and prior on ``Y_0``."""

    A: np.ndarray
    noise_std: float = 1.0
    prior_mean: np.ndarray | float = 0.0
    prior_std: float | None = None

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        if A.shape[0] != A.shape[1]:
            raise DomainError(f"A must be square, got {A.shape}")
        if np.max(np.abs(np.linalg.eigvals(A))) >= 1:
            raise DomainError("AR(1) coefficient matrix is not stationary (spectral radius >= 1)")
        if not self.noise_std > 0:
            raise DomainError("noise_std must be > 0")
        object.__setattr__(self, "A", A)
        m = np.broadcast_to(np.asarray(self.prior_mean, dtype=float), (A.shape[0],)).copy()
        object.__setattr__(self, "prior_mean", m)
        if self.prior_std is None and A.shape[0] == 1:
            # stationary marginal std of a scalar AR(1)
            object.__setattr__(self, "prior_std", self.noise_std / np.sqrt(1 - A[0, 0] ** 2))
        elif self.prior_std is None:
            object.__setattr__(self, "prior_std", self.noise_std)

    @property
    def dim(self) -> int:
        return self.A.shape[0]


def ar1_loglik(y, spec: Ar1Spec) -> float:
    """Closed-form log-likelihood: prior on ``y_0`` plus Gaussian innovations."""
    Y = _as_obs_array(y)
    if Y.shape[1] != spec.dim:
        raise DomainError(f"observation dim {Y.shape[1]} != AR dimension {spec.dim}")
    d = spec.dim
    log2pi = np.log(2 * np.pi)
    z0 = (Y[0] - spec.prior_mean) / spec.prior_std
    ll = -0.5 * (d * log2pi + z0 @ z0) - d * np.log(spec.prior_std)
    if Y.shape[0] > 1:
        innov = (Y[1:] - Y[:-1] @ spec.A.T) / spec.noise_std
        ll += -0.5 * (innov.size * log2pi + np.sum(innov**2)) - innov.size * np.log(spec.noise_std)
    return float(ll)


def simulate_ar1(spec: Ar1Spec, T: int, rng: np.random.Generator) -> np.ndarray:
    """Sample ``y_0..y_T``; ``y_0`` from the prior."""
    d = spec.dim
    noise = rng.standard_normal((T + 1, d))
    y = np.empty((T + 1, d))
    y[0] = spec.prior_mean + spec.prior_std * noise[0]
    if d == 1:
        y[:, 0] = _ar1_scalar(y[0, 0], spec.A[0, 0], spec.noise_std * noise[1:, 0])
        return y
    for t in range(T):
        y[t + 1] = spec.A @ y[t] + spec.noise_std * noise[t + 1]
    return y


@njit(cache=True)
def _ar1_scalar_kernel(out, a, eps):
    for t in range(eps.shape[0]):
        out[t + 1] = a * out[t] + eps[t]


def _ar1_scalar(y0, a, eps):
    out = np.empty(eps.shape[0] + 1)
    out[0] = y0
    _ar1_scalar_kernel(out, a, eps)
    return out
