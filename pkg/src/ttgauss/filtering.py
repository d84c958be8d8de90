"""Extended Kalman filter for a chain of weakly coupled pendulums.

State ordering is ``(theta_1, omega_1, ..., theta_N, omega_N)`` with
dimension ``d = 2 N``.  Each pendulum feels gravity ``-sin(theta)`` and a
discrete-Laplacian coupling to its neighbours; the first observable is the
displacement of the first pendulum, measured with Gaussian noise.  The
filter integrates mean and covariance with fixed-step RK4 between
measurements and applies the standard Kalman update at each one; truth
trajectories for synthetic data use an adaptive Dormand-Prince 5(4) pair.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .gaussian import SubdiagonalAnalysis, analyze_blocks, numerical_rank

__all__ = [
    "EkfState",
    "ObservationModel",
    "PendulumSystem",
    "covariance_rank_analysis",
    "default_initial_state",
    "default_observation_times",
    "dynamics",
    "ekf_predict",
    "ekf_update",
    "integrate_mean_and_covariance",
    "integrate_truth",
    "jacobian",
    "synthesize_data",
    "theta1_observation",
]


@dataclass(frozen=True)
class PendulumSystem:
    """Chain of `n_pendulums` coupled pendulums.

    `linearized` replaces every ``sin(theta)`` by ``theta`` (the global
    linearization used for comparison runs); the default keeps the true
    nonlinear dynamics with the Jacobian taken at the current mean.
    """

    n_pendulums: int
    kappa: float = 0.2
    process_noise_var: float = 1e-3
    linearized: bool = False

    def __post_init__(self):
        if self.n_pendulums < 1:
            raise ValueError("need at least one pendulum")

    @property
    def dim(self) -> int:
        return 2 * self.n_pendulums


@dataclass(frozen=True)
class EkfState:
    """Mean and covariance at time `t`; arrays are treated as immutable."""

    t: float
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float)
        cov = np.asarray(self.cov, dtype=float)
        if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(cov))):
            raise ValueError("non-finite filter state")
        if cov.shape != (mean.size, mean.size):
            raise ValueError("covariance shape does not match the mean")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", 0.5 * (cov + cov.T))


@dataclass(frozen=True)
class ObservationModel:
    """Linear scalar observation ``z = H x + noise`` with one-hot ``H``."""

    h_matrix: np.ndarray
    noise_var: float

    def __post_init__(self):
        h = np.atleast_2d(np.asarray(self.h_matrix, dtype=float))
        if h.shape[0] != 1:
            raise ValueError("expected a single-row observation matrix")
        nz = np.nonzero(h[0])[0]
        if nz.size != 1 or h[0, nz[0]] != 1.0:
            raise ValueError("H must have exactly one nonzero entry, equal to 1")
        if self.noise_var < 0:
            raise ValueError("noise_var must be >= 0")
        object.__setattr__(self, "h_matrix", h)


def theta1_observation(n_pendulums: int, noise_var: float = 0.04) -> ObservationModel:
    """Observation of the first pendulum's displacement."""
    h = np.zeros((1, 2 * n_pendulums))
    h[0, 0] = 1.0
    return ObservationModel(h_matrix=h, noise_var=noise_var)


def default_initial_state(sys: PendulumSystem) -> np.ndarray:
    """All displacements at 0.25, all velocities at rest."""
    x = np.zeros(sys.dim)
    x[0::2] = 0.25
    return x


def default_observation_times(count: int = 250, dt: float = 0.4) -> np.ndarray:
    return dt * np.arange(count + 1)


def dynamics(sys: PendulumSystem, x) -> np.ndarray:
    """Time derivative of the state under the coupled-pendulum equations."""
    x = np.asarray(x, dtype=float)
    if x.shape != (sys.dim,):
        raise ValueError(f"state must have length {sys.dim}")
    theta = x[0::2]
    omega = x[1::2]
    n = sys.n_pendulums
    coupling = np.zeros(n)
    if n > 1:
        coupling[0] = theta[1] - theta[0]
        coupling[-1] = -(theta[-1] - theta[-2])
        if n > 2:
            coupling[1:-1] = theta[2:] - 2.0 * theta[1:-1] + theta[:-2]
    gravity = theta if sys.linearized else np.sin(theta)
    out = np.empty_like(x)
    out[0::2] = omega
    out[1::2] = -gravity + sys.kappa * coupling
    return out


def jacobian(sys: PendulumSystem, x) -> np.ndarray:
    """Jacobian of `dynamics` at `x` (gravity rows use ``-cos(theta)``)."""
    x = np.asarray(x, dtype=float)
    if x.shape != (sys.dim,):
        raise ValueError(f"state must have length {sys.dim}")
    theta = x[0::2]
    n = sys.n_pendulums
    jac = np.zeros((sys.dim, sys.dim))
    grav = -np.ones(n) if sys.linearized else -np.cos(theta)
    for j in range(n):
        jac[2 * j, 2 * j + 1] = 1.0
        neighbours = 0
        if j > 0:
            jac[2 * j + 1, 2 * (j - 1)] = sys.kappa
            neighbours += 1
        if j < n - 1:
            jac[2 * j + 1, 2 * (j + 1)] = sys.kappa
            neighbours += 1
        jac[2 * j + 1, 2 * j] = grav[j] - sys.kappa * neighbours
    return jac


def integrate_mean_and_covariance(dyn, jac, mean, cov, dt, substeps, noise_var):
    """Fixed-step RK4 on the joint system ``x' = f(x)``,
    ``P' = F(x) P + P F(x)' + noise_var I`` with ``F`` evaluated at the
    concurrently integrated mean.  Returns the symmetrized endpoint.
    """
    if dt <= 0:
        raise ValueError("dt must be > 0")
    if substeps < 1:
        raise ValueError("substeps must be >= 1")
    x = np.array(mean, dtype=float)
    p = np.array(cov, dtype=float)
    eye = noise_var * np.eye(p.shape[0])
    h = dt / substeps

    def rhs_p(x_loc, p_loc):
        f = jac(x_loc)
        return f @ p_loc + p_loc @ f.T + eye

    for _ in range(substeps):
        k1x = dyn(x)
        k1p = rhs_p(x, p)
        k2x = dyn(x + 0.5 * h * k1x)
        k2p = rhs_p(x + 0.5 * h * k1x, p + 0.5 * h * k1p)
        k3x = dyn(x + 0.5 * h * k2x)
        k3p = rhs_p(x + 0.5 * h * k2x, p + 0.5 * h * k2p)
        k4x = dyn(x + h * k3x)
        k4p = rhs_p(x + h * k3x, p + h * k3p)
        x = x + h / 6.0 * (k1x + 2 * k2x + 2 * k3x + k4x)
        p = p + h / 6.0 * (k1p + 2 * k2p + 2 * k3p + k4p)
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(p))):
        raise FloatingPointError("state became non-finite during prediction")
    return x, 0.5 * (p + p.T)


def ekf_predict(sys: PendulumSystem, state: EkfState, dt: float,
                substeps: int | None = None) -> EkfState:
    """Propagate mean and covariance over `dt`.

    The default substep count resolves the covariance ODE at step 0.01,
    generous for the mild pendulum dynamics at the 0.4 observation spacing.
    """
    if substeps is None:
        substeps = max(1, math.ceil(dt / 0.01))
    mean, cov = integrate_mean_and_covariance(
        lambda x: dynamics(sys, x),
        lambda x: jacobian(sys, x),
        state.mean, state.cov, dt, substeps, sys.process_noise_var,
    )
    return EkfState(t=state.t + dt, mean=mean, cov=cov)


def ekf_update(state: EkfState, obs: ObservationModel, z: float) -> EkfState:
    """Kalman measurement update with gain ``K = P H' (H P H' + R)^{-1}``."""
    h = obs.h_matrix
    p = state.cov
    innovation_var = float(h @ p @ h.T) + obs.noise_var
    if not innovation_var > 0 or not np.isfinite(innovation_var):
        raise ValueError(f"singular innovation covariance: {innovation_var}")
    gain = (p @ h.T) / innovation_var
    residual = float(z) - float(h @ state.mean)
    mean = state.mean + gain[:, 0] * residual
    cov = (np.eye(p.shape[0]) - gain @ h) @ p
    return EkfState(t=state.t, mean=mean, cov=cov)


# Dormand-Prince 5(4) tableau; the 5th-order solution is propagated.
_DP_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_DP_A = [
    np.array([]),
    np.array([1 / 5]),
    np.array([3 / 40, 9 / 40]),
    np.array([44 / 45, -56 / 15, 32 / 9]),
    np.array([19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729]),
    np.array([9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656]),
    np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84]),
]
_DP_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_DP_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200,
                   187 / 2100, 1 / 40])


def _rk45_step(f, t, x, h):
    k = np.empty((7, x.size))
    k[0] = f(t, x)
    for i in range(1, 7):
        k[i] = f(t + _DP_C[i] * h, x + h * (_DP_A[i] @ k[:i]))
    x5 = x + h * (_DP_B5 @ k)
    err = h * ((_DP_B5 - _DP_B4) @ k)
    return x5, err


def _rk45_integrate(f, x0, t0, t1, rel_tol, abs_tol):
    """Adaptive embedded 4(5) integration from t0 to t1."""
    x = np.array(x0, dtype=float)
    t = t0
    span = t1 - t0
    if span <= 0:
        return x
    h = span / 100.0
    h_min = 1e-14 * max(abs(t0), abs(t1), 1.0)
    while t < t1:
        h = min(h, t1 - t)
        if h < h_min:
            raise FloatingPointError(
                f"step size underflow at t = {t:.6g} in adaptive integration"
            )
        x_new, err = _rk45_step(f, t, x, h)
        scale = abs_tol + rel_tol * np.maximum(np.abs(x), np.abs(x_new))
        err_norm = np.sqrt(np.mean((err / scale) ** 2))
        if err_norm <= 1.0:
            t += h
            x = x_new
            factor = 5.0 if err_norm == 0 else min(5.0, 0.9 * err_norm ** -0.2)
        else:
            factor = max(0.2, 0.9 * err_norm ** -0.2)
        h *= factor
    return x


def integrate_truth(sys: PendulumSystem, x0, times, rel_tol=1e-6, abs_tol=1e-9):
    """Noise-free trajectory of the true dynamics at the requested times."""
    times = np.asarray(times, dtype=float)
    if np.any(np.diff(times) <= 0):
        raise ValueError("times must be strictly increasing")
    x = np.asarray(x0, dtype=float)
    states = np.empty((times.size, x.size))
    t_prev = times[0]
    if t_prev != 0.0:
        x = _rk45_integrate(lambda t, y: dynamics(sys, y), x, 0.0, t_prev,
                            rel_tol, abs_tol)
    states[0] = x
    for i in range(1, times.size):
        x = _rk45_integrate(lambda t, y: dynamics(sys, y), x, t_prev, times[i],
                            rel_tol, abs_tol)
        states[i] = x
        t_prev = times[i]
    return states


def synthesize_data(sys: PendulumSystem, x0, times, obs: ObservationModel,
                    seed: int, rel_tol: float = 1e-6, abs_tol: float = 1e-9):
    """Noisy measurements of the accurately integrated true trajectory.

    ``z_l = H x(t_l) + N(0, noise_var)`` with a seeded generator, so two
    identically seeded calls return identical sequences.
    """
    states = integrate_truth(sys, x0, times, rel_tol, abs_tol)
    clean = states @ obs.h_matrix[0]
    rng = np.random.default_rng(seed)
    noise = rng.normal(0.0, math.sqrt(obs.noise_var), size=clean.size)
    return clean + noise


def covariance_rank_analysis(cov, trunc_tol: float, relative: bool = True):
    """Spectra of the blocks ``cov[j:, :j]`` plus the largest truncated rank.

    The truncation tolerance is relative to each block's leading singular
    value by default; pass ``relative=False`` for an absolute cutoff.
    Returns ``(SubdiagonalAnalysis, max_rank)``.
    """
    analysis: SubdiagonalAnalysis = analyze_blocks(cov)
    max_rank = max(numerical_rank(s, trunc_tol, relative) for s in analysis.spectra)
    return analysis, max_rank
