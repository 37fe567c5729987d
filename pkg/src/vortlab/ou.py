"""Ornstein-Uhlenbeck vorticity process ``d zeta + lam zeta dt = dW^curl``.

Every forced mode is an independent scalar OU process, so the transition law
is known in closed form and sampled exactly; no time-discretisation bias.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import DomainError
from .noise import curl_growth_rate, forced_modes
from .spectral import Linf, ScalarField, Sobolev, norm


@dataclass(frozen=True)
class OUState:
    zeta: ScalarField
    lam: float
    time: float = 0.0

    def __post_init__(self):
        if not self.lam > 0:
            raise DomainError(f"OU rate must be positive, got {self.lam}")


def _transition_variance(lam, dt):
    # (1 - exp(-2 lam dt)) / (2 lam), accurate for small lam*dt
    return -math.expm1(-2.0 * lam * dt) / (2.0 * lam)


def ou_exact_step(state, dt, spec, rng):
    """Advance ``state`` by ``dt`` using the exact Gaussian transition."""
    if not dt > 0:
        raise DomainError(f"dt must be positive, got {dt}")
    lam = state.lam
    grid = state.zeta.grid
    modes = forced_modes(grid, spec)
    hat = math.exp(-lam * dt) * state.zeta.hat + modes.gaussian(rng, _transition_variance(lam, dt))
    return OUState(ScalarField(grid, hat), lam, state.time + dt)


def stationary_sample(spec, lam, rng, grid, time=0.0):
    """Draw ``zeta`` from the stationary law (per-coefficient variance ``c_k^2|k|^2/(2 lam)``)."""
    if not lam > 0:
        raise DomainError(f"OU rate must be positive, got {lam}")
    modes = forced_modes(grid, spec)
    return OUState(ScalarField(grid, modes.gaussian(rng, 1.0 / (2.0 * lam))), lam, time)


def calibrate_lambda(gamma, spec, a, c_tilde=1.0):
    """Rate making ``c_tilde * sqrt(S_a / (2 lam)) < gamma / 2`` with a factor-2 margin.

    The threshold solving the equality is ``2 c_tilde^2 S_a / gamma^2``; twice
    that is returned.  With no noise the threshold is zero and ``gamma`` is
    returned instead so the decomposition stays defined.
    """
    if not gamma > 0:
        raise DomainError(f"gamma must be positive, got {gamma}")
    if not c_tilde > 0:
        raise DomainError(f"c_tilde must be positive, got {c_tilde}")
    if not a > 2:
        raise DomainError(f"a must exceed 2 so that H^(a-1) embeds in L^inf, got {a}")
    s_a = curl_growth_rate(spec, a)
    if s_a == 0.0:
        return float(gamma)
    return 2.0 * (2.0 * c_tilde**2 * s_a / gamma**2)


def calibration_margin(gamma, spec, a, c_tilde, lam):
    """``gamma/2 - c_tilde * sqrt(S_a / (2 lam))``; positive when the rate is large enough."""
    return gamma / 2.0 - c_tilde * math.sqrt(curl_growth_rate(spec, a) / (2.0 * lam))


def estimate_c_tilde(spec, lam, grid, rng, a, samples=200):
    """Least-squares slope (through the origin) of ``|zeta|_inf`` against ``||zeta||_{H^a}``."""
    x = np.empty(samples)
    y = np.empty(samples)
    for i in range(samples):
        z = stationary_sample(spec, lam, rng, grid).zeta
        x[i] = norm(z, Sobolev(a))
        y[i] = norm(z, Linf())
    return float(np.dot(x, y) / np.dot(x, x))


@dataclass(frozen=True)
class OUTimeAverage:
    """Time averages along one stationary OU path."""

    T: float
    dt: float
    mean_square: np.ndarray      # per real coefficient, (a_k..., b_k...)
    stationary_variance: np.ndarray
    mean_sobolev: float          # (1/T) int ||zeta||_{H^a} dt
    linear_growth_max: float     # max_t ||zeta(t)||_{H^a} / (t + 1)


def ou_time_average(spec, lam, grid, rng, T, dt, a, chunk=20000):
    """Integrate one exact OU path on the forced modes and average along it."""
    if not lam > 0:
        raise DomainError(f"OU rate must be positive, got {lam}")
    if not (T > 0 and dt > 0):
        raise DomainError("T and dt must be positive")
    modes = forced_modes(grid, spec)
    n_steps = int(round(T / dt))
    m = modes.count
    std = np.concatenate([modes.std, modes.std])
    weights = np.concatenate([modes.modulus ** (2 * a)] * 2)
    stat_var = std**2 / (2.0 * lam)
    x = np.sqrt(stat_var) * rng.normal(2 * m)
    decay = np.full(2 * m, math.exp(-lam * dt))
    step_std = std * math.sqrt(_transition_variance(lam, dt))
    sq_sum = np.zeros(2 * m)
    norm_sum = 0.0
    growth = float(np.sqrt(np.dot(weights, x * x)))
    done = 0
    while done < n_steps:
        n = min(chunk, n_steps - done)
        z = rng.normal((n, 2 * m))
        x, sq, total, norms = _kernels.ar1_path(x, decay, step_std, z, weights)
        sq_sum += sq
        norm_sum += total
        t = (done + 1 + np.arange(n)) * dt
        growth = max(growth, float(np.max(norms / (t + 1.0))))
        done += n
    return OUTimeAverage(
        T=n_steps * dt, dt=dt, mean_square=sq_sum / n_steps, stationary_variance=stat_var,
        mean_sobolev=norm_sum / n_steps, linear_growth_max=growth)
