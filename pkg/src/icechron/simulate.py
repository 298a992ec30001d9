"""Synthetic data generators: the discrete chain with seasonal emissions and
a latent-SDE prior with a Laplace observation model.

The discrete generator is exact ancestral sampling; irregular depth grids use
exact event-time simulation of the rate process (independent of the kernel
code, so the two can be tested against each other).  The SDE generator is
Euler-Maruyama on a three-component system: a Matern-3/2 latent pair driving
a monotone-in-expectation time component through a softplus-positive drift.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .ctsmodel import RateVector, full_rates
from .errors import ValidationError
from .hmm import (
    DepthSeries,
    ObservationParams,
    StateSpace,
    StayProbabilities,
    default_log_init,
)

__all__ = [
    "SdePriorParams",
    "SdePath",
    "simulate_hmm",
    "sde_drift",
    "euler_maruyama",
    "simulate_sde_dataset",
    "stationary_latent_sd",
]


def _resolve_depths(depths) -> np.ndarray:
    if isinstance(depths, tuple):
        n, dx = depths
        return dx * np.arange(1, n + 1, dtype=float)
    depths = np.asarray(depths, dtype=float)
    if not np.all(np.diff(depths) > 0.0):
        raise ValidationError("depth grid must be strictly increasing")
    return depths


def _sample_states_discrete(space, stay, n, log_init, rng):
    diag = np.tile(stay.p, space.m)
    states = np.empty(n, dtype=np.int64)
    probs = np.exp(log_init - log_init.max())
    probs /= probs.sum()
    states[0] = rng.choice(space.total_states, p=probs)
    K = space.total_states
    for i in range(1, n):
        k = states[i - 1]
        if k == K - 1:
            states[i] = k
        else:
            states[i] = k if rng.random() < diag[k] else k + 1
    return states


def _sample_states_rates(space, rates, depths, log_init, rng):
    """Exact event-time simulation of the pure advance process."""
    q = full_rates(space, rates)
    K = space.total_states
    probs = np.exp(log_init - log_init.max())
    probs /= probs.sum()
    k = int(rng.choice(K, p=probs))
    states = np.empty(depths.size, dtype=np.int64)
    states[0] = k
    position = depths[0]
    next_jump = position + (rng.exponential(1.0 / q[k]) if q[k] > 0 else np.inf)
    for i in range(1, depths.size):
        target = depths[i]
        while next_jump <= target and k < K - 1:
            position = next_jump
            k += 1
            next_jump = position + (
                rng.exponential(1.0 / q[k]) if q[k] > 0 else np.inf)
        states[i] = k
    return states


def simulate_hmm(space: StateSpace, dynamics, obs: ObservationParams,
                 depths, rng=None, log_init=None):
    """Ancestral sample from the chain plus seasonal Gaussian emissions.

    ``dynamics`` is either :class:`StayProbabilities` (per-observation-step
    transitions) or :class:`RateVector` (continuous advance over the depth
    gaps); ``depths`` is an increasing array or an ``(n, spacing)`` pair.

    Returns (data, truth) where truth holds the sampled states, their times
    in years, and their year indices.
    """
    rng = np.random.default_rng(rng)
    depths = _resolve_depths(depths)
    n = depths.size
    if log_init is None:
        log_init = default_log_init(space)
    if isinstance(dynamics, StayProbabilities):
        states = _sample_states_discrete(space, dynamics, n, log_init, rng)
    elif isinstance(dynamics, RateVector):
        states = _sample_states_rates(space, dynamics, depths, log_init, rng)
    else:
        raise ValidationError(
            "dynamics must be StayProbabilities or RateVector")
    times = space.times[states]
    proxy = (obs.a * np.cos(2.0 * np.pi * times) + obs.b
             + obs.sigma * rng.standard_normal(n))
    truth = {"states": states, "times": times, "years": space.years[states]}
    return DepthSeries(depths, proxy), truth


# ---------------------------------------------------------------------------
# latent SDE prior


@dataclass(frozen=True)
class SdePriorParams:
    """Latent SDE prior: Matern-3/2 pair (z_a, z_b) driving monotone time.

    lam: inverse length scale of the latent process (1/meters).
    alpha: time drift scale (years/meter) applied to softplus(z_a).
    eps: diffusion of the time component; 0 makes every path monotone.
    laplace_scale: observation noise scale of the seasonal proxy.
    """

    lam: float
    alpha: float
    eps: float = 1e-2
    laplace_scale: float = 0.05

    def __post_init__(self):
        if not (self.lam > 0.0 and self.alpha > 0.0):
            raise ValidationError("lam and alpha must be positive")
        if self.eps < 0.0 or self.laplace_scale <= 0.0:
            raise ValidationError("eps must be >= 0 and laplace_scale > 0")


@dataclass(frozen=True)
class SdePath:
    """One simulated trajectory on a depth grid."""

    depths: np.ndarray
    z_a: np.ndarray
    z_b: np.ndarray
    t: np.ndarray


def _softplus(x):
    return np.logaddexp(0.0, x)


def sde_drift(state, params: SdePriorParams) -> np.ndarray:
    """Drift of (z_a, z_b, t); the time component is strictly positive."""
    z_a, z_b, _ = state
    return np.array([
        z_b,
        -params.lam**2 * z_a - 2.0 * params.lam * z_b,
        params.alpha * _softplus(z_a),
    ])


def stationary_latent_sd(params: SdePriorParams) -> tuple[float, float]:
    """Stationary standard deviations of (z_a, z_b)."""
    return (np.sqrt(1.0 / (4.0 * params.lam**3)),
            np.sqrt(1.0 / (4.0 * params.lam)))


def euler_maruyama(params: SdePriorParams, depth_grid, n_paths: int,
                   rng=None, substeps: int = 1) -> list[SdePath]:
    """Euler-Maruyama paths of the latent prior.

    ``substeps`` refines each grid interval internally while still reporting
    values on the given grid.  The latent pair starts from its stationary
    distribution; time starts at zero.
    """
    rng = np.random.default_rng(rng)
    grid = _resolve_depths(depth_grid)
    steps = np.diff(grid)
    if steps.size and params.lam * steps.max() / substeps > 0.1:
        warnings.warn(
            "Euler-Maruyama step is coarse for this length scale; consider "
            "a finer grid or more substeps")
    sd_a, sd_b = stationary_latent_sd(params)
    z_a = sd_a * rng.standard_normal(n_paths)
    z_b = sd_b * rng.standard_normal(n_paths)
    t = np.zeros(n_paths)
    out_a = np.empty((n_paths, grid.size))
    out_b = np.empty((n_paths, grid.size))
    out_t = np.empty((n_paths, grid.size))
    out_a[:, 0], out_b[:, 0], out_t[:, 0] = z_a, z_b, t
    for i, h_full in enumerate(steps):
        h = h_full / substeps
        sq = np.sqrt(h)
        for _ in range(substeps):
            drift_b = -params.lam**2 * z_a - 2.0 * params.lam * z_b
            drift_t = params.alpha * _softplus(z_a)
            new_a = z_a + z_b * h
            new_b = z_b + drift_b * h + sq * rng.standard_normal(n_paths)
            new_t = t + drift_t * h + params.eps * sq * rng.standard_normal(n_paths)
            z_a, z_b, t = new_a, new_b, new_t
        out_a[:, i + 1], out_b[:, i + 1], out_t[:, i + 1] = z_a, z_b, t
    return [SdePath(grid, out_a[p], out_b[p], out_t[p])
            for p in range(n_paths)]


def simulate_sde_dataset(params: SdePriorParams, depth_grid, rng=None,
                         seasonal: str = "sin_pi", substeps: int = 1):
    """One SDE path observed through Laplace noise around the seasonal curve.

    ``seasonal`` selects the mean curve: ``"sin_pi"`` is sin(pi * t), which
    has a two-year period and is kept as the documented default;
    ``"sin_2pi"`` gives the one-year cycle sin(2 * pi * t).

    Returns (data, truth) with the latent path in truth.
    """
    rng = np.random.default_rng(rng)
    path = euler_maruyama(params, depth_grid, 1, rng, substeps=substeps)[0]
    if seasonal == "sin_pi":
        mean = np.sin(np.pi * path.t)
    elif seasonal == "sin_2pi":
        mean = np.sin(2.0 * np.pi * path.t)
    else:
        raise ValidationError(f"unknown seasonal mode {seasonal!r}")
    proxy = mean + rng.laplace(scale=params.laplace_scale, size=path.t.size)
    truth = {"path": path, "mean": mean}
    return DepthSeries(path.depths, proxy), truth
