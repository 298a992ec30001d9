"""Discrete-state machinery for annual-layer chronologies.

The latent time of each proxy sample lives on a lattice of ``m`` years with
``n_s`` states per year; as depth increases the chain either stays in its
state or advances by one, which makes the transition structure bidiagonal
and keeps every recursion O(n_states) per observation.  This module owns the
lattice, the transition/emission builders, the log-space forward/backward
recursions, posterior path sampling, and annual-layer boundary summaries.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.special import logsumexp

from ._kernels import kernels
from .errors import InfeasibleModelError, ValidationError

__all__ = [
    "StateSpace",
    "StayProbabilities",
    "ObservationParams",
    "DepthSeries",
    "BidiagonalTransition",
    "Chronology",
    "LayerBoundary",
    "LayerSummary",
    "build_state_space",
    "auto_year_count",
    "transition_logprobs",
    "emission_logdensity",
    "build_emission_matrix",
    "default_log_init",
    "forward_loglik_sparse",
    "forward_backward",
    "sample_posterior_paths",
    "layer_boundaries",
]

# Posterior mass on the absorbing final state above this level means the year
# budget m was too small for the data.
FINAL_STATE_MASS_WARN = 1e-6

_MAX_STATES = 2**31 - 1


@dataclass(frozen=True)
class StateSpace:
    """Lattice of ``m * n_s`` time states, ``n_s`` per yearly cycle.

    State ``k`` (1-based) sits at time ``k / n_s`` years; code uses 0-based
    indices throughout, so index ``j`` corresponds to state ``k = j + 1``.
    """

    n_s: int
    m: int

    def __post_init__(self):
        if self.n_s < 1 or self.m < 1:
            raise ValidationError("n_s and m must be positive integers")
        if self.m * self.n_s > _MAX_STATES:
            raise ValidationError(
                f"state space of {self.m} x {self.n_s} states exceeds "
                f"the supported size {_MAX_STATES}"
            )

    @property
    def total_states(self) -> int:
        return self.m * self.n_s

    @cached_property
    def times(self) -> np.ndarray:
        """Time in years of each state, strictly increasing."""
        return np.arange(1, self.total_states + 1) / self.n_s

    @cached_property
    def years(self) -> np.ndarray:
        """Year index of each state: floor of its time."""
        return np.arange(1, self.total_states + 1) // self.n_s

    @cached_property
    def phases(self) -> np.ndarray:
        """Within-year position of each state, ``k mod n_s`` for 1-based k."""
        return np.arange(1, self.total_states + 1) % self.n_s

    @cached_property
    def cycle_positions(self) -> np.ndarray:
        """0-based position within the yearly tile; indexes parameter vectors."""
        return np.arange(self.total_states) % self.n_s


def build_state_space(n_s: int, m: int) -> StateSpace:
    """Construct the time lattice; see :class:`StateSpace`."""
    return StateSpace(n_s=int(n_s), m=int(m))


def auto_year_count(n_obs: int, n_s: int, margin: int = 10) -> int:
    """Year budget that the chain cannot saturate: ceil(n / n_s) + margin.

    Each observation advances the chain by at most one state, so n
    observations cross at most ``n / n_s`` year boundaries.
    """
    return int(np.ceil(n_obs / n_s)) + margin


@dataclass(frozen=True)
class StayProbabilities:
    """Per-cycle-position self-transition probabilities, tiled across years."""

    p: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "p", np.asarray(self.p, dtype=float))
        if self.p.ndim != 1 or self.p.size < 1:
            raise ValidationError("stay probabilities must be a 1-d vector")
        if not np.all((self.p > 0.0) & (self.p < 1.0)):
            raise ValidationError(
                "stay probabilities must lie strictly inside (0, 1)"
            )

    @property
    def n_s(self) -> int:
        return self.p.size


@dataclass(frozen=True)
class ObservationParams:
    """Seasonal emission: proxy ~ Normal(a*cos(2*pi*t) + b, sigma^2)."""

    a: float
    b: float
    sigma: float

    def __post_init__(self):
        if not np.isfinite(self.a) or not np.isfinite(self.b):
            raise ValidationError("a and b must be finite")
        if not (self.sigma > 0.0) or not np.isfinite(self.sigma):
            raise ValidationError("sigma must be positive and finite")


@dataclass(frozen=True)
class DepthSeries:
    """Proxy observations indexed by strictly increasing depth (meters)."""

    depths: np.ndarray
    proxy: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "depths", np.asarray(self.depths, dtype=float))
        object.__setattr__(self, "proxy", np.asarray(self.proxy, dtype=float))
        if self.depths.ndim != 1 or self.proxy.ndim != 1:
            raise ValidationError("depths and proxy must be 1-d")
        if self.depths.size != self.proxy.size:
            raise ValidationError("depths and proxy must have equal length")
        if self.depths.size == 0:
            raise ValidationError("depth series is empty")
        if not np.all(np.diff(self.depths) > 0.0):
            raise ValidationError("depths must be strictly increasing")
        if not np.all(np.isfinite(self.proxy)):
            raise ValidationError("proxy values must be finite (drop gaps)")

    @property
    def n(self) -> int:
        return self.depths.size

    def slice(self, start: int, stop: int) -> "DepthSeries":
        return DepthSeries(self.depths[start:stop], self.proxy[start:stop])


@dataclass(frozen=True)
class BidiagonalTransition:
    """Implicit stay/advance transition; never materializes the dense matrix.

    ``log_stay[k]`` and ``log_adv[k]`` are the log probabilities of staying
    in state k and of moving to k+1.  The final state is absorbing:
    ``log_stay[-1] == 0`` and ``log_adv[-1] == -inf``.
    """

    log_stay: np.ndarray
    log_adv: np.ndarray

    def __call__(self, k: int) -> tuple[float, float]:
        return float(self.log_stay[k]), float(self.log_adv[k])

    @property
    def n_states(self) -> int:
        return self.log_stay.size

    @classmethod
    def from_stay_diagonal(cls, stay_diag: np.ndarray) -> "BidiagonalTransition":
        """Build from the full length-K stay diagonal (final entry ignored)."""
        stay = np.asarray(stay_diag, dtype=float).copy()
        if np.any(stay <= 0.0) or np.any(stay[:-1] >= 1.0):
            raise ValidationError("stay diagonal must lie in (0, 1)")
        stay[-1] = 1.0
        with np.errstate(divide="ignore"):
            log_stay = np.log(stay)
            log_adv = np.log1p(-stay)
        log_stay[-1] = 0.0
        log_adv[-1] = -np.inf
        return cls(log_stay=log_stay, log_adv=log_adv)


def transition_logprobs(space: StateSpace,
                        stay: StayProbabilities) -> BidiagonalTransition:
    """Tile per-cycle stay probabilities across years; final state absorbs."""
    if stay.n_s != space.n_s:
        raise ValidationError(
            f"stay probabilities have {stay.n_s} entries, expected {space.n_s}"
        )
    return BidiagonalTransition.from_stay_diagonal(np.tile(stay.p, space.m))


def default_log_init(space: StateSpace) -> np.ndarray:
    """Uniform distribution over the first year's states.

    The chronology is anchored at the core top, so the chain starts somewhere
    inside year zero; callers may override with any normalized distribution.
    """
    log_init = np.full(space.total_states, -np.inf)
    log_init[: space.n_s] = -np.log(space.n_s)
    return log_init


_LOG_2PI = float(np.log(2.0 * np.pi))


def emission_logdensity(s: float, state_time: float,
                        obs: ObservationParams) -> float:
    """log N(s; a*cos(2*pi*t) + b, sigma^2) for one datapoint and state."""
    resid = (s - obs.a * np.cos(2.0 * np.pi * state_time) - obs.b) / obs.sigma
    return float(-np.log(obs.sigma) - 0.5 * _LOG_2PI - 0.5 * resid * resid)


def build_emission_matrix(data: DepthSeries, space: StateSpace, obs) -> np.ndarray:
    """(n, K) matrix of log emission densities.

    ``obs`` may carry scalar a/b (shared across datapoints) or length-n
    vectors (one per datapoint); sigma is always scalar.
    """
    cos_t = np.cos(2.0 * np.pi * space.times)
    a = np.atleast_1d(np.asarray(obs.a, dtype=float))
    b = np.atleast_1d(np.asarray(obs.b, dtype=float))
    if a.size not in (1, data.n) or b.size not in (1, data.n):
        raise ValidationError("per-datapoint a/b must have one entry per row")
    mean = a[:, None] * cos_t[None, :] + b[:, None]
    resid = (data.proxy[:, None] - mean) / obs.sigma
    return -np.log(obs.sigma) - 0.5 * _LOG_2PI - 0.5 * resid * resid


def _check_log_init(log_init: np.ndarray, n_states: int) -> np.ndarray:
    log_init = np.asarray(log_init, dtype=float)
    if log_init.shape != (n_states,):
        raise ValidationError(
            f"log_init has shape {log_init.shape}, expected ({n_states},)"
        )
    total = logsumexp(log_init)
    if not np.isclose(total, 0.0, atol=1e-9):
        raise ValidationError(
            f"log_init must be normalized; logsumexp(log_init) = {total:.3e}"
        )
    return log_init


def _regime_arrays(trans: BidiagonalTransition, n_obs: int):
    log_stay = np.ascontiguousarray(trans.log_stay[None, :])
    log_adv = np.ascontiguousarray(trans.log_adv[None, :])
    step_map = np.zeros(max(n_obs - 1, 0), dtype=np.int64)
    return log_stay, log_adv, step_map


def _diagnose_infeasible(log_omega: np.ndarray) -> str:
    dead = np.where(np.isneginf(log_omega.max(axis=1)))[0]
    if dead.size:
        return (f"emission row {dead[0]} assigns zero probability to every "
                f"state; the data is impossible under this model")
    return ("the forward pass lost all probability mass; the data is "
            "impossible under this model (check tie-point reachability)")


def forward_loglik_sparse(log_omega: np.ndarray, trans: BidiagonalTransition,
                          log_init: np.ndarray) -> float:
    """Marginal log-likelihood via the sparse forward recursion.

    Returns ``-inf`` with a diagnostic warning when the data is impossible
    under the model (e.g. an all ``-inf`` emission row).
    """
    log_omega = np.ascontiguousarray(log_omega, dtype=float)
    log_init = _check_log_init(log_init, trans.n_states)
    log_stay, log_adv, step_map = _regime_arrays(trans, log_omega.shape[0])
    _, loglik = kernels.forward(log_omega, log_stay, log_adv, step_map, log_init)
    if loglik == -np.inf:
        warnings.warn(_diagnose_infeasible(log_omega))
    return loglik


def _smooth(alpha: np.ndarray, beta: np.ndarray) -> np.ndarray:
    post = alpha + beta
    post -= logsumexp(post, axis=1, keepdims=True)
    return np.exp(post)


def forward_backward(log_omega: np.ndarray, trans: BidiagonalTransition,
                     log_init: np.ndarray) -> tuple[np.ndarray, float]:
    """Smoothed state marginals and the marginal log-likelihood.

    Row i of the returned gamma is P(state_i = k | all data); rows sum to 1.
    Raises :class:`InfeasibleModelError` when the likelihood is zero, since
    no normalized posterior exists.
    """
    log_omega = np.ascontiguousarray(log_omega, dtype=float)
    log_init = _check_log_init(log_init, trans.n_states)
    log_stay, log_adv, step_map = _regime_arrays(trans, log_omega.shape[0])
    alpha, loglik = kernels.forward(log_omega, log_stay, log_adv, step_map,
                                    log_init)
    if loglik == -np.inf:
        raise InfeasibleModelError(_diagnose_infeasible(log_omega))
    beta = kernels.backward(log_omega, log_stay, log_adv, step_map)
    return _smooth(alpha, beta), loglik


def sample_posterior_paths(log_omega: np.ndarray, trans: BidiagonalTransition,
                           log_init: np.ndarray, n_paths: int,
                           rng) -> np.ndarray:
    """Draw exact joint posterior state paths by backward sampling.

    ``rng`` is a seed or ``numpy.random.Generator``.  Every path is
    non-decreasing with steps in {0, +1}.
    """
    if n_paths < 0:
        raise ValidationError("n_paths must be nonnegative")
    log_omega = np.ascontiguousarray(log_omega, dtype=float)
    log_init = _check_log_init(log_init, trans.n_states)
    log_stay, log_adv, step_map = _regime_arrays(trans, log_omega.shape[0])
    alpha, loglik = kernels.forward(log_omega, log_stay, log_adv, step_map,
                                    log_init)
    if loglik == -np.inf:
        raise InfeasibleModelError(_diagnose_infeasible(log_omega))
    if n_paths == 0:
        return np.empty((0, log_omega.shape[0]), dtype=np.int64)
    rng = np.random.default_rng(rng)
    uniforms = rng.random((n_paths, log_omega.shape[0]))
    return kernels.sample_paths(alpha, log_stay, log_adv, step_map, uniforms)


@dataclass(frozen=True)
class Chronology:
    """Posterior over the depth-to-time mapping.

    ``gamma`` holds smoothed per-depth state marginals, ``paths`` sampled
    monotone state sequences (possibly empty).  Derived time summaries are
    computed from gamma, which is exact given the fitted parameters.
    """

    space: StateSpace
    depths: np.ndarray
    gamma: np.ndarray
    paths: np.ndarray = field(default_factory=lambda: np.empty((0, 0), dtype=np.int64))
    loglik: float = np.nan

    def __post_init__(self):
        if self.gamma.shape != (self.depths.size, self.space.total_states):
            raise ValidationError("gamma shape does not match depths/state space")

    @property
    def n(self) -> int:
        return self.depths.size

    @cached_property
    def mean_times(self) -> np.ndarray:
        """Posterior mean time (years) at each depth."""
        return self.gamma @ self.space.times

    def time_quantile(self, q: float) -> np.ndarray:
        """Per-depth posterior time quantile (inverted-CDF convention)."""
        cdf = np.cumsum(self.gamma, axis=1)
        idx = np.argmax(cdf >= q - 1e-12, axis=1)
        return self.space.times[idx]

    def path_times(self) -> np.ndarray:
        """Sampled paths mapped to time in years, shape (n_paths, n)."""
        return (self.paths + 1) / self.space.n_s

    def final_state_mass(self) -> float:
        """Largest posterior mass the absorbing final state gets anywhere."""
        return float(self.gamma[:, -1].max()) if self.n else 0.0

    def year_reach_probability(self) -> np.ndarray:
        """(n, m+1) matrix: entry (i, y) = P(year at depth i >= y)."""
        K = self.space.total_states
        # gamma mass at states with year >= y; year(k) = (k+1) // n_s
        rev = np.cumsum(self.gamma[:, ::-1], axis=1)[:, ::-1]
        first_idx = np.arange(1, self.space.m + 1) * self.space.n_s - 1
        out = np.ones((self.n, self.space.m + 1))
        out[:, 1:] = rev[:, np.minimum(first_idx, K - 1)]
        return out


@dataclass(frozen=True)
class LayerBoundary:
    """Posterior summary of the depth where a given year begins."""

    year: int
    depth_q05: float
    depth_q50: float
    depth_q95: float
    support: float  # posterior probability that the year is reached at all


@dataclass(frozen=True)
class LayerSummary:
    boundaries: list
    omitted_years: list


def _boundaries_from_gamma(chron: Chronology, depths: np.ndarray) -> LayerSummary:
    reach = chron.year_reach_probability()
    boundaries, omitted = [], []
    for year in range(1, chron.space.m + 1):
        support = float(reach[-1, year])
        if support <= 1e-12:
            omitted.append(year)
            continue
        # first-passage CDF of the boundary depth is exactly the reach
        # probability because every path is monotone
        cdf = reach[:, year] / support
        qs = [float(depths[np.argmax(cdf >= q - 1e-12)]) for q in (0.05, 0.5, 0.95)]
        boundaries.append(LayerBoundary(year, *qs, support=support))
    return LayerSummary(boundaries, omitted)


def _boundaries_from_paths(chron: Chronology, depths: np.ndarray) -> LayerSummary:
    years = chron.space.years[chron.paths]
    boundaries, omitted = [], []
    n_paths = chron.paths.shape[0]
    for year in range(1, int(years.max()) + 1):
        reached = years >= year
        hit = reached.any(axis=1)
        if not hit.any():
            omitted.append(year)
            continue
        first = np.argmax(reached[hit], axis=1)
        d = depths[first]
        q05, q50, q95 = np.quantile(d, [0.05, 0.5, 0.95], method="inverted_cdf")
        boundaries.append(
            LayerBoundary(year, float(q05), float(q50), float(q95),
                          support=float(hit.sum() / n_paths))
        )
    return LayerSummary(boundaries, omitted)


def layer_boundaries(chron: Chronology, data: DepthSeries,
                     source: str = "auto") -> LayerSummary:
    """Per-year boundary depths with uncertainty.

    The boundary of year y is the depth at which the chain's year first
    equals y; its posterior is summarized by the median and central 90%
    interval.  ``source`` picks the estimator: ``"gamma"`` (exact, from the
    smoothed marginals; valid because paths are monotone), ``"paths"``
    (empirical over sampled paths), or ``"auto"`` (gamma when available).
    Years never reached are omitted and reported in ``omitted_years``.
    """
    if data.n != chron.n:
        raise ValidationError("chronology and depth series lengths differ")
    if source == "auto":
        source = "gamma" if chron.gamma.size else "paths"
    if source == "gamma":
        return _boundaries_from_gamma(chron, data.depths)
    if source == "paths":
        if chron.paths.size == 0:
            raise ValidationError("chronology holds no sampled paths")
        return _boundaries_from_paths(chron, data.depths)
    raise ValidationError(f"unknown boundary source {source!r}")


def smoothed_chronology(log_omega: np.ndarray, trans: BidiagonalTransition,
                        log_init: np.ndarray, data: DepthSeries,
                        space: StateSpace, n_paths: int = 200,
                        rng=None) -> Chronology:
    """Forward-backward smoothing plus posterior path draws in one call."""
    gamma, loglik = forward_backward(log_omega, trans, log_init)
    paths = sample_posterior_paths(log_omega, trans, log_init, n_paths, rng)
    chron = Chronology(space=space, depths=data.depths, gamma=gamma,
                       paths=paths, loglik=loglik)
    if chron.final_state_mass() > FINAL_STATE_MASS_WARN:
        warnings.warn(
            "posterior places mass on the final lattice state; increase the "
            "year budget m"
        )
    return chron
