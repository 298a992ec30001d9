"""Hierarchical extension: drifting emission parameters, yearwise transition
probabilities with shared Beta hyperpriors, and volcanic tie-points.

The observation parameters a, b get one value per datapoint, constrained by
a hierarchical prior so they drift slowly along the core.  Stay
probabilities get one value per state (so annual-layer statistics can change
over the years) with phase-matched Beta hyperparameters shared across years.
Tie-points swap a datapoint's proxy emission for a hard constraint on the
year of the latent state.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import betaln, digamma, gammaln

from ._kernels import kernels
from .errors import ValidationError
from .hmm import (
    BidiagonalTransition,
    DepthSeries,
    StateSpace,
    _check_log_init,
    _regime_arrays,
    build_emission_matrix,
    forward_loglik_sparse,
)

__all__ = [
    "HierObservationParams",
    "YearwiseStayProbabilities",
    "TiePoint",
    "HierPriorConfig",
    "tie_emission_row",
    "attach_tiepoints",
    "yearwise_transition",
    "hier_log_joint",
    "hier_log_joint_and_grad",
]

_LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class HierObservationParams:
    """Per-datapoint cosine emission parameters with their hyperparameters.

    ``a`` and ``b`` hold one amplitude/offset per datapoint; ``mu_a/tau_a``
    and ``mu_b/tau_b`` are the location/scale of the hierarchical prior that
    keeps them slowly varying.
    """

    a: np.ndarray
    b: np.ndarray
    sigma: float
    mu_a: float = 0.0
    tau_a: float = 1.0
    mu_b: float = 0.0
    tau_b: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "a", np.asarray(self.a, dtype=float))
        object.__setattr__(self, "b", np.asarray(self.b, dtype=float))
        if self.a.shape != self.b.shape or self.a.ndim != 1:
            raise ValidationError("a and b must be 1-d vectors of equal length")
        if not (self.sigma > 0.0):
            raise ValidationError("sigma must be positive")
        if not (self.tau_a > 0.0 and self.tau_b > 0.0):
            raise ValidationError("hyper-scales must be positive")

    @property
    def n(self) -> int:
        return self.a.size


@dataclass(frozen=True)
class YearwiseStayProbabilities:
    """One stay probability per state, with phase-shared Beta hyperparameters.

    ``p[k]`` governs state k (the final state is structurally absorbing and
    its entry is shaped by the prior alone); ``alpha[j]``/``beta[j]`` are the
    Beta hyperparameters for all states at cycle position j.
    """

    p: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "p", np.asarray(self.p, dtype=float))
        object.__setattr__(self, "alpha", np.asarray(self.alpha, dtype=float))
        object.__setattr__(self, "beta", np.asarray(self.beta, dtype=float))
        if not np.all((self.p > 0.0) & (self.p < 1.0)):
            raise ValidationError("yearwise stay probabilities must lie in (0, 1)")
        if self.alpha.shape != self.beta.shape or self.alpha.ndim != 1:
            raise ValidationError("alpha and beta must be 1-d of equal length")
        if not (np.all(self.alpha > 0.0) and np.all(self.beta > 0.0)):
            raise ValidationError("Beta hyperparameters must be positive")

    @property
    def n_states(self) -> int:
        return self.p.size


@dataclass(frozen=True)
class TiePoint:
    """Known (depth sample, calendar year) pair, e.g. from volcanic ash."""

    depth_index: int
    year: int


@dataclass(frozen=True)
class HierPriorConfig:
    """Hyperprior constants for the hierarchical model.

    tau_scale: scale of the half-Normal hyperprior on tau_a, tau_b.
    beta_hyper_shape/rate: Gamma hyperprior on each Beta hyperparameter.
    ab_prior: "iid" for independent Normal(mu, tau^2) on each a_i/b_i, or
    "random_walk" for increments a_i - a_{i-1} ~ Normal(0, tau^2) anchored
    at a_1 ~ Normal(mu, tau^2).
    """

    tau_scale: float = 1.0
    beta_hyper_shape: float = 2.0
    beta_hyper_rate: float = 0.5
    ab_prior: str = "iid"

    def __post_init__(self):
        if self.ab_prior not in ("iid", "random_walk"):
            raise ValidationError(f"unknown ab_prior {self.ab_prior!r}")


def tie_emission_row(space: StateSpace, tie: TiePoint) -> np.ndarray:
    """Log emission row pinning the latent year: uniform over the tie year's
    states, zero elsewhere."""
    if not 0 <= tie.year < space.m:
        raise ValidationError(
            f"tie-point year {tie.year} outside the modeled range [0, {space.m})"
        )
    row = np.full(space.total_states, -np.inf)
    row[space.years == tie.year] = -np.log(space.n_s)
    return row


def attach_tiepoints(log_omega: np.ndarray, ties, space: StateSpace,
                     mode: str = "replace") -> np.ndarray:
    """Insert tie-point observation rows into an emission matrix.

    ``mode="replace"`` swaps the proxy evidence at the tie depth for the tie
    constraint (the default); ``mode="combine"`` keeps both likelihood terms.
    """
    if mode not in ("replace", "combine"):
        raise ValidationError(f"unknown tie mode {mode!r}")
    out = np.array(log_omega, dtype=float, copy=True)
    seen = set()
    for tie in ties:
        idx = int(tie.depth_index)
        if not 0 <= idx < out.shape[0]:
            raise ValidationError(f"tie depth index {idx} out of range")
        if idx in seen:
            raise ValidationError(f"two tie-points at depth index {idx}")
        seen.add(idx)
        row = tie_emission_row(space, tie)
        out[idx] = row if mode == "replace" else out[idx] + row
    return out


def yearwise_transition(space: StateSpace,
                        yearwise: YearwiseStayProbabilities) -> BidiagonalTransition:
    if yearwise.n_states != space.total_states:
        raise ValidationError(
            f"yearwise stay vector has {yearwise.n_states} entries, "
            f"expected {space.total_states}"
        )
    return BidiagonalTransition.from_stay_diagonal(yearwise.p)


def _half_normal_logpdf(x: float, scale: float) -> float:
    return 0.5 * np.log(2.0 / np.pi) - np.log(scale) - 0.5 * (x / scale) ** 2


def _gamma_logpdf(x, shape: float, rate: float):
    return (shape * np.log(rate) - gammaln(shape)
            + (shape - 1.0) * np.log(x) - rate * x)


def _ab_prior_terms(values: np.ndarray, mu: float, tau: float, mode: str):
    """Log density and gradients of one hierarchical a/b block.

    Returns (logp, d/dvalues, d/dmu, d/dtau).
    """
    n = values.size
    if mode == "iid":
        z = (values - mu) / tau
        logp = -n * (np.log(tau) + 0.5 * _LOG_2PI) - 0.5 * float(z @ z)
        grad_v = -z / tau
        grad_mu = float(np.sum(z) / tau)
        grad_tau = float((z @ z - n) / tau)
        return logp, grad_v, grad_mu, grad_tau
    # random walk: anchor + increments
    diffs = np.diff(values)
    z0 = (values[0] - mu) / tau
    zd = diffs / tau
    logp = -n * (np.log(tau) + 0.5 * _LOG_2PI) - 0.5 * (z0 * z0 + float(zd @ zd))
    grad_v = np.zeros(n)
    grad_v[0] = -z0 / tau
    grad_v[:-1] += zd / tau
    grad_v[1:] -= zd / tau
    grad_mu = float(z0 / tau)
    grad_tau = float((z0 * z0 + zd @ zd - n) / tau)
    return logp, grad_v, grad_mu, grad_tau


def _obs_prior_and_grad(obs: HierObservationParams, cfg: HierPriorConfig):
    logp_a, ga, gmu_a, gtau_a = _ab_prior_terms(obs.a, obs.mu_a, obs.tau_a,
                                                cfg.ab_prior)
    logp_b, gb, gmu_b, gtau_b = _ab_prior_terms(obs.b, obs.mu_b, obs.tau_b,
                                                cfg.ab_prior)
    logp = (logp_a + logp_b
            + _half_normal_logpdf(obs.tau_a, cfg.tau_scale)
            + _half_normal_logpdf(obs.tau_b, cfg.tau_scale))
    gtau_a += -obs.tau_a / cfg.tau_scale**2
    gtau_b += -obs.tau_b / cfg.tau_scale**2
    grads = {"a": ga, "b": gb, "mu_a": gmu_a, "mu_b": gmu_b,
             "tau_a": gtau_a, "tau_b": gtau_b}
    return logp, grads


def _trans_prior_and_grad(yearwise: YearwiseStayProbabilities,
                          space: StateSpace, cfg: HierPriorConfig):
    pos = space.cycle_positions
    a = yearwise.alpha[pos]
    b = yearwise.beta[pos]
    p = yearwise.p
    log_p = np.log(p)
    log_q = np.log1p(-p)
    logp = float(np.sum((a - 1.0) * log_p + (b - 1.0) * log_q
                        - betaln(a, b)))
    shape, rate = cfg.beta_hyper_shape, cfg.beta_hyper_rate
    logp += float(np.sum(_gamma_logpdf(yearwise.alpha, shape, rate)))
    logp += float(np.sum(_gamma_logpdf(yearwise.beta, shape, rate)))

    grad_p = (a - 1.0) / p - (b - 1.0) / (1.0 - p)
    dig_ab = digamma(yearwise.alpha + yearwise.beta)
    counts = np.bincount(pos, minlength=space.n_s).astype(float)
    sum_logp = np.bincount(pos, weights=log_p, minlength=space.n_s)
    sum_logq = np.bincount(pos, weights=log_q, minlength=space.n_s)
    grad_alpha = (sum_logp - counts * (digamma(yearwise.alpha) - dig_ab)
                  + (shape - 1.0) / yearwise.alpha - rate)
    grad_beta = (sum_logq - counts * (digamma(yearwise.beta) - dig_ab)
                 + (shape - 1.0) / yearwise.beta - rate)
    grads = {"p": grad_p, "alpha": grad_alpha, "beta": grad_beta}
    return logp, grads


def _tie_row_mask(n: int, ties) -> np.ndarray:
    mask = np.zeros(n, dtype=bool)
    for tie in ties:
        mask[tie.depth_index] = True
    return mask


def hier_loglik(data: DepthSeries, space: StateSpace,
                obs: HierObservationParams,
                yearwise: YearwiseStayProbabilities, ties=(),
                log_init=None, tie_mode: str = "replace") -> float:
    """Marginal log-likelihood of the hierarchical model (no prior terms)."""
    from .hmm import default_log_init

    if obs.n != data.n:
        raise ValidationError("observation parameter vectors must match data length")
    log_omega = build_emission_matrix(data, space, obs)
    log_omega = attach_tiepoints(log_omega, ties, space, mode=tie_mode)
    trans = yearwise_transition(space, yearwise)
    if log_init is None:
        log_init = default_log_init(space)
    return forward_loglik_sparse(log_omega, trans, log_init)


def hier_log_joint(data: DepthSeries, space: StateSpace,
                   obs: HierObservationParams,
                   yearwise: YearwiseStayProbabilities, ties=(),
                   cfg: HierPriorConfig = HierPriorConfig(),
                   log_init=None, tie_mode: str = "replace") -> float:
    """Joint log density of data and parameters: the inference target.

    Likelihood with states marginalized, plus the hierarchical priors on
    a/b, the Beta priors on the stay probabilities, and all hyperprior
    terms.  Returns ``-inf`` for tie configurations the chain cannot reach.
    """
    loglik = hier_loglik(data, space, obs, yearwise, ties, log_init, tie_mode)
    if loglik == -np.inf:
        return -np.inf
    logp_obs, _ = _obs_prior_and_grad(obs, cfg)
    logp_trans, _ = _trans_prior_and_grad(yearwise, space, cfg)
    return loglik + logp_obs + logp_trans


def hier_log_joint_and_grad(data: DepthSeries, space: StateSpace,
                            obs: HierObservationParams,
                            yearwise: YearwiseStayProbabilities, ties=(),
                            cfg: HierPriorConfig = HierPriorConfig(),
                            log_init=None, tie_mode: str = "replace"):
    """Joint log density plus its gradient in constrained space.

    The likelihood gradient uses the exact posterior expectations of the
    complete-data score (smoothed marginals for the emission parameters,
    expected transition counts for the stay probabilities), so one
    forward-backward pass prices the whole gradient.

    Returns (value, grads) where grads has keys a, b, sigma, p, mu_a, mu_b,
    tau_a, tau_b, alpha, beta.  Value ``-inf`` comes with a zero gradient.
    """
    from .hmm import default_log_init

    if obs.n != data.n:
        raise ValidationError("observation parameter vectors must match data length")
    n, K = data.n, space.total_states
    log_omega_proxy = build_emission_matrix(data, space, obs)
    log_omega = attach_tiepoints(log_omega_proxy, ties, space, mode=tie_mode)
    trans = yearwise_transition(space, yearwise)
    if log_init is None:
        log_init = default_log_init(space)
    log_init = _check_log_init(log_init, K)

    log_stay, log_adv, step_map = _regime_arrays(trans, n)
    log_omega = np.ascontiguousarray(log_omega)
    alpha, loglik = kernels.forward(log_omega, log_stay, log_adv, step_map,
                                    log_init)
    zero = {
        "a": np.zeros(n), "b": np.zeros(n), "sigma": 0.0, "p": np.zeros(K),
        "mu_a": 0.0, "mu_b": 0.0, "tau_a": 0.0, "tau_b": 0.0,
        "alpha": np.zeros(space.n_s), "beta": np.zeros(space.n_s),
    }
    if loglik == -np.inf:
        return -np.inf, zero

    beta_msg = kernels.backward(log_omega, log_stay, log_adv, step_map)
    post = alpha + beta_msg
    post -= post.max(axis=1, keepdims=True)
    gamma = np.exp(post)
    gamma /= gamma.sum(axis=1, keepdims=True)

    # emission gradients: tie rows carry no proxy term unless combined
    weight = gamma.copy()
    if tie_mode == "replace":
        weight[_tie_row_mask(n, ties)] = 0.0
    cos_t = np.cos(2.0 * np.pi * space.times)
    resid = data.proxy[:, None] - obs.a[:, None] * cos_t[None, :] - obs.b[:, None]
    inv_var = 1.0 / obs.sigma**2
    grad_a = (weight * resid * cos_t[None, :]).sum(axis=1) * inv_var
    grad_b = (weight * resid).sum(axis=1) * inv_var
    grad_sigma = float(
        (weight * (resid**2 * inv_var - 1.0)).sum() / obs.sigma
    )

    exp_stay, exp_adv = kernels.transition_expectations(
        alpha, beta_msg, log_omega, log_stay, log_adv, step_map, loglik
    )
    grad_p_lik = np.zeros(K)
    grad_p_lik[:-1] = (exp_stay[0, :-1] / yearwise.p[:-1]
                       - exp_adv[0, :-1] / (1.0 - yearwise.p[:-1]))

    logp_obs, g_obs = _obs_prior_and_grad(obs, cfg)
    logp_trans, g_trans = _trans_prior_and_grad(yearwise, space, cfg)

    grads = {
        "a": grad_a + g_obs["a"],
        "b": grad_b + g_obs["b"],
        "sigma": grad_sigma,
        "p": grad_p_lik + g_trans["p"],
        "mu_a": g_obs["mu_a"],
        "mu_b": g_obs["mu_b"],
        "tau_a": g_obs["tau_a"],
        "tau_b": g_obs["tau_b"],
        "alpha": g_trans["alpha"],
        "beta": g_trans["beta"],
    }
    return loglik + logp_obs + logp_trans, grads
