"""Parameter fitting: batched maximum likelihood for the shared-parameter
model and mean-field variational inference for the hierarchical one.

Both run over unconstrained parameter vectors (see :mod:`.transforms`).
Likelihood gradients come from exact posterior expectations of the
complete-data score, so a single forward-backward pass prices each gradient
evaluation; no dense transition matrix is ever formed.
"""

from __future__ import annotations

import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from ._kernels import kernels
from .errors import InferenceError, ValidationError
from .hmm import (
    Chronology,
    DepthSeries,
    FINAL_STATE_MASS_WARN,
    ObservationParams,
    StateSpace,
    StayProbabilities,
    _check_log_init,
    build_emission_matrix,
    default_log_init,
    transition_logprobs,
)
from .hierarchy import (
    HierObservationParams,
    HierPriorConfig,
    YearwiseStayProbabilities,
    attach_tiepoints,
    hier_log_joint_and_grad,
    yearwise_transition,
)
from .transforms import (
    IdentityTransform,
    LogTransform,
    LogitTransform,
    ParameterSpace,
)

__all__ = [
    "FitOptions",
    "FitReport",
    "MeanFieldPosterior",
    "ElboEstimate",
    "initial_guess",
    "build_mle_objective",
    "build_hier_objective",
    "fit_mle",
    "fit_batched",
    "elbo_estimate",
    "maximize_elbo",
    "fit_vi",
    "fit_map_hier",
    "vi_chronology",
]

_ELBO_CLAMP = -1e12


@dataclass(frozen=True)
class FitOptions:
    """Knobs shared by the fitters; defaults match the documented contracts."""

    tol: float = 1e-8              # relative objective change, quasi-Newton
    max_iter: int = 2000
    fixed: frozenset = frozenset()  # parameter blocks pinned at their init
    n_paths: int = 200
    # variational settings
    vi_step: float = 0.05          # base step, decays as 1/sqrt(iter)
    vi_max_iter: int = 4000
    vi_window: int = 50
    vi_rel_tol: float = 1e-4       # 0.01% relative change of window means
    vi_tail: int = 500             # iterates averaged into the reported q
    n_grad_samples: int = 2
    init_log_sd: float = np.log(0.1)
    tie_mode: str = "replace"
    prior: HierPriorConfig = HierPriorConfig()
    strict: bool = False


@dataclass
class FitReport:
    """Outcome of one optimization run.

    ``value`` and ``trace`` are in maximization direction (log-likelihood,
    ELBO); ``trace`` has exactly one entry per iteration.
    """

    value: float
    iterations: int
    converged: bool
    trace: np.ndarray
    params: dict
    wall_clock: float
    notes: list = field(default_factory=list)


def _minimize_with_trace(value_and_grad, z0, tol, max_iter, what="objective"):
    """Quasi-Newton ascent with a per-iteration value trace."""
    v0, _ = value_and_grad(z0)
    if not np.isfinite(v0):
        raise InferenceError(
            f"{what} is not finite at the initial point (value={v0}); "
            f"check the initial parameters"
        )
    last = {}

    def objective(z):
        v, g = value_and_grad(z)
        last["z"] = np.array(z, copy=True)
        last["v"] = v
        if v == -np.inf:
            return np.inf, np.zeros_like(z)
        return -v, -np.asarray(g)

    trace = []

    def callback(zk):
        if "z" in last and np.array_equal(last["z"], zk):
            trace.append(last["v"])
        else:
            trace.append(value_and_grad(zk)[0])

    result = minimize(objective, z0, jac=True, method="L-BFGS-B",
                      callback=callback,
                      options={"maxiter": max_iter, "ftol": tol})
    converged = bool(result.status == 0)
    return result, np.asarray(trace), converged


# ---------------------------------------------------------------------------
# initialization


def spectral_samples_per_cycle(proxy: np.ndarray) -> float:
    """Dominant period of the proxy series in samples, from the periodogram.

    Returns NaN when no usable peak exists (constant or too-short series).
    """
    x = np.asarray(proxy, dtype=float)
    n = x.size
    if n < 8 or np.ptp(x) <= 0.0:
        return np.nan
    power = np.abs(np.fft.rfft(x - x.mean())) ** 2
    if power[1:].max() <= 0.0:
        return np.nan
    j = 1 + int(np.argmax(power[1:]))
    return n / j


def initial_guess(data: DepthSeries, space: StateSpace):
    """Moment/spectral starting point for the seasonal model.

    Amplitude from the variance of a pure cosine, offset from the mean, and
    stay probabilities from the spectral estimate of samples-per-year.
    """
    sd = float(np.std(data.proxy))
    if sd <= 0.0:
        sd = 1.0
    a0 = sd * np.sqrt(2.0)
    b0 = float(np.mean(data.proxy))
    sigma0 = sd / 2.0
    spc = spectral_samples_per_cycle(data.proxy)
    if not np.isfinite(spc):
        spc = 3.0 * space.n_s
    p0 = float(np.clip(1.0 - space.n_s / spc, 0.05, 0.95))
    return (ObservationParams(a=a0, b=b0, sigma=sigma0),
            StayProbabilities(np.full(space.n_s, p0)))


# ---------------------------------------------------------------------------
# maximum likelihood, shared parameters


def _loglik_and_grads(data, space, a, b, sigma, stay_diag, log_init):
    """Log-likelihood and its gradient w.r.t. (a, b, sigma, stay diagonal).

    ``a`` and ``b`` are scalars here (shared across datapoints); the stay
    diagonal is the tiled length-K vector.
    """
    K = space.total_states
    cos_t = np.cos(2.0 * np.pi * space.times)
    resid = data.proxy[:, None] - a * cos_t[None, :] - b
    with np.errstate(over="ignore"):
        log_omega = (-np.log(sigma) - 0.5 * np.log(2 * np.pi)
                     - 0.5 * (resid / sigma) ** 2)
    with np.errstate(divide="ignore"):
        log_stay = np.log(stay_diag)[None, :]
        log_adv = np.log1p(-stay_diag)[None, :]
    log_stay[0, -1] = 0.0
    log_adv[0, -1] = -np.inf
    step_map = np.zeros(max(data.n - 1, 0), dtype=np.int64)
    log_omega = np.ascontiguousarray(log_omega)
    alpha, loglik = kernels.forward(log_omega, log_stay, log_adv, step_map,
                                    log_init)
    if loglik == -np.inf:
        return -np.inf, None
    beta = kernels.backward(log_omega, log_stay, log_adv, step_map)
    post = alpha + beta
    post -= post.max(axis=1, keepdims=True)
    gamma = np.exp(post)
    gamma /= gamma.sum(axis=1, keepdims=True)

    inv_var = 1.0 / sigma**2
    gr = gamma * resid
    grad_a = float((gr @ cos_t).sum()) * inv_var
    grad_b = float(gr.sum()) * inv_var
    grad_sigma = float((gr * resid).sum()) / sigma**3 - data.n / sigma

    exp_stay, exp_adv = kernels.transition_expectations(
        alpha, beta, log_omega, log_stay, log_adv, step_map, loglik
    )
    grad_diag = np.zeros(K)
    grad_diag[:-1] = (exp_stay[0, :-1] / stay_diag[:-1]
                      - exp_adv[0, :-1] / (1.0 - stay_diag[:-1]))
    grads = {"a": grad_a, "b": grad_b, "sigma": grad_sigma, "diag": grad_diag}
    return loglik, grads


def build_mle_objective(data: DepthSeries, space: StateSpace,
                        init_obs: ObservationParams,
                        init_stay: StayProbabilities,
                        fixed=frozenset(), log_init=None):
    """Unconstrained objective z -> (loglik, grad) for the shared model.

    Returns (pspace, fn, z0).  Blocks named in ``fixed`` are pinned to their
    initial values and excluded from the vector.
    """
    if log_init is None:
        log_init = default_log_init(space)
    log_init = _check_log_init(log_init, space.total_states)
    all_blocks = {
        "a": (0, IdentityTransform(), init_obs.a),
        "b": (0, IdentityTransform(), init_obs.b),
        "sigma": (0, LogTransform(), init_obs.sigma),
        "p": (space.n_s, LogitTransform(), init_stay.p),
    }
    unknown = set(fixed) - set(all_blocks)
    if unknown:
        raise ValidationError(f"cannot fix unknown parameters {sorted(unknown)}")
    free = [name for name in all_blocks if name not in fixed]
    pspace = ParameterSpace(
        [(name, all_blocks[name][0], all_blocks[name][1]) for name in free]
    )
    z0 = pspace.unconstrain({name: all_blocks[name][2] for name in free})
    pos = space.cycle_positions

    def fn(z):
        params = pspace.constrain(z)
        a = params.get("a", init_obs.a)
        b = params.get("b", init_obs.b)
        sigma = params.get("sigma", init_obs.sigma)
        p = params.get("p", init_stay.p)
        stay_diag = np.asarray(p)[pos]
        loglik, grads = _loglik_and_grads(data, space, a, b, sigma,
                                          stay_diag, log_init)
        if grads is None:
            return -np.inf, np.zeros(pspace.dim)
        grad_p = np.bincount(pos[:-1], weights=grads["diag"][:-1],
                             minlength=space.n_s)
        full = {"a": grads["a"], "b": grads["b"], "sigma": grads["sigma"],
                "p": grad_p}
        return loglik, pspace.grad_to_unconstrained(
            z, {name: full[name] for name in free}
        )

    return pspace, fn, z0


def fit_mle(data: DepthSeries, space: StateSpace, init=None,
            opts: FitOptions = FitOptions(), log_init=None) -> FitReport:
    """Maximum likelihood for (a, b, sigma, p) with time marginalized.

    Quasi-Newton ascent on the unconstrained parameters until the relative
    objective change drops below ``opts.tol`` or ``opts.max_iter`` is hit;
    non-convergence is reported in the result, not raised.
    """
    start = time.perf_counter()
    notes = []
    if init is None:
        init = initial_guess(data, space)
    init_obs, init_stay = init

    flat = float(np.ptp(data.proxy)) <= 1e-12 * max(1.0, abs(float(np.mean(data.proxy))))
    if flat:
        notes.append("weak identification: proxy is flat; seasonal amplitude "
                     "and transition probabilities are not identified")
        params = {"a": 0.0, "b": float(np.mean(data.proxy)),
                  "sigma": max(init_obs.sigma, 1e-6), "p": init_stay.p.copy()}
        return FitReport(value=np.nan, iterations=0, converged=False,
                         trace=np.empty(0), params=params,
                         wall_clock=time.perf_counter() - start, notes=notes)

    pspace, fn, z0 = build_mle_objective(data, space, init_obs, init_stay,
                                         fixed=opts.fixed, log_init=log_init)
    result, trace, converged = _minimize_with_trace(
        fn, z0, opts.tol, opts.max_iter, what="log-likelihood")
    fitted = pspace.constrain(result.x)
    params = {
        "a": fitted.get("a", init_obs.a),
        "b": fitted.get("b", init_obs.b),
        "sigma": fitted.get("sigma", init_obs.sigma),
        "p": np.asarray(fitted.get("p", init_stay.p)),
    }
    if not converged:
        notes.append(f"optimizer stopped without convergence: {result.message}")
    return FitReport(value=-float(result.fun), iterations=len(trace),
                     converged=converged, trace=trace, params=params,
                     wall_clock=time.perf_counter() - start, notes=notes)


# ---------------------------------------------------------------------------
# batched fitting with sequential handoff


def _batch_ranges(n: int, batch_len: int, n_s: int):
    if batch_len < 2 * n_s:
        raise ValidationError("batch length must be at least 2 * n_s")
    ranges = []
    start = 0
    while start < n:
        stop = min(start + batch_len, n)
        if n - stop < 2 * n_s and stop < n:
            stop = n  # fold a tiny remainder into the last batch
        ranges.append((start, stop))
        start = stop
    return ranges


def fit_batched(data: DepthSeries, space: StateSpace, batch_len: int | None,
                opts: FitOptions = FitOptions(), rng=None,
                log_init=None):
    """Fit contiguous batches independently and stitch one chronology.

    Each batch starts from the previous batch's final-depth smoothed
    marginal, which hands the chronology anchor forward.  The stitched
    chronology is the exact smoothing posterior of the piecewise model, so
    sampled paths are monotone across batch seams by construction.

    Returns (reports, chronology).
    """
    n, K = data.n, space.total_states
    if batch_len is None:
        batch_len = n
    ranges = _batch_ranges(n, batch_len, space.n_s)
    if log_init is None:
        log_init = default_log_init(space)

    reports = []
    batch_params = []
    current_init = np.asarray(log_init, dtype=float)
    first_init = current_init
    warm = None
    for start, stop in ranges:
        chunk = data.slice(start, stop)
        report = fit_mle(chunk, space, init=warm, opts=opts,
                         log_init=current_init)
        reports.append(report)
        batch_params.append(report.params)
        warm = (ObservationParams(report.params["a"], report.params["b"],
                                  report.params["sigma"]),
                StayProbabilities(report.params["p"]))
        # handoff: smoothed marginal at the batch's final depth
        log_omega = build_emission_matrix(chunk, space, warm[0])
        trans = transition_logprobs(space, warm[1])
        from .hmm import forward_backward

        gamma, _ = forward_backward(log_omega, trans, current_init)
        with np.errstate(divide="ignore"):
            current_init = np.log(gamma[-1])
        current_init -= np.log(gamma[-1].sum())

    chron = _stitched_chronology(data, space, ranges, batch_params,
                                 first_init, opts.n_paths, rng)
    return reports, chron


def _stitched_chronology(data, space, ranges, batch_params, log_init,
                         n_paths, rng):
    n, K = data.n, space.total_states
    R = len(ranges)
    log_omega = np.empty((n, K))
    log_stay = np.empty((R, K))
    log_adv = np.empty((R, K))
    step_map = np.empty(max(n - 1, 0), dtype=np.int64)
    pos = space.cycle_positions
    for r, ((start, stop), params) in enumerate(zip(ranges, batch_params)):
        obs = ObservationParams(params["a"], params["b"], params["sigma"])
        log_omega[start:stop] = build_emission_matrix(
            data.slice(start, stop), space, obs)
        diag = np.asarray(params["p"])[pos].copy()
        diag[-1] = 1.0
        with np.errstate(divide="ignore"):
            log_stay[r] = np.log(diag)
            log_adv[r] = np.log1p(-diag)
        log_stay[r, -1] = 0.0
        log_adv[r, -1] = -np.inf
        # transition into observation i is governed by i's own batch
        step_map[max(start - 1, 0):stop - 1] = r
    log_omega = np.ascontiguousarray(log_omega)
    alpha, loglik = kernels.forward(log_omega, log_stay, log_adv, step_map,
                                    log_init)
    if loglik == -np.inf:
        raise InferenceError("stitched model assigns zero likelihood")
    beta = kernels.backward(log_omega, log_stay, log_adv, step_map)
    post = alpha + beta
    post -= post.max(axis=1, keepdims=True)
    gamma = np.exp(post)
    gamma /= gamma.sum(axis=1, keepdims=True)
    if n_paths > 0:
        rng = np.random.default_rng(rng)
        uniforms = rng.random((n_paths, n))
        paths = kernels.sample_paths(alpha, log_stay, log_adv, step_map,
                                     uniforms)
    else:
        paths = np.empty((0, n), dtype=np.int64)
    chron = Chronology(space=space, depths=data.depths, gamma=gamma,
                       paths=paths, loglik=loglik)
    if chron.final_state_mass() > FINAL_STATE_MASS_WARN:
        warnings.warn("posterior places mass on the final lattice state; "
                      "increase the year budget m")
    return chron


# ---------------------------------------------------------------------------
# hierarchical model: unconstrained target and variational inference


def build_hier_objective(data: DepthSeries, space: StateSpace, ties=(),
                         cfg: HierPriorConfig = HierPriorConfig(),
                         log_init=None, tie_mode: str = "replace"):
    """Unconstrained hierarchical target z -> (log density, grad).

    The returned density includes the transform log-Jacobians, making it a
    proper (unnormalized) density over the unconstrained vector: the
    variational target.
    """
    n, K, n_s = data.n, space.total_states, space.n_s
    pspace = ParameterSpace([
        ("a", n, IdentityTransform()),
        ("b", n, IdentityTransform()),
        ("sigma", 0, LogTransform()),
        ("p", K, LogitTransform()),
        ("mu_a", 0, IdentityTransform()),
        ("mu_b", 0, IdentityTransform()),
        ("tau_a", 0, LogTransform()),
        ("tau_b", 0, LogTransform()),
        ("alpha", n_s, LogTransform()),
        ("beta", n_s, LogTransform()),
    ])

    def fn(z):
        params = pspace.constrain(z)
        obs = HierObservationParams(
            a=params["a"], b=params["b"], sigma=params["sigma"],
            mu_a=params["mu_a"], tau_a=params["tau_a"],
            mu_b=params["mu_b"], tau_b=params["tau_b"],
        )
        yearwise = YearwiseStayProbabilities(
            p=params["p"], alpha=params["alpha"], beta=params["beta"])
        value, grads = hier_log_joint_and_grad(
            data, space, obs, yearwise, ties, cfg,
            log_init=log_init, tie_mode=tie_mode)
        if value == -np.inf:
            return -np.inf, np.zeros(pspace.dim)
        grad = pspace.grad_to_unconstrained(z, grads, include_jacobian=True)
        return value + pspace.log_jacobian(z), grad

    return pspace, fn


def hier_initial_params(data: DepthSeries, space: StateSpace) -> dict:
    """Moment-based starting values for every hierarchical block."""
    obs0, stay0 = initial_guess(data, space)
    p0 = float(stay0.p[0])
    return {
        "a": np.full(data.n, obs0.a),
        "b": np.full(data.n, obs0.b),
        "sigma": obs0.sigma,
        "p": np.full(space.total_states, p0),
        "mu_a": obs0.a,
        "mu_b": obs0.b,
        "tau_a": 0.5,
        "tau_b": 0.5,
        "alpha": np.full(space.n_s, 2.0),
        "beta": np.full(space.n_s, 2.0),
    }


@dataclass(frozen=True)
class MeanFieldPosterior:
    """Diagonal Gaussian over the unconstrained parameter vector."""

    mu: np.ndarray
    log_sd: np.ndarray

    def __post_init__(self):
        if self.mu.shape != self.log_sd.shape or self.mu.ndim != 1:
            raise ValidationError("mu and log_sd must be 1-d of equal length")

    @property
    def dim(self) -> int:
        return self.mu.size

    @property
    def sd(self) -> np.ndarray:
        return np.exp(self.log_sd)

    def entropy(self) -> float:
        return 0.5 * self.dim * (1.0 + np.log(2 * np.pi)) + float(self.log_sd.sum())

    def sample(self, rng, n: int) -> np.ndarray:
        eps = rng.standard_normal((n, self.dim))
        return self.mu[None, :] + self.sd[None, :] * eps


@dataclass(frozen=True)
class ElboEstimate:
    value: float
    grad_mu: np.ndarray
    grad_log_sd: np.ndarray
    n_clamped: int = 0


def elbo_estimate(q: MeanFieldPosterior, target, n_grad_samples: int,
                  rng) -> ElboEstimate:
    """Reparameterized Monte-Carlo ELBO and its gradient.

    ``target`` maps an unconstrained vector to (log density, gradient).
    Samples where the target is -inf (e.g. tie-infeasible draws under an
    early q) contribute a large negative clamp with zero gradient and are
    counted in ``n_clamped``.
    """
    if n_grad_samples < 1:
        raise ValidationError("n_grad_samples must be at least 1")
    sd = q.sd
    eps = rng.standard_normal((n_grad_samples, q.dim))
    values = np.empty(n_grad_samples)
    grads = np.empty((n_grad_samples, q.dim))
    clamped = 0
    for s in range(n_grad_samples):
        v, g = target(q.mu + sd * eps[s])
        if v == -np.inf:
            clamped += 1
            v, g = _ELBO_CLAMP, np.zeros(q.dim)
        values[s] = v
        grads[s] = g
    value = float(values.mean()) + q.entropy()
    grad_mu = grads.mean(axis=0)
    grad_log_sd = (grads * eps).mean(axis=0) * sd + 1.0
    return ElboEstimate(value, grad_mu, grad_log_sd, clamped)


def maximize_elbo(target, q0: MeanFieldPosterior,
                  opts: FitOptions = FitOptions(), rng=None):
    """Adaptive stochastic gradient ascent on the reparameterized ELBO.

    Adam with a 1/sqrt(iter) step decay; convergence is declared when the
    ``opts.vi_window``-iteration running mean of the ELBO changes by less
    than ``opts.vi_rel_tol`` (relative).  The returned posterior is the
    tail average of the late iterates, which removes most of the
    stochastic-gradient wobble.  Aborts when the target is infeasible for
    most samples after warmup.

    Returns (q, trace, converged, notes).
    """
    rng = np.random.default_rng(rng)
    dim = q0.dim
    q = q0
    beta1, beta2, eps_adam = 0.9, 0.999, 1e-8
    m = np.zeros(2 * dim)
    v = np.zeros(2 * dim)
    trace = []
    clamp_window = []
    tail = []  # ring buffer of late iterates, averaged into the answer
    warmup = min(100, opts.vi_max_iter // 4)
    converged = False
    notes = []
    total_clamped = 0

    for it in range(1, opts.vi_max_iter + 1):
        est = elbo_estimate(q, target, opts.n_grad_samples, rng)
        total_clamped += est.n_clamped
        clamp_window.append(est.n_clamped / opts.n_grad_samples)
        if len(clamp_window) > opts.vi_window:
            clamp_window.pop(0)
        if (it > warmup and len(clamp_window) == opts.vi_window
                and np.mean(clamp_window) > 0.5):
            raise InferenceError(
                "variational target infeasible for most samples after "
                "warmup; tie-point constraints are unreachable under the "
                "current model configuration")

        g = np.concatenate([est.grad_mu, est.grad_log_sd])
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        mhat = m / (1 - beta1**it)
        vhat = v / (1 - beta2**it)
        step = opts.vi_step / np.sqrt(it)
        update = step * mhat / (np.sqrt(vhat) + eps_adam)
        q = MeanFieldPosterior(mu=q.mu + update[:dim],
                               log_sd=q.log_sd + update[dim:])
        trace.append(est.value)
        tail.append(np.concatenate([q.mu, q.log_sd]))
        if len(tail) > opts.vi_tail:
            tail.pop(0)

        w = opts.vi_window
        if len(trace) >= 2 * w:
            recent = float(np.mean(trace[-w:]))
            previous = float(np.mean(trace[-2 * w:-w]))
            denom = max(abs(recent), abs(previous), 1.0)
            if abs(recent - previous) / denom < opts.vi_rel_tol:
                converged = True
                break

    # Polyak tail average: smooths the stochastic-gradient wobble without
    # letting the initial transient leak in on early stops
    tail_n = min(len(tail), max(opts.vi_window, len(trace) // 4))
    averaged = np.mean(tail[-tail_n:], axis=0)
    q = MeanFieldPosterior(mu=averaged[:dim], log_sd=averaged[dim:])
    if total_clamped:
        notes.append(f"{total_clamped} ELBO sample(s) hit the infeasibility clamp")
    if not converged:
        notes.append("ELBO running mean still moving at vi_max_iter")
    return q, np.asarray(trace), converged, notes


def fit_vi(data: DepthSeries, space: StateSpace, ties=(),
           opts: FitOptions = FitOptions(), rng=None, log_init=None,
           init_params: dict | None = None):
    """Mean-field variational inference for the hierarchical model.

    Builds the unconstrained joint density (tie-points included) and runs
    :func:`maximize_elbo` on it.  Returns (q, report); draw chronologies
    from the result with :func:`vi_chronology`.
    """
    start = time.perf_counter()
    pspace, target = build_hier_objective(
        data, space, ties, opts.prior, log_init=log_init,
        tie_mode=opts.tie_mode)
    if init_params is None:
        init_params = hier_initial_params(data, space)
    mu = pspace.unconstrain(init_params)
    q0 = MeanFieldPosterior(mu=mu,
                            log_sd=np.full(pspace.dim, opts.init_log_sd))

    v0, _ = target(q0.mu)
    if v0 == -np.inf:
        raise InferenceError(
            "hierarchical target is infeasible at the initial mean; the "
            "tie-points cannot be reached from the initial distribution")

    q, trace, converged, notes = maximize_elbo(target, q0, opts, rng)
    report = FitReport(
        value=float(np.mean(trace[-opts.vi_window:])),
        iterations=len(trace), converged=converged, trace=trace,
        params=pspace.constrain(q.mu),
        wall_clock=time.perf_counter() - start, notes=notes)
    return q, report


def fit_map_hier(data: DepthSeries, space: StateSpace, ties=(),
                 opts: FitOptions = FitOptions(), log_init=None,
                 init_params: dict | None = None) -> FitReport:
    """Point estimation on the hierarchical joint density.

    Kept for comparison runs; the per-datapoint parameters make point
    estimates unreliable, so mean-field VI (:func:`fit_vi`) is the intended
    inference path for this model.
    """
    start = time.perf_counter()
    pspace, target = build_hier_objective(
        data, space, ties, opts.prior, log_init=log_init,
        tie_mode=opts.tie_mode)
    if init_params is None:
        init_params = hier_initial_params(data, space)
    z0 = pspace.unconstrain(init_params)
    result, trace, converged = _minimize_with_trace(
        target, z0, opts.tol, opts.max_iter, what="hierarchical joint")
    notes = [] if converged else [f"optimizer stopped: {result.message}"]
    notes.append("point estimate of an overparameterized hierarchy; prefer fit_vi")
    return FitReport(value=-float(result.fun), iterations=len(trace),
                     converged=converged, trace=trace,
                     params=pspace.constrain(result.x),
                     wall_clock=time.perf_counter() - start, notes=notes)


def _hier_chronology_one_draw(args):
    (data, space, ties, tie_mode, params, log_init, paths_per_draw,
     seed) = args
    obs = HierObservationParams(
        a=params["a"], b=params["b"], sigma=params["sigma"],
        mu_a=params["mu_a"], tau_a=params["tau_a"],
        mu_b=params["mu_b"], tau_b=params["tau_b"])
    yearwise = YearwiseStayProbabilities(
        p=params["p"], alpha=params["alpha"], beta=params["beta"])
    log_omega = build_emission_matrix(data, space, obs)
    log_omega = attach_tiepoints(log_omega, ties, space, mode=tie_mode)
    trans = yearwise_transition(space, yearwise)
    from .hmm import forward_backward, sample_posterior_paths

    gamma, _ = forward_backward(log_omega, trans, log_init)
    paths = sample_posterior_paths(log_omega, trans, log_init,
                                   paths_per_draw, np.random.default_rng(seed))
    return gamma, paths


def vi_chronology(data: DepthSeries, space: StateSpace, q: MeanFieldPosterior,
                  pspace: ParameterSpace, ties=(), n_draws: int = 25,
                  paths_per_draw: int = 8, rng=None, log_init=None,
                  tie_mode: str = "replace", threads: int = 1) -> Chronology:
    """Posterior chronology under a fitted variational posterior.

    Draws parameters from q, runs exact conditional smoothing and path
    sampling per draw, and pools: the returned gamma is the mixture of the
    per-draw smoothed marginals.  Deterministic given the seed, independent
    of ``threads``.
    """
    if log_init is None:
        log_init = default_log_init(space)
    if isinstance(rng, np.random.Generator):
        rng = int(rng.integers(2**63))
    seeds = np.random.SeedSequence(rng).spawn(n_draws + 1)
    draw_rng = np.random.default_rng(seeds[0])
    zs = q.sample(draw_rng, n_draws)
    jobs = [
        (data, space, ties, tie_mode, pspace.constrain(zs[d]), log_init,
         paths_per_draw, seeds[d + 1])
        for d in range(n_draws)
    ]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_hier_chronology_one_draw, jobs))
    else:
        results = [_hier_chronology_one_draw(job) for job in jobs]
    gamma = np.mean([g for g, _ in results], axis=0)
    paths = np.vstack([p for _, p in results])
    return Chronology(space=space, depths=data.depths, gamma=gamma,
                      paths=paths, loglik=np.nan)
