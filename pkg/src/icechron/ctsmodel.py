"""Continuous-index chain for irregularly spaced depths.

The latent time process advances at per-state rates (per meter); the
transition kernel across a depth gap is the matrix exponential of the gap
times the rate generator.  The generator shares the stay/advance sparsity of
the discrete model, so kernels are computed by uniformization with banded
upper-triangular storage: every power of the uniformized matrix widens the
band by one, each multiplication costs O(K * bandwidth), and nothing dense
is ever formed.  Derivatives with respect to the rates come from
differentiating the uniformization series term by term.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .errors import InferenceError, ValidationError
from .hmm import (
    Chronology,
    DepthSeries,
    ObservationParams,
    StateSpace,
    _check_log_init,
    build_emission_matrix,
    default_log_init,
)

__all__ = [
    "RateVector",
    "GapKernel",
    "GapReport",
    "gap_kernel",
    "transition_kernels",
    "forward_loglik_inhomogeneous",
    "forward_backward_inhomogeneous",
    "sample_paths_inhomogeneous",
    "fit_mle_cts",
    "gap_posterior",
    "detect_gaps",
    "elapsed_years_from_paths",
]

# per-kernel cap enforced by gap_kernel itself; larger gaps must be substepped
MAX_EVENTS_PER_KERNEL = 200.0
# automatic sub-stepping target used when building per-observation kernels
SUBSTEP_EVENTS = 10.0


@dataclass(frozen=True)
class RateVector:
    """Advance rates (1/meters) per cycle position, tiled across years."""

    q: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "q", np.asarray(self.q, dtype=float))
        if self.q.ndim != 1 or self.q.size < 1:
            raise ValidationError("rates must be a 1-d vector")
        if not np.all((self.q > 0.0) & np.isfinite(self.q)):
            raise ValidationError("rates must be positive and finite")

    @property
    def n_s(self) -> int:
        return self.q.size


def full_rates(space: StateSpace, rates: RateVector) -> np.ndarray:
    """Length-K rate diagonal; the final state is absorbing (rate 0)."""
    if rates.n_s != space.n_s:
        raise ValidationError(
            f"rate vector has {rates.n_s} entries, expected {space.n_s}")
    q = rates.q[space.cycle_positions].copy()
    q[-1] = 0.0
    return q


@dataclass(frozen=True)
class GapKernel:
    """Row-stochastic transition kernel for one depth gap, band storage.

    ``band[k, d]`` is the probability of moving from state k to state k + d;
    entries with k + d >= K are structurally zero.  ``dband`` optionally
    holds the derivative bands with respect to each cycle-position rate.
    """

    ddelta: float
    band: np.ndarray
    dband: tuple = ()

    @property
    def width(self) -> int:
        return self.band.shape[1]

    def to_dense(self) -> np.ndarray:
        K, W = self.band.shape
        P = np.zeros((K, K))
        for d in range(W):
            idx = np.arange(K - d)
            P[idx, idx + d] = self.band[:K - d, d]
        return P


def _band_identity(K: int) -> np.ndarray:
    out = np.zeros((K, 1))
    out[:, 0] = 1.0
    return out


def _band_mul_bidiag(X: np.ndarray, diag: np.ndarray, sup: np.ndarray) -> np.ndarray:
    """Band matrix times a bidiagonal matrix (diag + superdiagonal)."""
    K, W = X.shape
    out = np.zeros((K, W + 1))
    diag_ext = np.concatenate([diag, np.zeros(W + 1)])
    sup_ext = np.concatenate([sup, np.zeros(W + 1)])
    for d in range(W):
        out[:, d] += X[:, d] * diag_ext[d:d + K]
    for d in range(1, W + 1):
        out[:, d] += X[:, d - 1] * sup_ext[d - 1:d - 1 + K]
    return out


def _band_mul_band(X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    K, Wx = X.shape
    Wy = Y.shape[1]
    out = np.zeros((K, Wx + Wy - 1))
    Ypad = np.vstack([Y, np.zeros((Wx, Wy))])
    for u in range(Wx):
        out[:, u:u + Wy] += X[:, u:u + 1] * Ypad[u:u + K, :]
    return out


def _trim_band(band: np.ndarray, tol: float) -> np.ndarray:
    W = band.shape[1]
    keep = W
    while keep > 1 and band[:, keep - 1].max() < tol:
        keep -= 1
    return band[:, :keep]


def _trim_like(band: np.ndarray, width: int) -> np.ndarray:
    return band[:, :width] if band.shape[1] > width else band


def _uniformized_series(q: np.ndarray, ddelta: float, band_tol: float,
                        grad_positions=None, cycle_positions=None):
    """exp(ddelta * Q) via Poisson-weighted powers of the uniformized matrix.

    Returns (band, dbands) where dbands matches ``grad_positions`` (a list of
    cycle positions to differentiate against) or is empty.
    """
    K = q.size
    lam = float(q.max())
    events = ddelta * lam
    diag = 1.0 - q / lam
    sup = (q / lam)[: K]  # final entry is 0 because q[-1] == 0

    weight = np.exp(-events)
    band = weight * _band_identity(K)
    power = _band_identity(K)
    grad_positions = grad_positions or []
    dbands = [np.zeros((K, 1)) for _ in grad_positions]
    dpowers = [np.zeros((K, 1)) for _ in grad_positions]
    masks = []
    for j in grad_positions:
        mask = np.zeros(K)
        mask[cycle_positions == j] = 1.0
        mask[-1] = 0.0  # final state rate is structurally zero
        masks.append(mask)

    max_width = K
    cumulative = weight
    r = 0
    tail_tol = min(band_tol * 1e-2, 1e-14)
    r_cap = int(events + 12.0 * np.sqrt(events + 1.0) + 40)
    while cumulative < 1.0 - tail_tol and r < r_cap:
        r += 1
        new_power = _band_mul_bidiag(power, diag, sup)
        new_power = _trim_like(new_power, max_width)
        for i, mask in enumerate(masks):
            # d(B^r) = d(B^{r-1}) B + B^{r-1} dB, with dB = (E_j) / lam
            dnew = _band_mul_bidiag(dpowers[i], diag, sup)
            dnew2 = _band_mul_bidiag(power, -mask / lam, mask / lam)
            width = max(dnew.shape[1], dnew2.shape[1])
            grown = np.zeros((K, width))
            grown[:, :dnew.shape[1]] += dnew
            grown[:, :dnew2.shape[1]] += dnew2
            dpowers[i] = _trim_like(grown, max_width)
        power = new_power
        weight *= events / r
        cumulative += weight
        if band.shape[1] < power.shape[1]:
            band = np.pad(band, ((0, 0), (0, power.shape[1] - band.shape[1])))
        band[:, :power.shape[1]] += weight * power
        for i in range(len(masks)):
            if dbands[i].shape[1] < dpowers[i].shape[1]:
                dbands[i] = np.pad(
                    dbands[i],
                    ((0, 0), (0, dpowers[i].shape[1] - dbands[i].shape[1])))
            dbands[i][:, :dpowers[i].shape[1]] += weight * dpowers[i]
    return band, dbands


def gap_kernel(rates: RateVector, space: StateSpace, ddelta: float,
               band_tol: float = 1e-12, with_grad: bool = False) -> GapKernel:
    """Transition kernel across a single depth gap.

    Bands are truncated where the column mass falls below ``band_tol`` and
    the truncation residue is renormalized into the retained band, so rows
    sum to one exactly.  Gaps with ``ddelta * max(rate)`` beyond
    ``MAX_EVENTS_PER_KERNEL`` are refused; split them into sub-steps (see
    :func:`transition_kernels`, which does this automatically).
    """
    if not ddelta > 0.0:
        raise ValidationError("depth gap must be positive")
    q = full_rates(space, rates)
    events = ddelta * float(q.max())
    if events > MAX_EVENTS_PER_KERNEL:
        raise ValidationError(
            f"gap of {ddelta:g} m implies {events:.1f} expected events, above "
            f"the per-kernel cap {MAX_EVENTS_PER_KERNEL:g}; compose sub-steps "
            f"instead (transition_kernels does this automatically)")
    grad_positions = list(range(space.n_s)) if with_grad else None
    band, dbands = _uniformized_series(
        q, ddelta, band_tol, grad_positions=grad_positions,
        cycle_positions=space.cycle_positions)
    band = _trim_band(band, band_tol)
    row_sums = band.sum(axis=1, keepdims=True)
    band = band / row_sums
    dbands = tuple(_trim_like(db, band.shape[1]) for db in dbands)
    return GapKernel(ddelta=float(ddelta), band=band, dband=dbands)


def _composed_kernel(rates: RateVector, space: StateSpace, ddelta: float,
                     band_tol: float, with_grad: bool) -> GapKernel:
    """Kernel for an arbitrarily large gap, composing capped sub-steps."""
    q = full_rates(space, rates)
    events = ddelta * float(q.max())
    n_sub = max(1, int(np.ceil(events / SUBSTEP_EVENTS)))
    base = gap_kernel(rates, space, ddelta / n_sub,
                      band_tol=min(band_tol * 1e-3, 1e-15),
                      with_grad=with_grad)
    band = base.band
    dbands = list(base.dband)
    for _ in range(n_sub - 1):
        if with_grad:
            dbands = [
                _band_mul_band(db, base.band) + _band_mul_band(band, bdb)
                for db, bdb in zip(dbands, base.dband)
            ]
        band = _band_mul_band(band, base.band)
        width = _trim_band(band, min(band_tol * 1e-3, 1e-15)).shape[1]
        band = band[:, :width]
        dbands = [_trim_like(db, width) for db in dbands]
    band = _trim_band(band, band_tol)
    band = band / band.sum(axis=1, keepdims=True)
    dbands = [_trim_like(db, band.shape[1]) for db in dbands]
    return GapKernel(ddelta=float(ddelta), band=band, dband=tuple(dbands))


def _gap_key(ddelta: float) -> str:
    return np.format_float_scientific(ddelta, precision=14)


def transition_kernels(rates: RateVector, space: StateSpace,
                       depths: np.ndarray, band_tol: float = 1e-12,
                       with_grad: bool = False):
    """Per-observation-step kernels with caching over repeated gap sizes."""
    depths = np.asarray(depths, dtype=float)
    if not np.all(np.diff(depths) > 0.0):
        raise ValidationError("depths must be strictly increasing")
    cache = {}
    kernels = []
    for gap in np.diff(depths):
        key = _gap_key(gap)
        if key not in cache:
            cache[key] = _composed_kernel(rates, space, gap, band_tol,
                                          with_grad)
        kernels.append(cache[key])
    return kernels


# ---------------------------------------------------------------------------
# inhomogeneous recursions (log space, banded)


def _forward_messages(log_omega, kernels, log_init):
    n, K = log_omega.shape
    alpha = np.empty((n, K))
    alpha[0] = log_init + log_omega[0]
    for i in range(1, n):
        band = kernels[i - 1].band
        W = band.shape[1]
        prev = alpha[i - 1]
        c = prev.max()
        if c == -np.inf:
            alpha[i:] = -np.inf
            return alpha, -np.inf
        w = np.exp(prev - c)
        v = np.zeros(K)
        for d in range(W):
            if d == 0:
                v += w * band[:, 0]
            else:
                v[d:] += w[:-d] * band[:-d, d]
        with np.errstate(divide="ignore"):
            alpha[i] = np.log(v) + c + log_omega[i]
    return alpha, float(logsumexp(alpha[-1]))


def _backward_messages(log_omega, kernels):
    n, K = log_omega.shape
    beta = np.empty((n, K))
    beta[-1] = 0.0
    for i in range(n - 2, -1, -1):
        band = kernels[i].band
        W = band.shape[1]
        msg = log_omega[i + 1] + beta[i + 1]
        c = msg.max()
        if c == -np.inf:
            beta[i] = -np.inf
            continue
        w = np.exp(msg - c)
        v = np.zeros(K)
        for d in range(W):
            if d == 0:
                v += band[:, 0] * w
            else:
                v[:-d] += band[:-d, d] * w[d:]
        with np.errstate(divide="ignore"):
            beta[i] = np.log(v) + c
    return beta


def forward_loglik_inhomogeneous(log_omega, rates: RateVector,
                                 space: StateSpace, depths,
                                 log_init=None,
                                 band_tol: float = 1e-12) -> float:
    """Marginal log-likelihood with gap-dependent transition kernels."""
    log_omega = np.asarray(log_omega, dtype=float)
    if log_init is None:
        log_init = default_log_init(space)
    log_init = _check_log_init(log_init, space.total_states)
    kernels = transition_kernels(rates, space, depths, band_tol)
    _, loglik = _forward_messages(log_omega, kernels, log_init)
    if loglik == -np.inf:
        warnings.warn("data impossible under the continuous-index model")
    return loglik


def forward_backward_inhomogeneous(log_omega, rates: RateVector,
                                   space: StateSpace, depths,
                                   log_init=None, band_tol: float = 1e-12):
    """Smoothed marginals and log-likelihood for irregular spacing."""
    log_omega = np.asarray(log_omega, dtype=float)
    if log_init is None:
        log_init = default_log_init(space)
    log_init = _check_log_init(log_init, space.total_states)
    kernels = transition_kernels(rates, space, depths, band_tol)
    alpha, loglik = _forward_messages(log_omega, kernels, log_init)
    if loglik == -np.inf:
        raise InferenceError("data impossible under the continuous-index model")
    beta = _backward_messages(log_omega, kernels)
    post = alpha + beta
    post -= post.max(axis=1, keepdims=True)
    gamma = np.exp(post)
    gamma /= gamma.sum(axis=1, keepdims=True)
    return gamma, loglik


def sample_paths_inhomogeneous(log_omega, kernels, log_init, n_paths: int,
                               rng) -> np.ndarray:
    """Backward path sampling with banded kernels."""
    rng = np.random.default_rng(rng)
    n, K = log_omega.shape
    alpha, loglik = _forward_messages(log_omega, kernels, log_init)
    if loglik == -np.inf:
        raise InferenceError("data impossible under the continuous-index model")
    paths = np.empty((n_paths, n), dtype=np.int64)
    last = alpha[-1]
    w = np.exp(last - last.max())
    cdf = np.cumsum(w)
    cdf /= cdf[-1]
    paths[:, -1] = np.minimum(
        np.searchsorted(cdf, rng.random(n_paths), side="right"), K - 1)
    for i in range(n - 2, -1, -1):
        band = kernels[i].band
        W = band.shape[1]
        nxt = paths[:, i + 1]
        # candidate predecessors are nxt - d for d in 0..W-1
        d_grid = np.arange(W)
        cand = nxt[:, None] - d_grid[None, :]
        valid = cand >= 0
        cand_safe = np.maximum(cand, 0)
        logw = np.where(valid, alpha[i, cand_safe], -np.inf)
        with np.errstate(divide="ignore"):
            logw = logw + np.log(band[cand_safe, d_grid[None, :]])
        logw[~valid] = -np.inf
        shift = logw.max(axis=1, keepdims=True)
        weights = np.exp(logw - shift)
        weights /= weights.sum(axis=1, keepdims=True)
        cum = np.cumsum(weights, axis=1)
        u = rng.random((n_paths, 1))
        choice = (cum < u).sum(axis=1)
        paths[:, i] = nxt - np.minimum(choice, W - 1)
    return paths


# ---------------------------------------------------------------------------
# fitting


def cts_loglik_and_grad(data: DepthSeries, space: StateSpace,
                        rates: RateVector, obs: ObservationParams,
                        log_init=None, band_tol: float = 1e-12):
    """Log-likelihood and gradients w.r.t. (a, b, sigma, rates).

    Rate gradients differentiate the uniformization series of every kernel;
    emission gradients reuse the smoothed marginals.
    """
    if log_init is None:
        log_init = default_log_init(space)
    log_init = _check_log_init(log_init, space.total_states)
    kernels = transition_kernels(rates, space, data.depths, band_tol,
                                 with_grad=True)
    cos_t = np.cos(2.0 * np.pi * space.times)
    resid = data.proxy[:, None] - obs.a * cos_t[None, :] - obs.b
    log_omega = (-np.log(obs.sigma) - 0.5 * np.log(2 * np.pi)
                 - 0.5 * (resid / obs.sigma) ** 2)
    alpha, loglik = _forward_messages(log_omega, kernels, log_init)
    if loglik == -np.inf:
        return -np.inf, None
    beta = _backward_messages(log_omega, kernels)

    post = alpha + beta
    post -= post.max(axis=1, keepdims=True)
    gamma = np.exp(post)
    gamma /= gamma.sum(axis=1, keepdims=True)
    inv_var = 1.0 / obs.sigma**2
    gr = gamma * resid
    grad_a = float((gr @ cos_t).sum()) * inv_var
    grad_b = float(gr.sum()) * inv_var
    grad_sigma = float((gr * resid).sum()) / obs.sigma**3 - data.n / obs.sigma

    K = space.total_states
    grad_q = np.zeros(space.n_s)
    for i in range(1, data.n):
        kern = kernels[i - 1]
        W = kern.band.shape[1]
        msg = log_omega[i] + beta[i]
        for j in range(space.n_s):
            db = kern.dband[j]
            Wd = db.shape[1]
            acc = 0.0
            for d in range(Wd):
                hi = K - d
                expo = alpha[i - 1, :hi] + msg[d:] - loglik
                expo = np.minimum(expo, 600.0)
                acc += float(np.exp(expo) @ db[:hi, d])
            grad_q[j] += acc
    grads = {"a": grad_a, "b": grad_b, "sigma": grad_sigma, "q": grad_q}
    return loglik, grads


def initial_rate_guess(data: DepthSeries, space: StateSpace) -> RateVector:
    """Spectral starting point: states traversed per meter of core."""
    from .fit import spectral_samples_per_cycle

    spc = spectral_samples_per_cycle(data.proxy)
    median_dx = float(np.median(np.diff(data.depths)))
    if not np.isfinite(spc):
        spc = 3.0 * space.n_s
    meters_per_year = spc * median_dx
    return RateVector(np.full(space.n_s, space.n_s / meters_per_year))


def fit_mle_cts(data: DepthSeries, space: StateSpace, init=None,
                opts=None, log_init=None,
                band_tol: float = 1e-12):
    """Maximum likelihood for the continuous-index model.

    ``init`` is an optional (RateVector, ObservationParams) pair; gradients
    run through the uniformization series, observation gradients through the
    smoothed marginals.  Returns a :class:`~icechron.fit.FitReport` whose
    params hold q (rates), a, b, sigma.
    """
    from .fit import (FitOptions, FitReport, _minimize_with_trace,
                      initial_guess)
    from .transforms import (IdentityTransform, LogTransform, ParameterSpace)

    opts = opts or FitOptions()
    start = time.perf_counter()
    if init is None:
        init_obs, _ = initial_guess(data, space)
        init_rates = initial_rate_guess(data, space)
    else:
        init_rates, init_obs = init
    if log_init is None:
        log_init = default_log_init(space)

    pspace = ParameterSpace([
        ("q", space.n_s, LogTransform()),
        ("a", 0, IdentityTransform()),
        ("b", 0, IdentityTransform()),
        ("sigma", 0, LogTransform()),
    ])
    z0 = pspace.unconstrain({"q": init_rates.q, "a": init_obs.a,
                             "b": init_obs.b, "sigma": init_obs.sigma})

    def fn(z):
        params = pspace.constrain(z)
        loglik, grads = cts_loglik_and_grad(
            data, space, RateVector(params["q"]),
            ObservationParams(params["a"], params["b"], params["sigma"]),
            log_init=log_init, band_tol=band_tol)
        if grads is None:
            return -np.inf, np.zeros(pspace.dim)
        named = {"q": grads["q"], "a": grads["a"], "b": grads["b"],
                 "sigma": grads["sigma"]}
        return loglik, pspace.grad_to_unconstrained(z, named)

    result, trace, converged = _minimize_with_trace(
        fn, z0, opts.tol, opts.max_iter, what="log-likelihood")
    fitted = pspace.constrain(result.x)
    notes = [] if converged else [f"optimizer stopped: {result.message}"]
    return FitReport(value=-float(result.fun), iterations=len(trace),
                     converged=converged, trace=trace,
                     params={"q": np.asarray(fitted["q"]), "a": fitted["a"],
                             "b": fitted["b"], "sigma": fitted["sigma"]},
                     wall_clock=time.perf_counter() - start, notes=notes)


# ---------------------------------------------------------------------------
# gaps and their posteriors


def detect_gaps(depths: np.ndarray, factor: float = 3.0) -> list:
    """Indices i where depths[i] -> depths[i+1] exceeds factor x median gap."""
    gaps = np.diff(depths)
    cutoff = factor * float(np.median(gaps))
    return [int(i) for i in np.where(gaps > cutoff)[0]]


@dataclass(frozen=True)
class GapReport:
    """Posterior of the years elapsed across one detected gap."""

    left_index: int
    right_index: int
    left_depth: float
    right_depth: float
    elapsed_years: dict


def _elapsed_years_exact(space, alpha, beta, log_omega, kernel, i, loglik):
    """Distribution of year(t_{i+1}) - year(t_i) from the banded pairwise joint."""
    K = space.total_states
    band = kernel.band
    W = band.shape[1]
    years = space.years
    msg = log_omega[i + 1] + beta[i + 1]
    out = {}
    for d in range(W):
        hi = K - d
        if hi <= 0:
            continue
        with np.errstate(divide="ignore"):
            logxi = (alpha[i, :hi] + np.log(band[:hi, d]) + msg[d:] - loglik)
        xi = np.exp(np.minimum(logxi, 0.0))
        dy = years[d:] - years[:hi]
        for y in np.unique(dy):
            out[int(y)] = out.get(int(y), 0.0) + float(xi[dy == y].sum())
    total = sum(out.values())
    return {y: p / total for y, p in sorted(out.items())}


def elapsed_years_from_paths(space: StateSpace, paths: np.ndarray,
                             i: int, j: int) -> dict:
    """Empirical distribution of year(t_j) - year(t_i) over sampled paths."""
    years = space.years[paths]
    diff = years[:, j] - years[:, i]
    values, counts = np.unique(diff, return_counts=True)
    return {int(v): float(c) / paths.shape[0] for v, c in zip(values, counts)}


def gap_posterior(data: DepthSeries, space: StateSpace, rates: RateVector,
                  obs: ObservationParams, log_init=None, n_paths: int = 500,
                  rng=None, gap_factor: float = 3.0,
                  band_tol: float = 1e-12):
    """Chronology across missing sections plus elapsed-year posteriors.

    Returns (chronology, gap_reports); one report per detected gap with the
    exact posterior over the whole years elapsed across it.
    """
    if log_init is None:
        log_init = default_log_init(space)
    log_init = _check_log_init(log_init, space.total_states)
    log_omega = build_emission_matrix(data, space, obs)
    kernels = transition_kernels(rates, space, data.depths, band_tol)
    alpha, loglik = _forward_messages(log_omega, kernels, log_init)
    if loglik == -np.inf:
        raise InferenceError("data impossible under the continuous-index model")
    beta = _backward_messages(log_omega, kernels)
    post = alpha + beta
    post -= post.max(axis=1, keepdims=True)
    gamma = np.exp(post)
    gamma /= gamma.sum(axis=1, keepdims=True)
    paths = sample_paths_inhomogeneous(log_omega, kernels, log_init,
                                       n_paths, rng)
    chron = Chronology(space=space, depths=data.depths, gamma=gamma,
                       paths=paths, loglik=loglik)
    reports = []
    for i in detect_gaps(data.depths, gap_factor):
        dist = _elapsed_years_exact(space, alpha, beta, log_omega,
                                    kernels[i], i, loglik)
        reports.append(GapReport(
            left_index=i, right_index=i + 1,
            left_depth=float(data.depths[i]),
            right_depth=float(data.depths[i + 1]),
            elapsed_years=dist))
    return chron, reports
