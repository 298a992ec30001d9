"""Numpy implementations of the chain recursions.

These are the reference kernels; ``_core`` (Cython) implements the same
contracts element-for-element.  All arrays are float64, all work happens in
log space, and ``-inf`` is a legal value wherever a log probability appears.
State index 0 is the first lattice state; transitions either stay or advance
by one index.

Shared conventions:

* ``log_omega``   -- (n, K) log emission densities.
* ``log_stay``    -- (S, K) log stay probabilities, one row per transition
  regime (S == 1 for a homogeneous chain).
* ``log_adv``     -- (S, K) log advance probabilities; entry K-1 of every row
  must be ``-inf`` (the final state is absorbing).
* ``step_map``    -- (n-1,) int64, regime row used by the step i-1 -> i.
* ``log_init``    -- (K,) log initial state distribution.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit, logsumexp

BACKEND_NAME = "python"

_NEG_INF = -np.inf


def forward(log_omega, log_stay, log_adv, step_map, log_init):
    """Sparse forward pass; returns (alpha, loglik).

    alpha[i, k] = log p(s_1..i, state_i = k); loglik = logsumexp(alpha[-1]).
    Per-step cost is O(K), using only the stay/advance diagonals.
    """
    n, K = log_omega.shape
    alpha = np.empty((n, K))
    alpha[0] = log_init + log_omega[0]
    shifted = np.empty(K)
    for i in range(1, n):
        s = step_map[i - 1]
        prev = alpha[i - 1]
        shifted[0] = _NEG_INF
        np.add(prev[:-1], log_adv[s, :-1], out=shifted[1:])
        np.logaddexp(prev + log_stay[s], shifted, out=alpha[i])
        alpha[i] += log_omega[i]
    return alpha, float(logsumexp(alpha[-1]))


def backward(log_omega, log_stay, log_adv, step_map):
    """Backward pass; beta[i, k] = log p(s_{i+1}..n | state_i = k)."""
    n, K = log_omega.shape
    beta = np.empty((n, K))
    beta[-1] = 0.0
    tmp = np.empty(K)
    for i in range(n - 2, -1, -1):
        s = step_map[i]
        w = log_omega[i + 1] + beta[i + 1]
        tmp[-1] = _NEG_INF
        np.add(w[1:], log_adv[s, :-1], out=tmp[:-1])
        np.logaddexp(w + log_stay[s], tmp, out=beta[i])
    return beta


def transition_expectations(alpha, beta, log_omega, log_stay, log_adv,
                            step_map, loglik):
    """Expected stay/advance transition counts, accumulated per regime row.

    Returns (exp_stay, exp_adv), both (S, K); exp_adv[s, k] is the expected
    number of k -> k+1 moves made under regime s, exp_stay[s, k] the k -> k
    moves.  Requires a finite ``loglik``.
    """
    n, K = alpha.shape
    S = log_stay.shape[0]
    exp_stay = np.zeros((S, K))
    exp_adv = np.zeros((S, K))
    for i in range(1, n):
        s = step_map[i - 1]
        exp_stay[s] += np.exp(
            alpha[i - 1] + log_stay[s] + log_omega[i] + beta[i] - loglik
        )
        exp_adv[s, :-1] += np.exp(
            alpha[i - 1, :-1] + log_adv[s, :-1]
            + log_omega[i, 1:] + beta[i, 1:] - loglik
        )
    return exp_stay, exp_adv


def sample_paths(alpha, log_stay, log_adv, step_map, uniforms):
    """Backward-sample state paths from the exact joint posterior.

    ``uniforms`` is (P, n) in [0, 1); column n-1 picks the final state, column
    i the state at index i.  Returns (P, n) int64 paths.  Identical uniforms
    give identical paths on every backend.
    """
    P, n = uniforms.shape
    K = alpha.shape[1]
    paths = np.empty((P, n), dtype=np.int64)

    last = alpha[-1]
    w = np.exp(last - last.max())
    cdf = np.cumsum(w)
    cdf /= cdf[-1]
    paths[:, -1] = np.minimum(np.searchsorted(cdf, uniforms[:, -1], side="right"), K - 1)

    for i in range(n - 2, -1, -1):
        s = step_map[i]
        nxt = paths[:, i + 1]
        lstay = alpha[i, nxt] + log_stay[s, nxt]
        prev = np.maximum(nxt - 1, 0)
        ladv = np.where(nxt > 0, alpha[i, prev] + log_adv[s, prev], _NEG_INF)
        # p(stay) = sigmoid(lstay - ladv); resolve -inf pairs without NaNs
        diff = np.empty(P)
        both = np.isneginf(lstay) & np.isneginf(ladv)
        only_adv = np.isneginf(lstay) & ~both
        only_stay = np.isneginf(ladv) & ~both
        rest = ~(both | only_adv | only_stay)
        diff[rest] = lstay[rest] - ladv[rest]
        diff[only_stay | both] = np.inf
        diff[only_adv] = -np.inf
        p_stay = expit(diff)
        paths[:, i] = np.where(uniforms[:, i] < p_stay, nxt, nxt - 1)
    return paths
