# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled twins of the numpy recursion kernels.

Same contracts as ``icechron._kernels.python``; see that module for the
array conventions.  Kept branch-for-branch equivalent so both backends
produce identical output for identical inputs.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport INFINITY, exp, expm1, fabs, log1p

cnp.import_array()

BACKEND_NAME = "compiled"


cdef inline double logaddexp(double a, double b) nogil:
    if a == -INFINITY:
        return b
    if b == -INFINITY:
        return a
    if a >= b:
        return a + log1p(exp(b - a))
    return b + log1p(exp(a - b))


def forward(double[:, ::1] log_omega, double[:, ::1] log_stay,
            double[:, ::1] log_adv, long long[::1] step_map,
            double[::1] log_init):
    cdef Py_ssize_t n = log_omega.shape[0]
    cdef Py_ssize_t K = log_omega.shape[1]
    alpha_arr = np.empty((n, K))
    cdef double[:, ::1] alpha = alpha_arr
    cdef Py_ssize_t i, k, s
    cdef double stay, adv, m, acc

    with nogil:
        for k in range(K):
            alpha[0, k] = log_init[k] + log_omega[0, k]
        for i in range(1, n):
            s = step_map[i - 1]
            for k in range(K - 1, 0, -1):
                stay = alpha[i - 1, k] + log_stay[s, k]
                adv = alpha[i - 1, k - 1] + log_adv[s, k - 1]
                alpha[i, k] = logaddexp(stay, adv) + log_omega[i, k]
            alpha[i, 0] = alpha[i - 1, 0] + log_stay[s, 0] + log_omega[i, 0]

    # logsumexp over the final row
    cdef double best = -INFINITY
    for k in range(K):
        if alpha[n - 1, k] > best:
            best = alpha[n - 1, k]
    if best == -INFINITY:
        return alpha_arr, -INFINITY
    acc = 0.0
    for k in range(K):
        acc += exp(alpha[n - 1, k] - best)
    return alpha_arr, best + np.log(acc)


def backward(double[:, ::1] log_omega, double[:, ::1] log_stay,
             double[:, ::1] log_adv, long long[::1] step_map):
    cdef Py_ssize_t n = log_omega.shape[0]
    cdef Py_ssize_t K = log_omega.shape[1]
    beta_arr = np.empty((n, K))
    cdef double[:, ::1] beta = beta_arr
    cdef Py_ssize_t i, k, s
    cdef double stay, adv

    with nogil:
        for k in range(K):
            beta[n - 1, k] = 0.0
        for i in range(n - 2, -1, -1):
            s = step_map[i]
            for k in range(K - 1):
                stay = log_stay[s, k] + log_omega[i + 1, k] + beta[i + 1, k]
                adv = log_adv[s, k] + log_omega[i + 1, k + 1] + beta[i + 1, k + 1]
                beta[i, k] = logaddexp(stay, adv)
            beta[i, K - 1] = (log_stay[s, K - 1] + log_omega[i + 1, K - 1]
                              + beta[i + 1, K - 1])
    return beta_arr


def transition_expectations(double[:, ::1] alpha, double[:, ::1] beta,
                            double[:, ::1] log_omega, double[:, ::1] log_stay,
                            double[:, ::1] log_adv, long long[::1] step_map,
                            double loglik):
    cdef Py_ssize_t n = alpha.shape[0]
    cdef Py_ssize_t K = alpha.shape[1]
    cdef Py_ssize_t S = log_stay.shape[0]
    exp_stay_arr = np.zeros((S, K))
    exp_adv_arr = np.zeros((S, K))
    cdef double[:, ::1] exp_stay = exp_stay_arr
    cdef double[:, ::1] exp_adv = exp_adv_arr
    cdef Py_ssize_t i, k, s
    cdef double t

    with nogil:
        for i in range(1, n):
            s = step_map[i - 1]
            for k in range(K):
                t = alpha[i - 1, k] + log_stay[s, k] + log_omega[i, k] \
                    + beta[i, k] - loglik
                if t != -INFINITY:
                    exp_stay[s, k] += exp(t)
            for k in range(K - 1):
                t = alpha[i - 1, k] + log_adv[s, k] + log_omega[i, k + 1] \
                    + beta[i, k + 1] - loglik
                if t != -INFINITY:
                    exp_adv[s, k] += exp(t)
    return exp_stay_arr, exp_adv_arr


def sample_paths(double[:, ::1] alpha, double[:, ::1] log_stay,
                 double[:, ::1] log_adv, long long[::1] step_map,
                 double[:, ::1] uniforms):
    cdef Py_ssize_t P = uniforms.shape[0]
    cdef Py_ssize_t n = uniforms.shape[1]
    cdef Py_ssize_t K = alpha.shape[1]
    paths_arr = np.empty((P, n), dtype=np.int64)
    cdef long long[:, ::1] paths = paths_arr
    cdef double[::1] cdf = np.empty(K)
    cdef Py_ssize_t p, i, k, s, nxt
    cdef double best, acc, u, lstay, ladv, p_stay

    with nogil:
        best = -INFINITY
        for k in range(K):
            if alpha[n - 1, k] > best:
                best = alpha[n - 1, k]
        acc = 0.0
        for k in range(K):
            acc += exp(alpha[n - 1, k] - best)
            cdf[k] = acc
        for k in range(K):
            cdf[k] /= acc

        for p in range(P):
            u = uniforms[p, n - 1]
            k = 0
            while k < K - 1 and cdf[k] <= u:
                k += 1
            paths[p, n - 1] = k

        for i in range(n - 2, -1, -1):
            s = step_map[i]
            for p in range(P):
                nxt = paths[p, i + 1]
                if nxt == 0:
                    paths[p, i] = 0
                    continue
                lstay = alpha[i, nxt] + log_stay[s, nxt]
                ladv = alpha[i, nxt - 1] + log_adv[s, nxt - 1]
                if ladv == -INFINITY:
                    p_stay = 1.0
                elif lstay == -INFINITY:
                    p_stay = 0.0
                else:
                    p_stay = 1.0 / (1.0 + exp(ladv - lstay))
                if uniforms[p, i] < p_stay:
                    paths[p, i] = nxt
                else:
                    paths[p, i] = nxt - 1
    return paths_arr
