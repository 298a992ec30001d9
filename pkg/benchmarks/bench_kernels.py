#!/usr/bin/env python3
"""Benchmark the compiled kernels against the numpy fallback.

Times the four chain recursions on growing state spaces and prints a table
plus the fitted log-log scaling slope per backend.  A dense log-space
forward pass is included at small sizes to show the quadratic wall the
sparse recursions avoid.

Usage: python benchmarks/bench_kernels.py [--n 500] [--paths 200]
"""

import argparse
import time

import numpy as np

from icechron import hmm
from icechron._kernels import available_backends


def _instance(rng, n, K, n_s=5):
    space = hmm.build_state_space(n_s, K // n_s)
    trans = hmm.transition_logprobs(
        space, hmm.StayProbabilities(rng.uniform(0.3, 0.9, n_s)))
    log_omega = np.ascontiguousarray(rng.normal(size=(n, K)))
    log_init = np.full(K, -np.log(K))
    log_stay = trans.log_stay[None, :]
    log_adv = trans.log_adv[None, :]
    step_map = np.zeros(n - 1, dtype=np.int64)
    return log_omega, log_stay, log_adv, step_map, log_init


def _best_of(fn, reps=3):
    best = np.inf
    for _ in range(reps):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def _dense_forward(log_omega, log_stay, log_adv, log_init):
    from scipy.special import logsumexp

    K = log_init.size
    log_P = np.full((K, K), -np.inf)
    idx = np.arange(K)
    log_P[idx, idx] = log_stay[0]
    log_P[idx[:-1], idx[:-1] + 1] = log_adv[0, :-1]
    alpha = log_init + log_omega[0]
    for i in range(1, log_omega.shape[0]):
        alpha = logsumexp(alpha[:, None] + log_P, axis=0) + log_omega[i]
    return logsumexp(alpha)


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--n", type=int, default=500,
                        help="observations per instance")
    parser.add_argument("--paths", type=int, default=200,
                        help="posterior paths for the sampling benchmark")
    parser.add_argument("--dense-max-k", type=int, default=1000,
                        help="largest K for the dense reference pass")
    args = parser.parse_args()

    rng = np.random.default_rng(0)
    Ks = [250, 500, 1000, 2000, 4000]
    backends = available_backends()
    print(f"backends: {', '.join(sorted(backends))}   "
          f"(n = {args.n} observations)")

    header = f"{'K':>6} " + "".join(
        f"{name + ' fwd':>14}{name + ' f/b':>14}{name + ' sample':>16}"
        for name in sorted(backends)) + f"{'dense fwd':>12}"
    print(header)
    slopes = {name: [] for name in backends}
    for K in Ks:
        row = f"{K:>6} "
        inst = _instance(rng, args.n, K)
        uniforms = rng.random((args.paths, args.n))
        for name in sorted(backends):
            mod = backends[name]
            t_fwd = _best_of(lambda: mod.forward(*inst))
            alpha, ll = mod.forward(*inst)
            lw, ls, la, sm, li = inst

            def full_pass():
                a, l = mod.forward(lw, ls, la, sm, li)
                b = mod.backward(lw, ls, la, sm)
                mod.transition_expectations(a, b, lw, ls, la, sm, l)

            t_fb = _best_of(full_pass)
            t_s = _best_of(lambda: mod.sample_paths(alpha, ls, la, sm, uniforms))
            slopes[name].append(t_fwd)
            row += f"{t_fwd * 1e3:>12.1f}ms{t_fb * 1e3:>12.1f}ms{t_s * 1e3:>14.1f}ms"
        if K <= args.dense_max_k:
            lw, ls, la, sm, li = inst
            t_d = _best_of(
                lambda: _dense_forward(lw[:40], ls, la, li), reps=1) * args.n / 40
            row += f"{t_d:>11.2f}s"
        else:
            row += f"{'-':>12}"
        print(row)

    logk = np.log(Ks)
    for name in sorted(backends):
        slope = np.polyfit(logk, np.log(slopes[name]), 1)[0]
        print(f"{name}: forward scaling slope {slope:.2f} "
              f"(1.0 = linear in state count)")
    if len(backends) == 2:
        ratio = np.array(slopes["python"]) / np.array(slopes["compiled"])
        print(f"compiled speedup over python fallback: "
              f"{ratio.min():.1f}x - {ratio.max():.1f}x")


if __name__ == "__main__":
    main()
