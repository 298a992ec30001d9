"""Matrix-exponential kernels and the inhomogeneous chain."""

import numpy as np
import pytest
from scipy.linalg import expm
from scipy.special import logsumexp

from icechron import ctsmodel as cm
from icechron import hmm
from icechron import simulate as sim
from icechron.errors import ValidationError


def _generator(space, rates):
    q = cm.full_rates(space, rates)
    return np.diag(-q) + np.diag(q[:-1], k=1)


def dense_inhom_forward(log_omega, space, rates, depths, log_init):
    """Oracle: full matrix exponentials + dense forward in log space."""
    Q = _generator(space, rates)
    alpha = log_init + log_omega[0]
    for i in range(1, log_omega.shape[0]):
        P = expm((depths[i] - depths[i - 1]) * Q)
        with np.errstate(divide="ignore"):
            log_P = np.log(P)
        alpha = logsumexp(alpha[:, None] + log_P, axis=0) + log_omega[i]
    return float(logsumexp(alpha))


class TestGapKernel:
    def test_two_state_analytic(self):
        # K = 2: P = [[e^{-q d}, 1 - e^{-q d}], [0, 1]]
        space = hmm.build_state_space(1, 2)
        q = 1.7
        d = 0.43
        kern = cm.gap_kernel(cm.RateVector([q]), space, d)
        expected = np.array([[np.exp(-q * d), 1 - np.exp(-q * d)],
                             [0.0, 1.0]])
        np.testing.assert_allclose(kern.to_dense(), expected, atol=1e-12)

    def test_tiny_gap_is_identity(self):
        space = hmm.build_state_space(3, 4)
        rates = cm.RateVector([1.0, 2.0, 3.0])
        d = 1e-10 / 3.0  # 1e-10 * min(1/q)
        kern = cm.gap_kernel(rates, space, d)
        diff = np.abs(kern.to_dense() - np.eye(space.total_states)).max()
        assert diff <= 1e-8

    @pytest.mark.parametrize("seed", range(10))
    def test_matches_dense_expm(self, seed):
        rng = np.random.default_rng(seed)
        n_s = int(rng.integers(1, 5))
        m = int(rng.integers(2, 60 // n_s + 1))
        space = hmm.build_state_space(n_s, m)
        rates = cm.RateVector(rng.uniform(0.2, 5.0, n_s))
        # events up to the per-kernel cap territory
        events = rng.uniform(0.1, 50.0)
        d = events / float(rates.q.max())
        kern = cm.gap_kernel(rates, space, d)
        oracle = expm(d * _generator(space, rates))
        assert np.abs(kern.to_dense() - oracle).max() <= 1e-8

    def test_rows_stochastic_and_upper_triangular(self):
        rng = np.random.default_rng(3)
        space = hmm.build_state_space(4, 10)
        rates = cm.RateVector(rng.uniform(0.5, 3.0, 4))
        kern = cm.gap_kernel(rates, space, 1.3)
        dense = kern.to_dense()
        np.testing.assert_allclose(dense.sum(axis=1), 1.0, atol=1e-10)
        assert dense.min() >= 0.0
        assert np.abs(np.tril(dense, k=-1)).max() == 0.0

    def test_semigroup(self):
        rng = np.random.default_rng(4)
        space = hmm.build_state_space(4, 10)  # K = 40
        rates = cm.RateVector(rng.uniform(0.5, 3.0, 4))
        d1, d2 = 0.7, 1.9
        P1 = cm.gap_kernel(rates, space, d1).to_dense()
        P2 = cm.gap_kernel(rates, space, d2).to_dense()
        P12 = cm.gap_kernel(rates, space, d1 + d2).to_dense()
        assert np.abs(P1 @ P2 - P12).max() <= 1e-8

    def test_substepped_composition_matches_direct(self):
        space = hmm.build_state_space(2, 20)
        rates = cm.RateVector([2.0, 3.0])
        d = 6.0  # 18 expected events: composed from sub-steps
        direct = cm.gap_kernel(rates, space, d).to_dense()
        composed = cm._composed_kernel(rates, space, d, 1e-12, False).to_dense()
        assert np.abs(direct - composed).max() <= 1e-9

    def test_rejects_bad_gaps(self):
        space = hmm.build_state_space(2, 3)
        rates = cm.RateVector([1.0, 1.0])
        with pytest.raises(ValidationError):
            cm.gap_kernel(rates, space, 0.0)
        with pytest.raises(ValidationError, match="sub-steps"):
            cm.gap_kernel(rates, space, 1e4)

    def test_empirical_jump_distribution(self):
        # exact event-time simulation agrees with the kernel row
        space = hmm.build_state_space(2, 8)
        rates = cm.RateVector([2.0, 4.0])
        d = 0.6
        kern = cm.gap_kernel(rates, space, d)
        start = 3
        rng = np.random.default_rng(5)
        draws = 40_000
        data, truth = None, None
        q = cm.full_rates(space, rates)
        ends = np.empty(draws, dtype=int)
        for r in range(draws):
            k, pos = start, 0.0
            while True:
                if q[k] <= 0:
                    break
                pos += rng.exponential(1.0 / q[k])
                if pos > d:
                    break
                k += 1
            ends[r] = k
        empirical = np.bincount(ends, minlength=space.total_states) / draws
        row = kern.to_dense()[start]
        assert np.abs(empirical - row).max() < 0.01


class TestInhomogeneousForward:
    def test_single_observation_base_case(self):
        rng = np.random.default_rng(6)
        space = hmm.build_state_space(2, 3)
        K = space.total_states
        log_omega = rng.normal(size=(1, K))
        log_init = np.full(K, -np.log(K))
        got = cm.forward_loglik_inhomogeneous(
            log_omega, cm.RateVector([1.0, 2.0]), space, [0.5], log_init)
        assert got == pytest.approx(logsumexp(log_init + log_omega[0]),
                                    abs=1e-12)

    def test_small_gap_matches_discrete_chain(self, kernel_backend):
        # with tiny gaps, multi-step jumps vanish and the kernel reduces to
        # stay probabilities exp(-q dd)
        rng = np.random.default_rng(7)
        n_s = 3
        space = hmm.build_state_space(n_s, 5)
        K = space.total_states
        q = rng.uniform(0.5, 2.0, n_s)
        dd = 1e-4
        depths = dd * np.arange(1, 41)
        log_omega = rng.normal(size=(40, K))
        log_init = np.full(K, -np.log(K))
        cts = cm.forward_loglik_inhomogeneous(
            log_omega, cm.RateVector(q), space, depths, log_init)
        stay = hmm.StayProbabilities(np.exp(-q * dd))
        disc = hmm.forward_loglik_sparse(
            log_omega, hmm.transition_logprobs(space, stay), log_init)
        assert cts == pytest.approx(disc, abs=1e-6)

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_dense_oracle(self, seed):
        rng = np.random.default_rng(20 + seed)
        space = hmm.build_state_space(1, 5)  # K = 5
        K = space.total_states
        depths = np.sort(rng.uniform(0.1, 3.0, 6))
        log_omega = rng.normal(size=(6, K))
        raw = rng.uniform(0.2, 1.0, K)
        log_init = np.log(raw / raw.sum())
        rates = cm.RateVector(rng.uniform(0.5, 3.0, 1))
        got = cm.forward_loglik_inhomogeneous(
            log_omega, rates, space, depths, log_init)
        expected = dense_inhom_forward(log_omega, space, rates, depths,
                                       log_init)
        assert got == pytest.approx(expected, abs=1e-9)

    def test_rate_depth_scale_invariance(self):
        rng = np.random.default_rng(9)
        space = hmm.build_state_space(2, 6)
        K = space.total_states
        depths = np.sort(rng.uniform(0.1, 4.0, 15))
        log_omega = rng.normal(size=(15, K))
        log_init = np.full(K, -np.log(K))
        q = np.array([1.5, 2.5])
        c = 3.7
        base = cm.forward_loglik_inhomogeneous(
            log_omega, cm.RateVector(q), space, depths, log_init)
        scaled = cm.forward_loglik_inhomogeneous(
            log_omega, cm.RateVector(c * q), space, depths / c, log_init)
        assert scaled == pytest.approx(base, abs=1e-9)


class TestCtsGradient:
    def test_rate_gradient_matches_fd(self):
        rng = np.random.default_rng(10)
        n_s = 3
        space = hmm.build_state_space(n_s, 9)  # K = 27
        rates = cm.RateVector([2.0, 3.0, 2.5])
        obs = hmm.ObservationParams(1.0, 0.2, 0.4)
        depths = np.sort(rng.uniform(0.1, 4.0, 28))
        data, _ = sim.simulate_hmm(space, rates, obs, depths, rng=11)
        _, grads = cm.cts_loglik_and_grad(data, space, rates, obs)
        h = 1e-6
        lw = hmm.build_emission_matrix(data, space, obs)
        for j in range(n_s):
            up, dn = rates.q.copy(), rates.q.copy()
            up[j] += h
            dn[j] -= h
            fd = (cm.forward_loglik_inhomogeneous(
                      lw, cm.RateVector(up), space, data.depths)
                  - cm.forward_loglik_inhomogeneous(
                      lw, cm.RateVector(dn), space, data.depths)) / (2 * h)
            rel = abs(grads["q"][j] - fd) / max(abs(fd), 1.0)
            assert rel < 1e-4, f"rate {j}"


class TestFitCts:
    def test_recovers_mean_annual_depth(self):
        n_s = 4
        space = hmm.build_state_space(n_s, 25)
        true_rate = 5.0  # layers are n_s / q = 0.8 m
        rates = cm.RateVector(np.full(n_s, true_rate))
        obs = hmm.ObservationParams(1.0, 0.0, 0.3)
        data, truth = sim.simulate_hmm(space, rates, obs, (300, 0.04), rng=12)
        report = cm.fit_mle_cts(data, space)
        assert report.converged
        est_thickness = float(np.mean(n_s / report.params["q"]))
        assert est_thickness == pytest.approx(n_s / true_rate, rel=0.1)

    def test_deleted_section_loglik_close(self):
        # dropping a contiguous 20% slab barely moves per-point fit quality
        n_s = 4
        space = hmm.build_state_space(n_s, 25)
        rates = cm.RateVector(np.full(n_s, 5.0))
        obs = hmm.ObservationParams(1.0, 0.0, 0.3)
        data, _ = sim.simulate_hmm(space, rates, obs, (300, 0.04), rng=13)
        keep = np.ones(data.n, dtype=bool)
        keep[120:180] = False
        gapped = hmm.DepthSeries(data.depths[keep], data.proxy[keep])
        lw_full = hmm.build_emission_matrix(data, space, obs)
        lw_gap = hmm.build_emission_matrix(gapped, space, obs)
        ll_gap = cm.forward_loglik_inhomogeneous(
            lw_gap, rates, space, gapped.depths)
        # oracle: full-data loglik restricted to the same retained points
        ll_full_restricted = cm.forward_loglik_inhomogeneous(
            lw_full[keep], rates, space, data.depths[keep])
        assert ll_gap == pytest.approx(ll_full_restricted, abs=1e-9)


class TestGapPosterior:
    def test_no_gap_matches_contiguous(self):
        n_s = 3
        space = hmm.build_state_space(n_s, 12)
        rates = cm.RateVector(np.full(n_s, 4.0))
        obs = hmm.ObservationParams(1.0, 0.0, 0.3)
        data, _ = sim.simulate_hmm(space, rates, obs, (120, 0.03), rng=14)
        chron, reports = cm.gap_posterior(data, space, rates, obs,
                                          n_paths=50, rng=0)
        assert reports == []
        np.testing.assert_allclose(chron.gamma.sum(axis=1), 1.0, atol=1e-9)

    def test_sharp_gap_mode_at_expected_layers(self):
        # gap spanning exactly 2 expected layers with sharp rates
        n_s = 6
        space = hmm.build_state_space(n_s, 14)
        rate = float(n_s)  # 1 m per layer
        rates = cm.RateVector(np.full(n_s, rate))
        obs = hmm.ObservationParams(1.0, 0.0, 0.05)
        dx = 0.05
        left = np.arange(dx, 3.0 + 1e-9, dx)
        right = np.arange(5.0, 8.0 + 1e-9, dx)
        depths = np.concatenate([left, right])
        proxy = np.cos(2 * np.pi * depths) + 0.05 * np.random.default_rng(15).standard_normal(depths.size)
        data = hmm.DepthSeries(depths, proxy)
        chron, reports = cm.gap_posterior(data, space, rates, obs,
                                          n_paths=200, rng=1)
        assert len(reports) == 1
        dist = reports[0].elapsed_years
        assert max(dist, key=dist.get) == 2

    def test_paths_and_exact_distribution_agree(self):
        n_s = 4
        space = hmm.build_state_space(n_s, 10)
        rates = cm.RateVector(np.full(n_s, 4.0))
        obs = hmm.ObservationParams(1.0, 0.0, 0.3)
        rng = np.random.default_rng(16)
        depths = np.concatenate([
            np.arange(0.05, 1.5, 0.05), np.arange(2.3, 3.6, 0.05)])
        data, _ = sim.simulate_hmm(space, rates, obs, depths, rng=17)
        chron, reports = cm.gap_posterior(data, space, rates, obs,
                                          n_paths=4000, rng=2)
        assert len(reports) == 1
        rep = reports[0]
        empirical = cm.elapsed_years_from_paths(
            space, chron.paths, rep.left_index, rep.right_index)
        for years, prob in rep.elapsed_years.items():
            assert empirical.get(years, 0.0) == pytest.approx(prob, abs=0.03)
