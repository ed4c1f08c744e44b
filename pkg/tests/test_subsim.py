"""Subset simulation against exact rare-event probabilities."""

import numpy as np
import pytest
from scipy.special import erfc
from scipy.stats import chi2, kstest

from latent_abcss.rng_linalg import RngStream
from latent_abcss.subsim import (
    LevelRecord,
    SubSimConfig,
    SubSimTrace,
    conditional_chain,
    dissimilarity,
    dissimilarity_batch,
    estimate_p,
    load_trace,
    posterior_solutions,
    save_trace,
    subsim_run,
)


def halfspace_map(level):
    """Latent map whose zero set is the half-space {z_1 >= level}."""

    def g2(z):
        return np.maximum(level - z[:, :1], 0.0)

    return g2


def gauss_tail(level):
    return 0.5 * erfc(level / np.sqrt(2.0))


class TestDissimilarity:
    def test_identical_vectors(self):
        assert dissimilarity([1.0, 2.0], [1.0, 2.0]) == 0.0

    def test_uniform_offset(self):
        y = np.zeros(81)
        assert dissimilarity(y + 0.7, y) == pytest.approx(81 * 0.49)

    def test_symmetry(self):
        a = np.array([1.0, -2.0, 0.5])
        b = np.array([0.0, 1.0, 2.0])
        assert dissimilarity(a, b) == dissimilarity(b, a)

    def test_length_mismatch(self):
        with pytest.raises(ValueError, match="mismatch"):
            dissimilarity([1.0], [1.0, 2.0])

    def test_batch_matches_scalar(self):
        gen = np.random.default_rng(0)
        ys = gen.standard_normal((5, 4))
        y0 = gen.standard_normal(4)
        batch = dissimilarity_batch(ys, y0)
        for i in range(5):
            assert batch[i] == pytest.approx(dissimilarity(ys[i], y0))


class TestConditionalChain:
    def test_zero_scale_never_moves(self):
        states = conditional_chain(
            np.array([3.5]), 50, 0.0, halfspace_map(3.0), np.zeros(1), 0.0, RngStream(1)
        )
        np.testing.assert_array_equal(states, np.full((50, 1), 3.5))

    def test_infinite_threshold_recovers_prior(self):
        # scale 1 makes proposals independent draws, all accepted
        states = conditional_chain(
            np.array([0.0]), 10_000, np.inf, halfspace_map(-np.inf), np.zeros(1), 1.0, RngStream(2)
        )
        assert kstest(states[1:].ravel(), "norm").pvalue > 0.01

    def test_truncated_normal_mean(self):
        # long-run mean of the prior restricted to {z > 3}
        states = conditional_chain(
            np.array([3.3]), 20_000, 0.0, halfspace_map(3.0), np.zeros(1), 0.5, RngStream(3)
        )
        target = 3.2831  # phi(3) / Phi(-3)
        assert states.mean() == pytest.approx(target, rel=0.02)
        assert states.min() >= 3.0

    def test_seed_outside_region_rejected(self):
        with pytest.raises(ValueError, match="outside"):
            conditional_chain(np.array([2.0]), 10, 0.0, halfspace_map(3.0), np.zeros(1), 0.5, RngStream(4))

    def test_every_state_satisfies_threshold(self):
        g2 = lambda z: z[:, :1]
        states = conditional_chain(np.array([0.1]), 500, 1.0, g2, np.zeros(1), 0.7, RngStream(5))
        d = (states[:, 0]) ** 2
        assert np.all(d <= 1.0)


class TestSubsimRun:
    def test_certain_event_single_level(self):
        g2 = lambda z: z[:, :2]
        cfg = SubSimConfig(target_eps=1e9, n_particles=500)
        trace = subsim_run(g2, np.zeros(2), 3, cfg, RngStream(6))
        assert trace.n_levels == 1
        assert trace.p_hat == 1.0
        assert not trace.stagnated
        assert trace.final_samples.shape == (500, 3)

    def test_gaussian_tail_oracle_z3(self):
        cfg = SubSimConfig(target_eps=1e-12)
        phats = [
            subsim_run(halfspace_map(3.0), np.zeros(1), 10, cfg, RngStream(s, 91)).p_hat
            for s in range(10)
        ]
        assert np.mean(phats) == pytest.approx(gauss_tail(3.0), rel=0.3)

    def test_direct_product_formula(self):
        cfg = SubSimConfig(target_eps=1.0, n_particles=1000, level_fraction=0.1)
        trace = SubSimTrace(config=cfg)
        trace.levels = [LevelRecord(9.0, 0.5, 100), LevelRecord(4.0, 0.5, 100), LevelRecord(1.0, 0.5, 250)]
        assert estimate_p(trace) == pytest.approx(0.1**2 * 0.25)

    def test_thresholds_strictly_decreasing_and_survivors_valid(self):
        g2 = lambda z: z[:, :3]
        cfg = SubSimConfig(target_eps=0.05, n_particles=400, max_levels=25)
        trace = subsim_run(g2, np.zeros(3), 6, cfg, RngStream(7))
        ts = [lvl.threshold for lvl in trace.levels]
        assert all(a > b for a, b in zip(ts, ts[1:]))
        assert np.all(trace.final_dissimilarities <= trace.levels[-1].threshold)
        # every recorded population satisfies its level threshold
        for j in range(1, len(trace.level_dissimilarities)):
            assert np.all(trace.level_dissimilarities[j] <= ts[j - 1] + 1e-12)

    def test_estimator_error_shrinks_with_n(self):
        # half-space {z1 >= 2}: p = 2.275e-2
        truth = gauss_tail(2.0)
        errs = {}
        for n in (1000, 2000):
            cfg = SubSimConfig(target_eps=1e-12, n_particles=n)
            phats = [
                subsim_run(halfspace_map(2.0), np.zeros(1), 5, cfg, RngStream(s, n)).p_hat
                for s in range(10)
            ]
            errs[n] = abs(np.mean(phats) - truth) / truth
        assert errs[1000] < 0.3
        assert errs[2000] <= errs[1000] + 0.05

    def test_spherical_shell_event(self):
        # {||z||^2 >= c} in 10-D with c the 0.999 chi2 quantile: p = 1e-3
        c = chi2.ppf(0.999, df=10)
        g2 = lambda z: np.maximum(c - np.sum(z * z, axis=1, keepdims=True), 0.0)
        cfg = SubSimConfig(target_eps=1e-12)
        phats = [
            subsim_run(g2, np.zeros(1), 10, cfg, RngStream(s, 55)).p_hat for s in range(10)
        ]
        assert np.mean(phats) == pytest.approx(1e-3, rel=0.3)

    def test_stagnation_flag_and_budget_burn(self):
        # dissimilarity floored at 5: target below the floor is unreachable
        def g2(z):
            return np.sqrt(np.maximum(z[:, :1] ** 2, 5.0))

        cfg = SubSimConfig(target_eps=0.1, n_particles=200, max_levels=6)
        trace = subsim_run(g2, np.zeros(1), 2, cfg, RngStream(8))
        assert trace.stagnated
        assert trace.smallest_threshold >= 5.0
        assert trace.p_hat <= 1.0

    def test_posterior_solutions_order_and_shape(self):
        g2 = lambda z: z[:, :2]
        cfg = SubSimConfig(target_eps=10.0, n_particles=300)
        trace = subsim_run(g2, np.zeros(2), 4, cfg, RngStream(9))
        g1 = lambda z: z * 2.0
        sols = posterior_solutions(trace, g1)
        np.testing.assert_array_equal(sols, trace.final_samples * 2.0)

    def test_deterministic_given_stream(self):
        g2 = lambda z: z[:, :2]
        cfg = SubSimConfig(target_eps=0.5, n_particles=300)
        t1 = subsim_run(g2, np.zeros(2), 4, cfg, RngStream(10, 3))
        t2 = subsim_run(g2, np.zeros(2), 4, cfg, RngStream(10, 3))
        np.testing.assert_array_equal(t1.final_samples, t2.final_samples)
        assert t1.p_hat == t2.p_hat

    def test_empty_trace_estimate_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            estimate_p(SubSimTrace(config=SubSimConfig(target_eps=1.0)))

    def test_config_validation(self):
        with pytest.raises(ValueError):
            SubSimConfig(target_eps=0.0)
        with pytest.raises(ValueError):
            SubSimConfig(target_eps=1.0, level_fraction=1.5)
        with pytest.raises(ValueError):
            SubSimConfig(target_eps=1.0, n_particles=50, level_fraction=0.1)


class TestTraceIO:
    def test_roundtrip(self, tmp_path):
        g2 = lambda z: z[:, :2]
        cfg = SubSimConfig(target_eps=0.5, n_particles=300)
        trace = subsim_run(g2, np.zeros(2), 4, cfg, RngStream(11))
        prefix = str(tmp_path / "trace")
        save_trace(prefix, trace)
        back = load_trace(prefix)
        assert back.p_hat == trace.p_hat
        assert back.n_levels == trace.n_levels
        np.testing.assert_array_equal(back.final_samples, trace.final_samples)
        for a, b in zip(back.level_dissimilarities, trace.level_dissimilarities):
            np.testing.assert_array_equal(a, b)
