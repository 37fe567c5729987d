"""Cylindrical observables, Cesaro accumulators, Markov and tail statistics."""

import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import random_field, sin1
from vortlab.dynamics import SimConfig
from vortlab.ergodics import (
    CesaroAccumulator, ClippedPolynomial, Coordinate, HypothesisWarning, Observable, SmoothBand, TanhLinear,
    batch_means_se, cesaro_convergence, cesaro_estimate, cesaro_update, default_catalog,
    markov_semigroup_test, observable_eval, seed_agreement, tail_bound_report,
)
from vortlab.errors import ConfigError, DomainError, OrderingError, UndefinedError
from vortlab.noise import NoiseSpectrum
from vortlab.spectral import ScalarField, make_grid, pairing

QUIET = NoiseSpectrum(amplitude=0.0)


def small_cfg(**kw):
    return SimConfig(**(dict(N=32, dt=0.05, gamma=0.5) | kw))


class TestOuterFunctions:
    def test_coordinate(self):
        assert Coordinate(1)(np.array([3.0, -2.0])) == -2.0
        assert Coordinate().sup_abs == math.inf

    @given(x=st.floats(-50, 50), coeffs=st.lists(st.floats(-3, 3), min_size=1, max_size=4))
    def test_clipped_polynomial(self, x, coeffs):
        f = ClippedPolynomial(tuple(coeffs), bound=2.0)
        want = np.clip(np.polyval(coeffs[::-1], x), -2.0, 2.0)
        assert f(np.array([x])) == pytest.approx(want, rel=1e-12, abs=1e-12)

    @given(y=st.lists(st.floats(-1e6, 1e6), min_size=2, max_size=2))
    def test_bounded(self, y):
        y = np.array(y)
        for f in (TanhLinear((0.3, -1.0), bias=0.2), SmoothBand(-1.0, 1.0), ClippedPolynomial((1.0, 0.0, 1.0))):
            assert abs(f(y)) <= f.sup_abs

    def test_smooth_band_shape(self):
        f = SmoothBand(-4.0, 4.0, width=0.25)
        assert f(np.array([0.0])) == pytest.approx(1.0, abs=1e-12)
        assert f(np.array([10.0])) == pytest.approx(0.0, abs=1e-12)
        assert f(np.array([4.0])) == pytest.approx(0.5, abs=1e-12)


class TestObservable:
    def test_coordinate_example(self, grid32):
        phi = Observable("id", (sin1(grid32),), Coordinate())
        assert observable_eval(phi, sin1(grid32)) == pytest.approx(2 * math.pi**2, rel=1e-14)
        assert not phi.bounded

    def test_odd_outer_at_zero(self, grid32):
        phi = Observable("t", (sin1(grid32),), TanhLinear((1.0,)))
        assert observable_eval(phi, ScalarField.zeros(grid32)) == 0.0

    @given(seed=st.integers(0, 10_000), amp=st.floats(0.1, 1e4))
    def test_tanh_bounded(self, seed, amp):
        grid = make_grid(32)
        xi = random_field(grid, seed, kmax=6, linf=amp)
        for phi in default_catalog(grid):
            assert abs(observable_eval(phi, xi)) <= phi.sup_abs

    def test_needs_test_functions(self):
        with pytest.raises(ConfigError, match="at least one"):
            Observable("e", (), TanhLinear((1.0,)))

    def test_mixed_grids(self, grid16, grid32):
        with pytest.raises(ConfigError, match="different grids"):
            Observable("m", (sin1(grid16), sin1(grid32)), TanhLinear((1.0, 1.0)))

    def test_field_grid_mismatch(self, grid16, grid32):
        phi = default_catalog(grid32)[0]
        with pytest.raises(ConfigError):
            observable_eval(phi, sin1(grid16))
        with pytest.raises(ConfigError):
            phi.evaluate_hat(grid16, sin1(grid16).hat[None])

    def test_batch_pairings_match_pairing(self, grid32):
        fields = [random_field(grid32, s) for s in range(5)]
        hat = np.stack([f.hat for f in fields])
        for phi in default_catalog(grid32):
            got = phi.pairings_hat(grid32, hat)
            want = np.array([[pairing(f, g) for g in phi.test_functions] for f in fields])
            np.testing.assert_allclose(got, want, rtol=1e-12, atol=1e-12)

    def test_batch_invariant_bits(self, grid32):
        hat = np.stack([random_field(grid32, s).hat for s in range(7)])
        for phi in default_catalog(grid32):
            whole = phi.evaluate_hat(grid32, hat)
            for b in range(7):
                assert whole[b].tobytes() == phi.evaluate_hat(grid32, hat[b:b + 1])[0].tobytes()

    def test_weak_star_robustness(self, grid32):
        chi = random_field(grid32, 9, kmax=3)
        n = grid32.kmax_dealias
        chi_n = ScalarField(grid32, chi.hat + ScalarField.from_modes(grid32, [(n, 0, 0.0, 1.0)]).hat)
        for phi in default_catalog(grid32):
            base = observable_eval(phi, chi)
            assert abs(observable_eval(phi, chi_n) - base) <= 1e-3 * max(abs(base), 1e-12) + 1e-15

    def test_catalog(self, grid32):
        cat = default_catalog(grid32)
        assert len(cat) == 5 and len({o.name for o in cat}) == 5
        assert all(o.bounded for o in cat)


class TestCesaro:
    def test_constant(self):
        acc = CesaroAccumulator()
        for t in np.linspace(0, 3, 31):
            acc.update(2.5, t)
        assert cesaro_estimate(acc) == pytest.approx(2.5, rel=1e-15)

    def test_linear(self):
        acc = CesaroAccumulator()
        for t in np.arange(1001) * 1e-3:
            acc.update(t, t)
        assert abs(acc.estimate() - 0.5) <= 1e-6

    def test_merge(self):
        ts = np.linspace(0.0, 2.0, 401)
        vals = np.sin(3 * ts) + ts**2
        whole, first, second = CesaroAccumulator(), CesaroAccumulator(), CesaroAccumulator()
        for t, v in zip(ts, vals):
            whole.update(v, t)
        for t, v in zip(ts[:201], vals[:201]):
            first.update(v, t)
        for t, v in zip(ts[200:], vals[200:]):
            second.update(v, t)
        merged = first.merge(second)
        assert merged.estimate() == pytest.approx(whole.estimate(), rel=1e-12)
        assert merged.count == whole.count
        assert CesaroAccumulator().merge(second).estimate() == second.estimate()

    def test_merge_gap(self):
        a, b = CesaroAccumulator(), CesaroAccumulator()
        a.update(1, 0).update(1, 1)
        b.update(1, 2).update(1, 3)
        with pytest.raises(OrderingError):
            a.merge(b)

    def test_ordering(self):
        acc = CesaroAccumulator().update(0.0, 1.0)
        with pytest.raises(OrderingError):
            acc.update(0.0, 1.0)

    def test_undefined(self):
        with pytest.raises(UndefinedError):
            CesaroAccumulator().update(1.0, 0.0).estimate()

    def test_functional_update(self):
        acc = CesaroAccumulator().update(1.0, 0.0)
        new = cesaro_update(acc, 3.0, 1.0)
        assert acc.count == 1 and new.count == 2
        assert cesaro_estimate(new) == 2.0

    def test_vector_values(self):
        acc = CesaroAccumulator()
        for t in (0.0, 1.0, 2.0):
            acc.update([1.0, t], t)
        np.testing.assert_allclose(acc.estimate(), [1.0, 1.0])


class TestBatchMeans:
    def test_block_constant_oracle(self):
        v = np.arange(10.0) ** 1.5
        series = np.repeat(v, 7)
        assert batch_means_se(series) == pytest.approx(np.std(v, ddof=1) / math.sqrt(10), rel=1e-14)

    def test_truncates_remainder(self):
        series = np.concatenate([np.repeat(np.arange(10.0), 3), [1e9]])
        assert batch_means_se(series) == pytest.approx(np.std(np.arange(10.0), ddof=1) / math.sqrt(10))

    def test_too_short(self):
        with pytest.raises(UndefinedError):
            batch_means_se(np.ones(5))

    def test_seed_agreement(self):
        a = np.repeat(np.arange(10.0), 3)[:, None]
        rep = seed_agreement(a, a + 1.0, ["x"])
        se = np.std(np.arange(10.0), ddof=1) / math.sqrt(10)
        assert rep.z[0] == pytest.approx(1.0 / (math.sqrt(2) * se))
        assert seed_agreement(a, a, ["x"]).z[0] == 0.0


class TestMarkov:
    def test_deterministic_dynamics(self, grid32):
        cfg = small_cfg(spectrum=QUIET)
        rep = markov_semigroup_test(cfg, 0.5, 0.5, default_catalog(grid32)[0], 10, 10,
                                    chi=random_field(grid32, 1, kmax=6))
        assert rep.lhs == rep.rhs and rep.z_score == 0.0

    def test_zero_continuation(self, grid32):
        rep = markov_semigroup_test(small_cfg(), 0.5, 0.0, default_catalog(grid32)[0], 4, 3)
        np.testing.assert_allclose(rep.rhs_samples, rep.lhs_samples, rtol=1e-14)

    @pytest.mark.parametrize("kw", [dict(t=-1.0), dict(s=-0.1), dict(M_outer=1), dict(M_inner=1)])
    def test_domain(self, grid32, kw):
        args = dict(t=1.0, s=1.0, M_outer=4, M_inner=4) | kw
        with pytest.raises(DomainError):
            markov_semigroup_test(small_cfg(), phi=default_catalog(grid32)[0], **args)

    def test_unbounded(self, grid32):
        phi = Observable("id", (sin1(grid32),), Coordinate())
        with pytest.raises(ConfigError, match="unbounded"):
            markov_semigroup_test(small_cfg(), 1.0, 1.0, phi, 4, 4)

    def test_small_identity(self, grid32):
        # statistical smoke test; the full-size run lives in the acceptance suite
        rep = markov_semigroup_test(small_cfg(), 0.5, 0.5, default_catalog(grid32)[0], 24, 8, chunk=8)
        assert rep.z_score <= 5
        assert rep.lhs_samples.shape == rep.rhs_samples.shape == (24,)

    def test_chunking_and_workers_irrelevant(self, grid32):
        phi = default_catalog(grid32)[1]
        a = markov_semigroup_test(small_cfg(), 0.2, 0.2, phi, 6, 3, chunk=6)
        b = markov_semigroup_test(small_cfg(), 0.2, 0.2, phi, 6, 3, chunk=2, workers=2)
        assert a.lhs_samples.tobytes() == b.lhs_samples.tobytes()
        assert a.rhs_samples.tobytes() == b.rhs_samples.tobytes()


class TestTail:
    def test_no_noise(self):
        rep = tail_bound_report(small_cfg(spectrum=QUIET), [0.0, 0.5, 1.0], 5)
        assert np.all(rep.quantiles == 0)

    def test_starts_at_zero(self):
        rep = tail_bound_report(small_cfg(), [1.0, 0.0], 6)
        assert list(rep.times) == [0.0, 1.0]
        assert np.all(rep.quantiles[0] == 0) and np.all(rep.quantiles[1] > 0)
        assert rep.quantile(1.0, 0.1) == rep.quantiles[1, 0]
        assert set(rep.r_eps) == {0.1, 0.05, 0.01}

    def test_quantile_oracle(self):
        rep = tail_bound_report(small_cfg(), [0.5], 20)
        assert rep.quantiles[0, 0] == np.quantile(rep.samples[0], 0.9)

    def test_off_grid_time(self):
        with pytest.raises(ConfigError, match="step grid"):
            tail_bound_report(small_cfg(), [0.52], 3)

    def test_gamma_zero_warns(self):
        with pytest.warns(HypothesisWarning):
            rep = tail_bound_report(small_cfg(gamma=0.0), [0.5], 3)
        assert rep.notes

    def test_chunking_irrelevant(self):
        a = tail_bound_report(small_cfg(), [0.5, 1.0], 7, chunk=7)
        b = tail_bound_report(small_cfg(), [0.5, 1.0], 7, chunk=3, workers=2)
        assert a.samples.tobytes() == b.samples.tobytes()


@pytest.fixture(scope="module")
def report():
    grid = make_grid(32)
    return cesaro_convergence(small_cfg(), default_catalog(grid), burn_in=0.5, horizons=(1, 2),
                              trajectories=3, chunk=2)


class TestCesaroConvergence:

    def test_shapes(self, report):
        assert report.checkpoints == (1, 2, 4)
        assert report.estimates.shape == (3, 3, 5)
        assert report.differences.shape == (2, 5)
        # trajectory 0 recorded every step from burn-in to the last checkpoint
        assert report.series.shape == (int(round(4 / 0.05)) + 1, 5)

    def test_difference_oracle(self, report):
        est = report.estimates
        want = np.sqrt(np.mean((est[0] - est[1]) ** 2, axis=0))
        np.testing.assert_allclose(report.differences[0], want, rtol=1e-15)

    def test_series_average_matches_estimate(self, report):
        # trapezoid over the recorded series reproduces the final estimate of trajectory 0
        s = report.series
        trap = (s[1:] + s[:-1]).sum(axis=0) * 0.5 * 0.05 / 4.0
        np.testing.assert_allclose(report.estimates[-1, 0], trap, rtol=1e-10)

    def test_histogram_counts(self, report):
        n = 3 * report.series.shape[0]
        for key, counts in report.histograms.items():
            if key != "edges":
                assert counts.sum() == n

    def test_chunking_irrelevant(self, report):
        grid = make_grid(32)
        again = cesaro_convergence(small_cfg(), default_catalog(grid), burn_in=0.5, horizons=(1, 2),
                                   trajectories=3, chunk=3)
        assert again.estimates.tobytes() == report.estimates.tobytes()

    def test_gamma_zero_warns(self):
        grid = make_grid(32)
        with pytest.warns(HypothesisWarning):
            cesaro_convergence(small_cfg(gamma=0.0), default_catalog(grid)[:1], burn_in=0.0, horizons=(0.5,),
                               trajectories=1)
