import math

import mpmath
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.special import zeta as scipy_zeta
from scipy.stats import ortho_group

from localerr.exceptions import DegenerateError, DomainError, InsufficientSamplesError, ShapeError
from localerr.manifold import (
    SpectrumReport,
    best_fit_width,
    eigen_spectrum,
    explained_variance_fraction,
    fit_power_law,
    participation_dimensionality,
    read_activation_dump,
    spectrum_report,
    theoretical_dimensionality,
    write_activation_dump,
    zeta,
    zeta_dimensionality,
)
from localerr.numerics import covariance, make_rng, sym_eigvals

seeds = st.integers(0, 2**31)


def cloud(seed, k=60, n=12):
    r = make_rng(seed)
    return r.standard_normal((k, n)) * np.geomspace(3.0, 0.1, n)


class TestEigenSpectrum:
    def test_rank_one(self):
        t = np.linspace(-1, 1, 9)[:, None]
        lam = eigen_spectrum(t * np.array([[1.0, 2.0, -1.0]]))
        assert lam[0] > 0 and np.all(lam[1:] <= 1e-12 * lam[0])

    def test_isotropic(self):
        lam = eigen_spectrum([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]])
        assert lam[0] == pytest.approx(lam[1], abs=1e-15)

    def test_composition(self):
        x = cloud(1)
        assert np.abs(eigen_spectrum(x) - np.maximum(sym_eigvals(covariance(x)), 0)).max() < 1e-10

    def test_jacobi_path(self):
        x = cloud(2)
        assert np.allclose(eigen_spectrum(x, method="jacobi"), eigen_spectrum(x), atol=1e-10)

    def test_too_few(self):
        with pytest.raises(InsufficientSamplesError):
            eigen_spectrum(np.ones((1, 4)))

    @given(seeds)
    def test_rotation_invariant(self, seed):
        x = cloud(seed, n=8)
        q = ortho_group.rvs(8, random_state=seed % 2**32)
        assert np.abs(eigen_spectrum(x @ q) - eigen_spectrum(x)).max() < 1e-9

    @given(seeds)
    def test_descending_nonnegative(self, seed):
        lam = eigen_spectrum(cloud(seed, k=5, n=10))
        assert np.all(lam >= 0) and np.all(np.diff(lam) <= 0)


class TestPowerLaw:
    @pytest.mark.parametrize("alpha0", [0.5, 1.0, 1.5, 2.0, 3.0])
    def test_planted(self, alpha0):
        lam = np.arange(1, 201, dtype=float) ** -alpha0
        alpha, r2 = fit_power_law(lam)
        assert abs(alpha - alpha0) < 1e-10 and abs(r2 - 1) < 1e-10

    @given(st.floats(0.1, 4.0), st.floats(1e-6, 1e6))
    def test_scale_free(self, alpha0, c):
        lam = c * np.arange(1, 30, dtype=float) ** -alpha0
        assert fit_power_law(lam)[0] == pytest.approx(alpha0, abs=1e-9)

    def test_window_only(self):
        lam = np.concatenate([np.arange(1, 11, dtype=float) ** -1.0, [5.0, 0.0]])
        assert fit_power_law(lam)[0] == pytest.approx(1.0, abs=1e-12)

    def test_zero_in_window(self):
        with pytest.raises(DegenerateError):
            fit_power_law(np.r_[np.ones(9), 0.0])

    def test_short_spectrum(self):
        with pytest.raises(DegenerateError):
            fit_power_law(np.ones(5))

    def test_bad_window(self):
        with pytest.raises(DomainError):
            fit_power_law(np.ones(5), n_fit=1)


class TestDimensionality:
    def test_uniform(self):
        assert participation_dimensionality(np.full(17, 3.0)) == pytest.approx(17, abs=1e-12)

    def test_single(self):
        assert participation_dimensionality([2.0, 0.0, 0.0]) == 1.0

    def test_hand(self):
        assert participation_dimensionality([4.0, 1.0]) == pytest.approx(25 / 17, abs=1e-12)

    def test_zero(self):
        with pytest.raises(DegenerateError):
            participation_dimensionality(np.zeros(3))

    def test_tiny_values_do_not_underflow(self):
        assert participation_dimensionality([1e-200, 1e-200]) == pytest.approx(2.0)

    @given(st.lists(st.floats(0, 1e3), min_size=1, max_size=50).filter(lambda v: max(v) > 1e-3))
    def test_bounds(self, values):
        d = participation_dimensionality(values)
        assert 1 - 1e-12 <= d <= len(values) + 1e-9

    @given(seeds, st.floats(1e-3, 1e3))
    def test_scale_invariance(self, seed, c):
        x = cloud(seed)
        a, b = spectrum_report(x), spectrum_report(c * x)
        assert b.alpha == pytest.approx(a.alpha, abs=1e-9)
        assert b.r_squared == pytest.approx(a.r_squared, abs=1e-9)
        assert b.top10_fraction == pytest.approx(a.top10_fraction, abs=1e-9)
        assert b.dimensionality == pytest.approx(a.dimensionality, abs=1e-9)

    @given(st.floats(0.0, 5.0), st.integers(2, 300))
    def test_exact_sum_matches_planted_spectrum(self, alpha, n):
        lam = np.arange(1, n + 1, dtype=float) ** -alpha
        assert participation_dimensionality(lam) == pytest.approx(theoretical_dimensionality(alpha, n), rel=1e-9)


class TestExplainedVariance:
    def test_all(self):
        assert explained_variance_fraction([3.0, 2.0, 1.0], 3) == pytest.approx(1.0)

    def test_single(self):
        assert explained_variance_fraction([5.0, 0.0], 1) == 1.0

    def test_partial(self):
        assert explained_variance_fraction([3.0, 1.0], 1) == 0.75

    def test_errors(self):
        with pytest.raises(DegenerateError):
            explained_variance_fraction([0.0, 0.0], 1)
        with pytest.raises(DomainError):
            explained_variance_fraction([1.0], 2)


def d_integral_direct(alpha, n):
    return ((n ** (1 - alpha) - 1) ** 2 * (1 - 2 * alpha)) / ((n ** (1 - 2 * alpha) - 1) * (1 - alpha) ** 2)


class TestTheory:
    def test_alpha_zero(self):
        assert theoretical_dimensionality(0.0, 200) == pytest.approx(200, abs=1e-9)

    def test_alpha_large(self):
        assert theoretical_dimensionality(50.0, 200) == pytest.approx(1.0, abs=1e-12)

    @pytest.mark.parametrize("alpha", [0.3, 0.7, 1.3, 2.5])
    def test_integral_closed_form(self, alpha):
        assert theoretical_dimensionality(alpha, 200, "integral") == pytest.approx(d_integral_direct(alpha, 200), rel=1e-12)

    def test_integral_limits(self):
        n = 200
        assert theoretical_dimensionality(1.0, n, "integral") == pytest.approx(
            math.log(n) ** 2 * 1 / (1 - 1 / n), rel=1e-12)
        assert theoretical_dimensionality(0.5, n, "integral") == pytest.approx(
            (2 * (math.sqrt(n) - 1)) ** 2 / math.log(n), rel=1e-12)

    @pytest.mark.parametrize("mode", ["exact_sum", "integral"])
    @pytest.mark.parametrize("s", [0.5, 1.0])
    def test_continuity(self, mode, s):
        lo = theoretical_dimensionality(s - 1e-7, 200, mode)
        hi = theoretical_dimensionality(s + 1e-7, 200, mode)
        mid = theoretical_dimensionality(s, 200, mode)
        assert abs(lo - hi) / mid < 1e-5 and abs(lo - mid) / mid < 1e-5

    def test_series_branch_matches_closed_form_nearby(self):
        for s in (0.5, 1.0):
            inside = theoretical_dimensionality(s + 9e-7, 200, "integral")
            outside = theoretical_dimensionality(s + 1.1e-6, 200, "integral")
            assert inside == pytest.approx(outside, rel=1e-6)

    def test_errors(self):
        with pytest.raises(DomainError):
            theoretical_dimensionality(-0.1, 10)
        with pytest.raises(DomainError):
            theoretical_dimensionality(1.0, 1)
        with pytest.raises(DomainError):
            theoretical_dimensionality(1.0, 10, "riemann")

    @given(st.floats(0.0, 4.0), st.integers(2, 500))
    def test_bounds(self, alpha, n):
        d = theoretical_dimensionality(alpha, n)
        assert 1 - 1e-12 <= d <= n + 1e-9

    def test_monotone_decreasing_in_alpha(self):
        d = [theoretical_dimensionality(a, 100) for a in np.linspace(0, 3, 61)]
        assert np.all(np.diff(d) < 0)


class TestZeta:
    @pytest.mark.parametrize("s", [1.01, 1.1, 1.5, 2.0, 3.0, 4.0, 7.5, 20.0, 60.0])
    def test_vs_scipy(self, s):
        assert zeta(s) == pytest.approx(scipy_zeta(s), rel=1e-12)

    @pytest.mark.parametrize("s", [1.05, 2.0, 3.3])
    def test_vs_mpmath(self, s):
        assert zeta(s) == pytest.approx(float(mpmath.zeta(s)), rel=1e-12)

    def test_closed_form(self):
        assert zeta(2.0) == pytest.approx(math.pi ** 2 / 6, abs=1e-14)
        assert zeta(4.0) == pytest.approx(math.pi ** 4 / 90, abs=1e-14)

    def test_dimensionality_at_two(self):
        assert abs(zeta_dimensionality(2.0) - 2.5) < 1e-9

    def test_large_alpha(self):
        assert zeta_dimensionality(80.0) == pytest.approx(1.0, abs=1e-12)

    def test_vs_large_sum(self):
        # the truncated sums miss a tail of order 2/sqrt(N) at alpha = 1.5
        assert zeta_dimensionality(1.5) == pytest.approx(theoretical_dimensionality(1.5, 10 ** 6), rel=1e-3)

    def test_vs_tail_corrected_sum(self):
        n = 10 ** 6
        ns = np.arange(1, n + 1, dtype=float)
        # Euler-Maclaurin tail of sum_{k>N} k^-s to O(N^-s-1)
        tail = lambda s: n ** (1 - s) / (s - 1) - 0.5 * n ** -s
        num = (ns ** -1.5).sum() + tail(1.5)
        den = (ns ** -3.0).sum() + tail(3.0)
        assert zeta_dimensionality(1.5) == pytest.approx(num ** 2 / den, rel=1e-9)

    @pytest.mark.parametrize("s", [1.0, 0.5, -2.0])
    def test_domain(self, s):
        with pytest.raises(DomainError):
            zeta(s)
        with pytest.raises(DomainError):
            zeta_dimensionality(s)


class TestBestFitWidth:
    def test_recovers_planted_width(self):
        alphas = np.linspace(0.8, 2.0, 8)
        dims = [theoretical_dimensionality(a, 35) for a in alphas]
        assert best_fit_width(alphas, dims) == 35

    def test_shape_error(self):
        with pytest.raises(ShapeError):
            best_fit_width([1.0], [1.0, 2.0])


class TestReportAndDump:
    def test_report_fields(self):
        rep = spectrum_report(cloud(3, k=100, n=20), layer=2, epsilon=0.5)
        assert rep.layer == 2 and rep.epsilon == 0.5
        assert len(rep.eigenvalues) == 20
        assert 0 <= rep.top10_fraction <= 1 and 1 <= rep.dimensionality <= 20

    def test_json_roundtrip(self):
        rep = spectrum_report(cloud(4, k=40, n=15))
        back = SpectrumReport.from_json(rep.to_json())
        assert back == rep

    def test_dump_roundtrip(self, tmp_path):
        x = cloud(5, k=7, n=11)
        write_activation_dump(tmp_path / "a.bin", x, layer=3, epsilon=1.5, seed=42)
        back, meta = read_activation_dump(tmp_path / "a.bin")
        assert back.tobytes() == x.tobytes()
        assert meta == {"k": 7, "n": 11, "layer": 3, "epsilon": 1.5, "seed": 42}

    def test_dump_truncated(self, tmp_path):
        write_activation_dump(tmp_path / "a.bin", np.ones((3, 3)))
        data = (tmp_path / "a.bin").read_bytes()
        (tmp_path / "a.bin").write_bytes(data[:-4])
        with pytest.raises(OSError):
            read_activation_dump(tmp_path / "a.bin")
        (tmp_path / "a.bin").write_bytes(b"XXXXXXXX" + data[8:])
        with pytest.raises(ValueError):
            read_activation_dump(tmp_path / "a.bin")
