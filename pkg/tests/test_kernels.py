import mpmath
import numpy as np
import pytest
from scipy.integrate import quad

from contactfatigue.kernels import (HsgpBasis, KernelSpec, basis_at,
                                    build_hsgp_1d, build_hsgp_2d,
                                    build_hsgp_2d_symmetric, gram_matrix,
                                    kernel_eval, realize, spectral_density,
                                    spectral_density_grad)

ALL_FAMILIES = ("se", "matern32", "matern52")


class TestKernelEval:
    def test_magnitude_at_zero_distance(self):
        spec = KernelSpec("matern32", magnitude=2.0, lengthscale=1.0)
        assert kernel_eval(spec, 0.0, 0.0) == pytest.approx(2.0)

    def test_se_plugin(self):
        spec = KernelSpec("se", 1.0, 1.0)
        assert kernel_eval(spec, 0.0, np.sqrt(2.0)) == pytest.approx(
            np.exp(-1.0), rel=1e-12)

    def test_matern52_high_precision_oracle(self):
        # (1 + sqrt(5) + 5/3) e^{-sqrt(5)} at 50 digits via mpmath
        mpmath.mp.dps = 50
        s5 = mpmath.sqrt(5)
        expected = float((1 + s5 + mpmath.mpf(5) / 3) * mpmath.exp(-s5))
        spec = KernelSpec("matern52", 1.0, 1.0)
        assert kernel_eval(spec, 0.0, 1.0) == pytest.approx(expected,
                                                            rel=1e-14)
        assert expected == pytest.approx(0.52399, abs=5e-6)

    @pytest.mark.parametrize("family", ALL_FAMILIES)
    def test_symmetry(self, family):
        spec = KernelSpec(family, 1.3, 2.1)
        x = np.linspace(-3, 7, 11)
        k = gram_matrix(spec, x)
        np.testing.assert_allclose(k, k.T, rtol=1e-14)

    @pytest.mark.parametrize("family", ALL_FAMILIES)
    def test_gram_is_psd_with_jitter(self, family):
        rng = np.random.default_rng(11)
        for trial in range(3):
            x = rng.uniform(0, 40, size=50)
            spec = KernelSpec(family, 1.0 + trial, 3.0)
            k = gram_matrix(spec, x) + 1e-10 * np.eye(50)
            np.linalg.cholesky(k)  # raises if not PSD


class TestSpectralDensity:
    def test_se_at_zero(self):
        spec = KernelSpec("se", 1.0, 1.0)
        assert spectral_density(spec, 0.0) == pytest.approx(
            np.sqrt(2 * np.pi), rel=1e-12)

    def test_matern32_at_zero(self):
        spec = KernelSpec("matern32", 1.0, 1.0)
        assert spectral_density(spec, 0.0) == pytest.approx(
            12 * np.sqrt(3) / 9, rel=1e-12)

    @pytest.mark.parametrize("family", ALL_FAMILIES)
    @pytest.mark.parametrize("ell", [0.7, 2.0])
    def test_matches_numerical_fourier_transform(self, family, ell):
        # S(w) = int k(r) cos(w r) dr, trapezoid on [-40, 40]
        spec = KernelSpec(family, 1.4, ell)
        r = np.linspace(-40, 40, 40001)
        k = kernel_eval(spec, r, 0.0)
        for omega in np.linspace(0.0, 10.0, 21):
            numeric = np.trapezoid(k * np.cos(omega * r), r)
            analytic = spectral_density(spec, omega)
            if analytic > 1e-12:
                assert analytic == pytest.approx(numeric, rel=1e-3,
                                                 abs=1e-9)

    @pytest.mark.parametrize("family", ALL_FAMILIES)
    def test_total_power_equals_magnitude_1d(self, family):
        spec = KernelSpec(family, 1.7, 1.3)
        total, _ = quad(lambda w: spectral_density(spec, w), -np.inf,
                        np.inf, limit=200)
        assert total / (2 * np.pi) == pytest.approx(1.7, abs=1e-4)

    @pytest.mark.parametrize("family", ALL_FAMILIES)
    def test_total_power_equals_magnitude_2d(self, family):
        # radial integral: (2 pi)^-2 * 2 pi * int_0^inf S(w) w dw = sigma
        spec = KernelSpec(family, 0.9, 1.1)

        def integrand(w):
            return spectral_density(spec, np.array([w, 0.0]), dim=2) * w

        total, _ = quad(integrand, 0, np.inf, limit=300)
        assert total / (2 * np.pi) == pytest.approx(0.9, abs=1e-4)

    @pytest.mark.parametrize("family", ALL_FAMILIES)
    def test_gradients_match_finite_differences(self, family):
        omega = np.linspace(0, 6, 13)
        spec = KernelSpec(family, 1.2, 0.8)
        s, d_sigma, d_ell = spectral_density_grad(spec, omega)
        h = 1e-6
        num_sigma = (spectral_density(KernelSpec(family, 1.2 + h, 0.8), omega)
                     - spectral_density(KernelSpec(family, 1.2 - h, 0.8),
                                        omega)) / (2 * h)
        num_ell = (spectral_density(KernelSpec(family, 1.2, 0.8 + h), omega)
                   - spectral_density(KernelSpec(family, 1.2, 0.8 - h),
                                      omega)) / (2 * h)
        np.testing.assert_allclose(d_sigma, num_sigma, rtol=1e-6)
        np.testing.assert_allclose(d_ell, num_ell, rtol=1e-5)


class TestHsgp1d:
    def test_first_eigenfrequency(self):
        # inputs chosen so the box half-width is exactly 1
        spec = KernelSpec("se", 1.0, 1.0)
        basis = build_hsgp_1d(spec, np.array([-1 / 1.5, 1 / 1.5]), m=4,
                              c=1.5)
        assert basis.half_width[0] == pytest.approx(1.0)
        assert basis.freqs[0, 0] == pytest.approx(np.pi / 2)

    def test_se_covariance_error(self):
        spec = KernelSpec("se", 1.0, 1.0)
        x = np.linspace(-5, 5, 41)
        basis = build_hsgp_1d(spec, x, m=64, c=1.5)
        exact = gram_matrix(spec, x)
        approx = basis.realized_covariance(spec)
        assert np.max(np.abs(approx - exact)) < 1e-3

    def test_matern32_covariance_error(self):
        spec = KernelSpec("matern32", 1.0, 1.0)
        x = np.linspace(-5, 5, 41)
        basis = build_hsgp_1d(spec, x, m=128, c=1.5)
        exact = gram_matrix(spec, x)
        assert np.max(np.abs(basis.realized_covariance(spec) - exact)) < 5e-3

    def test_error_monotone_in_basis_size(self):
        spec = KernelSpec("se", 1.0, 1.0)
        x = np.linspace(-5, 5, 41)
        exact = gram_matrix(spec, x)
        errors = []
        for m in (8, 16, 32, 64):
            basis = build_hsgp_1d(spec, x, m=m, c=1.5)
            errors.append(np.max(np.abs(basis.realized_covariance(spec)
                                        - exact)))
        assert all(a > b for a, b in zip(errors, errors[1:]))

    def test_columns_orthonormal_under_uniform_measure(self):
        spec = KernelSpec("se", 1.0, 1.0)
        basis = build_hsgp_1d(spec, np.linspace(-4, 4, 11), m=12, c=1.5)
        half = basis.half_width[0]
        grid = np.linspace(-half, half, 20001) + basis.center[0]
        phi = basis_at(basis, grid)
        gram = np.trapezoid(phi[:, :, None] * phi[:, None, :],
                        grid - basis.center[0], axis=0)
        np.testing.assert_allclose(gram, np.eye(12), atol=1e-6)

    def test_invalid_args(self):
        spec = KernelSpec("se", 1.0, 1.0)
        with pytest.raises(ValueError):
            build_hsgp_1d(spec, np.arange(5.0), m=0)
        with pytest.raises(ValueError):
            build_hsgp_1d(spec, np.arange(5.0), m=4, c=1.0)


class TestHsgp2dSymmetric:
    def _pair_grid(self, n=10):
        ages = np.linspace(0, 84, n)
        aa, bb = np.meshgrid(ages, ages)
        return aa.ravel(), bb.ravel()

    def test_symmetric_column_count(self):
        spec = KernelSpec("se", 1.0, 10.0)
        a, b = self._pair_grid(4)
        basis = build_hsgp_2d_symmetric(spec, spec, a, b, m=2)
        assert basis.n_basis == 3  # m(m+1)/2

    def test_realizations_symmetric_to_machine_precision(self):
        spec = KernelSpec("matern52", 1.0, 15.0)
        a, b = self._pair_grid(8)
        basis = build_hsgp_2d_symmetric(spec, spec, a, b, m=6)
        rng = np.random.default_rng(0)
        for _ in range(5):
            w = rng.standard_normal(basis.n_basis)
            f = realize(basis, (spec, spec), w).reshape(8, 8)
            np.testing.assert_array_equal(f, f.T)

    def test_covariance_matches_symmetrized_kernel(self):
        # oracle: dense product kernel, symmetrized over axis swap
        spec = KernelSpec("se", 1.0, 12.0)
        a, b = self._pair_grid(10)
        basis = build_hsgp_2d_symmetric(spec, spec, a, b, m=16)
        k_a = kernel_eval(spec, a[:, None], a[None, :])
        k_b = kernel_eval(spec, b[:, None], b[None, :])
        k = k_a * k_b / spec.magnitude      # product kernel, k(0) = sigma
        k_swap = (kernel_eval(spec, a[:, None], b[None, :])
                  * kernel_eval(spec, b[:, None], a[None, :])
                  / spec.magnitude)
        target = 0.5 * (k + k_swap)
        approx = basis.realized_covariance((spec, spec))
        assert np.max(np.abs(approx - target)) < 5e-2

    def test_full_2d_covariance(self):
        spec = KernelSpec("se", 1.0, 12.0)
        a, b = self._pair_grid(9)
        basis = build_hsgp_2d(a, b, m=14)
        k = (kernel_eval(spec, a[:, None], a[None, :])
             * kernel_eval(spec, b[:, None], b[None, :]) / spec.magnitude)
        approx = basis.realized_covariance((spec, spec))
        assert np.max(np.abs(approx - k)) < 5e-2

    def test_basis_at_matches_build_inputs(self):
        spec = KernelSpec("se", 1.0, 12.0)
        a, b = self._pair_grid(5)
        basis = build_hsgp_2d_symmetric(spec, spec, a, b, m=5)
        np.testing.assert_allclose(basis_at(basis, a, b), basis.phi,
                                   atol=1e-12)


class TestRealize:
    def test_zero_weights_zero_function(self):
        spec = KernelSpec("se", 1.0, 1.0)
        basis = build_hsgp_1d(spec, np.linspace(-3, 3, 15), m=8)
        assert np.all(realize(basis, spec, np.zeros(8)) == 0.0)

    def test_dimension_mismatch(self):
        spec = KernelSpec("se", 1.0, 1.0)
        basis = build_hsgp_1d(spec, np.linspace(-3, 3, 15), m=8)
        with pytest.raises(ValueError):
            realize(basis, spec, np.zeros(7))

    def test_monte_carlo_covariance(self):
        spec = KernelSpec("se", 1.0, 1.5)
        x = np.linspace(-3, 3, 9)
        basis = build_hsgp_1d(spec, x, m=16)
        rng = np.random.default_rng(42)
        n = 10_000
        draws = np.stack([realize(basis, spec, rng.standard_normal(16))
                          for _ in range(n)])
        sample_cov = np.cov(draws.T)
        target = basis.realized_covariance(spec)
        # MC error on covariance entries ~ sqrt(2/n)
        assert np.max(np.abs(sample_cov - target)) < 6 * np.sqrt(2.0 / n)

    def test_magnitude_scales_covariance_linearly(self):
        x = np.linspace(-3, 3, 9)
        s1 = KernelSpec("matern52", 1.0, 1.5)
        s4 = KernelSpec("matern52", 4.0, 1.5)
        basis = build_hsgp_1d(s1, x, m=16)
        np.testing.assert_allclose(basis.realized_covariance(s4),
                                   4.0 * basis.realized_covariance(s1),
                                   rtol=1e-12)


class TestKernelSpecValidation:
    def test_unknown_family(self):
        with pytest.raises(ValueError):
            KernelSpec("cubic", 1.0, 1.0)

    def test_positive_params(self):
        with pytest.raises(ValueError):
            KernelSpec("se", -1.0, 1.0)
        with pytest.raises(ValueError):
            KernelSpec("se", 1.0, 0.0)
