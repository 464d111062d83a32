import math

import numpy as np
import pytest
from scipy import special

from matgmc import angular, chaos
from matgmc.kernel import KernelSpec, make_kernel
from matgmc.rmt import IsotropyParams

PC_R01_N3 = 3.871666596709717  # mpmath: gamma2=0.25, L=1, r=0.1, N=3, c=0.5


def test_hciz_two_by_two_bessel():
    # O(2): O_11^2 = cos^2(phi), phi uniform, so E exp(t cos^2) = e^{t/2} I0(t/2)
    t = 1.7
    est = angular.hciz_mc([1.0, 0.0], [1.0, 0.0], t, 100_000, np.random.default_rng(0))
    assert abs(est.value - math.exp(t / 2) * special.i0(t / 2)) < 4 * est.std_error


def test_hciz_zero_theta_and_validation():
    est = angular.hciz_mc([1.0, 2.0, 3.0], [0.5, 0.1, 0.0], 0.0, 100, np.random.default_rng(1))
    assert est.value == 1.0 and est.std_error == 0.0
    with pytest.raises(ValueError):
        angular.hciz_mc([1.0, 2.0], [1.0], 1.0, 10, np.random.default_rng(1))
    with pytest.raises(ValueError):
        angular.hciz_mc([1.0], [1.0], math.inf, 10, np.random.default_rng(1))


def test_hciz_trace_shift():
    # adding a multiple of the identity to D multiplies by exp(theta a sum Dp)
    rng_a, rng_b = np.random.default_rng(2), np.random.default_rng(2)
    D, Dp, th = np.array([0.3, -0.2, 0.5]), np.array([1.0, 0.4, -0.1]), 0.8
    a = angular.hciz_mc(D, Dp, th, 5000, rng_a)
    b = angular.hciz_mc(D + 1.0, Dp, th, 5000, rng_b)
    assert b.value == pytest.approx(a.value * math.exp(th * Dp.sum()), rel=1e-12)


@pytest.mark.parametrize("N", [2, 3, 5])
def test_morozov_without_weight_is_uniform_mass(N):
    est = angular.morozov_moment_mc(N - 1, 0, np.ones(N), np.ones(N), 0.0, 50_000, np.random.default_rng(N))
    assert abs(est.value - 1 / N) < 4 * est.std_error


def test_morozov_index_bounds():
    with pytest.raises(IndexError):
        angular.morozov_moment_mc(2, 0, [1.0, 2.0], [1.0, 2.0], 0.1, 10, np.random.default_rng(0))


def test_kpoint_variances_symmetric_and_distinct():
    k = make_kernel(KernelSpec(1, 0.25, 1.0, 1 / 64))
    s = angular.kpoint_variances([0.0, 0.1, 0.5], k)
    np.testing.assert_allclose(s, s.T)
    assert s[0, 1] == pytest.approx(0.25 * math.log(10))
    with pytest.raises(ValueError):
        angular.kpoint_variances([0.0, 0.0], k)


@pytest.mark.parametrize("importance", [False, True])
def test_two_point_sum_matches_pair_correlation(importance):
    k = make_kernel(KernelSpec(1, 0.25, 1.0, 1 / 64))
    p = IsotropyParams(3, 0.5)
    est = angular.kpoint_trace_sum([0.0, 0.1], k, p, 200_000, np.random.default_rng(5), importance)
    tilt = math.exp(-p.c * 0.25 * math.log(10))
    assert abs(est.value * tilt - PC_R01_N3) < 4 * est.std_error * tilt


def test_importance_and_plain_agree_three_points():
    k = make_kernel(KernelSpec(1, 1.0, 1.0, 1 / 64))
    p = IsotropyParams(2, 0.2)
    pts = [0.0, 0.05, 0.13]
    a = angular.kpoint_trace_mc(pts, k, p, (0, 1, 1), 400_000, np.random.default_rng(6), importance=False)
    b = angular.kpoint_trace_mc(pts, k, p, (0, 1, 1), 400_000, np.random.default_rng(7), importance=True)
    assert abs(a.value - b.value) < 4 * math.hypot(a.std_error, b.std_error)
    assert b.ess > 100 and not b.flagged


def test_low_ess_is_flagged():
    s = np.array([[0.0, 3.0], [3.0, 0.0]])
    with pytest.warns(RuntimeWarning, match="ESS"):
        est = angular.kpoint_integrand_mc(s, IsotropyParams(3, 0.0), (0, 0), 200, np.random.default_rng(8), True, spread=1e8)
    assert est.flagged


def test_kpoint_argument_checks():
    s = np.array([[0.0, 1.0], [1.0, 0.0]])
    with pytest.raises(ValueError):
        angular.kpoint_integrand_mc(s, IsotropyParams(2, 0.0), (0,), 10, np.random.default_rng(0))
    with pytest.raises(IndexError):
        angular.kpoint_integrand_mc(s, IsotropyParams(2, 0.0), (0, 2), 10, np.random.default_rng(0))
    k = make_kernel(KernelSpec(1, 0.25, 1.0, 1 / 64))
    with pytest.raises(ValueError):
        angular.kpoint_trace_sum(np.linspace(0.1, 0.9, 5), k, IsotropyParams(6, 0.0), 10, np.random.default_rng(0))


def test_scalar_case_is_deterministic():
    k = make_kernel(KernelSpec(1, 0.25, 1.0, 1 / 64))
    est = angular.kpoint_trace_sum([0.0, 0.2], k, IsotropyParams(1, 0.0), 100, np.random.default_rng(0))
    assert est.value == pytest.approx(chaos.pair_correlation(0.2, k, IsotropyParams(1, 0.0)), rel=1e-12)
    assert est.std_error == pytest.approx(0.0, abs=1e-12)
