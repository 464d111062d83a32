import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from matgmc import oracles
from matgmc.kernel import (
    DIVERGENT,
    DimensionError,
    KernelSpec,
    check_positive_definite,
    cutoff_kernel_1d,
    cutoff_kernel_2d,
    ln_plus_kernel,
    make_kernel,
    nu_cutoff,
    sphere_constant,
    sphere_kernel,
)

# mpmath quadrature at 30 digits over t = |<e, s>|
SPHERE_D3_R03 = 0.53015986774815066  # d=3, gamma2=0.25, L=1, eps=0.05, r=0.3
SPHERE_D4_R002 = 4.5191141814825813  # d=4, gamma2=1, L=2, eps=0.05, r=0.02


def test_ln_plus_divergent_at_origin():
    spec = KernelSpec(2, 0.5, 1.0, 0.1)
    assert ln_plus_kernel([0.0, 0.0], spec) is DIVERGENT
    assert ln_plus_kernel([2.0, 0.0], spec) == 0.0
    assert ln_plus_kernel([0.5, 0.0], spec) == pytest.approx(0.5 * math.log(2))


def test_spec_validation():
    with pytest.raises(ValueError):
        KernelSpec(1, 0.25, 1.0, 1.0)
    with pytest.raises(ValueError):
        KernelSpec(0, 0.25, 1.0, 0.1)
    with pytest.raises(ValueError):
        KernelSpec(1, -0.1, 1.0, 0.1)


def test_1d_cutoff_values():
    spec = KernelSpec(1, 0.25, 1.0, 1 / 64)
    assert cutoff_kernel_1d(0.0, spec) == pytest.approx(0.25 * (math.log(64) + 1))
    assert cutoff_kernel_1d(0.3, spec) == pytest.approx(0.25 * math.log(1 / 0.3))
    assert cutoff_kernel_1d(1.0, spec) == 0.0
    assert cutoff_kernel_1d(1.7, spec) == 0.0
    with pytest.raises(DimensionError):
        cutoff_kernel_1d([0.1, 0.2], spec)


def test_1d_cutoff_matches_mixture_quadrature():
    for r in (0.0, 0.003, 0.01, 0.2, 0.99):
        assert nu_cutoff(r, 1.0, 0.01) == pytest.approx(oracles.nu_representation_integral(r, 1.0, 0.01), rel=1e-12, abs=1e-13)


def test_2d_cutoff_origin_and_far_field():
    spec = KernelSpec(2, 0.5, 1.0, 0.01)
    assert cutoff_kernel_2d([0.0, 0.0], spec) == pytest.approx(0.5 * (math.log(100) + 2))
    r = 0.3
    assert cutoff_kernel_2d([r, 0.0], spec) == pytest.approx(0.5 * math.log(1 / r))
    assert cutoff_kernel_2d([0.0, 1.2], spec) == 0.0


def test_sphere_constant_d3_is_one():
    assert sphere_constant(3) == pytest.approx(1.0, abs=1e-14)


def test_sphere_radial_against_frozen_quadrature():
    k = make_kernel(KernelSpec(3, 0.25, 1.0, 0.05))
    assert float(k(0.3)) == pytest.approx(SPHERE_D3_R03, rel=1e-10)
    k4 = make_kernel(KernelSpec(4, 1.0, 2.0, 0.05))
    assert float(k4(0.02)) == pytest.approx(SPHERE_D4_R002, rel=1e-10)
    # beyond L only ridge directions with |<e,s>| r < L contribute: exact 0.4 - 0.01
    k1 = make_kernel(KernelSpec(3, 1.0, 1.0, 0.05))
    assert float(k1(2.5)) == pytest.approx(0.39, rel=1e-10)


def test_sphere_qmc_and_mc_agree_with_radial():
    spec = KernelSpec(3, 0.25, 1.0, 0.05)
    x = np.array([0.1, -0.2, 0.2])
    val, se = sphere_kernel(x, spec, n_nodes=8192)
    assert se == 0.0
    assert val == pytest.approx(SPHERE_D3_R03, rel=2e-3)
    val, se = sphere_kernel(x, spec, n_nodes=20000, rng=np.random.default_rng(5))
    assert se > 0 and abs(val - SPHERE_D3_R03) < 4 * se


def test_sphere_origin_variance():
    spec = KernelSpec(3, 0.25, 1.0, 0.05)
    assert make_kernel(spec).sigma2 == pytest.approx(0.25 * (math.log(20) + 1))


def test_sphere_asymptotic_log_equivalence():
    # d=3: |<e,s>| is uniform on [0,1], so for eps < r <= L the gap to
    # ln(L/r) + C0 is the cutoff defect -eps/(2r), vanishing as eps/r -> 0
    spec = KernelSpec(3, 1.0, 1.0, 1e-7)
    k = make_kernel(spec)
    for r in (1e-4, 1e-3, 1e-2, 0.5):
        gap = float(k(r)) - (math.log(1 / r) + k.remainder_at_zero)
        assert gap == pytest.approx(-spec.epsilon / (2 * r), rel=1e-8)


def test_cutoff_equals_kernel_between_eps_and_L():
    for spec in (KernelSpec(1, 0.3, 1.0, 0.01), KernelSpec(2, 0.3, 2.0, 0.01)):
        k = make_kernel(spec)
        r = np.array([0.02, 0.1, 0.5, 0.9])
        np.testing.assert_allclose(k(r), k.limit(r), rtol=1e-13)


def test_unsafe_requires_opt_in():
    spec = KernelSpec(2, 0.5, 1.0, 0.01)
    with pytest.raises(ValueError):
        make_kernel(spec, "unsafe")
    k = make_kernel(spec, "unsafe", allow_unsafe=True)
    assert k.sigma2 == pytest.approx(0.5 * math.log(100))


def test_wrong_construction_dimension():
    with pytest.raises(DimensionError):
        make_kernel(KernelSpec(2, 0.5, 1.0, 0.01), "nu")


def test_pd_check_rejects_duplicates():
    with pytest.raises(ValueError):
        check_positive_definite(KernelSpec(1, 0.25, 1.0, 0.1), np.array([0.1, 0.1, 0.3]))


def test_pd_report_json():
    chk = check_positive_definite(KernelSpec(1, 0.25, 1.0, 0.1), np.linspace(0, 1, 50))
    assert chk.passed
    assert set(chk.to_json()) == {"min_eigenvalue", "n_points", "passed"}


@settings(max_examples=25, deadline=None)
@given(
    st.integers(1, 3),
    st.floats(0.05, 1.5),
    st.floats(0.02, 0.3),
    st.integers(0, 2**31 - 1),
)
def test_gram_is_positive_definite(d, gamma2, eps, seed):
    rng = np.random.default_rng(seed)
    n = {1: 40, 2: 30, 3: 20}[d]
    pts = rng.uniform(-1, 1, size=(n, d))
    chk = check_positive_definite(make_kernel(KernelSpec(d, gamma2, 1.0, eps)), pts)
    assert chk.passed, chk


@settings(max_examples=30, deadline=None)
@given(st.floats(0.01, 3.0), st.floats(1e-4, 0.5), st.floats(0.0, 3.0))
def test_1d_cutoff_bounded_by_variance_and_monotone(gamma2, eps, rmax):
    k = make_kernel(KernelSpec(1, gamma2, 1.0, eps))
    r = np.linspace(0, rmax, 200)
    v = k(r)
    assert np.all(np.diff(v) <= 1e-15)
    assert np.all(v <= k.sigma2 + 1e-15) and np.all(v >= 0)
