"""Matrix chaos measure, its renormalization and moment diagnostics."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import integrate, special

from . import rmt, streams
from .field import Ball, Box, FieldSampler, LatticeSpec, MatrixField, region_mask, replica_noise
from .kernel import CutoffKernel, KernelSpec, log_kernel, make_kernel
from .rmt import IsotropyParams

TILT_ABOVE = 4.0
MAX_SIGMA2 = 1400.0


class HypothesisError(ValueError):
    """Parameters outside the range where the chaos limit is established."""


class QuadratureError(RuntimeError):
    pass


def _require_subcritical(gamma2: float, d: int) -> None:
    if not gamma2 < d:
        raise HypothesisError(f"requires 0 < gamma2 < d (got gamma2={gamma2}, d={d})")


# ---------------------------------------------------------------- c_eps


def renorm_constant_asymptotic(N: int, c: float, sigma_eps2: float) -> float:
    """Large-variance equivalent of ``E[tr exp(X)] / N``."""
    IsotropyParams(N, c, sigma_eps2)
    if not sigma_eps2 > 0:
        raise ValueError("sigma_eps2 must be > 0")
    log_val = (
        -math.log(N)
        + math.lgamma(0.5)
        - math.lgamma(N / 2)
        + (N - 1) / 2 * math.log1p(c)
        + (N - 1) / 2 * math.log(sigma_eps2)
        + sigma_eps2 / 2
    )
    return math.exp(log_val)


@dataclass(frozen=True)
class RenormEstimate:
    value: float
    std_error: float
    n_samples: int
    method: str

    @property
    def rel_error(self) -> float:
        return self.std_error / self.value


def _log_mean_se(log_terms: np.ndarray) -> tuple[float, float]:
    """Mean and standard error of ``exp(log_terms)``, accumulated in log domain."""
    shift = float(log_terms.max())
    w = np.exp(log_terms - shift)
    n = w.size
    mean = math.exp(shift) * float(w.mean())
    se = math.exp(shift) * float(w.std(ddof=1)) / math.sqrt(n) if n > 1 else 0.0
    return mean, se


def _renorm_naive(params: IsotropyParams, n: int, rng: np.random.Generator) -> tuple[float, float]:
    mats = rmt.sample_isotropic_matrices(params, rng, n)
    log_t = rmt.log_trace_exp(mats) - math.log(params.N)
    return _log_mean_se(log_t)


def _renorm_tilted(params: IsotropyParams, n: int, rng: np.random.Generator) -> tuple[float, float]:
    # E[exp(lam_1)] over the eigenvalue law; shifting the Gaussian factor by
    # A e_1 turns it into exp(s2/2) E[Vandermonde(v + A e_1)] with v ~ N(0, A).
    N, c, s2 = params.N, params.c, params.sigma2
    shift = s2 * np.concatenate([[1.0], np.full(N - 1, -c)])
    v = rng.standard_normal((n, N)) @ rmt.diag_sqrt(params).T + shift
    log_prefactor = (
        s2 / 2
        - N * (N - 1) / 4 * math.log(s2)
        - N * (N - 1) / 4 * math.log1p(c)
        - math.lgamma(N + 1)
        - rmt.log_gamma_ratio_product(N)
    )
    vdm = np.exp(rmt.log_vandermonde(v))
    scale = math.exp(log_prefactor)
    return scale * float(vdm.mean()), scale * float(vdm.std(ddof=1)) / math.sqrt(n)


def renorm_constant_exact(
    params: IsotropyParams,
    n_samples: int,
    rng: np.random.Generator,
    method: str = "auto",
) -> RenormEstimate:
    """Monte Carlo estimate of ``c_eps = E[tr exp(X)] / N`` with ``X ~ params``.

    ``naive`` averages ``tr exp(X)/N`` over sampled matrices in log domain.
    ``tilted`` integrates over the eigenvalue law after an exponential
    change of measure; its relative error stays bounded as the variance
    grows, where the naive estimator is dominated by rare samples. ``auto``
    picks ``tilted`` from ``sigma2 >= 4``.
    """
    if n_samples < 1000:
        raise ValueError(f"n_samples must be >= 1000, got {n_samples}")
    s2 = params.sigma2
    if s2 > MAX_SIGMA2:
        raise OverflowError(f"c_eps overflows double precision for sigma2 = {s2} > {MAX_SIGMA2}")
    if s2 == 0:
        return RenormEstimate(1.0, 0.0, n_samples, "exact")
    if params.N == 1:
        # lognormal mean
        return RenormEstimate(math.exp(s2 / 2), 0.0, n_samples, "exact")
    if method == "auto":
        method = "tilted" if s2 >= TILT_ABOVE else "naive"
    if method == "naive":
        val, se = _renorm_naive(params, n_samples, rng)
    elif method == "tilted":
        val, se = _renorm_tilted(params, n_samples, rng)
    else:
        raise ValueError(f"unknown method {method!r}")
    if not math.isfinite(val):
        raise OverflowError(f"c_eps estimate overflowed at sigma2 = {s2}")
    return RenormEstimate(val, se, n_samples, method)


# ---------------------------------------------------------------- measure


@dataclass(frozen=True)
class ChaosMeasure:
    region: object
    value: np.ndarray
    c_eps_used: float
    epsilon: float
    lattice: LatticeSpec


def measure_values(values: np.ndarray, mask: np.ndarray, N: int, cell_volume: float, c_eps: float) -> np.ndarray:
    """Cell sums ``cell_volume / c_eps * sum_{mask} exp(X)`` over leading axes.

    ``values`` has shape (..., n_sites, N(N+1)/2); returns (..., N, N).
    """
    e = rmt.matrix_exp_symmetric(rmt.to_matrix(values[..., mask, :], N))
    return e.sum(axis=-3) * (cell_volume / c_eps)


def chaos_measure(f: MatrixField, region, c_eps: float) -> ChaosMeasure:
    if not c_eps > 0:
        raise ValueError("c_eps must be > 0")
    mask = region_mask(f.lattice, region)
    value = measure_values(f.values, mask, f.params.N, f.lattice.cell_volume, c_eps)
    return ChaosMeasure(region, value, float(c_eps), f.kernel.spec.epsilon, f.lattice)


@dataclass
class MeasureEnsemble:
    values: np.ndarray  # (replicas, N, N)
    c_eps: RenormEstimate
    area: float

    def mean_se(self) -> tuple[np.ndarray, np.ndarray]:
        """Entrywise mean and standard error, the latter including c_eps noise."""
        mean, se = streams.jackknife_mean_se(self.values)
        se = np.sqrt(se**2 + (mean * self.c_eps.rel_error) ** 2)
        return mean, se


def measure_ensemble(
    sampler: FieldSampler,
    region,
    replicas: int,
    seed: int,
    c_eps: RenormEstimate | None = None,
    renorm_samples: int = 1_000_000,
    workers: int | None = 1,
) -> MeasureEnsemble:
    mask = region_mask(sampler.lattice, region)
    if c_eps is None:
        c_eps = renorm_constant_exact(sampler.params, renorm_samples, streams.stream(seed, streams.RENORM))
    N, cell = sampler.params.N, sampler.lattice.cell_volume

    def work(a: int, b: int) -> np.ndarray:
        return measure_values(sampler.transform(replica_noise(sampler, seed, a, b)), mask, N, cell, c_eps.value)

    vals = streams.run_replicas(work, replicas, workers)
    return MeasureEnsemble(vals, c_eps, float(mask.sum()) * cell)


# ---------------------------------------------------------------- moments


@dataclass(frozen=True)
class MomentRow:
    scale: float
    order: int
    estimate: float
    std_error: float
    n_replicas: int


@dataclass
class MomentTable:
    rows: list
    d: int
    N: int
    c: float
    gamma2: float
    epsilon: float
    seed: int
    c_eps: float = float("nan")

    def orders(self) -> list[int]:
        return sorted({r.order for r in self.rows})

    def for_order(self, k: int) -> list[MomentRow]:
        return [r for r in self.rows if r.order == k]


def zeta(k, d: float, gamma2: float):
    """Structure exponent ``(d + gamma2/2) k - gamma2/2 k**2``."""
    k = np.asarray(k, dtype=float)
    return (d + gamma2 / 2) * k - gamma2 / 2 * k**2


def _check_orders(orders: Sequence[int], d: int, gamma2: float) -> list[int]:
    out = []
    for k in orders:
        if int(k) != k or k < 1:
            raise ValueError(f"moment orders must be positive integers, got {k}")
        if k >= 2 and gamma2 > 0 and not k < 2 * d / gamma2:
            raise HypothesisError(f"order k={k} violates k < 2d/gamma2 = {2 * d / gamma2:g}")
        out.append(int(k))
    return out


def ensemble_moments(
    sampler: FieldSampler,
    scales: Sequence[float],
    orders: Sequence[int],
    replicas: int,
    seed: int,
    c_eps: RenormEstimate | None = None,
    center: Sequence[float] | None = None,
    renorm_samples: int = 1_000_000,
    workers: int | None = 1,
) -> MomentTable:
    """``E[tr M_eps(B(center, l))**k]`` for every scale and order, jackknife SEs."""
    spec = sampler.kernel.spec
    if any(k >= 2 for k in orders):
        _require_subcritical(spec.gamma2, spec.d)
    orders = _check_orders(orders, spec.d, spec.gamma2)
    scales = sorted((float(s) for s in scales), reverse=True)
    if len(set(scales)) != len(scales) or scales[-1] <= 0:
        raise ValueError("scales must be distinct and positive")
    lat = sampler.lattice
    if center is None:
        center = tuple(o + lat.n_per_side * lat.spacing / 2 for o in lat.origin)
    masks = [region_mask(lat, Ball(tuple(center), s)) for s in scales]
    if c_eps is None:
        c_eps = renorm_constant_exact(sampler.params, renorm_samples, streams.stream(seed, streams.RENORM))
    N, cell = sampler.params.N, lat.cell_volume

    def work(a: int, b: int) -> np.ndarray:
        vals = sampler.transform(replica_noise(sampler, seed, a, b))
        e = rmt.matrix_exp_symmetric(rmt.to_matrix(vals, N))
        out = np.empty((b - a, len(scales), len(orders)))
        for i, m in enumerate(masks):
            meas = e[:, m].sum(axis=1) * (cell / c_eps.value)
            for j, k in enumerate(orders):
                out[:, i, j] = np.trace(np.linalg.matrix_power(meas, k), axis1=-2, axis2=-1)
        return out

    samples = streams.run_replicas(work, replicas, workers)
    mean, se = streams.jackknife_mean_se(samples)
    rows = [
        MomentRow(s, k, float(mean[i, j]), float(se[i, j]), replicas)
        for i, s in enumerate(scales)
        for j, k in enumerate(orders)
    ]
    return MomentTable(rows, spec.d, N, sampler.params.c, spec.gamma2, spec.epsilon, seed, c_eps.value)


@dataclass(frozen=True)
class ZetaFit:
    order: int
    slope: float
    intercept: float
    slope_se: float
    slope_logcorrected: float
    theory_zeta: float
    upper_bound_ok: bool


def _wls(x: np.ndarray, y: np.ndarray, sy: np.ndarray | None) -> tuple[float, float, float]:
    X = np.column_stack([x, np.ones_like(x)])
    if np.linalg.matrix_rank(X) < 2:
        raise ValueError("degenerate design: need at least two distinct scales")
    if sy is None:
        coef, *_ = np.linalg.lstsq(X, y, rcond=None)
        resid = y - X @ coef
        dof = len(y) - 2
        s2 = float(resid @ resid) / dof if dof > 0 else 0.0
        cov = s2 * np.linalg.inv(X.T @ X)
    else:
        w = 1.0 / sy**2
        XtW = X.T * w
        cov = np.linalg.inv(XtW @ X)
        coef = cov @ (XtW @ y)
    return float(coef[0]), float(coef[1]), float(math.sqrt(max(cov[0, 0], 0.0)))


def zeta_fit(table: MomentTable) -> dict[int, ZetaFit]:
    """Log-log fit of each order's moments against the scale.

    Weighted by ``(estimate / std_error)**2`` unless some standard error is
    zero, then ordinary least squares. The log-corrected slope first adds
    ``(k-1)(N-1)/2 * ln ln(1/l)`` to the log moments.
    """
    fits = {}
    for k in table.orders():
        rows = table.for_order(k)
        if len(rows) < 4:
            raise ValueError(f"order {k}: need >= 4 scales, got {len(rows)}")
        ell = np.array([r.scale for r in rows])
        est = np.array([r.estimate for r in rows])
        se = np.array([r.std_error for r in rows])
        if np.any(est <= 0):
            raise ValueError(f"order {k}: non-positive moment estimate")
        x, y = np.log(ell), np.log(est)
        sy = None if np.any(se == 0) else se / est
        slope, icpt, slope_se = _wls(x, y, sy)
        corr = (k - 1) * (table.N - 1) / 2 * np.log(np.log(1.0 / ell))
        slope_lc, _, _ = _wls(x, y + corr, sy)
        z = float(zeta(k, table.d, table.gamma2))
        fits[k] = ZetaFit(k, slope, icpt, slope_se, slope_lc, z, slope >= z - 3 * slope_se)
    return fits


def concavity(fits: dict[int, ZetaFit]) -> tuple[float, float]:
    """Second difference ``z(3) - 2 z(2) + z(1)`` of fitted slopes and its SE."""
    if not {1, 2, 3} <= fits.keys():
        raise ValueError("concavity needs fitted orders 1, 2 and 3")
    val = fits[3].slope - 2 * fits[2].slope + fits[1].slope
    se = math.sqrt(fits[3].slope_se**2 + 4 * fits[2].slope_se**2 + fits[1].slope_se**2)
    return val, se


# ---------------------------------------------------------------- two-point theory


def _uncut_variance(r: float, kernel) -> float:
    if isinstance(kernel, CutoffKernel):
        return float(kernel.limit(r))
    return float(log_kernel(r, kernel))


def pair_correlation(r: float, kernel, params: IsotropyParams) -> float:
    """Zero-cutoff two-point density of ``E[tr M(dx) M(dy)]`` at distance ``r``.

    ``N**2 exp(-c s) E[v exp(s (1+c) v)]`` with ``s = K(r)`` and ``v`` the
    squared Haar entry, Beta(1/2, (N-1)/2).
    """
    if not r > 0:
        raise ValueError("pair_correlation needs r > 0")
    N, c = params.N, params.c
    s = _uncut_variance(r, kernel)
    if N == 1:
        return math.exp(s)
    a = s * (1.0 + c)
    log_norm = special.gammaln(N / 2) - special.gammaln(0.5) - special.gammaln((N - 1) / 2)
    # factor out exp(a) so the integrand stays bounded by 1
    val, err, info = integrate.quad(
        lambda v: v * math.exp(a * (v - 1.0)),
        0.0, 1.0, weight="alg", wvar=(-0.5, (N - 3) / 2), epsabs=0.0, epsrel=1e-11,
        limit=200, full_output=1,
    )[:3]
    if err > 1e-8 * abs(val) + 1e-300:
        raise QuadratureError(f"pair_correlation quadrature did not converge at r={r} (err {err:.2e})")
    return N**2 * math.exp(s + log_norm) * val


def pair_correlation_asymptotic(r: float, kernel, params: IsotropyParams) -> float:
    N, c = params.N, params.c
    s = _uncut_variance(r, kernel)
    if N == 1:
        return math.exp(s)
    log_val = (
        2 * math.log(N) + math.lgamma(N / 2) - math.lgamma(0.5) + s
        - (N - 1) / 2 * math.log1p(c) - (N - 1) / 2 * math.log(s)
    )
    return math.exp(log_val)


def _ball_overlap(r, ell: float, d: int):
    """Volume of the intersection of two radius-``ell`` balls at distance ``r``."""
    vol = math.pi ** (d / 2) / math.gamma(d / 2 + 1) * ell**d
    x = np.clip(1.0 - (np.asarray(r) / (2 * ell)) ** 2, 0.0, 1.0)
    return vol * special.betainc((d + 1) / 2, 0.5, x)


def _sphere_area(d: int) -> float:
    return 2 * math.pi ** (d / 2) / math.gamma(d / 2)


def singular_volume(d: int, gamma2: float) -> float:
    """``int_{|u|,|v|<=1} |u - v|**(-gamma2) du dv`` (radial quadrature)."""
    if not gamma2 < d:
        raise HypothesisError(f"integral diverges unless gamma2 < d (gamma2={gamma2}, d={d})")
    f = lambda r: _sphere_area(d) * float(_ball_overlap(r, 1.0, d))
    val, _ = integrate.quad(f, 0.0, 2.0, weight="alg", wvar=(d - 1 - gamma2, 0.0), epsabs=0.0, epsrel=1e-12, limit=200)
    return val


@dataclass(frozen=True)
class SecondMoment:
    ell: float
    exact: float
    asymptotic: float
    singular_volume: float

    @property
    def ratio(self) -> float:
        return self.exact / self.asymptotic


def second_moment_theory(ell: float, kernel, params: IsotropyParams) -> SecondMoment:
    """Zero-cutoff ``E[tr M(B(0,l))**2]`` by radial quadrature, and its small-l equivalent."""
    spec = kernel.spec if isinstance(kernel, CutoffKernel) else kernel
    d, g2, N, c = spec.d, spec.gamma2, params.N, params.c
    if not 0 < ell < 1:
        raise ValueError("need 0 < ell < 1")
    _require_subcritical(g2, d)
    area = _sphere_area(d)
    f = lambda r: pair_correlation(r, kernel, params) * area * r ** (d - 1) * float(_ball_overlap(r, ell, d))
    pts = [p for p in (ell, spec.L) if p < 2 * ell]
    exact, _ = integrate.quad(f, 0.0, 2 * ell, points=pts or None, epsabs=0.0, epsrel=1e-10, limit=500)
    vol = singular_volume(d, g2)
    log_asym = (
        2 * math.log(N) + math.log(vol) + math.lgamma(N / 2) - math.lgamma(0.5)
        + g2 * math.log(spec.L) + spec.m - (N - 1) / 2 * math.log1p(c)
        + (2 * d - g2) * math.log(ell) - (N - 1) / 2 * math.log(g2 * math.log(1 / ell))
    )
    return SecondMoment(ell, exact, math.exp(log_asym), vol)


# ---------------------------------------------------------------- Cauchy check


@dataclass(frozen=True)
class CauchyRow:
    epsilon: float
    epsilon_prime: float
    l2_diff: float
    std_error: float
    second_eps: float
    second_eps_prime: float
    cross: float


@dataclass
class CauchyTable:
    rows: list
    decrease_se: list = field(default_factory=list)  # SE of consecutive differences of l2_diff


def cauchy_l2_check(
    lattice: LatticeSpec,
    spec: KernelSpec,
    params: IsotropyParams,
    epsilons: Sequence[float],
    region,
    replicas: int,
    seed: int,
    construction: str = "auto",
    backend: str = "auto",
    renorm_samples: int = 1_000_000,
    workers: int | None = 1,
) -> CauchyTable:
    """``E[tr (M_eps(A) - M_eps'(A))**2]`` for consecutive pairs of ``epsilons``.

    All cutoffs share the same white noise; only the kernel factorization
    changes, so consecutive fields are coupled.
    """
    _require_subcritical(spec.gamma2, spec.d)
    eps = [float(e) for e in epsilons]
    if len(eps) < 2:
        raise ValueError("need at least two cutoffs")
    samplers = []
    for e in eps:
        k = make_kernel(spec.with_epsilon(e), construction)
        samplers.append(FieldSampler(lattice, k, params.with_sigma2(k.sigma2), backend))
    shapes = {s.noise_shape for s in samplers}
    if len(shapes) != 1:
        raise ValueError("coupled cutoffs need a common noise layout; force a common backend")
    ref = samplers[0]
    mask = region_mask(lattice, region)
    N, cell = params.N, lattice.cell_volume
    cs = [
        renorm_constant_exact(s.params, renorm_samples, streams.stream(seed, streams.RENORM, i)).value
        for i, s in enumerate(samplers)
    ]

    def work(a: int, b: int) -> np.ndarray:
        noise = replica_noise(ref, seed, a, b)
        meas = np.stack(
            [measure_values(s.transform(noise), mask, N, cell, ce) for s, ce in zip(samplers, cs)], axis=1
        )
        cols = []
        for i in range(len(eps) - 1):
            m0, m1 = meas[:, i], meas[:, i + 1]
            diff = m0 - m1
            cols += [
                np.einsum("rij,rji->r", diff, diff),
                np.einsum("rij,rji->r", m0, m0),
                np.einsum("rij,rji->r", m1, m1),
                np.einsum("rij,rji->r", m0, m1),
            ]
        return np.stack(cols, axis=1)

    samples = streams.run_replicas(work, replicas, workers)
    mean, se = streams.jackknife_mean_se(samples)
    rows = []
    for i in range(len(eps) - 1):
        j = 4 * i
        rows.append(CauchyRow(eps[i], eps[i + 1], float(mean[j]), float(se[j]), float(mean[j + 1]), float(mean[j + 2]), float(mean[j + 3])))
    steps = []
    for i in range(len(eps) - 2):
        _, s = streams.jackknife_mean_se(samples[:, 4 * i] - samples[:, 4 * (i + 1)])
        steps.append(float(s))
    return CauchyTable(rows, steps)
