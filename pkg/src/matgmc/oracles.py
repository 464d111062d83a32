"""Independent ground truths: Gaussian-Vandermonde closed forms and their
numerical counterparts, the large-variance equivalent of ``c_eps``, a
standalone scalar lognormal chaos and an experimental probe of the
log-corrected moment scaling."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import integrate, special, stats

from .rmt import (
    IsotropyParams,
    eigenvalue_log_density,
    log_gamma_ratio_product,
    sample_haar_orthogonal,
    sample_isotropic_matrices,
)

INFLATE_BELOW = 0.1


@dataclass(frozen=True)
class GaussVandermondeParams:
    """Weight ``exp(-alpha (sum l)**2 - sum l**2 / (2 (1+c)))`` on R^N."""

    N: int
    c: float = 0.0
    alpha: float = 0.0

    def __post_init__(self):
        if int(self.N) != self.N or self.N < 1:
            raise ValueError("N must be an integer >= 1")
        if not self.c > -1:
            raise ValueError("need c > -1")
        if not self.convergence > 0:
            raise ValueError(f"integral diverges: 1 + 2 alpha (1+c) N = {self.convergence} <= 0")

    @property
    def convergence(self) -> float:
        return 1.0 + 2.0 * self.alpha * (1.0 + self.c) * self.N

    @classmethod
    def from_isotropy(cls, params: IsotropyParams) -> "GaussVandermondeParams":
        """Unit-variance weight of the eigenvalue law of ``params``."""
        return cls(params.N, params.c, params.with_sigma2(1.0).alpha)


def integral_full_vandermonde(p: GaussVandermondeParams) -> float:
    """Closed form of the Gaussian weight integrated against ``prod_{i<j} |l_j - l_i|``."""
    N, c = p.N, p.c
    log_val = (
        math.lgamma(N + 1) + N / 2 * math.log(2 * math.pi) + log_gamma_ratio_product(N)
        + N * (N + 1) / 4 * math.log1p(c) - 0.5 * math.log(p.convergence)
    )
    return math.exp(log_val)


def integral_reduced_vandermonde(p: GaussVandermondeParams) -> float:
    """Closed form against ``prod_{2<=i<j} |l_j - l_i|`` (first coordinate left out)."""
    N, c = p.N, p.c
    if N < 2:
        raise ValueError("the reduced integral needs N >= 2")
    log_val = (
        0.5 * math.log1p(c) + math.lgamma(N) + N / 2 * math.log(2 * math.pi)
        + log_gamma_ratio_product(N - 1) + N * (N - 1) / 4 * math.log1p(c)
        - 0.5 * math.log(p.convergence)
    )
    return math.exp(log_val)


def _weight(p: GaussVandermondeParams, *lam: float) -> float:
    s = sum(lam)
    q = sum(x * x for x in lam)
    return math.exp(-p.alpha * s * s - q / (2.0 * (1.0 + p.c)))


def vandermonde_quadrature(p: GaussVandermondeParams, reduced: bool = False, epsrel: float = 1e-9) -> float:
    """Adaptive quadrature over ordered sectors (N <= 3), multiplied by the sector count."""
    inf = np.inf
    opts = {"epsabs": 0.0, "epsrel": epsrel, "limit": 200}
    N = p.N
    if N == 1 and not reduced:
        return integrate.quad(lambda x: _weight(p, x), -inf, inf, **opts)[0]
    if N == 2 and not reduced:
        f = lambda y, x: _weight(p, x, y) * (y - x)
        return 2.0 * integrate.dblquad(f, -inf, inf, lambda x: x, lambda x: inf, epsabs=0.0, epsrel=epsrel)[0]
    if N == 2 and reduced:
        f = lambda y, x: _weight(p, x, y)
        return integrate.dblquad(f, -inf, inf, -inf, inf, epsabs=0.0, epsrel=epsrel)[0]
    if N == 3 and not reduced:
        f = lambda z, y, x: _weight(p, x, y, z) * (z - y) * (z - x) * (y - x)
        ranges = [lambda y, x: [y, inf], lambda x: [x, inf], [-inf, inf]]
        return 6.0 * integrate.nquad(f, ranges, opts=opts)[0]
    if N == 3 and reduced:
        f = lambda z, y, x: _weight(p, x, y, z) * (z - y)
        ranges = [lambda y, x: [y, inf], [-inf, inf], [-inf, inf]]
        return 2.0 * integrate.nquad(f, ranges, opts=opts)[0]
    raise NotImplementedError("quadrature oracle covers N <= 3")


def vandermonde_mc(
    p: GaussVandermondeParams,
    n_samples: int,
    rng: np.random.Generator,
    reduced: bool = False,
    inflate: float | None = None,
) -> tuple[float, float]:
    """Importance-sampled estimate: Gaussian proposal, Vandermonde as weight.

    Near the convergence boundary the proposal covariance is inflated by 2.
    """
    N, c, a = p.N, p.c, p.alpha
    prec = np.eye(N) / (1.0 + c) + 2.0 * a * np.ones((N, N))
    cov = np.linalg.inv(prec)
    if inflate is None:
        inflate = 2.0 if p.convergence < INFLATE_BELOW else 1.0
    chol = np.linalg.cholesky(inflate * cov)
    z = rng.standard_normal((n_samples, N))
    lam = z @ chol.T
    # log target weight minus log proposal density
    quad_t = 0.5 * np.einsum("ni,ij,nj->n", lam, prec, lam)
    log_prop = -0.5 * np.sum(z * z, axis=1) - N / 2 * math.log(2 * math.pi) - np.sum(np.log(np.diag(chol)))
    log_w = -quad_t - log_prop
    lo = 1 if reduced else 0
    i, j = np.triu_indices(N - lo, 1)
    sub = lam[:, lo:]
    vdm = np.prod(np.abs(sub[:, j] - sub[:, i]), axis=1) if len(i) else np.ones(n_samples)
    vals = vdm * np.exp(log_w)
    return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(n_samples))


def nu_representation_integral(r: float, L: float, eps: float = 0.0) -> float:
    """``int_eps^inf (t - r)_+ nu_L(dt)`` by quadrature; equals ``ln_+(L/r)`` at eps = 0."""
    r = abs(float(r))
    lo = max(r, eps)
    if lo >= L:
        return 0.0
    cont, _ = integrate.quad(lambda t: (t - r) / (t * t), lo, L, epsabs=0.0, epsrel=1e-13, limit=200)
    return cont + (L - r) / L


# ---------------------------------------------------------------- c_eps


def shifted_renorm_mc(params: IsotropyParams, n_samples: int, rng: np.random.Generator) -> tuple[float, float]:
    """``E[exp(l_1)]`` under the eigenvalue law, computed around the shifted centre.

    ``exp(l_1)`` times the Gaussian factor is the Gaussian factor recentred
    at ``A e_1`` times ``exp(sigma2 / 2)``; the Vandermonde is then averaged
    under the recentred Gaussian and normalized by the closed form.
    """
    N, c, s2 = params.N, params.c, params.sigma2
    A = s2 * ((1.0 + c) * np.eye(N) - c * np.ones((N, N)))
    centre = A[:, 0]
    v = rng.standard_normal((n_samples, N)) @ np.linalg.cholesky(A).T + centre
    i, j = np.triu_indices(N, 1)
    vdm = np.prod(np.abs(v[:, j] - v[:, i]), axis=1) if N > 1 else np.ones(n_samples)
    z_bar = s2 ** (N * (N + 1) / 4) * integral_full_vandermonde(GaussVandermondeParams.from_isotropy(params))
    scale = math.exp(s2 / 2) * (2 * math.pi) ** (N / 2) * math.sqrt(np.linalg.det(A)) / z_bar
    return scale * float(vdm.mean()), scale * float(vdm.std(ddof=1)) / math.sqrt(n_samples)


def direct_renorm_mc(params: IsotropyParams, n_samples: int, rng: np.random.Generator) -> tuple[float, float]:
    """``E[exp(l)]`` for a uniformly chosen eigenvalue of sampled matrices."""
    lam = np.linalg.eigvalsh(sample_isotropic_matrices(params, rng, n_samples))
    vals = np.exp(lam).mean(axis=1)
    return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(n_samples))


def laplace_equivalent(N: int, c: float, sigma2: float) -> float:
    return math.exp(
        math.lgamma(0.5) - math.lgamma(N / 2) - math.log(N)
        + (N - 1) / 2 * (math.log1p(c) + math.log(sigma2)) + sigma2 / 2
    )


def laplace_cep_check(N: int, c: float, sigma_eps_grid: Sequence[float], n_samples: int, rng: np.random.Generator) -> list[dict]:
    """Ratios of the eigenvalue-representation estimate to its Laplace equivalent."""
    grid = [float(s) for s in sigma_eps_grid]
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise ValueError("sigma_eps grid must be increasing")
    rows = []
    for s in grid:
        params = IsotropyParams(N, c, s * s)
        val, se = shifted_renorm_mc(params, n_samples, rng)
        asym = laplace_equivalent(N, c, s * s)
        rows.append({"sigma_eps": s, "estimate": val, "std_error": se, "asymptotic": asym, "ratio": val / asym})
    return rows


# ---------------------------------------------------------------- scalar chaos


def scalar_gmc_oracle(kernel, positions, cell_volume: float, rng: np.random.Generator, mask=None, size: int | None = None):
    """Minimal lognormal cell sum ``sum exp(g - s2/2) * cell_volume`` (d = 1 or 2).

    ``g`` is the Gaussian vector with covariance ``kernel(|x_i - x_j|)``,
    generated from ``rng.standard_normal`` through the symmetric square root
    of the Gram matrix (eigenvalues clipped at 0).
    """
    pts = np.asarray(positions, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    if pts.shape[1] not in (1, 2):
        raise ValueError("scalar oracle supports d = 1 or 2")
    n = len(pts)
    dist = np.sqrt(((pts[:, None, :] - pts[None, :, :]) ** 2).sum(axis=2))
    gram = np.asarray(kernel(dist), dtype=float)
    s2 = float(kernel(0.0))
    w, v = np.linalg.eigh(gram)
    root = (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T
    z = rng.standard_normal((n,) if size is None else (size, n))
    g = z @ root
    sel = np.ones(n, bool) if mask is None else np.asarray(mask, bool)
    return np.sum(np.exp(g[..., sel] - s2 / 2), axis=-1) * cell_volume


# ---------------------------------------------------------------- conjecture probe


def conjecture_probe(
    N: int,
    c: float,
    d: int,
    gamma2: float,
    ell_grid: Sequence[float],
    q_grid: Sequence[float],
    n_samples: int,
    rng: np.random.Generator,
) -> dict:
    """Experimental: single-matrix heuristic for ``E[tr M(B(0,l))**q]``.

    For each ``q`` the heuristic is divided by ``l**zeta(q)`` and the log
    exponent is fitted from ``ln ratio`` against ``ln ln(1/l)``; the
    conjectured value is ``(q-1)(N-1)/2``. Not a validated result.
    """
    if not 0 < gamma2 < d:
        raise ValueError("probe needs 0 < gamma2 < d")
    gamma = math.sqrt(gamma2)
    rows, fits = [], []
    for q in q_grid:
        if not 0 < q < 2 * d / gamma2:
            raise ValueError(f"q = {q} outside (0, 2d/gamma2)")
        x, y, sy = [], [], []
        for ell in ell_grid:
            if not 0 < ell < 1:
                raise ValueError("ell must lie in (0, 1)")
            lg = math.log(1.0 / ell)
            tau2 = gamma2 * q * q * lg
            val, se = shifted_renorm_mc(IsotropyParams(N, c, tau2), n_samples, rng)
            # E[tr exp(tau Omega)] = N E[exp(tau l_1)]; log domain from here on
            log_h = (
                (d + gamma2 / 2) * q * math.log(ell) - q * (N - 1) / 2 * math.log(lg)
                - q * (N - 1) * math.log(gamma) + math.log(N * val)
            )
            zeta_q = (d + gamma2 / 2) * q - gamma2 / 2 * q * q
            log_ratio = log_h - zeta_q * math.log(ell)
            rows.append({"q": q, "ell": ell, "log_heuristic": log_h, "log_ratio": log_ratio, "rel_se": se / val})
            x.append(math.log(lg))
            y.append(log_ratio)
            sy.append(max(se / val, 1e-12))
        x, y, sy = np.array(x), np.array(y), np.array(sy)
        X = np.column_stack([x, np.ones_like(x)])
        wts = 1.0 / sy**2
        cov = np.linalg.inv((X.T * wts) @ X)
        coef = cov @ ((X.T * wts) @ y)
        fits.append({
            "q": q, "log_exponent": -float(coef[0]), "log_exponent_se": float(math.sqrt(cov[0, 0])),
            "conjectured": (q - 1) * (N - 1) / 2,
        })
    return {"experimental": True, "rows": rows, "fits": fits}


# ---------------------------------------------------------------- goodness of fit


def haar_entry_ks(n: int, n_samples: int, rng: np.random.Generator) -> float:
    """KS p-value of ``O_11**2`` for Haar ``O`` against Beta(1/2, (n-1)/2)."""
    o = sample_haar_orthogonal(n, rng, n_samples)
    return float(stats.kstest(o[:, 0, 0] ** 2, stats.beta(0.5, (n - 1) / 2).cdf).pvalue)


def eigenvalue_density_gof(params: IsotropyParams, n_samples: int, rng: np.random.Generator, bins: int = 12, grid: int = 120) -> tuple[float, float]:
    """Chi-square test of the largest sampled eigenvalue against the density.

    Bin probabilities integrate the unordered eigenvalue density on a
    midpoint grid covering +-7 standard deviations. Returns ``(chi2, p)``.
    """
    N = params.N
    if N > 3:
        raise ValueError("grid integration limited to N <= 3")
    sd = math.sqrt(params.sigma2 * (1 + abs(params.c) * N))
    half = 7.0 * sd
    h = 2 * half / grid
    axis = -half + (np.arange(grid) + 0.5) * h
    mesh = np.stack(np.meshgrid(*([axis] * N), indexing="ij"), axis=-1).reshape(-1, N)
    dens = np.exp(eigenvalue_log_density(mesh, params)) * h**N
    top = mesh.max(axis=1)
    edges = np.quantile(top, np.linspace(0, 1, bins + 1), weights=dens, method="inverted_cdf")
    # snap to cell boundaries so each grid node falls wholly inside one bin
    edges = np.unique(-half + np.round((edges + half) / h) * h)
    edges[0], edges[-1] = -np.inf, np.inf
    probs = np.histogram(top, bins=edges, weights=dens)[0]
    probs = probs / probs.sum()
    lam = np.linalg.eigvalsh(sample_isotropic_matrices(params, rng, n_samples))
    counts = np.histogram(lam[:, -1], bins=edges)[0]
    res = stats.chisquare(counts, probs * n_samples)
    return float(res.statistic), float(res.pvalue)


# ---------------------------------------------------------------- report


def _record(name: str, closed: float, numeric: float, method: str, passed: bool) -> dict:
    rel = abs(numeric - closed) / abs(closed) if closed != 0 else abs(numeric)
    return {"name": name, "closed_form": closed, "numeric": numeric, "rel_error": rel, "method": method, "passed": bool(passed)}


def oracle_report(seed: int = 0) -> list[dict]:
    """Run every closed form against its independent numerical route."""
    from . import chaos, streams
    from .kernel import KernelSpec, check_positive_definite, make_kernel, nu_cutoff

    rng = lambda i: streams.stream(seed, streams.ORACLE, i)
    out = []
    for N, c, a in [(1, 0.4, 0.2), (2, 0.3, 0.1), (2, -0.5, 0.0), (3, 0.2, 0.05)]:
        p = GaussVandermondeParams(N, c, a)
        cf, num = integral_full_vandermonde(p), vandermonde_quadrature(p, epsrel=1e-8)
        out.append(_record(f"integral_full N={N} c={c} alpha={a}", cf, num, "quadrature", abs(num / cf - 1) < 1e-6))
        if N >= 2:
            cf, num = integral_reduced_vandermonde(p), vandermonde_quadrature(p, reduced=True, epsrel=1e-8)
            out.append(_record(f"integral_reduced N={N} c={c} alpha={a}", cf, num, "quadrature", abs(num / cf - 1) < 1e-5))
    for i, (N, c, a) in enumerate([(3, 0.0, 0.0), (4, 0.1, 0.02), (5, 0.0, 0.01)]):
        p = GaussVandermondeParams(N, c, a)
        cf = integral_full_vandermonde(p)
        val, se = vandermonde_mc(p, 400_000, rng(i))
        out.append(_record(f"integral_full N={N} c={c} alpha={a}", cf, val, f"importance MC (se {se:.3g})", abs(val - cf) < 3 * se))
    for r in (0.01, 0.3, 0.9):
        cf = math.log(1.0 / r)
        out.append(_record(f"nu representation r={r}", cf, nu_representation_integral(r, 1.0), "quadrature", abs(nu_representation_integral(r, 1.0) - cf) < 1e-10))
        cf = float(nu_cutoff(r, 1.0, 0.05))
        num = nu_representation_integral(r, 1.0, 0.05)
        out.append(_record(f"nu cutoff r={r} eps=0.05", cf, num, "quadrature", abs(num - cf) < 1e-10))
    g2 = 0.5
    cf = 2 * (2 * 2 ** (1 - g2) / (1 - g2) - 2 ** (2 - g2) / (2 - g2))
    num = chaos.singular_volume(1, g2)
    out.append(_record("singular volume d=1 gamma2=0.5", cf, num, "radial quadrature", abs(num / cf - 1) < 1e-8))
    params = IsotropyParams(2, 0.0, 4.0)
    tilt = chaos.renorm_constant_exact(params, 200_000, rng(10), "tilted")
    naive = chaos.renorm_constant_exact(params, 200_000, rng(11), "naive")
    joint = math.hypot(tilt.std_error, naive.std_error)
    out.append(_record("c_eps tilted vs naive N=2 sigma2=4", naive.value, tilt.value, "two estimators", abs(tilt.value - naive.value) < 3 * joint))
    shifted, sse = shifted_renorm_mc(params, 200_000, rng(12))
    joint = math.hypot(sse, tilt.std_error)
    out.append(_record("c_eps eigenvalue route vs matrix route", tilt.value, shifted, "two estimators", abs(shifted - tilt.value) < 3 * joint))
    for n in (2, 3, 5):
        pv = haar_entry_ks(n, 100_000, rng(20 + n))
        out.append(_record(f"Haar entry law KS N={n}", 0.01, pv, "KS p-value", pv > 0.01))
    for N, c in [(2, 0.0), (3, 0.3)]:
        _, pv = eigenvalue_density_gof(IsotropyParams(N, c, 1.0), 100_000, rng(30 + N), grid=200 if N == 2 else 90)
        out.append(_record(f"eigenvalue density chi2 N={N} c={c}", 0.01, pv, "chi-square p-value", pv > 0.01))
    for d, L in [(1, 1.0), (2, 1.0), (3, 1.0)]:
        spec = KernelSpec(d, 0.25, L, 1 / 16)
        side = {1: 64, 2: 12, 3: 5}[d]
        pts = np.stack(np.meshgrid(*([np.arange(side) / side] * d), indexing="ij"), -1).reshape(-1, d)
        chk = check_positive_definite(make_kernel(spec), pts)
        out.append(_record(f"kernel positive definite d={d}", 0.0, chk.min_eigenvalue, "Gram eigenvalue", chk.passed))
    return out
