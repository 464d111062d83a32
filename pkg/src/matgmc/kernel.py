"""Log-correlated covariance kernels with a positive-definite cutoff.

The target kernel is ``K(x) = gamma2 * ln_+(L/|x|) + m``. Its cutoff
versions ``K_eps`` are built from the mixture representation

    ln_+(L/r) = int_0^inf (t - r)_+ nu_L(dt),
    nu_L(dt) = 1_[0,L](t) dt / t**2 + delta_L(dt) / L,

truncated to ``t in [eps, L]``. Every construction is a positive mixture of
positive-definite functions, hence positive definite:

* ``nu``          d = 1, mixture of triangles ``(t - |x|)_+``;
* ``pasenchenko`` d = 2, same mixture in the variable ``|x|**(1/2)``;
* ``sphere``      d >= 3, average of the 1D cutoff over ridge directions;
* ``unsafe``      ``gamma2 * ln_+(L / max(|x|, eps))``, any d, no PD guarantee.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import integrate, interpolate, special, stats
from scipy.stats import qmc

CONSTRUCTIONS = ("nu", "pasenchenko", "sphere", "unsafe")

# Above this many evaluations the sphere kernel switches to a tabulated
# monotone interpolant.
TABULATE_ABOVE = 1_000_000
TABLE_KNOTS = 10_000
TABLE_RTOL = 1e-6


class _Divergent:
    """Marker returned where the uncut kernel is infinite (x = 0)."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "DIVERGENT"

    def __bool__(self) -> bool:
        return False


DIVERGENT = _Divergent()


class DimensionError(ValueError):
    pass


class NotPositiveDefiniteError(ValueError):
    pass


@dataclass(frozen=True)
class KernelSpec:
    """Parameters of the log-correlated kernel family.

    ``m`` is the value at the origin of the bounded remainder ``g``; it is
    added to every construction as a constant (a constant is itself a
    positive-definite kernel).
    """

    d: int
    gamma2: float
    L: float
    epsilon: float
    m: float = 0.0

    def __post_init__(self):
        if int(self.d) != self.d or self.d < 1:
            raise ValueError(f"dimension d must be an integer >= 1, got {self.d}")
        if not self.gamma2 >= 0:
            raise ValueError(f"gamma2 must be >= 0, got {self.gamma2}")
        if not self.L > 0:
            raise ValueError(f"L must be > 0, got {self.L}")
        if not 0 < self.epsilon < self.L:
            raise ValueError(f"need 0 < epsilon < L, got epsilon={self.epsilon}, L={self.L}")

    def with_epsilon(self, epsilon: float) -> "KernelSpec":
        return KernelSpec(self.d, self.gamma2, self.L, epsilon, self.m)


def _as_radius(x) -> float:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    return float(np.sqrt(np.sum(x * x)))


def _check_dim(x, d: int) -> None:
    n = np.atleast_1d(np.asarray(x)).size
    if n != d:
        raise DimensionError(f"point has {n} coordinates, kernel dimension is {d}")


def log_kernel(r, spec: KernelSpec) -> np.ndarray:
    """``gamma2 * ln_+(L/r) + m`` on radii, ``inf`` at r = 0."""
    r = np.asarray(r, dtype=float)
    with np.errstate(divide="ignore"):
        core = np.where(r < spec.L, np.log(spec.L / r), 0.0)
    return spec.gamma2 * core + spec.m


def ln_plus_kernel(x, spec: KernelSpec):
    """Uncut kernel at a point of R^d; ``DIVERGENT`` at the origin."""
    r = _as_radius(x)
    if r == 0.0:
        return DIVERGENT
    return float(log_kernel(r, spec))


def nu_cutoff(r, L: float, eps: float) -> np.ndarray:
    """``int_eps^L (t - r)_+ nu_L(dt)`` in closed form (unit gamma2)."""
    r = np.abs(np.asarray(r, dtype=float))
    inner = math.log(L / eps) + 1.0 - r / eps
    with np.errstate(divide="ignore"):
        mid = np.log(L / np.where(r > 0, r, 1.0))
    return np.where(r <= eps, inner, np.where(r < L, mid, 0.0))


def cutoff_kernel_1d(x, spec: KernelSpec) -> float:
    if spec.d != 1:
        raise DimensionError(f"cutoff_kernel_1d needs d = 1, spec has d = {spec.d}")
    _check_dim(x, 1)
    return float(spec.gamma2 * nu_cutoff(_as_radius(x), spec.L, spec.epsilon) + spec.m)


def _pasenchenko(r, spec: KernelSpec) -> np.ndarray:
    return 2.0 * spec.gamma2 * nu_cutoff(np.sqrt(r), math.sqrt(spec.L), math.sqrt(spec.epsilon)) + spec.m


def cutoff_kernel_2d(x, spec: KernelSpec) -> float:
    """Cutoff built on the positive-definite map ``(1 - |x|**(1/2))_+`` of R^2.

    At the origin this construction gives ``gamma2 * (ln(L/eps) + 2)``: the
    square-root change of variable doubles the Dirac contribution.
    """
    if spec.d != 2:
        raise DimensionError(f"cutoff_kernel_2d needs d = 2, spec has d = {spec.d}")
    _check_dim(x, 2)
    return float(_pasenchenko(_as_radius(x), spec))


def sphere_constant(d: int) -> float:
    """``int_S ln(1/|<e, s>|) sigma(ds)`` for the uniform probability on S^{d-1}.

    ``<e, s>**2`` is Beta(1/2, (d-1)/2), whose log-mean is psi(1/2) - psi(d/2).
    """
    return 0.5 * (special.digamma(d / 2.0) - special.digamma(0.5))


def _ridge_density(t: np.ndarray, d: int) -> np.ndarray:
    # density of |<e, s>| on [0, 1]
    const = 2.0 * math.exp(special.gammaln(d / 2) - special.gammaln(0.5) - special.gammaln((d - 1) / 2))
    return const * (1.0 - t * t) ** ((d - 3) / 2)


@lru_cache(maxsize=None)
def _sphere_nodes(d: int, n_nodes: int) -> np.ndarray:
    halton = qmc.Halton(d, scramble=True, seed=20120101)
    u = halton.random(n_nodes)
    g = stats.norm.ppf(np.clip(u, 1e-15, 1 - 1e-15))
    return g / np.linalg.norm(g, axis=1, keepdims=True)


def sphere_kernel(x, spec: KernelSpec, n_nodes: int = 4096, rng: np.random.Generator | None = None):
    """Sphere-average cutoff kernel at a point of R^d (d >= 3).

    Deterministic low-discrepancy nodes are used unless ``rng`` is given, in
    which case the nodes are uniform random and the Monte Carlo standard
    error is reported. Returns ``(value, std_error)``.
    """
    if spec.d < 3:
        raise DimensionError(f"sphere_kernel needs d >= 3, spec has d = {spec.d}")
    if n_nodes < 1:
        raise ValueError("n_nodes must be >= 1")
    _check_dim(x, spec.d)
    x = np.asarray(x, dtype=float).ravel()
    if rng is None:
        nodes = _sphere_nodes(spec.d, int(n_nodes))
    else:
        g = rng.standard_normal((int(n_nodes), spec.d))
        nodes = g / np.linalg.norm(g, axis=1, keepdims=True)
    vals = spec.gamma2 * nu_cutoff(np.abs(nodes @ x), spec.L, spec.epsilon) + spec.m
    value = float(vals.mean())
    if rng is None or n_nodes < 2:
        return value, 0.0
    return value, float(vals.std(ddof=1) / math.sqrt(n_nodes))


def _sphere_radial_one(r: float, spec: KernelSpec) -> float:
    if r == 0.0:
        return spec.gamma2 * (math.log(spec.L / spec.epsilon) + 1.0) + spec.m
    d = spec.d
    pts = [p for p in (spec.epsilon / r, spec.L / r) if 0.0 < p < 1.0]
    f = lambda t: nu_cutoff(r * t, spec.L, spec.epsilon) * _ridge_density(t, d)
    val, _ = integrate.quad(f, 0.0, 1.0, points=pts or None, limit=200, epsabs=1e-13, epsrel=1e-12)
    return spec.gamma2 * val + spec.m


def _sphere_limit_one(r: float, spec: KernelSpec) -> float:
    if r == 0.0:
        return math.inf
    d = spec.d
    f = lambda t: (math.log(spec.L / (r * t)) if r * t < spec.L else 0.0) * _ridge_density(t, d)
    pts = [spec.L / r] if spec.L / r < 1.0 else None
    val, _ = integrate.quad(f, 0.0, 1.0, points=pts, limit=200, epsabs=1e-13, epsrel=1e-12)
    return spec.gamma2 * val + spec.m


@dataclass(frozen=True)
class CutoffKernel:
    """A concrete isotropic cutoff kernel, evaluated on radii.

    Instances are immutable; evaluation is pure and thread safe.
    """

    spec: KernelSpec
    construction: str
    _cache: dict = field(default_factory=dict, repr=False, compare=False, hash=False)

    def __post_init__(self):
        if self.construction not in CONSTRUCTIONS:
            raise ValueError(f"unknown kernel construction {self.construction!r}")
        need = {"nu": 1, "pasenchenko": 2}.get(self.construction)
        if need is not None and self.spec.d != need:
            raise DimensionError(f"{self.construction} kernel needs d = {need}, got d = {self.spec.d}")
        if self.construction == "sphere" and self.spec.d < 3:
            raise DimensionError("sphere kernel needs d >= 3")

    @property
    def sigma2(self) -> float:
        """Variance ``K_eps(0)``."""
        return float(self(0.0))

    @property
    def support(self) -> float:
        """Radius beyond which ``K_eps - m`` vanishes (inf if it never does)."""
        return math.inf if self.construction == "sphere" else self.spec.L

    @property
    def remainder_at_zero(self) -> float:
        """Constant ``m`` such that ``K(x) = gamma2 ln(L/|x|) + m`` near 0."""
        if self.construction == "sphere":
            return self.spec.m + self.spec.gamma2 * sphere_constant(self.spec.d)
        return self.spec.m

    def __call__(self, r) -> np.ndarray:
        r = np.abs(np.asarray(r, dtype=float))
        s = self.spec
        if self.construction == "nu":
            return s.gamma2 * nu_cutoff(r, s.L, s.epsilon) + s.m
        if self.construction == "pasenchenko":
            return _pasenchenko(r, s)
        if self.construction == "unsafe":
            return s.gamma2 * np.where(r < s.L, np.log(s.L / np.maximum(r, s.epsilon)), 0.0) + s.m
        return self._sphere_radial(r)

    def limit(self, r) -> np.ndarray:
        """The uncut kernel ``K`` (the eps -> 0 limit), ``inf`` at 0."""
        r = np.abs(np.asarray(r, dtype=float))
        if self.construction != "sphere":
            return log_kernel(r, self.spec)
        flat = [_sphere_limit_one(float(v), self.spec) for v in r.ravel()]
        return np.asarray(flat).reshape(r.shape)

    def _sphere_radial(self, r: np.ndarray) -> np.ndarray:
        if r.size > TABULATE_ABOVE:
            table = self._table(float(r.max()))
            if table is not None:
                return table(r)
        uniq, inv = np.unique(r, return_inverse=True)
        vals = np.empty_like(uniq)
        for i, v in enumerate(uniq):
            key = float(v)
            if key not in self._cache:
                self._cache[key] = _sphere_radial_one(key, self.spec)
            vals[i] = self._cache[key]
        return vals[inv].reshape(r.shape)

    def _table(self, rmax: float):
        key = ("table", rmax)
        if key in self._cache:
            return self._cache[key]
        # knots dense near the cutoff scale, where the kernel bends most
        s = np.linspace(0.0, math.asinh(rmax / self.spec.epsilon), TABLE_KNOTS)
        knots = self.spec.epsilon * np.sinh(s)
        knots[-1] = rmax
        vals = np.array([_sphere_radial_one(float(v), self.spec) for v in knots])
        interp = interpolate.PchipInterpolator(knots, vals)
        mids = 0.5 * (knots[1:] + knots[:-1])
        exact = np.array([_sphere_radial_one(float(v), self.spec) for v in mids[::97]])
        err = np.abs(interp(mids[::97]) - exact) / np.maximum(np.abs(exact), 1e-300)
        table = interp if err.max() <= TABLE_RTOL else None
        self._cache[key] = table
        return table


def default_construction(d: int) -> str:
    return {1: "nu", 2: "pasenchenko"}.get(d, "sphere")


def make_kernel(spec: KernelSpec, construction: str = "auto", allow_unsafe: bool = False) -> CutoffKernel:
    if construction == "auto":
        construction = default_construction(spec.d)
    if construction == "unsafe" and not allow_unsafe:
        raise ValueError("the truncated ln_+ kernel is not guaranteed positive definite; pass allow_unsafe=True")
    return CutoffKernel(spec, construction)


@dataclass(frozen=True)
class PDCheck:
    passed: bool
    min_eigenvalue: float
    n_points: int

    def to_json(self) -> dict:
        return {"min_eigenvalue": self.min_eigenvalue, "n_points": self.n_points, "passed": self.passed}


def pairwise_distances(points: np.ndarray) -> np.ndarray:
    diff = points[:, None, :] - points[None, :, :]
    return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))


def check_positive_definite(kernel, points, tol: float | None = None) -> PDCheck:
    """Smallest eigenvalue of the Gram matrix ``K_eps(x_i - x_j)``.

    ``kernel`` is a :class:`CutoffKernel` or a :class:`KernelSpec` (default
    construction). Passes when the smallest eigenvalue is ``>= -tol``; the
    default tolerance is ``1e-8 * sigma_eps**2``.
    """
    if isinstance(kernel, KernelSpec):
        kernel = make_kernel(kernel)
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    if len(np.unique(pts, axis=0)) != len(pts):
        raise ValueError("duplicate points in positive-definiteness check")
    gram = kernel(pairwise_distances(pts))
    lam = float(np.linalg.eigvalsh(gram)[0])
    if tol is None:
        tol = 1e-8 * kernel.sigma2
    return PDCheck(lam >= -tol, lam, len(pts))
