"""Isotropic symmetric Gaussian matrices, Haar orthogonal matrices and
their eigenvalue laws.

A centered symmetric isotropic Gaussian matrix is described by
``(N, c, sigma2)``: the diagonal has covariance
``A = (1+c) sigma2 I - c sigma2 P`` (``P`` the all-ones matrix) and the
off-diagonal entries are independent with variance ``sigma2 (1+c) / 2``.
``c = 0`` is the GOE, ``c = 1/(N-1)`` the trace-free boundary.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special


class SingularCovarianceError(ValueError):
    pass


@dataclass(frozen=True)
class IsotropyParams:
    N: int
    c: float = 0.0
    sigma2: float = 1.0

    def __post_init__(self):
        if int(self.N) != self.N or self.N < 1:
            raise ValueError(f"matrix size N must be an integer >= 1, got {self.N}")
        if not self.c > -1:
            raise ValueError(f"need c > -1, got {self.c}")
        if self.N > 1 and self.c > 1.0 / (self.N - 1) + 1e-15:
            raise ValueError(f"need c <= 1/(N-1) = {1.0 / (self.N - 1)}, got {self.c}")
        if not self.sigma2 >= 0:
            raise ValueError(f"sigma2 must be >= 0, got {self.sigma2}")

    @property
    def trace_free(self) -> bool:
        return self.N > 1 and abs(self.c - 1.0 / (self.N - 1)) <= 1e-15

    @property
    def offdiag_variance(self) -> float:
        return self.sigma2 * (1.0 + self.c) / 2.0

    @property
    def trace_weight(self) -> float:
        """``1 + c(1 - N)``; the diagonal covariance eigenvalue on the ones vector
        (in units of sigma2). Clamped at 0 on the trace-free boundary."""
        return 0.0 if self.trace_free else 1.0 + self.c * (1 - self.N)

    @property
    def alpha(self) -> float:
        """Coefficient of ``(tr X)**2`` in the log-density (needs c < 1/(N-1))."""
        if self.trace_free:
            raise SingularCovarianceError("alpha is undefined on the trace-free boundary c = 1/(N-1)")
        return self.c / (2.0 * self.sigma2 * (1.0 + self.c) * self.trace_weight)

    def with_sigma2(self, sigma2: float) -> "IsotropyParams":
        return IsotropyParams(self.N, self.c, sigma2)


def n_entries(N: int) -> int:
    return N * (N + 1) // 2


def triu_indices(N: int) -> tuple[np.ndarray, np.ndarray]:
    """Row-major upper-triangle index pairs (the storage order of SymMatrix)."""
    return np.triu_indices(N)


def to_matrix(tri: np.ndarray, N: int) -> np.ndarray:
    """Upper-triangle vectors (..., N(N+1)/2) to symmetric matrices (..., N, N)."""
    tri = np.asarray(tri)
    iu = triu_indices(N)
    out = np.zeros(tri.shape[:-1] + (N, N), dtype=tri.dtype)
    out[..., iu[0], iu[1]] = tri
    out[..., iu[1], iu[0]] = tri
    return out


def to_triangle(mat: np.ndarray) -> np.ndarray:
    N = mat.shape[-1]
    iu = triu_indices(N)
    return mat[..., iu[0], iu[1]]


def diag_covariance(params: IsotropyParams, inverse: bool = True):
    """``A = (1+c) s2 I - c s2 P`` and, optionally, its closed-form inverse."""
    N, c, s2 = params.N, params.c, params.sigma2
    eye = np.eye(N)
    ones = np.ones((N, N))
    A = (1.0 + c) * s2 * eye - c * s2 * ones
    if not inverse:
        return A
    if params.trace_free:
        raise SingularCovarianceError(
            f"diagonal covariance is singular at the trace-free boundary c = 1/(N-1) = {c}"
        )
    if s2 == 0:
        raise SingularCovarianceError("diagonal covariance is zero (sigma2 = 0)")
    Ainv = eye / (s2 * (1.0 + c)) + c / (s2 * (1.0 + c)) / (1.0 + c * (1 - N)) * ones
    return A, Ainv


def diag_sqrt(params: IsotropyParams) -> np.ndarray:
    """Symmetric square root ``B`` of the diagonal covariance, ``B B^T = A``.

    Written on the projector decomposition ``P/N``, ``I - P/N`` so that the
    trace-free boundary gives an exactly zero weight on the ones direction.
    """
    N = params.N
    s = math.sqrt(params.sigma2)
    proj = np.ones((N, N)) / N
    return math.sqrt(params.trace_weight) * s * proj + math.sqrt(1.0 + params.c) * s * (np.eye(N) - proj)


def assemble(diag_drivers: np.ndarray, off_drivers: np.ndarray, params: IsotropyParams) -> np.ndarray:
    """Build upper-triangle vectors from standard-normal drivers.

    ``diag_drivers`` has shape (..., N), ``off_drivers`` (..., N(N-1)/2) in
    row-major ``i < j`` order. Drivers scaled by ``sigma`` give matrices of
    variance scale ``params.sigma2``.
    """
    N = params.N
    B = diag_sqrt(params)
    diag = diag_drivers @ B.T
    off = off_drivers * math.sqrt(params.offdiag_variance)
    iu = triu_indices(N)
    out = np.empty(diag.shape[:-1] + (n_entries(N),))
    on_diag = iu[0] == iu[1]
    out[..., on_diag] = diag
    out[..., ~on_diag] = off
    return out


def sample_isotropic(params: IsotropyParams, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
    """Draw isotropic matrices as upper-triangle vectors.

    The drivers are consumed as one block of shape (N(N+1)/2,) per matrix:
    N diagonal drivers followed by the off-diagonal ones. At the trace-free
    boundary all N diagonal drivers are still drawn, one direction carries
    zero weight.
    """
    N = params.N
    shape = (n_entries(N),) if size is None else (size, n_entries(N))
    g = rng.standard_normal(shape)
    return assemble(g[..., :N], g[..., N:], params)


def sample_isotropic_matrices(params: IsotropyParams, rng: np.random.Generator, size: int) -> np.ndarray:
    return to_matrix(sample_isotropic(params, rng, size), params.N)


def sample_haar_orthogonal(n: int, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
    """Haar-distributed orthogonal matrices via QR of a Gaussian matrix.

    The columns are re-signed so that ``R`` has a positive diagonal; without
    this the factorization is not unique and the law is not Haar.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    shape = (n, n) if size is None else (size, n, n)
    z = rng.standard_normal(shape)
    q, r = np.linalg.qr(z)
    signs = np.sign(np.diagonal(r, axis1=-2, axis2=-1))
    signs = np.where(signs == 0, 1.0, signs)
    return q * signs[..., None, :]


def haar_entry_sq_density(n: int, v) -> np.ndarray:
    """Density of ``|O_11|**2``: Beta(1/2, (n-1)/2) on (0, 1)."""
    v = np.asarray(v, dtype=float)
    if np.any((v <= 0) | (v >= 1)):
        raise ValueError("v must lie in the open interval (0, 1)")
    if n < 2:
        raise ValueError("the entry law is a point mass for n = 1")
    logc = special.gammaln(n / 2) - special.gammaln(0.5) - special.gammaln((n - 1) / 2)
    return np.exp(logc - 0.5 * np.log(v) + (n - 3) / 2 * np.log1p(-v))


def log_vandermonde(lam: np.ndarray) -> np.ndarray:
    """``sum_{i<j} log|lam_j - lam_i|`` over the last axis."""
    lam = np.asarray(lam, dtype=float)
    N = lam.shape[-1]
    if N < 2:
        return np.zeros(lam.shape[:-1])
    i, j = np.triu_indices(N, k=1)
    with np.errstate(divide="ignore"):
        return np.log(np.abs(lam[..., j] - lam[..., i])).sum(axis=-1)


def log_gamma_ratio_product(N: int) -> float:
    """``log prod_{k=1}^N Gamma(k/2) / Gamma(1/2)``."""
    k = np.arange(1, N + 1)
    return float(np.sum(special.gammaln(k / 2) - special.gammaln(0.5)))


def log_eigen_normalizer(params: IsotropyParams) -> float:
    """Log of the normalization of the unordered eigenvalue density."""
    N, c, s2 = params.N, params.c, params.sigma2
    if params.trace_free:
        raise SingularCovarianceError("eigenvalue density degenerates at c = 1/(N-1)")
    return (
        math.lgamma(N + 1)
        + N / 2 * math.log(2 * math.pi)
        + log_gamma_ratio_product(N)
        + N * (N + 1) / 4 * math.log(s2)
        + (N - 1) * (N + 2) / 4 * math.log1p(c)
        + 0.5 * math.log(params.trace_weight)
    )


def eigenvalue_log_density(lambdas, params: IsotropyParams) -> np.ndarray:
    """Log-density of the unordered eigenvalues (vectorized over leading axes)."""
    lam = np.asarray(lambdas, dtype=float)
    s2, c = params.sigma2, params.c
    quad = params.alpha * lam.sum(axis=-1) ** 2 + (lam**2).sum(axis=-1) / (2 * s2 * (1 + c))
    return -quad + log_vandermonde(lam) - log_eigen_normalizer(params)


def matrix_exp_symmetric(m: np.ndarray) -> np.ndarray:
    """``exp`` of symmetric matrices (..., N, N) through ``eigh``."""
    m = np.asarray(m, dtype=float)
    if not np.all(np.isfinite(m)):
        raise np.linalg.LinAlgError("non-finite entries in matrix exponential input")
    w, v = np.linalg.eigh(m)
    return (v * np.exp(w)[..., None, :]) @ np.swapaxes(v, -1, -2)


def log_trace_exp(m: np.ndarray) -> np.ndarray:
    """``log tr exp(m)`` computed as a log-sum-exp of the eigenvalues."""
    w = np.linalg.eigvalsh(m)
    return special.logsumexp(w, axis=-1)


def histogram_rows(samples, bins=50, range=None) -> list[tuple[float, float, int]]:
    """Histogram as ``(bin_left, bin_right, count)`` rows for CSV emission."""
    counts, edges = np.histogram(np.asarray(samples), bins=bins, range=range)
    return [(float(a), float(b), int(n)) for a, b, n in zip(edges[:-1], edges[1:], counts)]
