"""Monte Carlo over the orthogonal group: HCIZ-type integrals, entry-weighted
(Morozov) moments and the k-point trace integrals of the matrix chaos."""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .chaos import _uncut_variance
from .kernel import pairwise_distances
from .rmt import IsotropyParams, sample_haar_orthogonal

ESS_FLOOR = 100.0
MAX_TUPLES = 4096


@dataclass(frozen=True)
class AngularEstimate:
    value: float
    std_error: float
    n_samples: int
    ess: float = float("nan")
    flagged: bool = False

    def __post_init__(self):
        if self.std_error < 0 or self.n_samples < 1:
            raise ValueError("invalid angular estimate")


def _estimate(values: np.ndarray) -> AngularEstimate:
    n = values.size
    se = float(values.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return AngularEstimate(float(values.mean()), se, n, float(n))


def _squared_entries(o: np.ndarray) -> np.ndarray:
    return o * o


def hciz_mc(D, Dp, theta: float, n_samples: int, rng: np.random.Generator) -> AngularEstimate:
    """Haar average of ``exp(theta tr(diag(D) O diag(Dp) O^T))``."""
    D = np.asarray(D, dtype=float)
    Dp = np.asarray(Dp, dtype=float)
    if D.shape != Dp.shape or D.ndim != 1:
        raise ValueError("D and Dp must be vectors of equal length")
    if not math.isfinite(theta):
        raise ValueError("theta must be finite")
    o2 = _squared_entries(sample_haar_orthogonal(D.size, rng, n_samples))
    expo = theta * np.einsum("k,nkl,l->n", D, o2, Dp)
    return _estimate(np.exp(expo))


def morozov_moment_mc(i: int, j: int, u, up, coef: float, n_samples: int, rng: np.random.Generator) -> AngularEstimate:
    """Haar average of ``O_ij**2 exp(coef sum_kl u_k up_l O_kl**2)`` (0-based ``i, j``)."""
    u = np.asarray(u, dtype=float)
    up = np.asarray(up, dtype=float)
    N = u.size
    if up.size != N:
        raise ValueError("u and up must have equal length")
    if not (0 <= i < N and 0 <= j < N):
        raise IndexError(f"entry ({i}, {j}) outside a {N}x{N} matrix")
    o2 = _squared_entries(sample_haar_orthogonal(N, rng, n_samples))
    vals = o2[:, i, j] * np.exp(coef * np.einsum("k,nkl,l->n", u, o2, up))
    return _estimate(vals)


def kpoint_variances(points, kernel) -> np.ndarray:
    """Matrix of zero-cutoff variances ``K(|x_r - x_l|)`` between distinct points."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    k = len(pts)
    if k < 2:
        raise ValueError("k-point integrals need k >= 2 points")
    dist = pairwise_distances(pts)
    s = np.zeros((k, k))
    for r in range(k):
        for l in range(r + 1, k):
            if dist[r, l] <= 0:
                raise ValueError("k-point integrals need pairwise distinct points")
            s[r, l] = s[l, r] = _uncut_variance(float(dist[r, l]), kernel)
    return s


def _cycle_and_exponent(w: np.ndarray, variances: np.ndarray, c: float) -> tuple[np.ndarray, np.ndarray]:
    # w: (n, k, N) unit vectors; returns the integrand per sample
    gram = np.einsum("nra,nla->nrl", w, w)
    k = w.shape[1]
    cyc = np.prod(gram[:, np.arange(k), (np.arange(k) + 1) % k], axis=1)
    iu = np.triu_indices(k, 1)
    expo = (1.0 + c) * np.sum(variances[iu] * gram[:, iu[0], iu[1]] ** 2, axis=1)
    return cyc, expo


def _concentration(variances: np.ndarray, c: float) -> float:
    k = variances.shape[0]
    return (1.0 + c) * float(variances.sum()) / k


def _columns(o: np.ndarray, j: Sequence[int]) -> np.ndarray:
    # o: (n, k, N, N) -> columns O^(r) e_{j_r}, shape (n, k, N)
    return np.stack([o[:, r, :, jr] for r, jr in enumerate(j)], axis=1)


def _check_params(params: IsotropyParams, j: Sequence[int], k: int) -> None:
    if len(j) != k:
        raise ValueError(f"need {k} indices, got {len(j)}")
    if any(not 0 <= jr < params.N for jr in j):
        raise IndexError("j indices must lie in [0, N)")


def kpoint_integrand_mc(
    variances: np.ndarray,
    params: IsotropyParams,
    j_indices: Sequence[int],
    n_samples: int,
    rng: np.random.Generator,
    importance: bool | None = None,
    spread: float | None = None,
) -> AngularEstimate:
    """Haar average over ``k`` independent frames of the k-point integrand.

    The integrand is the cyclic product of ``(O_r^T O_{r+1})_{j_r j_{r+1}}``
    times ``exp((1+c) sum_{r<l} s_rl (O_r^T O_l)_{j_r j_l}**2)``. It depends
    on each frame only through column ``j_r``, a uniform unit vector.

    With ``importance`` the columns ``r >= 2`` are drawn from an angular
    central Gaussian elongated along column 1 (ratio ``spread``) and
    reweighted exactly; the default switches it on when the exponent is
    large. The effective sample size is reported and estimates with
    ESS < 100 are flagged.
    """
    variances = np.asarray(variances, dtype=float)
    k = variances.shape[0]
    if k < 2:
        raise ValueError("k-point integrals need k >= 2")
    _check_params(params, j_indices, k)
    N, c = params.N, params.c
    kappa = _concentration(variances, c)
    if importance is None:
        importance = N > 1 and kappa > 2.0
    if not importance:
        o = sample_haar_orthogonal(N, rng, n_samples * k).reshape(n_samples, k, N, N)
        cyc, expo = _cycle_and_exponent(_columns(o, j_indices), variances, c)
        return _estimate(cyc * np.exp(expo))

    b = spread if spread is not None else max(1.0, 2.0 * kappa / N)
    w1 = rng.standard_normal((n_samples, N))
    w1 /= np.linalg.norm(w1, axis=1, keepdims=True)
    g = rng.standard_normal((n_samples, k - 1, N))
    along = np.einsum("nra,na->nr", g, w1)
    g += (math.sqrt(b) - 1.0) * along[..., None] * w1[:, None, :]
    w_rest = g / np.linalg.norm(g, axis=2, keepdims=True)
    t = np.einsum("nra,na->nr", w_rest, w1)
    # density of the elongated law relative to uniform: b^(-1/2) (w^T A^-1 w)^(-N/2)
    log_w = np.sum(0.5 * math.log(b) + N / 2 * np.log1p(-(1.0 - 1.0 / b) * t * t), axis=1)
    w = np.concatenate([w1[:, None, :], w_rest], axis=1)
    cyc, expo = _cycle_and_exponent(w, variances, c)
    log_scale = float(np.max(expo + log_w))
    weights = np.exp(log_w)
    vals = cyc * np.exp(expo + log_w - log_scale)
    mean = float(vals.mean()) * math.exp(log_scale)
    se = float(vals.std(ddof=1)) / math.sqrt(n_samples) * math.exp(log_scale)
    ess = float(weights.sum() ** 2 / np.sum(weights**2))
    flagged = ess < ESS_FLOOR
    if flagged:
        warnings.warn(f"importance-sampled k-point estimate has ESS {ess:.1f} < {ESS_FLOOR:g}", RuntimeWarning, stacklevel=2)
    return AngularEstimate(mean, se, n_samples, ess, flagged)


def kpoint_trace_mc(
    points,
    kernel,
    params: IsotropyParams,
    j_indices: Sequence[int],
    n_samples: int,
    rng: np.random.Generator,
    importance: bool | None = None,
) -> AngularEstimate:
    """k-point integrand at fixed indices, variances from the uncut kernel."""
    return kpoint_integrand_mc(kpoint_variances(points, kernel), params, j_indices, n_samples, rng, importance)


def kpoint_trace_sum(
    points,
    kernel,
    params: IsotropyParams,
    n_samples: int,
    rng: np.random.Generator,
    importance: bool | None = None,
) -> AngularEstimate:
    """Sum of the k-point integrand over all index tuples.

    Without importance sampling every tuple is evaluated on the same Haar
    frames and summed per sample. Columns of independent Haar frames are
    exchangeable, so with importance sampling the sum is ``N**k`` times the
    fixed-index value.
    """
    variances = kpoint_variances(points, kernel)
    k, N, c = variances.shape[0], params.N, params.c
    if N**k > MAX_TUPLES:
        raise ValueError(f"N**k = {N**k} index tuples exceeds {MAX_TUPLES}")
    if importance is None:
        importance = N > 1 and _concentration(variances, c) > 2.0
    if importance:
        est = kpoint_integrand_mc(variances, params, (0,) * k, n_samples, rng, True)
        f = float(N**k)
        return AngularEstimate(f * est.value, f * est.std_error, est.n_samples, est.ess, est.flagged)
    o = sample_haar_orthogonal(N, rng, n_samples * k).reshape(n_samples, k, N, N)
    total = np.zeros(n_samples)
    for j in itertools.product(range(N), repeat=k):
        cyc, expo = _cycle_and_exponent(_columns(o, j), variances, c)
        total += cyc * np.exp(expo)
    return _estimate(total)
