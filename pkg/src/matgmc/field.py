"""Lattice synthesis of the log-correlated symmetric-matrix Gaussian field.

The field is driven by ``N(N+1)/2`` independent scalar Gaussian fields,
each with spatial covariance ``K_eps``. The first ``N`` drivers feed the
diagonal through the square root of ``(1+c) I - c P``; the remaining ones
are scaled by ``sqrt((1+c)/2)`` onto the off-diagonal entries (row-major
``i < j``). Spatial and entry correlations therefore factorize.
"""

from __future__ import annotations

import json
import math
import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import fft

from . import rmt, streams
from .kernel import CutoffKernel, NotPositiveDefiniteError, pairwise_distances
from .rmt import IsotropyParams

DENSE_MAX_SITES = 4096
CIRCULANT_MAX = {1: 2**20, 2: 1024}
JITTER = 1e-10
EMBED_RTOL = 1e-10

SNAPSHOT_MAGIC = b"MGMC"
SNAPSHOT_VERSION = 1
_HEADER = struct.Struct("<4sIIII5dQ")


@dataclass(frozen=True)
class LatticeSpec:
    """Regular grid of ``n_per_side**d`` cells with the given corner.

    Site ``i`` sits at the center of its cell, ``origin + (i + 1/2) spacing``.
    """

    d: int
    n_per_side: int
    spacing: float
    origin: tuple = ()

    def __post_init__(self):
        if self.n_per_side < 1:
            raise ValueError("n_per_side must be >= 1")
        if not self.spacing > 0:
            raise ValueError("spacing must be > 0")
        origin = tuple(float(o) for o in self.origin) or (0.0,) * self.d
        if len(origin) != self.d:
            raise ValueError(f"origin has {len(origin)} coordinates, lattice dimension is {self.d}")
        object.__setattr__(self, "origin", origin)

    @classmethod
    def centered(cls, d: int, n_per_side: int, spacing: float) -> "LatticeSpec":
        return cls(d, n_per_side, spacing, (-n_per_side * spacing / 2.0,) * d)

    @property
    def n_sites(self) -> int:
        return self.n_per_side**self.d

    @property
    def cell_volume(self) -> float:
        return self.spacing**self.d

    @property
    def shape(self) -> tuple:
        return (self.n_per_side,) * self.d

    def positions(self) -> np.ndarray:
        axis = (np.arange(self.n_per_side) + 0.5) * self.spacing
        grids = np.meshgrid(*[axis + o for o in self.origin], indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=1)


@dataclass(frozen=True)
class Ball:
    center: tuple
    radius: float

    def contains(self, pts: np.ndarray) -> np.ndarray:
        return np.linalg.norm(pts - np.asarray(self.center, dtype=float), axis=1) < self.radius


@dataclass(frozen=True)
class Box:
    lower: tuple
    upper: tuple

    def contains(self, pts: np.ndarray) -> np.ndarray:
        lo = np.asarray(self.lower, dtype=float)
        hi = np.asarray(self.upper, dtype=float)
        return np.all((pts >= lo) & (pts < hi), axis=1)


def region_mask(lattice: LatticeSpec, region) -> np.ndarray:
    mask = region.contains(lattice.positions())
    if not mask.any():
        raise ValueError(f"region {region} contains no lattice site")
    return mask


@dataclass
class MatrixField:
    lattice: LatticeSpec
    params: IsotropyParams
    kernel: CutoffKernel
    values: np.ndarray  # (n_sites, N(N+1)/2), site-major upper triangles
    seed: int | None = None

    def matrices(self) -> np.ndarray:
        return rmt.to_matrix(self.values, self.params.N)


@dataclass
class FieldEnsemble:
    """Replicas of a field restricted to a subset of sites."""

    lattice: LatticeSpec
    params: IsotropyParams
    kernel: CutoffKernel
    values: np.ndarray  # (replicas, len(sites), N(N+1)/2)
    sites: np.ndarray


def _embedding_length(n: int, spacing: float, support: float) -> int:
    need = max(2 * (n - 1), 2 * math.ceil(support / spacing - 1e-9), 2)
    return fft.next_fast_len(need, real=False)


class FieldSampler:
    """Precomputed factorization of ``K_eps`` on a lattice.

    ``draw_noise`` consumes a fixed, documented amount of randomness per
    field; ``transform`` maps white noise to the matrix field. Two samplers
    on the same lattice and backend accept the same noise, which is how
    fields at different cutoffs are coupled.
    """

    def __init__(self, lattice: LatticeSpec, kernel: CutoffKernel, params: IsotropyParams, backend: str = "auto"):
        if lattice.d != kernel.spec.d:
            raise ValueError(f"lattice dimension {lattice.d} != kernel dimension {kernel.spec.d}")
        sigma2 = kernel.sigma2
        if not math.isclose(params.sigma2, sigma2, rel_tol=1e-12, abs_tol=1e-300):
            raise ValueError(f"params.sigma2 = {params.sigma2} must equal K_eps(0) = {sigma2}")
        self.lattice = lattice
        self.kernel = kernel
        self.params = params
        self.n_fields = rmt.n_entries(params.N)
        self.records: list[dict] = []
        if lattice.spacing > kernel.spec.epsilon:
            self._warn("spacing exceeds epsilon: the lattice does not resolve the cutoff")
        self.backend = self._resolve(backend)
        if self.backend == "circulant":
            if not self._setup_circulant():
                if lattice.n_sites > DENSE_MAX_SITES:
                    raise NotPositiveDefiniteError(
                        "circulant embedding is not positive definite and the lattice is too large for dense factorization"
                    )
                self._warn("circulant embedding not positive definite; falling back to dense factorization")
                self.backend = "dense"
        if self.backend == "dense":
            self._setup_dense()
        self.unit = IsotropyParams(params.N, params.c, 1.0)

    def _warn(self, message: str) -> None:
        self.records.append({"warning": message})
        warnings.warn(message, RuntimeWarning, stacklevel=3)

    def _resolve(self, backend: str) -> str:
        lat = self.lattice
        can_circ = (
            lat.d in CIRCULANT_MAX
            and lat.n_sites <= CIRCULANT_MAX[lat.d] ** (1 if lat.d == 1 else 2)
            and math.isfinite(self.kernel.support)
            and lat.n_per_side >= 2
        )
        if backend == "auto":
            if can_circ and lat.n_sites > 1:
                return "circulant"
            backend = "dense"
        if backend == "dense":
            if lat.n_sites > DENSE_MAX_SITES:
                raise ValueError(f"dense backend limited to {DENSE_MAX_SITES} sites, lattice has {lat.n_sites}")
            return "dense"
        if backend == "circulant":
            if not can_circ:
                raise ValueError("circulant backend needs a regular 1D/2D grid and a compactly supported kernel")
            return "circulant"
        raise ValueError(f"unknown backend {backend!r}")

    def _setup_dense(self) -> None:
        gram = self.kernel(pairwise_distances(self.lattice.positions()))
        w, v = np.linalg.eigh(gram)
        # eigenvalues down to -jitter are rounding noise and are clipped to 0
        jitter = JITTER * self.params.sigma2
        self.min_eigenvalue = float(w.min())
        if w.min() < -jitter:
            raise NotPositiveDefiniteError(
                f"kernel Gram matrix has eigenvalue {w.min():.3e} below -{jitter:.1e}; "
                "use a positive-definite construction (nu, pasenchenko or sphere)"
            )
        self.root = (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T
        self.noise_shape = (self.n_fields, self.lattice.n_sites)

    def _setup_circulant(self) -> bool:
        lat = self.lattice
        m = _embedding_length(lat.n_per_side, lat.spacing, self.kernel.support)
        self.embed = (m,) * lat.d
        idx = np.arange(m)
        lag = np.minimum(idx, m - idx) * lat.spacing
        grids = np.meshgrid(*([lag] * lat.d), indexing="ij")
        r = np.sqrt(sum(g * g for g in grids))
        lam = fft.fftn(self.kernel(r)).real
        self.min_eigenvalue = float(lam.min())
        if lam.min() < -EMBED_RTOL * lam.max():
            return False
        self.scale = np.sqrt(np.clip(lam, 0.0, None) / lam.size)
        self.noise_shape = (self.n_fields, 2) + self.embed
        return True

    def draw_noise(self, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
        shape = self.noise_shape if size is None else (size,) + self.noise_shape
        return rng.standard_normal(shape)

    def scalar_fields(self, noise: np.ndarray) -> np.ndarray:
        """White noise to scalar fields of covariance ``K_eps``; shape (..., n_fields, n_sites)."""
        if self.backend == "dense":
            return noise @ self.root
        d = self.lattice.d
        z = noise[..., 0, :] + 1j * noise[..., 1, :] if d == 1 else noise[..., 0, :, :] + 1j * noise[..., 1, :, :]
        axes = tuple(range(-d, 0))
        f = fft.fftn(self.scale * z, axes=axes).real
        n = self.lattice.n_per_side
        f = f[..., :n] if d == 1 else f[..., :n, :n]
        return f.reshape(f.shape[: f.ndim - d] + (self.lattice.n_sites,))

    def transform(self, noise: np.ndarray) -> np.ndarray:
        """White noise to upper-triangle field values, shape (..., n_sites, N(N+1)/2)."""
        g = np.swapaxes(self.scalar_fields(noise), -1, -2)
        N = self.params.N
        return rmt.assemble(g[..., :N], g[..., N:], self.unit)

    def sample(self, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
        return self.transform(self.draw_noise(rng, size))


def synthesize_field(
    lattice: LatticeSpec,
    kernel: CutoffKernel,
    params: IsotropyParams,
    rng: np.random.Generator,
    backend: str = "auto",
) -> MatrixField:
    sampler = FieldSampler(lattice, kernel, params, backend)
    return MatrixField(lattice, params, kernel, sampler.sample(rng))


def replica_noise(sampler: FieldSampler, seed: int, start: int, stop: int) -> np.ndarray:
    return np.stack([sampler.draw_noise(g) for g in streams.replica_streams(seed, streams.FIELD, start, stop)])


def synthesize_replica(sampler: FieldSampler, seed: int, replica: int) -> MatrixField:
    values = sampler.transform(replica_noise(sampler, seed, replica, replica + 1))[0]
    return MatrixField(sampler.lattice, sampler.params, sampler.kernel, values, seed)


def synthesize_ensemble(
    sampler: FieldSampler,
    replicas: int,
    seed: int,
    sites: Sequence[int] | None = None,
    workers: int | None = 1,
) -> FieldEnsemble:
    """Replicas ``0..replicas-1`` of the field, keeping only ``sites``."""
    sel = np.arange(sampler.lattice.n_sites) if sites is None else np.asarray(sites, dtype=int)

    def work(a: int, b: int) -> np.ndarray:
        return sampler.transform(replica_noise(sampler, seed, a, b))[:, sel, :]

    values = streams.run_replicas(work, replicas, workers)
    return FieldEnsemble(sampler.lattice, sampler.params, sampler.kernel, values, sel)


def entry_covariance(a: tuple[int, int], b: tuple[int, int], c: float) -> float:
    """Covariance of entries ``a`` and ``b`` at one site, per unit of K_eps."""
    (i, j), (k, l) = sorted(a), sorted(b)
    if i == j and k == l:
        return (1.0 + c) * (i == k) - c
    if i != j and (i, j) == (k, l):
        return (1.0 + c) / 2.0
    return 0.0


def _entry_index(N: int) -> dict:
    iu = rmt.triu_indices(N)
    return {(int(i), int(j)): n for n, (i, j) in enumerate(zip(*iu))}


def empirical_covariance_report(
    ensemble: FieldEnsemble,
    site_pairs: Sequence[tuple[int, int]],
    entry_pairs: Sequence[tuple[tuple[int, int], tuple[int, int]]],
    min_replicas: int = 1000,
) -> list[dict]:
    """Empirical vs. theoretical covariances with z-scores.

    Sites are positions within ``ensemble.sites``; entries are 0-based
    ``(i, j)`` index pairs with ``i <= j``.
    """
    R = ensemble.values.shape[0]
    if R < min_replicas:
        raise ValueError(f"need at least {min_replicas} replicas for a covariance report, got {R}")
    pos = ensemble.lattice.positions()[ensemble.sites]
    index = _entry_index(ensemble.params.N)
    rows = []
    for s, t in site_pairs:
        r = float(np.linalg.norm(pos[s] - pos[t]))
        k = float(ensemble.kernel(r))
        for a, b in entry_pairs:
            x = ensemble.values[:, s, index[tuple(sorted(a))]]
            y = ensemble.values[:, t, index[tuple(sorted(b))]]
            prod = (x - x.mean()) * (y - y.mean())
            emp = float(prod.sum() / (R - 1))
            se = float(prod.std(ddof=1) / math.sqrt(R))
            theory = entry_covariance(a, b, ensemble.params.c) * k
            z = (emp - theory) / se if se > 0 else (0.0 if emp == theory else math.inf)
            rows.append(
                {
                    "site_a": int(s), "site_b": int(t), "distance": r,
                    "entry_a": tuple(a), "entry_b": tuple(b),
                    "empirical": emp, "theoretical": theory, "std_error": se, "z": z,
                }
            )
    return rows


def snapshot_header(f: MatrixField) -> dict:
    s = f.kernel.spec
    return {
        "magic": SNAPSHOT_MAGIC.decode(),
        "version": SNAPSHOT_VERSION,
        "d": f.lattice.d,
        "N": f.params.N,
        "n_per_side": f.lattice.n_per_side,
        "spacing": f.lattice.spacing,
        "gamma2": s.gamma2,
        "L": s.L,
        "epsilon": s.epsilon,
        "c": f.params.c,
        "seed": int(f.seed or 0),
    }


def write_snapshot(f: MatrixField, path) -> tuple[Path, Path]:
    """Binary little-endian snapshot plus a JSON sidecar mirroring the header."""
    path = Path(path)
    h = snapshot_header(f)
    head = _HEADER.pack(
        SNAPSHOT_MAGIC, SNAPSHOT_VERSION, h["d"], h["N"], h["n_per_side"],
        h["spacing"], h["gamma2"], h["L"], h["epsilon"], h["c"], h["seed"],
    )
    with open(path, "wb") as fh:
        fh.write(head)
        fh.write(np.ascontiguousarray(f.values, dtype="<f8").tobytes())
    side = path.with_suffix(path.suffix + ".json")
    side.write_text(json.dumps(h, indent=2, sort_keys=True) + "\n")
    return path, side


def read_snapshot(path) -> tuple[dict, np.ndarray]:
    raw = Path(path).read_bytes()
    fields = _HEADER.unpack_from(raw)
    if fields[0] != SNAPSHOT_MAGIC:
        raise ValueError(f"{path}: not a field snapshot (bad magic {fields[0]!r})")
    keys = ["magic", "version", "d", "N", "n_per_side", "spacing", "gamma2", "L", "epsilon", "c", "seed"]
    header = dict(zip(keys, fields))
    header["magic"] = header["magic"].decode()
    n_sites = header["n_per_side"] ** header["d"]
    ntri = rmt.n_entries(header["N"])
    values = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
    if values.size != n_sites * ntri:
        raise ValueError(f"{path}: expected {n_sites * ntri} values, found {values.size}")
    return header, values.reshape(n_sites, ntri).copy()
