"""End-to-end acceptance checks at desk scale.

Each check prints one ``PASS``/``FAIL`` line (collected into the pytest
terminal summary by ``conftest.py``). Run standalone with
``python3 tests/test_acceptance.py`` or through ``pytest -m acceptance``.
"""

import math
import os
import shutil
import sys

import numpy as np
import pytest

from matgmc import angular, chaos, cli, field, oracles, streams
from matgmc.field import Box, FieldSampler, LatticeSpec
from matgmc.kernel import KernelSpec, make_kernel
from matgmc.oracles import GaussVandermondeParams
from matgmc.rmt import IsotropyParams

pytestmark = pytest.mark.acceptance

RESULTS: dict[tuple, str] = {}
SEED = 20240601


def report(number: int, label: str, ok: bool, detail: str) -> None:
    line = f"[{number:2d}] {'PASS' if ok else 'FAIL'}  {label}: {detail}"
    RESULTS[number, label] = line
    print(line)
    assert ok, line


def kernel_1d(eps: float = 1 / 64, gamma2: float = 0.25):
    return make_kernel(KernelSpec(1, gamma2, 1.0, eps))


# 1 -----------------------------------------------------------------------


@pytest.mark.parametrize("c", [0.0, 0.5])
def test_covariance_structure(c):
    k = kernel_1d()
    s = FieldSampler(LatticeSpec(1, 256, 1 / 256), k, IsotropyParams(3, c, k.sigma2))
    ens = field.synthesize_ensemble(s, 20_000, SEED)
    sites = [(100, 100), (100, 101), (100, 110), (100, 150), (10, 250)]
    entries = [
        ((0, 0), (0, 0)), ((0, 0), (1, 1)), ((2, 2), (1, 1)), ((0, 1), (0, 1)), ((1, 2), (1, 2)),
        ((0, 1), (1, 2)), ((0, 0), (0, 1)), ((1, 1), (0, 2)), ((2, 2), (1, 2)),
    ]
    rows = field.empirical_covariance_report(ens, sites, entries)
    worst = max(abs(r["z"]) for r in rows)
    mixed = [r for r in rows if (r["entry_a"][0] == r["entry_a"][1]) != (r["entry_b"][0] == r["entry_b"][1])]
    mixed_ok = all(r["theoretical"] == 0.0 and abs(r["z"]) < 4 for r in mixed)
    report(1, f"covariance structure c={c}", worst < 4 and mixed_ok,
           f"{len(rows)} covariances, max |z| = {worst:.2f}, {len(mixed)} diagonal/off-diagonal pairs at 0")


# 2 -----------------------------------------------------------------------


def test_renormalization_constant():
    ratios = {}
    for i, s2 in enumerate((9.0, 25.0)):
        est = chaos.renorm_constant_exact(IsotropyParams(2, 0.0, s2), 1_000_000, streams.stream(SEED, streams.RENORM, i))
        ratios[s2] = est.value / chaos.renorm_constant_asymptotic(2, 0.0, s2)
    ok = 0.85 <= ratios[25.0] <= 1.15 and abs(ratios[25.0] - 1) < abs(ratios[9.0] - 1)
    report(2, "renormalization constant", ok, f"exact/asymptotic = {ratios[9.0]:.5f} (s2=9), {ratios[25.0]:.5f} (s2=25)")


# 3 -----------------------------------------------------------------------


@pytest.mark.parametrize("c", [0.0, 0.5])
def test_mean_normalization(c):
    k = kernel_1d()
    s = FieldSampler(LatticeSpec(1, 256, 1 / 256), k, IsotropyParams(2, c, k.sigma2))
    ens = chaos.measure_ensemble(s, Box((0.0,), (1.0,)), 20_000, SEED)
    mean, se = ens.mean_se()
    z = np.abs(mean - ens.area * np.eye(2)) / se
    report(3, f"mean normalization c={c}", bool(np.all(z < 4)),
           f"|A| = {ens.area:g}, mean diag = {np.diag(mean).round(4).tolist()}, max z = {z.max():.2f}")


# 4 -----------------------------------------------------------------------


def test_second_moment_equivalent():
    k, p = kernel_1d(), IsotropyParams(2, 0.0)
    scales = [2.0**-j for j in (8, 10, 12, 14)]
    ratios = [chaos.second_moment_theory(ell, k, p).ratio for ell in scales]
    monotone = all(abs(b - 1) < abs(a - 1) for a, b in zip(ratios, ratios[1:]))
    close = abs(ratios[-1] - 1) < 0.10
    detail = ", ".join(f"l=2^-{j}: {r:.4f}" for j, r in zip((8, 10, 12, 14), ratios))
    report(4, "second-moment equivalent", monotone and close, f"{detail}; monotone={monotone}, within 10% at 2^-14={close}")


# 5 -----------------------------------------------------------------------


def test_structure_exponents():
    eps = 2.0**-10
    k = kernel_1d(eps)
    s = FieldSampler(LatticeSpec(1, 256, eps, (-0.125,)), k, IsotropyParams(2, 0.0, k.sigma2))
    table = chaos.ensemble_moments(s, [2.0**-j for j in range(3, 8)], [1, 2, 3], 20_000, SEED, center=(0.0,))
    fits = chaos.zeta_fit(table)
    curv, curv_se = chaos.concavity(fits)
    ok2 = abs(fits[2].slope - 1.75) <= 0.15
    ok3 = abs(fits[3].slope - 2.25) <= 0.25
    report(5, "structure exponents", ok2 and ok3 and curv < 0,
           f"slope k=2 {fits[2].slope:.3f} (1.75), k=3 {fits[3].slope:.3f} (2.25), second difference {curv:.3f} +- {curv_se:.3f}")


# 6 -----------------------------------------------------------------------


def test_closed_form_integrals():
    worst_q, worst_z = 0.0, 0.0
    for i, (N, c, a) in enumerate([(2, 0.0, 0.0), (2, 0.3, 0.1), (3, 0.2, 0.05), (3, -0.3, 0.0)]):
        p = GaussVandermondeParams(N, c, a)
        for reduced in (False, True):
            cf = oracles.integral_reduced_vandermonde(p) if reduced else oracles.integral_full_vandermonde(p)
            worst_q = max(worst_q, abs(oracles.vandermonde_quadrature(p, reduced, epsrel=1e-9) / cf - 1))
            val, se = oracles.vandermonde_mc(p, 400_000, streams.stream(SEED, streams.ORACLE, 2 * i + reduced), reduced)
            if se <= 1e-12 * cf:
                # N=2 reduced: the integrand is the proposal itself, zero-variance estimator
                worst_q = max(worst_q, abs(val / cf - 1))
            else:
                worst_z = max(worst_z, abs(val - cf) / se)
    report(6, "closed-form integrals", worst_q < 1e-5 and worst_z < 3,
           f"quadrature max rel error {worst_q:.2e}, MC max |z| {worst_z:.2f}")


# 7 -----------------------------------------------------------------------


def test_haar_entry_law():
    pv = {n: oracles.haar_entry_ks(n, 100_000, streams.stream(SEED, streams.ORACLE, 100 + n)) for n in (2, 3, 5)}
    report(7, "Haar entry law", all(p > 0.01 for p in pv.values()), ", ".join(f"N={n} p={p:.3f}" for n, p in pv.items()))


# 8 -----------------------------------------------------------------------


def test_two_point_cross_module():
    k, p = kernel_1d(), IsotropyParams(3, 0.5)
    out, ok = [], True
    for i, r in enumerate((0.3, 0.1, 0.01)):
        est = angular.kpoint_trace_mc([0.0, r], k, p, (0, 0), 400_000, streams.stream(SEED, streams.ANGULAR, i))
        # N^2 index tuples with equal means; the trace part of the covariance contributes exp(-c s)
        scale = p.N**2 * math.exp(-p.c * float(k.limit(r)))
        exact = chaos.pair_correlation(r, k, p)
        z = (est.value * scale - exact) / (est.std_error * scale)
        ok &= abs(z) < 3
        out.append(f"r={r} z={z:+.2f}")
    report(8, "two-point cross-module", ok, ", ".join(out))


# 9 -----------------------------------------------------------------------


def test_cauchy_in_epsilon():
    eps = [2.0**-j for j in range(3, 8)]
    t = chaos.cauchy_l2_check(LatticeSpec(1, 512, 2.0**-9), KernelSpec(1, 0.25, 1.0, eps[0]), IsotropyParams(2, 0.0),
                              eps, Box((0.0,), (1.0,)), 4096, SEED)
    l2 = [r.l2_diff for r in t.rows]
    ok = all(b < a + 2 * s for a, b, s in zip(l2, l2[1:], t.decrease_se)) and all(b < a for a, b in zip(l2, l2[1:]))
    report(9, "Cauchy in epsilon", ok, "L2 differences " + ", ".join(f"{v:.3e}" for v in l2))


# 10 ----------------------------------------------------------------------


def test_scalar_reduction():
    k = kernel_1d()
    lat = LatticeSpec(1, 256, 1 / 256)
    s = FieldSampler(lat, k, IsotropyParams(1, 0.0, k.sigma2), backend="dense")
    region = Box((0.0,), (1.0,))
    ens = chaos.measure_ensemble(s, region, 64, SEED)
    worst = 0.0
    for i in range(64):
        o = oracles.scalar_gmc_oracle(k, lat.positions(), lat.cell_volume, streams.stream(SEED, streams.FIELD, i))
        worst = max(worst, abs(ens.values[i, 0, 0] - o) / abs(o))
    report(10, "scalar reduction", worst < 1e-10, f"64 replicas, max relative difference {worst:.2e}")


# 11 ----------------------------------------------------------------------

DET_CONFIG = """\
[model]
N = 2
gamma2 = 0.25
epsilon = 0.015625

[grid]
n_per_side = 128
spacing = 0.0078125

[run]
seed = 777
replicas = 200
renorm_samples = 20000

[moments]
scales = 0.25 0.125 0.0625 0.03125
orders = 1 2 3

[cauchy]
epsilon_list = 0.125 0.0625 0.03125

[angular]
n_samples = 5000
"""

DET_OUTPUTS = {
    "synth": ["field.mgmc"],
    "moments": ["moments.csv", "zeta.csv"],
    "cauchy": ["cauchy.csv"],
    "pair-correlation": ["paircorr.csv"],
    "angular": ["angular.csv"],
}


def test_determinism_across_workers(tmp_path):
    cfg = tmp_path / "det.ini"
    cfg.write_text(DET_CONFIG)
    out = tmp_path / "out"
    mismatched = []
    for command, files in DET_OUTPUTS.items():
        seen = {}
        for workers in (1, 4, 8):
            shutil.rmtree(out, ignore_errors=True)
            assert cli.main([command, "--config", str(cfg), "--out", str(out), "--workers", str(workers)]) == 0
            seen[workers] = [(out / f).read_bytes() for f in files]
        if not seen[1] == seen[4] == seen[8]:
            mismatched.append(command)
    report(11, "determinism across workers", not mismatched,
           f"{len(DET_OUTPUTS)} commands x workers 1/4/8, mismatched: {mismatched or 'none'}")


if __name__ == "__main__":
    sys.exit(pytest.main([os.path.abspath(__file__), "-q", "-s"]))
