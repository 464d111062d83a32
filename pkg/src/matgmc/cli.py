"""Batch front-end: ``mgmc {validate,synth,moments,pair-correlation,angular,cauchy}``.

Exit codes: 0 ok, 1 validation failure, 2 configuration error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import csv
import datetime
import json
import math
import os
import platform
import sys
import warnings
from pathlib import Path

import numpy as np
import scipy

from . import __version__, angular, chaos, config, oracles, streams
from .field import Box, FieldSampler, LatticeSpec, synthesize_replica, write_snapshot
from .kernel import KernelSpec, make_kernel
from .rmt import IsotropyParams

EXIT_OK, EXIT_VALIDATION, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2, 3


class Run:
    """Shared plumbing for one command invocation."""

    def __init__(self, command: str, cfg: config.RunConfig, workers: int):
        self.command = command
        self.cfg = cfg
        self.workers = workers
        self.out = Path(cfg.run.output_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        self.outputs: list[str] = []
        self.notes: list[dict] = []

    @property
    def seed(self) -> int:
        return self.cfg.run.seed

    def header(self) -> str:
        return f"# config_hash={self.cfg.hash()} seed={self.seed}\n"

    def write_csv(self, name: str, columns: list[str], rows: list[list]) -> Path:
        path = self.out / name
        with open(path, "w", newline="") as fh:
            fh.write(self.header())
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(columns)
            w.writerows([_cell(v) for v in row] for row in rows)
        self.outputs.append(name)
        return path

    def write_json(self, name: str, obj) -> Path:
        path = self.out / name
        path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n")
        self.outputs.append(name)
        return path

    def manifest(self, status: str) -> None:
        doc = {
            "command": self.command,
            "status": status,
            "config": self.cfg.to_dict(),
            "config_hash": self.cfg.hash(),
            "seed": self.seed,
            "workers": self.workers,
            "outputs": self.outputs,
            "notes": self.notes,
            "versions": {
                "matgmc": __version__,
                "python": platform.python_version(),
                "numpy": np.__version__,
                "scipy": scipy.__version__,
            },
            "timestamp": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        }
        (self.out / "manifest.json").write_text(json.dumps(doc, indent=2, sort_keys=True, default=_jsonable) + "\n")

    # model objects

    def spec(self, epsilon: float | None = None) -> KernelSpec:
        m = self.cfg.model
        return KernelSpec(m.d, m.gamma2, m.L, m.epsilon if epsilon is None else epsilon, m.m)

    def kernel(self, epsilon: float | None = None):
        return make_kernel(self.spec(epsilon), self.cfg.model.construction)

    def params(self, sigma2: float = 1.0) -> IsotropyParams:
        m = self.cfg.model
        return IsotropyParams(m.N, m.c, sigma2)

    def lattice(self) -> LatticeSpec:
        g, d = self.cfg.grid, self.cfg.model.d
        return LatticeSpec(d, g.n_per_side, g.spacing, g.origin)

    def sampler(self) -> FieldSampler:
        k = self.kernel()
        lat = self.lattice()
        if lat.spacing > k.spec.epsilon:
            self.notes.append({"warning": "grid spacing exceeds epsilon; the lattice cannot resolve the cutoff"})
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            s = FieldSampler(lat, k, self.params(k.sigma2), self.cfg.run.backend)
        self.notes.extend(r for r in s.records if r not in self.notes)
        for r in s.records:
            print(f"warning: {r['warning']}", file=sys.stderr)
        return s

    def whole_region(self) -> Box:
        lat = self.lattice()
        lo = lat.origin
        return Box(lo, tuple(o + lat.n_per_side * lat.spacing for o in lo))


def _cell(v) -> str:
    if isinstance(v, (float, np.floating)):
        return "%.17g" % v
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    return str(v)


def _jsonable(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, tuple):
        return list(o)
    raise TypeError(f"not JSON serializable: {type(o)}")


# ---------------------------------------------------------------- commands


def cmd_validate(run: Run) -> int:
    report = oracles.oracle_report(run.seed)
    run.write_json("oracle_report.json", report)
    failed = [r for r in report if not r["passed"]]
    for r in report:
        print(f"{'PASS' if r['passed'] else 'FAIL'}  {r['name']}  rel_error={r['rel_error']:.3g}")
    if failed:
        print(f"validation failed: {failed[0]['name']}", file=sys.stderr)
        return EXIT_VALIDATION
    return EXIT_OK


def cmd_synth(run: Run) -> int:
    f = synthesize_replica(run.sampler(), run.seed, 0)
    path, side = write_snapshot(f, run.out / "field.mgmc")
    run.outputs += [path.name, side.name]
    return EXIT_OK


def cmd_moments(run: Run) -> int:
    config.check_chaos_hypothesis(run.cfg)
    cfg = run.cfg
    table = chaos.ensemble_moments(
        run.sampler(), cfg.moments.scales, cfg.moments.orders, cfg.run.replicas, run.seed,
        renorm_samples=cfg.run.renorm_samples, workers=run.workers,
    )
    m = cfg.model
    run.write_csv(
        "moments.csv",
        ["scale", "order", "estimate", "std_error", "n_replicas", "epsilon", "gamma2", "N", "c", "d", "seed"],
        [[r.scale, r.order, r.estimate, r.std_error, r.n_replicas, m.epsilon, m.gamma2, m.N, m.c, m.d, run.seed] for r in table.rows],
    )
    if len(cfg.moments.scales) >= 4:
        fits = chaos.zeta_fit(table)
        run.write_csv(
            "zeta.csv",
            ["order", "slope", "slope_se", "slope_logcorrected", "theory_zeta"],
            [[k, f.slope, f.slope_se, f.slope_logcorrected, f.theory_zeta] for k, f in sorted(fits.items())],
        )
    else:
        run.notes.append({"warning": "fewer than 4 scales: zeta.csv not written"})
    return EXIT_OK


def cmd_pair_correlation(run: Run) -> int:
    kernel, params = run.kernel(), run.params()
    rows = []
    for r in run.cfg.pair_correlation.r_values:
        exact = chaos.pair_correlation(r, kernel, params)
        if float(kernel.limit(r)) > 0:
            asym = chaos.pair_correlation_asymptotic(r, kernel, params)
        else:
            asym = math.nan
        rows.append([r, exact, asym, exact / asym])
    run.write_csv("paircorr.csv", ["r", "exact", "asymptotic", "ratio"], rows)
    return EXIT_OK


def cmd_angular(run: Run) -> int:
    a, m = run.cfg.angular, run.cfg.model
    params, kernel = run.params(), run.kernel()
    rows = []
    for i, kind in enumerate(a.kinds):
        rng = streams.stream(run.seed, streams.ANGULAR, i)
        if kind == "hciz":
            est = angular.hciz_mc(a.D, a.Dp, a.theta, a.n_samples, rng)
            rows.append(["hciz", m.N, 0, json.dumps({"D": a.D, "Dp": a.Dp, "theta": a.theta}), est])
        elif kind == "morozov":
            est = angular.morozov_moment_mc(0, 0, a.D, a.Dp, a.coef, a.n_samples, rng)
            rows.append(["morozov", m.N, 0, json.dumps({"i": 0, "j": 0, "u": a.D, "up": a.Dp, "coef": a.coef}), est])
        else:
            for j, r in enumerate(a.r_values):
                est = angular.kpoint_trace_sum([[0.0] * m.d, [r] + [0.0] * (m.d - 1)], kernel, params, a.n_samples,
                                               streams.stream(run.seed, streams.ANGULAR, 100 + j))
                rows.append(["kpoint_sum", m.N, 2, json.dumps({"r": r}), est])
    run.write_csv(
        "angular.csv",
        ["integral_kind", "N", "k", "parameters_json", "estimate", "std_error", "ess", "n_samples", "seed"],
        [[kind, n, k, p, e.value, e.std_error, e.ess, e.n_samples, run.seed] for kind, n, k, p, e in rows],
    )
    return EXIT_OK


def cmd_cauchy(run: Run) -> int:
    config.check_chaos_hypothesis(run.cfg)
    cfg = run.cfg
    table = chaos.cauchy_l2_check(
        run.lattice(), run.spec(), run.params(), cfg.cauchy.epsilon_list, run.whole_region(),
        cfg.run.replicas, run.seed, cfg.model.construction, cfg.run.backend, cfg.run.renorm_samples, run.workers,
    )
    run.write_csv(
        "cauchy.csv",
        ["epsilon", "epsilon_prime", "l2_diff", "std_error", "second_eps", "second_eps_prime", "cross"],
        [[r.epsilon, r.epsilon_prime, r.l2_diff, r.std_error, r.second_eps, r.second_eps_prime, r.cross] for r in table.rows],
    )
    return EXIT_OK


COMMANDS = {
    "validate": cmd_validate,
    "synth": cmd_synth,
    "moments": cmd_moments,
    "pair-correlation": cmd_pair_correlation,
    "angular": cmd_angular,
    "cauchy": cmd_cauchy,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mgmc", description="Matrix-valued Gaussian multiplicative chaos experiments.")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", type=Path, help="INI configuration file")
    p.add_argument("--seed", type=int, help="master seed (u64), overrides [run] seed")
    p.add_argument("--workers", type=int, help="worker threads; falls back to MGMC_WORKERS, then [run] workers")
    p.add_argument("--out", help="output directory, overrides [run] output_dir")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = config.load(args.config) if args.config else config.RunConfig()
        cfg = cfg.override(args.seed, None, args.out)
        workers = args.workers
        if workers is None:
            workers = int(os.environ["MGMC_WORKERS"]) if "MGMC_WORKERS" in os.environ else cfg.run.workers
        if workers < 1:
            raise config.ConfigError(f"--workers must be >= 1, got {workers}")
        run = Run(args.command, cfg, workers)
    except (config.ConfigError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        code = COMMANDS[args.command](run)
    except config.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        run.manifest("config_error")
        return EXIT_CONFIG
    except Exception as exc:  # surfaced with context, never a traceback dump
        print(f"runtime error in {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        run.manifest("runtime_error")
        return EXIT_RUNTIME
    run.manifest("ok" if code == EXIT_OK else "validation_failed")
    return code


if __name__ == "__main__":
    sys.exit(main())
