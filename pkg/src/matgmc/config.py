"""Run configuration: an INI file with fixed sections, validated on load.

Precedence, lowest to highest: built-in defaults, the config file, command
line flags (``--seed``, ``--workers``, ``--out``).
"""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import io
import math
import re
from dataclasses import dataclass, field
from pathlib import Path


class ConfigError(ValueError):
    pass


def _floats(text: str) -> tuple:
    return tuple(float(x) for x in text.replace(",", " ").split())


def _ints(text: str) -> tuple:
    return tuple(int(x) for x in text.replace(",", " ").split())


def _strs(text: str) -> tuple:
    return tuple(x for x in text.replace(",", " ").split())


@dataclass(frozen=True)
class ModelSection:
    d: int = 1
    N: int = 2
    gamma2: float = 0.25
    c: float = 0.0
    L: float = 1.0
    m: float = 0.0
    epsilon: float = 2.0**-6
    construction: str = "auto"


@dataclass(frozen=True)
class GridSection:
    n_per_side: int = 256
    spacing: float = 2.0**-8
    origin: tuple = ()


@dataclass(frozen=True)
class RunSection:
    seed: int = 0
    replicas: int = 2048
    backend: str = "auto"
    renorm_samples: int = 1_000_000
    workers: int = 1
    output_dir: str = "out"


@dataclass(frozen=True)
class MomentsSection:
    scales: tuple = (2.0**-3, 2.0**-4, 2.0**-5, 2.0**-6)
    orders: tuple = (1, 2, 3)


@dataclass(frozen=True)
class CauchySection:
    epsilon_list: tuple = (2.0**-3, 2.0**-4, 2.0**-5, 2.0**-6)


@dataclass(frozen=True)
class PairCorrelationSection:
    r_values: tuple = (0.5, 0.1, 0.01, 1e-3, 1e-4, 1e-6, 1e-9)


@dataclass(frozen=True)
class AngularSection:
    kinds: tuple = ("hciz", "morozov", "kpoint")
    n_samples: int = 100_000
    theta: float = 0.5
    D: tuple = (1.0, 0.0)
    Dp: tuple = (0.5, -0.5)
    coef: float = 0.5
    r_values: tuple = (0.3, 0.05, 0.01)


SECTIONS = {
    "model": ModelSection,
    "grid": GridSection,
    "run": RunSection,
    "moments": MomentsSection,
    "cauchy": CauchySection,
    "pair_correlation": PairCorrelationSection,
    "angular": AngularSection,
}

_LIST_PARSERS = {
    ("grid", "origin"): _floats,
    ("moments", "scales"): _floats,
    ("moments", "orders"): _ints,
    ("cauchy", "epsilon_list"): _floats,
    ("pair_correlation", "r_values"): _floats,
    ("angular", "kinds"): _strs,
    ("angular", "D"): _floats,
    ("angular", "Dp"): _floats,
    ("angular", "r_values"): _floats,
}

CHAOS_COMMANDS = ("moments", "cauchy")


@dataclass(frozen=True)
class RunConfig:
    model: ModelSection = field(default_factory=ModelSection)
    grid: GridSection = field(default_factory=GridSection)
    run: RunSection = field(default_factory=RunSection)
    moments: MomentsSection = field(default_factory=MomentsSection)
    cauchy: CauchySection = field(default_factory=CauchySection)
    pair_correlation: PairCorrelationSection = field(default_factory=PairCorrelationSection)
    angular: AngularSection = field(default_factory=AngularSection)
    source: str = field(default="<defaults>", compare=False)

    def to_dict(self) -> dict:
        return {name: dataclasses.asdict(getattr(self, name)) for name in SECTIONS}

    def serialize(self) -> str:
        """Canonical INI text; parsing it gives back an equal config."""
        out = io.StringIO()
        for name in SECTIONS:
            out.write(f"[{name}]\n")
            for f in dataclasses.fields(SECTIONS[name]):
                out.write(f"{f.name} = {_format(getattr(getattr(self, name), f.name))}\n")
            out.write("\n")
        return out.getvalue()

    def hash(self) -> str:
        return hashlib.sha256(self.serialize().encode()).hexdigest()[:16]

    def override(self, seed: int | None = None, workers: int | None = None, output_dir: str | None = None) -> "RunConfig":
        run = self.run
        if seed is not None:
            run = dataclasses.replace(run, seed=seed)
        if workers is not None:
            run = dataclasses.replace(run, workers=workers)
        if output_dir is not None:
            run = dataclasses.replace(run, output_dir=output_dir)
        cfg = dataclasses.replace(self, run=run)
        validate(cfg, {})
        return cfg


def _format(value) -> str:
    if isinstance(value, tuple):
        return " ".join(_format(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _line_map(text: str) -> dict:
    """``(section, key) -> line number`` by a plain scan of the file."""
    lines, section = {}, None
    for no, raw in enumerate(text.splitlines(), 1):
        s = raw.strip()
        m = re.match(r"^\[([^\]]+)\]", s)
        if m:
            section = m.group(1).strip()
            lines[(section, None)] = no
            continue
        m = re.match(r"^([^=:#;\s][^=:]*?)\s*[=:]", s)
        if m and section is not None:
            lines[(section, m.group(1).strip())] = no
    return lines


def parse_text(text: str, source: str = "<string>") -> RunConfig:
    lines = _line_map(text)
    where = lambda sec, key=None: f"{source}:{lines.get((sec, key), lines.get((sec, None), 0))}"
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None
    values = {}
    for sec in cp.sections():
        if sec not in SECTIONS:
            raise ConfigError(f"{where(sec)}: unknown section [{sec}]")
        known = {f.name: f for f in dataclasses.fields(SECTIONS[sec])}
        kwargs = {}
        for key, raw in cp.items(sec):
            if key not in known:
                raise ConfigError(f"{where(sec, key)}: unknown key '{key}' in [{sec}]")
            kwargs[key] = _convert(sec, key, raw, known[key], where(sec, key))
        values[sec] = kwargs
    cfg = RunConfig(**{sec: SECTIONS[sec](**values.get(sec, {})) for sec in SECTIONS}, source=source)
    validate(cfg, lines, source)
    return cfg


def _convert(sec: str, key: str, raw: str, f: dataclasses.Field, loc: str):
    try:
        parser = _LIST_PARSERS.get((sec, key))
        if parser is not None:
            return parser(raw)
        kind = type(f.default)
        if kind is bool:
            return raw.strip().lower() in ("1", "true", "yes", "on")
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        return raw.strip()
    except ValueError:
        raise ConfigError(f"{loc}: cannot parse {key} = {raw!r}") from None


def load(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None
    return parse_text(text, str(path))


def validate(cfg: RunConfig, lines: dict, source: str | None = None) -> None:
    source = source or cfg.source
    loc = lambda sec, key: f"{source}:{lines.get((sec, key), 0)}"

    def need(ok: bool, sec: str, key: str, msg: str) -> None:
        if not ok:
            raise ConfigError(f"{loc(sec, key)}: [{sec}] {key}: {msg}")

    m, g, r = cfg.model, cfg.grid, cfg.run
    need(m.d >= 1, "model", "d", "dimension must be >= 1")
    need(m.N >= 1, "model", "N", "matrix size must be >= 1")
    need(m.gamma2 >= 0, "model", "gamma2", "must be >= 0")
    need(m.c > -1, "model", "c", "need c > -1")
    if m.N > 1:
        need(m.c <= 1.0 / (m.N - 1) + 1e-15, "model", "c", f"need c <= 1/(N-1) = {1.0 / (m.N - 1):g}")
    need(m.L > 0, "model", "L", "must be > 0")
    need(0 < m.epsilon < m.L, "model", "epsilon", "need 0 < epsilon < L")
    need(m.construction in ("auto", "nu", "pasenchenko", "sphere"), "model", "construction", "one of auto, nu, pasenchenko, sphere")
    need(g.n_per_side >= 1, "grid", "n_per_side", "must be >= 1")
    need(g.spacing > 0, "grid", "spacing", "must be > 0")
    need(len(g.origin) in (0, m.d), "grid", "origin", f"needs {m.d} coordinates")
    need(0 <= r.seed < 2**64, "run", "seed", "must be an unsigned 64-bit integer")
    need(r.replicas >= 1, "run", "replicas", "must be >= 1")
    need(r.backend in ("auto", "dense", "circulant"), "run", "backend", "one of auto, dense, circulant")
    need(r.renorm_samples >= 1000, "run", "renorm_samples", "must be >= 1000")
    need(r.workers >= 1, "run", "workers", "must be >= 1")
    need(all(o >= 1 for o in cfg.moments.orders) and cfg.moments.orders, "moments", "orders", "positive integers")
    need(all(0 < s < 1 for s in cfg.moments.scales), "moments", "scales", "scales must lie in (0, 1)")
    need(len(set(cfg.moments.scales)) == len(cfg.moments.scales), "moments", "scales", "scales must be distinct")
    need(len(cfg.cauchy.epsilon_list) >= 2 and all(0 < e < m.L for e in cfg.cauchy.epsilon_list), "cauchy", "epsilon_list", "at least two cutoffs in (0, L)")
    need(all(x > 0 for x in cfg.pair_correlation.r_values), "pair_correlation", "r_values", "must be > 0")
    a = cfg.angular
    need(set(a.kinds) <= {"hciz", "morozov", "kpoint"}, "angular", "kinds", "subset of hciz, morozov, kpoint")
    need(a.n_samples >= 1, "angular", "n_samples", "must be >= 1")
    need(math.isfinite(a.theta), "angular", "theta", "must be finite")
    need(len(a.D) == m.N and len(a.Dp) == m.N, "angular", "D", f"D and Dp need N = {m.N} entries")
    need(all(x > 0 for x in a.r_values), "angular", "r_values", "must be > 0")


def check_chaos_hypothesis(cfg: RunConfig) -> None:
    """Chaos commands need ``0 < gamma2 < d`` and orders ``k < 2d/gamma2``."""
    m = cfg.model
    if not 0 < m.gamma2 < m.d:
        raise ConfigError(f"{cfg.source}: [model] gamma2 = {m.gamma2}: chaos commands require 0<γ²<d (d = {m.d})")
    for k in cfg.moments.orders:
        if k >= 2 and not k < 2 * m.d / m.gamma2:
            raise ConfigError(f"{cfg.source}: [moments] orders: k = {k} violates k < 2d/γ² = {2 * m.d / m.gamma2:g}")
