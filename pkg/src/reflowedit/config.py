"""Run configuration loaded from an INI-style file.

Recognised sections (all optional)::

    [run]        dim, steps, budget, solver, solvers, n_list, rounds, seeds, field, velocity, x0
    [endpoints]  mu0, mu1, sigma0, sigma1           (row-major lists of length d*d)
    [guidance]   eta, lambda_mix, guided_steps, inversion_eta, edit_offset
    [guidance.NAME]  same keys plus solver, steps, budget; one multiturn variant each
    [prop1]      n_targets, weight_low, weight_high
    [lqr]        lambdas, t
    [mask]       manifest, next_manifest, i, j, tau, h_factor, r_factor, sort_on

Relative paths are resolved against the config file's directory.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .attnmask import MaskParams
from .errors import ConfigError, ReflowError
from .flowcore import ConstantField, GaussianEndpoints, GaussianMarginalField, VelocityField
from .guidance import DEFAULT_STEPS, GuidanceConfig
from .io import parse_floats, parse_ints, read_config
from .solvers import SolverKind, matched_steps

EXPERIMENTS = ("order", "roundtrip", "multiturn", "prop1", "lqr-limit", "mask")


def default_endpoints(dim: int) -> GaussianEndpoints:
    """Zero-mean oracle with an anisotropic, low-variance source and unit noise."""
    if dim == 1:
        return GaussianEndpoints.standard(1)
    return GaussianEndpoints.diagonal(np.linspace(0.05, 0.5, dim), np.ones(dim))


@dataclass(frozen=True)
class Variant:
    name: str
    solver: SolverKind
    steps: int
    guidance: GuidanceConfig


@dataclass
class RunConfig:
    dim: int = 8
    steps: int = DEFAULT_STEPS
    budget: int | None = None
    solver: SolverKind = SolverKind.MIDPOINT_CACHED
    solvers: tuple[SolverKind, ...] = (SolverKind.EULER, SolverKind.MIDPOINT, SolverKind.MIDPOINT_CACHED)
    n_list: tuple[int, ...] = (8, 16, 32, 64)
    rounds: int = 8
    seeds: tuple[int, ...] = (0,)
    field_kind: str = "gaussian"
    velocity: np.ndarray | None = None
    x0: np.ndarray | None = None
    endpoints: GaussianEndpoints | None = None
    guidance: GuidanceConfig = field(default_factory=GuidanceConfig)
    edit_offset: np.ndarray | None = None
    variants: tuple[Variant, ...] = ()
    n_targets: tuple[int, ...] = (2, 3, 5)
    weight_range: tuple[float, float] = (0.5, 2.0)
    lambdas: tuple[float, ...] = (1e2, 1e3, 1e4, 1e5)
    lqr_t: float = 0.3
    mask: MaskParams = field(default_factory=MaskParams)
    manifest: Path | None = None
    next_manifest: Path | None = None

    def make_field(self) -> VelocityField:
        if self.field_kind == "gaussian":
            return GaussianMarginalField(self.endpoints or default_endpoints(self.dim))
        if self.field_kind == "zero":
            return ConstantField.zeros(self.dim)
        if self.field_kind == "constant":
            if self.velocity is None:
                raise ConfigError("field = constant needs run.velocity")
            return ConstantField(self.velocity)
        raise ConfigError(f"unknown field kind {self.field_kind!r}; expected gaussian, zero or constant")

    def with_seed(self, seed: int) -> "RunConfig":
        return replace(self, seeds=(int(seed),))


def _float(sec, key, default):
    try:
        return sec.getfloat(key, fallback=default)
    except ValueError:
        raise ConfigError(f"[{sec.name}] {key}: not a number") from None


def _int(sec, key, default):
    try:
        return sec.getint(key, fallback=default)
    except ValueError:
        raise ConfigError(f"[{sec.name}] {key}: not an integer") from None


def _vector(sec, key, dim):
    if key not in sec:
        return None
    values = np.array(parse_floats(sec[key], key))
    if values.size != dim:
        raise ConfigError(f"[{sec.name}] {key}: expected {dim} values, got {values.size}")
    return values


def _endpoints(sec, dim: int) -> GaussianEndpoints:
    def matrix(key):
        if key not in sec:
            return np.eye(dim)
        flat = parse_floats(sec[key], key)
        if len(flat) != dim * dim:
            raise ConfigError(f"[endpoints] {key}: expected {dim * dim} values, got {len(flat)}")
        return np.array(flat).reshape(dim, dim)

    mu0 = _vector(sec, "mu0", dim)
    mu1 = _vector(sec, "mu1", dim)
    zero = np.zeros(dim)
    return GaussianEndpoints(
        zero if mu0 is None else mu0, zero if mu1 is None else mu1, matrix("sigma0"), matrix("sigma1")
    )


def _guidance(sec, base: GuidanceConfig) -> GuidanceConfig:
    return GuidanceConfig(
        eta=_float(sec, "eta", base.eta),
        lambda_mix=_float(sec, "lambda_mix", base.lambda_mix),
        guided_steps=_int(sec, "guided_steps", base.guided_steps),
        inversion_eta=_float(sec, "inversion_eta", base.inversion_eta),
    )


def _steps_for(sec, solver: SolverKind, default_steps: int) -> int:
    if "budget" in sec:
        return matched_steps(solver, _int(sec, "budget", 0))
    return _int(sec, "steps", default_steps)


def _resolve(base: Path, value: str) -> Path:
    path = Path(value)
    path = path if path.is_absolute() else base / path
    if not path.exists():
        raise ConfigError(f"referenced file does not exist: {path}")
    return path


def from_parser(parser: configparser.ConfigParser, base_dir: Path = Path(".")) -> RunConfig:
    try:
        return _from_parser(parser, base_dir)
    except ReflowError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc


def _from_parser(parser, base_dir):
    run = parser["run"] if parser.has_section("run") else parser[parser.default_section]
    cfg = RunConfig()
    cfg.dim = _int(run, "dim", cfg.dim)
    if cfg.dim < 1:
        raise ConfigError("[run] dim must be >= 1")
    cfg.solver = SolverKind.parse(run.get("solver", cfg.solver.value))
    cfg.steps = _steps_for(run, cfg.solver, cfg.steps)
    cfg.budget = _int(run, "budget", None)
    if "solvers" in run:
        cfg.solvers = tuple(SolverKind.parse(s.strip()) for s in run["solvers"].split(",") if s.strip())
    if "n_list" in run:
        cfg.n_list = tuple(parse_ints(run["n_list"], "n_list"))
    cfg.rounds = _int(run, "rounds", cfg.rounds)
    if "seeds" in run:
        cfg.seeds = tuple(parse_ints(run["seeds"], "seeds"))
    if not cfg.seeds:
        raise ConfigError("[run] seeds must list at least one seed")
    cfg.field_kind = run.get("field", cfg.field_kind).strip()
    cfg.velocity = _vector(run, "velocity", cfg.dim)
    cfg.x0 = _vector(run, "x0", cfg.dim)
    if parser.has_section("endpoints"):
        cfg.endpoints = _endpoints(parser["endpoints"], cfg.dim)

    if parser.has_section("guidance"):
        g = parser["guidance"]
        cfg.guidance = _guidance(g, cfg.guidance)
        cfg.edit_offset = _vector(g, "edit_offset", cfg.dim)
    variants = []
    for name in parser.sections():
        if not name.startswith("guidance."):
            continue
        sec = parser[name]
        solver = SolverKind.parse(sec.get("solver", cfg.solver.value))
        steps = _steps_for(sec, solver, cfg.steps)
        variants.append(Variant(name.split(".", 1)[1], solver, steps, _guidance(sec, cfg.guidance)))
    if not variants:
        variants.append(Variant("default", cfg.solver, cfg.steps, cfg.guidance))
    for v in variants:
        v.guidance.check_window(v.steps)
    cfg.variants = tuple(variants)

    if parser.has_section("prop1"):
        p = parser["prop1"]
        if "n_targets" in p:
            cfg.n_targets = tuple(parse_ints(p["n_targets"], "n_targets"))
        cfg.weight_range = (_float(p, "weight_low", cfg.weight_range[0]), _float(p, "weight_high", cfg.weight_range[1]))
    if parser.has_section("lqr"):
        q = parser["lqr"]
        if "lambdas" in q:
            cfg.lambdas = tuple(parse_floats(q["lambdas"], "lambdas"))
        cfg.lqr_t = _float(q, "t", cfg.lqr_t)

    if parser.has_section("mask"):
        m = parser["mask"]
        defaults = MaskParams()
        cfg.mask = MaskParams(
            i=_int(m, "i", defaults.i),
            j=_int(m, "j", defaults.j),
            tau=_float(m, "tau", defaults.tau),
            h_factor=_float(m, "h_factor", defaults.h_factor),
            r_factor=_float(m, "r_factor", defaults.r_factor),
            sort_on=m.get("sort_on", defaults.sort_on).strip(),
        )
        if "manifest" in m:
            cfg.manifest = _resolve(base_dir, m["manifest"])
        if "next_manifest" in m:
            cfg.next_manifest = _resolve(base_dir, m["next_manifest"])
    return cfg


def load_config(path) -> RunConfig:
    path = Path(path)
    return from_parser(read_config(path), path.parent)


def empty_config() -> RunConfig:
    return from_parser(configparser.ConfigParser())
