"""Frozen dataclasses for experiment configuration and a YAML/JSON loader with env-var interpolation."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
import re
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .exceptions import ConfigError

_ENV_PATTERN = re.compile(r"\$\{([^}]+)\}")

PROBLEM_IDS = ("tp1", "tp2", "tp3", "custom")
CONTROL_KINDS = ("optimal", "constant", "linear")
BETA_KINDS = ("shift", "constant", "negate")
BACKENDS = ("deterministic", "regression")
VARIANTS = ("plain", "symmetrized")


def _interpolate_env(value: str) -> str:
    """Replace ${ENV_VAR} placeholders with environment variable values."""

    def _replace(match: re.Match) -> str:
        env_key = match.group(1)
        env_val = os.environ.get(env_key)
        if env_val is None:
            raise ConfigError(f"Environment variable '{env_key}' is not set")
        return env_val

    return _ENV_PATTERN.sub(_replace, value)


def _walk_and_interpolate(obj: Any) -> Any:
    """Recursively interpolate env vars in strings throughout a nested structure."""
    if isinstance(obj, str):
        return _interpolate_env(obj)
    if isinstance(obj, dict):
        return {k: _walk_and_interpolate(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_walk_and_interpolate(v) for v in obj]
    return obj


@dataclass(frozen=True)
class ControlConfig:
    kind: str = "optimal"  # "optimal" = the problem's reference control
    value: float = 0.0  # constant control value
    gain: float = 0.0  # linear feedback u = -gain * x
    offset: float = 0.0  # added to every emitted control (perturbation studies)


@dataclass(frozen=True)
class ProblemConfig:
    id: str = "tp1"
    params: dict[str, float] = field(default_factory=dict)
    factory: str = ""  # "package.module:function" for id == "custom"
    control: ControlConfig = field(default_factory=ControlConfig)


@dataclass(frozen=True)
class SimulationConfig:
    particles: int = 2000
    steps: int = 200
    horizon: float = 1.0
    x0: list[float] = field(default_factory=lambda: [1.0])
    seed: int = 20240601
    workers: int = 1
    chaos_sizes: list[int] = field(default_factory=lambda: [100, 400, 1600])
    chaos_replicates: int = 0  # 0 disables the mean-path convergence study


@dataclass(frozen=True)
class BetaConfig:
    kind: str = "shift"  # "shift": beta = alpha + value; "constant"; "negate": beta = -alpha
    value: float = 1.0


@dataclass(frozen=True)
class SpikeConfig:
    t0: float = 0.0
    eps: float = 0.05
    beta: BetaConfig = field(default_factory=BetaConfig)


@dataclass(frozen=True)
class OrderStudyConfig:
    eps_grid: list[float] = field(default_factory=lambda: [0.2, 0.1, 0.05, 0.025, 0.0125])
    k: int = 1
    particles: int = 0  # 0 = use simulation.particles
    steps: int = 400  # 0 = use simulation.steps


@dataclass(frozen=True)
class AdjointConfig:
    backend: str = "deterministic"
    degree: int = 2
    ridge: float = 1e-8
    symmetrize: bool = False
    sweep_tol: float = 1e-12
    max_sweeps: int = 50


@dataclass(frozen=True)
class ThirdAdjointConfig:
    variant: str = "plain"
    kappa: float = 10.0
    tol: float = 1e-10
    max_iter: int = 30
    particles: int = 256  # cap on N for the pair arrays
    subsample: int = 0  # 0 = dense pairs


@dataclass(frozen=True)
class MaxPrincipleConfig:
    u_points: int = 41
    u_span: float = 2.0
    relative: bool = True  # grid centred on the candidate control per particle
    u_values: list[float] = field(default_factory=list)  # explicit grid overrides span/points
    t_points: int = 50
    tol: float = 0.01


@dataclass(frozen=True)
class ToleranceConfig:
    fd_step: float = 1e-4
    fd_rtol: float = 1e-5
    lions_rtol: float = 1e-6
    fd_points: int = 100
    duality_rel: float = 0.02
    duality_sigmas: float = 3.0
    eps_refinement: list[float] = field(default_factory=lambda: [0.1, 0.05, 0.025])
    slope_margin: float = 0.1  # defect slope must exceed 2k by this much
    oracle_rtol: float = 0.02
    discrete_oracle_rtol: float = 1e-3  # adjoints vs the exact recursion of their own scheme
    chaos_margin: float = 0.3
    identity_atol: float = 1e-10


@dataclass(frozen=True)
class OutputConfig:
    directory: str = "out"
    dump_paths: bool = False
    dump_adjoints: bool = False


@dataclass(frozen=True)
class LoggingConfig:
    level: str = "INFO"
    format: str = "json"  # "json" or "text"


@dataclass(frozen=True)
class ExperimentConfig:
    problem: ProblemConfig = field(default_factory=ProblemConfig)
    simulation: SimulationConfig = field(default_factory=SimulationConfig)
    spike: SpikeConfig = field(default_factory=SpikeConfig)
    order_study: OrderStudyConfig = field(default_factory=OrderStudyConfig)
    adjoint: AdjointConfig = field(default_factory=AdjointConfig)
    third: ThirdAdjointConfig = field(default_factory=ThirdAdjointConfig)
    maxprin: MaxPrincipleConfig = field(default_factory=MaxPrincipleConfig)
    tolerances: ToleranceConfig = field(default_factory=ToleranceConfig)
    output: OutputConfig = field(default_factory=OutputConfig)
    logging: LoggingConfig = field(default_factory=LoggingConfig)


def _get_dataclass_type(ft: Any) -> type | None:
    """Return the underlying dataclass type from a type annotation (handles Optional/X|None)."""
    if isinstance(ft, type) and hasattr(ft, "__dataclass_fields__"):
        return ft
    if isinstance(ft, types.UnionType):
        args = [a for a in ft.__args__ if a is not type(None)]
        if len(args) == 1 and isinstance(args[0], type) and hasattr(args[0], "__dataclass_fields__"):
            return args[0]
    origin = getattr(ft, "__origin__", None)
    if origin is typing.Union:
        args = [a for a in ft.__args__ if a is not type(None)]
        if len(args) == 1 and isinstance(args[0], type) and hasattr(args[0], "__dataclass_fields__"):
            return args[0]
    return None


def _build_nested(cls: type, data: dict[str, Any]) -> Any:
    """Construct a frozen dataclass, recursively building nested dataclass fields."""
    if not isinstance(data, dict):
        return data
    field_types = {f.name: f.type for f in cls.__dataclass_fields__.values()}
    kwargs: dict[str, Any] = {}
    for key, value in data.items():
        if key not in field_types:
            continue
        ft = field_types[key]
        # Resolve string annotations to actual types in the module scope
        if isinstance(ft, str):
            ft = eval(ft, globals(), {cls.__name__: cls})  # noqa: S307
        dc_type = _get_dataclass_type(ft)
        if dc_type is not None and isinstance(value, dict):
            kwargs[key] = _build_nested(dc_type, value)
        else:
            kwargs[key] = value
    return cls(**kwargs)


def load_config(path: str | Path) -> ExperimentConfig:
    """Load and validate an experiment configuration (JSON or YAML)."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"Configuration file not found: {path}")

    with open(path) as f:
        try:
            raw = yaml.safe_load(f)
        except yaml.YAMLError as exc:
            raise ConfigError(f"Configuration file is not valid JSON/YAML: {exc}") from exc

    if not isinstance(raw, dict):
        raise ConfigError("Configuration file must be a JSON/YAML mapping")

    raw = _walk_and_interpolate(raw)
    try:
        config = _build_nested(ExperimentConfig, raw)
    except TypeError as exc:
        raise ConfigError(f"Malformed configuration section: {exc}") from exc
    validate(config)
    return config


def config_hash(config: ExperimentConfig) -> str:
    """SHA-256 of the canonical JSON form; independent of key order in the source file."""
    canonical = json.dumps(dataclasses.asdict(config), sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(canonical.encode()).hexdigest()


def with_overrides(
    config: ExperimentConfig,
    *,
    seed: int | None = None,
    out: str | None = None,
    workers: int | None = None,
) -> ExperimentConfig:
    """Return a copy with CLI overrides applied."""
    simulation = config.simulation
    if seed is not None:
        simulation = dataclasses.replace(simulation, seed=seed)
    if workers is not None:
        simulation = dataclasses.replace(simulation, workers=workers)
    output = config.output
    if out is not None:
        output = dataclasses.replace(output, directory=out)
    updated = dataclasses.replace(config, simulation=simulation, output=output)
    validate(updated)
    return updated


def validate(config: ExperimentConfig) -> None:
    """Validate configuration values."""
    problem = config.problem
    if problem.id not in PROBLEM_IDS:
        raise ConfigError(f"problem.id must be one of {', '.join(PROBLEM_IDS)}")
    if problem.id == "custom" and ":" not in problem.factory:
        raise ConfigError("problem.factory must be 'package.module:function' for custom problems")
    if problem.control.kind not in CONTROL_KINDS:
        raise ConfigError(f"problem.control.kind must be one of {', '.join(CONTROL_KINDS)}")

    sim = config.simulation
    if sim.particles < 2:
        raise ConfigError("simulation.particles must be >= 2")
    if sim.steps < 1:
        raise ConfigError("simulation.steps must be >= 1")
    if sim.horizon <= 0:
        raise ConfigError("simulation.horizon must be > 0")
    if not sim.x0:
        raise ConfigError("simulation.x0 must be a non-empty list")
    if sim.workers < 1:
        raise ConfigError("simulation.workers must be >= 1")
    if sim.seed < 0:
        raise ConfigError("simulation.seed must be >= 0")
    if sim.chaos_replicates < 0 or (sim.chaos_replicates and len(sim.chaos_sizes) < 2):
        raise ConfigError("simulation.chaos_replicates must be >= 0 with at least two chaos_sizes")

    spike = config.spike
    if spike.eps <= 0 or spike.t0 < 0 or spike.t0 + spike.eps > sim.horizon + 1e-12:
        raise ConfigError("spike must satisfy eps > 0 and 0 <= t0 < t0 + eps <= horizon")
    if spike.beta.kind not in BETA_KINDS:
        raise ConfigError(f"spike.beta.kind must be one of {', '.join(BETA_KINDS)}")

    grid = config.order_study.eps_grid
    if len(grid) < 4:
        raise ConfigError("order_study.eps_grid needs at least 4 points")
    if any(e <= 0 for e in grid):
        raise ConfigError("order_study.eps_grid values must be > 0")
    if any(b >= a for a, b in zip(grid, grid[1:])):
        raise ConfigError("order_study.eps_grid must be strictly decreasing")
    if grid[0] < 10.0 * grid[-1]:
        raise ConfigError("order_study.eps_grid must span at least a decade (max / min >= 10)")
    if config.order_study.k < 1:
        raise ConfigError("order_study.k must be >= 1")

    adj = config.adjoint
    if adj.backend not in BACKENDS:
        raise ConfigError(f"adjoint.backend must be one of {', '.join(BACKENDS)}")
    if adj.degree < 1:
        raise ConfigError("adjoint.degree must be >= 1")
    if adj.ridge < 0:
        raise ConfigError("adjoint.ridge must be >= 0")

    third = config.third
    if third.variant not in VARIANTS:
        raise ConfigError(f"third.variant must be one of {', '.join(VARIANTS)}")
    if third.kappa <= 0:
        raise ConfigError("third.kappa must be > 0")
    if third.tol <= 0:
        raise ConfigError("third.tol must be > 0")
    if third.max_iter < 1:
        raise ConfigError("third.max_iter must be >= 1")
    if third.particles < 2:
        raise ConfigError("third.particles must be >= 2")

    mp = config.maxprin
    if not mp.u_values and mp.u_points < 1:
        raise ConfigError("maxprin.u_points must be >= 1")
    if mp.t_points < 1:
        raise ConfigError("maxprin.t_points must be >= 1")

    tol = config.tolerances
    if tol.fd_step <= 0 or tol.fd_rtol <= 0:
        raise ConfigError("tolerances.fd_step and tolerances.fd_rtol must be > 0")
    if tol.oracle_rtol <= 0 or tol.discrete_oracle_rtol <= 0:
        raise ConfigError("tolerances.oracle_rtol and tolerances.discrete_oracle_rtol must be > 0")

    if config.logging.level.upper() not in ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"):
        raise ConfigError("logging.level must be a standard level name")
    if config.logging.format not in ("json", "text"):
        raise ConfigError("logging.format must be 'json' or 'text'")
