"""Run configuration: scenario presets and strict INI parsing.

One flat configuration file describes a run.  Unknown sections or keys are
rejected outright so misspelled settings cannot silently fall back to
defaults, and every range violation is reported with the offending key.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass

__all__ = [
    "ConfigError",
    "ScenarioSpec",
    "OptimizationConfig",
    "OracleConfig",
    "parse_config",
    "parse_oracle_config",
    "load_config",
]

PRESETS = (
    "bridge_correlated",
    "bridge_kernel",
    "poisson_dirichlet",
    "poisson_tracking",
    "custom",
)


class ConfigError(ValueError):
    """Malformed or out-of-range configuration."""


@dataclass
class ScenarioSpec:
    """Which problem to solve: geometry, boundary regions and load model."""

    preset: str
    objective: str = "compliance"
    nx: int = 170
    ny: int = 70
    box: tuple = (0.0, 1.7, 0.0, 0.7)
    alpha: float = 0.0
    kernel_index: int = 1
    correlation_length: float = 0.1
    amplitude_x: float = 1.0e5
    amplitude_y: float = 1.0e6
    load_segment_a: tuple = (0.25, 0.55)
    load_segment_b: tuple = (1.15, 1.45)
    load_vector_a: tuple = (1.0, -1.0)
    load_vector_b: tuple = (-1.0, 1.0)
    lame_lambda: float = 0.576923076923077
    lame_mu: float = 0.384615384615385
    holes: tuple = ()
    source_value: float = 1.0
    tracking_box: tuple = (0.35, 0.65, 0.35, 0.65)
    tracking_target: float = 0.05


@dataclass
class OptimizationConfig:
    """Everything the optimization loop needs besides the scenario itself."""

    scenario: ScenarioSpec
    volume_target: float = 0.35
    iterations: int = 250
    lambda0: float = 0.0
    b0: float | None = None  # None: scaled from the initial objective
    b_growth: float = 1.2
    b_max_factor: float = 1.0e3
    al_update_every: int = 5
    cfl: float = 0.5
    redistance_every: int = 5
    cholesky_epsilon: float = 1.0e-10
    cholesky_max_rank: int | None = None
    truncate_rank: bool = False
    ersatz: float = 1.0e-3
    solver_tol: float = 1.0e-10
    velocity_smoothing: float | None = None  # None: h_min^2
    snapshot_every: int = 50
    output_dir: str | None = None


@dataclass
class OracleConfig:
    """Settings for the dense verification batteries."""

    seed: int = 20240901
    dimension: int = 20
    instances: int = 100
    cor_rank: int = 5
    mc_instances: int = 10
    mc_samples: int = 100000
    fd_step: float = 1.0e-5


def _parse_floats(text: str, count: int, key: str) -> tuple:
    parts = [p.strip() for p in text.split(",")]
    if len(parts) != count:
        raise ConfigError(f"key '{key}': expected {count} comma-separated numbers")
    try:
        return tuple(float(p) for p in parts)
    except ValueError as err:
        raise ConfigError(f"key '{key}': {err}") from None


def _parse_holes(text: str, key: str) -> tuple:
    text = text.strip()
    if text in ("", "none"):
        return ()
    if text == "default":
        return ("default",)
    out = []
    for chunk in text.split(";"):
        chunk = chunk.strip()
        if not chunk:
            continue
        kind, _, params = chunk.partition(":")
        kind = kind.strip()
        if kind == "circle":
            out.append(("circle",) + _parse_floats(params, 3, key))
        elif kind == "rect":
            out.append(("rect",) + _parse_floats(params, 4, key))
        else:
            raise ConfigError(f"key '{key}': unknown hole kind {kind!r}")
    return tuple(out)


_SCENARIO_KEYS = {
    "preset": str,
    "objective": str,
    "nx": int,
    "ny": int,
    "box": "floats4",
    "alpha": float,
    "kernel_index": int,
    "correlation_length": float,
    "amplitude_x": float,
    "amplitude_y": float,
    "load_segment_a": "floats2",
    "load_segment_b": "floats2",
    "load_vector_a": "floats2",
    "load_vector_b": "floats2",
    "lame_lambda": float,
    "lame_mu": float,
    "holes": "holes",
    "source_value": float,
    "tracking_box": "floats4",
    "tracking_target": float,
}

_OPTIMIZATION_KEYS = {
    "volume_target": float,
    "iterations": int,
    "lambda0": float,
    "b0": "optfloat",
    "b_growth": float,
    "b_max_factor": float,
    "al_update_every": int,
    "cfl": float,
    "redistance_every": int,
    "cholesky_epsilon": float,
    "cholesky_max_rank": "optint",
    "truncate_rank": "bool",
    "ersatz": float,
    "solver_tol": float,
    "velocity_smoothing": "optfloat",
    "snapshot_every": int,
}

_OUTPUT_KEYS = {"directory": str}

_ORACLE_KEYS = {
    "seed": int,
    "dimension": int,
    "instances": int,
    "cor_rank": int,
    "mc_instances": int,
    "mc_samples": int,
    "fd_step": float,
}

# Per-preset defaults layered over the dataclass defaults.
_PRESET_SCENARIO = {
    "bridge_correlated": {
        "objective": "compliance",
        "nx": 170,
        "ny": 70,
        "box": (0.0, 1.7, 0.0, 0.7),
        "holes": ("default",),
    },
    "bridge_kernel": {
        "objective": "compliance",
        "nx": 160,
        "ny": 40,
        "box": (0.0, 2.0, 0.0, 0.5),
        "holes": ("default",),
    },
    "poisson_dirichlet": {
        "objective": "dirichlet_energy",
        "nx": 64,
        "ny": 64,
        "box": (0.0, 1.0, 0.0, 1.0),
        "holes": ("default",),
    },
    "poisson_tracking": {
        "objective": "tracking",
        "nx": 64,
        "ny": 64,
        "box": (0.0, 1.0, 0.0, 1.0),
        "holes": ("default",),
    },
}

_PRESET_OPTIMIZATION = {
    "bridge_correlated": {"volume_target": 0.35, "iterations": 250},
    "bridge_kernel": {
        "volume_target": 0.75,
        "iterations": 250,
        "cholesky_max_rank": 5,
        "truncate_rank": True,
        "cholesky_epsilon": 1.0e-8,
    },
    "poisson_dirichlet": {"volume_target": 0.5, "iterations": 100},
    "poisson_tracking": {"volume_target": 0.5, "iterations": 100},
}

# Keys a custom scenario must spell out instead of inheriting.
_CUSTOM_REQUIRED = ("objective", "nx", "ny", "box")
_CUSTOM_REQUIRED_OPT = ("volume_target", "iterations")


def _convert(kind, raw: str, key: str):
    if kind is str:
        return raw.strip()
    if kind is int:
        try:
            return int(raw)
        except ValueError:
            raise ConfigError(f"key '{key}': expected an integer, got {raw!r}") from None
    if kind is float:
        try:
            return float(raw)
        except ValueError:
            raise ConfigError(f"key '{key}': expected a number, got {raw!r}") from None
    if kind == "floats2":
        return _parse_floats(raw, 2, key)
    if kind == "floats4":
        return _parse_floats(raw, 4, key)
    if kind == "holes":
        return _parse_holes(raw, key)
    if kind == "optfloat":
        return None if raw.strip() in ("", "auto", "none") else _convert(float, raw, key)
    if kind == "optint":
        return None if raw.strip() in ("", "auto", "none") else _convert(int, raw, key)
    if kind == "bool":
        val = raw.strip().lower()
        if val in ("true", "yes", "1", "on"):
            return True
        if val in ("false", "no", "0", "off"):
            return False
        raise ConfigError(f"key '{key}': expected a boolean, got {raw!r}")
    raise AssertionError(kind)


def _read_section(parser, name: str, schema: dict) -> dict:
    if not parser.has_section(name):
        return {}
    out = {}
    for key, raw in parser.items(name):
        if key not in schema:
            raise ConfigError(f"unknown key '{key}' in section [{name}]")
        out[key] = _convert(schema[key], raw, key)
    return out


def parse_config(text: str) -> tuple[ScenarioSpec, OptimizationConfig]:
    """Parse a configuration text into a fully resolved (scenario, run) pair.

    Raises
    ------
    ConfigError
        On syntax errors (with line numbers), unknown keys, missing
        requirements or range violations (named per key).
    """
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as err:
        raise ConfigError(f"config parse error: {err}") from None

    for section in parser.sections():
        if section not in ("scenario", "optimization", "output", "oracle"):
            raise ConfigError(f"unknown section [{section}]")

    scen_raw = _read_section(parser, "scenario", _SCENARIO_KEYS)
    opt_raw = _read_section(parser, "optimization", _OPTIMIZATION_KEYS)
    out_raw = _read_section(parser, "output", _OUTPUT_KEYS)
    _read_section(parser, "oracle", _ORACLE_KEYS)  # validated, used by the oracle verb

    if "preset" not in scen_raw:
        raise ConfigError("key 'preset' is required in section [scenario]")
    preset = scen_raw["preset"]
    if preset not in PRESETS:
        raise ConfigError(f"key 'preset': unknown preset {preset!r}")

    if preset == "custom":
        for key in _CUSTOM_REQUIRED:
            if key not in scen_raw:
                raise ConfigError(f"custom scenario requires key '{key}'")
        for key in _CUSTOM_REQUIRED_OPT:
            if key not in opt_raw:
                raise ConfigError(f"custom scenario requires key '{key}' in [optimization]")
        scen_values = dict(scen_raw)
    else:
        scen_values = dict(_PRESET_SCENARIO[preset])
        scen_values.update(scen_raw)
        opt_defaults = dict(_PRESET_OPTIMIZATION[preset])
        opt_defaults.update(opt_raw)
        opt_raw = opt_defaults

    scenario = ScenarioSpec(**scen_values)
    config = OptimizationConfig(scenario=scenario, **opt_raw)
    if "directory" in out_raw:
        config.output_dir = out_raw["directory"]

    _validate(scenario, config)
    return scenario, config


def parse_oracle_config(text: str) -> OracleConfig:
    """Parse only the [oracle] section (strictly), with defaults elsewhere."""
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as err:
        raise ConfigError(f"config parse error: {err}") from None
    raw = _read_section(parser, "oracle", _ORACLE_KEYS)
    cfg = OracleConfig(**raw)
    if cfg.dimension < 2 or cfg.dimension > 200:
        raise ConfigError("key 'dimension': must lie in [2, 200]")
    if cfg.instances < 1 or cfg.mc_instances < 1:
        raise ConfigError("key 'instances': must be positive")
    if cfg.mc_samples < 100:
        raise ConfigError("key 'mc_samples': at least 100 samples")
    if not 0.0 < cfg.fd_step < 1.0:
        raise ConfigError("key 'fd_step': must lie in (0, 1)")
    return cfg


def load_config(path) -> tuple[ScenarioSpec, OptimizationConfig]:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read())


def _validate(scenario: ScenarioSpec, config: OptimizationConfig) -> None:
    x0, x1, y0, y1 = scenario.box
    if x1 <= x0 or y1 <= y0:
        raise ConfigError("key 'box': needs positive width and height")
    if scenario.nx < 1 or scenario.ny < 1:
        raise ConfigError("key 'nx'/'ny': subdivisions must be positive")
    if scenario.objective not in ("compliance", "dirichlet_energy", "tracking"):
        raise ConfigError(f"key 'objective': unknown objective {scenario.objective!r}")
    if abs(scenario.alpha) > 1.0:
        raise ConfigError(f"key 'alpha': must lie in [-1, 1], got {scenario.alpha}")
    if scenario.kernel_index not in (1, 2, 3):
        raise ConfigError("key 'kernel_index': must be 1, 2 or 3")
    if scenario.correlation_length <= 0.0:
        raise ConfigError("key 'correlation_length': must be positive")
    if scenario.amplitude_x < 0.0 or scenario.amplitude_y < 0.0:
        raise ConfigError("key 'amplitude_x'/'amplitude_y': must be non-negative")
    if scenario.lame_mu <= 0.0 or scenario.lame_lambda + scenario.lame_mu <= 0.0:
        raise ConfigError("key 'lame_lambda'/'lame_mu': invalid material")
    area = (x1 - x0) * (y1 - y0)
    if not 0.0 < config.volume_target < area:
        raise ConfigError(
            f"key 'volume_target': must lie in (0, {area}), got {config.volume_target}"
        )
    if config.iterations < 0:
        raise ConfigError("key 'iterations': must be non-negative")
    if not 0.0 < config.cfl <= 0.9:
        raise ConfigError("key 'cfl': must lie in (0, 0.9]")
    if not 0.0 < config.ersatz < 1.0:
        raise ConfigError("key 'ersatz': must lie in (0, 1)")
    if not 0.0 < config.solver_tol < 1.0:
        raise ConfigError("key 'solver_tol': must lie in (0, 1)")
    if config.cholesky_epsilon <= 0.0:
        raise ConfigError("key 'cholesky_epsilon': must be positive")
    if config.cholesky_max_rank is not None and config.cholesky_max_rank < 1:
        raise ConfigError("key 'cholesky_max_rank': must be positive")
    if config.redistance_every < 1 or config.al_update_every < 1:
        raise ConfigError("key 'redistance_every'/'al_update_every': must be >= 1")
    if config.b_growth < 1.0:
        raise ConfigError("key 'b_growth': must be >= 1")
    if config.snapshot_every < 1:
        raise ConfigError("key 'snapshot_every': must be >= 1")
    if config.velocity_smoothing is not None and config.velocity_smoothing < 0.0:
        raise ConfigError("key 'velocity_smoothing': must be non-negative")
