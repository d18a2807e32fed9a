"""Experiment configuration files: flat ``dotted.key = value`` lines.

Blank lines and ``#`` comments are ignored. Lists are comma separated.
Later sources override earlier ones: preset, then file, then ``--set``.
"""

from __future__ import annotations

from dataclasses import dataclass, fields, replace

from .direct import BoxBounds
from .harness import ExperimentConfig
from .skycrane import SkycraneParams


class ConfigError(ValueError):
    pass


def _floats(s):
    return tuple(float(t) for t in s.split(",") if t.strip())


def _bool(s):
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _opt_int(s):
    return None if s.strip().lower() in ("none", "off", "") else int(s)


# key -> (parser, target, field name); target is "experiment", "tuning" or "validate"
SCHEMA = {
    "experiment.parameterization": (str, "experiment", "parameterization"),
    "experiment.n_runs": (int, "experiment", "n_runs"),
    "experiment.t_steps": (int, "experiment", "t_steps"),
    "experiment.dt": (float, "experiment", "dt"),
    "experiment.cost": (str, "experiment", "cost"),
    "experiment.alpha": (float, "experiment", "alpha"),
    "experiment.seed": (int, "experiment", "seed"),
    "experiment.discard_steps": (int, "experiment", "discard_steps"),
    "experiment.crn": (_bool, "experiment", "crn"),
    "experiment.threads": (int, "experiment", "threads"),
    "truth.process_var": (_floats, "experiment", "process_var"),
    "truth.noise_convention": (str, "experiment", "noise_convention"),
    "truth.sensor_var": (_floats, "experiment", "sensor_var"),
    "truth.p0": (_floats, "experiment", "truth_p0"),
    "filter.meas_var": (_floats, "experiment", "meas_var"),
    "filter.x0": (_floats, "experiment", "x0"),
    "filter.p0": (_floats, "experiment", "p0"),
    "filter.joseph": (_bool, "experiment", "joseph"),
    "filter.fixed_qz": (float, "experiment", "fixed_qz"),
    "lqr.q_con": (_floats, "experiment", "q_con"),
    "lqr.r_con": (_floats, "experiment", "r_con"),
    "tuning.lower": (_floats, "tuning", "lower"),
    "tuning.upper": (_floats, "tuning", "upper"),
    "tuning.n_seed": (int, "tuning", "n_seed"),
    "tuning.max_iterations": (int, "tuning", "max_iterations"),
    "tuning.min_improvement": (float, "tuning", "min_improvement"),
    "tuning.patience": (_opt_int, "tuning", "patience"),
    "tuning.direct_evaluations": (_opt_int, "tuning", "direct_evaluations"),
    "tuning.dof": (float, "tuning", "dof"),
    "tuning.optimize_dof": (_bool, "tuning", "optimize_dof"),
    "tuning.kernel": (str, "tuning", "kernel"),
    "tuning.center": (_bool, "tuning", "center"),
    "tuning.n_starts": (int, "tuning", "n_starts"),
    "validate.n_runs": (int, "validate", "n_runs"),
    "validate.n_repeats": (int, "validate", "n_repeats"),
}
SKYCRANE_KEYS = {f"skycrane.{f.name}" for f in fields(SkycraneParams)}

PRESETS = {
    "skycrane-1d": {
        "experiment.parameterization": "1d",
        "experiment.n_runs": "200",
        "tuning.lower": "0.01",
        "tuning.upper": "1",
        "tuning.n_seed": "10",
        "tuning.max_iterations": "50",
    },
    "skycrane-2d": {
        "experiment.parameterization": "2d",
        "experiment.n_runs": "200",
        "filter.fixed_qz": "0.1",
        "tuning.lower": "0.01, 0.001",
        "tuning.upper": "1, 1",
        "tuning.n_seed": "20",
        "tuning.max_iterations": "80",
    },
    "skycrane-3d": {
        "experiment.parameterization": "3d",
        "experiment.n_runs": "200",
        "tuning.lower": "0.01, 0.01, 0.001",
        "tuning.upper": "1, 1, 1",
        "tuning.n_seed": "30",
        "tuning.max_iterations": "100",
    },
}


@dataclass(frozen=True)
class TuningSettings:
    lower: tuple = (0.01,)
    upper: tuple = (1.0,)
    n_seed: int = 10
    max_iterations: int = 50
    min_improvement: float = 1e-4
    patience: int | None = 10
    direct_evaluations: int | None = None
    dof: float = 5.0
    optimize_dof: bool = False
    kernel: str = "matern52"
    center: bool = True
    n_starts: int = 8

    @property
    def bounds(self) -> BoxBounds:
        return BoxBounds(self.lower, self.upper)


@dataclass(frozen=True)
class ValidateSettings:
    n_runs: int = 200
    n_repeats: int = 50


@dataclass(frozen=True)
class RunConfig:
    experiment: ExperimentConfig
    tuning: TuningSettings
    validate: ValidateSettings
    entries: dict  # resolved raw key -> value strings, for the manifest


def parse_text(text: str, origin: str = "<config>") -> dict[str, tuple[str, str]]:
    """Parse config text into ``key -> (value, location)``."""
    out = {}
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{origin}:{n}: expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"{origin}:{n}: missing key")
        out[key] = (value, f"{origin}:{n}")
    return out


def build(entries: dict[str, tuple[str, str]]) -> RunConfig:
    """Typed configuration from raw entries; errors name the source line."""
    groups: dict[str, dict] = {"experiment": {}, "tuning": {}, "validate": {}}
    sky = {}
    for key, (value, where) in entries.items():
        try:
            if key in SCHEMA:
                parse, target, name = SCHEMA[key]
                groups[target][name] = parse(value)
            elif key in SKYCRANE_KEYS:
                sky[key.split(".", 1)[1]] = float(value)
            else:
                raise ConfigError(f"{where}: unknown key {key!r}")
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(f"{where}: bad value for {key}: {exc}") from None
    try:
        exp = ExperimentConfig(params=SkycraneParams(**sky), **groups["experiment"])
        tun = TuningSettings(**groups["tuning"])
        tun.bounds  # validates lengths and ordering
        val = ValidateSettings(**groups["validate"])
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"invalid configuration: {exc}") from None
    dims = {"1d": 1, "2d": 2, "3d": 3}[exp.parameterization]
    if len(tun.lower) != dims:
        raise ConfigError(f"tuning bounds have {len(tun.lower)} entries but "
                          f"parameterization {exp.parameterization} needs {dims}")
    if tun.n_seed < 2 or tun.max_iterations < 1:
        raise ConfigError("invalid configuration: need tuning.n_seed >= 2 and tuning.max_iterations >= 1")
    if len(exp.r_con) != 2 or min(exp.r_con) <= 0:
        raise ConfigError("lqr.r_con must hold two positive entries (R_con positive definite)")
    if len(exp.q_con) != 6 or min(exp.q_con) < 0:
        raise ConfigError("lqr.q_con must hold six non-negative entries")
    if val.n_runs < 1 or val.n_repeats < 1:
        raise ConfigError("invalid configuration: validate counts must be positive")
    return RunConfig(exp, tun, val, {k: v for k, (v, _) in sorted(entries.items())})


def load(path=None, preset: str | None = None, overrides=(), seed: int | None = None,
         threads: int | None = None) -> RunConfig:
    entries: dict[str, tuple[str, str]] = {}
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        entries.update({k: (v, f"preset {preset}") for k, v in PRESETS[preset].items()})
    if path is not None:
        try:
            with open(path) as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        entries.update(parse_text(text, str(path)))
    for i, item in enumerate(overrides, start=1):
        if "=" not in item:
            raise ConfigError(f"--set #{i}: expected KEY=VALUE, got {item!r}")
        k, v = (s.strip() for s in item.split("=", 1))
        entries[k] = (v, f"--set #{i}")
    if seed is not None:
        entries["experiment.seed"] = (str(seed), "--seed")
    if threads is not None:
        entries["experiment.threads"] = (str(threads), "--threads")
    return build(entries)


def with_experiment(cfg: RunConfig, **changes) -> RunConfig:
    return replace(cfg, experiment=replace(cfg.experiment, **changes))
