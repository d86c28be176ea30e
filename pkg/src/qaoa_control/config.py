"""
qaoa-control Configuration
Defaults for the physics model, the learners and the experiment harness
"""

import os
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import yaml
from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from .exceptions import ConfigError

load_dotenv()

# Physics model (studied point of the nonintegrable Ising chain)
PHYSICS_CONFIG = {
    "n_sites": 4,
    "J": 1.0,
    "h_z": 0.4523,
    "h_x": 0.4045,
    "total_T": 10.0,
    "q": 8,
    "action_set": ["H1", "H2", "Y", "X|Y", "Y|Z"],
    "qaoa_action_set": ["H1", "H2"],
    "max_sites": 14,
    "adiabatic_dt": 1e-3,
}

# Numerical tolerances shared by the simulator and the distributions
NUMERICS_CONFIG = {
    "norm_tolerance": 1e-10,
    "hermitian_tolerance": 1e-12,
    "unit_clamp": 1e-6,
    "xi_min": 1e-4,
    "xi_max": 10.0,
    "log_ratio_clamp": 20.0,
}

# RL-QAOA hyperparameters
PPO_CONFIG = {
    "batch_size": 128,
    "learning_rate": 5e-4,
    "lr_decay_rate": 0.98,
    "lr_decay_steps": 50,
    "eps_continuous": 0.1,
    "eps_discrete": 1e-3,
    "ppo_epochs": 4,
    "ema": 0.95,
    "entropy_temp": 1e-1,
    "temp_decay_rate": 0.99,
    "temp_decay_steps": 50,
    "total_iters": 5000,  # not a published value; desk-scale budget
    "hidden_units": [100, 100],
    "continuous_family": "sigmoid_gaussian",
    "adam_betas": [0.9, 0.999],
    "adam_eps": 1e-8,
    "grad_clip": False,
    "grad_clip_norm": 10.0,
    "kl_threshold": 0.01,
    "eval_every": 50,
    "checkpoint_every": 500,
}

# Baselines: Powell solver, QAOA restarts, CD-QAOA / PG-QAOA training budgets
BASELINE_CONFIG = {
    "powell": {"x_tol": 1e-6, "f_tol": 1e-8, "max_iters": None},
    "inner_powell": {"x_tol": 1e-4, "f_tol": 1e-7, "max_iters": 30},
    "qaoa_restarts": 10,
    "inner_restarts": 1,
    "cd_qaoa": {"batch_size": 32, "total_iters": 300, "learning_rate": 5e-3, "eps_discrete": 0.1},
    "pg_qaoa": {},
}

# Sweep axes
SWEEP_CONFIG = {
    "algorithms": ["qaoa", "pg_qaoa", "cd_qaoa", "rl_qaoa"],
    "noise_kinds": ["classical_gaussian"],
    "strengths": [0.0, 0.1, 0.3],
    "n_sites": [4],
    "total_T": [10.0],
    "seeds": [0, 1, 2],
    "adiabatic_T": [2.0, 5.0, 10.0, 20.0, 50.0],
}

# Runtime configuration
RUNTIME_CONFIG = {
    "workers": int(os.getenv("QAOA_CONTROL_WORKERS", "1")),
    "output_dir": "runs/default",
    "schema_version": 1,
}

# Logging Configuration
LOGGING_CONFIG = {
    "level": os.getenv("QAOA_CONTROL_LOG_LEVEL", "INFO"),
    "format": "%(asctime)s - %(name)s - %(levelname)s - %(message)s",
    "log_to_file": False,
    "log_file": "qaoa_control.log",
}


class _Settings(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class NoiseKind(str, Enum):
    NONE = "none"
    CLASSICAL = "classical_gaussian"
    QUANTUM = "quantum"
    GATE = "gate_rotation"


class ContinuousFamily(str, Enum):
    SIGMOID_GAUSSIAN = "sigmoid_gaussian"
    BETA = "beta"


class Algorithm(str, Enum):
    RL_QAOA = "rl_qaoa"
    CD_QAOA = "cd_qaoa"
    PG_QAOA = "pg_qaoa"
    QAOA = "qaoa"
    ADIABATIC = "adiabatic"


class IsingParams(_Settings):
    """Couplings of the periodic spin-1/2 Ising chain (energy unit J)."""

    n_sites: int = Field(PHYSICS_CONFIG["n_sites"], ge=2)
    J: float = PHYSICS_CONFIG["J"]
    h_z: float = PHYSICS_CONFIG["h_z"]
    h_x: float = PHYSICS_CONFIG["h_x"]


class NoiseConfig(_Settings):
    """Noise model applied by the environment.

    strength is a dimensionless fraction: of |E_GS|/N for classical reward
    noise, of the mean gate duration T/q for gate rotation noise. It is
    ignored for the none and quantum kinds.
    """

    kind: NoiseKind = NoiseKind.NONE
    strength: float = Field(0.0, ge=0.0)


class EnvConfig(_Settings):
    ising: IsingParams = Field(default_factory=IsingParams)
    total_T: float = Field(PHYSICS_CONFIG["total_T"], gt=0.0)
    q: int = Field(PHYSICS_CONFIG["q"], ge=1)
    action_set: Tuple[str, ...] = tuple(PHYSICS_CONFIG["action_set"])
    noise: NoiseConfig = Field(default_factory=NoiseConfig)

    @field_validator("action_set")
    @classmethod
    def _unique_labels(cls, labels: Tuple[str, ...]) -> Tuple[str, ...]:
        if len(labels) == 0:
            raise ValueError("action_set must not be empty")
        if len(set(labels)) != len(labels):
            raise ValueError(f"action_set labels must be unique, got {list(labels)}")
        return labels


class PPOHyperparams(_Settings):
    batch_size: int = Field(PPO_CONFIG["batch_size"], ge=1)
    learning_rate: float = Field(PPO_CONFIG["learning_rate"], gt=0.0)
    lr_decay_rate: float = Field(PPO_CONFIG["lr_decay_rate"], gt=0.0, le=1.0)
    lr_decay_steps: int = Field(PPO_CONFIG["lr_decay_steps"], ge=1)
    eps_continuous: float = Field(PPO_CONFIG["eps_continuous"], gt=0.0)
    eps_discrete: float = Field(PPO_CONFIG["eps_discrete"], gt=0.0)
    ppo_epochs: int = Field(PPO_CONFIG["ppo_epochs"], ge=1)
    ema: float = Field(PPO_CONFIG["ema"], ge=0.0, lt=1.0)
    entropy_temp: float = Field(PPO_CONFIG["entropy_temp"], ge=0.0)
    temp_decay_rate: float = Field(PPO_CONFIG["temp_decay_rate"], gt=0.0, le=1.0)
    temp_decay_steps: int = Field(PPO_CONFIG["temp_decay_steps"], ge=1)
    total_iters: int = Field(PPO_CONFIG["total_iters"], ge=0)
    hidden_units: Tuple[int, ...] = tuple(PPO_CONFIG["hidden_units"])
    continuous_family: ContinuousFamily = ContinuousFamily(PPO_CONFIG["continuous_family"])
    adam_betas: Tuple[float, float] = tuple(PPO_CONFIG["adam_betas"])
    adam_eps: float = Field(PPO_CONFIG["adam_eps"], gt=0.0)
    grad_clip: bool = PPO_CONFIG["grad_clip"]
    grad_clip_norm: float = Field(PPO_CONFIG["grad_clip_norm"], gt=0.0)
    kl_threshold: float = Field(PPO_CONFIG["kl_threshold"], gt=0.0)
    eval_every: int = Field(PPO_CONFIG["eval_every"], ge=1)
    checkpoint_every: int = Field(PPO_CONFIG["checkpoint_every"], ge=1)

    @field_validator("hidden_units")
    @classmethod
    def _positive_widths(cls, widths: Tuple[int, ...]) -> Tuple[int, ...]:
        if len(widths) != 2 or any(w < 1 for w in widths):
            raise ValueError("hidden_units must list two positive layer widths")
        return widths


class PowellConfig(_Settings):
    x_tol: float = Field(BASELINE_CONFIG["powell"]["x_tol"], gt=0.0)
    f_tol: float = Field(BASELINE_CONFIG["powell"]["f_tol"], gt=0.0)
    max_iters: Optional[int] = Field(BASELINE_CONFIG["powell"]["max_iters"], ge=1)
    lower: float = 0.0
    upper: float = 1.0

    def iteration_budget(self, dim: int) -> int:
        return self.max_iters if self.max_iters is not None else 200 * max(dim, 1)


class BaselineSettings(_Settings):
    powell: PowellConfig = Field(default_factory=PowellConfig)
    inner_powell: PowellConfig = Field(
        default_factory=lambda: PowellConfig(**BASELINE_CONFIG["inner_powell"])
    )
    qaoa_restarts: int = Field(BASELINE_CONFIG["qaoa_restarts"], ge=1)
    inner_restarts: int = Field(BASELINE_CONFIG["inner_restarts"], ge=1)
    cd_qaoa: PPOHyperparams = Field(default_factory=lambda: PPOHyperparams(**BASELINE_CONFIG["cd_qaoa"]))
    pg_qaoa: PPOHyperparams = Field(default_factory=lambda: PPOHyperparams(**BASELINE_CONFIG["pg_qaoa"]))


class SweepSettings(_Settings):
    algorithms: Tuple[Algorithm, ...] = tuple(Algorithm(a) for a in SWEEP_CONFIG["algorithms"])
    noise_kinds: Tuple[NoiseKind, ...] = tuple(NoiseKind(k) for k in SWEEP_CONFIG["noise_kinds"])
    strengths: Tuple[float, ...] = tuple(SWEEP_CONFIG["strengths"])
    n_sites: Tuple[int, ...] = tuple(SWEEP_CONFIG["n_sites"])
    total_T: Tuple[float, ...] = tuple(SWEEP_CONFIG["total_T"])
    seeds: Tuple[int, ...] = tuple(SWEEP_CONFIG["seeds"])
    adiabatic_T: Tuple[float, ...] = tuple(SWEEP_CONFIG["adiabatic_T"])
    adiabatic_dt: float = Field(PHYSICS_CONFIG["adiabatic_dt"], gt=0.0)


class ExperimentConfig(_Settings):
    """Complete, validated description of one experiment."""

    algorithm: Algorithm = Algorithm.RL_QAOA
    seed: int = 0
    output_dir: str = RUNTIME_CONFIG["output_dir"]
    workers: int = Field(RUNTIME_CONFIG["workers"], ge=1)
    env: EnvConfig = Field(default_factory=EnvConfig)
    ppo: PPOHyperparams = Field(default_factory=PPOHyperparams)
    baselines: BaselineSettings = Field(default_factory=BaselineSettings)
    sweep: SweepSettings = Field(default_factory=SweepSettings)

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.model_dump(mode="json"), sort_keys=False)

    @classmethod
    def from_yaml(cls, text: str, overrides: Optional[Sequence[str]] = None) -> "ExperimentConfig":
        """
        Parse and validate a YAML experiment description

        Args:
            text: YAML document
            overrides: "dotted.key=value" patches applied before validation

        Returns:
            Validated ExperimentConfig

        Raises:
            ConfigError: naming the offending key and its line in the document
        """
        try:
            raw = yaml.safe_load(text) if text.strip() else {}
            lines = _key_lines(text)
        except yaml.YAMLError as e:
            mark = getattr(e, "problem_mark", None)
            raise ConfigError(f"malformed YAML: {e}", line=mark.line + 1 if mark else None) from e
        if raw is None:
            raw = {}
        if not isinstance(raw, dict):
            raise ConfigError("configuration root must be a mapping", line=1)
        for override in overrides or []:
            apply_override(raw, override)
        try:
            return cls.model_validate(raw)
        except ValidationError as e:
            first = e.errors()[0]
            path = tuple(str(p) for p in first["loc"])
            key = ".".join(path)
            if first["type"] == "extra_forbidden":
                message = f"unknown key '{key}'"
            else:
                message = f"invalid value for '{key}': {first['msg']}"
            raise ConfigError(message, key=key, line=_nearest_line(lines, path)) from e

    @classmethod
    def load(cls, path: Optional[Union[str, Path]] = None,
             overrides: Optional[Sequence[str]] = None) -> "ExperimentConfig":
        """Load a configuration file; with no path, defaults plus overrides."""
        if path is None:
            return cls.from_yaml("", overrides)
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"configuration file not found: {path}")
        return cls.from_yaml(path.read_text(), overrides)

    def with_updates(self, **changes: Any) -> "ExperimentConfig":
        """Copy with nested changes, re-validated ("env.noise.kind" style keys)."""
        raw = self.model_dump(mode="json")
        for dotted, value in changes.items():
            _set_path(raw, dotted.split("."), value)
        return ExperimentConfig.model_validate(raw)


def apply_override(raw: Dict[str, Any], override: str) -> None:
    if "=" not in override:
        raise ConfigError(f"override must look like key=value, got '{override}'", key=override)
    dotted, _, value_text = override.partition("=")
    try:
        value = yaml.safe_load(value_text)
    except yaml.YAMLError as e:
        raise ConfigError(f"cannot parse override value '{value_text}': {e}", key=dotted) from e
    _set_path(raw, dotted.strip().split("."), value)


def _set_path(raw: Dict[str, Any], path: List[str], value: Any) -> None:
    node = raw
    for part in path[:-1]:
        child = node.get(part)
        if not isinstance(child, dict):
            child = {}
            node[part] = child
        node = child
    node[path[-1]] = value


def _key_lines(text: str) -> Dict[Tuple[str, ...], int]:
    """Map every mapping key path of a YAML document to its 1-based line."""
    lines: Dict[Tuple[str, ...], int] = {}
    root = yaml.compose(text) if text.strip() else None

    def walk(node: Any, prefix: Tuple[str, ...]) -> None:
        if isinstance(node, yaml.MappingNode):
            for key_node, value_node in node.value:
                path = prefix + (str(key_node.value),)
                lines[path] = key_node.start_mark.line + 1
                walk(value_node, path)
        elif isinstance(node, yaml.SequenceNode):
            for index, item in enumerate(node.value):
                path = prefix + (str(index),)
                lines[path] = item.start_mark.line + 1
                walk(item, path)

    walk(root, ())
    return lines


def _nearest_line(lines: Dict[Tuple[str, ...], int], path: Tuple[str, ...]) -> Optional[int]:
    for cut in range(len(path), 0, -1):
        if path[:cut] in lines:
            return lines[path[:cut]]
    return None
