"""Configuration module for C-MARL lab runs."""

import os
from dataclasses import dataclass, fields, replace
from typing import Dict, Optional, Tuple

from dotenv import dotenv_values, load_dotenv

from .core import ConfigurationError
from .logger import get_logger

logger = get_logger(__name__)

PREFIX = "CMARL_"
STAGE_NAMES = ("easy", "medium", "hard")


def _get_config_file_path():
    """Get the path to the environment override file."""
    home_dir = os.path.expanduser("~")
    user_env = os.path.join(home_dir, ".cmarl", ".env")

    if os.path.exists(user_env):
        return user_env

    # Fallback to project-local .env
    project_env = os.path.join(os.getcwd(), ".env")
    if os.path.exists(project_env):
        return project_env

    return user_env


def environment_overrides() -> Dict[str, str]:
    """Output directory and thread count from the environment; nothing else is read."""
    load_dotenv(_get_config_file_path())
    overrides = {}
    for key in ("CMARL_OUTPUT_DIR", "CMARL_THREADS"):
        value = os.getenv(key)
        if value:
            overrides[key] = value
    return overrides


# (section title, field names) in file order
SECTIONS = (
    ("Run", ("seed", "output_dir", "threads")),
    ("Synthetic task", (
        "train_size", "test_size", "feature_dim", "num_options", "num_fillers",
        "max_length", "cluster_radius",
    )),
    ("Specialists", (
        "num_specialists", "in_specialty_accuracy", "out_of_specialty_accuracy",
        "malformed_rate", "routing",
    )),
    ("Policy optimisation (full-scale runs use batch 128, lr 1e-6)", (
        "group_size", "batch_size", "temperature", "clip_epsilon", "std_guard",
        "init_scale", "prior_strength", "format_penalty", "consensus_prior",
    )),
    ("Triage training", ("triage_steps", "triage_learning_rate")),
    ("Attending curriculum (easy, medium, hard)", (
        "attending_steps", "attending_learning_rates", "entropy_gammas", "kl_betas", "ablation",
    )),
    ("Evaluation", ("tts_samples", "eval_temperature")),
    ("Theory lab", (
        "theory_stage_optima", "theory_dim", "theory_sigma", "theory_eta",
        "theory_samples", "theory_iterations", "theory_epsilon1", "theory_u1",
        "theory_trials", "theory_batch_size",
    )),
)


@dataclass(frozen=True)
class RunConfig:
    """Every knob of an experiment run.

    Defaults are toy-scale. Values shared with full-scale runs: group_size 8,
    temperature 1.0, entropy_gammas (1e-4, 5e-3, 3e-2), kl_betas
    (1e-3, 4e-3, 1e-2), three specialists.
    """

    seed: int = 0
    output_dir: str = "runs/default"
    threads: int = 1

    train_size: int = 2000
    test_size: int = 500
    feature_dim: int = 8
    num_options: int = 4
    num_fillers: int = 2
    max_length: int = 16
    cluster_radius: float = 5.0

    num_specialists: int = 3
    in_specialty_accuracy: float = 0.8
    out_of_specialty_accuracy: float = 0.35
    malformed_rate: float = 0.02
    routing: str = "triage"

    group_size: int = 8
    batch_size: int = 32
    temperature: float = 1.0
    clip_epsilon: float = 0.2
    std_guard: float = 1e-8
    init_scale: float = 0.01
    prior_strength: float = 3.0
    format_penalty: float = 20.0
    consensus_prior: float = 1.0

    triage_steps: int = 50
    triage_learning_rate: float = 0.5

    attending_steps: int = 300
    attending_learning_rates: Tuple[float, float, float] = (0.15, 0.05, 0.02)
    entropy_gammas: Tuple[float, float, float] = (1e-4, 5e-3, 3e-2)
    kl_betas: Tuple[float, float, float] = (1e-3, 4e-3, 1e-2)
    ablation: str = "curriculum"

    tts_samples: int = 3
    eval_temperature: float = 1.0

    theory_stage_optima: Tuple[float, float, float] = (0.0, 1.0, 2.0)
    theory_dim: int = 1
    theory_sigma: float = 0.1
    theory_eta: float = 0.25
    theory_samples: int = 400
    theory_iterations: int = 200
    theory_epsilon1: float = 0.05
    theory_u1: float = 1.0
    theory_trials: int = 100
    theory_batch_size: int = 0  # 0 is full batch; one-sample steps fail the lower-bound check

    @staticmethod
    def key(name: str) -> str:
        return PREFIX + name.upper()

    @classmethod
    def from_mapping(cls, values: Dict[str, Optional[str]]) -> "RunConfig":
        known = {f.name: f for f in fields(cls)}
        defaults = cls()
        parsed = {}
        for raw_key, raw_value in values.items():
            if not raw_key.startswith(PREFIX):
                logger.warning(f"Ignoring configuration key without {PREFIX} prefix: {raw_key}")
                continue
            name = raw_key[len(PREFIX):].lower()
            if name not in known:
                logger.warning(f"Ignoring unknown configuration key: {raw_key}")
                continue
            if raw_value is None or raw_value.strip() == "":
                continue
            parsed[name] = _parse(raw_key, raw_value.strip(), getattr(defaults, name))
        return replace(defaults, **parsed)

    @classmethod
    def load(cls, path: Optional[str] = None, seed: Optional[int] = None, use_environment: bool = True) -> "RunConfig":
        """Read a KEY=VALUE file, apply environment overrides and an explicit seed, then validate."""
        values: Dict[str, Optional[str]] = {}
        if path is not None:
            if not os.path.exists(path):
                raise ConfigurationError(f"configuration file not found: {path}")
            values.update(dotenv_values(path))
            logger.info(f"Loaded configuration from {path}")
        if use_environment:
            values.update(environment_overrides())
        config = cls.from_mapping(values)
        if seed is not None:
            config = replace(config, seed=int(seed))
        config.validate()
        return config

    def to_mapping(self) -> Dict[str, str]:
        return {self.key(f.name): _format(getattr(self, f.name)) for f in fields(self)}

    def save(self, path: str) -> None:
        directory = os.path.dirname(path)
        if directory:
            os.makedirs(directory, exist_ok=True)
        mapping = self.to_mapping()
        lines = ["# C-MARL lab run configuration", ""]
        for title, names in SECTIONS:
            lines.append(f"# {title}")
            lines.extend(f"{self.key(name)}={mapping[self.key(name)]}" for name in names)
            lines.append("")
        with open(path, "w") as f:
            f.write("\n".join(lines))

    def validate(self) -> None:
        positive = (
            "train_size", "test_size", "feature_dim", "max_length", "num_specialists",
            "batch_size", "threads", "tts_samples", "theory_samples", "theory_trials", "theory_dim",
        )
        for name in positive:
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{self.key(name)} must be positive, got {getattr(self, name)}")
        for name in ("prior_strength", "format_penalty", "consensus_prior", "init_scale"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"{self.key(name)} must be non-negative")
        for name in ("triage_steps", "attending_steps", "theory_iterations", "theory_batch_size", "num_fillers"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"{self.key(name)} must be non-negative")
        if self.group_size < 2:
            raise ConfigurationError(f"{self.key('group_size')} must be at least 2, got {self.group_size}")
        if self.num_options < 2:
            raise ConfigurationError(f"{self.key('num_options')} must be at least 2")
        if self.temperature <= 0 or self.eval_temperature <= 0:
            raise ConfigurationError("temperatures must be positive")
        if self.clip_epsilon <= 0:
            raise ConfigurationError(f"{self.key('clip_epsilon')} must be positive")
        for name in ("attending_learning_rates", "entropy_gammas", "kl_betas", "theory_stage_optima"):
            value = getattr(self, name)
            if len(value) != 3 and name != "theory_stage_optima":
                raise ConfigurationError(f"{self.key(name)} needs three values, got {len(value)}")
            if name != "theory_stage_optima" and any(v < 0 for v in value):
                raise ConfigurationError(f"{self.key(name)} must be non-negative")
        if not self.theory_stage_optima:
            raise ConfigurationError(f"{self.key('theory_stage_optima')} needs at least one stage")
        if self.routing not in ("triage", "gold", "random"):
            raise ConfigurationError(f"{self.key('routing')} must be triage, gold or random")
        if self.ablation not in ("curriculum", "mixed", "no_entropy"):
            raise ConfigurationError(f"{self.key('ablation')} must be curriculum, mixed or no_entropy")
        if not 0 < self.theory_eta <= 0.5:
            raise ConfigurationError(f"{self.key('theory_eta')} must be in (0, mu/L2^2 = 0.5]")
        if not 0 < self.theory_epsilon1 < self.theory_u1:
            raise ConfigurationError(f"{self.key('theory_epsilon1')} must be in (0, U1)")
        if self.feature_dim < 7:
            logger.warning("Fewer than 7 feature dimensions: specialty clusters are not linearly separable")


def _parse(key: str, raw: str, default):
    try:
        if isinstance(default, bool):
            return raw.lower() in ("1", "true", "yes", "on")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            return tuple(float(part) for part in raw.split(",") if part.strip())
        return raw
    except ValueError as e:
        raise ConfigurationError(f"invalid value for {key}: {raw!r} ({e})") from e


def _format(value) -> str:
    if isinstance(value, tuple):
        return ",".join(repr(float(v)) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)
