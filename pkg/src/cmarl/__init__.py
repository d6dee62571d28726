"""C-MARL lab: curriculum entropy-aware GRPO for a triage, specialist and attending workflow."""

__version__ = "0.1.0"
__description__ = "Curriculum entropy-aware multi-agent RL on a synthetic consultation task"

from .config import RunConfig
from .core import (
    MALFORMED,
    Case,
    CmarlError,
    ConfigurationError,
    DataError,
    NumericError,
    Vocabulary,
    derive_stream,
)
from .experiment import Experiment, run_experiment
from .grpo import CmarlConfig, train_on_batch
from .logger import setup_logger
from .policy import PolicyParams

__all__ = [
    "MALFORMED",
    "Case",
    "CmarlConfig",
    "CmarlError",
    "ConfigurationError",
    "DataError",
    "Experiment",
    "NumericError",
    "PolicyParams",
    "RunConfig",
    "Vocabulary",
    "derive_stream",
    "run_experiment",
    "setup_logger",
    "train_on_batch",
]
