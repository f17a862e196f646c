"""Dual self-awareness value decomposition (DAVE) for cooperative MARL."""
from .config import TrainerConfig, load_config
from .envs import MatrixGameI, MatrixGameII, MultiStepMatrixGame, make_env
from .harness import collect_uniform, evaluate, run
from .trainer import DAVELearner, p_optimal

__all__ = [
    "DAVELearner",
    "MatrixGameI",
    "MatrixGameII",
    "MultiStepMatrixGame",
    "TrainerConfig",
    "collect_uniform",
    "evaluate",
    "load_config",
    "make_env",
    "p_optimal",
    "run",
]
__version__ = "0.1.0"
