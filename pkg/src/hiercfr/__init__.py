"""Hierarchical counterfactual regret minimization for two-player zero-sum games."""

__version__ = "0.1.0"

from .games import (
    GameConfig,
    GameConfigError,
    History,
    IllegalMoveError,
    count_base_tree,
    kuhn_config,
    leduc_config,
    leduc_family,
    root,
)
from .strategy import (
    StrategyProfile,
    load_strategy,
    regret_match,
    save_strategy,
)
from .tabular import run_hcfr
from .trainer import (
    Trainer,
    TrainerConfig,
    freeze_skills,
    load_checkpoint,
    run_hdcfr,
    save_checkpoint,
    warm_start_skills,
)
from .evaluation import exploitability, head_to_head

__all__ = [
    "GameConfig",
    "GameConfigError",
    "History",
    "IllegalMoveError",
    "StrategyProfile",
    "Trainer",
    "TrainerConfig",
    "count_base_tree",
    "exploitability",
    "freeze_skills",
    "head_to_head",
    "kuhn_config",
    "leduc_config",
    "leduc_family",
    "load_checkpoint",
    "load_strategy",
    "regret_match",
    "root",
    "run_hcfr",
    "run_hdcfr",
    "save_checkpoint",
    "save_strategy",
    "warm_start_skills",
    "__version__",
]
