"""Blending-target domain adaptation: data generation, training, metrics.

Thin facade over the compiled extension. In an installed wheel the module
lives inside this package; in a build tree it sits on PYTHONPATH instead, so
fall back to the top-level name.
"""

try:
    from ._amean_core import *  # noqa: F401,F403
except ImportError:
    from _amean_core import *  # noqa: F401,F403

__all__ = [
    "Dataset",
    "TrainOutcome",
    "generate",
    "load_dataset",
    "train",
    "evaluate_checkpoint",
    "soft_assign",
    "target_distribution",
    "adjusted_rand_index",
    "acc_btda",
    "ant",
    "rnt",
    "validate_simplex",
    "DIGIT_FIVE_WEIGHTS",
    "OFFICE31_WEIGHTS",
    "OFFICE_HOME_WEIGHTS",
]
