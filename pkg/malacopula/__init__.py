from .config import EXIT_CODES, F_A, F_B, F_TEST, ExperimentConfig, TrainingConfig, load_config
from .embedder import Embedding, cosine_similarity, extract_embedding
from .evaluation import compute_eer, evaluate_protocol
from .gradients import backward, check_gradient, forward_with_tape
from .hammerstein import MalacopulaFilter, Signal, bartlett_window, malacopula_apply
from .selection import select_best, signed_wasserstein, wasserstein_1d
from .trainer import adam_step, init_filter, train_filter

__all__ = [
    "EXIT_CODES",
    "F_A",
    "F_B",
    "F_TEST",
    "Embedding",
    "ExperimentConfig",
    "MalacopulaFilter",
    "Signal",
    "TrainingConfig",
    "adam_step",
    "backward",
    "bartlett_window",
    "check_gradient",
    "compute_eer",
    "cosine_similarity",
    "evaluate_protocol",
    "extract_embedding",
    "forward_with_tape",
    "init_filter",
    "load_config",
    "malacopula_apply",
    "select_best",
    "signed_wasserstein",
    "train_filter",
    "wasserstein_1d",
]
