"""Power-law graph attention decoder with deductive-output criticality diagnostics."""

from .errors import (
    ContractError,
    DegenerateRowError,
    DimensionError,
    DomainError,
    FormatError,
    InputError,
    NonFiniteError,
    PlgaError,
    TrainingDiverged,
)
from .generation import LanguageModel, RunBundle, RunRecord, SamplerConfig, generate_cached, generate_full, run_protocol
from .metrics import build_report, classify_phase, order_parameter, population_stats, rmse_between
from .model import ModelConfig, ModelParams, init_parameters, model_forward
from .plga import TENSOR_NAMES, DeductiveSet, PlgaParams
from .tensor import Rng, Tensor, no_grad
from .trainer import OptimizerConfig, train_loop

__version__ = "0.1.0"
