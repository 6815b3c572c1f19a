"""Speed-constrained Bayesian optimization of decoder parameters."""
from .acquisition import TaskKind
from .baselines import grid_search, random_search
from .constraint import ConstraintModel, ConstraintSpec
from .evaluator import (EvaluationError, EvaluationResult, ExternalCommandSpec,
                        ExternalDecoder, SimulatedDecoder, SimulatorConfig)
from .gp import GaussianProcess, GPHyperparams
from .optimizer import (ConstrainedBayesOpt, History, Observation,
                        Recommendation)
from .space import ParamSpec, SearchSpace, decoder_space

__version__ = "0.1.0"

__all__ = [
    "ConstrainedBayesOpt", "ConstraintModel", "ConstraintSpec",
    "EvaluationError", "EvaluationResult", "ExternalCommandSpec",
    "ExternalDecoder", "GPHyperparams", "GaussianProcess", "History",
    "Observation", "ParamSpec", "Recommendation", "SearchSpace",
    "SimulatedDecoder", "SimulatorConfig", "TaskKind", "decoder_space",
    "grid_search", "random_search",
]
