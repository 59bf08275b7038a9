"""Physics-guided state-space neural networks.

A known state-space model (the prior) is augmented with small radial-basis
completion networks; training adds a regularizer that pulls the
completions toward zero wherever the model operates far from the
training data.
"""
from ._backend import BACKEND
from .core import (
    AugmentedModel,
    CompletionNetwork,
    FunctionalPrior,
    LinearPrior,
    ParamVector,
    PriorModel,
    Signal,
    augmented_step,
    completion_forward,
    flatten_params,
    init_augmented,
    init_completion,
    rbf_activation,
    simulate,
    unflatten_params,
)
from .errors import ConfigurationError, DataFormatError, DomainError, SimulationDivergence
from .objectives import (
    Dataset,
    Hyperparams,
    RegSet,
    WeightVector,
    kernel_weights,
    model_weights,
    residuals,
    total_cost,
    v_data,
    v_phy_classical,
    v_reg_weighted,
)
from .optimizer import LMConfig, TrainReport, jacobian_bptt, jacobian_fd, lm_step, train

__version__ = "0.1.0"
