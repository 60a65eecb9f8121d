"""Joint hierarchical model for response accuracy and log response times."""

from .chains import (
    DegenerateChainWarning,
    SummaryTable,
    autocorrelation,
    effective_sample_size,
    geweke_z,
    mcse,
    summarize,
)
from .fit import FitAccumulator, FitReport
from .gibbs import ChainStore, GibbsSampler, SamplerError, run_chain, run_chain_quadratic, time_scale
from .model import (
    ItemBank,
    ItemPrior,
    ObservedData,
    PersonState,
    PopulationPrior,
    RunConfig,
    ValidationError,
    probit_logistic_transform,
    response_probability,
    rt_mean,
    validate_inputs,
)
from .simulate import MissingSpec, TrueParameters, simulate_dataset

__version__ = "0.1.0"
