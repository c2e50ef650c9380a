"""tailchain: stochastic optimizers as Markov chains, with tail analysis.

Simulates optimizer update rules as iterated random functions, measures the
heavy-tailed structure of their stationary behaviour (Pareto tail fits of
step norms), and checks the measurements against exponent predictions for
random linear recurrences.
"""

from .chain import ChainConfig, ChainTrace, StepMap, run_chain, run_ensemble
from .optimizers import OptimizerSpec, build_step_map
from .problems import (
    Dataset,
    GaussianSource,
    RidgeCoeffSampler,
    RidgeProblem,
    TwoLayerReluProblem,
    load_csv_dataset,
    ridge_closed_form,
    scalar_objective_catalog,
)
from .tailfit import TailFitReport, fit_tail
from .theory import ergodicity_diagnostic, kesten_solve

__version__ = "0.1.0"
