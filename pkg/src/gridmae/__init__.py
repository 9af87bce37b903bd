"""gridmae: power-grid workbench.

Parse transmission test cases, solve AC/DC power flow, generate solved
perturbed-scenario datasets, train a masked graph autoencoder with a
physics-informed loss, and use the trained reconstructor as a neural
power flow solver and contingency screener.
"""

from .cases import RawCase, builtin_case, load_case_file, parse_case, reduce_case, serialize_case
from .errors import GridMaeError, NumericError, ValidationError
from .masking import Mask, MaskedSample, mask_pf, mask_random, merge
from .model import (
    Model,
    ModelConfig,
    backward,
    forward,
    init_model,
    load_checkpoint,
    loss,
    pf_loss,
    save_checkpoint,
    sce_loss,
)
from .network import (
    Branch,
    Bus,
    BusType,
    Grid,
    NodeState,
    branch_current,
    branch_flow,
    equation_counts,
    injection_mismatch,
    total_losses,
)
from .scenarios import (
    ContingencySpec,
    PerturbConfig,
    Sample,
    enumerate_contingencies,
    generate_dataset,
    load_dataset,
    perturb_load,
    perturb_topology,
)
from .solver import PfOptions, PfSolution, solve_ac, solve_dc
from .training import TrainConfig, train
from .evaluation import MaskingSpec, evaluate, neural_pf
from .screening import OperatingLimits, ViolationReport, screen_contingencies
from .benchmark import BenchmarkReport, benchmark

__version__ = "0.1.0"
