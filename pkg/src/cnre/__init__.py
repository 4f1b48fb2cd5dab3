"""Contrastive neural ratio estimation for simulation-based inference.

Submodules
----------
nn           residual MLP, batch norm, Adam, checkpoints
tasks        simulators, priors and reference posteriors
losses       NRE-A/B/C classification losses and contrastive batches
trainer      epoch loop with validation loss and mutual-information tracking
posterior    surrogate posterior evaluation, normalization and sampling
diagnostics  importance-sampling ROC, MI bounds, C2ST
grid         hyperparameter grids and result aggregation
cli          command-line front end
"""

__version__ = "0.1.0"

from .errors import (
    ConfigError,
    DiagnosticError,
    NumericError,
    SamplingError,
    ShapeError,
    StateError,
    UnsupportedError,
)
from .losses import (
    ContrastiveBatch,
    LossConfig,
    assemble_contrastive_batch,
    loss_and_grad,
    loss_nrea,
    loss_nreb,
    loss_nrec,
    nrec_class_log_probs,
)
from .nn import AdamState, RatioNet, Standardizer, adam_step, fit_standardizer, load_checkpoint, save_checkpoint
from .posterior import PartitionEstimate, Surrogate, estimate_partition, rejection_sample, slice_sample
from .tasks import JointBatch, Task, get_task, sample_joint
from .trainer import TrainConfig, TrainReport, train, validate_mi0
from .diagnostics import MIBoundReport, RocReport, c2st, importance_diagnostic, mi_bounds, nreb_illposedness_demo

__all__ = [name for name in dir() if not name.startswith("_")]
