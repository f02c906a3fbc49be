"""Lifted network training by block-coordinate descent.

Instead of backpropagating through the recursion, per-layer activations become
free variables coupled to the weights by biconvex divergence penalties; training
alternates exact convex solves over the two variable families. A conventional
SGD/Adam baseline over the identical architecture is included for comparison.
"""

from .baseline import Optimizer, SgdConfig, backprop_gradient, train_baseline
from .bcd import (
    ReportRow,
    ScalingProfile,
    TrainReport,
    dual_value,
    multi_penalty_objective,
    scale_to_single_lambda,
    train_batched,
    train_full,
    unscale_from_single_lambda,
)
from .data import Dataset, batches, load_idx, load_mnist, subset
from .divergence import (
    ActivationKind,
    divergence,
    divergence_grad_u,
    divergence_grad_v,
    feasibility_residual,
    matrix_divergence,
    relu_divergence,
    sigmoid_divergence,
)
from .kernels import BACKEND
from .network import (
    Hyperparams,
    LiftedState,
    Loss,
    NetworkSpec,
    Weights,
    augment,
    feed_forward,
    lifted_objective,
    loss_value,
    predict,
    save_checkpoint,
    load_checkpoint,
    standard_objective,
)
from .solvers import (
    ProjGradConfig,
    SolveResult,
    StepRule,
    projected_gradient,
    solve_w_intermediate,
    solve_w_last,
    solve_w_prox,
    solve_x_intermediate,
    solve_x_last,
    solve_x_last_ce,
    solve_x_last_mse,
)

__version__ = "0.1.0"
