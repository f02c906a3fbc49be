"""Minimizers for the block subproblems of the alternating trainer.

Every subproblem is convex in its block with the other blocks held fixed:

* activation updates at intermediate layers (two divergence terms),
* the last activation update (loss plus one divergence term),
* weight updates at intermediate layers (divergence plus weight decay),
* the last weight update (loss plus weight decay; closed form for MSE),
* proximally damped variants of the weight updates for batched training.

Anything without a closed form runs through :func:`projected_gradient`,
a monotone projected-gradient loop with Armijo backtracking. Convergence is
measured by the unit-step projected-gradient residual
``||Z - P(Z - grad)||_F``, which is zero exactly at a KKT point and is cheap
to recompute, so results are self-certifying.

Weight solvers take the design matrix as given (callers append the bias row
beforehand); activation solvers receive weight matrices whose last column is
the folded bias and handle the constant ones row internally.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
import scipy.linalg

from . import kernels
from .divergence import (
    ActivationKind,
    apply_activation,
    grad_u_matrix,
    grad_v_matrix,
    matrix_divergence,
    project_feasible,
)
from .network import Loss, augment

ARMIJO_C = 1e-4
ARMIJO_SHRINK = 0.5
_MIN_STEP = 1e-18


class StepRule(Enum):
    FIXED_LIPSCHITZ = "fixed"
    BACKTRACKING = "backtracking"


@dataclass(frozen=True)
class ProjGradConfig:
    tol: float = 1e-4
    max_iters: int = 200
    step_rule: StepRule = StepRule.BACKTRACKING

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.tol <= 0:
            raise ValueError("tol must be positive")


@dataclass
class SolveResult:
    solution: np.ndarray
    objective: float
    iterations: int
    converged: bool
    grad_norm: float


def _check_cols(M, what):
    if M.shape[1] == 0:
        raise ValueError(f"{what} has zero columns; refusing to solve an empty block")


def _split_bias(W):
    """Non-bias block (contiguous) and bias column of a folded weight matrix."""
    W = np.asarray(W, dtype=np.float64)
    return np.ascontiguousarray(W[:, :-1]), W[:, -1:].copy()


def _residual(Z, g, project):
    R = Z - project(Z - g)
    return float(np.sqrt(np.vdot(R, R)))


def projected_gradient(fg, project, z0, cfg: ProjGradConfig, lipschitz=None, f_only=None):
    """Minimise a smooth convex function over a convex set by projected gradient.

    Parameters
    ----------
    fg : callable
        ``fg(Z) -> (value, gradient)``; must be finite on the feasible set.
    project : callable
        Euclidean projection onto the feasible set.
    z0 : array
        Warm start; projected before use.
    cfg : ProjGradConfig
        Tolerance on the unit-step projected-gradient residual, iteration cap
        and step rule.
    lipschitz : float, optional
        Gradient Lipschitz constant; required for the fixed-step rule.
    f_only : callable, optional
        Cheaper objective-only evaluation used inside the line search.

    The backtracking rule accepts a trial point only under the Armijo
    condition, so the objective sequence never increases; the fixed rule with
    ``step = 1/lipschitz`` is a guaranteed descent step for convex problems.
    """
    Z = project(np.array(z0, dtype=np.float64, copy=True))
    f, g = fg(Z)
    if not np.isfinite(f):
        raise ValueError("objective is not finite at the (projected) warm start")
    if cfg.step_rule is StepRule.FIXED_LIPSCHITZ:
        if lipschitz is None or lipschitz <= 0:
            raise ValueError("fixed-step rule needs a positive Lipschitz constant")
        t = 1.0 / float(lipschitz)
    else:
        t = 1.0
    feval = f_only if f_only is not None else (lambda W: fg(W)[0])

    resid = _residual(Z, g, project)
    iters = 0
    while resid > cfg.tol and iters < cfg.max_iters:
        if cfg.step_rule is StepRule.BACKTRACKING:
            t = min(t * 2.0, 1e10)
            stalled = False
            while True:
                Z_new = project(Z - t * g)
                dec = float(np.vdot(g, Z_new - Z))
                if feval(Z_new) <= f + ARMIJO_C * dec:
                    break
                t *= ARMIJO_SHRINK
                if t < _MIN_STEP:
                    stalled = True
                    break
            if stalled:
                break
            Z = Z_new
        else:
            Z = project(Z - t * g)
        iters += 1
        f, g = fg(Z)
        resid = _residual(Z, g, project)
    return SolveResult(Z, float(f), iters, resid <= cfg.tol, resid)


# ---------------------------------------------------------------------------
# activation-variable subproblems
# ---------------------------------------------------------------------------

# upper bounds on the second derivative of B in each argument, used to build
# Lipschitz constants for the fixed-step rule (None: unbounded)
_CURV_U = {
    ActivationKind.RELU: 1.0,
    ActivationKind.SIGMOID: 0.25,
    ActivationKind.QUAD_IDENTITY: 2.0,
    ActivationKind.QUAD_PLUS: 2.0,
}
_CURV_V = {
    ActivationKind.RELU: 1.0,
    ActivationKind.SIGMOID: None,
    ActivationKind.QUAD_IDENTITY: 2.0,
    ActivationKind.QUAD_PLUS: 2.0,
}


def solve_x_intermediate(
    kind_out: ActivationKind,
    kind_in: ActivationKind,
    W_l,
    X_next,
    U_prev,
    cfg: ProjGradConfig,
    z0=None,
) -> SolveResult:
    """Update an intermediate activation block.

    Minimises ``B_out(X_next, W_l @ aug(Z)) + B_in(Z, U_prev)`` over the
    feasible set of ``kind_in``, where ``U_prev`` is the fixed pre-activation
    of the previous layer. The penalty weight cancels between the two terms,
    so the subproblem is solved weight-free. For ReLU/ReLU the objective is
    strongly convex (the second term contributes an identity Hessian block).
    """
    Wt, b = _split_bias(W_l)
    X_next = np.asarray(X_next, dtype=np.float64)
    U_prev = np.asarray(U_prev, dtype=np.float64)
    _check_cols(U_prev, "U_prev")

    def fg(Z):
        P = Wt @ Z + b
        f = matrix_divergence(kind_out, X_next, P) + matrix_divergence(kind_in, Z, U_prev)
        g = Wt.T @ grad_u_matrix(kind_out, X_next, P) + grad_v_matrix(kind_in, Z, U_prev)
        return f, g

    def f_only(Z):
        P = Wt @ Z + b
        return matrix_divergence(kind_out, X_next, P) + matrix_divergence(kind_in, Z, U_prev)

    lip = None
    if cfg.step_rule is StepRule.FIXED_LIPSCHITZ:
        cv = _CURV_V[kind_in]
        if cv is None:
            raise ValueError(f"no global Lipschitz constant for kind_in={kind_in.value}")
        smax = np.linalg.norm(Wt, 2)
        lip = _CURV_U[kind_out] * smax * smax + cv
    if z0 is None:
        z0 = apply_activation(kind_in, U_prev)
    return projected_gradient(
        fg, lambda Z: project_feasible(kind_in, Z), z0, cfg, lipschitz=lip, f_only=f_only
    )


def solve_x_last_mse(W_L, Y, U_prev, lam: float, cfg: ProjGradConfig, z0=None) -> SolveResult:
    """Last activation update under MSE with a ReLU-produced block.

    The divergence to the previous layer collapses to a proximal term, so the
    problem is the nonnegative least squares

        min_{Z >= 0}  ||Y - W_L @ aug(Z)||_F^2 + (lam/2) ||Z - U_prev||_F^2,

    solved by projected gradient with the exact Lipschitz step
    ``1 / (2 smax(W)^2 + lam)`` (``W`` without its bias column). The loop runs
    in the compiled kernel when the numba backend is active.
    """
    if lam <= 0:
        raise ValueError("lam must be positive")
    Wt, b = _split_bias(W_L)
    Y = np.asarray(Y, dtype=np.float64)
    U_prev = np.asarray(U_prev, dtype=np.float64)
    _check_cols(Y, "Y")
    Yp = Y - b
    G = 2.0 * (Wt.T @ Wt) + lam * np.eye(Wt.shape[1])
    C = 2.0 * (Wt.T @ Yp) + lam * U_prev
    smax = np.linalg.norm(Wt, 2)
    step = 1.0 / (2.0 * smax * smax + lam)
    if z0 is None:
        z0 = np.maximum(U_prev, 0.0)
    else:
        z0 = np.maximum(np.asarray(z0, dtype=np.float64), 0.0)
    Z, iters, conv, resid = kernels.quad_prox_pg(G, C, z0, step, cfg.tol, cfg.max_iters)
    R = Y - (Wt @ Z + b)
    D = Z - U_prev
    obj = float(np.vdot(R, R) + 0.5 * lam * np.vdot(D, D))
    return SolveResult(Z, obj, iters, conv, resid)


def solve_x_last_ce(W_L, Y, U_prev, lam: float, cfg: ProjGradConfig, z0=None) -> SolveResult:
    """Last activation update under cross entropy with a ReLU-produced block.

    Minimises ``-Tr(Y^T log softmax(W_L @ aug(Z))) + (lam/2)||Z - U_prev||_F^2``
    over ``Z >= 0``. Strongly convex thanks to the proximal term; solved by
    projected gradient (the KKT residual certifies the solution).
    """
    if lam <= 0:
        raise ValueError("lam must be positive")
    Wt, b = _split_bias(W_L)
    Y = np.asarray(Y, dtype=np.float64)
    U_prev = np.asarray(U_prev, dtype=np.float64)
    _check_cols(Y, "Y")

    def fg(Z):
        P = Wt @ Z + b
        S = kernels.softmax_cols(P)
        D = Z - U_prev
        f = kernels.ce_from_scores(P, Y) + 0.5 * lam * float(np.vdot(D, D))
        g = Wt.T @ (S - Y) + lam * D
        return f, g

    def f_only(Z):
        P = Wt @ Z + b
        D = Z - U_prev
        return kernels.ce_from_scores(P, Y) + 0.5 * lam * float(np.vdot(D, D))

    lip = None
    if cfg.step_rule is StepRule.FIXED_LIPSCHITZ:
        smax = np.linalg.norm(Wt, 2)
        lip = 0.5 * smax * smax + lam  # softmax Hessian is bounded by I/2
    if z0 is None:
        z0 = np.maximum(U_prev, 0.0)
    return projected_gradient(
        fg, lambda Z: np.maximum(Z, 0.0), z0, cfg, lipschitz=lip, f_only=f_only
    )


def solve_x_last(
    loss: Loss,
    kind_prev: ActivationKind,
    W_L,
    Y,
    U_prev,
    lam: float,
    cfg: ProjGradConfig,
    z0=None,
) -> SolveResult:
    """Dispatch the last activation update on loss and producing activation.

    ReLU-family blocks reduce to the specialised proximal solvers (for the
    quadratic baseline penalties the proximal weight doubles and, for the
    plus variant, the centre moves to ``max(0, U_prev)``). Sigmoid blocks run
    the generic composite: loss plus the logistic divergence over [0, 1].
    """
    if kind_prev in (ActivationKind.RELU, ActivationKind.QUAD_IDENTITY, ActivationKind.QUAD_PLUS):
        if kind_prev is ActivationKind.RELU:
            eff_lam, center = lam, U_prev
        elif kind_prev is ActivationKind.QUAD_IDENTITY:
            eff_lam, center = 2.0 * lam, U_prev
        else:
            eff_lam, center = 2.0 * lam, np.maximum(np.asarray(U_prev, dtype=np.float64), 0.0)
        if loss is Loss.MSE:
            return solve_x_last_mse(W_L, Y, center, eff_lam, cfg, z0=z0)
        return solve_x_last_ce(W_L, Y, center, eff_lam, cfg, z0=z0)

    # sigmoid-produced block: entropic penalty, generic projected gradient
    Wt, b = _split_bias(W_L)
    Y = np.asarray(Y, dtype=np.float64)
    U_prev = np.asarray(U_prev, dtype=np.float64)
    _check_cols(Y, "Y")

    def fg(Z):
        P = Wt @ Z + b
        if loss is Loss.MSE:
            R = Y - P
            f_loss = float(np.vdot(R, R))
            g_loss = -2.0 * (Wt.T @ R)
        else:
            f_loss = kernels.ce_from_scores(P, Y)
            g_loss = Wt.T @ (kernels.softmax_cols(P) - Y)
        f = f_loss + lam * matrix_divergence(kind_prev, Z, U_prev)
        g = g_loss + lam * grad_v_matrix(kind_prev, Z, U_prev)
        return f, g

    if z0 is None:
        z0 = apply_activation(kind_prev, U_prev)
    return projected_gradient(fg, lambda Z: project_feasible(kind_prev, Z), z0, cfg)


# ---------------------------------------------------------------------------
# weight subproblems
# ---------------------------------------------------------------------------


def solve_w_intermediate(
    kind: ActivationKind,
    X_next,
    A,
    lam: float,
    rho: float,
    cfg: ProjGradConfig,
    gamma: float = 0.0,
    w_prev=None,
    w0=None,
) -> SolveResult:
    """Update one hidden-layer weight matrix.

    Minimises ``lam * B(X_next, W @ A) + rho ||W||_F^2`` over W, optionally
    plus the proximal pull ``gamma ||W - w_prev||_F^2`` used in batched mode.
    ``A`` is the design matrix for this layer, bias row already appended.
    Unconstrained; plain gradient descent with backtracking.
    """
    A = np.asarray(A, dtype=np.float64)
    X_next = np.asarray(X_next, dtype=np.float64)
    _check_cols(A, "A")
    if gamma and w_prev is None:
        raise ValueError("gamma > 0 requires w_prev")
    At = A.T.copy()

    def fg(W):
        P = W @ A
        f = lam * matrix_divergence(kind, X_next, P) + rho * float(np.vdot(W, W))
        g = lam * (grad_u_matrix(kind, X_next, P) @ At) + 2.0 * rho * W
        if gamma:
            D = W - w_prev
            f += gamma * float(np.vdot(D, D))
            g += 2.0 * gamma * D
        return f, g

    def f_only(W):
        P = W @ A
        f = lam * matrix_divergence(kind, X_next, P) + rho * float(np.vdot(W, W))
        if gamma:
            D = W - w_prev
            f += gamma * float(np.vdot(D, D))
        return f

    lip = None
    if cfg.step_rule is StepRule.FIXED_LIPSCHITZ:
        smax = np.linalg.norm(A, 2)
        lip = lam * _CURV_U[kind] * smax * smax + 2.0 * rho + 2.0 * gamma
    if w0 is None:
        w0 = np.zeros((X_next.shape[0], A.shape[0]))
    return projected_gradient(fg, lambda W: W, w0, cfg, lipschitz=lip, f_only=f_only)


def solve_w_last(
    loss: Loss,
    A,
    Y,
    rho: float,
    cfg: ProjGradConfig,
    gamma: float = 0.0,
    w_prev=None,
    w0=None,
) -> SolveResult:
    """Update the output weight matrix.

    MSE: exact ridge solve of ``W (A A^T + (rho+gamma) I) = Y A^T + gamma W0``
    through a Cholesky factorization (least-norm fallback when the
    regularisers vanish). Cross entropy: gradient descent with backtracking.
    """
    A = np.asarray(A, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    _check_cols(A, "A")
    if gamma and w_prev is None:
        raise ValueError("gamma > 0 requires w_prev")

    if loss is Loss.MSE:
        reg = rho + gamma
        Gm = A @ A.T
        rhs = Y @ A.T
        if gamma:
            rhs = rhs + gamma * w_prev
        if reg > 0:
            M = Gm + reg * np.eye(Gm.shape[0])
            cho = scipy.linalg.cho_factor(M, lower=True)
            W = scipy.linalg.cho_solve(cho, rhs.T).T
        else:
            W = np.linalg.lstsq(A.T, Y.T, rcond=None)[0].T
        R = Y - W @ A
        obj = float(np.vdot(R, R)) + rho * float(np.vdot(W, W))
        g = -2.0 * (R @ A.T) + 2.0 * rho * W
        if gamma:
            D = W - w_prev
            obj += gamma * float(np.vdot(D, D))
            g += 2.0 * gamma * D
        gn = float(np.sqrt(np.vdot(g, g)))
        return SolveResult(W, obj, 0, gn <= cfg.tol, gn)

    def fg(W):
        P = W @ A
        S = kernels.softmax_cols(P)
        f = kernels.ce_from_scores(P, Y) + rho * float(np.vdot(W, W))
        g = (S - Y) @ A.T + 2.0 * rho * W
        if gamma:
            D = W - w_prev
            f += gamma * float(np.vdot(D, D))
            g += 2.0 * gamma * D
        return f, g

    def f_only(W):
        f = kernels.ce_from_scores(W @ A, Y) + rho * float(np.vdot(W, W))
        if gamma:
            D = W - w_prev
            f += gamma * float(np.vdot(D, D))
        return f

    lip = None
    if cfg.step_rule is StepRule.FIXED_LIPSCHITZ:
        smax = np.linalg.norm(A, 2)
        lip = 0.5 * smax * smax + 2.0 * rho + 2.0 * gamma
    if w0 is None:
        w0 = np.zeros((Y.shape[0], A.shape[0]))
    return projected_gradient(fg, lambda W: W, w0, cfg, lipschitz=lip, f_only=f_only)


def solve_w_prox(
    base: str,
    cfg: ProjGradConfig,
    gamma: float,
    w_prev,
    *,
    kind: ActivationKind | None = None,
    X_next=None,
    A=None,
    lam: float | None = None,
    rho: float = 0.0,
    loss: Loss | None = None,
    Y=None,
    w0=None,
) -> SolveResult:
    """Proximally damped weight update: base objective plus gamma||W - w_prev||^2.

    ``base`` selects the underlying subproblem, ``"intermediate"`` or
    ``"last"``. With ``gamma = 0`` this reduces exactly to the base solver.
    """
    if base == "intermediate":
        return solve_w_intermediate(
            kind, X_next, A, lam, rho, cfg, gamma=gamma, w_prev=w_prev, w0=w0
        )
    if base == "last":
        return solve_w_last(loss, A, Y, rho, cfg, gamma=gamma, w_prev=w_prev, w0=w0)
    raise ValueError(f"base must be 'intermediate' or 'last', got {base!r}")


def pre_activation(W, X):
    """Pre-activation ``W @ aug(X)`` of a bias-folded weight matrix."""
    return np.asarray(W, dtype=np.float64) @ augment(X)
