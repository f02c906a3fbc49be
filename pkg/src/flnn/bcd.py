"""Alternating trainers: full-dataset and batched block-coordinate descent.

One alternation updates the blocks in a fixed order: the last activation
matrix, then the remaining activation matrices from the top down, then the
output weights, then the hidden weights from the top down. Each update is an
exact (or tolerance-bounded) convex solve warm-started at the current block
value, so the lifted objective never increases within an alternation.

The batched trainer snapshots the weights before each batch, re-initialises
the activation variables by feeding the batch forward, and damps the weight
updates toward the snapshot; everything else is shared with the full trainer.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import solvers
from .data import Dataset, batches
from .divergence import ActivationKind, matrix_divergence
from .network import (
    Hyperparams,
    LiftedState,
    NetworkSpec,
    Weights,
    accuracy,
    augment,
    feed_forward,
    lifted_objective,
    loss_value,
    standard_objective,
)

#: relative objective change that counts as converged (full mode)
REL_OBJ_TOL = 1e-6


@dataclass
class ReportRow:
    epoch: int
    batch: int
    lifted_obj: float
    std_obj: float
    train_acc: float
    test_acc: float
    seconds: float


@dataclass
class TrainReport:
    method: str
    rows: list[ReportRow] = field(default_factory=list)
    block_deltas: list[dict[str, float]] = field(default_factory=list)
    nonconverged: dict[str, int] = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)
    #: sum of divergence penalties at the final iterate (nan for baselines)
    final_divergence_penalty: float = float("nan")

    @property
    def final_test_accuracy(self) -> float:
        return self.rows[-1].test_acc if self.rows else float("nan")

    def test_accuracy_at_epoch(self, epoch: int) -> float:
        rows = [r for r in self.rows if r.epoch == epoch]
        return rows[-1].test_acc if rows else float("nan")


def _note_nonconverged(report: TrainReport, label: str, res: solvers.SolveResult):
    if not res.converged:
        report.nonconverged[label] = report.nonconverged.get(label, 0) + 1
        if len(report.warnings) < 20:
            report.warnings.append(
                f"{label}: stopped at {res.iterations} iters, residual {res.grad_norm:.3g}"
            )


def x_phase(
    spec: NetworkSpec,
    w: Weights,
    state: LiftedState,
    h: Hyperparams,
    cfg: solvers.ProjGradConfig,
    trace=None,
    report: TrainReport | None = None,
    deltas: dict | None = None,
    obj_tracker=None,
):
    """Update all activation blocks in place, top layer first."""
    L = spec.hidden_layers
    layers = state.all_layers()
    U = solvers.pre_activation(w.mats[L - 1], layers[L - 1])
    res = solvers.solve_x_last(
        spec.loss, spec.activations[L - 1], w.mats[L], state.labels, U, h.lam, cfg,
        z0=state.acts[L - 1],
    )
    state.acts[L - 1] = res.solution
    if trace:
        trace("x", L)
    if report is not None:
        _note_nonconverged(report, f"x{L}", res)
    if deltas is not None:
        deltas[f"x{L}"] = obj_tracker(f"x{L}")
    for l in range(L - 1, 0, -1):
        layers = state.all_layers()
        U_prev = solvers.pre_activation(w.mats[l - 1], layers[l - 1])
        res = solvers.solve_x_intermediate(
            spec.activations[l], spec.activations[l - 1], w.mats[l],
            layers[l + 1], U_prev, cfg, z0=state.acts[l - 1],
        )
        state.acts[l - 1] = res.solution
        if trace:
            trace("x", l)
        if report is not None:
            _note_nonconverged(report, f"x{l}", res)
        if deltas is not None:
            deltas[f"x{l}"] = obj_tracker(f"x{l}")


def w_phase(
    spec: NetworkSpec,
    w: Weights,
    state: LiftedState,
    h: Hyperparams,
    cfg: solvers.ProjGradConfig,
    rho,
    gamma=None,
    w_prev: Weights | None = None,
    trace=None,
    report: TrainReport | None = None,
    deltas: dict | None = None,
    obj_tracker=None,
):
    """Update all weight blocks in place, output layer first."""
    L = spec.hidden_layers
    layers = state.all_layers()
    res = solvers.solve_w_last(
        spec.loss, augment(layers[L]), state.labels, rho[L], cfg,
        gamma=(gamma[L] if gamma is not None else 0.0),
        w_prev=(w_prev.mats[L] if w_prev is not None else None),
        w0=w.mats[L],
    )
    w.mats[L] = res.solution
    if trace:
        trace("w", L)
    if report is not None:
        _note_nonconverged(report, f"w{L}", res)
    if deltas is not None:
        deltas[f"w{L}"] = obj_tracker(f"w{L}")
    for l in range(L - 1, -1, -1):
        res = solvers.solve_w_intermediate(
            spec.activations[l], layers[l + 1], augment(layers[l]), h.lam, rho[l], cfg,
            gamma=(gamma[l] if gamma is not None else 0.0),
            w_prev=(w_prev.mats[l] if w_prev is not None else None),
            w0=w.mats[l],
        )
        w.mats[l] = res.solution
        if trace:
            trace("w", l)
        if report is not None:
            _note_nonconverged(report, f"w{l}", res)
        if deltas is not None:
            deltas[f"w{l}"] = obj_tracker(f"w{l}")


def _alternation(spec, w, state, h, cfg_x, cfg_w, rho, gamma, w_prev, trace, report, track):
    """One full X-then-W sweep; returns the lifted objective afterwards."""
    prev_w = w_prev if gamma is not None else None
    deltas = {} if track else None
    obj_tracker = None
    if track:
        last = [lifted_objective(spec, w, state, h, prev_w=prev_w)]

        def obj_tracker(_label):
            new = lifted_objective(spec, w, state, h, prev_w=prev_w)
            delta = new - last[0]
            last[0] = new
            return delta

    x_phase(spec, w, state, h, cfg_x, trace, report, deltas, obj_tracker)
    w_phase(spec, w, state, h, cfg_w, rho, gamma, w_prev, trace, report, deltas, obj_tracker)
    if track:
        report.block_deltas.append(deltas)
        return last[0]
    return lifted_objective(spec, w, state, h, prev_w=prev_w)


def _solver_cfgs(h: Hyperparams):
    cfg_x = solvers.ProjGradConfig(tol=h.inner_tol, max_iters=h.inner_max_iters)
    cfg_w = solvers.ProjGradConfig(
        tol=h.inner_tol, max_iters=h.w_steps if h.w_steps else h.inner_max_iters
    )
    return cfg_x, cfg_w


def train_full(
    spec: NetworkSpec,
    data: Dataset,
    h: Hyperparams,
    test_data: Dataset | None = None,
    trace=None,
    metrics_every: int = 1,
    track_blocks: bool = True,
    w_init: Weights | None = None,
):
    """Whole-dataset alternating descent.

    Weights start from the seeded Gaussian init, activation variables from a
    feed-forward pass (every divergence term starts at zero). Stops after
    ``h.outer_max_iters`` alternations or when the relative objective change
    drops below ``REL_OBJ_TOL``. Returns ``(weights, report)``.
    """
    X0, Y = data.inputs, data.labels
    if X0.shape[1] == 0:
        raise ValueError("empty dataset")
    w = w_init.copy() if w_init is not None else Weights.init_gaussian(spec, h.seed)
    acts, _ = feed_forward(spec, w, X0)
    state = LiftedState([a.copy() for a in acts[1:]], X0, Y)
    rho = h.resolved_rho(spec)
    cfg_x, cfg_w = _solver_cfgs(h)
    report = TrainReport(method="lifted-full")
    labels_idx = data.label_indices
    test_idx = test_data.label_indices if test_data is not None else None

    t0 = time.perf_counter()
    prev_obj = lifted_objective(spec, w, state, h)
    test_acc = float("nan")
    for it in range(1, h.outer_max_iters + 1):
        obj = _alternation(spec, w, state, h, cfg_x, cfg_w, rho, None, None, trace, report, track_blocks)
        rel = abs(prev_obj - obj) / max(1.0, abs(prev_obj))
        done = rel < REL_OBJ_TOL or it == h.outer_max_iters
        std = standard_objective(spec, w, X0, Y, rho)
        train_acc = accuracy(spec, w, X0, labels_idx)
        if test_data is not None and (it % metrics_every == 0 or done):
            test_acc = accuracy(spec, w, test_data.inputs, test_idx)
        report.rows.append(
            ReportRow(it, 0, obj, std, train_acc, test_acc, time.perf_counter() - t0)
        )
        prev_obj = obj
        if rel < REL_OBJ_TOL:
            break
    report.final_divergence_penalty = _divergence_penalty(spec, w, state)
    return w, report


def _divergence_penalty(spec: NetworkSpec, w: Weights, state: LiftedState) -> float:
    layers = state.all_layers()
    return sum(
        matrix_divergence(spec.activations[l], layers[l + 1], w.mats[l] @ augment(layers[l]))
        for l in range(spec.hidden_layers)
    )


def train_batched(
    spec: NetworkSpec,
    data: Dataset,
    h: Hyperparams,
    test_data: Dataset | None = None,
    trace=None,
    metrics_every: int = 10,
    track_blocks: bool = False,
):
    """Minibatch alternating descent with proximally damped weight updates.

    Per batch: snapshot the weights, re-initialise the activation variables by
    feeding the batch forward, then run ``h.alternations_K`` X/W sweeps whose
    weight subproblems pull toward the snapshot with weights ``h.gamma``.
    ``h.outer_max_iters`` counts epochs; batches are a seeded shuffled
    partition per epoch. Returns ``(weights, report)``.
    """
    if h.batch_size > data.num_cols:
        raise ValueError("batch_size exceeds dataset size")
    w = Weights.init_gaussian(spec, h.seed)
    rho = h.resolved_rho(spec)
    gamma = h.resolved_gamma(spec)
    cfg_x, cfg_w = _solver_cfgs(h)
    report = TrainReport(method="lifted-batched")
    test_idx = test_data.label_indices if test_data is not None else None

    t0 = time.perf_counter()
    test_acc = float("nan")
    global_batch = 0
    for epoch in range(1, h.outer_max_iters + 1):
        slices = batches(data, h.batch_size, h.seed, epoch)
        for bi, idx in enumerate(slices):
            idx = np.sort(idx)  # stable column order inside the batch
            Xb = data.inputs[:, idx]
            Yb = data.labels[:, idx]
            w_prev = w.copy()
            acts, _ = feed_forward(spec, w, Xb)
            state = LiftedState(acts[1:], Xb, Yb)
            obj = float("nan")
            for _ in range(h.alternations_K):
                obj = _alternation(
                    spec, w, state, h, cfg_x, cfg_w, rho, gamma, w_prev, trace, report, track_blocks
                )
            global_batch += 1
            std = standard_objective(spec, w, Xb, Yb, rho)
            train_acc = accuracy(spec, w, Xb, np.argmax(Yb, axis=0))
            last = epoch == h.outer_max_iters and bi == len(slices) - 1
            if test_data is not None and (
                global_batch % metrics_every == 0 or bi == len(slices) - 1 or last
            ):
                test_acc = accuracy(spec, w, test_data.inputs, test_idx)
            report.rows.append(
                ReportRow(epoch, bi, obj, std, train_acc, test_acc, time.perf_counter() - t0)
            )
            if last:
                report.final_divergence_penalty = _divergence_penalty(spec, w, state)
    return w, report


# ---------------------------------------------------------------------------
# multiplier scaling
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ScalingProfile:
    """Per-constraint multipliers plus the free top-layer scale.

    ``per_layer_lambdas`` weighs the divergence of layers ``0 .. L-1``;
    ``lambda_last`` is the free parameter left to the top layer after the
    change of variables (1.0 keeps the output weights' scale).
    """

    per_layer_lambdas: tuple[float, ...]
    lambda_last: float = 1.0

    def __post_init__(self):
        vals = tuple(float(v) for v in self.per_layer_lambdas)
        object.__setattr__(self, "per_layer_lambdas", vals)
        if any(v <= 0 for v in vals) or self.lambda_last <= 0:
            raise ValueError("all multipliers must be positive")


def multi_penalty_objective(spec: NetworkSpec, w: Weights, s: LiftedState, rho, lambdas) -> float:
    """Lifted objective with one multiplier per divergence term."""
    layers = s.all_layers()
    pred = w.mats[-1] @ augment(layers[-1])
    total = loss_value(spec, pred, s.labels)
    for r, W in zip(rho, w.mats):
        if r:
            total += float(r) * float(np.vdot(W, W))
    for l in range(spec.hidden_layers):
        pre = w.mats[l] @ augment(layers[l])
        total += float(lambdas[l]) * matrix_divergence(spec.activations[l], layers[l + 1], pre)
    return total


def _check_homogeneous(spec: NetworkSpec):
    if any(a is ActivationKind.SIGMOID for a in spec.activations):
        raise ValueError(
            "multiplier scaling needs degree-2 homogeneous penalties; "
            "sigmoid activations do not qualify"
        )


def _scale_factors(spec: NetworkSpec, profile: ScalingProfile):
    L = spec.hidden_layers
    if len(profile.per_layer_lambdas) != L:
        raise ValueError(f"need {L} per-layer multipliers")
    return [1.0, *profile.per_layer_lambdas, profile.lambda_last]  # lambda_{-1} .. lambda_L


def scale_to_single_lambda(spec: NetworkSpec, profile: ScalingProfile, w: Weights, s: LiftedState, rho):
    """Fold per-layer multipliers into the variables.

    Degree-2 homogeneity gives ``lam * B(V, U) = B(sqrt(lam) V, sqrt(lam) U)``,
    so rescaling activations by ``sqrt(lambda_{l-1})``, the non-bias weight
    block by ``sqrt(lambda_l / lambda_{l-1})`` and the bias column by
    ``sqrt(lambda_l)`` turns every weighted divergence into an unweighted one:
    with ``lambda_last = 1`` the multi-multiplier objective at the original
    variables equals the single-multiplier objective (lam = 1) at the scaled
    variables. The weight-decay correspondence ``rho_l * lambda_{l-1}/lambda_l``
    is exact whenever the decay is zero or the bias columns are (the bias
    column scales differently from the rest of its matrix).

    Returns ``(weights, state, scaled_rho, lambda_last)``.
    """
    _check_homogeneous(spec)
    lams = _scale_factors(spec, profile)
    mats = []
    for l, W in enumerate(w.mats):
        Wb = W.copy()
        Wb[:, :-1] *= np.sqrt(lams[l + 1] / lams[l])
        Wb[:, -1] *= np.sqrt(lams[l + 1])
        mats.append(Wb)
    acts = [np.sqrt(lams[l]) * s.acts[l - 1] for l in range(1, spec.hidden_layers + 1)]
    rho_scaled = [float(r) * lams[l] / lams[l + 1] for l, r in enumerate(rho)]
    return Weights(mats), LiftedState(acts, s.input, s.labels), rho_scaled, profile.lambda_last


def unscale_from_single_lambda(spec: NetworkSpec, profile: ScalingProfile, w: Weights, s: LiftedState, rho_scaled):
    """Inverse of :func:`scale_to_single_lambda`."""
    _check_homogeneous(spec)
    lams = _scale_factors(spec, profile)
    mats = []
    for l, W in enumerate(w.mats):
        Wb = W.copy()
        Wb[:, :-1] /= np.sqrt(lams[l + 1] / lams[l])
        Wb[:, -1] /= np.sqrt(lams[l + 1])
        mats.append(Wb)
    acts = [s.acts[l - 1] / np.sqrt(lams[l]) for l in range(1, spec.hidden_layers + 1)]
    rho = [float(r) * lams[l + 1] / lams[l] for l, r in enumerate(rho_scaled)]
    return Weights(mats), LiftedState(acts, s.input, s.labels), rho


def dual_value(spec: NetworkSpec, data: Dataset, lam: float, h: Hyperparams) -> float:
    """Objective value reached by full-dataset descent at the given multiplier.

    Approximates the dual function from above: descent reaches a stationary
    point, not a certified global minimum, so the true dual value at ``lam``
    is at most this number.
    """
    w, report = train_full(spec, data, replace(h, lam=lam), track_blocks=False)
    return report.rows[-1].lifted_obj
