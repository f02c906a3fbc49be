"""Architecture description, containers, feed-forward pass and objectives.

A network with ``L`` hidden layers is described by ``L + 2`` layer widths
``(n, p_1, ..., p_L, p)``, ``L`` activation kinds and a loss. Biases are
folded into the weight matrices: layer ``l`` owns a ``p_{l+1} x (p_l + 1)``
matrix whose last column multiplies a constant row of ones appended to the
incoming activations (:func:`augment`).

Both training paths evaluate their objectives through the functions here, so
reported losses and accuracies are directly comparable.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import kernels
from .divergence import ActivationKind, apply_activation, matrix_divergence


class Loss(Enum):
    MSE = "mse"
    CROSS_ENTROPY = "ce"


@dataclass(frozen=True)
class NetworkSpec:
    """Layer widths, one activation kind per hidden layer, and a loss."""

    layer_widths: tuple[int, ...]
    activations: tuple[ActivationKind, ...]
    loss: Loss

    def __post_init__(self):
        widths = tuple(int(w) for w in self.layer_widths)
        acts = tuple(self.activations)
        object.__setattr__(self, "layer_widths", widths)
        object.__setattr__(self, "activations", acts)
        if len(widths) < 3:
            raise ValueError("need at least one hidden layer: widths (n, p_1, ..., p)")
        if any(w <= 0 for w in widths):
            raise ValueError(f"layer widths must be positive, got {widths}")
        if len(acts) != self.hidden_layers:
            raise ValueError(
                f"expected {self.hidden_layers} activation kinds, got {len(acts)}"
            )
        if self.loss is Loss.CROSS_ENTROPY and acts[-1] not in (
            ActivationKind.RELU,
            ActivationKind.SIGMOID,
        ):
            raise ValueError(
                "cross entropy needs a ReLU or sigmoid activation on the layer "
                "feeding the output (the final activation-variable update relies on it)"
            )

    @property
    def hidden_layers(self) -> int:
        return len(self.layer_widths) - 2

    @property
    def input_dim(self) -> int:
        return self.layer_widths[0]

    @property
    def output_dim(self) -> int:
        return self.layer_widths[-1]

    def weight_shape(self, layer: int) -> tuple[int, int]:
        return (self.layer_widths[layer + 1], self.layer_widths[layer] + 1)


@dataclass
class Weights:
    """Per-layer weight matrices with the bias folded into the last column."""

    mats: list[np.ndarray]

    def validate(self, spec: NetworkSpec):
        if len(self.mats) != spec.hidden_layers + 1:
            raise ValueError(f"expected {spec.hidden_layers + 1} matrices, got {len(self.mats)}")
        for l, W in enumerate(self.mats):
            if W.shape != spec.weight_shape(l):
                raise ValueError(f"layer {l}: shape {W.shape} != {spec.weight_shape(l)}")
            if not np.all(np.isfinite(W)):
                raise ValueError(f"layer {l}: non-finite entries")

    def copy(self) -> "Weights":
        return Weights([W.copy() for W in self.mats])

    @classmethod
    def init_gaussian(cls, spec: NetworkSpec, seed: int) -> "Weights":
        """He-style init: std sqrt(2 / fan_in), zero bias column, seeded."""
        rng = np.random.default_rng(seed)
        mats = []
        for l in range(spec.hidden_layers + 1):
            fan_in = spec.layer_widths[l]
            W = np.zeros(spec.weight_shape(l))
            W[:, :-1] = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(W.shape[0], fan_in))
            mats.append(W)
        return cls(mats)


@dataclass
class LiftedState:
    """Per-layer activation matrices treated as free optimisation variables.

    ``acts[l-1]`` holds the layer-l activation matrix (shape ``p_l x m``);
    the network input and the label matrix ride along so every objective is
    a function of this one object plus weights.
    """

    acts: list[np.ndarray]
    input: np.ndarray
    labels: np.ndarray

    @property
    def num_cols(self) -> int:
        return self.input.shape[1]

    def all_layers(self) -> list[np.ndarray]:
        """[X_0, X_1, ..., X_L] with X_0 the input."""
        return [self.input, *self.acts]

    def validate(self, spec: NetworkSpec):
        if len(self.acts) != spec.hidden_layers:
            raise ValueError(f"expected {spec.hidden_layers} activation matrices")
        m = self.input.shape[1]
        if self.input.shape[0] != spec.input_dim:
            raise ValueError("input row count does not match the architecture")
        if self.labels.shape != (spec.output_dim, m):
            raise ValueError("label matrix shape mismatch")
        for l, X in enumerate(self.acts):
            if X.shape != (spec.layer_widths[l + 1], m):
                raise ValueError(f"activation {l + 1} shape mismatch: {X.shape}")

    def copy(self) -> "LiftedState":
        return LiftedState([X.copy() for X in self.acts], self.input, self.labels)


@dataclass
class Hyperparams:
    """Knobs for the block-coordinate trainers.

    ``lam`` weighs the divergence penalties, ``rho`` the weight decay per
    layer, ``gamma`` the per-layer proximal pull toward the previous batch's
    weights (batched mode only). ``outer_max_iters`` counts full alternations
    in full-batch mode and epochs in batched mode. ``w_steps`` optionally caps
    the weight-subproblem iterations (inexact weight updates); ``None`` solves
    to tolerance.
    """

    lam: float = 10.0
    rho: list[float] = field(default_factory=list)
    gamma: list[float] = field(default_factory=list)
    batch_size: int = 500
    alternations_K: int = 1
    inner_tol: float = 1e-4
    inner_max_iters: int = 200
    outer_max_iters: int = 30
    seed: int = 0
    w_steps: int | None = None

    def __post_init__(self):
        if self.lam <= 0:
            raise ValueError("lam must be positive")
        if self.batch_size < 1 or self.alternations_K < 1:
            raise ValueError("batch_size and alternations_K must be >= 1")

    def resolved_rho(self, spec: NetworkSpec) -> np.ndarray:
        return _resolve_per_layer(self.rho, spec, "rho")

    def resolved_gamma(self, spec: NetworkSpec) -> np.ndarray:
        return _resolve_per_layer(self.gamma, spec, "gamma")

    @classmethod
    def defaults_full(cls, **kw) -> "Hyperparams":
        """Full-dataset mode: small weight decay, no proximal term."""
        kw.setdefault("rho", [1e-4])
        kw.setdefault("gamma", [0.0])
        return cls(**kw)

    @classmethod
    def defaults_batched(cls, **kw) -> "Hyperparams":
        """Batched mode: no weight decay, proximal pull toward previous batch."""
        kw.setdefault("rho", [0.0])
        kw.setdefault("gamma", [1.0])
        kw.setdefault("outer_max_iters", 10)
        return cls(**kw)


def _resolve_per_layer(values, spec: NetworkSpec, name: str) -> np.ndarray:
    """Broadcast an empty/scalar/full list to one nonnegative value per layer."""
    n = spec.hidden_layers + 1
    if values is None or len(values) == 0:
        out = np.zeros(n)
    elif len(values) == 1:
        out = np.full(n, float(values[0]))
    elif len(values) == n:
        out = np.asarray([float(v) for v in values])
    else:
        raise ValueError(f"{name} needs 1 or {n} entries, got {len(values)}")
    if np.any(out < 0):
        raise ValueError(f"{name} entries must be nonnegative")
    return out


# ---------------------------------------------------------------------------
# forward pass and objectives
# ---------------------------------------------------------------------------


def augment(X: np.ndarray) -> np.ndarray:
    """Append a constant row of ones below X (the bias row)."""
    X = np.asarray(X, dtype=np.float64)
    out = np.empty((X.shape[0] + 1, X.shape[1]))
    out[:-1] = X
    out[-1] = 1.0
    return out


def feed_forward(spec: NetworkSpec, w: Weights, X: np.ndarray):
    """Run the standard recursion.

    Returns ``(activations, prediction)`` where ``activations[0]`` is the
    input and ``activations[l]`` the layer-l output. For cross entropy the
    prediction is the pre-softmax score matrix.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.shape[0] != spec.input_dim:
        raise ValueError(f"input has {X.shape[0]} rows, expected {spec.input_dim}")
    acts = [X]
    for l in range(spec.hidden_layers):
        acts.append(apply_activation(spec.activations[l], w.mats[l] @ augment(acts[-1])))
    prediction = w.mats[-1] @ augment(acts[-1])
    return acts, prediction


def loss_value(spec: NetworkSpec, prediction: np.ndarray, Y: np.ndarray) -> float:
    """Squared Frobenius error or softmax cross entropy, summed over columns."""
    if prediction.shape != Y.shape:
        raise ValueError(f"shape mismatch: {prediction.shape} vs {Y.shape}")
    if spec.loss is Loss.MSE:
        d = Y - prediction
        return float(np.vdot(d, d))
    return kernels.ce_from_scores(prediction, Y)


def standard_objective(spec: NetworkSpec, w: Weights, X, Y, rho) -> float:
    """Feed-forward loss plus weight decay: the quantity backprop trains."""
    _, pred = feed_forward(spec, w, X)
    rho = _resolve_per_layer(list(np.atleast_1d(rho)), spec, "rho")
    reg = sum(r * float(np.vdot(W, W)) for r, W in zip(rho, w.mats))
    return loss_value(spec, pred, Y) + reg


def lifted_objective(
    spec: NetworkSpec,
    w: Weights,
    s: LiftedState,
    h: Hyperparams,
    prev_w: Weights | None = None,
) -> float:
    """Loss at the top plus weight decay plus lam-weighted divergences.

    The layer-(l+1) activation matrix is the first (range-constrained)
    argument of each divergence and the pre-activation ``W_l @ aug(X_l)`` the
    second; infeasible activation values make the result ``+inf``. When
    ``prev_w`` is given the batched proximal terms ``gamma_l ||W_l - W_l^0||^2``
    are added.
    """
    layers = s.all_layers()
    pred = w.mats[-1] @ augment(layers[-1])
    total = loss_value(spec, pred, s.labels)
    rho = h.resolved_rho(spec)
    for r, W in zip(rho, w.mats):
        if r:
            total += r * float(np.vdot(W, W))
    for l in range(spec.hidden_layers):
        pre = w.mats[l] @ augment(layers[l])
        b = matrix_divergence(spec.activations[l], layers[l + 1], pre)
        if not np.isfinite(b):
            return float("inf")
        total += h.lam * b
    if prev_w is not None:
        gamma = h.resolved_gamma(spec)
        for g, W, W0 in zip(gamma, w.mats, prev_w.mats):
            if g:
                d = W - W0
                total += g * float(np.vdot(d, d))
    return total


def predict(spec: NetworkSpec, w: Weights, X_test) -> np.ndarray:
    """Feed-forward class decisions: argmax score per column, lowest index wins ties."""
    _, pred = feed_forward(spec, w, X_test)
    return np.argmax(pred, axis=0)


def accuracy(spec: NetworkSpec, w: Weights, X, label_indices) -> float:
    return float(np.mean(predict(spec, w, X) == np.asarray(label_indices)))


def one_hot(label_indices, num_classes: int) -> np.ndarray:
    """Columns of 0/1 indicators, one column per label."""
    idx = np.asarray(label_indices, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= num_classes):
        raise ValueError("label outside [0, num_classes)")
    out = np.zeros((num_classes, idx.size))
    out[idx, np.arange(idx.size)] = 1.0
    return out


# ---------------------------------------------------------------------------
# checkpoint format
# ---------------------------------------------------------------------------

CHECKPOINT_MAGIC = b"FLNN1"

_ACT_TAGS = {
    ActivationKind.RELU: 0,
    ActivationKind.SIGMOID: 1,
    ActivationKind.QUAD_IDENTITY: 2,
    ActivationKind.QUAD_PLUS: 3,
}
_TAG_ACTS = {v: k for k, v in _ACT_TAGS.items()}
_LOSS_TAGS = {Loss.MSE: 0, Loss.CROSS_ENTROPY: 1}
_TAG_LOSSES = {v: k for k, v in _LOSS_TAGS.items()}


class CheckpointError(Exception):
    """Raised when a checkpoint file is malformed or truncated."""


def save_checkpoint(path, spec: NetworkSpec, w: Weights):
    """Write magic, architecture header and row-major float64 weights."""
    L = spec.hidden_layers
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<i", L))
    buf.write(struct.pack(f"<{L + 2}i", *spec.layer_widths))
    buf.write(struct.pack(f"<{L}i", *(_ACT_TAGS[a] for a in spec.activations)))
    buf.write(struct.pack("<i", _LOSS_TAGS[spec.loss]))
    for W in w.mats:
        buf.write(np.ascontiguousarray(W, dtype="<f8").tobytes())
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_checkpoint(path):
    """Read a checkpoint; returns ``(spec, weights)``. Bit-exact round trip."""
    with open(path, "rb") as fh:
        raw = fh.read()
    try:
        if raw[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
            raise CheckpointError("bad magic; not a checkpoint file")
        off = len(CHECKPOINT_MAGIC)
        (L,) = struct.unpack_from("<i", raw, off)
        off += 4
        if L < 1:
            raise CheckpointError(f"invalid hidden layer count {L}")
        widths = struct.unpack_from(f"<{L + 2}i", raw, off)
        off += 4 * (L + 2)
        act_tags = struct.unpack_from(f"<{L}i", raw, off)
        off += 4 * L
        (loss_tag,) = struct.unpack_from("<i", raw, off)
        off += 4
        spec = NetworkSpec(
            layer_widths=widths,
            activations=tuple(_TAG_ACTS[t] for t in act_tags),
            loss=_TAG_LOSSES[loss_tag],
        )
        mats = []
        for l in range(L + 1):
            rows, cols = spec.weight_shape(l)
            nbytes = rows * cols * 8
            if off + nbytes > len(raw):
                raise CheckpointError("truncated weight data")
            mats.append(
                np.frombuffer(raw, dtype="<f8", count=rows * cols, offset=off)
                .reshape(rows, cols)
                .copy()
            )
            off += nbytes
        if off != len(raw):
            raise CheckpointError("trailing bytes after weight data")
    except (struct.error, KeyError, ValueError) as exc:
        raise CheckpointError(f"malformed checkpoint: {exc}") from exc
    w = Weights(mats)
    w.validate(spec)
    return spec, w
