"""Biconvex divergence penalties that encode activation functions.

For an invertible increasing activation ``phi`` the pair ``F(v) = int phi^-1``
and its conjugate ``F*(u) = int phi`` gives the penalty

    B(v, u) = F(v) + F*(u) - u*v,

which is nonnegative everywhere (Fenchel-Young) and zero exactly when
``v = phi(u)``. Minimising ``B`` therefore *softly enforces* the layer
equation ``v = phi(u)`` while staying convex in each argument separately.

Infeasible first arguments (``v`` outside the closure of the activation's
range) evaluate to ``+inf`` rather than raising, so penalty values compose
with objective evaluation; solvers keep iterates feasible by projection and
never differentiate at infeasible points.

Two quadratic penalties are included as baselines for comparison training:
``QUAD_IDENTITY`` is ``(v - u)^2`` and ``QUAD_PLUS`` is ``(v - max(0,u))^2``.
Both act as stand-ins for the ReLU penalty (their forward map is the ReLU and
solvers keep ``v >= 0``), but neither is an exact certificate: the first is
zero at ``v = u`` even where ``relu(u) != u``, and the second is not biconvex.
"""

from __future__ import annotations

import math
from enum import Enum

import numpy as np

from . import kernels

_LOG2 = math.log(2.0)

#: projection margin keeping sigmoid iterates strictly inside (0, 1)
SIGMOID_MARGIN = 1e-7


class ActivationKind(Enum):
    RELU = "relu"
    SIGMOID = "sigmoid"
    QUAD_IDENTITY = "quad-identity"
    QUAD_PLUS = "quad-plus"


#: kinds whose divergence is zero exactly at v = phi(u)
EXACT_KINDS = (ActivationKind.RELU, ActivationKind.SIGMOID)


def sigmoid(u):
    """Elementwise logistic function, stable for large |u|."""
    u = np.asarray(u, dtype=np.float64)
    out = np.empty_like(u)
    pos = u >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-u[pos]))
    e = np.exp(u[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def logit(v):
    """Inverse of :func:`sigmoid`; defined on the open interval (0, 1)."""
    v = np.asarray(v, dtype=np.float64)
    if np.any(v <= 0.0) or np.any(v >= 1.0):
        raise ValueError("logit requires values strictly inside (0, 1)")
    return np.log(v) - np.log1p(-v)


# ---------------------------------------------------------------------------
# scalar penalties
# ---------------------------------------------------------------------------


def relu_divergence(v: float, u: float) -> float:
    """ReLU penalty 0.5*v^2 + 0.5*max(0,u)^2 - u*v for v >= 0, else +inf."""
    if v < 0.0:
        return math.inf
    up = max(0.0, u)
    return 0.5 * v * v + 0.5 * up * up - u * v


def sigmoid_divergence(v: float, u: float) -> float:
    """Logistic penalty F(v) + F*(u) - u*v, +inf for v outside [0, 1].

    ``F(v) = v log v + (1-v) log(1-v) + log 2`` (binary entropy flipped up so
    the minimum over v is 0 at v = 1/2), extended to the endpoints by
    continuity, and ``F*(u) = log(1 + e^u) - log 2``.
    """
    if v < 0.0 or v > 1.0:
        return math.inf
    ent = 0.0
    if v > 0.0:
        ent += v * math.log(v)
    if v < 1.0:
        ent += (1.0 - v) * math.log(1.0 - v)
    fstar = (u + math.log1p(math.exp(-u))) if u > 0 else math.log1p(math.exp(u))
    return ent + _LOG2 + fstar - _LOG2 - u * v


def divergence(kind: ActivationKind, v: float, u: float) -> float:
    """Scalar penalty B(v, u) for the given kind."""
    if kind is ActivationKind.RELU:
        return relu_divergence(v, u)
    if kind is ActivationKind.SIGMOID:
        return sigmoid_divergence(v, u)
    if kind is ActivationKind.QUAD_IDENTITY:
        return (v - u) ** 2
    if kind is ActivationKind.QUAD_PLUS:
        return (v - max(0.0, u)) ** 2
    raise ValueError(f"unknown activation kind {kind!r}")


def divergence_grad_u(kind: ActivationKind, v: float, u: float) -> float:
    """dB/du at (v, u). Requires v feasible for the kind."""
    _require_feasible(kind, v)
    if kind is ActivationKind.RELU:
        return max(0.0, u) - v
    if kind is ActivationKind.SIGMOID:
        return float(sigmoid(u)) - v
    if kind is ActivationKind.QUAD_IDENTITY:
        return -2.0 * (v - u)
    if kind is ActivationKind.QUAD_PLUS:
        return -2.0 * (v - u) if u > 0.0 else 0.0
    raise ValueError(f"unknown activation kind {kind!r}")


def divergence_grad_v(kind: ActivationKind, v: float, u: float) -> float:
    """dB/dv at (v, u). Requires v strictly feasible for the kind."""
    _require_feasible(kind, v, strict=True)
    if kind is ActivationKind.RELU:
        return v - u
    if kind is ActivationKind.SIGMOID:
        return math.log(v) - math.log1p(-v) - u
    if kind is ActivationKind.QUAD_IDENTITY:
        return 2.0 * (v - u)
    if kind is ActivationKind.QUAD_PLUS:
        return 2.0 * (v - max(0.0, u))
    raise ValueError(f"unknown activation kind {kind!r}")


def _require_feasible(kind, v, strict=False):
    if kind is ActivationKind.SIGMOID:
        bad = not (0.0 < v < 1.0) if strict else not (0.0 <= v <= 1.0)
    else:
        bad = v < 0.0
    if bad:
        raise ValueError(f"value {v!r} is infeasible for {kind.value}; gradient undefined")


# ---------------------------------------------------------------------------
# matrix penalties
# ---------------------------------------------------------------------------


def matrix_divergence(kind: ActivationKind, V, U) -> float:
    """Entrywise sum of B over two equally shaped matrices."""
    V = np.asarray(V, dtype=np.float64)
    U = np.asarray(U, dtype=np.float64)
    if V.shape != U.shape:
        raise ValueError(f"shape mismatch: {V.shape} vs {U.shape}")
    if kind is ActivationKind.RELU:
        return kernels.relu_div_sum(V, U)
    if kind is ActivationKind.SIGMOID:
        return kernels.sigmoid_div_sum(V, U)
    if kind is ActivationKind.QUAD_IDENTITY:
        d = V - U
        return float(np.vdot(d, d))
    if kind is ActivationKind.QUAD_PLUS:
        d = V - np.maximum(U, 0.0)
        return float(np.vdot(d, d))
    raise ValueError(f"unknown activation kind {kind!r}")


def feasibility_residual(kind: ActivationKind, V, U) -> float:
    """How far V is from being phi(U); zero iff V = phi(U) entrywise."""
    return matrix_divergence(kind, V, U)


def grad_u_matrix(kind: ActivationKind, V, U):
    """Entrywise dB/du as a matrix; V must be feasible."""
    V = np.asarray(V, dtype=np.float64)
    U = np.asarray(U, dtype=np.float64)
    if kind is ActivationKind.RELU:
        return np.maximum(U, 0.0) - V
    if kind is ActivationKind.SIGMOID:
        return sigmoid(U) - V
    if kind is ActivationKind.QUAD_IDENTITY:
        return 2.0 * (U - V)
    if kind is ActivationKind.QUAD_PLUS:
        return np.where(U > 0.0, 2.0 * (U - V), 0.0)
    raise ValueError(f"unknown activation kind {kind!r}")


def grad_v_matrix(kind: ActivationKind, V, U):
    """Entrywise dB/dv as a matrix; V must be strictly feasible."""
    V = np.asarray(V, dtype=np.float64)
    U = np.asarray(U, dtype=np.float64)
    if kind is ActivationKind.RELU:
        return V - U
    if kind is ActivationKind.SIGMOID:
        return logit(V) - U
    if kind is ActivationKind.QUAD_IDENTITY:
        return 2.0 * (V - U)
    if kind is ActivationKind.QUAD_PLUS:
        return 2.0 * (V - np.maximum(U, 0.0))
    raise ValueError(f"unknown activation kind {kind!r}")


def apply_activation(kind: ActivationKind, U):
    """Forward map phi of the kind, applied entrywise.

    The quadratic baselines stand in for the ReLU penalty, so their forward
    map is the ReLU as well.
    """
    U = np.asarray(U, dtype=np.float64)
    if kind is ActivationKind.SIGMOID:
        return sigmoid(U)
    return np.maximum(U, 0.0)


def project_feasible(kind: ActivationKind, Z):
    """Euclidean projection onto the kind's feasible set for the v-argument.

    Sigmoid projects onto [margin, 1 - margin] so divergence gradients stay
    finite at the returned point; everything else projects onto Z >= 0.
    """
    Z = np.asarray(Z, dtype=np.float64)
    if kind is ActivationKind.SIGMOID:
        return np.clip(Z, SIGMOID_MARGIN, 1.0 - SIGMOID_MARGIN)
    return np.maximum(Z, 0.0)


def is_feasible(kind: ActivationKind, V) -> bool:
    V = np.asarray(V)
    if kind is ActivationKind.SIGMOID:
        return bool(np.all(V >= 0.0) and np.all(V <= 1.0))
    return bool(np.all(V >= 0.0))
