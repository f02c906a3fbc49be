"""Hot numeric kernels, with optional numba acceleration.

Everything here is a plain function of float64 arrays. Each kernel has a pure
numpy implementation and, when numba is importable, an ``@njit``-compiled
twin. The active backend is chosen once at import time from the
``FLNN_BACKEND`` environment variable:

* ``numba``  -- require the compiled kernels, fail if numba is missing
* ``numpy``  -- force the pure-numpy fallback
* unset / ``auto`` -- use numba when available

Matrix products inside kernels go through BLAS either way; what the compiled
path buys is fused elementwise loops (no temporaries) and a Python-free inner
loop for the fixed-step solvers. ``benchmarks/bench_kernels.py`` measures the
difference on realistic shapes.
"""

from __future__ import annotations

import os

import numpy as np

_LOG2 = float(np.log(2.0))


# ---------------------------------------------------------------------------
# numpy implementations
# ---------------------------------------------------------------------------


def _relu_div_sum_np(V, U):
    if np.any(V < 0.0):
        return np.inf
    up = np.maximum(U, 0.0)
    return float(0.5 * np.vdot(V, V) + 0.5 * np.vdot(up, up) - np.vdot(U, V))


def _sigmoid_div_sum_np(V, U):
    if np.any(V < 0.0) or np.any(V > 1.0):
        return np.inf
    with np.errstate(divide="ignore", invalid="ignore"):
        ent = np.where(V > 0.0, V * np.log(np.where(V > 0.0, V, 1.0)), 0.0)
        w = 1.0 - V
        ent = ent + np.where(w > 0.0, w * np.log(np.where(w > 0.0, w, 1.0)), 0.0)
    fstar = np.logaddexp(0.0, U) - _LOG2
    return float(np.sum(ent) + V.size * _LOG2 + np.sum(fstar) - np.vdot(U, V))


def _softmax_cols_np(S):
    out = S - S.max(axis=0)
    np.exp(out, out=out)
    out /= out.sum(axis=0)
    return out


def _ce_from_scores_np(S, Y):
    m = S.max(axis=0)
    lse = np.log(np.exp(S - m).sum(axis=0)) + m
    return float(np.dot(lse, Y.sum(axis=0)) - np.vdot(Y, S))


def _quad_prox_pg_np(G, C, Z0, step, tol, max_iters):
    Z = Z0.copy()
    iters = 0
    while True:
        g = G @ Z - C
        R = Z - np.maximum(Z - g, 0.0)
        resid = float(np.sqrt(np.vdot(R, R)))
        if resid <= tol:
            return Z, iters, True, resid
        if iters >= max_iters:
            return Z, iters, False, resid
        Z = np.maximum(Z - step * g, 0.0)
        iters += 1


# ---------------------------------------------------------------------------
# numba loop bodies (compiled below when the backend allows it)
# ---------------------------------------------------------------------------


def _relu_div_sum_loop(V, U):
    v = V.ravel()
    u = U.ravel()
    total = 0.0
    for i in range(v.size):
        vi = v[i]
        if vi < 0.0:
            return np.inf
        ui = u[i]
        up = ui if ui > 0.0 else 0.0
        total += 0.5 * vi * vi + 0.5 * up * up - ui * vi
    return total


def _sigmoid_div_sum_loop(V, U):
    v = V.ravel()
    u = U.ravel()
    total = 0.0
    for i in range(v.size):
        vi = v[i]
        if vi < 0.0 or vi > 1.0:
            return np.inf
        ent = 0.0
        if vi > 0.0:
            ent += vi * np.log(vi)
        wi = 1.0 - vi
        if wi > 0.0:
            ent += wi * np.log(wi)
        ui = u[i]
        if ui > 0.0:
            fstar = ui + np.log1p(np.exp(-ui))
        else:
            fstar = np.log1p(np.exp(ui))
        total += ent + _LOG2 + fstar - _LOG2 - ui * vi
    return total


def _softmax_cols_loop(S):
    p, m = S.shape
    out = np.empty_like(S)
    for j in range(m):
        hi = S[0, j]
        for i in range(1, p):
            if S[i, j] > hi:
                hi = S[i, j]
        tot = 0.0
        for i in range(p):
            e = np.exp(S[i, j] - hi)
            out[i, j] = e
            tot += e
        for i in range(p):
            out[i, j] /= tot
    return out


def _ce_from_scores_loop(S, Y):
    p, m = S.shape
    total = 0.0
    for j in range(m):
        hi = S[0, j]
        for i in range(1, p):
            if S[i, j] > hi:
                hi = S[i, j]
        tot = 0.0
        for i in range(p):
            tot += np.exp(S[i, j] - hi)
        lse = np.log(tot) + hi
        for i in range(p):
            yij = Y[i, j]
            if yij != 0.0:
                total += yij * (lse - S[i, j])
    return total


def _quad_prox_pg_loop(G, C, Z0, step, tol, max_iters):
    Z = Z0.copy()
    iters = 0
    while True:
        g = np.dot(G, Z) - C
        resid_sq = 0.0
        for i in range(Z.shape[0]):
            for j in range(Z.shape[1]):
                t = Z[i, j] - g[i, j]
                if t < 0.0:
                    t = 0.0
                d = Z[i, j] - t
                resid_sq += d * d
        resid = np.sqrt(resid_sq)
        if resid <= tol:
            return Z, iters, True, resid
        if iters >= max_iters:
            return Z, iters, False, resid
        for i in range(Z.shape[0]):
            for j in range(Z.shape[1]):
                t = Z[i, j] - step * g[i, j]
                Z[i, j] = t if t > 0.0 else 0.0
        iters += 1


# ---------------------------------------------------------------------------
# backend selection
# ---------------------------------------------------------------------------

_NUMPY_IMPLS = {
    "relu_div_sum": _relu_div_sum_np,
    "sigmoid_div_sum": _sigmoid_div_sum_np,
    "softmax_cols": _softmax_cols_np,
    "ce_from_scores": _ce_from_scores_np,
    "quad_prox_pg": _quad_prox_pg_np,
}


def _compile_numba_impls():
    from numba import njit

    jit = lambda f: njit(cache=True, fastmath=False)(f)  # noqa: E731
    return {
        "relu_div_sum": jit(_relu_div_sum_loop),
        "sigmoid_div_sum": jit(_sigmoid_div_sum_loop),
        "softmax_cols": jit(_softmax_cols_loop),
        "ce_from_scores": jit(_ce_from_scores_loop),
        "quad_prox_pg": jit(_quad_prox_pg_loop),
    }


#: kernels where the compiled loop actually beats vectorized numpy on
#: realistic shapes (see benchmarks/bench_kernels.py); the softmax family
#: works on 10-row matrices where numpy's vectorized form wins, so "auto"
#: keeps those on the numpy path
_NUMBA_WINS = ("relu_div_sum", "sigmoid_div_sum", "quad_prox_pg")


def _select_backend():
    choice = os.environ.get("FLNN_BACKEND", "auto").strip().lower()
    if choice not in ("auto", "numba", "numpy"):
        raise ValueError(f"FLNN_BACKEND must be 'numba', 'numpy' or 'auto', got {choice!r}")
    if choice == "numpy":
        return "numpy", _NUMPY_IMPLS
    try:
        numba_impls = _compile_numba_impls()
    except ImportError:
        if choice == "numba":
            raise RuntimeError("FLNN_BACKEND=numba but numba is not importable")
        return "numpy", _NUMPY_IMPLS
    if choice == "numba":
        return "numba", numba_impls
    mixed = dict(_NUMPY_IMPLS)
    mixed.update({k: numba_impls[k] for k in _NUMBA_WINS})
    return "numba", mixed


BACKEND, _ACTIVE = _select_backend()


def _as64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


# ---------------------------------------------------------------------------
# public kernels
# ---------------------------------------------------------------------------


def relu_div_sum(V, U):
    """Sum of 0.5*v^2 + 0.5*max(0,u)^2 - u*v over entries; +inf if any v < 0."""
    return float(_ACTIVE["relu_div_sum"](_as64(V), _as64(U)))


def sigmoid_div_sum(V, U):
    """Sum of the logistic Fenchel divergence over entries; +inf if any v outside [0, 1]."""
    return float(_ACTIVE["sigmoid_div_sum"](_as64(V), _as64(U)))


def softmax_cols(S):
    """Numerically stable column-wise softmax of a score matrix."""
    return _ACTIVE["softmax_cols"](_as64(S))


def ce_from_scores(S, Y):
    """Cross entropy -sum(Y * log softmax(S)) summed over all columns."""
    return float(_ACTIVE["ce_from_scores"](_as64(S), _as64(Y)))


def quad_prox_pg(G, C, Z0, step, tol, max_iters):
    """Fixed-step projected gradient for min_{Z>=0} 0.5<Z,GZ> - <C,Z>.

    G must be symmetric positive definite and ``step <= 1/lambda_max(G)`` so
    every step is a descent step. Convergence is declared when the unit-step
    projected-gradient residual ``||Z - max(Z - grad, 0)||_F`` drops to
    ``tol``.

    Returns ``(Z, iterations, converged, residual)``.
    """
    Z, iters, conv, resid = _ACTIVE["quad_prox_pg"](
        _as64(G), _as64(C), _as64(Z0), float(step), float(tol), int(max_iters)
    )
    return Z, int(iters), bool(conv), float(resid)


def warmup():
    """Trigger compilation of every kernel on tiny inputs (no-op on numpy)."""
    v = np.array([[0.5, 0.25]])
    u = np.array([[0.1, -0.2]])
    relu_div_sum(v, u)
    sigmoid_div_sum(v, u)
    softmax_cols(v)
    ce_from_scores(v, np.array([[1.0, 0.0]]))
    quad_prox_pg(np.eye(2), np.ones((2, 1)), np.zeros((2, 1)), 0.5, 1e-8, 50)


def implementations():
    """Both full backend tables, for parity tests and benchmarks.

    Returns a dict ``{"numpy": {...}, "numba": {...} or None}``. Note the
    active table may mix the two (see ``_NUMBA_WINS``).
    """
    try:
        numba_impls = _compile_numba_impls()
    except ImportError:
        numba_impls = None
    return {"numpy": _NUMPY_IMPLS, "numba": numba_impls}
