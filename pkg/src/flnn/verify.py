"""Self-contained invariant checks, runnable from the CLI or from tests.

Each check returns a :class:`CheckResult` instead of asserting, so the CLI can
print a pass/fail table while the test suite turns the same functions into
hard assertions. Checks are seeded and independent of any dataset.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, replace

import numpy as np

from . import solvers
from .baseline import backprop_gradient
from .bcd import (
    ScalingProfile,
    multi_penalty_objective,
    scale_to_single_lambda,
    train_batched,
    train_full,
    unscale_from_single_lambda,
    x_phase,
)
from .data import Dataset
from .divergence import (
    ActivationKind,
    apply_activation,
    divergence,
    divergence_grad_u,
    divergence_grad_v,
)
from .network import (
    Hyperparams,
    LiftedState,
    Loss,
    NetworkSpec,
    Weights,
    feed_forward,
    lifted_objective,
    one_hot,
    standard_objective,
)

ALL_KINDS = (
    ActivationKind.RELU,
    ActivationKind.SIGMOID,
    ActivationKind.QUAD_IDENTITY,
    ActivationKind.QUAD_PLUS,
)

#: kinds whose zero set certifies v = phi(u) (quad-identity is zero at v = u,
#: which is exactly the miscalibration it exists to demonstrate)
CERTIFYING_KINDS = (
    ActivationKind.RELU,
    ActivationKind.SIGMOID,
    ActivationKind.QUAD_PLUS,
)

#: biconvex kinds (quad-plus is not convex in its second argument)
BICONVEX_KINDS = (
    ActivationKind.RELU,
    ActivationKind.SIGMOID,
    ActivationKind.QUAD_IDENTITY,
)


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str


def _sample_feasible(kind, rng, n):
    if kind is ActivationKind.SIGMOID:
        return rng.uniform(0.0, 1.0, n)
    return np.abs(rng.normal(0.0, 2.0, n))


def check_nonnegativity(samples=10**5, seed=0) -> CheckResult:
    """B(v, u) >= 0 for every kind, feasible v, any u (fp slack 1e-12)."""
    rng = np.random.default_rng(seed)
    worst = np.inf
    for kind in ALL_KINDS:
        v = _sample_feasible(kind, rng, samples)
        u = rng.normal(0.0, 3.0, samples)
        vals = np.array([divergence(kind, vi, ui) for vi, ui in zip(v, u)])
        worst = min(worst, float(vals.min()))
    return CheckResult("divergence nonnegativity", worst >= -1e-12, f"min value {worst:.3e}")


def check_equality_characterization(samples=10**5, seed=1) -> CheckResult:
    """A tiny penalty value certifies v = phi(u) and conversely.

    Checks, per certifying kind: (a) B vanishes on the graph v = phi(u);
    (b) whenever B(v, u) <= 1e-12 over a mixed pool of on-graph, near-graph
    and random samples, v is within 1e-6 of phi(u); (c) points displaced from
    the graph by 1e-3 never pass the 1e-12 threshold. Off the graph B can
    grow linearly in the displacement (e.g. a deactivated ReLU entry), so (b)
    is the meaningful direction of the certificate.
    """
    rng = np.random.default_rng(seed)
    details = []
    ok = True
    for kind in CERTIFYING_KINDS:
        u = rng.uniform(-4.0, 4.0, samples)
        phi = np.array([float(apply_activation(kind, ui)) for ui in u])
        on = np.array([divergence(kind, p, ui) for p, ui in zip(phi, u)])
        ok &= bool(np.max(np.abs(on)) <= 1e-12)
        # mixed pool for the certificate direction
        disp = np.concatenate(
            [np.zeros(2000), rng.choice([-1e-8, 1e-8], 2000),
             rng.choice([-1e-4, 1e-4], 2000), rng.normal(0.0, 1.0, 2000)]
        )
        upool = np.tile(u[:2000], 4)
        phip = np.tile(phi[:2000], 4)
        hit = 0
        for p, ui, d in zip(phip, upool, disp):
            v = p + d
            if kind is ActivationKind.SIGMOID:
                v = min(1.0, max(0.0, v))
            elif v < 0.0:
                v = 0.0
            if divergence(kind, v, ui) <= 1e-12:
                hit += 1
                ok &= abs(v - p) <= 1e-6
        off = np.array(
            [divergence(kind,
                        max(0.0, min(1.0, p + d)) if kind is ActivationKind.SIGMOID else p + abs(d),
                        ui)
             for p, ui, d in zip(phip[:2000], upool[:2000], rng.choice([-1e-3, 1e-3], 2000))]
        )
        ok &= bool(np.min(off) > 1e-12)
        details.append(
            f"{kind.value}: on-graph max {np.max(np.abs(on)):.1e}, "
            f"{hit} certified, off-graph min {np.min(off):.1e}"
        )
    return CheckResult("equality characterization", ok, "; ".join(details))


def check_biconvexity(samples=2000, seed=2) -> CheckResult:
    """Midpoint convexity in each argument separately for the biconvex kinds."""
    rng = np.random.default_rng(seed)
    worst = -np.inf
    for kind in BICONVEX_KINDS:
        for _ in range(samples):
            u = rng.normal(0.0, 2.0)
            v1, v2 = _sample_feasible(kind, rng, 2)
            lhs = divergence(kind, 0.5 * (v1 + v2), u)
            rhs = 0.5 * (divergence(kind, v1, u) + divergence(kind, v2, u))
            worst = max(worst, lhs - rhs)
            v = float(_sample_feasible(kind, rng, 1)[0])
            u1, u2 = rng.normal(0.0, 2.0, 2)
            lhs = divergence(kind, v, 0.5 * (u1 + u2))
            rhs = 0.5 * (divergence(kind, v, u1) + divergence(kind, v, u2))
            worst = max(worst, lhs - rhs)
    return CheckResult("biconvexity (midpoint)", worst <= 1e-10, f"max violation {worst:.3e}")


def check_divergence_gradients(samples=4000, seed=3) -> CheckResult:
    """Analytic partials match central differences away from the ReLU kink."""
    rng = np.random.default_rng(seed)
    h = 1e-6
    worst = 0.0
    for kind in ALL_KINDS:
        for _ in range(samples // 4):
            if kind is ActivationKind.SIGMOID:
                v = rng.uniform(0.05, 0.95)
            else:
                v = rng.uniform(0.05, 3.0)
            u = rng.uniform(1e-3, 3.0) * rng.choice([-1.0, 1.0])
            fd_u = (divergence(kind, v, u + h) - divergence(kind, v, u - h)) / (2 * h)
            fd_v = (divergence(kind, v + h, u) - divergence(kind, v - h, u)) / (2 * h)
            au = divergence_grad_u(kind, v, u)
            av = divergence_grad_v(kind, v, u)
            worst = max(
                worst,
                abs(fd_u - au) / max(1.0, abs(au)),
                abs(fd_v - av) / max(1.0, abs(av)),
            )
    return CheckResult("divergence gradients vs finite differences", worst < 1e-5,
                       f"max rel err {worst:.3e}")


def check_relu_homogeneity(samples=10**4, seed=4) -> CheckResult:
    """gamma * B(v, u) == B(sqrt(gamma) v, sqrt(gamma) u) for the ReLU penalty."""
    rng = np.random.default_rng(seed)
    v = np.abs(rng.normal(0.0, 2.0, samples))
    u = rng.normal(0.0, 2.0, samples)
    gam = rng.uniform(0.01, 100.0, samples)
    worst = 0.0
    for vi, ui, gi in zip(v, u, gam):
        a = gi * divergence(ActivationKind.RELU, vi, ui)
        b = divergence(ActivationKind.RELU, np.sqrt(gi) * vi, np.sqrt(gi) * ui)
        worst = max(worst, abs(a - b) / max(1.0, abs(a)))
    return CheckResult("degree-2 homogeneity (ReLU)", worst <= 1e-12, f"max rel err {worst:.3e}")


def _random_net(rng, L=None, loss=None, kinds=None):
    L = L if L is not None else int(rng.integers(1, 3))
    widths = tuple(int(rng.integers(2, 6)) for _ in range(L + 2))
    kinds = kinds or (
        ActivationKind.RELU,
        ActivationKind.SIGMOID,
    )
    acts = tuple(kinds[int(rng.integers(0, len(kinds)))] for _ in range(L))
    loss = loss if loss is not None else (Loss.MSE, Loss.CROSS_ENTROPY)[int(rng.integers(0, 2))]
    if loss is Loss.CROSS_ENTROPY and acts[-1] not in (ActivationKind.RELU, ActivationKind.SIGMOID):
        acts = acts[:-1] + (ActivationKind.RELU,)
    spec = NetworkSpec(widths, acts, loss)
    m = int(rng.integers(4, 11))
    X = rng.normal(size=(widths[0], m))
    if loss is Loss.CROSS_ENTROPY:
        Y = one_hot(rng.integers(0, widths[-1], m), widths[-1])
    else:
        Y = rng.normal(size=(widths[-1], m))
    return spec, X, Y


def check_backprop_gradients(seed=5, nets=6) -> CheckResult:
    """Reverse-mode gradients match central differences on random small nets.

    Nets whose ReLU pre-activations land within 1e-5 of the kink are redrawn:
    the objective is genuinely nondifferentiable there and central differences
    pick up the one-sided slope.
    """
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(nets):
        for _attempt in range(20):
            spec, X, Y = _random_net(rng)
            w = Weights.init_gaussian(spec, int(rng.integers(0, 10**6)))
            for W in w.mats:
                W[:, -1] += rng.normal(0.0, 0.3, W.shape[0])
            if _min_preactivation_gap(spec, w, X) > 1e-5:
                break
        rho = float(rng.uniform(0.0, 1e-2))
        grads = backprop_gradient(spec, w, X, Y, rho)
        for l, G in enumerate(grads):
            for _ in range(6):
                i = int(rng.integers(0, G.shape[0]))
                j = int(rng.integers(0, G.shape[1]))
                e = 1e-6
                wp = w.copy(); wp.mats[l][i, j] += e
                wm = w.copy(); wm.mats[l][i, j] -= e
                fd = (standard_objective(spec, wp, X, Y, rho)
                      - standard_objective(spec, wm, X, Y, rho)) / (2 * e)
                worst = max(worst, abs(fd - G[i, j]) / max(1.0, abs(fd)))
    return CheckResult("backprop vs finite differences", worst < 1e-5, f"max rel err {worst:.3e}")


def _min_preactivation_gap(spec, w, X) -> float:
    """Smallest |pre-activation| over the ReLU-like layers of a forward pass."""
    from flnn.network import augment

    gap = np.inf
    acts, _ = feed_forward(spec, w, X)
    for l in range(spec.hidden_layers):
        if spec.activations[l] is not ActivationKind.SIGMOID:
            pre = w.mats[l] @ augment(acts[l])
            gap = min(gap, float(np.min(np.abs(pre))))
    return gap


def check_scaling_equivalence(seed=6) -> CheckResult:
    """Folding per-layer multipliers into the variables preserves the objective."""
    rng = np.random.default_rng(seed)
    spec = NetworkSpec((2, 3, 2, 2), (ActivationKind.RELU, ActivationKind.RELU), Loss.MSE)
    worst_obj = 0.0
    worst_rt = 0.0
    for bias, rho in ((0.0, 0.05), (0.8, 0.0)):
        w = Weights.init_gaussian(spec, int(rng.integers(0, 10**6)))
        for W in w.mats:
            W[:, -1] = bias
        X = rng.normal(size=(2, 6))
        Y = rng.normal(size=(2, 6))
        acts, _ = feed_forward(spec, w, X)
        s = LiftedState([np.abs(rng.normal(size=a.shape)) for a in acts[1:]], X, Y)
        prof = ScalingProfile((4.0, 0.25), 1.0)
        rho_l = [rho] * 3
        wb, sb, rho_b, _lam_last = scale_to_single_lambda(spec, prof, w, s, rho_l)
        lhs = multi_penalty_objective(spec, w, s, rho_l, prof.per_layer_lambdas)
        rhs = lifted_objective(spec, wb, sb, Hyperparams(lam=1.0, rho=rho_b))
        worst_obj = max(worst_obj, abs(lhs - rhs) / max(1.0, abs(lhs)))
        wu, su, _ = unscale_from_single_lambda(spec, prof, wb, sb, rho_b)
        worst_rt = max(
            worst_rt,
            max(np.abs(a - b).max() for a, b in zip(wu.mats, w.mats)),
            max(np.abs(a - b).max() for a, b in zip(su.acts, s.acts)),
        )
    ok = worst_obj <= 1e-12 and worst_rt <= 1e-14
    return CheckResult("multiplier scaling equivalence", ok,
                       f"objective rel err {worst_obj:.3e}, round trip {worst_rt:.3e}")


def check_block_descent(nets=20, seed=7, inner_tol=1e-8) -> CheckResult:
    """The lifted objective never increases across any block update."""
    rng = np.random.default_rng(seed)
    worst = -np.inf
    for _ in range(nets):
        spec, X, Y = _random_net(rng)
        ds = Dataset(X if spec.loss is Loss.MSE else np.abs(X), Y, "train")
        h = Hyperparams(
            lam=float(rng.choice([0.5, 2.0, 10.0])), rho=[1e-4],
            outer_max_iters=3, inner_tol=inner_tol, inner_max_iters=10**4,
            seed=int(rng.integers(0, 10**6)),
        )
        _, report = train_full(spec, ds, h, track_blocks=True)
        for alt in report.block_deltas:
            for delta in alt.values():
                worst = max(worst, delta)
    return CheckResult("block-monotone descent", worst <= 10 * inner_tol,
                       f"max block delta {worst:.3e} (slack {10 * inner_tol:.1e})")


def check_feasibility_collapse(nets=10, seed=8) -> CheckResult:
    """At feed-forward activations the lifted objective equals the standard one."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(nets):
        spec, X, Y = _random_net(rng)
        w = Weights.init_gaussian(spec, int(rng.integers(0, 10**6)))
        acts, _ = feed_forward(spec, w, X)
        s = LiftedState(acts[1:], X, Y)
        h = Hyperparams(lam=float(rng.uniform(0.5, 20.0)), rho=[1e-3])
        lifted = lifted_objective(spec, w, s, h)
        std = standard_objective(spec, w, X, Y, 1e-3)
        worst = max(worst, abs(lifted - std) / max(1.0, abs(std)))
    return CheckResult("lifted equals standard at feasibility", worst <= 1e-10,
                       f"max rel err {worst:.3e}")


def check_lower_bound(nets=10, seed=9) -> CheckResult:
    """One activation sweep from feed-forward never ends above the standard objective."""
    rng = np.random.default_rng(seed)
    worst = -np.inf
    tol = 1e-8
    for _ in range(nets):
        spec, X, Y = _random_net(rng)
        w = Weights.init_gaussian(spec, int(rng.integers(0, 10**6)))
        acts, _ = feed_forward(spec, w, X)
        s = LiftedState([a.copy() for a in acts[1:]], X, Y)
        h = Hyperparams(lam=float(rng.uniform(0.5, 10.0)), rho=[0.0])
        cfg = solvers.ProjGradConfig(tol=tol, max_iters=10**4)
        x_phase(spec, w, s, h, cfg)
        lifted = lifted_objective(spec, w, s, h)
        std = standard_objective(spec, w, X, Y, 0.0)
        worst = max(worst, lifted - std)
    return CheckResult("lifted lower-bounds standard after X sweep", worst <= 10 * tol,
                       f"max excess {worst:.3e}")


def _nnls_oracle_column(Wt, b, y, u, lam):
    """Global minimum of ||y - Wt z - b||^2 + (lam/2)||z - u||^2, z >= 0,
    by enumerating active sets (valid because the problem is strictly convex)."""
    q = Wt.shape[1]
    yp = y - b
    best = np.inf
    for r in range(q + 1):
        for free in itertools.combinations(range(q), r):
            z = np.zeros(q)
            if free:
                F = list(free)
                M = 2.0 * Wt[:, F].T @ Wt[:, F] + lam * np.eye(len(F))
                rhs = 2.0 * Wt[:, F].T @ yp + lam * u[F]
                zf = np.linalg.solve(M, rhs)
                if np.min(zf) < -1e-12:
                    continue
                z[F] = np.maximum(zf, 0.0)
            r_vec = yp - Wt @ z
            obj = float(r_vec @ r_vec + 0.5 * lam * np.sum((z - u) ** 2))
            best = min(best, obj)
    return best


def check_nnls_oracle(instances=100, seed=10) -> CheckResult:
    """The proximal NNLS solver matches exhaustive active-set enumeration."""
    rng = np.random.default_rng(seed)
    cfg = solvers.ProjGradConfig(tol=1e-10, max_iters=10**5)
    worst = 0.0
    for _ in range(instances):
        q = int(rng.integers(1, 6))        # solution rows (enumerable)
        p = int(rng.integers(1, 7))        # output rows
        cols = int(rng.integers(1, 4))
        lam = float(rng.uniform(0.1, 10.0))
        W = rng.normal(size=(p, q + 1))
        Y = rng.normal(size=(p, cols))
        U = rng.normal(size=(q, cols))
        res = solvers.solve_x_last_mse(W, Y, U, lam, cfg)
        oracle = sum(
            _nnls_oracle_column(W[:, :-1], W[:, -1], Y[:, c], U[:, c], lam)
            for c in range(cols)
        )
        worst = max(worst, abs(res.objective - oracle))
    return CheckResult("proximal NNLS vs active-set oracle", worst <= 1e-8,
                       f"max objective gap {worst:.3e}")


def check_pg_box_qp(instances=20, seed=11, dim=10) -> CheckResult:
    """Generic projected gradient matches active-set enumeration on box QPs."""
    rng = np.random.default_rng(seed)
    cfg = solvers.ProjGradConfig(tol=1e-12, max_iters=10**5)
    worst = 0.0
    for _ in range(instances):
        A = rng.normal(size=(dim, dim))
        Q = A @ A.T + 0.5 * np.eye(dim)
        c = rng.normal(size=dim)

        def fg(z, Q=Q, c=c):
            g = Q @ z - c
            return 0.5 * float(z @ Q @ z) - float(c @ z), g

        res = solvers.projected_gradient(fg, lambda z: np.maximum(z, 0.0), np.zeros(dim), cfg)
        best = np.inf
        for r in range(dim + 1):
            for free in itertools.combinations(range(dim), r):
                z = np.zeros(dim)
                if free:
                    F = list(free)
                    try:
                        zf = np.linalg.solve(Q[np.ix_(F, F)], c[F])
                    except np.linalg.LinAlgError:
                        continue
                    if np.min(zf) < -1e-12:
                        continue
                    z[F] = np.maximum(zf, 0.0)
                best = min(best, 0.5 * float(z @ Q @ z) - float(c @ z))
        worst = max(worst, abs(res.objective - best))
    return CheckResult("projected gradient vs box-QP oracle", worst <= 1e-8,
                       f"max objective gap {worst:.3e}")


def check_batched_reduction(seed=12) -> CheckResult:
    """gamma = 0 and one full batch reproduce the full trainer bit for bit."""
    rng = np.random.default_rng(seed)
    spec = NetworkSpec((3, 5, 4, 2), (ActivationKind.RELU, ActivationKind.RELU), Loss.MSE)
    X = rng.normal(size=(3, 12))
    Y = rng.normal(size=(2, 12))
    ds = Dataset(X, Y, "train")
    common = dict(lam=2.0, rho=[1e-3], inner_tol=1e-8, inner_max_iters=3000, seed=7,
                  outer_max_iters=1)
    w1, r1 = train_full(spec, ds, Hyperparams(**common))
    w2, r2 = train_batched(
        spec, ds, Hyperparams(gamma=[0.0], batch_size=12, alternations_K=1, **common)
    )
    same = all(np.array_equal(a, b) for a, b in zip(w1.mats, w2.mats))
    same &= r1.rows[0].lifted_obj == r2.rows[0].lifted_obj
    return CheckResult("batched reduces to full (bitwise)", same,
                       "weights and objectives identical" if same else "mismatch")


def run_all(fast=False) -> list[CheckResult]:
    """Run every check; ``fast=True`` shrinks sample counts for quick smoke runs."""
    s = 2000 if fast else 10**5
    return [
        check_nonnegativity(samples=s),
        check_equality_characterization(samples=min(s, 10**5)),
        check_biconvexity(samples=200 if fast else 2000),
        check_divergence_gradients(samples=400 if fast else 4000),
        check_relu_homogeneity(samples=1000 if fast else 10**4),
        check_backprop_gradients(nets=2 if fast else 6),
        check_scaling_equivalence(),
        check_block_descent(nets=4 if fast else 20),
        check_feasibility_collapse(nets=3 if fast else 10),
        check_lower_bound(nets=3 if fast else 10),
        check_nnls_oracle(instances=20 if fast else 100),
        check_pg_box_qp(instances=4 if fast else 20),
        check_batched_reduction(),
    ]
