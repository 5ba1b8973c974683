"""Cylindrical test functions, measure-space generator, HJB residual, DPP.

A cylindrical function is v(mu) = Outer(mu(phi_1), ..., mu(phi_n)) with
analytic derivatives of the outer map and every inner function; its
measure derivatives follow from the chain rule and populate the shared
DerivativeBundle shape.  The generator combines the state-space operator

    (L^gamma phi)(x) = 1/2 sum a_ij d2_ij phi + sum b_i d_i phi,
    a = sigma1 sigma1^T + sigma2 sigma2^T,

with the correlated-noise correction (M phi)(x) = sigma2(x)^T grad phi(x).
On cylindrical functions the generator has two algebraically equal forms
(coefficient form and measure-derivative form); operator_A evaluates both
and insists they agree, which is the package's structural self-check.

The observation cross term of the HJB residual pairs h - mu(h) at one
slot of the second variational derivative with the correlated-noise
correction sigma2^T grad applied at the other slot (sigma2 evaluated at
the same point the gradient acts on, as dictated by the quadratic
variation of the filtering dynamics).  Kernels here are symmetric, so a
single gradient field covers both orientations.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import minimize

from .derivatives import DerivativeBundle
from .errors import InternalError, InvalidInput
from .ksfilter import FilterModel, constant_policy, run_separated
from .measures import DiscreteMeasure


def _seedseq(seed) -> np.random.SeedSequence:
    return seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)


# -- inner functions -----------------------------------------------------------

@dataclass(frozen=True)
class InnerFn:
    """Scalar function on R^d with analytic gradient and Hessian."""

    f: Callable[[np.ndarray], np.ndarray]
    grad: Callable[[np.ndarray], np.ndarray]
    hess: Callable[[np.ndarray], np.ndarray]
    name: str = "phi"


def inner_gauss_bump(center, width: float = 1.0, amp: float = 1.0) -> InnerFn:
    c = np.atleast_1d(np.asarray(center, dtype=float))
    w2 = width**2

    def f(x):
        return amp * np.exp(-((x - c) ** 2).sum(axis=1) / (2 * w2))

    def grad(x):
        return f(x)[:, None] * (-(x - c) / w2)

    def hess(x):
        d = x.shape[1]
        diff = (x - c) / w2
        outer = np.einsum("nd,ne->nde", diff, diff) - np.eye(d)[None, :, :] / w2
        return f(x)[:, None, None] * outer

    return InnerFn(f, grad, hess, name=f"bump@{c.tolist()}")


def inner_tanh(w, offset: float = 0.0, amp: float = 1.0) -> InnerFn:
    w = np.atleast_1d(np.asarray(w, dtype=float))

    def u(x):
        return x @ w + offset

    def f(x):
        return amp * np.tanh(u(x))

    def grad(x):
        s = 1.0 - np.tanh(u(x)) ** 2
        return amp * s[:, None] * w[None, :]

    def hess(x):
        t = np.tanh(u(x))
        s = 1.0 - t**2
        return amp * (-2.0 * t * s)[:, None, None] * np.einsum("d,e->de", w, w)[None, :, :]

    return InnerFn(f, grad, hess, name="tanh")


def inner_sin(w, phase: float = 0.0, amp: float = 1.0) -> InnerFn:
    w = np.atleast_1d(np.asarray(w, dtype=float))

    def f(x):
        return amp * np.sin(x @ w + phase)

    def grad(x):
        return amp * np.cos(x @ w + phase)[:, None] * w[None, :]

    def hess(x):
        return -amp * np.sin(x @ w + phase)[:, None, None] * np.outer(w, w)[None, :, :]

    return InnerFn(f, grad, hess, name="sin")


def inner_linear(w, offset: float = 0.0) -> InnerFn:
    w = np.atleast_1d(np.asarray(w, dtype=float))

    def f(x):
        return x @ w + offset

    def grad(x):
        return np.broadcast_to(w, x.shape).copy()

    def hess(x):
        d = x.shape[1]
        return np.zeros((x.shape[0], d, d))

    return InnerFn(f, grad, hess, name="linear")


def inner_quadratic() -> InnerFn:
    def f(x):
        return (x**2).sum(axis=1)

    def grad(x):
        return 2.0 * x

    def hess(x):
        d = x.shape[1]
        return np.broadcast_to(2.0 * np.eye(d), (x.shape[0], d, d)).copy()

    return InnerFn(f, grad, hess, name="|x|^2")


# -- outer functions ------------------------------------------------------------

@dataclass(frozen=True)
class OuterFn:
    f: Callable[[np.ndarray], float]
    grad: Callable[[np.ndarray], np.ndarray]
    hess: Callable[[np.ndarray], np.ndarray]
    name: str = "Outer"


def outer_linear(coeffs, const: float = 0.0) -> OuterFn:
    c = np.atleast_1d(np.asarray(coeffs, dtype=float))
    n = c.shape[0]
    return OuterFn(
        f=lambda v: float(c @ v + const),
        grad=lambda v: c.copy(),
        hess=lambda v: np.zeros((n, n)),
        name="linear",
    )


def outer_quadratic(quad, coeffs=None, const: float = 0.0) -> OuterFn:
    Q = np.atleast_2d(np.asarray(quad, dtype=float))
    n = Q.shape[0]
    c = np.zeros(n) if coeffs is None else np.asarray(coeffs, dtype=float)
    return OuterFn(
        f=lambda v: float(0.5 * v @ Q @ v + c @ v + const),
        grad=lambda v: Q @ v + c,
        hess=lambda v: Q.copy(),
        name="quadratic",
    )


def outer_tanh(coeffs, amp: float = 1.0) -> OuterFn:
    c = np.atleast_1d(np.asarray(coeffs, dtype=float))

    def f(v):
        return float(amp * math.tanh(float(c @ v)))

    def grad(v):
        s = 1.0 - math.tanh(float(c @ v)) ** 2
        return amp * s * c

    def hess(v):
        t = math.tanh(float(c @ v))
        return amp * (-2.0 * t * (1.0 - t**2)) * np.outer(c, c)

    return OuterFn(f, grad, hess, name="tanh")


# -- cylindrical functions --------------------------------------------------------

@dataclass(frozen=True)
class CylindricalFn:
    """v(mu) = Outer(mu(phi_1), ..., mu(phi_n)) with chain-rule derivatives."""

    outer: OuterFn
    inners: tuple
    name: str = "cylindrical"

    def integrals(self, mu: DiscreteMeasure) -> np.ndarray:
        return np.array([mu.weights @ phi.f(mu.points) for phi in self.inners])

    def value(self, mu: DiscreteMeasure) -> float:
        return float(self.outer.f(self.integrals(mu)))

    def bundle(self, mu: DiscreteMeasure) -> DerivativeBundle:
        v = self.integrals(mu)
        g = self.outer.grad(v)
        H = self.outer.hess(v)
        inners = self.inners

        def first_var(x):
            x = np.atleast_2d(x)
            return sum(g[i] * inners[i].f(x) for i in range(len(inners)))

        def lions(x):
            x = np.atleast_2d(x)
            return sum(g[i] * inners[i].grad(x) for i in range(len(inners)))

        def lions_grad(x):
            x = np.atleast_2d(x)
            return sum(g[i] * inners[i].hess(x) for i in range(len(inners)))

        def second_var(x, y):
            x, y = np.atleast_2d(x), np.atleast_2d(y)
            fx = np.stack([phi.f(x) for phi in inners])
            fy = np.stack([phi.f(y) for phi in inners])
            return np.einsum("ij,ip,jq->pq", H, fx, fy)

        def second_var_grad(x, y):
            x, y = np.atleast_2d(x), np.atleast_2d(y)
            gx = np.stack([phi.grad(x) for phi in inners])
            fy = np.stack([phi.f(y) for phi in inners])
            return np.einsum("ij,ipd,jq->pqd", H, gx, fy)

        def lions2(x, y):
            x, y = np.atleast_2d(x), np.atleast_2d(y)
            gx = np.stack([phi.grad(x) for phi in inners])
            gy = np.stack([phi.grad(y) for phi in inners])
            return np.einsum("ij,ipd,jqe->pqde", H, gx, gy)

        return DerivativeBundle(
            first_var=first_var,
            second_var=second_var,
            lions=lions,
            lions_grad=lions_grad,
            lions2=lions2,
            second_var_grad=second_var_grad,
        )


def cylindrical_from_config(cfg: dict) -> CylindricalFn:
    """Build a cylindrical function from a JSON-friendly description."""
    allowed = {"outer", "inners", "name"}
    extra = set(cfg) - allowed
    if extra:
        raise InvalidInput(f"unknown cylindrical config keys: {sorted(extra)}")
    inner_makers = {
        "bump": inner_gauss_bump,
        "tanh": inner_tanh,
        "sin": inner_sin,
        "linear": inner_linear,
        "quadratic": inner_quadratic,
    }
    inners = []
    for item in cfg["inners"]:
        item = dict(item)
        kind = item.pop("kind")
        if kind not in inner_makers:
            raise InvalidInput(f"unknown inner kind {kind!r}")
        inners.append(inner_makers[kind](**item))
    outer_cfg = dict(cfg["outer"])
    okind = outer_cfg.pop("kind")
    outer_makers = {"linear": outer_linear, "quadratic": outer_quadratic, "tanh": outer_tanh}
    if okind not in outer_makers:
        raise InvalidInput(f"unknown outer kind {okind!r}")
    outer = outer_makers[okind](**outer_cfg)
    return CylindricalFn(outer, tuple(inners), name=cfg.get("name", "cylindrical"))


# -- running cost -----------------------------------------------------------------

@dataclass(frozen=True)
class RunningCost:
    """Cost induced by a state cost: L(mu, gamma) = mu(ell(., gamma)).

    ell is declared 1-Lipschitz in x; `bound` is the declared sup of |ell|
    used for the discount-truncation bias e^{-T} * bound.
    """

    ell: Callable[[np.ndarray, np.ndarray], np.ndarray]
    bound: float
    name: str = "cost"

    def L(self, mu: DiscreteMeasure, gamma) -> float:
        return float(mu.weights @ self.ell(mu.points, np.atleast_1d(gamma)))

    def lipschitz_quotient(self, points: np.ndarray, gamma) -> float:
        vals = self.ell(points, np.atleast_1d(gamma))
        diffs = np.abs(vals[1:] - vals[:-1])
        dx = np.linalg.norm(points[1:] - points[:-1], axis=1)
        mask = dx > 0
        return float(np.max(diffs[mask] / dx[mask]))


# -- operators ----------------------------------------------------------------------

def generator_L(model: FilterModel, gamma, phi: InnerFn, x) -> np.ndarray:
    """State-space generator 1/2 Tr[a Hess phi] + <b, grad phi> at x."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    gamma = model.clamp(gamma)
    a = model.diffusion_matrix(x, gamma)
    return 0.5 * np.einsum("nij,nij->n", a, phi.hess(x)) + np.einsum(
        "nd,nd->n", model.b(x, gamma), phi.grad(x)
    )


def operator_M(model: FilterModel, phi: InnerFn, x) -> np.ndarray:
    """Correlated-noise correction sigma2(x)^T grad phi(x), shape (N, q)."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    return np.einsum("ndq,nd->nq", model.sigma2(x), phi.grad(x))


def _quadratic_part(model: FilterModel, bundle: DerivativeBundle, mu: DiscreteMeasure):
    """(T_hh, T_cross, T_MM) pieces of the observation covariance operator.

    The cross term contracts sigma2^T with the kernel gradient in the
    slot the gradient acts on: <dh(x), sigma2(y)^T grad_y K(x, y)>.  That
    is the contraction produced by the quadratic variation of the
    filtering dynamics on cylindrical functions (pairing the observation
    part of one slot with the correlated-noise correction of the other);
    contracting sigma2 at the opposite slot from the gradient, a reading
    the condensed display notation also admits, is a genuinely different
    bilinear form and fails the coefficient-form cross-check.
    """
    pts, w = mu.points, mu.weights
    h = model.h(pts)
    dh = h - (w @ h)[None, :]
    s2 = model.sigma2(pts)
    K = bundle.second_var(pts, pts)
    t_hh = float(np.einsum("p,q,pr,qr,pq->", w, w, dh, dh, K))
    if bundle.second_var_grad is None:
        raise InvalidInput("bundle lacks second_var_grad, required with nonzero sigma2 and h")
    Kx = bundle.second_var_grad(pts, pts)
    # grad_y K(x_p, x_q) = Kx(x_q, x_p) for the symmetric kernels used here
    t_cross = float(np.einsum("p,q,pr,qdr,qpd->", w, w, dh, s2, Kx))
    L2 = bundle.lions2(pts, pts)
    t_mm = float(np.einsum("p,q,pdr,qer,pqde->", w, w, s2, s2, L2))
    return t_hh, t_cross, t_mm


def _drift_part(model: FilterModel, gamma, bundle: DerivativeBundle, mu: DiscreteMeasure) -> float:
    pts, w = mu.points, mu.weights
    gamma = model.clamp(gamma)
    a = model.diffusion_matrix(pts, gamma)
    lio = bundle.lions(pts)
    lg = bundle.lions_grad(pts)
    vals = np.einsum("nd,nd->n", model.b(pts, gamma), lio) + 0.5 * np.einsum("nij,nij->n", a, lg)
    return float(w @ vals)


def operator_A(
    model: FilterModel,
    gamma,
    v: CylindricalFn,
    mu: DiscreteMeasure,
    verify: bool = True,
    tol: float = 1e-8,
) -> float:
    """Measure-space generator on a cylindrical function.

    Coefficient form:
        1/2 sum_ij Hess_ij Outer * <mu(h phi_i + M phi_i) - mu(h) mu(phi_i),
                                    mu(h phi_j + M phi_j) - mu(h) mu(phi_j)>
        + sum_i grad_i Outer * mu(L^gamma phi_i).

    With verify=True the measure-derivative form is evaluated as well and
    must agree within tol (InternalError otherwise). The pairwise form
    costs O(N^2); inner simulation loops call with verify=False.
    """
    gamma = model.clamp(gamma)
    pts, w = mu.points, mu.weights
    h = model.h(pts)
    mh = w @ h
    vints = v.integrals(mu)
    g = v.outer.grad(vints)
    H = v.outer.hess(vints)
    n = len(v.inners)
    I = np.empty((n, model.dim_y))
    G = np.empty(n)
    for i, phi in enumerate(v.inners):
        fi = phi.f(pts)
        corr = operator_M(model, phi, pts)
        I[i] = w @ (h * fi[:, None] + corr) - mh * (w @ fi)
        G[i] = w @ generator_L(model, gamma, phi, pts)
    val1 = 0.5 * float(np.einsum("ij,ir,jr->", H, I, I)) + float(g @ G)

    if verify:
        bundle = v.bundle(mu)
        t_hh, t_cross, t_mm = _quadratic_part(model, bundle, mu)
        val2 = 0.5 * (t_hh + 2.0 * t_cross + t_mm) + _drift_part(model, gamma, bundle, mu)
        scale = max(1.0, abs(val1))
        if abs(val1 - val2) > tol * scale:
            raise InternalError(
                f"generator forms disagree: coefficient {val1!r} vs derivative {val2!r}"
            )
    return val1


# -- control grids and the HJB residual -----------------------------------------------

def control_grid(lo, hi, n_per_axis: int = 17) -> np.ndarray:
    """Nested box grid over the control set (odd counts refine by nesting)."""
    lo = np.atleast_1d(np.asarray(lo, dtype=float))
    hi = np.atleast_1d(np.asarray(hi, dtype=float))
    axes = [np.linspace(a, b, n_per_axis) for a, b in zip(lo, hi)]
    grids = np.meshgrid(*axes, indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=1)


def _infimum_over_controls(objective, model: FilterModel, gamma_grid, refine: bool):
    vals = np.array([objective(g) for g in gamma_grid])
    best = int(np.argmin(vals))
    best_val = float(vals[best])
    if refine:
        res = minimize(
            lambda g: objective(model.clamp(g)),
            np.atleast_1d(gamma_grid[best]),
            method="Nelder-Mead",
            options={"xatol": 1e-9, "fatol": 1e-12, "maxiter": 400},
        )
        if res.fun < best_val:
            best_val = float(res.fun)
    return best_val


def hjb_residual(
    model: FilterModel,
    cost: RunningCost,
    u_value: float,
    derivs: DerivativeBundle,
    mu: DiscreteMeasure,
    gamma_grid=None,
    refine: bool = True,
) -> float:
    """Stationary HJB residual at mu given a derivative bundle for u.

    F = u - [observation cross term] - 1/2 [observation covariance +
    correlated trace] - inf over controls of {L + mu(<b, dL u> +
    1/2 Tr[a grad dL u])}.  Sign convention: negative residual means the
    supplied data behaves like a strict subsolution at mu, positive like
    a supersolution.
    """
    for name in ("first_var", "second_var", "lions", "lions_grad", "lions2"):
        if getattr(derivs, name) is None:
            raise InvalidInput(f"derivative bundle is missing field {name}")
    if gamma_grid is None:
        gamma_grid = control_grid(model.control_lo, model.control_hi)
    t_hh, t_cross, t_mm = _quadratic_part(model, derivs, mu)

    def objective(gamma):
        return cost.L(mu, gamma) + _drift_part(model, gamma, derivs, mu)

    inf_part = _infimum_over_controls(objective, model, gamma_grid, refine)
    return float(u_value - t_cross - 0.5 * (t_hh + t_mm) - inf_part)


# -- Monte-Carlo value function and DPP -------------------------------------------------

@dataclass(frozen=True)
class ValueEstimate:
    value: float
    std_error: float
    n_paths: int
    horizon_T: float
    truncation_bias_bound: float


def _discounted_cost_path(model, cost, policy, mu0, T, dt, n_particles, rng) -> float:
    acc = {"J": 0.0}

    def on_step(t, cloud, gamma, acc=acc):
        ell_vals = cost.ell(cloud.points, gamma)
        acc["J"] += math.exp(-t) * float(cloud.weights @ ell_vals) * dt

    run_separated(model, mu0, policy, T, dt, n_particles, rng, on_step=on_step)
    return acc["J"]


def value_mc(
    model: FilterModel,
    cost: RunningCost,
    policy,
    mu0,
    T: float,
    dt: float,
    n_particles: int,
    n_paths: int,
    seed,
) -> ValueEstimate:
    """Monte-Carlo discounted cost along filter paths, truncated at T."""
    if T < 1.0:
        raise InvalidInput("truncation horizon must satisfy T >= 1")
    children = _seedseq(seed).spawn(n_paths)
    vals = np.empty(n_paths)
    for j, child in enumerate(children):
        rng = np.random.default_rng(child)
        vals[j] = _discounted_cost_path(model, cost, policy, mu0, T, dt, n_particles, rng)
    se = float(vals.std(ddof=1) / math.sqrt(n_paths)) if n_paths > 1 else 0.0
    return ValueEstimate(float(vals.mean()), se, n_paths, T, math.exp(-T) * cost.bound)


@dataclass(frozen=True)
class DppReport:
    lhs: float
    rhs: float
    gap: float
    std_error: float
    truncation_bias: float
    details: dict


def dpp_check(
    model: FilterModel,
    cost: RunningCost,
    policy_set: Sequence,
    mu0,
    tau: float,
    T: float,
    dt: float,
    n_particles: int,
    n_paths: int,
    seed,
    n_inner: int = 4,
) -> DppReport:
    """Two-sided dynamic-programming consistency check over a policy set.

    lhs: min over policies of the full-horizon value from mu0.
    rhs: min over first-leg policies of E[cost on [0, tau] + e^{-tau} *
    (min over continuation policies of the nested restart value from the
    filter state at tau)].  Truncation biases cancel to first order
    because both sides discount the same total horizon.
    """
    if not 0 < tau < T:
        raise InvalidInput("need 0 < tau < T")
    policies = [np.atleast_1d(np.asarray(g, dtype=float)) for g in policy_set]
    root = _seedseq(seed)
    lhs_seeds, rhs_seeds = root.spawn(2)

    lhs_values = [
        value_mc(model, cost, constant_policy(g), mu0, T, dt, n_particles, n_paths, s)
        for g, s in zip(policies, lhs_seeds.spawn(len(policies)))
    ]
    lhs_idx = int(np.argmin([v.value for v in lhs_values]))
    lhs = lhs_values[lhs_idx]

    t_rest = T - tau
    n_tau = int(round(tau / dt))
    rhs_means, rhs_ses, rhs_details = [], [], []
    for g, pol_seed in zip(policies, rhs_seeds.spawn(len(policies))):
        policy = constant_policy(g)
        samples = np.empty(n_paths)
        for j, child in enumerate(pol_seed.spawn(n_paths)):
            rng = np.random.default_rng(child)
            acc = {"J": 0.0}

            def on_step(t, cloud, gamma, acc=acc):
                acc["J"] += math.exp(-t) * float(cloud.weights @ cost.ell(cloud.points, gamma)) * dt

            cloud = run_separated(model, mu0, policy, n_tau * dt, dt, n_particles, rng, on_step=on_step)
            restart = cloud.measure()
            continuations = []
            for g2 in policies:
                inner_vals = [
                    _discounted_cost_path(
                        model, cost, constant_policy(g2), restart, t_rest, dt, n_particles, rng
                    )
                    for _ in range(n_inner)
                ]
                continuations.append(float(np.mean(inner_vals)))
            samples[j] = acc["J"] + math.exp(-tau) * min(continuations)
        rhs_means.append(float(samples.mean()))
        rhs_ses.append(float(samples.std(ddof=1) / math.sqrt(n_paths)))
        rhs_details.append(samples)
    rhs_idx = int(np.argmin(rhs_means))
    rhs_val, rhs_se = rhs_means[rhs_idx], rhs_ses[rhs_idx]

    gap = lhs.value - rhs_val
    combined = math.sqrt(lhs.std_error**2 + rhs_se**2)
    return DppReport(
        lhs=lhs.value,
        rhs=rhs_val,
        gap=gap,
        std_error=combined,
        truncation_bias=2.0 * math.exp(-T) * cost.bound,
        details={
            "lhs_per_policy": [(v.value, v.std_error) for v in lhs_values],
            "rhs_per_policy": list(zip(rhs_means, rhs_ses)),
            "lhs_policy": lhs_idx,
            "rhs_policy": rhs_idx,
        },
    )
