"""Penalized doubling functional: maximization and inequality suites.

The bivariate objective on pairs of measures is

    Phi(mu, nu) = u1(mu) - u2(nu) - G(mu, nu) / (2 alpha)
                  - beta * (Etilde(mu * N_sigma) + Etilde(nu * N_sigma)),

maximized over finite-dimensional measure families standing in for the
full space of square-integrable probability measures.  That substitution
is the central desk-scale compromise of this package: compactness
arguments guarantee maximizers exist in the full space, numerics can only
search a parameterized family (fixed support grid with free weights, or
Gaussian-mixture locations with a bandwidth floor).

The simplex-on-grid family gets a dedicated fast evaluator with
precomputed cell-mass and entropy-kernel tables.  Near the diagonal the
gauge behaves like a weighted L1 cone in the weight difference (its
per-cell term is b(|s|) with b'(0+) > 0), so the maximizer combines a
diminishing-step mirror phase that crosses those kinks, smooth
alternating per-measure polishes, a smooth ascent along the diagonal
where the gauge vanishes identically, and a gauge-decoupled candidate
that is exact in the weak-coupling limit; first-order optimality is
certified directionally rather than through a gradient norm.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import entropy as entropy_mod
from . import gauge as gauge_mod
from .errors import InvalidInput, NonConvergence, SuiteFailure
from .ksfilter import FilterModel
from .measures import DiscreteMeasure
from .transport import wasserstein
from .varcalc import MeasureFunctional

STATIONARITY_TOL = 1e-5
FD_STEP = 1e-4


@dataclass(frozen=True)
class DoublingProblem:
    u1: MeasureFunctional
    u2: MeasureFunctional
    alpha: float
    beta: float
    sigma: float
    gauge_config: gauge_mod.GaugeConfig

    def __post_init__(self):
        if self.alpha <= 0 or self.beta <= 0:
            raise InvalidInput("alpha and beta must be positive")
        if abs(self.sigma - self.gauge_config.sigma) > 1e-12:
            raise InvalidInput("sigma must match the gauge config")


@dataclass(frozen=True)
class PhiValue:
    value: float
    gauge: float
    gauge_tail: float
    entropy_mu: float
    entropy_nu: float


def phi_eval(problem: DoublingProblem, mu: DiscreteMeasure, nu: DiscreteMeasure) -> PhiValue:
    """Reference evaluator (slow path, arbitrary measures)."""
    gv = gauge_mod.gauge_value(mu, nu, problem.gauge_config)
    ent_mu = entropy_mod.entropy_smoothed(mu, problem.sigma, tol=None).entropy_tilde
    ent_nu = entropy_mod.entropy_smoothed(nu, problem.sigma, tol=None).entropy_tilde
    value = (
        problem.u1(mu)
        - problem.u2(nu)
        - gv.value / (2.0 * problem.alpha)
        - problem.beta * (ent_mu + ent_nu)
    )
    return PhiValue(value, gv.value, gv.tail_bound, ent_mu, ent_nu)


# -- measure families -----------------------------------------------------------

@dataclass(frozen=True)
class MeasureFamily:
    """Search family: 'simplex-on-grid' or 'gaussian-mixture'."""

    kind: str
    support: Optional[np.ndarray] = None          # grid kind: (G, d) points
    n_components: int = 0                          # mixture kind
    mean_lo: float = -2.0
    mean_hi: float = 2.0

    def __post_init__(self):
        if self.kind not in ("simplex-on-grid", "gaussian-mixture"):
            raise InvalidInput(f"unknown family kind {self.kind!r}")
        if self.kind == "simplex-on-grid" and self.support is None:
            raise InvalidInput("grid family needs a support array")
        if self.kind == "gaussian-mixture" and self.n_components < 1:
            raise InvalidInput("mixture family needs n_components >= 1")

    @property
    def dim(self) -> int:
        return self.support.shape[1] if self.support is not None else 1


def grid_family(n: int, lo: float = -2.0, hi: float = 2.0, dim: int = 1) -> MeasureFamily:
    axes = [np.linspace(lo, hi, n)] * dim
    grids = np.meshgrid(*axes, indexing="ij")
    support = np.stack([g.ravel() for g in grids], axis=1)
    return MeasureFamily(kind="simplex-on-grid", support=support)


def mixture_family(n_components: int, lo: float = -2.0, hi: float = 2.0) -> MeasureFamily:
    return MeasureFamily(kind="gaussian-mixture", n_components=n_components, mean_lo=lo, mean_hi=hi)


def project_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection onto the probability simplex (sort algorithm)."""
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    idx = np.arange(1, len(v) + 1)
    cond = u - css / idx > 0
    rho = idx[cond][-1]
    tau = css[rho - 1] / rho
    return np.maximum(v - tau, 0.0)


class GridPhiMachine:
    """Fast Phi evaluator for a fixed support grid (both arguments)."""

    def __init__(self, problem: DoublingProblem, family: MeasureFamily, n_nodes: int = 48):
        if family.kind != "simplex-on-grid":
            raise InvalidInput("GridPhiMachine requires the simplex-on-grid family")
        self.problem = problem
        self.grid = family.support
        table = gauge_mod.cell_table(problem.gauge_config)
        self.table = table
        self.psi_grid = table.psi(self.grid)            # (C, G)
        self.theta = table.theta
        self.c_term = table.theta * np.sqrt(1.0 - table.theta)
        self.cell_weight = table.weight
        sigma = problem.sigma
        nodes, wq = entropy_mod._gh_nodes(family.dim, n_nodes)
        z = self.grid[:, None, :] + sigma * nodes[None, :, :]      # (G, K, d)
        flat = z.reshape(-1, family.dim)
        sq = ((flat[:, None, :] - self.grid[None, :, :]) ** 2).sum(axis=2)
        self.kernel = np.exp(-sq / (2.0 * sigma**2)) / (2.0 * math.pi * sigma**2) ** (
            family.dim / 2.0
        )                                                           # (G*K, G)
        self.quad_w = wq
        self.n_grid = self.grid.shape[0]
        self.n_nodes = nodes.shape[0]
        self.moment2 = (self.grid**2).sum(axis=1)
        self.m2_offset = family.dim * sigma**2

    # weight vectors arrive possibly un-normalized from FD stencils
    def _normalize(self, W: np.ndarray) -> np.ndarray:
        W = np.atleast_2d(W)
        return W / W.sum(axis=1, keepdims=True)

    def gauge_batch(self, Wmu: np.ndarray, Wnu: np.ndarray) -> np.ndarray:
        s = (Wmu - Wnu) @ self.psi_grid.T                           # (m, C)
        a = np.abs(s)
        big = np.sqrt(a * a + 2.0 * self.c_term[None, :] * a + self.theta[None, :] ** 2)
        b = a * (a + 2.0 * self.c_term[None, :]) / (big + self.theta[None, :])
        return b @ self.cell_weight

    def entropy_batch(self, W: np.ndarray) -> np.ndarray:
        rho = np.maximum(self.kernel @ W.T, 1e-300)                 # (G*K, m)
        logrho = np.log(rho).reshape(self.n_grid, self.n_nodes, -1)
        comp = np.einsum("gkm,k->gm", logrho, self.quad_w)
        ent = np.einsum("mg,gm->m", W, comp)
        m2 = W @ self.moment2 + self.m2_offset
        return ent + math.pi * m2

    def phi_batch(self, Wmu: np.ndarray, Wnu: np.ndarray) -> np.ndarray:
        Wmu = self._normalize(Wmu)
        Wnu = self._normalize(Wnu)
        out = np.empty(Wmu.shape[0])
        for i in range(Wmu.shape[0]):
            # rows are normalized and nonnegative by construction
            mu = DiscreteMeasure._unsafe(self.grid, Wmu[i])
            nu = DiscreteMeasure._unsafe(self.grid, Wnu[i])
            out[i] = self.problem.u1(mu) - self.problem.u2(nu)
        out -= self.gauge_batch(Wmu, Wnu) / (2.0 * self.problem.alpha)
        out -= self.problem.beta * (self.entropy_batch(Wmu) + self.entropy_batch(Wnu))
        return out

    def phi(self, wmu: np.ndarray, wnu: np.ndarray) -> float:
        return float(self.phi_batch(wmu[None, :], wnu[None, :])[0])

    def u_batch(self, W: np.ndarray, which: int) -> np.ndarray:
        W = self._normalize(W)
        fn = self.problem.u1 if which == 1 else self.problem.u2
        return np.array([fn(DiscreteMeasure._unsafe(self.grid, w)) for w in W])

    def half_mu_batch(self, W: np.ndarray) -> np.ndarray:
        """u1(v) - beta * Etilde(v): the mu side with the gauge decoupled."""
        Wn = self._normalize(W)
        return self.u_batch(Wn, 1) - self.problem.beta * self.entropy_batch(Wn)

    def half_nu_batch(self, W: np.ndarray) -> np.ndarray:
        """-u2(v) - beta * Etilde(v): the nu side with the gauge decoupled."""
        Wn = self._normalize(W)
        return -self.u_batch(Wn, 2) - self.problem.beta * self.entropy_batch(Wn)

    def fd_gradient(self, wmu: np.ndarray, wnu: np.ndarray, step: float = FD_STEP):
        """Coordinate FD gradient of Phi in the two weight blocks.

        Central stencils where the coordinate allows w_i - step >= 0,
        one-sided second-order stencils at the boundary.
        """
        g = self.n_grid
        batches_mu, batches_nu, recipes = [], [], []
        base_mu, base_nu = wmu, wnu
        for block, w in (("mu", wmu), ("nu", wnu)):
            for i in range(g):
                if w[i] >= step:
                    for sgn in (1.0, -1.0):
                        wp = w.copy()
                        wp[i] += sgn * step
                        batches_mu.append(wp if block == "mu" else base_mu)
                        batches_nu.append(wp if block == "nu" else base_nu)
                    recipes.append((block, i, "central"))
                else:
                    for mult in (1.0, 2.0):
                        wp = w.copy()
                        wp[i] += mult * step
                        batches_mu.append(wp if block == "mu" else base_mu)
                        batches_nu.append(wp if block == "nu" else base_nu)
                    recipes.append((block, i, "forward"))
        vals = self.phi_batch(np.stack(batches_mu), np.stack(batches_nu))
        f0 = self.phi(wmu, wnu)
        grad_mu = np.empty(g)
        grad_nu = np.empty(g)
        k = 0
        for block, i, kind in recipes:
            if kind == "central":
                slope = (vals[k] - vals[k + 1]) / (2.0 * step)
            else:
                slope = (-3.0 * f0 + 4.0 * vals[k] - vals[k + 1]) / (2.0 * step)
            if block == "mu":
                grad_mu[i] = slope
            else:
                grad_nu[i] = slope
            k += 2
        return grad_mu, grad_nu, f0


@dataclass
class MaximizeResult:
    mu_bar: DiscreteMeasure
    mu_under: DiscreteMeasure
    value: float
    converged: bool
    stationarity: float
    restarts: list = field(default_factory=list)


def _mirror(w: np.ndarray, ascent: np.ndarray) -> np.ndarray:
    logw = np.log(np.maximum(w, 1e-300)) + ascent
    logw -= logw.max()
    out = np.exp(logw)
    return out / out.sum()


def _phase_subgradient(machine, wmu, wnu, iters: int, scale: float = 2.0):
    """Mirror steps with a diminishing schedule; robust across gauge kinks."""
    best = (machine.phi(wmu, wnu), wmu.copy(), wnu.copy())
    for k in range(iters):
        gmu, gnu, _ = machine.fd_gradient(wmu, wnu)
        norm = max(np.linalg.norm(gmu), np.linalg.norm(gnu), 1e-9)
        eta = scale / (norm * math.sqrt(k + 1.0))
        wmu = _mirror(wmu, eta * gmu)
        wnu = _mirror(wnu, eta * gnu)
        val = machine.phi(wmu, wnu)
        if val > best[0]:
            best = (val, wmu.copy(), wnu.copy())
    return best[1], best[2], best[0]


def _fd_simplex_gradient(batch_fn, v, value, step=FD_STEP):
    g = v.shape[0]
    batch, recipes = [], []
    for i in range(g):
        if v[i] >= step:
            for sgn in (1.0, -1.0):
                vv = v.copy()
                vv[i] += sgn * step
                batch.append(vv)
            recipes.append("central")
        else:
            for mult in (1.0, 2.0):
                vv = v.copy()
                vv[i] += mult * step
                batch.append(vv)
            recipes.append("forward")
    vals = batch_fn(np.stack(batch))
    grad = np.empty(g)
    j = 0
    for i, kind in enumerate(recipes):
        if kind == "central":
            grad[i] = (vals[j] - vals[j + 1]) / (2.0 * step)
        else:
            grad[i] = (-3.0 * value + 4.0 * vals[j] - vals[j + 1]) / (2.0 * step)
        j += 2
    return grad


def _smooth_simplex_ascent(batch_fn, v0, max_iter: int, g_tol: float):
    """Backtracked mirror ascent of a smooth scalar objective on a simplex."""
    v = v0 / v0.sum()
    value = float(batch_fn(v[None, :])[0])
    eta = 1.0
    resid = math.inf
    for _ in range(max_iter):
        grad = _fd_simplex_gradient(batch_fn, v, value)
        resid = float(np.linalg.norm(v - project_simplex(v + grad)))
        if resid <= g_tol:
            break
        t, improved = eta, False
        for _ in range(50):
            cand = _mirror(v, t * grad)
            cval = float(batch_fn(cand[None, :])[0])
            if cval > value + 1e-15:
                v, value = cand, cval
                eta = min(2.0 * t, 100.0)
                improved = True
                break
            t *= 0.5
        if not improved:
            break
    return v, value, resid


def _phase_diagonal(machine, v0, max_iter: int, g_tol: float):
    """Smooth ascent of v -> Phi(v, v); the gauge vanishes identically there."""
    return _smooth_simplex_ascent(lambda W: machine.phi_batch(W, W), v0, max_iter, g_tol)


def _phase_independent(machine, v0mu, v0nu, max_iter: int, g_tol: float):
    """Gauge-decoupled starting pair: each side optimized on its own.

    Solves max u1 - beta Etilde and max -u2 - beta Etilde separately
    (both smooth), which is the exact maximizer in the weak-coupling
    limit and an effective warm start for the coupled pair polish.
    """
    vmu, _, _ = _smooth_simplex_ascent(machine.half_mu_batch, v0mu, max_iter, g_tol)
    vnu, _, _ = _smooth_simplex_ascent(machine.half_nu_batch, v0nu, max_iter, g_tol)
    return vmu, vnu


def _phase_block_polish(machine, wmu, wnu, rounds: int, max_iter: int, g_tol: float):
    """Alternating per-measure ascents; each block is smooth off-diagonal."""
    value = machine.phi(wmu, wnu)
    for _ in range(rounds):
        wmu, _, rmu = _smooth_simplex_ascent(
            lambda W: machine.phi_batch(W, np.broadcast_to(wnu, W.shape).copy()),
            wmu, max_iter, 0.5 * g_tol,
        )
        wnu, _, rnu = _smooth_simplex_ascent(
            lambda W: machine.phi_batch(np.broadcast_to(wmu, W.shape).copy(), W),
            wnu, max_iter, 0.5 * g_tol,
        )
        new_value = machine.phi(wmu, wnu)
        if max(rmu, rnu) <= g_tol and new_value <= value + 1e-13:
            value = new_value
            break
        value = new_value
    return wmu, wnu, value


def _stationarity_certificate(machine, wmu, wnu, value, probe: float = 1e-4) -> float:
    """Largest one-sided improvement rate over feasible probe directions.

    The gauge makes Phi nonsmooth across the per-cell mass-difference
    kinks, so first-order optimality is certified directionally: along
    every vertex ray (e_i - w) of both simplices and along the FD ascent
    direction, the one-sided difference quotient at a small step must not
    exceed the tolerance.  Returns max(0, best rate).
    """
    g = machine.n_grid
    eye = np.eye(g)
    Wmu = np.stack([wmu + probe * (eye[i] - wmu) for i in range(g)])
    Wnu = np.broadcast_to(wnu, (g, g)).copy()
    vals_mu = machine.phi_batch(Wmu, Wnu)
    Wmu2 = np.broadcast_to(wmu, (g, g)).copy()
    Wnu2 = np.stack([wnu + probe * (eye[i] - wnu) for i in range(g)])
    vals_nu = machine.phi_batch(Wmu2, Wnu2)
    best = max(float(np.max(vals_mu)), float(np.max(vals_nu)))
    gmu, gnu, _ = machine.fd_gradient(wmu, wnu)
    dmu = project_simplex(wmu + gmu) - wmu
    dnu = project_simplex(wnu + gnu) - wnu
    scale = float(np.linalg.norm(np.concatenate([dmu, dnu])))
    if scale > 1e-5:
        # a fixed-point residual below tolerance means the FD direction is
        # pure gradient noise; normalizing it would amplify that noise
        val_dir = machine.phi(
            np.maximum(wmu + probe * dmu / scale, 0.0),
            np.maximum(wnu + probe * dnu / scale, 0.0),
        )
        best = max(best, val_dir)
    return max(0.0, (best - value) / probe)


def maximize_phi(
    problem: DoublingProblem,
    family: MeasureFamily,
    restarts: int = 16,
    seed: int = 0,
    max_iter: int = 300,
    g_tol: float = STATIONARITY_TOL,
    init=None,
    machine: Optional[GridPhiMachine] = None,
    subgrad_iters: int = 60,
) -> MaximizeResult:
    """Multi-start maximization of Phi over the family.

    Grid family, per restart: (1) diminishing-step mirror ascent with FD
    gradients, which crosses the gauge's mass-difference kinks; (2)
    backtracked pair polish; (3) smooth polish along the diagonal, where
    the gauge vanishes and a projected-gradient residual is meaningful.
    The better of the pair/diagonal candidates is kept and its
    stationarity is the directional certificate of
    `_stationarity_certificate` (<= g_tol counts as converged).  Mixture
    family: Nelder-Mead on means and weight logits.  Raises
    NonConvergence (carrying the best effort) when no restart converges.
    """
    rng = np.random.default_rng(seed)
    if family.kind != "simplex-on-grid":
        return _maximize_mixture(problem, family, restarts, rng, g_tol)
    machine = machine or GridPhiMachine(problem, family)
    g = machine.n_grid
    rows = []
    best = None
    starts = []
    if init is not None:
        starts.append((np.asarray(init[0], float), np.asarray(init[1], float)))
    while len(starts) < restarts:
        starts.append((rng.dirichlet(np.ones(g)), rng.dirichlet(np.ones(g))))
    for ridx, (w0mu, w0nu) in enumerate(starts):
        wmu, wnu, val = _phase_subgradient(machine, w0mu.copy(), w0nu.copy(), subgrad_iters)
        wmu, wnu, val = _phase_block_polish(machine, wmu, wnu, 3, min(max_iter, 60), g_tol)
        # decoupled-side candidate, exact in the weak-gauge limit
        imu, inu = _phase_independent(machine, w0mu, w0nu, max_iter, g_tol)
        imu, inu, ival = _phase_block_polish(machine, imu, inu, 4, min(max_iter, 80), g_tol)
        if ival > val:
            wmu, wnu, val = imu, inu, ival
        vdiag, dval, _ = _phase_diagonal(machine, 0.5 * (wmu + wnu), max_iter, 0.1 * g_tol)
        if dval > val:
            wmu, wnu, val = vdiag.copy(), vdiag.copy(), dval
        stat = _stationarity_certificate(machine, wmu, wnu, val)
        ok = stat <= g_tol
        rows.append({"restart": ridx, "value": val, "stationarity": stat, "converged": ok})
        if best is None or val > best[2]:
            best = (wmu, wnu, val, stat, ok)
    result = MaximizeResult(
        DiscreteMeasure(machine.grid, best[0]),
        DiscreteMeasure(machine.grid, best[1]),
        best[2],
        best[4],
        best[3],
        rows,
    )
    if not any(r["converged"] for r in rows):
        raise NonConvergence("no restart reached stationarity", result=result)
    return result


def _mixture_measure(family: MeasureFamily, params: np.ndarray) -> DiscreteMeasure:
    k = family.n_components
    means = np.clip(params[:k], family.mean_lo, family.mean_hi)[:, None]
    logits = params[k : 2 * k]
    logits = logits - logits.max()
    w = np.exp(logits)
    return DiscreteMeasure(means, w / w.sum())


def _maximize_mixture(problem, family, restarts, rng, g_tol):
    from scipy.optimize import minimize

    k = family.n_components

    def neg_phi(params):
        mu = _mixture_measure(family, params[: 2 * k])
        nu = _mixture_measure(family, params[2 * k :])
        return -phi_eval(problem, mu, nu).value

    rows, best = [], None
    for ridx in range(restarts):
        p0 = np.concatenate(
            [
                rng.uniform(family.mean_lo, family.mean_hi, k),
                rng.normal(0, 0.5, k),
                rng.uniform(family.mean_lo, family.mean_hi, k),
                rng.normal(0, 0.5, k),
            ]
        )
        res = minimize(neg_phi, p0, method="Nelder-Mead", options={"maxiter": 400 * k, "xatol": 1e-7, "fatol": 1e-12})
        h = 1e-5
        grad = np.array(
            [(neg_phi(res.x + h * e) - neg_phi(res.x - h * e)) / (2 * h) for e in np.eye(res.x.size)]
        )
        stat = float(np.linalg.norm(grad))
        ok = stat <= max(g_tol, 1e-4)
        rows.append({"restart": ridx, "value": -res.fun, "stationarity": stat, "converged": ok})
        if best is None or -res.fun > best[1]:
            best = (res.x, -res.fun, stat, ok)
    result = MaximizeResult(
        _mixture_measure(family, best[0][: 2 * k]),
        _mixture_measure(family, best[0][2 * k :]),
        best[1],
        best[3],
        best[2],
        rows,
    )
    if not any(r["converged"] for r in rows):
        raise NonConvergence("no restart reached stationarity", result=result)
    return result


# -- sweep diagnostics -------------------------------------------------------------

def step1_diagnostics(
    u1: MeasureFunctional,
    u2: MeasureFunctional,
    sigma: float,
    gauge_config: gauge_mod.GaugeConfig,
    alphas: Sequence[float],
    betas: Sequence[float],
    family: MeasureFamily,
    seed: int = 0,
    restarts: int = 6,
    max_iter: int = 250,
) -> list[dict]:
    """Penalization-limit table over the (alpha, beta) product grid.

    Rows report G/(2 alpha), beta * (Etilde + Etilde), W2 of the
    maximizer pair, and the fitted constant in the bound W2 <= 2 alpha C
    (Lip(u1) + Lip(u2)).  Consecutive sweep points warm-start from the
    previous maximizer.  Non-converged rows are flagged, not fatal.
    """
    rows = []
    lip_sum = (u1.lip_w1 or 1.0) + (u2.lip_w1 or 1.0)
    warm = None
    for beta in betas:
        for alpha in alphas:
            problem = DoublingProblem(u1, u2, alpha, beta, sigma, gauge_config)
            machine = GridPhiMachine(problem, family)
            try:
                res = maximize_phi(
                    problem,
                    family,
                    restarts=restarts,
                    seed=seed,
                    max_iter=max_iter,
                    init=warm,
                    machine=machine,
                )
                converged = res.converged
            except NonConvergence as exc:
                res = exc.result
                converged = False
            warm = (res.mu_bar.weights.copy(), res.mu_under.weights.copy())
            gv = gauge_mod.gauge_value(res.mu_bar, res.mu_under, gauge_config)
            ent_sum = float(
                machine.entropy_batch(res.mu_bar.weights[None, :])[0]
                + machine.entropy_batch(res.mu_under.weights[None, :])[0]
            )
            w2, _ = wasserstein(res.mu_bar, res.mu_under, p=2)
            rows.append(
                {
                    "alpha": alpha,
                    "beta": beta,
                    "value": res.value,
                    "gauge": gv.value,
                    "gauge_over_2alpha": gv.value / (2.0 * alpha),
                    "beta_entropy": beta * ent_sum,
                    "w2": w2,
                    "w2_bound_const": w2 / (2.0 * alpha * lip_sum) if alpha > 0 else math.nan,
                    "converged": converged,
                }
            )
    return rows


# -- inequality suite ----------------------------------------------------------------

#: Fitted constants, calibrated once on a frozen 50-pair maximizer run
#: (tanh-of-bump functionals, 31-point grid, alpha in [8, 24], seeds
#: 200..249, bounded tanh model) with a 1.5x safety factor, then frozen:
#: observed maxima were 1.41 (gauge drift / weighted TV), 0.58 (entropy
#: drift), 10.7 (moment drift).  Rows derived from exact Cauchy-Schwarz /
#: triangle factorizations carry constant 1 plus float slack; the
#: entropy-side closed-form majorants carry a small quadrature allowance
#: (the step-7 bound is attained by concentrated measures).
SUITE_CONSTANTS = {
    "step3_cost_lipschitz": 1.0 + 1e-9,
    "step4_gauge_drift": 2.2,
    "step4_entropy_drift": 0.9,
    "step4_moment_drift": 16.0,
    "cs_exact": 1.0 + 1e-9,
    "step5_entropy_variance": 1.05,
    "step6_entropy": 1.05,
    "step7_entropy": 1.1,
}


def _gauge_pair_tables(problem, mu_bar, mu_under):
    table = gauge_mod.cell_table(problem.gauge_config)
    s = table.masses(mu_bar) - table.masses(mu_under)
    a = np.abs(s)
    theta = table.theta
    b = gauge_mod._b_from_a(a, theta)
    kappa = theta**3 / (b + theta) ** 3
    a_sum = float((table.weight * a).sum())
    return table, kappa, a, a_sum


def _cell_observation_stats(table, model, rho: DiscreteMeasure):
    """Per-cell factorized observation integrals for the step 5-7 rows.

    v[c]   = int (h - rho(h)) psi_c drho            (q,)
    U[c]   = int grad-psi_c (x) (h - rho(h)) drho   (d, q)
    V[c]   = int sigma2 psi_c drho                  (d, q)
    m[c]   = int sigma2^T grad-psi_c drho           (q,)
    """
    pts, w = rho.points, rho.weights
    h = model.h(pts)
    dh = h - (w @ h)[None, :]
    s2 = model.sigma2(pts)
    psi = table.psi(pts)
    grad = table.psi_grad(pts)
    v = np.einsum("cn,n,nr->cr", psi, w, dh)
    U = np.einsum("cnd,n,nr->cdr", grad, w, dh)
    V = np.einsum("cn,n,ndr->cdr", psi, w, s2)
    m = np.einsum("cnd,n,ndr->cr", grad, w, s2)
    return v, U, V, m, h, dh, s2


def step_inequality_suite(
    problem: DoublingProblem,
    mu_bar: DiscreteMeasure,
    mu_under: DiscreteMeasure,
    model: FilterModel,
    n_gamma: int = 9,
    constants: Optional[dict] = None,
    raise_on_fail: bool = True,
) -> dict:
    """Numerically check the displayed estimates at a maximizer pair.

    Gauge-side rows follow the exact factorizations behind the estimates
    (difference of squares, triangle inequality on the per-cell
    observation integrals), so their constants are 1; the entropy-side
    rows use the closed-form Cauchy-Schwarz majorants (observation
    variance, d/sigma^2 moments); the drift rows carry fitted dimensional
    constants.  Violations raise SuiteFailure naming the rows.
    """
    C = dict(SUITE_CONSTANTS)
    if constants:
        C.update(constants)
    gammas = np.linspace(model.control_lo, model.control_hi, n_gamma)
    rows = []

    def add(name, lhs, rhs):
        rows.append({"name": name, "lhs": lhs, "rhs": rhs, "ok": lhs <= rhs, "margin": rhs - lhs})

    w1, _ = wasserstein(mu_bar, mu_under, p=1)
    w2, _ = wasserstein(mu_bar, mu_under, p=2)

    # step 3: cost increment vs transport distance (1-Lipschitz state cost)
    def cost_proxy(x, gamma):
        return np.tanh(x[:, 0] + float(np.atleast_1d(gamma)[0]))

    lhs3 = max(
        abs(
            float(mu_bar.weights @ cost_proxy(mu_bar.points, g))
            - float(mu_under.weights @ cost_proxy(mu_under.points, g))
        )
        for g in gammas
    )
    add("step3_cost_lipschitz", lhs3, C["step3_cost_lipschitz"] * w1 + 1e-12)
    add("step3_w1_le_w2", w1, w2 + 1e-12)

    table, kappa, a_cells, a_sum = _gauge_pair_tables(problem, mu_bar, mu_under)
    gbundle = gauge_mod.gauge_derivatives(mu_bar, mu_under, problem.gauge_config)
    ebundle_bar = entropy_mod.entropy_derivatives(mu_bar, problem.sigma)
    ebundle_under = entropy_mod.entropy_derivatives(mu_under, problem.sigma)

    # step 4 gauge drift: generator on the gauge Lions fields against the
    # signed difference, majorized by the (1 + |x|^2)-weighted total variation
    union_pts = np.vstack([mu_bar.points, mu_under.points])
    signed_w = np.concatenate([mu_bar.weights, -mu_under.weights])
    glions = gbundle.lions(union_pts)
    glgrad = gbundle.lions_grad(union_pts)
    lhs4g = 0.0
    for g in gammas:
        gam = model.clamp(g)
        bvec = model.b(union_pts, gam)
        amat = model.diffusion_matrix(union_pts, gam)
        vals = np.einsum("nd,nd->n", bvec, glions) + 0.5 * np.einsum("nij,nij->n", amat, glgrad)
        lhs4g = max(lhs4g, abs(float(signed_w @ vals)))
    tv_weight = float(np.abs(signed_w) @ (1.0 + (union_pts**2).sum(axis=1)))
    add("step4_gauge_drift", lhs4g, C["step4_gauge_drift"] * tv_weight + 1e-12)

    # step 4 entropy drift per unit beta: bounded by a dimensional constant
    for tag, rho, bundle in (("bar", mu_bar, ebundle_bar), ("under", mu_under, ebundle_under)):
        elions = bundle.lions(rho.points)
        elgrad = bundle.lions_grad(rho.points)
        lhs4e = 0.0
        for g in gammas:
            gam = model.clamp(g)
            bvec = model.b(rho.points, gam)
            amat = model.diffusion_matrix(rho.points, gam)
            vals = np.abs(
                np.einsum("nd,nd->n", bvec, elions) + 0.5 * np.einsum("nij,nij->n", amat, elgrad)
            )
            lhs4e = max(lhs4e, float(rho.weights @ vals))
        add(f"step4_entropy_drift_{tag}", lhs4e, C["step4_entropy_drift"])

    # step 4 moment drift: the pi |x|^2 corrections of the nonnegative entropy
    both_w = np.concatenate([mu_bar.weights, mu_under.weights])
    lhs4m = 0.0
    for g in gammas:
        gam = model.clamp(g)
        bvec = model.b(union_pts, gam)
        amat = model.diffusion_matrix(union_pts, gam)
        vals = np.abs(
            2.0 * math.pi * np.einsum("nd,nd->n", bvec, union_pts)
            + math.pi * np.einsum("nii->n", amat)
        )
        lhs4m = max(lhs4m, float(both_w @ vals))
    add("step4_moment_drift", lhs4m, C["step4_moment_drift"])

    # steps 5-7, gauge side
    v_bar, U_bar, V_bar, m_bar, h_bar, _, _ = _cell_observation_stats(table, model, mu_bar)
    v_und, U_und, V_und, m_und, _, _, _ = _cell_observation_stats(table, model, mu_under)
    wk = table.weight * kappa
    cs = C["cs_exact"]

    # step 5: |v_bar|^2 - |v_under|^2 = <v_bar + v_under, v_bar - v_under>
    d5 = (v_bar**2).sum(axis=1) - (v_und**2).sum(axis=1)
    rhs5 = np.linalg.norm(v_bar + v_und, axis=1) * np.linalg.norm(v_bar - v_und, axis=1)
    add("step5_gauge_cs", float(wk @ np.abs(d5)), cs * float(wk @ rhs5) + 1e-12)

    # step 5 chain: the difference driver decomposes by the triangle
    # inequality into an h-weighted mass difference, the plain cell-mass
    # difference, and the mean-observation gap
    pts_u = union_pts
    psi_u = table.psi(pts_u)
    h_u = model.h(pts_u)
    t1 = np.linalg.norm(np.einsum("cn,n,nr->cr", psi_u, signed_w, h_u), axis=1)
    mh_bar = mu_bar.weights @ h_bar
    mh_und = mu_under.weights @ model.h(mu_under.points)
    dh_gap = float(np.linalg.norm(mh_bar - mh_und))
    m_under_cells = table.masses(mu_under)
    lhs5c = float(wk @ np.linalg.norm(v_bar - v_und, axis=1))
    rhs5c = float(
        wk @ (t1 + float(np.linalg.norm(mh_bar)) * a_cells + dh_gap * m_under_cells)
    )
    add("step5_gauge_chain", lhs5c, cs * rhs5c + 1e-12)

    # step 6: R = Tr[U^T V]; |R_bar - R_under| <= |dU||V_bar| + |U_under||dV|
    r_bar = np.einsum("cdr,cdr->c", U_bar, V_bar)
    r_und = np.einsum("cdr,cdr->c", U_und, V_und)
    du = np.linalg.norm((U_bar - U_und).reshape(len(wk), -1), axis=1)
    dv = np.linalg.norm((V_bar - V_und).reshape(len(wk), -1), axis=1)
    nv_bar = np.linalg.norm(V_bar.reshape(len(wk), -1), axis=1)
    nu_und = np.linalg.norm(U_und.reshape(len(wk), -1), axis=1)
    add(
        "step6_gauge_cs",
        float(wk @ np.abs(r_bar - r_und)),
        cs * float(wk @ (du * nv_bar + nu_und * dv)) + 1e-12,
    )

    # step 7: S = |m|^2, difference of squares again
    d7 = (m_bar**2).sum(axis=1) - (m_und**2).sum(axis=1)
    rhs7 = np.linalg.norm(m_bar + m_und, axis=1) * np.linalg.norm(m_bar - m_und, axis=1)
    add("step7_gauge_cs", float(wk @ np.abs(d7)), cs * float(wk @ rhs7) + 1e-12)

    # steps 5-7, entropy side: closed-form Cauchy-Schwarz majorants
    d = mu_bar.dim
    sig2 = problem.sigma**2
    for tag, rho, bundle in (("bar", mu_bar, ebundle_bar), ("under", mu_under, ebundle_under)):
        pts, w = rho.points, rho.weights
        h = model.h(pts)
        dh = h - (w @ h)[None, :]
        s2 = model.sigma2(pts)
        var_h = float(w @ (h**2).sum(axis=1) - np.sum((w @ h) ** 2))
        s2_sq = float(w @ (s2**2).sum(axis=(1, 2)))
        K = bundle.second_var(pts, pts) - 1.0
        lhs5e = float(np.einsum("p,q,pr,qr,pq->", w, w, dh, dh, K))
        add(f"step5_entropy_variance_{tag}", lhs5e, C["step5_entropy_variance"] * var_h + 1e-12)
        svg = bundle.second_var_grad(pts, pts)
        lhs6e = abs(float(np.einsum("p,q,pr,qdr,pqd->", w, w, dh, s2, svg)))
        rhs6e = math.sqrt(max(d / sig2 * var_h * s2_sq, 0.0))
        add(f"step6_entropy_cs_{tag}", lhs6e, C["step6_entropy"] * rhs6e + 1e-12)
        L2 = bundle.lions2(pts, pts)
        lhs7e = abs(float(np.einsum("p,q,pdr,qer,pqde->", w, w, s2, s2, L2)))
        add(f"step7_entropy_cs_{tag}", lhs7e, C["step7_entropy"] * (d / sig2) * s2_sq + 1e-12)

    report = {"rows": rows, "ok": all(r["ok"] for r in rows), "a_sum": a_sum, "w1": w1, "w2": w2}
    if raise_on_fail and not report["ok"]:
        bad = [r["name"] for r in rows if not r["ok"]]
        raise SuiteFailure(f"violated displays: {bad}", violations=[r for r in rows if not r["ok"]])
    return report
