"""Correlated-noise nonlinear filtering at particle level, plus oracles.

State-observation pair (Euler-Maruyama throughout):

    dX = b(X, gamma) dt + sigma1(X, gamma) dW1 + sigma2(X) dW2
    dY = h(X) dt + dW2

The conditional law of X given the observation path is propagated by a
weighted interacting particle system.  Because the observation noise W2
also drives the state, particles consume the observed increment directly
with a compensator, and the importance weight is the Girsanov likelihood
of the observation path:

    dx_i    = b(x_i) dt + sigma1(x_i) dV_i + sigma2(x_i) (dY - h(x_i) dt)
    dlog w_i = <h(x_i), dY> - |h(x_i)|^2 dt / 2

Expanding the normalized weighted empirical measure to first order in dt
(with dY dY^T ~ I dt) reproduces the measure-valued filtering dynamics in
weak form: the martingale part pairs pi(h phi + sigma2^T grad phi) -
pi(h) pi(phi) against the innovation, and the compensator/weight choice
cancels every spurious drift term.  Systematic resampling triggers when
the effective sample size drops below ess_frac * N.

For linear-Gaussian models the exact conditional mean/covariance follow
the correlated-noise Kalman-Bucy recursion (gain P H^T + sigma2), which
serves as the oracle for the particle filter.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import DegeneracyError, InvalidInput, NumericalError
from .measures import DiscreteMeasure

BLOWUP_LIMIT = 1e6


# -- models ------------------------------------------------------------------

@dataclass(frozen=True)
class LinearCoeffs:
    A: np.ndarray
    B: np.ndarray
    s1: np.ndarray
    s2: np.ndarray
    H: np.ndarray


@dataclass(frozen=True)
class FilterModel:
    """Coefficients of the pair SDE plus declared bound constants.

    b(X, gamma) -> (N, d); sigma1(X, gamma) -> (N, d, d);
    sigma2(X) -> (N, d, q); h(X) -> (N, q).  The control set is the box
    [control_lo, control_hi].  `bounds` declares the constants of the
    bounded-Lipschitz hypothesis; linear models are unbounded and carry
    bounds=None (oracle use only, flagged by validate_hypothesis_bc).
    """

    dim_x: int
    dim_y: int
    dim_control: int
    b: Callable
    sigma1: Callable
    sigma2: Callable
    h: Callable
    control_lo: np.ndarray
    control_hi: np.ndarray
    bounds: Optional[dict] = None
    linear: Optional[LinearCoeffs] = None
    name: str = "model"

    def clamp(self, gamma) -> np.ndarray:
        g = np.atleast_1d(np.asarray(gamma, dtype=float))
        return np.clip(g, self.control_lo, self.control_hi)

    def diffusion_matrix(self, x: np.ndarray, gamma: np.ndarray) -> np.ndarray:
        """a = sigma1 sigma1^T + sigma2 sigma2^T, shape (N, d, d)."""
        s1 = self.sigma1(x, gamma)
        s2 = self.sigma2(x)
        return np.einsum("nij,nkj->nik", s1, s1) + np.einsum("niq,nkq->nik", s2, s2)


def make_linear_model(A, B, s1, s2, H, control_lo=-1.0, control_hi=1.0, name="linear"):
    """b = A x + B gamma, constant diffusions, h = H x."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    d = A.shape[0]
    B = np.asarray(B, dtype=float).reshape(d, -1)
    m = B.shape[1]
    s1 = np.atleast_2d(np.asarray(s1, dtype=float)).reshape(d, d)
    s2 = np.asarray(s2, dtype=float).reshape(d, -1)
    q = s2.shape[1]
    H = np.asarray(H, dtype=float).reshape(q, d)

    def b_fn(x, gamma):
        return x @ A.T + (B @ np.atleast_1d(gamma))[None, :]

    def s1_fn(x, gamma):
        return np.broadcast_to(s1, (x.shape[0], d, d))

    def s2_fn(x):
        return np.broadcast_to(s2, (x.shape[0], d, q))

    def h_fn(x):
        return x @ H.T

    lo = np.full(m, control_lo, dtype=float) if np.isscalar(control_lo) else np.asarray(control_lo, float)
    hi = np.full(m, control_hi, dtype=float) if np.isscalar(control_hi) else np.asarray(control_hi, float)
    return FilterModel(
        dim_x=d, dim_y=q, dim_control=m,
        b=b_fn, sigma1=s1_fn, sigma2=s2_fn, h=h_fn,
        control_lo=lo, control_hi=hi,
        bounds=None,
        linear=LinearCoeffs(A, B, s1, s2, H),
        name=name,
    )


def make_tanh_model(
    dim_x=1,
    dim_y=1,
    dim_control=1,
    b_scale=0.5,
    b_w=1.0,
    b_u=1.0,
    s1_base=0.4,
    s1_amp=0.0,
    s2_base=0.3,
    s2_amp=0.0,
    h_scale=0.8,
    h_w=1.0,
    control_lo=-1.0,
    control_hi=1.0,
    name="tanh",
):
    """Bounded Lipschitz coefficients built from tanh shapes."""
    d, q, m = dim_x, dim_y, dim_control

    def b_fn(x, gamma):
        g = np.atleast_1d(gamma)
        drive = b_w * x + b_u * np.mean(g)
        return b_scale * np.tanh(drive)

    def s1_fn(x, gamma):
        diag = s1_base * (1.0 + s1_amp * np.tanh(x))
        out = np.zeros((x.shape[0], d, d))
        idx = np.arange(d)
        out[:, idx, idx] = diag
        return out

    def s2_fn(x):
        base = s2_base * (1.0 + s2_amp * np.tanh(x[:, :1]))
        out = np.zeros((x.shape[0], d, q))
        k = min(d, q)
        for i in range(k):
            out[:, i, i] = base[:, 0]
        return out

    def h_fn(x):
        vals = h_scale * np.tanh(h_w * x[:, :1])
        return np.repeat(vals, q, axis=1) if q > 1 else vals

    bounds = {
        "sup_b": abs(b_scale) * math.sqrt(d),
        "sup_sigma1": abs(s1_base) * (1 + abs(s1_amp)) * math.sqrt(d),
        "sup_sigma2": abs(s2_base) * (1 + abs(s2_amp)) * math.sqrt(min(d, q)),
        "sup_h": abs(h_scale) * math.sqrt(q),
        "lip": max(
            abs(b_scale * b_w) * d,
            abs(s1_base * s1_amp) * d,
            abs(s2_base * s2_amp),
            abs(h_scale * h_w) * math.sqrt(q),
        ),
    }
    lo = np.full(m, control_lo, dtype=float)
    hi = np.full(m, control_hi, dtype=float)
    return FilterModel(
        dim_x=d, dim_y=q, dim_control=m,
        b=b_fn, sigma1=s1_fn, sigma2=s2_fn, h=h_fn,
        control_lo=lo, control_hi=hi, bounds=bounds, linear=None, name=name,
    )


def model_from_config(cfg: dict) -> FilterModel:
    """Build a model from a structured config dict (see the CLI docs)."""
    allowed = {"kind", "name", "params"}
    extra = set(cfg) - allowed
    if extra:
        raise InvalidInput(f"unknown model config keys: {sorted(extra)}")
    kind = cfg.get("kind")
    params = dict(cfg.get("params", {}))
    name = cfg.get("name", kind or "model")
    if kind == "linear":
        return make_linear_model(name=name, **params)
    if kind == "affine-tanh-bounded":
        return make_tanh_model(name=name, **params)
    if kind == "table":
        return _table_model(name=name, **params)
    raise InvalidInput(f"unknown model kind {kind!r}")


def _table_model(xs, b_values, h_values, s1=0.4, s2=0.0, control_lo=-1.0, control_hi=1.0, name="table"):
    """1-d model with b and h linearly interpolated from tables."""
    xs = np.asarray(xs, dtype=float)
    bv = np.asarray(b_values, dtype=float)
    hv = np.asarray(h_values, dtype=float)

    def b_fn(x, gamma):
        return np.interp(x[:, 0], xs, bv)[:, None]

    def s1_fn(x, gamma):
        return np.full((x.shape[0], 1, 1), float(s1))

    def s2_fn(x):
        return np.full((x.shape[0], 1, 1), float(s2))

    def h_fn(x):
        return np.interp(x[:, 0], xs, hv)[:, None]

    dx = np.diff(xs)
    bounds = {
        "sup_b": float(np.max(np.abs(bv))),
        "sup_sigma1": abs(float(s1)),
        "sup_sigma2": abs(float(s2)),
        "sup_h": float(np.max(np.abs(hv))),
        "lip": float(max(np.max(np.abs(np.diff(bv) / dx)), np.max(np.abs(np.diff(hv) / dx)))),
    }
    return FilterModel(
        dim_x=1, dim_y=1, dim_control=1,
        b=b_fn, sigma1=s1_fn, sigma2=s2_fn, h=h_fn,
        control_lo=np.array([control_lo]), control_hi=np.array([control_hi]),
        bounds=bounds, linear=None, name=name,
    )


def validate_hypothesis_bc(model: FilterModel, lo=-4.0, hi=4.0, n_grid=41, n_gamma=5, tol=1e-9):
    """Sampled sup-norm and Lipschitz-quotient check of the declared bounds."""
    xs = np.linspace(lo, hi, n_grid)
    grid = np.stack(np.meshgrid(*([xs] * model.dim_x), indexing="ij"), axis=-1).reshape(-1, model.dim_x)
    gammas = np.linspace(model.control_lo, model.control_hi, n_gamma)
    sup = {"sup_b": 0.0, "sup_sigma1": 0.0, "sup_sigma2": 0.0, "sup_h": 0.0}
    lip = 0.0
    s2v = model.sigma2(grid)
    hv = model.h(grid)
    sup["sup_sigma2"] = float(np.max(np.linalg.norm(s2v.reshape(len(grid), -1), axis=1)))
    sup["sup_h"] = float(np.max(np.linalg.norm(hv, axis=1)))
    dx = np.linalg.norm(grid[1:] - grid[:-1], axis=1)
    ok_pairs = dx > 0
    lip = max(
        lip,
        float(np.max(np.linalg.norm((hv[1:] - hv[:-1])[ok_pairs], axis=1) / dx[ok_pairs])),
    )
    for gamma in gammas:
        bv = model.b(grid, gamma)
        s1v = model.sigma1(grid, gamma)
        sup["sup_b"] = max(sup["sup_b"], float(np.max(np.linalg.norm(bv, axis=1))))
        sup["sup_sigma1"] = max(
            sup["sup_sigma1"], float(np.max(np.linalg.norm(s1v.reshape(len(grid), -1), axis=1)))
        )
        lip = max(
            lip,
            float(np.max(np.linalg.norm((bv[1:] - bv[:-1])[ok_pairs], axis=1) / dx[ok_pairs])),
        )
    report = {"sampled": {**sup, "lip": lip}, "declared": model.bounds, "ok": True}
    if model.bounds is None:
        report["ok"] = False
        report["note"] = "no declared bounds (linear oracle model, outside the bounded hypothesis)"
        return report
    for key, val in sup.items():
        if val > model.bounds[key] + tol:
            report["ok"] = False
    if lip > model.bounds["lip"] + tol:
        report["ok"] = False
    return report


# -- initial laws -------------------------------------------------------------

@dataclass(frozen=True)
class GaussianInitial:
    """Gaussian initial law, exact carrier for the Kalman-Bucy oracle."""

    mean: np.ndarray
    cov: np.ndarray

    @staticmethod
    def isotropic(mean, var: float) -> "GaussianInitial":
        m = np.atleast_1d(np.asarray(mean, dtype=float))
        return GaussianInitial(m, var * np.eye(m.shape[0]))

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        chol = np.linalg.cholesky(self.cov + 1e-15 * np.eye(self.mean.shape[0]))
        return self.mean[None, :] + rng.standard_normal((n, self.mean.shape[0])) @ chol.T


def draw_initial(law, n: int, rng: np.random.Generator) -> np.ndarray:
    if isinstance(law, DiscreteMeasure):
        idx = rng.choice(len(law), size=n, p=law.weights)
        return law.points[idx].copy()
    if hasattr(law, "sample"):
        return np.atleast_2d(law.sample(n, rng))
    raise InvalidInput("initial law must be a DiscreteMeasure or expose .sample(n, rng)")


def constant_policy(gamma) -> Callable:
    g = np.atleast_1d(np.asarray(gamma, dtype=float))

    def policy(t, measure):
        return g

    return policy


# -- resampling ----------------------------------------------------------------

def effective_sample_size(weights: np.ndarray) -> float:
    return 1.0 / float(np.sum(weights**2))


def systematic_resample(weights: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    n = len(weights)
    positions = (rng.random() + np.arange(n)) / n
    cumulative = np.cumsum(weights)
    cumulative[-1] = 1.0
    return np.searchsorted(cumulative, positions, side="right")


# -- simulation ----------------------------------------------------------------

def simulate_truth(model: FilterModel, mu0, policy, T: float, dt: float, seed):
    """Euler-Maruyama path of the pair SDE; Y reuses the W2 increments.

    The policy is called as policy(t, None) here (no filter is running);
    open-loop and constant policies ignore the second argument.
    """
    if dt <= 0 or dt > T:
        raise InvalidInput("need 0 < dt <= T")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    n_steps = int(round(T / dt))
    d, q = model.dim_x, model.dim_y
    x = draw_initial(mu0, 1, rng)[0]
    xs = np.empty((n_steps + 1, d))
    ys = np.zeros((n_steps + 1, q))
    xs[0] = x
    sqrt_dt = math.sqrt(dt)
    for k in range(n_steps):
        t = k * dt
        gamma = model.clamp(policy(t, None))
        pt = x[None, :]
        b = model.b(pt, gamma)[0]
        s1 = model.sigma1(pt, gamma)[0]
        s2 = model.sigma2(pt)[0]
        hx = model.h(pt)[0]
        w1 = rng.standard_normal(d) * sqrt_dt
        w2 = rng.standard_normal(q) * sqrt_dt
        x = x + b * dt + s1 @ w1 + s2 @ w2
        if np.max(np.abs(x)) > BLOWUP_LIMIT:
            raise NumericalError(f"state blew up at t={t:g}")
        xs[k + 1] = x
        ys[k + 1] = ys[k] + hx * dt + w2
    return xs, ys


@dataclass
class FilterPath:
    times: np.ndarray
    measures: list
    observation: np.ndarray
    innovation: np.ndarray
    seed: object
    means: np.ndarray = field(default=None)
    variances: np.ndarray = field(default=None)


class _ParticleCloud:
    """Mutable particle state shared by the online and offline filters."""

    def __init__(self, model: FilterModel, mu0, n: int, rng: np.random.Generator, ess_frac: float):
        if n < 2:
            raise InvalidInput("need at least 2 particles")
        self.model = model
        self.rng = rng
        self.ess_frac = ess_frac
        self.points = draw_initial(mu0, n, rng)
        self.logw = np.zeros(n)
        self.weights = np.full(n, 1.0 / n)

    def measure(self) -> DiscreteMeasure:
        # weights are normalized by construction; skip re-validation in
        # the per-step hot path
        return DiscreteMeasure._unsafe(self.points, self.weights)

    def expectation(self, values: np.ndarray) -> np.ndarray:
        return self.weights @ values

    def step(self, gamma: np.ndarray, dy: np.ndarray, dt: float):
        model, rng = self.model, self.rng
        pts = self.points
        n, d = pts.shape
        h = model.h(pts)
        self.logw = self.logw + h @ dy - 0.5 * np.sum(h**2, axis=1) * dt
        b = model.b(pts, gamma)
        s1 = model.sigma1(pts, gamma)
        s2 = model.sigma2(pts)
        dv = rng.standard_normal((n, d)) * math.sqrt(dt)
        obs_term = dy[None, :] - h * dt
        pts = pts + b * dt + np.einsum("nij,nj->ni", s1, dv) + np.einsum("ndq,nq->nd", s2, obs_term)
        if np.max(np.abs(pts)) > BLOWUP_LIMIT:
            raise NumericalError("particles blew up")
        self.points = pts
        logw = self.logw
        logw = logw - logw.max()
        w = np.exp(logw)
        total = w.sum()
        self.logw = logw - math.log(total)
        self.weights = w / total
        ess = effective_sample_size(self.weights)
        if ess < 2.0:
            raise DegeneracyError(f"effective sample size collapsed to {ess:.3f}")
        if ess < self.ess_frac * n:
            idx = systematic_resample(self.weights, rng)
            self.points = self.points[idx]
            self.logw = np.zeros(n)
            self.weights = np.full(n, 1.0 / n)


def ks_particle_filter(
    model: FilterModel,
    mu0,
    policy,
    observation: np.ndarray,
    n_particles: int,
    dt: float,
    seed,
    ess_frac: float = 0.5,
    store_measures: bool = True,
) -> FilterPath:
    """Weighted particle approximation of the filter along a given Y path."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    observation = np.atleast_2d(np.asarray(observation, dtype=float))
    n_steps = observation.shape[0] - 1
    cloud = _ParticleCloud(model, mu0, n_particles, rng, ess_frac)
    times = np.arange(n_steps + 1) * dt
    means = np.empty((n_steps + 1, model.dim_x))
    variances = np.empty((n_steps + 1, model.dim_x))
    innovation = np.zeros((n_steps + 1, model.dim_y))
    measures = []
    for k in range(n_steps + 1):
        mu_k = cloud.measure()
        if store_measures:
            measures.append(mu_k)
        means[k] = cloud.expectation(cloud.points)
        variances[k] = cloud.expectation(cloud.points**2) - means[k] ** 2
        if k == n_steps:
            break
        gamma = model.clamp(policy(times[k], mu_k))
        dy = observation[k + 1] - observation[k]
        pi_h = cloud.expectation(model.h(cloud.points))
        innovation[k + 1] = innovation[k] + dy - pi_h * dt
        cloud.step(gamma, dy, dt)
    return FilterPath(times, measures, observation, innovation, seed, means, variances)


def run_separated(
    model: FilterModel,
    mu0,
    policy,
    T: float,
    dt: float,
    n_particles: int,
    rng: np.random.Generator,
    on_step=None,
):
    """Joint truth + filter run so feedback policies see the filter state.

    on_step(t, cloud, gamma) is called once per step before stepping; the
    final cloud is returned.  The truth and the filter consume the same
    control, which is what makes observation-feedback policies meaningful.
    """
    n_steps = int(round(T / dt))
    d, q = model.dim_x, model.dim_y
    x = draw_initial(mu0, 1, rng)[0]
    cloud = _ParticleCloud(model, mu0, n_particles, rng, ess_frac=0.5)
    sqrt_dt = math.sqrt(dt)
    for k in range(n_steps):
        t = k * dt
        gamma = model.clamp(policy(t, cloud.measure()))
        if on_step is not None:
            on_step(t, cloud, gamma)
        pt = x[None, :]
        hx = model.h(pt)[0]
        w1 = rng.standard_normal(d) * sqrt_dt
        w2 = rng.standard_normal(q) * sqrt_dt
        dy = hx * dt + w2
        x = x + model.b(pt, gamma)[0] * dt + model.sigma1(pt, gamma)[0] @ w1 + model.sigma2(pt)[0] @ w2
        if np.max(np.abs(x)) > BLOWUP_LIMIT:
            raise NumericalError(f"state blew up at t={t:g}")
        cloud.step(gamma, dy, dt)
    return cloud


# -- Kalman-Bucy oracle ---------------------------------------------------------

@dataclass(frozen=True)
class KalmanState:
    mean: np.ndarray
    cov: np.ndarray


def kalman_bucy(model: FilterModel, m0, P0, observation: np.ndarray, dt: float, gamma=None):
    """Correlated-noise Kalman-Bucy recursion on the observation grid.

    dm = (A m + B gamma) dt + (P H^T + s2)(dY - H m dt)
    dP/dt = A P + P A^T + s1 s1^T + s2 s2^T - (P H^T + s2)(P H^T + s2)^T
    """
    if model.linear is None:
        raise InvalidInput("kalman_bucy requires a model declared linear")
    lin = model.linear
    observation = np.atleast_2d(np.asarray(observation, dtype=float))
    n_steps = observation.shape[0] - 1
    d = model.dim_x
    m = np.atleast_1d(np.asarray(m0, dtype=float)).copy()
    P = np.atleast_2d(np.asarray(P0, dtype=float)).copy()
    noise = lin.s1 @ lin.s1.T + lin.s2 @ lin.s2.T
    out = [KalmanState(m.copy(), P.copy())]
    for k in range(n_steps):
        g = np.zeros(model.dim_control) if gamma is None else model.clamp(
            gamma(k * dt, None) if callable(gamma) else gamma
        )
        gain = P @ lin.H.T + lin.s2
        dy = observation[k + 1] - observation[k]
        m = m + (lin.A @ m + lin.B @ g) * dt + gain @ (dy - lin.H @ m * dt)
        P = P + (lin.A @ P + P @ lin.A.T + noise - gain @ gain.T) * dt
        P = 0.5 * (P + P.T)
        eigs = np.linalg.eigvalsh(P)
        if eigs.min() < -1e-10:
            raise NumericalError(f"covariance lost positive semidefiniteness: min eig {eigs.min():g}")
        if not np.all(np.isfinite(m)):
            raise NumericalError("Kalman mean diverged")
        out.append(KalmanState(m.copy(), P.copy()))
    return out


# -- Ito / generator consistency -------------------------------------------------

def ito_drift_check(
    model: FilterModel,
    gamma,
    v,
    mu0,
    T: float,
    dt: float,
    n_particles: int,
    n_paths: int,
    seed,
):
    """Martingale residual E[v(pi_T) - v(pi_0) - integral of the generator].

    v is a cylindrical test function; the generator is evaluated in its
    cylindrical form each step.  Returns (residual_mean, std_error).
    """
    from .hjb import operator_A  # deferred: hjb imports this module lazily too

    gamma_vec = np.atleast_1d(np.asarray(gamma, dtype=float))
    policy = constant_policy(gamma_vec)
    children = np.random.SeedSequence(seed).spawn(n_paths)
    residuals = np.empty(n_paths)
    for j, child in enumerate(children):
        rng = np.random.default_rng(child)
        acc = {"integral": 0.0, "v0": None}

        def on_step(t, cloud, g, acc=acc):
            mu_t = cloud.measure()
            if acc["v0"] is None:
                acc["v0"] = v.value(mu_t)
            acc["integral"] += operator_A(model, g, v, mu_t, verify=False) * dt

        cloud = run_separated(model, mu0, policy, T, dt, n_particles, rng, on_step=on_step)
        residuals[j] = v.value(cloud.measure()) - acc["v0"] - acc["integral"]
    mean = float(residuals.mean())
    se = float(residuals.std(ddof=1) / math.sqrt(n_paths))
    return mean, se
