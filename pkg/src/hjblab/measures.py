"""Finitely supported probability measures and Gaussian smoothing.

A `DiscreteMeasure` is a weighted point cloud in R^d.  Absolutely
continuous measures are represented throughout the package as a discrete
measure convolved with an isotropic Gaussian N(0, sigma^2 I); the mixture
density is evaluated in log space so it never underflows to zero.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.special import logsumexp

from .errors import InvalidInput

WEIGHT_SUM_TOL = 1e-9
MAX_DIM = 3


def _as_points(points) -> np.ndarray:
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    if pts.ndim != 2 or pts.shape[0] == 0:
        raise InvalidInput("points must be a non-empty (n, d) array")
    return pts


class DiscreteMeasure:
    """Probability measure with finite support: sum_i w_i * delta_{x_i}.

    Weights are renormalized when |sum(w) - 1| <= 1e-9 and rejected
    otherwise; negative weights and non-finite coordinates are rejected.
    Instances are immutable and safe to share across threads.
    """

    __slots__ = ("points", "weights", "dim")

    def __init__(self, points, weights):
        pts = _as_points(points)
        w = np.asarray(weights, dtype=float).ravel()
        if pts.shape[0] != w.shape[0]:
            raise InvalidInput("points and weights must have equal length")
        if not (1 <= pts.shape[1] <= MAX_DIM):
            raise InvalidInput(f"dimension must be in 1..{MAX_DIM}, got {pts.shape[1]}")
        if not np.all(np.isfinite(pts)):
            raise InvalidInput("points contain non-finite coordinates")
        if not np.all(np.isfinite(w)):
            raise InvalidInput("weights contain non-finite values")
        if np.any(w < 0):
            raise InvalidInput("weights must be nonnegative")
        total = w.sum()
        if abs(total - 1.0) > WEIGHT_SUM_TOL:
            raise InvalidInput(f"weights sum to {total!r}, not 1 within {WEIGHT_SUM_TOL}")
        w = w / total
        pts = pts.copy()
        pts.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "dim", pts.shape[1])

    def __setattr__(self, name, value):
        raise AttributeError("DiscreteMeasure is immutable")

    @classmethod
    def _unsafe(cls, points: np.ndarray, weights: np.ndarray) -> "DiscreteMeasure":
        """Internal fast path: caller guarantees the invariants hold."""
        self = object.__new__(cls)
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "dim", points.shape[1])
        return self

    def __len__(self):
        return self.points.shape[0]

    def __repr__(self):
        return f"DiscreteMeasure(n={len(self)}, dim={self.dim})"

    def __eq__(self, other):
        if not isinstance(other, DiscreteMeasure):
            return NotImplemented
        return (
            self.dim == other.dim
            and self.points.shape == other.points.shape
            and np.array_equal(self.points, other.points)
            and np.array_equal(self.weights, other.weights)
        )

    def integrate(self, fn) -> float:
        """Integral of a callable or a precomputed (n,) value array."""
        vals = fn(self.points) if callable(fn) else np.asarray(fn, dtype=float)
        return float(np.dot(self.weights, vals))

    def mean(self) -> np.ndarray:
        return self.weights @ self.points

    def to_json(self) -> str:
        return json.dumps(
            {"dim": self.dim, "points": self.points.tolist(), "weights": self.weights.tolist()}
        )

    @staticmethod
    def from_json(text: str) -> "DiscreteMeasure":
        try:
            obj = json.loads(text)
        except json.JSONDecodeError as exc:
            raise InvalidInput(f"invalid measure JSON: {exc}") from exc
        extra = set(obj) - {"dim", "points", "weights"}
        if extra:
            raise InvalidInput(f"unknown keys in measure JSON: {sorted(extra)}")
        mu = DiscreteMeasure(obj["points"], obj["weights"])
        if "dim" in obj and int(obj["dim"]) != mu.dim:
            raise InvalidInput("declared dim does not match points")
        return mu

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow([f"x{i + 1}" for i in range(self.dim)] + ["w"])
        for x, w in zip(self.points, self.weights):
            writer.writerow(list(x) + [w])
        return buf.getvalue()


def dirac(x) -> DiscreteMeasure:
    """Point mass at x."""
    pts = _as_points([np.atleast_1d(np.asarray(x, dtype=float))])[0]
    return DiscreteMeasure([pts], [1.0])


def moment(mu: DiscreteMeasure, p: float) -> float:
    """p-th absolute moment sum_i w_i |x_i|^p (Euclidean norm), p >= 1."""
    if p < 1:
        raise InvalidInput("moment order must satisfy p >= 1")
    norms = np.linalg.norm(mu.points, axis=1)
    return float(np.dot(mu.weights, norms**p))


def sample(mu: DiscreteMeasure, n: int, seed) -> np.ndarray:
    """n i.i.d. categorical draws from the support, deterministic per seed."""
    if n < 1:
        raise InvalidInput("sample size must be >= 1")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    idx = rng.choice(len(mu), size=n, p=mu.weights)
    return mu.points[idx]


def gaussian_convolve_moment2(mu: DiscreteMeasure, sigma: float) -> float:
    """Second moment of mu * N(0, sigma^2 I): moment(mu, 2) + d sigma^2."""
    if sigma <= 0:
        raise InvalidInput("sigma must be positive")
    return moment(mu, 2) + mu.dim * sigma**2


def log_gaussian_kernel(x: np.ndarray, centers: np.ndarray, sigma: float) -> np.ndarray:
    """log phi_sigma(x_p - c_j) as a (p, n) array."""
    x = np.atleast_2d(x)
    d = centers.shape[1]
    sq = ((x[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    return -sq / (2.0 * sigma**2) - 0.5 * d * math.log(2.0 * math.pi * sigma**2)


@dataclass(frozen=True)
class SmoothedDensity:
    """Density of base * N(0, sigma^2 I): a Gaussian mixture."""

    base: DiscreteMeasure
    sigma: float

    def __post_init__(self):
        if self.sigma <= 0:
            raise InvalidInput("sigma must be positive")

    def log_density_at(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        logk = log_gaussian_kernel(x, self.base.points, self.sigma)
        logw = np.log(self.base.weights)
        return logsumexp(logk + logw[None, :], axis=1)

    def density_at(self, x) -> np.ndarray:
        return np.exp(self.log_density_at(x))


def smoothed_density_at(s: SmoothedDensity, x) -> float:
    """Mixture density at a single point, accumulated in log space."""
    x = np.asarray(x, dtype=float)
    scalar = x.ndim == 1
    out = s.density_at(x)
    return float(out[0]) if scalar else out


class QuadKind(Enum):
    TENSOR_GAUSS_HERMITE = "tensor-gauss-hermite"
    UNIFORM_GRID = "uniform-grid"
    MONTE_CARLO = "monte-carlo"


@dataclass(frozen=True)
class QuadratureRule:
    """Nodes and weights for integration against a reference density.

    For the Gauss-Hermite kind the rule integrates against the standard
    Gaussian in d dimensions: integral f dN(0, I) ~= sum_k w_k f(z_k); the
    weights therefore sum to 1.  The uniform-grid and monte-carlo kinds
    integrate against Lebesgue measure and the empirical average.
    """

    nodes: np.ndarray
    weights: np.ndarray
    kind: QuadKind

    def integrate(self, fn) -> float:
        vals = fn(self.nodes) if callable(fn) else np.asarray(fn, dtype=float)
        return float(np.dot(self.weights, vals))


def gauss_hermite_rule(dim: int, n_nodes: int) -> QuadratureRule:
    """Tensor Gauss-Hermite rule for the standard Gaussian N(0, I_d)."""
    t, v = np.polynomial.hermite.hermgauss(n_nodes)
    # substitution z = sqrt(2) t maps exp(-t^2) weights onto N(0,1)
    z1 = math.sqrt(2.0) * t
    w1 = v / math.sqrt(math.pi)
    grids = np.meshgrid(*([z1] * dim), indexing="ij")
    nodes = np.stack([g.ravel() for g in grids], axis=1)
    wgrids = np.meshgrid(*([w1] * dim), indexing="ij")
    weights = np.ones(nodes.shape[0])
    for g in wgrids:
        weights = weights * g.ravel()
    return QuadratureRule(nodes, weights, QuadKind.TENSOR_GAUSS_HERMITE)


def uniform_grid_rule(lo, hi, n_per_axis: int) -> QuadratureRule:
    """Midpoint rule on a box, weights carry the cell volume."""
    lo = np.atleast_1d(np.asarray(lo, dtype=float))
    hi = np.atleast_1d(np.asarray(hi, dtype=float))
    axes, steps = [], []
    for a, b in zip(lo, hi):
        edges = np.linspace(a, b, n_per_axis + 1)
        axes.append(0.5 * (edges[:-1] + edges[1:]))
        steps.append(edges[1] - edges[0])
    grids = np.meshgrid(*axes, indexing="ij")
    nodes = np.stack([g.ravel() for g in grids], axis=1)
    weights = np.full(nodes.shape[0], float(np.prod(steps)))
    return QuadratureRule(nodes, weights, QuadKind.UNIFORM_GRID)


def monte_carlo_rule(dim: int, n: int, seed) -> QuadratureRule:
    """Standard-Gaussian Monte-Carlo rule (fallback for d = 3)."""
    rng = np.random.default_rng(seed)
    nodes = rng.standard_normal((n, dim))
    weights = np.full(n, 1.0 / n)
    return QuadratureRule(nodes, weights, QuadKind.MONTE_CARLO)
