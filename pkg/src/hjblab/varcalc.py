"""Finite-difference oracles for variational and Lions derivatives.

These validate the analytic formulas elsewhere in the package against
nothing but functional evaluations.  Mixtures (1-t) mu + t nu are
realized by concatenating supports and scaling weights; duplicate points
are deliberately not merged.

Since measures live on the simplex, the mixture path only exists for
t >= 0, so slopes at t = 0 use one-sided second-order stencils

    f'(0) ~= (-3 f(0) + 4 f(h) - f(2h)) / (2h)

instead of central differences, with Richardson extrapolation across the
step list.  Lions derivatives perturb points along a vector field, where
central differences are available.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import EvalError, InvalidInput
from .measures import DiscreteMeasure

DEFAULT_STEPS = (1e-2, 5e-3, 2.5e-3)


@dataclass(frozen=True)
class MeasureFunctional:
    """A black-box functional on measures with optional declared constants."""

    fn: Callable[[DiscreteMeasure], float]
    name: str = "functional"
    bound: Optional[float] = None
    lip_w1: Optional[float] = None

    def __call__(self, mu: DiscreteMeasure) -> float:
        val = float(self.fn(mu))
        if not math.isfinite(val):
            raise EvalError(f"{self.name} returned non-finite value {val!r}")
        return val


def mixture(mu: DiscreteMeasure, parts: Sequence[tuple[float, DiscreteMeasure]]) -> DiscreteMeasure:
    """(1 - sum t_i) mu + sum t_i nu_i by support concatenation."""
    t_total = sum(t for t, _ in parts)
    if t_total > 1.0 + 1e-12 or any(t < 0 for t, _ in parts):
        raise InvalidInput("mixture coefficients must be nonnegative with sum <= 1")
    pts = [mu.points]
    wts = [(1.0 - t_total) * mu.weights]
    for t, nu in parts:
        if nu.dim != mu.dim:
            raise InvalidInput("mixture components must share dimension")
        pts.append(nu.points)
        wts.append(t * nu.weights)
    return DiscreteMeasure(np.vstack(pts), np.concatenate(wts))


def pushforward(mu: DiscreteMeasure, shift: Callable[[np.ndarray], np.ndarray]) -> DiscreteMeasure:
    return DiscreteMeasure(shift(mu.points), mu.weights)


@dataclass(frozen=True)
class FDResult:
    slope: float
    richardson: float
    per_step: tuple = field(default=())


def _richardson(slopes: Sequence[float], steps: Sequence[float], order: int = 2) -> float:
    """Full Richardson table; the leading error is O(h^order), then +1, ...

    Requires the step list to shrink by a constant ratio (the default
    lists halve).  Returns the most extrapolated corner.
    """
    if len(slopes) < 2:
        return slopes[-1]
    table = list(slopes)
    for level in range(1, len(slopes)):
        ratio = steps[0] / steps[1]
        k = ratio ** (order + level - 1)
        table = [
            (k * table[i + 1] - table[i]) / (k - 1.0) for i in range(len(table) - 1)
        ]
    return table[-1]


def var_derivative_fd(
    F: MeasureFunctional,
    mu: DiscreteMeasure,
    nu: DiscreteMeasure,
    steps: Sequence[float] = DEFAULT_STEPS,
) -> FDResult:
    """Slope of t -> F((1-t) mu + t nu) at t = 0.

    Contract: equals integral of dF/dmu(mu, .) d(nu - mu).
    """
    if mu.dim != nu.dim:
        raise InvalidInput("measures must share dimension")
    f0 = F(mu)
    slopes = []
    for h in steps:
        f1 = F(mixture(mu, [(h, nu)]))
        f2 = F(mixture(mu, [(2 * h, nu)]))
        slopes.append((-3.0 * f0 + 4.0 * f1 - f2) / (2.0 * h))
    return FDResult(slopes[-1], _richardson(slopes, list(steps)), tuple(slopes))


def lions_derivative_fd(
    F: MeasureFunctional,
    mu: DiscreteMeasure,
    v: Callable[[np.ndarray], np.ndarray],
    steps: Sequence[float] = DEFAULT_STEPS,
) -> FDResult:
    """Slope of eps -> F((id + eps v)# mu) at eps = 0.

    Contract: equals integral of <dL F(mu, x), v(x)> dmu(x).
    """
    slopes = []
    for h in steps:
        fp = F(pushforward(mu, lambda x, h=h: x + h * np.asarray(v(x), dtype=float)))
        fm = F(pushforward(mu, lambda x, h=h: x - h * np.asarray(v(x), dtype=float)))
        slopes.append((fp - fm) / (2.0 * h))
    return FDResult(slopes[-1], _richardson(slopes, list(steps)), tuple(slopes))


_D1 = np.array([-1.5, 2.0, -0.5])  # one-sided first-derivative stencil / h


def second_var_fd(
    F: MeasureFunctional,
    mu: DiscreteMeasure,
    nu1: DiscreteMeasure,
    nu2: DiscreteMeasure,
    steps: Sequence[float] = DEFAULT_STEPS,
) -> FDResult:
    """Mixed second derivative of F(mu + t1 (nu1 - mu) + t2 (nu2 - mu)) at 0.

    Contract: equals the double integral of d^2 F / dmu^2 against
    (nu1 - mu) (x) (nu2 - mu).  Uses the tensor product of one-sided
    second-order stencils on the 3 x 3 grid {0, h, 2h}^2.
    """
    slopes = []
    for h in steps:
        grid = np.empty((3, 3))
        for i in range(3):
            for j in range(3):
                grid[i, j] = F(mixture(mu, [(i * h, nu1), (j * h, nu2)]))
        slopes.append(float(_D1 @ grid @ _D1) / h**2)
    return FDResult(slopes[-1], _richardson(slopes, list(steps)), tuple(slopes))
