"""Shared container for measure-functional derivative evaluators.

Both the gauge and entropy modules (and cylindrical test functions) emit
their analytic derivative formulas in this shape, so downstream consumers
(HJB residuals, inequality suites, finite-difference validators) can stay
agnostic about which functional they are differentiating.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np


def _pts(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return x[None, :] if x.ndim == 1 else x


@dataclass(frozen=True)
class DerivativeBundle:
    """Vectorized evaluators for the five measure derivatives of F at mu.

    first_var(x)        -> (p,)        dF/dmu, the linear functional kernel
    second_var(x, y)    -> (p, q)      d^2F/dmu^2
    lions(x)            -> (p, d)      grad_x of first_var
    lions_grad(x)       -> (p, d, d)   second x-derivative of first_var
    lions2(x, y)        -> (p, q, d, d) mixed gradient of second_var
    second_var_grad(x, y) -> (p, q, d) grad in the first slot of second_var;
        optional but required by the HJB residual's observation cross term.

    All callables accept (p, d) arrays or single d-vectors.
    """

    first_var: Callable[[np.ndarray], np.ndarray]
    second_var: Callable[[np.ndarray, np.ndarray], np.ndarray]
    lions: Callable[[np.ndarray], np.ndarray]
    lions_grad: Callable[[np.ndarray], np.ndarray]
    lions2: Callable[[np.ndarray, np.ndarray], np.ndarray]
    second_var_grad: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None


def lions_consistency_gap(bundle: DerivativeBundle, points, step: float = 1e-5) -> float:
    """Worst relative gap between lions() and a central FD gradient of first_var.

    The Lions field is by definition the spatial gradient of the first
    variational derivative; this is the numeric check of that identity.
    """
    pts = _pts(points)
    d = pts.shape[1]
    analytic = bundle.lions(pts)
    fd = np.zeros_like(analytic)
    for k in range(d):
        e = np.zeros(d)
        e[k] = step
        fd[:, k] = (bundle.first_var(pts + e) - bundle.first_var(pts - e)) / (2 * step)
    scale = np.maximum(np.abs(analytic), 1e-12)
    return float(np.max(np.abs(fd - analytic) / scale))
