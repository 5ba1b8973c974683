"""Independent oracles the test suite checks library paths against.

Everything here is deliberately written from scratch against the
definitions (brute force, quantile coupling, high-precision arithmetic),
never by calling the code paths under test.
"""
from __future__ import annotations

import itertools
import math

import numpy as np


def quantile_coupling_cost(mu, nu, p: int) -> float:
    """1-d optimal transport cost by monotone rearrangement of the CDFs."""
    xs = mu.points[:, 0]
    ys = nu.points[:, 0]
    ox = np.argsort(xs, kind="stable")
    oy = np.argsort(ys, kind="stable")
    xs, wx = xs[ox], mu.weights[ox].copy()
    ys, wy = ys[oy], nu.weights[oy].copy()
    i = j = 0
    cost = 0.0
    while i < len(xs) and j < len(ys):
        mass = min(wx[i], wy[j])
        cost += mass * abs(xs[i] - ys[j]) ** p
        wx[i] -= mass
        wy[j] -= mass
        if wx[i] <= 1e-17:
            i += 1
        if wy[j] <= 1e-17:
            j += 1
    return cost


def brute_force_w2_two_point(a, b, c, d) -> float:
    """W2 between {a, b} and {c, d}, equal weights, by enumerating couplings.

    The extreme points of the Birkhoff polytope for 2x2 are the two
    permutations; optimum is their minimum.
    """
    direct = 0.5 * ((a - c) ** 2 + (b - d) ** 2)
    crossed = 0.5 * ((a - d) ** 2 + (b - c) ** 2)
    return math.sqrt(min(direct, crossed))


def mpmath_gauge_value(mu, nu, sigma: float, n_max: int, l_max: int) -> float:
    """Direct high-precision re-summation of the dyadic gauge (d = 1).

    Enumerates the cells independently of the library's cell machinery
    and evaluates every Gaussian interval mass with 40-digit erf.
    """
    import mpmath

    mpmath.mp.dps = 40
    s2 = mpmath.mpf(sigma) * mpmath.sqrt(2)

    def interval_mass(points, weights, lo, hi):
        total = mpmath.mpf(0)
        for x, w in zip(points[:, 0], weights):
            xm = mpmath.mpf(float(x))
            total += mpmath.mpf(float(w)) * (
                mpmath.erf((hi - xm) / s2) - mpmath.erf((lo - xm) / s2)
            ) / 2
        return total

    def region_mass(points, weights, lo, hi, hole):
        mass = interval_mass(points, weights, lo, hi)
        if hole is not None:
            ilo, ihi = max(lo, -hole), min(hi, hole)
            if ihi > ilo:
                mass -= interval_mass(points, weights, ilo, ihi)
        return mass

    total = mpmath.mpf(0)
    for n in range(n_max + 1):
        scale = mpmath.mpf(2) ** n
        hole = mpmath.mpf(2) ** (n - 1) if n >= 1 else None
        for l in range(l_max + 1):
            width = mpmath.mpf(2) ** (1 - l)
            theta = mpmath.mpf(2) ** (-(4 * n + 2 * l))
            for k in range(2**l):
                lo = (-1 + k * width) * scale
                hi = lo + width * scale
                if hole is not None and lo >= -hole and hi <= hole:
                    continue
                a = abs(
                    region_mass(mu.points, mu.weights, lo, hi, hole)
                    - region_mass(nu.points, nu.weights, lo, hi, hole)
                )
                b = (
                    mpmath.sqrt(a * a + 2 * theta * mpmath.sqrt(1 - theta) * a + theta * theta)
                    - theta
                )
                total += mpmath.mpf(2) ** (2 * (n - l)) * b
    return float(total)


def gaussian_entropy(sigma: float, dim: int = 1) -> float:
    """Closed form of the integral of rho log rho for N(0, sigma^2 I)."""
    return -0.5 * dim * math.log(2.0 * math.pi * math.e * sigma**2)


def trapezoid_entropy_1d(mu, sigma: float, pad: float = 12.0, n: int = 20001) -> float:
    """Independent 1-d entropy check by wide trapezoid quadrature."""
    lo = mu.points[:, 0].min() - pad * sigma
    hi = mu.points[:, 0].max() + pad * sigma
    z = np.linspace(lo, hi, n)
    rho = np.zeros_like(z)
    for x, w in zip(mu.points[:, 0], mu.weights):
        rho += w * np.exp(-((z - x) ** 2) / (2 * sigma**2)) / math.sqrt(2 * math.pi * sigma**2)
    mask = rho > 0
    vals = np.zeros_like(z)
    vals[mask] = rho[mask] * np.log(rho[mask])
    return float(np.trapezoid(vals, z))


def simplex_lattice(n_points: int, resolution: int):
    """All weight vectors on the lattice {k / resolution} of the simplex."""
    for combo in itertools.combinations(range(resolution + n_points - 1), n_points - 1):
        bars = (-1,) + combo + (resolution + n_points - 1,)
        yield np.array([bars[i + 1] - bars[i] - 1 for i in range(n_points)]) / resolution
