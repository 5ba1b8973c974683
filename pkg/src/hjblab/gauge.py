"""Dyadic gauge function on pairs of measures, with analytic derivatives.

The gauge compares two Gaussian-smoothed measures cell by cell over a
dyadic decomposition of space: shells B_n = (-2^n, 2^n]^d \\ (-2^{n-1},
2^{n-1}]^d (B_0 = (-1,1]^d), each shell refined by the level-l partition
of the unit box into 2^{dl} translates, scaled by 2^n.  Per cell, with
theta = 2^{-(4n + 2dl)} and the smoothed mass difference
s = (mu*N_sigma - nu*N_sigma)(cell), a = |s|,

    b = sqrt(a^2 + 2 theta sqrt(1-theta) a + theta^2) - theta,

and the gauge is G = sum over cells of 2^{2(n-l)} b.  Cell masses are
exact products/differences of 1-d Gaussian CDF terms, never sampled, so
all derivative formulas are smooth and noise free.

Sign convention for first-order derivatives: the symmetric gauge uses
a = |s|, so its exact a.e. derivative carries sign(s); the per-cell
coefficient implemented here is sign(s) * (a + theta*sqrt(1-theta)) /
(b + theta), which reduces to the unsigned textbook expression whenever
s >= 0 and makes analytic and finite-difference slopes agree on every
mixture path.  Second-order coefficients are sign free.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import ndtr

from .derivatives import DerivativeBundle
from .errors import InvalidInput
from .measures import DiscreteMeasure, gaussian_convolve_moment2


@dataclass(frozen=True)
class GaugeConfig:
    sigma: float
    n_max: int = 6
    l_max: int = 6
    dim: int = 1

    def __post_init__(self):
        if self.sigma <= 0:
            raise InvalidInput("sigma must be positive")
        if self.n_max < 1 or self.l_max < 1:
            raise InvalidInput("n_max and l_max must be >= 1")
        if self.dim not in (1, 2):
            raise InvalidInput("gauge evaluation supports dim in {1, 2}")


def default_config(dim: int = 1, sigma: float = 0.5) -> GaugeConfig:
    """Truncation defaults: (6, 6) for d=1 and (5, 4) for d=2."""
    if dim == 1:
        return GaugeConfig(sigma=sigma, n_max=6, l_max=6, dim=1)
    return GaugeConfig(sigma=sigma, n_max=5, l_max=4, dim=2)


@dataclass(frozen=True)
class DyadicCell:
    """Region (2^n B) intersected with shell B_n, B in the level-l partition.

    Stored as the scaled box (lo, hi] minus an optional inner box
    (inner_lo, inner_hi] (the shell hole); the set difference never needs
    more pieces because 2^n B always sits inside the outer shell box.
    """

    n: int
    l: int
    index: tuple
    lo: tuple
    hi: tuple
    inner_lo: Optional[tuple]
    inner_hi: Optional[tuple]

    @property
    def theta(self) -> float:
        d = len(self.lo)
        return 2.0 ** (-(4 * self.n + 2 * d * self.l))

    @property
    def weight(self) -> float:
        return 2.0 ** (2 * (self.n - self.l))


def cells(config: GaugeConfig) -> list[DyadicCell]:
    """Enumerate all cells with n <= n_max, l <= l_max, empty ones dropped.

    For fixed (n, l) the regions are pairwise disjoint and cover B_n.
    Order is deterministic: sorted by (n, l, multi-index).
    """
    d = config.dim
    out = []
    for n in range(config.n_max + 1):
        scale = 2.0**n
        hole = 2.0 ** (n - 1) if n >= 1 else None
        for l in range(config.l_max + 1):
            width = 2.0 ** (1 - l)
            for index in itertools.product(range(2**l), repeat=d):
                lo = np.array([-1.0 + k * width for k in index])
                hi = lo + width
                slo, shi = scale * lo, scale * hi
                if hole is None:
                    out.append(DyadicCell(n, l, index, tuple(slo), tuple(shi), None, None))
                    continue
                ilo = np.maximum(slo, -hole)
                ihi = np.minimum(shi, hole)
                if np.any(ihi <= ilo):
                    # scaled box misses the hole entirely
                    out.append(DyadicCell(n, l, index, tuple(slo), tuple(shi), None, None))
                elif np.all(ilo <= slo) and np.all(ihi >= shi):
                    # scaled box swallowed by the hole: empty region
                    continue
                else:
                    out.append(
                        DyadicCell(n, l, index, tuple(slo), tuple(shi), tuple(ilo), tuple(ihi))
                    )
    return out


class CellTable:
    """Flattened signed-box arrays for vectorized cell-mass evaluation."""

    def __init__(self, config: GaugeConfig):
        self.config = config
        self.cells = cells(config)
        n_cells = len(self.cells)
        signs, los, his, owner = [], [], [], []
        for c_idx, cell in enumerate(self.cells):
            signs.append(1.0)
            los.append(cell.lo)
            his.append(cell.hi)
            owner.append(c_idx)
            if cell.inner_lo is not None:
                signs.append(-1.0)
                los.append(cell.inner_lo)
                his.append(cell.inner_hi)
                owner.append(c_idx)
        self.box_sign = np.array(signs)
        self.box_lo = np.array(los)
        self.box_hi = np.array(his)
        self.box_cell = np.array(owner, dtype=int)
        self.n_cells = n_cells
        self.theta = np.array([c.theta for c in self.cells])
        self.weight = np.array([c.weight for c in self.cells])
        self.level_n = np.array([c.n for c in self.cells], dtype=int)
        self.level_l = np.array([c.l for c in self.cells], dtype=int)

    # -- psi kernels ----------------------------------------------------
    def _edge_terms(self, x: np.ndarray):
        sigma = self.config.sigma
        x = np.atleast_2d(x)
        uh = (self.box_hi[:, None, :] - x[None, :, :]) / sigma
        ul = (self.box_lo[:, None, :] - x[None, :, :]) / sigma
        return uh, ul

    def psi(self, x: np.ndarray) -> np.ndarray:
        """psi_c(x_p) = integral of phi_sigma(z - x) over cell c, shape (C, p)."""
        uh, ul = self._edge_terms(x)
        d_axis = ndtr(uh) - ndtr(ul)
        box_val = d_axis.prod(axis=2)
        out = np.zeros((self.n_cells, box_val.shape[1]))
        np.add.at(out, self.box_cell, self.box_sign[:, None] * box_val)
        return out

    def psi_grad(self, x: np.ndarray) -> np.ndarray:
        """Gradient of psi_c at x_p, shape (C, p, d)."""
        sigma = self.config.sigma
        uh, ul = self._edge_terms(x)
        d_axis = ndtr(uh) - ndtr(ul)
        pdf_h = np.exp(-0.5 * uh**2) / math.sqrt(2 * math.pi)
        pdf_l = np.exp(-0.5 * ul**2) / math.sqrt(2 * math.pi)
        d1 = (pdf_l - pdf_h) / sigma
        dim = d_axis.shape[2]
        grads = np.empty(d_axis.shape)
        for k in range(dim):
            others = [d_axis[:, :, j] for j in range(dim) if j != k]
            prod = np.ones_like(d1[:, :, k])
            for o in others:
                prod = prod * o
            grads[:, :, k] = d1[:, :, k] * prod
        out = np.zeros((self.n_cells,) + grads.shape[1:])
        np.add.at(out, self.box_cell, self.box_sign[:, None, None] * grads)
        return out

    def psi_hess(self, x: np.ndarray) -> np.ndarray:
        """Hessian of psi_c at x_p, shape (C, p, d, d)."""
        sigma = self.config.sigma
        uh, ul = self._edge_terms(x)
        d_axis = ndtr(uh) - ndtr(ul)
        pdf_h = np.exp(-0.5 * uh**2) / math.sqrt(2 * math.pi)
        pdf_l = np.exp(-0.5 * ul**2) / math.sqrt(2 * math.pi)
        d1 = (pdf_l - pdf_h) / sigma
        d2 = (ul * pdf_l - uh * pdf_h) / sigma**2
        dim = d_axis.shape[2]
        hess = np.empty(d_axis.shape[:2] + (dim, dim))
        for k in range(dim):
            for m in range(dim):
                if k == m:
                    prod = np.ones_like(d2[:, :, k])
                    for j in range(dim):
                        if j != k:
                            prod = prod * d_axis[:, :, j]
                    hess[:, :, k, k] = d2[:, :, k] * prod
                else:
                    prod = np.ones_like(d1[:, :, k])
                    for j in range(dim):
                        if j not in (k, m):
                            prod = prod * d_axis[:, :, j]
                    hess[:, :, k, m] = d1[:, :, k] * d1[:, :, m] * prod
        out = np.zeros((self.n_cells,) + hess.shape[1:])
        np.add.at(out, self.box_cell, self.box_sign[:, None, None, None] * hess)
        return out

    def masses(self, mu: DiscreteMeasure) -> np.ndarray:
        """Smoothed measure of every cell: (mu * N_sigma)(cell), shape (C,)."""
        return self.psi(mu.points) @ mu.weights


_TABLE_CACHE: dict[GaugeConfig, CellTable] = {}


def cell_table(config: GaugeConfig) -> CellTable:
    table = _TABLE_CACHE.get(config)
    if table is None:
        table = CellTable(config)
        _TABLE_CACHE[config] = table
    return table


def psi(cell: DyadicCell, sigma: float, x):
    """(value, grad, hess) of a single cell's psi at one point."""
    if sigma <= 0:
        raise InvalidInput("sigma must be positive")
    cfg = GaugeConfig(sigma=sigma, n_max=max(cell.n, 1), l_max=max(cell.l, 1), dim=len(cell.lo))
    table = CellTable.__new__(CellTable)
    table.config = cfg
    table.cells = [cell]
    table.n_cells = 1
    signs = [1.0]
    los = [cell.lo]
    his = [cell.hi]
    owner = [0]
    if cell.inner_lo is not None:
        signs.append(-1.0)
        los.append(cell.inner_lo)
        his.append(cell.inner_hi)
        owner.append(0)
    table.box_sign = np.array(signs)
    table.box_lo = np.array(los)
    table.box_hi = np.array(his)
    table.box_cell = np.array(owner, dtype=int)
    pt = np.atleast_1d(np.asarray(x, dtype=float))[None, :]
    val = table.psi(pt)[0, 0]
    grad = table.psi_grad(pt)[0, 0]
    hess = table.psi_hess(pt)[0, 0]
    return float(val), grad, hess


# -- the b(a) algebra ----------------------------------------------------

def _b_from_a(a: np.ndarray, theta: np.ndarray) -> np.ndarray:
    """b = sqrt(a^2 + 2 theta sqrt(1-theta) a + theta^2) - theta, stably.

    Written as a(a + 2c) / (B + theta) with B the square root, which is
    exact algebra and avoids the catastrophic cancellation at small a.
    """
    c = theta * np.sqrt(1.0 - theta)
    big = np.sqrt(a * a + 2.0 * c * a + theta * theta)
    return a * (a + 2.0 * c) / (big + theta)


def a_b_terms(mu: DiscreteMeasure, nu: DiscreteMeasure, cell: DyadicCell, sigma: float):
    """(a, b) for one cell: a = |(mu*N_sigma - nu*N_sigma)(cell)|."""
    cfg_dim = len(cell.lo)
    if mu.dim != cfg_dim or nu.dim != cfg_dim:
        raise InvalidInput("measure dimension does not match the cell")

    def mass(m: DiscreteMeasure) -> float:
        total = 0.0
        for x, w in zip(m.points, m.weights):
            v, _, _ = psi(cell, sigma, x)
            total += w * v
        return total

    s = mass(mu) - mass(nu)
    a = abs(s)
    b = float(_b_from_a(np.array([a]), np.array([cell.theta]))[0])
    return a, b


def eta_threshold(eps: float) -> float:
    """Smallness threshold: gauge below this forces metric closeness.

    eta(eps) = (sqrt(8 + eps) - 2 sqrt(2))^2, the exact inverse of
    eps = eta + 4 sqrt(2 eta).
    """
    if eps <= 0:
        raise InvalidInput("eps must be positive")
    return (math.sqrt(8.0 + eps) - 2.0 * math.sqrt(2.0)) ** 2


def mass_sum_envelope(gauge: float) -> float:
    """Upper bound on sum 2^{2(n-l)} a implied by a gauge value: G + 4 sqrt(2G)."""
    return gauge + 4.0 * math.sqrt(2.0 * max(gauge, 0.0))


#: Empirical constant in W2(mu*N, nu*N)^2 <= C * sum 2^{2(n-l)} a_{n,l}
#: for d = 1, sigma = 0.5.  The theory provides existence only; this value
#: was fitted on a frozen 50-pair calibration set (seed 1111, uniform
#: supports on [-2, 2]) where the observed maximum ratio was 1.57, then
#: frozen with a 1.25x safety factor.  Acceptance evaluates it on a
#: disjoint 200-pair set.
W2_METRIC_CONSTANT = 2.0


# -- gauge value with truncation tail ------------------------------------

def _gaussian_box_axis_stats(centers: np.ndarray, sigma: float, lo: float, hi: float):
    """Per component: P = N(c, s^2)((lo, hi]) and the restricted 2nd moment."""
    alpha = (lo - centers) / sigma
    beta = (hi - centers) / sigma
    prob = ndtr(beta) - ndtr(alpha)
    pdf_a = np.exp(-0.5 * alpha**2) / math.sqrt(2 * math.pi)
    pdf_b = np.exp(-0.5 * beta**2) / math.sqrt(2 * math.pi)
    m2 = (
        centers**2 * prob
        + 2.0 * centers * sigma * (pdf_a - pdf_b)
        + sigma**2 * (prob - (beta * pdf_b - alpha * pdf_a))
    )
    return prob, m2


def _smoothed_box_mass_and_m2(mu: DiscreteMeasure, sigma: float, half_width: float):
    """((mu*N_sigma)(box), second moment restricted to the box) for (-R, R]^d."""
    d = mu.dim
    probs = np.empty((len(mu), d))
    m2s = np.empty((len(mu), d))
    for k in range(d):
        probs[:, k], m2s[:, k] = _gaussian_box_axis_stats(
            mu.points[:, k], sigma, -half_width, half_width
        )
    box_prob = probs.prod(axis=1)
    box_m2 = np.zeros(len(mu))
    for k in range(d):
        other = np.ones(len(mu))
        for j in range(d):
            if j != k:
                other = other * probs[:, j]
        box_m2 += m2s[:, k] * other
    return float(mu.weights @ box_prob), float(mu.weights @ box_m2)


@dataclass(frozen=True)
class GaugeValue:
    value: float
    tail_bound: float
    a_sum: float
    per_shell: tuple
    config: GaugeConfig


def gauge_value(mu: DiscreteMeasure, nu: DiscreteMeasure, config: GaugeConfig) -> GaugeValue:
    """Truncated gauge sum plus an analytic bound on the discarded tail.

    The tail bound uses b <= a, the geometric level weights for l > l_max,
    and a Chebyshev-type bound 2^{2n} <= 4 |x|^2 on the shells n > n_max,
    all evaluated in closed form for the Gaussian-smoothed inputs.
    """
    if mu.dim != config.dim or nu.dim != config.dim:
        raise InvalidInput("measure dimension does not match the gauge config")
    table = cell_table(config)
    s = table.masses(mu) - table.masses(nu)
    a = np.abs(s)
    b = _b_from_a(a, table.theta)
    contrib = table.weight * b
    value = float(contrib.sum())
    a_sum = float((table.weight * a).sum())

    per_shell = []
    for n in range(config.n_max + 1):
        mask = table.level_n == n
        per_shell.append((n, float(contrib[mask].sum())))

    sigma = config.sigma
    # l-tail on kept shells: sum_{l > l_max} 2^{-2l} = 4^{-l_max} / 3
    shell_weight = 0.0
    for n in range(config.n_max + 1):
        outer = 2.0**n
        mass_mu, _ = _smoothed_box_mass_and_m2(mu, sigma, outer)
        mass_nu, _ = _smoothed_box_mass_and_m2(nu, sigma, outer)
        if n == 0:
            shell = mass_mu + mass_nu
        else:
            in_mu, _ = _smoothed_box_mass_and_m2(mu, sigma, outer / 2)
            in_nu, _ = _smoothed_box_mass_and_m2(nu, sigma, outer / 2)
            shell = (mass_mu - in_mu) + (mass_nu - in_nu)
        shell_weight += 2.0 ** (2 * n) * max(shell, 0.0)
    tail_l = shell_weight * (4.0 ** (-config.l_max)) / 3.0

    # n-tail over all levels: (4/3) * sum_{n > n_max} 2^{2n} s_n
    #                        <= (16/3) * integral of |x|^2 outside the box
    half = 2.0**config.n_max
    out_m2 = 0.0
    for m in (mu, nu):
        _, inside = _smoothed_box_mass_and_m2(m, sigma, half)
        out_m2 += gaussian_convolve_moment2(m, sigma) - inside
    tail_n = (16.0 / 3.0) * max(out_m2, 0.0)

    return GaugeValue(value, tail_l + tail_n, a_sum, tuple(per_shell), config)


# -- derivative bundle ----------------------------------------------------

def _coefficients(mu: DiscreteMeasure, nu: DiscreteMeasure, table: CellTable):
    s = table.masses(mu) - table.masses(nu)
    a = np.abs(s)
    theta = table.theta
    c = theta * np.sqrt(1.0 - theta)
    b = _b_from_a(a, theta)
    coef1 = np.sign(s) * (a + c) / (b + theta)
    coef2 = theta**3 / (b + theta) ** 3
    return coef1, coef2


def gauge_derivatives(
    mu: DiscreteMeasure,
    nu: DiscreteMeasure,
    config: GaugeConfig,
    x_list=None,
    y_list=None,
) -> DerivativeBundle:
    """Analytic derivative bundle of mu -> G(mu, nu) at mu.

    x_list / y_list are optional eager-evaluation points used only to
    validate finiteness; the returned callables accept arbitrary points.
    """
    table = cell_table(config)
    coef1, coef2 = _coefficients(mu, nu, table)
    w1 = table.weight * coef1
    w2 = table.weight * coef2

    def first_var(x):
        return np.einsum("c,cp->p", w1, table.psi(np.atleast_2d(x)))

    def lions(x):
        return np.einsum("c,cpd->pd", w1, table.psi_grad(np.atleast_2d(x)))

    def lions_grad(x):
        return np.einsum("c,cpde->pde", w1, table.psi_hess(np.atleast_2d(x)))

    def _raw_second(px, py):
        return np.einsum("c,cp,cq->pq", w2, px, py)

    def second_var(x, y):
        px = table.psi(np.atleast_2d(x))
        py = table.psi(np.atleast_2d(y))
        # averaging the two evaluation orientations makes the kernel
        # symmetric bit-exactly, immune to BLAS reduction-order effects
        return 0.5 * (_raw_second(px, py) + _raw_second(py, px).T)

    def second_var_grad(x, y):
        gx = table.psi_grad(np.atleast_2d(x))
        py = table.psi(np.atleast_2d(y))
        return np.einsum("c,cpd,cq->pqd", w2, gx, py)

    def lions2(x, y):
        gx = table.psi_grad(np.atleast_2d(x))
        gy = table.psi_grad(np.atleast_2d(y))
        return np.einsum("c,cpd,cqe->pqde", w2, gx, gy)

    bundle = DerivativeBundle(
        first_var=first_var,
        second_var=second_var,
        lions=lions,
        lions_grad=lions_grad,
        lions2=lions2,
        second_var_grad=second_var_grad,
    )
    for pts in (x_list, y_list):
        if pts is not None and not np.all(np.isfinite(bundle.first_var(np.atleast_2d(pts)))):
            raise InvalidInput("derivative evaluation returned non-finite values")
    return bundle


def integrated_second_var(mu: DiscreteMeasure, nu: DiscreteMeasure, config: GaugeConfig) -> float:
    """mu (x) mu integral of the gauge's second variational derivative."""
    table = cell_table(config)
    _, coef2 = _coefficients(mu, nu, table)
    m = table.masses(mu)
    return float((table.weight * coef2 * m * m).sum())


def _axis_interval_masses(centers: np.ndarray, sigma: float, edges: np.ndarray):
    """Per-component Gaussian masses of consecutive 1-d intervals."""
    z = ndtr((edges[None, :] - centers[:, None]) / sigma)
    return z[:, 1:] - z[:, :-1]


def _diag_cell_mass_squares(mu: DiscreteMeasure, sigma: float, n: int, l: int) -> float:
    """sum over level-l cells of shell n of (mu * N_sigma)(cell)^2.

    Shell cells are product boxes minus their hole intersection, so the
    double sum over support pairs factorizes axis by axis into 1-d
    interval sums; cost is O(2^l) per axis instead of O(2^{dl}) cells,
    which makes deep partition levels affordable in d = 2.
    """
    d = mu.dim
    scale = 2.0**n
    hole = 2.0 ** (n - 1) if n >= 1 else None
    edges = scale * (-1.0 + np.arange(2**l + 1) * 2.0 ** (1 - l))
    w = mu.weights
    total = None
    sign_terms = []
    # expand (P_full - P_hole)_i (P_full - P_hole)_j into four factorized terms
    for alpha in ("f", "h"):
        for beta in ("f", "h"):
            sign = 1.0 if alpha == beta else -1.0
            prod = np.ones((len(mu), len(mu)))
            for axis in range(d):
                centers = mu.points[:, axis]
                d_full = _axis_interval_masses(centers, sigma, edges)
                if hole is None:
                    d_hole = np.zeros_like(d_full)
                else:
                    clipped_lo = np.clip(edges[:-1], -hole, hole)
                    clipped_hi = np.clip(edges[1:], -hole, hole)
                    z_lo = ndtr((clipped_lo[None, :] - centers[:, None]) / sigma)
                    z_hi = ndtr((clipped_hi[None, :] - centers[:, None]) / sigma)
                    d_hole = np.maximum(z_hi - z_lo, 0.0)
                da = d_full if alpha == "f" else d_hole
                db = d_full if beta == "f" else d_hole
                prod = prod * (da @ db.T)
            sign_terms.append(sign * prod)
    total = sum(sign_terms)
    return float(w @ total @ w)


def diagonal_blowup_table(mu: DiscreteMeasure, config: GaugeConfig) -> list[dict]:
    """Level sweep of both integrated second derivatives at nu = mu.

    On the diagonal every cell difference vanishes, so the alternative
    gauge's coefficient is exactly 1/theta and the current gauge's is 1;
    the factorized shell sums make partition levels up to 10 cheap even
    in d = 2, where the alternative gauge's integral grows without bound.
    """
    sigma, d = config.sigma, config.dim
    per_level_old = np.zeros(config.l_max + 1)
    per_level_new = np.zeros(config.l_max + 1)
    for n in range(config.n_max + 1):
        for l in range(config.l_max + 1):
            msq = _diag_cell_mass_squares(mu, sigma, n, l)
            weight = 2.0 ** (2 * (n - l))
            theta = 2.0 ** (-(4 * n + 2 * d * l))
            per_level_new[l] += weight * msq
            per_level_old[l] += weight * msq / theta
    rows = []
    for l in range(config.l_max + 1):
        rows.append(
            {
                "l_max": l,
                "theta_min": 2.0 ** (-(4 * config.n_max + 2 * d * l)),
                "new_gauge": float(per_level_new[: l + 1].sum()),
                "old_gauge": float(per_level_old[: l + 1].sum()),
            }
        )
    return rows


def old_gauge_second_var_blowup(
    mu: DiscreteMeasure, nu: DiscreteMeasure, config: GaugeConfig
) -> list[dict]:
    """Level sweep comparing integrated second derivatives of two gauges.

    The alternative gauge replaces b by sqrt(a^2 + theta^2) - theta; its
    second-derivative coefficient theta^2 / (a^2 + theta^2)^{3/2} scales
    like 1/theta on cells where the two smoothed measures agree, so the
    mu (x) mu integral keeps growing as levels are added, while the
    coefficient theta^3 / (b + theta)^3 of the gauge used everywhere else
    in this package stays <= 1 and the same integral stabilizes.

    Returns one row per l <= config.l_max with the partial sums over
    cells of level <= l.  Identical arguments delegate to the factorized
    diagonal path, which handles deep levels the cell table cannot.
    """
    if mu == nu:
        return diagonal_blowup_table(mu, config)
    table = cell_table(config)
    s = table.masses(mu) - table.masses(nu)
    a = np.abs(s)
    theta = table.theta
    m = table.masses(mu)
    new_terms = table.weight * (theta**3 / (_b_from_a(a, theta) + theta) ** 3) * m * m
    old_terms = table.weight * (theta**2 / (a * a + theta * theta) ** 1.5) * m * m
    rows = []
    for level in range(config.l_max + 1):
        mask = table.level_l <= level
        rows.append(
            {
                "l_max": level,
                "theta_min": float(theta[mask].min()),
                "new_gauge": float(new_terms[mask].sum()),
                "old_gauge": float(old_terms[mask].sum()),
            }
        )
    return rows
