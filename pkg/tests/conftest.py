import numpy as np
import pytest

from hjblab.measures import DiscreteMeasure


def random_measure(rng, n=None, dim=1, lo=-2.0, hi=2.0, concentration=1.0):
    n = int(rng.integers(2, 12)) if n is None else n
    pts = rng.uniform(lo, hi, (n, dim))
    w = rng.dirichlet(np.full(n, concentration))
    return DiscreteMeasure(pts, w)


def conditioned_measure(rng, n=6, dim=1, lo=-2.0, hi=2.0, jitter=0.15, floor=0.3):
    """Jittered lattice with a weight floor: supports overlap at sigma scale.

    Keeps mixture densities bounded away from zero between atoms, which
    the finite-difference oracles for entropy derivatives need (measures
    with isolated far-out atoms make the mixture path stiff at t = 0).
    """
    base = np.linspace(lo, hi, n)
    pts = np.stack([base + rng.uniform(-jitter, jitter, n) for _ in range(dim)], axis=1)
    w = floor / n + rng.dirichlet(np.ones(n)) * (1.0 - floor)
    return DiscreteMeasure(pts, w / w.sum())


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
