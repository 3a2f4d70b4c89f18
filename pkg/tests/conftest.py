import numpy as np
import pytest

from chcsim import noise, potential
from chcsim.dynamics import SimConfig
from chcsim.spectral import ModeVector


def band_cov(M, pairs, band):
    b = np.zeros(M + 1)
    for k, v in pairs:
        b[k] = v
    return noise.CovarianceSpec(b, band)


def standard_cov(M=32):
    """b_1 = b_2 = 1 with band N = 2, the workhorse noise of the suite."""
    return band_cov(M, [(1, 1.0), (2, 1.0)], 2)


def make_cfg(
    M=32,
    dt=1e-3,
    T=1.0,
    c=0.0,
    lam=1.0,
    n=4,
    cov=None,
    seed=1234,
    potential_mode="poly",
    **kw,
):
    if cov is None:
        cov = standard_cov(M)
    if potential_mode == "poly":
        pot = potential.PotentialSpec.truncated(n, lam)
    elif potential_mode == "exact":
        pot = potential.PotentialSpec.exact(lam)
    else:
        pot = potential.PotentialSpec.off()
    return SimConfig(M=M, dt=dt, T=T, c=c, potential=pot, cov=cov, seed=seed, **kw)


def perturbed_state(cfg, scale, slot=0):
    """Mean-c start: c e_0 plus a scaled stationary-shaped perturbation."""
    rng = noise.aux_stream(cfg.seed, slot)
    base = ModeVector.constant(cfg.c, cfg.M).coeffs
    sample = noise.sample_stationary_gaussian(cfg.c, cfg.cov, rng)
    base[1:] += scale * sample.coeffs[1:]
    return ModeVector(base)


@pytest.fixture
def rng():
    return np.random.default_rng(20260810)
