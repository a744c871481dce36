import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.special import logsumexp

from miraplr.elbo import elbo_estimate, global_elbo, star_elbo
from miraplr.errors import DomainError
from miraplr.kernel import KernelParams
from miraplr.lightcurve import BandData, FrequencyGrid, StarLightCurve
from miraplr.local import ExpectedGlobals, update_local
from miraplr.svi import HyperParams, coordinate_ascent_sweep, init_global_state

from oracles import default_globals, exact_log_marginal, random_dataset, random_star

GRID = FrequencyGrid(1e-3, 1e-2, 150)
KERNELS = [KernelParams(0.02, 0.05, 0.01), KernelParams(0.01, 0.2, 0.005)]


def log_evidence(star, alpha, gamma, Omega, kernels):
    # uniform prior density on [f_min, f_max], rectangle rule over the grid
    lm = np.array([exact_log_marginal(star, f, alpha, gamma, Omega, kernels) for f in GRID.values])
    return logsumexp(lm) + np.log(GRID.df) - np.log(GRID.f_max - GRID.f_min)


@settings(max_examples=8, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_optimal_local_attains_log_evidence(seed):
    # with fixed globals the optimal q(theta, f) is the exact posterior, so the bound is tight
    star = random_star(np.random.default_rng(seed))
    alpha, gamma, Omega = default_globals(2)
    eg = ExpectedGlobals.point_mass(alpha, gamma, Omega)
    lp = update_local(star, eg, KERNELS, GRID)
    assert star_elbo(star, lp, eg, KERNELS) == pytest.approx(
        log_evidence(star, alpha, gamma, Omega, KERNELS), abs=1e-7)


def test_star_elbo_needs_nodes():
    star = random_star(np.random.default_rng(0))
    eg = ExpectedGlobals.point_mass(*default_globals(2))
    lp = update_local(star, eg, KERNELS, GRID, keep_nodes=False)
    with pytest.raises(DomainError):
        star_elbo(star, lp, eg, KERNELS)


def test_shifting_data_and_intercepts_keeps_bound():
    star = random_star(np.random.default_rng(1))
    alpha, gamma, Omega = default_globals(2)
    shifted_alpha = alpha.copy()
    shifted_alpha[:, 0] += 2.5
    moved = StarLightCurve(star.star_id, [BandData(b.t, b.y + 2.5, b.sigma) for b in star.bands])
    a_eg = ExpectedGlobals.point_mass(alpha, gamma, Omega)
    b_eg = ExpectedGlobals.point_mass(shifted_alpha, gamma, Omega)
    a = star_elbo(star, update_local(star, a_eg, KERNELS, GRID), a_eg, KERNELS)
    b = star_elbo(moved, update_local(moved, b_eg, KERNELS, GRID), b_eg, KERNELS)
    assert a == pytest.approx(b, abs=1e-8)


def test_global_terms_vanish_at_prior():
    # q equal to the prior: both KL terms are zero, only Wishart pieces remain finite
    hp = HyperParams.default(np.tile([18.0, 0.0, 0.0], (2, 1)), gamma_bar=10.0)
    gs = init_global_state(hp, 5)
    assert np.isfinite(global_elbo(gs, hp))


def test_full_batch_sweeps_do_not_decrease_bound():
    ds = random_dataset(np.random.default_rng(3), 6, 2, 8)
    hp = HyperParams.default(np.tile([18.0, 0.0, 0.0], (2, 1)), gamma_bar=10.0)
    gs = init_global_state(hp, len(ds))
    values = []
    for _ in range(8):
        gs_next, locals_ = coordinate_ascent_sweep(ds, gs, hp, KERNELS, GRID)
        values.append(elbo_estimate(ds, gs, locals_, hp, KERNELS))
        gs = gs_next
    diffs = np.diff(values)
    assert np.all(diffs >= -1e-8 * np.abs(values[1:]))
