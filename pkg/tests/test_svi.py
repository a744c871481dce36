import json
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from miraplr.errors import DomainError
from miraplr.expfam import GammaCanonical, GaussianCanonical, gamma_mean, gaussian_moments
from miraplr.kernel import KernelParams
from miraplr.lightcurve import FrequencyGrid, theta_layout
from miraplr.svi import (FitConfig, GlobalState, HyperParams, SuffStats, alpha_target,
                         coordinate_ascent_sweep, exact_stats, expected_globals,
                         full_local_pass, gamma_target, init_global_state, minibatch_indices,
                         run_svi, step_size, update_alpha, update_gamma,
                         update_globals, update_omega)

from oracles import random_dataset

GRID = FrequencyGrid(1e-3, 1e-2, 120)
KERNELS = [KernelParams(0.02, 0.05, 0.01), KernelParams(0.01, 0.2, 0.005)]


def hyper(B=2):
    return HyperParams.default(np.tile([18.0, 0.0, 0.0], (B, 1)), gamma_bar=10.0)


def random_stats(rng, B):
    A = rng.normal(size=(2 * B, 2 * B))
    d = np.array([1.0, -2.5, 6.25])
    m = rng.normal(18, 1, B)
    return SuffStats(A @ A.T, m ** 2 + 0.1, m[:, None] * d, np.outer(d, d))


def states_equal(a: GlobalState, b: GlobalState):
    return (all(np.array_equal(x.eta1, y.eta1) and np.array_equal(x.eta2, y.eta2)
                for x, y in zip(a.alpha, b.alpha))
            and all(x.eta1 == y.eta1 and x.eta2 == y.eta2 for x, y in zip(a.gamma, b.gamma))
            and np.array_equal(a.omega.eta1, b.omega.eta1) and a.omega.eta2 == b.omega.eta2)


def test_step_size_examples():
    assert step_size(1, 0.0, 1.0) == 1.0
    assert step_size(1, 1000, 0.5) == pytest.approx(0.031607, abs=1e-6)
    with pytest.raises(DomainError):
        step_size(0, 1000, 0.5)


@given(st.integers(1, 10 ** 6), st.floats(1000, 2000), st.floats(0.51, 1.0))
def test_step_size_decreasing_in_unit_interval(t, c1, c2):
    k = step_size(t, c1, c2)
    assert 0 < k < 1
    assert step_size(t + 1, c1, c2) < k


def test_fit_config_validation():
    with pytest.raises(DomainError):
        FitConfig(c2=0.5)
    with pytest.raises(DomainError):
        FitConfig(batch_size=0)
    with pytest.raises(DomainError):
        FitConfig(c1=0)


def test_hyperparams_validation():
    with pytest.raises(DomainError):
        HyperParams(np.zeros((2, 3)), [1.0, 1.0], np.eye(3))
    with pytest.raises(DomainError):
        HyperParams(np.zeros((1, 3)), [1.0], -np.eye(2))
    hp = hyper()
    assert HyperParams.from_dict(json.loads(json.dumps(hp.to_dict()))).to_dict() == hp.to_dict()


def test_prior_initialized_expectations():
    hp = hyper()
    gs = init_global_state(hp, 50)
    eg = expected_globals(gs)
    np.testing.assert_allclose(eg.E_gamma, hp.gamma_bar, rtol=1e-14)
    np.testing.assert_allclose(eg.E_alpha, hp.alpha_bar, atol=1e-12)
    assert gs.omega.eta2 == pytest.approx(0.5 * (50 + 1 - 4 - 1))
    for b in range(2):
        S = eg.E_alpha_outer[b] - np.outer(eg.E_alpha[b], eg.E_alpha[b])
        assert np.all(np.linalg.eigvalsh(S) >= -1e-12)


def test_point_mass_limit():
    a = np.array([18.0, -1.0, 0.5])
    gs = GlobalState((GaussianCanonical.from_mean_precision(a, 1e12 * np.eye(3)),),
                     (GammaCanonical.from_shape_rate(4e12, 1e12),),
                     init_global_state(HyperParams.default([a]), 10).omega)
    eg = expected_globals(gs)
    np.testing.assert_allclose(eg.E_alpha[0], a, atol=1e-8)
    np.testing.assert_allclose(eg.E_alpha_outer[0], np.outer(a, a), atol=1e-8)
    assert eg.E_gamma[0] == pytest.approx(4.0, abs=1e-8)


def test_kappa_zero_leaves_state():
    rng = np.random.default_rng(0)
    hp = hyper()
    gs = init_global_state(hp, 10)
    stats = random_stats(rng, 2)
    new = update_globals(gs, stats, 10, 0.0, hp)
    assert np.array_equal(new.omega.eta1, gs.omega.eta1)
    for b in range(2):
        assert new.gamma[b].eta1 == gs.gamma[b].eta1
        np.testing.assert_array_equal(new.alpha[b].eta1, gs.alpha[b].eta1)
        np.testing.assert_array_equal(new.alpha[b].eta2, gs.alpha[b].eta2)


def test_kappa_one_lands_on_target():
    rng = np.random.default_rng(1)
    hp = hyper()
    gs = init_global_state(hp, 10)
    stats = random_stats(rng, 2)
    new = update_omega(gs, stats, 10, 1.0, hp)
    np.testing.assert_allclose(new.omega.eta1, -0.5 * (hp.n_bar * np.linalg.inv(hp.Omega_bar) + stats.bb))
    assert new.omega.eta2 == 0.5 * (10 + hp.n_bar - 4 - 1)
    new = update_gamma(new, stats, 10, 1.0, hp, 0)
    assert new.gamma[0].eta1 == pytest.approx(gamma_target(stats, new, hp, 0))
    assert new.gamma[0].eta2 == 10 / 2 + hp.gamma_bar[0] * hp.r_bar - 1
    new = update_alpha(new, stats, 10, 1.0, hp, 0)
    xi1, xi2 = alpha_target(stats, new, hp, 0)
    np.testing.assert_allclose(new.alpha[0].eta1, xi1)
    np.testing.assert_allclose(new.alpha[0].eta2, xi2)


def test_perfect_fit_gamma_target():
    hp = HyperParams.default([[18.0, 1.0, 0.5]], r_bar=2.5)
    a = hp.alpha_bar[0]
    gs = GlobalState((GaussianCanonical.from_mean_precision(a, 1e14 * np.eye(3)),),
                     init_global_state(hp, 1).gamma, init_global_state(hp, 1).omega)
    d = np.array([1.0, -2.3, 2.3 ** 2])
    m = d @ a
    stats = SuffStats(np.eye(2), np.array([m * m]), np.array([m * d]), np.outer(d, d))
    assert gamma_target(stats, gs, hp, 0) == pytest.approx(-2.5, abs=1e-9)


def test_gamma_target_against_monte_carlo():
    rng = np.random.default_rng(2)
    hp = HyperParams.default([[18.0, 1.0, 0.5]], r_bar=1.5)
    qa = GaussianCanonical.from_mean_cov([18.2, 0.9, 0.4], np.diag([0.04, 0.01, 0.002]))
    gs = GlobalState((qa,), init_global_state(hp, 1).gamma, init_global_state(hp, 1).omega)
    d = np.array([1.0, -2.4, 2.4 ** 2])
    mu_m, var_m = 17.9, 0.05
    stats = SuffStats(np.eye(2), np.array([mu_m ** 2 + var_m]), np.array([mu_m * d]),
                      np.outer(d, d))
    n = 1_000_000
    mean, cov, _ = gaussian_moments(qa)
    al = rng.multivariate_normal(mean, cov, n)
    m = rng.normal(mu_m, np.sqrt(var_m), n)
    sq = (m - al @ d) ** 2
    target = gamma_target(stats, gs, hp, 0)
    assert abs(target - (-1.5 - 0.5 * sq.mean())) < 3 * 0.5 * sq.std() / np.sqrt(n)


def test_alpha_update_single_star_conjugate():
    # d = (1, 0, 0) at f = 1: only the intercept is informed by the data
    hp = HyperParams.default([[18.0, 0.0, 0.0]])
    gs = init_global_state(hp, 1)
    Eg = gamma_mean(gs.gamma[0])
    d = np.array([1.0, 0.0, 0.0])
    Em = 17.0
    stats = SuffStats(np.eye(2), np.array([Em ** 2]), np.array([Em * d]), np.outer(d, d))
    new = update_alpha(gs, stats, 1, 1.0, hp, 0)
    mean, cov, _ = gaussian_moments(new.alpha[0])
    # 1-D conjugate Gaussian: precision delta + Eg, mean (delta*18 + Eg*17)/(delta + Eg)
    expected = (hp.delta_bar * 18 + Eg * Em) / (hp.delta_bar + Eg)
    assert mean[0] == pytest.approx(expected, rel=1e-12)
    assert 17.0 < mean[0] < 18.0
    assert cov[0, 0] == pytest.approx(1 / (hp.delta_bar + Eg), rel=1e-12)
    np.testing.assert_allclose(mean[1:], 0, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.floats(0.0, 1.0))
def test_updates_stay_in_domain(seed, kappa):
    rng = np.random.default_rng(seed)
    hp = hyper()
    gs = init_global_state(hp, 20)
    for _ in range(3):
        gs = update_globals(gs, random_stats(rng, 2), 20, kappa, hp)
        assert np.all(np.linalg.eigvalsh(gs.omega.eta1) < 0)
        for b in range(2):
            assert gs.gamma[b].eta1 < 0
            assert np.all(np.linalg.eigvalsh(gs.alpha[b].eta1) < 0)


def test_minibatch_without_replacement():
    for t in range(1, 50):
        idx = minibatch_indices(0, t, 10, 4)
        assert len(set(idx)) == 4 and idx.min() >= 0 and idx.max() < 10
    assert minibatch_indices(3, 7, 10, 4).tolist() == minibatch_indices(3, 7, 10, 4).tolist()


@pytest.fixture(scope="module")
def small():
    rng = np.random.default_rng(11)
    return random_dataset(rng, 6, 2, 8)


def test_zero_iterations_gives_prior_driven_locals(small):
    hp = hyper()
    cfg = FitConfig(iterations=0, grid=GRID)
    res = run_svi(small, hp, KERNELS, cfg, keep_nodes=True)
    assert states_equal(res.state, init_global_state(hp, len(small)))
    ref = full_local_pass(small, res.state, KERNELS, GRID)
    for a, b in zip(res.locals, ref):
        np.testing.assert_array_equal(a.density, b.density)


def test_run_is_deterministic_and_thread_independent(small):
    cfg = FitConfig(iterations=15, batch_size=3, grid=GRID, seed=5)
    a = run_svi(small, hyper(), KERNELS, cfg)
    b = run_svi(small, hyper(), KERNELS, cfg, threads=3)
    assert states_equal(a.state, b.state)
    for x, y in zip(a.locals, b.locals):
        np.testing.assert_array_equal(x.density, y.density)


def test_resume_matches_uninterrupted(small, tmp_path):
    cfg = FitConfig(iterations=12, batch_size=3, grid=GRID, seed=2)
    full = run_svi(small, hyper(), KERNELS, cfg)
    ck = tmp_path / "ck.json"
    run_svi(small, hyper(), KERNELS, replace(cfg, iterations=5), checkpoint=ck, checkpoint_every=5)
    doc = json.loads(ck.read_text())
    assert doc["iteration"] == 5 and doc["config_hash"] == full.config_hash
    resumed = run_svi(small, hyper(), KERNELS, cfg, checkpoint=ck, resume=True)
    assert states_equal(full.state, resumed.state)


def test_resume_rejects_foreign_checkpoint(small, tmp_path):
    ck = tmp_path / "ck.json"
    cfg = FitConfig(iterations=2, batch_size=2, grid=GRID)
    run_svi(small, hyper(), KERNELS, cfg, checkpoint=ck)
    with pytest.raises(DomainError):
        run_svi(small, hyper(), KERNELS, replace(cfg, c1=1000.0), checkpoint=ck, resume=True)


def test_band_count_mismatch(small):
    with pytest.raises(DomainError):
        run_svi(small, hyper(3), KERNELS, FitConfig(iterations=1, grid=GRID))


def test_fixed_point_of_full_batch_sweep():
    rng = np.random.default_rng(12)
    ds = random_dataset(rng, 8, 2, 8)
    hp = hyper()
    gs = init_global_state(hp, len(ds))
    for _ in range(400):
        new, _ = coordinate_ascent_sweep(ds, gs, hp, None, GRID)
        delta = max(np.max(np.abs(new.omega.eta1 - gs.omega.eta1)),
                    max(abs(x.eta1 - y.eta1) for x, y in zip(new.gamma, gs.gamma)),
                    max(np.max(np.abs(x.eta2 - y.eta2)) for x, y in zip(new.alpha, gs.alpha)))
        gs = new
        if delta < 1e-10:
            break
    again, _ = coordinate_ascent_sweep(ds, gs, hp, None, GRID)
    assert again.omega.eta2 == gs.omega.eta2
    np.testing.assert_allclose(again.omega.eta1, gs.omega.eta1, atol=1e-8)
    for b in range(2):
        assert again.gamma[b].eta2 == gs.gamma[b].eta2
        assert again.gamma[b].eta1 == pytest.approx(gs.gamma[b].eta1, abs=1e-8)
        np.testing.assert_allclose(again.alpha[b].eta1, gs.alpha[b].eta1, atol=1e-8)
        np.testing.assert_allclose(again.alpha[b].eta2, gs.alpha[b].eta2, atol=1e-6)


def test_exact_stats_is_weighted_sum(small):
    layout = theta_layout(2)
    gs = init_global_state(hyper(), len(small))
    locals_ = full_local_pass(small, gs, KERNELS, GRID)
    st_ = exact_stats(locals_, layout)
    # recompute by hand for one component
    mm = sum(lp.weights @ (lp.nodes.cov[:, 0, 0] + lp.nodes.mean[:, 0] ** 2) for lp in locals_)
    assert st_.mm[0] == pytest.approx(mm, rel=1e-12)
    assert np.trace(st_.dd) > 0 and np.allclose(st_.bb, st_.bb.T)


def test_cached_products_do_not_change_the_fit(small):
    cfg = FitConfig(iterations=10, batch_size=3, grid=GRID, seed=8)
    a = run_svi(small, hyper(), KERNELS, cfg, cache_products=True)
    b = run_svi(small, hyper(), KERNELS, cfg, cache_products=False)
    assert states_equal(a.state, b.state)
    for x, y in zip(a.locals, b.locals):
        np.testing.assert_array_equal(x.density, y.density)
