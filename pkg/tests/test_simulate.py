import numpy as np
import pytest
from scipy import stats

from miraplr.errors import DomainError
from miraplr.kernel import KernelParams, gram_matrix
from miraplr.lightcurve import write_dataset
from miraplr.simulate import (NOISE_LEVELS, CadenceSpec, GridSettings, NoiseModel, SimulationTruth,
                              cadence_times, generate_dataset, in_seasonal_gap, read_truths,
                              simulation_grid, write_truths)

SILENT = NoiseModel(a=0.0, b=1e3)  # sigma = exp(-1000): numerically zero noise


def test_noise_law_value():
    assert NOISE_LEVELS["N1"](19.0) == pytest.approx(np.exp(1.82e-6 * 19 ** 5 - 5.84))
    assert NOISE_LEVELS["N1"](19.0) == pytest.approx(0.27, abs=0.01)
    assert NOISE_LEVELS["N3"](19.0) - NOISE_LEVELS["N1"](19.0) == pytest.approx(0.1)


def test_noiseless_star_is_mean_plus_sinusoid():
    truth = SimulationTruth.default(("I",), with_gp=False)
    ds, tr = generate_dataset(1, truth, CadenceSpec(counts=(25,)), SILENT, seed=3)
    band, rec = ds[0].bands[0], tr[0]
    w = 2 * np.pi * rec.f_true * band.t
    expect = rec.m_true[0] + rec.beta_true[0, 0] * np.cos(w) + rec.beta_true[0, 1] * np.sin(w)
    np.testing.assert_allclose(band.y, expect, atol=1e-12)


def test_frequencies_uniform():
    truth = SimulationTruth.default(("I",), with_gp=False)
    _, tr = generate_dataset(10_000, truth, CadenceSpec(counts=(0,)), NOISE_LEVELS["N1"], seed=0)
    f = np.array([r.f_true for r in tr])
    assert stats.kstest(f, stats.uniform(1e-3, 9e-3).cdf).pvalue > 0.001


def test_invalid_truth():
    good = SimulationTruth.default(("I",))
    bad = SimulationTruth(good.alpha, good.gamma, -np.eye(2), None, ("I",))
    with pytest.raises(DomainError):
        generate_dataset(1, bad, CadenceSpec(counts=(3,)), NOISE_LEVELS["N1"], 0)
    with pytest.raises(DomainError):
        generate_dataset(1, good, CadenceSpec(counts=(3, 3)), NOISE_LEVELS["N1"], 0)


def test_cadences():
    u = cadence_times(CadenceSpec("uniform", (100,), span=3000), 0)[0]
    assert u.min() >= 0 and u.max() <= 3000
    s = cadence_times(CadenceSpec("seasonal", (500, 500), gap=0.4), 1)
    for t in s:
        assert not in_seasonal_gap(t, 0.4).any() and t.max() <= 3000
    st_ = cadence_times(CadenceSpec("staggered", (50, 50), offset=0.7), 2)
    assert st_[1].min() >= 0.7 * 3000 and st_[0].max() <= 0.7 * 3000
    with pytest.raises(DomainError):
        CadenceSpec("weekly")


def test_deterministic_per_seed(tmp_path):
    truth = SimulationTruth.default()
    spec = CadenceSpec(counts=(8, 4))
    a, _ = generate_dataset(5, truth, spec, NOISE_LEVELS["N2"], seed=4)
    b, _ = generate_dataset(5, truth, spec, NOISE_LEVELS["N2"], seed=4)
    write_dataset(a, tmp_path / "a.csv")
    write_dataset(b, tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    c, _ = generate_dataset(5, truth, spec, NOISE_LEVELS["N2"], seed=5)
    assert a[0].bands != c[0].bands


def test_truth_file_roundtrip(tmp_path):
    truth = SimulationTruth.default()
    _, tr = generate_dataset(3, truth, CadenceSpec(counts=(2, 2)), NOISE_LEVELS["N1"], 0)
    write_truths(tmp_path / "t.csv", tr, truth.band_names, header="x")
    back = read_truths(tmp_path / "t.csv")
    assert back == {r.star_id: r.f_true for r in tr}


def test_gp_draw_covariance():
    k = KernelParams(0.3, 0.5, 0.05)
    t = np.array([0.0, 60.0, 130.0, 200.0, 400.0])
    f = 0.004
    H = gram_matrix(t, f, np.zeros(5), k)
    rng = np.random.default_rng(0)
    draws = np.linalg.cholesky(H) @ rng.normal(size=(5, 10_000))
    S = np.cov(draws)
    assert np.linalg.norm(S - H) / np.linalg.norm(H) < 0.05


def test_simulation_grid_shape():
    grid = simulation_grid(GridSettings(n_stars=2))
    assert len(grid) == 90
    assert len({g.name for g in grid}) == 90
    for g in grid:
        nK, nI = (int(x[1:]) for x in g.name.split("_")[:2])
        assert all(s.counts == (nI, nK) for s in g.dataset)
    again = simulation_grid(GridSettings(n_stars=2))
    assert all(x.dataset[0].bands == y.dataset[0].bands for x, y in zip(grid, again))
