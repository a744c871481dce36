"""Robustness of PLR intercepts and scatter to downsampling.

Each replication draws a subsample of stars and caps the number of epochs
per band, refits with MGLS and with SVI, and compares the PLR intercept
and residual scatter with the corresponding full-sample estimates.

MGLS intercepts are fitted with slope and curvature held at reference
values. SVI intercepts come straight from the fitted q(alpha_b).
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, replace

import numpy as np

from .baselines import estimate_periods, init_alpha_intercepts, sinusoid_fit
from .lightcurve import Dataset, FrequencyGrid, downsample
from .plr import a_to_alpha, alpha_to_a, fit_intercept, plr_eval_a
from .products import map_frequency, map_theta
from .svi import FitConfig, HyperParams, run_svi

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class DownsampleSetting:
    name: str
    n_stars: int
    caps: tuple


# caps are for bands (I, J, H, Ks)
DOWNSAMPLE_SETTINGS = (
    DownsampleSetting("S1", 50, (10, 5, 5, 5)),
    DownsampleSetting("S2", 50, (20, 10, 10, 10)),
    DownsampleSetting("S3", 50, (30, 15, 15, 15)),
    DownsampleSetting("S4", 100, (10, 5, 5, 5)),
    DownsampleSetting("S5", 100, (20, 10, 10, 10)),
    DownsampleSetting("S6", 100, (30, 15, 15, 15)),
)


@dataclass(frozen=True)
class MethodFit:
    """Per-band PLR intercept and residual SD for one method on one sample."""

    a0: np.ndarray
    sigma: np.ndarray
    seconds: float


def mgls_plr(dataset: Dataset, grid: FrequencyGrid, slopes_a) -> MethodFit:
    """MGLS periods and sinusoid means, intercept-only PLR per band.

    ``slopes_a`` holds ``(a1, a2)`` per band in the ``log10 P - 2.3`` form.
    """
    t0 = time.perf_counter()
    f_hat = estimate_periods(dataset, grid)
    B = dataset.n_bands
    a0, sig = np.full(B, np.nan), np.full(B, np.nan)
    for b in range(B):
        mags = np.array([sinusoid_fit(s.bands[b], f)[0] if np.isfinite(f) else np.nan
                         for s, f in zip(dataset, f_hat)])
        ok = np.isfinite(mags)
        if ok.sum() >= 2:
            fit = fit_intercept(1.0 / f_hat[ok], mags[ok], *slopes_a[b])
            a0[b], sig[b] = fit.a0, fit.sigma
    return MethodFit(a0, sig, time.perf_counter() - t0)


def hyperparams_for(dataset, grid, template: HyperParams, slopes_a, subset_size=100, seed=0):
    """Template hyperparameters with intercepts from the MGLS median recipe."""
    rng = np.random.default_rng(seed)
    n = min(subset_size, len(dataset))
    sub = dataset.subset(np.sort(rng.choice(len(dataset), n, replace=False)))
    alpha_slopes = np.array([a_to_alpha([0.0, *s])[1:] for s in slopes_a])
    icpt = init_alpha_intercepts(sub, grid, alpha_slopes)
    abar = template.alpha_bar.copy()
    abar[:, 1:] = alpha_slopes
    abar[:, 0] = np.where(np.isfinite(icpt), icpt, template.alpha_bar[:, 0])
    return replace(template, alpha_bar=abar)


def svi_plr(dataset, hp, kernels, config: FitConfig, threads=1) -> MethodFit:
    t0 = time.perf_counter()
    res = run_svi(dataset, hp, kernels, config, threads=threads)
    Ea = res.state.alpha_means()
    f_hat = np.array([map_frequency(lp) for lp in res.locals])
    m_hat = np.array([map_theta(lp)[0][0::3] for lp in res.locals])
    B = dataset.n_bands
    a0, sig = np.empty(B), np.empty(B)
    for b in range(B):
        a = alpha_to_a(Ea[b])
        has = np.array([len(s.bands[b]) > 0 for s in dataset])
        r = m_hat[has, b] - plr_eval_a(a, 1.0 / f_hat[has])
        a0[b] = a[0]
        sig[b] = np.std(r, ddof=3) if r.size > 3 else np.nan
    return MethodFit(a0, sig, time.perf_counter() - t0)


@dataclass
class DownsampleRow:
    setting: str
    replication: int
    method: str
    band: str
    a0_sub: float
    a0_full: float
    sigma_sub: float
    sigma_ref: float
    seconds: float

    @property
    def shift(self):
        return self.a0_sub - self.a0_full

    @property
    def ratio(self):
        return self.sigma_sub / self.sigma_ref


def downsample_eval(dataset: Dataset, setting: DownsampleSetting, replications: int,
                    template: HyperParams, slopes_a, kernels, config: FitConfig,
                    seed: int = 0, threads: int = 1, full=None):
    """Rows of intercept shifts and scatter ratios for MGLS and SVI.

    ``full`` may carry precomputed full-sample ``(mgls, svi)`` fits. The
    scatter reference for both methods is the full-sample SVI scatter.
    Returns ``(rows, full)``.
    """
    grid = config.grid
    if full is None:
        hp_full = hyperparams_for(dataset, grid, template, slopes_a, seed=seed)
        full = (mgls_plr(dataset, grid, slopes_a),
                svi_plr(dataset, hp_full, kernels, config, threads))
    full_mgls, full_svi = full
    rows = []
    for r in range(replications):
        sub = downsample(dataset, setting.n_stars, setting.caps, seed=seed * 100003 + r)
        m = mgls_plr(sub, grid, slopes_a)
        t0 = time.perf_counter()
        hp = hyperparams_for(sub, grid, template, slopes_a, seed=seed + r)
        s = svi_plr(sub, hp, kernels, replace(config, seed=config.seed + r), threads)
        s = replace(s, seconds=time.perf_counter() - t0)  # count the init toward SVI
        log.info("%s replication %d: mgls %.1fs, svi %.1fs", setting.name, r, m.seconds, s.seconds)
        for b, name in enumerate(dataset.band_names):
            rows.append(DownsampleRow(setting.name, r, "MGLS", name, m.a0[b], full_mgls.a0[b],
                                      m.sigma[b], full_svi.sigma[b], m.seconds))
            rows.append(DownsampleRow(setting.name, r, "SVI", name, s.a0[b], full_svi.a0[b],
                                      s.sigma[b], full_svi.sigma[b], s.seconds))
    return rows, full


def median_abs_shift(rows, method, bands=None):
    vals = [abs(r.shift) for r in rows
            if r.method == method and (bands is None or r.band in bands) and np.isfinite(r.shift)]
    return float(np.median(vals)) if vals else np.nan
