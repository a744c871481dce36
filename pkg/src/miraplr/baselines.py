"""Generalized Lomb-Scargle periodograms and the hyperparameter initialization recipe."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg, optimize, stats

from .errors import DomainError, NumericalError
from .kernel import KernelParams
from .lightcurve import BandData, Dataset, FrequencyGrid, StarLightCurve

LOG_TAU_BOUNDS = (-15.0, 5.0)


@dataclass(frozen=True, eq=False)
class Periodogram:
    grid: FrequencyGrid
    score: np.ndarray

    @property
    def best_index(self) -> int:
        return int(np.argmax(self.score))

    @property
    def best_f(self) -> float:
        return float(self.grid.values[self.best_index])


def _weighted_rss(band: BandData, freqs):
    """Weighted RSS of the floating-mean sinusoid fit at each frequency."""
    w = 1.0 / band.sigma ** 2
    y = band.y - np.sum(w * band.y) / np.sum(w)  # intercept absorbs the shift
    ph = 2 * np.pi * np.multiply.outer(freqs, band.t)
    X = np.stack([np.ones_like(ph), np.cos(ph), np.sin(ph)], axis=-1)
    Xw = X * w[None, :, None]
    A = np.einsum("gni,gnj->gij", Xw, X)
    b = Xw.transpose(0, 2, 1) @ y
    ev = np.linalg.eigvalsh(A)
    ok = ev[:, 0] > 1e-10 * ev[:, -1]
    rss = np.full(freqs.size, np.inf)
    if np.any(ok):
        coef = np.linalg.solve(A[ok], b[ok][..., None])[..., 0]
        rss[ok] = np.maximum(np.sum(w * y * y) - np.einsum("gi,gi->g", b[ok], coef), 0.0)
    return rss


def gls(band: BandData, grid: FrequencyGrid) -> Periodogram:
    if len(band) < 4:
        raise DomainError(f"GLS needs at least 4 observations, got {len(band)}")
    return Periodogram(grid, -_weighted_rss(band, grid.values))


def mgls(star: StarLightCurve, grid: FrequencyGrid) -> Periodogram:
    """Shared frequency, separate mean and sinusoid per band; bands with
    fewer than 4 points are skipped."""
    usable = [b for b in star.bands if len(b) >= 4]
    if not usable:
        raise DomainError(f"star {star.star_id!r} has no band with 4 or more observations")
    total = sum(_weighted_rss(b, grid.values) for b in usable)
    return Periodogram(grid, -total)


def sinusoid_fit(band: BandData, f: float):
    """Weighted least-squares ``(m, a_cos, a_sin)`` at frequency ``f``.

    Bands with fewer than 3 points get the weighted mean and zero amplitude.
    """
    w = 1.0 / band.sigma ** 2
    if len(band) < 3:
        if len(band) == 0:
            return np.full(3, np.nan)
        return np.array([np.sum(w * band.y) / np.sum(w), 0.0, 0.0])
    ph = 2 * np.pi * f * band.t
    X = np.column_stack([np.ones_like(ph), np.cos(ph), np.sin(ph)])
    sw = np.sqrt(w)
    coef, *_ = np.linalg.lstsq(X * sw[:, None], band.y * sw, rcond=None)
    return coef


def init_alpha_intercepts(subset: Dataset, grid: FrequencyGrid, slopes) -> np.ndarray:
    """Median over stars of ``m_hat - a2 log10 f_hat - a3 log10^2 f_hat`` per band.

    ``slopes`` has shape ``(B, 2)``. Bands without a usable star yield NaN.
    """
    if len(subset) == 0:
        raise DomainError("intercept initialization needs at least one star")
    slopes = np.asarray(slopes, dtype=float).reshape(subset.n_bands, 2)
    resid = [[] for _ in range(subset.n_bands)]
    for star in subset:
        try:
            f_hat = mgls(star, grid).best_f
        except DomainError:
            continue
        lf = np.log10(f_hat)
        for b, band in enumerate(star.bands):
            m = sinusoid_fit(band, f_hat)[0]
            if np.isfinite(m):
                resid[b].append(m - slopes[b, 0] * lf - slopes[b, 1] * lf * lf)
    return np.array([np.median(r) if r else np.nan for r in resid])


def estimate_periods(dataset: Dataset, grid: FrequencyGrid):
    """MGLS best frequency per star (NaN when no band is usable)."""
    out = np.full(len(dataset), np.nan)
    for i, star in enumerate(dataset):
        try:
            out[i] = mgls(star, grid).best_f
        except DomainError:
            pass
    return out


# ---------------------------------------------------------------------------
# kernel maximum likelihood

def _nll_and_grad(log_tau, curves):
    t1, t2, t3 = np.exp(log_tau)
    nll, grad = 0.0, np.zeros(3)
    for u, r, s in curves:
        du2 = (u[:, None] - u[None, :]) ** 2
        E = np.exp(-du2 / t2)
        M = (u[:, None] == u[None, :]).astype(float)
        S = t1 * E + t3 * M + np.diag(s ** 2)
        try:
            cf = linalg.cho_factor(S, lower=True)
        except linalg.LinAlgError:
            return np.inf, np.zeros(3)
        a = linalg.cho_solve(cf, r)
        Sinv = linalg.cho_solve(cf, np.eye(r.size))
        nll += 0.5 * (r @ a + 2 * np.sum(np.log(np.diag(cf[0]))) + r.size * np.log(2 * np.pi))
        W = Sinv - np.outer(a, a)
        for j, dS in enumerate((t1 * E, t1 * E * du2 / t2, t3 * M)):
            grad[j] += 0.5 * np.sum(W * dS)
    return nll, grad


def kernel_log_likelihood(k: KernelParams, curves) -> float:
    curves = _prepare_curves(curves)
    return -_nll_and_grad(k.log(), curves)[0]


def _prepare_curves(curves):
    out = []
    for u, r, s in curves:
        u, r, s = (np.asarray(a, dtype=float).reshape(-1) for a in (u, r, s))
        if u.size:
            out.append((u, r, s))
    return out


@dataclass(frozen=True)
class KernelFit:
    params: KernelParams
    log_likelihood: float
    start_log_likelihoods: tuple


def fit_kernel_mle(curves, n_starts: int = 6, seed: int = 0,
                   parsimony: float | None = None) -> KernelFit:
    """Maximize the pooled GP marginal likelihood of residual curves.

    ``curves`` is a list of ``(phases, residuals, sigmas)``. Optimization is
    over log-parameters with L-BFGS-B inside ``LOG_TAU_BOUNDS``.

    The correlated component is then tested against a nugget-only model
    (``tau1`` at its lower bound, its variance moved into ``tau3``). If the
    log-likelihood gain of the correlated model is below ``parsimony``
    nats (default: half the 95% chi-square quantile with 2 dof) the
    nugget-only fit is returned. Pure white noise otherwise tends to leak
    into a very short length-scale component.
    """
    if parsimony is None:
        parsimony = 0.5 * stats.chi2.ppf(0.95, 2)
    curves = _prepare_curves(curves)
    if not curves:
        raise DomainError("kernel fit needs at least one nonempty residual curve")
    pooled = np.concatenate([r for _, r, _ in curves])
    noise = np.concatenate([s for _, _, s in curves])
    v = max(np.var(pooled) - np.mean(noise ** 2), 1e-4)
    lo, hi = LOG_TAU_BOUNDS
    rng = np.random.default_rng(seed)
    starts = [np.log([v, 0.05, v]), np.log([0.5 * v, 0.01, 0.5 * v]),
              np.log([v, 0.5, 0.1 * v]), np.log([0.1 * v, 0.002, v])]
    while len(starts) < max(n_starts, 5):
        starts.append(rng.uniform([np.log(v) - 4, -7, np.log(v) - 4],
                                  [np.log(v) + 2, 1, np.log(v) + 2]))
    starts = [np.clip(s, lo, hi) for s in starts]
    start_ll, best = [], None
    for x0 in starts:
        f0 = _nll_and_grad(x0, curves)[0]
        start_ll.append(-f0)
        if not np.isfinite(f0):
            continue
        res = optimize.minimize(_nll_and_grad, x0, args=(curves,), jac=True,
                                method="L-BFGS-B", bounds=[(lo, hi)] * 3)
        x, fx = (res.x, res.fun) if res.fun <= f0 else (x0, f0)
        if best is None or fx < best[1]:
            best = (x, fx)
    if best is None:
        raise NumericalError("kernel likelihood is non-finite at every start")
    x, fx = best
    alt = _nugget_only(x, curves)
    fa = _nll_and_grad(alt, curves)[0]
    if fa <= fx + parsimony and -fa >= max(start_ll):
        x, fx = alt, fa
    return KernelFit(KernelParams.from_log(x), -fx, tuple(start_ll))


def _nugget_only(x, curves):
    lo, hi = LOG_TAU_BOUNDS
    x0 = np.array([lo, x[1], np.log(min(np.exp(x[0]) + np.exp(x[2]), np.exp(hi)))])
    res = optimize.minimize_scalar(lambda z: _nll_and_grad(np.array([lo, x[1], z]), curves)[0],
                                   bounds=(lo, hi), method="bounded")
    if res.fun < _nll_and_grad(x0, curves)[0]:
        x0[2] = res.x
    return x0


def residual_curves(dataset: Dataset, band: int, freqs):
    """Residuals of per-star sinusoid fits at ``freqs``, on the phase axis."""
    out = []
    for star, f in zip(dataset, freqs):
        bd = star.bands[band]
        if len(bd) < 4 or not np.isfinite(f):
            continue
        c = sinusoid_fit(bd, f)
        ph = 2 * np.pi * f * bd.t
        r = bd.y - c[0] - c[1] * np.cos(ph) - c[2] * np.sin(ph)
        out.append((f * bd.t, r, bd.sigma))
    return out
