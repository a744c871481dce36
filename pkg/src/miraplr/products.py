"""Point estimates, confidence sets, fitted curves and recovery metrics."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError
from .kernel import KernelParams, gp_posterior_mean
from .lightcurve import BandData, theta_layout
from .local import LocalPosterior

DEFAULT_LAMBDA = 2.7e-4


def map_index(lp: LocalPosterior) -> int:
    return int(np.argmax(lp.density))  # first index on ties


def map_frequency(lp: LocalPosterior) -> float:
    return float(lp.freqs[map_index(lp)])


def map_theta(lp: LocalPosterior):
    """Posterior mean and covariance of theta at the MAP frequency."""
    k = map_index(lp)
    g = lp.theta_at(k)
    return g.to_mean_cov()


def period_uncertainty(lp: LocalPosterior) -> float:
    w = lp.weights
    inv = 1.0 / lp.freqs
    m1 = w @ inv
    var = w @ (inv * inv) - m1 * m1
    return float(np.sqrt(max(var, 0.0)))


def confidence_set(lp: LocalPosterior, level: float):
    """Highest-density node set holding at least ``level`` of the mass.

    Returns a list of ``(lo, hi)`` intervals; each included node covers
    ``[f_k - df/2, f_k + df/2]`` and adjacent nodes are merged.
    """
    if not 0 < level < 1:
        raise DomainError("confidence level must lie in (0, 1)")
    included = confidence_mask(lp, level)
    return mask_to_intervals(included, lp.freqs, lp.grid.df)


def confidence_mask(lp: LocalPosterior, level: float) -> np.ndarray:
    w = lp.weights
    order = np.argsort(-lp.density, kind="stable")
    cum = np.cumsum(w[order])
    n_in = int(np.searchsorted(cum, level)) + 1
    mask = np.zeros(w.size, dtype=bool)
    mask[order[:min(n_in, w.size)]] = True
    return mask


def mask_to_intervals(mask, freqs, df):
    idx = np.flatnonzero(mask)
    if idx.size == 0:
        return []
    breaks = np.flatnonzero(np.diff(idx) > 1)
    starts = np.r_[idx[0], idx[breaks + 1]]
    ends = np.r_[idx[breaks], idx[-1]]
    return [(float(freqs[a] - df / 2), float(freqs[b] + df / 2)) for a, b in zip(starts, ends)]


def interval_mass(lp: LocalPosterior, intervals) -> float:
    f = lp.freqs
    inside = np.zeros(f.size, dtype=bool)
    for lo, hi in intervals:
        inside |= (f >= lo) & (f <= hi)
    return float(lp.weights[inside].sum())


def _check_lengths(a, b):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise DomainError(f"length mismatch: {a.shape} vs {b.shape}")
    return a, b


def recovery_rate(estimates, truths, lam: float = DEFAULT_LAMBDA) -> float:
    est, tru = _check_lengths(estimates, truths)
    return float(np.mean(np.abs(tru - est) <= lam))


def ade(estimates, truths) -> float:
    est, tru = _check_lengths(estimates, truths)
    return float(np.mean(np.abs(tru - est)))


def distance_to_set(f0, intervals) -> float:
    if not intervals:
        return np.inf
    return min(0.0 if lo <= f0 <= hi else min(abs(f0 - lo), abs(f0 - hi))
               for lo, hi in intervals)


def coverage(conf_sets, truths, lam_slack: float = DEFAULT_LAMBDA):
    """Return ``(coverage, near_miss)``; near-miss is the share of misses
    lying within ``lam_slack`` of some interval (inclusive)."""
    if len(conf_sets) != len(truths):
        raise DomainError("need one confidence set per truth")
    dist = np.array([distance_to_set(f0, cs) for cs, f0 in zip(conf_sets, truths)])
    hit = dist == 0.0
    misses = ~hit
    near = float(np.mean(dist[misses] <= lam_slack)) if misses.any() else 0.0
    return float(np.mean(hit)), near


def fit_signal_curve(band: BandData, f_hat: float, m_hat: float, beta_hat,
                     kernel: KernelParams | None, times):
    """MAP signal ``m + b(f t)^T beta + E[h | residuals]`` at ``times``."""
    times = np.asarray(times, dtype=float)
    beta_hat = np.asarray(beta_hat, dtype=float)

    def mean_curve(t):
        w = 2 * np.pi * f_hat * t
        return m_hat + beta_hat[0] * np.cos(w) + beta_hat[1] * np.sin(w)

    s = mean_curve(times)
    if kernel is not None and len(band):
        resid = band.y - mean_curve(band.t)
        s = s + gp_posterior_mean(band.t, resid, band.sigma, f_hat, kernel, times)
    return s


@dataclass
class StarEstimate:
    star_id: str
    f_hat: float
    sigma_p: float
    m_hat: np.ndarray
    beta_hat: np.ndarray
    conf_sets: dict = field(default_factory=dict)

    @property
    def p_hat(self):
        return 1.0 / self.f_hat


def star_estimate(lp: LocalPosterior, levels=(0.9, 0.95, 0.99)) -> StarEstimate:
    mean, _ = map_theta(lp)
    B = mean.size // 3
    lay = theta_layout(B)
    return StarEstimate(lp.star_id, map_frequency(lp), period_uncertainty(lp),
                        mean[lay.K], mean[lay.L].reshape(B, 2),
                        {lv: confidence_set(lp, lv) for lv in levels})


def format_intervals(intervals) -> str:
    return ";".join(f"{float(lo)!r}:{float(hi)!r}" for lo, hi in intervals)


def parse_intervals(text: str):
    if not text:
        return []
    return [tuple(float(x) for x in part.split(":")) for part in text.split(";")]


def write_summary(path, estimates, band_names, header: str | None = None):
    levels = sorted({lv for e in estimates for lv in e.conf_sets})
    with open(path, "w", newline="") as fh:
        if header:
            fh.write(f"# {header}\n")
        w = csv.writer(fh)
        w.writerow(["star_id", "f_hat", "p_hat", "sigma_p"]
                   + [f"m_hat_{b}" for b in band_names]
                   + [f"conf_{lv:g}" for lv in levels])
        for e in estimates:
            w.writerow([e.star_id] + [repr(float(x)) for x in (e.f_hat, e.p_hat, e.sigma_p)]
                       + [repr(float(m)) for m in e.m_hat]
                       + [format_intervals(e.conf_sets.get(lv, [])) for lv in levels])


def read_summary(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(ln for ln in fh if not ln.startswith("#")))
    return rows


def write_density(path, lp: LocalPosterior, header: str | None = None):
    with open(path, "w") as fh:
        if header:
            fh.write(f"# {header}\n")
        fh.write("f,q\n")
        for f, q in zip(lp.freqs, lp.density):
            fh.write(f"{float(f)!r},{float(q)!r}\n")
