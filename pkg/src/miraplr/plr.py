"""Period-luminosity fits, flux-averaged magnitudes and distance moduli.

The fitter's PLR is a quadratic in ``log10 f``; conventional relations use
``x = log10 P - 2.3``. Since ``log10 f = -(x + 2.3)`` the two coefficient
sets are related linearly by :func:`alpha_to_a` and :func:`a_to_alpha`.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError

PIVOT = 2.3


def alpha_to_a(alpha):
    a1_, a2_, a3_ = np.asarray(alpha, dtype=float)
    return np.array([a1_ - PIVOT * a2_ + PIVOT ** 2 * a3_,
                     2 * PIVOT * a3_ - a2_,
                     a3_])


def a_to_alpha(a):
    a0, a1, a2 = np.asarray(a, dtype=float)
    return np.array([a0 - PIVOT * a1 + PIVOT ** 2 * a2,
                     2 * PIVOT * a2 - a1,
                     a2])


def plr_eval_a(a, periods):
    x = np.log10(np.asarray(periods, dtype=float)) - PIVOT
    return a[0] + a[1] * x + a[2] * x * x


@dataclass(frozen=True, eq=False)
class PLRFit:
    a0: float
    a1: float
    a2: float
    sigma: float
    stderr: np.ndarray
    n_used: int
    residuals: np.ndarray

    @property
    def coef(self):
        return np.array([self.a0, self.a1, self.a2])

    def to_dict(self):
        return {"a0": self.a0, "a1": self.a1, "a2": self.a2, "sigma": self.sigma,
                "se_a0": float(self.stderr[0]), "se_a1": float(self.stderr[1]),
                "se_a2": float(self.stderr[2]), "n_used": self.n_used}


def _lsq(X, m, w):
    n, p = X.shape
    if n < p:
        raise DomainError(f"need at least {p} points, got {n}")
    sw = np.sqrt(w)
    Xw = X * sw[:, None]
    if np.linalg.matrix_rank(Xw) < p:
        raise DomainError("design matrix is rank deficient")
    coef, *_ = np.linalg.lstsq(Xw, m * sw, rcond=None)
    resid = m - X @ coef
    dof = n - p
    s2 = np.sum(w * resid ** 2) / dof if dof > 0 else 0.0
    cov = s2 * np.linalg.inv(Xw.T @ Xw)
    return coef, resid, np.sqrt(s2), np.sqrt(np.diag(cov))


def fit_quadratic_plr(periods, mags, weights=None) -> PLRFit:
    """Least squares of magnitude on ``(1, x, x^2)``; sigma uses n - 3 dof."""
    P = np.asarray(periods, dtype=float)
    m = np.asarray(mags, dtype=float)
    ok = np.isfinite(P) & np.isfinite(m) & (P > 0)
    w = np.ones_like(m) if weights is None else np.asarray(weights, dtype=float)
    x = np.log10(P[ok]) - PIVOT
    X = np.column_stack([np.ones_like(x), x, x * x])
    coef, resid, sigma, se = _lsq(X, m[ok], w[ok])
    return PLRFit(*map(float, coef), float(sigma), se, int(ok.sum()), resid)


def fit_linear_plr(periods, mags, period_cut: float = 400.0) -> PLRFit:
    """Straight-line PLR using only stars with ``P < period_cut``."""
    P = np.asarray(periods, dtype=float)
    m = np.asarray(mags, dtype=float)
    ok = np.isfinite(P) & np.isfinite(m) & (P > 0) & (P < period_cut)
    if ok.sum() < 2:
        raise DomainError(f"fewer than 2 stars with period below {period_cut}")
    x = np.log10(P[ok]) - PIVOT
    X = np.column_stack([np.ones_like(x), x])
    coef, resid, sigma, se = _lsq(X, m[ok], np.ones(ok.sum()))
    return PLRFit(float(coef[0]), float(coef[1]), 0.0, float(sigma),
                  np.r_[se, 0.0], int(ok.sum()), resid)


def fit_intercept(periods, mags, a1, a2) -> PLRFit:
    """Intercept-only fit with slope and curvature held fixed."""
    P = np.asarray(periods, dtype=float)
    m = np.asarray(mags, dtype=float)
    ok = np.isfinite(P) & np.isfinite(m) & (P > 0)
    if not ok.any():
        raise DomainError("no usable stars")
    x = np.log10(P[ok]) - PIVOT
    r = m[ok] - a1 * x - a2 * x * x
    a0 = float(np.mean(r))
    n = r.size
    sigma = float(np.std(r, ddof=1)) if n > 1 else 0.0
    return PLRFit(a0, float(a1), float(a2), sigma,
                  np.array([sigma / np.sqrt(n), 0.0, 0.0]), n, r - a0)


def flux_mean_magnitude(signal) -> float:
    """``-2.5 log10 mean(10^(-0.4 s))`` over dense samples of a signal."""
    s = np.asarray(signal, dtype=float)
    return float(-2.5 * np.log10(np.mean(10.0 ** (-0.4 * s))))


def flux_average_correction(signal, m_hat) -> float:
    """``m' - m_hat``; never positive for a signal whose mean is ``m_hat``."""
    return flux_mean_magnitude(signal) - float(m_hat)


def one_period_times(t0, f_hat, n_points: int = 1024):
    return t0 + np.arange(n_points) / (n_points * f_hat)


@dataclass(frozen=True)
class Term:
    value: float
    err: float = 0.0


@dataclass(frozen=True)
class DistanceLedger:
    delta_a0: Term
    delta_mbar: Term
    delta_Alambda: Term
    delta_ct: Term
    delta_mu: Term
    mu_anchor: Term
    mu_target: Term

    def to_dict(self):
        return {k: {"value": v.value, "err": v.err} for k, v in self.__dict__.items()}


def _term(x):
    if isinstance(x, Term):
        return x
    if np.ndim(x) == 0:
        return Term(float(x))
    v, e = x
    return Term(float(v), float(e))


def distance_modulus(delta_a0, delta_mbar=0.0, delta_Alambda=0.0, delta_ct=0.0,
                     mu_anchor=(18.493, 0.048)) -> DistanceLedger:
    """Relative and absolute distance modulus; each input is a value or a
    ``(value, err)`` pair and errors add in quadrature."""
    parts = [_term(x) for x in (delta_a0, delta_mbar, delta_Alambda, delta_ct)]
    anchor = _term(mu_anchor)
    dmu = Term(sum(p.value for p in parts), float(np.sqrt(sum(p.err ** 2 for p in parts))))
    target = Term(anchor.value + dmu.value, float(np.hypot(anchor.err, dmu.err)))
    return DistanceLedger(*parts, dmu, anchor, target)
