"""Canonical-parameter Gaussian, Gamma and Wishart factors.

Each family is stored in its natural parameterization because the
variational updates are linear there. Moments, entropies and the
expectations needed by the ELBO are derived on demand.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg, special, stats

from .errors import DomainError, NumericalError

LOG_2PI = np.log(2 * np.pi)


def _sym(a):
    return 0.5 * (a + np.swapaxes(a, -1, -2))


def precision_cholesky(eta1):
    """Cholesky factor of ``-2 * eta1``; raises NumericalError if not PD."""
    try:
        return linalg.cho_factor(-2.0 * np.asarray(eta1, dtype=float), lower=True)
    except (linalg.LinAlgError, ValueError) as exc:
        raise NumericalError(f"eta1 is not negative definite: {exc}") from None


def logdet_from_cho(cf):
    return 2.0 * np.sum(np.log(np.diag(cf[0])))


@dataclass(frozen=True, eq=False)
class GaussianCanonical:
    eta1: np.ndarray
    eta2: np.ndarray

    def __post_init__(self):
        e1 = np.atleast_2d(np.asarray(self.eta1, dtype=float))
        e2 = np.atleast_1d(np.asarray(self.eta2, dtype=float))
        if e1.shape != (e2.size, e2.size):
            raise DomainError(f"eta1 shape {e1.shape} does not match eta2 size {e2.size}")
        object.__setattr__(self, "eta1", _sym(e1))
        object.__setattr__(self, "eta2", e2)

    @property
    def dim(self):
        return self.eta2.size

    @classmethod
    def from_mean_precision(cls, mean, precision):
        precision = np.atleast_2d(np.asarray(precision, dtype=float))
        return cls(-0.5 * precision, precision @ np.atleast_1d(mean))

    @classmethod
    def from_mean_cov(cls, mean, cov):
        cov = np.atleast_2d(np.asarray(cov, dtype=float))
        return cls.from_mean_precision(mean, linalg.inv(cov))

    def to_mean_cov(self):
        cf = precision_cholesky(self.eta1)
        mean = linalg.cho_solve(cf, self.eta2)
        cov = _sym(linalg.cho_solve(cf, np.eye(self.dim)))
        return mean, cov


def gaussian_moments(g: GaussianCanonical):
    """Return ``(mean, cov, second_moment)``."""
    mean, cov = g.to_mean_cov()
    return mean, cov, _sym(cov + np.outer(mean, mean))


def gaussian_entropy(g: GaussianCanonical) -> float:
    # -1/2 logdet(-eta1/(pi e)) = 1/2 [d log(2 pi e) - logdet(-2 eta1)]
    cf = precision_cholesky(g.eta1)
    return 0.5 * (g.dim * (LOG_2PI + 1.0) - logdet_from_cho(cf))


def gaussian_kl(q: GaussianCanonical, p: GaussianCanonical) -> float:
    """KL(q || p)."""
    mq, Sq = q.to_mean_cov()
    cfp = precision_cholesky(p.eta1)
    mp = linalg.cho_solve(cfp, p.eta2)
    Pp = -2.0 * p.eta1
    diff = mq - mp
    return 0.5 * (np.sum(Pp * Sq) + diff @ Pp @ diff - q.dim
                  - logdet_from_cho(cfp) - np.linalg.slogdet(Sq)[1])


@dataclass(frozen=True)
class GammaCanonical:
    """Gamma(shape, rate) as ``(eta1, eta2) = (-rate, shape - 1)``."""

    eta1: float
    eta2: float

    @classmethod
    def from_shape_rate(cls, shape, rate):
        return cls(-float(rate), float(shape) - 1.0)

    @property
    def shape(self):
        return self.eta2 + 1.0

    @property
    def rate(self):
        return -self.eta1

    def validate(self):
        if not (self.eta1 < 0 and self.eta2 > -1):
            raise DomainError(f"invalid Gamma canonical parameters {self}")
        return self


def gamma_mean(g: GammaCanonical) -> float:
    g.validate()
    return -(g.eta2 + 1.0) / g.eta1


def gamma_mean_log(g: GammaCanonical) -> float:
    g.validate()
    return special.digamma(g.shape) - np.log(g.rate)


def gamma_entropy(g: GammaCanonical) -> float:
    g.validate()
    return float(stats.gamma(g.shape, scale=1.0 / g.rate).entropy())


def gamma_kl(q: GammaCanonical, p: GammaCanonical) -> float:
    a, b = q.validate().shape, q.rate
    a0, b0 = p.validate().shape, p.rate
    return ((a - a0) * special.digamma(a) - special.gammaln(a) + special.gammaln(a0)
            + a0 * (np.log(b) - np.log(b0)) + a * (b0 - b) / b)


@dataclass(frozen=True, eq=False)
class WishartCanonical:
    """Wishart(V, n) as ``(-V^{-1}/2, (n - p - 1)/2)``."""

    eta1: np.ndarray
    eta2: float

    def __post_init__(self):
        object.__setattr__(self, "eta1", _sym(np.atleast_2d(np.asarray(self.eta1, dtype=float))))
        object.__setattr__(self, "eta2", float(self.eta2))

    @property
    def p(self):
        return self.eta1.shape[0]

    @classmethod
    def from_scale_df(cls, V, n):
        V = np.atleast_2d(np.asarray(V, dtype=float))
        p = V.shape[0]
        return cls(-0.5 * linalg.inv(V), 0.5 * (n - p - 1))

    @property
    def df(self):
        return 2.0 * self.eta2 + self.p + 1.0

    def scale(self):
        cf = precision_cholesky(self.eta1)
        return _sym(linalg.cho_solve(cf, np.eye(self.p)))


def wishart_mean(w: WishartCanonical, p: int | None = None) -> np.ndarray:
    p = w.p if p is None else p
    n = 2.0 * w.eta2 + p + 1.0
    if n <= 0:
        raise DomainError(f"implied Wishart degrees of freedom {n} are not positive")
    return n * w.scale()


def wishart_mean_logdet(w: WishartCanonical) -> float:
    """E log|X| = psi_p(n/2) + p log 2 + log|V|."""
    p, n = w.p, w.df
    if n <= p - 1:
        raise DomainError("Wishart degrees of freedom must exceed p - 1")
    cf = precision_cholesky(w.eta1)
    psi = np.sum(special.digamma(0.5 * (n - np.arange(p))))
    return psi + p * np.log(2.0) - logdet_from_cho(cf)


def wishart_entropy(w: WishartCanonical) -> float:
    if w.df <= w.p - 1:
        raise DomainError("Wishart degrees of freedom must exceed p - 1")
    return float(stats.wishart(df=w.df, scale=w.scale()).entropy())
