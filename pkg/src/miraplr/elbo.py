"""Full-batch evidence lower bound evaluated on the frequency grid."""
from __future__ import annotations

import numpy as np
from scipy import linalg, special
from scipy.special import xlogy

from .errors import DomainError
from .expfam import (GammaCanonical, GaussianCanonical, gamma_kl, gaussian_kl,
                     wishart_entropy)
from .lightcurve import theta_layout
from .local import LOG2, ExpectedGlobals, _band_products, plr_basis, prior_theta
from .svi import expected_globals

LOG_2PI = np.log(2 * np.pi)


def star_elbo(star, lp, eg: ExpectedGlobals, kernels, layout=None) -> float:
    """Contribution of one star: expected log joint of its data, theta and f
    under q(theta, f), plus the entropy of q(theta, f)."""
    if lp.nodes is None:
        raise DomainError("star_elbo needs every node's Gaussian")
    layout = layout or theta_layout(star.n_bands)
    freqs = lp.freqs
    D = layout.dim
    nodes = lp.nodes
    mean, cov = nodes.mean, nodes.cov
    M2 = cov + np.einsum("gi,gj->gij", mean, mean)

    prods = _band_products(star, freqs, kernels)
    t1 = np.zeros(freqs.size)
    for b, pr in enumerate(prods):
        sl = slice(3 * b, 3 * b + 3)
        quad = (pr.yty - 2 * np.einsum("gi,gi->g", pr.cty, mean[:, sl])
                + np.einsum("gij,gij->g", pr.ctc, M2[:, sl, sl]))
        t1 += -0.5 * quad - 0.5 * pr.logdet - 0.5 * pr.n * LOG_2PI

    theta0, ET = prior_theta(freqs, eg, layout)
    d = plr_basis(freqs)
    e_th0 = np.einsum("b,gi,bij,gj->g", eg.E_gamma, d, eg.E_alpha_outer, d)
    quad = (np.einsum("ij,gij->g", ET, M2) - 2 * np.einsum("gi,ij,gj->g", mean, ET, theta0)
            + e_th0)
    e_logdet = np.sum(eg.E_log_gamma) + eg.E_logdet_Omega
    t2 = -0.5 * quad + 0.5 * e_logdet - 0.5 * D * LOG_2PI

    t3 = -np.log(lp.grid.f_max - lp.grid.f_min)
    ent = 0.5 * (D * (LOG_2PI + 1.0) - nodes.logdet_prec)

    w = lp.weights
    return float(w @ (t1 + t2 + t3 + ent) - np.sum(xlogy(w, lp.density)))


def wishart_log_normalizer(V, n):
    """log of the Wishart(V, n) normalizing constant (the part without X)."""
    p = V.shape[0]
    return -(0.5 * n * p * LOG2 + 0.5 * n * np.linalg.slogdet(V)[1]
             + special.multigammaln(0.5 * n, p))


def global_elbo(gs, hp, eg: ExpectedGlobals | None = None) -> float:
    """Prior-minus-entropy terms of the global factors.

    For an improper Wishart prior (``n_bar <= p - 1``) the X-independent
    normalizer is dropped; it is constant across iterations.
    """
    eg = eg or expected_globals(gs)
    B = hp.B
    total = 0.0
    for b in range(B):
        prior_a = GaussianCanonical.from_mean_precision(hp.alpha_bar[b], hp.delta_bar * np.eye(3))
        total -= gaussian_kl(gs.alpha[b], prior_a)
        prior_g = GammaCanonical.from_shape_rate(hp.gamma_bar[b] * hp.r_bar, hp.r_bar)
        total -= gamma_kl(gs.gamma[b], prior_g)
    p = 2 * B
    prec = hp.n_bar * linalg.inv(hp.Omega_bar)
    total += 0.5 * (hp.n_bar - p - 1) * eg.E_logdet_Omega - 0.5 * np.sum(prec * eg.E_Omega)
    if hp.n_bar > p - 1:
        total += wishart_log_normalizer(hp.Omega_bar / hp.n_bar, hp.n_bar)
    total += wishart_entropy(gs.omega)
    return float(total)


def elbo_estimate(dataset, gs, locals_, hp, kernels) -> float:
    eg = expected_globals(gs)
    layout = theta_layout(dataset.n_bands)
    data = sum(star_elbo(s, lp, eg, kernels, layout) for s, lp in zip(dataset, locals_))
    return data + global_elbo(gs, hp, eg)
