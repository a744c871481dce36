"""Per-star update: Gaussian q(theta | f) on every grid node and free-form q(f)."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalError
from .expfam import GaussianCanonical
from .kernel import GridProducts, grid_products
from .lightcurve import FrequencyGrid, StarLightCurve, ThetaLayout, theta_layout

LOG2 = np.log(2.0)


def plr_basis(f):
    """``d(f) = (1, log10 f, log10^2 f)``; shape ``(..., 3)``."""
    lf = np.log10(np.asarray(f, dtype=float))
    return np.stack([np.ones_like(lf), lf, lf * lf], axis=-1)


@dataclass(frozen=True, eq=False)
class ExpectedGlobals:
    """Expectations of the global factors consumed by the local step.

    ``E_log_gamma`` and ``E_logdet_Omega`` are only needed by the ELBO and
    may be left as ``None``.
    """

    E_alpha: np.ndarray        # (B, 3)
    E_alpha_outer: np.ndarray  # (B, 3, 3)
    E_gamma: np.ndarray        # (B,)
    E_Omega: np.ndarray        # (2B, 2B)
    E_log_gamma: np.ndarray | None = None
    E_logdet_Omega: float | None = None

    @property
    def B(self):
        return self.E_gamma.shape[0]

    @classmethod
    def point_mass(cls, alpha, gamma, Omega):
        """Globals with zero variance: E[a a^T] = a a^T, E log g = log g."""
        alpha = np.atleast_2d(np.asarray(alpha, dtype=float))
        gamma = np.atleast_1d(np.asarray(gamma, dtype=float))
        Omega = np.atleast_2d(np.asarray(Omega, dtype=float))
        return cls(alpha, np.einsum("bi,bj->bij", alpha, alpha), gamma, Omega,
                   np.log(gamma), float(np.linalg.slogdet(Omega)[1]))

    def theta_precision(self, layout: ThetaLayout | None = None) -> np.ndarray:
        """``E[Theta]``: diag(E gamma) on K x K, E Omega on L x L."""
        layout = layout or theta_layout(self.B)
        T = np.zeros((layout.dim, layout.dim))
        T[layout.K, layout.K] = self.E_gamma
        T[np.ix_(layout.L, layout.L)] = self.E_Omega
        return T


def prior_theta(f, eg: ExpectedGlobals, layout: ThetaLayout | None = None):
    """Prior mean ``theta0(f)`` and ``E[Theta]``; ``f`` may be an array."""
    layout = layout or theta_layout(eg.B)
    d = plr_basis(f)
    theta0 = np.zeros(np.shape(f) + (layout.dim,))
    theta0[..., layout.K] = d @ eg.E_alpha.T
    return theta0, eg.theta_precision(layout)


def _band_products(star, freqs, kernels, where=""):
    if kernels is None:
        kernels = [None] * star.n_bands
    return [grid_products(b, freqs, k, where=f"{where} band {j}")
            for j, (b, k) in enumerate(zip(star.bands, kernels))]


@dataclass(frozen=True, eq=False)
class NodeGaussians:
    """Canonical and moment parameters of q(theta | f_k) for every node k."""

    eta1: np.ndarray  # (G, D, D)
    eta2: np.ndarray  # (G, D)
    mean: np.ndarray  # (G, D)
    cov: np.ndarray   # (G, D, D)
    logdet_prec: np.ndarray  # (G,) log|-2 eta1|

    def at(self, k) -> GaussianCanonical:
        return GaussianCanonical(self.eta1[k], self.eta2[k])

    def second_moment(self):
        return self.cov + np.einsum("gi,gj->gij", self.mean, self.mean)


def _node_gaussians(prods: list[GridProducts], freqs, eg, layout, where=""):
    G, D = len(freqs), layout.dim
    theta0, ETheta = prior_theta(freqs, eg, layout)
    P = np.broadcast_to(ETheta, (G, D, D)).copy()
    eta2 = theta0 @ ETheta  # ETheta is symmetric
    for b, pr in enumerate(prods):
        sl = slice(3 * b, 3 * b + 3)
        P[:, sl, sl] += pr.ctc
        eta2[:, sl] += pr.cty
    try:
        L = np.linalg.cholesky(P)
    except np.linalg.LinAlgError:
        raise NumericalError(f"posterior precision not positive definite{where}") from None
    Linv = np.linalg.solve(L, np.broadcast_to(np.eye(D), (G, D, D)))
    cov = np.swapaxes(Linv, 1, 2) @ Linv
    cov = 0.5 * (cov + np.swapaxes(cov, 1, 2))
    mean = np.einsum("gij,gj->gi", cov, eta2)
    logdet_prec = 2.0 * np.sum(np.log(np.diagonal(L, axis1=1, axis2=2)), axis=1)
    return NodeGaussians(-0.5 * P, eta2, mean, cov, logdet_prec)


def _log_q_tilde(nodes, prods, freqs, eg, layout):
    d = plr_basis(freqs)
    quad = -np.einsum("gi,gi->g", nodes.eta2, nodes.mean)  # 1/2 eta2^T eta1^-1 eta2
    prior2 = np.einsum("b,gi,bij,gj->g", eg.E_gamma, d, eg.E_alpha_outer, d)
    data = sum(pr.yty + pr.logdet for pr in prods)
    g = quad + prior2 + data
    logdet_neg_eta1 = nodes.logdet_prec - layout.dim * LOG2
    return -0.5 * g - 0.5 * logdet_neg_eta1


def local_theta_canonical(star: StarLightCurve, f: float, eg: ExpectedGlobals,
                          kernels, layout: ThetaLayout | None = None) -> GaussianCanonical:
    layout = layout or theta_layout(star.n_bands)
    freqs = np.array([f], dtype=float)
    nodes = _node_gaussians(_band_products(star, freqs, kernels), freqs, eg, layout)
    return nodes.at(0)


def local_log_g(star: StarLightCurve, f, eg: ExpectedGlobals, kernels,
                layout: ThetaLayout | None = None):
    """Unnormalized ``log q~(f)``; scalar in, scalar out."""
    layout = layout or theta_layout(star.n_bands)
    freqs = np.atleast_1d(np.asarray(f, dtype=float))
    prods = _band_products(star, freqs, kernels)
    nodes = _node_gaussians(prods, freqs, eg, layout)
    out = _log_q_tilde(nodes, prods, freqs, eg, layout)
    return float(out[0]) if np.ndim(f) == 0 else out


@dataclass(eq=False)
class LocalPosterior:
    grid: FrequencyGrid
    density: np.ndarray
    log_g: np.ndarray
    nodes: NodeGaussians | None = field(default=None, repr=False)
    star_id: str = ""

    @property
    def freqs(self):
        return self.grid.values

    @property
    def weights(self):
        """Probability mass per node, ``q_k * df``."""
        return self.density * self.grid.df

    def theta_at(self, k) -> GaussianCanonical:
        if self.nodes is None:
            raise ValueError("per-node Gaussians were not retained")
        return self.nodes.at(k)

    def compact(self) -> "LocalPosterior":
        """Copy keeping only the MAP node's Gaussian."""
        if self.nodes is None:
            return self
        k = int(np.argmax(self.density))
        n = self.nodes
        keep = NodeGaussians(n.eta1[k:k + 1], n.eta2[k:k + 1], n.mean[k:k + 1],
                             n.cov[k:k + 1], n.logdet_prec[k:k + 1])
        return CompactPosterior(self.grid, self.density, self.log_g, keep,
                                self.star_id, map_index=k)


@dataclass(eq=False)
class CompactPosterior(LocalPosterior):
    map_index: int = 0

    def theta_at(self, k) -> GaussianCanonical:
        if k != self.map_index:
            raise ValueError("only the MAP node's Gaussian was retained")
        return self.nodes.at(0)

    def compact(self):
        return self


def normalize_log_density(log_q, df):
    log_q = np.asarray(log_q, dtype=float)
    if not np.any(np.isfinite(log_q)):
        raise NumericalError("log density is non-finite at every grid node")
    q = np.exp(log_q - np.nanmax(np.where(np.isfinite(log_q), log_q, -np.inf)))
    q = np.where(np.isfinite(q), q, 0.0)
    total = q.sum() * df
    if not (total > 0 and np.isfinite(total)):
        raise NumericalError("density cannot be normalized")
    return q / total


def star_products(star: StarLightCurve, kernels, grid: FrequencyGrid) -> list[GridProducts]:
    """Per-band Gram products on ``grid``; they do not depend on the globals."""
    return _band_products(star, grid.values, kernels, f" for star {star.star_id!r}")


def update_local(star: StarLightCurve, eg: ExpectedGlobals, kernels,
                 grid: FrequencyGrid, layout: ThetaLayout | None = None,
                 keep_nodes: bool = True, products=None) -> LocalPosterior:
    """``products`` may carry the output of :func:`star_products` for reuse."""
    layout = layout or theta_layout(star.n_bands)
    freqs = grid.values
    where = f" for star {star.star_id!r}"
    prods = products if products is not None else star_products(star, kernels, grid)
    nodes = _node_gaussians(prods, freqs, eg, layout, where)
    log_g = _log_q_tilde(nodes, prods, freqs, eg, layout)
    try:
        density = normalize_log_density(log_g, grid.df)
    except NumericalError as exc:
        raise NumericalError(f"{exc}{where}") from None
    return LocalPosterior(grid, density, log_g, nodes if keep_nodes else None,
                          star.star_id)


def sample_frequency(lp: LocalPosterior, rng: np.random.Generator):
    """Draw a node index and its frequency with probability ``q_k df``."""
    k = sample_node(lp, rng)
    return lp.freqs[k]


def sample_node(lp: LocalPosterior, rng: np.random.Generator) -> int:
    w = lp.weights
    return int(rng.choice(w.size, p=w / w.sum()))
