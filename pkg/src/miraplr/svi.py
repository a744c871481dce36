"""Global variational factors and the stochastic natural-gradient driver.

Every global update has the form ``eta <- eta + kappa * (xi_hat - eta)``
where ``xi_hat`` is the coordinate-ascent target built from sufficient
statistics of the local factors. The statistics are linear in the local
posteriors, so the same code serves the stochastic estimate (one sampled
node per minibatch star, scaled by ``N/I``) and the exact full-batch
expectation (all nodes weighted by ``q(f)``).
"""
from __future__ import annotations

import hashlib
import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import linalg

from . import __version__
from .errors import DomainError, MiraError, NumericalError
from .expfam import (GammaCanonical, GaussianCanonical, WishartCanonical,
                     gamma_mean, gamma_mean_log, gaussian_moments,
                     wishart_mean, wishart_mean_logdet)
from .lightcurve import Dataset, FrequencyGrid, ThetaLayout, theta_layout
from .local import (ExpectedGlobals, LocalPosterior, plr_basis, sample_node,
                    star_products, update_local)

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class HyperParams:
    alpha_bar: np.ndarray   # (B, 3)
    gamma_bar: np.ndarray   # (B,)
    Omega_bar: np.ndarray   # (2B, 2B)
    delta_bar: float = 1.0
    r_bar: float = 1.0
    n_bar: float = 1.0

    def __post_init__(self):
        a = np.atleast_2d(np.asarray(self.alpha_bar, dtype=float))
        g = np.atleast_1d(np.asarray(self.gamma_bar, dtype=float))
        O = np.atleast_2d(np.asarray(self.Omega_bar, dtype=float))
        B = a.shape[0]
        if a.shape != (B, 3) or g.shape != (B,) or O.shape != (2 * B, 2 * B):
            raise DomainError("hyperparameter shapes disagree on the band count")
        if np.any(g <= 0) or self.delta_bar <= 0 or self.r_bar <= 0:
            raise DomainError("gamma_bar, delta_bar and r_bar must be positive")
        try:
            linalg.cholesky(O)
        except linalg.LinAlgError:
            raise DomainError("Omega_bar must be symmetric positive definite") from None
        object.__setattr__(self, "alpha_bar", a)
        object.__setattr__(self, "gamma_bar", g)
        object.__setattr__(self, "Omega_bar", 0.5 * (O + O.T))

    @property
    def B(self):
        return self.alpha_bar.shape[0]

    @classmethod
    def default(cls, alpha_bar, gamma_bar=25.0, omega_scale=4.0, **kw):
        alpha_bar = np.atleast_2d(np.asarray(alpha_bar, dtype=float))
        B = alpha_bar.shape[0]
        return cls(alpha_bar, np.broadcast_to(np.asarray(gamma_bar, dtype=float), (B,)).copy(),
                   omega_scale * np.eye(2 * B), **kw)

    def to_dict(self):
        return {"alpha_bar": self.alpha_bar.tolist(), "gamma_bar": self.gamma_bar.tolist(),
                "Omega_bar": self.Omega_bar.tolist(), "delta_bar": self.delta_bar,
                "r_bar": self.r_bar, "n_bar": self.n_bar}

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass(frozen=True)
class FitConfig:
    c1: float = 1500.0
    c2: float = 0.75
    batch_size: int = 8
    iterations: int = 1000
    seed: int = 0
    grid: FrequencyGrid = field(default_factory=FrequencyGrid)

    def __post_init__(self):
        if not self.c1 > 0:
            raise DomainError("c1 must be positive")
        if not 0.5 < self.c2 <= 1:
            raise DomainError("c2 must lie in (0.5, 1]")
        if self.batch_size < 1 or self.iterations < 0:
            raise DomainError("batch_size must be >= 1 and iterations >= 0")


@dataclass(frozen=True)
class GlobalState:
    alpha: tuple   # GaussianCanonical per band
    gamma: tuple   # GammaCanonical per band
    omega: WishartCanonical

    @property
    def B(self):
        return len(self.alpha)

    def to_dict(self):
        return {"alpha": [{"eta1": a.eta1.tolist(), "eta2": a.eta2.tolist()} for a in self.alpha],
                "gamma": [[g.eta1, g.eta2] for g in self.gamma],
                "omega": {"eta1": self.omega.eta1.tolist(), "eta2": self.omega.eta2}}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(GaussianCanonical(a["eta1"], a["eta2"]) for a in d["alpha"]),
                   tuple(GammaCanonical(float(a), float(b)) for a, b in d["gamma"]),
                   WishartCanonical(d["omega"]["eta1"], d["omega"]["eta2"]))

    def alpha_means(self):
        return np.array([gaussian_moments(a)[0] for a in self.alpha])


def step_size(t, c1, c2):
    if t < 1:
        raise DomainError("iteration index starts at 1")
    return (c1 + t) ** (-c2)


def init_global_state(hp: HyperParams, N: int) -> GlobalState:
    """Each factor starts at its prior, with the fixed second parameters of
    q(Omega) and q(gamma) already at their update values."""
    B = hp.B
    alpha = tuple(GaussianCanonical.from_mean_precision(hp.alpha_bar[b], hp.delta_bar * np.eye(3))
                  for b in range(B))
    gamma = tuple(GammaCanonical(-hp.r_bar, hp.gamma_bar[b] * hp.r_bar - 1.0) for b in range(B))
    omega = WishartCanonical(-0.5 * hp.n_bar * linalg.inv(hp.Omega_bar),
                             omega_eta2(N, hp))
    return GlobalState(alpha, gamma, omega)


def omega_eta2(N, hp):
    return 0.5 * (N + hp.n_bar - 2 * hp.B - 1)


def gamma_eta2(N, hp, b):
    return 0.5 * N + hp.gamma_bar[b] * hp.r_bar - 1.0


def expected_globals(gs: GlobalState, with_logs: bool = True) -> ExpectedGlobals:
    moments = [gaussian_moments(a) for a in gs.alpha]
    Ea = np.array([m[0] for m in moments])
    Eaa = np.array([m[2] for m in moments])
    Eg = np.array([gamma_mean(g) for g in gs.gamma])
    EO = wishart_mean(gs.omega)
    if not with_logs:
        return ExpectedGlobals(Ea, Eaa, Eg, EO)
    Elg = np.array([gamma_mean_log(g) for g in gs.gamma])
    return ExpectedGlobals(Ea, Eaa, Eg, EO, Elg, wishart_mean_logdet(gs.omega))


# ---------------------------------------------------------------------------
# sufficient statistics

@dataclass(frozen=True, eq=False)
class SuffStats:
    """Sums over stars of the local expectations the global targets need.

    bb: E[beta beta^T] (2B, 2B); mm: E[m_b^2] (B,); md: E[m_b] d(f) (B, 3);
    dd: d(f) d(f)^T (3, 3).
    """

    bb: np.ndarray
    mm: np.ndarray
    md: np.ndarray
    dd: np.ndarray

    def __add__(self, other):
        return SuffStats(self.bb + other.bb, self.mm + other.mm,
                         self.md + other.md, self.dd + other.dd)

    def scaled(self, c):
        return SuffStats(c * self.bb, c * self.mm, c * self.md, c * self.dd)

    @classmethod
    def zeros(cls, B):
        return cls(np.zeros((2 * B, 2 * B)), np.zeros(B), np.zeros((B, 3)), np.zeros((3, 3)))

    def as_vector(self):
        return np.concatenate([self.bb.ravel(), self.mm, self.md.ravel(), self.dd.ravel()])


def node_stats(lp: LocalPosterior, layout: ThetaLayout, nodes=None):
    """Per-node statistics, each with a leading grid axis (restricted to ``nodes``)."""
    n = lp.nodes
    if n is None:
        raise DomainError("local posterior lacks per-node Gaussians")
    sel = slice(None) if nodes is None else np.atleast_1d(nodes)
    mean, cov = n.mean[sel], n.cov[sel]
    K, L = layout.K, layout.L
    M2 = cov + np.einsum("gi,gj->gij", mean, mean)
    d = plr_basis(lp.freqs[sel])
    Em = mean[:, K]
    return (M2[:, L][:, :, L], M2[:, K, K], Em[:, :, None] * d[:, None, :],
            d[:, :, None] * d[:, None, :])


def sampled_stats(lp, k, layout) -> SuffStats:
    bb, mm, md, dd = node_stats(lp, layout, [k])
    return SuffStats(bb[0], mm[0], md[0], dd[0])


def expected_stats(lp, layout) -> SuffStats:
    """Statistics averaged over ``q(f)`` with rectangle-rule weights."""
    w = lp.weights
    bb, mm, md, dd = node_stats(lp, layout)
    return SuffStats(np.tensordot(w, bb, 1), w @ mm, np.tensordot(w, md, 1),
                     np.tensordot(w, dd, 1))


def omega_target(stats: SuffStats, hp: HyperParams):
    """Natural-parameter target for q(Omega)'s first component."""
    return -0.5 * (hp.n_bar * linalg.inv(hp.Omega_bar) + stats.bb)


def gamma_target(stats: SuffStats, gs: GlobalState, hp: HyperParams, b: int):
    _, _, Eaa = gaussian_moments(gs.alpha[b])
    Ea = gaussian_moments(gs.alpha[b])[0]
    sq = stats.mm[b] - 2.0 * stats.md[b] @ Ea + np.sum(Eaa * stats.dd)
    return -hp.r_bar - 0.5 * sq


def alpha_target(stats: SuffStats, gs: GlobalState, hp: HyperParams, b: int):
    Eg = gamma_mean(gs.gamma[b])
    xi1 = -0.5 * hp.delta_bar * np.eye(3) - 0.5 * Eg * stats.dd
    xi2 = hp.delta_bar * hp.alpha_bar[b] + Eg * stats.md[b]
    return xi1, xi2


def update_omega(gs: GlobalState, stats: SuffStats, N, kappa, hp) -> GlobalState:
    eta1 = gs.omega.eta1 + kappa * (omega_target(stats, hp) - gs.omega.eta1)
    try:
        linalg.cholesky(-eta1)
    except linalg.LinAlgError:
        raise NumericalError("Omega update left the negative-definite cone") from None
    return replace(gs, omega=WishartCanonical(eta1, omega_eta2(N, hp)))


def update_gamma(gs: GlobalState, stats: SuffStats, N, kappa, hp, b) -> GlobalState:
    old = gs.gamma[b]
    eta1 = old.eta1 + kappa * (gamma_target(stats, gs, hp, b) - old.eta1)
    if not eta1 < 0:
        raise NumericalError(f"gamma update for band {b} produced eta1={eta1}")
    gam = list(gs.gamma)
    gam[b] = GammaCanonical(float(eta1), gamma_eta2(N, hp, b))
    return replace(gs, gamma=tuple(gam))


def update_alpha(gs: GlobalState, stats: SuffStats, N, kappa, hp, b) -> GlobalState:
    old = gs.alpha[b]
    xi1, xi2 = alpha_target(stats, gs, hp, b)
    new = GaussianCanonical(old.eta1 + kappa * (xi1 - old.eta1),
                            old.eta2 + kappa * (xi2 - old.eta2))
    alpha = list(gs.alpha)
    alpha[b] = new
    return replace(gs, alpha=tuple(alpha))


def update_globals(gs, stats, N, kappa, hp) -> GlobalState:
    """Omega first, then gamma_b and alpha_b band by band."""
    gs = update_omega(gs, stats, N, kappa, hp)
    for b in range(hp.B):
        gs = update_gamma(gs, stats, N, kappa, hp, b)
        gs = update_alpha(gs, stats, N, kappa, hp, b)
    return gs


# ---------------------------------------------------------------------------
# driver

def _rng(seed, *key):
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(int(k) for k in key)))


def minibatch_indices(seed, t, N, I):
    return np.sort(_rng(seed, 0, t).choice(N, size=min(I, N), replace=False))


def _dataset_digest(dataset: Dataset):
    h = hashlib.sha256()
    h.update(json.dumps(list(dataset.band_names)).encode())
    for s in dataset:
        h.update(str(s.star_id).encode())
        for b in s.bands:
            for a in (b.t, b.y, b.sigma):
                h.update(np.ascontiguousarray(a).tobytes())
    return h.hexdigest()


def config_hash(dataset, hp, kernels, config: FitConfig) -> str:
    """Hash of everything that determines the trajectory, excluding T."""
    doc = {"hp": hp.to_dict(),
           "kernels": None if kernels is None else
           [None if k is None else [k.tau1, k.tau2, k.tau3] for k in kernels],
           "c1": config.c1, "c2": config.c2, "I": config.batch_size, "seed": config.seed,
           "grid": [config.grid.f_min, config.grid.f_max, config.grid.n_points],
           "data": _dataset_digest(dataset)}
    return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()[:16]


def save_checkpoint(path, gs: GlobalState, iteration: int, config: FitConfig, chash: str):
    doc = {"format": "miraplr-checkpoint-1", "version": __version__, "iteration": iteration, "seed": config.seed,
           "config_hash": chash, "globals": gs.to_dict()}
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w") as fh:
        json.dump(doc, fh)
    os.replace(tmp, path)


def load_checkpoint(path):
    with open(path) as fh:
        doc = json.load(fh)
    return GlobalState.from_dict(doc["globals"]), int(doc["iteration"]), doc


@dataclass
class SVIResult:
    state: GlobalState
    locals: list
    iterations: int
    config_hash: str
    history: list = field(default_factory=list)


def run_svi(dataset: Dataset, hp: HyperParams, kernels, config: FitConfig, *,
            threads: int = 1, checkpoint: str | os.PathLike | None = None,
            checkpoint_every: int = 100, resume: bool = False,
            init_state: GlobalState | None = None, keep_nodes: bool = False,
            cache_products: bool = True, callback=None) -> SVIResult:
    """Stochastic variational inference over ``dataset``.

    Per iteration ``t``: draw ``I`` stars without replacement, refresh their
    local posteriors against the current globals, sample one grid node per
    star, then update q(Omega) and per band q(gamma_b), q(alpha_b). A final
    full local pass gives every star a posterior under the final globals.

    Random streams are keyed by ``(seed, 0, t)`` for the minibatch and
    ``(seed, 1, t, star)`` for node sampling, so results do not depend on
    ``threads`` and a resumed run matches an uninterrupted one exactly.
    ``keep_nodes`` retains every node Gaussian for the final locals
    (otherwise only the MAP node's). ``cache_products`` keeps each star's
    per-band Gram products after first use, trading memory for the
    Cholesky work that dominates a local update.
    """
    N, B = len(dataset), dataset.n_bands
    if N == 0:
        raise DomainError("dataset has no stars")
    if hp.B != B:
        raise DomainError(f"hyperparameters describe {hp.B} bands, dataset has {B}")
    if kernels is not None and len(kernels) != B:
        raise DomainError("need one kernel per band")
    layout = theta_layout(B)
    grid = config.grid
    chash = config_hash(dataset, hp, kernels, config)
    I = min(config.batch_size, N)

    gs = init_state if init_state is not None else init_global_state(hp, N)
    start = 0
    if resume and checkpoint is not None and Path(checkpoint).exists():
        gs, start, doc = load_checkpoint(checkpoint)
        if doc.get("config_hash") != chash:
            raise DomainError("checkpoint was written for a different configuration")
        log.info("resuming from iteration %d", start)

    cache = {}

    def products(i):
        if not cache_products:
            return None
        if i not in cache:
            cache[i] = star_products(dataset[i], kernels, grid)
        return cache[i]

    pool = ThreadPoolExecutor(threads) if threads > 1 else None
    mapper = pool.map if pool else map
    history = []
    try:
        for t in range(start + 1, config.iterations + 1):
            kappa = step_size(t, config.c1, config.c2)
            idx = minibatch_indices(config.seed, t, N, I)
            eg = expected_globals(gs, with_logs=False)

            def local_stats(i, eg=eg, t=t):
                try:
                    lp = update_local(dataset[i], eg, kernels, grid, layout,
                                      products=products(i))
                except MiraError as exc:
                    raise type(exc)(f"iteration {t}: {exc}") from None
                k = sample_node(lp, _rng(config.seed, 1, t, i))
                return sampled_stats(lp, k, layout)

            stats = SuffStats.zeros(B)
            for s in mapper(local_stats, idx):
                stats = stats + s
            gs = update_globals(gs, stats.scaled(N / I), N, kappa, hp)
            if callback is not None:
                callback(t, gs)
            if checkpoint is not None and (t % checkpoint_every == 0 or t == config.iterations):
                save_checkpoint(checkpoint, gs, t, config, chash)
            if t % 100 == 0:
                log.info("iteration %d/%d", t, config.iterations)

        eg = expected_globals(gs, with_logs=False)

        def final(i):
            lp = update_local(dataset[i], eg, kernels, grid, layout, products=products(i))
            return lp if keep_nodes else lp.compact()

        locals_ = list(mapper(final, range(N)))
    finally:
        if pool:
            pool.shutdown()
    return SVIResult(gs, locals_, config.iterations, chash, history)


def full_local_pass(dataset, gs, kernels, grid, products=None):
    """Fresh locals for every star; ``products`` is an optional per-star list
    of cached Gram products."""
    eg = expected_globals(gs, with_logs=False)
    layout = theta_layout(dataset.n_bands)
    products = products or [None] * len(dataset)
    return [update_local(s, eg, kernels, grid, layout, products=p)
            for s, p in zip(dataset, products)]


def exact_stats(locals_, layout) -> SuffStats:
    out = SuffStats.zeros(layout.B)
    for lp in locals_:
        out = out + expected_stats(lp, layout)
    return out


def coordinate_ascent_sweep(dataset, gs, hp, kernels, grid, products=None):
    """One deterministic full-batch sweep with kappa = 1.

    Returns the new globals and the locals they were computed from.
    """
    layout = theta_layout(dataset.n_bands)
    locals_ = full_local_pass(dataset, gs, kernels, grid, products)
    stats = exact_stats(locals_, layout)
    return update_globals(gs, stats, len(dataset), 1.0, hp), locals_
