"""Phase-domain squared-exponential kernel and per-band Gram products.

The likelihood of one band only enters the inference through three
quantities: ``C^T S^-1 C``, ``C^T S^-1 y`` and ``y^T S^-1 y``, plus
``log|S|``. :func:`grid_products` evaluates all of them for a whole
frequency grid at once with batched Cholesky factorizations.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .errors import DomainError, NumericalError
from .lightcurve import BandData


@dataclass(frozen=True)
class KernelParams:
    tau1: float
    tau2: float
    tau3: float

    def __post_init__(self):
        if not (self.tau1 > 0 and self.tau2 > 0 and self.tau3 > 0):
            raise DomainError(f"kernel parameters must be positive, got {self}")

    @classmethod
    def from_log(cls, log_tau):
        return cls(*map(float, np.exp(log_tau)))

    def log(self):
        return np.log([self.tau1, self.tau2, self.tau3])


def kernel_eval(u, u_prime, k: KernelParams):
    """``tau1 exp(-(u-u')^2/tau2) + tau3 [u == u']``; broadcasts."""
    u = np.asarray(u, dtype=float)
    u_prime = np.asarray(u_prime, dtype=float)
    with np.errstate(over="ignore"):  # tiny tau2: the quotient overflows, exp gives 0
        out = k.tau1 * np.exp(-(u - u_prime) ** 2 / k.tau2) + k.tau3 * (u == u_prime)
    return out if out.ndim else float(out)


def basis_matrix(times, f: float) -> np.ndarray:
    """Rows ``(1, cos 2 pi f t, sin 2 pi f t)``."""
    w = 2 * np.pi * f * np.asarray(times, dtype=float)
    return np.column_stack([np.ones_like(w), np.cos(w), np.sin(w)])


@dataclass(frozen=True, eq=False)
class BandGramBundle:
    sigma: np.ndarray
    chol: np.ndarray
    logdet: float

    @property
    def n(self):
        return self.sigma.shape[0]


def gram_matrix(times, f, sigmas, k: KernelParams) -> np.ndarray:
    u = f * np.asarray(times, dtype=float)
    S = kernel_eval(u[:, None], u[None, :], k)
    return np.atleast_2d(S) + np.diag(np.asarray(sigmas, dtype=float) ** 2)


def build_sigma(times, f, sigmas, k: KernelParams, where: str = "") -> BandGramBundle:
    times = np.asarray(times, dtype=float)
    if times.shape != np.shape(sigmas):
        raise DomainError("times and sigmas differ in length")
    if times.size == 0:
        z = np.zeros((0, 0))
        return BandGramBundle(z, z, 0.0)
    S = gram_matrix(times, f, sigmas, k)
    try:
        L = linalg.cholesky(S, lower=True)
    except linalg.LinAlgError:
        raise NumericalError(f"Cholesky failed{where} at f={f!r}") from None
    return BandGramBundle(S, L, 2.0 * float(np.sum(np.log(np.diag(L)))))


def whiten_products(bundle: BandGramBundle, y, C):
    """Return ``(y^T S^-1 y, C^T S^-1 y, C^T S^-1 C)`` via the stored factor."""
    y = np.asarray(y, dtype=float)
    C = np.atleast_2d(np.asarray(C, dtype=float))
    n = bundle.n
    if y.shape != (n,) or C.shape[0] != n:
        if not (n == 0 and y.size == 0):
            raise DomainError(f"dimension mismatch: n={n}, y{y.shape}, C{C.shape}")
    m = C.shape[1] if C.ndim == 2 and C.shape[0] == n else 3
    if n == 0:
        return 0.0, np.zeros(m), np.zeros((m, m))
    wy = linalg.solve_triangular(bundle.chol, y, lower=True)
    wC = linalg.solve_triangular(bundle.chol, C, lower=True)
    ctc = wC.T @ wC
    return float(wy @ wy), wC.T @ wy, 0.5 * (ctc + ctc.T)


@dataclass(frozen=True, eq=False)
class GridProducts:
    """Per-frequency likelihood summaries of one band; leading axis is the grid."""

    ctc: np.ndarray     # (G, 3, 3)
    cty: np.ndarray     # (G, 3)
    yty: np.ndarray     # (G,)
    logdet: np.ndarray  # (G,)
    n: int


def _batched_cholesky(S, freqs, where):
    try:
        return np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        for g, f in enumerate(freqs):
            try:
                np.linalg.cholesky(S[g])
            except np.linalg.LinAlgError:
                raise NumericalError(f"Cholesky failed{where} at f={f!r}") from None
        raise


def grid_products(band: BandData, freqs, k: KernelParams | None,
                  where: str = "") -> GridProducts:
    """Gram products of ``band`` at every frequency in ``freqs``.

    ``k=None`` drops the GP term so that ``S = diag(sigma^2)``.
    """
    freqs = np.atleast_1d(np.asarray(freqs, dtype=float))
    G, n = freqs.size, len(band)
    if n == 0:
        return GridProducts(np.zeros((G, 3, 3)), np.zeros((G, 3)),
                            np.zeros(G), np.zeros(G), 0)
    t, y, s = band.t, band.y, band.sigma
    U = freqs[:, None] * t[None, :]
    w = 2 * np.pi * U
    C = np.stack([np.ones_like(w), np.cos(w), np.sin(w)], axis=-1)
    if k is None:
        inv_s = 1.0 / s
        Cw = C * inv_s[None, :, None]
        yw = y * inv_s
        ctc = np.einsum("gni,gnj->gij", Cw, Cw)
        cty = np.einsum("gni,n->gi", Cw, yw)
        yty = np.full(G, yw @ yw)
        logdet = np.full(G, 2.0 * np.sum(np.log(s)))
        return GridProducts(ctc, cty, yty, logdet, n)
    dt2 = (t[:, None] - t[None, :]) ** 2
    S = k.tau1 * np.exp(np.multiply.outer(-freqs ** 2 / k.tau2, dt2))
    S += k.tau3 * (U[:, :, None] == U[:, None, :])
    S[:, np.arange(n), np.arange(n)] += s ** 2
    L = _batched_cholesky(S, freqs, where)
    rhs = np.concatenate([C, np.broadcast_to(y[None, :, None], (G, n, 1))], axis=-1)
    W = np.linalg.solve(L, rhs)
    P = np.einsum("gni,gnj->gij", W, W)
    logdet = 2.0 * np.sum(np.log(np.diagonal(L, axis1=1, axis2=2)), axis=1)
    ctc = 0.5 * (P[:, :3, :3] + np.swapaxes(P[:, :3, :3], 1, 2))
    return GridProducts(ctc, P[:, :3, 3].copy(), P[:, 3, 3].copy(), logdet, n)


def gp_posterior_mean(times, resid, sigmas, f, k: KernelParams, new_times):
    """Posterior mean of the GP component at ``new_times`` given residuals."""
    times = np.asarray(times, dtype=float)
    new_times = np.asarray(new_times, dtype=float)
    if times.size == 0:
        return np.zeros_like(new_times)
    bundle = build_sigma(times, f, sigmas, k)
    alpha = linalg.cho_solve((bundle.chol, True), np.asarray(resid, dtype=float))
    K = kernel_eval(f * new_times[:, None], f * times[None, :], k)
    return np.atleast_2d(K) @ alpha
