"""Synthetic multi-band light curves drawn from the hierarchical model."""
from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError
from .kernel import KernelParams, basis_matrix, gram_matrix
from .lightcurve import BandData, Dataset, StarLightCurve
from .local import plr_basis
from .plr import a_to_alpha

DAYS_PER_YEAR = 365.25


@dataclass(frozen=True)
class NoiseModel:
    """``sigma(m) = exp(a m^c - b) + offset``."""

    a: float = 1.82e-6
    b: float = 5.84
    c: float = 5.0
    offset: float = 0.0

    def __call__(self, m):
        return np.exp(self.a * np.asarray(m, dtype=float) ** self.c - self.b) + self.offset


NOISE_LEVELS = {"N1": NoiseModel(offset=0.0), "N2": NoiseModel(offset=0.05),
                "N3": NoiseModel(offset=0.1)}


@dataclass(frozen=True)
class CadenceSpec:
    kind: str = "uniform"           # uniform | seasonal | staggered
    counts: tuple = (30, 10)
    span: float = 3000.0
    gap: float = 0.3                # seasonal: masked fraction of each year
    offset: float = 0.7             # staggered: later bands start at offset*span

    def __post_init__(self):
        if self.kind not in ("uniform", "seasonal", "staggered"):
            raise DomainError(f"unknown cadence kind {self.kind!r}")
        if self.span <= 0 or min(self.counts) < 0:
            raise DomainError("cadence needs span > 0 and nonnegative counts")
        if not 0 <= self.gap < 1 or not 0 < self.offset < 1:
            raise DomainError("gap must lie in [0, 1) and offset in (0, 1)")


def cadence_times(spec: CadenceSpec, seed) -> list[np.ndarray]:
    """Sorted observation epochs for each band."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    out = []
    for b, n in enumerate(spec.counts):
        if spec.kind == "uniform":
            t = rng.uniform(0.0, spec.span, n)
        elif spec.kind == "seasonal":
            width = (1.0 - spec.gap) * DAYS_PER_YEAR
            n_years = int(np.ceil(spec.span / DAYS_PER_YEAR))
            # seasons are truncated by the span; draw a season with probability
            # proportional to its open length, then a time inside it
            lens = np.array([min(width, spec.span - y * DAYS_PER_YEAR) for y in range(n_years)])
            lens = np.clip(lens, 0.0, None)
            years = rng.choice(n_years, size=n, p=lens / lens.sum())
            t = years * DAYS_PER_YEAR + rng.uniform(0.0, 1.0, n) * lens[years]
        else:
            cut = spec.offset * spec.span
            t = rng.uniform(0.0, cut, n) if b == 0 else rng.uniform(cut, spec.span, n)
        out.append(np.sort(t))
    return out


def in_seasonal_gap(t, gap):
    phase = np.mod(np.asarray(t, dtype=float), DAYS_PER_YEAR)
    return phase > (1.0 - gap) * DAYS_PER_YEAR


# Quadratic PLRs in (log10 P - 2.3) form: a0, a1, a2 and scatter.
DEFAULT_PLR = {
    "I": ((18.50, -2.00, 0.00), 0.25),
    "J": ((18.97, -3.49, -1.54), 0.15),
    "H": ((18.23, -3.59, -3.40), 0.16),
    "Ks": ((17.86, -3.77, -2.23), 0.12),
}
DEFAULT_LOG_KERNELS = {
    "I": (-3.33, -4.20, -4.21),
    "J": (-10.48, -3.00, -5.28),
    "H": (-10.00, -2.57, -3.90),
    "Ks": (-10.59, -4.39, -4.18),
}
DEFAULT_AMPLITUDE = {"I": 0.8, "J": 0.4, "H": 0.35, "Ks": 0.3}


@dataclass(frozen=True, eq=False)
class SimulationTruth:
    """True generative parameters; ``alpha`` is in the log10-frequency basis."""

    alpha: np.ndarray
    gamma: np.ndarray
    Omega: np.ndarray
    kernels: tuple | None
    band_names: tuple

    @property
    def B(self):
        return len(self.band_names)

    @classmethod
    def default(cls, band_names=("I", "Ks"), with_gp=True, correlation=0.8):
        band_names = tuple(band_names)
        for b in band_names:
            if b not in DEFAULT_PLR:
                raise DomainError(f"no default truth for band {b!r}")
        alpha = np.array([a_to_alpha(DEFAULT_PLR[b][0]) for b in band_names])
        gamma = np.array([1.0 / DEFAULT_PLR[b][1] ** 2 for b in band_names])
        amp = np.array([DEFAULT_AMPLITUDE[b] for b in band_names])
        R = np.full((len(amp), len(amp)), correlation)
        np.fill_diagonal(R, 1.0)
        cov = np.kron(np.outer(amp, amp) * R, np.eye(2))
        kernels = (tuple(KernelParams.from_log(DEFAULT_LOG_KERNELS[b]) for b in band_names)
                   if with_gp else None)
        return cls(alpha, gamma, np.linalg.inv(cov), kernels, band_names)


@dataclass(frozen=True, eq=False)
class TruthRecord:
    star_id: str
    f_true: float
    m_true: np.ndarray
    beta_true: np.ndarray


def generate_dataset(N: int, truth: SimulationTruth, cadence: CadenceSpec,
                     noise: NoiseModel, seed: int, dataset_index: int = 0,
                     f_range=(1e-3, 1e-2)):
    """Draw ``N`` stars. Star ``i`` uses the stream ``(seed, dataset_index, i)``."""
    B = truth.B
    if len(cadence.counts) != B:
        raise DomainError("cadence counts must give one count per band")
    try:
        cov_beta = np.linalg.inv(truth.Omega)
        L_beta = np.linalg.cholesky(0.5 * (cov_beta + cov_beta.T))
    except np.linalg.LinAlgError:
        raise DomainError("Omega must be symmetric positive definite") from None
    if np.any(truth.gamma <= 0):
        raise DomainError("gamma must be positive")
    f_lo, f_hi = f_range
    stars, truths = [], []
    for i in range(N):
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(dataset_index, i)))
        f = rng.uniform(f_lo, f_hi)
        d = plr_basis(f)
        m = truth.alpha @ d + rng.normal(size=B) / np.sqrt(truth.gamma)
        beta = (L_beta @ rng.normal(size=2 * B)).reshape(B, 2)
        times = cadence_times(cadence, rng)
        bands = []
        for b in range(B):
            t = times[b]
            s = m[b] + basis_matrix(t, f)[:, 1:] @ beta[b]
            if truth.kernels is not None and t.size:
                H = gram_matrix(t, f, np.zeros_like(t), truth.kernels[b])
                s = s + np.linalg.cholesky(H) @ rng.normal(size=t.size)
            sig = noise(s)
            bands.append(BandData(t, s + sig * rng.normal(size=t.size), sig))
        sid = f"star{i:05d}"
        stars.append(StarLightCurve(sid, bands))
        truths.append(TruthRecord(sid, f, m, beta))
    return Dataset(stars, truth.band_names), truths


SAMPLE_SIZE_PAIRS = ((5, 5), (5, 10), (5, 20), (5, 30), (10, 10), (10, 20),
                     (10, 30), (20, 20), (20, 30), (30, 30))
CADENCE_CODES = {"C1": "staggered", "C2": "seasonal", "C3": "uniform"}


@dataclass(frozen=True)
class GridSettings:
    """Factorial simulation design; pairs are ``(n_K, n_I)``."""

    pairs: tuple = SAMPLE_SIZE_PAIRS
    cadences: tuple = ("C1", "C2", "C3")
    noises: tuple = ("N1", "N2", "N3")
    n_stars: int = 200
    span: float = 3000.0
    seed: int = 0
    band_names: tuple = ("I", "Ks")
    with_gp: bool = True


@dataclass(frozen=True, eq=False)
class SimulatedDataset:
    name: str
    dataset: Dataset
    truths: list = field(repr=False)


def simulation_grid(settings: GridSettings = GridSettings()) -> list[SimulatedDataset]:
    truth = SimulationTruth.default(settings.band_names, with_gp=settings.with_gp)
    out = []
    combos = itertools.product(settings.pairs, settings.cadences, settings.noises)
    for k, ((n_K, n_I), cad, noi) in enumerate(combos):
        spec = CadenceSpec(CADENCE_CODES[cad], counts=(n_I, n_K), span=settings.span)
        ds, tr = generate_dataset(settings.n_stars, truth, spec, NOISE_LEVELS[noi],
                                  settings.seed, dataset_index=k)
        out.append(SimulatedDataset(f"K{n_K}_I{n_I}_{cad}_{noi}", ds, tr))
    return out


def write_truths(path, truths, band_names, header: str | None = None):
    with open(path, "w", newline="") as fh:
        if header:
            fh.write(f"# {header}\n")
        w = csv.writer(fh)
        w.writerow(["star_id", "f_true"] + [f"m_true_{b}" for b in band_names])
        for r in truths:
            w.writerow([r.star_id, repr(float(r.f_true))] + [repr(float(x)) for x in r.m_true])


def read_truths(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(ln for ln in fh if not ln.startswith("#")))
    return {r["star_id"]: float(r["f_true"]) for r in rows}
