"""
Light-curve containers, dataset I/O and the index layout of the per-star
parameter vector.

Band indices are 0-based throughout the Python API. A star's parameter
vector stacks ``(m_b, beta_b1, beta_b2)`` for every band, so the mean
magnitudes live at positions 0, 3, 6, ... and the sinusoid coefficients at
the remaining positions.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, NamedTuple, Sequence

import numpy as np

from .errors import DomainError, ParseError, ValidationError

__all__ = [
    "BandObservation", "BandData", "StarLightCurve", "Dataset", "ThetaLayout",
    "FrequencyGrid", "theta_layout", "load_dataset", "write_dataset",
    "downsample",
]

CSV_COLUMNS = ("star_id", "band", "t", "mag", "err")


class BandObservation(NamedTuple):
    t: float
    y: float
    sigma: float


@dataclass(frozen=True, eq=False)
class BandData:
    """Time-sorted observations of one star through one filter."""

    t: np.ndarray
    y: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float).reshape(-1)
        y = np.asarray(self.y, dtype=float).reshape(-1)
        s = np.asarray(self.sigma, dtype=float).reshape(-1)
        if not (t.shape == y.shape == s.shape):
            raise ValidationError("t, y and sigma must have equal length")
        order = np.argsort(t, kind="stable")
        object.__setattr__(self, "t", t[order])
        object.__setattr__(self, "y", y[order])
        object.__setattr__(self, "sigma", s[order])

    @classmethod
    def empty(cls):
        return cls(np.empty(0), np.empty(0), np.empty(0))

    def __len__(self):
        return self.t.shape[0]

    def __iter__(self) -> Iterator[BandObservation]:
        for row in zip(self.t, self.y, self.sigma):
            yield BandObservation(*map(float, row))

    def __eq__(self, other):
        if not isinstance(other, BandData):
            return NotImplemented
        return (np.array_equal(self.t, other.t)
                and np.array_equal(self.y, other.y)
                and np.array_equal(self.sigma, other.sigma))

    def subset(self, idx) -> "BandData":
        idx = np.sort(np.asarray(idx, dtype=int))
        return BandData(self.t[idx], self.y[idx], self.sigma[idx])

    def shifted(self, dy: float) -> "BandData":
        return BandData(self.t, self.y + dy, self.sigma)


@dataclass(frozen=True)
class StarLightCurve:
    star_id: str
    bands: tuple[BandData, ...]

    def __post_init__(self):
        object.__setattr__(self, "bands", tuple(self.bands))

    @property
    def n_bands(self):
        return len(self.bands)

    @property
    def counts(self):
        return tuple(len(b) for b in self.bands)

    def shifted(self, dy) -> "StarLightCurve":
        """Copy with magnitudes offset by ``dy`` (scalar or one value per band)."""
        dy = np.broadcast_to(np.asarray(dy, dtype=float), (self.n_bands,))
        return StarLightCurve(self.star_id,
                              tuple(b.shifted(d) for b, d in zip(self.bands, dy)))


@dataclass(frozen=True)
class Dataset:
    stars: tuple[StarLightCurve, ...]
    band_names: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "stars", tuple(self.stars))
        object.__setattr__(self, "band_names", tuple(self.band_names))
        if not self.band_names:
            raise ValidationError("a dataset needs at least one band")
        for s in self.stars:
            if s.n_bands != self.n_bands:
                raise ValidationError(
                    f"star {s.star_id!r} has {s.n_bands} bands, dataset has "
                    f"{self.n_bands}")

    @property
    def n_bands(self):
        return len(self.band_names)

    def __len__(self):
        return len(self.stars)

    def __getitem__(self, i):
        return self.stars[i]

    def __iter__(self):
        return iter(self.stars)

    @property
    def star_ids(self):
        return [s.star_id for s in self.stars]

    def subset(self, idx) -> "Dataset":
        return Dataset([self.stars[i] for i in idx], self.band_names)


@dataclass(frozen=True)
class ThetaLayout:
    """Positions of mean magnitudes (``K``) and sinusoid terms (``L``)."""

    B: int
    K: np.ndarray = field(repr=False)
    L: np.ndarray = field(repr=False)

    @property
    def dim(self):
        return 3 * self.B


def theta_layout(B: int) -> ThetaLayout:
    if B < 1:
        raise DomainError("band count must be at least 1")
    idx = np.arange(3 * B)
    return ThetaLayout(B, idx[idx % 3 == 0], idx[idx % 3 != 0])


@dataclass(frozen=True)
class FrequencyGrid:
    """Equally spaced frequencies (cycles/day), both endpoints included."""

    f_min: float = 1e-3
    f_max: float = 1e-2
    n_points: int = 500

    def __post_init__(self):
        if not (0 < self.f_min < self.f_max):
            raise DomainError("need 0 < f_min < f_max")
        if self.n_points < 2:
            raise DomainError("a frequency grid needs at least two points")

    @property
    def df(self) -> float:
        return (self.f_max - self.f_min) / (self.n_points - 1)

    @property
    def values(self) -> np.ndarray:
        return np.linspace(self.f_min, self.f_max, self.n_points)

    def __len__(self):
        return self.n_points


# ---------------------------------------------------------------------------
# file I/O

def _check_row(star_id, band, t, y, err, line):
    if not (math.isfinite(t) and math.isfinite(y) and math.isfinite(err)):
        raise ValidationError(
            f"non-finite value for star {star_id!r} band {band!r} (line {line})")
    if err <= 0:
        raise ValidationError(
            f"non-positive uncertainty {err} for star {star_id!r} band {band!r} "
            f"(line {line})")


def _assemble(rows, band_names):
    # rows: star_id -> band -> list of (t, y, err), insertion ordered
    if band_names is None:
        seen = []
        for bands in rows.values():
            for b in bands:
                if b not in seen:
                    seen.append(b)
        band_names = seen
    band_names = tuple(band_names)
    index = {b: i for i, b in enumerate(band_names)}
    stars = []
    for sid, bands in rows.items():
        per_band = [BandData.empty() for _ in band_names]
        for b, obs in bands.items():
            if b not in index:
                raise ValidationError(
                    f"star {sid!r} uses band {b!r} missing from the band manifest")
            arr = np.asarray(obs, dtype=float).reshape(-1, 3)
            per_band[index[b]] = BandData(arr[:, 0], arr[:, 1], arr[:, 2])
        stars.append(StarLightCurve(sid, per_band))
    return Dataset(stars, band_names)


def _read_csv(path):
    rows: dict = {}
    with open(path, newline="") as fh:
        lines = ((i, ln) for i, ln in enumerate(fh, start=1)
                 if ln.strip() and not ln.lstrip().startswith("#"))
        header = None
        for lineno, ln in lines:
            fields = next(csv.reader([ln]))
            if header is None:
                header = [h.strip() for h in fields]
                missing = [c for c in CSV_COLUMNS if c not in header]
                if missing:
                    raise ParseError(f"missing columns {missing}", lineno)
                col = {c: header.index(c) for c in CSV_COLUMNS}
                continue
            if len(fields) != len(header):
                raise ParseError(
                    f"expected {len(header)} fields, got {len(fields)}", lineno)
            sid = fields[col["star_id"]].strip()
            band = fields[col["band"]].strip()
            try:
                t, y, err = (float(fields[col[c]]) for c in ("t", "mag", "err"))
            except ValueError as exc:
                raise ParseError(str(exc), lineno) from None
            _check_row(sid, band, t, y, err, lineno)
            rows.setdefault(sid, {}).setdefault(band, []).append((t, y, err))
        if header is None:
            raise ParseError("empty file", 1)
    return rows


def _read_json(path):
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(exc.msg, exc.lineno) from None
    if isinstance(doc, dict):
        doc = doc.get("stars", [])
    rows: dict = {}
    for k, star in enumerate(doc):
        try:
            sid = str(star["star_id"])
            bands = star["bands"]
        except (KeyError, TypeError):
            raise ParseError(f"star entry {k} lacks star_id/bands") from None
        rows.setdefault(sid, {})
        for band, obs in bands.items():
            t, y, e = obs["t"], obs["mag"], obs["err"]
            if not (len(t) == len(y) == len(e)):
                raise ParseError(f"star {sid!r} band {band!r}: ragged arrays")
            for j, (tj, yj, ej) in enumerate(zip(t, y, e)):
                _check_row(sid, band, float(tj), float(yj), float(ej), f"{k}:{j}")
                rows[sid].setdefault(band, []).append((tj, yj, ej))
    return rows


def load_dataset(path, format: str | None = None,
                 band_names: Sequence[str] | None = None) -> Dataset:
    """Read a light-curve table.

    Parameters
    ----------
    path : path-like
        CSV with header ``star_id,band,t,mag,err`` (lines starting with ``#``
        are ignored) or JSON array of ``{"star_id", "bands": {name: {"t",
        "mag", "err"}}}`` objects.
    format : {"csv", "json"}, optional
        Inferred from the file suffix when omitted.
    band_names : sequence of str, optional
        Band manifest fixing the band order. Without it bands are numbered in
        order of first appearance.
    """
    path = Path(path)
    fmt = (format or path.suffix.lstrip(".")).lower()
    if fmt == "csv":
        rows = _read_csv(path)
    elif fmt == "json":
        rows = _read_json(path)
    else:
        raise DomainError(f"unknown dataset format {fmt!r}")
    return _assemble(rows, band_names)


def write_dataset(dataset: Dataset, path, format: str | None = None,
                  header: str | None = None):
    """Write ``dataset`` in the format :func:`load_dataset` reads."""
    path = Path(path)
    fmt = (format or path.suffix.lstrip(".")).lower()
    if fmt == "csv":
        with open(path, "w", newline="") as fh:
            if header:
                fh.write(f"# {header}\n")
            w = csv.writer(fh)
            w.writerow(CSV_COLUMNS)
            for s in dataset:
                for name, band in zip(dataset.band_names, s.bands):
                    for t, y, e in band:
                        w.writerow([s.star_id, name, repr(t), repr(y), repr(e)])
    elif fmt == "json":
        doc = [{"star_id": s.star_id,
                "bands": {name: {"t": b.t.tolist(), "mag": b.y.tolist(),
                                 "err": b.sigma.tolist()}
                          for name, b in zip(dataset.band_names, s.bands)}}
               for s in dataset]
        with open(path, "w") as fh:
            json.dump(doc, fh)
    else:
        raise DomainError(f"unknown dataset format {fmt!r}")


def downsample(dataset: Dataset, n_stars: int, caps: Sequence[int],
               seed: int) -> Dataset:
    """Random subsample of stars and of observations per band.

    ``n_stars`` stars are drawn uniformly without replacement; every band of
    every drawn star keeps ``min(n_ib, caps[b])`` observations drawn without
    replacement. Time order within a band is preserved.
    """
    if n_stars > len(dataset):
        raise DomainError(f"cannot draw {n_stars} stars from {len(dataset)}")
    if len(caps) != dataset.n_bands or min(caps) < 0:
        raise DomainError("need one non-negative cap per band")
    rng = np.random.default_rng(seed)
    picked = np.sort(rng.choice(len(dataset), size=n_stars, replace=False))
    stars = []
    for i in picked:
        star = dataset[i]
        bands = []
        for band, cap in zip(star.bands, caps):
            keep = min(len(band), int(cap))
            bands.append(band.subset(rng.choice(len(band), size=keep, replace=False)))
        stars.append(StarLightCurve(star.star_id, bands))
    return Dataset(stars, dataset.band_names)
