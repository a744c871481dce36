"""YAML run configuration with dotted-key overrides."""
from __future__ import annotations

import copy
import hashlib
import json
from pathlib import Path

import numpy as np
import yaml

from .errors import DomainError, ParseError, ValidationError
from .kernel import KernelParams
from .lightcurve import FrequencyGrid
from .plr import a_to_alpha
from .simulate import DEFAULT_LOG_KERNELS, DEFAULT_PLR
from .svi import FitConfig, HyperParams

DEFAULTS = {
    "dataset": None,
    "format": None,
    "bands": None,
    "output": "out",
    "grid": {"f_min": 1e-3, "f_max": 1e-2, "n_points": 500},
    "fit": {"c1": 1500.0, "c2": 0.75, "batch_size": 8, "iterations": 1000, "seed": 0,
            "checkpoint_every": 100, "resume": True, "density_files": True},
    "hyper": {"plr": None, "alpha_bar": None, "gamma_bar": 25.0, "omega_scale": 4.0,
              "Omega_bar": None, "delta_bar": 1.0, "r_bar": 1.0, "n_bar": 1.0},
    "kernels": None,
    "init": {"subset_size": 100, "seed": 0, "fit_kernels": True},
    "simulate": {"full_grid": False, "n_stars": 200, "bands": ["I", "Ks"], "counts": [30, 10],
                 "cadence": "C3", "noise": "N1", "span": 3000.0, "seed": 0, "gp": True,
                 "name": "sim"},
    "report": {"truths": None, "levels": [0.9, 0.95, 0.99], "lambda": 2.7e-4,
               "period_cut": 400.0, "anchor_a0": None, "mu_anchor": [18.493, 0.048],
               "delta_Alambda": None, "delta_ct": None, "delta_mbar": None},
    "downsample": {"settings": ["S1"], "replications": 20, "seed": 0},
}


def _merge(base, over):
    out = copy.deepcopy(base)
    for k, v in (over or {}).items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def parse_override(text: str):
    if "=" not in text:
        raise ParseError(f"override {text!r} is not of the form key=value")
    key, val = text.split("=", 1)
    try:
        value = yaml.safe_load(val)
    except yaml.YAMLError as exc:
        raise ParseError(f"override {text!r}: {exc}") from None
    return key.strip().split("."), value


def apply_overrides(cfg, overrides):
    cfg = copy.deepcopy(cfg)
    for text in overrides or ():
        keys, value = parse_override(text)
        node = cfg
        for k in keys[:-1]:
            node = node.setdefault(k, {})
            if not isinstance(node, dict):
                raise ValidationError(f"cannot set {'.'.join(keys)}: {k} is not a section")
        node[keys[-1]] = value
    return cfg


def load_config(path=None, overrides=()) -> dict:
    """Defaults, then the YAML file (plus any files it ``include``s), then overrides."""
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        path = Path(path)
        with open(path) as fh:
            try:
                doc = yaml.safe_load(fh) or {}
            except yaml.YAMLError as exc:
                line = getattr(getattr(exc, "problem_mark", None), "line", None)
                raise ParseError(str(exc), None if line is None else line + 1) from None
        if not isinstance(doc, dict):
            raise ParseError("config must be a mapping")
        for inc in doc.pop("include", None) or []:
            inc_path = (path.parent / inc)
            with open(inc_path) as fh:
                cfg = _merge(cfg, yaml.safe_load(fh) or {})
        cfg = _merge(cfg, doc)
        for key in ("dataset", "output"):
            if cfg.get(key) and not Path(cfg[key]).is_absolute():
                cfg[key] = str(path.parent / cfg[key])
        rep = cfg["report"]
        if rep.get("truths") and not Path(rep["truths"]).is_absolute():
            rep["truths"] = str(path.parent / rep["truths"])
    return apply_overrides(cfg, overrides)


def config_digest(cfg) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True, default=str).encode()).hexdigest()[:16]


def grid_from(cfg) -> FrequencyGrid:
    g = cfg["grid"]
    return FrequencyGrid(float(g["f_min"]), float(g["f_max"]), int(g["n_points"]))


def fit_config_from(cfg) -> FitConfig:
    f = cfg["fit"]
    return FitConfig(float(f["c1"]), float(f["c2"]), int(f["batch_size"]),
                     int(f["iterations"]), int(f["seed"]), grid_from(cfg))


def _per_band(value, bands, what):
    if isinstance(value, dict):
        missing = [b for b in bands if b not in value]
        if missing:
            raise ValidationError(f"{what} missing for bands {missing}")
        return [value[b] for b in bands]
    if np.ndim(value) == 0:
        return [value] * len(bands)
    if len(value) != len(bands):
        raise ValidationError(f"{what} needs one entry per band")
    return list(value)


def plr_slopes(cfg, bands):
    """``(a1, a2)`` per band from ``hyper.plr`` or the built-in table."""
    plr = cfg["hyper"].get("plr") or {}
    out = []
    for b in bands:
        if b in plr:
            out.append([float(plr[b][1]), float(plr[b][2])])
        elif b in DEFAULT_PLR:
            out.append(list(DEFAULT_PLR[b][0][1:]))
        else:
            raise ValidationError(f"no PLR shape for band {b!r}; set hyper.plr.{b}")
    return np.array(out)


def hyperparams_for_bands(cfg, bands) -> HyperParams:
    h = cfg["hyper"]
    B = len(bands)
    if h.get("alpha_bar") is not None:
        alpha = np.array(_per_band(h["alpha_bar"], bands, "alpha_bar"), dtype=float)
    else:
        plr = h.get("plr") or {}
        rows = []
        for b in bands:
            if b in plr:
                rows.append(a_to_alpha(plr[b]))
            elif b in DEFAULT_PLR:
                rows.append(a_to_alpha(DEFAULT_PLR[b][0]))
            else:
                raise ValidationError(f"no PLR prior for band {b!r}; set hyper.plr.{b}")
        alpha = np.array(rows)
    gamma = np.array(_per_band(h["gamma_bar"], bands, "gamma_bar"), dtype=float)
    if h.get("Omega_bar") is not None:
        Omega = np.array(h["Omega_bar"], dtype=float)
    else:
        Omega = float(h["omega_scale"]) * np.eye(2 * B)
    return HyperParams(alpha, gamma, Omega, float(h["delta_bar"]), float(h["r_bar"]),
                       float(h["n_bar"]))


def kernels_from(cfg, bands):
    k = cfg.get("kernels")
    if k == "none":
        return None
    if k is None:
        k = {b: np.exp(DEFAULT_LOG_KERNELS[b]).tolist() for b in bands if b in DEFAULT_LOG_KERNELS}
    vals = _per_band(k, bands, "kernels")
    return [KernelParams(*map(float, v)) for v in vals]


def require(cfg, key):
    if not cfg.get(key):
        raise ValidationError(f"config key {key!r} is required")
    return cfg[key]


def band_names_from(cfg, dataset=None):
    if cfg.get("bands"):
        return list(cfg["bands"])
    if dataset is not None:
        return list(dataset.band_names)
    raise DomainError("band manifest unknown")
