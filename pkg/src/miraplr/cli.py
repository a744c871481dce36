"""Command-line driver: ``miraplr <subcommand> -c run.yaml [--set key=value]``."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .baselines import estimate_periods, fit_kernel_mle, init_alpha_intercepts, mgls, residual_curves
from .config import (config_digest, fit_config_from, grid_from,
                     hyperparams_for_bands, kernels_from, load_config, plr_slopes, require)
from .errors import DomainError, MiraError, NumericalError, ParseError, ValidationError
from .harness import DOWNSAMPLE_SETTINGS, downsample_eval, median_abs_shift
from .lightcurve import Dataset, load_dataset, write_dataset
from .plr import (alpha_to_a, distance_modulus, fit_linear_plr, fit_quadratic_plr,
                  flux_average_correction, one_period_times)
from .products import (coverage, ade, fit_signal_curve, parse_intervals, read_summary,
                       recovery_rate, star_estimate, write_density, write_summary)
from .simulate import (CADENCE_CODES, NOISE_LEVELS, CadenceSpec, GridSettings,
                       SimulationTruth, generate_dataset, read_truths, simulation_grid,
                       write_truths)
from .svi import GlobalState, run_svi
from .expfam import gaussian_moments

log = logging.getLogger("miraplr")


class Run:
    """Resolved config plus output helpers shared by the subcommands."""

    def __init__(self, cfg, threads=1):
        self.cfg = cfg
        self.threads = threads
        self.digest = config_digest(cfg)
        self.out = Path(cfg["output"])
        self.written = []

    @property
    def header(self):
        return f"miraplr {__version__} config={self.digest}"

    def path(self, *parts):
        p = self.out.joinpath(*parts)
        p.parent.mkdir(parents=True, exist_ok=True)
        self.written.append(p)
        return p

    def dataset(self) -> Dataset:
        return load_dataset(require(self.cfg, "dataset"), self.cfg.get("format"),
                            self.cfg.get("bands"))

    def write_csv(self, name, header_row, rows):
        with open(self.path(name), "w", newline="") as fh:
            fh.write(f"# {self.header}\n")
            w = csv.writer(fh)
            w.writerow(header_row)
            w.writerows(rows)

    def write_json(self, name, doc):
        with open(self.path(name), "w") as fh:
            json.dump({"producer": self.header, **doc}, fh, indent=1)
            fh.write("\n")


def _fmt(x):
    return repr(float(x))


# ---------------------------------------------------------------------------

def cmd_simulate(run: Run):
    s = run.cfg["simulate"]
    if s["full_grid"]:
        settings = GridSettings(n_stars=int(s["n_stars"]), span=float(s["span"]),
                                seed=int(s["seed"]), band_names=tuple(s["bands"]),
                                with_gp=bool(s["gp"]))
        sims = simulation_grid(settings)
    else:
        truth = SimulationTruth.default(tuple(s["bands"]), with_gp=bool(s["gp"]))
        spec = CadenceSpec(CADENCE_CODES.get(s["cadence"], s["cadence"]),
                           tuple(int(c) for c in s["counts"]), float(s["span"]))
        noise = NOISE_LEVELS[s["noise"]]
        ds, tr = generate_dataset(int(s["n_stars"]), truth, spec, noise, int(s["seed"]))

        class _One:
            name, dataset, truths = s["name"], ds, tr
        sims = [_One]
    for sim in sims:
        write_dataset(sim.dataset, run.path(f"{sim.name}.csv"), header=run.header)
        write_truths(run.path(f"{sim.name}_truths.csv"), sim.truths, sim.dataset.band_names,
                     header=run.header)
    return run.written


def cmd_init(run: Run):
    ds = run.dataset()
    if len(ds) == 0:
        raise ValidationError("dataset has no stars")
    cfg = run.cfg
    bands = list(ds.band_names)
    grid = grid_from(cfg)
    rng = np.random.default_rng(int(cfg["init"]["seed"]))
    n = min(int(cfg["init"]["subset_size"]), len(ds))
    sub = ds.subset(np.sort(rng.choice(len(ds), n, replace=False)))
    hp = hyperparams_for_bands(cfg, bands)
    icpt = init_alpha_intercepts(sub, grid, hp.alpha_bar[:, 1:])
    alpha = hp.alpha_bar.copy()
    missing = [b for b, v in zip(bands, icpt) if not np.isfinite(v)]
    if missing:
        log.warning("no usable stars for intercepts of bands %s; keeping prior values", missing)
    alpha[:, 0] = np.where(np.isfinite(icpt), icpt, alpha[:, 0])
    out = {"hyper": {"alpha_bar": {b: alpha[i].tolist() for i, b in enumerate(bands)},
                     "plr": {b: alpha_to_a(alpha[i]).tolist() for i, b in enumerate(bands)}}}
    if cfg["init"]["fit_kernels"]:
        f_hat = estimate_periods(sub, grid)
        kern = {}
        for b, name in enumerate(bands):
            curves = residual_curves(sub, b, f_hat)
            if curves:
                kern[name] = list(map(float, np.exp(fit_kernel_mle(curves).params.log())))
            else:
                log.warning("band %s has no residual curves; kernel left at default", name)
        if kern:
            out["kernels"] = kern
    with open(run.path("hyper.yaml"), "w") as fh:
        fh.write(f"# {run.header}\n")
        yaml.safe_dump(out, fh, sort_keys=False)
    return run.written


def cmd_fit(run: Run):
    ds = run.dataset()
    cfg = run.cfg
    bands = list(ds.band_names)
    hp = hyperparams_for_bands(cfg, bands)
    kernels = kernels_from(cfg, bands)
    config = fit_config_from(cfg)
    ckpt = run.path("checkpoint.json")
    res = run_svi(ds, hp, kernels, config, threads=run.threads, checkpoint=ckpt,
                  checkpoint_every=int(cfg["fit"]["checkpoint_every"]),
                  resume=bool(cfg["fit"]["resume"]))
    levels = [float(x) for x in cfg["report"]["levels"]]
    ests = [star_estimate(lp, levels) for lp in res.locals]
    write_summary(run.path("summary.csv"), ests, bands, header=run.header)
    run.write_csv("map_theta.csv",
                  ["star_id", "f_hat"] + [f"{c}_{b}" for b in bands for c in ("m", "beta1", "beta2")],
                  [[e.star_id, _fmt(e.f_hat)]
                   + [_fmt(v) for b in range(len(bands)) for v in (e.m_hat[b], *e.beta_hat[b])]
                   for e in ests])
    run.write_json("globals.json", {"bands": bands, "config_hash": res.config_hash,
                                    "state": res.state.to_dict(),
                                    "E_alpha": res.state.alpha_means().tolist()})
    if cfg["fit"]["density_files"]:
        for lp in res.locals:
            write_density(run.path("densities", f"{lp.star_id}.csv"), lp, header=run.header)
    return run.written


def _load_fit(run: Run):
    out = run.out
    for name in ("summary.csv", "globals.json", "map_theta.csv"):
        if not (out / name).exists():
            raise ValidationError(f"missing {out / name}; run `miraplr fit` first")
    summary = read_summary(out / "summary.csv")
    with open(out / "globals.json") as fh:
        glob = json.load(fh)
    with open(out / "map_theta.csv", newline="") as fh:
        theta = {r["star_id"]: r for r in csv.DictReader(ln for ln in fh if not ln.startswith("#"))}
    return summary, glob, theta


def cmd_report(run: Run):
    cfg, rep = run.cfg, run.cfg["report"]
    summary, glob, theta = _load_fit(run)
    bands = glob["bands"]
    state = GlobalState.from_dict(glob["state"])
    ids = [r["star_id"] for r in summary]
    f_hat = np.array([float(r["f_hat"]) for r in summary])
    P = 1.0 / f_hat
    metrics = {"n_stars": len(ids)}

    if rep.get("truths"):
        truths = read_truths(rep["truths"])
        f0 = np.array([truths[s] for s in ids])
        lam = float(rep["lambda"])
        metrics["recovery_rate"] = recovery_rate(f_hat, f0, lam)
        metrics["ade"] = ade(f_hat, f0)
        for col in summary[0]:
            if col.startswith("conf_"):
                sets = [parse_intervals(r[col]) for r in summary]
                cov, near = coverage(sets, f0, lam)
                metrics[f"coverage_{col[5:]}"] = {"actual": cov, "near_miss": near}

    plr_rows, ledger_rows = [], []
    ds = run.dataset() if cfg.get("dataset") else None
    kernels = kernels_from(cfg, bands) if ds is not None else None
    for b, name in enumerate(bands):
        m = np.array([float(r[f"m_hat_{name}"]) for r in summary])
        mean, cov, _ = gaussian_moments(state.alpha[b])
        a_svi = alpha_to_a(mean)
        J = np.array([[1, -2.3, 5.29], [0, -1, 4.6], [0, 0, 1]])
        se_svi = np.sqrt(np.diag(J @ cov @ J.T))
        plr_rows.append([name, "svi_posterior", *map(_fmt, a_svi), "", *map(_fmt, se_svi), len(ids)])
        for kind, fit in (("quadratic", lambda: fit_quadratic_plr(P, m)),
                          ("linear", lambda: fit_linear_plr(P, m, float(rep["period_cut"])))):
            try:
                fr = fit()
            except DomainError as exc:
                log.warning("band %s %s PLR skipped: %s", name, kind, exc)
                continue
            plr_rows.append([name, kind, _fmt(fr.a0), _fmt(fr.a1), _fmt(fr.a2), _fmt(fr.sigma),
                             *map(_fmt, fr.stderr), fr.n_used])

        corr = None
        if ds is not None:
            by_id = {s.star_id: s for s in ds}
            cs = []
            for sid, fh in zip(ids, f_hat):
                row = theta[sid]
                band = by_id[sid].bands[b]
                t0 = band.t[0] if len(band) else 0.0
                s = fit_signal_curve(band, fh, float(row[f"m_{name}"]),
                                     [float(row[f"beta1_{name}"]), float(row[f"beta2_{name}"])],
                                     None if kernels is None else kernels[b],
                                     one_period_times(t0, fh))
                cs.append(flux_average_correction(s, float(row[f"m_{name}"])))
            cs = np.array(cs)
            corr = (float(cs.mean()), float(cs.std(ddof=1) / np.sqrt(cs.size)) if cs.size > 1 else 0.0)

        anchor = (rep.get("anchor_a0") or {}).get(name)
        if anchor is not None:
            av, ae = (anchor, 0.0) if np.ndim(anchor) == 0 else anchor
            d_a0 = (a_svi[0] - float(av), float(np.hypot(se_svi[0], float(ae))))
            d_mbar = (rep.get("delta_mbar") or {}).get(name, corr or 0.0)
            led = distance_modulus(d_a0, d_mbar,
                                   (rep.get("delta_Alambda") or {}).get(name, 0.0),
                                   (rep.get("delta_ct") or {}).get(name, 0.0),
                                   tuple(rep["mu_anchor"]))
            ledger_rows.append([name] + [x for t in (led.delta_a0, led.delta_mbar, led.delta_Alambda,
                                                     led.delta_ct, led.delta_mu, led.mu_anchor,
                                                     led.mu_target)
                                         for x in (_fmt(t.value), _fmt(t.err))])
        if corr is not None:
            metrics[f"flux_correction_{name}"] = {"mean": corr[0], "stderr": corr[1]}

    run.write_csv("plr.csv", ["band", "fit", "a0", "a1", "a2", "sigma", "se_a0", "se_a1",
                              "se_a2", "n_used"], plr_rows)
    if ledger_rows:
        cols = ["delta_a0", "delta_mbar", "delta_Alambda", "delta_ct", "delta_mu", "mu_anchor",
                "mu_target"]
        run.write_csv("ledger.csv", ["band"] + [f"{c}{s}" for c in cols for s in ("", "_err")],
                      ledger_rows)
    run.write_json("metrics.json", metrics)
    return run.written


def cmd_downsample_eval(run: Run):
    cfg = run.cfg
    ds = run.dataset()
    bands = list(ds.band_names)
    dcfg = cfg["downsample"]
    table = {s.name: s for s in DOWNSAMPLE_SETTINGS}
    settings = []
    for s in dcfg["settings"]:
        if isinstance(s, str):
            if s not in table:
                raise ValidationError(f"unknown downsampling setting {s!r}")
            settings.append(table[s])
        else:
            from .harness import DownsampleSetting
            settings.append(DownsampleSetting(s["name"], int(s["n_stars"]), tuple(s["caps"])))
    hp = hyperparams_for_bands(cfg, bands)
    kernels = kernels_from(cfg, bands)
    slopes = plr_slopes(cfg, bands)
    config = fit_config_from(cfg)
    full, rows = None, []
    for st in settings:
        if len(st.caps) != len(bands):
            raise ValidationError(f"setting {st.name} has {len(st.caps)} caps for {len(bands)} bands")
        r, full = downsample_eval(ds, st, int(dcfg["replications"]), hp, slopes, kernels, config,
                                  seed=int(dcfg["seed"]), threads=run.threads, full=full)
        rows += r
    run.write_csv("downsample.csv",
                  ["setting", "replication", "method", "band", "a0_sub", "a0_full", "shift",
                   "sigma_sub", "sigma_ref", "sigma_ratio", "seconds"],
                  [[r.setting, r.replication, r.method, r.band, _fmt(r.a0_sub), _fmt(r.a0_full),
                    _fmt(r.shift), _fmt(r.sigma_sub), _fmt(r.sigma_ref), _fmt(r.ratio),
                    _fmt(r.seconds)] for r in rows])
    log.info("median |shift|: SVI %.4f, MGLS %.4f",
             median_abs_shift(rows, "SVI"), median_abs_shift(rows, "MGLS"))
    return run.written


def cmd_periodogram(run: Run):
    ds = run.dataset()
    grid = grid_from(run.cfg)
    best = []
    for star in ds:
        try:
            pg = mgls(star, grid)
        except DomainError as exc:
            log.warning("%s", exc)
            best.append([star.star_id, "nan"])
            continue
        run.write_csv(f"periodograms/{star.star_id}.csv", ["f", "score"],
                      [[_fmt(f), _fmt(s)] for f, s in zip(grid.values, pg.score)])
        best.append([star.star_id, _fmt(pg.best_f)])
    run.write_csv("periodogram_best.csv", ["star_id", "f_best"], best)
    return run.written


COMMANDS = {"simulate": cmd_simulate, "init": cmd_init, "fit": cmd_fit, "report": cmd_report,
            "downsample-eval": cmd_downsample_eval, "periodogram": cmd_periodogram}


def build_parser():
    p = argparse.ArgumentParser(prog="miraplr", description=__doc__)
    p.add_argument("--version", action="version", version=f"miraplr {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("-c", "--config", help="YAML run configuration")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config key, e.g. fit.iterations=200")
        sp.add_argument("--threads", type=int, default=1, help="worker threads")
        sp.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, args.set)
        written = COMMANDS[args.command](Run(cfg, max(1, args.threads)))
        for pth in dict.fromkeys(written):
            log.info("wrote %s", pth)
        return 0
    except NumericalError as exc:
        print(f"miraplr: numerical failure: {exc}", file=sys.stderr)
        return 3
    except (ParseError, ValidationError, DomainError, MiraError, KeyError, ValueError,
            TypeError) as exc:
        print(f"miraplr: error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"miraplr: I/O error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
