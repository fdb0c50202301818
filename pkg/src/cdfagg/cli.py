"""Batch driver: ``cdfagg {simulate,aggregate,verify,report}``.

All outputs are CSV files under ``--out``:

simulate   forecasts.csv, observations.csv
aggregate  runs/<config>.csv, summary.csv, experts.csv, oracles.csv
verify     verify.csv, pvalues.csv, histograms.csv
report     regret.csv, weights.csv, scatter.csv, best.csv

Errors end with a nonzero exit code and one JSON line on stderr,
``{"error": <category>, "message": ...}``.
"""

from __future__ import annotations

import argparse
import json
import sys
import zlib
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from .aggregation import PanelCache, Strategy, StrategyConfig, oracle_best_constant, oracle_best_expert, regret, run_aggregation
from .config import ConfigError, RunConfig, load_config
from .experts.panel import ExpertPanel, PanelError
from .experts.panel_io import read_panels, write_panels
from .experts.synthetic import generate_scenario
from .reliability import SHAPES, build_histogram, decile_rank, flatness_decisions, jp_test, rank_among_members
from .stepwise_cdf import Provenance

FLOAT_FORMAT = "%.10g"

EXIT_CODES = {"internal": 1, "usage": 2, "config": 3, "input": 4, "io": 5}


class CliError(Exception):
    def __init__(self, category: str, message: str):
        self.category = category
        super().__init__(message)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError("usage", f"{self.prog}: {message}")


def _stable_seed(*parts) -> list[int]:
    return [p if isinstance(p, int) else zlib.crc32(str(p).encode()) for p in parts]


def _pmap(fn, items, jobs: int):
    """Ordered map, in a process pool when jobs > 1."""
    items = list(items)
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=min(jobs, len(items))) as ex:
        return list(ex.map(fn, items))


def _to_csv(df: pd.DataFrame, path: Path):
    path.parent.mkdir(parents=True, exist_ok=True)
    df.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")


def _read_csv(path: Path, what: str) -> pd.DataFrame:
    if not path.exists():
        raise CliError("input", f"missing {what}: {path}")
    return pd.read_csv(path, keep_default_na=False)


# --------------------------------------------------------------------------
# simulate


def _simulate_one(args):
    spec, loc, lead_index = args
    return generate_scenario(spec, loc, lead_index)


def cmd_simulate(cfg: RunConfig) -> list[Path]:
    if cfg.scenario is None:
        raise CliError("config", "simulate needs a scenario section")
    spec = cfg.scenario
    jobs = [(spec, loc, li) for li in range(len(spec.lead_times)) for loc in range(spec.locations)]
    panels = _pmap(_simulate_one, jobs, cfg.jobs)
    cfg.out.mkdir(parents=True, exist_ok=True)
    fpath, opath = cfg.out / "forecasts.csv", cfg.out / "observations.csv"
    write_panels(panels, fpath, opath)
    return [fpath, opath]


# --------------------------------------------------------------------------
# aggregate


def _load_panels(cfg: RunConfig) -> list[ExpertPanel]:
    for p in (cfg.forecasts_path, cfg.observations_path):
        if not Path(p).exists():
            raise CliError("input", f"missing panel file {p}; run simulate or set input paths")
    return read_panels(str(cfg.forecasts_path), str(cfg.observations_path))


def aggregate_panel(panel: ExpertPanel, configs, seed: int) -> dict:
    """Every strategy configuration on one panel, plus both oracles."""
    cache = PanelCache(panel)
    best_e, _ = oracle_best_expert(cache.expert_losses)
    const = oracle_best_constant(panel, cache)
    runs = {}
    for c in configs:
        run = run_aggregation(panel, c, cache, oracles=False, keep_forecasts=True)
        rng = np.random.default_rng(_stable_seed(seed, c.label, panel.location_id, panel.lead_time_h))
        ranks = np.array([decile_rank(f, float(y), rng) for f, y in zip(run.forecasts, panel.observations)])
        runs[c.label] = {
            "weights": run.weights,
            "loss": run.losses,
            "regret_best_expert": regret(run.losses, cache.expert_losses[:, best_e]),
            "regret_best_constant": regret(run.losses, const.losses),
            "rank": ranks,
        }
    return {
        "location_id": panel.location_id,
        "lead_time_h": panel.lead_time_h,
        "dates": [d.isoformat() for d in panel.dates],
        "expert_losses": cache.expert_losses,
        "best_expert": best_e,
        "best_constant": const.weights,
        "best_constant_loss": const.loss,
        "runs": runs,
    }


def _aggregate_one(args):
    return aggregate_panel(*args)


def cmd_aggregate(cfg: RunConfig) -> list[Path]:
    panels = _load_panels(cfg)
    names = panels[0].expert_names
    configs = cfg.grid.configs()
    results = _pmap(_aggregate_one, [(p, configs, cfg.seed) for p in panels], cfg.jobs)
    wcols = [f"w_{n}" for n in names]
    written = []
    summary = []
    for c in configs:
        frames = []
        for r in results:
            d = r["runs"][c.label]
            T = len(r["dates"])
            df = pd.DataFrame({"date": r["dates"], "location_id": r["location_id"], "lead_time_h": r["lead_time_h"], "t": np.arange(1, T + 1)})
            df = pd.concat([df, pd.DataFrame(d["weights"], columns=wcols)], axis=1)
            for k in ("loss", "regret_best_expert", "regret_best_constant", "rank"):
                df[k] = d[k]
            frames.append(df)
        run_df = pd.concat(frames, ignore_index=True)
        path = cfg.out / "runs" / f"{c.label}.csv"
        _to_csv(run_df, path)
        written.append(path)
        for lead, g in run_df.groupby("lead_time_h", sort=True):
            summary.append(
                {
                    "config": c.label,
                    "kind": c.kind.value,
                    "window": "all" if c.window is None else c.window,
                    "log10_eta": np.log10(c.eta) if c.eta is not None else np.nan,
                    "lead_time_h": lead,
                    "mean_crps": float(g["loss"].mean()),
                }
            )
    _to_csv(pd.DataFrame(summary), cfg.out / "summary.csv")
    experts, oracles = [], []
    for r in results:
        for e, n in enumerate(names):
            experts.append({"expert": n, "lead_time_h": r["lead_time_h"], "location_id": r["location_id"], "mean_crps": float(r["expert_losses"][:, e].mean())})
        T = len(r["dates"])
        row = {
            "lead_time_h": r["lead_time_h"],
            "location_id": r["location_id"],
            "best_expert": names[r["best_expert"]],
            "best_expert_mean_crps": float(r["expert_losses"][:, r["best_expert"]].mean()),
            "best_constant_mean_crps": r["best_constant_loss"] / T,
        }
        row.update(dict(zip(wcols, r["best_constant"])))
        oracles.append(row)
    ex = pd.DataFrame(experts).groupby(["expert", "lead_time_h"], sort=False)["mean_crps"].mean().reset_index()
    _to_csv(ex, cfg.out / "experts.csv")
    _to_csv(pd.DataFrame(oracles), cfg.out / "oracles.csv")
    return written + [cfg.out / "summary.csv", cfg.out / "experts.csv", cfg.out / "oracles.csv"]


# --------------------------------------------------------------------------
# verify


def expert_ranks(panel: ExpertPanel, e: int, seed: int) -> tuple[np.ndarray, int]:
    """Member ranks (k = M+1) for raw ensembles, decile ranks (k = 10) otherwise."""
    name = panel.expert_names[e]
    rng = np.random.default_rng(_stable_seed(seed, name, panel.location_id, panel.lead_time_h))
    series = panel.forecasts[e]
    if series[0].provenance is Provenance.RANDOM_SAMPLE:
        sizes = {c.size for c in series}
        if len(sizes) != 1:
            raise CliError("input", f"expert {name!r} changes member count over time")
        r = [rank_among_members(c, float(y), rng) for c, y in zip(series, panel.observations)]
        return np.array(r), sizes.pop() + 1
    return np.array([decile_rank(c, float(y), rng) for c, y in zip(series, panel.observations)]), 10


def _verify_system(system, lead, locs, hists, alpha, rows, prows, hrows):
    dec = flatness_decisions(hists, alpha)
    flat = dec.flat()
    rows.append({"system": system, "lead_time": lead, "flat_proportion": float(flat.mean()), "n_locations": len(hists)})
    rejected = np.zeros(dec.pvalues.size, dtype=bool)
    rejected[list(dec.rejected)] = True
    rejected = rejected.reshape(dec.pvalues.shape)
    for i, (loc, h) in enumerate(zip(locs, hists)):
        rep = jp_test(h)
        pr = {"system": system, "lead_time": lead, "location_id": loc, "n": h.n, "k": h.k, "chi2_stat": rep.chi2_stat, "chi2_pvalue": rep.chi2_pvalue}
        for j, s in enumerate(SHAPES):
            pr[f"{s}_stat"] = rep.statistics[s]
            pr[f"{s}_pvalue"] = rep.pvalues[s]
            pr[f"{s}_rejected"] = int(rejected[i, j])
        pr["flat"] = int(flat[i])
        prows.append(pr)
        for b, cnt in enumerate(h.counts, 1):
            hrows.append({"system": system, "lead_time": lead, "location_id": loc, "rank": b, "count": int(cnt)})


def _expert_ranks_one(args):
    panel, seed = args
    return [expert_ranks(panel, e, seed) for e in range(panel.E)]


def cmd_verify(cfg: RunConfig) -> list[Path]:
    panels = _load_panels(cfg)
    run_dir = cfg.out / "runs"
    run_files = sorted(run_dir.glob("*.csv")) if run_dir.exists() else []
    if not run_files:
        raise CliError("input", f"no aggregation results in {run_dir}; run aggregate first")
    rows, prows, hrows = [], [], []
    names = panels[0].expert_names
    per_panel = _pmap(_expert_ranks_one, [(p, cfg.seed) for p in panels], cfg.jobs)
    leads = sorted({p.lead_time_h for p in panels})
    for e, name in enumerate(names):
        for lead in leads:
            idx = [i for i, p in enumerate(panels) if p.lead_time_h == lead]
            hists = [build_histogram(*per_panel[i][e]) for i in idx]
            _verify_system(name, lead, [panels[i].location_id for i in idx], hists, cfg.alpha, rows, prows, hrows)
    for f in run_files:
        df = pd.read_csv(f, usecols=["location_id", "lead_time_h", "rank"], dtype={"location_id": str}, keep_default_na=False)
        for lead, g in df.groupby("lead_time_h", sort=True):
            locs, hists = [], []
            for loc, gl in g.groupby("location_id", sort=True):
                locs.append(loc)
                hists.append(build_histogram(gl["rank"].to_numpy(), 10))
            _verify_system(f.stem, int(lead), locs, hists, cfg.alpha, rows, prows, hrows)
    paths = [cfg.out / "verify.csv", cfg.out / "pvalues.csv", cfg.out / "histograms.csv"]
    for df, p in zip((rows, prows, hrows), paths):
        _to_csv(pd.DataFrame(df), p)
    return paths


# --------------------------------------------------------------------------
# report


def cmd_report(cfg: RunConfig) -> list[Path]:
    run_dir = cfg.out / "runs"
    run_files = sorted(run_dir.glob("*.csv")) if run_dir.exists() else []
    if not run_files:
        raise CliError("input", f"no aggregation results in {run_dir}; run aggregate first")
    summary = _read_csv(cfg.out / "summary.csv", "summary (run aggregate)")
    verify = _read_csv(cfg.out / "verify.csv", "verification table (run verify)")
    regret_frames, weight_frames = [], []
    for f in run_files:
        df = pd.read_csv(f, dtype={"location_id": str}, keep_default_na=False)
        wcols = [c for c in df.columns if c.startswith("w_")]
        g = df.groupby(["lead_time_h", "t"], sort=True)
        first = g["date"].first()
        r = g[["regret_best_expert", "regret_best_constant"]].mean()
        r.insert(0, "date", first)
        r.insert(0, "system", f.stem)
        regret_frames.append(r.reset_index())
        w = g[wcols].mean()
        w.insert(0, "date", first)
        w.insert(0, "system", f.stem)
        weight_frames.append(w.reset_index())
    order = ["system", "lead_time_h", "t", "date"]
    reg = pd.concat(regret_frames, ignore_index=True)
    reg = reg[order + [c for c in reg.columns if c not in order]]
    wts = pd.concat(weight_frames, ignore_index=True)
    wts = wts[order + [c for c in wts.columns if c not in order]]
    flat = verify.rename(columns={"system": "config", "lead_time": "lead_time_h"})[["config", "lead_time_h", "flat_proportion"]]
    scatter = summary.merge(flat, on=["config", "lead_time_h"], how="left")
    if scatter["flat_proportion"].isna().any() or (scatter["flat_proportion"] == "").any():
        raise CliError("input", "verify.csv does not cover every configuration; rerun verify")
    best = []
    for lead, g in scatter.groupby("lead_time_h", sort=True):
        for kind in ["ALL"] + [k.value for k in Strategy]:
            gk = g if kind == "ALL" else g[g["kind"] == kind]
            if gk.empty:
                continue
            skill = gk.sort_values(["mean_crps", "config"], kind="stable").iloc[0]
            reli = gk.sort_values(["flat_proportion", "mean_crps", "config"], ascending=[False, True, True], kind="stable").iloc[0]
            for crit, r in (("min_mean_crps", skill), ("max_flat_proportion", reli)):
                best.append({"criterion": crit, "kind": kind, "lead_time_h": lead, "config": r["config"], "mean_crps": r["mean_crps"], "flat_proportion": r["flat_proportion"]})
    paths = [cfg.out / n for n in ("regret.csv", "weights.csv", "scatter.csv", "best.csv")]
    for df, p in zip((reg, wts, scatter, pd.DataFrame(best)), paths):
        _to_csv(df, p)
    return paths


# --------------------------------------------------------------------------


COMMANDS = {"simulate": cmd_simulate, "aggregate": cmd_aggregate, "verify": cmd_verify, "report": cmd_report}


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="YAML run configuration (env CDFAGG_CONFIG)")
    common.add_argument("--seed", type=int, metavar="N", help="random seed (env CDFAGG_SEED)")
    common.add_argument("--out", metavar="DIR", help="output directory (env CDFAGG_OUT)")
    common.add_argument("--jobs", type=int, metavar="N", help="worker processes (env CDFAGG_JOBS)")
    common.add_argument("--alpha", type=float, metavar="A", help="false discovery rate for verify (env CDFAGG_ALPHA)")
    parser = _Parser(prog="cdfagg", description="Online aggregation of probabilistic forecasts")
    parser.add_argument("--version", action="version", version=f"cdfagg {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("simulate", parents=[common], help="generate a synthetic expert panel")
    sub.add_parser("aggregate", parents=[common], help="run the strategy grid on the panel")
    sub.add_parser("verify", parents=[common], help="rank histograms and flatness tests")
    sub.add_parser("report", parents=[common], help="plot-ready regret, weight and scatter tables")
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        cfg = load_config(args.config, {"seed": args.seed, "out": args.out, "jobs": args.jobs, "alpha": args.alpha})
        for p in COMMANDS[args.command](cfg):
            print(p)
        return 0
    except CliError as exc:
        category, msg = exc.category, str(exc)
    except ConfigError as exc:
        category, msg = "config", str(exc)
    except PanelError as exc:
        category, msg = "input", str(exc)
    except OSError as exc:
        category, msg = "io", f"{exc.strerror or exc}: {exc.filename}" if exc.filename else str(exc)
    except Exception as exc:  # pragma: no cover - last resort
        category, msg = "internal", f"{type(exc).__name__}: {exc}"
    print(json.dumps({"error": category, "message": msg}), file=sys.stderr)
    return EXIT_CODES[category]


if __name__ == "__main__":
    sys.exit(main())
