"""Command-line pipeline driver.

Runs the stages ingest -> cluster -> classify-sp -> screen -> estimate ->
costs -> counterfactual -> welfare -> report against a shared output
directory, each stage reading the previous stage's artifact and writing its
own, so any stage can be re-run in isolation.  A `synth` stage generates a
raw panel with known parameters for end-to-end checks.

Every output file embeds the config hash and the seed.  The hash covers the
substantive config only (paths and worker counts are excluded), so the same
config and seed produce byte-identical outputs wherever they are written.

Exit codes: 0 on success, 2 on validation problems (bad input, bad config,
missing prerequisite artifacts), 3 on numerical non-convergence.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__, dataio, estimation, report
from .demand import DemandContext, DemandParams, NestStructure, TasteDraws
from .errors import (
    ConductSimError,
    EquilibriumError,
    NumericalError,
    PrerequisiteError,
    ValidationError,
)
from .estimation import EstimationConfig, result_from_dict, result_to_dict
from .supply import (
    SCENARIO_BASELINE,
    SCENARIOS,
    build_conduct,
    recover_marginal_costs,
    solve_equilibrium,
)
from .welfare import WelfareSummary, aggregate, market_welfare

logger = logging.getLogger("conductsim.cli")

STAGES = (
    "synth",
    "ingest",
    "cluster",
    "classify-sp",
    "screen",
    "estimate",
    "costs",
    "counterfactual",
    "welfare",
    "report",
)

# excluded from the config hash: where files live and how many workers run
# must not change what gets computed
NON_SUBSTANTIVE_KEYS = ("input", "manifest", "output_dir", "jobs")


@dataclass
class PipelineConfig:
    input: str = None
    manifest: str = None
    output_dir: str = "out"
    seed: int = 0
    n_draws: int = 500
    k_clusters: int = dataio.DEFAULT_K_CLUSTERS
    scenarios: tuple = SCENARIOS
    mode: str = dataio.MODE_WITH_HOTELS
    bootstrap_n: int = estimation.DEFAULT_BOOTSTRAP_DRAWS
    tau: float = 0.03
    cs_policy: str = "exclude-draw"
    jobs: int = 1
    synth: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.mode not in dataio.MODES:
            raise ValidationError(f"mode must be one of {dataio.MODES}, got {self.mode!r}")
        self.scenarios = tuple(self.scenarios)
        for s in self.scenarios:
            if s not in SCENARIOS:
                raise ValidationError(f"unknown scenario {s!r}; choose from {SCENARIOS}")
        if SCENARIO_BASELINE not in self.scenarios:
            raise ValidationError("the scenario list must include the baseline")
        if self.jobs < 1:
            raise ValidationError("jobs must be at least 1")
        if self.seed < 0:
            raise ValidationError("seed must be non-negative")


def load_config(path=None, overrides=None) -> PipelineConfig:
    """Defaults, then the JSON config file, then CLI overrides."""
    data = {}
    if path is not None:
        try:
            with open(path) as fh:
                data = json.load(fh)
        except FileNotFoundError:
            raise ValidationError(f"config file not found: {path}")
        except json.JSONDecodeError as exc:
            raise ValidationError(f"config file {path} is not valid JSON: {exc}")
    known = {f.name for f in dataclasses.fields(PipelineConfig)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ValidationError(f"unknown config keys: {', '.join(unknown)}")
    for key, value in (overrides or {}).items():
        if value is not None:
            data[key] = value
    try:
        return PipelineConfig(**data)
    except TypeError as exc:
        raise ValidationError(f"bad config: {exc}")


def config_hash(cfg: PipelineConfig) -> str:
    payload = {
        k: v
        for k, v in dataclasses.asdict(cfg).items()
        if k not in NON_SUBSTANTIVE_KEYS
    }
    blob = json.dumps(payload, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


class Paths:
    """Artifact locations inside one output directory."""

    def __init__(self, output_dir):
        self.root = Path(output_dir)
        self.synthetic = self.root / "synthetic.csv"
        self.truth = self.root / "truth.json"
        self.dataset = self.root / "dataset.csv"
        self.clustered = self.root / "clustered.csv"
        self.cluster_model = self.root / "cluster_model.json"
        self.flagged = self.root / "flagged.csv"
        self.sp_summary = self.root / "sp_summary.json"
        self.screened = self.root / "screened.csv"
        self.screen_summary = self.root / "screen_summary.json"
        self.estimate = self.root / "estimate.json"
        self.bootstrap = self.root / "bootstrap.json"
        self.costs = self.root / "costs.csv"
        self.counterfactual = self.root / "counterfactual.csv"
        self.welfare = self.root / "welfare.csv"
        self.welfare_summary = self.root / "welfare_summary.json"
        self.report_dir = self.root / "report"


def _require(path: Path, producer: str) -> Path:
    if not path.exists():
        raise PrerequisiteError(
            f"missing artifact {path}; run `conductsim {producer}` first"
        )
    return path


def _meta(cfg) -> dict:
    return {"config_hash": config_hash(cfg), "seed": cfg.seed, "version": __version__}


def _write_json(path: Path, payload: dict, cfg):
    body = {**_meta(cfg), **payload}
    path.write_text(json.dumps(body, indent=2, sort_keys=True) + "\n")


def _read_json(path: Path) -> dict:
    with open(path) as fh:
        return json.load(fh)


def _load_markets(path: Path, producer: str) -> list:
    df, _ = dataio.read_table(_require(path, producer))
    markets = dataio.frame_to_dataset(df)
    if not markets:
        raise ValidationError(f"artifact {path} contains no usable rows")
    return markets


# ---------------------------------------------------------------------------
# stages
# ---------------------------------------------------------------------------


def stage_synth(cfg, paths):
    overrides = dict(cfg.synth)
    overrides.setdefault("seed", cfg.seed)
    scfg = dataio.SynthConfig(**overrides)
    markets, truth = dataio.synthesize(scfg)
    raw = dataio.dataset_to_raw_frame(markets)
    dataio.write_table(paths.synthetic, raw, meta=_meta(cfg))
    _write_json(paths.truth, {"truth": truth, "synth_config": dataclasses.asdict(scfg)}, cfg)
    logger.info("synth: wrote %d rows to %s", len(raw), paths.synthetic)


def stage_ingest(cfg, paths):
    if cfg.input is None:
        raise ValidationError("ingest needs an input CSV; pass --input or set it in the config")
    source = Path(cfg.input)
    if not source.exists():
        raise ValidationError(f"input file not found: {source}")
    markets = dataio.ingest(source, manifest=cfg.manifest)
    dataio.write_table(paths.dataset, dataio.dataset_to_frame(markets), meta=_meta(cfg))
    logger.info("ingest: %d markets written to %s", len(markets), paths.dataset)


def stage_cluster(cfg, paths):
    markets = _load_markets(paths.dataset, "ingest")
    markets, model = dataio.kmeans_prices(markets, k=cfg.k_clusters, seed=cfg.seed)
    dataio.write_table(paths.clustered, dataio.dataset_to_frame(markets), meta=_meta(cfg))
    _write_json(
        paths.cluster_model,
        {
            "k": model.k,
            "centroids": [float(c) for c in model.centroids],
            "inertia": float(model.inertia),
            "n_init": model.n_init,
        },
        cfg,
    )


def stage_classify_sp(cfg, paths):
    markets = _load_markets(paths.clustered, "cluster")
    markets, summary = dataio.classify_sp(markets)
    dataio.write_table(paths.flagged, dataio.dataset_to_frame(markets), meta=_meta(cfg))
    _write_json(
        paths.sp_summary,
        {
            "n_listings": summary.n_listings,
            "n_sp": summary.n_sp,
            "n_single_date": summary.n_single_date,
        },
        cfg,
    )


def stage_screen(cfg, paths):
    markets = _load_markets(paths.flagged, "classify-sp")
    markets = dataio.select_mode(markets, cfg.mode)
    markets, summary = dataio.apply_screens(markets)
    markets = dataio.assign_nests(markets, mode=cfg.mode)
    dataio.write_table(paths.screened, dataio.dataset_to_frame(markets), meta=_meta(cfg))
    _write_json(
        paths.screen_summary,
        {
            "mode": cfg.mode,
            "n_dropped_products": summary.n_dropped_products,
            "n_dropped_markets": summary.n_dropped_markets,
            "n_markets": len(markets),
            "n_obs": int(sum(m.n_products for m in markets)),
        },
        cfg,
    )


def stage_estimate(cfg, paths):
    markets = _load_markets(paths.screened, "screen")
    est_cfg = EstimationConfig(n_draws=cfg.n_draws, draw_seed=cfg.seed, jobs=cfg.jobs)
    result = estimation.estimate(markets, est_cfg)
    _write_json(paths.estimate, result_to_dict(result), cfg)
    boot = estimation.parametric_bootstrap(result, n=cfg.bootstrap_n, seed=cfg.seed)
    _write_json(
        paths.bootstrap,
        {
            "labels": boot.labels,
            "n_draws": boot.n_draws,
            "n_clipped_rho": boot.n_clipped_rho,
            "param_cis": {k: [float(a), float(b)] for k, (a, b) in boot.param_cis.items()},
            "param_sds": {
                lab: float(boot.draws[:, i].std(ddof=1))
                for i, lab in enumerate(boot.labels)
            },
        },
        cfg,
    )
    logger.info(
        "estimate: objective %.3e, price %.4f, sigma %.4f, rho %.4f",
        result.objective,
        result.alpha,
        result.sigma,
        result.rho,
    )


def _context_for(market, alpha, sigma, rho, delta, n_draws, draw_seed) -> DemandContext:
    return DemandContext(
        params=DemandParams(alpha=alpha, sigma=sigma, rho=rho),
        nests=NestStructure(groups=market.nest),
        draws=TasteDraws.simulate(n_draws=n_draws, seed=draw_seed),
        delta_ref=np.asarray(delta, dtype=float),
        prices_ref=market.price,
        market_size=market.market_size,
    )


def stage_costs(cfg, paths):
    markets = _load_markets(paths.screened, "screen")
    result = result_from_dict(_read_json(_require(paths.estimate, "estimate")))
    rows = []
    for m in markets:
        delta = result.delta_for(m)
        context = _context_for(
            m, result.alpha, result.sigma, result.rho, delta, result.n_draws, result.draw_seed
        )
        conduct = build_conduct(SCENARIO_BASELINE, m.host_id, m.airbnb, m.sp, tau=cfg.tau)
        try:
            rec = recover_marginal_costs(context, conduct)
        except NumericalError as exc:
            raise NumericalError(f"stage costs, market {m.market_id}: {exc}") from exc
        sp_gap = np.zeros(m.n_products)
        sp_gap[m.sp] = rec.sp_gaps
        rows.append(
            pd.DataFrame(
                {
                    "market_id": np.repeat(m.market_id, m.n_products),
                    "date": np.repeat(m.date, m.n_products),
                    "listing_id": m.listing_id,
                    "host_id": m.host_id,
                    "airbnb": m.airbnb,
                    "sp": m.sp,
                    "nest": m.nest,
                    "price": m.price,
                    "share": m.shares,
                    "delta_hat": delta,
                    "marginal_cost": rec.marginal_costs,
                    "markup": rec.markups,
                    "negative_mc": rec.negative,
                    "sp_cost_gap": sp_gap,
                }
            )
        )
    frame = pd.concat(rows, ignore_index=True)
    dataio.write_table(paths.costs, frame, meta=_meta(cfg))
    n_neg = int(frame["negative_mc"].sum())
    if n_neg:
        logger.warning("costs: %d recovered marginal costs are negative", n_neg)


def _solve_market_scenarios(payload):
    """Solve every scenario for one market; used by the worker pool."""
    m = payload["market"]
    context = _context_for(
        m,
        payload["alpha"],
        payload["sigma"],
        payload["rho"],
        payload["delta"],
        payload["n_draws"],
        payload["draw_seed"],
    )
    mc = np.asarray(payload["mc"], dtype=float)
    out = []
    prices0 = None
    for scenario in payload["scenarios"]:
        conduct = build_conduct(
            scenario, m.host_id, m.airbnb, m.sp, marginal_costs=mc, tau=payload["tau"]
        )
        try:
            eq = solve_equilibrium(conduct, context, prices0=prices0)
        except EquilibriumError as exc:
            raise EquilibriumError(
                f"stage counterfactual, market {m.market_id}, scenario {scenario}: {exc}",
                residual_trace=exc.residual_trace,
            ) from exc
        if scenario == SCENARIO_BASELINE:
            prices0 = eq.prices  # warm-start the next scenario
        out.append(
            {
                "market_id": m.market_id,
                "scenario": scenario,
                "frame": pd.DataFrame(
                    {
                        "market_id": np.repeat(m.market_id, m.n_products),
                        "scenario": np.repeat(scenario, m.n_products),
                        "listing_id": m.listing_id,
                        "price": eq.prices,
                        "share": eq.shares,
                        "quantity": eq.quantities,
                        "solver_residual": np.repeat(eq.residual, m.n_products),
                        "solver_iterations": np.repeat(eq.iterations, m.n_products),
                        "solver_method": np.repeat(eq.method, m.n_products),
                    }
                ),
            }
        )
    return out


def _market_payloads(cfg, paths):
    markets = _load_markets(paths.screened, "screen")
    result = result_from_dict(_read_json(_require(paths.estimate, "estimate")))
    costs, _ = dataio.read_table(_require(paths.costs, "costs"))
    by_market = dict(tuple(costs.groupby("market_id", sort=True)))
    payloads = []
    for m in markets:
        try:
            g = by_market[m.market_id].set_index("listing_id")
        except KeyError:
            raise PrerequisiteError(
                f"costs artifact {paths.costs} has no rows for market {m.market_id}; re-run `conductsim costs`"
            )
        delta = g.loc[m.listing_id, "delta_hat"].to_numpy(dtype=float)
        mc = g.loc[m.listing_id, "marginal_cost"].to_numpy(dtype=float)
        payloads.append(
            {
                "market": m,
                "delta": delta,
                "mc": mc,
                "alpha": result.alpha,
                "sigma": result.sigma,
                "rho": result.rho,
                "n_draws": result.n_draws,
                "draw_seed": result.draw_seed,
                "scenarios": cfg.scenarios,
                "tau": cfg.tau,
            }
        )
    return payloads


def stage_counterfactual(cfg, paths):
    payloads = _market_payloads(cfg, paths)
    if cfg.jobs > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            solved = list(pool.map(_solve_market_scenarios, payloads))
    else:
        solved = [_solve_market_scenarios(p) for p in payloads]
    frames = [entry["frame"] for per_market in solved for entry in per_market]
    frame = pd.concat(frames, ignore_index=True)
    frame = frame.sort_values(["market_id", "scenario", "listing_id"], kind="stable", ignore_index=True)
    dataio.write_table(paths.counterfactual, frame, meta=_meta(cfg))
    logger.info(
        "counterfactual: solved %d markets x %d scenarios", len(payloads), len(cfg.scenarios)
    )


def stage_welfare(cfg, paths):
    payloads = _market_payloads(cfg, paths)
    cf, _ = dataio.read_table(_require(paths.counterfactual, "counterfactual"))
    solved = dict(tuple(cf.groupby(["market_id", "scenario"], sort=True)))

    rows = []
    pairs = []
    for payload in payloads:
        m = payload["market"]
        context = _context_for(
            m,
            payload["alpha"],
            payload["sigma"],
            payload["rho"],
            payload["delta"],
            payload["n_draws"],
            payload["draw_seed"],
        )
        per_scenario = {}
        for scenario in cfg.scenarios:
            try:
                g = solved[(m.market_id, scenario)].set_index("listing_id")
            except KeyError:
                raise PrerequisiteError(
                    f"counterfactual artifact {paths.counterfactual} has no rows for "
                    f"market {m.market_id}, scenario {scenario}; re-run `conductsim counterfactual`"
                )
            prices = g.loc[m.listing_id, "price"].to_numpy(dtype=float)
            conduct = build_conduct(
                scenario, m.host_id, m.airbnb, m.sp, marginal_costs=payload["mc"], tau=cfg.tau
            )
            w = market_welfare(
                m.market_id, m.date, context, conduct, prices, policy=cfg.cs_policy
            )
            per_scenario[scenario] = w
            rows.append(
                {
                    "market_id": m.market_id,
                    "date": m.date,
                    "scenario": scenario,
                    "consumer_surplus": w.consumer_surplus,
                    "producer_surplus": w.producer_surplus,
                    "commission": w.commission,
                    "social_welfare": w.social_welfare,
                    "n_bad_draws": w.n_bad_draws,
                }
            )
        for scenario in cfg.scenarios:
            if scenario != SCENARIO_BASELINE:
                pairs.append((per_scenario[SCENARIO_BASELINE], per_scenario[scenario]))

    dataio.write_table(paths.welfare, pd.DataFrame(rows), meta=_meta(cfg))
    summary = aggregate(pairs)
    _write_json(paths.welfare_summary, dataclasses.asdict(summary), cfg)
    logger.info(
        "welfare: mean social-welfare change %.3f%% across %d markets",
        summary.mean_pct_change["social_welfare"],
        summary.n_markets,
    )


def _summary_from_json(data: dict) -> WelfareSummary:
    kwargs = {f.name: data[f.name] for f in dataclasses.fields(WelfareSummary)}
    return WelfareSummary(**kwargs)


def stage_report(cfg, paths):
    result_dict = _read_json(_require(paths.estimate, "estimate"))
    costs, _ = dataio.read_table(_require(paths.costs, "costs"))
    cf, _ = dataio.read_table(_require(paths.counterfactual, "counterfactual"))
    summary = _summary_from_json(_read_json(_require(paths.welfare_summary, "welfare")))

    paths.report_dir.mkdir(parents=True, exist_ok=True)
    meta = _meta(cfg)
    png_meta = {
        "Software": "conductsim",
        "Comment": f"config_hash={meta['config_hash']} seed={meta['seed']}",
    }

    tables = {
        "demand_table.csv": report.demand_table(result_dict),
        "costs_table.csv": report.costs_table(costs),
        "commission_table.csv": report.commission_table(summary),
        "welfare_table.csv": report.welfare_table(summary),
    }
    changes = report.price_profit_changes(cf, costs)
    by_market = report.sp_price_change_by_market(changes, costs)
    tables["fig_price_profit_changes.csv"] = changes
    tables["fig_sp_price_change.csv"] = by_market
    for name, frame in tables.items():
        dataio.write_table(paths.report_dir / name, frame, meta=meta)

    report.render_price_profit_scatter(
        changes, paths.report_dir / "price_profit_scatter.png", metadata=png_meta
    )
    report.render_sp_price_change(
        by_market, paths.report_dir / "sp_price_change.png", metadata=png_meta
    )

    headline = {
        "n_markets": summary.n_markets,
        "mean_pct_change": summary.mean_pct_change,
        "annual_base": {k: float(v) for k, v in summary.annual_base.items()},
        "annual_counterfactual": {
            k: float(v) for k, v in summary.annual_counterfactual.items()
        },
        "price": result_dict["theta"][result_dict["labels"].index("price")],
        "sigma": result_dict["theta"][result_dict["labels"].index("sigma")],
        "rho": result_dict["theta"][result_dict["labels"].index("rho")],
        "files": sorted(tables) + ["price_profit_scatter.png", "sp_price_change.png"],
    }
    _write_json(paths.report_dir / "summary.json", headline, cfg)
    logger.info("report: wrote %d files to %s", len(headline["files"]) + 1, paths.report_dir)


STAGE_FUNCTIONS = {
    "synth": stage_synth,
    "ingest": stage_ingest,
    "cluster": stage_cluster,
    "classify-sp": stage_classify_sp,
    "screen": stage_screen,
    "estimate": stage_estimate,
    "costs": stage_costs,
    "counterfactual": stage_counterfactual,
    "welfare": stage_welfare,
    "report": stage_report,
}


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="conductsim",
        description="Structural simulation of platform pricing conduct in lodging markets.",
    )
    parser.add_argument(
        "stages",
        nargs="+",
        choices=STAGES,
        metavar="stage",
        help=f"one or more of: {', '.join(STAGES)}; run in the order given",
    )
    parser.add_argument("--config", help="JSON file with pipeline settings")
    parser.add_argument("--input", help="raw listings CSV (ingest stage)")
    parser.add_argument("--manifest", help="ingest manifest JSON with column mappings")
    parser.add_argument("--output-dir", help="directory for stage artifacts")
    parser.add_argument("--seed", type=int, help="seed for draws, k-means, and bootstrap")
    parser.add_argument("--jobs", type=int, help="worker processes for per-market solves")
    parser.add_argument(
        "--scenario",
        action="append",
        dest="scenarios",
        choices=SCENARIOS,
        help="conduct scenario to solve; repeatable (default: both)",
    )
    parser.add_argument("--mode", choices=dataio.MODES, help="market definition")
    parser.add_argument("--n-draws", type=int, dest="n_draws", help="simulation draws")
    parser.add_argument(
        "--bootstrap-n", type=int, dest="bootstrap_n", help="parametric bootstrap draws"
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    return parser


def _configure_logging():
    level_name = os.environ.get("CONDUCTSIM_LOG", "WARNING").upper()
    level = getattr(logging, level_name, None)
    if not isinstance(level, int):
        level = logging.WARNING
    logging.basicConfig(
        level=level, format="%(levelname)s %(name)s: %(message)s", force=True
    )


def main(argv=None) -> int:
    _configure_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    overrides = {
        key: getattr(args, key)
        for key in (
            "input",
            "manifest",
            "output_dir",
            "seed",
            "jobs",
            "scenarios",
            "mode",
            "n_draws",
            "bootstrap_n",
        )
    }
    try:
        cfg = load_config(args.config, overrides)
        paths = Paths(cfg.output_dir)
        paths.root.mkdir(parents=True, exist_ok=True)
        for stage in args.stages:
            logger.info("running stage %s", stage)
            STAGE_FUNCTIONS[stage](cfg, paths)
    except NumericalError as exc:
        print(f"conductsim: numerical failure: {exc}", file=sys.stderr)
        return 3
    except ValidationError as exc:
        print(f"conductsim: {exc}", file=sys.stderr)
        return 2
    except ConductSimError as exc:  # safety net for future subclasses
        print(f"conductsim: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
