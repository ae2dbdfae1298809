"""Tests for the command-line pipeline driver."""

import hashlib
import json
import logging

import numpy as np
import pytest

from conductsim import cli, dataio, estimation
from conductsim.errors import ValidationError

# gentler price-coefficient spread than the headline estimates: with the
# wide spread, a few simulation draws get positive price coefficients and
# thin synthetic markets then have no pricing equilibrium at zero cost
PIPELINE_SYNTH = {
    "n_wards": 3,
    "n_dates": 6,
    "min_listings": 6,
    "max_listings": 8,
    "sigma": -0.18,
    "n_draws": 100,
    "draw_seed": 7,
}


def pipeline_config(tmp_path, name="out", **extra):
    cfg = {
        "output_dir": str(tmp_path / name),
        "seed": 11,
        "n_draws": 80,
        "bootstrap_n": 50,
        "synth": dict(PIPELINE_SYNTH),
    }
    cfg.update(extra)
    path = tmp_path / f"{name}.json"
    path.write_text(json.dumps(cfg))
    return path, tmp_path / name


def run_pipeline(cfgfile, out, jobs=1):
    rc = cli.main(["synth", "--config", str(cfgfile)])
    assert rc == 0
    rc = cli.main(
        [
            "ingest",
            "cluster",
            "classify-sp",
            "screen",
            "estimate",
            "costs",
            "counterfactual",
            "welfare",
            "report",
            "--config",
            str(cfgfile),
            "--input",
            str(out / "synthetic.csv"),
            "--jobs",
            str(jobs),
        ]
    )
    assert rc == 0


def tree_hashes(root):
    return {
        str(p.relative_to(root)): hashlib.sha256(p.read_bytes()).hexdigest()
        for p in sorted(root.rglob("*"))
        if p.is_file()
    }


@pytest.fixture(scope="module")
def pipeline_run(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("pipeline")
    cfgfile, out = pipeline_config(tmp)
    run_pipeline(cfgfile, out)
    return cfgfile, out


# ---------------------------------------------------------------------------
# config handling
# ---------------------------------------------------------------------------


def test_config_hash_ignores_paths_and_jobs():
    a = cli.PipelineConfig(input="a.csv", output_dir="x", jobs=1, seed=3)
    b = cli.PipelineConfig(input="b.csv", output_dir="y", jobs=8, seed=3)
    c = cli.PipelineConfig(input="a.csv", output_dir="x", jobs=1, seed=4)
    assert cli.config_hash(a) == cli.config_hash(b)
    assert cli.config_hash(a) != cli.config_hash(c)


def test_load_config_layers_file_and_overrides(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"seed": 5, "mode": "only-airbnb"}))
    cfg = cli.load_config(path, {"seed": 9, "jobs": None})
    assert cfg.seed == 9  # CLI override wins
    assert cfg.mode == "only-airbnb"
    assert cfg.jobs == 1  # None overrides are ignored


def test_load_config_rejects_unknown_keys(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"seeds": 5}))
    with pytest.raises(ValidationError, match="seeds"):
        cli.load_config(path)


def test_load_config_rejects_bad_values(tmp_path):
    with pytest.raises(ValidationError, match="mode"):
        cli.PipelineConfig(mode="hotels-only")
    with pytest.raises(ValidationError, match="baseline"):
        cli.PipelineConfig(scenarios=("self-preferencing",))
    with pytest.raises(ValidationError, match="jobs"):
        cli.PipelineConfig(jobs=0)
    path = tmp_path / "cfg.json"
    path.write_text("{not json")
    assert cli.main(["ingest", "--config", str(path)]) == 2


def test_missing_config_file_is_validation_exit(tmp_path, capsys):
    rc = cli.main(["ingest", "--config", str(tmp_path / "nope.json")])
    assert rc == 2
    assert "nope.json" in capsys.readouterr().err


def test_unknown_stage_is_usage_error():
    with pytest.raises(SystemExit) as exc:
        cli.main(["polish"])
    assert exc.value.code == 2


def test_log_level_comes_from_environment(monkeypatch):
    monkeypatch.setenv("CONDUCTSIM_LOG", "DEBUG")
    cli._configure_logging()
    assert logging.getLogger().level == logging.DEBUG
    monkeypatch.setenv("CONDUCTSIM_LOG", "not-a-level")
    cli._configure_logging()
    assert logging.getLogger().level == logging.WARNING


# ---------------------------------------------------------------------------
# stage prerequisites and error exits
# ---------------------------------------------------------------------------


def test_missing_prerequisite_names_artifact_and_producer(tmp_path, capsys):
    cfgfile, out = pipeline_config(tmp_path)
    rc = cli.main(["cluster", "--config", str(cfgfile)])
    err = capsys.readouterr().err
    assert rc == 2
    assert "dataset.csv" in err
    assert "conductsim ingest" in err

    rc = cli.main(["report", "--config", str(cfgfile)])
    err = capsys.readouterr().err
    assert rc == 2
    assert "estimate" in err


def test_ingest_requires_input(tmp_path, capsys):
    cfgfile, out = pipeline_config(tmp_path)
    assert cli.main(["ingest", "--config", str(cfgfile)]) == 2
    rc = cli.main(["ingest", "--config", str(cfgfile), "--input", str(tmp_path / "gone.csv")])
    assert rc == 2
    assert "gone.csv" in capsys.readouterr().err


def test_ingest_accepts_empty_input_and_cluster_reports_it(tmp_path, capsys):
    cfgfile, out = pipeline_config(tmp_path)
    empty = tmp_path / "empty.csv"
    empty.write_text("")
    assert cli.main(["ingest", "--config", str(cfgfile), "--input", str(empty)]) == 0
    rc = cli.main(["cluster", "--config", str(cfgfile)])
    assert rc == 2
    assert "no usable rows" in capsys.readouterr().err


def test_counterfactual_failure_names_stage_and_market(tmp_path, capsys):
    # at the wide coefficient spread a trimmed market's zero-cost row has
    # upward-sloping demand, so the baseline re-solve cannot converge
    cfgfile, out = pipeline_config(tmp_path, synth=dict(PIPELINE_SYNTH, sigma=-0.559, n_wards=4, n_dates=8, max_listings=9))
    assert cli.main(["synth", "--config", str(cfgfile)]) == 0
    rc = cli.main(
        ["ingest", "cluster", "classify-sp", "screen", "--config", str(cfgfile),
         "--input", str(out / "synthetic.csv")]
    )
    assert rc == 0

    # estimate artifact pinned at the generating parameters keeps this cheap
    df, _ = dataio.read_table(out / "screened.csv")
    markets = dataio.frame_to_dataset(df)
    design = estimation.build_design(markets)
    truth = json.loads((out / "truth.json").read_text())["truth"]
    theta = []
    for lab in design.x1_labels:
        if lab == "price":
            theta.append(truth["alpha"])
        elif lab == "const":
            theta.append(truth["const"])
        else:
            theta.append(truth["beta"].get(lab, 0.0))
    theta += [truth["sigma"], truth["rho"]]
    fake = {
        "theta": theta,
        "labels": design.x1_labels + ["sigma", "rho"],
        "cov": np.zeros((len(theta), len(theta))).tolist(),
        "se": [0.0] * len(theta),
        "objective": 0.0,
        "objective_first_step": 0.0,
        "n_obs": design.n_obs,
        "n_markets": len(markets),
        "n_draws": 120,
        "draw_seed": 7,
        "z_labels": design.z_labels,
        "dropped_instruments": [],
        "runs": [],
    }
    (out / "estimate.json").write_text(json.dumps(fake))

    assert cli.main(["costs", "--config", str(cfgfile)]) == 0
    rc = cli.main(["counterfactual", "--config", str(cfgfile)])
    err = capsys.readouterr().err
    assert rc == 3
    assert "stage counterfactual" in err
    assert "market 2019-11-20:w01" in err


# ---------------------------------------------------------------------------
# pipeline artifacts
# ---------------------------------------------------------------------------


def test_every_artifact_embeds_config_hash_and_seed(pipeline_run):
    cfgfile, out = pipeline_run
    cfg = cli.load_config(cfgfile)
    want = cli.config_hash(cfg)
    for path in sorted(out.rglob("*.csv")):
        _, meta = dataio.read_table(path)
        assert meta["config_hash"] == want, path
        assert meta["seed"] == str(cfg.seed), path
    for path in sorted(out.rglob("*.json")):
        body = json.loads(path.read_text())
        assert body["config_hash"] == want, path
        assert body["seed"] == cfg.seed, path
    for path in sorted(out.rglob("*.png")):
        blob = path.read_bytes()
        assert f"config_hash={want}".encode() in blob, path


def test_counterfactual_artifact_is_solved_and_ordered(pipeline_run):
    _, out = pipeline_run
    cf, _ = dataio.read_table(out / "counterfactual.csv")
    assert set(cf["scenario"]) == {"baseline", "self-preferencing"}
    assert (cf["solver_residual"] < 1e-12).all()
    keys = cf[["market_id", "scenario", "listing_id"]].apply(tuple, axis=1).tolist()
    assert keys == sorted(keys)
    screened, _ = dataio.read_table(out / "screened.csv")
    assert len(cf) == 2 * len(screened)


def test_smart_priced_rows_move_most_under_platform_pricing(pipeline_run):
    _, out = pipeline_run
    changes, _ = dataio.read_table(out / "report" / "fig_price_profit_changes.csv")
    sp = changes[changes["seller_type"] == "sp_host"]
    rest = changes[changes["seller_type"] != "sp_host"]
    assert not sp.empty
    assert sp["price_change_pct"].abs().mean() > rest["price_change_pct"].abs().mean()


def test_welfare_and_commission_move_in_paper_directions(pipeline_run):
    _, out = pipeline_run
    summary = json.loads((out / "welfare_summary.json").read_text())
    assert summary["mean_pct_change"]["commission"] > 0
    assert summary["mean_pct_change"]["consumer_surplus"] < 0
    assert summary["mean_pct_change"]["social_welfare"] < 0
    wf, _ = dataio.read_table(out / "welfare.csv")
    np.testing.assert_allclose(
        wf["social_welfare"],
        wf["consumer_surplus"] + wf["producer_surplus"],
        rtol=1e-12,
    )


def test_report_tables_have_expected_shape(pipeline_run):
    _, out = pipeline_run
    demand, _ = dataio.read_table(out / "report" / "demand_table.csv")
    assert list(demand.columns) == ["parameter", "estimate", "std_error"]
    assert {"price", "sigma", "rho", "n_markets"} <= set(demand["parameter"])

    costs, _ = dataio.read_table(out / "report" / "costs_table.csv")
    assert {"sp_host", "host", "hotel"} >= set(costs["seller_type"])
    assert "markup_mean" in costs.columns

    welfare_tbl, _ = dataio.read_table(out / "report" / "welfare_table.csv")
    assert set(welfare_tbl["component"]) == {
        "consumer_surplus",
        "producer_surplus",
        "social_welfare",
    }

    commission, _ = dataio.read_table(out / "report" / "commission_table.csv")
    assert "annual_total" in set(commission["statistic"])

    for name in ("price_profit_scatter.png", "sp_price_change.png"):
        assert (out / "report" / name).stat().st_size > 0


def test_stage_rerun_is_idempotent(pipeline_run):
    cfgfile, out = pipeline_run
    before = (out / "screened.csv").read_bytes()
    assert cli.main(["screen", "--config", str(cfgfile)]) == 0
    assert (out / "screened.csv").read_bytes() == before


def test_pipeline_outputs_are_byte_identical_across_runs_and_jobs(pipeline_run, tmp_path):
    _, out_a = pipeline_run
    cfgfile, out_b = pipeline_config(tmp_path, name="again")
    run_pipeline(cfgfile, out_b, jobs=2)
    assert tree_hashes(out_a) == tree_hashes(out_b)
