"""Tests for instruments, the concentrated GMM, and the bootstrap."""

import functools

import numpy as np
import pytest

from conductsim.dataio import MarketData, SynthConfig, synthesize
from conductsim.demand import (
    DemandParams,
    NestStructure,
    TasteDraws,
    invert_shares,
)
from conductsim.errors import (
    InversionError,
    NumericalError,
    PrerequisiteError,
    ValidationError,
)
from conductsim.estimation import (
    DEFAULT_BOOTSTRAP_DRAWS,
    EstimationConfig,
    EstimationResult,
    GmmProblem,
    build_count_ivs,
    build_design,
    build_differentiation_ivs,
    estimate,
    parametric_bootstrap,
)


def test_count_ivs_frozen_examples():
    assert list(build_count_ivs(np.array(["A", "A", "B"]))) == [2.0, 2.0, 1.0]
    assert list(build_count_ivs(np.array([3, 3, 3, 3]))) == [4.0, 4.0, 4.0, 4.0]
    rng = np.random.default_rng(0)
    labels = rng.integers(1, 6, size=40)
    counts = build_count_ivs(labels)
    for lab in np.unique(labels):
        assert np.all(counts[labels == lab] == (labels == lab).sum())


def test_differentiation_ivs_frozen_examples():
    col = build_differentiation_ivs(np.array([[0.0], [1.0], [3.0]]))
    assert col.shape == (3, 1)
    assert list(col[:, 0]) == [10.0, 5.0, 13.0]

    same = build_differentiation_ivs(np.full((4, 1), 2.5))
    assert np.all(same == 0.0)

    two = build_differentiation_ivs(np.array([[0.0, 2.0], [1.0, 0.0]]))
    # columns: x^2 distances, y^2 distances, then the xy interaction
    assert two.shape == (2, 3)
    assert list(two[:, 2]) == [-2.0, -2.0]

    single = build_differentiation_ivs(np.array([[1.0, 2.0, 3.0]]))
    assert single.shape == (1, 6)
    assert np.all(single == 0.0)


def rich_market(rng, date, ward, n, nest=None):
    prices = rng.uniform(0.2, 2.0, n)
    rooms = rng.integers(8, 20, n).astype(float)
    return MarketData(
        market_id=f"{date}:{ward}",
        date=date,
        ward=ward,
        listing_id=np.array([f"{ward}-l{i}" for i in range(n)]),
        host_id=np.array([f"{ward}-h{i}" for i in range(n)]),
        airbnb=rng.random(n) < 0.7,
        price=prices,
        beds=rng.uniform(1, 4, n).round(2),
        n_reviews=rng.integers(0, 80, n).astype(float),
        rating_room=rng.uniform(3, 5, n).round(2),
        rating_clean=rng.uniform(3, 5, n).round(2),
        rating_location=rng.uniform(3, 5, n).round(2),
        rating_staff=rng.uniform(3, 5, n).round(2),
        vacancies=rng.uniform(0.2, 2.0, n),
        rooms=rooms,
        nest=np.ones(n, dtype=int) if nest is None else np.asarray(nest, dtype=int),
    )


def test_build_design_shapes_and_cluster_ids():
    rng = np.random.default_rng(3)
    markets = [
        rich_market(rng, "2019-11-20", "w1", 8, nest=[1, 1, 2, 2, 3, 3, 3, 3]),
        rich_market(rng, "2019-11-20", "w2", 7, nest=[1, 2, 2, 2, 2, 2, 2]),
        rich_market(rng, "2019-11-21", "w1", 6, nest=[1, 1, 1, 1, 1, 2]),
        rich_market(rng, "2019-11-21", "w2", 6, nest=[1, 1, 1, 1, 1, 1]),
    ]
    d = build_design(markets)
    assert d.n_obs == 27
    assert d.x1_labels[0] == "price"
    assert "const" in d.x1_labels
    assert "ward=w2" in d.x1_labels and "ward=w1" not in d.x1_labels
    assert "count:same_nest" in d.z_labels
    assert sum(l.startswith("diff:") for l in d.z_labels) <= 21
    # one cluster per distinct (market, nest) pair
    assert len(set(d.cluster_ids.tolist())) == 3 + 2 + 2 + 1
    # counts include the product itself
    col = d.z[:, d.z_labels.index("count:same_nest")]
    assert list(col[:8]) == [2, 2, 2, 2, 4, 4, 4, 4]


def test_build_design_trims_collinear_instruments():
    rng = np.random.default_rng(5)
    # every market has all products in one nest and the same size, so the
    # count instrument is collinear with the constant
    markets = [
        rich_market(rng, "2019-11-20", "w1", 7),
        rich_market(rng, "2019-11-20", "w2", 7),
        rich_market(rng, "2019-11-21", "w1", 7),
        rich_market(rng, "2019-11-21", "w2", 7),
    ]
    d = build_design(markets)
    assert d.dropped
    assert np.linalg.matrix_rank(d.z) == d.z.shape[1]
    assert ("count:same_nest" in d.dropped) or ("const" in d.dropped)


def test_build_design_preconditions():
    with pytest.raises(ValidationError, match="no markets"):
        build_design([])
    rng = np.random.default_rng(0)
    m = rich_market(rng, "2019-11-20", "w1", 3)
    m.nest = None
    with pytest.raises(PrerequisiteError, match="nest"):
        build_design([m])


@functools.lru_cache(maxsize=None)
def noiseless_panel():
    cfg = SynthConfig(seed=4, n_wards=4, n_dates=6, xi_scale=0.0, n_draws=120, draw_seed=7)
    markets, truth = synthesize(cfg)
    return markets, truth


def expected_linear_coefficients(truth, markets, labels):
    first_ward = sorted({m.ward for m in markets})[0]
    first_month = sorted({m.month for m in markets})[0]
    first_dow = sorted({m.day_of_week for m in markets})[0]
    base = (
        truth["const"]
        + truth["ward_fe"][first_ward]
        + truth["month_fe"][str(first_month)]
        + truth["dow_fe"][str(first_dow)]
    )
    out = []
    for lab in labels:
        if lab == "price":
            out.append(truth["alpha"])
        elif lab == "const":
            out.append(base)
        elif lab.startswith("ward="):
            out.append(truth["ward_fe"][lab[5:]] - truth["ward_fe"][first_ward])
        elif lab.startswith("month="):
            out.append(truth["month_fe"][lab[6:]] - truth["month_fe"][str(first_month)])
        elif lab.startswith("dow="):
            out.append(truth["dow_fe"][lab[4:]] - truth["dow_fe"][str(first_dow)])
        else:
            out.append(truth["beta"][lab])
    return np.array(out)


def test_noiseless_objective_vanishes_at_truth():
    markets, truth = noiseless_panel()
    problem = GmmProblem(markets, n_draws=120, draw_seed=7)
    w1 = problem.exogenous_weight()
    theta2 = (truth["sigma"], truth["rho"])

    j_true, theta1, xi = problem.objective(theta2, w1)
    assert j_true < 1e-16
    expected = expected_linear_coefficients(truth, markets, problem.design.x1_labels)
    assert np.allclose(theta1, expected, atol=1e-8)

    # zero is weighting-invariant
    j_id, _, _ = problem.objective(theta2, np.eye(problem.design.z.shape[1]))
    assert j_id < 1e-16

    # moving theta2 off the truth strictly raises the criterion
    j_off, _, _ = problem.objective((truth["sigma"] + 0.1, truth["rho"]), w1)
    assert j_off > max(j_true, 1e-12)
    j_off_rho, _, _ = problem.objective((truth["sigma"], truth["rho"] + 0.1), w1)
    assert j_off_rho > max(j_true, 1e-12)


@functools.lru_cache(maxsize=None)
def noiseless_estimate():
    markets, truth = noiseless_panel()
    cfg = EstimationConfig(n_draws=120, draw_seed=7)
    return estimate(markets, cfg), truth


def test_estimate_recovers_noiseless_truth():
    result, truth = noiseless_estimate()
    assert abs(result.sigma - truth["sigma"]) < 1e-3
    assert abs(result.rho - truth["rho"]) < 1e-3
    assert abs(result.alpha - truth["alpha"]) < 1e-4
    # the first-step criterion (evaluated at the step-1 argmin, a hair off
    # the exact truth) is numerically zero; the second-step weighting
    # rescales by the inverse of the near-zero moment covariance
    assert result.objective_first_step < 1e-12
    assert 0.0 <= result.objective < 1e-6
    assert 0.0 <= result.rho < 0.99
    assert result.se.shape == result.theta.shape
    assert np.all(np.isfinite(result.se))
    eigvals = np.linalg.eigvalsh(result.cov)
    assert eigvals.min() > -1e-12 * max(1.0, eigvals.max())
    assert any(converged for _, _, _, converged in result.runs)
    params = result.demand_params()
    assert params.alpha == result.alpha
    assert params.beta.shape == (7,)


def test_estimate_invariant_to_market_duplication():
    markets, _ = noiseless_panel()
    subset = markets[:12]
    cfg = EstimationConfig(n_draws=120, draw_seed=7, starts=((-0.5, 0.3),))
    once = estimate(subset, cfg)
    twice = estimate(list(subset) + list(subset), cfg)
    assert np.allclose(once.theta, twice.theta, atol=1e-9)
    assert twice.n_obs == 2 * once.n_obs


def test_sigma_zero_truth_collapses_to_nested_logit():
    cfg = SynthConfig(
        seed=6, n_wards=3, n_dates=4, xi_scale=0.0, sigma=0.0, n_draws=80, draw_seed=7
    )
    markets, truth = synthesize(cfg)
    result = estimate(markets, EstimationConfig(n_draws=80, draw_seed=7))
    assert abs(result.sigma) < 0.02
    assert abs(result.rho - truth["rho"]) < 1e-2

    # a plain nested-logit fit (sigma pinned at zero) does no better
    problem = GmmProblem(markets, n_draws=80, draw_seed=7)
    w1 = problem.exogenous_weight()
    j_rc, _, _ = problem.objective((result.sigma, result.rho), w1)
    j_nl, _, _ = problem.objective((0.0, result.rho), w1)
    assert abs(j_rc - j_nl) < 1e-10


def test_second_step_objective_invariant_to_instrument_scaling():
    cfg = SynthConfig(seed=2, n_wards=3, n_dates=4, n_draws=60, draw_seed=7)
    markets, _ = synthesize(cfg)
    theta2 = (-0.6, 0.4)

    values = []
    for scale in (1.0, 1000.0):
        problem = GmmProblem(markets, n_draws=60, draw_seed=7)
        problem.design.z = problem.design.z.copy()
        problem.design.z[:, -1] *= scale
        _, _, xi1 = problem.objective(theta2, problem.exogenous_weight())
        w2 = problem.optimal_weight(xi1)
        j2, _, _ = problem.objective(theta2, w2)
        values.append(j2)
    assert np.isclose(values[0], values[1], rtol=1e-8)


def test_batched_inversion_matches_per_market_reference():
    cfg = SynthConfig(seed=2, n_wards=3, n_dates=4, n_draws=60, draw_seed=7)
    markets, _ = synthesize(cfg)
    problem = GmmProblem(markets, n_draws=60, draw_seed=7)
    stacked = problem.deltas(-0.7, 0.5)

    draws = TasteDraws.simulate(n_draws=60, seed=7)
    params = DemandParams(alpha=0.0, sigma=-0.7, rho=0.5)
    pos = 0
    for m in markets:
        ref = invert_shares(
            m.shares, m.price, params, NestStructure(groups=m.nest), draws
        ).delta
        assert np.allclose(stacked[pos : pos + m.n_products], ref, atol=1e-9)
        pos += m.n_products


def test_inversion_failure_reports_market_id():
    markets, _ = noiseless_panel()
    problem = GmmProblem(markets[:3], n_draws=40, draw_seed=7, inversion_max_iter=2)
    with pytest.raises(InversionError, match="market 2019-11-20:w0"):
        problem.deltas(-0.5, 0.4)


def fabricated_result(theta, labels, cov):
    return EstimationResult(
        theta=np.asarray(theta, dtype=float),
        labels=list(labels),
        cov=np.asarray(cov, dtype=float),
        se=np.sqrt(np.clip(np.diag(cov), 0.0, None)),
        objective=0.0,
        objective_first_step=0.0,
        n_obs=100,
        n_markets=10,
        n_draws=50,
        draw_seed=0,
        z_labels=[],
        dropped_instruments=[],
        runs=[((0.0, 0.0), 0.0, 1, True)],
    )


def test_bootstrap_default_size_and_zero_covariance():
    assert DEFAULT_BOOTSTRAP_DRAWS == 1000
    res = fabricated_result([1.5, -0.5, 0.3], ["price", "sigma", "rho"], np.zeros((3, 3)))
    boot = parametric_bootstrap(res, n=50, seed=1)
    assert boot.draws.shape == (50, 3)
    assert np.all(boot.draws == res.theta)
    for i, lab in enumerate(res.labels):
        lo, hi = boot.param_cis[lab]
        assert lo == hi == res.theta[i]

    boot2 = parametric_bootstrap(res, n=50, seed=1)
    assert np.array_equal(boot.draws, boot2.draws)


def test_bootstrap_rejects_non_psd_covariance():
    cov = np.diag([1.0, -1e-3, 1.0])
    res = fabricated_result([1.5, -0.5, 0.3], ["price", "sigma", "rho"], cov)
    with pytest.raises(NumericalError, match="positive semidefinite"):
        parametric_bootstrap(res, n=10)


def test_bootstrap_clips_rho_draws_into_bounds():
    cov = np.diag([0.0, 0.0, 0.04])
    res = fabricated_result([1.5, -0.5, 0.95], ["price", "sigma", "rho"], cov)
    boot = parametric_bootstrap(res, n=400, seed=3)
    rho_draws = boot.draws[:, 2]
    assert boot.n_clipped_rho > 0
    assert np.all((rho_draws >= 0.0) & (rho_draws <= 0.99))


def test_bootstrap_output_function_intervals():
    cov = np.diag([0.04, 0.0, 0.0])
    res = fabricated_result([2.0, -0.5, 0.3], ["price", "sigma", "rho"], cov)
    boot = parametric_bootstrap(
        res, n=500, seed=5, output_fn=lambda p: {"twice": 2.0 * p["price"]}
    )
    lo, hi = boot.output_cis["twice"]
    assert lo < 4.0 < hi
    assert np.isclose(lo, 2 * np.percentile(boot.draws[:, 0], 2.5))
    assert np.isclose(hi, 2 * np.percentile(boot.draws[:, 0], 97.5))


def test_bootstrap_coverage_on_linear_gaussian_toy():
    rng = np.random.default_rng(12)
    n_obs, true_slope = 60, 2.0
    hits = 0
    for rep in range(200):
        x = np.column_stack([np.ones(n_obs), rng.normal(0, 1, n_obs)])
        y = x @ np.array([1.0, true_slope]) + rng.normal(0, 1, n_obs)
        coef, *_ = np.linalg.lstsq(x, y, rcond=None)
        resid = y - x @ coef
        s2 = resid @ resid / (n_obs - 2)
        cov_beta = s2 * np.linalg.inv(x.T @ x)
        cov = np.zeros((3, 3))
        cov[:2, :2] = cov_beta
        res = fabricated_result([coef[0], coef[1], 0.3], ["const", "x", "rho"], cov)
        lo, hi = parametric_bootstrap(res, n=500, seed=rep).param_cis["x"]
        hits += lo <= true_slope <= hi
    coverage = hits / 200
    assert 0.90 <= coverage <= 0.99
