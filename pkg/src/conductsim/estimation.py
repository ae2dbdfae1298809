"""Demand estimation: instruments, nested GMM, and parametric bootstrap.

The estimator concentrates the linear parameters (price coefficient,
characteristic coefficients, fixed effects) out of the GMM problem and
searches only over theta2 = (sigma, rho), the random-coefficient scale and
the nesting parameter.  For a candidate theta2, mean utilities delta are
recovered market by market with the share inversion, the linear parameters
come from weighted IV regression of delta on the demand covariates, and the
moments are the instruments times the structural residual.

Instruments are the exogenous covariates plus two excluded blocks: the
count of same-nest products in the market and differentiation instruments,
squared characteristic distances to market rivals and their pairwise
interactions.  Standard errors use the GMM sandwich with moments clustered
by (market, nest) group; confidence intervals for downstream outputs come
from a parametric bootstrap over the estimated parameter distribution.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.optimize import minimize

from .demand import DemandParams, NestStructure, TasteDraws, invert_shares
from .errors import InversionError, NumericalError, PrerequisiteError, ValidationError

logger = logging.getLogger(__name__)

DEFAULT_BOOTSTRAP_DRAWS = 1000
RANK_TOLERANCE = 1e-10

THETA2_LABELS = ("sigma", "rho")


# ---------------------------------------------------------------------------
# instruments and design matrices
# ---------------------------------------------------------------------------


def build_count_ivs(nest_labels) -> np.ndarray:
    """Number of same-nest products in the market, counting the product itself."""
    labels = np.asarray(nest_labels)
    _, inverse, counts = np.unique(labels, return_inverse=True, return_counts=True)
    return counts[inverse].astype(float)


def build_differentiation_ivs(characteristics) -> np.ndarray:
    """Characteristic-distance instruments within one market.

    For each continuous characteristic x the column is sum_k (x_k - x_j)^2
    over market rivals k, and for each unordered pair (x, y) the column is
    sum_k (x_k - x_j)(y_k - y_j).  Single-product markets get a zero row.
    """
    x = np.atleast_2d(np.asarray(characteristics, dtype=float))
    n, c = x.shape
    n_cols = c + c * (c - 1) // 2
    if n == 1:
        logger.warning("differentiation instruments: single-product market, zero row")
        return np.zeros((1, n_cols))
    out = np.empty((n, n_cols))
    diffs = x[None, :, :] - x[:, None, :]  # (j, k, char) rival minus own
    col = 0
    for a in range(c):
        out[:, col] = (diffs[:, :, a] ** 2).sum(axis=1)
        col += 1
    for a, b in itertools.combinations(range(c), 2):
        out[:, col] = (diffs[:, :, a] * diffs[:, :, b]).sum(axis=1)
        col += 1
    return out


def _dummy_columns(values, prefix):
    """Drop-first dummy encoding; dimensions with one level produce nothing."""
    values = np.asarray(values)
    levels = sorted(set(values.tolist()))
    if len(levels) < 2:
        return np.empty((values.size, 0)), []
    cols = np.column_stack([(values == lv).astype(float) for lv in levels[1:]])
    return cols, [f"{prefix}={lv}" for lv in levels[1:]]


@dataclass
class DesignMatrices:
    """Stacked regression design for the demand-side GMM."""

    x1: np.ndarray
    x1_labels: list
    z: np.ndarray
    z_labels: list
    dropped: list
    cluster_ids: np.ndarray
    market_ids: list
    market_slices: list
    n_obs: int


def build_design(markets) -> DesignMatrices:
    """Assemble the linear design and instrument matrix across markets.

    x1 is [price | characteristics | const | ward, month, day-of-week
    dummies]; z replaces price with the excluded instruments (same-nest
    product counts and differentiation instruments).  Collinear instrument
    columns are dropped by QR with column pivoting at a relative tolerance.
    """
    if not markets:
        raise ValidationError("no markets to estimate on")
    if any(m.nest is None for m in markets):
        raise PrerequisiteError("estimation needs nest labels; assign nests first")

    chars_blocks, price_col, counts, diffs = [], [], [], []
    wards, months, dows, cluster_keys, market_ids, market_slices = [], [], [], [], [], []
    pos = 0
    x_cols = None
    for m in markets:
        x, x_cols = m.characteristics()
        chars_blocks.append(x)
        price_col.append(m.price)
        counts.append(build_count_ivs(m.nest))
        cont = x[:, : len(x_cols) - 1]  # all but the platform dummy
        diffs.append(build_differentiation_ivs(cont))
        wards.extend([m.ward] * m.n_products)
        months.extend([m.month] * m.n_products)
        dows.extend([m.day_of_week] * m.n_products)
        cluster_keys.extend((m.market_id, int(g)) for g in m.nest)
        market_ids.append(m.market_id)
        market_slices.append(slice(pos, pos + m.n_products))
        pos += m.n_products

    chars = np.vstack(chars_blocks)
    price = np.concatenate(price_col)
    n = price.size
    const = np.ones((n, 1))
    ward_d, ward_labels = _dummy_columns(np.array(wards), "ward")
    month_d, month_labels = _dummy_columns(np.array(months), "month")
    dow_d, dow_labels = _dummy_columns(np.array(dows), "dow")

    x1 = np.column_stack([price, chars, const, ward_d, month_d, dow_d])
    x1_labels = ["price"] + list(x_cols) + ["const"] + ward_labels + month_labels + dow_labels
    if np.linalg.matrix_rank(x1) < x1.shape[1]:
        raise ValidationError("linear demand design is rank deficient")

    cont_labels = list(x_cols[:-1])
    diff_labels = [f"diff:{c}" for c in cont_labels] + [
        f"diff:{a}*{b}" for a, b in itertools.combinations(cont_labels, 2)
    ]
    z = np.column_stack(
        [chars, const, ward_d, month_d, dow_d, np.concatenate(counts), np.vstack(diffs)]
    )
    z_labels = (
        list(x_cols) + ["const"] + ward_labels + month_labels + dow_labels
        + ["count:same_nest"] + diff_labels
    )

    # rank-revealing trim of collinear instrument columns
    _, r, piv = scipy.linalg.qr(z, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    keep_mask = diag > RANK_TOLERANCE * diag[0]
    keep = np.sort(piv[: int(keep_mask.sum())])
    dropped = [z_labels[i] for i in range(len(z_labels)) if i not in set(keep.tolist())]
    if dropped:
        logger.info("instruments: dropped %d collinear columns: %s", len(dropped), dropped)
        z = z[:, keep]
        z_labels = [z_labels[i] for i in keep]

    codes = {}
    cluster_ids = np.array([codes.setdefault(k, len(codes)) for k in cluster_keys])
    return DesignMatrices(
        x1=x1,
        x1_labels=x1_labels,
        z=z,
        z_labels=list(z_labels),
        dropped=dropped,
        cluster_ids=cluster_ids,
        market_ids=market_ids,
        market_slices=market_slices,
        n_obs=n,
    )


# ---------------------------------------------------------------------------
# the concentrated GMM problem
# ---------------------------------------------------------------------------


class _BatchInverter:
    """Share inversion for all markets at once.

    Runs the dampened BLP contraction on every market simultaneously with
    segment reductions over (market, nest) groups, which amortizes the
    per-iteration overhead across markets.  Fixed points agree with
    per-market `invert_shares` to inversion tolerance.
    """

    def __init__(self, markets, draws):
        market_idx, nest_all, prices, shares = [], [], [], []
        self.market_ids = [m.market_id for m in markets]
        for i, m in enumerate(markets):
            market_idx.extend([i] * m.n_products)
            nest_all.extend(int(g) for g in m.nest)
            prices.append(m.price)
            shares.append(m.shares)
        market_idx = np.array(market_idx)
        nest_all = np.array(nest_all)
        prices = np.concatenate(prices)
        shares = np.concatenate(shares)
        if np.any(shares <= 0.0):
            raise ValidationError("observed shares must be strictly positive")

        # rows sorted so each (market, nest) group, and each market's group
        # range, is contiguous for reduceat
        self.order = np.lexsort((nest_all, market_idx))
        self.prices = prices[self.order]
        self.log_obs = np.log(shares[self.order])
        self.share_sum_log = np.array(
            [np.log(1.0 - m.shares.sum()) for m in markets]
        )
        srt_market = market_idx[self.order]
        srt_nest = nest_all[self.order]

        new_group = np.ones(self.order.size, dtype=bool)
        new_group[1:] = (srt_market[1:] != srt_market[:-1]) | (srt_nest[1:] != srt_nest[:-1])
        self.group_starts = np.flatnonzero(new_group)
        self.group_of_row = np.cumsum(new_group) - 1
        group_market = srt_market[self.group_starts]
        first_group = np.ones(group_market.size, dtype=bool)
        first_group[1:] = group_market[1:] != group_market[:-1]
        self.market_group_starts = np.flatnonzero(first_group)
        self.market_of_group = group_market
        self.market_of_row = srt_market
        self.values = draws.values
        self.weights = draws.weights

    def plain_logit_start(self) -> np.ndarray:
        return self.log_obs - self.share_sum_log[self.market_of_row]

    def solve(self, sigma, rho, delta0, tol=1e-13, max_iter=10_000):
        """Contract to the stacked delta fixed point (sorted row order)."""
        one_m = 1.0 - rho
        mu = sigma * np.outer(self.values, self.prices)
        delta = delta0.copy()
        gor, mog, mor = self.group_of_row, self.market_of_group, self.market_of_row
        for it in range(1, max_iter + 1):
            w = (delta[None, :] + mu) / one_m
            gmax = np.maximum.reduceat(w, self.group_starts, axis=1)
            gsum = np.add.reduceat(np.exp(w - gmax[:, gor]), self.group_starts, axis=1)
            iv = one_m * (gmax + np.log(gsum))
            mmax = np.maximum.reduceat(iv, self.market_group_starts, axis=1)
            mmax = np.maximum(mmax, 0.0)
            dsum = np.add.reduceat(
                np.exp(iv - mmax[:, mog]), self.market_group_starts, axis=1
            ) + np.exp(-mmax)
            log_denom = mmax + np.log(dsum)
            iv_rows = iv[:, gor]
            log_sij = w - iv_rows / one_m + iv_rows - log_denom[:, mor]
            model = self.weights @ np.exp(log_sij)
            with np.errstate(divide="ignore"):
                resid = self.log_obs - np.log(model)
            if not np.all(np.isfinite(resid)):
                bad = sorted({self.market_ids[m] for m in mor[~np.isfinite(resid)]})
                raise InversionError(
                    f"share inversion produced non-finite residuals in markets {bad}"
                )
            gap = float(np.max(np.abs(resid)))
            if gap < tol:
                return delta, it
            delta = delta + one_m * resid
        worst = int(mor[np.argmax(np.abs(resid))])
        raise InversionError(
            f"share inversion did not reach tol={tol:g} within {max_iter} iterations "
            f"(market {self.market_ids[worst]}, residual {gap:.3e})"
        )


class GmmProblem:
    """Shares, inversion cache, and moment algebra for one dataset."""

    def __init__(
        self, markets, design=None, n_draws=500, draw_seed=0, jobs=1, inversion_max_iter=10_000
    ):
        self.markets = list(markets)
        self.design = design if design is not None else build_design(self.markets)
        self.draws = TasteDraws.simulate(n_draws=n_draws, seed=draw_seed)
        self.jobs = max(1, int(jobs))
        self.inversion_max_iter = inversion_max_iter
        self._inverter = _BatchInverter(self.markets, self.draws)
        self._delta_sorted = None  # warm start carried between evaluations
        low = min(float(m.shares.min()) for m in self.markets)
        if low < 0.005:
            logger.warning(
                "estimation data contains shares below the 0.5%% screen (min %.2e)", low
            )

    @property
    def n_obs(self) -> int:
        return self.design.n_obs

    def deltas(self, sigma, rho) -> np.ndarray:
        """Mean utilities delta(theta2) stacked across markets."""
        inv = self._inverter
        start = self._delta_sorted if self._delta_sorted is not None else inv.plain_logit_start()
        delta_sorted, _ = inv.solve(
            float(sigma), float(rho), start, max_iter=self.inversion_max_iter
        )
        self._delta_sorted = delta_sorted
        out = np.empty_like(delta_sorted)
        out[inv.order] = delta_sorted
        return out

    def concentrate(self, delta, w):
        """Weighted-IV estimate of the linear parameters and its residual."""
        d = self.design
        xz = d.x1.T @ d.z
        a = xz @ w @ xz.T
        b = xz @ w @ (d.z.T @ delta)
        theta1 = np.linalg.solve(a, b)
        xi = delta - d.x1 @ theta1
        return theta1, xi

    def moments(self, xi) -> np.ndarray:
        return self.design.z.T @ xi / self.n_obs

    def objective(self, theta2, w):
        """GMM criterion g' W g at theta2 = (sigma, rho); returns parts too."""
        sigma, rho = float(theta2[0]), float(theta2[1])
        delta = self.deltas(sigma, rho)
        theta1, xi = self.concentrate(delta, w)
        g = self.moments(xi)
        return float(g @ w @ g), theta1, xi

    def exogenous_weight(self) -> np.ndarray:
        """First-step weighting (Z'Z / N)^{-1}."""
        zz = self.design.z.T @ self.design.z / self.n_obs
        return _safe_inverse(zz, "instrument cross-product")

    def optimal_weight(self, xi) -> np.ndarray:
        """Second-step weighting from the heteroskedasticity-robust moments."""
        zx = self.design.z * xi[:, None]
        s = zx.T @ zx / self.n_obs
        return _safe_inverse(s, "second-step moment covariance")

    def clustered_moment_cov(self, xi) -> np.ndarray:
        """Moment covariance with observations clustered by (market, nest)."""
        zx = self.design.z * xi[:, None]
        ids = self.design.cluster_ids
        sums = np.zeros((ids.max() + 1, zx.shape[1]))
        np.add.at(sums, ids, zx)
        return sums.T @ sums / self.n_obs


def _safe_inverse(matrix, what):
    try:
        c, low = scipy.linalg.cho_factor(matrix)
        return scipy.linalg.cho_solve((c, low), np.eye(matrix.shape[0]))
    except np.linalg.LinAlgError as err:
        raise NumericalError(f"{what} is singular") from err
    except scipy.linalg.LinAlgError as err:
        raise NumericalError(f"{what} is singular") from err


# ---------------------------------------------------------------------------
# two-step estimation
# ---------------------------------------------------------------------------


@dataclass
class EstimationConfig:
    n_draws: int = 500
    draw_seed: int = 0
    sigma_bounds: tuple = (-10.0, 0.0)
    rho_bounds: tuple = (0.0, 0.99)
    starts: tuple = ((-0.5, 0.3), (-1.5, 0.6), (-0.1, 0.1))
    xatol: float = 1e-6
    fatol: float = 1e-12
    maxfev: int = 120
    jobs: int = 1


@dataclass
class EstimationResult:
    theta: np.ndarray  # x1 coefficients followed by (sigma, rho)
    labels: list
    cov: np.ndarray
    se: np.ndarray
    objective: float
    objective_first_step: float
    n_obs: int
    n_markets: int
    n_draws: int
    draw_seed: int
    z_labels: list
    dropped_instruments: list
    runs: list  # (start, fun, iterations, converged) per optimizer run
    config: EstimationConfig = field(repr=False, default=None)

    def __getitem__(self, label):
        return float(self.theta[self.labels.index(label)])

    def se_for(self, label) -> float:
        return float(self.se[self.labels.index(label)])

    @property
    def alpha(self) -> float:
        return self["price"]

    @property
    def sigma(self) -> float:
        return self["sigma"]

    @property
    def rho(self) -> float:
        return self["rho"]

    def demand_params(self) -> DemandParams:
        from .dataio import X_COLUMNS

        beta = np.array([self[l] for l in X_COLUMNS if l in self.labels])
        return DemandParams(alpha=self.alpha, sigma=self.sigma, rho=self.rho, beta=beta)

    def delta_for(self, market) -> np.ndarray:
        """Mean utilities implied by the estimates for one market's data."""
        draws = TasteDraws.simulate(n_draws=self.n_draws, seed=self.draw_seed)
        params = DemandParams(alpha=0.0, sigma=self.sigma, rho=self.rho)
        res = invert_shares(
            market.shares, market.price, params, NestStructure(groups=market.nest), draws
        )
        return res.delta


def result_to_dict(result: EstimationResult) -> dict:
    """JSON-serializable view of an estimation result (drops the config)."""
    return {
        "theta": [float(v) for v in result.theta],
        "labels": list(result.labels),
        "cov": np.asarray(result.cov).tolist(),
        "se": [float(v) for v in result.se],
        "objective": float(result.objective),
        "objective_first_step": float(result.objective_first_step),
        "n_obs": int(result.n_obs),
        "n_markets": int(result.n_markets),
        "n_draws": int(result.n_draws),
        "draw_seed": int(result.draw_seed),
        "z_labels": list(result.z_labels),
        "dropped_instruments": list(result.dropped_instruments),
        "runs": [list(r) for r in result.runs],
    }


def result_from_dict(data: dict) -> EstimationResult:
    return EstimationResult(
        theta=np.asarray(data["theta"], dtype=float),
        labels=list(data["labels"]),
        cov=np.asarray(data["cov"], dtype=float),
        se=np.asarray(data["se"], dtype=float),
        objective=float(data["objective"]),
        objective_first_step=float(data["objective_first_step"]),
        n_obs=int(data["n_obs"]),
        n_markets=int(data["n_markets"]),
        n_draws=int(data["n_draws"]),
        draw_seed=int(data["draw_seed"]),
        z_labels=list(data["z_labels"]),
        dropped_instruments=list(data["dropped_instruments"]),
        runs=[tuple(r) for r in data["runs"]],
    )


def _minimize_theta2(problem, w, starts, cfg):
    bounds = [cfg.sigma_bounds, cfg.rho_bounds]
    runs = []
    best = None
    for start in starts:
        res = minimize(
            lambda t2: problem.objective(t2, w)[0],
            x0=np.asarray(start, dtype=float),
            method="Nelder-Mead",
            bounds=bounds,
            options={
                "xatol": cfg.xatol,
                "fatol": cfg.fatol,
                "maxfev": cfg.maxfev,
                "adaptive": False,
            },
        )
        # near-degenerate weighting (e.g. noiseless data) leaves the
        # criterion at its numerical noise floor, so fatol may never be met;
        # a collapsed simplex in parameter space still means convergence
        sim, _ = res.final_simplex
        x_spread = float(np.max(np.abs(sim[1:] - sim[0])))
        converged = bool(res.success) or x_spread <= 5.0 * cfg.xatol
        runs.append((tuple(start), float(res.fun), int(res.nit), converged))
        if best is None or res.fun < best.fun:
            best = res
    if not any(r[3] for r in runs):
        raise NumericalError(
            "theta2 search did not converge from any start; runs: " + repr(runs)
        )
    return best, runs


def estimate(markets, config: EstimationConfig = None) -> EstimationResult:
    """Two-step GMM over (sigma, rho) with concentrated linear parameters."""
    cfg = config or EstimationConfig()
    problem = GmmProblem(
        markets, n_draws=cfg.n_draws, draw_seed=cfg.draw_seed, jobs=cfg.jobs
    )
    d = problem.design

    w1 = problem.exogenous_weight()
    best1, runs1 = _minimize_theta2(problem, w1, cfg.starts, cfg)
    j1, _, xi1 = problem.objective(best1.x, w1)

    w2 = problem.optimal_weight(xi1)
    starts2 = [tuple(best1.x)] + [
        s for s in cfg.starts[:2] if tuple(s) != tuple(best1.x)
    ]
    best2, runs2 = _minimize_theta2(problem, w2, starts2, cfg)
    j2, theta1, xi = problem.objective(best2.x, w2)
    sigma, rho = float(best2.x[0]), float(best2.x[1])

    theta = np.concatenate([theta1, [sigma, rho]])
    labels = list(d.x1_labels) + list(THETA2_LABELS)
    cov = _sandwich_covariance(problem, theta1, sigma, rho, xi, w2, cfg)
    se = np.sqrt(np.clip(np.diag(cov), 0.0, None))

    logger.info(
        "estimate: alpha=%.4f sigma=%.4f rho=%.4f objective=%.3e (%d obs, %d markets)",
        theta1[0], sigma, rho, j2, d.n_obs, len(problem.markets),
    )
    return EstimationResult(
        theta=theta,
        labels=labels,
        cov=cov,
        se=se,
        objective=float(j2),
        objective_first_step=float(j1),
        n_obs=d.n_obs,
        n_markets=len(problem.markets),
        n_draws=cfg.n_draws,
        draw_seed=cfg.draw_seed,
        z_labels=d.z_labels,
        dropped_instruments=d.dropped,
        runs=runs1 + runs2,
        config=cfg,
    )


def _sandwich_covariance(problem, theta1, sigma, rho, xi, w, cfg):
    """Clustered GMM sandwich over the full parameter vector.

    The moment Jacobian stacks the closed-form linear block -Z'X1/N with
    central finite differences of the moments in (sigma, rho); the meat is
    the (market, nest)-clustered moment covariance.
    """
    d = problem.design
    n = problem.n_obs
    g_lin = -(d.z.T @ d.x1) / n

    def moments_at(s, r):
        delta = problem.deltas(s, r)
        return problem.moments(delta - d.x1 @ theta1)

    cols = []
    for k, (value, bounds) in enumerate(
        [(sigma, cfg.sigma_bounds), (rho, cfg.rho_bounds)]
    ):
        h = 1e-5 * max(1.0, abs(value))
        lo = max(value - h, bounds[0])
        hi = min(value + h, bounds[1])
        args_hi = (hi, rho) if k == 0 else (sigma, hi)
        args_lo = (lo, rho) if k == 0 else (sigma, lo)
        cols.append((moments_at(*args_hi) - moments_at(*args_lo)) / (hi - lo))
    g = np.column_stack([g_lin] + cols)

    s_cluster = problem.clustered_moment_cov(xi)
    bread = _safe_inverse(g.T @ w @ g, "moment Jacobian cross-product")
    middle = g.T @ w @ s_cluster @ w @ g
    cov = bread @ middle @ bread / n
    return 0.5 * (cov + cov.T)


# ---------------------------------------------------------------------------
# parametric bootstrap
# ---------------------------------------------------------------------------


@dataclass
class BootstrapResult:
    draws: np.ndarray  # (n, P) parameter draws
    labels: list
    param_cis: dict  # label -> (2.5th, 97.5th percentile)
    n_draws: int
    seed: int
    n_clipped_rho: int
    output_draws: dict = None
    output_cis: dict = None


def parametric_bootstrap(
    result: EstimationResult,
    n: int = DEFAULT_BOOTSTRAP_DRAWS,
    seed: int = 0,
    output_fn=None,
) -> BootstrapResult:
    """Percentile intervals from normal parameter draws around the estimate.

    Draws come from N(theta_hat, cov).  A covariance with a meaningfully
    negative eigenvalue is rejected; tiny negative eigenvalues from rounding
    are treated as zero.  Nesting-parameter draws are clipped back into its
    bounds so every draw yields a valid demand model.  When `output_fn` is
    given it maps a parameter dict to scalar or array outputs, and the same
    percentile bounds are reported per output.
    """
    if n < 1:
        raise ValidationError("bootstrap needs at least one draw")
    values, vectors = np.linalg.eigh(result.cov)
    top = max(1.0, float(values.max(initial=0.0)))
    if values.min() < -1e-10 * top:
        raise NumericalError(
            f"covariance is not positive semidefinite (min eigenvalue {values.min():.3e})"
        )
    root = vectors * np.sqrt(np.clip(values, 0.0, None))
    rng = np.random.default_rng(seed)
    draws = result.theta + rng.standard_normal((n, result.theta.size)) @ root.T

    rho_idx = result.labels.index("rho")
    bounds = (result.config.rho_bounds if result.config else (0.0, 0.99))
    clipped = (draws[:, rho_idx] < bounds[0]) | (draws[:, rho_idx] > bounds[1])
    draws[:, rho_idx] = np.clip(draws[:, rho_idx], bounds[0], bounds[1])
    n_clipped = int(clipped.sum())
    if n_clipped:
        logger.info("bootstrap: clipped rho in %d of %d draws", n_clipped, n)

    qs = (2.5, 97.5)
    param_cis = {
        lab: tuple(np.percentile(draws[:, i], qs)) for i, lab in enumerate(result.labels)
    }

    output_draws = output_cis = None
    if output_fn is not None:
        collected = {}
        for row in draws:
            out = output_fn(dict(zip(result.labels, row)))
            if not isinstance(out, dict):
                out = {"output": out}
            for key, val in out.items():
                collected.setdefault(key, []).append(np.asarray(val, dtype=float))
        output_draws = {k: np.stack(v) for k, v in collected.items()}
        output_cis = {
            k: tuple(np.percentile(v, qs, axis=0)) for k, v in output_draws.items()
        }

    return BootstrapResult(
        draws=draws,
        labels=list(result.labels),
        param_cis=param_cis,
        n_draws=n,
        seed=seed,
        n_clipped_rho=n_clipped,
        output_draws=output_draws,
        output_cis=output_cis,
    )
