"""Bertrand-Nash pricing under platform conduct scenarios.

Each product belongs to exactly one firm (a host or a hotel).  Prices solve
a system of first-order conditions, one row per product:

    q_j(p) + sum_k Omega[j, k] * (p_k - C[j, k]) * dq_k/dp_j = 0

where Omega is a 0/1 ownership matrix saying which products' payoffs enter
the objective behind row j, and C is a row-dependent effective-cost matrix.
Two scenarios are supported:

baseline
    Every firm maximizes its own-block objective.  Algorithmically priced
    ("smart pricing") products carry zero effective cost, so their rows
    maximize revenue rather than profit; everyone else's margin is p - mc.

self-preferencing
    The platform takes over the prices of smart-pricing products and sets
    them to maximize its commission take, tau times revenue across all of
    its listings.  Those rows span every platform product with zero
    effective cost (the multiplicative tau drops out of the FOC).  Remaining
    rows keep their baseline form.

Marginal costs are identified from the baseline scenario at observed prices
via mc = p - inv(DD) q with DD = -Omega o (dq/dp)', the usual markup
inversion.  Equilibria are computed by a markup fixed point (a zeta-style
iteration generalized to the effective-cost matrix) with residual-based
damping and a damped-Newton fallback for the rare cases where the fixed
point stalls or cycles.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .demand import DemandContext
from .errors import EquilibriumError, NumericalError, ValidationError

logger = logging.getLogger(__name__)

SCENARIO_BASELINE = "baseline"
SCENARIO_SELF_PREFERENCING = "self-preferencing"
SCENARIOS = (SCENARIO_BASELINE, SCENARIO_SELF_PREFERENCING)

DEFAULT_COMMISSION_RATE = 0.03


@dataclass(frozen=True)
class ConductSpec:
    """Who controls which prices, and at what effective costs.

    `firms` labels the owner of each product, `airbnb` marks platform
    listings (the only ones that pay commission and the only ones the
    platform can reprice), and `sp` marks the algorithmically priced subset.
    `marginal_costs` is the reported cost vector; smart-pricing entries are
    treated as zero by every scenario rule regardless of what is stored.
    """

    scenario: str
    firms: np.ndarray
    airbnb: np.ndarray
    sp: np.ndarray
    marginal_costs: np.ndarray | None = None
    tau: float = DEFAULT_COMMISSION_RATE
    ownership: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ValidationError(f"unknown scenario {self.scenario!r}; choose from {SCENARIOS}")
        firms = np.asarray(self.firms)
        airbnb = np.asarray(self.airbnb, dtype=bool)
        sp = np.asarray(self.sp, dtype=bool)
        if firms.ndim != 1 or firms.size == 0:
            raise ValidationError("firms must be a non-empty 1-d array")
        if airbnb.shape != firms.shape or sp.shape != firms.shape:
            raise ValidationError("airbnb and sp flags must match firms in shape")
        if np.any(sp & ~airbnb):
            raise ValidationError("smart pricing applies only to platform listings")
        if not 0.0 <= self.tau < 1.0:
            raise ValidationError(f"commission rate must lie in [0, 1), got {self.tau}")
        mc = self.marginal_costs
        if mc is not None:
            mc = np.asarray(mc, dtype=float)
            if mc.shape != firms.shape:
                raise ValidationError("marginal costs must have one entry per product")
            if not np.all(np.isfinite(mc)):
                raise ValidationError("marginal costs must be finite")
        object.__setattr__(self, "firms", firms)
        object.__setattr__(self, "airbnb", airbnb)
        object.__setattr__(self, "sp", sp)
        object.__setattr__(self, "marginal_costs", mc)

        own = (firms[:, None] == firms[None, :]).astype(float)
        if self.scenario == SCENARIO_SELF_PREFERENCING:
            # platform rows internalize every platform listing
            own[sp, :] = airbnb[None, :].astype(float)
        object.__setattr__(self, "ownership", own)

    @property
    def n_products(self) -> int:
        return self.firms.size

    def with_marginal_costs(self, mc) -> "ConductSpec":
        return replace(self, marginal_costs=np.asarray(mc, dtype=float))

    def effective_own_costs(self) -> np.ndarray:
        """Cost vector with the zero-cost rule for smart-pricing products."""
        if self.marginal_costs is None:
            raise ValidationError("conduct has no marginal costs; recover them first")
        return np.where(self.sp, 0.0, self.marginal_costs)

    def cost_matrix(self) -> np.ndarray:
        """Effective-cost matrix C; C[j, k] is product k's cost in row j's FOC."""
        base = self.effective_own_costs()
        C = np.tile(base, (self.n_products, 1))
        if self.scenario == SCENARIO_SELF_PREFERENCING:
            C[self.sp, :] = 0.0  # commission rows carry no costs at all
        return C


def build_conduct(
    scenario,
    firms,
    airbnb,
    sp,
    marginal_costs=None,
    tau=DEFAULT_COMMISSION_RATE,
) -> ConductSpec:
    """Assemble a :class:`ConductSpec` for one market."""
    return ConductSpec(
        scenario=scenario,
        firms=np.asarray(firms),
        airbnb=np.asarray(airbnb, dtype=bool),
        sp=np.asarray(sp, dtype=bool),
        marginal_costs=marginal_costs,
        tau=tau,
    )


@dataclass
class CostRecovery:
    """Recovered costs plus diagnostics from the baseline FOC inversion.

    `effective_costs` is the raw FOC-implied cost for every product.  The
    reported `marginal_costs` replace smart-pricing entries with the assumed
    zero; their raw values are kept in `sp_gaps` since observed prices need
    not sit exactly on the zero-cost pricing rule.
    """

    marginal_costs: np.ndarray
    effective_costs: np.ndarray
    markups: np.ndarray
    negative: np.ndarray
    sp_gaps: np.ndarray


def recover_marginal_costs(context: DemandContext, conduct: ConductSpec, prices=None) -> CostRecovery:
    """Invert the baseline first-order conditions at observed prices."""
    if conduct.scenario != SCENARIO_BASELINE:
        raise ValidationError("marginal costs are identified from the baseline scenario")
    if conduct.n_products != context.n_products:
        raise ValidationError("conduct and demand context disagree on product count")
    p = context.prices_ref if prices is None else np.asarray(prices, dtype=float)

    lam, gamma = context.response_parts_at(p)
    q = context.quantities_at(p)
    jac_t = np.diag(lam) - gamma.T  # (j, k) entry is dq_k / dp_j
    dd = -(conduct.ownership * jac_t)
    try:
        markups = np.linalg.solve(dd, q)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"singular ownership-response system: {exc}") from exc
    if not np.all(np.isfinite(markups)):
        raise NumericalError("markup inversion produced non-finite values")

    effective = p - markups
    mc = np.where(conduct.sp, 0.0, effective)
    negative = mc < 0.0
    if negative.any():
        logger.warning(
            "recovered %d negative marginal costs (min %.4g); flagged, not clipped",
            int(negative.sum()),
            float(mc.min()),
        )
    sp_gaps = effective[conduct.sp]
    return CostRecovery(
        marginal_costs=mc,
        effective_costs=effective,
        markups=markups,
        negative=negative,
        sp_gaps=sp_gaps,
    )


@dataclass
class EquilibriumResult:
    prices: np.ndarray
    shares: np.ndarray
    quantities: np.ndarray
    residual: float
    iterations: int
    method: str
    conduct: ConductSpec
    market_size: float


def _foc_residual(prices, context, conduct, C, own_costs):
    """Share-unit FOC residual plus the pieces the zeta step reuses."""
    lam, gamma = context.response_parts_at(prices)
    q = context.quantities_at(prices)
    G = conduct.ownership * gamma.T
    spread = prices[None, :] - C
    r = q + lam * (prices - own_costs) - (G * spread).sum(axis=1)
    return r / context.market_size, lam, G, q


def solve_equilibrium(
    conduct: ConductSpec,
    context: DemandContext,
    prices0=None,
    tol=1e-12,
    max_iter=5000,
    extra_starts=0,
    seed=0,
) -> EquilibriumResult:
    """Solve the conduct scenario's pricing game for one market.

    Primary engine is the markup fixed point

        p_j <- C[j, j] + ( sum_k G[j, k] (p_k - C[j, k]) - q_j ) / lam_j

    with G = Omega o gamma' and dq/dp = diag(lam) - gamma.  Steps that raise
    the residual are halved once; if progress stalls or cycles, a damped
    Newton on the residual (finite-difference Jacobian, backtracking line
    search) takes over.  Convergence is sup-norm of the share-unit residual
    below `tol` within a combined budget of `max_iter` iterations.

    `extra_starts` re-solves from perturbed starting prices and logs a
    warning if the solutions disagree, a cheap multiplicity probe.
    """
    if conduct.marginal_costs is None:
        raise ValidationError("conduct has no marginal costs; recover or attach them first")
    if conduct.n_products != context.n_products:
        raise ValidationError("conduct and demand context disagree on product count")

    C = conduct.cost_matrix()
    own_costs = np.diag(C).copy()
    start = context.prices_ref if prices0 is None else np.asarray(prices0, dtype=float)

    result = _solve_single(start, context, conduct, C, own_costs, tol, max_iter)

    if extra_starts:
        rng = np.random.default_rng(seed)
        for s in range(extra_starts):
            jitter = rng.uniform(0.8, 1.25, size=start.size)
            try:
                other = _solve_single(start * jitter, context, conduct, C, own_costs, tol, max_iter)
            except EquilibriumError:
                logger.warning("equilibrium restart %d failed to converge", s + 1)
                continue
            gap = float(np.max(np.abs(other.prices - result.prices)))
            if gap > 1e-6:
                logger.warning(
                    "possible equilibrium multiplicity: restart %d differs by %.3g", s + 1, gap
                )
    return result


def _solve_single(start, context, conduct, C, own_costs, tol, max_iter):
    trace = []
    p = start.astype(float).copy()
    r, lam, G, q = _foc_residual(p, context, conduct, C, own_costs)
    res = float(np.max(np.abs(r)))
    trace.append(res)
    best = res
    since_best = 0
    iterations = 0
    method = "fixed-point"

    while iterations < max_iter:
        if res < tol:
            return _finish(p, res, iterations, method, context, conduct, trace)
        iterations += 1

        use_newton = method != "fixed-point"
        if not use_newton:
            with np.errstate(divide="ignore", invalid="ignore"):
                p_new = own_costs + ((G * (p[None, :] - C)).sum(axis=1) - q) / lam
            if not np.all(np.isfinite(p_new)):
                use_newton = True
            else:
                r_new, lam_new, G_new, q_new = _foc_residual(p_new, context, conduct, C, own_costs)
                res_new = float(np.max(np.abs(r_new)))
                if res_new > res:
                    # dampen the step once before accepting
                    p_new = 0.5 * (p + p_new)
                    r_new, lam_new, G_new, q_new = _foc_residual(
                        p_new, context, conduct, C, own_costs
                    )
                    res_new = float(np.max(np.abs(r_new)))
                rel_move = float(np.max(np.abs(p_new - p)) / max(1.0, np.max(np.abs(p))))
                stalled = rel_move < 1e-15 and res_new > tol
                if res_new < best:
                    best = res_new
                    since_best = 0
                else:
                    since_best += 1
                if stalled or since_best > 30:
                    use_newton = True
                else:
                    p, r, res = p_new, r_new, res_new
                    lam, G, q = lam_new, G_new, q_new
                    trace.append(res)
                    continue

        if use_newton and method == "fixed-point":
            method = "newton"
            logger.debug("markup fixed point stalled at residual %.3e; switching to newton", res)

        p, r, res = _newton_step(p, r, res, context, conduct, C, own_costs, trace)
        if res < best:
            best = res

    raise EquilibriumError(
        f"price equilibrium did not reach tol={tol:g} within {max_iter} iterations "
        f"(last residual {res:.3e})",
        residual_trace=trace,
    )


def _newton_step(p, r, res, context, conduct, C, own_costs, trace):
    n = p.size
    jac = np.empty((n, n))
    for k in range(n):
        h = 1e-7 * max(1.0, abs(p[k]))
        bumped = p.copy()
        bumped[k] += h
        r_b, _, _, _ = _foc_residual(bumped, context, conduct, C, own_costs)
        jac[:, k] = (r_b - r) / h
    try:
        step = np.linalg.solve(jac, -r)
    except np.linalg.LinAlgError:
        step, *_ = np.linalg.lstsq(jac, -r, rcond=None)
    if not np.all(np.isfinite(step)):
        raise EquilibriumError(
            "newton fallback produced a non-finite step", residual_trace=trace
        )

    t = 1.0
    for _ in range(30):
        p_try = p + t * step
        r_try, _, _, _ = _foc_residual(p_try, context, conduct, C, own_costs)
        res_try = float(np.max(np.abs(r_try)))
        if np.isfinite(res_try) and res_try < res:
            trace.append(res_try)
            return p_try, r_try, res_try
        t *= 0.5
    raise EquilibriumError(
        f"newton line search failed to reduce the residual below {res:.3e}",
        residual_trace=trace,
    )


def _finish(p, res, iterations, method, context, conduct, trace):
    shares = context.shares_at(p)
    return EquilibriumResult(
        prices=p,
        shares=shares,
        quantities=shares * context.market_size,
        residual=res,
        iterations=iterations,
        method=method,
        conduct=conduct,
        market_size=context.market_size,
    )


def firm_profits(conduct: ConductSpec, prices, quantities) -> dict:
    """Profit by firm: sum of (p - mc) q with zero cost on smart-pricing rows.

    Commission is not netted out here; it is a transfer to the platform and
    is reported separately by :func:`commission_revenue`, so summing these
    profits gives the whole producer side of the market.
    """
    prices = np.asarray(prices, dtype=float)
    quantities = np.asarray(quantities, dtype=float)
    margins = prices - conduct.effective_own_costs()
    out: dict = {}
    for firm in np.unique(conduct.firms):
        idx = conduct.firms == firm
        out[firm.item() if hasattr(firm, "item") else firm] = float(
            (margins[idx] * quantities[idx]).sum()
        )
    return out


def commission_revenue(conduct: ConductSpec, prices, quantities) -> float:
    """Platform take: tau times revenue over its listings."""
    prices = np.asarray(prices, dtype=float)
    quantities = np.asarray(quantities, dtype=float)
    idx = conduct.airbnb
    return float(conduct.tau * (prices[idx] * quantities[idx]).sum())


def player_objective(conduct: ConductSpec, context: DemandContext, prices, row: int) -> float:
    """Objective of whoever controls the price behind FOC row `row`.

    Under self-preferencing, smart-pricing rows belong to the platform and
    the objective is commission revenue; every other row belongs to the
    product's firm, whose objective is block profit at effective costs.
    """
    prices = np.asarray(prices, dtype=float)
    q = context.quantities_at(prices)
    if conduct.scenario == SCENARIO_SELF_PREFERENCING and conduct.sp[row]:
        return float(conduct.tau * (prices[conduct.airbnb] * q[conduct.airbnb]).sum())
    idx = conduct.firms == conduct.firms[row]
    margins = prices - conduct.effective_own_costs()
    return float((margins[idx] * q[idx]).sum())


def deviation_gaps(conduct: ConductSpec, context: DemandContext, prices, step=1e-4) -> np.ndarray:
    """Best unilateral improvement found by nudging each price by +/- step.

    At an exact equilibrium every entry is ~0 (order step^2 at most); this is
    the cheap local-optimality certificate used by the test suite.
    """
    prices = np.asarray(prices, dtype=float)
    gaps = np.zeros(prices.size)
    for j in range(prices.size):
        base = player_objective(conduct, context, prices, j)
        best = base
        for sign in (+1.0, -1.0):
            bumped = prices.copy()
            bumped[j] += sign * step
            best = max(best, player_objective(conduct, context, bumped, j))
        gaps[j] = best - base
    return gaps
