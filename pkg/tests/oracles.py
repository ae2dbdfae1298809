"""Independent oracles shared by the test modules.

Everything here is computed from first principles with plain formulas and
generic root finding / grid search, deliberately avoiding the package's own
solvers so that agreement is evidence rather than tautology.
"""

import numpy as np
from scipy.optimize import brentq, minimize_scalar


def rcnl_shares(delta, prices, sigma, rho, groups, values, weights):
    """Mixture shares by direct summation over taste draws (no log-sum-exp)."""
    delta = np.asarray(delta, float)
    prices = np.asarray(prices, float)
    groups = np.asarray(groups)
    values = np.asarray(values, float)
    weights = np.asarray(weights, float)
    ex = np.exp((delta[None, :] + sigma * np.outer(values, prices)) / (1.0 - rho))
    denom = np.ones(values.size)
    nest_sum = {}
    for g in np.unique(groups):
        ns = ex[:, groups == g].sum(axis=1)
        nest_sum[g] = ns
        denom += ns ** (1.0 - rho)
    s = np.empty_like(ex)
    for g, ns in nest_sum.items():
        mask = groups == g
        s[:, mask] = ex[:, mask] / ns[:, None] * (ns ** (1.0 - rho) / denom)[:, None]
    return weights @ s


class OracleMarket:
    """Minimal demand evaluator for oracle-side equilibrium computation.

    Mean utilities move with prices through alpha, characteristics stay
    frozen inside delta_ref, and quantities scale shares by market size;
    the same model as the package, evaluated through :func:`rcnl_shares`.
    """

    def __init__(self, delta_ref, prices_ref, alpha, sigma, rho, groups, values, weights, market_size):
        self.delta_ref = np.asarray(delta_ref, float)
        self.prices_ref = np.asarray(prices_ref, float)
        self.alpha = alpha
        self.sigma = sigma
        self.rho = rho
        self.groups = np.asarray(groups)
        self.values = np.asarray(values, float)
        self.weights = np.asarray(weights, float)
        self.market_size = market_size

    def quantities(self, prices):
        prices = np.asarray(prices, float)
        delta = self.delta_ref + self.alpha * (prices - self.prices_ref)
        s = rcnl_shares(delta, prices, self.sigma, self.rho, self.groups, self.values, self.weights)
        return self.market_size * s


def symmetric_duopoly_price(delta_ref, price_ref, alpha, mc, lo=None, hi=None):
    """Symmetric plain-logit duopoly equilibrium price by scalar root finding.

    Both products share delta_ref at price_ref and the same cost.  At a
    symmetric price p the own FOC reduces to 1 + (p - mc) alpha (1 - s(p)) = 0
    with s(p) the common share; brentq pins the root.
    """

    def share(p):
        d = delta_ref + alpha * (p - price_ref)
        e = np.exp(d)
        return e / (1.0 + 2.0 * e)

    def foc(p):
        return 1.0 + (p - mc) * alpha * (1.0 - share(p))

    lo = mc + 1e-9 if lo is None else lo
    hi = mc + 50.0 if hi is None else hi
    return brentq(foc, lo, hi, xtol=1e-13, rtol=8.9e-16)


def monopoly_price_logit(delta_ref, price_ref, alpha, mc):
    """Single-product plain-logit monopoly price by scalar root finding."""

    def share(p):
        d = delta_ref + alpha * (p - price_ref)
        e = np.exp(d)
        return e / (1.0 + e)

    def foc(p):
        return 1.0 + (p - mc) * alpha * (1.0 - share(p))

    return brentq(foc, mc + 1e-9, mc + 50.0, xtol=1e-13, rtol=8.9e-16)


def best_response_nash(
    market,
    firms,
    airbnb,
    sp,
    scenario,
    mc,
    tau,
    p0,
    sp_grid,
    price_bounds=(0.01, 10.0),
    max_rounds=120,
    tol=1e-9,
):
    """Nash equilibrium by cycling exact best responses until a fixed point.

    The platform's smart-pricing price (exactly one such product is
    supported) best-responds over an explicit grid; every other price
    best-responds by bounded scalar maximization of its firm's objective.
    All objectives are evaluated through the oracle demand in `market`.
    """
    firms = np.asarray(firms)
    airbnb = np.asarray(airbnb, bool)
    sp = np.asarray(sp, bool)
    mc = np.asarray(mc, float)
    eff_mc = np.where(sp, 0.0, mc)
    p = np.asarray(p0, float).copy()
    n = p.size

    def objective(prices, j):
        q = market.quantities(prices)
        if scenario == "self-preferencing" and sp[j]:
            return tau * (prices[airbnb] * q[airbnb]).sum()
        idx = firms == firms[j]
        return ((prices - eff_mc)[idx] * q[idx]).sum()

    for _ in range(max_rounds):
        moved = 0.0
        for j in range(n):
            if scenario == "self-preferencing" and sp[j]:
                vals = np.empty(sp_grid.size)
                trial = p.copy()
                for g, cand in enumerate(sp_grid):
                    trial[j] = cand
                    vals[g] = objective(trial, j)
                best = float(sp_grid[int(np.argmax(vals))])
            else:

                def neg(x, j=j):
                    trial = p.copy()
                    trial[j] = x
                    return -objective(trial, j)

                res = minimize_scalar(
                    neg, bounds=price_bounds, method="bounded", options={"xatol": 1e-12}
                )
                best = float(res.x)
            moved = max(moved, abs(best - p[j]))
            p[j] = best
        if moved < tol:
            break
    return p
