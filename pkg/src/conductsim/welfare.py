"""Welfare accounting for solved market equilibria.

All amounts are in the same 100,000-yen unit as internal prices; the report
layer rescales to 10,000-yen units for presentation.  Per market:

- consumer surplus is the per-capita expected surplus times market size;
- producer surplus is the sellers' margin over effective costs (smart-priced
  listings carry zero marginal cost), summed over all products;
- platform commission is the fee rate times platform bookings revenue.

The commission is a transfer from hosts to the platform inside producer
surplus, so social welfare is consumer plus producer surplus with the
commission reported separately rather than added on top.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .demand import DemandContext
from .errors import PrerequisiteError, ValidationError
from .supply import ConductSpec, commission_revenue, firm_profits

logger = logging.getLogger(__name__)

# internal 100,000-yen amounts -> reported 10,000-yen amounts
REPORT_SCALE = 10.0

DAYS_PER_YEAR = 365


@dataclass
class MarketWelfare:
    market_id: str
    date: str
    consumer_surplus: float
    producer_surplus: float
    commission: float
    social_welfare: float
    profits_by_firm: dict
    n_bad_draws: int


def market_welfare(
    market_id,
    date,
    context: DemandContext,
    conduct: ConductSpec,
    prices,
    policy: str = "exclude-draw",
) -> MarketWelfare:
    """Welfare at given prices for one market under one conduct scenario."""
    if conduct.marginal_costs is None:
        raise PrerequisiteError("welfare needs marginal costs on the conduct spec")
    prices = np.asarray(prices, dtype=float)
    surplus = context.surplus_at(prices, policy=policy)
    cs = float(surplus.per_capita * context.market_size)
    quantities = context.quantities_at(prices)
    margins = prices - conduct.effective_own_costs()
    ps = float(margins @ quantities)
    fee = commission_revenue(conduct, prices, quantities)
    return MarketWelfare(
        market_id=market_id,
        date=date,
        consumer_surplus=cs,
        producer_surplus=ps,
        commission=fee,
        social_welfare=cs + ps,
        profits_by_firm=firm_profits(conduct, prices, quantities),
        n_bad_draws=surplus.n_excluded,
    )


WELFARE_FIELDS = ("consumer_surplus", "producer_surplus", "commission", "social_welfare")


def percent_change(base: float, counterfactual: float):
    """Percent change, or None when the base is zero."""
    if base == 0.0:
        return None
    return 100.0 * (counterfactual - base) / base


def scenario_delta(base: MarketWelfare, counterfactual: MarketWelfare) -> dict:
    """Per-market percent changes for each welfare component."""
    if base.market_id != counterfactual.market_id:
        raise ValidationError("scenario comparison must pair the same market")
    return {
        f: percent_change(getattr(base, f), getattr(counterfactual, f))
        for f in WELFARE_FIELDS
    }


@dataclass
class WelfareSummary:
    n_markets: int
    n_dates: int
    mean_base: dict
    sd_base: dict
    mean_counterfactual: dict
    sd_counterfactual: dict
    mean_pct_change: dict
    sd_pct_change: dict
    total_base: dict  # summed across all markets
    total_counterfactual: dict
    daily_base: dict  # mean across dates of the per-date totals
    daily_counterfactual: dict
    annual_base: dict
    annual_counterfactual: dict


def aggregate(pairs) -> WelfareSummary:
    """Summarize (base, counterfactual) welfare pairs across markets.

    Percent changes are averaged per market, mirroring how mean relative
    effects are usually quoted; markets with a zero base for a component
    are skipped for that component's change statistics.
    """
    pairs = list(pairs)
    if not pairs:
        raise ValidationError("no markets to aggregate")
    dates = sorted({b.date for b, _ in pairs})
    out = {}
    for name, scen in (("base", 0), ("counterfactual", 1)):
        mean, sd, total, daily = {}, {}, {}, {}
        for f in WELFARE_FIELDS:
            vals = np.array([getattr(p[scen], f) for p in pairs])
            mean[f] = float(vals.mean())
            sd[f] = float(vals.std(ddof=1)) if vals.size > 1 else 0.0
            total[f] = float(vals.sum())
            daily[f] = total[f] / len(dates)
        out[name] = (mean, sd, total, daily)

    mean_pct, sd_pct = {}, {}
    for f in WELFARE_FIELDS:
        changes = [
            d for b, c in pairs if (d := percent_change(getattr(b, f), getattr(c, f))) is not None
        ]
        if changes:
            arr = np.asarray(changes)
            mean_pct[f] = float(arr.mean())
            sd_pct[f] = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
        else:
            mean_pct[f] = None
            sd_pct[f] = None

    (mean_b, sd_b, tot_b, daily_b) = out["base"]
    (mean_c, sd_c, tot_c, daily_c) = out["counterfactual"]
    return WelfareSummary(
        n_markets=len(pairs),
        n_dates=len(dates),
        mean_base=mean_b,
        sd_base=sd_b,
        mean_counterfactual=mean_c,
        sd_counterfactual=sd_c,
        mean_pct_change=mean_pct,
        sd_pct_change=sd_pct,
        total_base=tot_b,
        total_counterfactual=tot_c,
        daily_base=daily_b,
        daily_counterfactual=daily_c,
        annual_base={f: daily_b[f] * DAYS_PER_YEAR for f in WELFARE_FIELDS},
        annual_counterfactual={f: daily_c[f] * DAYS_PER_YEAR for f in WELFARE_FIELDS},
    )


def to_report_units(value):
    """Convert internal 100,000-yen amounts to reported 10,000-yen units."""
    if value is None:
        return None
    return value * REPORT_SCALE
