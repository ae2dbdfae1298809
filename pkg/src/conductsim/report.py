"""Presentation tables and figures for the counterfactual pipeline.

Builds small CSV-ready frames (demand estimates, cost summaries by seller
group, commission and welfare comparisons) plus the data behind two
diagnostic figures, and renders the figures to PNG with the Agg backend.
Welfare amounts are converted to 10,000-yen units here; prices and costs
stay in the 100,000-yen unit used internally.
"""

from __future__ import annotations

import numpy as np
import pandas as pd

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .welfare import WELFARE_FIELDS, to_report_units  # noqa: E402

SELLER_TYPES = ("sp_host", "host", "hotel")

PNG_METADATA = {"Software": "conductsim"}


def seller_type(airbnb, sp):
    airbnb = np.asarray(airbnb, dtype=bool)
    sp = np.asarray(sp, dtype=bool)
    return np.where(sp, "sp_host", np.where(airbnb, "host", "hotel"))


def demand_table(result_dict) -> pd.DataFrame:
    """Coefficient table: structural parameters first, fit stats last."""
    theta = dict(zip(result_dict["labels"], result_dict["theta"]))
    ses = dict(zip(result_dict["labels"], result_dict["se"]))
    front = ["price", "sigma", "rho"]
    chars = [
        l
        for l in result_dict["labels"]
        if l not in front
        and not l.startswith(("ward=", "month=", "dow="))
        and l != "const"
    ]
    rows = [
        {"parameter": lab, "estimate": theta[lab], "std_error": ses[lab]}
        for lab in front + chars + ["const"]
    ]
    n_fe = sum(l.startswith(("ward=", "month=", "dow=")) for l in result_dict["labels"])
    rows.append({"parameter": "n_fixed_effects", "estimate": n_fe, "std_error": np.nan})
    rows.append({"parameter": "n_markets", "estimate": result_dict["n_markets"], "std_error": np.nan})
    rows.append({"parameter": "n_obs", "estimate": result_dict["n_obs"], "std_error": np.nan})
    rows.append({"parameter": "gmm_objective", "estimate": result_dict["objective"], "std_error": np.nan})
    return pd.DataFrame(rows)


def costs_table(costs_frame) -> pd.DataFrame:
    """Price, marginal-cost, and markup summary by seller group."""
    df = costs_frame.copy()
    df["seller_type"] = seller_type(df["airbnb"], df["sp"])
    rows = []
    for group in SELLER_TYPES:
        g = df[df["seller_type"] == group]
        if g.empty:
            continue
        rows.append(
            {
                "seller_type": group,
                "n": len(g),
                "price_mean": g["price"].mean(),
                "price_sd": g["price"].std(ddof=1) if len(g) > 1 else 0.0,
                "mc_mean": g["marginal_cost"].mean(),
                "mc_sd": g["marginal_cost"].std(ddof=1) if len(g) > 1 else 0.0,
                "markup_mean": g["markup"].mean(),
                "markup_sd": g["markup"].std(ddof=1) if len(g) > 1 else 0.0,
                "n_negative_mc": int(g["negative_mc"].sum()),
            }
        )
    return pd.DataFrame(rows)


def commission_table(summary) -> pd.DataFrame:
    """Platform commission under each scenario, in 10,000-yen units."""
    rows = [
        {
            "statistic": "mean_per_market",
            "baseline": to_report_units(summary.mean_base["commission"]),
            "counterfactual": to_report_units(summary.mean_counterfactual["commission"]),
        },
        {
            "statistic": "sd_per_market",
            "baseline": to_report_units(summary.sd_base["commission"]),
            "counterfactual": to_report_units(summary.sd_counterfactual["commission"]),
        },
        {
            "statistic": "mean_pct_change",
            "baseline": np.nan,
            "counterfactual": summary.mean_pct_change["commission"],
        },
        {
            "statistic": "annual_total",
            "baseline": to_report_units(summary.annual_base["commission"]),
            "counterfactual": to_report_units(summary.annual_counterfactual["commission"]),
        },
    ]
    return pd.DataFrame(rows)


def welfare_table(summary) -> pd.DataFrame:
    """Welfare components under each scenario, in 10,000-yen units."""
    rows = []
    for f in WELFARE_FIELDS:
        if f == "commission":
            continue
        rows.append(
            {
                "component": f,
                "baseline_mean": to_report_units(summary.mean_base[f]),
                "baseline_sd": to_report_units(summary.sd_base[f]),
                "counterfactual_mean": to_report_units(summary.mean_counterfactual[f]),
                "counterfactual_sd": to_report_units(summary.sd_counterfactual[f]),
                "mean_pct_change": summary.mean_pct_change[f],
                "sd_pct_change": summary.sd_pct_change[f],
            }
        )
    return pd.DataFrame(rows)


def price_profit_changes(counterfactual_frame, costs_frame) -> pd.DataFrame:
    """Per-listing percent changes in price and profit between scenarios."""
    cf = counterfactual_frame
    base = cf[cf["scenario"] == "baseline"].set_index(["market_id", "listing_id"])
    alt = cf[cf["scenario"] != "baseline"].set_index(["market_id", "listing_id"])
    joined = base.join(alt, lsuffix="_base", rsuffix="_cf", how="inner")
    flags = costs_frame.set_index(["market_id", "listing_id"])

    eff_cost = flags["marginal_cost"].where(~flags["sp"].astype(bool), 0.0)
    profit_base = (joined["price_base"] - eff_cost) * joined["quantity_base"]
    profit_cf = (joined["price_cf"] - eff_cost) * joined["quantity_cf"]
    out = pd.DataFrame(
        {
            "seller_type": seller_type(flags["airbnb"], flags["sp"]),
            "price_change_pct": 100.0 * (joined["price_cf"] / joined["price_base"] - 1.0),
            "profit_change_pct": np.where(
                profit_base != 0.0, 100.0 * (profit_cf / profit_base - 1.0), np.nan
            ),
        }
    )
    return out.reset_index().sort_values(["market_id", "listing_id"], kind="stable")


def sp_price_change_by_market(changes_frame, costs_frame) -> pd.DataFrame:
    """Per-market smart-pricing exposure against the mean price change."""
    n_sp = (
        costs_frame[costs_frame["sp"].astype(bool)]
        .groupby("market_id")["listing_id"]
        .count()
    )
    rows = []
    for market_id, g in changes_frame.groupby("market_id", sort=True):
        rows.append(
            {
                "market_id": market_id,
                "n_sp": int(n_sp.get(market_id, 0)),
                "n_listings": len(g),
                "mean_price_change_pct": g["price_change_pct"].mean(),
            }
        )
    return pd.DataFrame(rows)


_STYLE = {
    "sp_host": dict(color="tab:red", marker="o", label="smart-priced hosts"),
    "host": dict(color="tab:green", marker="x", label="other hosts"),
    "hotel": dict(color="tab:blue", marker="^", label="hotels"),
}


def render_price_profit_scatter(changes_frame, path, metadata=None):
    fig, ax = plt.subplots(figsize=(7, 5))
    for group in SELLER_TYPES:
        g = changes_frame[changes_frame["seller_type"] == group]
        if g.empty:
            continue
        ax.scatter(
            g["price_change_pct"], g["profit_change_pct"], s=18, alpha=0.7, **_STYLE[group]
        )
    ax.axhline(0.0, color="gray", lw=0.6)
    ax.axvline(0.0, color="gray", lw=0.6)
    ax.set_xlabel("price change (%)")
    ax.set_ylabel("profit change (%)")
    ax.set_title("Listing-level changes from platform pricing control")
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata={**PNG_METADATA, **(metadata or {})})
    plt.close(fig)


def render_sp_price_change(by_market_frame, path, metadata=None):
    fig, ax = plt.subplots(figsize=(7, 5))
    ax.scatter(
        by_market_frame["n_sp"],
        by_market_frame["mean_price_change_pct"],
        s=20,
        alpha=0.7,
        color="tab:purple",
    )
    means = by_market_frame.groupby("n_sp")["mean_price_change_pct"].mean()
    ax.plot(means.index, means.values, color="black", lw=1.2, marker="s", ms=4)
    ax.set_xlabel("smart-priced listings in market")
    ax.set_ylabel("mean price change (%)")
    ax.set_title("Market-level price response by smart-pricing exposure")
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata={**PNG_METADATA, **(metadata or {})})
    plt.close(fig)
