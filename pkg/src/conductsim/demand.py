"""Random-coefficient nested-logit demand.

A market has J inside products partitioned into nests (group labels >= 1)
plus an outside option that forms its own singleton nest (group 0) with mean
utility zero.  Consumer i in market m gets

    u_ijm = delta_jm + mu_ijm + zeta_igm + (1 - rho) * eps_ijm

where delta_jm = alpha * p_jm + x_jm' beta + xi_jm is the mean utility,
mu_ijm = sigma * v_i * p_jm is the random coefficient on price (v_i standard
normal), rho in [0, 1) is the nesting parameter, and zeta + (1 - rho) * eps
has the distribution that makes choice probabilities nested logit for each
draw.  Integration over v is Monte Carlo with fixed draws and uniform
weights.

For one draw, with scaled utilities w_j = (delta_j + mu_ij) / (1 - rho) and
group inclusive values IV_g = (1 - rho) * log(sum_{j in g} exp(w_j)):

    s_ij = exp(w_j - IV_{g(j)} / (1 - rho)) * exp(IV_{g(j)}) / D_i
    D_i  = 1 + sum_g exp(IV_g)

and market shares are the weighted mean of s_ij over draws.  All exponential
work is done through log-sum-exp so large mean utilities do not overflow.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .errors import (
    DegenerateSurplusError,
    InversionError,
    NumericalError,
    ValidationError,
)

logger = logging.getLogger(__name__)

DEFAULT_N_DRAWS = 500

SURPLUS_POLICIES = ("exclude-draw", "error", "clip")


@dataclass(frozen=True)
class TasteDraws:
    """Monte Carlo draws for the random price coefficient.

    `values` are i.i.d. standard normal, `weights` are uniform.  Constructing
    through :meth:`simulate` fixes the draws from a seed so every routine in
    the package integrates against the same nodes.
    """

    values: np.ndarray
    weights: np.ndarray
    seed: int | None = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        weights = np.asarray(self.weights, dtype=float)
        if values.ndim != 1 or values.size == 0:
            raise ValidationError("taste draws must be a non-empty 1-d array")
        if weights.shape != values.shape:
            raise ValidationError("draw weights must match draw values in shape")
        if not np.all(np.isfinite(values)) or not np.all(np.isfinite(weights)):
            raise ValidationError("taste draws and weights must be finite")
        if abs(weights.sum() - 1.0) > 1e-12:
            raise ValidationError("draw weights must sum to one")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "weights", weights)

    @classmethod
    def simulate(cls, n_draws: int = DEFAULT_N_DRAWS, seed: int = 0) -> "TasteDraws":
        if n_draws < 1:
            raise ValidationError("n_draws must be positive")
        rng = np.random.default_rng(seed)
        values = rng.standard_normal(n_draws)
        weights = np.full(n_draws, 1.0 / n_draws)
        return cls(values=values, weights=weights, seed=seed)

    @property
    def n(self) -> int:
        return self.values.size


@dataclass(frozen=True)
class NestStructure:
    """Grouping of the J inside products into nests.

    `groups` holds one integer label >= 1 per product; label 0 is reserved
    for the outside option, which is always present as a singleton nest with
    mean utility zero.
    """

    groups: np.ndarray
    # caches filled in __post_init__
    labels: np.ndarray = field(init=False, repr=False, compare=False)
    group_pos: np.ndarray = field(init=False, repr=False, compare=False)
    same_group: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        groups = np.asarray(self.groups)
        if groups.ndim != 1 or groups.size == 0:
            raise ValidationError("nest groups must be a non-empty 1-d array")
        if not np.issubdtype(groups.dtype, np.integer):
            raise ValidationError("nest groups must be integers")
        if np.any(groups < 1):
            raise ValidationError("inside-good nest labels must be >= 1 (0 is the outside option)")
        labels, group_pos = np.unique(groups, return_inverse=True)
        object.__setattr__(self, "groups", groups)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "group_pos", group_pos)
        object.__setattr__(self, "same_group", groups[:, None] == groups[None, :])

    @property
    def n_products(self) -> int:
        return self.groups.size

    @property
    def n_groups(self) -> int:
        return self.labels.size

    def members(self, label) -> np.ndarray:
        return np.flatnonzero(self.groups == label)


@dataclass(frozen=True)
class DemandParams:
    """Structural demand parameters.

    alpha : mean price coefficient (negative in any sensible fit)
    sigma : scale of the normal random coefficient on price
    rho   : nesting parameter, 0 <= rho < 1 (0 collapses to plain logit)
    beta  : coefficients on observed characteristics, optional here because
            share computations only involve them through delta
    """

    alpha: float
    sigma: float
    rho: float
    beta: np.ndarray | None = None

    def __post_init__(self):
        if not np.isfinite(self.alpha) or not np.isfinite(self.sigma):
            raise ValidationError("alpha and sigma must be finite")
        if not 0.0 <= self.rho < 1.0:
            raise ValidationError(f"rho must lie in [0, 1), got {self.rho}")
        if self.beta is not None:
            object.__setattr__(self, "beta", np.asarray(self.beta, dtype=float))

    def price_coefficients(self, draws: TasteDraws) -> np.ndarray:
        """Per-draw price coefficient alpha_i = alpha + sigma * v_i."""
        return self.alpha + self.sigma * draws.values


def _mu(prices, params, draws):
    """Random-coefficient utility component, shape (n_draws, J)."""
    return params.sigma * np.outer(draws.values, prices)


def _individual_shares(delta, mu, rho, nests):
    """Per-draw choice probabilities and nest machinery.

    Returns (s, within, log_denom) where s is (N, J) choice probabilities,
    within is (N, J) conditional within-nest shares, and log_denom is (N,)
    log(1 + sum_g exp(IV_g)) including the outside option's unit term.
    """
    scaled = (delta[None, :] + mu) / (1.0 - rho)
    n_draws = scaled.shape[0]
    lse = np.empty((n_draws, nests.n_groups))
    for g in range(nests.n_groups):
        idx = np.flatnonzero(nests.group_pos == g)
        lse[:, g] = logsumexp(scaled[:, idx], axis=1)
    log_within = scaled - lse[:, nests.group_pos]
    iv = (1.0 - rho) * lse
    # outside option contributes exp(0) = 1 to the nest-level denominator
    log_denom = logsumexp(np.concatenate([np.zeros((n_draws, 1)), iv], axis=1), axis=1)
    log_nest = iv - log_denom[:, None]
    s = np.exp(log_within + log_nest[:, nests.group_pos])
    within = np.exp(log_within)
    return s, within, log_denom


def compute_shares(delta, prices, params, nests, draws):
    """Market shares of the J inside products.

    Parameters
    ----------
    delta : (J,) mean utilities
    prices : (J,) prices (enter only the random coefficient here; their
        mean-utility effect is already inside delta)
    params, nests, draws : model primitives

    Returns
    -------
    (J,) shares, each in (0, 1), summing to less than one.
    """
    delta = np.asarray(delta, dtype=float)
    prices = np.asarray(prices, dtype=float)
    if delta.shape != (nests.n_products,) or prices.shape != (nests.n_products,):
        raise ValidationError("delta and prices must have one entry per product")
    if not np.all(np.isfinite(delta)) or not np.all(np.isfinite(prices)):
        raise ValidationError("delta and prices must be finite")
    s, _, _ = _individual_shares(delta, _mu(prices, params, draws), params.rho, nests)
    shares = draws.weights @ s
    if not np.all(np.isfinite(shares)):
        raise NumericalError("share computation produced non-finite values")
    return shares


def demand_quantities(shares, market_size):
    """Quantities q_j = s_j * I_m for market size I_m (consumer count)."""
    shares = np.asarray(shares, dtype=float)
    if market_size <= 0:
        raise ValidationError("market size must be positive")
    return shares * float(market_size)


@dataclass
class InversionResult:
    delta: np.ndarray
    iterations: int
    residual: float


def invert_shares(
    shares,
    prices,
    params,
    nests,
    draws,
    delta0=None,
    tol=1e-13,
    max_iter=10_000,
):
    """Solve s(delta) = shares for delta by the dampened BLP contraction.

    The update is delta <- delta + (1 - rho) * (log s_obs - log s(delta)),
    the nested-logit-safe variant of the Berry contraction.  Convergence is
    sup-norm of the log-share residual below `tol`.
    """
    shares = np.asarray(shares, dtype=float)
    prices = np.asarray(prices, dtype=float)
    if shares.shape != (nests.n_products,):
        raise ValidationError("observed shares must have one entry per product")
    if np.any(shares <= 0.0):
        raise ValidationError("observed shares must be strictly positive")
    if shares.sum() >= 1.0:
        raise ValidationError("inside shares must sum to less than one")

    log_obs = np.log(shares)
    if delta0 is None:
        # plain-logit inversion as a cheap starting point
        delta = log_obs - np.log(1.0 - shares.sum())
    else:
        delta = np.asarray(delta0, dtype=float).copy()

    mu = _mu(prices, params, draws)
    damp = 1.0 - params.rho
    for it in range(1, max_iter + 1):
        s, _, _ = _individual_shares(delta, mu, params.rho, nests)
        model = draws.weights @ s
        with np.errstate(divide="ignore"):
            resid = log_obs - np.log(model)
        if not np.all(np.isfinite(resid)):
            raise InversionError(
                f"share inversion produced non-finite residuals at iteration {it}"
            )
        gap = float(np.max(np.abs(resid)))
        if gap < tol:
            return InversionResult(delta=delta, iterations=it, residual=gap)
        delta = delta + damp * resid
    raise InversionError(
        f"share inversion did not reach tol={tol:g} within {max_iter} iterations "
        f"(last residual {gap:.3e})"
    )


def price_response_parts(delta, prices, params, nests, draws):
    """Decomposition of the share-price Jacobian: ds/dp = diag(lam) - gamma.

    With per-draw choice probabilities s_ij, within-nest shares w_ij, and
    price coefficients alpha_i = alpha + sigma * v_i,

        lam_j      = E_i[ alpha_i * s_ij ] / (1 - rho)
        gamma[j,k] = E_i[ alpha_i * ( rho/(1-rho) * s_ij * w_ik * 1{same nest}
                                      + s_ij * s_ik ) ]

    Both are in share units per unit price; multiply by market size for
    quantity derivatives.  This split is exactly what the markup fixed point
    on the supply side consumes.
    """
    delta = np.asarray(delta, dtype=float)
    prices = np.asarray(prices, dtype=float)
    rho = params.rho
    s, within, _ = _individual_shares(delta, _mu(prices, params, draws), rho, nests)
    alpha_i = params.price_coefficients(draws)
    wa = draws.weights * alpha_i

    lam = (wa @ s) / (1.0 - rho)
    scaled_s = wa[:, None] * s
    gamma = (rho / (1.0 - rho)) * (scaled_s.T @ within) * nests.same_group
    gamma += scaled_s.T @ s
    return lam, gamma


def share_price_jacobian(delta, prices, params, nests, draws):
    """Jacobian ds/dp, entry (j, k) = d s_j / d p_k, in share units."""
    lam, gamma = price_response_parts(delta, prices, params, nests, draws)
    return np.diag(lam) - gamma


@dataclass
class SurplusResult:
    """Per-capita consumer surplus in price units, with draw diagnostics."""

    per_capita: float
    per_draw: np.ndarray
    valid: np.ndarray
    n_excluded: int
    policy: str


def consumer_surplus(delta, prices, params, nests, draws, policy="exclude-draw", clip_eps=1e-6):
    """Expected per-capita consumer surplus.

    For each draw the surplus is log(1 + sum_g exp(IV_g)) divided by the
    draw's marginal utility of income, taken as -(alpha + sigma * v_i).
    Draws whose price coefficient is non-negative have no well-defined
    money-metric surplus; `policy` decides what to do with them:

    - "exclude-draw": drop them and renormalize weights (default; the count
      is logged),
    - "error": raise,
    - "clip": force the coefficient to -clip_eps.

    If every draw is invalid the surplus is degenerate and an error is raised
    regardless of policy.
    """
    if policy not in SURPLUS_POLICIES:
        raise ValidationError(f"unknown surplus policy {policy!r}; choose from {SURPLUS_POLICIES}")
    delta = np.asarray(delta, dtype=float)
    prices = np.asarray(prices, dtype=float)
    _, _, log_denom = _individual_shares(delta, _mu(prices, params, draws), params.rho, nests)
    alpha_i = params.price_coefficients(draws)
    money = -alpha_i  # marginal utility of income per draw
    valid = money > 0.0
    n_bad = int(np.count_nonzero(~valid))

    if n_bad == draws.n:
        raise DegenerateSurplusError(
            "consumer surplus is undefined: every draw has a non-negative price coefficient"
        )
    if n_bad and policy == "error":
        raise DegenerateSurplusError(
            f"{n_bad} of {draws.n} draws have a non-negative price coefficient"
        )

    if policy == "clip":
        money = np.maximum(money, clip_eps)
        per_draw = log_denom / money
        weights = draws.weights
        kept = np.ones(draws.n, dtype=bool)
    else:
        per_draw = np.full(draws.n, np.nan)
        per_draw[valid] = log_denom[valid] / money[valid]
        weights = np.where(valid, draws.weights, 0.0)
        weights = weights / weights.sum()
        kept = valid
        if n_bad:
            logger.info("consumer surplus: excluded %d of %d draws", n_bad, draws.n)

    per_capita = float(np.nansum(weights * per_draw))
    return SurplusResult(
        per_capita=per_capita,
        per_draw=per_draw,
        valid=kept,
        n_excluded=0 if policy == "clip" else n_bad,
        policy=policy,
    )


@dataclass(frozen=True)
class DemandContext:
    """A market's demand system pinned at reference prices.

    Stores everything needed to evaluate demand at counterfactual prices:
    mean utilities react to a price move through alpha * (p - p_ref) while
    characteristics and unobservables stay fixed inside delta_ref.
    """

    params: DemandParams
    nests: NestStructure
    draws: TasteDraws
    delta_ref: np.ndarray
    prices_ref: np.ndarray
    market_size: float

    def __post_init__(self):
        delta_ref = np.asarray(self.delta_ref, dtype=float)
        prices_ref = np.asarray(self.prices_ref, dtype=float)
        if delta_ref.shape != (self.nests.n_products,):
            raise ValidationError("delta_ref must have one entry per product")
        if prices_ref.shape != delta_ref.shape:
            raise ValidationError("prices_ref must match delta_ref in shape")
        if self.market_size <= 0:
            raise ValidationError("market size must be positive")
        object.__setattr__(self, "delta_ref", delta_ref)
        object.__setattr__(self, "prices_ref", prices_ref)
        object.__setattr__(self, "market_size", float(self.market_size))

    @property
    def n_products(self) -> int:
        return self.nests.n_products

    def delta_at(self, prices) -> np.ndarray:
        prices = np.asarray(prices, dtype=float)
        return self.delta_ref + self.params.alpha * (prices - self.prices_ref)

    def shares_at(self, prices) -> np.ndarray:
        return compute_shares(self.delta_at(prices), prices, self.params, self.nests, self.draws)

    def quantities_at(self, prices) -> np.ndarray:
        return demand_quantities(self.shares_at(prices), self.market_size)

    def response_parts_at(self, prices):
        """(lam, gamma) scaled to quantity units: dq/dp = diag(lam) - gamma."""
        lam, gamma = price_response_parts(
            self.delta_at(prices), prices, self.params, self.nests, self.draws
        )
        return lam * self.market_size, gamma * self.market_size

    def quantity_jacobian_at(self, prices) -> np.ndarray:
        lam, gamma = self.response_parts_at(prices)
        return np.diag(lam) - gamma

    def surplus_at(self, prices, policy="exclude-draw") -> SurplusResult:
        return consumer_surplus(
            self.delta_at(prices), prices, self.params, self.nests, self.draws, policy=policy
        )
