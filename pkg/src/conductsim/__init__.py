"""Structural accommodation-market toolkit.

Pipeline: ingest listing-level panel data, cluster prices into quality
tiers, flag algorithmically priced listings, estimate random-coefficient
nested-logit demand by two-step GMM, recover marginal costs from Bertrand
first-order conditions, re-solve prices under platform conduct scenarios,
and account for the welfare consequences.
"""

__version__ = "0.1.0"
