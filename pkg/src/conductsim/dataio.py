"""Data model, ingestion, classification stages, and synthetic data.

The unit of observation is a listing-date row; a market is one (date, ward)
pair.  Ingestion validates and normalizes raw listing panels (prices are
converted to 100,000-yen units, hotel ratings rescaled from a 10-point to a
5-point scale, duplicate host-price rows merged), then groups rows into
:class:`MarketData` records.  Market size is twice the total room count, so
inside shares can never sum to more than one half.

Downstream stages operate on lists of markets and return new lists:
k-means price tiers (label 1 = highest price), the smart-pricing
classifier (bottom-two price tiers plus strict day-to-day price changes),
the competition-mode filter, the minimum-share screen, and nest assignment.
A synthetic data generator with a known parameterization closes the loop
for testing and demos.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from datetime import datetime

import numpy as np
import pandas as pd
from sklearn.cluster import KMeans

from .demand import DemandParams, NestStructure, TasteDraws, compute_shares
from .errors import PrerequisiteError, ValidationError

logger = logging.getLogger(__name__)

# unit conventions: prices are stored in 100,000-yen units internally and
# reported in 10,000-yen units (a factor of 10 between the two)
PRICE_UNIT_YEN = 100_000.0
REPORT_UNIT_YEN = 10_000.0

MARKET_SIZE_PER_ROOM = 2.0
DEFAULT_K_CLUSTERS = 5
N_LOW_PRICE_CLUSTERS = 2  # the bottom-two price tiers are smart-pricing territory
SHARE_SCREEN_THRESHOLD = 0.005  # shares strictly below this are dropped

PLATFORM_AIRBNB = "airbnb"
PLATFORM_HOTEL = "hotel"
PLATFORMS = (PLATFORM_AIRBNB, PLATFORM_HOTEL)

HOTEL_RATING_SCALE = 10.0  # ratings on a 10-point scale are halved to 1-5

# capacity weights by bed type, relative to a single bed
BED_WEIGHTS = {
    "single": 1.0,
    "semi_double": 1.33,
    "double": 1.56,
    "queen": 1.78,
    "king": 2.0,
    "bunk": 2.0,
    "sofa": 1.0,
    "futon": 1.0,
}

RATING_COLUMNS = ("rating_room", "rating_clean", "rating_location", "rating_staff")
X_COLUMNS = ("beds", "n_reviews") + RATING_COLUMNS + ("airbnb",)
CONTINUOUS_X_COLUMNS = ("beds", "n_reviews") + RATING_COLUMNS

REQUIRED_COLUMNS = (
    "date",
    "ward",
    "listing_id",
    "host_id",
    "platform",
    "price",
    "n_reviews",
    "rating_room",
    "rating_clean",
    "rating_location",
    "rating_staff",
    "vacancies",
    "rooms",
)


@dataclass
class MarketData:
    """One (date, ward) market of products with shares and annotations."""

    market_id: str
    date: str
    ward: str
    listing_id: np.ndarray
    host_id: np.ndarray
    airbnb: np.ndarray
    price: np.ndarray
    beds: np.ndarray
    n_reviews: np.ndarray
    rating_room: np.ndarray
    rating_clean: np.ndarray
    rating_location: np.ndarray
    rating_staff: np.ndarray
    vacancies: np.ndarray
    rooms: np.ndarray
    market_size: float = field(default=0.0)
    shares: np.ndarray = field(default=None)
    cluster: np.ndarray = field(default=None)
    sp: np.ndarray = field(default=None)
    nest: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.market_size == 0.0:
            self.market_size = MARKET_SIZE_PER_ROOM * float(np.sum(self.rooms))
        if self.shares is None:
            self.shares = np.asarray(self.vacancies, dtype=float) / self.market_size

    @property
    def n_products(self) -> int:
        return self.price.size

    @property
    def month(self) -> int:
        return datetime.strptime(self.date, "%Y-%m-%d").month

    @property
    def day_of_week(self) -> int:
        return datetime.strptime(self.date, "%Y-%m-%d").weekday()

    def characteristics(self):
        """Product characteristics matrix in X_COLUMNS order."""
        x = np.column_stack(
            [
                self.beds,
                self.n_reviews,
                self.rating_room,
                self.rating_clean,
                self.rating_location,
                self.rating_staff,
                self.airbnb.astype(float),
            ]
        )
        return x, list(X_COLUMNS)

    def subset(self, mask) -> "MarketData":
        """Keep only masked products, recomputing market size and shares."""
        mask = np.asarray(mask, dtype=bool)
        return MarketData(
            market_id=self.market_id,
            date=self.date,
            ward=self.ward,
            listing_id=self.listing_id[mask],
            host_id=self.host_id[mask],
            airbnb=self.airbnb[mask],
            price=self.price[mask],
            beds=self.beds[mask],
            n_reviews=self.n_reviews[mask],
            rating_room=self.rating_room[mask],
            rating_clean=self.rating_clean[mask],
            rating_location=self.rating_location[mask],
            rating_staff=self.rating_staff[mask],
            vacancies=self.vacancies[mask],
            rooms=self.rooms[mask],
            cluster=None if self.cluster is None else self.cluster[mask],
            sp=None if self.sp is None else self.sp[mask],
            nest=None if self.nest is None else self.nest[mask],
        )


def market_size_from_rooms(rooms) -> float:
    """Consumer count for a market: twice its total room inventory."""
    return MARKET_SIZE_PER_ROOM * float(np.sum(rooms))


# ---------------------------------------------------------------------------
# ingestion
# ---------------------------------------------------------------------------


def load_manifest(path_or_dict):
    """Manifest with optional column remapping and hotel rating scale."""
    if path_or_dict is None:
        return {"columns": {}, "hotel_rating_scale": HOTEL_RATING_SCALE}
    if isinstance(path_or_dict, dict):
        manifest = dict(path_or_dict)
    else:
        with open(path_or_dict) as fh:
            manifest = json.load(fh)
    manifest.setdefault("columns", {})
    manifest.setdefault("hotel_rating_scale", HOTEL_RATING_SCALE)
    return manifest


def _weighted_beds(df, errors):
    """Bed capacity from a `beds` column or from per-type count columns."""
    if "beds" in df.columns:
        beds = pd.to_numeric(df["beds"], errors="coerce")
        bad = beds.isna() | (beds <= 0)
        for line in df.index[bad] + 2:
            errors.append((int(line), "beds must be a positive number"))
        return beds.to_numpy(dtype=float)
    type_cols = {t: f"beds_{t}" for t in BED_WEIGHTS}
    present = [t for t, c in type_cols.items() if c in df.columns]
    if not present:
        raise ValidationError("missing column: beds (or per-type beds_* columns)")
    total = np.zeros(len(df))
    for t in present:
        counts = pd.to_numeric(df[type_cols[t]], errors="coerce").fillna(0.0)
        bad = counts < 0
        for line in df.index[bad] + 2:
            errors.append((int(line), f"{type_cols[t]} must be non-negative"))
        total += BED_WEIGHTS[t] * counts.to_numpy(dtype=float)
    bad = total <= 0
    for line in np.flatnonzero(bad) + 2:
        errors.append((int(line), "listing has no beds"))
    return total


def ingest(path, manifest=None) -> list:
    """Read a raw listing panel CSV into validated, merged markets.

    Raw prices are in yen and divided by 100,000; hotel ratings arrive on
    the manifest's `hotel_rating_scale` (default 10) and are rescaled to the
    1-5 scale.  Rows with the same (date, ward, host, price) are one
    property listed multiple times: vacancies and rooms are summed, other
    fields taken from the first row.  Row-level problems are collected and
    reported together with CSV line numbers.
    """
    manifest = load_manifest(manifest)
    try:
        df = pd.read_csv(path, dtype=str, keep_default_na=False, comment="#")
    except pd.errors.EmptyDataError:
        return []
    if df.empty:
        return []
    rename = {v: k for k, v in manifest["columns"].items()}
    df = df.rename(columns=rename)

    for col in REQUIRED_COLUMNS:
        if col == "price":
            continue
        if col not in df.columns:
            raise ValidationError(f"missing column: {col}")
    if "price" not in df.columns:
        raise ValidationError("missing column: price")

    errors: list = []

    platform = df["platform"].str.strip().str.lower()
    bad = ~platform.isin(PLATFORMS)
    for line in df.index[bad] + 2:
        errors.append((int(line), f"platform must be one of {PLATFORMS}"))

    def numeric(col, condition, message):
        vals = pd.to_numeric(df[col], errors="coerce")
        bad = vals.isna() | ~condition(vals)
        for line in df.index[bad] + 2:
            errors.append((int(line), message))
        return vals.to_numpy(dtype=float)

    price = numeric("price", lambda v: v > 0, "price must be positive")
    n_reviews = numeric("n_reviews", lambda v: v >= 0, "n_reviews must be non-negative")
    vacancies = numeric("vacancies", lambda v: v >= 0, "vacancies must be non-negative")
    rooms = numeric("rooms", lambda v: v >= 1, "rooms must be at least 1")
    beds = _weighted_beds(df, errors)

    over = vacancies > rooms
    for line in df.index[over & ~np.isnan(vacancies) & ~np.isnan(rooms)] + 2:
        errors.append((int(line), "vacancies cannot exceed rooms"))

    is_hotel = (platform == PLATFORM_HOTEL).to_numpy()
    scale = float(manifest["hotel_rating_scale"]) / 5.0
    ratings = {}
    for col in RATING_COLUMNS:
        vals = pd.to_numeric(df[col], errors="coerce").to_numpy(dtype=float)
        vals = np.where(is_hotel, vals / scale, vals)
        bad = ~np.isfinite(vals) | (vals < 1.0) | (vals > 5.0)
        for line in np.flatnonzero(bad) + 2:
            errors.append((int(line), f"{col} must lie in [1, 5] after rescaling"))
        ratings[col] = vals

    dates = df["date"].str.strip()
    for i, d in enumerate(dates):
        try:
            datetime.strptime(d, "%Y-%m-%d")
        except ValueError:
            errors.append((i + 2, "date must be YYYY-MM-DD"))

    if errors:
        errors.sort()
        shown = "; ".join(f"line {ln}: {msg}" for ln, msg in errors[:20])
        raise ValidationError(f"{len(errors)} bad rows in {path}: {shown}")

    clean = pd.DataFrame(
        {
            "date": dates.to_numpy(),
            "ward": df["ward"].str.strip().to_numpy(),
            "listing_id": df["listing_id"].str.strip().to_numpy(),
            "host_id": df["host_id"].str.strip().to_numpy(),
            "airbnb": ~is_hotel,
            "price": price / PRICE_UNIT_YEN,
            "beds": beds,
            "n_reviews": n_reviews,
            "vacancies": vacancies,
            "rooms": rooms,
            **ratings,
        }
    )

    # rows with the same market, host, and price are one property
    n_before = len(clean)
    keys = ["date", "ward", "host_id", "price"]
    agg = {
        c: ("sum" if c in ("vacancies", "rooms") else "first")
        for c in clean.columns
        if c not in keys
    }
    clean = clean.groupby(keys, as_index=False, sort=False).agg(agg)
    n_merged = n_before - len(clean)
    if n_merged:
        logger.info("ingest: merged %d duplicate host-price rows", n_merged)

    markets = _frame_to_markets(clean)
    logger.info(
        "ingest: %d rows across %d markets from %s", sum(m.n_products for m in markets), len(markets), path
    )
    return markets


def _frame_to_markets(df) -> list:
    markets = []
    df = df.assign(market_id=df["date"] + ":" + df["ward"])
    for market_id, g in df.groupby("market_id", sort=True):
        g = g.sort_values("listing_id", kind="stable")
        kwargs = dict(
            market_id=market_id,
            date=g["date"].iloc[0],
            ward=g["ward"].iloc[0],
            listing_id=g["listing_id"].to_numpy(),
            host_id=g["host_id"].to_numpy(),
            airbnb=g["airbnb"].to_numpy(dtype=bool),
            price=g["price"].to_numpy(dtype=float),
            beds=g["beds"].to_numpy(dtype=float),
            n_reviews=g["n_reviews"].to_numpy(dtype=float),
            rating_room=g["rating_room"].to_numpy(dtype=float),
            rating_clean=g["rating_clean"].to_numpy(dtype=float),
            rating_location=g["rating_location"].to_numpy(dtype=float),
            rating_staff=g["rating_staff"].to_numpy(dtype=float),
            vacancies=g["vacancies"].to_numpy(dtype=float),
            rooms=g["rooms"].to_numpy(dtype=float),
        )
        for col in ("cluster", "nest"):
            if col in g.columns and not g[col].isna().any():
                kwargs[col] = g[col].to_numpy(dtype=int)
        if "sp" in g.columns and not g["sp"].isna().any():
            kwargs["sp"] = g["sp"].astype(str).str.lower().isin(["true", "1"]).to_numpy()
        markets.append(MarketData(**kwargs))
    return markets


# ---------------------------------------------------------------------------
# stage round-trips
# ---------------------------------------------------------------------------


DATASET_COLUMNS = (
    "market_id",
    "date",
    "ward",
    "listing_id",
    "host_id",
    "airbnb",
    "price",
    "beds",
    "n_reviews",
    "rating_room",
    "rating_clean",
    "rating_location",
    "rating_staff",
    "vacancies",
    "rooms",
    "share",
    "cluster",
    "sp",
    "nest",
)


def dataset_to_frame(markets) -> pd.DataFrame:
    """Long-format frame of a dataset, one row per product observation."""
    if not markets:
        return pd.DataFrame(columns=list(DATASET_COLUMNS))
    rows = []
    for m in markets:
        rec = {
            "market_id": np.repeat(m.market_id, m.n_products),
            "date": np.repeat(m.date, m.n_products),
            "ward": np.repeat(m.ward, m.n_products),
            "listing_id": m.listing_id,
            "host_id": m.host_id,
            "airbnb": m.airbnb,
            "price": m.price,
            "beds": m.beds,
            "n_reviews": m.n_reviews,
            "rating_room": m.rating_room,
            "rating_clean": m.rating_clean,
            "rating_location": m.rating_location,
            "rating_staff": m.rating_staff,
            "vacancies": m.vacancies,
            "rooms": m.rooms,
            "share": m.shares,
            "cluster": m.cluster if m.cluster is not None else np.full(m.n_products, np.nan),
            "sp": m.sp if m.sp is not None else np.full(m.n_products, np.nan),
            "nest": m.nest if m.nest is not None else np.full(m.n_products, np.nan),
        }
        rows.append(pd.DataFrame(rec))
    return pd.concat(rows, ignore_index=True)


def frame_to_dataset(df) -> list:
    """Inverse of :func:`dataset_to_frame` (trusted input, no validation)."""
    return _frame_to_markets(df.drop(columns=["market_id", "share"], errors="ignore"))


def write_table(path, df, meta=None):
    """Write a CSV with `# key=value` provenance header lines."""
    with open(path, "w") as fh:
        for key, value in (meta or {}).items():
            fh.write(f"# {key}={value}\n")
        df.to_csv(fh, index=False)


def read_table(path):
    """Read a CSV written by :func:`write_table`; returns (frame, meta)."""
    meta = {}
    skip = 0
    with open(path) as fh:
        for line in fh:
            if not line.startswith("# "):
                break
            skip += 1
            key, _, value = line[2:].strip().partition("=")
            meta[key] = value
    df = pd.read_csv(path, skiprows=skip)
    return df, meta


def dataset_to_raw_frame(markets) -> pd.DataFrame:
    """Export a dataset in the raw ingestion schema.

    Prices go back to yen and hotel ratings back to the 10-point scale, so
    ingesting the result reproduces the dataset.
    """
    df = dataset_to_frame(markets)
    scale = np.where(df["airbnb"], 1.0, HOTEL_RATING_SCALE / 5.0)
    return pd.DataFrame(
        {
            "date": df["date"],
            "ward": df["ward"],
            "listing_id": df["listing_id"],
            "host_id": df["host_id"],
            "platform": np.where(df["airbnb"], PLATFORM_AIRBNB, PLATFORM_HOTEL),
            "price": df["price"] * PRICE_UNIT_YEN,
            "n_reviews": df["n_reviews"],
            "rating_room": df["rating_room"] * scale,
            "rating_clean": df["rating_clean"] * scale,
            "rating_location": df["rating_location"] * scale,
            "rating_staff": df["rating_staff"] * scale,
            "beds": df["beds"],
            "vacancies": df["vacancies"],
            "rooms": df["rooms"],
        }
    )


# ---------------------------------------------------------------------------
# price tiers
# ---------------------------------------------------------------------------


@dataclass
class ClusterModel:
    k: int
    centroids: np.ndarray  # sorted descending; tier 1 is the priciest
    inertia: float
    seed: int
    n_init: int


def kmeans_prices(markets, k=DEFAULT_K_CLUSTERS, seed=0, n_init=100):
    """Cluster pooled prices into k tiers; tier 1 has the highest centroid."""
    prices = np.concatenate([m.price for m in markets])
    if np.unique(prices).size < k:
        raise ValidationError(
            f"need at least {k} distinct prices to form {k} tiers, got {np.unique(prices).size}"
        )
    km = KMeans(n_clusters=k, init="k-means++", n_init=n_init, random_state=seed)
    raw = km.fit_predict(prices.reshape(-1, 1))
    centers = km.cluster_centers_.ravel()
    order = np.argsort(-centers)  # descending: label 1 = highest price tier
    relabel = np.empty(k, dtype=int)
    relabel[order] = np.arange(1, k + 1)
    labels = relabel[raw]

    model = ClusterModel(
        k=k, centroids=centers[order], inertia=float(km.inertia_), seed=seed, n_init=n_init
    )
    out = []
    pos = 0
    for m in markets:
        out.append(replace(m, cluster=labels[pos : pos + m.n_products].copy()))
        pos += m.n_products
    logger.info("kmeans: %d tiers, centroids %s", k, np.round(model.centroids, 4))
    return out, model


# ---------------------------------------------------------------------------
# smart-pricing classification
# ---------------------------------------------------------------------------


@dataclass
class SpSummary:
    n_listings: int
    n_sp: int
    n_single_date: int


def classify_sp(markets, n_low_clusters=N_LOW_PRICE_CLUSTERS):
    """Flag algorithmically priced listings.

    A platform listing is smart-priced when (a) every one of its
    observations sits in the bottom `n_low_clusters` price tiers and (b) its
    price strictly changes between every pair of consecutive observed dates.
    Listings observed on a single date cannot satisfy (b) and are counted in
    the summary.  Hotels are never smart-priced.
    """
    if any(m.cluster is None for m in markets):
        raise PrerequisiteError("smart-pricing classification needs price tiers; run clustering first")
    k = max(int(m.cluster.max()) for m in markets)
    low = set(range(k - n_low_clusters + 1, k + 1))

    history: dict = {}
    for m in markets:
        for j in range(m.n_products):
            if not m.airbnb[j]:
                continue
            key = (m.ward, m.listing_id[j])
            history.setdefault(key, []).append((m.date, float(m.price[j]), int(m.cluster[j])))

    n_single = 0
    sp_keys = set()
    for key, obs in history.items():
        obs.sort()
        if len(obs) < 2:
            n_single += 1
            continue
        in_low = all(c in low for _, _, c in obs)
        prices = [p for _, p, _ in obs]
        changes_daily = all(a != b for a, b in zip(prices, prices[1:]))
        if in_low and changes_daily:
            sp_keys.add(key)

    if n_single:
        logger.warning(
            "smart-pricing: %d listings observed on a single date cannot qualify", n_single
        )

    out = []
    for m in markets:
        flags = np.array(
            [m.airbnb[j] and (m.ward, m.listing_id[j]) in sp_keys for j in range(m.n_products)]
        )
        out.append(replace(m, sp=flags))
    summary = SpSummary(n_listings=len(history), n_sp=len(sp_keys), n_single_date=n_single)
    logger.info("smart-pricing: %d of %d listings flagged", summary.n_sp, summary.n_listings)
    return out, summary


# ---------------------------------------------------------------------------
# competition mode and screens
# ---------------------------------------------------------------------------

MODE_WITH_HOTELS = "with-hotels"
MODE_ONLY_AIRBNB = "only-airbnb"
MODES = (MODE_WITH_HOTELS, MODE_ONLY_AIRBNB)


def select_mode(markets, mode):
    """Apply the competition mode; only-airbnb drops hotel rows entirely."""
    if mode not in MODES:
        raise ValidationError(f"unknown mode {mode!r}; choose from {MODES}")
    if mode == MODE_WITH_HOTELS:
        return list(markets)
    out = []
    dropped_markets = 0
    for m in markets:
        if m.airbnb.all():
            out.append(m)
            continue
        if not m.airbnb.any():
            dropped_markets += 1
            continue
        out.append(m.subset(m.airbnb))
    if dropped_markets:
        logger.info("mode %s: dropped %d hotel-only markets", mode, dropped_markets)
    return out


@dataclass
class ScreenSummary:
    n_dropped_products: int
    n_dropped_markets: int


def apply_screens(markets, threshold=SHARE_SCREEN_THRESHOLD):
    """Drop products with shares strictly below the threshold.

    Shares exactly at the threshold are kept.  Market size and shares are
    recomputed from the surviving products, which can only raise shares, so
    one pass is enough.
    """
    out = []
    dropped_products = 0
    dropped_markets = 0
    for m in markets:
        keep = m.shares >= threshold
        if keep.all():
            out.append(m)
            continue
        dropped_products += int((~keep).sum())
        if not keep.any():
            dropped_markets += 1
            continue
        out.append(m.subset(keep))
    if dropped_products:
        logger.info(
            "screen: dropped %d products below %.3f share, %d empty markets",
            dropped_products,
            threshold,
            dropped_markets,
        )
    return out, ScreenSummary(dropped_products, dropped_markets)


def assign_nests(markets, mode=MODE_WITH_HOTELS):
    """Set nest labels: price tier crossed with platform, or tier alone."""
    if mode not in MODES:
        raise ValidationError(f"unknown mode {mode!r}; choose from {MODES}")
    if any(m.cluster is None for m in markets):
        raise PrerequisiteError("nest assignment needs price tiers; run clustering first")
    out = []
    for m in markets:
        if mode == MODE_ONLY_AIRBNB:
            if not m.airbnb.all():
                raise ValidationError("only-airbnb nests require hotel rows to be filtered first")
            nest = m.cluster.astype(int)
        else:
            # airbnb gets the odd label within each tier, hotels the even one
            nest = 2 * m.cluster.astype(int) - m.airbnb.astype(int)
        out.append(replace(m, nest=nest))
    return out


# ---------------------------------------------------------------------------
# synthetic data
# ---------------------------------------------------------------------------


@dataclass
class SynthConfig:
    """Parameters of the synthetic listing panel.

    Defaults mirror the demand estimates and market structure targeted by
    the test suite.  `xi_scale=0` produces noiseless data whose GMM
    objective is numerically zero at the truth.
    """

    seed: int = 0
    n_wards: int = 8
    n_dates: int = 25
    start_date: str = "2019-11-20"
    min_listings: int = 5
    max_listings: int = 9
    hotel_share: float = 0.3
    sp_share: float = 0.45
    two_listing_share: float = 0.15
    alpha: float = -0.928
    sigma: float = -0.559
    rho: float = 0.436
    beta: dict = field(
        default_factory=lambda: {
            "beds": -0.005,
            "n_reviews": -0.00035,
            "rating_room": -0.486,
            "rating_clean": 0.358,
            "rating_location": -0.390,
            "rating_staff": 0.608,
            "airbnb": -1.471,
        }
    )
    xi_scale: float = 0.15
    price_response: float = 0.3  # price loading on the demand shock
    n_draws: int = 200
    draw_seed: int = 7
    band_centers: tuple = (4.1, 1.9, 1.0, 0.46, 0.17)
    airbnb_band_probs: tuple = (0.02, 0.03, 0.15, 0.35, 0.45)
    hotel_band_probs: tuple = (0.10, 0.25, 0.35, 0.20, 0.10)


def _synth_listings(cfg, rng):
    """Static listing roster per ward: characteristics, bands, flags."""
    wards = [f"w{w+1:02d}" for w in range(cfg.n_wards)]
    roster = []
    for ward in wards:
        n = int(rng.integers(cfg.min_listings, cfg.max_listings + 1))
        seq = 0
        listings = []
        while len(listings) < n:
            seq += 1
            host = f"{ward}-h{seq:03d}"
            is_hotel = rng.random() < cfg.hotel_share
            n_for_host = 1
            if not is_hotel and rng.random() < cfg.two_listing_share:
                n_for_host = 2
            for unit in range(n_for_host):
                if len(listings) >= n:
                    break
                probs = cfg.hotel_band_probs if is_hotel else cfg.airbnb_band_probs
                band = int(rng.choice(np.arange(1, 6), p=np.asarray(probs)))
                base_price = cfg.band_centers[band - 1] * (1.0 + rng.uniform(-0.08, 0.08))
                sp = (not is_hotel) and band >= 4 and (rng.random() < cfg.sp_share)
                listings.append(
                    {
                        "ward": ward,
                        "listing_id": f"{ward}-l{len(listings)+1:03d}",
                        "host_id": host,
                        "airbnb": not is_hotel,
                        "band": band,
                        "base_price": base_price,
                        "sp": sp,
                        "beds": float(np.round(rng.uniform(1.0, 4.0), 2)),
                        "n_reviews": float(rng.poisson(30)),
                        "rating_room": float(np.round(np.clip(rng.normal(4.3, 0.35), 1.0, 5.0), 2)),
                        "rating_clean": float(np.round(np.clip(rng.normal(4.3, 0.35), 1.0, 5.0), 2)),
                        "rating_location": float(
                            np.round(np.clip(rng.normal(4.2, 0.4), 1.0, 5.0), 2)
                        ),
                        "rating_staff": float(np.round(np.clip(rng.normal(4.4, 0.3), 1.0, 5.0), 2)),
                        "rooms": float(rng.integers(15, 31) if is_hotel else rng.integers(6, 13)),
                    }
                )
        roster.extend(listings)
    return wards, roster


def synthesize(cfg: SynthConfig = None):
    """Generate a synthetic listing panel with known parameters.

    Returns (markets, truth).  Markets come fully annotated (price tiers
    from the true bands, smart-pricing flags, nests) so they can feed
    estimation directly; exporting through :func:`dataset_to_raw_frame`
    yields a raw CSV for exercising the full pipeline instead.

    Shares are computed from the model itself with the same taste draws the
    estimator will use, and vacancies are shares times market size, kept
    fractional so the shares survive a round-trip exactly.  A global
    intercept is calibrated by bisection so every listing's vacancies fit
    inside its room inventory.
    """
    cfg = cfg or SynthConfig()
    rng = np.random.default_rng(cfg.seed)
    wards, roster = _synth_listings(cfg, rng)
    dates = pd.date_range(cfg.start_date, periods=cfg.n_dates).strftime("%Y-%m-%d").tolist()

    ward_fe = {w: float(rng.normal(0.0, 0.08)) for w in wards}
    months = sorted({datetime.strptime(d, "%Y-%m-%d").month for d in dates})
    month_fe = {m: float(rng.normal(0.0, 0.05)) for m in months}
    dow_fe = {d: float(rng.normal(0.0, 0.05)) for d in range(7)}

    params = DemandParams(alpha=cfg.alpha, sigma=cfg.sigma, rho=cfg.rho)
    draws = TasteDraws.simulate(n_draws=cfg.n_draws, seed=cfg.draw_seed)

    # per-observation shocks and prices, fixed before calibrating the intercept
    panel = []
    for date in dates:
        for ward in wards:
            rows = [r for r in roster if r["ward"] == ward]
            xi = rng.normal(0.0, cfg.xi_scale, size=len(rows)) if cfg.xi_scale > 0 else np.zeros(len(rows))
            prices = np.empty(len(rows))
            for i, r in enumerate(rows):
                if r["sp"]:
                    # the pricing algorithm moves the price every day
                    prices[i] = r["base_price"] * (1.0 + rng.uniform(-0.06, 0.06))
                elif r["band"] >= 4 and r["airbnb"]:
                    # low-tier manual hosts hold their price fixed
                    prices[i] = r["base_price"]
                else:
                    prices[i] = max(
                        r["base_price"] + cfg.price_response * xi[i] + rng.normal(0.0, 0.02),
                        0.05,
                    )
            panel.append((date, ward, rows, prices, xi))

    beta_vec = np.array([cfg.beta[c] for c in X_COLUMNS])

    def market_shares(const):
        per_market = []
        for date, ward, rows, prices, xi in panel:
            x = np.column_stack(
                [
                    [r["beds"] for r in rows],
                    [r["n_reviews"] for r in rows],
                    [r["rating_room"] for r in rows],
                    [r["rating_clean"] for r in rows],
                    [r["rating_location"] for r in rows],
                    [r["rating_staff"] for r in rows],
                    [float(r["airbnb"]) for r in rows],
                ]
            )
            month = datetime.strptime(date, "%Y-%m-%d").month
            dow = datetime.strptime(date, "%Y-%m-%d").weekday()
            delta = (
                const
                + cfg.alpha * prices
                + x @ beta_vec
                + ward_fe[ward]
                + month_fe[month]
                + dow_fe[dow]
                + xi
            )
            nest = np.array([2 * r["band"] - int(r["airbnb"]) for r in rows])
            nests = NestStructure(groups=nest)
            s = compute_shares(delta, prices, params, nests, draws)
            per_market.append(s)
        return per_market

    # calibrate the intercept: every listing's implied vacancies must fit
    # inside its rooms with headroom
    def capacity_ratio(const):
        worst = 0.0
        for (date, ward, rows, prices, xi), s in zip(panel, market_shares(const)):
            size = market_size_from_rooms([r["rooms"] for r in rows])
            ratio = s * size / np.array([r["rooms"] for r in rows])
            worst = max(worst, float(ratio.max()))
        return worst

    lo, hi = -8.0, 2.0
    if capacity_ratio(lo) > 0.9:
        raise ValidationError("synthetic calibration failed: shares too large even at tiny intercept")
    for _ in range(40):
        mid = 0.5 * (lo + hi)
        if capacity_ratio(mid) <= 0.9:
            lo = mid
        else:
            hi = mid
    const = lo

    markets = []
    for (date, ward, rows, prices, xi), s in zip(panel, market_shares(const)):
        rooms = np.array([r["rooms"] for r in rows])
        size = market_size_from_rooms(rooms)
        markets.append(
            MarketData(
                market_id=f"{date}:{ward}",
                date=date,
                ward=ward,
                listing_id=np.array([r["listing_id"] for r in rows]),
                host_id=np.array([r["host_id"] for r in rows]),
                airbnb=np.array([r["airbnb"] for r in rows]),
                price=prices.copy(),
                beds=np.array([r["beds"] for r in rows]),
                n_reviews=np.array([r["n_reviews"] for r in rows]),
                rating_room=np.array([r["rating_room"] for r in rows]),
                rating_clean=np.array([r["rating_clean"] for r in rows]),
                rating_location=np.array([r["rating_location"] for r in rows]),
                rating_staff=np.array([r["rating_staff"] for r in rows]),
                vacancies=s * size,
                rooms=rooms,
                cluster=np.array([r["band"] for r in rows]),
                sp=np.array([r["sp"] for r in rows]),
                nest=np.array([2 * r["band"] - int(r["airbnb"]) for r in rows]),
            )
        )
    markets.sort(key=lambda m: m.market_id)

    truth = {
        "alpha": cfg.alpha,
        "sigma": cfg.sigma,
        "rho": cfg.rho,
        "beta": dict(cfg.beta),
        "const": const,
        "ward_fe": ward_fe,
        "month_fe": {str(k): v for k, v in month_fe.items()},
        "dow_fe": {str(k): v for k, v in dow_fe.items()},
        "xi_scale": cfg.xi_scale,
        "n_draws": cfg.n_draws,
        "draw_seed": cfg.draw_seed,
        "seed": cfg.seed,
    }
    logger.info(
        "synthesize: %d markets, %d rows, intercept %.4f",
        len(markets),
        sum(m.n_products for m in markets),
        const,
    )
    return markets, truth
