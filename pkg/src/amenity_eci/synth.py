"""Synthetic cities, weather and mobility with a known data-generating process.

Randomness comes from NumPy's Philox counter-based bit generator seeded with
the integer ``SynthConfig.seed``; draws happen in a fixed order, so a seed
always reproduces the same files byte for byte.

Planted outcome model (one row per metro cluster and August)::

    Y = X @ beta + eps,   eps ~ Normal(0, sigma),   Y clamped at 0

with ``beta`` defaulting to the published column-(4) estimates of the
yearly subway model. ``sigma="auto"`` picks the noise level that gives the
target R^2 on the realised design.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .clusters import attach_attributes
from .econometrics.panel import quantile_flag
from .exceptions import BBoxTooSmall
from .model import (
    CELL_PREFIX,
    STATION_PREFIX,
    ClusterAttribute,
    MobilityCount,
    StorePoint,
    WeatherRecord,
)
from .spatial import EARTH_RADIUS_KM, haversine_km

log = logging.getLogger(__name__)

SEOUL_BBOX = (126.80, 37.45, 127.18, 37.70)
YEARS = (2016, 2017, 2018, 2019, 2020, 2021)

# Nine primary groups and their number of subcategories.
CATEGORY_GROUPS = {
    "travel_leisure": 8,
    "real_estate": 4,
    "retail": 14,
    "accommodation": 4,
    "sports": 6,
    "restaurant": 14,
    "living_services": 12,
    "health": 6,
    "education": 8,
}

# August weather. The 2018 mean high (33.3) and maximum (39.6) are the
# published Seoul values; other years are filler chosen so the six-year
# temperature mean, min and max and the rainfall mean, min and max match the
# published summary statistics. July/September 2018 serve the monthly model.
DEFAULT_WEATHER = (
    WeatherRecord(2016, 8, 31.6, 36.6, 67.1),
    WeatherRecord(2017, 8, 30.2, 35.4, 275.0),
    WeatherRecord(2018, 7, 32.8, 38.3, 114.1),
    WeatherRecord(2018, 8, 33.3, 39.6, 221.5),
    WeatherRecord(2018, 9, 26.3, 31.4, 78.2),
    WeatherRecord(2019, 8, 31.4, 36.8, 138.3),
    WeatherRecord(2020, 8, 29.3, 34.5, 675.7),
    WeatherRecord(2021, 8, 30.4, 35.1, 266.5),
)

SUBWAY_BETA = {
    "const": 8288.917,
    "Temperature": -239.309,
    "High_Year": 478.863,
    "Rain": -0.676,
    "Covid_period": -441.472,
    "Complexity": 24.753,
    "High_Year:Complexity": 13.645,
    "Diversity": -12.343,
    "Total_Shops": 0.456,
}

MOBILE_BETA = {
    "const": 173.694,
    "High_Temp": -6.164,
    "High_Complexity": 130.245,
    "High_Green": -23.516,
    "Near_Metro": 87.422,
}

# Share of the 07-24 total falling in each sub-slot (published slot means).
TIMESLOT_SHARES = {
    "07-09": 189.393 / 1143.090,
    "09-18": 563.673 / 1143.090,
    "18-20": 208.508 / 1143.090,
    "20-24": 181.516 / 1143.090,
}

DEMOGRAPHIC_SHARES = {"total": 1.0, "male": 136.663 / 233.319, "female": 1 - 136.663 / 233.319, "60+": 34.407 / 233.319}


def category_codes():
    """``(category, subcategory)`` pairs in a fixed order."""
    return [(g, f"s{k:02d}") for g, n in CATEGORY_GROUPS.items() for k in range(1, n + 1)]


@dataclass
class SynthConfig:
    seed: int = 0
    n_centers: int = 500
    stores_per_center: float = 100.0
    center_spread_km: float = 0.10
    bbox: tuple[float, float, float, float] = SEOUL_BBOX
    min_separation_km: float = 0.5
    category_profile: float = 20.0
    rarity_boost: float = 3.0
    years: tuple[int, ...] = YEARS
    turnover: float = 0.10
    n_metro: int = 230
    beta: dict = field(default_factory=lambda: dict(SUBWAY_BETA))
    noise_sigma: float | str = "auto"
    target_r2: float = 0.637
    mobile_beta: dict = field(default_factory=lambda: dict(MOBILE_BETA))
    mobile_sigma: float = 40.0
    quantile: float = 0.20
    weather: tuple[WeatherRecord, ...] = DEFAULT_WEATHER

    def __post_init__(self):
        if self.n_centers <= 0 or self.stores_per_center <= 0:
            raise ValueError("n_centers and stores_per_center must be > 0")
        if self.center_spread_km <= 0 or self.min_separation_km < 0:
            raise ValueError("center_spread_km must be > 0")
        if self.category_profile <= 0:
            raise ValueError("category_profile must be > 0")
        if not isinstance(self.noise_sigma, str) and self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0 or 'auto'")
        self.years = tuple(int(y) for y in self.years)
        self.bbox = tuple(float(v) for v in self.bbox)

    def rng(self, stream: int = 0) -> np.random.Generator:
        # independent substreams per generation step
        return np.random.Generator(np.random.Philox(key=[int(self.seed), int(stream)]))


@dataclass
class SynthCity:
    stores: list[StorePoint]
    truth: pd.DataFrame  # year, store_id, center_id
    centers: pd.DataFrame  # center_id, lon, lat, complexity


def _place_centers(cfg: SynthConfig, rng) -> np.ndarray:
    lon0, lat0, lon1, lat1 = cfg.bbox
    sep = cfg.min_separation_km
    pts: list[tuple[float, float]] = []
    cell = max(sep, 1e-6)
    grid: dict[tuple[int, int], list[int]] = {}
    lat_mid = 0.5 * (lat0 + lat1)
    kx = EARTH_RADIUS_KM * math.cos(math.radians(lat_mid)) * math.pi / 180
    ky = EARTH_RADIUS_KM * math.pi / 180
    attempts = 0
    max_attempts = 200 * cfg.n_centers + 10000
    while len(pts) < cfg.n_centers:
        attempts += 1
        if attempts > max_attempts:
            raise BBoxTooSmall(
                f"placed {len(pts)} of {cfg.n_centers} centers at {sep} km separation in bbox {cfg.bbox}"
            )
        lon = rng.uniform(lon0, lon1)
        lat = rng.uniform(lat0, lat1)
        gx, gy = int((lon - lon0) * kx // cell), int((lat - lat0) * ky // cell)
        ok = True
        for dx in (-1, 0, 1):
            for dy in (-1, 0, 1):
                for k in grid.get((gx + dx, gy + dy), ()):
                    if haversine_km(lon, lat, pts[k][0], pts[k][1]) < sep:
                        ok = False
                        break
                if not ok:
                    break
            if not ok:
                break
        if ok:
            grid.setdefault((gx, gy), []).append(len(pts))
            pts.append((lon, lat))
    return np.array(pts)


def _category_probs(cfg: SynthConfig, rng, complexity: np.ndarray) -> np.ndarray:
    n_cat = len(category_codes())
    rarity = np.linspace(0.0, 1.0, n_cat)
    # fixed pseudo-random rarity assignment across categories
    rarity = rarity[rng.permutation(n_cat)]
    base = np.exp(-cfg.rarity_boost * rarity)
    logits = np.log(base)[None, :] + cfg.rarity_boost * 1.5 * complexity[:, None] * rarity[None, :]
    p = np.exp(logits - logits.max(axis=1, keepdims=True))
    p /= p.sum(axis=1, keepdims=True)
    alpha = cfg.category_profile * n_cat * p
    return np.vstack([rng.dirichlet(a) for a in alpha])


def gen_city(cfg: SynthConfig) -> SynthCity:
    """Plant Gaussian store blobs around separated centers for every year."""
    rng = cfg.rng(1)
    centers = _place_centers(cfg, rng)
    n_c = len(centers)
    complexity = rng.uniform(0.0, 1.0, n_c)
    probs = _category_probs(cfg, rng, complexity)
    codes = category_codes()
    cum = np.cumsum(probs, axis=1)

    def draw_stores(center, n):
        dx = rng.normal(0.0, cfg.center_spread_km, n)
        dy = rng.normal(0.0, cfg.center_spread_km, n)
        lat = centers[center, 1] + np.degrees(dy / EARTH_RADIUS_KM)
        lon = centers[center, 0] + np.degrees(dx / (EARTH_RADIUS_KM * np.cos(np.radians(centers[center, 1]))))
        cat = np.minimum(np.searchsorted(cum[center], rng.uniform(0, 1, n) * cum[center, -1]), len(codes) - 1)
        return lon, lat, cat

    # (store_id, center, lon, lat, cat) of the live population
    alive = []
    next_id = 1
    for c in range(n_c):
        n = max(1, int(rng.poisson(cfg.stores_per_center)))
        lon, lat, cat = draw_stores(c, n)
        for k in range(n):
            alive.append((next_id, c, float(lon[k]), float(lat[k]), int(cat[k])))
            next_id += 1

    stores: list[StorePoint] = []
    truth = []
    for t, year in enumerate(cfg.years):
        if t > 0:
            keep = rng.uniform(0, 1, len(alive)) >= cfg.turnover
            alive = [s for s, k in zip(alive, keep) if k]
            for c in range(n_c):
                n = int(rng.poisson(cfg.turnover * cfg.stores_per_center))
                if n == 0:
                    continue
                lon, lat, cat = draw_stores(c, n)
                for k in range(n):
                    alive.append((next_id, c, float(lon[k]), float(lat[k]), int(cat[k])))
                    next_id += 1
        for sid, c, lon, lat, cat in alive:
            g, sub = codes[cat]
            stores.append(StorePoint(sid, round(lon, 7), round(lat, 7), g, year, sub))
            truth.append((year, sid, c))

    truth_df = pd.DataFrame(truth, columns=["year", "store_id", "center_id"])
    centers_df = pd.DataFrame(
        {"center_id": np.arange(n_c), "lon": centers[:, 0], "lat": centers[:, 1], "complexity": complexity}
    )
    return SynthCity(stores, truth_df, centers_df)


# -- outcome models --------------------------------------------------------


def planted_design(df: pd.DataFrame, beta: dict) -> np.ndarray:
    """Columns of ``df`` (and ``a:b`` products) in ``beta`` order; ``const`` is 1."""
    cols = []
    for term in beta:
        if term == "const":
            cols.append(np.ones(len(df)))
        else:
            v = np.ones(len(df))
            for part in term.split(":"):
                v = v * df[part].to_numpy(dtype=np.float64)
            cols.append(v)
    return np.column_stack(cols)


def draw_outcome(df: pd.DataFrame, beta: dict, sigma, rng, target_r2=0.637):
    """Planted outcome for each row. Returns ``(y, sigma_used, n_clamped)``."""
    X = planted_design(df, beta)
    mu = X @ np.array(list(beta.values()), dtype=np.float64)
    if isinstance(sigma, str):
        if sigma != "auto":
            raise ValueError("sigma must be a number or 'auto'")
        sigma = math.sqrt(mu.var() * (1 - target_r2) / target_r2) if len(mu) > 1 else 0.0
    eps = rng.normal(0.0, 1.0, len(mu)) * sigma
    y = mu + eps
    n_clamped = int((y < 0).sum())
    if n_clamped:
        log.info("clamped %d negative planted outcomes to 0", n_clamped)
    return np.maximum(y, 0.0), float(sigma), n_clamped


def weather_frame(weather) -> pd.DataFrame:
    return pd.DataFrame(
        [(w.year, w.month, w.mean_high_temp_c, w.max_temp_c, w.precip_mm) for w in weather],
        columns=["year", "month", "Temperature", "max_temp_c", "Rain"],
    )


def gen_panel(cfg: SynthConfig, n_clusters: int = 523, month: int = 8) -> tuple[pd.DataFrame, dict]:
    """Stand-alone yearly panel with the planted subway model.

    ``n_clusters`` clusters get yearly complexity (min-max rescaled to
    [0, 100] per year across all of them), diversity and shop counts;
    ``cfg.n_metro`` of them form the panel, one row per year.
    """
    rng = cfg.rng(3)
    shops = np.clip(np.round(np.exp(rng.normal(6.62, 0.507, n_clusters))), 54, 3127)
    div_mean = rng.normal(31.6, 6.0, n_clusters)
    latent = rng.gamma(2.0, 1.0, n_clusters)
    metro = np.sort(rng.choice(n_clusters, size=min(cfg.n_metro, n_clusters), replace=False))
    wx = weather_frame(cfg.weather).set_index(["year", "month"])
    rows = []
    for year in cfg.years:
        raw = latent * np.exp(rng.normal(0.0, 0.15, n_clusters))
        comp = 100.0 * (raw - raw.min()) / (raw.max() - raw.min())
        div = np.clip(np.round(div_mean + rng.normal(0.0, 1.5, n_clusters)), 8, 50)
        w = wx.loc[(year, month)]
        for j in metro:
            rows.append(
                {
                    "cluster_id": int(j),
                    "year": year,
                    "month": month,
                    "Temperature": float(w["Temperature"]),
                    "Rain": float(w["Rain"]),
                    "High_Year": float(year == 2018),
                    "Covid_period": float(year in (2020, 2021)),
                    "Complexity": float(comp[j]),
                    "Diversity": float(div[j]),
                    "Total_Shops": float(shops[j]),
                }
            )
    df = pd.DataFrame(rows)
    y, sigma, n_clamped = draw_outcome(df, cfg.beta, cfg.noise_sigma, rng, cfg.target_r2)
    df["Y"] = y
    return df, {"beta": dict(cfg.beta), "sigma": sigma, "n_clamped": n_clamped}


def _green_share(green_m2, hull_km2):
    # same rule as attach_attributes, without the warning
    if green_m2 == 0:
        return 0.0
    if hull_km2 <= 0:
        return 1.0
    return min(green_m2 / (hull_km2 * 1e6), 1.0)


def gen_mobility(cfg: SynthConfig, clusters_by_year: dict, complexity: pd.DataFrame, weather=None):
    """Station and cell counts whose cluster sums follow the planted models.

    ``clusters_by_year`` maps year to detected clusters; ``complexity`` has
    columns ``cluster_id, year, eci_rescaled, diversity, n_shops``. Stations
    sit on the seeds of ``cfg.n_metro`` base-year clusters; every cluster
    gets one phone cell at its seed for July-September 2018.

    Returns ``(mobility_records, cluster_attributes, truth)``.
    """
    rng = cfg.rng(4)
    weather = weather or cfg.weather
    wx = weather_frame(weather).set_index(["year", "month"])
    years = sorted(clusters_by_year)
    base = sorted(clusters_by_year[years[0]], key=lambda c: c.cluster_id)
    scored = complexity.dropna(subset=["eci_rescaled"])
    scored_ids = sorted(set(scored["cluster_id"]))
    eligible = [c for c in base if c.cluster_id in scored_ids]
    n_metro = min(cfg.n_metro, len(eligible))
    pick = np.sort(rng.choice(len(eligible), size=n_metro, replace=False)) if n_metro else []
    metro = [eligible[k] for k in pick]
    metro_ids = {c.cluster_id for c in metro}

    comp = complexity.set_index(["cluster_id", "year"])
    records: list[MobilityCount] = []
    rows = []
    for year in years:
        if (year, 8) not in wx.index:
            continue
        w = wx.loc[(year, 8)]
        for c in metro:
            if (c.cluster_id, year) not in comp.index or pd.isna(comp.loc[(c.cluster_id, year), "eci_rescaled"]):
                continue
            r = comp.loc[(c.cluster_id, year)]
            rows.append(
                {
                    "cluster_id": c.cluster_id,
                    "year": year,
                    "Temperature": float(w["Temperature"]),
                    "Rain": float(w["Rain"]),
                    "High_Year": float(year == 2018),
                    "Covid_period": float(year in (2020, 2021)),
                    "Complexity": float(r["eci_rescaled"]),
                    "Diversity": float(r["diversity"]),
                    "Total_Shops": float(r["n_shops"]),
                }
            )
    subway = pd.DataFrame(rows)
    sigma_used, n_clamped = 0.0, 0
    if len(subway):
        y, sigma_used, n_clamped = draw_outcome(subway, cfg.beta, cfg.noise_sigma, rng, cfg.target_r2)
        subway["Y"] = y
        for rec, yv in zip(subway.itertuples(), y):
            c = next(m for m in metro if m.cluster_id == rec.cluster_id)
            sid = f"{STATION_PREFIX}{c.cluster_id}"
            lon, lat = c.seed_lonlat
            total = round(yv * 1000.0)
            records.append(MobilityCount(sid, lon, lat, int(rec.year), 8, "07-24", "total", float(total)))
            for slot, share in TIMESLOT_SHARES.items():
                records.append(MobilityCount(sid, lon, lat, int(rec.year), 8, slot, "total", float(round(total * share))))

    # green areas: a quarter of clusters have none, the rest a random share of the hull
    attrs = []
    has_green = rng.uniform(0, 1, len(base)) >= 0.25
    frac = rng.beta(1.2, 6.0, len(base))
    for c, g, f in zip(base, has_green, frac):
        area = round(float(f) * c.hull_area_km2 * 1e6, 3) if g else 0.0
        attrs.append(ClusterAttribute(c.cluster_id, area, (f"{STATION_PREFIX}{c.cluster_id}",) if c.cluster_id in metro_ids else ()))

    # monthly phone-cell model for 2018
    mobile_rows = []
    if 2018 in clusters_by_year:
        c18 = sorted(clusters_by_year[2018], key=lambda c: c.cluster_id)
        # same near-metro rule as attach_attributes on the 2018 map
        st18 = [r for r in records if r.year == 2018 and r.source_id.startswith(STATION_PREFIX)]
        near = {c.cluster_id: c.near_metro for c in attach_attributes(c18, (), st18)}
        green = {a.cluster_id: a.green_area_m2 for a in attrs}
        share = np.array([_green_share(green.get(c.cluster_id, 0.0), c.hull_area_km2) for c in c18])
        comp18 = np.array(
            [
                comp.loc[(c.cluster_id, 2018), "eci_rescaled"] if (c.cluster_id, 2018) in comp.index else np.nan
                for c in c18
            ],
            dtype=float,
        )
        ok = ~np.isnan(comp18)
        hc = quantile_flag(comp18, cfg.quantile, top=True)
        hg = quantile_flag(share, cfg.quantile, top=True)
        for month in (7, 8, 9):
            for k, c in enumerate(c18):
                if not ok[k]:
                    continue
                mobile_rows.append(
                    {
                        "cluster_id": c.cluster_id,
                        "month": month,
                        "High_Temp": float(month == 8),
                        "High_Complexity": float(hc[k]),
                        "High_Green": float(hg[k]),
                        "Near_Metro": float(near[c.cluster_id] or c.cluster_id in metro_ids),
                    }
                )
    mobile = pd.DataFrame(mobile_rows)
    n_clamped_mobile = 0
    if len(mobile):
        y, _, n_clamped_mobile = draw_outcome(mobile, cfg.mobile_beta, cfg.mobile_sigma, rng)
        mobile["Y"] = y
        by_id = {c.cluster_id: c for c in c18}
        for rec, yv in zip(mobile.itertuples(), y):
            c = by_id[rec.cluster_id]
            sid = f"{CELL_PREFIX}{c.cluster_id}"
            lon, lat = c.seed_lonlat
            total = yv * 1000.0
            for demo, s in DEMOGRAPHIC_SHARES.items():
                records.append(MobilityCount(sid, lon, lat, 2018, int(rec.month), "ALL", demo, float(round(total * s))))

    truth = {
        "beta": dict(cfg.beta),
        "sigma": sigma_used,
        "n_clamped": n_clamped,
        "mobile_beta": dict(cfg.mobile_beta),
        "n_clamped_mobile": n_clamped_mobile,
        "metro_cluster_ids": sorted(metro_ids),
        "subway": subway,
        "mobile": mobile,
    }
    return records, attrs, truth


def jaccard_recovery(clusters, truth: pd.DataFrame, year=None) -> tuple[int, list[float]]:
    """Best-match Jaccard of each planted center against detected clusters.

    Returns ``(n_detected, per-center Jaccard)``.
    """
    if year is not None:
        truth = truth[truth["year"] == year]
    planted = {c: set(g["store_id"]) for c, g in truth.groupby("center_id")}
    owner = {}
    for k, c in enumerate(clusters):
        for m in c.member_ids:
            owner[m] = k
    members = [set(c.member_ids) for c in clusters]
    scores = []
    for stores in planted.values():
        overlap: dict[int, int] = {}
        for s in stores:
            k = owner.get(s)
            if k is not None:
                overlap[k] = overlap.get(k, 0) + 1
        best = 0.0
        for k, inter in overlap.items():
            best = max(best, inter / len(stores | members[k]))
        scores.append(best)
    return len(clusters), scores


def random_incidence(rng, n_clusters: int = 50, n_industries: int = 20, sharpness: float = 10.0, max_tries: int = 1000):
    """Connected random binary cluster x industry matrix.

    Cell ``(c, i)`` is 1 with probability ``sigmoid(sharpness * (a_c - b_i))``
    for uniform capabilities ``a_c`` and requirements ``b_i``, so diverse
    clusters host the rare industries. Draws repeat until the matrix has no
    empty row or column and its bipartite graph is connected.
    """
    from .complexity import largest_component

    for _ in range(max_tries):
        a = rng.uniform(0, 1, n_clusters)
        b = rng.uniform(0, 1, n_industries)
        p = 1.0 / (1.0 + np.exp(-sharpness * (a[:, None] - b[None, :])))
        M = (rng.uniform(0, 1, p.shape) < p).astype(np.int64)
        if M.sum(axis=1).min() == 0 or M.sum(axis=0).min() == 0:
            continue
        rows, cols = largest_component(M)
        if rows.all() and cols.all():
            return M
    raise RuntimeError("could not draw a connected matrix")
