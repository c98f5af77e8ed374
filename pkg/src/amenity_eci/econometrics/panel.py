"""Cluster-period panels for the yearly subway and monthly phone models.

Two modes:

``subway``
    One row per (metro cluster, year, month). ``Y`` sums the station counts
    mapped to the cluster for one timeslot and demographic, in thousands.
``mobile``
    One row per (cluster, month) of a single year from phone-cell counts.
    Complexity, diversity and green dummies are fixed at that year's values.

Top/bottom dummies use a nearest-rank cut: with ``k = ceil(q * n)`` the
flag marks every value at least as extreme as the ``k``-th one, so ties at
the cut are all included.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
import pandas as pd

from ..clusters import station_assignment
from ..exceptions import EmptyPanel, MissingWeather
from ..model import TIMESLOTS, is_valid_demographic, source_kind

log = logging.getLogger(__name__)

PANEL_COLUMNS = (
    "cluster_id",
    "year",
    "month",
    "Y",
    "Temperature",
    "High_Year",
    "Rain",
    "Covid_period",
    "Complexity",
    "Diversity",
    "Total_Shops",
    "High_Temp",
    "High_Complexity",
    "Low_Diversity",
    "High_Green",
    "Near_Metro",
    "green_share",
)

HEAT_YEAR = 2018
HEAT_MONTH = 8
COVID_YEARS = (2020, 2021)


@dataclass(frozen=True)
class PanelConfig:
    mode: str = "subway"
    years: tuple = (2016, 2017, 2018, 2019, 2020, 2021)
    months: tuple = (8,)
    timeslot: str = "07-24"
    demographic: str = "total"
    quantile: float = 0.20

    def __post_init__(self):
        if self.mode not in ("subway", "mobile"):
            raise ValueError(f"mode must be 'subway' or 'mobile'; got {self.mode!r}")
        if self.timeslot not in TIMESLOTS:
            raise ValueError(f"unknown timeslot {self.timeslot!r}")
        if not is_valid_demographic(self.demographic):
            raise ValueError(f"unknown demographic {self.demographic!r}")
        if not 0 < self.quantile < 1:
            raise ValueError("quantile must be in (0, 1)")
        if self.mode == "mobile" and len(self.years) != 1:
            raise ValueError("mobile mode covers a single year")

    @classmethod
    def mobile(cls, year=HEAT_YEAR, months=(7, 8, 9), demographic="total", quantile=0.20):
        return cls("mobile", (year,), tuple(months), "ALL", demographic, quantile)


def quantile_flag(values, q: float = 0.20, top: bool = True) -> np.ndarray:
    """0/1 flag for the top (or bottom) ``q`` share by nearest rank.

    NaN entries are never flagged and do not count toward ``n``.
    """
    v = np.asarray(values, dtype=np.float64)
    ok = ~np.isnan(v)
    out = np.zeros(len(v), dtype=np.int64)
    n = int(ok.sum())
    if n == 0:
        return out
    k = max(1, math.ceil(q * n - 1e-12))
    s = np.sort(v[ok])
    if top:
        cut = s[n - k]
        out[ok] = v[ok] >= cut
    else:
        cut = s[k - 1]
        out[ok] = v[ok] <= cut
    if out.sum() > k:
        log.info("quantile cut %.6g: %d flagged for a nominal %d (ties at the cut)", cut, out.sum(), k)
    return out


def _weather_lookup(weather):
    return {(w.year, w.month): w for w in weather}


def _cluster_table(clusters, complexity: pd.DataFrame, year) -> pd.DataFrame:
    comp = complexity[complexity["year"] == year].set_index("cluster_id")
    rows = []
    for c in clusters:
        r = comp.loc[c.cluster_id] if c.cluster_id in comp.index else None
        rows.append(
            {
                "cluster_id": c.cluster_id,
                "eci": np.nan if r is None else float(r["eci_rescaled"]),
                "diversity": np.nan if r is None else float(r["diversity"]),
                "n_shops": float(c.n_stores) if r is None else float(r["n_shops"]),
                "green_share": float(c.green_share) if c.green_share is not None else 0.0,
                "near_metro": int(c.near_metro or 0),
            }
        )
    t = pd.DataFrame(rows, columns=["cluster_id", "eci", "diversity", "n_shops", "green_share", "near_metro"])
    return t.sort_values("cluster_id").reset_index(drop=True)


def _source_totals(mobility, clusters, kind, year, month, timeslot, demographic):
    recs = [
        m
        for m in mobility
        if m.year == year
        and m.month == month
        and m.timeslot == timeslot
        and m.demographic == demographic
        and source_kind(m.source_id) == kind
    ]
    owner = station_assignment(clusters, recs)
    totals: dict[int, float] = {}
    unmapped = 0
    for m in recs:
        cid = owner.get(m.source_id)
        if cid is None:
            unmapped += 1
            continue
        totals[cid] = totals.get(cid, 0.0) + m.count
    if unmapped:
        log.info("%d-%02d: %d %s records outside every cluster", year, month, unmapped, kind)
    return totals


def build_panel(clusters_by_year: dict, complexity: pd.DataFrame, mobility, weather, config: PanelConfig | None = None) -> pd.DataFrame:
    """Assemble the regression panel.

    ``clusters_by_year`` maps year to clusters with attributes attached;
    ``complexity`` has columns ``cluster_id, year, eci_rescaled, diversity,
    n_shops``. Clusters without mobility or without a complexity score are
    dropped and the count is logged.
    """
    cfg = config or PanelConfig()
    wx = _weather_lookup(weather)
    kind = "station" if cfg.mode == "subway" else "cell"
    rows = []
    n_no_mobility = n_unscored = 0
    for year in cfg.years:
        if year not in clusters_by_year:
            raise EmptyPanel(f"no clusters for year {year}")
        clusters = sorted(clusters_by_year[year], key=lambda c: c.cluster_id)
        table = _cluster_table(clusters, complexity, year)
        table["High_Complexity"] = quantile_flag(table["eci"], cfg.quantile, top=True)
        table["Low_Diversity"] = quantile_flag(table["diversity"], cfg.quantile, top=False)
        table["High_Green"] = quantile_flag(table["green_share"], cfg.quantile, top=True)
        table = table.set_index("cluster_id")
        for month in cfg.months:
            w = wx.get((year, month))
            if w is None:
                raise MissingWeather(year, month)
            totals = _source_totals(mobility, clusters, kind, year, month, cfg.timeslot, cfg.demographic)
            for cid, t in table.iterrows():
                if cid not in totals:
                    n_no_mobility += 1
                    continue
                if np.isnan(t["eci"]):
                    n_unscored += 1
                    continue
                rows.append(
                    {
                        "cluster_id": int(cid),
                        "year": int(year),
                        "month": int(month),
                        "Y": totals[cid] / 1000.0,
                        "Temperature": float(w.mean_high_temp_c),
                        "High_Year": int(year == HEAT_YEAR),
                        "Rain": float(w.precip_mm),
                        "Covid_period": int(year in COVID_YEARS),
                        "Complexity": float(t["eci"]),
                        "Diversity": float(t["diversity"]),
                        "Total_Shops": float(t["n_shops"]),
                        "High_Temp": int(year == HEAT_YEAR and month == HEAT_MONTH),
                        "High_Complexity": int(t["High_Complexity"]),
                        "Low_Diversity": int(t["Low_Diversity"]),
                        "High_Green": int(t["High_Green"]),
                        "Near_Metro": int(t["near_metro"]),
                        "green_share": float(t["green_share"]),
                    }
                )
    if n_no_mobility:
        log.info("dropped %d cluster-periods without %s counts", n_no_mobility, kind)
    if n_unscored:
        log.info("dropped %d cluster-periods without a complexity score", n_unscored)
    if not rows:
        raise EmptyPanel(f"{cfg.mode} panel is empty: no {kind} counts map to a scored cluster")
    return pd.DataFrame(rows, columns=list(PANEL_COLUMNS))


def drop_missing(panel: pd.DataFrame, columns) -> pd.DataFrame:
    """Listwise deletion over ``columns`` with a logged count."""
    keep = panel[list(columns)].notna().all(axis=1)
    n = int((~keep).sum())
    if n:
        log.info("dropped %d rows with missing values", n)
    return panel.loc[keep].reset_index(drop=True)
