"""Small-business cluster detection on the amenity field.

Seeds are local peaks of A_i under non-maximum suppression; every other
store is then attached to the nearest seed by growing the admissible radius
in fixed steps up to ``r_max_km``. Stores farther than ``r_max_km`` from
every seed stay unassigned (label -1).
"""

from __future__ import annotations

import csv
import json
import math
import os
import warnings
from dataclasses import dataclass, replace

import numpy as np
from scipy.spatial import ConvexHull, QhullError
from sklearn.base import BaseEstimator, ClusterMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_ids, check_lonlat, check_positive
from .exceptions import DataWarning, EmptyInput, NoSeeds, UnknownClusterId
from .model import source_kind
from .spatial import (
    DEFAULT_CUTOFF_KM,
    DEFAULT_GAMMA,
    EARTH_RADIUS_KM,
    AmenityField,
    DecayParams,
    GridIndex,
    field_values,
    haversine_km,
)

TIE_TOL_KM = 1e-9


@dataclass(frozen=True)
class ClusterParams:
    nms_radius_km: float = 0.25
    r_max_km: float = 0.70
    r_step_km: float = 0.05

    def __post_init__(self):
        check_positive("nms_radius_km", self.nms_radius_km)
        check_positive("r_max_km", self.r_max_km)
        check_positive("r_step_km", self.r_step_km)
        if self.r_step_km > self.r_max_km:
            raise ValueError("r_step_km must not exceed r_max_km")

    def radii(self) -> np.ndarray:
        """Expansion radii r_step, 2 r_step, ..., ending exactly at r_max."""
        k = math.floor(self.r_max_km / self.r_step_km + 1e-9)
        r = self.r_step_km * np.arange(1, k + 1)
        r = r[r < self.r_max_km - 1e-12]
        return np.append(r, self.r_max_km)


@dataclass(frozen=True)
class Cluster:
    cluster_id: int
    seed_store_id: int
    member_ids: tuple[int, ...]
    centroid: tuple[float, float]
    assignment_radius_km: float
    hull_area_km2: float
    year: int | None = None
    seed_lonlat: tuple[float, float] = (math.nan, math.nan)
    a_seed: float = math.nan
    hull: tuple[tuple[float, float], ...] = ()
    near_metro: int | None = None
    green_share: float | None = None

    @property
    def n_stores(self) -> int:
        return len(self.member_ids)


# -- peaks -----------------------------------------------------------------


def _arrays(stores):
    ids = np.fromiter((s.store_id for s in stores), dtype=np.int64, count=len(stores))
    lon = np.fromiter((s.lon for s in stores), dtype=np.float64, count=len(stores))
    lat = np.fromiter((s.lat for s in stores), dtype=np.float64, count=len(stores))
    order = np.argsort(ids, kind="stable")
    return ids[order], lon[order], lat[order]


def peak_mask(ids, lon, lat, values, nms_radius_km) -> np.ndarray:
    """Boolean mask of points that dominate every neighbour within the radius.

    Inputs must be sorted by ``ids``. Equal values go to the lower id.
    """
    index = GridIndex(ids, lon, lat, nms_radius_km)
    mask = np.zeros(len(ids), dtype=bool)
    for members, cand in index.cell_blocks(nms_radius_km):
        d = haversine_km(lon[members][:, None], lat[members][:, None], lon[cand][None, :], lat[cand][None, :])
        near = d <= nms_radius_km
        vi = values[members][:, None]
        vj = values[cand][None, :]
        beaten = (vj > vi) | ((vj == vi) & (ids[cand][None, :] < ids[members][:, None]))
        mask[members] = ~(near & beaten).any(axis=1)
    return mask


def find_peaks(field: AmenityField, stores, params: ClusterParams | None = None) -> list[int]:
    """Seed store ids, sorted by A descending (ties by ascending id)."""
    params = params or ClusterParams()
    if not stores:
        return []
    ids, lon, lat = _arrays(stores)
    values = np.array([field[i] for i in ids]) if not np.array_equal(ids, field.store_ids) else field.values
    mask = peak_mask(ids, lon, lat, values, params.nms_radius_km)
    pos = np.flatnonzero(mask)
    order = np.lexsort((ids[pos], -values[pos]))
    return [int(i) for i in ids[pos][order]]


# -- greedy growth ---------------------------------------------------------


def assign_to_seeds(lon, lat, seed_lon, seed_lat, seed_value, seed_key, params: ClusterParams, fixed=None):
    """Greedy radius expansion; returns the seed position for each point or -1.

    At each radius r in ``params.radii()``, every unassigned point with at
    least one seed within r joins its nearest such seed. Distances within
    1e-9 km count as ties, resolved by larger ``seed_value`` then smaller
    ``seed_key``. ``fixed`` maps point positions to pre-assigned seeds.
    """
    n = len(lon)
    labels = np.full(n, -1, dtype=np.int64)
    if len(seed_lon) == 0 or n == 0:
        return labels
    radii = params.radii()
    r_max = params.r_max_km
    seed_index = GridIndex(np.arange(len(seed_lon)), seed_lon, seed_lat, r_max)
    point_index = GridIndex(np.arange(n), lon, lat, r_max)
    # precedence among tied seeds: higher value first, then lower key
    rank = np.empty(len(seed_lon), dtype=np.int64)
    rank[np.lexsort((seed_key, -np.asarray(seed_value)))] = np.arange(len(seed_lon))

    for (cy, cx), members in sorted(point_index.cells.items()):
        lat_lo = point_index.lat0 + cy * point_index.cell_lat
        lon_lo = point_index.lon0 + cx * point_index.cell_lon
        cand = seed_index._gather(
            *seed_index._cell_range(lat_lo, lat_lo + point_index.cell_lat, lon_lo, lon_lo + point_index.cell_lon, r_max)
        )
        if len(cand) == 0:
            continue
        d = haversine_km(
            point_index.lon[members][:, None],
            point_index.lat[members][:, None],
            seed_index.lon[cand][None, :],
            seed_index.lat[cand][None, :],
        )
        dmin = d.min(axis=1)
        step = np.searchsorted(radii, dmin - 1e-12, side="left")
        ok = step < len(radii)
        if not ok.any():
            continue
        r_at = radii[np.minimum(step, len(radii) - 1)]
        eligible = (d <= r_at[:, None]) & (d <= dmin[:, None] + TIE_TOL_KM)
        cand_seed = seed_index.ids[cand]
        score = np.where(eligible, rank[cand_seed][None, :], np.iinfo(np.int64).max)
        best = cand_seed[np.argmin(score, axis=1)]
        pts = point_index.ids[members]
        labels[pts[ok]] = best[ok]

    if fixed:
        for p, s in fixed.items():
            labels[p] = s
    return labels


def _local_xy(lon, lat, lon0, lat0):
    x = EARTH_RADIUS_KM * np.cos(np.radians(lat0)) * np.radians(np.asarray(lon) - lon0)
    y = EARTH_RADIUS_KM * np.radians(np.asarray(lat) - lat0)
    return np.column_stack([x, y])


def cluster_geometry(lon, lat, seed=None):
    """Hull area (km^2), assignment radius (km), centroid and hull ring.

    The hull is taken in a tangent plane at the member centroid. Fewer than
    three non-collinear members give zero area. ``seed`` defaults to the
    first member.
    """
    lon = np.atleast_1d(np.asarray(lon, dtype=np.float64))
    lat = np.atleast_1d(np.asarray(lat, dtype=np.float64))
    if len(lon) == 0:
        raise EmptyInput("cluster has no members")
    centroid = (float(lon.mean()), float(lat.mean()))
    if seed is None:
        seed = (lon[0], lat[0])
    radius = float(haversine_km(seed[0], seed[1], lon, lat).max())
    area = 0.0
    ring: tuple = ()
    if len(lon) >= 3:
        xy = _local_xy(lon, lat, *centroid)
        try:
            hull = ConvexHull(xy)
            area = float(hull.volume)
            verts = hull.vertices
            ring = tuple((float(lon[v]), float(lat[v])) for v in verts)
        except QhullError:
            area = 0.0
    return area, radius, centroid, ring


def _build_cluster(cid, seed_id, seed_ll, a_seed, member_ids, lon, lat, year):
    area, radius, centroid, ring = cluster_geometry(lon, lat, seed_ll)
    return Cluster(
        cluster_id=int(cid),
        seed_store_id=int(seed_id),
        member_ids=tuple(int(m) for m in member_ids),
        centroid=centroid,
        assignment_radius_km=radius,
        hull_area_km2=area,
        year=year,
        seed_lonlat=(float(seed_ll[0]), float(seed_ll[1])),
        a_seed=float(a_seed),
        hull=ring,
    )


def grow_clusters(seeds, stores, field: AmenityField, params: ClusterParams | None = None, year=None) -> list[Cluster]:
    """Grow one cluster per seed; cluster ids follow seed order."""
    params = params or ClusterParams()
    if len(seeds) == 0:
        raise NoSeeds("no seeds to grow clusters from")
    ids, lon, lat = _arrays(stores)
    pos_of = {int(i): k for k, i in enumerate(ids)}
    seed_pos = np.array([pos_of[int(s)] for s in seeds])
    seed_val = np.array([field[int(s)] for s in seeds])
    seed_ids = np.asarray(seeds, dtype=np.int64)
    labels = assign_to_seeds(
        lon, lat, lon[seed_pos], lat[seed_pos], seed_val, seed_ids, params,
        fixed={int(p): k for k, p in enumerate(seed_pos)},
    )
    return clusters_from_labels(labels, ids, lon, lat, seed_ids, lon[seed_pos], lat[seed_pos], seed_val, year)


def clusters_from_labels(labels, ids, lon, lat, seed_ids, seed_lon, seed_lat, seed_val, year=None, cluster_ids=None):
    out = []
    order = np.argsort(labels, kind="stable")
    srt = labels[order]
    for k in range(len(seed_ids)):
        lo, hi = np.searchsorted(srt, [k, k + 1])
        pos = order[lo:hi]
        if len(pos) == 0:
            continue
        cid = k if cluster_ids is None else cluster_ids[k]
        out.append(_build_cluster(cid, seed_ids[k], (seed_lon[k], seed_lat[k]), seed_val[k], ids[pos], lon[pos], lat[pos], year))
    return out


def apply_frozen_map(base: list[Cluster], stores, params: ClusterParams | None = None, year=None) -> list[Cluster]:
    """Assign another snapshot's stores to a fixed set of seed locations."""
    params = params or ClusterParams()
    if not base:
        raise NoSeeds("frozen cluster map is empty")
    ids, lon, lat = _arrays(stores)
    seed_lon = np.array([c.seed_lonlat[0] for c in base])
    seed_lat = np.array([c.seed_lonlat[1] for c in base])
    seed_val = np.array([c.a_seed for c in base])
    seed_ids = np.array([c.seed_store_id for c in base], dtype=np.int64)
    labels = assign_to_seeds(lon, lat, seed_lon, seed_lat, seed_val, seed_ids, params)
    return clusters_from_labels(
        labels, ids, lon, lat, seed_ids, seed_lon, seed_lat, seed_val, year, cluster_ids=[c.cluster_id for c in base]
    )


def link_to_base(base: list[Cluster], clusters: list[Cluster], max_km: float) -> list[Cluster]:
    """Relabel ``clusters`` with the id of the nearest base cluster.

    Pairs are matched greedily by seed distance (closest first, ties by
    base id then cluster order), one-to-one, up to ``max_km``. Unmatched
    clusters get fresh ids above every base id, in seed order.
    """
    if not clusters:
        return []
    b_lon = np.array([c.seed_lonlat[0] for c in base])
    b_lat = np.array([c.seed_lonlat[1] for c in base])
    pairs = []
    for k, c in enumerate(clusters):
        if len(base):
            d = haversine_km(c.seed_lonlat[0], c.seed_lonlat[1], b_lon, b_lat)
            for j in np.flatnonzero(d <= max_km):
                pairs.append((float(d[j]), base[j].cluster_id, k))
    pairs.sort()
    new_id: dict[int, int] = {}
    used = set()
    for _, bid, k in pairs:
        if k in new_id or bid in used:
            continue
        new_id[k] = bid
        used.add(bid)
    nxt = max((c.cluster_id for c in base), default=-1) + 1
    out = []
    for k, c in enumerate(clusters):
        if k not in new_id:
            new_id[k] = nxt
            nxt += 1
        out.append(replace(c, cluster_id=new_id[k]))
    return sorted(out, key=lambda c: c.cluster_id)


def detect_clusters(stores, decay: DecayParams | None = None, params: ClusterParams | None = None, threads=1, year=None):
    """Field, peaks and growth in one call. Returns ``(field, clusters)``."""
    from .spatial import amenity_field

    field_ = amenity_field(stores, decay or DecayParams(), threads=threads)
    seeds = find_peaks(field_, stores, params)
    return field_, grow_clusters(seeds, stores, field_, params, year=year)


# -- attributes ------------------------------------------------------------


def attach_attributes(clusters, attrs=(), mobility=()) -> list[Cluster]:
    """Set ``near_metro`` and ``green_share`` on each cluster.

    A cluster is near a metro station when a station-type mobility source
    lies within its assignment radius of the seed, or when its attribute
    row lists a station id explicitly. Green share is green area over hull
    area, clamped to [0, 1].
    """
    by_id = {c.cluster_id for c in clusters}
    attr_map = {}
    for a in attrs:
        if a.cluster_id not in by_id:
            raise UnknownClusterId(a.cluster_id)
        attr_map[a.cluster_id] = a

    stations = {}
    for m in mobility:
        if source_kind(m.source_id) == "station":
            stations.setdefault(m.source_id, (m.lon, m.lat))
    st_ids = sorted(stations)
    st_lon = np.array([stations[s][0] for s in st_ids])
    st_lat = np.array([stations[s][1] for s in st_ids])

    out = []
    for c in clusters:
        near = 0
        if st_ids:
            d = haversine_km(c.seed_lonlat[0], c.seed_lonlat[1], st_lon, st_lat)
            near = int(bool((d <= c.assignment_radius_km + TIE_TOL_KM).any()))
        a = attr_map.get(c.cluster_id)
        if a is not None and a.metro_station_ids:
            near = 1
        green = a.green_area_m2 if a is not None else 0.0
        hull_m2 = c.hull_area_km2 * 1e6
        if green == 0:
            share = 0.0
        elif hull_m2 <= 0:
            share = math.inf
        else:
            share = green / hull_m2
        if share > 1:
            warnings.warn(f"cluster {c.cluster_id}: green area exceeds hull area, share clamped to 1", DataWarning, stacklevel=2)
            share = 1.0
        out.append(replace(c, near_metro=near, green_share=float(share)))
    return out


def station_assignment(clusters, mobility):
    """Map each station/cell source id to the cluster whose seed is nearest
    among the clusters whose assignment radius covers it."""
    sources = {}
    for m in mobility:
        sources.setdefault(m.source_id, (m.lon, m.lat))
    if not clusters:
        return {}
    seed_lon = np.array([c.seed_lonlat[0] for c in clusters])
    seed_lat = np.array([c.seed_lonlat[1] for c in clusters])
    radius = np.array([c.assignment_radius_km for c in clusters])
    out = {}
    for sid in sorted(sources):
        lon, lat = sources[sid]
        d = haversine_km(lon, lat, seed_lon, seed_lat)
        inside = d <= radius + TIE_TOL_KM
        if inside.any():
            k = np.flatnonzero(inside)[np.argmin(d[inside])]
            out[sid] = clusters[k].cluster_id
    return out


# -- serialisation ---------------------------------------------------------


def _geometry(c: Cluster):
    if len(c.hull) >= 3:
        ring = [list(p) for p in c.hull] + [list(c.hull[0])]
        return {"type": "Polygon", "coordinates": [ring]}
    return {"type": "Point", "coordinates": list(c.seed_lonlat)}


def to_feature_collection(clusters) -> dict:
    features = []
    for c in clusters:
        props = {
            "cluster_id": c.cluster_id,
            "year": c.year,
            "n_stores": c.n_stores,
            "A_seed": c.a_seed,
            "hull_area_km2": c.hull_area_km2,
            "radius_km": c.assignment_radius_km,
            "near_metro": c.near_metro,
            "green_share": c.green_share,
            "seed_store_id": c.seed_store_id,
            "seed_lon": c.seed_lonlat[0],
            "seed_lat": c.seed_lonlat[1],
            "centroid_lon": c.centroid[0],
            "centroid_lat": c.centroid[1],
        }
        features.append({"type": "Feature", "geometry": _geometry(c), "properties": props})
    return {"type": "FeatureCollection", "features": features}


def write_geojson(path, clusters) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(to_feature_collection(clusters), fh, indent=1, sort_keys=True)
        fh.write("\n")


def write_members(path, clusters, stores=()) -> None:
    """``year, store_id, cluster_id`` rows; unassigned stores get an empty id."""
    assigned = {}
    for c in clusters:
        for m in c.member_ids:
            assigned[(c.year, m)] = c.cluster_id
    rows = {(c.year, m) for c in clusters for m in c.member_ids}
    rows.update((s.year, s.store_id) for s in stores)
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["year", "store_id", "cluster_id"])
        for key in sorted(rows, key=lambda k: (k[0] if k[0] is not None else -1, k[1])):
            cid = assigned.get(key)
            w.writerow(["" if key[0] is None else key[0], key[1], "" if cid is None else cid])


def read_clusters(geojson_path, members_path) -> list[Cluster]:
    """Inverse of :func:`write_geojson` + :func:`write_members`."""
    with open(geojson_path, encoding="utf-8") as fh:
        fc = json.load(fh)
    members: dict[tuple, list[int]] = {}
    with open(members_path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            if row["cluster_id"] == "":
                continue
            year = int(row["year"]) if row["year"] != "" else None
            members.setdefault((year, int(row["cluster_id"])), []).append(int(row["store_id"]))
    out = []
    for feat in fc["features"]:
        p = feat["properties"]
        geom = feat["geometry"]
        hull = tuple(tuple(v) for v in geom["coordinates"][0][:-1]) if geom["type"] == "Polygon" else ()
        out.append(
            Cluster(
                cluster_id=int(p["cluster_id"]),
                seed_store_id=int(p["seed_store_id"]),
                member_ids=tuple(sorted(members.get((p["year"], int(p["cluster_id"])), []))),
                centroid=(p["centroid_lon"], p["centroid_lat"]),
                assignment_radius_km=p["radius_km"],
                hull_area_km2=p["hull_area_km2"],
                year=p["year"],
                seed_lonlat=(p["seed_lon"], p["seed_lat"]),
                a_seed=p["A_seed"],
                hull=hull,
                near_metro=p.get("near_metro"),
                green_share=p.get("green_share"),
            )
        )
    return out


# -- estimator -------------------------------------------------------------


class ClusterDetector(ClusterMixin, BaseEstimator):
    """Peak-seeded greedy clustering of point locations.

    After ``fit``, ``labels_`` holds the cluster index of each input point
    (-1 when farther than ``r_max_km`` from every seed) and
    ``cluster_centers_`` the seed coordinates. ``predict`` assigns new
    points to the fitted seeds with the same greedy rule, which is how a
    cluster map from one snapshot is applied to another.
    """

    def __init__(
        self,
        gamma=DEFAULT_GAMMA,
        cutoff_km=DEFAULT_CUTOFF_KM,
        include_self=True,
        nms_radius_km=0.25,
        r_max_km=0.70,
        r_step_km=0.05,
        n_jobs=1,
    ):
        self.gamma = gamma
        self.cutoff_km = cutoff_km
        self.include_self = include_self
        self.nms_radius_km = nms_radius_km
        self.r_max_km = r_max_km
        self.r_step_km = r_step_km
        self.n_jobs = n_jobs

    def _cparams(self):
        return ClusterParams(self.nms_radius_km, self.r_max_km, self.r_step_km)

    def fit(self, X, y=None, store_ids=None):
        X = check_lonlat(X)
        ids = check_ids(store_ids, len(X))
        decay = DecayParams(self.gamma, self.cutoff_km, bool(self.include_self))
        cparams = self._cparams()
        index = GridIndex(ids, X[:, 0], X[:, 1], decay.cutoff_km)
        values = field_values(index, decay, self.n_jobs)
        mask = peak_mask(index.ids, index.lon, index.lat, values, cparams.nms_radius_km)
        pos = np.flatnonzero(mask)
        pos = pos[np.lexsort((index.ids[pos], -values[pos]))]
        seed_val = values[pos]
        lab = assign_to_seeds(
            index.lon, index.lat, index.lon[pos], index.lat[pos], seed_val, index.ids[pos], cparams,
            fixed={int(p): k for k, p in enumerate(pos)},
        )
        back = np.searchsorted(index.ids, ids)
        self.amenity_ = values[back]
        self.labels_ = lab[back]
        self.seed_ids_ = index.ids[pos]
        self.seed_values_ = seed_val
        self.cluster_centers_ = np.column_stack([index.lon[pos], index.lat[pos]])
        self.n_features_in_ = 2
        return self

    def predict(self, X):
        check_is_fitted(self, "cluster_centers_")
        X = check_lonlat(X)
        c = self.cluster_centers_
        return assign_to_seeds(X[:, 0], X[:, 1], c[:, 0], c[:, 1], self.seed_values_, self.seed_ids_, self._cparams())
