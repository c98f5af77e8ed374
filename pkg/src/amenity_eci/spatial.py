"""Haversine distances, a lon/lat grid index, and the decayed amenity field.

The effective number of amenities around store ``i`` is

    A_i = sum_j exp(-gamma * d_ij)

taken over every store ``j`` within ``cutoff_km`` (including ``i`` itself
unless ``include_self`` is off). Contributions are accumulated with the
candidate stores in ascending ``store_id`` order, and each store's sum only
depends on its own grid cell, so results are bit-identical for any number
of worker threads.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_ids, check_lonlat, check_positive
from .exceptions import EmptyInput, ParamsMismatch

EARTH_RADIUS_KM = 6371.0088

DEFAULT_GAMMA = 7.58
DEFAULT_CUTOFF_KM = 1.5


def haversine_km(lon1, lat1, lon2, lat2):
    """Great-circle distance in km; broadcasts over array arguments."""
    phi1 = np.radians(lat1)
    phi2 = np.radians(lat2)
    dphi = phi2 - phi1
    dlam = np.radians(lon2) - np.radians(lon1)
    h = np.sin(dphi / 2.0) ** 2 + np.cos(phi1) * np.cos(phi2) * np.sin(dlam / 2.0) ** 2
    return 2.0 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(np.clip(h, 0.0, 1.0)))


def geodesic_km(a, b) -> float:
    """Distance between two ``(lon, lat)`` pairs in kilometres."""
    return float(haversine_km(a[0], a[1], b[0], b[1]))


def kernel(d_km, gamma=DEFAULT_GAMMA):
    """Pairwise decay weight ``exp(-gamma * d)``."""
    return np.exp(-gamma * np.asarray(d_km, dtype=np.float64))


def half_distance_km(gamma=DEFAULT_GAMMA) -> float:
    return math.log(2.0) / gamma


def _lat_span_deg(r_km):
    return math.degrees(r_km / EARTH_RADIUS_KM)


def _lon_span_deg(r_km, abs_lat_max):
    # sin(d/2R) >= cos(lat_max) * sin(|dlon|/2) bounds the longitude offset
    # of any point within r_km of a point with |lat| <= abs_lat_max.
    c = math.cos(math.radians(min(abs_lat_max, 90.0)))
    s = math.sin(min(r_km / (2.0 * EARTH_RADIUS_KM), math.pi / 2))
    if c <= 0 or s >= c:
        return 360.0
    return math.degrees(2.0 * math.asin(s / c))


@dataclass(frozen=True)
class DecayParams:
    gamma: float = DEFAULT_GAMMA
    cutoff_km: float = DEFAULT_CUTOFF_KM
    include_self: bool = True

    def __post_init__(self):
        check_positive("gamma", self.gamma)
        check_positive("cutoff_km", self.cutoff_km)

    @property
    def truncation_bound(self) -> float:
        """Per-pair upper bound on the kernel mass dropped by the cutoff."""
        return math.exp(-self.gamma * self.cutoff_km)


class GridIndex:
    """Uniform lon/lat grid over a fixed point set.

    Radius queries gather every cell that can contain a point within the
    radius, then filter candidates by exact haversine distance, so results
    match a brute-force scan exactly. Points are held sorted by id.
    Longitude wrap-around at the antimeridian is not handled.
    """

    def __init__(self, ids, lon, lat, cell_km):
        if len(ids) == 0:
            raise EmptyInput("cannot build a grid index over zero points")
        self.cell_km = check_positive("cell_km", cell_km)
        order = np.argsort(ids, kind="stable")
        self.ids = np.asarray(ids, dtype=np.int64)[order]
        self.lon = np.asarray(lon, dtype=np.float64)[order]
        self.lat = np.asarray(lat, dtype=np.float64)[order]
        self.lon0 = float(self.lon.min())
        self.lat0 = float(self.lat.min())
        mid = float(np.abs(self.lat).max())
        self.cell_lat = _lat_span_deg(self.cell_km)
        self.cell_lon = min(360.0, self.cell_lat / max(math.cos(math.radians(mid)), 1e-6))

        iy = np.floor((self.lat - self.lat0) / self.cell_lat).astype(np.int64)
        ix = np.floor((self.lon - self.lon0) / self.cell_lon).astype(np.int64)
        self._cell_of = np.stack([iy, ix], axis=1)
        key = iy * (ix.max() + 1) + ix
        srt = np.argsort(key, kind="stable")
        bounds = np.flatnonzero(np.diff(key[srt])) + 1
        self.cells: dict[tuple[int, int], np.ndarray] = {}
        for chunk in np.split(srt, bounds):
            self.cells[(int(iy[chunk[0]]), int(ix[chunk[0]]))] = np.sort(chunk)

    def __len__(self):
        return len(self.ids)

    def _cell_range(self, lat_lo, lat_hi, lon_lo, lon_hi, r_km):
        r_km = r_km * (1 + 1e-9) + 1e-12  # absorb rounding in cell assignment
        dlat = _lat_span_deg(r_km)
        dlon = _lon_span_deg(r_km, max(abs(lat_lo), abs(lat_hi)) + dlat)
        y0 = math.floor((lat_lo - dlat - self.lat0) / self.cell_lat)
        y1 = math.floor((lat_hi + dlat - self.lat0) / self.cell_lat)
        if dlon >= 360.0:
            x0, x1 = -(10**9), 10**9
        else:
            x0 = math.floor((lon_lo - dlon - self.lon0) / self.cell_lon)
            x1 = math.floor((lon_hi + dlon - self.lon0) / self.cell_lon)
        return y0, y1, x0, x1

    def _gather(self, y0, y1, x0, x1):
        span = (y1 - y0 + 1) * (x1 - x0 + 1)
        if span > len(self.cells):
            parts = [v for (cy, cx), v in self.cells.items() if y0 <= cy <= y1 and x0 <= cx <= x1]
        else:
            parts = [
                self.cells[(cy, cx)]
                for cy in range(y0, y1 + 1)
                for cx in range(x0, x1 + 1)
                if (cy, cx) in self.cells
            ]
        if not parts:
            return np.empty(0, dtype=np.int64)
        return np.sort(np.concatenate(parts))

    def candidates(self, lon, lat, r_km):
        """Positions of points that may lie within ``r_km`` (a superset)."""
        return self._gather(*self._cell_range(lat, lat, lon, lon, r_km))

    def query_radius(self, lon, lat, r_km, *, return_distance=False):
        """Positions (into ``self.ids``) of points within ``r_km``, ascending."""
        r_km = float(r_km)
        if r_km < 0:
            raise ValueError("radius must be non-negative")
        cand = self.candidates(lon, lat, r_km)
        d = haversine_km(lon, lat, self.lon[cand], self.lat[cand])
        keep = d <= r_km
        if return_distance:
            return cand[keep], d[keep]
        return cand[keep]

    def query_ids(self, lon, lat, r_km):
        return self.ids[self.query_radius(lon, lat, r_km)]

    def cell_blocks(self, r_km):
        """Yield ``(members, candidates)`` position arrays for every cell.

        ``candidates`` covers all points within ``r_km`` of any member.
        """
        for (cy, cx), members in sorted(self.cells.items()):
            lat_lo = self.lat0 + cy * self.cell_lat
            lon_lo = self.lon0 + cx * self.cell_lon
            rng = self._cell_range(lat_lo, lat_lo + self.cell_lat, lon_lo, lon_lo + self.cell_lon, r_km)
            yield members, self._gather(*rng)


def build_grid_index(stores, cell_km=DEFAULT_CUTOFF_KM) -> GridIndex:
    """Grid index over a list of :class:`~amenity_eci.model.StorePoint`."""
    if not stores:
        raise EmptyInput("no stores to index")
    ids = np.fromiter((s.store_id for s in stores), dtype=np.int64, count=len(stores))
    lon = np.fromiter((s.lon for s in stores), dtype=np.float64, count=len(stores))
    lat = np.fromiter((s.lat for s in stores), dtype=np.float64, count=len(stores))
    return GridIndex(ids, lon, lat, cell_km)


@dataclass(frozen=True)
class AmenityField:
    """Effective amenity counts, aligned with ``store_ids`` (ascending)."""

    store_ids: np.ndarray
    values: np.ndarray
    params: DecayParams

    def __getitem__(self, store_id):
        pos = np.searchsorted(self.store_ids, store_id)
        if pos >= len(self.store_ids) or self.store_ids[pos] != store_id:
            raise KeyError(store_id)
        return float(self.values[pos])

    def __len__(self):
        return len(self.store_ids)

    def as_dict(self) -> dict[int, float]:
        return {int(i): float(v) for i, v in zip(self.store_ids, self.values)}


def _field_block(index, members, cand, gamma, cutoff, include_self):
    d = haversine_km(
        index.lon[members][:, None], index.lat[members][:, None], index.lon[cand][None, :], index.lat[cand][None, :]
    )
    w = np.where(d <= cutoff, np.exp(-gamma * d), 0.0)
    if not include_self:
        w[members[:, None] == cand[None, :]] = 0.0
    return w.sum(axis=1)


def field_values(index: GridIndex, params: DecayParams, threads: int = 1) -> np.ndarray:
    """A_i for every point of ``index`` (aligned with ``index.ids``)."""
    out = np.empty(len(index), dtype=np.float64)
    blocks = list(index.cell_blocks(params.cutoff_km))

    def work(block):
        members, cand = block
        out[members] = _field_block(index, members, cand, params.gamma, params.cutoff_km, params.include_self)

    if threads <= 1:
        for b in blocks:
            work(b)
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(work, blocks))
    return out


def amenity_field(stores, params: DecayParams | None = None, index: GridIndex | None = None, threads: int = 1) -> AmenityField:
    """Effective number of amenities for each store."""
    params = params or DecayParams()
    if not stores:
        raise EmptyInput("no stores")
    if index is None:
        index = build_grid_index(stores, params.cutoff_km)
    ids = np.sort(np.fromiter((s.store_id for s in stores), dtype=np.int64, count=len(stores)))
    if len(ids) != len(index) or not np.array_equal(ids, index.ids):
        raise ParamsMismatch("grid index was built over a different store set")
    return AmenityField(index.ids.copy(), field_values(index, params, threads), params)


def exact_field(lon, lat, gamma=DEFAULT_GAMMA, include_self=True) -> np.ndarray:
    """Untruncated all-pairs field, O(n^2) memory. Reference for small inputs."""
    lon = np.asarray(lon, dtype=np.float64)
    lat = np.asarray(lat, dtype=np.float64)
    w = np.exp(-gamma * haversine_km(lon[:, None], lat[:, None], lon[None, :], lat[None, :]))
    if not include_self:
        np.fill_diagonal(w, 0.0)
    return w.sum(axis=1)


class AmenityFieldTransformer(TransformerMixin, BaseEstimator):
    """Estimator wrapper for the decayed amenity field.

    ``fit`` indexes a set of store locations; ``transform`` evaluates the
    field at arbitrary points against those stores; ``fit_transform``
    returns A_i for the fitted stores themselves in input order.

    Parameters
    ----------
    gamma : float
        Decay rate per kilometre.
    cutoff_km : float
        Pairs farther apart than this are ignored.
    include_self : bool
        Whether a store counts itself (adds exactly 1 to its own A_i).
    n_jobs : int
        Worker threads for the field computation. Never changes results.
    """

    def __init__(self, gamma=DEFAULT_GAMMA, cutoff_km=DEFAULT_CUTOFF_KM, include_self=True, n_jobs=1):
        self.gamma = gamma
        self.cutoff_km = cutoff_km
        self.include_self = include_self
        self.n_jobs = n_jobs

    def _params(self):
        return DecayParams(self.gamma, self.cutoff_km, bool(self.include_self))

    def fit(self, X, y=None, store_ids=None):
        X = check_lonlat(X)
        params = self._params()
        ids = check_ids(store_ids, len(X))
        self.index_ = GridIndex(ids, X[:, 0], X[:, 1], params.cutoff_km)
        self.field_ = AmenityField(self.index_.ids.copy(), field_values(self.index_, params, self.n_jobs), params)
        self.store_ids_ = ids
        self.n_features_in_ = 2
        return self

    def fit_transform(self, X, y=None, store_ids=None):
        self.fit(X, y, store_ids=store_ids)
        pos = np.searchsorted(self.field_.store_ids, self.store_ids_)
        return self.field_.values[pos]

    def transform(self, X):
        check_is_fitted(self, "field_")
        X = check_lonlat(X)
        params = self.field_.params
        out = np.empty(len(X))
        for k, (lon, lat) in enumerate(X):
            _, d = self.index_.query_radius(lon, lat, params.cutoff_km, return_distance=True)
            out[k] = np.exp(-params.gamma * d).sum()
        return out
