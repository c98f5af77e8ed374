"""Shared helpers for building small store layouts."""

import numpy as np

from amenity_eci.model import StorePoint
from amenity_eci.spatial import EARTH_RADIUS_KM

LON0, LAT0 = 127.0, 37.5


def offset(dx_km, dy_km, lon0=LON0, lat0=LAT0):
    """Lon/lat of a point ``dx`` km east and ``dy`` km north of the origin."""
    dx = np.asarray(dx_km, dtype=np.float64)
    dy = np.asarray(dy_km, dtype=np.float64)
    lat = lat0 + np.degrees(dy / EARTH_RADIUS_KM)
    lon = lon0 + np.degrees(dx / (EARTH_RADIUS_KM * np.cos(np.radians(lat0))))
    return lon, lat


def stores_at(xy_km, year=2018, start_id=1, categories=None):
    """StorePoints at local ``(x, y)`` km offsets with consecutive ids."""
    xy = np.asarray(xy_km, dtype=np.float64).reshape(-1, 2)
    lon, lat = offset(xy[:, 0], xy[:, 1])
    cats = categories or ["retail"] * len(xy)
    return [StorePoint(start_id + i, float(lon[i]), float(lat[i]), cats[i], year) for i in range(len(xy))]


def blob(rng, n, cx_km, cy_km, sd_km=0.05):
    return np.column_stack([rng.normal(cx_km, sd_km, n), rng.normal(cy_km, sd_km, n)])
