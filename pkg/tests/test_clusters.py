import numpy as np
import pytest
from helpers import blob, offset, stores_at
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from amenity_eci.clusters import (
    ClusterDetector,
    ClusterParams,
    apply_frozen_map,
    assign_to_seeds,
    attach_attributes,
    cluster_geometry,
    detect_clusters,
    link_to_base,
    peak_mask,
    read_clusters,
    station_assignment,
    write_geojson,
    write_members,
)
from amenity_eci.exceptions import DataWarning, EmptyInput, NoSeeds, UnknownClusterId
from amenity_eci.model import ClusterAttribute, MobilityCount
from amenity_eci.spatial import DecayParams


def _two_blobs(rng, sep_km=2.0, n=60):
    xy = np.vstack([blob(rng, n, 0, 0), blob(rng, n, sep_km, 0)])
    return stores_at(xy)


def test_single_tight_blob_gives_one_cluster(rng):
    stores = stores_at(blob(rng, 80, 0, 0, 0.03))
    _, clusters = detect_clusters(stores)
    assert len(clusters) == 1
    assert clusters[0].n_stores == 80


def test_two_separated_blobs(rng):
    stores = _two_blobs(rng)
    _, clusters = detect_clusters(stores)
    assert len(clusters) == 2
    got = sorted(set(c.member_ids) for c in clusters)
    assert sorted(got, key=min) == [set(range(1, 61)), set(range(61, 121))]


def test_equal_field_values_go_to_lower_id():
    lon, lat = offset([0.0, 0.1], [0.0, 0.0])
    mask = peak_mask(np.array([1, 2]), lon, lat, np.array([1.5, 1.5]), 0.25)
    assert mask.tolist() == [True, False]


def test_equidistant_point_prefers_stronger_then_lower_seed():
    params = ClusterParams(r_max_km=0.7, r_step_km=0.05)
    lon, lat = offset([0.0], [0.0])
    slon, slat = offset([-0.3, 0.3], [0.0, 0.0])
    assert assign_to_seeds(lon, lat, slon, slat, np.array([2.0, 3.0]), np.array([1, 2]), params).tolist() == [1]
    assert assign_to_seeds(lon, lat, slon, slat, np.array([3.0, 3.0]), np.array([9, 4]), params).tolist() == [1]


def test_point_beyond_r_max_is_unassigned():
    params = ClusterParams(r_max_km=0.5, r_step_km=0.1)
    lon, lat = offset([0.0, 0.45, 0.6], [0.0, 0.0, 0.0])
    slon, slat = offset([0.0], [0.0])
    assert assign_to_seeds(lon, lat, slon, slat, np.array([1.0]), np.array([1]), params).tolist() == [0, 0, -1]


def test_radii_end_at_r_max():
    assert_allclose(ClusterParams(r_max_km=0.7, r_step_km=0.05).radii()[-1], 0.7)
    assert_allclose(ClusterParams(r_max_km=0.32, r_step_km=0.1).radii(), [0.1, 0.2, 0.3, 0.32])
    with pytest.raises(ValueError):
        ClusterParams(r_max_km=0.1, r_step_km=0.2)


def test_unit_square_hull_area():
    lon, lat = offset([0, 1, 1, 0, 0.5], [0, 0, 1, 1, 0.5])
    area, radius, _, ring = cluster_geometry(lon, lat)
    assert area == pytest.approx(1.0, rel=1e-3)
    assert radius == pytest.approx(np.sqrt(2), rel=1e-3)
    assert len(ring) == 4


def test_degenerate_hulls():
    lon, lat = offset([0, 0.1, 0.2], [0, 0, 0])
    assert cluster_geometry(lon, lat)[0] == 0.0
    assert cluster_geometry(lon[:2], lat[:2])[0] == 0.0
    with pytest.raises(EmptyInput):
        cluster_geometry([], [])


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_clusters_partition_the_stores(seed):
    rng = np.random.default_rng(seed)
    xy = np.vstack([blob(rng, 40, cx, cy, 0.08) for cx, cy in rng.uniform(0, 4, (4, 2))] + [rng.uniform(0, 4, (20, 2))])
    stores = stores_at(xy)
    _, clusters = detect_clusters(stores)
    members = [m for c in clusters for m in c.member_ids]
    assert len(members) == len(set(members))
    assert set(members) <= {s.store_id for s in stores}
    for c in clusters:
        assert c.seed_store_id in c.member_ids


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_larger_r_max_assigns_at_least_as_many(seed):
    rng = np.random.default_rng(seed)
    xy = rng.uniform(0, 3, (150, 2))
    lon, lat = offset(xy[:, 0], xy[:, 1])
    slon, slat = offset(*rng.uniform(0, 3, (2, 5)))
    val, key = rng.uniform(1, 5, 5), np.arange(5)
    counts = [
        int((assign_to_seeds(lon, lat, slon, slat, val, key, ClusterParams(r_max_km=r, r_step_km=0.05)) >= 0).sum())
        for r in (0.2, 0.4, 0.8)
    ]
    assert counts == sorted(counts)


def _station(sid, x, y):
    lon, lat = offset([x], [y])
    return MobilityCount(sid, float(lon[0]), float(lat[0]), 2018, 8, "07-24", "total", 100.0)


def test_attach_attributes(rng):
    _, clusters = detect_clusters(_two_blobs(rng))
    a, b = sorted(clusters, key=lambda c: c.seed_lonlat[0])
    attrs = [ClusterAttribute(a.cluster_id, a.hull_area_km2 * 1e6 * 0.25), ClusterAttribute(b.cluster_id, 0.0, ("station:9",))]
    out = {c.cluster_id: c for c in attach_attributes(clusters, attrs, [_station("station:1", 0.0, 0.0), _station("cell:1", 2.0, 0.0)])}
    assert out[a.cluster_id].near_metro == 1
    assert out[a.cluster_id].green_share == pytest.approx(0.25)
    # listed station id, no station point nearby; cell sources never count
    assert out[b.cluster_id].near_metro == 1
    assert out[b.cluster_id].green_share == 0.0
    assert attach_attributes([b], [])[0].near_metro == 0


def test_green_share_clamped_and_unknown_cluster(rng):
    _, clusters = detect_clusters(_two_blobs(rng))
    c = clusters[0]
    with pytest.warns(DataWarning):
        out = attach_attributes([c], [ClusterAttribute(c.cluster_id, c.hull_area_km2 * 2e6)])
    assert out[0].green_share == 1.0
    with pytest.raises(UnknownClusterId):
        attach_attributes([c], [ClusterAttribute(99, 1.0)])


def test_station_assignment_picks_nearest_covering_seed(rng):
    _, clusters = detect_clusters(_two_blobs(rng))
    a, b = sorted(clusters, key=lambda c: c.seed_lonlat[0])
    owner = station_assignment(clusters, [_station("station:1", 0.01, 0.0), _station("station:2", 1.99, 0), _station("station:3", 1.0, 3.0)])
    assert owner == {"station:1": a.cluster_id, "station:2": b.cluster_id}


def test_frozen_map_keeps_ids(rng):
    base_stores = _two_blobs(rng)
    _, base = detect_clusters(base_stores, year=2016)
    later = stores_at(np.vstack([blob(rng, 30, 0, 0), blob(rng, 30, 2, 0)]), year=2017, start_id=1000)
    mapped = apply_frozen_map(base, later, year=2017)
    assert sorted(c.cluster_id for c in mapped) == sorted(c.cluster_id for c in base)
    assert all(c.year == 2017 for c in mapped)
    assert sum(c.n_stores for c in mapped) == 60
    with pytest.raises(NoSeeds):
        apply_frozen_map([], later)


def test_link_to_base(rng):
    _, base = detect_clusters(_two_blobs(rng), year=2016)
    xy = np.vstack([blob(rng, 50, 2.0, 0), blob(rng, 50, 0, 0), blob(rng, 50, 5.0, 0)])
    _, found = detect_clusters(stores_at(xy, year=2017), year=2017)
    linked = link_to_base(base, found, 0.25)
    base_by_x = {round(c.seed_lonlat[0], 2): c.cluster_id for c in base}
    ids = sorted(c.cluster_id for c in linked)
    assert ids[:2] == sorted(base_by_x.values())
    assert ids[2] == max(c.cluster_id for c in base) + 1


def test_geojson_round_trip(tmp_path, rng):
    stores = _two_blobs(rng)
    _, clusters = detect_clusters(stores, year=2018)
    clusters = attach_attributes(clusters, [], [_station("station:1", 0, 0)])
    write_geojson(str(tmp_path / "c.geojson"), clusters)
    write_members(str(tmp_path / "m.csv"), clusters, stores)
    back = read_clusters(str(tmp_path / "c.geojson"), str(tmp_path / "m.csv"))
    assert [c.member_ids for c in back] == [tuple(sorted(c.member_ids)) for c in clusters]
    assert [c.near_metro for c in back] == [c.near_metro for c in clusters]
    assert back[0].hull_area_km2 == clusters[0].hull_area_km2


def test_detector_estimator(rng):
    stores = _two_blobs(rng)
    X = np.array([(s.lon, s.lat) for s in stores])
    det = ClusterDetector().fit(X, store_ids=[s.store_id for s in stores])
    assert len(det.cluster_centers_) == 2
    assert set(det.labels_) == {0, 1}
    assert np.array_equal(det.predict(X), det.labels_)
    _, clusters = detect_clusters(stores, DecayParams())
    assert sorted(det.seed_ids_) == sorted(c.seed_store_id for c in clusters)
