import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from phonertk.geodesy import (Geodetic, GeodesyError, ecef_to_enu, ecef_to_geodetic, elevation_azimuth,
                              enu_to_ecef, geodetic_to_ecef)

import oracles

A = 6378137.0
B = A * (1 - 1 / 298.257223563)


def test_equator_and_pole():
    np.testing.assert_allclose(geodetic_to_ecef(Geodetic(0, 0, 0)), [A, 0, 0], atol=1e-9)
    r = geodetic_to_ecef(Geodetic(90, 0, 0))
    assert abs(r[0]) < 1e-6 and abs(r[1]) < 1e-9
    assert r[2] == pytest.approx(6356752.314, abs=1e-3)
    assert r[2] == pytest.approx(B, abs=1e-6)


def test_inverse_cardinal_points():
    g = ecef_to_geodetic([A, 0, 0])
    assert (g.lat, g.lon) == pytest.approx((0, 0), abs=1e-12)
    assert g.h == pytest.approx(0, abs=1e-6)
    g = ecef_to_geodetic([0, A, 0])
    assert (g.lat, g.lon) == pytest.approx((0, 90), abs=1e-12)
    assert g.h == pytest.approx(0, abs=1e-6)
    g = ecef_to_geodetic([0, 0, -B])
    assert g.lat == pytest.approx(-90, abs=1e-12)


def test_round_trip_seeded():
    rng = np.random.default_rng(7)
    for _ in range(1000):
        p = Geodetic(rng.uniform(-90, 90), rng.uniform(-180, 180), rng.uniform(-500, 30000))
        q = ecef_to_geodetic(geodetic_to_ecef(p))
        assert abs(q.lat - p.lat) < 1e-9
        assert abs((q.lon - p.lon + 180) % 360 - 180) < 1e-9
        assert abs(q.h - p.h) < 1e-4


@given(st.floats(-89.9, 89.9), st.floats(-179.9, 179.9), st.floats(-400, 2e7))
@settings(max_examples=200, deadline=None)
def test_round_trip_property(lat, lon, h):
    q = ecef_to_geodetic(geodetic_to_ecef(Geodetic(lat, lon, h)))
    assert abs(q.lat - lat) < 1e-9 and abs(q.lon - lon) < 1e-9 and abs(q.h - h) < 1e-4


def test_invalid_inputs():
    with pytest.raises(GeodesyError):
        geodetic_to_ecef(Geodetic(91, 0, 0))
    with pytest.raises(GeodesyError):
        ecef_to_geodetic([0, 0, 0])


def test_enu_axes_at_origin():
    o = Geodetic(0, 0, 0)
    base = geodetic_to_ecef(o)
    np.testing.assert_allclose(ecef_to_enu(base, o), 0, atol=1e-9)
    np.testing.assert_allclose(ecef_to_enu(base + [0, 0, 1], o), [0, 1, 0], atol=1e-9)
    np.testing.assert_allclose(ecef_to_enu(base + [1, 0, 0], o), [0, 0, 1], atol=1e-9)
    np.testing.assert_allclose(ecef_to_enu(base + [0, 1, 0], o), [1, 0, 0], atol=1e-9)


@given(st.floats(-80, 80), st.floats(-180, 180),
       st.lists(st.floats(-1e5, 1e5), min_size=3, max_size=3))
@settings(max_examples=100, deadline=None)
def test_enu_inverse_property(lat, lon, enu):
    o = Geodetic(lat, lon, 100.0)
    back = ecef_to_enu(enu_to_ecef(np.array(enu), o), o)
    np.testing.assert_allclose(back, enu, atol=1e-6)


def test_zenith_and_horizon():
    o = Geodetic(30.0, 60.0, 0.0)
    rx = geodetic_to_ecef(o)
    up = enu_to_ecef([0, 0, 2e7], o)
    ea = elevation_azimuth(rx, up)
    assert ea.elevation == pytest.approx(90.0, abs=1e-9)
    assert ea.azimuth == 0.0
    east = enu_to_ecef([2e7, 0, 0], o)
    assert elevation_azimuth(rx, east).elevation == pytest.approx(0.0, abs=1e-9)
    assert elevation_azimuth(rx, east).azimuth == pytest.approx(90.0, abs=1e-9)


def test_elevation_matches_dot_product_oracle(default_run):
    o = default_run.scenario.base_truth
    rx = geodetic_to_ecef(o)
    for eph in default_run.ephemerides.values():
        from phonertk.ephemeris import sat_state
        pos, _ = sat_state(eph, default_run.scenario.tow)
        got = elevation_azimuth(rx, pos).elevation
        assert got == pytest.approx(oracles.elevation_dot(rx, pos, o.lat, o.lon), abs=1e-9)
        assert 0.0 <= elevation_azimuth(rx, pos).azimuth < 360.0


def test_enu_of_default_baseline():
    o = Geodetic(40.0, 116.3, 50.0)
    p = enu_to_ecef([-180, 240, 0], o)
    assert np.linalg.norm(p - geodetic_to_ecef(o)) == pytest.approx(300.0, abs=1e-9)
    assert math.isclose(np.linalg.norm(ecef_to_enu(p, o)), 300.0, abs_tol=1e-9)
