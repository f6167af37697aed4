import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from phonertk import ephemeris
from phonertk.ephemeris import (MU_GPS, OMEGA_E_GPS, EphemerisError, EphemerisSet, KeplerEphemeris,
                                StaleEphemeris, geometric_range, kepler_solve, orbital_period, rotate_earth,
                                sat_state, transmit_states)
from phonertk.gnss_obs import CLIGHT, SatId

import oracles


def eph(**kw):
    base = dict(sat=SatId.parse("G07"), toe=259200.0, sqrt_a=5153.6, e=0.0, i0=0.96, omega0=1.2,
                omega=0.4, m0=0.3, toc=259200.0)
    base.update(kw)
    return KeplerEphemeris(**base)


def test_kepler_exact_cases():
    assert kepler_solve(0.0, 0.05) == 0.0
    for m in (-2.0, 0.1, 1.0, 3.0):
        assert kepler_solve(m, 0.0) == m
    assert kepler_solve(math.pi / 2, 0.1) == pytest.approx(1.6703, abs=1e-4)
    assert kepler_solve(math.pi / 2, 0.1) == pytest.approx(oracles.kepler_bisect(math.pi / 2, 0.1), abs=1e-12)


def test_kepler_residual_10k():
    rng = np.random.default_rng(3)
    m = rng.uniform(-math.pi, math.pi, 10_000)
    for e in (0.0, 0.01, 0.05, 0.099):
        ecc = kepler_solve(m, e)
        assert np.max(np.abs(ecc - e * np.sin(ecc) - m)) < 1e-12


@given(st.floats(-math.pi, math.pi), st.floats(0.0, 0.0999))
@settings(max_examples=200, deadline=None)
def test_kepler_matches_bisection(m, e):
    assert kepler_solve(m, e) == pytest.approx(oracles.kepler_bisect(m, e), abs=1e-11)


def test_kepler_rejects_bad_eccentricity():
    with pytest.raises(ValueError):
        kepler_solve(1.0, 1.0)


def test_circular_orbit_radius():
    e0 = eph()
    t = 259200.0 + np.linspace(-7000, 7000, 57)
    pos, _ = sat_state(e0, t)
    np.testing.assert_allclose(np.linalg.norm(pos, axis=1), 5153.6 ** 2, atol=1e-6)


def test_clock_polynomial():
    e0 = eph(af0=1.5e-4)
    for t in (252200.0, 259200.0, 266000.0):
        assert sat_state(e0, t)[1] == 1.5e-4
    e1 = eph(af0=1e-4, af1=1e-11, af2=1e-18, e=0.01)
    pos, clk = sat_state(e1, 259300.0)
    ecc = kepler_solve(0.3 + math.sqrt(MU_GPS) / 5153.6 ** 3 * 100.0, 0.01)
    rel = -2 * math.sqrt(MU_GPS) / CLIGHT ** 2 * 0.01 * 5153.6 * math.sin(ecc)
    assert clk == pytest.approx(1e-4 + 1e-9 + 1e-14 + rel, abs=1e-18)


def test_scalar_and_array_paths_agree():
    e0 = eph(e=0.02, delta_n=4e-9, cuc=1e-6, cus=5e-6, crc=200.0, crs=-30.0, cic=1e-7, cis=-1e-7,
             idot=1e-10, omega_dot=-8e-9, af1=1e-12)
    t = 259200.0 + np.linspace(-7200, 7200, 31)
    pos, clk = sat_state(e0, t)
    for k, tk in enumerate(t):
        p1, c1 = sat_state(e0, float(tk))
        np.testing.assert_allclose(p1, pos[k], atol=1e-6, rtol=0)
        assert c1 == pytest.approx(clk[k], abs=1e-18)


def test_matches_rk4_two_body_over_one_period(monkeypatch):
    monkeypatch.setattr(ephemeris, "VALIDITY_S", 1e6)
    e0 = eph(e=0.012, m0=-1.1)
    a = e0.sqrt_a ** 2
    # inertial frame = ECEF frame at toe
    raan = e0.omega0 - OMEGA_E_GPS * e0.toe
    r0, v0 = oracles.perifocal_state(MU_GPS, a, e0.e, e0.i0, raan, e0.omega, e0.m0)
    np.testing.assert_allclose(r0, sat_state(e0, e0.toe)[0], atol=1e-6)
    period = orbital_period(e0)
    step = period / 8000
    traj = oracles.rk4_two_body(r0, v0, MU_GPS, period, step)
    idx = np.arange(0, 8001, 250)
    t = e0.toe + idx * step
    pos, _ = sat_state(e0, t)
    inertial = rotate_earth(pos, -OMEGA_E_GPS * (t - e0.toe))
    err = np.linalg.norm(inertial - traj[idx], axis=1)
    assert err.max() < 1e-3


def test_stale_and_week_crossing():
    e0 = eph()
    with pytest.raises(StaleEphemeris):
        sat_state(e0, 259200.0 + 7201)
    with pytest.raises(StaleEphemeris):
        sat_state(e0, np.array([259200.0, 250000.0]))
    # toe near the end of the week, t just after rollover
    e1 = eph(toe=604000.0, toc=604000.0)
    p_late, _ = sat_state(e1, 604799.0)
    p_wrap, _ = sat_state(e1, 1.0)
    assert np.linalg.norm(p_wrap - p_late) < 4000.0 * 2.5


def test_plausibility():
    with pytest.raises(EphemerisError):
        eph(sqrt_a=100.0)
    with pytest.raises(EphemerisError):
        eph(e=0.2)


def test_set_json_round_trip(tmp_path):
    s = EphemerisSet.from_records([eph(), eph(sat=SatId.parse("C11"), e=0.001)])
    p = tmp_path / "eph.json"
    s.save(p)
    assert EphemerisSet.load(p) == s


def test_geometric_range_sagnac():
    rx = np.array([6378137.0, 0.0, 0.0])
    sat = np.array([0.0, 26_560_000.0, 0.0])
    rho, los = geometric_range(sat, rx)
    plain = np.linalg.norm(sat - rx)
    assert rho != plain and abs(rho - plain) < 50.0
    assert np.linalg.norm(los) == pytest.approx(1.0, abs=1e-12)
    # the rotated satellite position reproduces the range exactly
    rotated = rotate_earth(sat, OMEGA_E_GPS * rho / CLIGHT)
    assert np.linalg.norm(rotated - rx) == pytest.approx(rho, abs=1e-6)


def test_transmit_states_cover_observed(default_run):
    ep = default_run.epochs("rover")[0]
    states = transmit_states(ep, default_run.ephemerides)
    assert set(states) == {o.sat for o in ep.observations}
