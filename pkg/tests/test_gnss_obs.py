import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from phonertk.gnss_obs import (BDS_GPS_OFFSET_NS, CLIGHT, DEFAULT_BAND, WEEK_NS, Band, Constellation,
                               EmptyEpochError, Epoch, MeasurementRejected, Observation, RawMeasurement,
                               SatId, State, build_epoch, derive_pseudorange, epoch_from_json, epoch_to_json,
                               read_epochs, wavelength, write_epochs)

LOCKED = State.CODE_LOCK | State.TOW_DECODED | State.ADR_VALID
WEEK = 2200
FULL_BIAS = -(WEEK * WEEK_NS + 259200 * 10**9) + 10**9  # hardware clock reads 1 s at tow 259200


def raw(sat="G01", travel_ns=70_000_000, rx_tow_ns=259200 * 10**9, state=LOCKED, cn0=40.0,
        adr=1000.0, offset=0.0):
    s = SatId.parse(sat)
    t_ns = WEEK * WEEK_NS + rx_tow_ns
    hw = t_ns + FULL_BIAS
    sv = t_ns - travel_ns
    if s.constellation is Constellation.BEIDOU:
        sv -= BDS_GPS_OFFSET_NS
    return RawMeasurement(s, DEFAULT_BAND[s.constellation], hw, FULL_BIAS, 0.0, offset,
                          sv % WEEK_NS, state, 100.0, adr, cn0)


def test_seventy_milliseconds():
    o = derive_pseudorange(raw())
    assert o.pseudorange == pytest.approx(20985472.06, abs=1e-6)
    assert o.pseudorange == CLIGHT * 0.07


def test_week_rollover():
    r = raw(rx_tow_ns=5_000_000, travel_ns=20_000_000)
    assert r.received_sv_time_nanos == 604800 * 10**9 - 15_000_000
    assert derive_pseudorange(r).pseudorange == pytest.approx(CLIGHT * 0.02, abs=1e-6)


def test_beidou_time_offset():
    assert derive_pseudorange(raw("C11")).pseudorange == pytest.approx(CLIGHT * 0.07, abs=1e-6)


def test_sub_nanosecond_parts():
    o = derive_pseudorange(raw(offset=0.25))
    assert o.pseudorange - CLIGHT * 0.07 == pytest.approx(CLIGHT * 0.25e-9, abs=1e-7)


def test_rejections():
    with pytest.raises(MeasurementRejected, match="lock"):
        derive_pseudorange(raw(state=State.ADR_VALID))
    with pytest.raises(MeasurementRejected, match="implausible"):
        derive_pseudorange(raw(travel_ns=500_000_000))


def test_phase_and_lock_flags():
    o = derive_pseudorange(raw(adr=190.29367))
    assert o.carrier_phase == pytest.approx(190.29367 / wavelength(Band.L1))
    assert not o.loss_of_lock
    assert derive_pseudorange(raw(state=LOCKED | State.ADR_RESET)).loss_of_lock
    assert derive_pseudorange(raw(state=State.CODE_LOCK | State.TOW_DECODED)).carrier_phase is None


def test_wavelengths():
    assert wavelength(Band.L1) == pytest.approx(0.19029367, abs=1e-8)
    assert wavelength(Band.B1) == pytest.approx(0.19203949, abs=1e-8)
    for b in Band:
        assert wavelength(b) * b.frequency == pytest.approx(CLIGHT, rel=1e-15)


def test_build_epoch_counts_and_duplicates():
    raws = [raw(f"G{p:02d}", travel_ns=67_000_000 + p) for p in range(1, 9)]
    e = build_epoch(raws)
    assert len(e.observations) == 8
    assert (e.week, e.tow) == (WEEK, 259200.0)

    e = build_epoch([raw(cn0=30.0, travel_ns=70_000_001), raw(cn0=40.0)])
    assert len(e.observations) == 1 and e.observations[0].cn0 == 40.0


def test_build_epoch_mixed_constellations():
    sats = ["G05", "R07", "E11", "C21"]
    e = build_epoch([raw(s) for s in sats])
    assert {str(o.sat) for o in e.observations} == set(sats)
    assert {o.sat.constellation for o in e.observations} == set(Constellation)


def test_build_epoch_empty():
    with pytest.raises(EmptyEpochError):
        build_epoch([])
    with pytest.raises(EmptyEpochError):
        build_epoch([raw(state=State(0))])


def test_satid_range():
    with pytest.raises(ValueError):
        SatId(Constellation.GPS, 33)
    assert str(SatId.parse("C05")) == "C05"


def test_jsonl_round_trip(tmp_path):
    e = build_epoch([raw("G01"), raw("C11", adr=5.0)])
    assert epoch_from_json(epoch_to_json(e)) == e
    p = tmp_path / "obs.jsonl"
    write_epochs(p, [e, dataclasses.replace(e, tow=259201.0)])
    back = list(read_epochs(p))
    assert back[0] == e and back[1].tow == 259201.0


@given(st.integers(1, 32), st.integers(64_000_000, 89_000_000), st.integers(0, 604799))
@settings(max_examples=100, deadline=None)
def test_travel_time_property(prn, travel_ns, tow_s):
    o = derive_pseudorange(raw(f"G{prn:02d}", travel_ns=travel_ns, rx_tow_ns=tow_s * 10**9))
    assert o.pseudorange == pytest.approx(CLIGHT * travel_ns * 1e-9, abs=1e-6)


def test_simulator_raws_reproduce_true_pseudorange(short_run):
    checked = 0
    for k, raws in enumerate(short_run.raw["rover"][:5]):
        for r in raws:
            tr = short_run.tracks[("rover", r.sat)]
            assert derive_pseudorange(r).pseudorange == pytest.approx(tr.pseudorange[k], abs=1e-6)
            checked += 1
    assert checked > 20


def test_observation_plausibility():
    with pytest.raises(ValueError):
        Observation(SatId.parse("G01"), Band.L1, 10.0)
    with pytest.raises(ValueError):
        Epoch(WEEK, 0.0, [Observation(SatId.parse("G01"), Band.L1, 2e7)] * 2)
    assert np.isclose(Epoch(1, 2.0).time, 604802.0)
