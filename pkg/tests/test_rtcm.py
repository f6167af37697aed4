import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from phonertk import rtcm
from phonertk.gnss_obs import CLIGHT, Band, Constellation, Epoch, Observation, SatId
from phonertk.rtcm import (FrameLengthError, FrameScanner, Msm7Decoder, Msm7Encoder, Msm7Message,
                           UnsupportedMessage, crc24q, frame_decode, frame_encode, lock_time_indicator,
                           lock_time_ms, message_number, msm7_decode, msm7_encode)

import oracles
from factories import frame_stream, random_epoch

PR_TOL = 0.5 * 2.0 ** -29 * CLIGHT * 1e-3
CP_TOL = 0.5 * 2.0 ** -31 * CLIGHT * 1e-3


def test_half_lsb_bounds():
    assert PR_TOL == pytest.approx(2.79e-4, abs=1e-6)
    assert CP_TOL < 3.5e-4


# CRC and framing

def test_crc_degenerate_inputs():
    assert crc24q(b"") == 0
    for n in (1, 5, 100):
        assert crc24q(bytes(n)) == 0


def test_crc_check_value():
    assert crc24q(b"123456789") == 0xCDE703


def test_crc_matches_bitwise_oracle():
    rng = np.random.default_rng(11)
    for _ in range(300):
        p = bytes(rng.integers(0, 256, int(rng.integers(0, 300)), dtype=np.uint8))
        assert crc24q(p) == oracles.crc24q_bitwise(p)


@given(st.binary(max_size=1023))
@settings(max_examples=200, deadline=None)
def test_frame_round_trip_property(p):
    f = frame_encode(p)
    assert len(f) == len(p) + 6 and f[0] == 0xD3
    assert frame_decode(f) == (p, len(f))


def test_frame_sizes():
    assert len(frame_encode(bytes(100))) == 106
    empty = frame_encode(b"")
    assert len(empty) == 6
    assert int.from_bytes(empty[3:], "big") == crc24q(empty[:3])
    with pytest.raises(FrameLengthError):
        frame_encode(bytes(1024))


def test_resync_after_garbage():
    f = frame_encode(b"\x43\x50hello")
    payload, consumed = frame_decode(b"\x00\xd3\x01garb" + f)
    assert payload == b"\x43\x50hello" and consumed == 7 + len(f)


def test_flipped_bit_rejected():
    good = frame_encode(b"first frame")
    bad = bytearray(frame_encode(b"second frame"))
    bad[6] ^= 0x10
    tail = frame_encode(b"third")
    sc = FrameScanner()
    assert sc.feed(good + bytes(bad) + tail) == [b"first frame", b"third"]


def test_concatenated_frames():
    rng = np.random.default_rng(5)
    data, payloads = frame_stream(rng, 50, garbage=0)
    assert FrameScanner().feed(data) == payloads


@given(st.lists(st.binary(min_size=0, max_size=80), min_size=1, max_size=15), st.integers(1, 64))
@settings(max_examples=100, deadline=None)
def test_scanner_chunking_invariance(payloads, chunk):
    data = b"".join(frame_encode(p) for p in payloads)
    sc = FrameScanner()
    got = []
    for i in range(0, len(data), chunk):
        got += sc.feed(data[i:i + chunk])
    assert got == payloads and sc.pending == 0


def test_message_number():
    assert message_number(bytes([0x43, 0x50])) == 1077


# MSM7

def gps_epoch(sats=((1, 2.2e7),)):
    obs = [Observation(SatId(Constellation.GPS, p), Band.L1, pr, pr / 0.19 + 0.3, -1200.5, 42.0)
           for p, pr in sats]
    return Epoch(2200, 259200.0, tuple(obs))


def test_gps_message_number_and_cells():
    payload = msm7_encode(gps_epoch(), Constellation.GPS)
    assert (payload[0] << 4 | payload[1] >> 4) == 1077
    m = Msm7Message.unpack(payload)
    assert m.satellites == [1] and m.signals == [2]
    assert sum(m.cell_mask_bits()) == 1 and len(m.fine_pr) == 1


def test_single_constellation_round_trip():
    rng = np.random.default_rng(2)
    for sys in Constellation:
        for _ in range(25):
            e = random_epoch(rng, systems=(sys,))
            back, station = msm7_decode(msm7_encode(e, sys, station_id=77), week=e.week)
            assert station == 77
            assert back.tow == e.tow
            _compare(e, back)


def _compare(e, back):
    assert [o.sat for o in back.observations] == [o.sat for o in e.observations]
    for a, b in zip(e.observations, back.observations):
        assert abs(a.pseudorange - b.pseudorange) <= PR_TOL
        lam = CLIGHT / a.band.frequency
        assert abs(a.carrier_phase - b.carrier_phase) * lam <= CP_TOL * (1 + 1e-9)
        assert abs(a.doppler - b.doppler) * lam <= 0.5e-4 + 1e-9
        assert abs(a.cn0 - b.cn0) <= 1 / 32 + 1e-12


def test_four_types_in_one_stream():
    rng = np.random.default_rng(9)
    e = random_epoch(rng, tow=345600.0)
    frames = Msm7Encoder(3).encode(e)
    nums = [message_number(f[3:-3]) for f in frames]
    assert nums == [1077, 1087, 1097, 1127]
    dec = Msm7Decoder(week=2200)
    out = dec.feed(b"".join(frames))
    assert len(out) == 1 and dec.station_id == 3
    _compare(e, out[0])


def test_unsupported_message():
    # the field is 12 bits wide, so use the largest representable number
    dec = Msm7Decoder()
    for num in (4095, 1005):
        payload = bytes([num >> 4, (num & 0xF) << 4, 0, 0])
        with pytest.raises(UnsupportedMessage):
            Msm7Message.unpack(payload)
        assert dec.feed(frame_encode(payload)) == []
    assert dec.unsupported == 2


def test_missing_phase_and_bad_phase():
    o = Observation(SatId(Constellation.GPS, 4), Band.L1, 2.3e7, None, None, 30.0)
    back, _ = msm7_decode(msm7_encode(Epoch(2200, 1.0, (o,)), Constellation.GPS))
    assert back.observations[0].carrier_phase is None and back.observations[0].doppler is None
    far = Observation(SatId(Constellation.GPS, 5), Band.L1, 2.3e7, (2.3e7 + 5000) / 0.19, None, 30.0)
    dropped = []
    back, _ = msm7_decode(msm7_encode(Epoch(2200, 1.0, (far,)), Constellation.GPS, dropped=dropped))
    assert back.observations[0].carrier_phase is None and dropped


def test_beidou_and_glonass_time():
    for sys, tow in ((Constellation.BEIDOU, 5.0), (Constellation.GLONASS, 604000.0)):
        e = random_epoch(np.random.default_rng(1), systems=(sys,), tow=tow)
        back, _ = msm7_decode(msm7_encode(e, sys), week=2200)
        assert (back.week, back.tow) == (2200, tow)


@given(st.integers(0, 1 << 26))
@settings(max_examples=300, deadline=None)
def test_lock_time_indicator_is_lower_bound(ms):
    ind = lock_time_indicator(ms)
    assert 0 <= ind <= 704
    assert lock_time_ms(ind) <= ms
    assert ind == 704 or lock_time_ms(ind + 1) > ms


def test_lock_time_drives_loss_of_lock():
    enc, dec = Msm7Encoder(), Msm7Decoder(2200)
    base = gps_epoch(((3, 2.1e7),))
    out = []
    for k, llock in enumerate((False, False, False, True, False)):
        o = base.observations[0]
        e = Epoch(2200, 259200.0 + k, (Observation(o.sat, o.band, o.pseudorange, o.carrier_phase,
                                                   o.doppler, o.cn0, llock),))
        out += dec.feed(b"".join(enc.encode(e)))
    flags = [e.observations[0].loss_of_lock for e in out]
    assert flags == [True, False, False, True, False]


def test_encoder_rejects_station_id():
    with pytest.raises(rtcm.EncodeError):
        msm7_encode(gps_epoch(), Constellation.GPS, station_id=5000)


def test_describe_and_iter_frames():
    frames = Msm7Encoder().encode(gps_epoch())
    payloads = list(rtcm.iter_frames(b"junk" + b"".join(frames)))
    text = rtcm.describe(payloads[0])
    assert text.startswith("RTCM 1077") and "G01" in text
    assert "not decoded" in rtcm.describe(bytes([0x3E, 0xD0, 0]))
