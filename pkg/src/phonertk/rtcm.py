"""RTCM 3 framing, CRC-24Q and MSM7 observation messages.

Layout of a frame on the wire::

    0xD3 | 6 reserved bits (0) | 10-bit length | payload | CRC-24Q (3 bytes)

MSM7 payloads follow RTCM 10403.2 field order and widths. Only one signal
per constellation is used (GPS/GLONASS/Galileo L1C, BeiDou B1I), all of
which map to signal id 2.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

from .gnss_obs import (
    CLIGHT,
    DEFAULT_BAND,
    Band,
    Constellation,
    Epoch,
    Observation,
    SatId,
    wavelength,
)

log = logging.getLogger(__name__)

PREAMBLE = 0xD3
MAX_PAYLOAD = 1023
CRC24Q_POLY = 0x1864CFB

MSM7_TYPES = {
    Constellation.GPS: 1077,
    Constellation.GLONASS: 1087,
    Constellation.GALILEO: 1097,
    Constellation.BEIDOU: 1127,
}
MSM7_SYSTEM = {v: k for k, v in MSM7_TYPES.items()}

SIGNAL_ID = 2
RANGE_MS = CLIGHT * 1e-3  # meters per millisecond of range
P2_10 = 2.0 ** -10
P2_29 = 2.0 ** -29
P2_31 = 2.0 ** -31

ROUGH_INVALID = 255
FINE_PR_INVALID = -(1 << 19)
FINE_CP_INVALID = -(1 << 23)
ROUGH_RATE_INVALID = -(1 << 13)
FINE_RATE_INVALID = -(1 << 14)

# lock time assumed by the stateless encoder for continuously tracked signals
DEFAULT_LOCK_MS = 1000


class RtcmError(ValueError):
    pass


class FrameLengthError(RtcmError):
    pass


class UnsupportedMessage(RtcmError):
    pass


class MalformedMessage(RtcmError):
    pass


class EncodeError(RtcmError):
    pass


def _crc24q_table() -> list[int]:
    table = []
    for i in range(256):
        crc = i << 16
        for _ in range(8):
            crc <<= 1
            if crc & 0x1000000:
                crc ^= CRC24Q_POLY
        table.append(crc & 0xFFFFFF)
    return table


_CRC_TABLE = _crc24q_table()


def crc24q(data: bytes) -> int:
    crc = 0
    for b in data:
        crc = ((crc << 8) & 0xFFFFFF) ^ _CRC_TABLE[(crc >> 16) ^ b]
    return crc


# bit packing

class BitWriter:
    def __init__(self):
        self._value = 0
        self.nbits = 0

    def u(self, value: int, n: int) -> None:
        if not 0 <= value < (1 << n):
            raise EncodeError(f"value {value} does not fit in u{n}")
        self._value = (self._value << n) | value
        self.nbits += n

    def s(self, value: int, n: int) -> None:
        """Two's complement signed field."""
        lim = 1 << (n - 1)
        if not -lim <= value < lim:
            raise EncodeError(f"value {value} does not fit in s{n}")
        self.u(value & ((1 << n) - 1), n)

    def to_bytes(self) -> bytes:
        pad = -self.nbits % 8
        nbytes = (self.nbits + pad) // 8
        return (self._value << pad).to_bytes(nbytes, "big")


class BitReader:
    def __init__(self, data: bytes):
        self._value = int.from_bytes(data, "big")
        self._total = 8 * len(data)
        self.pos = 0

    def u(self, n: int) -> int:
        if self.pos + n > self._total:
            raise MalformedMessage("payload truncated")
        shift = self._total - self.pos - n
        self.pos += n
        return (self._value >> shift) & ((1 << n) - 1)

    def s(self, n: int) -> int:
        v = self.u(n)
        return v - (1 << n) if v & (1 << (n - 1)) else v


# framing

def frame_encode(payload: bytes) -> bytes:
    if len(payload) > MAX_PAYLOAD:
        raise FrameLengthError(f"payload of {len(payload)} bytes exceeds {MAX_PAYLOAD}")
    head = bytes([PREAMBLE, (len(payload) >> 8) & 0x03, len(payload) & 0xFF])
    body = head + bytes(payload)
    return body + crc24q(body).to_bytes(3, "big")


def _frame_at(buf, i: int):
    """Classify a candidate at ``buf[i]``: 'bad', 'short' or the frame length."""
    if buf[i] != PREAMBLE:
        return "bad"
    if i + 3 > len(buf):
        return "short"
    if buf[i + 1] & 0xFC:
        return "bad"
    n = ((buf[i + 1] & 0x03) << 8) | buf[i + 2]
    if i + n + 6 > len(buf):
        return "short"
    if crc24q(bytes(buf[i:i + n + 6])) != 0:
        return "bad"
    return n + 6


def frame_decode(stream: bytes):
    """Find the next valid frame in ``stream``.

    Returns ``(payload, consumed)`` when a frame verifies, where ``consumed``
    counts the skipped garbage plus the frame. When no complete frame is
    available returns ``(None, skip)``: the first ``skip`` bytes can never
    start a valid frame and may be discarded before waiting for more data.
    """
    i = 0
    n = len(stream)
    while i < n:
        j = stream.find(bytes([PREAMBLE]), i)
        if j < 0:
            return None, n
        res = _frame_at(stream, j)
        if res == "bad":
            i = j + 1
            continue
        if res == "short":
            # a complete frame further on means this candidate was garbage
            k = stream.find(bytes([PREAMBLE]), j + 1)
            while k >= 0:
                later = _frame_at(stream, k)
                if isinstance(later, int):
                    return bytes(stream[k + 3:k + later - 3]), k + later
                k = stream.find(bytes([PREAMBLE]), k + 1)
            return None, j
        return bytes(stream[j + 3:j + res - 3]), j + res
    return None, n


class FrameScanner:
    """Incremental frame extractor for one byte stream."""

    def __init__(self):
        self._buf = bytearray()
        self.frames = 0
        self.skipped = 0

    def feed(self, data: bytes) -> list[bytes]:
        self._buf += data
        out = []
        while True:
            payload, consumed = frame_decode(self._buf)
            if payload is None:
                self.skipped += consumed
                del self._buf[:consumed]
                return out
            frame_len = len(payload) + 6
            self.skipped += consumed - frame_len
            del self._buf[:consumed]
            self.frames += 1
            out.append(payload)

    @property
    def pending(self) -> int:
        return len(self._buf)


def message_number(payload: bytes) -> int:
    if len(payload) < 2:
        raise MalformedMessage("payload too short for a message number")
    return (payload[0] << 4) | (payload[1] >> 4)


# lock time indicator (extended resolution, 10 bits)

def lock_time_indicator(lock_ms: float) -> int:
    t = int(lock_ms)
    if t < 64:
        return max(t, 0)
    k = t.bit_length() - 1 - 5
    if k >= 21:
        return 704
    return (t + k * (1 << (k + 5))) >> k


def lock_time_ms(indicator: int) -> int:
    """Minimum lock time (ms) represented by an indicator value."""
    if indicator < 64:
        return indicator
    if indicator >= 704:
        return 1 << 26
    k = indicator // 32 - 1
    return (indicator << k) - k * (1 << (k + 5))


# MSM7

@dataclass
class Msm7Message:
    message_number: int
    station_id: int
    epoch_time: int
    multiple_message: bool = False
    iods: int = 0
    clock_steering: int = 0
    external_clock: int = 0
    smoothing: int = 0
    smoothing_interval: int = 0
    satellites: list[int] = field(default_factory=list)  # PRNs, ascending
    signals: list[int] = field(default_factory=list)  # signal ids, ascending
    cells: list[tuple[int, int]] = field(default_factory=list)  # (sat idx, sig idx)
    rough_int: list[int] = field(default_factory=list)
    ext_info: list[int] = field(default_factory=list)
    rough_mod: list[int] = field(default_factory=list)
    rough_rate: list[int] = field(default_factory=list)
    fine_pr: list[int] = field(default_factory=list)
    fine_cp: list[int] = field(default_factory=list)
    lock: list[int] = field(default_factory=list)
    half_cycle: list[int] = field(default_factory=list)
    cnr: list[int] = field(default_factory=list)
    fine_rate: list[int] = field(default_factory=list)

    @property
    def constellation(self) -> Constellation:
        return MSM7_SYSTEM[self.message_number]

    @property
    def satellite_mask(self) -> int:
        return sum(1 << (64 - p) for p in self.satellites)

    @property
    def signal_mask(self) -> int:
        return sum(1 << (32 - s) for s in self.signals)

    def cell_mask_bits(self) -> list[int]:
        present = set(self.cells)
        return [int((i, j) in present)
                for i in range(len(self.satellites)) for j in range(len(self.signals))]

    def pack(self) -> bytes:
        if self.message_number not in MSM7_SYSTEM:
            raise UnsupportedMessage(f"message {self.message_number} is not MSM7")
        nsat, nsig = len(self.satellites), len(self.signals)
        if nsat * nsig > 64:
            raise EncodeError("cell mask larger than 64 bits")
        cells = sorted(self.cells)
        if cells != list(self.cells):
            raise EncodeError("cells must be ordered satellite-major")
        w = BitWriter()
        w.u(self.message_number, 12)
        w.u(self.station_id, 12)
        w.u(self.epoch_time, 30)
        w.u(int(self.multiple_message), 1)
        w.u(self.iods, 3)
        w.u(0, 7)
        w.u(self.clock_steering, 2)
        w.u(self.external_clock, 2)
        w.u(self.smoothing, 1)
        w.u(self.smoothing_interval, 3)
        w.u(self.satellite_mask, 64)
        w.u(self.signal_mask, 32)
        for bit in self.cell_mask_bits():
            w.u(bit, 1)
        for v in self.rough_int:
            w.u(v, 8)
        for v in self.ext_info:
            w.u(v, 4)
        for v in self.rough_mod:
            w.u(v, 10)
        for v in self.rough_rate:
            w.s(v, 14)
        for v in self.fine_pr:
            w.s(v, 20)
        for v in self.fine_cp:
            w.s(v, 24)
        for v in self.lock:
            w.u(v, 10)
        for v in self.half_cycle:
            w.u(v, 1)
        for v in self.cnr:
            w.u(v, 10)
        for v in self.fine_rate:
            w.s(v, 15)
        return w.to_bytes()

    @classmethod
    def unpack(cls, payload: bytes) -> "Msm7Message":
        r = BitReader(payload)
        num = r.u(12)
        if num not in MSM7_SYSTEM:
            raise UnsupportedMessage(f"unsupported message number {num}")
        m = cls(message_number=num, station_id=r.u(12), epoch_time=r.u(30))
        m.multiple_message = bool(r.u(1))
        m.iods = r.u(3)
        r.u(7)
        m.clock_steering = r.u(2)
        m.external_clock = r.u(2)
        m.smoothing = r.u(1)
        m.smoothing_interval = r.u(3)
        satmask = r.u(64)
        sigmask = r.u(32)
        m.satellites = [p for p in range(1, 65) if satmask >> (64 - p) & 1]
        m.signals = [s for s in range(1, 33) if sigmask >> (32 - s) & 1]
        nsat, nsig = len(m.satellites), len(m.signals)
        if nsat * nsig > 64:
            raise MalformedMessage("cell mask larger than 64 bits")
        m.cells = [(i, j) for i in range(nsat) for j in range(nsig) if r.u(1)]
        ncell = len(m.cells)
        m.rough_int = [r.u(8) for _ in range(nsat)]
        m.ext_info = [r.u(4) for _ in range(nsat)]
        m.rough_mod = [r.u(10) for _ in range(nsat)]
        m.rough_rate = [r.s(14) for _ in range(nsat)]
        m.fine_pr = [r.s(20) for _ in range(ncell)]
        m.fine_cp = [r.s(24) for _ in range(ncell)]
        m.lock = [r.u(10) for _ in range(ncell)]
        m.half_cycle = [r.u(1) for _ in range(ncell)]
        m.cnr = [r.u(10) for _ in range(ncell)]
        m.fine_rate = [r.s(15) for _ in range(ncell)]
        return m


def encode_epoch_time(sys: Constellation, tow: float) -> int:
    ms = int(round(tow * 1000.0))
    if sys is Constellation.GLONASS:
        dow, msod = divmod(ms % 604800000, 86400000)
        return (dow << 27) | msod
    if sys is Constellation.BEIDOU:
        ms -= 14000
    return ms % 604800000


def decode_epoch_time(sys: Constellation, value: int, week: int) -> tuple[int, float]:
    if sys is Constellation.GLONASS:
        ms = (value >> 27) * 86400000 + (value & 0x7FFFFFF)
    else:
        ms = value
        if sys is Constellation.BEIDOU:
            ms += 14000
    # BDT lags GPST by 14 s: early in the GPS week the BDT value sits at the
    # end of the previous week, but ``week`` already names the GPS week
    return week, (ms % 604800000) / 1000.0


def msm7_encode(
    epoch: Epoch,
    constellation: Constellation,
    station_id: int = 0,
    *,
    lock_times: Optional[Mapping[tuple[SatId, Band], float]] = None,
    multiple_message: bool = False,
    dropped: Optional[list] = None,
) -> bytes:
    """Pack the observations of one constellation into an MSM7 payload.

    ``lock_times`` gives continuous-tracking time (ms) per (sat, band); when
    absent a signal counts as freshly locked if it reports loss of lock and
    as tracked for ``DEFAULT_LOCK_MS`` otherwise. Observations whose fields
    cannot be represented are left out and described in ``dropped``.
    """
    if not 0 <= station_id < 4096:
        raise EncodeError(f"station id {station_id} out of range")
    band = DEFAULT_BAND[constellation]
    lam = wavelength(band)
    obs = sorted(
        (o for o in epoch.by_constellation(constellation) if o.band is band and o.sat.prn <= 64),
        key=lambda o: o.sat.prn,
    )
    m = Msm7Message(
        message_number=MSM7_TYPES[constellation],
        station_id=station_id,
        epoch_time=encode_epoch_time(constellation, epoch.tow),
        multiple_message=multiple_message,
        signals=[SIGNAL_ID],
    )
    for o in obs:
        rough_1024 = int(round(o.pseudorange / RANGE_MS * 1024.0))
        rough = rough_1024 * P2_10 * RANGE_MS
        ri = rough_1024 >> 10
        fpr = int(round((o.pseudorange - rough) / (P2_29 * RANGE_MS)))
        if ri >= ROUGH_INVALID or abs(fpr) >= (1 << 19):
            _drop(dropped, o, "pseudorange not representable")
            continue
        fcp = FINE_CP_INVALID
        if o.carrier_phase is not None:
            v = int(round((o.carrier_phase * lam - rough) / (P2_31 * RANGE_MS)))
            if abs(v) < (1 << 23):
                fcp = v
            else:
                _drop(dropped, o, "phase range overflow, phase omitted")
        rr, frr = ROUGH_RATE_INVALID, FINE_RATE_INVALID
        if o.doppler is not None:
            rate = -o.doppler * lam
            rr = int(round(rate))
            frr = int(round((rate - rr) / 1e-4))
            if abs(rr) >= (1 << 13) or abs(frr) >= (1 << 14):
                rr, frr = ROUGH_RATE_INVALID, FINE_RATE_INVALID
        if lock_times is not None and (o.sat, o.band) in lock_times:
            lock_ms = lock_times[(o.sat, o.band)]
        else:
            lock_ms = 0 if o.loss_of_lock else DEFAULT_LOCK_MS
        m.satellites.append(o.sat.prn)
        m.cells.append((len(m.satellites) - 1, 0))
        m.rough_int.append(ri)
        m.ext_info.append(0)
        m.rough_mod.append(rough_1024 & 0x3FF)
        m.rough_rate.append(rr)
        m.fine_pr.append(fpr)
        m.fine_cp.append(fcp)
        m.lock.append(lock_time_indicator(lock_ms))
        m.half_cycle.append(0)
        m.cnr.append(min(1023, max(0, int(round(o.cn0 * 16.0)))))
        m.fine_rate.append(frr)
    if not m.satellites:
        raise EncodeError(f"no encodable {constellation.name} observations")
    return m.pack()


def _drop(dropped, o: Observation, why: str) -> None:
    log.warning("MSM7 encode %s: %s", o.sat, why)
    if dropped is not None:
        dropped.append((o.sat, why))


def msm7_to_observations(m: Msm7Message) -> list[tuple[Observation, int]]:
    """Observations of a message paired with their lock time indicators."""
    sys = m.constellation
    band = DEFAULT_BAND[sys]
    lam = wavelength(band)
    out = []
    for c, (i, j) in enumerate(m.cells):
        if m.signals[j] != SIGNAL_ID:
            continue
        if m.rough_int[i] == ROUGH_INVALID or m.fine_pr[c] == FINE_PR_INVALID:
            continue
        rough = m.rough_int[i] + m.rough_mod[i] * P2_10
        pr = (rough + m.fine_pr[c] * P2_29) * RANGE_MS
        cp = None
        if m.fine_cp[c] != FINE_CP_INVALID:
            cp = (rough + m.fine_cp[c] * P2_31) * RANGE_MS / lam
        dop = None
        if m.rough_rate[i] != ROUGH_RATE_INVALID and m.fine_rate[c] != FINE_RATE_INVALID:
            dop = -(m.rough_rate[i] + m.fine_rate[c] * 1e-4) / lam
        try:
            obs = Observation(
                sat=SatId(sys, m.satellites[i]),
                band=band,
                pseudorange=pr,
                carrier_phase=cp,
                doppler=dop,
                cn0=m.cnr[c] / 16.0,
                loss_of_lock=m.lock[c] == 0,
            )
        except ValueError as e:
            log.warning("MSM7 decode: skipping cell: %s", e)
            continue
        out.append((obs, m.lock[c]))
    return out


def msm7_decode(payload: bytes, week: int = 0) -> tuple[Epoch, int]:
    """Decode an MSM7 payload into an epoch and its station id.

    ``week`` is the GPS week the message belongs to; the message itself only
    carries time within the week (or day, for GLONASS).
    """
    m = Msm7Message.unpack(payload)
    week, tow = decode_epoch_time(m.constellation, m.epoch_time, week)
    obs = [o for o, _ in msm7_to_observations(m)]
    return Epoch(week=week, tow=tow, observations=tuple(obs)), m.station_id


class Msm7Encoder:
    """Stateful encoder: tracks lock time and emits one frame per constellation."""

    def __init__(self, station_id: int = 0):
        self.station_id = station_id
        self._lock_start: dict[tuple[SatId, Band], float] = {}
        self.dropped: list = []

    def encode(self, epoch: Epoch) -> list[bytes]:
        """Frames (not bare payloads) for every constellation in ``epoch``."""
        t = epoch.time
        for o in epoch.observations:
            key = (o.sat, o.band)
            if o.loss_of_lock or key not in self._lock_start:
                self._lock_start[key] = t
        lock_times = {k: (t - t0) * 1000.0 for k, t0 in self._lock_start.items()}
        systems = [s for s in Constellation if epoch.by_constellation(s)]
        frames = []
        for n, sys in enumerate(systems):
            try:
                payload = msm7_encode(
                    epoch, sys, self.station_id,
                    lock_times=lock_times,
                    multiple_message=n < len(systems) - 1,
                    dropped=self.dropped,
                )
            except EncodeError as e:
                log.warning("epoch %.3f: %s", epoch.tow, e)
                continue
            frames.append(frame_encode(payload))
        if frames and len(frames) < len(systems):
            # the last emitted message must close the epoch
            last = Msm7Message.unpack(frames[-1][3:-3])
            last.multiple_message = False
            frames[-1] = frame_encode(last.pack())
        return frames


class Msm7Decoder:
    """Stream decoder session: bytes in, complete epochs out.

    Messages that share an epoch time are merged; an epoch is released when
    a message clears the multiple-message bit or a later epoch starts.
    Loss of lock is flagged when the lock time indicator is zero or
    decreases against the previous message for the same signal.
    """

    def __init__(self, week: int = 0):
        self.week = week
        self.scanner = FrameScanner()
        self.unsupported = 0
        self.malformed = 0
        self._last_lock: dict[tuple[SatId, Band], int] = {}
        self._pending: Optional[tuple[int, float]] = None
        self._station: Optional[int] = None
        self._obs: list[Observation] = []
        self._last_tow: Optional[float] = None

    def feed(self, data: bytes) -> list[Epoch]:
        out = []
        for payload in self.scanner.feed(data):
            out.extend(self.feed_payload(payload))
        return out

    def feed_payload(self, payload: bytes) -> list[Epoch]:
        try:
            m = Msm7Message.unpack(payload)
        except UnsupportedMessage:
            self.unsupported += 1
            return []
        except MalformedMessage:
            self.malformed += 1
            return []
        week, tow = decode_epoch_time(m.constellation, m.epoch_time, self.week)
        if self._last_tow is not None and tow < self._last_tow - 302400.0:
            self.week += 1
            week += 1
        self._last_tow = tow

        out = []
        key = (week, tow)
        if self._pending is not None and self._pending != key:
            out.append(self._release())
        self._pending = key
        self._station = m.station_id
        for o, ind in msm7_to_observations(m):
            k = (o.sat, o.band)
            prev = self._last_lock.get(k)
            slip = ind == 0 or (prev is not None and lock_time_ms(ind) < lock_time_ms(prev))
            self._last_lock[k] = ind
            if slip != o.loss_of_lock:
                o = Observation(o.sat, o.band, o.pseudorange, o.carrier_phase,
                                o.doppler, o.cn0, slip)
            self._obs.append(o)
        if not m.multiple_message:
            out.append(self._release())
        return out

    def flush(self) -> list[Epoch]:
        return [self._release()] if self._pending is not None else []

    def _release(self) -> Epoch:
        week, tow = self._pending
        seen = {}
        for o in self._obs:
            seen[(o.sat, o.band)] = o
        epoch = Epoch(week=week, tow=tow,
                      observations=tuple(sorted(seen.values(), key=lambda o: o.sat)))
        self._pending = None
        self._obs = []
        return epoch

    @property
    def station_id(self) -> Optional[int]:
        return self._station


def describe(payload: bytes) -> str:
    """One-paragraph human readable dump of a payload."""
    try:
        num = message_number(payload)
    except MalformedMessage:
        return f"<{len(payload)} byte payload, too short>"
    if num not in MSM7_SYSTEM:
        return f"RTCM {num}: {len(payload)} bytes (not decoded)"
    try:
        m = Msm7Message.unpack(payload)
    except MalformedMessage as e:
        return f"RTCM {num}: malformed ({e})"
    sys = m.constellation
    _, tow = decode_epoch_time(sys, m.epoch_time, 0)
    lines = [
        f"RTCM {num} ({sys.name} MSM7) station={m.station_id} tow={tow:.3f} "
        f"mm={int(m.multiple_message)} nsat={len(m.satellites)} ncell={len(m.cells)}"
    ]
    for o, ind in msm7_to_observations(m):
        cp = "-" if o.carrier_phase is None else f"{o.carrier_phase:.4f}"
        lines.append(
            f"  {o.sat} {o.band.name} pr={o.pseudorange:.4f} cp={cp} "
            f"cn0={o.cn0:.2f} lock={lock_time_ms(ind)}ms"
        )
    return "\n".join(lines)


def iter_frames(data: bytes) -> Iterable[bytes]:
    scanner = FrameScanner()
    yield from scanner.feed(data)
