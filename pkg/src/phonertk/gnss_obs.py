"""Observation model and pseudorange reconstruction from phone raw fields.

Raw measurements follow the Android ``GnssMeasurement``/``GnssClock`` field
set. Carrier phase is carried in cycles, pseudorange in meters, Doppler in Hz.
"""
from __future__ import annotations

import enum
import json
import logging
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Optional, Sequence

log = logging.getLogger(__name__)

CLIGHT = 299792458.0
WEEK_NS = 604800 * 10**9
DAY_NS = 86400 * 10**9
BDS_GPS_OFFSET_NS = 14 * 10**9  # BDT = GPST - 14 s

PR_MIN = 1e6
PR_MAX = 5e7


class Constellation(enum.IntEnum):
    GPS = 0
    GLONASS = 1
    GALILEO = 2
    BEIDOU = 3

    @property
    def letter(self) -> str:
        return "GREC"[self.value]

    @property
    def max_prn(self) -> int:
        return (32, 24, 36, 63)[self.value]

    @classmethod
    def from_letter(cls, c: str) -> "Constellation":
        try:
            return cls("GREC".index(c))
        except ValueError:
            raise ValueError(f"unknown constellation letter {c!r}") from None


@dataclass(frozen=True, order=True)
class SatId:
    constellation: Constellation
    prn: int

    def __post_init__(self):
        if not 1 <= self.prn <= self.constellation.max_prn:
            raise ValueError(f"prn {self.prn} out of range for {self.constellation.name}")

    def __str__(self) -> str:
        return f"{self.constellation.letter}{self.prn:02d}"

    @classmethod
    def parse(cls, s: str) -> "SatId":
        return cls(Constellation.from_letter(s[0]), int(s[1:]))


class Band(enum.Enum):
    L1 = 1575.42e6
    B1 = 1561.098e6

    @property
    def frequency(self) -> float:
        return self.value


# nominal (channel-independent) band per constellation
DEFAULT_BAND = {
    Constellation.GPS: Band.L1,
    Constellation.GLONASS: Band.L1,
    Constellation.GALILEO: Band.L1,
    Constellation.BEIDOU: Band.B1,
}


def wavelength(band: Band) -> float:
    return CLIGHT / band.frequency


def band_valid(sat: SatId, band: Band) -> bool:
    return DEFAULT_BAND[sat.constellation] is band


class State(enum.IntFlag):
    CODE_LOCK = 1
    TOW_DECODED = 2  # time of day for GLONASS
    ADR_VALID = 4
    ADR_RESET = 8
    ADR_CYCLE_SLIP = 16
    HALF_CYCLE_RESOLVED = 32


@dataclass(frozen=True)
class RawMeasurement:
    sat: SatId
    band: Band
    time_nanos: int
    full_bias_nanos: int
    bias_nanos: float
    time_offset_nanos: float
    received_sv_time_nanos: int
    state: State
    pseudorange_rate: float  # m/s
    accumulated_delta_range: float  # m
    cn0: float

    def __post_init__(self):
        if not 0.0 <= self.cn0 <= 64.0:
            raise ValueError(f"cn0 {self.cn0} outside [0, 64]")


@dataclass(frozen=True)
class Observation:
    sat: SatId
    band: Band
    pseudorange: float
    carrier_phase: Optional[float] = None  # cycles
    doppler: Optional[float] = None  # Hz
    cn0: float = 0.0
    loss_of_lock: bool = False

    def __post_init__(self):
        if not PR_MIN <= self.pseudorange <= PR_MAX:
            raise ValueError(f"{self.sat}: implausible pseudorange {self.pseudorange:.3f} m")


@dataclass(frozen=True)
class Epoch:
    week: int
    tow: float
    observations: tuple[Observation, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "observations", tuple(self.observations))
        keys = [(o.sat, o.band) for o in self.observations]
        if len(set(keys)) != len(keys):
            raise ValueError("duplicate (sat, band) in epoch")

    @property
    def time(self) -> float:
        """Continuous GPS seconds since the GPS epoch."""
        return self.week * 604800.0 + self.tow

    def by_constellation(self, sys: Constellation) -> list[Observation]:
        return [o for o in self.observations if o.sat.constellation is sys]

    def get(self, sat: SatId) -> Optional[Observation]:
        for o in self.observations:
            if o.sat == sat:
                return o
        return None


class MeasurementRejected(ValueError):
    def __init__(self, sat: SatId, reason: str):
        super().__init__(f"{sat}: {reason}")
        self.sat = sat
        self.reason = reason


class EmptyEpochError(ValueError):
    pass


def derive_pseudorange(raw: RawMeasurement) -> Observation:
    """Rebuild pseudorange, phase and Doppler from a raw measurement.

    Nanosecond bookkeeping stays in integers; only the sub-nanosecond
    remainder (bias and time offset) is carried as float.
    """
    need = State.CODE_LOCK | State.TOW_DECODED
    if raw.state & need != need:
        raise MeasurementRejected(raw.sat, "code lock or time of week not decoded")

    sys = raw.sat.constellation
    period = DAY_NS if sys is Constellation.GLONASS else WEEK_NS
    sv_ns = raw.received_sv_time_nanos
    if sys is Constellation.BEIDOU:
        sv_ns += BDS_GPS_OFFSET_NS
    sv_ns %= period

    rx_ns = (raw.time_nanos - raw.full_bias_nanos) % period
    dt_ns = rx_ns - sv_ns
    if dt_ns < -period // 2:
        dt_ns += period
    elif dt_ns > period // 2:
        dt_ns -= period
    travel_ns = dt_ns + (raw.time_offset_nanos - raw.bias_nanos)
    pr = CLIGHT * travel_ns * 1e-9
    if not PR_MIN <= pr <= PR_MAX:
        raise MeasurementRejected(raw.sat, f"implausible range {pr:.1f} m")

    lam = wavelength(raw.band)
    cp = None
    if raw.state & State.ADR_VALID:
        cp = raw.accumulated_delta_range / lam
    llock = bool(raw.state & (State.ADR_RESET | State.ADR_CYCLE_SLIP))
    return Observation(
        sat=raw.sat,
        band=raw.band,
        pseudorange=pr,
        carrier_phase=cp,
        doppler=-raw.pseudorange_rate / lam,
        cn0=raw.cn0,
        loss_of_lock=llock,
    )


def build_epoch(raws: Sequence[RawMeasurement], week: Optional[int] = None) -> Epoch:
    """Assemble one epoch from raw measurements sharing a clock reading.

    Unusable measurements are skipped. When two measurements share a
    (sat, band) the one with the higher C/N0 wins.
    """
    if not raws:
        raise EmptyEpochError("no raw measurements")
    first = raws[0]
    if any(r.time_nanos != first.time_nanos for r in raws):
        raise ValueError("raw measurements do not share one clock reading")

    best: dict[tuple[SatId, Band], Observation] = {}
    for raw in raws:
        try:
            obs = derive_pseudorange(raw)
        except MeasurementRejected as e:
            log.debug("rejected %s", e)
            continue
        key = (obs.sat, obs.band)
        if key not in best or obs.cn0 > best[key].cn0:
            best[key] = obs
    if not best:
        raise EmptyEpochError("no usable observations")

    rx_ns = first.time_nanos - first.full_bias_nanos
    if week is None:
        week = rx_ns // WEEK_NS
    tow = (rx_ns % WEEK_NS) / 1e9 - first.bias_nanos / 1e9
    obs = sorted(best.values(), key=lambda o: (o.sat, o.band.name))
    return Epoch(week=int(week), tow=tow, observations=tuple(obs))


# observation JSONL

def observation_to_dict(o: Observation) -> dict:
    return {
        "sat": str(o.sat),
        "band": o.band.name,
        "pr": o.pseudorange,
        "cp": o.carrier_phase,
        "dop": o.doppler,
        "cn0": o.cn0,
        "llock": o.loss_of_lock,
    }


def observation_from_dict(d: dict) -> Observation:
    return Observation(
        sat=SatId.parse(d["sat"]),
        band=Band[d["band"]],
        pseudorange=float(d["pr"]),
        carrier_phase=None if d.get("cp") is None else float(d["cp"]),
        doppler=None if d.get("dop") is None else float(d["dop"]),
        cn0=float(d.get("cn0", 0.0)),
        loss_of_lock=bool(d.get("llock", False)),
    )


def epoch_to_json(e: Epoch) -> str:
    return json.dumps({
        "week": e.week,
        "tow": e.tow,
        "obs": [observation_to_dict(o) for o in e.observations],
    })


def epoch_from_json(line: str) -> Epoch:
    d = json.loads(line)
    return Epoch(
        week=int(d["week"]),
        tow=float(d["tow"]),
        observations=tuple(observation_from_dict(o) for o in d["obs"]),
    )


def write_epochs(path, epochs: Iterable[Epoch]) -> int:
    n = 0
    with open(path, "w") as f:
        for e in epochs:
            f.write(epoch_to_json(e) + "\n")
            n += 1
    return n


def read_epochs(path) -> Iterator[Epoch]:
    with open(path) as f:
        for line in f:
            if line.strip():
                yield epoch_from_json(line)
