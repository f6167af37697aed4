"""Deterministic synthetic GNSS world: constellation, receivers, errors.

Noise comes from numpy's PCG64 generator. Every stream is an independent
substream derived from ``SeedSequence(seed, spawn_key=...)`` keyed by
(receiver, constellation, prn, band, kind), so changing one satellite or
the scenario length never perturbs another stream's draws.
"""
from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass, field
from importlib import resources
from typing import Optional, Sequence

import numpy as np
import yaml

from .ephemeris import (OMEGA_E_GPS, VALIDITY_S, EphemerisSet, KeplerEphemeris,
                        rotate_earth, sat_state)
from .geodesy import Geodetic, ecef_to_geodetic, enu_rotation, enu_to_ecef, geodetic_to_ecef
from .gnss_obs import (CLIGHT, DEFAULT_BAND, WEEK_NS, BDS_GPS_OFFSET_NS, Constellation, Epoch,
                       RawMeasurement, SatId, State, build_epoch, wavelength, write_epochs)

RECEIVERS = ("base", "rover")
KINDS = ("code", "phase", "amb", "mp", "cn0", "clock", "satclk", "atmo")
RATES = (1, 5, 10)
MIN_VISIBLE = 5
VALIDATION_ELEVATION = 10.0


class ScenarioError(ValueError):
    def __init__(self, problems: Sequence[str]):
        super().__init__("; ".join(problems))
        self.problems = list(problems)


@dataclass
class ErrorModel:
    iono_zenith: float = 3.0  # m
    tropo_zenith: float = 2.4  # m
    decorrelation: float = 0.0  # fraction of slant delay made receiver-specific
    sat_clock_bias: float = 2e-9  # s, sigma of the clock error missing from the broadcast
    receiver_clock: float = 1e-9  # s/sqrt(s) random walk
    receiver_clock_offset: float = 5e-7  # s, initial offset drawn in +-this
    code_noise_zenith: float = 0.25  # m, rover
    phase_noise_zenith: float = 0.003  # m
    base_noise_scale: float = 0.5
    multipath_below: Optional[float] = 30.0  # deg; None disables
    multipath_amplitude: float = 4.2  # m at zenith-equivalent, scaled by 1/sin(el)
    cn0_noise: float = 1.0  # dB-Hz

    def __post_init__(self):
        bad = [k for k, v in asdict(self).items() if isinstance(v, (int, float)) and v < 0]
        if bad:
            raise ScenarioError([f"errors.{k} must be >= 0" for k in bad])

    @classmethod
    def zero(cls) -> "ErrorModel":
        return cls(0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, None, 0.0, 0.0)


@dataclass
class Dropout:
    start: float  # s from scenario start, inclusive
    end: float  # exclusive
    sats: Optional[frozenset] = None  # None means every satellite
    receiver: str = "rover"

    def covers(self, rx: str, sat: SatId, t: np.ndarray) -> np.ndarray:
        if rx != self.receiver and self.receiver != "both":
            return np.zeros(len(t), dtype=bool)
        if self.sats is not None and sat not in self.sats:
            return np.zeros(len(t), dtype=bool)
        return (t >= self.start) & (t < self.end)


@dataclass
class Scenario:
    seed: int
    duration: float
    rate: int
    constellation: EphemerisSet
    base_truth: Geodetic
    rover_path: list  # [(t_offset, ecef)], one entry for a static rover
    errors: ErrorModel = field(default_factory=ErrorModel)
    dropouts: list = field(default_factory=list)
    week: int = 2200
    tow: float = 259200.0
    min_elevation: float = 5.0
    mount: str = "SIM0"

    @property
    def n_epochs(self) -> int:
        return int(round(self.duration * self.rate))

    @property
    def base_ecef(self) -> np.ndarray:
        return geodetic_to_ecef(self.base_truth)

    def epoch_offsets(self) -> np.ndarray:
        return np.arange(self.n_epochs) / self.rate


GEO_SQRT_A = 6493.4  # geosynchronous
BDS_GEO_LON = (160.0, 80.0, 110.5, 140.0, 58.75)  # C01..C05, deg east
BDS_IGSO_LON = 118.0  # C06..C10 ground-track centre


def _random_terms(rng) -> dict:
    return dict(
        delta_n=rng.uniform(-5e-9, 5e-9),
        idot=rng.uniform(-1e-10, 1e-10),
        cuc=rng.uniform(-5e-6, 5e-6),
        cus=rng.uniform(-5e-6, 5e-6),
        crc=rng.uniform(-300.0, 300.0),
        crs=rng.uniform(-100.0, 100.0),
        cic=rng.uniform(-1e-7, 1e-7),
        cis=rng.uniform(-1e-7, 1e-7),
        af0=rng.uniform(-5e-4, 5e-4),
        af1=rng.uniform(-1e-11, 1e-11),
    )


def walker(systems: Sequence[Constellation], toe: float, seed: int = 0) -> EphemerisSet:
    """A plausible synthetic constellation.

    MEO shells are Walker-like (6x4 for GPS, 3x8 otherwise). BeiDou also
    gets its GEO (C01-C05) and IGSO (C06-C10) satellites; its MEO
    satellites are numbered from C11.
    """
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(99,))))
    layout = {
        Constellation.GPS: (6, 4, 5153.65),
        Constellation.GLONASS: (3, 8, 5050.0),
        Constellation.GALILEO: (3, 8, 5440.6),
        Constellation.BEIDOU: (3, 8, 5282.6),
    }
    out = EphemerisSet()
    for sys in systems:
        planes, per, sqrt_a = layout[sys]
        prn = 10 if sys is Constellation.BEIDOU else 0
        for p in range(planes):
            for k in range(per):
                prn += 1
                sat = SatId(sys, prn)
                out[sat] = KeplerEphemeris(
                    sat=sat,
                    toe=toe,
                    sqrt_a=sqrt_a + rng.uniform(-0.5, 0.5),
                    e=rng.uniform(0.001, 0.012),
                    i0=math.radians(55.0 + rng.uniform(-1.0, 1.0)),
                    omega0=2 * math.pi * p / planes + rng.uniform(-0.05, 0.05),
                    omega=rng.uniform(-math.pi, math.pi),
                    m0=2 * math.pi * k / per + math.pi * p / (planes * per) + rng.uniform(-0.1, 0.1),
                    omega_dot=-8.0e-9 + rng.uniform(-5e-10, 5e-10),
                    toc=toe,
                    **_random_terms(rng),
                )
        if sys is Constellation.BEIDOU:
            slots = [(lon, math.radians(0.5), 0.0) for lon in BDS_GEO_LON]
            slots += [(BDS_IGSO_LON, math.radians(55.0), 2 * math.pi * j / 5) for j in range(5)]
            for prn, (lon, inc, m0) in enumerate(slots, start=1):
                sat = SatId(sys, prn)
                # with omega = 0 the ground track is centred on omega0 + m0 - w_e * toe
                out[sat] = KeplerEphemeris(
                    sat=sat,
                    toe=toe,
                    sqrt_a=GEO_SQRT_A,
                    e=rng.uniform(0.0002, 0.002),
                    i0=inc,
                    omega0=math.radians(lon) - m0 + OMEGA_E_GPS * toe,
                    omega=0.0,
                    m0=m0,
                    omega_dot=0.0,
                    toc=toe,
                    **_random_terms(rng),
                )
    return out


# scenario files

def _position(d: dict, base: Geodetic) -> np.ndarray:
    if "enu" in d:
        return enu_to_ecef(np.asarray(d["enu"], dtype=float), base)
    if "ecef" in d:
        return np.asarray(d["ecef"], dtype=float)
    return geodetic_to_ecef(Geodetic(float(d["lat"]), float(d["lon"]), float(d.get("h", 0.0))))


def scenario_from_dict(d: dict, base_dir: str = ".") -> Scenario:
    """Build and validate a scenario from its parsed file contents."""
    problems = []
    start = d.get("start", {})
    week = int(start.get("week", 2200))
    tow = float(start.get("tow", 259200.0))
    b = d.get("base", {})
    try:
        base = Geodetic(float(b["lat"]), float(b["lon"]), float(b.get("h", 0.0)))
    except (KeyError, TypeError, ValueError):
        raise ScenarioError(["base needs lat, lon and h"]) from None

    rover = d.get("rover", {"enu": [0.0, 0.0, 0.0]})
    if "waypoints" in rover:
        path = [(float(w["t"]), _position(w, base)) for w in rover["waypoints"]]
    else:
        path = [(0.0, _position(rover, base))]

    c = d.get("constellation", {})
    if "file" in c:
        ephs = EphemerisSet.load(os.path.join(base_dir, c["file"]))
    else:
        systems = [Constellation[s.upper()] for s in c.get("systems", ["GPS", "BEIDOU"])]
        ephs = walker(systems, toe=tow, seed=int(c.get("seed", 0)))

    emodel = d.get("errors", {}) or {}
    known = ErrorModel.__dataclass_fields__
    unknown = sorted(set(emodel) - set(known))
    if unknown:
        problems.append(f"unknown error fields {unknown}")
    try:
        errors = ErrorModel(**{k: v for k, v in emodel.items() if k in known})
    except ScenarioError as e:
        problems.extend(e.problems)
        errors = ErrorModel()

    drops = []
    for x in d.get("dropouts", []) or []:
        sats = x.get("sats", "all")
        sats = None if sats == "all" else frozenset(SatId.parse(s) for s in sats)
        drops.append(Dropout(float(x["start"]), float(x["end"]), sats, x.get("receiver", "rover")))

    sc = Scenario(
        seed=int(d.get("seed", 0)),
        duration=float(d.get("duration", 300.0)),
        rate=int(d.get("rate", 1)),
        constellation=ephs,
        base_truth=base,
        rover_path=path,
        errors=errors,
        dropouts=drops,
        week=week,
        tow=tow,
        min_elevation=float(d.get("min_elevation", 5.0)),
        mount=str(d.get("mount", "SIM0")),
    )
    problems.extend(validate(sc, geometry=False))
    if not problems:
        problems.extend(validate(sc))
    if problems:
        raise ScenarioError(problems)
    return sc


def load_scenario(path) -> Scenario:
    with open(path) as f:
        d = yaml.safe_load(f)
    return scenario_from_dict(d or {}, os.path.dirname(os.path.abspath(path)))


DEFAULT_SCENARIO_FILE = "default_scenario.yaml"


def default_scenario(seed: Optional[int] = None, **overrides) -> Scenario:
    """The packaged static 300 m, GPS+BeiDou, 5 minute, 1 Hz scenario."""
    text = resources.files(__package__).joinpath("data", DEFAULT_SCENARIO_FILE).read_text()
    d = yaml.safe_load(text)
    if seed is not None:
        d["seed"] = seed
    d.update(overrides)
    return scenario_from_dict(d)


def validate(sc: Scenario, geometry: bool = True) -> list[str]:
    problems = []
    if not sc.duration > 0:
        problems.append("duration must be positive")
    if sc.rate not in RATES:
        problems.append(f"rate must be one of {RATES}")
    if sc.duration > VALIDITY_S:
        problems.append(f"duration exceeds ephemeris validity of {VALIDITY_S:.0f} s")
    times = [t for t, _ in sc.rover_path]
    if any(b <= a for a, b in zip(times, times[1:])):
        problems.append("rover waypoint times must increase")
    if len(sc.rover_path) > 1 and (times[0] > 0 or times[-1] < sc.duration - 1.0 / sc.rate):
        problems.append("rover waypoints must cover the scenario")
    for dr in sc.dropouts:
        if dr.end <= dr.start:
            problems.append(f"dropout window [{dr.start}, {dr.end}) is empty")
        if dr.receiver not in (*RECEIVERS, "both"):
            problems.append(f"dropout receiver {dr.receiver!r} unknown")
    if not sc.constellation:
        problems.append("constellation is empty")
    if problems or not geometry:
        return problems
    geo = _geometry(sc, iterations=1)  # elevations only, to well under a degree
    count = None
    for rx in RECEIVERS:
        vis = np.array([g.elevation > VALIDATION_ELEVATION for g in geo[rx].values()])
        count = vis if count is None else count & vis
    n = count.sum(axis=0)
    if n.min() < MIN_VISIBLE:
        k = int(np.argmin(n))
        problems.append(f"only {n[k]} satellites above {VALIDATION_ELEVATION:.0f} deg "
                        f"from both receivers at t={k / sc.rate:.1f} s (need {MIN_VISIBLE})")
    return problems


# truth

class Truth:
    """Exact receiver positions; the rover may follow linear waypoint legs."""

    def __init__(self, sc: Scenario):
        self.week = sc.week
        self.tow0 = sc.tow
        self.duration = sc.duration
        self.base = sc.base_ecef
        self.times = np.array([t for t, _ in sc.rover_path])
        self.points = np.array([p for _, p in sc.rover_path])

    def position(self, receiver: str, offset) -> np.ndarray:
        off = np.asarray(offset, dtype=float)
        if np.any(off < -1e-9) or np.any(off > self.duration + 1e-9):
            raise ValueError(f"time {offset} outside scenario")
        if receiver == "base":
            return np.broadcast_to(self.base, off.shape + (3,)).copy()
        if receiver != "rover":
            raise ValueError(f"unknown receiver {receiver!r}")
        if len(self.times) == 1:
            return np.broadcast_to(self.points[0], off.shape + (3,)).copy()
        return np.stack([np.interp(off, self.times, self.points[:, i]) for i in range(3)], axis=-1)


def true_state(truth: Truth, time: float, receiver: str = "rover") -> np.ndarray:
    """Truth position at GPS time of week ``time``."""
    return truth.position(receiver, time - truth.tow0)


# generation

@dataclass
class _Geom:
    pos: np.ndarray  # (N, 3) satellite positions in the receive-time frame
    rho: np.ndarray  # (N,)
    clock: np.ndarray  # (N,) broadcast clock at transmit time
    elevation: np.ndarray  # (N,) deg


def _stream(seed: int, rx: str, sat: Optional[SatId], kind: str) -> np.random.Generator:
    key = (
        RECEIVERS.index(rx) if rx in RECEIVERS else 9,
        -1 if sat is None else int(sat.constellation),
        0 if sat is None else sat.prn,
        0 if sat is None else list(type(DEFAULT_BAND[sat.constellation])).index(DEFAULT_BAND[sat.constellation]),
        KINDS.index(kind),
    )
    key = tuple(k + 1 for k in key)  # spawn keys must be non-negative
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=key)))


def _up_vectors(r: np.ndarray) -> np.ndarray:
    if np.all(r == r[0]):
        return np.broadcast_to(enu_rotation(ecef_to_geodetic(r[0]))[2], r.shape)
    return np.array([enu_rotation(ecef_to_geodetic(p))[2] for p in r])


def _geometry(sc: Scenario, clocks: Optional[dict] = None, iterations: int = 4) -> dict:
    """Per receiver and satellite: transmit-time geometry at every epoch."""
    truth = Truth(sc)
    off = sc.epoch_offsets()
    t_tag = sc.tow + off
    out = {}
    for rx in RECEIVERS:
        r = truth.position(rx, off)
        up = _up_vectors(r)
        dt_r = np.zeros(len(off)) if clocks is None else clocks[rx]
        t_true = t_tag - dt_r
        geo = {}
        for sat, eph in sorted(sc.constellation.items()):
            tau = np.full(len(off), 0.075)
            for _ in range(iterations):
                pos, clk = sat_state(eph, t_tag, -dt_r - tau)
                sp = rotate_earth(pos, OMEGA_E_GPS * tau)
                d = sp - r
                rho = np.linalg.norm(d, axis=1)
                tau = rho / CLIGHT
            el = np.degrees(np.arcsin(np.clip(np.sum(d * up, axis=1) / rho, -1, 1)))
            geo[sat] = _Geom(sp, rho, np.asarray(clk), el)
        out[rx] = geo
    return out


def _mapping(el_deg: np.ndarray) -> np.ndarray:
    return 1.0 / np.sin(np.radians(np.maximum(el_deg, 3.0)))


@dataclass
class Track:
    """Error budget of one receiver-satellite pair, one value per epoch."""
    visible: np.ndarray
    rho: np.ndarray
    rx_clock: np.ndarray  # s
    sat_clock: np.ndarray  # s, broadcast + unmodeled
    iono: np.ndarray
    tropo: np.ndarray
    multipath: np.ndarray
    code_noise: np.ndarray
    phase_noise: np.ndarray
    ambiguity: np.ndarray  # cycles
    reset: np.ndarray  # first epoch of a new carrier track
    elevation: np.ndarray
    cn0: np.ndarray

    @property
    def pseudorange(self) -> np.ndarray:
        return (self.rho + CLIGHT * (self.rx_clock - self.sat_clock) + self.iono + self.tropo
                + self.multipath + self.code_noise)

    def phase_range(self, lam: float) -> np.ndarray:
        return (self.rho + CLIGHT * (self.rx_clock - self.sat_clock) - self.iono + self.tropo
                + self.phase_noise + lam * self.ambiguity)


@dataclass
class SimResult:
    scenario: Scenario
    ephemerides: EphemerisSet
    truth: Truth
    tracks: dict  # (receiver, SatId) -> Track
    raw: dict  # receiver -> list of per-epoch RawMeasurement lists

    def epochs(self, receiver: str) -> list[Epoch]:
        return [build_epoch(r, week=self.scenario.week) for r in self.raw[receiver] if r]

    def truth_records(self) -> list[dict]:
        recs = []
        for off in self.scenario.epoch_offsets():
            g = ecef_to_geodetic(self.truth.position("rover", off))
            recs.append({"week": self.scenario.week, "tow": self.scenario.tow + float(off),
                         "lat": g.lat, "lon": g.lon, "h": g.h})
        return recs


def _receiver_clock(sc: Scenario, rx: str) -> np.ndarray:
    em = sc.errors
    rng = _stream(sc.seed, rx, None, "clock")
    x0 = rng.uniform(-em.receiver_clock_offset, em.receiver_clock_offset) if em.receiver_clock_offset else 0.0
    steps = rng.standard_normal(sc.n_epochs) * em.receiver_clock * math.sqrt(1.0 / sc.rate)
    steps[0] = 0.0
    return x0 + np.cumsum(steps)


def generate(sc: Scenario) -> SimResult:
    """Simulate paired base and rover raw measurement streams."""
    em = sc.errors
    n = sc.n_epochs
    off = sc.epoch_offsets()
    clocks = {rx: _receiver_clock(sc, rx) for rx in RECEIVERS}
    geo = _geometry(sc, clocks)
    tracks = {}
    for sat in sorted(sc.constellation):
        lam = wavelength(DEFAULT_BAND[sat.constellation])
        satclk_err = _stream(sc.seed, "common", sat, "satclk").standard_normal() * em.sat_clock_bias
        el_base = geo["base"][sat].elevation
        zen = _mapping(el_base)
        for rx in RECEIVERS:
            g = geo[rx][sat]
            vis = g.elevation > sc.min_elevation
            for dr in sc.dropouts:
                vis &= ~dr.covers(rx, sat, off)
            atmo = np.ones(n)
            if em.decorrelation > 0:
                atmo = atmo + em.decorrelation * _stream(sc.seed, rx, sat, "atmo").standard_normal()
            scale = 1.0 if rx == "rover" else em.base_noise_scale
            m = _mapping(g.elevation)
            code = _stream(sc.seed, rx, sat, "code").standard_normal(n) * em.code_noise_zenith * scale * m
            phase = _stream(sc.seed, rx, sat, "phase").standard_normal(n) * em.phase_noise_zenith * scale * m
            mp = np.zeros(n)
            if rx == "rover" and em.multipath_below is not None and em.multipath_amplitude > 0:
                sign = 1.0 if _stream(sc.seed, rx, sat, "mp").random() < 0.5 else -1.0
                low = g.elevation < em.multipath_below
                mp[low] = sign * em.multipath_amplitude * m[low]
            # a fresh integer ambiguity for every continuous carrier track
            starts = vis & ~np.concatenate([[False], vis[:-1]])
            seg = np.cumsum(starts)
            ambs = _stream(sc.seed, rx, sat, "amb").integers(-1000, 1001, size=max(int(seg.max()), 1) + 1)
            cn0 = 25.0 + 20.0 * np.sin(np.radians(np.clip(g.elevation, 0, 90)))
            cn0 = cn0 + _stream(sc.seed, rx, sat, "cn0").standard_normal(n) * em.cn0_noise
            tracks[(rx, sat)] = Track(
                visible=vis,
                rho=g.rho,
                rx_clock=clocks[rx],
                sat_clock=g.clock + satclk_err,
                iono=em.iono_zenith * zen * atmo,
                tropo=em.tropo_zenith * zen * atmo,
                multipath=mp,
                code_noise=code,
                phase_noise=phase,
                ambiguity=ambs[seg].astype(float),
                reset=starts,
                elevation=g.elevation,
                cn0=np.clip(cn0, 0.0, 64.0),
            )
    raw = {rx: _raw_stream(sc, rx, tracks) for rx in RECEIVERS}
    return SimResult(sc, sc.constellation, Truth(sc), tracks, raw)


def _raw_stream(sc: Scenario, rx: str, tracks: dict) -> list[list[RawMeasurement]]:
    """Android-style raw fields for one receiver.

    The receiver tags epochs on whole rate intervals of its own clock, so
    BiasNanos is zero; the sub-nanosecond part of the travel time rides in
    TimeOffsetNanos.
    """
    n = sc.n_epochs
    step_ns = 10**9 // sc.rate
    tow_ns = int(round(sc.tow * 1e9))
    hw0 = 5_000_000_000 + 1_000_000 * (1 + RECEIVERS.index(rx))
    per_sat = []
    for (r, sat), tr in sorted(tracks.items(), key=lambda kv: kv[0][1]):
        if r != rx:
            continue
        lam = wavelength(DEFAULT_BAND[sat.constellation])
        # keep phase, Doppler and code consistent: rate of the clean range terms
        clean = tr.rho + CLIGHT * (tr.rx_clock - tr.sat_clock)
        prr = np.gradient(clean, 1.0 / sc.rate) if n > 1 else np.zeros(n)
        per_sat.append((sat, tr, tr.pseudorange, tr.phase_range(lam), prr))

    out = []
    for k in range(n):
        t_ns = sc.week * WEEK_NS + tow_ns + k * step_ns
        hw = hw0 + k * step_ns
        full_bias = hw - t_ns
        epoch = []
        for sat, tr, pr, adr, prr in per_sat:
            if not tr.visible[k]:
                continue
            travel = pr[k] / CLIGHT * 1e9
            whole = math.floor(travel)
            sv_ns = t_ns - whole
            if sat.constellation is Constellation.BEIDOU:
                sv_ns -= BDS_GPS_OFFSET_NS
            state = State.CODE_LOCK | State.TOW_DECODED | State.ADR_VALID
            if tr.reset[k]:
                state |= State.ADR_RESET
            epoch.append(RawMeasurement(
                sat=sat,
                band=DEFAULT_BAND[sat.constellation],
                time_nanos=hw,
                full_bias_nanos=full_bias,
                bias_nanos=0.0,
                time_offset_nanos=travel - whole,
                received_sv_time_nanos=sv_ns % WEEK_NS,
                state=state,
                pseudorange_rate=float(prr[k]),
                accumulated_delta_range=float(adr[k]),
                cn0=float(tr.cn0[k]),
            ))
        out.append(epoch)
    return out


def write_outputs(result: SimResult, out_dir) -> dict:
    """Observation JSONL per receiver, ephemeris JSON, truth JSONL, metadata."""
    os.makedirs(out_dir, exist_ok=True)
    sc = result.scenario
    paths = {
        "base": os.path.join(out_dir, "base.jsonl"),
        "rover": os.path.join(out_dir, "rover.jsonl"),
        "ephemeris": os.path.join(out_dir, "ephemeris.json"),
        "truth": os.path.join(out_dir, "truth.jsonl"),
        "meta": os.path.join(out_dir, "meta.json"),
    }
    write_epochs(paths["base"], result.epochs("base"))
    write_epochs(paths["rover"], result.epochs("rover"))
    result.ephemerides.save(paths["ephemeris"])
    with open(paths["truth"], "w") as f:
        for rec in result.truth_records():
            f.write(json.dumps(rec) + "\n")
    b = sc.base_truth
    meta = {
        "seed": sc.seed,
        "base": {"lat": b.lat, "lon": b.lon, "h": b.h},
        "base_pos": f"{b.lat:.10f},{b.lon:.10f},{b.h:.4f}",
        "mount": sc.mount,
        "epochs": sc.n_epochs,
    }
    with open(paths["meta"], "w") as f:
        json.dump(meta, f, indent=1)
    return paths
