"""Base and rover roles and the offline analyses behind the CLI."""
from __future__ import annotations

import logging
import os
import queue
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator, Optional, Sequence

import numpy as np

from . import rtcm
from .ephemeris import transmit_states
from .geodesy import Geodetic, geodetic_to_ecef
from .gnss_obs import Epoch
from .rtk import RtkSolver, Solution, SolverConfig, Status, solution_to_nmea, spp_solve
from .satsel import SatGeometry, gdop, pseudorange_residuals, sat_geometries, select

log = logging.getLogger(__name__)

PAIR_TOLERANCE = 0.1  # s
QUEUE_SIZE = 1024


def parse_base_pos(text: str) -> np.ndarray:
    """'lat,lon,h' in degrees and metres -> ECEF."""
    try:
        lat, lon, h = (float(v) for v in text.split(","))
    except ValueError:
        raise ValueError(f"expected lat,lon,h but got {text!r}") from None
    return geodetic_to_ecef(Geodetic(lat, lon, h))


def parse_hostport(text: str, default_port: int = 2101) -> tuple[str, int]:
    host, sep, port = text.rpartition(":")
    if not sep:
        return text, default_port
    return host or "127.0.0.1", int(port)


# base role

def encode_epochs(epochs: Iterable[Epoch], station_id: int = 0) -> Iterator[tuple[Epoch, bytes]]:
    enc = rtcm.Msm7Encoder(station_id)
    for e in epochs:
        yield e, b"".join(enc.encode(e))


def publish(epochs: Sequence[Epoch], send: Callable[[bytes], None], realtime: bool = False,
            speed: float = 1.0, station_id: int = 0, clock=time.monotonic, sleep=time.sleep) -> int:
    """Encode and hand each epoch's frames to ``send``; returns bytes sent.

    In real-time mode each epoch waits until its timestamp, relative to the
    first epoch, has elapsed on the wall clock (scaled by ``speed``).
    """
    total = 0
    t0 = None
    start = clock()
    for e, data in encode_epochs(epochs, station_id):
        if realtime:
            t0 = e.time if t0 is None else t0
            wait = start + (e.time - t0) / speed - clock()
            if wait > 0:
                sleep(wait)
        if data:
            send(data)
            total += len(data)
    return total


def relay_in_process(epochs: Sequence[Epoch], week: int, station_id: int = 0) -> list[Epoch]:
    """Base epochs after an MSM7 encode/decode round trip, no network."""
    dec = rtcm.Msm7Decoder(week)
    out = []
    for _, data in encode_epochs(epochs, station_id):
        out.extend(dec.feed(data))
    out.extend(dec.flush())
    return out


# rover role

_END = object()


class EpochMatcher:
    """Pairs rover epochs with base epochs arriving from another thread.

    Base epochs go through a bounded queue; when it is full the newest
    epoch is dropped and counted. Matching waits for the base stream to
    reach the rover time (or end), so results do not depend on timing.
    """

    def __init__(self, maxsize: int = QUEUE_SIZE, tolerance: float = PAIR_TOLERANCE):
        self.q: queue.Queue = queue.Queue(maxsize)
        self.tolerance = tolerance
        self.dropped = 0
        self._held: list[Epoch] = []
        self._ended = False

    def put(self, epoch: Epoch) -> None:
        try:
            self.q.put_nowait(epoch)
        except queue.Full:
            self.dropped += 1
            log.warning("base epoch %.1f dropped: matching queue full", epoch.tow)

    def close(self) -> None:
        # the end marker must not be lost to a full queue
        self.q.put(_END)

    def match(self, rover: Epoch, timeout: Optional[float] = None) -> Optional[Epoch]:
        t = rover.time
        while not self._ended and (not self._held or self._held[-1].time < t - self.tolerance):
            try:
                item = self.q.get(timeout=timeout)
            except queue.Empty:
                break
            if item is _END:
                self._ended = True
            else:
                self._held.append(item)
        # forget base epochs too old for this or any later rover epoch
        self._held = [b for b in self._held if b.time >= t - self.tolerance]
        best = None
        for b in self._held:
            if abs(b.time - t) <= self.tolerance and (best is None or abs(b.time - t) < abs(best.time - t)):
                best = b
        return best


def feed_from_stream(chunks: Iterable[bytes], matcher: EpochMatcher, week: int) -> rtcm.Msm7Decoder:
    dec = rtcm.Msm7Decoder(week)
    try:
        for chunk in chunks:
            for e in dec.feed(chunk):
                matcher.put(e)
        for e in dec.flush():
            matcher.put(e)
    finally:
        matcher.close()
    return dec


@dataclass
class RoverResult:
    rtk: list = field(default_factory=list)
    spp: list = field(default_factory=list)
    paired: int = 0
    dropped: int = 0


def run_rover(rover_epochs: Sequence[Epoch], base_source: Callable[[Epoch], Optional[Epoch]],
              base_position, ephs, config: Optional[SolverConfig] = None) -> RoverResult:
    """SPP and RTK for every rover epoch; ``base_source`` pairs a base epoch."""
    config = config or SolverConfig()
    solver = RtkSolver(base_position, ephs, config)
    res = RoverResult()
    x0 = None
    for ep in rover_epochs:
        base = base_source(ep)
        res.paired += base is not None
        states = transmit_states(ep, ephs)
        spp = spp_solve(ep, states, config, config.selection, x0=x0)
        x0 = spp.position if spp.status is Status.SINGLE else None
        res.spp.append(spp)
        res.rtk.append(solver.update(base, ep, spp=spp, rover_states=states))
    return res


def run_rover_in_process(rover_epochs, base_epochs, base_position, ephs, config=None) -> RoverResult:
    week = rover_epochs[0].week if rover_epochs else 0
    matcher = EpochMatcher(maxsize=len(base_epochs) + 1)
    for e in relay_in_process(base_epochs, week):
        matcher.put(e)
    matcher.close()
    return run_rover(rover_epochs, matcher.match, base_position, ephs, config)


def run_rover_network(rover_epochs, chunks: Iterable[bytes], base_position, ephs,
                      config=None) -> RoverResult:
    """As the in-process variant, with base bytes coming from ``chunks`` on a thread."""
    week = rover_epochs[0].week if rover_epochs else 0
    matcher = EpochMatcher()
    errors = []

    def receive():
        try:
            feed_from_stream(chunks, matcher, week)
        except Exception as e:  # reported after the run
            errors.append(e)

    th = threading.Thread(target=receive, daemon=True)
    th.start()
    res = run_rover(rover_epochs, matcher.match, base_position, ephs, config)
    th.join(1.0)
    res.dropped = matcher.dropped
    if errors:
        log.warning("base stream ended with error: %s", errors[0])
    return res


def write_rover_outputs(res: RoverResult, out_dir) -> dict:
    os.makedirs(out_dir, exist_ok=True)
    paths = {}
    for name, sols in (("rtk", res.rtk), ("spp", res.spp)):
        jp = os.path.join(out_dir, f"{name}.jsonl")
        npth = os.path.join(out_dir, f"{name}.nmea")
        with open(jp, "w") as fj, open(npth, "w") as fn:
            for s in sols:
                fj.write(s.to_json() + "\n")
                line = solution_to_nmea(s)
                if line is not None:
                    fn.write(line + "\n")
        paths[name] = jp
        paths[name + "_nmea"] = npth
    return paths


def status_counts(sols: Iterable[Solution]) -> dict:
    out = {s.name: 0 for s in Status}
    for s in sols:
        out[s.status.name] += 1
    return out


# satellite selection analysis

@dataclass
class SatStats:
    sat: str
    azimuth: float
    elevation: float
    cn0: float
    residual_mean: float
    residual_rms: float
    selected_epochs: int
    epochs: int


def analyze_selection(epochs: Sequence[Epoch], ephs, truth_position, mask: float = 30.0,
                      max_sats: Optional[int] = 8):
    """Per-satellite residual statistics and per-epoch GDOP, all vs selected."""
    from .satsel import SelectionConfig

    cfg = SelectionConfig(elevation_mask=mask, max_satellites=max_sats)
    truth_position = np.asarray(truth_position, dtype=float)
    per_sat: dict = {}
    gdops = []
    for ep in epochs:
        states = transmit_states(ep, ephs)
        if len(states) < 4:
            continue
        res = pseudorange_residuals(ep, states, truth_position)
        geoms = sat_geometries(truth_position, {s: st.pos for s, st in states.items()},
                               {o.sat: o.cn0 for o in ep.observations})
        chosen = {g.sat for g in select(geoms, cfg)}
        for g in geoms:
            d = per_sat.setdefault(g.sat, {"az": [], "el": [], "cn0": [], "res": [], "sel": 0})
            d["az"].append(g.azimuth)
            d["el"].append(g.elevation)
            d["cn0"].append(g.cn0)
            d["res"].append(res[g.sat])
            d["sel"] += g.sat in chosen
        row = [ep.tow, len(geoms), len(chosen), _safe_gdop(truth_position, [g.position for g in geoms]),
               _safe_gdop(truth_position, [g.position for g in geoms if g.sat in chosen])]
        gdops.append(row)
    stats = []
    for sat, d in sorted(per_sat.items()):
        r = np.array(d["res"])
        stats.append(SatStats(str(sat), float(np.mean(d["az"])), float(np.mean(d["el"])),
                              float(np.mean(d["cn0"])), float(np.mean(r)), float(np.sqrt(np.mean(r ** 2))),
                              d["sel"], len(r)))
    return stats, gdops


def _safe_gdop(rx, sats) -> float:
    from .satsel import SingularGeometry
    try:
        return gdop(rx, sats)
    except SingularGeometry:
        return float("inf")
