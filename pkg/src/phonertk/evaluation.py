"""Accuracy evaluation: NMEA parsing, ENU error series, RMSE reports."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from .geodesy import Geodetic, ecef_to_enu, geodetic_to_ecef

GPS_UTC_LEAP = 18.0
DAY = 86400.0


class NmeaError(ValueError):
    pass


@dataclass(frozen=True)
class GgaFix:
    utc: float  # seconds of the UTC day
    position: Geodetic
    quality: int
    nsat: int
    hdop: float

    @property
    def gps_sod(self) -> float:
        return (self.utc + GPS_UTC_LEAP) % DAY


def nmea_checksum(body: str) -> str:
    cs = 0
    for b in body.encode("ascii"):
        cs ^= b
    return f"{cs:02X}"


def _angle(value: str, hemi: str, deg_digits: int, pos: str, neg: str) -> float:
    if len(value) < deg_digits + 2 or hemi not in (pos, neg):
        raise NmeaError(f"bad coordinate {value!r},{hemi!r}")
    deg = int(value[:deg_digits])
    minutes = float(value[deg_digits:])
    if not 0.0 <= minutes < 60.0:
        raise NmeaError(f"minutes out of range in {value!r}")
    v = deg + minutes / 60.0
    return -v if hemi == neg else v


def parse_nmea_gga(line: str) -> GgaFix:
    """Parse one GGA sentence, verifying its checksum."""
    line = line.strip()
    if not line.startswith("$") or line[3:6] != "GGA":
        raise NmeaError("not a GGA sentence")
    body, star, cs = line[1:].partition("*")
    if not star or len(cs) != 2:
        raise NmeaError("missing checksum")
    if nmea_checksum(body) != cs.upper():
        raise NmeaError("checksum mismatch")
    f = body.split(",")
    if len(f) < 15:
        raise NmeaError("too few fields")
    try:
        t = f[1]
        utc = int(t[0:2]) * 3600 + int(t[2:4]) * 60 + float(t[4:])
        lat = _angle(f[2], f[3], 2, "N", "S")
        lon = _angle(f[4], f[5], 3, "E", "W")
        quality = int(f[6])
        nsat = int(f[7])
        hdop = float(f[8]) if f[8] else 0.0
        h = float(f[9]) + (float(f[11]) if f[11] else 0.0)
    except (ValueError, IndexError) as e:
        raise NmeaError(f"malformed field: {e}") from None
    return GgaFix(utc, Geodetic(lat, lon, h), quality, nsat, hdop)


def read_nmea(path) -> tuple[list[GgaFix], int]:
    """GGA fixes from a file, plus the number of rejected lines."""
    fixes, rejected = [], 0
    with open(path) as f:
        for line in f:
            if not line.strip():
                continue
            try:
                fixes.append(parse_nmea_gga(line))
            except NmeaError:
                rejected += 1
    return fixes, rejected


# solutions and truth

QUALITY_STATUS = {1: "SINGLE", 5: "DGNSS_FLOAT", 4: "FIXED"}


@dataclass(frozen=True)
class SolutionPoint:
    sod: float  # GPS seconds of day
    ecef: np.ndarray
    status: str


def _sod_key(sod: float) -> float:
    return round(sod % DAY, 3)


def read_solutions(path) -> list[SolutionPoint]:
    """Solution JSONL or NMEA GGA file; NO_FIX records are left out."""
    out = []
    with open(path) as f:
        first = f.read(1)
    if first == "$":
        fixes, _ = read_nmea(path)
        for x in fixes:
            out.append(SolutionPoint(x.gps_sod, geodetic_to_ecef(x.position),
                                     QUALITY_STATUS.get(x.quality, "SINGLE")))
        return out
    with open(path) as f:
        for line in f:
            if not line.strip():
                continue
            d = json.loads(line)
            if d["status"] == "NO_FIX":
                continue
            if d.get("ecef") is not None:
                r = np.asarray(d["ecef"], dtype=float)
            else:
                r = geodetic_to_ecef(Geodetic(d["lat"], d["lon"], d["h"]))
            out.append(SolutionPoint(float(d["tow"]) % DAY, r, d["status"]))
    return out


def read_truth(path) -> dict:
    """Truth JSONL -> {GPS second of day (ms resolution): Geodetic}."""
    out = {}
    with open(path) as f:
        for line in f:
            if line.strip():
                d = json.loads(line)
                out[_sod_key(float(d["tow"]))] = Geodetic(d["lat"], d["lon"], d["h"])
    return out


@dataclass
class ErrorSeries:
    time: np.ndarray
    east: np.ndarray
    north: np.ndarray
    up: np.ndarray
    status: tuple = ()
    skipped: int = 0

    def __post_init__(self):
        if len(self.time) > 1 and np.any(np.diff(self.time) <= 0):
            raise ValueError("error series times must increase strictly")

    def __len__(self) -> int:
        return len(self.time)

    @property
    def horizontal(self) -> np.ndarray:
        return np.hypot(self.east, self.north)


def error_series(solutions: Sequence[SolutionPoint], truth: dict) -> ErrorSeries:
    """ENU error of each solution at the matching truth point.

    Epochs without truth are skipped and counted.
    """
    t, e, n, u, st = [], [], [], [], []
    skipped = 0
    for s in solutions:
        g = truth.get(_sod_key(s.sod))
        if g is None:
            skipped += 1
            continue
        enu = ecef_to_enu(s.ecef, g)
        t.append(s.sod)
        e.append(enu[0])
        n.append(enu[1])
        u.append(enu[2])
        st.append(s.status)
    return ErrorSeries(np.array(t), np.array(e), np.array(n), np.array(u), tuple(st), skipped)


def convergence_index(series: ErrorSeries, threshold: float = 1.0) -> Optional[int]:
    """First epoch index from which the horizontal error stays below
    ``threshold`` to the end of the series; None if it never settles."""
    above = np.nonzero(series.horizontal >= threshold)[0]
    if len(above) == 0:
        return 0 if len(series) else None
    k = int(above[-1]) + 1
    return k if k < len(series) else None


@dataclass
class RmseEntry:
    label: str
    east: float
    north: float
    up: float
    epochs: int
    fix_ratio: float
    converged_at: Optional[int] = None
    post_east: Optional[float] = None
    post_north: Optional[float] = None

    @property
    def horizontal(self) -> float:
        return math.hypot(self.east, self.north)


def _rms(x) -> float:
    return float(np.sqrt(np.mean(np.square(x))))


def rmse(series: ErrorSeries, label: str = "", threshold: float = 1.0) -> RmseEntry:
    if len(series) == 0:
        raise ValueError("empty error series")
    k = convergence_index(series, threshold)
    fixed = sum(1 for s in series.status if s == "FIXED")
    entry = RmseEntry(label, _rms(series.east), _rms(series.north), _rms(series.up), len(series),
                      fixed / len(series), k)
    if k is not None:
        entry.post_east = _rms(series.east[k:])
        entry.post_north = _rms(series.north[k:])
    return entry


COLUMNS = ("Solution", "East RMSE (m)", "North RMSE (m)", "Up RMSE (m)", "Epochs",
           "Fix ratio", "Converged at", "Post-conv East (m)", "Post-conv North (m)")


def _row(e: RmseEntry) -> list[str]:
    def f(x):
        return "-" if x is None else f"{x:.3f}"
    return [e.label, f(e.east), f(e.north), f(e.up), str(e.epochs), f"{e.fix_ratio:.2f}",
            "-" if e.converged_at is None else str(e.converged_at), f(e.post_east), f(e.post_north)]


def report_table(entries: Iterable[RmseEntry]) -> str:
    rows = [list(COLUMNS)] + [_row(e) for e in entries]
    widths = [max(len(r[i]) for r in rows) for i in range(len(COLUMNS))]
    lines = []
    for j, r in enumerate(rows):
        lines.append("  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(r, widths))))
        if j == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines)


def report_csv(entries: Iterable[RmseEntry]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COLUMNS)
    for e in entries:
        w.writerow(_row(e))
    return buf.getvalue()


def series_csv(series: dict) -> str:
    """Long-format CSV of several labelled error series."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("label", "sod", "east", "north", "up", "status"))
    for label, s in series.items():
        for i in range(len(s)):
            w.writerow((label, f"{s.time[i]:.3f}", f"{s.east[i]:.4f}", f"{s.north[i]:.4f}",
                        f"{s.up[i]:.4f}", s.status[i] if s.status else ""))
    return buf.getvalue()
