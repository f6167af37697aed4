"""Broadcast ephemeris propagation (GPS ICD style) for MEO satellites."""
from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .gnss_obs import CLIGHT, Constellation, SatId

MU_GPS = 3.986005e14
OMEGA_E_GPS = 7.2921151467e-5

# (mu, earth rotation rate); every system uses the GPS values unless overridden
ORBIT_CONSTANTS = {sys: (MU_GPS, OMEGA_E_GPS) for sys in Constellation}

VALIDITY_S = 7200.0
HALF_WEEK = 302400.0
KEPLER_TOL = 2e-15  # rad; M is wrapped to [-pi, pi) so this is a few ulp


class EphemerisError(ValueError):
    pass


class StaleEphemeris(EphemerisError):
    pass


class KeplerError(ArithmeticError):
    pass


@dataclass(frozen=True)
class KeplerEphemeris:
    sat: SatId
    toe: float
    sqrt_a: float
    e: float
    i0: float
    omega0: float
    omega: float
    m0: float
    delta_n: float = 0.0
    idot: float = 0.0
    omega_dot: float = 0.0
    cuc: float = 0.0
    cus: float = 0.0
    crc: float = 0.0
    crs: float = 0.0
    cic: float = 0.0
    cis: float = 0.0
    toc: float = 0.0
    af0: float = 0.0
    af1: float = 0.0
    af2: float = 0.0

    def __post_init__(self):
        if not 4000.0 <= self.sqrt_a <= 7000.0:
            raise EphemerisError(f"{self.sat}: sqrt_a {self.sqrt_a} implausible")
        if not 0.0 <= self.e < 0.1:
            raise EphemerisError(f"{self.sat}: eccentricity {self.e} implausible")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["sat"] = str(self.sat)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "KeplerEphemeris":
        d = dict(d)
        d["sat"] = SatId.parse(d["sat"])
        return cls(**d)


def kepler_solve(mean_anomaly, e, tol: float = 1e-12, max_iter: int = 30):
    """Eccentric anomaly from mean anomaly by Newton iteration.

    Works elementwise on arrays.
    """
    if not 0.0 <= e < 1.0:
        raise ValueError("eccentricity must be in [0, 1)")
    m = np.asarray(mean_anomaly, dtype=float)
    ecc = m if e < 0.8 else np.full_like(m, math.pi)
    for _ in range(max_iter):
        f = ecc - e * np.sin(ecc) - m
        if np.all(np.abs(f) < tol):
            break
        ecc = ecc - f / (1.0 - e * np.cos(ecc))
    else:
        raise KeplerError("Kepler equation did not converge")
    return float(ecc) if ecc.ndim == 0 else ecc


def _time_from(t, ref, offset=0.0):
    dt = np.asarray(t, dtype=float) - ref
    dt = np.where(dt > HALF_WEEK, dt - 2 * HALF_WEEK, dt)
    return np.where(dt < -HALF_WEEK, dt + 2 * HALF_WEEK, dt) + offset


def sat_state(eph: KeplerEphemeris, t, offset=0.0):
    """ECEF position (m) and clock bias (s) at GPS time of week ``t + offset``.

    ``t`` may be a scalar or an array; positions come back with shape
    (3,) or (N, 3) accordingly. The clock bias includes the relativistic
    eccentricity term. Small corrections such as the signal travel time
    belong in ``offset``: it is added after ``t`` has been referred to the
    ephemeris epoch, so it is not rounded to the resolution of a time of
    week.
    """
    if (type(t) is float or np.ndim(t) == 0) and (type(offset) is float or np.ndim(offset) == 0):
        return _sat_state_scalar(eph, float(t), float(offset))
    mu, omega_e = ORBIT_CONSTANTS[eph.sat.constellation]
    tk = _time_from(t, eph.toe, offset)
    if np.any(np.abs(tk) > VALIDITY_S):
        raise StaleEphemeris(f"{eph.sat}: |t - toe| exceeds {VALIDITY_S:.0f} s")

    a = eph.sqrt_a ** 2
    n = math.sqrt(mu / a ** 3) + eph.delta_n
    m = np.mod(eph.m0 + n * tk + math.pi, 2 * math.pi) - math.pi
    ek = np.asarray(kepler_solve(m, eph.e, tol=KEPLER_TOL))
    sin_e, cos_e = np.sin(ek), np.cos(ek)
    nu = np.arctan2(math.sqrt(1.0 - eph.e ** 2) * sin_e, cos_e - eph.e)
    phi = nu + eph.omega
    s2, c2 = np.sin(2 * phi), np.cos(2 * phi)
    u = phi + eph.cus * s2 + eph.cuc * c2
    r = a * (1.0 - eph.e * cos_e) + eph.crs * s2 + eph.crc * c2
    inc = eph.i0 + eph.idot * tk + eph.cis * s2 + eph.cic * c2
    xp, yp = r * np.cos(u), r * np.sin(u)
    big_omega = eph.omega0 + (eph.omega_dot - omega_e) * tk - omega_e * eph.toe
    so, co = np.sin(big_omega), np.cos(big_omega)
    ci = np.cos(inc)
    pos = np.stack([
        xp * co - yp * ci * so,
        xp * so + yp * ci * co,
        yp * np.sin(inc),
    ], axis=-1)

    dtc = _time_from(t, eph.toc, offset)
    rel = -2.0 * math.sqrt(mu) / CLIGHT ** 2 * eph.e * eph.sqrt_a * sin_e
    clk = eph.af0 + eph.af1 * dtc + eph.af2 * dtc ** 2 + rel
    if pos.ndim == 1:
        return pos, float(clk)
    return pos, clk


def _wrap_week(dt: float) -> float:
    if dt > HALF_WEEK:
        return dt - 2 * HALF_WEEK
    if dt < -HALF_WEEK:
        return dt + 2 * HALF_WEEK
    return dt


def _sat_state_scalar(eph: KeplerEphemeris, t: float, offset: float = 0.0):
    # same algebra as the array path, with math instead of numpy for speed
    mu, omega_e = ORBIT_CONSTANTS[eph.sat.constellation]
    tk = _wrap_week(t - eph.toe) + offset
    if abs(tk) > VALIDITY_S:
        raise StaleEphemeris(f"{eph.sat}: |t - toe| exceeds {VALIDITY_S:.0f} s")
    a = eph.sqrt_a ** 2
    n = math.sqrt(mu / a ** 3) + eph.delta_n
    m = math.fmod(eph.m0 + n * tk + math.pi, 2 * math.pi)
    m = (m + 2 * math.pi if m < 0 else m) - math.pi
    ek = m
    for _ in range(30):
        f = ek - eph.e * math.sin(ek) - m
        if abs(f) < KEPLER_TOL:
            break
        ek -= f / (1.0 - eph.e * math.cos(ek))
    else:
        raise KeplerError("Kepler equation did not converge")
    sin_e, cos_e = math.sin(ek), math.cos(ek)
    nu = math.atan2(math.sqrt(1.0 - eph.e ** 2) * sin_e, cos_e - eph.e)
    phi = nu + eph.omega
    s2, c2 = math.sin(2 * phi), math.cos(2 * phi)
    u = phi + eph.cus * s2 + eph.cuc * c2
    r = a * (1.0 - eph.e * cos_e) + eph.crs * s2 + eph.crc * c2
    inc = eph.i0 + eph.idot * tk + eph.cis * s2 + eph.cic * c2
    xp, yp = r * math.cos(u), r * math.sin(u)
    big_omega = eph.omega0 + (eph.omega_dot - omega_e) * tk - omega_e * eph.toe
    so, co = math.sin(big_omega), math.cos(big_omega)
    ci = math.cos(inc)
    pos = np.array([xp * co - yp * ci * so, xp * so + yp * ci * co, yp * math.sin(inc)])
    dtc = _wrap_week(t - eph.toc) + offset
    rel = -2.0 * math.sqrt(mu) / CLIGHT ** 2 * eph.e * eph.sqrt_a * sin_e
    return pos, eph.af0 + eph.af1 * dtc + eph.af2 * dtc ** 2 + rel


def orbital_period(eph: KeplerEphemeris) -> float:
    mu, _ = ORBIT_CONSTANTS[eph.sat.constellation]
    return 2.0 * math.pi * math.sqrt(eph.sqrt_a ** 6 / mu)


class EphemerisSet(dict):
    """Mapping SatId -> KeplerEphemeris."""

    @classmethod
    def from_records(cls, records) -> "EphemerisSet":
        return cls((r.sat, r) for r in records)

    def to_json(self) -> str:
        recs = [self[s].to_dict() for s in sorted(self)]
        return json.dumps(recs, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "EphemerisSet":
        return cls.from_records(KeplerEphemeris.from_dict(d) for d in json.loads(text))

    def save(self, path) -> None:
        with open(path, "w") as f:
            f.write(self.to_json())

    @classmethod
    def load(cls, path) -> "EphemerisSet":
        with open(path) as f:
            return cls.from_json(f.read())


class SatState(NamedTuple):
    pos: np.ndarray  # ECEF at transmit time, frame of the transmit epoch
    clock: float  # s, broadcast clock incl. relativistic term


def transmit_states(epoch, ephs) -> dict:
    """Satellite states at signal transmission for every observation.

    Transmit time is ``t_rx - P/c - dt_sat``, which is independent of the
    receiver clock error. Satellites without a (fresh) ephemeris are left
    out.
    """
    out = {}
    for o in epoch.observations:
        eph = ephs.get(o.sat)
        if eph is None or o.sat in out:
            continue
        travel = o.pseudorange / CLIGHT
        try:
            _, clk = sat_state(eph, epoch.tow, -travel)
            pos, clk = sat_state(eph, epoch.tow, -travel - clk)
        except StaleEphemeris:
            continue
        out[o.sat] = SatState(pos, clk)
    return out


def rotate_earth(pos, angle):
    """Express an ECEF vector in the frame rotated by ``angle`` about z."""
    c, s = np.cos(angle), np.sin(angle)
    pos = np.asarray(pos, dtype=float)
    x, y = pos[..., 0], pos[..., 1]
    return np.stack([c * x + s * y, -s * x + c * y, pos[..., 2]], axis=-1)


def geometric_range(sat_pos, rx_pos, omega_e: float = OMEGA_E_GPS, iterations: int = 3):
    """Range and unit line of sight including the Earth-rotation correction."""
    rx = np.asarray(rx_pos, dtype=float)
    x, y, z = (float(v) for v in sat_pos)
    dz = z - rx[2]
    rho = math.sqrt((x - rx[0]) ** 2 + (y - rx[1]) ** 2 + dz * dz)
    for _ in range(iterations):
        a = omega_e * rho / CLIGHT
        c, s = math.cos(a), math.sin(a)
        dx = c * x + s * y - rx[0]
        dy = -s * x + c * y - rx[1]
        rho = math.sqrt(dx * dx + dy * dy + dz * dz)
    return rho, np.array([dx, dy, dz]) / rho
