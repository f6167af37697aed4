"""Reference implementations used only by the tests.

Each one takes a different route from the library code it checks, so an
agreement is evidence rather than a tautology.
"""
import math

import numpy as np

CRC24Q_POLY = 0x1864CFB


def crc24q_bitwise(data: bytes) -> int:
    """Polynomial long division, one message bit at a time."""
    reg = 0
    for byte in data:
        for k in range(7, -1, -1):
            reg = (reg << 1) | ((byte >> k) & 1)
            if reg & (1 << 24):
                reg ^= CRC24Q_POLY
    # append 24 zero bits to finish the division
    for _ in range(24):
        reg <<= 1
        if reg & (1 << 24):
            reg ^= CRC24Q_POLY
    return reg & 0xFFFFFF


def kepler_bisect(m: float, e: float, tol: float = 1e-13) -> float:
    """Eccentric anomaly by bisection; f(E) = E - e sin E - M is monotone."""
    lo, hi = m - e - 1.0, m + e + 1.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if mid - e * math.sin(mid) - m > 0:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def perifocal_state(mu, a, e, i, raan, argp, m):
    """Inertial position and velocity from classical elements (true-anomaly form)."""
    ecc = kepler_bisect(m, e, 1e-15)
    nu = 2.0 * math.atan2(math.sqrt(1 + e) * math.sin(ecc / 2), math.sqrt(1 - e) * math.cos(ecc / 2))
    p = a * (1 - e * e)
    r = p / (1 + e * math.cos(nu))
    r_pf = np.array([r * math.cos(nu), r * math.sin(nu), 0.0])
    v_pf = math.sqrt(mu / p) * np.array([-math.sin(nu), e + math.cos(nu), 0.0])

    def rz(t):
        c, s = math.cos(t), math.sin(t)
        return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1.0]])

    def rx(t):
        c, s = math.cos(t), math.sin(t)
        return np.array([[1.0, 0, 0], [0, c, -s], [0, s, c]])

    rot = rz(raan) @ rx(i) @ rz(argp)
    return rot @ r_pf, rot @ v_pf


def rk4_two_body(r0, v0, mu, duration, step):
    """Integrate point-mass gravity; returns a callable t -> position on the grid."""
    def f(y):
        r = y[:3]
        return np.concatenate([y[3:], -mu * r / np.linalg.norm(r) ** 3])

    y = np.concatenate([r0, v0]).astype(float)
    n = int(round(duration / step))
    out = [y[:3].copy()]
    for _ in range(n):
        k1 = f(y)
        k2 = f(y + 0.5 * step * k1)
        k3 = f(y + 0.5 * step * k2)
        k4 = f(y + step * k3)
        y = y + step / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        out.append(y[:3].copy())
    return np.array(out)


def gdop_explicit(los_enu) -> float:
    """GDOP from cofactors: inverse via adjugate/determinant with Cramer's rule."""
    h = [[-u[0], -u[1], -u[2], 1.0] for u in los_enu]
    m = [[sum(h[k][i] * h[k][j] for k in range(len(h))) for j in range(4)] for i in range(4)]

    def det(a):
        if len(a) == 1:
            return a[0][0]
        return sum((-1) ** c * a[0][c] * det([row[:c] + row[c + 1:] for row in a[1:]]) for c in range(len(a)))

    d = det(m)
    if abs(d) < 1e-12:
        raise ZeroDivisionError("singular")
    trace = 0.0
    for i in range(4):
        minor = [row[:i] + row[i + 1:] for k, row in enumerate(m) if k != i]
        trace += det(minor) / d
    return math.sqrt(trace)


def elevation_dot(receiver_ecef, sat_ecef, lat_deg, lon_deg) -> float:
    """Elevation as asin(los . up) with up from the geodetic latitude."""
    lat, lon = math.radians(lat_deg), math.radians(lon_deg)
    up = np.array([math.cos(lat) * math.cos(lon), math.cos(lat) * math.sin(lon), math.sin(lat)])
    d = np.asarray(sat_ecef, float) - np.asarray(receiver_ecef, float)
    return math.degrees(math.asin(float(d @ up) / float(np.linalg.norm(d))))


def xor_checksum(sentence_body: str) -> str:
    acc = 0
    for ch in sentence_body:
        acc = acc ^ ord(ch)
    return "%02X" % acc


def rms(values) -> float:
    v = list(values)
    return math.sqrt(sum(x * x for x in v) / len(v))
