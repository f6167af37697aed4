"""Single point positioning and double-difference RTK.

The RTK filter estimates the rover-minus-base baseline together with
double-differenced (DD) carrier ambiguities, one reference satellite per
constellation. Integer fixing rounds the float ambiguities and accepts
the result through a ratio test.
"""
from __future__ import annotations

import enum
import json
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Iterator, Mapping, Optional, Sequence

import numpy as np

from .ephemeris import OMEGA_E_GPS, ORBIT_CONSTANTS, SatState, geometric_range, transmit_states
from .geodesy import Geodetic, ecef_to_geodetic, enu_rotation
from .gnss_obs import CLIGHT, Band, Constellation, Epoch, Observation, SatId, wavelength
from .satsel import SatGeometry, SelectionConfig, select

log = logging.getLogger(__name__)

GPS_UTC_LEAP = 18.0


class Status(enum.IntEnum):
    NO_FIX = 0
    SINGLE = 1
    DGNSS_FLOAT = 2
    FIXED = 3


GGA_QUALITY = {Status.SINGLE: 1, Status.DGNSS_FLOAT: 5, Status.FIXED: 4}


class AgeOfDataError(ValueError):
    pass


class NoCommonReference(ValueError):
    pass


@dataclass
class Solution:
    week: int
    tow: float
    position: np.ndarray
    status: Status
    covariance: np.ndarray = field(default_factory=lambda: np.zeros((3, 3)))  # ENU, m^2
    nsat: int = 0
    age: float = 0.0
    hdop: float = 0.0
    ratio: float = 0.0
    clock: dict = field(default_factory=dict)  # SPP only: Constellation -> s

    @property
    def geodetic(self) -> Geodetic:
        return ecef_to_geodetic(self.position)

    def to_json(self) -> str:
        """One solution JSONL record; position fields are null for NO_FIX."""
        fix = self.status is not Status.NO_FIX
        lat = lon = h = None
        if fix:
            lat, lon, h = self.geodetic
        return json.dumps({
            "week": self.week,
            "tow": self.tow,
            "lat": lat,
            "lon": lon,
            "h": h,
            "status": self.status.name,
            "nsat": self.nsat,
            "age": self.age,
            "cov_enu": self.covariance.tolist(),
            "ecef": [float(v) for v in self.position] if fix else None,
        })


def no_fix(epoch: Epoch) -> Solution:
    return Solution(epoch.week, epoch.tow, np.zeros(3), Status.NO_FIX)


@dataclass
class SolverConfig:
    code_sigma: float = 3.0
    phase_sigma: float = 0.003
    dynamics: str = "static"
    process_noise_position: Optional[float] = None  # m/sqrt(s); None picks per dynamics
    ambiguity_fix: str = "rounding"
    ratio_threshold: float = 3.0
    max_fraction: float = 0.15
    elevation_exponent: float = 1.0
    selection: SelectionConfig = field(default_factory=SelectionConfig)
    init_position_sigma: float = 30.0
    init_ambiguity_var: float = 1e4
    coast_limit: float = 5.0
    max_outage: float = 30.0

    def __post_init__(self):
        if self.code_sigma <= 0 or self.phase_sigma <= 0:
            raise ValueError("sigmas must be positive")
        if self.dynamics not in ("static", "kinematic"):
            raise ValueError(f"unknown dynamics {self.dynamics!r}")
        if self.ambiguity_fix not in ("off", "rounding"):
            raise ValueError(f"unknown ambiguity_fix {self.ambiguity_fix!r}")

    @property
    def process_noise(self) -> float:
        if self.process_noise_position is not None:
            return self.process_noise_position
        return 0.0 if self.dynamics == "static" else 1.0


def _sigma_scale(el_deg: float, exponent: float) -> float:
    return 1.0 / math.sin(math.radians(max(el_deg, 5.0))) ** exponent


def _omega_e(sat: SatId) -> float:
    return ORBIT_CONSTANTS[sat.constellation][1]


# single point positioning

def _spp_iterate(obs: Sequence[Observation], states, x0, config: SolverConfig):
    systems = sorted({o.sat.constellation for o in obs})
    nx = 3 + len(systems)
    x = np.zeros(nx)
    x[:3] = x0
    h = None
    for _ in range(10):
        rows, res, sig = [], [], []
        up = _up(x[:3]) if np.linalg.norm(x[:3]) > 1e6 else None
        for o in obs:
            st = states[o.sat]
            rho, e = geometric_range(st.pos, x[:3], _omega_e(o.sat))
            k = systems.index(o.sat.constellation)
            row = np.zeros(nx)
            row[:3] = -e
            row[3 + k] = 1.0
            rows.append(row)
            res.append(o.pseudorange - (rho + x[3 + k] - CLIGHT * st.clock))
            s = config.code_sigma
            if up is not None:
                el = math.degrees(math.asin(float(np.clip(e @ up, -1, 1))))
                s *= _sigma_scale(el, config.elevation_exponent)
            sig.append(s)
        h = np.array(rows)
        w = 1.0 / np.array(sig)
        a = h * w[:, None]
        dx, _, rank, _ = np.linalg.lstsq(a, np.array(res) * w, rcond=None)
        if rank < nx:
            return None
        x += dx
        if np.linalg.norm(dx[:3]) < 1e-4:
            break
    else:
        return None
    return x, h, w, systems


def _up(r) -> np.ndarray:
    r = np.asarray(r, dtype=float)
    g = ecef_to_geodetic(r)
    return enu_rotation(g)[2]


def spp_solve(epoch: Epoch, sat_states: Mapping[SatId, SatState],
              config: Optional[SolverConfig] = None,
              selection: Optional[SelectionConfig] = None, x0=None) -> Solution:
    """Code-only least squares: position plus one clock per constellation.

    With ``selection`` the first fix uses every satellite, then the solve
    is repeated on the satellites that pass the selection at that fix.
    Clock biases are returned in ``Solution.clock`` (seconds per system).
    ``x0`` is an optional starting position, e.g. the previous fix.
    """
    config = config or SolverConfig()
    obs = [o for o in epoch.observations if o.sat in sat_states]
    if len(obs) < 4:
        return no_fix(epoch)
    out = _spp_iterate(obs, sat_states, np.zeros(3) if x0 is None else x0, config)
    if out is None:
        log.debug("SPP diverged at tow %.3f", epoch.tow)
        return no_fix(epoch)
    if selection is not None:
        rx = out[0][:3]
        rot = enu_rotation(ecef_to_geodetic(rx))
        geoms = [SatGeometry(o.sat, sat_states[o.sat].pos, *_el_az(rot, rx, sat_states[o.sat].pos), o.cn0)
                 for o in obs]
        keep = {g.sat for g in select(geoms, selection)}
        obs = [o for o in obs if o.sat in keep]
        if len(obs) < 4:
            return no_fix(epoch)
        out = _spp_iterate(obs, sat_states, out[0][:3], config)
        if out is None:
            return no_fix(epoch)
    x, h, w, systems = out
    if len(obs) < len(x):
        return no_fix(epoch)
    a = h * w[:, None]
    q = np.linalg.inv(a.T @ a)
    rot = enu_rotation(ecef_to_geodetic(x[:3]))
    cov = rot @ q[:3, :3] @ rot.T
    q0 = np.linalg.inv(h.T @ h)[:3, :3]
    q0 = rot @ q0 @ rot.T
    sol = Solution(epoch.week, epoch.tow, x[:3].copy(), Status.SINGLE, cov, len(obs),
                   hdop=float(math.sqrt(q0[0, 0] + q0[1, 1])))
    sol.clock = {s: x[3 + k] / CLIGHT for k, s in enumerate(systems)}
    return sol


# double differences

@dataclass(frozen=True)
class DDObservation:
    sat: SatId
    ref: SatId
    band: Band
    code: float  # m
    phase: Optional[float]  # cycles


def _by_key(epoch: Epoch) -> dict[tuple[SatId, Band], Observation]:
    return {(o.sat, o.band): o for o in epoch.observations}


def double_difference(base_epoch: Epoch, rover_epoch: Epoch, reference: SatId,
                      tolerance: float = 0.1) -> list[DDObservation]:
    """(rover - base) of satellite minus (rover - base) of the reference."""
    if abs(rover_epoch.time - base_epoch.time) > tolerance:
        raise AgeOfDataError(f"epoch times differ by {rover_epoch.time - base_epoch.time:.3f} s")
    rover, base = _by_key(rover_epoch), _by_key(base_epoch)
    refs = [k for k in rover if k[0] == reference and k in base]
    if not refs:
        raise NoCommonReference(f"{reference} not observed by both receivers")
    out = []
    for rkey in refs:
        band = rkey[1]
        rr, br = rover[rkey], base[rkey]
        for key, o in rover.items():
            sat = key[0]
            if key[1] is not band or sat == reference or sat.constellation is not reference.constellation:
                continue
            ob = base.get(key)
            if ob is None:
                continue
            code = (o.pseudorange - ob.pseudorange) - (rr.pseudorange - br.pseudorange)
            phase = None
            if None not in (o.carrier_phase, ob.carrier_phase, rr.carrier_phase, br.carrier_phase):
                phase = (o.carrier_phase - ob.carrier_phase) - (rr.carrier_phase - br.carrier_phase)
            out.append(DDObservation(sat, reference, band, code, phase))
    return out


# ambiguity fixing

def fix_ambiguities(a, q, ratio_threshold: float = 3.0, max_fraction: float = 0.15):
    """Round float ambiguities and validate with a ratio test.

    Candidates are the rounded vector and every vector that differs from it
    by one cycle in a single component. Returns ``(fixed or None, ratio)``.
    """
    a = np.asarray(a, dtype=float)
    if a.size == 0:
        return None, 0.0
    z = np.round(a)
    d = a - z
    if np.any(np.abs(d) > max_fraction):
        return None, 0.0
    qi = np.linalg.inv(q)
    best = float(d @ qi @ d)
    g = qi @ d
    diag = np.diag(qi)
    second = float(min((best - 2 * g + diag).min(), (best + 2 * g + diag).min()))
    ratio = math.inf if best <= 0.0 else second / best
    return (z if ratio >= ratio_threshold else None), ratio


# RTK filter

AmbKey = tuple[SatId, Band]


@dataclass
class RtkState:
    x: np.ndarray = field(default_factory=lambda: np.zeros(3))
    P: np.ndarray = field(default_factory=lambda: np.zeros((3, 3)))
    amb: dict = field(default_factory=dict)  # AmbKey -> index into x
    refs: dict = field(default_factory=dict)  # Constellation -> SatId
    last_seen: dict = field(default_factory=dict)  # AmbKey -> time
    last_time: Optional[float] = None
    last_update: Optional[float] = None
    initialized: bool = False
    resets: int = 0
    nsat: int = 0

    @property
    def baseline(self) -> np.ndarray:
        return self.x[:3]

    @property
    def ambiguities(self) -> dict:
        return {k: float(self.x[i]) for k, i in self.amb.items()}

    def copy(self) -> "RtkState":
        return replace(self, x=self.x.copy(), P=self.P.copy(), amb=dict(self.amb),
                       refs=dict(self.refs), last_seen=dict(self.last_seen))

    def _remove(self, key: AmbKey) -> None:
        i = self.amb.pop(key)
        self.last_seen.pop(key, None)
        keep = [j for j in range(len(self.x)) if j != i]
        self.x = self.x[keep]
        self.P = self.P[np.ix_(keep, keep)]
        for k, j in self.amb.items():
            if j > i:
                self.amb[k] = j - 1

    def _add(self, key: AmbKey, value: float, var: float) -> None:
        n = len(self.x)
        self.x = np.append(self.x, value)
        p = np.zeros((n + 1, n + 1))
        p[:n, :n] = self.P
        p[n, n] = var
        self.P = p
        self.amb[key] = n

    def repivot(self, sys: Constellation, new_ref: SatId) -> None:
        """Re-express the ambiguities of ``sys`` against ``new_ref``.

        The new reference must have an ambiguity state; the old reference
        takes over its slot. The transform is linear and loses nothing.
        """
        old = self.refs[sys]
        keys = [k for k in self.amb if k[0] == new_ref]
        if not keys:
            raise KeyError(f"{new_ref} has no ambiguity state")
        for key_new in keys:
            band = key_new[1]
            inew = self.amb[key_new]
            t = np.eye(len(self.x))
            for k, i in self.amb.items():
                if k[0].constellation is sys and k[1] is band and i != inew:
                    t[i, inew] = -1.0
            t[inew, inew] = -1.0
            self.x = t @ self.x
            self.P = t @ self.P @ t.T
            del self.amb[key_new]
            self.amb[(old, band)] = inew
            self.last_seen[(old, band)] = self.last_seen.pop(key_new, self.last_time)
        self.refs[sys] = new_ref


@dataclass
class _Sat:
    key: AmbKey
    rover: Observation
    base: Observation
    rs: SatState
    bs: SatState
    el: float
    el_base: float

    @property
    def sat(self) -> SatId:
        return self.key[0]

    @property
    def has_phase(self) -> bool:
        return self.rover.carrier_phase is not None and self.base.carrier_phase is not None

    @property
    def slipped(self) -> bool:
        return self.rover.loss_of_lock or self.base.loss_of_lock


def _undiff(st: SatState, sat: SatId, rx) -> tuple[float, np.ndarray]:
    rho, e = geometric_range(st.pos, rx, _omega_e(sat))
    return rho - CLIGHT * st.clock, e


def _dgnss_ls(groups, refs, base_pos, b0, config: SolverConfig) -> Optional[np.ndarray]:
    """Iterated least squares on DD code only; used to start the filter."""
    b = np.array(b0, dtype=float)
    base_u = {s.key: _undiff(s.bs, s.sat, base_pos)[0] for g in groups.values() for s in g}
    for _ in range(10):
        rows, res, sig = [], [], []
        for sys, sats in groups.items():
            ref = next(s for s in sats if s.sat == refs[sys])
            ur, er = _undiff(ref.rs, ref.sat, base_pos + b)
            for s in sats:
                if s is ref:
                    continue
                u, e = _undiff(s.rs, s.sat, base_pos + b)
                z = (s.rover.pseudorange - s.base.pseudorange) - (ref.rover.pseudorange - ref.base.pseudorange)
                hx = (u - base_u[s.key]) - (ur - base_u[ref.key])
                rows.append(-(e - er))
                res.append(z - hx)
                sig.append(_sigma_scale(s.el, config.elevation_exponent))
        if len(rows) < 3:
            return None
        w = 1.0 / np.array(sig)
        a = np.array(rows) * w[:, None]
        if np.linalg.matrix_rank(a) < 3:
            return None
        db = np.linalg.lstsq(a, np.array(res) * w, rcond=None)[0]
        b += db
        if np.linalg.norm(db) < 1e-10:
            break
    return b


def _pick_ref(cands: Sequence[_Sat]) -> _Sat:
    return min(cands, key=lambda s: (-s.el, s.sat.prn))


def rtk_update(state: RtkState, base_epoch: Optional[Epoch], rover_epoch: Epoch,
               base_position, ephs, config: Optional[SolverConfig] = None,
               spp: Optional[Solution] = None, rover_states=None) -> tuple[RtkState, Solution]:
    """Advance the filter by one rover epoch.

    ``base_epoch`` may be None (no corrections), in which case the filter
    coasts. ``spp`` is an optional precomputed single point solution for the
    rover epoch, used as fallback output; ``rover_states`` likewise saves
    recomputing the rover's satellite states.
    """
    config = config or SolverConfig()
    base_pos = np.asarray(base_position, dtype=float)
    t = rover_epoch.time
    rs_all = transmit_states(rover_epoch, ephs) if rover_states is None else rover_states

    def fallback() -> Solution:
        nonlocal spp
        if spp is None:
            spp = spp_solve(rover_epoch, rs_all, config, config.selection)
        return spp

    # predict
    if state.initialized and state.last_time is not None:
        dt = max(t - state.last_time, 0.0)
        q = config.process_noise
        if q > 0.0:
            state.P[:3, :3] += np.eye(3) * q * q * dt
    state.last_time = t

    if state.initialized:
        approx = base_pos + state.x[:3]
    else:
        # unmasked fix: only needed as a linearization point
        first = spp_solve(rover_epoch, rs_all, config)
        if first.status is Status.NO_FIX:
            return state, fallback()
        approx = first.position

    groups = {}
    if base_epoch is not None and abs(t - base_epoch.time) <= 0.1:
        groups = _common(base_epoch, rover_epoch, rs_all, base_pos, approx, ephs, config)
    if not groups:
        return state, _coast(state, rover_epoch, base_pos, fallback, config)

    # drop stale ambiguity states
    for key in [k for k, ts in state.last_seen.items() if t - ts > config.max_outage]:
        if key in state.amb:
            state._remove(key)

    if not state.initialized:
        refs = {sys: _pick_ref([s for s in g if s.has_phase] or g).sat for sys, g in groups.items()}
        b0 = np.zeros(3) if np.linalg.norm(approx - base_pos) < 1e4 else approx - base_pos
        b = _dgnss_ls(groups, refs, base_pos, b0, config)
        if b is None:
            return state, fallback()
        state.x = b
        state.P = np.eye(3) * config.init_position_sigma ** 2
        state.amb, state.refs, state.last_seen = {}, dict(refs), {}
        state.initialized = True

    _manage_ambiguities(state, groups, config, t)
    used = _measurement_update(state, groups, base_pos, config)
    state.last_update = t

    status = Status.DGNSS_FLOAT
    pos = base_pos + state.x[:3]
    pbb = state.P[:3, :3]
    ratio = 0.0
    if config.ambiguity_fix == "rounding" and used:
        idx = [state.amb[k] for k in used]
        a = state.x[idx]
        qa = state.P[np.ix_(idx, idx)]
        fixed, ratio = fix_ambiguities(a, qa, config.ratio_threshold, config.max_fraction)
        if fixed is not None:
            qba = state.P[np.ix_([0, 1, 2], idx)]
            gain = qba @ np.linalg.inv(qa)
            pos = pos - gain @ (a - fixed)
            pbb = pbb - gain @ qba.T
            status = Status.FIXED

    rot = enu_rotation(ecef_to_geodetic(pos))
    cov = rot @ pbb @ rot.T
    nsat = sum(len(g) for g in groups.values())
    state.nsat = nsat
    sol = Solution(rover_epoch.week, rover_epoch.tow, pos, status, 0.5 * (cov + cov.T),
                   nsat, age=t - base_epoch.time, hdop=_hdop(groups, pos), ratio=ratio)
    return state, sol


def _common(base_epoch, rover_epoch, rs_all, base_pos, approx, ephs, config) -> dict:
    bs_all = transmit_states(base_epoch, ephs)
    base = _by_key(base_epoch)
    rot_r = enu_rotation(ecef_to_geodetic(approx))
    rot_b = enu_rotation(ecef_to_geodetic(base_pos))
    cands = []
    for key, o in _by_key(rover_epoch).items():
        ob = base.get(key)
        sat = key[0]
        if ob is None or sat not in rs_all or sat not in bs_all:
            continue
        el, az = _el_az(rot_r, approx, rs_all[sat].pos)
        el_b = _el_az(rot_b, base_pos, bs_all[sat].pos)[0]
        cands.append((SatGeometry(sat, rs_all[sat].pos, el, az, o.cn0),
                      _Sat(key, o, ob, rs_all[sat], bs_all[sat], el, el_b)))
    chosen = {g.sat for g in select([g for g, _ in cands], config.selection)}
    groups: dict = {}
    for g, s in cands:
        if g.sat in chosen:
            groups.setdefault(s.sat.constellation, []).append(s)
    return {sys: sorted(g, key=lambda s: s.sat) for sys, g in groups.items() if len(g) >= 2}


def _el_az(rot, rx, sat_pos) -> tuple[float, float]:
    e, n, u = rot @ (sat_pos - rx)
    el = math.degrees(math.atan2(u, math.hypot(e, n)))
    return el, math.degrees(math.atan2(e, n)) % 360.0


def _hdop(groups, pos) -> float:
    rot = enu_rotation(ecef_to_geodetic(pos))
    los = []
    for g in groups.values():
        for s in g:
            d = s.rs.pos - pos
            los.append(rot @ (d / np.linalg.norm(d)))
    h = np.hstack([-np.array(los), np.ones((len(los), 1))])
    try:
        q = np.linalg.inv(h.T @ h)
    except np.linalg.LinAlgError:
        return 0.0
    return float(math.sqrt(max(q[0, 0] + q[1, 1], 0.0)))


def _coast(state, rover_epoch, base_pos, fallback, config) -> Solution:
    t = rover_epoch.time
    if state.initialized and state.last_update is not None and t - state.last_update <= config.coast_limit:
        pos = base_pos + state.x[:3]
        rot = enu_rotation(ecef_to_geodetic(pos))
        return Solution(rover_epoch.week, rover_epoch.tow, pos, Status.DGNSS_FLOAT,
                        rot @ state.P[:3, :3] @ rot.T, state.nsat, age=t - state.last_update)
    return fallback()


def _manage_ambiguities(state: RtkState, groups, config: SolverConfig, t: float) -> None:
    for sys, sats in groups.items():
        phased = [s for s in sats if s.has_phase]
        ref = state.refs.get(sys)
        cur = next((s for s in phased if s.sat == ref), None)
        if cur is None or cur.slipped:
            cands = [s for s in phased if not s.slipped and s.key in state.amb]
            if ref is not None and cands:
                state.repivot(sys, _pick_ref(cands).sat)
            else:
                gone = [k for k in state.amb if k[0].constellation is sys]
                for key in gone:
                    state._remove(key)
                state.resets += bool(gone)
                pool = phased or sats
                state.refs[sys] = _pick_ref(pool).sat
        ref = state.refs[sys]
        refsat = next((s for s in sats if s.sat == ref), None)
        for s in phased:
            if s.sat == ref:
                continue
            if s.slipped and s.key in state.amb:
                state._remove(s.key)
                state.resets += 1
            if s.key not in state.amb and refsat is not None and refsat.has_phase:
                lam = wavelength(s.key[1])
                dphi = (s.rover.carrier_phase - s.base.carrier_phase) - (
                    refsat.rover.carrier_phase - refsat.base.carrier_phase)
                dp = (s.rover.pseudorange - s.base.pseudorange) - (
                    refsat.rover.pseudorange - refsat.base.pseudorange)
                state._add(s.key, dphi - dp / lam, config.init_ambiguity_var)
            if s.key in state.amb:
                state.last_seen[s.key] = t
        # ambiguity states must refer to a satellite that is not the reference
        for key in [k for k in state.amb if k[0] == ref]:
            state._remove(key)


def _measurement_update(state: RtkState, groups, base_pos, config: SolverConfig) -> list:
    rover_pos = base_pos + state.x[:3]
    n = len(state.x)
    rows, res, rvar_blocks = [], [], []
    used = []
    for sys, sats in groups.items():
        ref = next((s for s in sats if s.sat == state.refs.get(sys)), None)
        if ref is None:
            ref = _pick_ref(sats)
        u = {}
        for s in sats:
            ur, er = _undiff(s.rs, s.sat, rover_pos)
            ub, _ = _undiff(s.bs, s.sat, base_pos)
            u[s.key] = (ur - ub, er)
        sd_ref, e_ref = u[ref.key]
        cscale = _sd_var(ref, config)
        others = [s for s in sats if s is not ref]
        # code
        var = [_sd_var(s, config) * config.code_sigma ** 2 for s in others]
        block = np.diag(var) + cscale * config.code_sigma ** 2
        for s in others:
            sd, e = u[s.key]
            z = (s.rover.pseudorange - s.base.pseudorange) - (ref.rover.pseudorange - ref.base.pseudorange)
            row = np.zeros(n)
            row[:3] = -(e - e_ref)
            rows.append(row)
            res.append(z - (sd - sd_ref))
        rvar_blocks.append(block)
        # phase
        if not ref.has_phase:
            continue
        ph = [s for s in others if s.has_phase and s.key in state.amb]
        if not ph:
            continue
        var = [_sd_var(s, config) * config.phase_sigma ** 2 for s in ph]
        rvar_blocks.append(np.diag(var) + cscale * config.phase_sigma ** 2)
        for s in ph:
            sd, e = u[s.key]
            lam = wavelength(s.key[1])
            z = lam * ((s.rover.carrier_phase - s.base.carrier_phase)
                       - (ref.rover.carrier_phase - ref.base.carrier_phase))
            i = state.amb[s.key]
            row = np.zeros(n)
            row[:3] = -(e - e_ref)
            row[i] = lam
            rows.append(row)
            res.append(z - (sd - sd_ref + lam * state.x[i]))
            used.append(s.key)

    h = np.array(rows)
    y = np.array(res)
    r = _block_diag(rvar_blocks)
    p = state.P
    s_mat = h @ p @ h.T + r
    k = np.linalg.solve(s_mat, h @ p).T
    state.x = state.x + k @ y
    ikh = np.eye(n) - k @ h
    p = ikh @ p @ ikh.T + k @ r @ k.T
    state.P = 0.5 * (p + p.T)
    return used


def _sd_var(s: _Sat, config: SolverConfig) -> float:
    """Single-difference variance factor (unitless) of one satellite."""
    return (_sigma_scale(s.el, config.elevation_exponent) ** 2
            + _sigma_scale(s.el_base, config.elevation_exponent) ** 2)


def _block_diag(blocks) -> np.ndarray:
    n = sum(len(b) for b in blocks)
    out = np.zeros((n, n))
    i = 0
    for b in blocks:
        m = len(b)
        out[i:i + m, i:i + m] = b
        i += m
    return out


class RtkSolver:
    """One rover stream's RTK session against a fixed base position."""

    def __init__(self, base_position, ephs, config: Optional[SolverConfig] = None):
        self.base_position = np.asarray(base_position, dtype=float)
        self.ephs = ephs
        self.config = config or SolverConfig()
        self.state = RtkState()

    def update(self, base_epoch: Optional[Epoch], rover_epoch: Epoch,
               spp: Optional[Solution] = None, rover_states=None) -> Solution:
        self.state, sol = rtk_update(self.state, base_epoch, rover_epoch, self.base_position,
                                     self.ephs, self.config, spp, rover_states)
        return sol


# NMEA GGA

def _nmea_checksum(body: str) -> str:
    cs = 0
    for ch in body.encode("ascii"):
        cs ^= ch
    return f"{cs:02X}"


def _dm(value: float, deg_width: int) -> str:
    v = abs(value)
    deg = int(v)
    minutes = round((v - deg) * 60.0, 5)
    if minutes >= 60.0:
        deg += 1
        minutes -= 60.0
    return f"{deg:0{deg_width}d}{minutes:08.5f}"


def solution_to_nmea(sol: Solution, talker: str = "GP") -> Optional[str]:
    """GGA sentence for a solution; None for NO_FIX."""
    if sol.status is Status.NO_FIX:
        return None
    g = sol.geodetic
    utc = (sol.tow - GPS_UTC_LEAP) % 86400.0
    hh, rem = divmod(utc, 3600.0)
    mm, ss = divmod(rem, 60.0)
    if round(ss, 2) >= 60.0:
        ss = 59.99
    rtk = sol.status in (Status.DGNSS_FLOAT, Status.FIXED)
    fields = [
        f"{talker}GGA",
        f"{int(hh):02d}{int(mm):02d}{ss:05.2f}",
        _dm(g.lat, 2), "N" if g.lat >= 0 else "S",
        _dm(g.lon, 3), "E" if g.lon >= 0 else "W",
        str(GGA_QUALITY[sol.status]),
        f"{sol.nsat:02d}",
        f"{sol.hdop:.1f}",
        f"{g.h:.3f}", "M",
        "0.000", "M",
        f"{sol.age:.1f}" if rtk else "",
        "0000" if rtk else "",
    ]
    body = ",".join(fields)
    return f"${body}*{_nmea_checksum(body)}"


def write_solutions(path, solutions: Iterable[Solution]) -> int:
    n = 0
    with open(path, "w") as f:
        for s in solutions:
            f.write(s.to_json() + "\n")
            n += 1
    return n
