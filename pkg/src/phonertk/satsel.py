"""Satellite selection by elevation, best-subset capping, GDOP and
pseudorange residual analysis."""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np

from .ephemeris import SatState, geometric_range
from .geodesy import ecef_to_geodetic, elevation_azimuth, enu_rotation
from .gnss_obs import CLIGHT, Epoch, SatId


class DegradedGeometry(UserWarning):
    pass


class SingularGeometry(ArithmeticError):
    """GDOP is infinite: the geometry matrix is rank deficient."""


@dataclass(frozen=True)
class SatGeometry:
    sat: SatId
    position: np.ndarray
    elevation: float
    azimuth: float
    cn0: float = 0.0


@dataclass(frozen=True)
class SelectionConfig:
    elevation_mask: float = 30.0
    max_satellites: Optional[int] = 8
    min_cn0: Optional[float] = None

    def __post_init__(self):
        if not 0.0 <= self.elevation_mask <= 90.0:
            raise ValueError("elevation mask must lie in [0, 90] degrees")
        if self.max_satellites is not None and self.max_satellites < 4:
            raise ValueError("max_satellites must be at least 4")


def sat_geometries(receiver, positions: Mapping[SatId, np.ndarray],
                   cn0: Optional[Mapping[SatId, float]] = None) -> list[SatGeometry]:
    out = []
    for sat, pos in positions.items():
        ea = elevation_azimuth(receiver, pos)
        out.append(SatGeometry(sat, np.asarray(pos), ea.elevation, ea.azimuth,
                               (cn0 or {}).get(sat, 0.0)))
    return out


def filter_by_elevation(geoms: Sequence[SatGeometry], config: SelectionConfig = SelectionConfig()):
    """Keep satellites at or above the mask (and C/N0 floor), order preserved."""
    kept = [
        g for g in geoms
        if g.elevation >= config.elevation_mask
        and (config.min_cn0 is None or g.cn0 >= config.min_cn0)
    ]
    if len(kept) < 4:
        warnings.warn(f"only {len(kept)} satellites pass selection", DegradedGeometry, stacklevel=2)
    return kept


def cap_best_subset(selected: Sequence[SatGeometry], max_n: Optional[int]) -> list[SatGeometry]:
    """The ``max_n`` highest satellites; ties go to higher C/N0 then lower id."""
    ranked = sorted(selected, key=lambda g: (-g.elevation, -g.cn0, g.sat))
    if max_n is None:
        return ranked
    return ranked[:max_n]


def select(geoms: Sequence[SatGeometry], config: SelectionConfig = SelectionConfig()) -> list[SatGeometry]:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegradedGeometry)
        kept = filter_by_elevation(geoms, config)
    return cap_best_subset(kept, config.max_satellites)


def _unit_enu(receiver, sats) -> np.ndarray:
    receiver = np.asarray(receiver, dtype=float)
    rot = enu_rotation(ecef_to_geodetic(receiver))
    d = np.asarray(sats, dtype=float) - receiver
    d /= np.linalg.norm(d, axis=1)[:, None]
    return d @ rot.T


def gdop_from_directions(los_enu) -> float:
    los = np.asarray(los_enu, dtype=float)
    h = np.hstack([-los, np.ones((len(los), 1))])
    if len(h) < 4:
        raise SingularGeometry("fewer than 4 satellites")
    hth = h.T @ h
    if np.linalg.matrix_rank(hth, tol=1e-9 * np.trace(hth)) < 4:
        raise SingularGeometry("geometry matrix is rank deficient")
    return float(np.sqrt(np.trace(np.linalg.inv(hth))))


def gdop(receiver, sats: Sequence[np.ndarray]) -> float:
    return gdop_from_directions(_unit_enu(receiver, sats))


def pseudorange_residuals(epoch: Epoch, sat_states: Mapping[SatId, SatState], truth) -> dict[SatId, float]:
    """Pseudorange minus modeled range at a known position.

    The receiver clock term is taken as the mean residual over all
    satellites, so the returned residuals sum to zero.
    """
    raw = {}
    for o in epoch.observations:
        st = sat_states.get(o.sat)
        if st is None:
            continue
        rho, _ = geometric_range(st.pos, truth)
        raw[o.sat] = o.pseudorange - (rho - CLIGHT * st.clock)
    if not raw:
        raise ValueError("no satellites with a known state")
    clk = float(np.mean(list(raw.values())))
    return {s: v - clk for s, v in raw.items()}
