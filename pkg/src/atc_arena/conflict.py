"""Pairwise conflict geometry: CPA, time to loss of separation, outcome scoring.

Horizontal motion is extrapolated along current heading and ground speed.
Vertical motion follows the current vertical speed until the target
altitude is captured, then stays level.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from itertools import combinations
from typing import Iterable, Mapping

from .errors import EmptyLog
from .sim import AircraftState, World

FT_PER_NM = 6076.12


@dataclass(frozen=True)
class SeparationStandard:
    horizontal_nm: float = 5.0
    vertical_ft: float = 1000.0
    nm_horizontal_nm: float = 1.0
    nm_vertical_ft: float = 200.0
    lookahead_s: float = 300.0

    def __post_init__(self):
        vals = asdict(self)
        if any(v <= 0 for v in vals.values()):
            raise ValueError("separation parameters must be positive")
        if not (self.nm_horizontal_nm < self.horizontal_nm and self.nm_vertical_ft < self.vertical_ft):
            raise ValueError("near-miss thresholds must be below the separation minima")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class AltitudeInfo:
    current_ft: float
    target_ft: float
    tendency: str


@dataclass(frozen=True)
class ConflictPair:
    callsign_a: str
    callsign_b: str
    tcpa_s: float
    dcpa_nm: float
    tlos_s: float | None
    heading_difference_deg: float
    horizontal_sep_nm: float
    vertical_sep_ft: float
    total_sep_nm: float
    altitude_info_a: AltitudeInfo
    altitude_info_b: AltitudeInfo

    @property
    def pair(self) -> tuple[str, str]:
        return self.callsign_a, self.callsign_b


def _relative(a: AircraftState, b: AircraftState):
    vax, vay = a.velocity_nm_s
    vbx, vby = b.velocity_nm_s
    return b.x_nm - a.x_nm, b.y_nm - a.y_nm, vbx - vax, vby - vay


def cpa(a: AircraftState, b: AircraftState) -> tuple[float, float]:
    """Return ``(tcpa_s, dcpa_nm)`` under straight-line extrapolation."""
    px, py, vx, vy = _relative(a, b)
    vv = vx * vx + vy * vy
    t = 0.0 if vv == 0.0 else max(0.0, -(px * vx + py * vy) / vv)
    return t, math.hypot(px + vx * t, py + vy * t)


def capture_time_s(ac: AircraftState) -> float:
    """Seconds until the current vertical speed reaches the target altitude (inf if never)."""
    vs = ac.vertical_speed_fpm
    dz = ac.target_altitude_ft - ac.altitude_ft
    if vs == 0.0:
        return 0.0
    if dz * vs <= 0.0:
        # moving away from (or already at) target: unbounded extrapolation
        return math.inf if dz != 0.0 else 0.0
    return dz / (vs / 60.0)


def altitude_at(ac: AircraftState, t: float) -> float:
    tc = capture_time_s(ac)
    if ac.vertical_speed_fpm == 0.0:
        return ac.altitude_ft
    if t >= tc:
        return ac.target_altitude_ft
    return ac.altitude_ft + ac.vertical_speed_fpm / 60.0 * t


def _horizontal_window(a, b, limit_nm: float) -> tuple[float, float] | None:
    """Open interval of t where horizontal distance < limit_nm (may extend below 0)."""
    px, py, vx, vy = _relative(a, b)
    qa = vx * vx + vy * vy
    qb = 2.0 * (px * vx + py * vy)
    qc = px * px + py * py - limit_nm * limit_nm
    if qa < 1e-18:
        return (-math.inf, math.inf) if qc < 0 else None
    disc = qb * qb - 4.0 * qa * qc
    if disc <= 0.0:
        return None
    r = math.sqrt(disc)
    # numerically stable roots
    q = -0.5 * (qb + math.copysign(r, qb))
    t1, t2 = q / qa, qc / q
    return (min(t1, t2), max(t1, t2))


def _vertical_windows(a, b, limit_ft: float, horizon: float) -> list[tuple[float, float]]:
    """Intervals in [0, horizon] where |dz(t)| < limit_ft, from piecewise-linear extrapolation."""
    breaks = sorted({0.0, horizon, *(t for t in (capture_time_s(a), capture_time_s(b)) if 0.0 < t < horizon)})
    out = []
    for s, e in zip(breaks, breaks[1:]):
        zs = altitude_at(b, s) - altitude_at(a, s)
        ze = altitude_at(b, e) - altitude_at(a, e)
        k = (ze - zs) / (e - s)
        if k == 0.0:
            if abs(zs) < limit_ft:
                out.append((s, e))
            continue
        # solve -limit < zs + k (t - s) < limit
        lo = s + (-limit_ft - zs) / k
        hi = s + (limit_ft - zs) / k
        lo, hi = min(lo, hi), max(lo, hi)
        lo, hi = max(lo, s), min(hi, e)
        if lo < hi:
            out.append((lo, hi))
    return out


def tlos(a: AircraftState, b: AircraftState, std: SeparationStandard | None = None) -> float | None:
    """Earliest time within the lookahead at which both separation minima are violated."""
    std = std or SeparationStandard()
    horizon = std.lookahead_s
    hw = _horizontal_window(a, b, std.horizontal_nm)
    if hw is None:
        return None
    best = None
    for vs, ve in _vertical_windows(a, b, std.vertical_ft, horizon):
        start = max(vs, hw[0], 0.0)
        end = min(ve, hw[1], horizon)
        if start < end and (best is None or start < best[0]):
            best = (start, end)
    if best is None:
        return None
    start, end = best
    if start == 0.0:
        return 0.0
    # the violation set is open; step just inside it
    return start + min(1e-6, (end - start) / 2.0)


def heading_difference(a: AircraftState, b: AircraftState) -> float:
    d = abs(a.heading_deg - b.heading_deg) % 360.0
    return min(d, 360.0 - d)


def total_separation_nm(horizontal_nm: float, vertical_ft: float) -> float:
    return math.hypot(horizontal_nm, vertical_ft / FT_PER_NM)


def altitude_info(ac: AircraftState) -> AltitudeInfo:
    return AltitudeInfo(ac.altitude_ft, ac.target_altitude_ft, ac.tendency)


def conflict_pair(a: AircraftState, b: AircraftState, std: SeparationStandard | None = None) -> ConflictPair:
    std = std or SeparationStandard()
    t, d = cpa(a, b)
    h = math.hypot(b.x_nm - a.x_nm, b.y_nm - a.y_nm)
    v = abs(b.altitude_ft - a.altitude_ft)
    return ConflictPair(
        callsign_a=a.callsign,
        callsign_b=b.callsign,
        tcpa_s=t,
        dcpa_nm=d,
        tlos_s=tlos(a, b, std),
        heading_difference_deg=heading_difference(a, b),
        horizontal_sep_nm=h,
        vertical_sep_ft=v,
        total_sep_nm=total_separation_nm(h, v),
        altitude_info_a=altitude_info(a),
        altitude_info_b=altitude_info(b),
    )


def detect_conflicts(
    world: World | Mapping[str, AircraftState], std: SeparationStandard | None = None
) -> list[ConflictPair]:
    """All pairs with a predicted loss of separation inside the lookahead, earliest first."""
    std = std or SeparationStandard()
    aircraft = world.aircraft if isinstance(world, World) else world
    found = []
    for ca, cb in combinations(sorted(aircraft), 2):
        cp = conflict_pair(aircraft[ca], aircraft[cb], std)
        if cp.tlos_s is not None:
            found.append(cp)
    found.sort(key=lambda c: (c.tlos_s, c.callsign_a, c.callsign_b))
    return found


def classify_outcome(min_sep_log: Iterable[tuple[float, float]], std: SeparationStandard | None = None) -> int:
    """Score a separation history: -1 near miss/collision, 0 loss of separation, 1 resolved.

    ``min_sep_log`` yields simultaneous ``(horizontal_nm, vertical_ft)`` samples,
    e.g. a :class:`~atc_arena.sim.SeparationLog`.
    """
    std = std or SeparationStandard()
    seen = False
    score = 1
    for h, v in min_sep_log:
        seen = True
        if h < std.nm_horizontal_nm and v < std.nm_vertical_ft:
            return -1
        if h < std.horizontal_nm and v < std.vertical_ft:
            score = 0
    if not seen:
        raise EmptyLog("no separation samples to classify")
    return score
