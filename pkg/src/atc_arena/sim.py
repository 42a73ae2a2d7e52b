"""Point-mass aircraft simulation on a flat local tangent plane.

Positions are in nautical miles (x east, y north), headings in degrees
clockwise from north, altitudes in feet, speeds in knots and vertical
speeds in feet per minute. Commands only change targets; the aircraft
track those targets at rate-limited turn, climb and acceleration values
as the world is stepped.
"""

from __future__ import annotations

import copy
import math
import re
from dataclasses import dataclass, field
from itertools import combinations

from .errors import (
    DuplicateCallsign,
    FieldOutOfRange,
    ParseError,
    TimeReversal,
    UnknownCallsign,
)

KT_TO_NM_PER_S = 1.0 / 3600.0

MIN_SPEED_KT = 100.0
MAX_SPEED_KT = 600.0
MIN_ALT_FT = 0.0
MAX_ALT_FT = 45000.0

_CALLSIGN_RE = re.compile(r"^[A-Z0-9]+$")
VERBS = ("HDG", "ALT", "SPD")


def normalize_heading(hdg: float) -> float:
    h = math.fmod(float(hdg), 360.0)
    if h < 0.0:
        h += 360.0
    # fmod of a tiny negative can round back up to 360.0
    return 0.0 if h >= 360.0 else h


def heading_delta(current: float, target: float) -> float:
    """Signed shortest turn from ``current`` to ``target`` in (-180, 180].

    A target exactly opposite resolves to +180 (clockwise).
    """
    d = (target - current + 180.0) % 360.0 - 180.0
    if d == -180.0:
        d = 180.0
    return d


def _check_range(name: str, value: float, lo: float, hi: float) -> None:
    if not (lo <= value <= hi) or math.isnan(value):
        raise FieldOutOfRange(f"{name}={value} outside [{lo}, {hi}]")


@dataclass
class AircraftState:
    callsign: str
    x_nm: float
    y_nm: float
    altitude_ft: float
    heading_deg: float
    ground_speed_kt: float
    vertical_speed_fpm: float = 0.0
    target_heading_deg: float | None = None
    target_altitude_ft: float | None = None
    target_speed_kt: float | None = None

    def __post_init__(self):
        self.callsign = str(self.callsign).upper()
        if not _CALLSIGN_RE.match(self.callsign):
            raise FieldOutOfRange(f"invalid callsign {self.callsign!r}")
        for name in ("x_nm", "y_nm", "altitude_ft", "heading_deg", "ground_speed_kt", "vertical_speed_fpm"):
            setattr(self, name, float(getattr(self, name)))
        self.heading_deg = normalize_heading(self.heading_deg)
        if self.target_heading_deg is None:
            self.target_heading_deg = self.heading_deg
        else:
            self.target_heading_deg = normalize_heading(self.target_heading_deg)
        if self.target_altitude_ft is None:
            self.target_altitude_ft = self.altitude_ft
        if self.target_speed_kt is None:
            self.target_speed_kt = self.ground_speed_kt
        self.target_altitude_ft = float(self.target_altitude_ft)
        self.target_speed_kt = float(self.target_speed_kt)
        for name in ("x_nm", "y_nm", "vertical_speed_fpm"):
            if not math.isfinite(getattr(self, name)):
                raise FieldOutOfRange(f"{name} must be finite")
        _check_range("ground_speed_kt", self.ground_speed_kt, MIN_SPEED_KT, MAX_SPEED_KT)
        _check_range("target_speed_kt", self.target_speed_kt, MIN_SPEED_KT, MAX_SPEED_KT)
        _check_range("altitude_ft", self.altitude_ft, MIN_ALT_FT, MAX_ALT_FT)
        _check_range("target_altitude_ft", self.target_altitude_ft, MIN_ALT_FT, MAX_ALT_FT)

    @property
    def velocity_nm_s(self) -> tuple[float, float]:
        rad = math.radians(self.heading_deg)
        v = self.ground_speed_kt * KT_TO_NM_PER_S
        return v * math.sin(rad), v * math.cos(rad)

    @property
    def tendency(self) -> str:
        if self.vertical_speed_fpm > 0:
            return "climbing"
        if self.vertical_speed_fpm < 0:
            return "descending"
        return "level"

    def to_dict(self) -> dict:
        return {
            "callsign": self.callsign,
            "x_nm": self.x_nm,
            "y_nm": self.y_nm,
            "altitude_ft": self.altitude_ft,
            "heading_deg": self.heading_deg,
            "ground_speed_kt": self.ground_speed_kt,
            "vertical_speed_fpm": self.vertical_speed_fpm,
            "target_heading_deg": self.target_heading_deg,
            "target_altitude_ft": self.target_altitude_ft,
            "target_speed_kt": self.target_speed_kt,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AircraftState":
        return cls(**d)


@dataclass(frozen=True)
class Command:
    verb: str
    callsign: str
    value: float

    def __str__(self) -> str:
        return f"{self.verb} {self.callsign} {_fmt_number(self.value)}"

    def validate(self) -> None:
        if self.verb not in VERBS:
            raise ParseError(f"unknown verb {self.verb!r}; allowed verbs: {', '.join(VERBS)}")
        if self.verb == "HDG":
            _check_range("heading", self.value, 0.0, 360.0)
        elif self.verb == "ALT":
            _check_range("altitude", self.value, MIN_ALT_FT, MAX_ALT_FT)
        else:
            _check_range("speed", self.value, MIN_SPEED_KT, MAX_SPEED_KT)


def _fmt_number(v: float) -> str:
    return str(int(v)) if float(v).is_integer() else repr(float(v))


_NUMBER_RE = re.compile(r"^[+-]?(\d+(\.\d*)?|\.\d+)$")


def parse_command(text: str) -> Command:
    """Parse ``<VERB> <CALLSIGN> <NUMBER>`` (case-insensitive, single spaces)."""
    raw = text.strip()
    parts = raw.split(" ")
    if len(parts) != 3 or any(p == "" for p in parts):
        raise ParseError(
            f"expected '<VERB> <CALLSIGN> <NUMBER>' with allowed verbs {', '.join(VERBS)}, got {raw!r}",
            line=1,
        )
    verb, callsign, number = parts
    verb = verb.upper()
    if verb not in VERBS:
        raise ParseError(f"unknown verb {parts[0]!r}; allowed verbs: {', '.join(VERBS)}", line=1, column=1)
    callsign = callsign.upper()
    if not _CALLSIGN_RE.match(callsign):
        raise ParseError(f"invalid callsign {parts[1]!r}", line=1, column=len(parts[0]) + 2)
    if not _NUMBER_RE.match(number):
        raise ParseError(
            f"invalid number {number!r}", line=1, column=len(parts[0]) + len(parts[1]) + 3
        )
    cmd = Command(verb, callsign, float(number))
    cmd.validate()
    return cmd


@dataclass(frozen=True)
class KinematicLimits:
    turn_rate_dps: float = 3.0
    climb_rate_fpm: float = 2000.0
    accel_kt_per_s: float = 1.0


Pair = tuple[str, str]


@dataclass
class SeparationLog:
    """Per-pair separation samples ``(t, horizontal_nm, vertical_ft)`` at step boundaries."""

    samples: dict[Pair, list[tuple[float, float, float]]] = field(default_factory=dict)

    def record(self, t: float, aircraft: dict[str, AircraftState]) -> None:
        for a, b in combinations(sorted(aircraft), 2):
            sa, sb = aircraft[a], aircraft[b]
            h = math.hypot(sb.x_nm - sa.x_nm, sb.y_nm - sa.y_nm)
            v = abs(sb.altitude_ft - sa.altitude_ft)
            self.samples.setdefault((a, b), []).append((t, h, v))

    def __iter__(self):
        for pair in sorted(self.samples):
            for _, h, v in self.samples[pair]:
                yield h, v

    def __len__(self) -> int:
        return sum(len(s) for s in self.samples.values())

    def minima(self) -> dict[Pair, tuple[float, float]]:
        return {
            pair: (min(s[1] for s in rows), min(s[2] for s in rows))
            for pair, rows in self.samples.items()
            if rows
        }

    def running_minima(self, pair: Pair) -> list[tuple[float, float, float]]:
        out = []
        mh = mv = math.inf
        for t, h, v in self.samples.get(pair, []):
            mh, mv = min(mh, h), min(mv, v)
            out.append((t, mh, mv))
        return out

    @property
    def last_time(self) -> float | None:
        times = [rows[-1][0] for rows in self.samples.values() if rows]
        return max(times) if times else None


class World:
    """Mutable simulation state. Methods mutate in place and return ``self``."""

    def __init__(self, limits: KinematicLimits | None = None, dt_s: float = 1.0):
        if dt_s <= 0:
            raise FieldOutOfRange("internal dt must be positive")
        self.limits = limits or KinematicLimits()
        self.dt_s = float(dt_s)
        self.clock_s = 0.0
        self.aircraft: dict[str, AircraftState] = {}
        self.sep_log = SeparationLog()
        self._logged_at: float | None = None

    def copy(self) -> "World":
        return copy.deepcopy(self)

    def __contains__(self, callsign: str) -> bool:
        return callsign.upper() in self.aircraft

    def __getitem__(self, callsign: str) -> AircraftState:
        try:
            return self.aircraft[callsign.upper()]
        except KeyError:
            raise UnknownCallsign(f"no aircraft with callsign {callsign.upper()}") from None

    def add_aircraft(self, state: AircraftState) -> "World":
        if state.callsign in self.aircraft:
            raise DuplicateCallsign(state.callsign)
        self.aircraft[state.callsign] = copy.copy(state)
        self._logged_at = None
        return self

    def apply(self, cmd: Command | str) -> "World":
        if isinstance(cmd, str):
            cmd = parse_command(cmd)
        cmd.validate()
        ac = self[cmd.callsign]
        if cmd.verb == "HDG":
            ac.target_heading_deg = normalize_heading(cmd.value)
        elif cmd.verb == "ALT":
            ac.target_altitude_ft = float(cmd.value)
        else:
            ac.target_speed_kt = float(cmd.value)
        return self

    def _log(self) -> None:
        if self._logged_at != self.clock_s:
            self.sep_log.record(self.clock_s, self.aircraft)
            self._logged_at = self.clock_s

    def step(self, dt_s: float | None = None) -> "World":
        dt = self.dt_s if dt_s is None else float(dt_s)
        if dt <= 0:
            raise FieldOutOfRange("dt must be positive")
        self._log()
        for ac in self.aircraft.values():
            _advance(ac, dt, self.limits)
        self.clock_s += dt
        self._log()
        return self

    def run_until(self, t_s: float) -> "World":
        if t_s < self.clock_s - 1e-9:
            raise TimeReversal(f"cannot run to {t_s} from {self.clock_s}")
        self._log()
        while t_s - self.clock_s > 1e-9:
            self.step(min(self.dt_s, t_s - self.clock_s))
        return self

    def advance(self, duration_s: float) -> "World":
        return self.run_until(self.clock_s + duration_s)


def _ramp(current: float, target: float, rate: float, dt: float) -> tuple[float, float]:
    """Move ``current`` toward ``target`` at ``rate`` per second; return (value, seconds spent moving)."""
    delta = target - current
    if delta == 0:
        return current, 0.0
    needed = abs(delta) / rate
    if needed <= dt:
        return target, needed
    return current + math.copysign(rate * dt, delta), dt


def _advance(ac: AircraftState, dt: float, lim: KinematicLimits) -> None:
    s0 = ac.ground_speed_kt
    s1, ramp_s = _ramp(s0, ac.target_speed_kt, lim.accel_kt_per_s, dt)
    dist_nm = ((s0 + s1) / 2 * ramp_s + s1 * (dt - ramp_s)) * KT_TO_NM_PER_S

    h0 = ac.heading_deg
    dh = heading_delta(h0, ac.target_heading_deg)
    h1, turn_s = _ramp(h0, h0 + dh, lim.turn_rate_dps, dt)

    # distance is spread uniformly in time over the arc and the straight part
    v_mean = dist_nm / dt
    dx = dy = 0.0
    if turn_s > 0:
        omega = math.radians(h1 - h0) / turn_s
        r0, r1 = math.radians(h0), math.radians(h1)
        dx = v_mean * (math.cos(r0) - math.cos(r1)) / omega
        dy = v_mean * (math.sin(r1) - math.sin(r0)) / omega
    straight = v_mean * (dt - turn_s)
    r1 = math.radians(h1)
    ac.x_nm += dx + straight * math.sin(r1)
    ac.y_nm += dy + straight * math.cos(r1)
    ac.heading_deg = ac.target_heading_deg if h1 == h0 + dh else normalize_heading(h1)
    ac.ground_speed_kt = s1

    # altitude: constant rate toward target, captured exactly
    dz = ac.target_altitude_ft - ac.altitude_ft
    if dz == 0:
        ac.vertical_speed_fpm = 0.0
        return
    max_dz = lim.climb_rate_fpm * dt / 60.0
    if abs(dz) <= max_dz + 1e-9:
        ac.altitude_ft = ac.target_altitude_ft
        ac.vertical_speed_fpm = 0.0
    else:
        ac.altitude_ft += math.copysign(max_dz, dz)
        ac.vertical_speed_fpm = math.copysign(lim.climb_rate_fpm, dz)
