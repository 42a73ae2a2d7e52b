"""Conflict scenario dataset: generation, validation and scenario files.

Every generated scenario is built backwards from a shared collision point:
each aircraft is placed where its straight-line track puts it on that
point after ``planned_collision_time_s`` seconds, and climbing or descending
aircraft are timed to pass through the collision altitude at that instant.
"""

from __future__ import annotations

import json
import math
import re
import string
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path

import numpy as np

from .conflict import SeparationStandard, classify_outcome, heading_difference, tlos
from .errors import DatasetInvalid, GenerationExhausted, ParseError
from .sim import AircraftState, KinematicLimits, World, normalize_heading, _fmt_number

CONFLICT_TYPES = ("HeadOn", "Parallel", "TFormation", "Converging")
AIRCRAFT_COUNTS = (2, 3, 4)
SCENARIOS_PER_CELL = 10  # 4 types x 3 counts x 10 = 120

COLLISION_WINDOW_S = (120, 300)
SPEED_RANGE_KT = (250, 480)
COLLISION_ALT_RANGE_FT = (24000, 34000)
MIN_WARNING_S = 60.0
MAX_DRAWS = 100
HORIZON_MARGIN_S = 300.0
POSITION_DECIMALS = 6


@dataclass
class Scenario:
    id: str
    conflict_type: str
    n_aircraft: int
    aircraft: list[AircraftState]
    planned_collision_time_s: float
    evaluation_horizon_s: float
    seed: int
    origin_lat: float = 52.0
    origin_lon: float = 4.0
    validated: bool = False

    def __post_init__(self):
        if self.conflict_type not in CONFLICT_TYPES:
            raise ValueError(f"unknown conflict type {self.conflict_type!r}")
        if self.n_aircraft != len(self.aircraft):
            raise ValueError("n_aircraft does not match the aircraft list")
        if len({a.callsign for a in self.aircraft}) != len(self.aircraft):
            raise ValueError("duplicate callsigns in scenario")

    @property
    def callsigns(self) -> list[str]:
        return [a.callsign for a in self.aircraft]

    def build_world(self, limits: KinematicLimits | None = None, dt_s: float = 1.0) -> World:
        world = World(limits, dt_s)
        for ac in self.aircraft:
            world.add_aircraft(AircraftState.from_dict(ac.to_dict()))
        return world

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "conflict_type": self.conflict_type,
            "n_aircraft": self.n_aircraft,
            "aircraft": [a.to_dict() for a in self.aircraft],
            "planned_collision_time_s": self.planned_collision_time_s,
            "evaluation_horizon_s": self.evaluation_horizon_s,
            "seed": self.seed,
            "origin_lat": self.origin_lat,
            "origin_lon": self.origin_lon,
            "validated": self.validated,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        d = dict(d)
        d["aircraft"] = [AircraftState.from_dict(a) for a in d["aircraft"]]
        return cls(**d)


# -- construction ---------------------------------------------------------


def converge_at(
    callsigns: list[str],
    headings: list[float],
    speeds: list[float],
    profiles: list[str],
    collision_time_s: float,
    collision_alt_ft: float,
    target_offsets_ft: list[float] | None = None,
    climb_rate_fpm: float = 2000.0,
) -> list[AircraftState]:
    """Place aircraft so that all of them reach (0, 0, collision_alt) at ``collision_time_s``.

    ``profiles`` entries are ``level``, ``climb`` or ``descend``. Vertical movers
    keep going past the collision altitude by ``target_offsets_ft`` (default 2000).
    """
    t_meet = float(collision_time_s)
    out = []
    for i, (cs, hdg, spd, prof) in enumerate(zip(callsigns, headings, speeds, profiles)):
        rad = math.radians(hdg)
        dist = spd * t_meet / 3600.0
        x = round(-dist * math.sin(rad), POSITION_DECIMALS) + 0.0
        y = round(-dist * math.cos(rad), POSITION_DECIMALS) + 0.0
        offset = 2000.0 if target_offsets_ft is None else float(target_offsets_ft[i])
        if prof == "level":
            alt, vs, target = collision_alt_ft, 0.0, collision_alt_ft
        elif prof == "climb":
            alt = collision_alt_ft - climb_rate_fpm * t_meet / 60.0
            vs, target = climb_rate_fpm, collision_alt_ft + offset
        elif prof == "descend":
            alt = collision_alt_ft + climb_rate_fpm * t_meet / 60.0
            vs, target = -climb_rate_fpm, collision_alt_ft - offset
        else:
            raise ValueError(f"unknown vertical profile {prof!r}")
        out.append(
            AircraftState(
                callsign=cs,
                x_nm=x,
                y_nm=y,
                altitude_ft=alt,
                heading_deg=hdg,
                ground_speed_kt=spd,
                vertical_speed_fpm=vs,
                target_altitude_ft=target,
            )
        )
    return out


def _callsigns(rng: np.random.Generator, n: int) -> list[str]:
    seen: list[str] = []
    letters = string.ascii_uppercase
    while len(seen) < n:
        cs = "".join(rng.choice(list(letters), 2)) + f"{int(rng.integers(0, 1000)):03d}"
        if cs not in seen:
            seen.append(cs)
    return seen


def _jitter(rng, limit: float) -> float:
    return float(rng.uniform(-limit, limit))


def _draw_headings(conflict_type: str, n: int, rng) -> list[float]:
    base = float(rng.uniform(0.0, 360.0))
    if conflict_type == "HeadOn":
        # one stream each way; same-stream aircraft within a few degrees
        sides = [0, 180] + [int(s) for s in rng.permutation([0, 180])][: n - 2]
        hdgs = [base + s + _jitter(rng, 2.5) for s in sides]
    elif conflict_type == "TFormation":
        legs = {2: [0, 90 * rng.choice([-1, 1])], 3: [0, 90, 270], 4: [0, 90, 180, 270]}[n]
        hdgs = [base + leg + _jitter(rng, 2.0) for leg in legs]
    elif conflict_type == "Parallel":
        hdgs = [base + _jitter(rng, 5.0) for _ in range(n)]
    else:
        for _ in range(1000):
            hdgs = [float(rng.uniform(0.0, 360.0)) for _ in range(n)]
            if all(30.0 <= _angle(a, b) <= 150.0 for a, b in combinations(hdgs, 2)):
                break
    return [round(normalize_heading(h), 1) % 360.0 for h in hdgs]


def _draw_speeds(conflict_type: str, n: int, rng) -> list[float]:
    lo, hi = SPEED_RANGE_KT
    if conflict_type != "Parallel":
        return [float(rng.integers(lo, hi + 1)) for _ in range(n)]
    # sorted draws on a shrunken range, then spread by the overtaking gap
    gap = 60
    base = sorted(int(v) for v in rng.integers(lo, hi - gap * (n - 1) + 1, n))
    spd = [float(b + gap * i) for i, b in enumerate(base)]
    return [spd[i] for i in rng.permutation(n)]


def _draw_profiles(conflict_type: str, n: int, rng) -> list[str]:
    if conflict_type != "Parallel" and rng.random() < 0.5:
        return ["level"] * n
    while True:
        prof = [str(p) for p in rng.choice(["level", "climb", "descend"], n)]
        if any(p != "level" for p in prof):
            return prof


def _angle(a: float, b: float) -> float:
    d = abs(a - b) % 360.0
    return min(d, 360.0 - d)


def geometry_ok(conflict_type: str, aircraft: list[AircraftState]) -> bool:
    """Per-type heading (and for Parallel, lateral offset) predicate."""
    diffs = [heading_difference(a, b) for a, b in combinations(aircraft, 2)]
    if conflict_type == "HeadOn":
        return all(d <= 5.0 or d >= 175.0 for d in diffs) and any(d >= 175.0 for d in diffs)
    if conflict_type == "TFormation":
        near90 = [abs(d - 90.0) <= 5.0 for d in diffs]
        return all(n90 or d >= 175.0 for n90, d in zip(near90, diffs)) and any(near90)
    if conflict_type == "Converging":
        return all(30.0 <= d <= 150.0 for d in diffs)
    if any(d > 10.0 for d in diffs):
        return False
    for a, b in combinations(aircraft, 2):
        if abs(a.ground_speed_kt - b.ground_speed_kt) < 60.0:
            return False
        if _lateral_offset_nm(a, b) >= 3.0 or _lateral_offset_nm(b, a) >= 3.0:
            return False
    return True


def _lateral_offset_nm(a: AircraftState, b: AircraftState) -> float:
    """Cross-track distance of ``b`` from the track line of ``a``."""
    rad = math.radians(a.heading_deg)
    ux, uy = math.sin(rad), math.cos(rad)
    dx, dy = b.x_nm - a.x_nm, b.y_nm - a.y_nm
    return abs(dx * uy - dy * ux)


def _initially_separated(aircraft: list[AircraftState], std: SeparationStandard) -> bool:
    for a, b in combinations(aircraft, 2):
        h = math.hypot(a.x_nm - b.x_nm, a.y_nm - b.y_nm)
        if h < std.horizontal_nm and abs(a.altitude_ft - b.altitude_ft) < std.vertical_ft:
            return False
    return True


def scenario_id(conflict_type: str, n_aircraft: int, index: int) -> str:
    return f"{conflict_type.lower()}-{n_aircraft}ac-{index:02d}"


def generate(
    conflict_type: str,
    n_aircraft: int,
    seed: int,
    scenario_id_: str | None = None,
    std: SeparationStandard | None = None,
    min_warning_s: float = MIN_WARNING_S,
) -> Scenario:
    """Draw a validated scenario; deterministic for a fixed (type, count, seed)."""
    if conflict_type not in CONFLICT_TYPES:
        raise ValueError(f"unknown conflict type {conflict_type!r}")
    if n_aircraft not in AIRCRAFT_COUNTS:
        raise ValueError(f"n_aircraft must be one of {AIRCRAFT_COUNTS}")
    std = std or SeparationStandard()
    rng = np.random.default_rng(int(seed) & (2**64 - 1))
    sid = scenario_id_ or f"{conflict_type.lower()}-{n_aircraft}ac-s{int(seed) & (2**64 - 1)}"
    for _ in range(MAX_DRAWS):
        t_meet = int(rng.integers(COLLISION_WINDOW_S[0], COLLISION_WINDOW_S[1] + 1))
        alt = float(rng.integers(COLLISION_ALT_RANGE_FT[0] // 100, COLLISION_ALT_RANGE_FT[1] // 100 + 1) * 100)
        headings = _draw_headings(conflict_type, n_aircraft, rng)
        speeds = _draw_speeds(conflict_type, n_aircraft, rng)
        profiles = _draw_profiles(conflict_type, n_aircraft, rng)
        offsets = [float(rng.integers(1, 4) * 1000) for _ in range(n_aircraft)]
        aircraft = converge_at(_callsigns(rng, n_aircraft), headings, speeds, profiles, t_meet, alt, offsets)
        if not geometry_ok(conflict_type, aircraft) or not _initially_separated(aircraft, std):
            continue
        warnings = [tlos(a, b, std) for a, b in combinations(aircraft, 2)]
        if any(w is None for w in warnings) or min(warnings) < min_warning_s:
            continue
        scn = Scenario(
            id=sid,
            conflict_type=conflict_type,
            n_aircraft=n_aircraft,
            aircraft=aircraft,
            planned_collision_time_s=float(t_meet),
            evaluation_horizon_s=float(t_meet) + HORIZON_MARGIN_S,
            seed=int(seed),
        )
        if validate_inevitable_collision(scn, std):
            scn.validated = True
            return scn
    raise GenerationExhausted(f"{conflict_type}/{n_aircraft} seed={seed}: no valid draw in {MAX_DRAWS}")


def validate_inevitable_collision(scenario: Scenario, std: SeparationStandard | None = None) -> bool:
    """True iff flying the scenario with no commands ends in a near miss or collision."""
    world = scenario.build_world()
    world.run_until(scenario.evaluation_horizon_s)
    return classify_outcome(world.sep_log, std) == -1


def cell_seed(master_seed: int, conflict_type: str, n_aircraft: int, index: int) -> int:
    ss = np.random.SeedSequence([int(master_seed) & (2**64 - 1), CONFLICT_TYPES.index(conflict_type), n_aircraft, index])
    return int(ss.generate_state(1, np.uint64)[0])


def build_dataset(master_seed: int = 0, per_cell: int = SCENARIOS_PER_CELL) -> list[Scenario]:
    out = []
    for ctype in CONFLICT_TYPES:
        for n in AIRCRAFT_COUNTS:
            for i in range(per_cell):
                out.append(generate(ctype, n, cell_seed(master_seed, ctype, n, i), scenario_id(ctype, n, i)))
    return out


# -- scenario files -------------------------------------------------------

_TIME_RE = re.compile(r"^(\d+):(\d{2}):(\d{2}(?:\.\d+)?)>(.*)$")
_META_RE = re.compile(r"^#\s*([a-z_]+):\s*(.*)$")


def _fmt_alt(alt: float) -> str:
    if alt.is_integer() and int(alt) % 100 == 0:
        return f"FL{int(alt) // 100:03d}"
    return _fmt_number(alt)


def _to_latlon(scn: Scenario, x: float, y: float) -> tuple[float, float]:
    lat = scn.origin_lat + y / 60.0
    lon = scn.origin_lon + x / (60.0 * math.cos(math.radians(scn.origin_lat)))
    return lat, lon


def _from_latlon(lat0: float, lon0: float, lat: float, lon: float) -> tuple[float, float]:
    y = (lat - lat0) * 60.0
    x = (lon - lon0) * 60.0 * math.cos(math.radians(lat0))
    return round(x, POSITION_DECIMALS) + 0.0, round(y, POSITION_DECIMALS) + 0.0


def serialize(scn: Scenario) -> str:
    """Render as a scenario file: metadata comments, then ``H:MM:SS.ss>VERB args`` lines."""
    lines = [
        f"# scenario_id: {scn.id}",
        f"# conflict_type: {scn.conflict_type}",
        f"# n_aircraft: {scn.n_aircraft}",
        f"# seed: {scn.seed}",
        f"# planned_collision_time_s: {scn.planned_collision_time_s!r}",
        f"# evaluation_horizon_s: {scn.evaluation_horizon_s!r}",
        f"# origin: {scn.origin_lat!r} {scn.origin_lon!r}",
        f"# validated: {str(scn.validated).lower()}",
    ]
    stamp = "0:00:00.00>"
    for ac in scn.aircraft:
        lat, lon = _to_latlon(scn, ac.x_nm, ac.y_nm)
        lines.append(
            f"{stamp}CRE {ac.callsign} B738 {lat!r} {lon!r} {ac.heading_deg:05.1f} "
            f"{_fmt_alt(ac.altitude_ft)} {_fmt_number(ac.ground_speed_kt)}"
        )
    for ac in scn.aircraft:
        if ac.target_altitude_ft != ac.altitude_ft or ac.vertical_speed_fpm:
            lines.append(
                f"{stamp}ALT {ac.callsign} {_fmt_alt(ac.target_altitude_ft)} {_fmt_number(abs(ac.vertical_speed_fpm))}"
            )
        if ac.target_heading_deg != ac.heading_deg:
            lines.append(f"{stamp}HDG {ac.callsign} {_fmt_number(ac.target_heading_deg)}")
        if ac.target_speed_kt != ac.ground_speed_kt:
            lines.append(f"{stamp}SPD {ac.callsign} {_fmt_number(ac.target_speed_kt)}")
    return "\n".join(lines) + "\n"


def _parse_num(tok: str, lineno: int, col: int, what: str) -> float:
    try:
        return float(tok)
    except ValueError:
        raise ParseError(f"invalid {what} {tok!r}", lineno, col) from None


def _parse_alt(tok: str, lineno: int, col: int) -> float:
    if tok.upper().startswith("FL"):
        return _parse_num(tok[2:], lineno, col, "flight level") * 100.0
    return _parse_num(tok, lineno, col, "altitude")


def parse(text: str) -> Scenario:
    """Inverse of :func:`serialize`. Also accepts bare CRE/ALT/HDG/SPD files without metadata."""
    meta: dict[str, str] = {}
    creates: dict[str, dict] = {}
    order: list[str] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            m = _META_RE.match(line)
            if m:
                meta[m.group(1)] = m.group(2).strip()
            continue
        m = _TIME_RE.match(line)
        if not m:
            raise ParseError("expected 'H:MM:SS.ss>COMMAND'", lineno, 1)
        h, mi, s, body = m.groups()
        if int(h) * 3600 + int(mi) * 60 + float(s) != 0.0:
            raise ParseError("only commands at 0:00:00.00 are supported", lineno, 1)
        col0 = line.index(">") + 2
        toks = body.split()
        if not toks:
            raise ParseError("missing command", lineno, col0)
        cols, c = [], col0
        for t in toks:
            c = line.index(t, c - 1) + 1
            cols.append(c)
            c += len(t)
        verb = toks[0].upper()
        if verb == "CRE":
            if len(toks) != 8:
                raise ParseError("CRE expects: callsign type lat lon hdg alt spd", lineno, col0)
            cs = toks[1].upper()
            if cs in creates:
                raise ParseError(f"duplicate callsign {cs}", lineno, cols[1])
            creates[cs] = {
                "lat": _parse_num(toks[3], lineno, cols[3], "latitude"),
                "lon": _parse_num(toks[4], lineno, cols[4], "longitude"),
                "hdg": _parse_num(toks[5], lineno, cols[5], "heading"),
                "alt": _parse_alt(toks[6], lineno, cols[6]),
                "spd": _parse_num(toks[7], lineno, cols[7], "speed"),
            }
            order.append(cs)
        elif verb in ("ALT", "HDG", "SPD"):
            if len(toks) not in (3, 4) or (verb != "ALT" and len(toks) != 3):
                raise ParseError(f"wrong number of arguments for {verb}", lineno, col0)
            cs = toks[1].upper()
            if cs not in creates:
                raise ParseError(f"unknown callsign {cs}", lineno, cols[1])
            if verb == "ALT":
                creates[cs]["target_alt"] = _parse_alt(toks[2], lineno, cols[2])
                if len(toks) == 4:
                    creates[cs]["vs"] = _parse_num(toks[3], lineno, cols[3], "vertical speed")
            elif verb == "HDG":
                creates[cs]["target_hdg"] = _parse_num(toks[2], lineno, cols[2], "heading")
            else:
                creates[cs]["target_spd"] = _parse_num(toks[2], lineno, cols[2], "speed")
        else:
            raise ParseError(f"unknown command {toks[0]!r}; expected CRE, ALT, HDG or SPD", lineno, col0)

    lat0, lon0 = 52.0, 4.0
    if "origin" in meta:
        lat_s, lon_s = meta["origin"].split()
        lat0, lon0 = float(lat_s), float(lon_s)
    aircraft = []
    for cs in order:
        c = creates[cs]
        x, y = _from_latlon(lat0, lon0, c["lat"], c["lon"])
        target_alt = c.get("target_alt", c["alt"])
        vs = math.copysign(c.get("vs", 0.0), target_alt - c["alt"]) if target_alt != c["alt"] else 0.0
        try:
            aircraft.append(
                AircraftState(
                    callsign=cs,
                    x_nm=x,
                    y_nm=y,
                    altitude_ft=c["alt"],
                    heading_deg=c["hdg"],
                    ground_speed_kt=c["spd"],
                    vertical_speed_fpm=vs,
                    target_heading_deg=c.get("target_hdg"),
                    target_altitude_ft=target_alt,
                    target_speed_kt=c.get("target_spd"),
                )
            )
        except ValueError as exc:
            raise ParseError(f"{cs}: {exc}") from None
    try:
        return Scenario(
            id=meta.get("scenario_id", "unnamed"),
            conflict_type=meta.get("conflict_type", "Converging"),
            n_aircraft=len(aircraft),
            aircraft=aircraft,
            planned_collision_time_s=float(meta.get("planned_collision_time_s", 0.0)),
            evaluation_horizon_s=float(meta.get("evaluation_horizon_s", HORIZON_MARGIN_S)),
            seed=int(meta.get("seed", 0)),
            origin_lat=lat0,
            origin_lon=lon0,
            validated=meta.get("validated", "false") == "true",
        )
    except ValueError as exc:
        raise ParseError(str(exc)) from None


def load_scenario(path: str | Path) -> Scenario:
    path = Path(path)
    if path.suffix == ".json":
        return Scenario.from_dict(json.loads(path.read_text(encoding="utf-8")))
    return parse(path.read_text(encoding="utf-8"))


def write_dataset(out_dir: str | Path, scenarios: list[Scenario], master_seed: int | None = None) -> Path:
    """Write ``<id>.scn``, a ``<id>.json`` mirror and ``manifest.json``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for scn in scenarios:
        (out / f"{scn.id}.scn").write_text(serialize(scn), encoding="utf-8")
        (out / f"{scn.id}.json").write_text(json.dumps(scn.to_dict(), indent=2) + "\n", encoding="utf-8")
        entries.append(
            {"id": scn.id, "conflict_type": scn.conflict_type, "n_aircraft": scn.n_aircraft, "seed": scn.seed, "file": f"{scn.id}.scn"}
        )
    manifest = {"format_version": 1, "master_seed": master_seed, "count": len(entries), "scenarios": entries}
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return path


def load_dataset(path: str | Path, require_validated: bool = True) -> list[Scenario]:
    path = Path(path)
    manifest_path = path / "manifest.json" if path.is_dir() else path
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise DatasetInvalid(f"cannot read manifest {manifest_path}: {exc}") from None
    out = []
    for entry in manifest.get("scenarios", []):
        try:
            scn = load_scenario(manifest_path.parent / entry["file"])
        except (OSError, ParseError) as exc:
            raise DatasetInvalid(f"{entry.get('file')}: {exc}") from None
        if (scn.id, scn.conflict_type, scn.n_aircraft) != (entry["id"], entry["conflict_type"], entry["n_aircraft"]):
            raise DatasetInvalid(f"{entry['file']} disagrees with its manifest entry")
        if require_validated and not scn.validated:
            raise DatasetInvalid(f"{scn.id} was never validated")
        out.append(scn)
    if len(out) != manifest.get("count", len(out)):
        raise DatasetInvalid("manifest count mismatch")
    return out
