"""The five agent tools, their function-calling descriptors and text rendering.

Tool output is plain text meant for a language model. Rendering is fixed
precision (feet and seconds one decimal, nautical miles two) so identical
worlds render byte-identically.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

from .conflict import ConflictPair, SeparationStandard, detect_conflicts
from .errors import (
    ArenaError,
    DurationOutOfRange,
    LibraryUnavailable,
    MalformedToolCall,
    ToolError,
)
from .sim import AircraftState, World, parse_command

GET_ALL_AIRCRAFT_INFO = "GETALLAIRCRAFTINFO"
GET_CONFLICT_INFO = "GETCONFLICTINFO"
CONTINUE_MONITORING = "CONTINUEMONITORING"
SEND_COMMAND = "SENDCOMMAND"
SEARCH_EXPERIENCE_LIBRARY = "SEARCHEXPERIENCELIBRARY"

TOOL_NAMES = (
    GET_ALL_AIRCRAFT_INFO,
    GET_CONFLICT_INFO,
    CONTINUE_MONITORING,
    SEND_COMMAND,
    SEARCH_EXPERIENCE_LIBRARY,
)
MONITORING_RANGE_S = (1.0, 300.0)
NO_CONFLICTS = "No conflicts detected."
NO_AIRCRAFT = "No aircraft in airspace."
NO_EXPERIENCE = "No relevant experience found."

_JSON_TYPES = {"string": (str,), "integer": (int,), "number": (int, float), "boolean": (bool,)}


@dataclass(frozen=True)
class ToolParam:
    name: str
    type: str
    description: str
    required: bool = True


@dataclass(frozen=True)
class ToolDescriptor:
    name: str
    description: str
    params: tuple[ToolParam, ...] = ()

    def to_wire(self) -> dict:
        """Chat-completions function-calling schema."""
        return {
            "type": "function",
            "function": {
                "name": self.name,
                "description": self.description,
                "parameters": {
                    "type": "object",
                    "properties": {p.name: {"type": p.type, "description": p.description} for p in self.params},
                    "required": [p.name for p in self.params if p.required],
                },
            },
        }

    @classmethod
    def from_wire(cls, wire: dict) -> "ToolDescriptor":
        fn = wire["function"]
        schema = fn.get("parameters", {})
        required = set(schema.get("required", []))
        params = tuple(
            ToolParam(name, spec["type"], spec.get("description", ""), name in required)
            for name, spec in schema.get("properties", {}).items()
        )
        return cls(fn["name"], fn.get("description", ""), params)

    def validate(self, args: dict) -> dict:
        """Check ``args`` against the schema; unknown keys are dropped."""
        if not isinstance(args, dict):
            raise MalformedToolCall(f"{self.name}: arguments must be an object")
        clean = {}
        for p in self.params:
            if p.name not in args:
                if p.required:
                    raise MalformedToolCall(f"{self.name}: missing required argument {p.name!r}")
                continue
            value = args[p.name]
            ok = isinstance(value, _JSON_TYPES[p.type]) and not (p.type != "boolean" and isinstance(value, bool))
            if not ok and p.type == "integer" and isinstance(value, float) and value.is_integer():
                value, ok = int(value), True
            if not ok:
                raise MalformedToolCall(f"{self.name}: argument {p.name!r} must be of type {p.type}")
            clean[p.name] = value
        return clean


DESCRIPTORS: dict[str, ToolDescriptor] = {
    d.name: d
    for d in (
        ToolDescriptor(
            GET_ALL_AIRCRAFT_INFO,
            "List every aircraft with position, heading, altitude (current -> target), "
            "vertical speed and ground speed.",
        ),
        ToolDescriptor(
            GET_CONFLICT_INFO,
            "List aircraft pairs predicted to lose separation, with TCPA, heading difference, "
            "horizontal/vertical/total separation, DCPA, time to loss of separation, and "
            "altitude information for every aircraft in conflict.",
        ),
        ToolDescriptor(
            CONTINUE_MONITORING,
            "Let the simulation run for a number of seconds, then report which conflict pairs "
            "appeared, disappeared or persisted, followed by fresh conflict information.",
            (ToolParam("duration", "number", "Seconds to monitor, between 1 and 300."),),
        ),
        ToolDescriptor(
            SEND_COMMAND,
            "Send one traffic command. Format '<VERB> <CALLSIGN> <VALUE>' with VERB one of "
            "HDG (heading, degrees), ALT (altitude, feet) or SPD (ground speed, knots), "
            "for example 'HDG AB112 225' or 'ALT AB426 21000'.",
            (ToolParam("command", "string", "The command text."),),
        ),
        ToolDescriptor(
            SEARCH_EXPERIENCE_LIBRARY,
            "Retrieve the most similar past conflict resolution from the experience library.",
            (
                ToolParam("conflict_description", "string", "Short description of the current conflict."),
                ToolParam("num_aircraft", "integer", "Number of aircraft involved in the conflict."),
                ToolParam(
                    "conflict_formation",
                    "string",
                    "Conflict geometry: one of HeadOn, Parallel, TFormation, Converging.",
                ),
            ),
        ),
    )
}


@dataclass(frozen=True)
class ToolCall:
    name: str
    args: dict
    id: str = ""

    def to_dict(self) -> dict:
        return {"name": self.name, "args": self.args, "id": self.id}


@dataclass
class ToolResult:
    text: str
    payload: dict = field(default_factory=dict)
    clock_s: float = 0.0
    is_error: bool = False

    def to_dict(self) -> dict:
        return {"text": self.text, "payload": self.payload, "clock_s": self.clock_s, "is_error": self.is_error}


# -- rendering --------------------------------------------------------------


def _f(v: float, digits: int) -> str:
    # avoid "-0.0"
    return f"{round(v, digits) + 0.0:.{digits}f}"


def altitude_line(callsign: str, current_ft: float, target_ft: float, tendency: str) -> str:
    return f"{callsign}: Altitude {_f(current_ft, 1)} ft -> {_f(target_ft, 1)} ft ({tendency})"


def render_aircraft(ac: AircraftState) -> str:
    return (
        f"{ac.callsign}: Position ({_f(ac.x_nm, 2)}, {_f(ac.y_nm, 2)}) NM, "
        f"Heading {_f(ac.heading_deg, 1)} deg (target {_f(ac.target_heading_deg, 1)} deg), "
        f"Altitude {_f(ac.altitude_ft, 1)} ft -> {_f(ac.target_altitude_ft, 1)} ft ({ac.tendency}), "
        f"Vertical speed {_f(ac.vertical_speed_fpm, 1)} ft/min, "
        f"Ground speed {_f(ac.ground_speed_kt, 1)} kt (target {_f(ac.target_speed_kt, 1)} kt)"
    )


def render_conflicts(conflicts: list[ConflictPair]) -> str:
    if not conflicts:
        return NO_CONFLICTS
    lines = ["Aircraft Pairs in Conflict and their TCPA (sec):"]
    involved: dict[str, tuple] = {}
    for c in conflicts:
        lines.append(
            f"{c.callsign_a} - {c.callsign_b}: TCPA {_f(c.tcpa_s, 1)} sec, "
            f"Heading difference {_f(c.heading_difference_deg, 1)} deg, "
            f"Separation total {_f(c.total_sep_nm, 2)} NM, vertical {_f(c.vertical_sep_ft, 1)} ft, "
            f"horizontal {_f(c.horizontal_sep_nm, 2)} NM, "
            f"DCPA {_f(c.dcpa_nm, 2)} NM, tLOS {_f(c.tlos_s, 1)} sec"
        )
        involved[c.callsign_a] = c.altitude_info_a
        involved[c.callsign_b] = c.altitude_info_b
    lines.append(f"Number of aircraft in conflict: {len(involved)}")
    lines.append("Aircraft Altitude Information:")
    for cs in sorted(involved):
        info = involved[cs]
        lines.append(altitude_line(cs, info.current_ft, info.target_ft, info.tendency))
    return "\n".join(lines)


def _pair_label(pair) -> str:
    return f"{pair[0]} - {pair[1]}"


# -- toolbox ----------------------------------------------------------------


class ToolBox:
    """Binds the tools to one world. Tools run strictly in call order."""

    def __init__(
        self,
        world: World,
        std: SeparationStandard | None = None,
        library=None,
        experience_enabled: bool = False,
    ):
        self.world = world
        self.std = std or SeparationStandard()
        self.library = library
        self.experience_enabled = experience_enabled

    def descriptors(self, names: tuple[str, ...] | None = None) -> list[ToolDescriptor]:
        names = names or self.available()
        return [DESCRIPTORS[n] for n in names]

    def available(self) -> tuple[str, ...]:
        if self.experience_enabled:
            return TOOL_NAMES
        return tuple(n for n in TOOL_NAMES if n != SEARCH_EXPERIENCE_LIBRARY)

    def conflict_set(self) -> list[tuple[str, str]]:
        return sorted(c.pair for c in detect_conflicts(self.world, self.std))

    # tools

    def get_all_aircraft_info(self) -> ToolResult:
        w = self.world
        if not w.aircraft:
            text = NO_AIRCRAFT
        else:
            text = "\n".join(render_aircraft(w.aircraft[cs]) for cs in sorted(w.aircraft))
        return ToolResult(text, {"aircraft": [w.aircraft[cs].to_dict() for cs in sorted(w.aircraft)]}, w.clock_s)

    def get_conflict_info(self) -> ToolResult:
        conflicts = detect_conflicts(self.world, self.std)
        return ToolResult(
            render_conflicts(conflicts),
            {"conflicts": sorted([list(c.pair) for c in conflicts])},
            self.world.clock_s,
        )

    def continue_monitoring(self, duration_s: float) -> ToolResult:
        lo, hi = MONITORING_RANGE_S
        if not (lo <= float(duration_s) <= hi):
            raise DurationOutOfRange(f"duration must be between {lo:g} and {hi:g} seconds, got {duration_s}")
        before = set(self.conflict_set())
        self.world.advance(float(duration_s))
        conflicts = detect_conflicts(self.world, self.std)
        after = {c.pair for c in conflicts}
        added, removed, persisting = sorted(after - before), sorted(before - after), sorted(after & before)
        lines = [f"Monitored for {_f(float(duration_s), 1)} sec, simulation time {_f(self.world.clock_s, 1)} sec."]
        if not added and not removed:
            lines.append("Conflict status: no change.")
        if added:
            lines.append("New conflict pairs: " + ", ".join(map(_pair_label, added)))
        if removed:
            lines.append("Resolved conflict pairs: " + ", ".join(map(_pair_label, removed)))
        if persisting:
            lines.append("Persisting conflict pairs: " + ", ".join(map(_pair_label, persisting)))
        lines.append(render_conflicts(conflicts))
        payload = {
            "duration_s": float(duration_s),
            "added": [list(p) for p in added],
            "removed": [list(p) for p in removed],
            "persisting": [list(p) for p in persisting],
            "conflicts": sorted([list(p) for p in after]),
        }
        return ToolResult("\n".join(lines), payload, self.world.clock_s)

    def send_command(self, text: str) -> ToolResult:
        """Apply a command; failures come back as text, never raised."""
        payload: dict[str, Any] = {"command": text, "conflicts": [list(p) for p in self.conflict_set()]}
        try:
            cmd = parse_command(text)
            state = self.world[cmd.callsign].to_dict()
            self.world.apply(cmd)
        except ArenaError as exc:
            payload["ok"] = False
            return ToolResult(f"Error: {exc}", payload, self.world.clock_s, is_error=True)
        payload.update(ok=True, parsed=str(cmd), state=state)
        return ToolResult(f"Command accepted: {cmd}", payload, self.world.clock_s)

    def search_experience_library(
        self, conflict_description: str, num_aircraft: int, conflict_formation: str
    ) -> ToolResult:
        if not self.experience_enabled or self.library is None:
            raise LibraryUnavailable("the experience library is not enabled for this run")
        if not str(conflict_description).strip():
            raise ToolError("conflict_description must not be empty")
        from .experience.library import normalize_formation

        formation = normalize_formation(conflict_formation)
        hit = self.library.search(conflict_description, int(num_aircraft), formation)
        if hit is None:
            return ToolResult(NO_EXPERIENCE, {"document_id": None}, self.world.clock_s)
        doc, sim = hit
        return ToolResult(doc.render(), {"document_id": doc.id, "similarity": sim}, self.world.clock_s)

    # dispatch

    def call(self, call: ToolCall) -> ToolResult:
        """Execute a tool call. Unknown tools and tool errors become error text."""
        if call.name not in TOOL_NAMES:
            return ToolResult(
                f"Error: unknown tool {call.name!r}; available tools: {', '.join(self.available())}",
                {},
                self.world.clock_s,
                is_error=True,
            )
        try:
            args = DESCRIPTORS[call.name].validate(call.args)
            if call.name == GET_ALL_AIRCRAFT_INFO:
                return self.get_all_aircraft_info()
            if call.name == GET_CONFLICT_INFO:
                return self.get_conflict_info()
            if call.name == CONTINUE_MONITORING:
                return self.continue_monitoring(args["duration"])
            if call.name == SEND_COMMAND:
                return self.send_command(args["command"])
            return self.search_experience_library(**args)
        except (ToolError, MalformedToolCall, ValueError) as exc:
            return ToolResult(f"Error: {exc}", {}, self.world.clock_s, is_error=True)
