"""Hand-built scenarios and scripted decision sequences used as worked examples and test fixtures."""

from __future__ import annotations

from .agents.backends import (
    ScriptedBackend,
    altitude_change_step,
    executor_backend,
    layer_commands,
    parse_altitudes,
    planner_backend,
    tool_message,
    verifier_backend,
)
from .scenarios import HORIZON_MARGIN_S, Scenario, converge_at
from .sim import AircraftState, World
from .tools import CONTINUE_MONITORING, GET_ALL_AIRCRAFT_INFO, GET_CONFLICT_INFO, SEND_COMMAND


def _scenario(sid, kind, aircraft, t_collision) -> Scenario:
    return Scenario(sid, kind, len(aircraft), aircraft, t_collision, t_collision + HORIZON_MARGIN_S, 0, validated=True)


def converging_trio() -> Scenario:
    """Three level aircraft converging on one point at 24000 ft after 150 s."""
    ac = converge_at(["AB112", "AB426", "AB310"], [270.0, 180.0, 45.0], [300.0, 300.0, 360.0], ["level"] * 3, 150.0, 24000.0)
    return _scenario("converging-trio", "Converging", ac, 150.0)


def trio_backend() -> ScriptedBackend:
    """Look, check conflicts, turn AB112 to 225, re-check, drop AB426 by 2000 ft, verify, stop."""
    return ScriptedBackend(
        steps=[
            tool_message(GET_ALL_AIRCRAFT_INFO),
            tool_message(GET_CONFLICT_INFO),
            tool_message(SEND_COMMAND, command="HDG AB112 225"),
            tool_message(CONTINUE_MONITORING, duration=30),
            altitude_change_step("AB426", -2000.0),
            tool_message(CONTINUE_MONITORING, duration=60),
        ],
        identity="scripted:trio",
        final_text="All conflicts are resolved.",
    )


SAME_LEVEL_PLAN = (
    "Plan:\n"
    "1. **FLIGHT2**: climb to 36200 ft, above FLIGHT1 and FLIGHT3.\n"
    "2. **FLIGHT3**: descend to 32200 ft, below FLIGHT1 and FLIGHT2.\n"
    "3. **FLIGHT4**: climb to 36200 ft, above FLIGHT1."
)


def four_way_crossing() -> Scenario:
    """Four level aircraft at 34200 ft meeting at one point after 240 s; FLIGHT2 and FLIGHT4 are head-on."""
    ac = converge_at(
        [f"FLIGHT{i}" for i in range(1, 5)],
        [90.0, 180.0, 270.0, 0.0],
        [300.0, 360.0, 420.0, 330.0],
        ["level"] * 4,
        240.0,
        34200.0,
    )
    return _scenario("four-way-crossing", "Converging", ac, 240.0)


def layering_fix(observation: str) -> str | None:
    """Re-plan by stacking whatever aircraft still appear in the conflict report."""
    alts = parse_altitudes(observation)
    if not alts:
        return None
    return "New plan:\n" + "\n".join(f"- {c}" for c in layer_commands(alts))


def same_level_plan_backends(fix=layering_fix) -> dict:
    """Planner that sends FLIGHT2 and FLIGHT4 to the same level, a literal executor, a re-planning verifier."""
    return {
        "planner": planner_backend(SAME_LEVEL_PLAN),
        "executor": executor_backend(),
        "verifier": verifier_backend(fix),
    }


def descending_trio_world() -> World:
    """Three aircraft in conflict, two of them descending, for rendering checks."""
    world = World()
    for ac in (
        AircraftState("FLIGHT1", -20.0, 0.0, 22500.0, 90.0, 400.0),
        AircraftState("FLIGHT2", 0.0, -22.0, 23322.38, 0.0, 420.0, -2000.0, target_altitude_ft=23000.0),
        AircraftState("FLIGHT3", 14.0, 14.0, 23328.64, 225.0, 380.0, -1500.0, target_altitude_ft=23298.75),
    ):
        world.add_aircraft(ac)
    return world
