"""Append-only record of one agent run, persisted as line-delimited JSON.

File shape: a ``header`` line (scenario, config), one ``event`` line per event,
and a closing ``summary`` line (final text, score, flags, token usage).
No wall-clock timestamps are written, so identical runs produce identical files.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from ..conflict import SeparationStandard, classify_outcome
from ..errors import IncompleteSimulation, ReplayMismatch
from ..scenarios import Scenario
from ..tools import SEARCH_EXPERIENCE_LIBRARY, SEND_COMMAND, ToolBox, ToolCall, ToolResult

TRANSCRIPT_FORMAT = 1

# event kinds: a backend event carries the prompt snapshot and the raw reply,
# a tool event carries the call and its result
BACKEND = "backend"
TOOL = "tool"
NOTE = "note"
HORIZON = "horizon"


@dataclass
class Transcript:
    scenario_id: str
    config: dict
    scenario: dict | None = None
    events: list[dict] = field(default_factory=list)
    summary: str = ""
    score: int | None = None
    flags: dict = field(default_factory=dict)
    usage: dict = field(default_factory=lambda: {"prompt_tokens": 0, "completion_tokens": 0, "total_tokens": 0})

    def add(self, kind: str, role: str, clock_s: float, **data) -> dict:
        event = {"seq": len(self.events), "kind": kind, "role": role, "clock_s": float(clock_s), **data}
        self.events.append(event)
        return event

    def add_usage(self, usage: dict) -> None:
        for k in self.usage:
            self.usage[k] += int(usage.get(k, 0) or 0)

    def of_kind(self, kind: str) -> list[dict]:
        return [e for e in self.events if e["kind"] == kind]

    def tool_events(self, role: str | None = None) -> list[dict]:
        return [e for e in self.events if e["kind"] == TOOL and (role is None or e["role"] == role)]

    def tool_sequence(self, role: str | None = None) -> list[str]:
        return [e["name"] for e in self.tool_events(role)]

    def commands(self) -> list[dict]:
        """Accepted SENDCOMMAND results: clock, command text, pre-command state and conflicts."""
        out = []
        for e in self.tool_events():
            p = e.get("payload", {})
            if e["name"] == SEND_COMMAND and p.get("ok"):
                out.append(
                    {
                        "clock_s": e["clock_s"],
                        "role": e["role"],
                        "command": p["parsed"],
                        "state": p["state"],
                        "conflicts": [tuple(c) for c in p["conflicts"]],
                    }
                )
        return out

    @property
    def backend_id(self) -> str:
        if "backend" in self.config:
            return self.config["backend"]
        return self.config.get("planner", {}).get("backend", "")

    @property
    def horizon_s(self) -> float | None:
        h = self.of_kind(HORIZON)
        return h[-1]["end_s"] if h else None

    # persistence

    def to_lines(self) -> list[str]:
        dump = lambda obj: json.dumps(obj, sort_keys=True)
        lines = [
            dump(
                {
                    "type": "header",
                    "format": TRANSCRIPT_FORMAT,
                    "scenario_id": self.scenario_id,
                    "config": self.config,
                    "scenario": self.scenario,
                }
            )
        ]
        lines += [dump({"type": "event", **e}) for e in self.events]
        lines.append(
            dump({"type": "summary", "summary": self.summary, "score": self.score, "flags": self.flags, "usage": self.usage})
        )
        return lines

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text("\n".join(self.to_lines()) + "\n")
        return path

    @classmethod
    def from_lines(cls, lines) -> "Transcript":
        records = [json.loads(ln) for ln in lines if ln.strip()]
        if not records or records[0].get("type") != "header":
            raise ValueError("transcript must start with a header line")
        head = records[0]
        t = cls(head["scenario_id"], head["config"], head.get("scenario"))
        for r in records[1:]:
            kind = r.pop("type")
            if kind == "event":
                t.events.append(r)
            elif kind == "summary":
                t.summary, t.score = r["summary"], r["score"]
                t.flags, t.usage = r.get("flags", {}), r.get("usage", t.usage)
        return t

    @classmethod
    def load(cls, path) -> "Transcript":
        return cls.from_lines(Path(path).read_text().splitlines())


@dataclass
class ReplayOutcome:
    results: list[ToolResult]
    score: int
    world: object


def replay(transcript: Transcript, std: SeparationStandard | None = None, check: bool = True) -> ReplayOutcome:
    """Re-execute recorded tool calls on a fresh world, then simulate the recorded horizon.

    With ``check`` set, every regenerated result must match the recorded text
    byte for byte. Library lookups do not touch the world and are not re-run.
    """
    if transcript.scenario is None:
        raise ReplayMismatch("transcript carries no scenario; cannot rebuild the world")
    if std is None:
        std = SeparationStandard(**transcript.config["std"]) if "std" in transcript.config else SeparationStandard()
    world = Scenario.from_dict(transcript.scenario).build_world()
    box = ToolBox(world, std)
    results = []
    for rec in transcript.tool_events():
        if rec["name"] == SEARCH_EXPERIENCE_LIBRARY:
            res = ToolResult(rec["text"], rec.get("payload", {}), world.clock_s, rec.get("is_error", False))
        else:
            res = box.call(ToolCall(rec["name"], rec["args"], rec.get("call_id", "")))
        if check and res.text != rec["text"]:
            raise ReplayMismatch(
                f"event {rec['seq']}: {rec['name']} result differs from the recorded one at t={world.clock_s}"
            )
        results.append(res)
    end = transcript.horizon_s
    if end is None:
        raise IncompleteSimulation("transcript has no evaluation horizon")
    world.run_until(max(end, world.clock_s))
    return ReplayOutcome(results, classify_outcome(world.sep_log, std), world)
