"""Turn a finished agent transcript into an anonymized experience document."""

from __future__ import annotations

import hashlib
import json
import re
from datetime import datetime, timezone
from typing import Mapping

from ..conflict import SeparationStandard, detect_conflicts
from ..errors import QualityGateRejected, ReplayMismatch, SummarizerError, UnknownCallsign
from ..scenarios import Scenario
from ..sim import AircraftState, Command, heading_delta, parse_command
from .library import CommandEntry, ExperienceDocument, normalize_formation

SETTLE_S = 60.0
_FORMATION_WORDS = {"HeadOn": "head-on", "Parallel": "parallel", "TFormation": "T-formation", "Converging": "converging"}


# -- helpfulness ------------------------------------------------------------


def _observations(transcript) -> list[tuple[float, set]]:
    """(clock, conflict-pair set) for every tool result that reports the full conflict set."""
    obs = []
    for e in transcript.tool_events():
        p = e.get("payload", {})
        if "conflicts" in p and e["name"] != "SENDCOMMAND":
            obs.append((e["clock_s"], {tuple(c) for c in p["conflicts"]}))
    return obs


def _replayed_after(transcript, index: int, std: SeparationStandard, settle_s: float) -> set:
    """Conflict set ``settle_s`` after command ``index``, by replaying the command timeline."""
    if transcript.scenario is None:
        raise ReplayMismatch("no observation after the command and no scenario to replay")
    cmds = transcript.commands()
    world = Scenario.from_dict(transcript.scenario).build_world()
    t_obs = cmds[index]["clock_s"] + settle_s
    for c in cmds:
        if c["clock_s"] > t_obs:
            break
        world.run_until(c["clock_s"])
        seen = {p.pair for p in detect_conflicts(world, std)}
        if seen != set(c["conflicts"]):
            raise ReplayMismatch(f"replayed conflict set at t={c['clock_s']} differs from the recorded one")
        world.apply(c["command"])
    world.run_until(t_obs)
    return {p.pair for p in detect_conflicts(world, std)}


def categorize_commands(
    transcript, std: SeparationStandard | None = None, settle_s: float = SETTLE_S
) -> list[tuple[str, bool]]:
    """Flag each accepted command helpful iff a conflict pair present before it is gone at the next observation.

    The next observation is the first conflict report stamped later than the
    command (commands take effect only once the clock moves). Without one,
    the world is replayed ``settle_s`` past the command.
    """
    std = std or SeparationStandard()
    obs = _observations(transcript)
    out = []
    for i, c in enumerate(transcript.commands()):
        after = next((s for t, s in obs if t > c["clock_s"]), None)
        if after is None:
            after = _replayed_after(transcript, i, std, settle_s)
        before = set(c["conflicts"])
        out.append((c["command"], bool(before - after)))
    return out


# -- relative commands ------------------------------------------------------


def _round_to(v: float, step: float) -> int:
    # half away from zero, so 250 -> 300 and -250 -> -300
    q = abs(v) / step
    return int(step * int(q + 0.5)) * (1 if v >= 0 else -1)


def relative_command(cmd: Command | str, state: AircraftState | Mapping) -> str:
    cmd = parse_command(cmd) if isinstance(cmd, str) else cmd
    if isinstance(state, Mapping):
        state = AircraftState.from_dict(state)
    cs = cmd.callsign
    if cmd.verb == "ALT":
        d = _round_to(cmd.value - state.altitude_ft, 100)
        if d == 0:
            return f"{cs} maintain current altitude"
        return f"{cs} {'climb' if d > 0 else 'descend'} {abs(d)} ft"
    if cmd.verb == "HDG":
        d = _round_to(heading_delta(state.heading_deg, cmd.value), 5)
        if d == 0:
            return f"{cs} maintain current heading"
        return f"{cs} turn {'right' if d > 0 else 'left'} {abs(d)} deg"
    d = _round_to(cmd.value - state.ground_speed_kt, 10)
    if d == 0:
        return f"{cs} maintain current speed"
    return f"{cs} {'increase' if d > 0 else 'reduce'} speed by {abs(d)} kt"


def relativize(commands, states: Mapping[str, AircraftState | Mapping]) -> list[str]:
    """Express absolute commands as changes relative to each aircraft's recorded state."""
    out = []
    for c in commands:
        cmd = parse_command(c) if isinstance(c, str) else c
        if cmd.callsign not in states:
            raise UnknownCallsign(f"no recorded state for {cmd.callsign}")
        out.append(relative_command(cmd, states[cmd.callsign]))
    return out


# -- anonymization ----------------------------------------------------------


def anonymize(texts: list[str], callsigns) -> tuple[list[str], dict[str, str]]:
    """Replace callsigns by AC1..ACn (sorted order), case-insensitive, in a single pass."""
    names = sorted({c.upper() for c in callsigns})
    mapping = {cs: f"AC{i + 1}" for i, cs in enumerate(names)}
    if not names:
        return list(texts), mapping
    pattern = re.compile("|".join(re.escape(c) for c in sorted(names, key=len, reverse=True)), re.IGNORECASE)
    out = [pattern.sub(lambda m: mapping[m.group(0).upper()], t) for t in texts]
    return out, mapping


def leaked_callsigns(texts: list[str], callsigns) -> list[str]:
    low = [t.lower() for t in texts]
    return sorted(c for c in callsigns if any(c.lower() in t for t in low))


# -- summarizers ------------------------------------------------------------


class TemplateSummarizer:
    """Deterministic description and insight text from fixed templates."""

    identity = "template"

    def summarize(self, context: dict) -> tuple[str, list[str]]:
        formation = _FORMATION_WORDS[context["formation"]]
        parts = [f"{formation.capitalize()} conflict involving {context['num_aircraft']} aircraft."]
        for ac in context["aircraft"]:
            parts.append(
                f"{ac['callsign']} heading {ac['heading_deg']:.0f} deg at {ac['altitude_ft']:.0f} ft "
                f"({ac['tendency']}), {ac['ground_speed_kt']:.0f} kt."
            )
        if context["conflicts"]:
            pairs = ", ".join(
                f"{c['pair'][0]}-{c['pair'][1]} (TCPA {c['tcpa_s']:.0f} s, DCPA {c['dcpa_nm']:.1f} NM)"
                for c in context["conflicts"]
            )
            parts.append(f"Conflict pairs: {pairs}.")
        insights = [
            ("Removed at least one conflict pair." if c["helpful"] else "Did not remove any conflict pair.")
            for c in context["commands"]
        ]
        return " ".join(parts), insights


class LLMSummarizer:
    """Asks a chat backend for a description and one insight per command, as JSON."""

    def __init__(self, backend, temperature: float = 0.3):
        self.backend = backend
        self.temperature = temperature
        self.identity = f"llm:{getattr(backend, 'identity', 'unknown')}"

    def summarize(self, context: dict) -> tuple[str, list[str]]:
        prompt = (
            "Write a concise description of this air traffic conflict from the initial aircraft states "
            "and conflict information, then give one short insight per command explaining why it did or "
            'did not help. Reply with JSON only: {"description": str, "insights": [str, ...]}.\n\n'
            + json.dumps(context, sort_keys=True)
        )
        messages = [{"role": "user", "content": prompt}]
        try:
            reply = self.backend.complete(messages, [], self.temperature)
            text = (reply.message.get("content") or "").strip()
            text = text.removeprefix("```json").removeprefix("```").removesuffix("```").strip()
            data = json.loads(text)
            desc, insights = str(data["description"]).strip(), [str(s) for s in data.get("insights", [])]
        except (ValueError, KeyError, TypeError, AttributeError) as exc:
            raise SummarizerError(f"summarizer reply unusable: {exc}") from exc
        if not desc or len(insights) != len(context["commands"]):
            raise SummarizerError("summarizer reply lacks a description or has the wrong number of insights")
        return desc, insights


# -- assembly ---------------------------------------------------------------


def _context(transcript, std: SeparationStandard) -> tuple[dict, list[str]]:
    scn = Scenario.from_dict(transcript.scenario)
    world = scn.build_world()
    conflicts = detect_conflicts(world, std)
    ctx = {
        "formation": normalize_formation(scn.conflict_type),
        "num_aircraft": scn.n_aircraft,
        "aircraft": [{**a.to_dict(), "tendency": a.tendency} for a in scn.aircraft],
        "conflicts": [
            {"pair": list(c.pair), "tcpa_s": c.tcpa_s, "dcpa_nm": c.dcpa_nm, "tlos_s": c.tlos_s} for c in conflicts
        ],
    }
    return ctx, scn.callsigns


def build_experience_document(
    transcript,
    summarizer=None,
    embedder=None,
    trusted_backends=None,
    created_at: str | None = None,
    doc_id: str | None = None,
    std: SeparationStandard | None = None,
) -> ExperienceDocument:
    """Categorize, relativize, summarize, anonymize and embed one run.

    ``trusted_backends`` (when given) is the retention list: documents from any
    other source backend raise :class:`QualityGateRejected`.
    """
    source = transcript.backend_id
    if trusted_backends is not None and source not in set(trusted_backends):
        raise QualityGateRejected(f"source backend {source!r} is not on the trusted list")
    if transcript.scenario is None:
        raise ReplayMismatch("transcript carries no scenario")
    std = std or SeparationStandard()
    summarizer = summarizer or TemplateSummarizer()

    ctx, callsigns = _context(transcript, std)
    recorded = transcript.commands()
    flags = categorize_commands(transcript, std)
    relative = [relative_command(c["command"], c["state"]) for c in recorded]
    ctx["commands"] = [{"command": r, "helpful": h} for r, (_, h) in zip(relative, flags)]
    description, insights = summarizer.summarize(ctx)

    texts, _ = anonymize([description, *relative, *insights], callsigns)
    description, relative, insights = texts[0], texts[1 : 1 + len(relative)], texts[1 + len(relative) :]
    entries = [CommandEntry(r, h, ins) for r, (_, h), ins in zip(relative, flags, insights)]
    doc = ExperienceDocument(
        id=doc_id or "",
        conflict_description=description,
        num_aircraft=ctx["num_aircraft"],
        conflict_formation=ctx["formation"],
        commands=entries,
        source_backend=source,
        created_at=created_at or datetime.now(timezone.utc).isoformat(timespec="seconds"),
    )
    leaks = leaked_callsigns(doc.text_fields(), callsigns)
    if leaks:
        raise QualityGateRejected(f"callsigns survived anonymization: {', '.join(leaks)}")
    if not doc.id:
        digest = hashlib.sha1(json.dumps([transcript.scenario_id, source, doc.to_dict()["commands"]]).encode())
        doc.id = f"exp-{transcript.scenario_id}-{digest.hexdigest()[:8]}"
    if embedder is not None:
        doc.embedding = embedder.embed(description)
    return doc
