"""Agent loops: one tool-using agent, or planner -> executor -> verifier.

The world is frozen while a backend decides. Simulated time moves only
through CONTINUEMONITORING and the post-run evaluation horizon, so runs do
not depend on model latency.
"""

from __future__ import annotations

import hashlib
import json
import re
import time
from dataclasses import asdict, dataclass

from ..conflict import SeparationStandard, classify_outcome
from ..errors import (
    AgentError,
    BackendError,
    ConfigInvalid,
    ContextOverflow,
    MalformedToolCall,
    MaxIterationsExceeded,
    PlanExtractionError,
    ReplanLimitExceeded,
)
from ..scenarios import HORIZON_MARGIN_S, Scenario
from ..sim import parse_command
from ..tools import (
    CONTINUE_MONITORING,
    GET_ALL_AIRCRAFT_INFO,
    GET_CONFLICT_INFO,
    SEARCH_EXPERIENCE_LIBRARY,
    SEND_COMMAND,
    ToolBox,
    ToolCall,
)
from .backends import AssistantText, estimate_tokens, parse_backend_output
from .prompt import ROLES, PromptBundle, assemble_prompt, load_prompt
from .transcript import BACKEND, HORIZON, NOTE, TOOL, Transcript

MAX_MALFORMED = 3
SINGLE_INPUT = "Resolve every conflict in the airspace, then confirm that none remain."
PLANNER_INPUT = "Study the airspace and write a plan that resolves every conflict."

_ROLE_TOOLS = {
    "single": (GET_ALL_AIRCRAFT_INFO, GET_CONFLICT_INFO, CONTINUE_MONITORING, SEND_COMMAND, SEARCH_EXPERIENCE_LIBRARY),
    "planner": (GET_ALL_AIRCRAFT_INFO, GET_CONFLICT_INFO, CONTINUE_MONITORING, SEARCH_EXPERIENCE_LIBRARY),
    "executor": (SEND_COMMAND,),
    "verifier": (GET_ALL_AIRCRAFT_INFO, GET_CONFLICT_INFO, CONTINUE_MONITORING, SEARCH_EXPERIENCE_LIBRARY),
}


@dataclass
class AgentConfig:
    role: str = "single"
    backend: str = "scripted:noop"
    temperature: float = 0.3
    max_iterations: int = 20
    experience_enabled: bool = False
    tokens_per_minute: int | None = None
    context_budget_tokens: int | None = 128_000
    system_prompt: str | None = None

    def __post_init__(self):
        if self.role not in ROLES:
            raise ConfigInvalid(f"role must be one of {ROLES}, got {self.role!r}")
        if not 0.0 <= self.temperature <= 2.0:
            raise ConfigInvalid("temperature must lie in [0, 2]")
        if self.max_iterations < 1:
            raise ConfigInvalid("max_iterations must be at least 1")
        if self.tokens_per_minute is not None and self.tokens_per_minute <= 0:
            raise ConfigInvalid("tokens_per_minute must be positive")

    def prompt(self) -> str:
        return self.system_prompt if self.system_prompt is not None else load_prompt(self.role)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class MultiAgentConfig:
    planner: AgentConfig
    executor: AgentConfig
    verifier: AgentConfig
    replan_limit: int = 3

    def __post_init__(self):
        for role in ("planner", "executor", "verifier"):
            if getattr(self, role).role != role:
                raise ConfigInvalid(f"the {role} slot holds a config with role {getattr(self, role).role!r}")
        if self.replan_limit < 0:
            raise ConfigInvalid("replan_limit must be non-negative")

    @classmethod
    def uniform(cls, backend: str = "scripted:noop", replan_limit: int = 3, **kw) -> "MultiAgentConfig":
        return cls(*(AgentConfig(role=r, backend=backend, **kw) for r in ("planner", "executor", "verifier")), replan_limit)

    @property
    def experience_enabled(self) -> bool:
        return self.planner.experience_enabled or self.verifier.experience_enabled

    def to_dict(self) -> dict:
        return {
            "planner": self.planner.to_dict(),
            "executor": self.executor.to_dict(),
            "verifier": self.verifier.to_dict(),
            "replan_limit": self.replan_limit,
        }


# -- plan extraction --------------------------------------------------------

_GRAMMAR = re.compile(r"\b(HDG|ALT|SPD)\s+([A-Z][A-Z0-9]*)\s+(-?\d+(?:\.\d+)?)(?![\d.])", re.I)
_NL_ALT = re.compile(r"\b(?:climb|descend|altitude|level)\b\D*?(\d{3,5}(?:\.\d+)?)\s*(?:ft|feet)\b", re.I)
_NL_FL = re.compile(r"\bFL\s?(\d{2,3})\b", re.I)
_NL_HDG = re.compile(r"\bheading\s+(?:of\s+|to\s+)?(\d{1,3}(?:\.\d+)?)\b", re.I)
_NL_SPD = re.compile(r"\bspeed\b\D*?(\d{2,3}(?:\.\d+)?)\s*(?:kt|kts|knots)\b", re.I)
_CALLSIGN = re.compile(r"\b[A-Z]{2,}\d+[A-Z0-9]*\b")


def extract_plan_commands(text: str, callsigns=None) -> list[str]:
    """Commands in a plan, from either the command grammar or plain phrasing.

    Lines like ``ALT FLIGHT2 36200`` are taken as written; otherwise a line
    naming a callsign and e.g. "climb to 36200 ft" or "heading 225" is
    translated. With ``callsigns`` given, only those aircraft count.
    """
    known = {c.upper() for c in callsigns} if callsigns else None
    out = []
    for line in (text or "").splitlines():
        hits = [m for m in _GRAMMAR.finditer(line) if known is None or m[2].upper() in known]
        if hits:
            for m in hits:
                try:
                    out.append(str(parse_command(m[0])))
                except ValueError:
                    continue
            continue
        plain = line.replace("*", "")
        if known is not None:
            names = [t for t in re.findall(r"[A-Za-z0-9]+", plain) if t.upper() in known]
        else:
            names = _CALLSIGN.findall(plain)
        if not names:
            continue
        cs = names[0].upper()
        for rx, verb, scale in ((_NL_ALT, "ALT", 1), (_NL_FL, "ALT", 100), (_NL_HDG, "HDG", 1), (_NL_SPD, "SPD", 1)):
            m = rx.search(plain)
            if m:
                try:
                    out.append(str(parse_command(f"{verb} {cs} {float(m[1]) * scale:g}")))
                except ValueError:
                    pass
                break
    return out


def format_plan(commands: list[str]) -> str:
    return "\n".join(f"- {c}" for c in commands)


# -- the loop ---------------------------------------------------------------


def _digest(messages) -> str:
    return hashlib.sha1(json.dumps(messages, sort_keys=True).encode()).hexdigest()[:16]


def _first_call_only(message: dict) -> dict:
    msg = {"role": "assistant", "content": message.get("content")}
    if message.get("tool_calls"):
        msg["tool_calls"] = message["tool_calls"][:1]
    return msg


class _Agent:
    """One role's conversation within a run: prompt, query, act, repeat."""

    def __init__(self, role, config: AgentConfig, backend, box: ToolBox, transcript: Transcript, limiter=None, deadline=None):
        self.role = role
        self.deadline = deadline
        self.config = config
        self.backend = backend
        self.box = box
        self.transcript = transcript
        self.limiter = limiter
        allowed = _ROLE_TOOLS[role]
        self.allowed = tuple(n for n in allowed if n in box.available())
        self.wire_tools = [d.to_wire() for d in box.descriptors(self.allowed)]

    def _query(self, bundle: PromptBundle) -> dict:
        t = self.transcript
        prompt = assemble_prompt(bundle, self.config.context_budget_tokens, self.wire_tools)
        ticket = self.limiter.acquire(prompt.tokens) if self.limiter is not None else None
        try:
            reply = self.backend.complete(prompt.messages, self.wire_tools, self.config.temperature)
        except BackendError:
            if ticket is not None:
                # a failed request is not billed, keeping ledger and transcript usage equal
                self.limiter.reconcile(ticket, 0)
            raise
        usage = dict(reply.usage or {})
        usage.setdefault("prompt_tokens", prompt.tokens)
        usage.setdefault("completion_tokens", estimate_tokens(reply.message))
        usage["total_tokens"] = int(usage["prompt_tokens"]) + int(usage["completion_tokens"])
        if ticket is not None:
            self.limiter.reconcile(ticket, usage["total_tokens"])
        t.add_usage(usage)
        t.add(
            BACKEND,
            self.role,
            self.box.world.clock_s,
            prompt={
                "messages": len(prompt.messages),
                "tokens": prompt.tokens,
                "dropped": prompt.dropped_scratchpad + prompt.dropped_history,
                "digest": _digest(prompt.messages),
            },
            message=reply.message,
            usage=usage,
        )
        return reply.message

    def run(self, user_input: str, history: list[dict] | None = None) -> tuple[str, str | None]:
        """Loop until the backend answers in text. Returns ``(final_text, failure)``."""
        t = self.transcript
        bundle = PromptBundle(self.config.prompt(), user_input, list(history or []))
        malformed = 0
        for _ in range(self.config.max_iterations):
            if self.deadline is not None and time.monotonic() > self.deadline:
                t.add(NOTE, self.role, self.box.world.clock_s, error="Timeout")
                return "", "Timeout"
            try:
                raw = self._query(bundle)
            except (BackendError, ContextOverflow) as exc:
                t.add(NOTE, self.role, self.box.world.clock_s, error=type(exc).__name__, detail=str(exc))
                return "", type(exc).__name__
            try:
                out = parse_backend_output(raw)
            except MalformedToolCall as exc:
                malformed += 1
                t.add(NOTE, self.role, self.box.world.clock_s, error="MalformedToolCall", detail=str(exc), attempt=malformed)
                if malformed > MAX_MALFORMED:
                    return "", "MalformedToolCall"
                bundle.scratchpad.append(self._error_group(raw, f"Error: malformed tool call ({exc}). Please retry."))
                continue
            if isinstance(out, AssistantText):
                return out.text, None
            if out.name not in self.allowed:
                text = f"Error: tool {out.name!r} is not available here; available tools: {', '.join(self.allowed)}"
                t.add(NOTE, self.role, self.box.world.clock_s, error="ToolNotAvailable", name=out.name)
                bundle.scratchpad.append(self._error_group(raw, text))
                continue
            res = self.box.call(ToolCall(out.name, out.args, out.call_id))
            t.add(
                TOOL,
                self.role,
                res.clock_s,
                name=out.name,
                args=out.args,
                call_id=out.call_id,
                text=res.text,
                payload=res.payload,
                is_error=res.is_error,
            )
            bundle.scratchpad.append(
                [_first_call_only(raw), {"role": "tool", "tool_call_id": out.call_id, "content": res.text}]
            )
        return "", "MaxIterationsExceeded"

    @staticmethod
    def _error_group(raw, text: str) -> list[dict]:
        raw = raw if isinstance(raw, dict) else {"content": str(raw)}
        calls = raw.get("tool_calls") or []
        if calls and isinstance(calls[0], dict) and calls[0].get("id"):
            return [_first_call_only(raw), {"role": "tool", "tool_call_id": calls[0]["id"], "content": text}]
        return [{"role": "assistant", "content": raw.get("content") or ""}, {"role": "user", "content": text}]


_FAILURES = {
    "BackendError": BackendError,
    "ContextOverflow": ContextOverflow,
    "MalformedToolCall": MalformedToolCall,
    "MaxIterationsExceeded": MaxIterationsExceeded,
    "PlanExtractionError": PlanExtractionError,
    "ReplanLimitExceeded": ReplanLimitExceeded,
    "Timeout": AgentError,
}


def _finish(scenario: Scenario, box: ToolBox, transcript: Transcript, summary: str, strict: bool) -> Transcript:
    """Simulate to the evaluation horizon, score, and (with ``strict``) raise the first recorded failure."""
    cmds = transcript.commands()
    last_cmd = max((c["clock_s"] for c in cmds), default=0.0)
    end = max(scenario.planned_collision_time_s, last_cmd) + HORIZON_MARGIN_S
    end = max(end, box.world.clock_s)
    box.world.run_until(end)
    transcript.score = classify_outcome(box.world.sep_log, box.std)
    transcript.add(HORIZON, "system", box.world.clock_s, end_s=end, score=transcript.score)
    transcript.summary = summary
    failure = transcript.flags.get("failure")
    if strict and failure:
        exc = _FAILURES.get(failure, AgentError)(transcript.flags.get("detail", failure))
        exc.transcript = transcript
        raise exc
    return transcript


def _base_config(mode: str, cfg: dict, std: SeparationStandard) -> dict:
    return {"mode": mode, **cfg, "std": std.to_dict()}


def run_single_agent(
    scenario: Scenario,
    config: AgentConfig,
    backend,
    library=None,
    std: SeparationStandard | None = None,
    limiter=None,
    strict: bool = False,
    deadline: float | None = None,
) -> Transcript:
    """One agent with every tool, looping until it stops calling tools or hits ``max_iterations``.

    Failures (backend errors, too many malformed calls, the iteration cap)
    are flagged in ``transcript.flags`` and the run is still scored.
    """
    std = std or SeparationStandard()
    box = ToolBox(scenario.build_world(), std, library, config.experience_enabled)
    transcript = Transcript(scenario.id, _base_config("single", config.to_dict(), std), scenario.to_dict())
    text, failure = _Agent("single", config, backend, box, transcript, limiter, deadline).run(SINGLE_INPUT)
    if failure:
        transcript.flags.update(failure=failure, role="single")
    return _finish(scenario, box, transcript, text, strict)


def run_multi_agent(
    scenario: Scenario,
    config: MultiAgentConfig,
    backends: dict,
    library=None,
    std: SeparationStandard | None = None,
    limiter=None,
    strict: bool = False,
    deadline: float | None = None,
) -> Transcript:
    """Planner writes a plan, executor sends it, verifier monitors and may re-plan.

    ``backends`` maps role name to backend. The executor is only ever offered
    SENDCOMMAND. Re-plans beyond ``config.replan_limit`` stop the run with a
    ``ReplanLimitExceeded`` flag; the run is scored either way.
    """
    std = std or SeparationStandard()
    box = ToolBox(scenario.build_world(), std, library, config.experience_enabled)
    transcript = Transcript(scenario.id, _base_config("multi", config.to_dict(), std), scenario.to_dict())
    agents = {r: _Agent(r, getattr(config, r), backends[r], box, transcript, limiter, deadline)
        for r in ("planner", "executor", "verifier")}
    callsigns = scenario.callsigns

    def fail(kind, role, detail=""):
        transcript.flags.update(failure=kind, role=role, detail=detail or kind)
        return _finish(scenario, box, transcript, detail, strict)

    plan_text, failure = agents["planner"].run(PLANNER_INPUT)
    if failure:
        return fail(failure, "planner")
    plan = extract_plan_commands(plan_text, callsigns)
    transcript.add(NOTE, "planner", box.world.clock_s, plan=plan, text=plan_text)
    if not plan:
        return fail("PlanExtractionError", "planner", "no commands could be extracted from the plan")

    replans = 0
    verdict = ""
    while True:
        _, failure = agents["executor"].run("Execute this plan:\n" + format_plan(plan))
        if failure:
            return fail(failure, "executor")
        verdict, failure = agents["verifier"].run(
            "This plan has just been executed:\n" + format_plan(plan) + "\nVerify that every conflict is resolved."
        )
        if failure:
            return fail(failure, "verifier")
        new_plan = extract_plan_commands(verdict, callsigns)
        if not new_plan:
            break
        if replans >= config.replan_limit:
            transcript.flags["replans"] = replans
            return fail("ReplanLimitExceeded", "verifier", f"re-plan limit {config.replan_limit} reached")
        replans += 1
        transcript.add(NOTE, "verifier", box.world.clock_s, replan=replans, plan=new_plan, text=verdict)
        plan = new_plan
    transcript.flags["replans"] = replans
    return _finish(scenario, box, transcript, verdict, strict)
