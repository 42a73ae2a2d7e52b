"""Chat-model backends and parsing of their function-calling output.

Every backend exposes ``complete(messages, tools, temperature) -> BackendReply``
where ``reply.message`` is an assistant message in chat-completions wire format.
Scripted backends emit that same raw format, so the parsing path is shared.
"""

from __future__ import annotations

import json
import os
import re
import time
from dataclasses import dataclass, field
from typing import Callable

from ..errors import BackendError, MalformedToolCall
from ..tools import (
    CONTINUE_MONITORING,
    DESCRIPTORS,
    GET_ALL_AIRCRAFT_INFO,
    GET_CONFLICT_INFO,
    SEND_COMMAND,
    ToolDescriptor,
)


@dataclass(frozen=True)
class AssistantText:
    text: str


@dataclass(frozen=True)
class ToolInvocation:
    name: str
    args: dict
    call_id: str = ""


@dataclass
class BackendReply:
    message: dict
    usage: dict = field(default_factory=dict)


def parse_backend_output(raw, descriptors: dict[str, ToolDescriptor] | None = None):
    """Structure a raw assistant message (or full completion response).

    Only the first tool call is honoured. Arguments of known tools are
    schema-checked; unknown tool names pass through so the caller can answer
    with an error observation.
    """
    descriptors = DESCRIPTORS if descriptors is None else descriptors
    if isinstance(raw, BackendReply):
        raw = raw.message
    if isinstance(raw, str):
        return AssistantText(raw)
    if not isinstance(raw, dict):
        raise MalformedToolCall(f"unrecognised backend output of type {type(raw).__name__}")
    if "choices" in raw:
        try:
            raw = raw["choices"][0]["message"]
        except (IndexError, KeyError, TypeError) as exc:
            raise MalformedToolCall("completion response has no message") from exc
    calls = raw.get("tool_calls") or []
    if not calls:
        return AssistantText(raw.get("content") or "")
    try:
        first = calls[0]
        fn = first["function"]
        name = fn["name"]
        args = fn.get("arguments") or {}
    except (KeyError, TypeError) as exc:
        raise MalformedToolCall("tool call lacks a function name") from exc
    if isinstance(args, str):
        try:
            args = json.loads(args) if args.strip() else {}
        except json.JSONDecodeError as exc:
            raise MalformedToolCall(f"{name}: arguments are not valid JSON ({exc.msg})") from exc
    if not isinstance(args, dict):
        raise MalformedToolCall(f"{name}: arguments must be a JSON object")
    if name in descriptors:
        args = descriptors[name].validate(args)
    return ToolInvocation(name, args, first.get("id", ""))


def estimate_tokens(obj) -> int:
    """Rough count at four characters per token."""
    text = obj if isinstance(obj, str) else json.dumps(obj, sort_keys=True)
    return (len(text) + 3) // 4


# -- remote -----------------------------------------------------------------


class ChatCompletionsBackend:
    """OpenAI-compatible ``/chat/completions`` client with retry and backoff.

    ``OPENAI_BASE_URL`` and ``OPENAI_API_KEY`` are read from the environment
    when not given.
    """

    supports_tools = True

    def __init__(
        self,
        model: str,
        base_url: str | None = None,
        api_key: str | None = None,
        timeout_s: float = 120.0,
        retries: int = 3,
        backoff_s: float = 2.0,
        client=None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        import httpx

        self.model = model
        self.identity = f"openai:{model}"
        self.base_url = (base_url or os.environ.get("OPENAI_BASE_URL", "https://api.openai.com/v1")).rstrip("/")
        self.api_key = api_key if api_key is not None else os.environ.get("OPENAI_API_KEY", "")
        self.retries = retries
        self.backoff_s = backoff_s
        self._sleep = sleep
        self._client = client or httpx.Client(timeout=timeout_s)
        self.attempts = 0

    def complete(self, messages: list[dict], tools: list[dict], temperature: float) -> BackendReply:
        import httpx

        body = {"model": self.model, "messages": messages, "temperature": temperature}
        if tools:
            body.update(tools=tools, tool_choice="auto", parallel_tool_calls=False)
        headers = {"Authorization": f"Bearer {self.api_key}"} if self.api_key else {}
        last = None
        for attempt in range(self.retries):
            self.attempts += 1
            try:
                resp = self._client.post(f"{self.base_url}/chat/completions", json=body, headers=headers)
                if resp.status_code == 429 or resp.status_code >= 500:
                    last = f"HTTP {resp.status_code}"
                else:
                    resp.raise_for_status()
                    data = resp.json()
                    return BackendReply(data["choices"][0]["message"], data.get("usage") or {})
            except httpx.HTTPStatusError as exc:
                raise BackendError(f"{self.identity}: request rejected with HTTP {exc.response.status_code}") from exc
            except (httpx.HTTPError, KeyError, IndexError, ValueError) as exc:
                last = str(exc) or type(exc).__name__
            if attempt + 1 < self.retries:
                self._sleep(self.backoff_s * 2**attempt)
        raise BackendError(f"{self.identity}: no usable reply after {self.retries} attempts ({last})")


# -- scripted ---------------------------------------------------------------


def tool_message(name: str, call_id: str = "call_0", **args) -> dict:
    return {
        "role": "assistant",
        "content": None,
        "tool_calls": [
            {"id": call_id, "type": "function", "function": {"name": name, "arguments": json.dumps(args, sort_keys=True)}}
        ],
    }


def text_message(text: str) -> dict:
    return {"role": "assistant", "content": text}


def observations(messages: list[dict]) -> list[str]:
    """Tool outputs visible in this conversation, oldest first."""
    return [m["content"] for m in messages if m.get("role") == "tool"]


def user_input(messages: list[dict]) -> str:
    return next((m["content"] for m in messages if m.get("role") == "user"), "")


_ALT_LINE = re.compile(r"^(\w+): Altitude (-?[\d.]+) ft -> (-?[\d.]+) ft \((\w+)\)$", re.M)
_PAIR_LINE = re.compile(r"^(\w+) - (\w+): TCPA", re.M)


def parse_altitudes(text: str) -> dict[str, tuple[float, float, str]]:
    """``{callsign: (current_ft, target_ft, tendency)}`` from rendered altitude lines."""
    return {m[1]: (float(m[2]), float(m[3]), m[4]) for m in _ALT_LINE.finditer(text)}


def parse_pairs(text: str) -> list[tuple[str, str]]:
    return [(m[1], m[2]) for m in _PAIR_LINE.finditer(text)]


Step = dict | Callable[[list[dict]], "dict | list[dict]"]


class ScriptedBackend:
    """Deterministic stand-in for a chat model.

    Built either from a ``policy(messages) -> message`` that decides from the
    conversation alone, or from a list of ``steps`` consumed in order. A step
    is a raw message or a callable returning one or several messages; when
    the steps run out the backend answers with ``final_text``.
    """

    supports_tools = True

    def __init__(
        self,
        steps: list[Step] | None = None,
        policy: Callable[[list[dict]], dict] | None = None,
        identity: str = "scripted",
        final_text: str = "Done.",
    ):
        if (steps is None) == (policy is None):
            raise ValueError("give exactly one of steps or policy")
        self.identity = identity
        self.final_text = final_text
        self._policy = policy
        self._steps = list(steps or [])
        self._queue: list[dict] = []
        self._calls = 0

    def complete(self, messages: list[dict], tools: list[dict], temperature: float) -> BackendReply:
        if self._policy is not None:
            msg = self._policy(messages)
        else:
            while not self._queue and self._steps:
                step = self._steps.pop(0)
                out = step(messages) if callable(step) else step
                self._queue.extend(out if isinstance(out, list) else [out])
            msg = self._queue.pop(0) if self._queue else text_message(self.final_text)
        msg = json.loads(json.dumps(msg))
        for tc in msg.get("tool_calls") or []:
            tc["id"] = f"call_{self._calls}"
        self._calls += 1
        completion = estimate_tokens(msg)
        return BackendReply(msg, {"prompt_tokens": estimate_tokens(messages), "completion_tokens": completion})

    @classmethod
    def from_transcript(cls, transcript, role: str = "single") -> "ScriptedBackend":
        """Replay the raw backend outputs a transcript recorded for ``role``."""
        msgs = [e["message"] for e in transcript.events if e["kind"] == "backend" and e["role"] == role]
        return cls(steps=msgs, identity=f"replay:{transcript.backend_id}")


def noop_backend() -> ScriptedBackend:
    """Declares the job done without touching anything."""
    return ScriptedBackend(steps=[], identity="scripted:noop", final_text="No action taken.")


def _pool_adjacent(values: list[float]) -> list[float]:
    """Least-squares non-decreasing fit (pool adjacent violators)."""
    blocks: list[list[float]] = []  # [mean, weight]
    for v in values:
        blocks.append([v, 1.0])
        while len(blocks) > 1 and blocks[-2][0] > blocks[-1][0]:
            m2, w2 = blocks.pop()
            m1, w1 = blocks.pop()
            blocks.append([(m1 * w1 + m2 * w2) / (w1 + w2), w1 + w2])
    return [m for m, w in blocks for _ in range(int(w))]


def layer_commands(
    altitudes: dict[str, tuple[float, float, str]], order: str = "altitude", spacing_ft: float = 1000.0
) -> list[str]:
    """ALT commands putting each aircraft on its own level, at least ``spacing_ft`` apart.

    ``order="callsign"`` stacks levels bottom-up in callsign order around the
    mean altitude. ``order="altitude"`` keeps the current vertical order (so no
    two aircraft cross) and picks the levels closest to where the aircraft are
    now; aircraft already well separated keep their altitude.
    """
    if not altitudes:
        return []
    names = sorted(altitudes)
    n = len(names)
    if order == "callsign":
        base = round(sum(a[0] for a in altitudes.values()) / n / 100.0) * 100.0
        levels = [base + spacing_ft * (i - (n - 1) / 2.0) for i in range(n)]
    elif order == "altitude":
        names.sort(key=lambda cs: (altitudes[cs][0], cs))
        fit = _pool_adjacent([altitudes[cs][0] - spacing_ft * i for i, cs in enumerate(names)])
        levels = [round(f / 100.0) * 100.0 + spacing_ft * i for i, f in enumerate(fit)]
    else:
        raise ValueError(f"unknown layering order {order!r}")
    return [f"ALT {cs} {lvl:.0f}" for cs, lvl in sorted(zip(names, levels))]


def layering_backend(order: str = "altitude", spacing_ft: float = 1000.0) -> ScriptedBackend:
    """Rule-based resolver: at first conflict detection, stack the conflicting aircraft vertically.

    Stateless across calls (decides from the conversation), so one instance
    may serve many runs.
    """

    def policy(messages):
        obs = observations(messages)
        if not obs:
            return tool_message(GET_CONFLICT_INFO)
        cmds = layer_commands(parse_altitudes(obs[0]), order, spacing_ft)
        done = len(obs) - 1
        if done < len(cmds):
            return tool_message(SEND_COMMAND, command=cmds[done])
        return text_message(f"Assigned {len(cmds)} aircraft to separate levels.")

    return ScriptedBackend(policy=policy, identity=f"scripted:layering-{order}")


def altitude_change_step(callsign: str, delta_ft: float) -> Callable[[list[dict]], dict]:
    """A step sending ``ALT <callsign> current+delta`` using the latest rendered altitude."""

    def step(messages):
        for text in reversed(observations(messages)):
            alts = parse_altitudes(text)
            if callsign in alts:
                return tool_message(SEND_COMMAND, command=f"ALT {callsign} {alts[callsign][0] + delta_ft:.0f}")
        raise MalformedToolCall(f"no altitude observed for {callsign}")

    return step


# -- multi-agent scripted roles ---------------------------------------------

_PLAN_LINE = re.compile(r"^\s*-\s*((?:HDG|ALT|SPD)\s+\S+\s+\S+)\s*$", re.M | re.I)


def executor_backend() -> ScriptedBackend:
    """Sends the plan's commands one per turn, reading them from the user input."""

    def policy(messages):
        cmds = _PLAN_LINE.findall(user_input(messages))
        done = len(observations(messages))
        if done < len(cmds):
            return tool_message(SEND_COMMAND, command=cmds[done])
        return text_message(f"Executed {len(cmds)} commands.")

    return ScriptedBackend(policy=policy, identity="scripted:executor")


def verifier_backend(fixes: Callable[[str], str | None], monitor_s: float = 60.0) -> ScriptedBackend:
    """Monitors once, then either concludes or proposes ``fixes(observation)`` as a new plan."""

    def policy(messages):
        obs = observations(messages)
        if not obs:
            return tool_message(CONTINUE_MONITORING, duration=monitor_s)
        plan = fixes(obs[-1])
        return text_message(plan if plan else "No further conflicts detected. Task concluded.")

    return ScriptedBackend(policy=policy, identity="scripted:verifier")


def planner_backend(plan_text: str, look_first: bool = True) -> ScriptedBackend:
    steps: list[Step] = [tool_message(GET_ALL_AIRCRAFT_INFO), tool_message(CONTINUE_MONITORING, duration=10)] if look_first else []
    return ScriptedBackend(steps=steps, identity="scripted:planner", final_text=plan_text)


def make_backend(spec: str, **kw):
    """Build a backend from its id: ``scripted:noop``, ``scripted:layering[-callsign]`` or ``openai:<model>``."""
    kind, _, rest = spec.partition(":")
    if kind == "scripted":
        if rest == "noop":
            return noop_backend()
        if rest in ("layering", "layering-altitude"):
            return layering_backend("altitude")
        if rest == "layering-callsign":
            return layering_backend("callsign")
    elif kind == "openai" and rest:
        return ChatCompletionsBackend(rest, **kw)
    raise ValueError(f"unknown backend {spec!r}; use scripted:noop, scripted:layering or openai:<model>")


def layering_planner_backend(order: str = "altitude") -> ScriptedBackend:
    """Planner counterpart of the layering resolver: looks once, then writes the layered plan."""

    def policy(messages):
        obs = observations(messages)
        if not obs:
            return tool_message(GET_CONFLICT_INFO)
        cmds = layer_commands(parse_altitudes(obs[0]), order)
        return text_message("Plan:\n" + "\n".join(f"- {c}" for c in cmds))

    return ScriptedBackend(policy=policy, identity=f"scripted:layering-planner-{order}")


def make_role_backends(spec: str, **kw) -> dict:
    """Backends for planner, executor and verifier from one backend id."""
    kind, _, rest = spec.partition(":")
    if kind == "scripted" and rest.startswith("layering"):
        order = "callsign" if rest.endswith("callsign") else "altitude"

        def fix(obs):
            alts = parse_altitudes(obs)
            return "New plan:\n" + "\n".join(f"- {c}" for c in layer_commands(alts, order)) if alts else None

        return {"planner": layering_planner_backend(order), "executor": executor_backend(), "verifier": verifier_backend(fix)}
    return {role: make_backend(spec, **kw) for role in ("planner", "executor", "verifier")}
