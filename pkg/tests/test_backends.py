import json

import httpx
import pytest

from atc_arena.agents.backends import (
    AssistantText,
    ChatCompletionsBackend,
    ScriptedBackend,
    ToolInvocation,
    layer_commands,
    make_backend,
    parse_altitudes,
    parse_backend_output,
    text_message,
    tool_message,
)
from atc_arena.errors import BackendError, MalformedToolCall


def test_parse_text_and_tool():
    assert parse_backend_output("hi") == AssistantText("hi")
    assert parse_backend_output(text_message("done")) == AssistantText("done")
    out = parse_backend_output(tool_message("CONTINUEMONITORING", "c1", duration=10))
    assert out == ToolInvocation("CONTINUEMONITORING", {"duration": 10}, "c1")


def test_parse_full_completion_first_call_only():
    msg = tool_message("GETCONFLICTINFO", "a")
    msg["tool_calls"].append(tool_message("GETALLAIRCRAFTINFO", "b")["tool_calls"][0])
    out = parse_backend_output({"choices": [{"message": msg}]})
    assert out.name == "GETCONFLICTINFO" and out.call_id == "a"


@pytest.mark.parametrize(
    "raw",
    [
        {"tool_calls": [{"function": {"name": "SENDCOMMAND", "arguments": "{bad"}}]},
        {"tool_calls": [{"function": {"name": "SENDCOMMAND", "arguments": "{}"}}]},
        {"tool_calls": [{"function": {"name": "CONTINUEMONITORING", "arguments": '{"duration": "x"}'}}]},
        {"tool_calls": [{"nofunction": 1}]},
        42,
    ],
)
def test_parse_malformed(raw):
    with pytest.raises(MalformedToolCall):
        parse_backend_output(raw)


def test_unknown_tool_passes_through():
    out = parse_backend_output(tool_message("FLYAWAY", "z", where="north"))
    assert out.name == "FLYAWAY"


def test_scripted_steps_then_final():
    b = ScriptedBackend(steps=[tool_message("GETCONFLICTINFO")], final_text="bye")
    first = b.complete([], [], 0.3)
    assert first.message["tool_calls"][0]["id"] == "call_0"
    assert first.usage["completion_tokens"] > 0
    assert b.complete([], [], 0.3).message == text_message("bye")


def test_layer_commands_altitude_order():
    alts = {"A": (30000.0, 30000.0, "level"), "B": (30000.0, 30000.0, "level"), "C": (35000.0, 35000.0, "level")}
    assert layer_commands(alts) == ["ALT A 29500", "ALT B 30500", "ALT C 35000"]
    assert layer_commands(alts, "callsign") == ["ALT A 30700", "ALT B 31700", "ALT C 32700"]
    with pytest.raises(ValueError):
        layer_commands(alts, "random")


def test_parse_altitudes():
    text = "FLIGHT2: Altitude 23322.4 ft -> 23000.0 ft (descending)"
    assert parse_altitudes(text) == {"FLIGHT2": (23322.4, 23000.0, "descending")}


def test_make_backend():
    assert make_backend("scripted:noop").identity == "scripted:noop"
    assert make_backend("scripted:layering").identity == "scripted:layering-altitude"
    assert make_backend("openai:gpt-4o", client=httpx.Client()).identity == "openai:gpt-4o"
    with pytest.raises(ValueError):
        make_backend("local:thing")


def _backend(handler, **kw):
    return ChatCompletionsBackend(
        "m", base_url="http://x/v1", api_key="k", client=httpx.Client(transport=httpx.MockTransport(handler)),
        sleep=lambda s: None, **kw,
    )


def test_chat_backend_request_and_retry():
    seen = []

    def handler(req):
        seen.append(json.loads(req.read()))
        if len(seen) == 1:
            return httpx.Response(429)
        return httpx.Response(200, json={"choices": [{"message": text_message("ok")}], "usage": {"prompt_tokens": 3, "completion_tokens": 1}})

    b = _backend(handler)
    reply = b.complete([{"role": "user", "content": "hi"}], [{"type": "function"}], 0.3)
    assert reply.message["content"] == "ok" and reply.usage["prompt_tokens"] == 3
    assert len(seen) == 2 and seen[0]["parallel_tool_calls"] is False and seen[0]["temperature"] == 0.3


def test_chat_backend_gives_up():
    b = _backend(lambda req: httpx.Response(503), retries=2)
    with pytest.raises(BackendError):
        b.complete([], [], 0.3)
    assert b.attempts == 2


def test_chat_backend_client_error_not_retried():
    b = _backend(lambda req: httpx.Response(401))
    with pytest.raises(BackendError):
        b.complete([], [], 0.3)
    assert b.attempts == 1
