import json

import pytest

from atc_arena.agents.backends import ScriptedBackend, tool_message
from atc_arena.agents.runtime import AgentConfig, run_single_agent
from atc_arena.agents.transcript import TOOL, Transcript
from atc_arena.errors import QualityGateRejected, SummarizerError, UnknownCallsign
from atc_arena.experience.documents import (
    LLMSummarizer,
    anonymize,
    build_experience_document,
    categorize_commands,
    leaked_callsigns,
    relative_command,
    relativize,
)
from atc_arena.experience.embedding import HashingEmbedder
from atc_arena.reference_cases import converging_trio, trio_backend
from atc_arena.sim import AircraftState
from atc_arena.tools import CONTINUE_MONITORING, SEND_COMMAND


@pytest.fixture(scope="module")
def trio_run():
    return run_single_agent(converging_trio(), AgentConfig(backend="scripted:trio"), trio_backend())


def _synthetic(before, after):
    t = Transcript("syn", {"backend": "scripted:x"})
    state = AircraftState("AA001", 0, 0, 30000, 90, 300).to_dict()
    payload = {"ok": True, "parsed": "ALT AA001 31000", "state": state, "conflicts": before, "command": "ALT AA001 31000"}
    t.add(TOOL, "single", 0.0, name=SEND_COMMAND, args={}, payload=payload, text="", is_error=False)
    t.add(TOOL, "single", 30.0, name=CONTINUE_MONITORING, args={}, payload={"conflicts": after}, text="", is_error=False)
    return t


def test_removed_pair_is_helpful():
    assert categorize_commands(_synthetic([["A", "B"]], [])) == [("ALT AA001 31000", True)]


def test_removed_and_added_still_helpful():
    assert categorize_commands(_synthetic([["A", "B"]], [["A", "C"]]))[0][1] is True


def test_nothing_removed_unhelpful():
    assert categorize_commands(_synthetic([["A", "B"]], [["A", "B"], ["A", "C"]]))[0][1] is False


def test_trio_commands_helpful(trio_run):
    flags = categorize_commands(trio_run)
    assert [c for c, _ in flags] == ["HDG AB112 225", "ALT AB426 22000"]
    assert all(h for _, h in flags)


def test_fallback_replay_used_without_observation():
    # command is the last tool call; helpfulness comes from replaying 60 s ahead
    steps = [tool_message(SEND_COMMAND, command="ALT AB426 22000")]
    tr = run_single_agent(converging_trio(), AgentConfig(), ScriptedBackend(steps=steps))
    [(cmd, helpful)] = categorize_commands(tr)
    assert cmd == "ALT AB426 22000" and helpful


def test_relative_examples():
    state = AircraftState("FLIGHT3", 0, 0, 23328.64, 270, 400)
    assert relative_command("ALT FLIGHT3 22800", state) == "FLIGHT3 descend 500 ft"
    assert relative_command("HDG FLIGHT3 225", state) == "FLIGHT3 turn left 45 deg"
    assert relative_command("HDG FLIGHT3 10", state) == "FLIGHT3 turn right 100 deg"
    assert relative_command("SPD FLIGHT3 430", state) == "FLIGHT3 increase speed by 30 kt"
    assert relative_command("ALT FLIGHT3 23330", state) == "FLIGHT3 maintain current altitude"


def test_relativize_unknown():
    with pytest.raises(UnknownCallsign):
        relativize(["ALT ZZ999 100"], {})


def test_anonymize_mapping_and_overlap():
    texts, mapping = anonymize(["FLIGHT1 and FLIGHT10 near flight1"], ["FLIGHT10", "FLIGHT1"])
    assert mapping == {"FLIGHT1": "AC1", "FLIGHT10": "AC2"}
    assert texts == ["AC1 and AC2 near AC1"]


def test_document_from_trio(trio_run):
    doc = build_experience_document(trio_run, embedder=HashingEmbedder(256), created_at="2024-01-01T00:00:00")
    assert doc.num_aircraft == 3 and doc.conflict_formation == "Converging"
    assert [c.command for c in doc.commands] == ["AC1 turn left 45 deg", "AC3 descend 2000 ft"]
    assert all(c.helpful for c in doc.commands)
    assert leaked_callsigns(doc.text_fields(), ["AB112", "AB426", "AB310"]) == []
    assert doc.embedding.shape == (256,)
    assert doc.source_backend == "scripted:trio"


def test_quality_gate(trio_run):
    with pytest.raises(QualityGateRejected):
        build_experience_document(trio_run, trusted_backends=["openai:gpt-4o"])
    assert build_experience_document(trio_run, trusted_backends=["scripted:trio"]).id.startswith("exp-converging-trio-")


def test_zero_commands():
    tr = run_single_agent(converging_trio(), AgentConfig(), ScriptedBackend(steps=[]))
    doc = build_experience_document(tr, created_at="x")
    assert doc.commands == [] and "No commands were issued." in doc.render()


def test_anonymization_over_many_documents(layering_transcripts):
    for tr in layering_transcripts[:100]:
        doc = build_experience_document(tr, created_at="x")
        callsigns = [a["callsign"] for a in tr.scenario["aircraft"]]
        assert leaked_callsigns(doc.text_fields() + [doc.render()], callsigns) == []


class _Reply:
    def __init__(self, content):
        self.message = {"role": "assistant", "content": content}
        self.usage = {}


class _FakeBackend:
    identity = "fake"

    def __init__(self, content):
        self.content = content

    def complete(self, messages, tools, temperature):
        return _Reply(self.content)


def test_llm_summarizer(trio_run):
    body = json.dumps({"description": "AB112 and AB426 converge", "insights": ["a", "b"]})
    doc = build_experience_document(trio_run, LLMSummarizer(_FakeBackend("```json\n" + body + "\n```")), created_at="x")
    assert doc.conflict_description == "AC1 and AC3 converge"


def test_llm_summarizer_bad_reply(trio_run):
    with pytest.raises(SummarizerError):
        build_experience_document(trio_run, LLMSummarizer(_FakeBackend("not json")))
