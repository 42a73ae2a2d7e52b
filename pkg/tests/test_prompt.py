import pytest

from atc_arena.agents.prompt import ROLES, PromptBundle, assemble_prompt, load_prompt
from atc_arena.errors import ConfigInvalid, ContextOverflow


def _group(i, size=400):
    call = {"role": "assistant", "content": None, "tool_calls": [{"id": f"c{i}", "function": {"name": "GETCONFLICTINFO"}}]}
    return [call, {"role": "tool", "tool_call_id": f"c{i}", "content": "x" * size}]


@pytest.mark.parametrize("role", ROLES)
def test_prompts_ship(role):
    assert load_prompt(role)


def test_order():
    b = PromptBundle("sys", "user", [{"role": "user", "content": "old"}], [_group(0, 10)])
    msgs = assemble_prompt(b).messages
    assert [m["role"] for m in msgs] == ["system", "user", "user", "assistant", "tool"]
    assert msgs[0]["content"] == "sys" and msgs[1]["content"] == "user"


def test_truncation_drops_oldest_scratchpad_first():
    history = [{"role": "user", "content": "h" * 2000}]
    b = PromptBundle("s" * 400, "task", history, [_group(i, 4000) for i in range(20)])
    out = assemble_prompt(b, 8000)
    assert out.tokens <= 8000
    assert out.dropped_scratchpad > 0 and out.dropped_history == 0
    assert out.messages[-1]["tool_call_id"] == "c19"
    assert out.messages[0]["content"] == "s" * 400


def test_history_dropped_after_scratchpad():
    b = PromptBundle("s", "task", [{"role": "user", "content": "h" * 40000}], [_group(i, 4000) for i in range(3)])
    out = assemble_prompt(b, 8000)
    assert out.dropped_scratchpad == 2 and out.dropped_history == 1


def test_overflow_and_empty_system():
    with pytest.raises(ContextOverflow):
        assemble_prompt(PromptBundle("s" * 40000, "t"), 8000)
    with pytest.raises(ConfigInvalid):
        assemble_prompt(PromptBundle(" ", "t"))
