"""Prompt bundles and their assembly into a chat message list."""

from __future__ import annotations

from dataclasses import dataclass, field
from importlib import resources

from ..errors import ConfigInvalid, ContextOverflow
from .backends import estimate_tokens

ROLES = ("single", "planner", "executor", "verifier")


def load_prompt(role: str) -> str:
    """Shipped system prompt for ``role``."""
    if role not in ROLES:
        raise ConfigInvalid(f"no system prompt for role {role!r}")
    return resources.files("atc_arena.agents").joinpath("prompts", f"{role}.txt").read_text().strip()


@dataclass
class PromptBundle:
    """System prompt, user input, prior chat history and this run's scratchpad.

    Each scratchpad entry is the group of messages produced by one step,
    normally an assistant tool call followed by the tool's reply.
    """

    system_prompt: str
    user_input: str
    chat_history: list[dict] = field(default_factory=list)
    scratchpad: list[list[dict]] = field(default_factory=list)


@dataclass
class AssembledPrompt:
    messages: list[dict]
    tokens: int
    dropped_scratchpad: int = 0
    dropped_history: int = 0


def _cost(messages) -> int:
    return sum(estimate_tokens(m) for m in messages)


def assemble_prompt(bundle: PromptBundle, budget_tokens: int | None = None, tools: list[dict] | None = None) -> AssembledPrompt:
    """Order: system, user input, chat history, scratchpad.

    Over budget, the oldest scratchpad groups go first, then the oldest
    history. The system prompt, the user input and the latest scratchpad
    group are never dropped.
    """
    if not (bundle.system_prompt or "").strip():
        raise ConfigInvalid("system prompt is empty")
    system = {"role": "system", "content": bundle.system_prompt}
    user = {"role": "user", "content": bundle.user_input}
    history = list(bundle.chat_history)
    pad = list(bundle.scratchpad)
    fixed = _cost([system, user]) + (estimate_tokens(tools) if tools else 0)

    def total():
        return fixed + _cost(history) + sum(_cost(g) for g in pad)

    dropped_pad = dropped_hist = 0
    if budget_tokens is not None:
        while total() > budget_tokens and len(pad) > 1:
            pad.pop(0)
            dropped_pad += 1
        while total() > budget_tokens and history:
            history.pop(0)
            dropped_hist += 1
        if total() > budget_tokens:
            raise ContextOverflow(f"minimal prompt needs {total()} tokens, budget is {budget_tokens}")
    messages = [system, user, *history, *(m for g in pad for m in g)]
    return AssembledPrompt(messages, total(), dropped_pad, dropped_hist)
