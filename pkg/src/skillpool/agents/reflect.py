"""LLM-backed skill optimizer: one reflect-and-propose call per position."""

from __future__ import annotations

import re
from typing import Sequence

from .llm import ChatClient

REFLECTION_SYSTEM = """You improve strategy prompts for a SQL-writing agent.
You receive the current strategy and runs where the agent failed while using it.
Return a revised strategy, and nothing else, that would help the agent recover those failures.
Rules:
- Keep it a general strategy. Never mention concrete table names, column names, values,
  or schema layouts from the failures.
- Never mention functions or syntax specific to one SQL dialect.
- The strategy must work on unseen databases and dialects.
- Prefer short, concrete guidance over long lists."""

_FENCE = re.compile(r"^```[a-z]*\s*|\s*```$", re.IGNORECASE)


def format_failures(failures: Sequence, max_failures: int = 8, max_chars: int = 1500) -> str:
    blocks = []
    for n, (instance, trajectory, summary) in enumerate(failures[:max_failures], 1):
        actions = " -> ".join(trajectory.actions) if trajectory is not None else "(none)"
        text = f"Failure {n}\nQuestion: {instance.question}\nActions: {actions}\nOutcome: {summary}"
        blocks.append(text[:max_chars])
    return "\n\n".join(blocks)


class LLMSkillOptimizer:
    def __init__(self, client: ChatClient, temperature: float = 1.0, max_tokens: int = 64000):
        self.client = client
        self.temperature = temperature
        self.max_tokens = max_tokens

    def optimize(self, prompt: str, failures: Sequence) -> str:
        messages = [
            {"role": "system", "content": REFLECTION_SYSTEM},
            {"role": "user", "content": f"Current strategy:\n{prompt}\n\n{format_failures(failures)}"},
        ]
        reply = self.client.complete(messages, None, self.temperature, self.max_tokens)
        text = _FENCE.sub("", (reply.content or "").strip()).strip()
        return text or prompt
