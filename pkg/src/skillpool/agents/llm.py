"""Chat-completion wire client and a scripted stand-in for tests."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import Optional, Protocol, Sequence

import httpx

API_KEY_ENV = "DIVSKILL_LLM_KEY"


class TransportError(RuntimeError):
    pass


@dataclass(frozen=True)
class ToolCall:
    id: str
    name: str
    arguments: str  # raw JSON text as sent by the model

    def parsed(self) -> dict:
        """Decoded arguments; raises ValueError on anything but a JSON object."""
        value = json.loads(self.arguments) if self.arguments else {}
        if not isinstance(value, dict):
            raise ValueError("tool arguments must be a JSON object")
        return value


@dataclass
class AssistantMessage:
    content: str = ""
    tool_calls: list[ToolCall] = field(default_factory=list)

    def to_message(self) -> dict:
        msg: dict = {"role": "assistant", "content": self.content}
        if self.tool_calls:
            msg["tool_calls"] = [
                {"id": c.id, "type": "function", "function": {"name": c.name, "arguments": c.arguments}}
                for c in self.tool_calls
            ]
        return msg


class ChatClient(Protocol):
    def complete(self, messages: Sequence[dict], tools: Optional[Sequence[dict]] = None,
                 temperature: float = 0.2, max_tokens: int = 64000) -> AssistantMessage: ...


def parse_response(body: dict) -> AssistantMessage:
    """Accepts OpenAI-style ``choices[0].message`` or a bare message object."""
    msg = body
    if "choices" in body:
        if not body["choices"]:
            raise TransportError("response has no choices")
        msg = body["choices"][0].get("message", {})
    calls = []
    for n, raw in enumerate(msg.get("tool_calls") or []):
        fn = raw.get("function", raw)
        args = fn.get("arguments", "")
        if not isinstance(args, str):
            args = json.dumps(args)
        calls.append(ToolCall(raw.get("id", f"call_{n}"), fn.get("name", ""), args))
    return AssistantMessage(msg.get("content") or "", calls)


class HTTPChatClient:
    """POSTs ``{model, messages, tools, temperature, max_tokens}`` to ``endpoint``."""

    def __init__(self, endpoint: str, model: str, api_key: Optional[str] = None, timeout_s: float = 300.0):
        self.endpoint = endpoint
        self.model = model
        self.api_key = api_key if api_key is not None else os.environ.get(API_KEY_ENV, "")
        self.timeout_s = timeout_s

    def complete(self, messages, tools=None, temperature=0.2, max_tokens=64000) -> AssistantMessage:
        payload = {
            "model": self.model,
            "messages": list(messages),
            "temperature": temperature,
            "max_tokens": max_tokens,
        }
        if tools:
            payload["tools"] = list(tools)
        headers = {"Authorization": f"Bearer {self.api_key}"} if self.api_key else {}
        try:
            resp = httpx.post(self.endpoint, json=payload, headers=headers, timeout=self.timeout_s)
            resp.raise_for_status()
            return parse_response(resp.json())
        except (httpx.HTTPError, ValueError) as exc:
            raise TransportError(str(exc)) from exc


class ScriptedClient:
    """Replays canned assistant messages in order; records every request.

    Entries may be ``AssistantMessage`` objects or exceptions to raise. Once the
    script runs out, the client answers with empty text.
    """

    def __init__(self, script: Sequence[AssistantMessage | Exception]):
        self.script = list(script)
        self.requests: list[dict] = []

    def complete(self, messages, tools=None, temperature=0.2, max_tokens=64000) -> AssistantMessage:
        self.requests.append({"messages": [dict(m) for m in messages], "tools": tools})
        if not self.script:
            return AssistantMessage("")
        item = self.script.pop(0)
        if isinstance(item, Exception):
            raise item
        return item


def call(name: str, n: int = 0, **arguments) -> ToolCall:
    """Shorthand for building tool calls in scripts."""
    return ToolCall(f"call_{n}", name, json.dumps(arguments))
