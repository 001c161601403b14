"""Tool-calling agent loop with hard turn and execution budgets.

One turn is one model call. The skill prompt is the system message, verbatim;
the tool schemas and dispatch are the same for every skill.
"""

from __future__ import annotations

import json
import logging
import re
import time
from pathlib import Path
from typing import Callable, Optional

from ..core import Instance, Skill
from ..execution import ExecError, Limits, execute_sql, schema_summary
from ..trajectory import extract_actions, is_metadata_query
from .base import Budgets, RunResult
from .llm import AssistantMessage, ChatClient, TransportError
from .tools import REQUIRED_ARG, TOOL_NAMES, TOOL_SCHEMAS, ToolBox

logger = logging.getLogger(__name__)

SUBMITTED = "submitted"
BUDGET_EXHAUSTED = "budget_exhausted"
TRANSPORT_ERROR = "transport_error"

_SQL_BLOCK = re.compile(r"```sql\s*(.*?)```", re.IGNORECASE | re.DOTALL)

REPAIR_NUDGE = (
    "Your last tool call was malformed. Call one of: "
    + ", ".join(TOOL_NAMES)
    + ", with a JSON object argument."
)
CONTINUE_NUDGE = "Continue. Use the tools, and call submit_final_sql when you are done."


def user_message(instance: Instance, schema: str) -> str:
    parts = [f"Question: {instance.question}", f"SQL dialect: {instance.dialect}"]
    if schema:
        parts.append(f"Database schema:\n{schema}")
    return "\n\n".join(parts)


def _complete_with_retry(client: ChatClient, messages, budgets: Budgets, retries: int,
                         backoff_s: float, sleep: Callable[[float], None]) -> AssistantMessage:
    for attempt in range(retries + 1):
        try:
            return client.complete(messages, TOOL_SCHEMAS, budgets.temperature, budgets.max_completion_tokens)
        except TransportError:
            if attempt == retries:
                raise
            logger.warning("transport error, retry %d/%d", attempt + 1, retries)
            sleep(backoff_s * 2**attempt)
    raise AssertionError("unreachable")


def _validated_args(name: str, raw: str) -> Optional[dict]:
    if name not in TOOL_NAMES:
        return None
    try:
        args = json.loads(raw) if raw else {}
    except ValueError:
        return None
    if not isinstance(args, dict) or not isinstance(args.get(REQUIRED_ARG[name]), str):
        return None
    return args


def agent_loop(client: ChatClient, skill: Skill, instance: Instance, budgets: Budgets = Budgets(),
               tools: Optional[ToolBox] = None, retries: int = 3, backoff_s: float = 1.0,
               sleep: Callable[[float], None] = time.sleep) -> RunResult:
    tools = tools or ToolBox(instance)
    messages: list[dict] = [
        {"role": "system", "content": skill.prompt},
        {"role": "user", "content": user_message(instance, schema_summary(instance.db_ref, tools.db_root))},
    ]
    log: list[dict] = []
    turns = tool_calls = execs = 0
    last_sql: Optional[str] = None
    submitted: Optional[str] = None
    nudged = False
    status = BUDGET_EXHAUSTED

    while turns < budgets.max_turns and submitted is None:
        try:
            reply = _complete_with_retry(client, messages, budgets, retries, backoff_s, sleep)
        except TransportError as exc:
            logger.error("giving up on %s/%s: %s", skill.skill_id, instance.instance_id, exc)
            status = TRANSPORT_ERROR
            break
        turns += 1
        messages.append(reply.to_message())
        for draft in _SQL_BLOCK.findall(reply.content or ""):
            log.append({"type": "draft", "sql": draft.strip()})
            last_sql = draft.strip()
        if not reply.tool_calls:
            messages.append({"role": "user", "content": CONTINUE_NUDGE})
            continue

        stop = False
        for tc in reply.tool_calls:
            if stop or submitted is not None:
                messages.append({"role": "tool", "tool_call_id": tc.id, "content": "Skipped."})
                continue
            args = _validated_args(tc.name, tc.arguments)
            if args is None:
                text = REPAIR_NUDGE if not nudged else "Malformed tool call ignored."
                nudged = True
                messages.append({"role": "tool", "tool_call_id": tc.id, "content": text})
                continue
            if tool_calls >= budgets.max_turns:
                messages.append({"role": "tool", "tool_call_id": tc.id, "content": "Tool budget exhausted."})
                stop = True
                continue
            if tc.name == "execute_sql" and execs >= budgets.max_sql_execs:
                messages.append({"role": "tool", "tool_call_id": tc.id, "content": "Execution budget exhausted."})
                stop = True
                continue
            tool_calls += 1
            if tc.name == "execute_sql":
                execs += 1
            text, error = tools.dispatch(tc.name, args)
            event = {"type": "tool", "name": tc.name, "arguments": args}
            if error:
                event["error"] = error
            log.append(event)
            messages.append({"role": "tool", "tool_call_id": tc.id, "content": text})
            if tc.name == "submit_final_sql":
                submitted = args["sql"]
                status = SUBMITTED
            elif tc.name in ("execute_sql", "review_sql") and not is_metadata_query(args["sql"]):
                last_sql = args["sql"]
        if stop:
            break

    sql = submitted if submitted is not None else last_sql
    trajectory = extract_actions(log, skill.skill_id, instance.instance_id)
    result = error = None
    if sql:
        try:
            result = execute_sql(instance.db_ref, sql, tools.limits, tools.db_root)
        except ExecError as exc:
            error = exc
    return RunResult(sql=sql, trajectory=trajectory, result=result, error=error, status=status, log=log)


class AgentExecutor:
    """Executor backed by ``agent_loop``; one ToolBox per run."""

    def __init__(self, client: ChatClient, budgets: Budgets = Budgets(), db_root: Optional[Path] = None,
                 limits: Limits = Limits(), retries: int = 3, backoff_s: float = 1.0):
        self.client = client
        self.budgets = budgets
        self.db_root = db_root
        self.limits = limits
        self.retries = retries
        self.backoff_s = backoff_s

    def run(self, skill: Skill, instance: Instance, budgets: Optional[Budgets] = None) -> RunResult:
        tools = ToolBox(instance, self.db_root, self.limits)
        return agent_loop(self.client, skill, instance, budgets or self.budgets, tools,
                          self.retries, self.backoff_s)
