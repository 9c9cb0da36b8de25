"""Schema-conditioned routing decisions with bounded violation-feedback retry.

A routing policy is any callable mapping (context, optional feedback) to a
structured text document. The decision loop parses and validates the emitted
document and feeds the full violation list back to the policy until it either
produces a valid decision or the retry budget is exhausted.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Optional, Protocol, Sequence

from .schema import Schema, Violation, validate_document

TERMINATE = "TERMINATE"

DEFAULT_RETRY_BUDGET = 3


@dataclass(frozen=True)
class RoutingContext:
    intent: str
    executed: tuple[tuple[str, Any], ...]  # (node_id, output summary)
    admissible: tuple[tuple[str, Schema], ...]
    terminate_allowed: bool = False

    def __post_init__(self):
        if not self.admissible and not self.terminate_allowed:
            raise ValueError("no admissible successors and termination not allowed")
        object.__setattr__(self, "executed", tuple(self.executed))
        object.__setattr__(self, "admissible", tuple(self.admissible))

    def schema_for(self, node_id: str) -> Optional[Schema]:
        for nid, schema in self.admissible:
            if nid == node_id:
                return schema
        return None


@dataclass(frozen=True)
class RoutingDecision:
    choice: str  # node id or TERMINATE
    arguments: dict = field(default_factory=dict)


class RoutingPolicy(Protocol):
    def __call__(
        self, ctx: RoutingContext, feedback: Optional[list[Violation]]
    ) -> str: ...


class RoutingFault(RuntimeError):
    """Policy failed to produce a valid decision within the retry budget."""

    def __init__(self, attempts: list[tuple[str, list[Violation]]]):
        self.attempts = attempts
        lines = [
            f"attempt {i}: {doc!r} -> " + "; ".join(map(str, violations))
            for i, (doc, violations) in enumerate(attempts)
        ]
        super().__init__("routing failed after %d attempts\n%s" % (len(attempts), "\n".join(lines)))


def _check_decision(text: str, ctx: RoutingContext) -> tuple[Optional[RoutingDecision], list[Violation]]:
    try:
        doc = json.loads(text)
    except (json.JSONDecodeError, TypeError) as exc:
        return None, [Violation("$", "JSON decision object", f"parse error: {exc}")]
    if not isinstance(doc, dict) or "choice" not in doc:
        return None, [Violation("choice", "present (required field)", doc)]
    choice = doc["choice"]
    arguments = doc.get("arguments", {})
    if choice == TERMINATE:
        if not ctx.terminate_allowed:
            return None, [Violation("choice", "an admissible node (termination not allowed)", choice)]
        return RoutingDecision(TERMINATE, {}), []
    schema = ctx.schema_for(choice)
    if schema is None:
        admissible = [nid for nid, _ in ctx.admissible]
        return None, [Violation("choice", f"one of {admissible}", choice)]
    violations = validate_document(arguments, schema)
    if violations:
        return None, violations
    return RoutingDecision(choice, arguments), []


def decide(
    ctx: RoutingContext,
    policy: RoutingPolicy,
    retry_budget: int = DEFAULT_RETRY_BUDGET,
) -> RoutingDecision:
    """First valid decision from the policy, retrying with violation feedback.

    The policy is queried once plus up to ``retry_budget`` additional times.
    """
    attempts: list[tuple[str, list[Violation]]] = []
    feedback: Optional[list[Violation]] = None
    for _ in range(retry_budget + 1):
        text = policy(ctx, feedback)
        decision, violations = _check_decision(text, ctx)
        if decision is not None:
            return decision
        attempts.append((text, violations))
        feedback = violations
    raise RoutingFault(attempts)


class ScriptedPolicy:
    """Replays an ordered list of decisions, one per query.

    Violation feedback simply advances to the next scripted entry, which makes
    every routing scenario a deterministic fixture.
    """

    def __init__(self, decisions: Sequence[Any]):
        self._texts = [
            d if isinstance(d, str) else json.dumps(d) for d in decisions
        ]
        self._cursor = 0

    @classmethod
    def from_file(cls, path: str | Path) -> "ScriptedPolicy":
        lines = Path(path).read_text().splitlines()
        return cls([ln for ln in lines if ln.strip()])

    def __call__(self, ctx: RoutingContext, feedback: Optional[list[Violation]]) -> str:
        if self._cursor >= len(self._texts):
            raise RoutingFault([("<script exhausted>", [])])
        text = self._texts[self._cursor]
        self._cursor += 1
        return text


class RulePolicy:
    """Wraps a plain function (ctx, feedback) -> decision dict."""

    def __init__(self, fn: Callable[[RoutingContext, Optional[list[Violation]]], dict]):
        self._fn = fn

    def __call__(self, ctx: RoutingContext, feedback: Optional[list[Violation]]) -> str:
        return json.dumps(self._fn(ctx, feedback))


def auto_forward_policy(ctx: RoutingContext, feedback: Optional[list[Violation]]) -> str:
    """Fast-path rule: single successor with an argument-free schema is taken;
    otherwise terminate when allowed."""
    if len(ctx.admissible) == 1:
        node_id, schema = ctx.admissible[0]
        if not any(f.required for f in schema.fields):
            return json.dumps({"choice": node_id, "arguments": {}})
    if ctx.terminate_allowed:
        return json.dumps({"choice": TERMINATE})
    node_id, _ = ctx.admissible[0]
    return json.dumps({"choice": node_id, "arguments": {}})
