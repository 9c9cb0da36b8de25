"""Typed execution graphs and their runtime.

A graph declares nodes (typed transformations), admissible edges, and an entry
point. A run walks the graph: each step executes the current node's handler on
a validated input document, then consults the routing policy to pick the next
node and instantiate its arguments. Cycles are first-class (repair loops), and
independent runs can share a device pool for compute-slot isolation.
"""

from __future__ import annotations

import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Optional, Sequence

from .atoms import TokenGenerator
from .router import (
    TERMINATE,
    RoutingContext,
    RoutingFault,
    RoutingPolicy,
    _check_decision,
)
from .scheduler import DevicePool
from .schema import Schema, Violation, validate_document

TERMINATED = "TERMINATED"

DEFAULT_STEP_BUDGET = 64
DEFAULT_CORRECTION_BUDGET = 3


class InputRejected(ValueError):
    """Initial input still invalid after the correction budget was spent."""

    def __init__(self, violations: list[Violation]):
        self.violations = violations
        super().__init__("; ".join(map(str, violations)))


class HandlerFault(RuntimeError):
    """Node handler raised or emitted a type-violating output.

    The run is left resumable at the same node with its input intact.
    """

    def __init__(self, node_id: str, cause: Any):
        self.node_id = node_id
        self.cause = cause
        super().__init__(f"handler for {node_id} failed: {cause}")


class BudgetExhausted(RuntimeError):
    pass


@dataclass(frozen=True)
class NodeSpec:
    node_id: str
    input_schema: Schema
    output_schema: Schema
    handler: str
    requires_compute_slot: bool = False


@dataclass(frozen=True)
class EdgeSpec:
    src: str
    dst: str
    note: str = ""


@dataclass(frozen=True)
class GraphSpec:
    graph_id: str
    nodes: tuple[NodeSpec, ...]
    edges: tuple[EdgeSpec, ...]
    entry: str
    allow_early_exit: bool = False

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "edges", tuple(self.edges))

    def node(self, node_id: str) -> NodeSpec:
        for n in self.nodes:
            if n.node_id == node_id:
                return n
        raise KeyError(node_id)

    def successors(self, node_id: str) -> list[str]:
        return [e.dst for e in self.edges if e.src == node_id]


def validate_graph(spec: GraphSpec) -> list[str]:
    """Structural violations of the graph, empty list if well-formed."""
    out: list[str] = []
    ids = [n.node_id for n in spec.nodes]
    if len(ids) != len(set(ids)):
        dupes = sorted({i for i in ids if ids.count(i) > 1})
        out.append(f"duplicate node ids: {dupes}")
    known = set(ids)
    for e in spec.edges:
        for endpoint in (e.src, e.dst):
            if endpoint not in known:
                out.append(f"edge {e.src}->{e.dst}: unknown endpoint {endpoint}")
    if spec.entry not in known:
        out.append(f"entry {spec.entry} is not a node")
        return out
    # Reachability from entry over declared edges.
    seen = {spec.entry}
    frontier = [spec.entry]
    while frontier:
        nxt = frontier.pop()
        for e in spec.edges:
            if e.src == nxt and e.dst in known and e.dst not in seen:
                seen.add(e.dst)
                frontier.append(e.dst)
    for nid in ids:
        if nid not in seen:
            out.append(f"node {nid} unreachable from entry")
    if not spec.allow_early_exit and all(spec.successors(n) for n in ids):
        out.append("no exit: every node has successors and early exit is disabled")
    return out


class HandlerRegistry:
    """Named typed transformations; graphs reference handlers by name."""

    def __init__(self):
        self._handlers: dict[str, Callable[[dict], dict]] = {}

    def register(self, name: str, fn: Optional[Callable[[dict], dict]] = None):
        if fn is None:  # decorator form
            def wrap(f):
                self.register(name, f)
                return f

            return wrap
        if name in self._handlers:
            raise ValueError(f"handler {name} already registered")
        self._handlers[name] = fn
        return fn

    def get(self, name: str) -> Callable[[dict], dict]:
        if name not in self._handlers:
            raise KeyError(f"no handler registered under {name}")
        return self._handlers[name]

    def __contains__(self, name: str) -> bool:
        return name in self._handlers


@dataclass
class RunState:
    run_id: str
    graph: GraphSpec
    intent: str
    current: str  # node_id or TERMINATED
    pending_input: dict
    step_budget: int = DEFAULT_STEP_BUDGET
    artifacts: list[tuple[str, Any]] = field(default_factory=list)
    events: list[dict] = field(default_factory=list)
    _seq: int = 0
    event_sink: Optional[Callable[[dict], None]] = None

    def log(self, kind: str, node: Optional[str], duration_ms: float = 0.0, **detail) -> dict:
        event = {
            "run_id": self.run_id,
            "seq": self._seq,
            "kind": kind,
            "node": node,
            "duration_ms": round(duration_ms, 3),
            "detail": detail,
        }
        self._seq += 1
        self.events.append(event)
        if self.event_sink is not None:
            self.event_sink(event)
        return event


def _correct_input(
    spec: GraphSpec,
    intent: str,
    initial_input: dict,
    policy: RoutingPolicy,
    budget: int,
    run: RunState,
) -> dict:
    entry = spec.node(spec.entry)
    violations = validate_document(initial_input, entry.input_schema)
    if not violations:
        return initial_input
    ctx = RoutingContext(
        intent=intent,
        executed=(),
        admissible=((entry.node_id, entry.input_schema),),
        terminate_allowed=False,
    )
    doc = initial_input
    for _ in range(budget):
        text = policy(ctx, violations)
        decision, violations = _check_decision(text, ctx)
        if decision is not None:
            run.log("correction", entry.node_id, accepted=True)
            return decision.arguments
        run.log("correction", entry.node_id, accepted=False,
                violations=[str(v) for v in violations])
        doc = text
    raise InputRejected(violations)


def start_run(
    spec: GraphSpec,
    intent: str,
    initial_input: dict,
    policy: RoutingPolicy,
    correction_budget: int = DEFAULT_CORRECTION_BUDGET,
    step_budget: int = DEFAULT_STEP_BUDGET,
    tokens: Optional[TokenGenerator] = None,
    event_sink: Optional[Callable[[dict], None]] = None,
) -> RunState:
    """Validated RunState positioned at the entry node.

    Invalid initial input is handed to the policy with the violation list for
    up to ``correction_budget`` correction attempts before InputRejected.
    """
    problems = validate_graph(spec)
    if problems:
        raise ValueError("invalid graph: " + "; ".join(problems))
    tokens = tokens or TokenGenerator()
    run = RunState(
        run_id=tokens.next_token(),
        graph=spec,
        intent=intent,
        current=spec.entry,
        pending_input={},
        step_budget=step_budget,
        event_sink=event_sink,
    )
    run.pending_input = _correct_input(
        spec, intent, initial_input, policy, correction_budget, run
    )
    run.log("start", spec.entry, intent=intent)
    return run


def step(
    run: RunState,
    policy: RoutingPolicy,
    registry: HandlerRegistry,
    pool: Optional[DevicePool] = None,
) -> dict:
    """Execute the current node, route to a successor, return the step event."""
    if run.current == TERMINATED:
        raise RuntimeError("run already terminated")
    if run.step_budget <= 0:
        raise BudgetExhausted(f"run {run.run_id} exhausted its step budget")
    node = run.graph.node(run.current)
    handler = registry.get(node.handler)

    lease = None
    if node.requires_compute_slot and pool is not None:
        lease = pool.acquire()
    began = time.monotonic()
    try:
        output = handler(run.pending_input)
    except Exception as exc:
        run.log("fault", node.node_id, (time.monotonic() - began) * 1e3, error=str(exc))
        raise HandlerFault(node.node_id, exc) from exc
    finally:
        if lease is not None:
            pool.release(lease)
    elapsed_ms = (time.monotonic() - began) * 1e3

    bad = validate_document(output, node.output_schema)
    if bad:
        run.log("fault", node.node_id, elapsed_ms, error="output schema violation",
                violations=[str(v) for v in bad])
        raise HandlerFault(node.node_id, "; ".join(map(str, bad)))

    run.artifacts.append((node.node_id, output))
    run.log("execute", node.node_id, elapsed_ms)
    run.step_budget -= 1

    successors = run.graph.successors(node.node_id)
    terminate_allowed = run.graph.allow_early_exit or not successors
    ctx = RoutingContext(
        intent=run.intent,
        executed=tuple((nid, _summary(value)) for nid, value in run.artifacts),
        admissible=tuple(
            (nid, run.graph.node(nid).input_schema) for nid in successors
        ),
        terminate_allowed=terminate_allowed,
    )
    from .router import decide

    try:
        decision = decide(ctx, policy)
    except RoutingFault:
        run.log("fault", node.node_id, kind_detail="routing")
        raise
    if decision.choice == TERMINATE:
        run.current = TERMINATED
        run.pending_input = {}
    else:
        run.current = decision.choice
        run.pending_input = decision.arguments
    event = run.log("route", node.node_id, executed=node.node_id, next=run.current)
    return event


def _summary(value: Any) -> str:
    text = json.dumps(value, default=str)
    return text if len(text) <= 200 else text[:197] + "..."


def run_to_completion(
    run: RunState,
    policy: RoutingPolicy,
    registry: HandlerRegistry,
    pool: Optional[DevicePool] = None,
) -> list[tuple[str, Any]]:
    """Step until termination; all (node_id, output) artifacts in order."""
    while run.current != TERMINATED:
        step(run, policy, registry, pool)
    return list(run.artifacts)


def run_parallel(
    requests: Sequence[tuple[GraphSpec, str, dict]],
    policy_factory: Callable[[], RoutingPolicy],
    registry: HandlerRegistry,
    pool: Optional[DevicePool] = None,
    correction_budget: int = DEFAULT_CORRECTION_BUDGET,
    step_budget: int = DEFAULT_STEP_BUDGET,
    event_sink: Optional[Callable[[dict], None]] = None,
) -> list[Any]:
    """Concurrent runs sharing one device pool; results preserve request order.

    Each result is either the artifact list or the exception that stopped the
    run. One run's failure never aborts its siblings.
    """
    if not requests:
        return []
    tokens = TokenGenerator()

    def one(request):
        spec, intent, initial_input = request
        policy = policy_factory()
        try:
            run = start_run(
                spec, intent, initial_input, policy,
                correction_budget, step_budget, tokens, event_sink,
            )
            return run_to_completion(run, policy, registry, pool)
        except Exception as exc:
            return exc

    with ThreadPoolExecutor(max_workers=len(requests)) as pool_exec:
        return list(pool_exec.map(one, requests))


def load_graph_spec(
    path: str | Path,
    schemas: dict[str, Schema],
    registry: Optional[HandlerRegistry] = None,
) -> GraphSpec:
    """Graph from a declarative JSON or TOML document.

    Expected shape::

        graph_id = "opt_freq"
        entry = "opt"
        allow_early_exit = true
        [[nodes]]
        id = "opt"
        input_schema = "geometry"
        output_schema = "geometry"
        handler = "optimize"
        requires_compute_slot = true
        [[edges]]
        from = "opt"
        to = "freq"
    """
    path = Path(path)
    text = path.read_text()
    if path.suffix == ".toml":
        try:
            import tomllib
        except ModuleNotFoundError:
            import tomli as tomllib
        doc = tomllib.loads(text)
    else:
        doc = json.loads(text)

    def schema(name):
        if name not in schemas:
            raise KeyError(f"unknown schema {name}")
        return schemas[name]

    nodes = tuple(
        NodeSpec(
            node_id=n["id"],
            input_schema=schema(n["input_schema"]),
            output_schema=schema(n["output_schema"]),
            handler=n["handler"],
            requires_compute_slot=bool(n.get("requires_compute_slot", False)),
        )
        for n in doc.get("nodes", [])
    )
    edges = tuple(
        EdgeSpec(e["from"], e["to"], e.get("note", ""))
        for e in doc.get("edges", [])
    )
    spec = GraphSpec(
        graph_id=doc["graph_id"],
        nodes=nodes,
        edges=edges,
        entry=doc["entry"],
        allow_early_exit=bool(doc.get("allow_early_exit", False)),
    )
    if registry is not None:
        missing = [n.handler for n in nodes if n.handler not in registry]
        if missing:
            raise KeyError(f"unregistered handlers: {missing}")
    return spec
