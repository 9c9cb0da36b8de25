"""Candidate-combination search over the knowledge store.

Wraps the two bundled query templates: ``intra_topology.rq`` proposes pairs
whose components have each succeeded on the same topology before, and
``cross_topology.rq`` relaxes that via a role-equivalence closure so blocks
can move to topologies they have never been built on.
"""

from __future__ import annotations

from importlib import resources
from typing import NamedTuple, Optional

from ..query import GuardConfig, evaluate, inject_values, parse
from ..store import TripleStore


class Candidate(NamedTuple):
    name: str
    topology: str
    metal_node: str
    organic_linker: str


def load_template(name: str) -> str:
    return resources.files("grafico.mof").joinpath(name).read_text(encoding="utf-8")


def _propose(
    template_name: str,
    store: TripleStore,
    restrict: Optional[dict[str, list[str]]],
    guards: GuardConfig,
) -> list[Candidate]:
    text = inject_values(load_template(template_name), restrict or {})
    rows = evaluate(parse(text), store, guards)
    out = []
    for row in rows:
        name = row.get("predicted_mof_name")
        out.append(
            Candidate(
                name=name.value if name is not None else "",
                topology=str(row["topology"]),
                metal_node=str(row["metal_node"]),
                organic_linker=str(row["organic_linker"]),
            )
        )
    return out


def propose_intra_topology(
    store: TripleStore,
    restrict: Optional[dict[str, list[str]]] = None,
    guards: GuardConfig = GuardConfig(),
) -> list[Candidate]:
    """New (topology, node, linker) combinations from per-component precedent."""
    return _propose("intra_topology.rq", store, restrict, guards)


def propose_cross_topology(
    store: TripleStore,
    restrict: Optional[dict[str, list[str]]] = None,
    guards: GuardConfig = GuardConfig(),
) -> list[Candidate]:
    """Combinations allowed to cross topologies via role equivalence."""
    return _propose("cross_topology.rq", store, restrict, guards)
