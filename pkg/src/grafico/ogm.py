"""Object-graph mapping over the triple store.

Class descriptors declare how typed records serialize to triples and back:
one type-assertion triple, one triple per data property, one link per object
property. Pulls reconstruct record graphs to a chosen depth, with lazy stubs
past the horizon, and the canonicalization registry guarantees one instance
per equivalence key under concurrent retrieve-or-create calls.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Optional

import numpy as np

from .atoms import IRI, TokenGenerator
from .store import Literal, NotFound, RDF_TYPE, Triple, TripleStore

LARGE_ARRAY_ELEMENTS = 256


class UnmappedType(TypeError):
    """Record type has no registered class descriptor."""


class DescriptorMismatch(KeyError):
    """Stored class IRI has no registered descriptor."""


class UnknownOntology(KeyError):
    pass


@dataclass(frozen=True)
class DataProperty:
    predicate: IRI
    datatype: str  # string | integer | double | boolean | blob | array
    large: bool = False


@dataclass(frozen=True)
class ObjectProperty:
    predicate: IRI
    target: str  # type_name of the target class
    many: bool = False


@dataclass(frozen=True)
class ClassDescriptor:
    class_iri: IRI
    type_name: str
    cls: type
    data_properties: dict[str, DataProperty] = field(default_factory=dict)
    object_properties: dict[str, ObjectProperty] = field(default_factory=dict)

    def __post_init__(self):
        predicates = [p.predicate for p in self.data_properties.values()]
        predicates += [p.predicate for p in self.object_properties.values()]
        if len(predicates) != len(set(predicates)):
            raise ValueError("predicates must be unique within a descriptor")


class Ontology:
    """Registry of class descriptors under one ontology IRI."""

    def __init__(self, ontology_iri: IRI):
        self.ontology_iri = IRI(ontology_iri)
        self._by_type: dict[str, ClassDescriptor] = {}
        self._by_class_iri: dict[IRI, ClassDescriptor] = {}
        self._by_cls: dict[type, ClassDescriptor] = {}

    def register(self, descriptor: ClassDescriptor) -> ClassDescriptor:
        if descriptor.type_name in self._by_type:
            raise ValueError(f"{descriptor.type_name} already registered")
        self._by_type[descriptor.type_name] = descriptor
        self._by_class_iri[descriptor.class_iri] = descriptor
        self._by_cls[descriptor.cls] = descriptor
        return descriptor

    def for_type(self, type_name: str) -> ClassDescriptor:
        if type_name not in self._by_type:
            raise DescriptorMismatch(type_name)
        return self._by_type[type_name]

    def for_class_iri(self, class_iri: IRI) -> ClassDescriptor:
        if class_iri not in self._by_class_iri:
            raise DescriptorMismatch(class_iri)
        return self._by_class_iri[class_iri]

    def for_record(self, record: Any) -> ClassDescriptor:
        if type(record) not in self._by_cls:
            raise UnmappedType(f"no descriptor for {type(record).__name__}")
        return self._by_cls[type(record)]

    def descriptors(self) -> list[ClassDescriptor]:
        return list(self._by_type.values())


def mint_iri(namespace: str, class_name: str, generator: TokenGenerator) -> IRI:
    return IRI(f"{namespace.rstrip('/')}/{class_name}_{generator.next_token()}")


def _element_count(value: Any) -> int:
    if isinstance(value, np.ndarray):
        return int(value.size)
    if isinstance(value, (list, tuple)):
        return sum(_element_count(v) for v in value) or len(value)
    return 1


def _to_literal(value: Any, datatype: str) -> Literal:
    if datatype == "array":
        if isinstance(value, np.ndarray):
            value = value.tolist()
        return Literal(json.dumps(value).encode("utf-8"), "blob")
    if datatype == "blob":
        return Literal(bytes(value), "blob")
    if datatype == "double":
        return Literal(float(value), "double")
    if datatype == "integer":
        return Literal(int(value), "integer")
    if datatype == "boolean":
        return Literal(bool(value), "boolean")
    return Literal(str(value), "string")


def _from_literal(literal: Literal, datatype: str) -> Any:
    if datatype == "array":
        return json.loads(literal.value.decode("utf-8"))
    return literal.value


def push(root: Any, ontology: Ontology, store: TripleStore, depth: int = -1) -> int:
    """Serialize a record graph to triples; count of new triples written.

    Data-property updates are last-writer-wins per predicate, so re-pushing an
    unchanged record writes nothing and an updated one replaces in place while
    keeping its IRI.
    """
    if depth < -1:
        raise ValueError("depth must be >= -1")
    return _push(root, ontology, store, depth, set())


def _replace(store: TripleStore, s: IRI, p: IRI, terms: list[Any]) -> int:
    existing = {t.object for t in store.triples(s, p)}
    wanted = set(terms)
    for gone in existing - wanted:
        store.remove(Triple(s, p, gone))
    return sum(store.add(Triple(s, p, term)) for term in wanted - existing)


def _push(root, ontology, store, depth, visited) -> int:
    descriptor = ontology.for_record(root)
    iri = IRI(root.instance_iri)
    if iri in visited:
        return 0
    visited.add(iri)

    written = _replace(store, iri, RDF_TYPE, [descriptor.class_iri])
    for name, prop in descriptor.data_properties.items():
        value = getattr(root, name, None)
        if value is None:
            written += _replace(store, iri, prop.predicate, [])
            continue
        written += _replace(store, iri, prop.predicate, [_to_literal(value, prop.datatype)])
    for name, prop in descriptor.object_properties.items():
        value = getattr(root, name, None)
        children = [] if value is None else (list(value) if prop.many else [value])
        written += _replace(
            store, iri, prop.predicate, [IRI(c.instance_iri) for c in children]
        )
        if depth != 0:
            below = depth - 1 if depth > 0 else -1
            for child in children:
                written += _push(child, ontology, store, below, visited)
    return written


class LazyStub:
    """Unresolved object-property reference past the pull horizon.

    Holds only the IRI; touches the store exclusively inside :meth:`resolve`.
    """

    def __init__(self, instance_iri: IRI, ontology: Ontology, store: TripleStore):
        self.instance_iri = IRI(instance_iri)
        self._ontology = ontology
        self._store = store

    def resolve(self, depth: int = 0) -> Any:
        return pull(self.instance_iri, self._ontology, self._store, depth)

    def __repr__(self) -> str:
        return f"LazyStub({self.instance_iri})"


def pull(iri: IRI, ontology: Ontology, store: TripleStore, depth: int = 3) -> Any:
    """Reconstruct the record at ``iri``.

    Object properties beyond ``depth`` become lazy stubs; depth -1 pulls the
    whole reachable subgraph, sharing instances and tolerating cycles.
    """
    if depth < -1:
        raise ValueError("depth must be >= -1")
    return _pull(IRI(iri), ontology, store, depth, {})


def _pull(iri, ontology, store, depth, memo):
    if iri in memo:
        return memo[iri]
    class_term = store.value(iri, RDF_TYPE)
    if class_term is None:
        raise NotFound(iri)
    descriptor = ontology.for_class_iri(class_term)

    kwargs: dict[str, Any] = {"instance_iri": iri}
    for name, prop in descriptor.data_properties.items():
        term = store.value(iri, prop.predicate)
        if term is not None:
            kwargs[name] = _from_literal(term, prop.datatype)
    for name, prop in descriptor.object_properties.items():
        kwargs[name] = [] if prop.many else None

    record = descriptor.cls(**kwargs)
    memo[iri] = record

    for name, prop in descriptor.object_properties.items():
        child_iris = sorted(
            IRI(t.object) for t in store.triples(iri, prop.predicate)
        )
        if depth == 0:
            resolved = [LazyStub(c, ontology, store) for c in child_iris]
        else:
            below = depth - 1 if depth > 0 else -1
            resolved = [_pull(c, ontology, store, below, memo) for c in child_iris]
        value = resolved if prop.many else (resolved[0] if resolved else None)
        object.__setattr__(record, name, value)
    return record


@dataclass(frozen=True)
class InstanceEnvelope:
    instance_iri: IRI
    class_type: str
    data: dict
    large_fields_available: list[str]
    large_field_info: dict[str, dict] = field(default_factory=dict)


def get_instance_stripped(
    iri: IRI, ontology: Ontology, store: TripleStore, depth: int = 0
) -> InstanceEnvelope:
    """Envelope view of an instance with large fields removed.

    A field is large when flagged in the descriptor or when it is an array of
    more than 256 elements. Stripped fields are listed with size metadata so a
    caller can fetch them explicitly.
    """
    iri = IRI(iri)
    class_term = store.value(iri, RDF_TYPE)
    if class_term is None:
        raise NotFound(iri)
    descriptor = ontology.for_class_iri(class_term)

    data: dict[str, Any] = {}
    stripped: list[str] = []
    info: dict[str, dict] = {}
    for name, prop in descriptor.data_properties.items():
        term = store.value(iri, prop.predicate)
        if term is None:
            continue
        value = _from_literal(term, prop.datatype)
        large = prop.large or (
            prop.datatype == "array" and _element_count(value) > LARGE_ARRAY_ELEMENTS
        )
        if large:
            stripped.append(name)
            if prop.datatype == "array":
                info[name] = {"kind": "array", "elements": _element_count(value)}
            else:
                info[name] = {"kind": prop.datatype, "bytes": len(term.lexical())}
        else:
            data[name] = value
    for name, prop in descriptor.object_properties.items():
        child_iris = sorted(str(t.object) for t in store.triples(iri, prop.predicate))
        if not child_iris:
            continue
        if depth == 0:
            refs = [{"instance_iri": c, "stub": True} for c in child_iris]
        else:
            refs = [
                get_instance_stripped(IRI(c), ontology, store, depth - 1).__dict__
                for c in child_iris
            ]
        data[name] = refs if prop.many else refs[0]
    return InstanceEnvelope(iri, descriptor.type_name, data, stripped, info)


def ontology_snapshot(
    ontology_iri: IRI,
    ontology: Ontology,
    class_filter: Optional[Iterable[IRI]] = None,
) -> dict:
    """Schema snapshot: every registered class with its property listings."""
    if IRI(ontology_iri) != ontology.ontology_iri:
        raise UnknownOntology(ontology_iri)
    wanted = set(map(str, class_filter)) if class_filter is not None else None
    classes = [
        {
            "class_iri": str(d.class_iri),
            "type_name": d.type_name,
            "data_properties": {
                name: {
                    "predicate": str(p.predicate),
                    "datatype": p.datatype,
                    "large_field": p.large,
                }
                for name, p in d.data_properties.items()
            },
            "object_properties": {
                name: {"predicate": str(p.predicate), "target": p.target, "many": p.many}
                for name, p in d.object_properties.items()
            },
        }
        for d in ontology.descriptors()
        if wanted is None or str(d.class_iri) in wanted
    ]
    return {
        "ontology": str(ontology.ontology_iri),
        "class_count": len(classes),
        "classes": classes,
    }


class CanonicalRegistry:
    """Retrieve-or-create canonicalization with per-key mutual exclusion."""

    def __init__(self):
        self._master = threading.Lock()
        self._locks: dict[Any, threading.Lock] = {}
        self._instances: dict[Any, Any] = {}

    def _lock_for(self, key) -> threading.Lock:
        with self._master:
            return self._locks.setdefault(key, threading.Lock())

    def get(self, key) -> Optional[Any]:
        with self._master:
            return self._instances.get(key)

    def get_or_register(
        self,
        key: Any,
        factory: Callable[[], Any],
        store: Optional[TripleStore] = None,
        candidates: Optional[Callable[[TripleStore], Iterable[Any]]] = None,
        equivalence: Optional[Callable[[Any], bool]] = None,
    ) -> Any:
        """Canonical instance for ``key``.

        Resolution order under the key's lock: registered instance, then an
        equivalent instance from the store (cheap candidate enumeration
        followed by the comparator), then the factory. A factory fault
        releases the slot without registering anything.
        """
        with self._lock_for(key):
            if key in self._instances:
                return self._instances[key]
            if store is not None and candidates is not None:
                for candidate in candidates(store):
                    if equivalence is None or equivalence(candidate):
                        self._instances[key] = candidate
                        return candidate
            instance = factory()
            self._instances[key] = instance
            return instance
