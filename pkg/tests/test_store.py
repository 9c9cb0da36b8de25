import threading
from dataclasses import dataclass, field
from typing import Any, Optional

import pytest
from hypothesis import given, settings, strategies as st

from grafico.atoms import IRI, TokenGenerator
from grafico.ogm import (
    CanonicalRegistry,
    ClassDescriptor,
    DataProperty,
    LazyStub,
    ObjectProperty,
    Ontology,
    UnknownOntology,
    UnmappedType,
    get_instance_stripped,
    mint_iri,
    ontology_snapshot,
    pull,
    push,
)
from grafico.store import (
    Literal,
    NotFound,
    RDF_TYPE,
    Triple,
    TripleStore,
    parse_ntriples,
    term_to_ntriples,
)

NS = "https://ex.org/ontomof"


def iri(local):
    return IRI(f"{NS}/{local}")


@dataclass
class Sample:
    instance_iri: IRI
    name: str = ""
    count: int = 0
    weight: float = 0.0


@dataclass
class Node:
    instance_iri: IRI
    label: str = ""
    child: Optional[Any] = None


@dataclass
class Parent:
    instance_iri: IRI
    kids: list = field(default_factory=list)


def ontology():
    onto = Ontology(IRI(NS))
    onto.register(
        ClassDescriptor(
            iri("Sample"),
            "Sample",
            Sample,
            data_properties={
                "name": DataProperty(iri("hasName"), "string"),
                "count": DataProperty(iri("hasCount"), "integer"),
                "weight": DataProperty(iri("hasWeight"), "double"),
            },
        )
    )
    onto.register(
        ClassDescriptor(
            iri("Node"),
            "Node",
            Node,
            data_properties={"label": DataProperty(iri("hasLabel"), "string")},
            object_properties={"child": ObjectProperty(iri("hasChild"), "Node")},
        )
    )
    onto.register(
        ClassDescriptor(
            iri("Parent"),
            "Parent",
            Parent,
            object_properties={"kids": ObjectProperty(iri("hasKid"), "Node", many=True)},
        )
    )
    return onto


class TestTripleStore:
    def test_add_and_patterns(self):
        store = TripleStore()
        t = Triple(iri("a"), iri("p"), Literal("x"))
        assert store.add(t)
        assert not store.add(t)
        assert store.triples(iri("a")) == [t]
        assert store.triples(None, iri("p")) == [t]
        assert store.triples(None, None, Literal("x")) == [t]
        assert store.triples(iri("b")) == []

    def test_remove(self):
        store = TripleStore()
        t = Triple(iri("a"), iri("p"), iri("b"))
        store.add(t)
        assert store.remove(t)
        assert not store.remove(t)
        assert len(store) == 0

    def test_ntriples_round_trip(self):
        store = TripleStore()
        store.add(Triple(iri("a"), iri("p"), Literal('he said "hi"\n\tthere')))
        store.add(Triple(iri("a"), iri("n"), Literal(42, "integer")))
        store.add(Triple(iri("a"), iri("x"), Literal(2.5, "double")))
        store.add(Triple(iri("a"), iri("b"), Literal(True, "boolean")))
        store.add(Triple(iri("a"), iri("blob"), Literal(b"\x00\x01\xff", "blob")))
        store.add(Triple(iri("a"), iri("q"), iri("b")))
        text = store.export_ntriples()
        other = TripleStore()
        assert other.import_ntriples(text) == 6
        assert other.triples() and set(other.triples()) == set(store.triples())

    def test_turtle_uses_prefixes(self):
        store = TripleStore()
        subject = IRI("https://elagente.ca/ontomof/MOF_ab12cd34")
        store.add(Triple(subject, RDF_TYPE, IRI("https://elagente.ca/ontomof/ConstructedMOF")))
        text = store.export_turtle()
        assert "@prefix mofs: <https://elagente.ca/ontomof/> ." in text
        assert "mofs:MOF_ab12cd34" in text
        assert "a mofs:ConstructedMOF" in text

    def test_journal_replay(self, tmp_path):
        path = tmp_path / "journal.bin"
        store = TripleStore(journal=path)
        store.add(Triple(iri("a"), iri("p"), Literal("one")))
        store.sync()
        store.add(Triple(iri("a"), iri("p"), Literal("two")))
        store.add(Triple(iri("b"), iri("q"), iri("a")))
        store.sync()
        rebuilt = TripleStore.replay_journal(path)
        assert set(rebuilt.triples()) == set(store.triples())

    def test_malformed_ntriples(self):
        with pytest.raises(ValueError):
            list(parse_ntriples("this is not a triple ."))

    def test_blob_byte_length(self):
        lit = Literal(b"abc", "blob")
        assert lit.byte_length == 3
        with pytest.raises(TypeError):
            Literal("abc", "blob")


@settings(max_examples=60, deadline=None)
@given(
    st.one_of(
        st.text(max_size=40).map(Literal),
        st.integers().map(lambda v: Literal(v, "integer")),
        st.floats(allow_nan=False, allow_infinity=False).map(lambda v: Literal(v, "double")),
        st.booleans().map(lambda v: Literal(v, "boolean")),
        st.binary(max_size=64).map(lambda v: Literal(v, "blob")),
    )
)
def test_literal_serialization_round_trips(lit):
    line = f"{term_to_ntriples(iri('s'))} {term_to_ntriples(iri('p'))} {term_to_ntriples(lit)} ."
    (triple,) = parse_ntriples(line)
    assert triple.object == lit


class TestMintIri:
    def test_pattern(self):
        token = mint_iri(NS, "ConstructedMOF", TokenGenerator(seed=7))
        assert str(token).startswith(f"{NS}/ConstructedMOF_")
        assert len(str(token).rsplit("_", 1)[1]) == 8

    def test_unique(self):
        gen = TokenGenerator(seed=1)
        assert mint_iri(NS, "A", gen) != mint_iri(NS, "A", gen)

    def test_deterministic(self):
        a = [str(mint_iri(NS, "A", TokenGenerator(seed=3))) for _ in range(1)]
        b = [str(mint_iri(NS, "A", TokenGenerator(seed=3))) for _ in range(1)]
        assert a == b


class TestPushPull:
    def test_data_triple_count(self):
        store = TripleStore()
        n = push(Sample(iri("Sample_1"), "zinc", 4, 65.4), ontology(), store)
        assert n == 4  # 1 type + 3 data

    def test_push_idempotent(self):
        store = TripleStore()
        onto = ontology()
        record = Sample(iri("Sample_1"), "zinc", 4, 65.4)
        push(record, onto, store)
        assert push(record, onto, store) == 0

    def test_update_in_place_keeps_iri(self):
        store = TripleStore()
        onto = ontology()
        push(Sample(iri("Sample_1"), "zinc", 4, 65.4), onto, store)
        push(Sample(iri("Sample_1"), "zinc", 5, 65.4), onto, store)
        record = pull(iri("Sample_1"), onto, store)
        assert record.count == 5
        assert len(store.triples(iri("Sample_1"), iri("hasCount"))) == 1

    def test_depth_zero_links_without_child_body(self):
        store = TripleStore()
        onto = ontology()
        child = Node(iri("Node_child"), "leaf")
        push(Node(iri("Node_root"), "root", child), onto, store, depth=0)
        assert store.triples(iri("Node_root"), iri("hasChild"))
        assert store.value(iri("Node_child"), RDF_TYPE) is None

    def test_round_trip_chain(self):
        store = TripleStore()
        onto = ontology()
        c = Node(iri("Node_c"), "c")
        b = Node(iri("Node_b"), "b", c)
        a = Node(iri("Node_a"), "a", b)
        push(a, onto, store, depth=-1)
        got = pull(iri("Node_a"), onto, store, depth=-1)
        assert got == a

    def test_pull_depth_one_stubs(self):
        store = TripleStore()
        onto = ontology()
        c = Node(iri("Node_c"), "c")
        b = Node(iri("Node_b"), "b", c)
        a = Node(iri("Node_a"), "a", b)
        push(a, onto, store, depth=-1)
        got = pull(iri("Node_a"), onto, store, depth=1)
        assert got.child.label == "b"
        assert isinstance(got.child.child, LazyStub)
        resolved = got.child.child.resolve()
        assert resolved.label == "c"

    def test_shared_child_is_one_instance(self):
        store = TripleStore()
        onto = ontology()
        shared = Node(iri("Node_shared"), "shared")
        p1 = Node(iri("Node_p1"), "p1", shared)
        p2 = Node(iri("Node_p2"), "p2", shared)
        root = Parent(iri("Parent_r"), [p1, p2])
        push(root, onto, store, depth=-1)
        got = pull(iri("Parent_r"), onto, store, depth=-1)
        kids = sorted(got.kids, key=lambda k: k.label)
        assert kids[0].child is kids[1].child

    def test_cycle_pull_terminates(self):
        store = TripleStore()
        onto = ontology()
        a = Node(iri("Node_a"), "a")
        b = Node(iri("Node_b"), "b", a)
        a.child = b
        push(a, onto, store, depth=-1)
        got = pull(iri("Node_a"), onto, store, depth=-1)
        assert got.child.child is got

    def test_unmapped_type(self):
        class Stranger:
            instance_iri = iri("S_1")

        with pytest.raises(UnmappedType):
            push(Stranger(), ontology(), TripleStore())

    def test_pull_not_found(self):
        with pytest.raises(NotFound):
            pull(iri("nothing"), ontology(), TripleStore())

    def test_lazy_stub_does_not_read(self):
        store = TripleStore()
        onto = ontology()
        b = Node(iri("Node_b"), "b")
        a = Node(iri("Node_a"), "a", b)
        push(a, onto, store, depth=-1)
        got = pull(iri("Node_a"), onto, store, depth=0)
        reads = store.reads
        stub = got.child
        assert isinstance(stub, LazyStub)
        _ = stub.instance_iri
        assert store.reads == reads
        stub.resolve()
        assert store.reads > reads


@dataclass
class Structure:
    instance_iri: IRI
    formula: str = ""
    positions: Optional[list] = None
    cif: Optional[str] = None


def structure_ontology():
    onto = Ontology(IRI(NS))
    onto.register(
        ClassDescriptor(
            iri("Structure"),
            "Structure",
            Structure,
            data_properties={
                "formula": DataProperty(iri("hasFormula"), "string"),
                "positions": DataProperty(iri("hasPositions"), "array"),
                "cif": DataProperty(iri("hasCif"), "string", large=True),
            },
        )
    )
    return onto


class TestStripped:
    def test_large_array_stripped(self):
        store = TripleStore()
        onto = structure_ontology()
        record = Structure(
            iri("Structure_1"), "C2H6", [[float(i), 0.0, 0.0] for i in range(1000)]
        )
        push(record, onto, store)
        env = get_instance_stripped(iri("Structure_1"), onto, store)
        assert "positions" in env.large_fields_available
        assert "positions" not in env.data
        assert env.data["formula"] == "C2H6"
        assert env.large_field_info["positions"]["elements"] == 3000

    def test_flagged_field_stripped(self):
        store = TripleStore()
        onto = structure_ontology()
        push(Structure(iri("Structure_2"), "Zn", None, "data_block..."), onto, store)
        env = get_instance_stripped(iri("Structure_2"), onto, store)
        assert env.large_fields_available == ["cif"]

    def test_no_large_fields(self):
        store = TripleStore()
        onto = structure_ontology()
        push(Structure(iri("Structure_3"), "Zn", [[0.0, 0.0, 0.0]]), onto, store)
        env = get_instance_stripped(iri("Structure_3"), onto, store)
        assert env.large_fields_available == []
        assert env.data["positions"] == [[0.0, 0.0, 0.0]]

    def test_missing_iri(self):
        with pytest.raises(NotFound):
            get_instance_stripped(iri("nope"), structure_ontology(), TripleStore())


class TestSnapshot:
    def test_counts_and_listing(self):
        doc = ontology_snapshot(IRI(NS), ontology())
        assert doc["class_count"] == 3
        names = {c["type_name"] for c in doc["classes"]}
        assert names == {"Sample", "Node", "Parent"}

    def test_class_filter(self):
        doc = ontology_snapshot(IRI(NS), ontology(), class_filter=[iri("Node")])
        assert doc["class_count"] == 1
        assert doc["classes"][0]["type_name"] == "Node"

    def test_unknown_ontology(self):
        with pytest.raises(UnknownOntology):
            ontology_snapshot(IRI("https://other.org/x"), ontology())


class TestCanonicalRegistry:
    def test_concurrent_single_factory_call(self):
        registry = CanonicalRegistry()
        calls = []
        gate = threading.Barrier(16)
        results = []

        def factory():
            calls.append(1)
            return object()

        def worker():
            gate.wait()
            results.append(registry.get_or_register("key", factory))

        threads = [threading.Thread(target=worker) for _ in range(16)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert len(calls) == 1
        assert len({id(r) for r in results}) == 1

    def test_store_equivalent_skips_factory(self):
        store = TripleStore()
        onto = ontology()
        push(Sample(iri("Sample_existing"), "zinc", 4, 65.4), onto, store)
        registry = CanonicalRegistry()

        def candidates(s):
            return [pull(i, onto, s) for i in s.subjects_of_type(iri("Sample"))]

        got = registry.get_or_register(
            "zinc",
            factory=lambda: pytest.fail("factory must not run"),
            store=store,
            candidates=candidates,
            equivalence=lambda cand: cand.name == "zinc",
        )
        assert str(got.instance_iri) == str(iri("Sample_existing"))

    def test_distinct_keys_distinct_instances(self):
        registry = CanonicalRegistry()
        a = registry.get_or_register("a", lambda: object())
        b = registry.get_or_register("b", lambda: object())
        assert a is not b

    def test_factory_fault_releases_slot(self):
        registry = CanonicalRegistry()

        def boom():
            raise RuntimeError("nope")

        with pytest.raises(RuntimeError):
            registry.get_or_register("k", boom)
        ok = registry.get_or_register("k", lambda: "fine")
        assert ok == "fine"

    def test_two_keys_eight_workers_one_instance_each(self):
        registry = CanonicalRegistry()
        made = {"a": [], "b": []}

        def worker(key):
            for _ in range(50):
                instance = registry.get_or_register(key, lambda k=key: (k, object()))
                made[key].append(instance)

        threads = [
            threading.Thread(target=worker, args=(key,))
            for key in ("a", "b")
            for _ in range(4)
        ]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        for key in ("a", "b"):
            assert len({id(i) for i in made[key]}) == 1
