"""Embedded in-memory triple store.

Triples are indexed three ways (SPO, POS, OSP) so any single-position pattern
resolves without a scan. Serialization covers N-Triples (line-oriented,
canonical escaping) and Turtle with a fixed prefix table; an optional journal
file persists adds as length-prefixed N-Triples batches.
"""

from __future__ import annotations

import base64
import re
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Optional, Union

from .atoms import IRI

RDF_TYPE = IRI("http://www.w3.org/1999/02/22-rdf-syntax-ns#type")
XSD = "http://www.w3.org/2001/XMLSchema#"

_XSD_FOR = {
    "string": XSD + "string",
    "integer": XSD + "integer",
    "double": XSD + "double",
    "boolean": XSD + "boolean",
    "blob": XSD + "base64Binary",
}
_KIND_FOR = {v: k for k, v in _XSD_FOR.items()}

DATATYPES = frozenset(_XSD_FOR)


@dataclass(frozen=True)
class Literal:
    value: Union[str, int, float, bool, bytes]
    datatype: str = "string"

    def __post_init__(self):
        if self.datatype not in DATATYPES:
            raise ValueError(f"unknown literal datatype {self.datatype}")
        if self.datatype == "blob" and not isinstance(self.value, bytes):
            raise TypeError("blob literals hold bytes")

    @property
    def byte_length(self) -> int:
        if self.datatype != "blob":
            raise TypeError("byte_length applies to blob literals")
        return len(self.value)

    def lexical(self) -> str:
        if self.datatype == "blob":
            return base64.b64encode(self.value).decode("ascii")
        if self.datatype == "boolean":
            return "true" if self.value else "false"
        if self.datatype == "double":
            return repr(float(self.value))
        return str(self.value)


Term = Union[IRI, Literal]


@dataclass(frozen=True)
class Triple:
    subject: IRI
    predicate: IRI
    object: Term

    def __post_init__(self):
        # Normalize plain strings (incl. str subclasses) so type checks
        # downstream are reliable. Literals must already be Literal instances.
        object.__setattr__(self, "subject", IRI(str(self.subject)))
        object.__setattr__(self, "predicate", IRI(str(self.predicate)))
        if not isinstance(self.object, Literal):
            object.__setattr__(self, "object", IRI(str(self.object)))


def literal_from_lexical(lexical: str, datatype: str) -> Literal:
    if datatype == "integer":
        return Literal(int(lexical), "integer")
    if datatype == "double":
        return Literal(float(lexical), "double")
    if datatype == "boolean":
        return Literal(lexical == "true", "boolean")
    if datatype == "blob":
        return Literal(base64.b64decode(lexical), "blob")
    return Literal(lexical, "string")


_ESCAPES = {"\\": "\\\\", '"': '\\"', "\n": "\\n", "\r": "\\r", "\t": "\\t"}
_UNESCAPES = {"\\": "\\", '"': '"', "n": "\n", "r": "\r", "t": "\t"}


def _escape(text: str) -> str:
    out = []
    for c in text:
        if c in _ESCAPES:
            out.append(_ESCAPES[c])
        elif ord(c) < 0x20:
            out.append(f"\\u{ord(c):04X}")
        else:
            out.append(c)
    return "".join(out)


def _unescape(text: str) -> str:
    out, i = [], 0
    while i < len(text):
        c = text[i]
        if c == "\\" and i + 1 < len(text):
            nxt = text[i + 1]
            if nxt == "u" and i + 6 <= len(text):
                out.append(chr(int(text[i + 2:i + 6], 16)))
                i += 6
                continue
            out.append(_UNESCAPES.get(nxt, nxt))
            i += 2
        else:
            out.append(c)
            i += 1
    return "".join(out)


def term_to_ntriples(term: Term) -> str:
    if isinstance(term, IRI):
        return f"<{term}>"
    lex = _escape(term.lexical())
    if term.datatype == "string":
        return f'"{lex}"'
    return f'"{lex}"^^<{_XSD_FOR[term.datatype]}>'


_NT_LINE = re.compile(
    r'^<([^>]*)>\s+<([^>]*)>\s+(<[^>]*>|"(?:[^"\\]|\\.)*"(?:\^\^<[^>]*>)?)\s*\.\s*$'
)


def _parse_object(token: str) -> Term:
    if token.startswith("<"):
        return IRI(token[1:-1])
    if token.endswith(">"):
        body, dt_iri = token.rsplit("^^", 1)
        kind = _KIND_FOR.get(dt_iri[1:-1], "string")
        return literal_from_lexical(_unescape(body[1:-1]), kind)
    return Literal(_unescape(token[1:-1]), "string")


def parse_ntriples(text: str) -> Iterator[Triple]:
    for lineno, line in enumerate(text.split("\n"), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        m = _NT_LINE.match(line)
        if not m:
            raise ValueError(f"malformed N-Triples line {lineno}: {line!r}")
        yield Triple(IRI(m.group(1)), IRI(m.group(2)), _parse_object(m.group(3)))


# Fixed prefix table for Turtle output. Order matters: longer namespaces are
# tried first so mofs:/grafico: win over any shared parent.
PREFIXES = {
    "rdf": "http://www.w3.org/1999/02/22-rdf-syntax-ns#",
    "xsd": XSD,
    "mofs": "https://elagente.ca/ontomof/",
    "grafico": "https://elagente.ca/grafico/",
}

_LOCAL_NAME = re.compile(r"^[A-Za-z_][A-Za-z0-9_.-]*$")


def _turtle_iri(iri: IRI) -> str:
    for prefix, ns in sorted(PREFIXES.items(), key=lambda kv: -len(kv[1])):
        if iri.startswith(ns):
            local = iri[len(ns):]
            if _LOCAL_NAME.match(local):
                return f"{prefix}:{local}"
    return f"<{iri}>"


def _turtle_term(term: Term) -> str:
    if isinstance(term, IRI):
        return _turtle_iri(term)
    lex = _escape(term.lexical())
    if term.datatype == "string":
        return f'"{lex}"'
    return f'"{lex}"^^xsd:{_XSD_FOR[term.datatype].rsplit("#", 1)[1]}'


class NotFound(KeyError):
    pass


class TripleStore:
    """Indexed triple set; concurrent readers, serialized writers.

    ``journal`` optionally names a file receiving every committed batch of
    additions as a length-prefixed N-Triples block, so a store can be rebuilt
    after a crash with :meth:`replay_journal`.
    """

    def __init__(self, journal: Optional[str | Path] = None):
        self._triples: set[Triple] = set()
        self._spo: dict[IRI, dict[IRI, set[Term]]] = {}
        self._pos: dict[IRI, dict[Term, set[IRI]]] = {}
        self._osp: dict[Term, dict[IRI, set[IRI]]] = {}
        self._lock = threading.RLock()
        self._journal = Path(journal) if journal else None
        self._pending: list[Triple] = []
        self.reads = 0  # pattern-query counter, used by lazy-stub audits

    def __len__(self) -> int:
        return len(self._triples)

    def __contains__(self, triple: Triple) -> bool:
        return triple in self._triples

    def add(self, triple: Triple) -> bool:
        """True when the triple was new."""
        with self._lock:
            if triple in self._triples:
                return False
            self._triples.add(triple)
            s, p, o = triple.subject, triple.predicate, triple.object
            self._spo.setdefault(s, {}).setdefault(p, set()).add(o)
            self._pos.setdefault(p, {}).setdefault(o, set()).add(s)
            self._osp.setdefault(o, {}).setdefault(s, set()).add(p)
            if self._journal is not None:
                self._pending.append(triple)
            return True

    def add_many(self, triples: Iterable[Triple]) -> int:
        return sum(self.add(t) for t in triples)

    def remove(self, triple: Triple) -> bool:
        with self._lock:
            if triple not in self._triples:
                return False
            self._triples.discard(triple)
            s, p, o = triple.subject, triple.predicate, triple.object
            self._spo[s][p].discard(o)
            self._pos[p][o].discard(s)
            self._osp[o][s].discard(p)
            return True

    def triples(
        self,
        subject: Optional[IRI] = None,
        predicate: Optional[IRI] = None,
        object: Optional[Term] = None,
    ) -> list[Triple]:
        """All triples matching the pattern (None = wildcard)."""
        with self._lock:
            self.reads += 1
            if subject is not None:
                by_pred = self._spo.get(subject, {})
                preds = [predicate] if predicate is not None else list(by_pred)
                out = [
                    Triple(subject, p, o)
                    for p in preds
                    for o in by_pred.get(p, ())
                    if object is None or o == object
                ]
            elif predicate is not None:
                by_obj = self._pos.get(predicate, {})
                objs = [object] if object is not None else list(by_obj)
                out = [
                    Triple(s, predicate, o)
                    for o in objs
                    for s in by_obj.get(o, ())
                ]
            elif object is not None:
                by_subj = self._osp.get(object, {})
                out = [
                    Triple(s, p, object)
                    for s in by_subj
                    for p in by_subj[s]
                ]
            else:
                out = list(self._triples)
            return out

    def value(self, subject: IRI, predicate: IRI) -> Optional[Term]:
        matches = self.triples(subject, predicate)
        return matches[0].object if matches else None

    def subjects_of_type(self, class_iri: IRI) -> list[IRI]:
        return [t.subject for t in self.triples(None, RDF_TYPE, class_iri)]

    # -- serialization -----------------------------------------------------

    def export_ntriples(self) -> str:
        with self._lock:
            lines = sorted(
                f"{term_to_ntriples(t.subject)} {term_to_ntriples(t.predicate)} "
                f"{term_to_ntriples(t.object)} ."
                for t in self._triples
            )
        return "\n".join(lines) + ("\n" if lines else "")

    def import_ntriples(self, text: str) -> int:
        return self.add_many(parse_ntriples(text))

    def export_turtle(self) -> str:
        with self._lock:
            by_subject: dict[IRI, list[Triple]] = {}
            for t in self._triples:
                by_subject.setdefault(t.subject, []).append(t)
        out = [f"@prefix {p}: <{ns}> ." for p, ns in PREFIXES.items()]
        out.append("")
        for subject in sorted(by_subject):
            rows = sorted(
                by_subject[subject],
                key=lambda t: (t.predicate != RDF_TYPE, t.predicate, str(t.object)),
            )
            parts = [
                f"    {'a' if t.predicate == RDF_TYPE else _turtle_iri(t.predicate)} "
                f"{_turtle_term(t.object)}"
                for t in rows
            ]
            out.append(f"{_turtle_iri(subject)}\n" + " ;\n".join(parts) + " .")
        return "\n".join(out) + "\n"

    # -- journal -----------------------------------------------------------

    def sync(self) -> int:
        """Flush pending additions to the journal as one batch."""
        with self._lock:
            if self._journal is None or not self._pending:
                self._pending.clear()
                return 0
            batch = "".join(
                f"{term_to_ntriples(t.subject)} {term_to_ntriples(t.predicate)} "
                f"{term_to_ntriples(t.object)} .\n"
                for t in self._pending
            ).encode("utf-8")
            with open(self._journal, "ab") as fh:
                fh.write(str(len(batch)).encode("ascii") + b"\n")
                fh.write(batch)
            n = len(self._pending)
            self._pending.clear()
            return n

    @classmethod
    def replay_journal(
        cls, path: str | Path, journal: Optional[str | Path] = None
    ) -> "TripleStore":
        """Rebuild a store from its journal; ``journal`` optionally re-attaches
        a journal file (pass the same path to keep appending to it)."""
        store = cls()
        data = Path(path).read_bytes()
        offset = 0
        while offset < len(data):
            newline = data.index(b"\n", offset)
            length = int(data[offset:newline])
            start = newline + 1
            store.import_ntriples(data[start:start + length].decode("utf-8"))
            offset = start + length
        if journal is not None:
            store._journal = Path(journal)
            store._pending.clear()
        return store
