"""Triple store plus the rule-driven mapper from IR records to facts.

Intermediate results become subject-predicate-object triples under a small
fixed vocabulary (rdf:type, onto:Detection, onto:ShotBoundary, onto:source,
onto:atFrame, onto:label, onto:score); the subject for a record is
``ir:<service>_<batch_seq>_<frame_index>``.  Queries are a conjunctive
SELECT subset::

    SELECT ?x ?s WHERE { ?x onto:label "person" . ?x onto:score ?s . }

Keywords are case-insensitive and whitespace is free-form.  Evaluation is
the natural join of the per-pattern solution sets with results sorted by
their rendered binding tuple, so insertion order never matters.

The store itself has set semantics and an optional line journal in the
dump format (``<s> <p> <o> .`` per line, literals quoted) that is loadable
back at startup.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Union

from .acquisition import IRKind, IRRecord
from .errors import NoRule, QuerySyntaxError

VOCABULARY = frozenset({
    "rdf:type", "onto:Detection", "onto:ShotBoundary", "onto:source",
    "onto:atFrame", "onto:label", "onto:score",
})

_IRI_RE = re.compile(r"^[A-Za-z0-9_:.\-]+$")


@dataclass(frozen=True)
class Iri:
    value: str

    def __post_init__(self):
        if not _IRI_RE.match(self.value):
            raise ValueError(f"bad IRI token {self.value!r}")


@dataclass(frozen=True)
class Literal:
    value: Union[str, int, float]


@dataclass(frozen=True)
class Var:
    name: str


Term = Union[Iri, Literal]
Slot = Union[Iri, Literal, Var]


@dataclass(frozen=True)
class Triple:
    subject: Iri
    predicate: Iri
    object: Term

    def __post_init__(self):
        if not isinstance(self.subject, Iri) or not isinstance(self.predicate, Iri):
            raise ValueError("subject and predicate must be IRI tokens")


_ESCAPES = {"\\": "\\\\", '"': '\\"', "\n": "\\n", "\t": "\\t", "\r": "\\r"}
_UNESCAPES = {"\\": "\\", '"': '"', "n": "\n", "t": "\t", "r": "\r"}


def render_term(term: Slot) -> str:
    if isinstance(term, Var):
        return f"?{term.name}"
    if isinstance(term, Iri):
        return term.value
    v = term.value
    if isinstance(v, bool):
        raise ValueError("boolean literals are not part of the term model")
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        return repr(v)
    return '"' + "".join(_ESCAPES.get(c, c) for c in v) + '"'


def render_triple(t: Triple) -> str:
    return f"{render_term(t.subject)} {render_term(t.predicate)} {render_term(t.object)} ."


# --- query text -------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"""(?P<ws>\s+)
      | (?P<string>"(?:[^"\\\n]|\\.)*")
      | (?P<var>\?[A-Za-z_][A-Za-z0-9_]*)
      | (?P<number>-?\d+(?:\.\d+)?(?:[eE][+-]?\d+)?(?![A-Za-z0-9_:.\-]))
      | (?P<lbrace>\{)
      | (?P<rbrace>\})
      | (?P<iri>[A-Za-z0-9_:.\-]+)
    """,
    re.X,
)


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise QuerySyntaxError(pos, "a term, variable, '{', '}' or '.'")
        kind = m.lastgroup
        value = m.group()
        if kind != "ws":
            if kind == "iri" and value != "." and value.endswith("."):
                # split a trailing pattern terminator off a bare token
                tokens.append(("iri", value[:-1], pos))
                tokens.append(("dot", ".", pos + len(value) - 1))
            elif kind == "iri" and value == ".":
                tokens.append(("dot", ".", pos))
            else:
                tokens.append((kind, value, pos))
        pos = m.end()
    tokens.append(("eof", "", len(text)))
    return tokens


def _unescape(raw: str) -> str:
    out = []
    i = 0
    body = raw[1:-1]
    while i < len(body):
        c = body[i]
        if c == "\\" and i + 1 < len(body):
            out.append(_UNESCAPES.get(body[i + 1], body[i + 1]))
            i += 2
        else:
            out.append(c)
            i += 1
    return "".join(out)


def _term_from_token(kind: str, value: str) -> Slot:
    if kind == "var":
        return Var(value[1:])
    if kind == "string":
        return Literal(_unescape(value))
    if kind == "number":
        if re.search(r"[.eE]", value):
            return Literal(float(value))
        return Literal(int(value))
    return Iri(value)


@dataclass(frozen=True)
class Query:
    select: tuple[str, ...]
    patterns: tuple[tuple[Slot, Slot, Slot], ...]


def parse_query(text: str) -> Query:
    """Parse ``SELECT ?v... WHERE { s p o . ... }`` into a Query value."""
    tokens = _tokenize(text)
    i = 0

    def peek():
        return tokens[i]

    def take(expected_kind: str, what: str):
        nonlocal i
        kind, value, pos = tokens[i]
        if kind != expected_kind:
            raise QuerySyntaxError(pos, what)
        i += 1
        return value, pos

    def keyword(word: str):
        kind, value, pos = tokens[i]
        if kind != "iri" or value.upper() != word:
            raise QuerySyntaxError(pos, word)
        take("iri", word)

    keyword("SELECT")
    select: list[str] = []
    var_positions: dict[str, int] = {}
    while peek()[0] == "var":
        value, pos = take("var", "variable")
        name = value[1:]
        if name not in var_positions:
            var_positions[name] = pos
            select.append(name)
    if not select:
        raise QuerySyntaxError(peek()[2], "at least one ?variable")
    keyword("WHERE")
    take("lbrace", "'{'")
    patterns: list[tuple[Slot, Slot, Slot]] = []
    while peek()[0] != "rbrace":
        slots = []
        for role in ("subject", "predicate", "object"):
            kind, value, pos = peek()
            if kind not in ("var", "iri", "string", "number"):
                raise QuerySyntaxError(pos, f"{role} term")
            term = _term_from_token(kind, value)
            if role != "object" and isinstance(term, Literal):
                raise QuerySyntaxError(pos, f"IRI or variable as {role}")
            slots.append(term)
            take(kind, role)
        take("dot", "'.' after pattern")
        patterns.append(tuple(slots))
    take("rbrace", "'}'")
    if peek()[0] != "eof":
        raise QuerySyntaxError(peek()[2], "end of query")
    if not patterns:
        raise QuerySyntaxError(len(text) - 1, "at least one pattern")
    bound = {t.name for p in patterns for t in p if isinstance(t, Var)}
    for name in select:
        if name not in bound:
            raise QuerySyntaxError(var_positions[name],
                                   f"?{name} to appear in some pattern")
    return Query(select=tuple(select), patterns=tuple(patterns))


def render_query(q: Query) -> str:
    """Canonical single-space rendering; parse(render(q)) == q."""
    vars_part = " ".join(f"?{v}" for v in q.select)
    pats = " ".join(
        f"{render_term(s)} {render_term(p)} {render_term(o)} ." for s, p, o in q.patterns
    )
    return f"SELECT {vars_part} WHERE {{ {pats} }}"


# --- store and evaluation ------------------------------------------------------

def _parse_triple_line(line: str) -> Triple:
    tokens = _tokenize(line)
    terms = []
    for idx in range(3):
        kind, value, pos = tokens[idx]
        if kind not in ("iri", "string", "number"):
            raise QuerySyntaxError(pos, "a concrete term")
        terms.append(_term_from_token(kind, value))
    if tokens[3][0] != "dot" or tokens[4][0] != "eof":
        raise QuerySyntaxError(tokens[3][2], "'.' ending the line")
    return Triple(terms[0], terms[1], terms[2])


class TripleStore:
    """Set-semantics fact store with an optional append-only line journal."""

    def __init__(self, journal_path: str | Path | None = None):
        self._triples: set[Triple] = set()
        self._journal = None
        if journal_path is not None:
            path = Path(journal_path)
            path.parent.mkdir(parents=True, exist_ok=True)
            if path.exists():
                self.load(path.read_text(encoding="utf-8"))
            self._journal = open(path, "a", encoding="utf-8")

    def __len__(self) -> int:
        return len(self._triples)

    def __contains__(self, t: Triple) -> bool:
        return t in self._triples

    def triples(self) -> set[Triple]:
        return set(self._triples)

    def insert(self, triples: Iterable[Triple]) -> int:
        """Add triples, ignoring duplicates; returns how many were new."""
        added = 0
        for t in triples:
            if t not in self._triples:
                self._triples.add(t)
                added += 1
                if self._journal is not None:
                    self._journal.write(render_triple(t) + "\n")
        if self._journal is not None and added:
            self._journal.flush()
        return added

    def dump(self) -> str:
        return "".join(render_triple(t) + "\n"
                       for t in sorted(self._triples, key=render_triple))

    def load(self, text: str) -> int:
        return self.insert(
            _parse_triple_line(line) for line in text.splitlines() if line.strip()
        )

    def close(self):
        if self._journal is not None:
            self._journal.close()
            self._journal = None


def insert_triples(store: TripleStore, triples: Iterable[Triple]) -> int:
    return store.insert(triples)


def _unify(pattern, triple: Triple, binding: dict) -> Optional[dict]:
    out = binding
    for slot, value in zip(pattern, (triple.subject, triple.predicate, triple.object)):
        if isinstance(slot, Var):
            seen = out.get(slot.name)
            if seen is None:
                if out is binding:
                    out = dict(binding)
                out[slot.name] = value
            elif seen != value:
                return None
        elif slot != value:
            return None
    return out if out is not binding else dict(binding)


def execute_query(store: TripleStore, q: Query) -> list[dict]:
    """Natural join over the patterns; distinct rows, deterministic order."""
    bindings: list[dict] = [{}]
    for pattern in q.patterns:
        next_bindings = []
        for b in bindings:
            for t in store.triples():
                m = _unify(pattern, t, b)
                if m is not None:
                    next_bindings.append(m)
        bindings = next_bindings
        if not bindings:
            return []
    seen: dict[tuple, dict] = {}
    for b in bindings:
        row = {v: b[v] for v in q.select}
        key = tuple(render_term(row[v]) for v in q.select)
        seen.setdefault(key, row)
    return [seen[key] for key in sorted(seen)]


# --- IR mapping ------------------------------------------------------------------

@dataclass(frozen=True)
class MappingRule:
    """Emit (predicate, value) pairs for records of one kind.

    Each emission source is ("field", <record field>) — skipped when the
    field is None — or ("const", <Term>).  Predicates must come from the
    fixed vocabulary.
    """

    match: IRKind
    emit: tuple[tuple[str, tuple], ...]

    def __post_init__(self):
        for predicate, _source in self.emit:
            if predicate not in VOCABULARY:
                raise ValueError(f"predicate {predicate!r} not in vocabulary")


def _detection_emissions(type_term: str) -> tuple:
    return (
        ("rdf:type", ("const", Iri(type_term))),
        ("onto:source", ("field", "source_id")),
        ("onto:atFrame", ("field", "frame_index")),
        ("onto:label", ("field", "label")),
        ("onto:score", ("field", "score")),
    )


DEFAULT_RULES: tuple[MappingRule, ...] = (
    MappingRule(IRKind.LABEL, _detection_emissions("onto:Detection")),
    MappingRule(IRKind.SCALAR, _detection_emissions("onto:Detection")),
    MappingRule(IRKind.BOUNDARY, _detection_emissions("onto:ShotBoundary")),
)


def map_ir_to_triples(record: IRRecord,
                      rules: Optional[Iterable[MappingRule]] = None) -> list[Triple]:
    """Apply the first rule matching the record's kind; NoRule otherwise."""
    rules = DEFAULT_RULES if rules is None else tuple(rules)
    rule = next((r for r in rules if r.match is record.kind), None)
    if rule is None:
        raise NoRule(f"no mapping rule for kind {record.kind.value!r}")
    subject = Iri(f"ir:{record.service_id}_{record.batch_seq}_{record.frame_index}")
    triples = []
    for predicate, (source, value) in rule.emit:
        if source == "const":
            obj = value
        else:
            raw = getattr(record, value)
            if raw is None:
                continue
            obj = Literal(raw if isinstance(raw, (int, float)) else str(raw))
        triples.append(Triple(subject, Iri(predicate), obj))
    return triples


class KnowledgeBase:
    """Store plus mapper, as wired into running services."""

    def __init__(self, data_dir: str | Path | None = None,
                 rules: Optional[Iterable[MappingRule]] = None):
        journal = Path(data_dir) / "knowledge" / "triples.nt" if data_dir else None
        self.store = TripleStore(journal)
        self.rules = tuple(rules) if rules is not None else DEFAULT_RULES

    def observe_ir(self, record: IRRecord) -> int:
        """Map one IR record into the store; kinds without a rule are skipped."""
        try:
            triples = map_ir_to_triples(record, self.rules)
        except NoRule:
            return 0
        return self.store.insert(triples)

    def query(self, text: str) -> list[dict]:
        return execute_query(self.store, parse_query(text))

    def close(self):
        self.store.close()
