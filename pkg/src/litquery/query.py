"""Query AST, validation, JSON lines I/O and exact symbolic execution.

A query is a set of atoms over named nodes.  Anchors are named by the keys
of ``Query.anchors`` (``e1``, ``e2``, ...) and map to entity ids; entity
variables are ``E?``, ``E1``, ``E2`` ...; the value variable of literal
queries is ``C?``.  Atoms with ``branch=None`` are shared by every
disjunct; the others belong to a single disjunct of the DNF.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from graphlib import CycleError, TopologicalSorter

from .fuzzy import FilterKind
from .kg import KnowledgeGraph

ENTITY_TARGET = "E?"
VALUE_TARGET = "C?"
AGGREGATORS = ("mean", "min")


class QueryError(ValueError):
    def __init__(self, code: str, message: str):
        super().__init__(f"{code}: {message}")
        self.code = code


@dataclass(frozen=True)
class RelAtom:
    relation: int
    src: str
    dst: str
    branch: int | None = None


@dataclass(frozen=True)
class FilterAtom:
    attribute: int
    node: str
    kind: FilterKind
    constant: float
    branch: int | None = None


@dataclass(frozen=True)
class AttrTargetAtom:
    attribute: int
    node: str
    value: str = VALUE_TARGET
    branch: int | None = None


@dataclass(frozen=True)
class Query:
    qtype: str
    anchors: dict
    atoms: tuple
    target: str = ENTITY_TARGET
    aggregator: str | None = None

    @property
    def is_literal(self) -> bool:
        return any(isinstance(a, AttrTargetAtom) for a in self.atoms)

    @property
    def n_branches(self) -> int:
        tags = [a.branch for a in self.atoms if a.branch is not None]
        return max(tags) + 1 if tags else 1

    def branches(self) -> list:
        """Atom index lists, one per disjunct (shared atoms included in each)."""
        return [
            [i for i, a in enumerate(self.atoms) if a.branch is None or a.branch == b]
            for b in range(self.n_branches)
        ]

    @property
    def value_atom(self):
        for a in self.atoms:
            if isinstance(a, AttrTargetAtom):
                return a
        return None

    @property
    def entity_sink(self) -> str:
        """Node whose bindings are ranked: the target, or the owner of ``C?``."""
        va = self.value_atom
        return va.node if va is not None else self.target

    def is_anchor(self, node: str) -> bool:
        return node in self.anchors

    def to_json(self) -> dict:
        atoms = []
        for a in self.atoms:
            if isinstance(a, RelAtom):
                d = {"kind": "rel", "relation": a.relation, "from": a.src, "to": a.dst}
            elif isinstance(a, FilterAtom):
                d = {"kind": "filter", "attribute": a.attribute, "from": a.node,
                     "filter": FilterKind(a.kind).value, "constant": a.constant}
            else:
                d = {"kind": "attr", "attribute": a.attribute, "from": a.node, "to": a.value}
            if a.branch is not None:
                d["branch"] = a.branch
            atoms.append(d)
        out = {"type": self.qtype, "anchors": dict(self.anchors), "atoms": atoms, "target": self.target}
        if self.aggregator is not None:
            out["aggregator"] = self.aggregator
        return out

    @classmethod
    def from_json(cls, data: dict) -> "Query":
        atoms = []
        for d in data["atoms"]:
            kind = d.get("kind")
            branch = d.get("branch")
            if kind == "rel":
                if "attribute" in d:
                    raise QueryError("mixed_ids", "relational atom carries an attribute id")
                atoms.append(RelAtom(int(d["relation"]), d["from"], d["to"], branch))
            elif kind == "filter":
                if "relation" in d:
                    raise QueryError("mixed_ids", "filter atom carries a relation id")
                atoms.append(FilterAtom(int(d["attribute"]), d["from"], FilterKind(d["filter"]),
                                        float(d["constant"]), branch))
            elif kind == "attr":
                if "relation" in d:
                    raise QueryError("mixed_ids", "attribute atom carries a relation id")
                atoms.append(AttrTargetAtom(int(d["attribute"]), d["from"], d.get("to", VALUE_TARGET), branch))
            else:
                raise QueryError("schema", f"unknown atom kind {kind!r}")
        return cls(
            qtype=data.get("type", "custom"),
            anchors={k: int(v) for k, v in data["anchors"].items()},
            atoms=tuple(atoms),
            target=data.get("target", ENTITY_TARGET),
            aggregator=data.get("aggregator"),
        )


def read_queries(path) -> list:
    """Read a JSON-lines file; returns ``(query, record)`` pairs."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                record = json.loads(line)
                out.append((Query.from_json(record), record))
    return out


def write_jsonl(records, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r, sort_keys=True) + "\n")


# -- query shapes ----------------------------------------------------------

QUERY_TYPES = (
    "1p", "2p", "3p", "2i", "3i", "ip", "pi", "2u", "up",
    "ai", "2ai", "pai", "aip", "au",
    "1ap", "2ap", "3ap",
)
ENTITY_TYPES = QUERY_TYPES[:14]
LITERAL_TYPES = QUERY_TYPES[14:]
FILTER_TYPES = ("ai", "2ai", "pai", "aip", "au")

# (anchors, relations, filter atoms, value atoms)
SIGNATURES = {
    "1p": (1, 1, 0, 0), "2p": (1, 2, 0, 0), "3p": (1, 3, 0, 0),
    "2i": (2, 2, 0, 0), "3i": (3, 3, 0, 0), "ip": (2, 3, 0, 0),
    "pi": (2, 3, 0, 0), "2u": (2, 2, 0, 0), "up": (2, 3, 0, 0),
    "ai": (0, 0, 1, 0), "2ai": (0, 0, 2, 0), "pai": (1, 1, 1, 0),
    "aip": (0, 1, 1, 0), "au": (0, 0, 2, 0),
    "1ap": (1, 0, 0, 1), "2ap": (1, 1, 0, 1), "3ap": (1, 2, 0, 1),
}


def build_query(qtype, anchors=(), relations=(), filters=(), attribute=None, aggregator="mean") -> Query:
    """Instantiate a Table-1 query shape.

    ``filters`` holds ``(attribute, kind, constant)`` tuples; ``attribute`` is
    the predicted attribute of literal-answer queries.
    """
    if qtype not in SIGNATURES:
        raise QueryError("unknown_type", f"unknown query type {qtype!r}")
    n_anchor, n_rel, n_filter, n_value = SIGNATURES[qtype]
    if (len(anchors), len(relations), len(filters)) != (n_anchor, n_rel, n_filter):
        raise QueryError("arity", f"{qtype} needs {n_anchor} anchors, {n_rel} relations, {n_filter} filters")
    if n_value and attribute is None:
        raise QueryError("arity", f"{qtype} needs a target attribute")
    e = {f"e{i + 1}": int(x) for i, x in enumerate(anchors)}
    r = [int(x) for x in relations]
    f = [(int(a), FilterKind(k), float(c)) for a, k, c in filters]
    T = ENTITY_TARGET

    def filt(j, node, branch=None):
        a, k, c = f[j]
        return FilterAtom(a, node, k, c, branch)

    if qtype == "1p":
        atoms = [RelAtom(r[0], "e1", T)]
    elif qtype == "2p":
        atoms = [RelAtom(r[0], "e1", "E1"), RelAtom(r[1], "E1", T)]
    elif qtype == "3p":
        atoms = [RelAtom(r[0], "e1", "E1"), RelAtom(r[1], "E1", "E2"), RelAtom(r[2], "E2", T)]
    elif qtype == "2i":
        atoms = [RelAtom(r[0], "e1", T), RelAtom(r[1], "e2", T)]
    elif qtype == "3i":
        atoms = [RelAtom(r[0], "e1", T), RelAtom(r[1], "e2", T), RelAtom(r[2], "e3", T)]
    elif qtype == "ip":
        atoms = [RelAtom(r[0], "e1", "E1"), RelAtom(r[1], "e2", "E1"), RelAtom(r[2], "E1", T)]
    elif qtype == "pi":
        atoms = [RelAtom(r[0], "e1", "E1"), RelAtom(r[1], "E1", T), RelAtom(r[2], "e2", T)]
    elif qtype == "2u":
        atoms = [RelAtom(r[0], "e1", T, 0), RelAtom(r[1], "e2", T, 1)]
    elif qtype == "up":
        atoms = [RelAtom(r[0], "e1", "E1", 0), RelAtom(r[1], "e2", "E1", 1), RelAtom(r[2], "E1", T)]
    elif qtype == "ai":
        atoms = [filt(0, T)]
    elif qtype == "2ai":
        atoms = [filt(0, T), filt(1, T)]
    elif qtype == "pai":
        atoms = [RelAtom(r[0], "e1", T), filt(0, T)]
    elif qtype == "aip":
        atoms = [filt(0, "E1"), RelAtom(r[0], "E1", T)]
    elif qtype == "au":
        atoms = [filt(0, T, 0), filt(1, T, 1)]
    elif qtype == "1ap":
        atoms = [AttrTargetAtom(int(attribute), "e1")]
    elif qtype == "2ap":
        atoms = [RelAtom(r[0], "e1", "E1"), AttrTargetAtom(int(attribute), "E1")]
    else:
        atoms = [RelAtom(r[0], "e1", "E1"), RelAtom(r[1], "E1", "E2"), AttrTargetAtom(int(attribute), "E2")]
    literal = qtype in LITERAL_TYPES
    return Query(
        qtype=qtype,
        anchors=e,
        atoms=tuple(atoms),
        target=VALUE_TARGET if literal else ENTITY_TARGET,
        aggregator=aggregator if literal else None,
    )


# -- validation -------------------------------------------------------------

def _edges(query: Query, atom_ids):
    for i in atom_ids:
        a = query.atoms[i]
        if isinstance(a, RelAtom):
            yield a.src, a.dst
        elif isinstance(a, AttrTargetAtom):
            yield a.node, a.value


def topological_order(query: Query, atom_ids) -> list:
    """Nodes of one disjunct in dependency order (filter atoms excluded)."""
    ts = TopologicalSorter()
    for i in atom_ids:
        a = query.atoms[i]
        if isinstance(a, FilterAtom):
            ts.add(a.node)
    for src, dst in _edges(query, atom_ids):
        ts.add(dst, src)
    try:
        # static_order is deterministic for a fixed insertion order
        return list(ts.static_order())
    except CycleError as err:
        raise QueryError("cycle", f"dependency cycle through {err.args[1]}") from None


def validate(query: Query, n_entities=None, n_relations=None, n_attributes=None) -> None:
    """Raise ``QueryError`` unless the query is a valid DAG query.

    Id ranges are checked when the vocabulary sizes are given (``n_relations``
    counts the original relations only).
    """
    if not query.atoms:
        raise QueryError("empty", "query has no atoms")
    value_atoms = [a for a in query.atoms if isinstance(a, AttrTargetAtom)]
    if value_atoms:
        if len(value_atoms) > 1:
            raise QueryError("multiple_sinks", "more than one value-target atom")
        if query.target != value_atoms[0].value:
            raise QueryError("bad_target", "literal query must target its value variable")
        if query.aggregator not in AGGREGATORS:
            raise QueryError("bad_target", f"aggregator must be one of {AGGREGATORS}")
    elif query.is_anchor(query.target):
        raise QueryError("bad_target", "target cannot be an anchor")

    for name, ent in query.anchors.items():
        if n_entities is not None and not 0 <= ent < n_entities:
            raise QueryError("bad_id", f"anchor {name}={ent} out of range")
    used = set()
    for a in query.atoms:
        if isinstance(a, RelAtom):
            if n_relations is not None and not 0 <= a.relation < n_relations:
                raise QueryError("mixed_ids", f"relation id {a.relation} is not a relation")
            if query.is_anchor(a.dst):
                raise QueryError("anchor_not_source", f"anchor {a.dst} has an incoming atom")
            if a.src == a.dst:
                raise QueryError("cycle", f"self loop on {a.src}")
            used.update((a.src, a.dst))
        else:
            if n_attributes is not None and not 0 <= a.attribute < n_attributes:
                raise QueryError("mixed_ids", f"attribute id {a.attribute} is not an attribute")
            if isinstance(a, FilterAtom) and query.is_anchor(a.node):
                raise QueryError("bad_filter", "filters apply to entity variables")
            used.add(a.node)
    for name in query.anchors:
        if name not in used:
            raise QueryError("dangling", f"anchor {name} not used by any atom")
    if query.target not in used and query.target not in {a.value for a in value_atoms}:
        raise QueryError("dangling", f"target {query.target} not used by any atom")

    for atom_ids in query.branches():
        order = topological_order(query, atom_ids)
        if query.target not in order:
            raise QueryError("dangling", "target missing from a disjunct")
        out_deg = {n: 0 for n in order}
        in_rel = {n: 0 for n in order}
        filtered = set()
        for src, dst in _edges(query, atom_ids):
            out_deg[src] += 1
            in_rel[dst] += 1
        for i in atom_ids:
            a = query.atoms[i]
            if isinstance(a, FilterAtom):
                filtered.add(a.node)
        sinks = [n for n in order if out_deg[n] == 0]
        if sinks != [query.target]:
            raise QueryError("multiple_sinks", f"sinks {sorted(sinks)}; expected only {query.target}")
        for n in order:
            if query.is_anchor(n) or n == query.target and value_atoms:
                continue
            if in_rel[n] == 0 and n not in filtered:
                raise QueryError("dangling", f"variable {n} is unconstrained")


def validate_for_graph(query: Query, kg: KnowledgeGraph, n_base_relations=None) -> None:
    validate(
        query,
        n_entities=kg.n_entities,
        n_relations=n_base_relations if n_base_relations is not None else kg.n_relations,
        n_attributes=kg.n_attributes,
    )


# -- symbolic execution -----------------------------------------------------

@dataclass
class GraphIndex:
    """Set-oriented view of a graph for exact query execution."""

    n_entities: int
    adjacency: dict
    values: dict  # attribute id -> {entity: value}
    _universe: frozenset = field(default=None, repr=False)

    @classmethod
    def from_graph(cls, kg: KnowledgeGraph) -> "GraphIndex":
        values: dict = {}
        for (e, a), v in kg.attribute_table().items():
            values.setdefault(a, {})[e] = v
        return cls(n_entities=kg.n_entities, adjacency=kg.adjacency(), values=values)

    @property
    def universe(self) -> frozenset:
        if self._universe is None:
            self._universe = frozenset(range(self.n_entities))
        return self._universe

    def project(self, sources, relation) -> set:
        out = set()
        for e in sources:
            out |= self.adjacency.get((e, relation), set())
        return out

    def filter(self, attribute, kind, constant, sigma) -> set:
        kind = FilterKind(kind)
        vals = self.values.get(attribute, {})
        if kind is FilterKind.LT:
            return {e for e, v in vals.items() if v <= constant}
        if kind is FilterKind.GT:
            return {e for e, v in vals.items() if v >= constant}
        return {e for e, v in vals.items() if abs(v - constant) <= sigma}


def _as_index(graph) -> GraphIndex:
    return graph if isinstance(graph, GraphIndex) else GraphIndex.from_graph(graph)


def symbolic_entities(graph, query: Query, stats, use_global_sigma=False) -> set:
    """Exact bindings of the entity sink via projection, intersection, union."""
    index = _as_index(graph)
    result = set()
    sink = query.entity_sink
    for atom_ids in query.branches():
        sets = {}
        for node in topological_order(query, atom_ids):
            if query.is_anchor(node):
                sets[node] = {query.anchors[node]}
                continue
            if node == query.target and query.value_atom is not None:
                continue
            current = None
            for i in atom_ids:
                a = query.atoms[i]
                step = None
                if isinstance(a, RelAtom) and a.dst == node:
                    step = index.project(sets[a.src], a.relation)
                elif isinstance(a, FilterAtom) and a.node == node:
                    sigma = stats.sigma(a.attribute, use_global_sigma) if stats is not None else 0.0
                    step = index.filter(a.attribute, a.kind, a.constant, sigma)
                if step is not None:
                    current = step if current is None else current & step
            sets[node] = current if current is not None else set(index.universe)
        result |= sets[sink]
    return result


def aggregate(values, aggregator: str) -> float:
    values = list(values)
    if not values:
        raise ValueError("cannot aggregate an empty set")
    if aggregator == "mean":
        return float(sum(values) / len(values))
    if aggregator == "min":
        return float(min(values))
    raise ValueError(f"unknown aggregator {aggregator!r}")


def symbolic_values(graph, query: Query, stats) -> dict:
    """``{entity: value}`` for sink bindings that carry the target attribute."""
    index = _as_index(graph)
    va = query.value_atom
    table = index.values.get(va.attribute, {})
    return {e: table[e] for e in sorted(symbolic_entities(index, query, stats)) if e in table}


def symbolic_answer(graph, query: Query, stats=None, use_global_sigma=False):
    """Exact answer: an entity set, or the aggregated value (``None`` if undefined)."""
    if query.value_atom is None:
        return symbolic_entities(graph, query, stats, use_global_sigma)
    values = symbolic_values(graph, query, stats)
    if not values:
        return None
    return aggregate(values.values(), query.aggregator)
