"""Neural query answering by beam search over variable assignments.

Variables of each disjunct are bound in topological order.  For every
intermediate variable the best partial assignment per candidate entity is
kept and the beam is cut to the ``beam_k`` best candidates; the target is
scored against every entity.  Atom scores are combined with a t-norm inside
a disjunct and with the dual t-conorm across disjuncts.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .fuzzy import TNormKind, filter_raw, tconorm, tnorm
from .kg import denormalize_value
from .model import logistic, predict_attribute, predict_exists, raw_all_tails
from .query import (
    AttrTargetAtom,
    FilterAtom,
    Query,
    QueryError,
    RelAtom,
    aggregate,
    topological_order,
)


@dataclass
class AnswerOptions:
    beam_k: int = 64
    tnorm: TNormKind = TNormKind.PRODUCT
    use_exists: bool = True
    use_filter: bool = True
    global_sigma: bool = False

    def __post_init__(self):
        if self.beam_k < 1:
            raise ValueError("beam_k must be at least 1")
        self.tnorm = TNormKind(self.tnorm)


@dataclass
class _Entry:
    score: float | None  # None until the first atom is bound
    bindings: dict
    atoms: list  # (atom index, score) in combination order


@dataclass
class BranchTrace:
    bindings: dict
    atoms: list  # (atom index, score)
    score: float


@dataclass
class Trace:
    entity: int
    branches: list
    score: float


@dataclass
class AnswerRanking:
    query: Query
    scores: np.ndarray  # per entity id
    order: np.ndarray  # entity ids, best first
    tnorm: TNormKind
    _branches: list = field(default_factory=list, repr=False)
    _scorer: object = field(default=None, repr=False)

    def top(self, n=10) -> list:
        return [(int(e), float(self.scores[e])) for e in self.order[:n]]

    def trace(self, entity: int) -> Trace:
        """Best assignment per disjunct for ``entity`` with per-atom scores."""
        if not self._branches:  # the sink is an anchor
            score = float(self.scores[entity])
            return Trace(int(entity), [BranchTrace({self.query.entity_sink: int(entity)}, [], score)], score)
        branches = []
        for entries, best, sink_atoms in self._branches:
            entry = entries[best[entity]]
            atoms = list(entry.atoms)
            for i in sink_atoms:
                atoms.append((i, float(self._scorer.atom_vector(i, entry.bindings)[entity])))
            score = entry.score
            for _, s in atoms[len(entry.atoms):]:
                score = s if score is None else tnorm(self.tnorm, score, s)
            bindings = dict(entry.bindings)
            bindings[self.query.entity_sink] = int(entity)
            branches.append(BranchTrace(bindings, atoms, float(score)))
        total = branches[0].score
        for b in branches[1:]:
            total = tconorm(self.tnorm, total, b.score)
        return Trace(int(entity), branches, float(total))


@dataclass
class LiteralAnswer:
    value: float
    value_raw: float | None
    entities: list  # (entity id, predicted value)
    ranking: AnswerRanking | None = None


class _Scorer:
    """Per-query cache of atom score vectors over candidate entities."""

    def __init__(self, params, aug, stats, query: Query, options: AnswerOptions, n_candidates: int):
        self.params = params
        self.aug = aug
        self.stats = stats
        self.query = query
        self.options = options
        self.n = n_candidates
        self._links: dict = {}
        self._filters: dict = {}

    def entity_of(self, node, bindings):
        if self.query.is_anchor(node):
            return self.query.anchors[node]
        return bindings[node]

    def link(self, head: int, relation: int) -> np.ndarray:
        key = (head, relation)
        vec = self._links.get(key)
        if vec is None:
            vec = logistic(raw_all_tails(self.params, head, relation)[: self.n])
            self._links[key] = vec
        return vec

    def filter(self, i: int) -> np.ndarray:
        vec = self._filters.get(i)
        if vec is None:
            a = self.query.atoms[i]
            ents = np.arange(self.n)
            if self.options.use_filter:
                sigma = self.stats.sigma(a.attribute, self.options.global_sigma)
                raw = filter_raw(a.kind, predict_attribute(self.params, ents, a.attribute), a.constant, sigma)
            else:
                raw = np.ones(self.n)
            if self.options.use_exists:
                ex = predict_exists(self.params, None, a.attribute, self.aug)[: self.n]
            else:
                ex = np.ones(self.n)
            vec = ex * raw
            self._filters[i] = vec
        return vec

    def atom_vector(self, i: int, bindings) -> np.ndarray:
        a = self.query.atoms[i]
        if isinstance(a, RelAtom):
            return self.link(self.entity_of(a.src, bindings), a.relation)
        return self.filter(i)


def _atoms_into(query: Query, atom_ids, node):
    rel = [i for i in atom_ids if isinstance(query.atoms[i], RelAtom) and query.atoms[i].dst == node]
    fil = [i for i in atom_ids if isinstance(query.atoms[i], FilterAtom) and query.atoms[i].node == node]
    return rel + fil


def _combine(kind, prefix, vectors):
    out = prefix
    for v in vectors:
        out = v if out is None else np.asarray(tnorm(kind, out, v))
    return out


def _frontier(query: Query, atom_ids, bound: set):
    """Bound variables that still have atoms leading to unbound nodes."""
    out = []
    for i in atom_ids:
        a = query.atoms[i]
        if isinstance(a, RelAtom) and a.src in bound and a.dst not in bound and not query.is_anchor(a.src):
            if a.src not in out:
                out.append(a.src)
    return sorted(out)


def _answer_branch(scorer: _Scorer, query: Query, atom_ids, sink: str, options: AnswerOptions):
    kind = options.tnorm
    n = scorer.n
    entries = [_Entry(None, {}, [])]
    bound: set = set()
    for node in topological_order(query, atom_ids):
        if query.is_anchor(node) or node == sink:
            continue
        if node == query.target and query.value_atom is not None:
            continue
        incoming = _atoms_into(query, atom_ids, node)
        mat = np.empty((len(entries), n))
        for j, entry in enumerate(entries):
            vecs = [scorer.atom_vector(i, entry.bindings) for i in incoming]
            prefix = None if entry.score is None else np.full(n, entry.score)
            mat[j] = _combine(kind, prefix, vecs)
        bound.add(node)
        frontier = _frontier(query, atom_ids, bound)
        entries = _select(entries, mat, node, incoming, frontier, options.beam_k)

    incoming = _atoms_into(query, atom_ids, sink)
    mat = np.empty((len(entries), n))
    for j, entry in enumerate(entries):
        vecs = [scorer.atom_vector(i, entry.bindings) for i in incoming]
        prefix = None if entry.score is None else np.full(n, entry.score)
        mat[j] = _combine(kind, prefix, vecs)
    best = np.argmax(mat, axis=0)  # first maximum: entries are ordered best first
    return mat[best, np.arange(n)], entries, best, incoming


def _select(entries, mat, node, incoming, frontier, k):
    """Keep the best assignment per frontier key, then the top ``k`` overall."""
    n = mat.shape[1]
    if frontier == [node]:
        best = np.argmax(mat, axis=0)
        scores = mat[best, np.arange(n)]
        order = np.lexsort((np.arange(n), -scores))[:k]
        picks = [(int(best[x]), int(x), float(scores[x])) for x in order]
    else:
        cands = {}
        for j, entry in enumerate(entries):
            for x in range(n):
                key = tuple(x if u == node else entry.bindings[u] for u in frontier)
                s = float(mat[j, x])
                cur = cands.get(key)
                if cur is None or s > cur[2]:
                    cands[key] = (j, x, s)
        picks = sorted(cands.values(), key=lambda c: (-c[2], c[1], c[0]))[:k]
    out = []
    for j, x, s in picks:
        parent = entries[j]
        bindings = dict(parent.bindings)
        bindings[node] = x
        atoms = list(parent.atoms) + [(i, None) for i in incoming]
        out.append(_Entry(s, bindings, atoms))
    return out


def rank_entities(params, aug, stats, query: Query, options: AnswerOptions, n_candidates=None) -> AnswerRanking:
    """Score every candidate entity for the entity sink of ``query``."""
    n = n_candidates if n_candidates is not None else (aug.dummy_entity if aug is not None else params.n_entities)
    scorer = _Scorer(params, aug, stats, query, options, n)
    sink = query.entity_sink
    if query.is_anchor(sink):
        scores = np.zeros(n)
        scores[query.anchors[sink]] = 1.0
        order = np.lexsort((np.arange(n), -scores))
        return AnswerRanking(query, scores, order, options.tnorm, [], scorer)
    total = None
    branches = []
    for atom_ids in query.branches():
        atom_ids = [i for i in atom_ids if not isinstance(query.atoms[i], AttrTargetAtom)]
        scores, entries, best, sink_atoms = _answer_branch(scorer, query, atom_ids, sink, options)
        _record_atom_scores(scorer, query, entries)
        branches.append((entries, best, sink_atoms))
        total = scores if total is None else np.asarray(tconorm(options.tnorm, total, scores))
    order = np.lexsort((np.arange(n), -total))
    return AnswerRanking(query, total, order, options.tnorm, branches, scorer)


def _record_atom_scores(scorer: _Scorer, query: Query, entries):
    """Resolve per-atom scores of the kept assignments for tracing."""
    for entry in entries:
        resolved = []
        for i, s in entry.atoms:
            if s is None:
                a = query.atoms[i]
                target = entry.bindings[a.dst] if isinstance(a, RelAtom) else entry.bindings[a.node]
                s = float(scorer.atom_vector(i, entry.bindings)[target])
            resolved.append((i, s))
        entry.atoms = resolved


def beam_answer(params, aug, stats, query: Query, beam_k: int = 64, tnorm_kind=TNormKind.PRODUCT,
                **flags) -> AnswerRanking:
    """Rank all entities for an entity-answer query."""
    options = AnswerOptions(beam_k=beam_k, tnorm=tnorm_kind, **flags)
    if query.is_literal:
        raise QueryError("bad_target", "beam_answer needs an entity target; use literal_answer")
    return rank_entities(params, aug, stats, query, options)


def literal_answer(params, aug, stats, query: Query, beam_k: int = 64, tnorm_kind=TNormKind.PRODUCT,
                   aggregator=None, value_ranges=None, **flags) -> LiteralAnswer:
    """Aggregate predicted values over the top ``beam_k`` sink entities."""
    options = AnswerOptions(beam_k=beam_k, tnorm=tnorm_kind, **flags)
    va = query.value_atom
    if va is None:
        raise QueryError("bad_target", "literal_answer needs a value target")
    aggregator = aggregator or query.aggregator or "mean"
    ranking = rank_entities(params, aug, stats, query, options)
    if query.is_anchor(query.entity_sink):
        ents = [query.anchors[query.entity_sink]]
    else:
        ents = [int(e) for e in ranking.order[:beam_k]]
    if not ents:
        raise ValueError("no candidate entities")
    preds = [float(v) for v in np.atleast_1d(predict_attribute(params, np.asarray(ents), va.attribute))]
    value = aggregate(preds, aggregator)
    raw = None
    if value_ranges and va.attribute in value_ranges:
        lo, hi = value_ranges[va.attribute]
        raw = float(denormalize_value(value, lo, hi))
    return LiteralAnswer(value, raw, list(zip(ents, preds)), ranking)
