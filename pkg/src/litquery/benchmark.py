"""Benchmark query generation and evaluation.

Queries are sampled by walking backwards from a sampled answer entity on the
full graph.  Answers derivable on the observed graph are *easy*; answers only
derivable with the held-out triples are *hard*, and only those are scored,
with filtered ranks.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .fuzzy import FilterKind
from .kg import SPLIT_NAMES, SPLITS, KnowledgeGraph, denormalize_value
from .query import (
    LITERAL_TYPES,
    QUERY_TYPES,
    GraphIndex,
    Query,
    QueryError,
    aggregate,
    build_query,
    symbolic_entities,
    symbolic_values,
)

logger = logging.getLogger(__name__)

MAX_ATTEMPTS = 100
FILTER_KIND_TYPES = {"ai-lt": FilterKind.LT, "ai-eq": FilterKind.EQ, "ai-gt": FilterKind.GT}
GENERATABLE = QUERY_TYPES + tuple(FILTER_KIND_TYPES)


class GenerationError(RuntimeError):
    pass


@dataclass
class BenchmarkQuery:
    query: Query
    easy: list
    hard: list
    answer: float | None = None  # literal ground truth, normalized space
    answer_raw: float | None = None

    def to_json(self) -> dict:
        out = self.query.to_json()
        out["easy"] = list(self.easy)
        out["hard"] = list(self.hard)
        if self.answer is not None:
            out["answer"] = self.answer
            out["answer_raw"] = self.answer_raw
        return out

    @classmethod
    def from_json(cls, data: dict) -> "BenchmarkQuery":
        return cls(
            query=Query.from_json(data),
            easy=[int(x) for x in data.get("easy", [])],
            hard=[int(x) for x in data.get("hard", [])],
            answer=data.get("answer"),
            answer_raw=data.get("answer_raw"),
        )


class _Sampler:
    def __init__(self, full: KnowledgeGraph, train_values: dict, rng):
        self.rng = rng
        self.incoming: dict = {}
        for h, r, t in full.rel_triples.tolist():
            self.incoming.setdefault(t, []).append((h, r))
        for v in self.incoming.values():
            v.sort()
        self.with_in = sorted(self.incoming)
        self.attrs_of: dict = {}
        for e, a in full.attr_index.tolist():
            self.attrs_of.setdefault(e, []).append(a)
        for v in self.attrs_of.values():
            v.sort()
        self.with_attr = sorted(self.attrs_of)
        self.train_values = train_values
        self.all_attributes = sorted(a for a, v in train_values.items() if len(v))

    def pick(self, seq):
        return seq[int(self.rng.integers(len(seq)))] if seq else None

    def in_edge(self, t):
        return self.pick(self.incoming.get(t, []))

    def in_edges(self, t, k):
        edges = self.incoming.get(t, [])
        if len(edges) < k:
            return None
        idx = self.rng.choice(len(edges), size=k, replace=False)
        return [edges[i] for i in sorted(idx)]

    def filter_spec(self, attribute, kind=None):
        kind = FilterKind(kind) if kind is not None else self.pick(list(FilterKind))
        values = self.train_values.get(attribute)
        if values is None or not len(values):
            return None
        return (attribute, kind, float(self.pick(list(values))))

    def sample(self, qtype, kind=None) -> Query | None:
        pick = self.pick
        if qtype in LITERAL_TYPES:
            x = pick(self.with_attr)
            if x is None:
                return None
            a = pick(self.attrs_of[x])
            if qtype == "1ap":
                return build_query("1ap", [x], [], attribute=a)
            e1 = self.in_edge(x)
            if e1 is None:
                return None
            if qtype == "2ap":
                return build_query("2ap", [e1[0]], [e1[1]], attribute=a)
            e0 = self.in_edge(e1[0])
            if e0 is None:
                return None
            return build_query("3ap", [e0[0]], [e0[1], e1[1]], attribute=a)

        if qtype in ("ai", "2ai", "pai", "au"):
            t = pick(self.with_attr)
            if t is None:
                return None
            attrs = self.attrs_of[t]
            a1 = pick(attrs)
            f1 = self.filter_spec(a1, kind)
            if f1 is None:
                return None
            if qtype == "ai":
                return build_query("ai", filters=[f1])
            if qtype == "pai":
                e = self.in_edge(t)
                return None if e is None else build_query("pai", [e[0]], [e[1]], [f1])
            others = [a for a in (attrs if qtype == "2ai" else self.all_attributes) if a != a1]
            a2 = pick(others)
            f2 = self.filter_spec(a2) if a2 is not None else None
            if f2 is None:
                return None
            return build_query(qtype, filters=[f1, f2])
        if qtype == "aip":
            t = pick(self.with_in)
            if t is None:
                return None
            cands = [(x, r) for x, r in self.incoming[t] if x in self.attrs_of]
            if not cands:
                return None
            x, r = pick(cands)
            f = self.filter_spec(pick(self.attrs_of[x]), kind)
            return None if f is None else build_query("aip", [], [r], [f])

        t = pick(self.with_in)
        if t is None:
            return None
        if qtype == "1p":
            h, r = self.in_edge(t)
            return build_query("1p", [h], [r])
        if qtype in ("2i", "3i", "2u"):
            edges = self.in_edges(t, 3 if qtype == "3i" else 2)
            if edges is None:
                return None
            return build_query(qtype, [h for h, _ in edges], [r for _, r in edges])
        if qtype == "pi":
            edges = self.in_edges(t, 2)
            if edges is None:
                return None
            (x, r2), (h2, r3) = edges if edges[0][0] in self.incoming else edges[::-1]
            e = self.in_edge(x)
            return None if e is None else build_query("pi", [e[0], h2], [e[1], r2, r3])
        x, r_last = self.in_edge(t)
        if qtype in ("ip", "up"):
            edges = self.in_edges(x, 2)
            if edges is None:
                return None
            (h1, r1), (h2, r2) = edges
            return build_query(qtype, [h1, h2], [r1, r2, r_last])
        e1 = self.in_edge(x)
        if e1 is None:
            return None
        if qtype == "2p":
            return build_query("2p", [e1[0]], [e1[1], r_last])
        e0 = self.in_edge(e1[0])
        if e0 is None:
            return None
        return build_query("3p", [e0[0]], [e0[1], e1[1], r_last])


def split_graphs(kg: KnowledgeGraph, split: str = "test"):
    """Observed and full graph for queries evaluated on ``split``."""
    code = SPLITS[split]
    observed = [SPLIT_NAMES[c] for c in range(code)] or ["train"]
    full = [SPLIT_NAMES[c] for c in range(code + 1)]
    if split == "train":
        observed = []
    return kg.select(observed), kg.select(full)


def generate(kg: KnowledgeGraph, stats, qtype: str, count: int, seed: int = 0, split: str = "test",
             max_attempts: int = MAX_ATTEMPTS) -> list:
    """Sample ``count`` queries of ``qtype`` with easy/hard answers.

    ``kg`` is the (normalized, non-augmented) graph with all splits; ``stats``
    are its train statistics.  Queries without hard answers are resampled,
    at most ``max_attempts`` times per query.
    """
    if qtype not in GENERATABLE:
        raise QueryError("unknown_type", f"unknown query type {qtype!r}")
    base_type = "ai" if qtype in FILTER_KIND_TYPES else qtype
    kind = FILTER_KIND_TYPES.get(qtype)
    rng = np.random.default_rng(seed)
    observed, full = split_graphs(kg, split)
    obs_index, full_index = GraphIndex.from_graph(observed), GraphIndex.from_graph(full)
    train = kg.select(["train"])
    train_values = {
        a: np.sort(train.attr_values[train.attr_index[:, 1] == a]) for a in range(kg.n_attributes)
    }
    sampler = _Sampler(full, train_values, rng)
    seen = set()
    out = []
    for _ in range(count):
        for _attempt in range(max_attempts):
            q = sampler.sample(base_type, kind)
            if q is None:
                continue
            if kind is not None:
                q = Query(qtype, q.anchors, q.atoms, q.target, q.aggregator)
            key = json.dumps(q.to_json(), sort_keys=True)
            if key in seen:
                continue
            bq = _ground_truth(q, obs_index, full_index, stats, kg)
            if bq is None:
                continue
            seen.add(key)
            out.append(bq)
            break
        else:
            raise GenerationError(
                f"could not realize a {qtype} query with hard answers in {max_attempts} attempts"
            )
    return out


def _ground_truth(q: Query, obs_index, full_index, stats, kg) -> BenchmarkQuery | None:
    if q.value_atom is not None:
        full_vals = symbolic_values(full_index, q, stats)
        if not full_vals:
            return None
        obs_vals = symbolic_values(obs_index, q, stats)
        if obs_vals == full_vals:
            return None
        answer = aggregate(full_vals.values(), q.aggregator)
        raw = None
        a = q.value_atom.attribute
        if a in kg.value_ranges:
            raw = float(denormalize_value(answer, *kg.value_ranges[a]))
        easy = sorted(obs_vals)
        hard = sorted(set(full_vals) - set(obs_vals))
        return BenchmarkQuery(q, easy, hard, answer, raw)
    full_ans = symbolic_entities(full_index, q, stats)
    easy = symbolic_entities(obs_index, q, stats)
    hard = full_ans - easy
    if not hard:
        return None
    return BenchmarkQuery(q, sorted(easy), sorted(hard))


# -- evaluation -------------------------------------------------------------

HITS = (1, 3, 10)


@dataclass
class MetricsReport:
    entity: dict = field(default_factory=dict)  # type -> {mrr, hits@k, count}
    literal: dict = field(default_factory=dict)  # type -> {mae, mse, count}

    def to_json(self) -> dict:
        return {"entity": self.entity, "literal": self.literal}

    @classmethod
    def from_json(cls, data: dict) -> "MetricsReport":
        return cls(entity=data.get("entity", {}), literal=data.get("literal", {}))

    def merge(self, other: "MetricsReport") -> "MetricsReport":
        return MetricsReport({**self.entity, **other.entity}, {**self.literal, **other.literal})


def filtered_ranks(order, easy, hard) -> np.ndarray:
    """Filtered rank of each hard answer: other answers are skipped."""
    order = np.asarray(order)
    answers = set(easy) | set(hard)
    is_answer = np.fromiter((int(e) in answers for e in order), dtype=bool, count=len(order))
    nonans_before = np.concatenate([[0], np.cumsum(~is_answer)[:-1]])
    pos = {int(e): i for i, e in enumerate(order)}
    missing = [h for h in hard if h not in pos]
    if missing:
        raise ValueError(f"ranking misses answer entities {missing[:5]}")
    return np.array([nonans_before[pos[h]] + 1 for h in hard], dtype=np.int64)


def _check_ranking(order, n_entities):
    order = np.asarray(order)
    if n_entities is not None:
        if len(order) != n_entities or not np.array_equal(np.sort(order), np.arange(n_entities)):
            raise ValueError("ranking is not a permutation of all entities")
    elif len(np.unique(order)) != len(order):
        raise ValueError("ranking repeats entities")


def evaluate_entity(rankings, queries, n_entities=None) -> MetricsReport:
    """Filtered MRR and Hits@k per query type.

    Ranks are averaged per query first, then across the queries of a type.
    """
    if len(rankings) != len(queries):
        raise ValueError("one ranking per query required")
    per_type: dict = {}
    for order, bq in zip(rankings, queries):
        _check_ranking(order, n_entities)
        if not bq.hard:
            continue
        ranks = filtered_ranks(order, bq.easy, bq.hard)
        row = [float(np.mean(1.0 / ranks))] + [float(np.mean(ranks <= k)) for k in HITS]
        per_type.setdefault(bq.query.qtype, []).append(row)
    report = MetricsReport()
    for qtype, rows in sorted(per_type.items()):
        m = np.mean(rows, axis=0)
        report.entity[qtype] = {
            "mrr": float(m[0]),
            **{f"hits@{k}": float(v) for k, v in zip(HITS, m[1:])},
            "count": len(rows),
        }
    return report


def evaluate_literal(predictions, queries) -> MetricsReport:
    if len(predictions) != len(queries):
        raise ValueError("one prediction per query required")
    per_type: dict = {}
    for pred, bq in zip(predictions, queries):
        if bq.answer is None:
            raise ValueError("query has no literal ground truth")
        per_type.setdefault(bq.query.qtype, []).append(float(pred) - float(bq.answer))
    report = MetricsReport()
    for qtype, errs in sorted(per_type.items()):
        e = np.asarray(errs)
        report.literal[qtype] = {
            "mae": float(np.mean(np.abs(e))),
            "mse": float(np.mean(e**2)),
            "count": len(e),
        }
    return report


def mean_predictor(stats, attribute: int) -> float:
    """Train mean of the attribute."""
    try:
        return stats.mean(attribute)
    except KeyError:
        raise ValueError(f"attribute {attribute} has no training values") from None


def mean_predictions(stats, queries) -> list:
    return [mean_predictor(stats, bq.query.value_atom.attribute) for bq in queries]


# -- tables -----------------------------------------------------------------

def _type_order(types):
    rank = {t: i for i, t in enumerate(GENERATABLE)}
    return sorted(types, key=lambda t: (rank.get(t, len(rank)), t))


def format_table(reports: dict) -> str:
    """Plain-text tables: one block per metric, one row per method."""
    lines = []
    entity_types = _type_order({t for r in reports.values() for t in r.entity})
    if entity_types:
        header = ["Method", "Average"] + entity_types
        for metric in ("mrr",) + tuple(f"hits@{k}" for k in HITS):
            rows = []
            for method, rep in reports.items():
                vals = [rep.entity.get(t, {}).get(metric) for t in entity_types]
                present = [v for v in vals if v is not None]
                avg = float(np.mean(present)) if present else None
                rows.append([method] + [_fmt(avg)] + [_fmt(v) for v in vals])
            lines += _render(metric.upper(), header, rows)
    literal_types = _type_order({t for r in reports.values() for t in r.literal})
    if literal_types:
        header = ["Method"] + [f"{t} {m}" for t in literal_types for m in ("MAE", "MSE")]
        rows = []
        for method, rep in reports.items():
            row = [method]
            for t in literal_types:
                d = rep.literal.get(t, {})
                row += [_fmt(d.get("mae")), _fmt(d.get("mse"))]
            rows.append(row)
        lines += _render("LITERAL", header, rows)
    return "\n".join(lines)


def _fmt(v):
    return "-" if v is None else f"{v:.3f}"


def _render(title, header, rows):
    widths = [max(len(str(r[i])) for r in [header] + rows) for i in range(len(header))]
    fmt = lambda r: "  ".join(str(c).ljust(w) if i == 0 else str(c).rjust(w) for i, (c, w) in enumerate(zip(r, widths)))
    rule = "-" * len(fmt(header))
    return [title, rule, fmt(header), rule] + [fmt(r) for r in rows] + [rule, ""]
