"""Knowledge graphs with numeric attribute triples.

Graphs are read from UTF-8 TSV files (``head<TAB>relation<TAB>tail`` for
relational triples, ``entity<TAB>attribute<TAB>value`` for attribute
triples).  Every triple carries a split tag; statistics are always computed
on the training split.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)

TRAIN, VALID, TEST = 0, 1, 2
SPLITS = {"train": TRAIN, "valid": VALID, "test": TEST}
SPLIT_NAMES = {v: k for k, v in SPLITS.items()}

EXISTS_ENTITY = "__exists__"


class GraphFormatError(ValueError):
    """Raised for malformed or inconsistent graph input."""


def _split_code(split) -> int:
    if isinstance(split, str):
        try:
            return SPLITS[split]
        except KeyError:
            raise GraphFormatError(f"unknown split {split!r}") from None
    return int(split)


@dataclass(frozen=True)
class KnowledgeGraph:
    entities: tuple
    relations: tuple
    attributes: tuple
    rel_triples: np.ndarray  # (n, 3) int64
    rel_split: np.ndarray  # (n,) int8
    attr_index: np.ndarray  # (m, 2) int64: entity, attribute
    attr_values: np.ndarray  # (m,) float64
    attr_split: np.ndarray  # (m,) int8
    # attribute id -> (lo, hi) of the train range, set by normalize_attributes
    value_ranges: dict = field(default_factory=dict)

    @property
    def n_entities(self) -> int:
        return len(self.entities)

    @property
    def n_relations(self) -> int:
        return len(self.relations)

    @property
    def n_attributes(self) -> int:
        return len(self.attributes)

    @property
    def normalized(self) -> bool:
        return bool(self.value_ranges)

    def counts(self) -> dict:
        out = {
            "entities": self.n_entities,
            "relations": self.n_relations,
            "attributes": self.n_attributes,
            "rel_triples": int(len(self.rel_triples)),
            "attr_triples": int(len(self.attr_values)),
        }
        for name, code in SPLITS.items():
            out[f"rel_{name}"] = int(np.sum(self.rel_split == code))
            out[f"attr_{name}"] = int(np.sum(self.attr_split == code))
        return out

    def select(self, splits) -> "KnowledgeGraph":
        """Return the graph restricted to triples of the given splits (same vocabulary)."""
        codes = [_split_code(s) for s in splits]
        rm = np.isin(self.rel_split, codes)
        am = np.isin(self.attr_split, codes)
        return replace(
            self,
            rel_triples=self.rel_triples[rm],
            rel_split=self.rel_split[rm],
            attr_index=self.attr_index[am],
            attr_values=self.attr_values[am],
            attr_split=self.attr_split[am],
        )

    def adjacency(self) -> dict:
        """Map ``(head, relation)`` to the set of tails."""
        adj: dict = {}
        for h, r, t in self.rel_triples.tolist():
            adj.setdefault((h, r), set()).add(t)
        return adj

    def attribute_table(self) -> dict:
        """Map ``(entity, attribute)`` to its value."""
        return {
            (int(e), int(a)): float(v)
            for (e, a), v in zip(self.attr_index, self.attr_values)
        }

    def validate(self) -> None:
        if set(self.relations) & set(self.attributes):
            raise GraphFormatError("relation and attribute names overlap")
        if len(self.rel_triples):
            if self.rel_triples.min() < 0:
                raise GraphFormatError("negative id in relational triples")
            if self.rel_triples[:, [0, 2]].max() >= self.n_entities:
                raise GraphFormatError("entity id out of range")
            if self.rel_triples[:, 1].max() >= self.n_relations:
                raise GraphFormatError("relation id out of range")
        if len(self.attr_index):
            if self.attr_index[:, 0].max() >= self.n_entities:
                raise GraphFormatError("entity id out of range")
            if self.attr_index[:, 1].max() >= self.n_attributes:
                raise GraphFormatError("attribute id out of range")
            keys = self.attr_index[:, 0] * max(self.n_attributes, 1) + self.attr_index[:, 1]
            if len(np.unique(keys)) != len(keys):
                raise GraphFormatError("duplicate (entity, attribute) pair")
        if self.normalized and len(self.attr_values):
            if self.attr_values.min() < 0.0 or self.attr_values.max() > 1.0:
                raise GraphFormatError("normalized value outside [0, 1]")


class GraphBuilder:
    """Accumulates triples from several files, interning names to ids."""

    def __init__(self):
        self.entities: dict = {}
        self.relations: dict = {}
        self.attributes: dict = {}
        self._rel: list = []
        self._rel_split: list = []
        self._attr: list = []
        self._attr_vals: list = []
        self._attr_split: list = []
        self._attr_seen: set = set()

    @staticmethod
    def _intern(table: dict, name: str) -> int:
        idx = table.get(name)
        if idx is None:
            idx = table[name] = len(table)
        return idx

    def entity(self, name: str) -> int:
        return self._intern(self.entities, name)

    def relation(self, name: str) -> int:
        if name in self.attributes:
            raise GraphFormatError(f"{name!r} already used as an attribute")
        return self._intern(self.relations, name)

    def attribute(self, name: str) -> int:
        if name in self.relations:
            raise GraphFormatError(f"{name!r} already used as a relation")
        return self._intern(self.attributes, name)

    def add_relational(self, head: str, relation: str, tail: str, split="train"):
        self._rel.append((self.entity(head), self.relation(relation), self.entity(tail)))
        self._rel_split.append(_split_code(split))

    def add_attribute(self, entity: str, attribute: str, value: float, split="train"):
        key = (self.entity(entity), self.attribute(attribute))
        if key in self._attr_seen:
            raise GraphFormatError(f"duplicate attribute triple for ({entity}, {attribute})")
        self._attr_seen.add(key)
        self._attr.append(key)
        self._attr_vals.append(float(value))
        self._attr_split.append(_split_code(split))

    def read_relational(self, path, split="train") -> int:
        n = 0
        for lineno, parts in _rows(path):
            if len(parts) != 3:
                raise GraphFormatError(f"{path}:{lineno}: expected 3 tab-separated fields")
            self.add_relational(*parts, split=split)
            n += 1
        return n

    def read_attributes(self, path, split="train") -> int:
        n = 0
        for lineno, parts in _rows(path):
            if len(parts) != 3:
                raise GraphFormatError(f"{path}:{lineno}: expected 3 tab-separated fields")
            try:
                value = float(parts[2])
            except ValueError:
                raise GraphFormatError(f"{path}:{lineno}: non-numeric value {parts[2]!r}") from None
            if not math.isfinite(value):
                raise GraphFormatError(f"{path}:{lineno}: non-finite value {parts[2]!r}")
            try:
                self.add_attribute(parts[0], parts[1], value, split=split)
            except GraphFormatError as err:
                raise GraphFormatError(f"{path}:{lineno}: {err}") from None
            n += 1
        return n

    def build(self) -> KnowledgeGraph:
        kg = KnowledgeGraph(
            entities=tuple(self.entities),
            relations=tuple(self.relations),
            attributes=tuple(self.attributes),
            rel_triples=np.asarray(self._rel, dtype=np.int64).reshape(-1, 3),
            rel_split=np.asarray(self._rel_split, dtype=np.int8),
            attr_index=np.asarray(self._attr, dtype=np.int64).reshape(-1, 2),
            attr_values=np.asarray(self._attr_vals, dtype=np.float64),
            attr_split=np.asarray(self._attr_split, dtype=np.int8),
        )
        kg.validate()
        return kg


def _rows(path):
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            yield lineno, line.split("\t")


def load_graph(rel_path=None, attr_path=None, split="train", builder=None) -> GraphBuilder:
    """Read one split's files into ``builder`` (a fresh one if omitted).

    Passing the same builder across calls keeps ids consistent between splits.
    """
    builder = builder if builder is not None else GraphBuilder()
    n_rel = builder.read_relational(rel_path, split) if rel_path else 0
    n_attr = builder.read_attributes(attr_path, split) if attr_path else 0
    logger.info("loaded %s: %d relational, %d attribute triples", split, n_rel, n_attr)
    return builder


DATASET_FILES = {
    "train": ("train.tsv", "attr_train.tsv"),
    "valid": ("valid.tsv", "attr_valid.tsv"),
    "test": ("test.tsv", "attr_test.tsv"),
}


def load_dataset(directory) -> KnowledgeGraph:
    """Load ``train/valid/test.tsv`` and ``attr_{split}.tsv`` from a directory.

    Only ``train.tsv`` is mandatory.
    """
    directory = Path(directory)
    if not (directory / "train.tsv").exists():
        raise FileNotFoundError(directory / "train.tsv")
    builder = GraphBuilder()
    for split, (rel_name, attr_name) in DATASET_FILES.items():
        rel = directory / rel_name
        attr = directory / attr_name
        load_graph(rel if rel.exists() else None, attr if attr.exists() else None, split, builder)
    return builder.build()


@dataclass(frozen=True)
class AttrStat:
    sigma: float
    min: float
    max: float
    mean: float
    count: int
    fallback: bool = False


@dataclass(frozen=True)
class AttributeStats:
    per_attribute: dict  # attribute id -> AttrStat
    global_sigma: float

    def sigma(self, attribute: int, use_global: bool = False) -> float:
        if use_global:
            return self.global_sigma
        return self.per_attribute[attribute].sigma

    def mean(self, attribute: int) -> float:
        return self.per_attribute[attribute].mean

    def to_json(self, names=None) -> dict:
        attrs = {}
        for a, s in sorted(self.per_attribute.items()):
            key = names[a] if names is not None else str(a)
            attrs[key] = {
                "id": a,
                "sigma": s.sigma,
                "min": s.min,
                "max": s.max,
                "mean": s.mean,
                "count": s.count,
                "fallback": s.fallback,
            }
        return {"global_sigma": self.global_sigma, "attributes": attrs}

    @classmethod
    def from_json(cls, data: dict) -> "AttributeStats":
        per = {}
        for entry in data["attributes"].values():
            per[int(entry["id"])] = AttrStat(
                sigma=entry["sigma"],
                min=entry["min"],
                max=entry["max"],
                mean=entry["mean"],
                count=entry["count"],
                fallback=entry.get("fallback", False),
            )
        return cls(per_attribute=per, global_sigma=data["global_sigma"])

    def dump(self, path, names=None) -> None:
        Path(path).write_text(json.dumps(self.to_json(names), indent=2))


def compute_stats(kg: KnowledgeGraph) -> AttributeStats:
    """Population statistics of the train-split attribute values.

    Attributes whose standard deviation is zero (a single observation or a
    constant value) fall back to the standard deviation over all values.
    """
    mask = kg.attr_split == TRAIN
    attrs = kg.attr_index[mask, 1]
    values = kg.attr_values[mask]
    if len(values) == 0 and kg.n_attributes:
        raise ValueError("no training attribute values")
    global_sigma = float(np.std(values)) if len(values) else 0.0
    if global_sigma <= 0.0:
        if len(values):
            logger.warning("all attribute values identical; using sigma=1")
        global_sigma = 1.0
    per = {}
    for a in np.unique(attrs).tolist():
        v = values[attrs == a]
        sigma = float(np.std(v))
        fallback = sigma <= 0.0
        if fallback:
            logger.info("attribute %s: sigma falls back to global", kg.attributes[a])
            sigma = global_sigma
        per[a] = AttrStat(
            sigma=sigma,
            min=float(v.min()),
            max=float(v.max()),
            mean=float(v.mean()),
            count=int(len(v)),
            fallback=fallback,
        )
    return AttributeStats(per_attribute=per, global_sigma=global_sigma)


def normalize_value(value, lo: float, hi: float):
    if hi == lo:
        return np.full_like(np.asarray(value, dtype=np.float64), 0.5)
    return np.clip((np.asarray(value, dtype=np.float64) - lo) / (hi - lo), 0.0, 1.0)


def denormalize_value(value, lo: float, hi: float):
    if hi == lo:
        return np.full_like(np.asarray(value, dtype=np.float64), lo)
    return np.asarray(value, dtype=np.float64) * (hi - lo) + lo


def normalize_attributes(kg: KnowledgeGraph, stats: AttributeStats) -> KnowledgeGraph:
    """Min-max scale every attribute to [0, 1] using its train range.

    Valid/test values outside the train range are clamped.  Triples of
    attributes never observed in train cannot be scaled and are dropped.
    Statistics of the returned graph are obtained with ``compute_stats``.
    """
    if kg.normalized:
        raise ValueError("graph is already normalized")
    values = kg.attr_values.copy()
    keep = np.ones(len(values), dtype=bool)
    ranges = {}
    for a in range(kg.n_attributes):
        m = kg.attr_index[:, 1] == a
        if a not in stats.per_attribute:
            if m.any():
                logger.warning(
                    "attribute %s has no train values; dropping %d triples",
                    kg.attributes[a],
                    int(m.sum()),
                )
            keep &= ~m
            continue
        s = stats.per_attribute[a]
        if s.max == s.min:
            logger.info("attribute %s is constant on train; mapped to 0.5", kg.attributes[a])
        ranges[a] = (s.min, s.max)
        values[m] = normalize_value(values[m], s.min, s.max)
    return replace(
        kg,
        attr_index=kg.attr_index[keep],
        attr_values=values[keep],
        attr_split=kg.attr_split[keep],
        value_ranges=ranges,
    )


@dataclass(frozen=True)
class ExistenceAugmentation:
    dummy_entity: int
    relation_of: dict  # attribute id -> dummy relation id
    triples: np.ndarray  # (n, 3) generated train triples

    def to_json(self) -> dict:
        return {
            "dummy_entity": self.dummy_entity,
            "relation_of": {str(a): r for a, r in self.relation_of.items()},
        }

    @classmethod
    def from_json(cls, data: dict) -> "ExistenceAugmentation":
        return cls(
            dummy_entity=int(data["dummy_entity"]),
            relation_of={int(a): int(r) for a, r in data["relation_of"].items()},
            triples=np.zeros((0, 3), dtype=np.int64),
        )


def augment_existence(kg: KnowledgeGraph):
    """Add a dummy entity and a relation per attribute linking owners to it.

    For each train attribute triple ``(e, a, v)`` a train triple
    ``(e, r_a, dummy)`` is emitted.  The input graph is not modified.
    """
    dummy = kg.n_entities
    relation_of = {a: kg.n_relations + a for a in range(kg.n_attributes)}
    mask = kg.attr_split == TRAIN
    ents = kg.attr_index[mask, 0]
    rels = kg.attr_index[mask, 1] + kg.n_relations
    triples = np.stack([ents, rels, np.full_like(ents, dummy)], axis=1).astype(np.int64)
    aug_kg = replace(
        kg,
        entities=kg.entities + (EXISTS_ENTITY,),
        relations=kg.relations + tuple(f"__has__{name}" for name in kg.attributes),
        rel_triples=np.concatenate([kg.rel_triples, triples.reshape(-1, 3)]),
        rel_split=np.concatenate([kg.rel_split, np.full(len(triples), TRAIN, dtype=np.int8)]),
    )
    return aug_kg, ExistenceAugmentation(dummy_entity=dummy, relation_of=relation_of, triples=triples)
