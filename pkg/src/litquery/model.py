"""Complex-valued link scorer and linear attribute-value predictor.

Relation rows ``0 .. n_relations-1`` are the forward relations (including
the dummy existence relations); row ``r + n_relations`` is the learned
reciprocal of relation ``r``.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

TENSORS = ("ent_re", "ent_im", "rel_re", "rel_im", "attr_w", "attr_b")
MAGIC = b"LQCKPT01"


def logistic(x):
    x = np.asarray(x, dtype=np.float64)
    e = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return float(out) if out.ndim == 0 else out


class LinkScore(NamedTuple):
    raw: float
    calibrated: float


@dataclass
class ModelParams:
    ent_re: np.ndarray
    ent_im: np.ndarray
    rel_re: np.ndarray
    rel_im: np.ndarray
    attr_w: np.ndarray  # (n_attributes, 2 * rank)
    attr_b: np.ndarray  # (n_attributes,)
    meta: dict = field(default_factory=dict)

    @property
    def rank(self) -> int:
        return self.ent_re.shape[1]

    @property
    def n_entities(self) -> int:
        return self.ent_re.shape[0]

    @property
    def n_relations(self) -> int:
        """Forward relations; the reciprocal block doubles the row count."""
        return self.rel_re.shape[0] // 2

    @property
    def n_attributes(self) -> int:
        return self.attr_b.shape[0]

    @classmethod
    def zeros(cls, n_entities, n_relations, n_attributes, rank, meta=None):
        return cls(
            ent_re=np.zeros((n_entities, rank)),
            ent_im=np.zeros((n_entities, rank)),
            rel_re=np.zeros((2 * n_relations, rank)),
            rel_im=np.zeros((2 * n_relations, rank)),
            attr_w=np.zeros((n_attributes, 2 * rank)),
            attr_b=np.zeros(n_attributes),
            meta=dict(meta or {}),
        )

    @classmethod
    def init(cls, n_entities, n_relations, n_attributes, rank, rng, std=1e-3, attr_bias=None, meta=None):
        p = cls.zeros(n_entities, n_relations, n_attributes, rank, meta)
        p.ent_re[:] = rng.normal(0.0, std, p.ent_re.shape)
        p.ent_im[:] = rng.normal(0.0, std, p.ent_im.shape)
        p.rel_re[:] = rng.normal(0.0, std, p.rel_re.shape)
        p.rel_im[:] = rng.normal(0.0, std, p.rel_im.shape)
        if attr_bias is not None:
            p.attr_b[:] = attr_bias
        return p

    def tensors(self) -> dict:
        return {name: getattr(self, name) for name in TENSORS}

    def copy(self) -> "ModelParams":
        return ModelParams(**{k: v.copy() for k, v in self.tensors().items()}, meta=json.loads(json.dumps(self.meta)))

    def equals(self, other: "ModelParams") -> bool:
        return all(np.array_equal(a, b) for a, b in zip(self.tensors().values(), other.tensors().values()))

    def reciprocal(self, relation: int) -> int:
        n = self.n_relations
        return relation + n if relation < n else relation - n


def _check(params: ModelParams, entity=None, relation=None, attribute=None):
    if entity is not None and not 0 <= entity < params.n_entities:
        raise IndexError(f"entity id {entity} out of range")
    if relation is not None and not 0 <= relation < 2 * params.n_relations:
        raise IndexError(f"relation id {relation} out of range")
    if attribute is not None and not 0 <= attribute < params.n_attributes:
        raise IndexError(f"attribute id {attribute} out of range")


def _query(params: ModelParams, head, relation):
    """Complex product ``e_h * w_r`` as (re, im)."""
    hr, hi = params.ent_re[head], params.ent_im[head]
    wr, wi = params.rel_re[relation], params.rel_im[relation]
    return hr * wr - hi * wi, hr * wi + hi * wr


def score_link(params: ModelParams, head: int, relation: int, tail: int) -> LinkScore:
    """Real part of the trilinear product ``<e_h, w_r, conj(e_t)>``."""
    _check(params, entity=head, relation=relation)
    _check(params, entity=tail)
    qr, qi = _query(params, head, relation)
    raw = float(qr @ params.ent_re[tail] + qi @ params.ent_im[tail])
    return LinkScore(raw, logistic(raw))


def raw_all_tails(params: ModelParams, heads, relations) -> np.ndarray:
    """Raw scores against every entity; batched over heads/relations."""
    qr, qi = _query(params, heads, relations)
    return qr @ params.ent_re.T + qi @ params.ent_im.T


def score_all_tails(params: ModelParams, head: int, relation: int) -> np.ndarray:
    """Calibrated scores for ``(head, relation, x)`` over all entities ``x``."""
    _check(params, entity=head, relation=relation)
    return logistic(raw_all_tails(params, head, relation))


def entity_features(params: ModelParams, entities) -> np.ndarray:
    return np.concatenate([params.ent_re[entities], params.ent_im[entities]], axis=-1)


def predict_attribute(params: ModelParams, entity, attribute: int):
    """Linear value prediction; not clamped to [0, 1].

    ``entity`` may be an id, an id array or ``None`` for all entities.
    """
    _check(params, attribute=attribute)
    if entity is None:
        entity = np.arange(params.n_entities)
    elif np.ndim(entity) == 0:
        _check(params, entity=int(entity))
    out = entity_features(params, entity) @ params.attr_w[attribute] + params.attr_b[attribute]
    return float(out) if np.ndim(out) == 0 else out


def predict_exists(params: ModelParams, entity, attribute: int, aug):
    """Link likelihood between ``entity`` and the dummy entity via ``r_a``.

    ``entity`` may be an id or ``None`` for a vector over all entities.
    """
    if attribute not in aug.relation_of:
        raise KeyError(f"attribute {attribute} has no existence relation")
    r = aug.relation_of[attribute]
    if entity is None:
        _check(params, relation=r)
        qr, qi = _query(params, np.arange(params.n_entities), r)
        d = aug.dummy_entity
        return logistic(qr @ params.ent_re[d] + qi @ params.ent_im[d])
    return score_link(params, int(entity), r, aug.dummy_entity).calibrated


def save_checkpoint(params: ModelParams, path) -> None:
    """JSON header followed by little-endian float64 tensors in header order."""
    header = {
        "format": 1,
        "rank": params.rank,
        "tensors": [{"name": k, "shape": list(v.shape)} for k, v in params.tensors().items()],
        "meta": params.meta,
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for v in params.tensors().values():
            fh.write(np.ascontiguousarray(v, dtype="<f8").tobytes())


def read_header(path) -> dict:
    with open(path, "rb") as fh:
        if fh.read(len(MAGIC)) != MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        (n,) = struct.unpack("<Q", fh.read(8))
        return json.loads(fh.read(n).decode("utf-8"))


def load_checkpoint(path) -> ModelParams:
    data = Path(path).read_bytes()
    if data[: len(MAGIC)] != MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    (n,) = struct.unpack_from("<Q", data, len(MAGIC))
    offset = len(MAGIC) + 8
    header = json.loads(data[offset : offset + n].decode("utf-8"))
    offset += n
    arrays = {}
    for spec in header["tensors"]:
        count = int(np.prod(spec["shape"]))
        arr = np.frombuffer(data, dtype="<f8", count=count, offset=offset)
        arrays[spec["name"]] = arr.reshape(spec["shape"]).astype(np.float64)
        offset += 8 * count
    if offset != len(data):
        raise ValueError(f"{path}: trailing bytes in checkpoint")
    return ModelParams(**arrays, meta=header.get("meta", {}))
