"""Joint training of the link scorer and the attribute predictor.

Link loss: full-vocabulary cross-entropy for tail prediction and, through
reciprocal relations, head prediction, plus an N3 penalty on the moduli of
the complex factors.  Attribute loss: mean absolute error of the value
predictor weighted by ``attr_weight``.  Gradients are derived by hand and
applied with Adagrad.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, fields

import numpy as np

from .kg import TRAIN, VALID, KnowledgeGraph
from .model import ModelParams, raw_all_tails

logger = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch, loss):
        super().__init__(f"non-finite loss {loss} at epoch {epoch}")
        self.epoch = epoch


@dataclass
class TrainConfig:
    rank: int = 32
    epochs: int = 100
    batch_size: int = 1000
    learning_rate: float = 0.1
    n3_weight: float = 0.01
    attr_weight: float = 1.0
    seed: int = 0
    patience: int = 10  # epochs without val MRR gain before stopping; 0 disables
    eval_every: int = 1
    init_std: float = 1e-3

    def __post_init__(self):
        for name in ("rank", "batch_size", "eval_every"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        for name in ("epochs", "patience"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        for name in ("learning_rate", "init_std"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        for name in ("n3_weight", "attr_weight"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in data.items() if k in known})

    def to_dict(self) -> dict:
        return asdict(self)


def _softmax(scores):
    z = scores - scores.max(axis=1, keepdims=True)
    np.exp(z, out=z)
    z /= z.sum(axis=1, keepdims=True)
    return z


def _logsumexp(scores):
    m = scores.max(axis=1)
    return m + np.log(np.exp(scores - m[:, None]).sum(axis=1))


def _n3(re, im, weight, scale):
    """N3 value and gradient of ``weight * scale * sum |x|^3`` on complex rows."""
    mod = np.sqrt(re * re + im * im)
    value = weight * scale * float(np.sum(mod**3))
    g = 3.0 * weight * scale * mod
    return value, g * re, g * im


def _direction_loss(params, heads, rels, targets, n3_weight, grads):
    b = len(heads)
    hr, hi = params.ent_re[heads], params.ent_im[heads]
    wr, wi = params.rel_re[rels], params.rel_im[rels]
    qr = hr * wr - hi * wi
    qi = hr * wi + hi * wr
    scores = qr @ params.ent_re.T + qi @ params.ent_im.T
    rows = np.arange(b)
    loss = float(np.mean(_logsumexp(scores) - scores[rows, targets]))

    g = _softmax(scores)
    g[rows, targets] -= 1.0
    g /= b
    grads.ent_re += g.T @ qr
    grads.ent_im += g.T @ qi
    dqr = g @ params.ent_re
    dqi = g @ params.ent_im
    np.add.at(grads.ent_re, heads, dqr * wr + dqi * wi)
    np.add.at(grads.ent_im, heads, -dqr * wi + dqi * wr)
    np.add.at(grads.rel_re, rels, dqr * hr + dqi * hi)
    np.add.at(grads.rel_im, rels, -dqr * hi + dqi * hr)

    if n3_weight > 0:
        for ids, re_arr, im_arr, g_re, g_im in (
            (heads, params.ent_re, params.ent_im, grads.ent_re, grads.ent_im),
            (rels, params.rel_re, params.rel_im, grads.rel_re, grads.rel_im),
            (targets, params.ent_re, params.ent_im, grads.ent_re, grads.ent_im),
        ):
            val, dre, dim = _n3(re_arr[ids], im_arr[ids], n3_weight, 1.0 / b)
            loss += val
            np.add.at(g_re, ids, dre)
            np.add.at(g_im, ids, dim)
    return loss


def link_loss_and_grad(params: ModelParams, triples, n3_weight: float = 0.0):
    """Cross-entropy over tails and over heads (reciprocal relations), plus N3.

    Returns ``(loss, grads)`` where ``grads`` is a ``ModelParams`` of
    gradients; the loss is the sum of the two directional batch means.
    """
    triples = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
    if len(triples) == 0:
        raise ValueError("empty batch")
    grads = ModelParams.zeros(params.n_entities, params.n_relations, params.n_attributes, params.rank)
    h, r, t = triples.T
    loss = _direction_loss(params, h, r, t, n3_weight, grads)
    loss += _direction_loss(params, t, r + params.n_relations, h, n3_weight, grads)
    return loss, grads


def attribute_loss_and_grad(params: ModelParams, entities, attributes, values, attr_weight: float = 1.0, grads=None):
    """``attr_weight`` times the mean absolute error of the value predictor."""
    entities = np.asarray(entities, dtype=np.int64)
    attributes = np.asarray(attributes, dtype=np.int64)
    values = np.asarray(values, dtype=np.float64)
    if grads is None:
        grads = ModelParams.zeros(params.n_entities, params.n_relations, params.n_attributes, params.rank)
    if len(values) == 0 or attr_weight == 0:
        return 0.0, grads
    d = params.rank
    feats = np.concatenate([params.ent_re[entities], params.ent_im[entities]], axis=1)
    w = params.attr_w[attributes]
    pred = np.einsum("ij,ij->i", feats, w) + params.attr_b[attributes]
    resid = pred - values
    loss = attr_weight * float(np.mean(np.abs(resid)))
    g = attr_weight * np.sign(resid) / len(values)
    np.add.at(grads.attr_w, attributes, g[:, None] * feats)
    np.add.at(grads.attr_b, attributes, g)
    gf = g[:, None] * w
    np.add.at(grads.ent_re, entities, gf[:, :d])
    np.add.at(grads.ent_im, entities, gf[:, d:])
    return loss, grads


class Adagrad:
    def __init__(self, params: ModelParams, lr: float, eps: float = 1e-10):
        self.lr = lr
        self.eps = eps
        self.acc = {k: np.zeros_like(v) for k, v in params.tensors().items()}

    def step(self, params: ModelParams, grads: ModelParams):
        for name, g in grads.tensors().items():
            acc = self.acc[name]
            acc += g * g
            getattr(params, name)[...] -= self.lr * g / (np.sqrt(acc) + self.eps)


def filtered_tail_ranks(params, triples, known: dict, n_candidates=None) -> np.ndarray:
    """Filtered rank of each tail among ``(h, r, ?)`` candidates.

    Other known tails are removed; ties are broken by ascending entity id.
    """
    triples = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
    n = n_candidates or params.n_entities
    ranks = np.empty(len(triples), dtype=np.int64)
    for start in range(0, len(triples), 512):
        chunk = triples[start : start + 512]
        scores = raw_all_tails(params, chunk[:, 0], chunk[:, 1])[:, :n]
        for i, (h, r, t) in enumerate(chunk.tolist()):
            s = scores[i]
            target = s[t]
            better = (s > target) | ((s == target) & (np.arange(n) < t))
            others = [x for x in known.get((h, r), ()) if x != t and x < n]
            better[others] = False
            ranks[start + i] = 1 + int(better.sum())
    return ranks


def link_mrr(params, triples, known, n_candidates=None) -> float:
    if len(triples) == 0:
        return float("nan")
    return float(np.mean(1.0 / filtered_tail_ranks(params, triples, known, n_candidates)))


def _known_tails(triples) -> dict:
    known: dict = {}
    for h, r, t in np.asarray(triples).tolist():
        known.setdefault((h, r), set()).add(t)
    return known


def fit(kg: KnowledgeGraph, aug, config: TrainConfig, log_path=None):
    """Train on the train split of a normalized, augmented graph.

    Returns ``(params, log)``.  When validation triples exist, the parameters
    with the best validation MRR (tail prediction, filtered) are returned.
    """
    if not kg.normalized and len(kg.attr_values):
        raise ValueError("attribute values must be normalized before training")
    rng = np.random.default_rng(config.seed)
    train = kg.rel_triples[kg.rel_split == TRAIN]
    am = kg.attr_split == TRAIN
    attr_ent = kg.attr_index[am, 0]
    attr_ids = kg.attr_index[am, 1]
    attr_vals = kg.attr_values[am]

    bias = np.zeros(kg.n_attributes)
    for a in range(kg.n_attributes):
        m = attr_ids == a
        if m.any():
            bias[a] = attr_vals[m].mean()
    params = ModelParams.init(
        kg.n_entities, kg.n_relations, kg.n_attributes, config.rank, rng,
        std=config.init_std, attr_bias=bias,
    )
    opt = Adagrad(params, config.learning_rate)

    valid = kg.rel_triples[kg.rel_split == VALID]
    known = _known_tails(kg.rel_triples[np.isin(kg.rel_split, [TRAIN, VALID])])
    n_real = aug.dummy_entity if aug is not None else kg.n_entities

    log = []
    best, best_mrr, stale = None, -math.inf, 0
    n_batches = max(1, math.ceil(len(train) / config.batch_size))
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(train))
        attr_order = rng.permutation(len(attr_vals))
        link_total = attr_total = 0.0
        for rel_idx, attr_idx in zip(
            np.array_split(order, n_batches), np.array_split(attr_order, n_batches)
        ):
            if len(rel_idx):
                link_loss, grads = link_loss_and_grad(params, train[rel_idx], config.n3_weight)
            else:
                link_loss = 0.0
                grads = ModelParams.zeros(params.n_entities, params.n_relations, params.n_attributes, params.rank)
            attr_loss, grads = attribute_loss_and_grad(
                params, attr_ent[attr_idx], attr_ids[attr_idx], attr_vals[attr_idx],
                config.attr_weight, grads,
            )
            opt.step(params, grads)
            link_total += link_loss
            attr_total += attr_loss
        link_total /= n_batches
        attr_total /= n_batches
        if not math.isfinite(link_total + attr_total):
            raise TrainingDiverged(epoch, link_total + attr_total)

        val_mrr = float("nan")
        if len(valid) and epoch % config.eval_every == 0:
            val_mrr = link_mrr(params, valid, known, n_real)
            if val_mrr > best_mrr:
                best, best_mrr, stale = params.copy(), val_mrr, 0
            else:
                stale += config.eval_every
        log.append({
            "epoch": epoch,
            "link_loss": link_total,
            "attr_loss": attr_total,
            "total_loss": link_total + attr_total,
            "val_mrr": val_mrr,
        })
        logger.info(
            "epoch %d link %.5f attr %.5f val_mrr %.4f", epoch, link_total, attr_total, val_mrr
        )
        if config.patience and best is not None and stale >= config.patience:
            logger.info("early stop at epoch %d (best val MRR %.4f)", epoch, best_mrr)
            break

    if best is not None:
        params = best
    if log_path is not None:
        write_log(log, log_path)
    return params, log


def write_log(log, path):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["epoch", "link_loss", "attr_loss", "total_loss", "val_mrr"])
        writer.writeheader()
        writer.writerows(log)
