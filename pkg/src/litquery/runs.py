"""Glue between the data, model and answering layers used by the CLI."""
from __future__ import annotations

from dataclasses import dataclass

from .beam import AnswerOptions, literal_answer, rank_entities
from .benchmark import mean_predictor
from .kg import (
    AttributeStats,
    ExistenceAugmentation,
    KnowledgeGraph,
    augment_existence,
    compute_stats,
    denormalize_value,
    load_dataset,
    normalize_attributes,
)
from .model import ModelParams, load_checkpoint
from .query import QueryError, validate
from .trainer import TrainConfig, fit


@dataclass
class Prepared:
    kg: KnowledgeGraph  # normalized, without existence triples
    raw_stats: AttributeStats
    stats: AttributeStats  # normalized space


def prepare(data_dir) -> Prepared:
    kg = load_dataset(data_dir)
    raw_stats = compute_stats(kg)
    kg = normalize_attributes(kg, raw_stats)
    return Prepared(kg, raw_stats, compute_stats(kg))


def train_model(prep: Prepared, config: TrainConfig, log_path=None):
    aug_kg, aug = augment_existence(prep.kg)
    params, log = fit(aug_kg, aug, config, log_path=log_path)
    params.meta = {
        "entities": list(prep.kg.entities),
        "relations": list(prep.kg.relations),
        "attributes": list(prep.kg.attributes),
        "n_base_relations": prep.kg.n_relations,
        "augmentation": aug.to_json(),
        "stats": prep.stats.to_json(),
        "raw_stats": prep.raw_stats.to_json(),
        "value_ranges": {str(a): list(r) for a, r in prep.kg.value_ranges.items()},
        "train_config": config.to_dict(),
    }
    return params, log


@dataclass
class LoadedModel:
    params: ModelParams
    aug: ExistenceAugmentation
    stats: AttributeStats
    value_ranges: dict
    meta: dict

    @property
    def n_entities(self) -> int:
        return self.aug.dummy_entity

    @property
    def n_relations(self) -> int:
        return self.meta["n_base_relations"]

    @property
    def n_attributes(self) -> int:
        return len(self.meta["attributes"])

    def check(self, query) -> None:
        try:
            validate(query, self.n_entities, self.n_relations, self.n_attributes)
        except QueryError as err:
            raise QueryError(err.code, f"query does not match checkpoint vocabulary ({err})") from None

    def entity_name(self, e: int) -> str:
        return self.meta["entities"][e]

    def relation_name(self, r: int) -> str:
        return self.meta["relations"][r]

    def attribute_name(self, a: int) -> str:
        return self.meta["attributes"][a]


def load_model(path) -> LoadedModel:
    params = load_checkpoint(path)
    meta = params.meta
    if "augmentation" not in meta:
        raise ValueError(f"{path}: checkpoint lacks vocabulary metadata")
    return LoadedModel(
        params=params,
        aug=ExistenceAugmentation.from_json(meta["augmentation"]),
        stats=AttributeStats.from_json(meta["stats"]),
        value_ranges={int(a): tuple(r) for a, r in meta["value_ranges"].items()},
        meta=meta,
    )


def answer_record(model: LoadedModel, query, options: AnswerOptions, aggregator=None, baseline=None,
                  top=10) -> dict:
    """One output line of ``answer``: a full ranking or a literal value."""
    model.check(query)
    if query.is_literal:
        attr = query.value_atom.attribute
        if baseline == "mean":
            value = mean_predictor(model.stats, attr)
            lo, hi = model.value_ranges.get(attr, (0.0, 1.0))
            return {"value": value, "value_raw": float(denormalize_value(value, lo, hi)), "entities": []}
        ans = literal_answer(
            model.params, model.aug, model.stats, query, options.beam_k, options.tnorm,
            aggregator=aggregator, value_ranges=model.value_ranges,
            use_exists=options.use_exists, use_filter=options.use_filter, global_sigma=options.global_sigma,
        )
        return {"value": ans.value, "value_raw": ans.value_raw, "entities": [[e, v] for e, v in ans.entities]}
    ranking = rank_entities(model.params, model.aug, model.stats, query, options)
    return {
        "ranking": [int(e) for e in ranking.order],
        "top": [[e, s] for e, s in ranking.top(top)],
    }

