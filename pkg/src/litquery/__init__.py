"""Answering multi-hop queries with numerical literals over incomplete knowledge graphs."""
from .beam import AnswerOptions, AnswerRanking, LiteralAnswer, beam_answer, literal_answer, rank_entities
from .fuzzy import FilterKind, TNormKind, filter_raw, filter_score, tconorm, tnorm
from .kg import GraphBuilder, KnowledgeGraph, augment_existence, compute_stats, load_dataset, load_graph
from .model import ModelParams, load_checkpoint, save_checkpoint, score_link
from .query import Query, QueryError, build_query, symbolic_answer, validate
from .trainer import TrainConfig, fit

__all__ = [
    "AnswerOptions", "AnswerRanking", "LiteralAnswer", "beam_answer", "literal_answer", "rank_entities",
    "FilterKind", "TNormKind", "filter_raw", "filter_score", "tconorm", "tnorm",
    "GraphBuilder", "KnowledgeGraph", "augment_existence", "compute_stats", "load_dataset", "load_graph",
    "ModelParams", "load_checkpoint", "save_checkpoint", "score_link",
    "Query", "QueryError", "build_query", "symbolic_answer", "validate",
    "TrainConfig", "fit",
]
