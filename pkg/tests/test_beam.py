import numpy as np
import pytest

from litquery.beam import AnswerOptions, beam_answer, literal_answer, rank_entities
from litquery.fuzzy import TNormKind, tconorm, tnorm
from litquery.model import predict_attribute, score_all_tails
from litquery.query import ENTITY_TYPES, QUERY_TYPES, Query, QueryError, RelAtom, build_query

from oracles import BruteForce
from synthetic import random_instance, random_query


def brute(kg, aug, params, stats, kind="prod", **flags):
    sigma = {a: stats.sigma(a) for a in range(kg.n_attributes)}
    return BruteForce(params, kg.n_entities, aug.dummy_entity, aug.relation_of, sigma, kind, **flags)


@pytest.mark.parametrize("kind", ["min", "prod", "luk"])
@pytest.mark.parametrize("qtype", QUERY_TYPES)
def test_matches_brute_force(qtype, kind):
    rng = np.random.default_rng(hash((qtype, kind)) % 2**32)
    for _ in range(3):
        kg, aug, params, stats = random_instance(rng, n_entities=7)
        q = random_query(rng, qtype, kg)
        ranking = rank_entities(params, aug, stats, q, AnswerOptions(beam_k=kg.n_entities, tnorm=kind))
        order, scores = brute(kg, aug, params, stats, kind).ranking(q.to_json())
        np.testing.assert_allclose(ranking.scores, scores, atol=1e-9, rtol=0)
        assert ranking.order.tolist() == order


def test_1p_is_score_all_tails(rng):
    kg, aug, params, stats = random_instance(rng)
    q = build_query("1p", [2], [1])
    ranking = beam_answer(params, aug, stats, q, beam_k=1)
    expected = score_all_tails(params, 2, 1)[: kg.n_entities]
    np.testing.assert_array_equal(ranking.scores, expected)
    assert ranking.order[0] == int(np.argmax(expected))
    assert all(a >= b for a, b in zip(ranking.scores[ranking.order], ranking.scores[ranking.order][1:]))


def test_identical_union_branches_goedel(rng):
    kg, aug, params, stats = random_instance(rng)
    single = beam_answer(params, aug, stats, build_query("1p", [3], [0]), tnorm_kind="min")
    union = beam_answer(params, aug, stats, build_query("2u", [3, 3], [0, 0]), tnorm_kind="min")
    np.testing.assert_array_equal(single.scores, union.scores)
    assert single.order.tolist() == union.order.tolist()


def _swap_branches(q):
    atoms = tuple(a if a.branch is None else type(a)(**{**a.__dict__, "branch": 1 - a.branch}) for a in q.atoms)
    return Query(q.qtype, q.anchors, atoms[::-1], q.target, q.aggregator)


@pytest.mark.parametrize("qtype", ["2i", "3i", "pi", "ip", "2u", "up", "2ai", "pai", "au"])
@pytest.mark.parametrize("kind", ["min", "prod", "luk"])
def test_permutation_symmetry(qtype, kind):
    rng = np.random.default_rng(7)
    kg, aug, params, stats = random_instance(rng)
    q = random_query(rng, qtype, kg)
    opts = AnswerOptions(beam_k=4, tnorm=kind)
    a = rank_entities(params, aug, stats, q, opts)
    b = rank_entities(params, aug, stats, _swap_branches(q), opts)
    np.testing.assert_allclose(a.scores, b.scores, atol=1e-12, rtol=0)


@pytest.mark.parametrize("qtype", ENTITY_TYPES + ("2ap", "3ap"))
@pytest.mark.parametrize("kind", ["min", "prod", "luk"])
def test_trace_recombines_to_score(qtype, kind):
    rng = np.random.default_rng(11)
    kg, aug, params, stats = random_instance(rng, n_entities=9)
    q = random_query(rng, qtype, kg)
    ranking = rank_entities(params, aug, stats, q, AnswerOptions(beam_k=3, tnorm=kind))
    for e in range(kg.n_entities):
        trace = ranking.trace(e)
        total = None
        for branch in trace.branches:
            s = None
            for _, v in branch.atoms:
                s = v if s is None else tnorm(kind, s, v)
            assert s == pytest.approx(branch.score, abs=1e-9)
            total = s if total is None else tconorm(kind, total, s)
        assert total == pytest.approx(ranking.scores[e], abs=1e-9)
        assert trace.branches[0].bindings[q.entity_sink] == e


@pytest.mark.parametrize("qtype", ["2p", "ip", "pi", "up", "aip", "2ap"])
def test_beam_monotone_single_intermediate(qtype):
    rng = np.random.default_rng(5)
    for _ in range(5):
        kg, aug, params, stats = random_instance(rng, n_entities=10)
        q = random_query(rng, qtype, kg)
        prev = None
        for k in range(1, kg.n_entities + 1):
            s = rank_entities(params, aug, stats, q, AnswerOptions(beam_k=k)).scores
            if prev is not None:
                assert (s >= prev - 1e-15).all()
            prev = s


def test_errors(rng):
    kg, aug, params, stats = random_instance(rng)
    with pytest.raises(ValueError):
        beam_answer(params, aug, stats, build_query("1p", [0], [0]), beam_k=0)
    with pytest.raises(QueryError):
        beam_answer(params, aug, stats, build_query("1ap", [0], [], attribute=0))
    with pytest.raises(QueryError):
        literal_answer(params, aug, stats, build_query("1p", [0], [0]))


def test_ablation_flags_match_oracle(rng):
    kg, aug, params, stats = random_instance(rng, n_entities=7)
    q = build_query("pai", [1], [0], [(0, "lt", 0.5)])
    for flags in ({"use_exists": False}, {"use_filter": False}, {"use_exists": False, "use_filter": False}):
        ranking = rank_entities(params, aug, stats, q, AnswerOptions(beam_k=7, **flags))
        _, scores = brute(kg, aug, params, stats, **flags).ranking(q.to_json())
        np.testing.assert_allclose(ranking.scores, scores, atol=1e-12)


def test_global_sigma(rng):
    kg, aug, params, stats = random_instance(rng, n_entities=7)
    q = build_query("ai", filters=[(1, "eq", 0.4)])
    ranking = rank_entities(params, aug, stats, q, AnswerOptions(beam_k=7, global_sigma=True))
    forced = brute(kg, aug, params, stats)
    forced.sigma = {a: stats.global_sigma for a in forced.sigma}
    np.testing.assert_allclose(ranking.scores, forced.scores(q.to_json()), atol=1e-12)


def test_literal_single_anchor(rng):
    kg, aug, params, stats = random_instance(rng)
    q = build_query("1ap", [4], [], attribute=1)
    ans = literal_answer(params, aug, stats, q, beam_k=5, value_ranges=kg.value_ranges)
    assert ans.value == predict_attribute(params, 4, 1)
    assert ans.entities == [(4, ans.value)]
    lo, hi = kg.value_ranges[1]
    assert ans.value_raw == pytest.approx(ans.value * (hi - lo) + lo)


def test_literal_aggregates_top_k(rng):
    kg, aug, params, stats = random_instance(rng)
    q = build_query("2ap", [0], [1], attribute=0, aggregator="min")
    ans = literal_answer(params, aug, stats, q, beam_k=3)
    ranking = beam_answer(params, aug, stats, build_query("1p", [0], [1]), beam_k=3)
    top = ranking.order[:3].tolist()
    assert [e for e, _ in ans.entities] == top
    assert ans.value == min(predict_attribute(params, np.array(top), 0))
    mean = literal_answer(params, aug, stats, q, beam_k=3, aggregator="mean").value
    assert ans.value <= mean
    assert mean == pytest.approx(float(np.mean([v for _, v in ans.entities])), abs=1e-15)


def test_custom_query_with_unanchored_variable(rng):
    kg, aug, params, stats = random_instance(rng, n_entities=6)
    q = Query("custom", {}, (
        build_query("ai", filters=[(0, "gt", 0.3)]).atoms[0].__class__(0, "E1", "gt", 0.3),
        RelAtom(2, "E1", "E?"),
    ))
    ranking = rank_entities(params, aug, stats, q, AnswerOptions(beam_k=6, tnorm=TNormKind.PRODUCT))
    np.testing.assert_allclose(ranking.scores, brute(kg, aug, params, stats).scores(q.to_json()), atol=1e-12)


def test_min_age_after_overfitting():
    from litquery.kg import GraphBuilder, augment_existence, compute_stats, normalize_attributes
    from litquery.trainer import TrainConfig, fit

    b = GraphBuilder()
    for h, r, t in [("TA", "awardedTo", "e1"), ("TA", "awardedTo", "e2"), ("x", "knows", "e1")]:
        b.add_relational(h, r, t)
    for e, v in [("e1", 22.0), ("e2", 24.0), ("x", 40.0)]:
        b.add_attribute(e, "hasAge", v)
    kg = b.build()
    kg = normalize_attributes(kg, compute_stats(kg))
    aug_kg, aug = augment_existence(kg)
    cfg = TrainConfig(rank=8, epochs=4000, learning_rate=0.05, n3_weight=0.0, init_std=0.1)
    params, _ = fit(aug_kg, aug, cfg)
    q = build_query("2ap", [kg.entities.index("TA")], [kg.relations.index("awardedTo")], attribute=0,
                    aggregator="min")
    ans = literal_answer(params, aug, compute_stats(kg), q, beam_k=2, value_ranges=kg.value_ranges)
    assert sorted(e for e, _ in ans.entities) == [kg.entities.index("e1"), kg.entities.index("e2")]
    assert ans.value == pytest.approx(0.0, abs=0.01)  # 22 is the bottom of the [22, 40] range
    assert ans.value_raw == pytest.approx(22.0, abs=0.01 * 18)
