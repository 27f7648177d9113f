import logging
import math
import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import HASH_CFG, LookupEmbedder, random_corpus, units_for
from spike.embedding import EmbeddingProviderConfig, hash_embed
from spike.index import build_index
from spike.model import ContractError, Corpus, Document, InformationNeed, Scenario
from spike.retrieval import (
    ALL,
    RetrievalParams,
    candidate_set,
    final_scores,
    max_scenario_score,
    retrieve,
    score_documents,
    search_vector,
)

S2 = 1 / math.sqrt(2)


def lookup_index(doc_vecs, unit_specs, dim=2):
    """doc_vecs: {doc_id: vec}; unit_specs: {doc_id: [vec, ...]}."""
    table = {f"text {d}": v for d, v in doc_vecs.items()}
    scenarios = []
    for d, vecs in unit_specs.items():
        needs = []
        for i, v in enumerate(vecs):
            table[f"{d} e{i}"] = v
            needs.append(InformationNeed(f"A User wants to know {i}", f"{d} e{i}"))
        scenarios.append(Scenario(f"{d}#s0", d, "t", (), tuple(needs)))
    corpus = Corpus([Document(d, f"text {d}") for d in doc_vecs])
    provider = LookupEmbedder(table, dim)
    cfg = EmbeddingProviderConfig(dim=dim)
    return build_index(corpus, units_for(scenarios, "e"), cfg, component_mode="e", provider=provider)


def test_doc_scores_hand_computed():
    idx = lookup_index({"a": [1, 0], "b": [0, 1], "c": [S2, S2]}, {})
    r_d = score_documents(np.array([1.0, 0.0]), idx)
    np.testing.assert_allclose(r_d, [1.0, 0.0, S2], atol=1e-6)


def test_max_unit_score():
    # three unit vectors with cosines 0.2, 0.9, 0.5 against q = (1, 0)
    vecs = [[c, math.sqrt(1 - c * c)] for c in (0.2, 0.9, 0.5)]
    idx = lookup_index({"a": [1, 0]}, {"a": vecs})
    best, winners = max_scenario_score(np.array([1.0, 0.0]), idx)
    assert best[0] == pytest.approx(0.9, abs=1e-6)
    assert winners[0] == 1


def test_equal_maxima_first_unit_wins():
    idx = lookup_index({"a": [1, 0]}, {"a": [[0, 1], [1, 0], [1, 0]]})
    _, winners = max_scenario_score(np.array([1.0, 0.0]), idx)
    assert winners[0] == 1


def test_doc_without_units_falls_back_to_doc_score():
    idx = lookup_index({"a": [1, 0], "b": [S2, S2]}, {"a": [[0, 1]]})
    hits = search_vector(np.array([1.0, 0.0]), idx, RetrievalParams(alpha=0.3, k=2, k_prime=None))
    by_id = {h.doc_id: h for h in hits}
    assert by_id["b"].score == pytest.approx(S2, abs=1e-6)
    assert by_id["b"].scenario_score is None and by_id["b"].unit_index is None
    assert by_id["a"].score == pytest.approx(0.3, abs=1e-6)


def test_subset_scoring_touches_only_candidates():
    idx = lookup_index({"a": [1, 0], "b": [0, 1], "c": [S2, S2]},
                       {"a": [[1, 0]], "b": [[0, 1], [0, 1]], "c": [[S2, S2]]})
    best, winners = max_scenario_score(np.array([1.0, 0.0]), idx, doc_subset=[0, 2])
    assert best.shape == (2,)
    np.testing.assert_allclose(best, [1.0, S2], atol=1e-6)
    assert winners.tolist() == [0, 3]


def test_final_score_combination():
    out = final_scores(np.array([0.5]), np.array([0.9]), 0.7)
    assert out[0] == pytest.approx(0.62, abs=1e-12)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.floats(-1, 1), st.floats(-1, 1)), min_size=1, max_size=20))
def test_alpha_degeneracy(pairs):
    r_d = np.array([p[0] for p in pairs])
    r_s = np.array([p[1] for p in pairs])
    assert final_scores(r_d, r_s, 1.0).tobytes() == r_d.tobytes()
    assert final_scores(r_d, r_s, 0.0).tobytes() == r_s.tobytes()


def test_alpha_out_of_range():
    with pytest.raises(ContractError):
        RetrievalParams(alpha=1.5)
    with pytest.raises(ContractError):
        final_scores(np.zeros(1), np.zeros(1), -0.1)


def test_k_larger_than_k_prime_rejected():
    with pytest.raises(ContractError):
        RetrievalParams(k=20, k_prime=10)


def test_query_dim_mismatch():
    idx = lookup_index({"a": [1, 0]}, {})
    with pytest.raises(ContractError):
        score_documents(np.zeros(3), idx)


def test_k_prime_all_equals_k_prime_n():
    corpus, scenarios = random_corpus(random.Random(1), 40, 4)
    idx = build_index(corpus, units_for(scenarios), HASH_CFG)
    q = hash_embed("t1 t2 t3 t4", 256)
    a = search_vector(q, idx, RetrievalParams(alpha=0.5, k=10, k_prime=ALL))
    b = search_vector(q, idx, RetrievalParams(alpha=0.5, k=10, k_prime=40))
    assert a == b


def test_planted_ranking(planted):
    corpus, scenarios, queries, qrels = planted
    idx = build_index(corpus, units_for(scenarios), HASH_CFG)
    q = queries[0]
    rel = next(iter(qrels.for_query(q.query_id)))
    mixed = retrieve(q.text, idx, RetrievalParams(alpha=0.7, k=10, k_prime=ALL), HASH_CFG)
    doc_only = retrieve(q.text, idx, RetrievalParams(alpha=1.0, k=50, k_prime=ALL), HASH_CFG)
    assert mixed.doc_ids[0] == rel
    assert doc_only.doc_ids.index(rel) >= 3


def test_k_exceeding_corpus_returns_everything():
    idx = lookup_index({"a": [1, 0], "b": [0, 1]}, {})
    hits = search_vector(np.array([1.0, 0.0]), idx, RetrievalParams(k=50, k_prime=ALL))
    assert [h.doc_id for h in hits] == ["a", "b"]


def test_ties_break_by_doc_id():
    idx = lookup_index({"b": [1, 0], "a": [1, 0], "c": [1, 0]}, {})
    hits = search_vector(np.array([1.0, 0.0]), idx, RetrievalParams(k=3, k_prime=ALL))
    assert [h.doc_id for h in hits] == ["a", "b", "c"]


def test_candidate_set_keeps_ties_at_cut():
    r_d = np.array([0.9, 0.5, 0.5, 0.5, 0.1])
    assert candidate_set(r_d, 2).tolist() == [0, 1, 2, 3]
    assert candidate_set(r_d, 1).tolist() == [0]
    assert candidate_set(r_d, ALL).tolist() == [0, 1, 2, 3, 4]


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(0, 1), st.integers(1, 15))
def test_scores_bounded_and_candidates_contained(seed, alpha, k_prime):
    rng = random.Random(seed)
    corpus, scenarios = random_corpus(rng, 30, 3)
    idx = build_index(corpus, units_for(scenarios), HASH_CFG)
    q = hash_embed(" ".join(f"t{rng.randrange(60)}" for _ in range(4)), 256)
    params = RetrievalParams(alpha=alpha, k=min(5, k_prime), k_prime=k_prime)
    hits = search_vector(q, idx, params)
    assert all(-1.0 - 1e-9 <= h.score <= 1.0 + 1e-9 for h in hits)
    cands = {idx.doc_ids[i] for i in candidate_set(score_documents(q, idx), k_prime)}
    assert {h.doc_id for h in hits} <= cands


def test_fingerprint_mismatch_warns(caplog):
    corpus, scenarios = random_corpus(random.Random(0), 5, 2)
    idx = build_index(corpus, units_for(scenarios), HASH_CFG)
    other = EmbeddingProviderConfig(dim=256, query_instruction="Q: ")
    with caplog.at_level(logging.WARNING):
        retrieve("t1", idx, RetrievalParams(k=2, k_prime=ALL), other)
    assert "fingerprint" in caplog.text
