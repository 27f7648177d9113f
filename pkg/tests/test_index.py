import random
import struct
import zlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import HASH_CFG, random_corpus, units_for
from spike.embedding import hash_embed
from spike.index import (
    BuildError,
    IndexFormatError,
    IndexIntegrityError,
    build_index,
    index_from_bytes,
    index_to_bytes,
    load_index,
    save_index,
)
from spike.model import ComponentMode, ContractError, Corpus, Document, InformationNeed, Scenario
from spike.retrieval import RetrievalParams, search_vector
from spike.scenarios import ExpansionUnit, render_units


def scen(doc_id, n, topic="topic words"):
    return Scenario(f"{doc_id}#s0", doc_id, topic, (),
                    tuple(InformationNeed(f"A User wants to know {doc_id} {i}", f"{doc_id} expl {i}") for i in range(n)))


@pytest.fixture
def small():
    corpus = Corpus([Document("d2", "gamma text"), Document("d1", "alpha text"), Document("d3", "beta text")])
    scenarios = [scen("d1", 2), scen("d2", 2), scen("d3", 1)]
    return corpus, scenarios


def test_structure_and_owner_ranges(small):
    corpus, scenarios = small
    idx = build_index(corpus, units_for(scenarios), HASH_CFG)
    assert idx.doc_ids == ("d1", "d2", "d3")
    assert idx.doc_vectors.shape == (3, 256) and idx.unit_vectors.shape == (5, 256)
    assert idx.doc_vectors.dtype == np.float32
    assert [tuple(r) for r in idx.doc_units] == [(0, 2), (2, 4), (4, 5)]
    assert idx.units_of("d2") == range(2, 4)
    assert idx.unit_owner.tolist() == [0, 0, 1, 1, 2]


def test_index_arrays_are_read_only(small):
    idx = build_index(small[0], units_for(small[1]), HASH_CFG)
    with pytest.raises(ValueError):
        idx.doc_vectors[0, 0] = 1.0


def test_unit_texts_match_renderer(small):
    corpus, scenarios = small
    idx = build_index(corpus, units_for(scenarios, "i_e"), HASH_CFG, component_mode="i_e")
    expected = {u.unit_id: u.text for s in scenarios for u in render_units(s, "i_e")}
    assert dict(zip(idx.unit_ids, idx.unit_texts)) == expected


def test_summary_expansion_concatenates(small):
    corpus, _ = small
    units = [ExpansionUnit("d1", "summary", "S")]
    idx = build_index(corpus, units, HASH_CFG, expansion_mode="summary")
    assert idx.num_units == 0
    assert idx.doc_vectors[0].tobytes() == hash_embed("alpha text\nS", 256).tobytes()
    assert idx.doc_vectors[1].tobytes() == hash_embed("gamma text", 256).tobytes()


def test_pseudo_query_expansion_concatenates_all(small):
    corpus, _ = small
    units = [ExpansionUnit("d3", "pseudo_query", t) for t in ("q one", "q two", "q three")]
    idx = build_index(corpus, units, HASH_CFG, expansion_mode="pseudo_query")
    assert idx.doc_vectors[2].tobytes() == hash_embed("beta text\nq one\nq two\nq three", 256).tobytes()


def test_orphan_unit_is_build_error(small):
    corpus, _ = small
    with pytest.raises(BuildError, match="d9"):
        build_index(corpus, units_for([scen("d9", 1)]), HASH_CFG)


def test_mode_mismatch_is_rejected(small):
    corpus, scenarios = small
    with pytest.raises(ContractError):
        build_index(corpus, units_for(scenarios, "m"), HASH_CFG, component_mode="m_e")


def test_rebuild_is_byte_identical(small):
    corpus, scenarios = small
    a = index_to_bytes(build_index(corpus, units_for(scenarios), HASH_CFG))
    b = index_to_bytes(build_index(corpus, list(reversed(units_for(scenarios))), HASH_CFG))
    assert a == b


def test_save_load_round_trip_scores_exact(tmp_path, small):
    corpus, scenarios = small
    idx = build_index(corpus, units_for(scenarios), HASH_CFG)
    path = tmp_path / "x.spk"
    save_index(idx, path)
    loaded = load_index(path)
    assert loaded == idx
    q = hash_embed("alpha expl topic", 256)
    params = RetrievalParams(alpha=0.7, k=3, k_prime=None)
    assert search_vector(q, idx, params) == search_vector(q, loaded, params)


def test_corruption_fails_integrity(tmp_path, small):
    data = bytearray(index_to_bytes(build_index(small[0], units_for(small[1]), HASH_CFG)))
    data[100] ^= 0xFF
    with pytest.raises(IndexIntegrityError):
        index_from_bytes(bytes(data))
    with pytest.raises(IndexIntegrityError):
        index_from_bytes(bytes(data[:-10]))


def test_future_version_is_format_error(small):
    data = bytearray(index_to_bytes(build_index(small[0], units_for(small[1]), HASH_CFG)))
    struct.pack_into("<I", data, 6, 2)
    body = bytes(data[:-4])
    data[-4:] = struct.pack("<I", zlib.crc32(body))
    with pytest.raises(IndexFormatError, match="upgrade"):
        index_from_bytes(bytes(data))


def test_bad_magic():
    with pytest.raises(IndexFormatError):
        index_from_bytes(b"NOTIDX" + b"\0" * 20)


def test_empty_corpus_round_trip():
    idx = build_index(Corpus([]), [], HASH_CFG, expansion_mode="none")
    assert index_from_bytes(index_to_bytes(idx)) == idx


def test_metadata_round_trips(small):
    idx = build_index(small[0], units_for(small[1], "e"), HASH_CFG, component_mode=ComponentMode.E)
    back = index_from_bytes(index_to_bytes(idx))
    assert back.component_mode is ComponentMode.E
    assert back.provider_fingerprint == HASH_CFG.fingerprint
    assert back.expansion_mode == "scenario"


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(0, 30), st.integers(0, 4))
def test_serialization_property(seed, n_docs, max_units):
    corpus, scenarios = random_corpus(random.Random(seed), n_docs, max_units)
    idx = build_index(corpus, units_for(scenarios), HASH_CFG)
    assert index_from_bytes(index_to_bytes(idx)) == idx
