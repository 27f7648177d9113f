"""Shared test fixtures: scripted chat clients and synthetic corpora."""
from __future__ import annotations

import json
import random
from typing import Dict, List, Sequence, Tuple

from spike.embedding import EmbeddingProviderConfig, fnv1a_64
from spike.model import Corpus, Document, InformationNeed, Qrels, Query, Scenario


class ScriptedChat:
    """Returns canned replies in order and records every request."""

    def __init__(self, replies: Sequence[str]):
        self.replies = list(replies)
        self.calls: List[List[dict]] = []

    def complete(self, messages, *, json_mode=None) -> str:
        self.calls.append([dict(m) for m in messages])
        if not self.replies:
            raise AssertionError("scripted client ran out of replies")
        reply = self.replies.pop(0)
        if isinstance(reply, Exception):
            raise reply
        return reply


class EchoChat:
    """Deterministic stand-in: answers with the prompt length, judges with a fixed score."""

    def __init__(self, judge_reply: str = "REASON:\nfine\nSCORE:\n70"):
        self.judge_reply = judge_reply
        self.calls = 0

    def complete(self, messages, *, json_mode=None) -> str:
        self.calls += 1
        content = messages[-1]["content"]
        if "REFERENCE ANSWER START" in content:
            return self.judge_reply
        return f"answer from {len(content)} chars"


def scenario_reply(main_topic: str, pairs: Sequence[Tuple[str, str]], aspects: Sequence[str] = ("aspect",)) -> str:
    return json.dumps({"Main Topic": main_topic, "Key Aspects": list(aspects),
                       "Information Needs": {n: e for n, e in pairs}})


HASH_CFG = EmbeddingProviderConfig(kind="deterministic_hash", dim=256)


def words(prefix: str, n: int, start: int = 0) -> List[str]:
    return [f"{prefix}{i}" for i in range(start, start + n)]


def planted_fixture(n_docs: int = 50, n_queries: int = 5, seed: int = 0, dim: int = 256,
                    topic_terms: int = 2):
    """Corpus where each query's relevant document matches only through scenario text.

    Relevant docs ("z..." ids, so they lose doc-id ties) have bodies with no
    query vocabulary; their single scenario's main topic and explanation carry
    the query terms. Every query also has distractors whose body shares one
    query term, so document-only scoring ranks them above the relevant doc.
    """
    rng = random.Random(seed)
    docs: List[Document] = []
    scenarios: List[Scenario] = []
    queries: List[Query] = []
    judgments: Dict[str, Dict[str, int]] = {}

    # query terms get distinct hash buckets, and filler never lands on one of them
    reserved = set()
    query_terms: List[List[str]] = []
    counter = 0
    for qi in range(n_queries):
        terms = []
        while len(terms) < 4:
            w = f"q{qi}term{counter}"
            counter += 1
            b = fnv1a_64(w.encode()) % dim
            if b not in reserved:
                reserved.add(b)
                terms.append(w)
        query_terms.append(terms)
    vocab_counter = [0]

    def fresh(n: int) -> List[str]:
        out = []
        while len(out) < n:
            w = f"filler{vocab_counter[0]}"
            vocab_counter[0] += 1
            if fnv1a_64(w.encode()) % dim not in reserved:
                out.append(w)
        return out

    n_distract = (n_docs - n_queries) // n_queries
    for qi in range(n_queries):
        qwords = query_terms[qi]
        qid = f"q{qi}"
        queries.append(Query(qid, " ".join(qwords), "synthetic"))
        rel_id = f"z{qi:02d}"
        docs.append(Document(rel_id, " ".join(fresh(16)), "synthetic"))
        scenarios.append(Scenario(
            scenario_id=f"{rel_id}#s0", doc_id=rel_id,
            main_topic=" ".join(qwords[:topic_terms] + fresh(2)),
            key_aspects=("k",),
            needs=(InformationNeed("A User wants to know " + " ".join(fresh(3)),
                                   " ".join(qwords[topic_terms:] + fresh(2))),),
        ))
        judgments[qid] = {rel_id: 1}
        for j in range(n_distract):
            did = f"d{qi:02d}{j:02d}"
            body = fresh(15) + [rng.choice(qwords)]
            docs.append(Document(did, " ".join(body), "synthetic"))
            scenarios.append(Scenario(
                scenario_id=f"{did}#s0", doc_id=did, main_topic=" ".join(fresh(3)), key_aspects=(),
                needs=(InformationNeed("A User wants to know " + " ".join(fresh(3)), " ".join(fresh(5))),),
            ))
    while len(docs) < n_docs:
        did = f"pad{len(docs):03d}"
        docs.append(Document(did, " ".join(fresh(10)), "synthetic"))
    return Corpus(docs), scenarios, queries, Qrels(judgments)


def random_corpus(rng: random.Random, n_docs: int, max_units: int, vocab: int = 60):
    """Random docs and scenarios over a small shared vocabulary (lots of partial overlap)."""
    def text(n):
        return " ".join(f"t{rng.randrange(vocab)}" for _ in range(n))

    docs, scenarios = [], []
    for i in range(n_docs):
        did = f"doc{i:04d}"
        docs.append(Document(did, text(rng.randint(3, 12))))
        k = rng.randint(0, max_units)
        if k:
            scenarios.append(Scenario(
                f"{did}#s0", did, text(3), (),
                tuple(InformationNeed("A User wants to know " + text(3), text(rng.randint(2, 8))) for _ in range(k)),
            ))
    return Corpus(docs), scenarios


class LookupEmbedder:
    """Provider stub mapping exact texts to fixed vectors; counts embedded texts."""

    def __init__(self, table: Dict[str, Sequence[float]], dim: int):
        self.table = table
        self.dim = dim
        self.embedded: List[str] = []

    def embed(self, texts, role="passage"):
        import numpy as np
        self.embedded.extend(texts)
        return np.asarray([self.table[t] for t in texts], dtype=np.float32).reshape(len(texts), self.dim)


def units_for(scenarios, mode="m_e"):
    from spike.scenarios import render_units
    return [u for s in scenarios for u in render_units(s, mode)]
