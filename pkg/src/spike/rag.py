"""Retrieval-augmented answering and rubric judging.

Context modes: ``document_only`` (retrieved texts), ``with_scenario`` (each
retrieved text followed by the scenario unit that won its max-score term) and
``oracle`` (the gold documents).
"""
from __future__ import annotations

import hashlib
import logging
import json
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

from .chat import ChatClient, GenerationError
from .index import DualIndex
from .model import ContractError, Corpus, FormatError, PathLike, Scenario, SpikeError
from .prompts import RAG_ANSWER, RAG_JUDGE
from .retrieval import Hit

logger = logging.getLogger(__name__)

CONTEXT_MODES = ("document_only", "with_scenario", "oracle")
DEFAULT_TOP_N = 10

_SCORE_RE = re.compile(r"SCORE\s*:\s*\**\s*(-?\d+(?:\.\d+)?)", re.IGNORECASE)
_REASON_RE = re.compile(r"REASON\s*:\s*(.*?)\s*SCORE\s*:", re.IGNORECASE | re.DOTALL)


class RagError(SpikeError):
    pass


class ScoringError(RagError):
    def __init__(self, message: str, raw: str = ""):
        self.raw = raw
        super().__init__(message)


@dataclass(frozen=True)
class RagResult:
    query_id: str
    answer: str
    score: int
    judge_reason: str

    def __post_init__(self) -> None:
        if not 0 <= self.score <= 100:
            raise ContractError("score must be within [0, 100]")


def winning_scenario_line(hit: Hit, index: DualIndex, scenarios: Mapping[str, Scenario]) -> Optional[str]:
    """``Scenario: <main topic> — <explanation>`` for the unit that scored best for ``hit``."""
    if hit.unit_index is None:
        return None
    unit_id = index.unit_ids[hit.unit_index]
    scenario_id, _, pair = unit_id.rpartition(":")
    scenario_id = scenario_id.rpartition(":")[0]
    scenario = scenarios.get(scenario_id)
    if scenario is None:
        # no source record; fall back to the indexed unit text
        return "Scenario: " + index.unit_texts[hit.unit_index].replace("\n", " — ", 1)
    pair_index = int(pair)
    if index.component_mode.value == "m":
        return f"Scenario: {scenario.main_topic}"
    need = scenario.needs[pair_index]
    return f"Scenario: {scenario.main_topic} — {need.explanation}"


def assemble_context(hits: Sequence[Hit], corpus: Corpus, mode: str = "document_only",
                     index: Optional[DualIndex] = None, scenarios: Optional[Mapping[str, Scenario]] = None,
                     gold_ids: Optional[Sequence[str]] = None, top_n: int = DEFAULT_TOP_N) -> str:
    if mode not in CONTEXT_MODES:
        raise ContractError(f"unknown context mode {mode!r}")
    if mode == "oracle":
        if gold_ids is None:
            raise ContractError("oracle mode requires gold document ids")
        doc_ids = list(gold_ids)
        hits_by_id: Dict[str, Hit] = {}
    else:
        hits = list(hits)[:top_n]
        doc_ids = [h.doc_id for h in hits]
        hits_by_id = {h.doc_id: h for h in hits}
    if mode == "with_scenario" and index is None:
        raise ContractError("with_scenario mode needs the index that produced the hits")

    blocks = []
    for n, doc_id in enumerate(doc_ids, 1):
        lines = [f"[{n}] {doc_id}", corpus[doc_id].text]
        if mode == "with_scenario":
            line = winning_scenario_line(hits_by_id[doc_id], index, scenarios or {})
            if line is not None:
                lines.append(line)
        blocks.append("\n".join(lines))
    return "\n\n".join(blocks)


def build_answer_prompt(question: str, context: str) -> str:
    return RAG_ANSWER.replace("{question}", question).replace("{document}", context)


def build_judge_prompt(problem: str, predicted: str, gold: str) -> str:
    return RAG_JUDGE.replace("{problem}", problem).replace("{predicted}", predicted).replace("{gold}", gold)


def answer_question(question: str, context: str, client: ChatClient) -> str:
    if not context.strip():
        logger.warning("answering with an empty context")
    try:
        return client.complete([{"role": "user", "content": build_answer_prompt(question, context)}],
                               json_mode=False)
    except GenerationError as exc:
        raise RagError(f"answer generation failed: {exc}") from exc


def parse_judge_output(text: str) -> Tuple[int, str]:
    """Read the last ``SCORE:`` value (clamped to 0..100) and the ``REASON:`` text."""
    matches = _SCORE_RE.findall(text)
    if not matches:
        raise ScoringError("no parseable SCORE in judge output", raw=text)
    score = int(round(float(matches[-1])))
    if not 0 <= score <= 100:
        logger.warning("judge score %d out of range; clamping", score)
        score = min(100, max(0, score))
    reason_match = _REASON_RE.search(text)
    reason = reason_match.group(1).strip() if reason_match else ""
    return score, reason


def score_answer(problem: str, predicted: str, gold: str, client: ChatClient) -> Tuple[int, str]:
    messages = [{"role": "user", "content": build_judge_prompt(problem, predicted, gold)}]
    try:
        raw = client.complete(messages, json_mode=False)
        try:
            return parse_judge_output(raw)
        except ScoringError as exc:
            messages = messages + [
                {"role": "assistant", "content": raw},
                {"role": "user", "content": "Your reply had no numeric score. Answer again using exactly the "
                                            "format REASON: ... SCORE: <integer from 0 to 100>."},
            ]
            raw = client.complete(messages, json_mode=False)
            try:
                return parse_judge_output(raw)
            except ScoringError:
                raise ScoringError(f"{exc} (after one repair attempt)", raw=raw) from None
    except GenerationError as exc:
        raise RagError(f"judge request failed: {exc}") from exc


def context_hash(context: str) -> str:
    return hashlib.sha256(context.encode("utf-8")).hexdigest()


def scenario_map(scenarios: Sequence[Scenario]) -> Dict[str, Scenario]:
    return {s.scenario_id: s for s in scenarios}


@dataclass(frozen=True)
class GoldAnswer:
    query_id: str
    answer: str
    gold_ids: Tuple[str, ...] = ()


def run_rag(queries, index: DualIndex, corpus: Corpus, hits_by_query: Mapping[str, Sequence[Hit]],
            gold: Mapping[str, GoldAnswer], mode: str, generator: ChatClient, judge: ChatClient,
            transcript=None, scenarios: Optional[Mapping[str, Scenario]] = None, top_n: int = DEFAULT_TOP_N,
            workers: int = 4) -> List[RagResult]:
    """Answer and judge every query; ``transcript`` (a JsonlWriter) receives one record per query."""
    def one(query) -> RagResult:
        ref = gold.get(query.query_id)
        if ref is None:
            raise RagError(f"no gold answer for query {query.query_id}")
        context = assemble_context(hits_by_query.get(query.query_id, ()), corpus, mode, index=index,
                                   scenarios=scenarios, gold_ids=ref.gold_ids, top_n=top_n)
        answer = answer_question(query.text, context, generator)
        score, reason = score_answer(query.text, answer, ref.answer, judge)
        result = RagResult(query.query_id, answer, score, reason)
        if transcript is not None:
            transcript.write({"query_id": query.query_id, "query": query.text, "mode": mode,
                              "context_sha256": context_hash(context), "answer": answer,
                              "score": score, "reason": reason})
        return result

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        return list(pool.map(one, queries))


def load_gold(path: PathLike) -> Dict[str, GoldAnswer]:
    """Read ``{"id", "answer", "gold_ids"?}`` JSONL records."""
    out: Dict[str, GoldAnswer] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                out[rec["id"]] = GoldAnswer(rec["id"], rec["answer"], tuple(rec.get("gold_ids", ())))
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise FormatError(f"bad gold answer record: {exc}", lineno) from exc
    return out
