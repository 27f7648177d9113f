"""Domain types shared across the package: documents, scenarios, qrels, rankings."""
from __future__ import annotations

import enum
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterator, List, Mapping, Optional, Sequence, Tuple, Union

logger = logging.getLogger(__name__)

NEED_PREFIX = "A User wants to know"

PathLike = Union[str, Path]


class SpikeError(Exception):
    """Base class for all package errors."""


class ContractError(SpikeError, ValueError):
    """A precondition or invariant was violated by the caller."""


class FormatError(SpikeError):
    """Input file could not be parsed."""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ComponentMode(str, enum.Enum):
    M = "m"
    I = "i"  # noqa: E741
    E = "e"
    M_E = "m_e"
    I_E = "i_e"

    @classmethod
    def parse(cls, value: Union[str, "ComponentMode"]) -> "ComponentMode":
        if isinstance(value, ComponentMode):
            return value
        key = value.strip().lower().replace("+", "_")
        try:
            return cls(key)
        except ValueError:
            raise ContractError(f"unknown component mode {value!r}") from None


@dataclass(frozen=True)
class Document:
    doc_id: str
    text: str
    dataset_tag: Optional[str] = None

    def __post_init__(self) -> None:
        if not self.doc_id:
            raise ContractError("doc_id must be non-empty")
        if not self.text:
            raise ContractError(f"document {self.doc_id!r} has empty text")


@dataclass(frozen=True)
class InformationNeed:
    need: str
    explanation: str


@dataclass(frozen=True)
class Scenario:
    scenario_id: str
    doc_id: str
    main_topic: str
    key_aspects: Tuple[str, ...]
    needs: Tuple[InformationNeed, ...]

    def __post_init__(self) -> None:
        if not self.main_topic.strip():
            raise ContractError("scenario main_topic must be non-empty")
        if not self.needs:
            raise ContractError("scenario needs must be non-empty")
        for pair in self.needs:
            if not pair.need.strip() or not pair.explanation.strip():
                raise ContractError("every need/explanation pair must be non-empty")
        # normalize list inputs so equality and hashing behave
        object.__setattr__(self, "key_aspects", tuple(self.key_aspects))
        object.__setattr__(self, "needs", tuple(self.needs))

    def nonconforming_needs(self) -> List[str]:
        return [p.need for p in self.needs if not p.need.strip().startswith(NEED_PREFIX)]


@dataclass(frozen=True)
class ScenarioUnit:
    unit_id: str
    doc_id: str
    scenario_id: str
    component_mode: ComponentMode
    text: str

    def __post_init__(self) -> None:
        if not self.text:
            raise ContractError(f"unit {self.unit_id!r} has empty text")


class Corpus(Mapping[str, Document]):
    """Insertion-ordered, read-only collection of documents keyed by id."""

    def __init__(self, documents: Sequence[Document] = ()):
        docs: Dict[str, Document] = {}
        for doc in documents:
            if doc.doc_id in docs:
                raise ContractError(f"duplicate document id {doc.doc_id!r}")
            docs[doc.doc_id] = doc
        self._docs = docs

    def __getitem__(self, doc_id: str) -> Document:
        return self._docs[doc_id]

    def __iter__(self) -> Iterator[str]:
        return iter(self._docs)

    def __len__(self) -> int:
        return len(self._docs)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Corpus):
            return NotImplemented
        return list(self._docs.items()) == list(other._docs.items())

    def __hash__(self) -> int:
        return hash(tuple(self._docs))

    def documents(self) -> List[Document]:
        return list(self._docs.values())

    def __repr__(self) -> str:
        return f"Corpus({len(self)} documents)"


@dataclass(frozen=True)
class Qrels:
    """Graded judgments: query_id -> {doc_id: grade}. Absent pairs are grade 0."""

    judgments: Mapping[str, Mapping[str, int]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        for qid, grades in self.judgments.items():
            for doc_id, grade in grades.items():
                if grade < 0:
                    raise ContractError(f"negative grade for ({qid}, {doc_id})")

    def __contains__(self, query_id: object) -> bool:
        return query_id in self.judgments

    def for_query(self, query_id: str) -> Mapping[str, int]:
        return self.judgments.get(query_id, {})

    def grade(self, query_id: str, doc_id: str) -> int:
        return self.for_query(query_id).get(doc_id, 0)

    def query_ids(self) -> List[str]:
        return list(self.judgments)


@dataclass(frozen=True)
class RankedList:
    query_id: str
    entries: Tuple[Tuple[str, float], ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "entries", tuple((d, float(s)) for d, s in self.entries))
        seen = set()
        prev: Optional[Tuple[str, float]] = None
        for doc_id, score in self.entries:
            if doc_id in seen:
                raise ContractError(f"duplicate doc_id {doc_id!r} in ranking")
            seen.add(doc_id)
            if prev is not None and (score > prev[1] or (score == prev[1] and doc_id < prev[0])):
                raise ContractError("ranking must be score-descending with ties by ascending doc_id")
            prev = (doc_id, score)

    @classmethod
    def from_scores(cls, query_id: str, scores: Mapping[str, float], k: Optional[int] = None) -> "RankedList":
        ordered = sorted(scores.items(), key=lambda kv: (-kv[1], kv[0]))
        if k is not None:
            ordered = ordered[:k]
        return cls(query_id, tuple(ordered))

    @property
    def doc_ids(self) -> List[str]:
        return [d for d, _ in self.entries]

    def __len__(self) -> int:
        return len(self.entries)


def load_corpus(path: PathLike) -> Corpus:
    """Read a JSONL corpus: one ``{"id", "text", "dataset"?}`` object per line."""
    docs: List[Document] = []
    seen: Dict[str, int] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"invalid JSON: {exc.msg}", lineno) from exc
            if not isinstance(record, dict):
                raise FormatError("expected a JSON object", lineno)
            doc_id, text = record.get("id"), record.get("text")
            if not isinstance(doc_id, str) or not doc_id:
                raise FormatError("missing or non-string 'id'", lineno)
            if not isinstance(text, str) or not text:
                raise FormatError(f"missing or empty 'text' for {doc_id!r}", lineno)
            if doc_id in seen:
                raise FormatError(f"duplicate document id {doc_id!r} (first seen on line {seen[doc_id]})", lineno)
            seen[doc_id] = lineno
            dataset = record.get("dataset")
            docs.append(Document(doc_id, text, dataset if isinstance(dataset, str) else None))
    return Corpus(docs)


def load_qrels(path: PathLike) -> Qrels:
    """Read ``query_id<TAB>doc_id<TAB>grade`` lines. Repeated pairs: last one wins."""
    judgments: Dict[str, Dict[str, int]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise FormatError(f"expected 3 tab-separated fields, got {len(parts)}", lineno)
            qid, doc_id, raw = (p.strip() for p in parts)
            try:
                grade = int(raw)
            except ValueError:
                raise FormatError(f"grade {raw!r} is not an integer", lineno) from None
            if grade < 0:
                raise FormatError(f"grade {grade} out of range (must be >= 0)", lineno)
            per_query = judgments.setdefault(qid, {})
            if doc_id in per_query:
                logger.warning("qrels line %d overrides (%s, %s): %d -> %d", lineno, qid, doc_id, per_query[doc_id], grade)
            per_query[doc_id] = grade
    return Qrels(judgments)


@dataclass(frozen=True)
class Query:
    query_id: str
    text: str
    dataset_tag: Optional[str] = None


def load_queries(path: PathLike) -> List[Query]:
    queries: List[Query] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"invalid JSON: {exc.msg}", lineno) from exc
            qid, text = record.get("id"), record.get("text")
            if not isinstance(qid, str) or not isinstance(text, str):
                raise FormatError("query needs string 'id' and 'text'", lineno)
            queries.append(Query(qid, text, record.get("dataset")))
    return queries
