"""Scenario generation, parsing, rendering and storage.

One model call per document yields one scenario object whose needs hold all
(information need, explanation) pairs. Rendering turns each pair into one
retrieval unit, so the per-document scenario set is the rendered unit list.
"""
from __future__ import annotations

import json
import logging
import re
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Callable, Dict, Iterable, Iterator, List, Optional, Sequence, Tuple

from .chat import ChatClient, GenerationError
from .model import (
    NEED_PREFIX,
    ComponentMode,
    ContractError,
    Document,
    InformationNeed,
    PathLike,
    Scenario,
    ScenarioUnit,
    SpikeError,
)
from .prompts import DEFAULT_MAX_DOC_CHARS, TEMPLATES, TEXT_CONTENT_MARKER, TRUNCATION_MARKER

logger = logging.getLogger(__name__)

PROMPT_KINDS = tuple(TEMPLATES)
SCENARIO_KINDS = ("teacher_3step", "generator_instruction")
EXPANSION_KINDS = ("pseudo_query", "summary")
PSEUDO_QUERY_COUNT = 3

_FENCE_RE = re.compile(r"```[a-zA-Z0-9_-]*\s*\n?(.*?)```", re.DOTALL)
_MAIN_TOPIC_LINE = re.compile(r"main[ _-]*topic\W*?:\s*\**\s*(.+)", re.IGNORECASE)
_KEY_ASPECTS_LINE = re.compile(r"key[ _-]*aspects\W*?:\s*\**\s*(.*)", re.IGNORECASE)
_LIST_MARKER = re.compile(r"^\s*(?:[-*•]|\d+[.)])\s*")

_MAIN_TOPIC_KEYS = ("main_topic", "topic", "m")
_KEY_ASPECT_KEYS = ("key_aspects", "key_aspect", "aspects", "k")
_NEEDS_KEYS = ("information_needs", "information_need", "needs", "scenarios", "i")
_EXPLANATION_KEYS = ("explanations", "explanation", "e")
_NEED_ITEM_KEYS = ("information_need", "need", "i")


class ScenarioParseError(SpikeError):
    def __init__(self, message: str, raw: str = ""):
        self.raw = raw
        super().__init__(message)


@dataclass(frozen=True)
class GenerationRequest:
    document: Document
    prompt_kind: str
    dataset_name: str = ""

    def __post_init__(self) -> None:
        if self.prompt_kind not in TEMPLATES:
            raise ContractError(f"unknown prompt kind {self.prompt_kind!r}")
        if "{dataset}" in TEMPLATES[self.prompt_kind] and not self.dataset_name:
            raise ContractError("dataset_name is required for this prompt kind")


@dataclass(frozen=True)
class ExpansionUnit:
    doc_id: str
    kind: str
    text: str

    def __post_init__(self) -> None:
        if self.kind not in EXPANSION_KINDS:
            raise ContractError(f"unknown expansion kind {self.kind!r}")
        if not self.text.strip():
            raise ContractError("expansion text must be non-empty")


@dataclass
class GenerationResult:
    doc_id: str
    scenarios: List[Scenario] = field(default_factory=list)
    repair_count: int = 0
    raw: str = ""


def build_prompt(req: GenerationRequest, max_doc_chars: int = DEFAULT_MAX_DOC_CHARS) -> str:
    template = TEMPLATES[req.prompt_kind].replace("{dataset}", req.dataset_name)
    text = req.document.text
    if len(text) > max_doc_chars:
        text = text[:max_doc_chars] + TRUNCATION_MARKER
    return f"{template}{TEXT_CONTENT_MARKER}\n{text}"


# ---------------------------------------------------------------- parsing

def _fold(key: str) -> str:
    return re.sub(r"[\s_\-]+", "_", key.strip().strip("*#:").strip().lower())


def _strip_fences(text: str) -> str:
    blocks = _FENCE_RE.findall(text)
    return "\n".join(blocks) if blocks else text


def _json_values(text: str) -> List[Any]:
    """Every top-level JSON object/array embedded in ``text``, in order."""
    decoder = json.JSONDecoder()
    found: List[Any] = []
    i = 0
    while i < len(text):
        if text[i] in "{[":
            try:
                value, end = decoder.raw_decode(text, i)
            except json.JSONDecodeError:
                i += 1
                continue
            if isinstance(value, (dict, list)):
                found.append(value)
            i = end
        else:
            i += 1
    return found


def _find_key(obj: Any, names: Sequence[str]) -> Any:
    """Depth-first lookup of the first key whose folded spelling is in ``names``."""
    if isinstance(obj, dict):
        for key, value in obj.items():
            if isinstance(key, str) and _fold(key) in names:
                return value
        for value in obj.values():
            hit = _find_key(value, names)
            if hit is not None:
                return hit
    return None


def _as_str_list(value: Any) -> List[str]:
    if value is None:
        return []
    if isinstance(value, str):
        items = [value] if "\n" not in value else value.splitlines()
        return [_LIST_MARKER.sub("", s).strip() for s in items if s.strip()]
    if isinstance(value, list):
        return [str(v).strip() for v in value if str(v).strip()]
    if isinstance(value, dict):
        return [str(k).strip() for k in value]
    return [str(value).strip()]


def _pairs_from(value: Any, explanations: Any = None) -> List[Tuple[str, str]]:
    if isinstance(value, dict):
        if all(isinstance(v, str) for v in value.values()):
            return [(str(k), v) for k, v in value.items()]
        # nested container, e.g. {"Step 3": {...}}
        for inner in value.values():
            pairs = _pairs_from(inner, explanations)
            if pairs:
                return pairs
        return []
    if isinstance(value, list):
        pairs: List[Tuple[str, str]] = []
        if all(isinstance(v, dict) for v in value):
            for item in value:
                need = _find_key(item, _NEED_ITEM_KEYS)
                expl = _find_key(item, _EXPLANATION_KEYS)
                if isinstance(need, str) and isinstance(expl, str):
                    pairs.append((need, expl))
                elif len(item) == 1:
                    (k, v), = item.items()
                    if isinstance(v, str):
                        pairs.append((str(k), v))
            return pairs
        if all(isinstance(v, str) for v in value):
            if isinstance(explanations, dict):
                return [(n, explanations[n]) for n in value if isinstance(explanations.get(n), str)]
            if isinstance(explanations, list) and len(explanations) == len(value):
                return [(n, str(e)) for n, e in zip(value, explanations)]
    return []


def _need_map(obj: Any) -> List[Tuple[str, str]]:
    """Depth-first search for a {need: explanation} map keyed by prefixed needs."""
    if isinstance(obj, dict):
        flat = {k: v for k, v in obj.items() if isinstance(v, str) and _fold(k) not in _MAIN_TOPIC_KEYS}
        if flat and any(k.strip().startswith(NEED_PREFIX) for k in flat):
            return list(flat.items())
        for value in obj.values():
            pairs = _need_map(value)
            if pairs:
                return pairs
    return []


def _prose_main_topic(text: str) -> Optional[str]:
    for line in text.splitlines():
        m = _MAIN_TOPIC_LINE.search(line.replace("*", ""))
        if m and m.group(1).strip():
            return m.group(1).strip().strip('"')
    return None


def _prose_key_aspects(text: str) -> List[str]:
    lines = text.splitlines()
    for i, line in enumerate(lines):
        m = _KEY_ASPECTS_LINE.search(line.replace("*", ""))
        if not m:
            continue
        inline = m.group(1).strip()
        if inline:
            return [inline]
        out = []
        for nxt in lines[i + 1:]:
            if not nxt.strip() or not _LIST_MARKER.match(nxt):
                break
            out.append(_LIST_MARKER.sub("", nxt).strip())
        return out
    return []


def _scenario_from_obj(obj: Any, prose: str) -> Tuple[Optional[str], List[str], List[Tuple[str, str]]]:
    topic = _find_key(obj, _MAIN_TOPIC_KEYS)
    if isinstance(topic, dict):
        topic = None
    topic = str(topic).strip() if topic is not None else None
    aspects_value = _find_key(obj, _KEY_ASPECT_KEYS)
    aspects = _as_str_list(aspects_value)

    explanations = _find_key(obj, _EXPLANATION_KEYS)
    needs_value = _find_key(obj, _NEEDS_KEYS)
    pairs = _pairs_from(needs_value, explanations) if needs_value is not None else []
    if not pairs and isinstance(explanations, dict):
        pairs = _pairs_from(explanations)
    if not pairs and isinstance(needs_value, list) and isinstance(obj, dict):
        pairs = _pairs_from(needs_value, obj)
    if not pairs:
        # teacher output whose JSON block is only the need -> explanation map
        pairs = _need_map(obj)
    if not topic:
        topic = _prose_main_topic(prose)
    if aspects_value is None:
        aspects = _prose_key_aspects(prose)
    return topic, aspects, pairs


def parse_scenarios(text: str, doc_id: str, mode: str = "lenient", generator: str = "") -> List[Scenario]:
    """Parse a model response into one or more scenarios.

    Accepts the single-object generator shape, the teacher's step-wise output
    (prose plus a need->explanation JSON map), markdown fences, and a JSON
    list of scenario objects.
    """
    if mode not in ("strict", "lenient"):
        raise ContractError(f"mode must be strict or lenient, got {mode!r}")
    body = _strip_fences(text)
    values = _json_values(body) or _json_values(text)
    if not values:
        raise ScenarioParseError("no JSON object found in response", raw=text)

    objects: List[Any]
    if len(values) == 1 and isinstance(values[0], list) and values[0] and all(
            isinstance(v, dict) and _find_key(v, _MAIN_TOPIC_KEYS) is not None for v in values[0]):
        objects = list(values[0])
    else:
        # several blocks (e.g. step 1 dict, step 2 list, step 3 map) describe one scenario
        merged: Dict[str, Any] = {}
        for v in values:
            if isinstance(v, dict):
                for k, val in v.items():
                    merged.setdefault(k, val)
            elif isinstance(v, list) and "information_needs" not in {_fold(k) for k in merged}:
                merged.setdefault("Information Needs", v)
        objects = [merged]

    scenarios = []
    for n, obj in enumerate(objects):
        topic, aspects, pairs = _scenario_from_obj(obj, text if len(objects) == 1 else "")
        if not topic:
            raise ScenarioParseError("missing Main Topic", raw=text)
        if not pairs:
            raise ScenarioParseError("missing Information Needs", raw=text)
        pairs = [(need.strip(), expl.strip()) for need, expl in pairs]
        if any(not need or not expl for need, expl in pairs):
            raise ScenarioParseError("empty information need or explanation", raw=text)
        bad = [need for need, _ in pairs if not need.startswith(NEED_PREFIX)]
        if bad:
            if mode == "strict":
                raise ScenarioParseError(f"information need does not start with {NEED_PREFIX!r}: {bad[0][:80]!r}",
                                         raw=text)
            logger.warning("doc %s: %d need(s) lack the %r prefix", doc_id, len(bad), NEED_PREFIX)
        scenarios.append(Scenario(
            scenario_id=f"{doc_id}#s{n}",
            doc_id=doc_id,
            main_topic=topic,
            key_aspects=tuple(aspects),
            needs=tuple(InformationNeed(need, expl) for need, expl in pairs),
        ))
    return scenarios


def parse_scenario_json(text: str, doc_id: str, mode: str = "lenient") -> Scenario:
    scenarios = parse_scenarios(text, doc_id, mode)
    if len(scenarios) != 1:
        raise ScenarioParseError(f"expected one scenario object, found {len(scenarios)}", raw=text)
    return scenarios[0]


def scenario_to_json(scenario: Scenario) -> str:
    """Serialize in the generator's output shape (parseable by ``parse_scenario_json``)."""
    return json.dumps({
        "Main Topic": scenario.main_topic,
        "Key Aspects": list(scenario.key_aspects),
        "Information Needs": [{"Information Need": p.need, "Explanation": p.explanation} for p in scenario.needs],
    }, ensure_ascii=False)


# ---------------------------------------------------------------- rendering

def unit_id(scenario_id: str, mode: ComponentMode, index: int) -> str:
    return f"{scenario_id}:{mode.value}:{index}"


def render_units(scenario: Scenario, mode) -> List[ScenarioUnit]:
    mode = ComponentMode.parse(mode)
    if mode is ComponentMode.M:
        texts = [scenario.main_topic]
    elif mode is ComponentMode.I:
        texts = [p.need for p in scenario.needs]
    elif mode is ComponentMode.E:
        texts = [p.explanation for p in scenario.needs]
    elif mode is ComponentMode.M_E:
        texts = [f"{scenario.main_topic}\n{p.explanation}" for p in scenario.needs]
    else:
        texts = [f"{p.need}\n{p.explanation}" for p in scenario.needs]
    return [ScenarioUnit(unit_id(scenario.scenario_id, mode, i), scenario.doc_id, scenario.scenario_id, mode, t)
            for i, t in enumerate(texts)]


# ---------------------------------------------------------------- generation

def _repair_message(error: Exception) -> str:
    return (f"Your previous response could not be parsed: {error}. "
            "Respond again with only one valid JSON object containing \"Main Topic\", \"Key Aspects\" and "
            "\"Information Needs\" (a mapping from each information need, starting with "
            f"\"{NEED_PREFIX}\", to its explanation).")


def generate_scenarios(doc: Document, client: ChatClient, prompt_kind: str = "generator_instruction",
                       dataset_name: str = "", mode: str = "lenient",
                       max_scenarios: Optional[int] = None) -> GenerationResult:
    """Ask the model for scenarios of ``doc``, with one repair reprompt on parse failure.

    ``max_scenarios`` caps the number of (need, explanation) pairs kept.
    Raises GenerationError on transport failure and ScenarioParseError if the
    repaired response is still unusable.
    """
    if prompt_kind not in SCENARIO_KINDS:
        raise ContractError(f"{prompt_kind!r} is not a scenario prompt kind")
    prompt = build_prompt(GenerationRequest(doc, prompt_kind, dataset_name or doc.dataset_tag or "text"))
    messages = [{"role": "user", "content": prompt}]
    raw = client.complete(messages)
    repairs = 0
    try:
        scenarios = parse_scenarios(raw, doc.doc_id, mode)
    except ScenarioParseError as exc:
        repairs = 1
        messages = messages + [{"role": "assistant", "content": raw}, {"role": "user", "content": _repair_message(exc)}]
        raw = client.complete(messages, json_mode=True)
        scenarios = parse_scenarios(raw, doc.doc_id, mode)
    if max_scenarios is not None:
        scenarios = _cap_pairs(scenarios, max_scenarios)
    return GenerationResult(doc.doc_id, scenarios, repairs, raw)


def _cap_pairs(scenarios: List[Scenario], limit: int) -> List[Scenario]:
    out, left = [], limit
    for s in scenarios:
        if left <= 0:
            break
        out.append(Scenario(s.scenario_id, s.doc_id, s.main_topic, s.key_aspects, s.needs[:left]))
        left -= len(out[-1].needs)
    return out


def parse_expansion(text: str, doc_id: str, kind: str, strict: bool = True) -> List[ExpansionUnit]:
    if kind == "summary":
        body = _strip_fences(text).strip()
        if not body:
            raise ContractError(f"empty summary for {doc_id}")
        return [ExpansionUnit(doc_id, kind, body)]
    if kind != "pseudo_query":
        raise ContractError(f"unknown expansion kind {kind!r}")
    lines = [_LIST_MARKER.sub("", ln).strip().strip('"') for ln in _strip_fences(text).splitlines()]
    lines = [ln for ln in lines if ln]
    if len(lines) != PSEUDO_QUERY_COUNT:
        if strict or not lines:
            raise ContractError(f"expected {PSEUDO_QUERY_COUNT} pseudo queries for {doc_id}, got {len(lines)}")
        logger.warning("doc %s: got %d pseudo queries, keeping up to %d", doc_id, len(lines), PSEUDO_QUERY_COUNT)
        lines = lines[:PSEUDO_QUERY_COUNT]
    return [ExpansionUnit(doc_id, kind, ln) for ln in lines]


def generate_expansion(doc: Document, client: ChatClient, kind: str, dataset_name: str = "",
                       strict: bool = True) -> List[ExpansionUnit]:
    prompt = build_prompt(GenerationRequest(doc, kind, dataset_name or doc.dataset_tag or "text"))
    raw = client.complete([{"role": "user", "content": prompt}], json_mode=False)
    return parse_expansion(raw, doc.doc_id, kind, strict)


# ---------------------------------------------------------------- storage

def scenario_record(scenario: Scenario, generator: str = "", created_at: Optional[str] = None) -> Dict[str, Any]:
    return {
        "doc_id": scenario.doc_id,
        "scenario_id": scenario.scenario_id,
        "main_topic": scenario.main_topic,
        "key_aspects": list(scenario.key_aspects),
        "needs": [{"need": p.need, "explanation": p.explanation} for p in scenario.needs],
        "generator": generator,
        "created_at": created_at or datetime.now(timezone.utc).isoformat(),
    }


def scenario_from_record(record: Dict[str, Any]) -> Scenario:
    return Scenario(
        scenario_id=record["scenario_id"],
        doc_id=record["doc_id"],
        main_topic=record["main_topic"],
        key_aspects=tuple(record.get("key_aspects", ())),
        needs=tuple(InformationNeed(n["need"], n["explanation"]) for n in record["needs"]),
    )


def expansion_record(unit: ExpansionUnit) -> Dict[str, Any]:
    return {"doc_id": unit.doc_id, "kind": unit.kind, "text": unit.text}


def _iter_jsonl(path: PathLike) -> Iterator[Tuple[int, Dict[str, Any]]]:
    from .model import FormatError

    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                yield lineno, json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"invalid JSON: {exc.msg}", lineno) from exc


def load_scenarios(path: PathLike) -> List[Scenario]:
    from .model import FormatError

    out = []
    for lineno, record in _iter_jsonl(path):
        try:
            out.append(scenario_from_record(record))
        except (KeyError, TypeError, ContractError) as exc:
            raise FormatError(f"bad scenario record: {exc}", lineno) from exc
    return out


def load_expansions(path: PathLike) -> List[ExpansionUnit]:
    from .model import FormatError

    out = []
    for lineno, record in _iter_jsonl(path):
        try:
            out.append(ExpansionUnit(record["doc_id"], record["kind"], record["text"]))
        except (KeyError, TypeError, ContractError) as exc:
            raise FormatError(f"bad expansion record: {exc}", lineno) from exc
    return out


def load_units_file(path: PathLike) -> Tuple[str, list]:
    """Sniff a generation output file: returns ("scenario", scenarios) or (kind, expansion units)."""
    first = next(_iter_jsonl(path), None)
    if first is None:
        return "scenario", []
    if "kind" in first[1] and "main_topic" not in first[1]:
        units = load_expansions(path)
        kinds = {u.kind for u in units}
        if len(kinds) != 1:
            raise ContractError(f"expansion file mixes kinds {sorted(kinds)}")
        return kinds.pop(), units
    return "scenario", load_scenarios(path)


def completed_doc_ids(path: PathLike) -> set:
    p = Path(path)
    if not p.exists():
        return set()
    done = set()
    with open(p, encoding="utf-8") as fh:
        for line in fh:
            try:
                done.add(json.loads(line)["doc_id"])
            except (json.JSONDecodeError, KeyError, TypeError):
                # a torn final line from an interrupted run
                continue
    return done


class JsonlWriter:
    """Append-only JSONL sink, safe to call from several threads."""

    def __init__(self, path: PathLike):
        self.path = Path(path)
        self._lock = threading.Lock()
        self._fh = None

    def write(self, record: Dict[str, Any]) -> None:
        with self._lock:
            if self._fh is None:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                self._fh = open(self.path, "a", encoding="utf-8")
            self._fh.write(json.dumps(record, ensure_ascii=False) + "\n")
            self._fh.flush()

    def close(self) -> None:
        with self._lock:
            if self._fh is not None:
                self._fh.close()
                self._fh = None

    def __enter__(self) -> "JsonlWriter":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


@dataclass
class CorpusGenerationStats:
    succeeded: int = 0
    failed: int = 0
    transport_failures: int = 0
    repairs: int = 0
    skipped: int = 0


def generate_corpus(docs: Iterable[Document], client: ChatClient, out: PathLike, failures: PathLike,
                    prompt_kind: str = "generator_instruction", dataset_name: str = "", mode: str = "lenient",
                    max_scenarios: Optional[int] = None, workers: int = 4, generator: str = "",
                    progress: Optional[Callable[[str], None]] = None) -> CorpusGenerationStats:
    """Run generation over ``docs``, skipping doc ids already present in ``out``."""
    stats = CorpusGenerationStats()
    docs = list(docs)
    done = completed_doc_ids(out)
    todo = [d for d in docs if d.doc_id not in done]
    stats.skipped = len(docs) - len(todo)

    def work(doc: Document):
        if prompt_kind in EXPANSION_KINDS:
            return doc, generate_expansion(doc, client, prompt_kind, dataset_name, strict=mode == "strict")
        return doc, generate_scenarios(doc, client, prompt_kind, dataset_name, mode, max_scenarios)

    with JsonlWriter(out) as sink, JsonlWriter(failures) as ledger, \
            ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        futures = [pool.submit(work, d) for d in todo]
        for doc, fut in zip(todo, futures):
            try:
                _, result = fut.result()
            except (GenerationError, ScenarioParseError, ContractError) as exc:
                stats.failed += 1
                kind = type(exc).__name__
                if isinstance(exc, GenerationError):
                    stats.transport_failures += 1
                raw = getattr(exc, "raw", "") or str(exc)
                ledger.write({"doc_id": doc.doc_id, "error_kind": kind, "raw_excerpt": raw[:500]})
                logger.warning("generation failed for %s: %s", doc.doc_id, exc)
                continue
            if isinstance(result, GenerationResult):
                stats.repairs += result.repair_count
                for s in result.scenarios:
                    sink.write(scenario_record(s, generator))
            else:
                for unit in result:
                    sink.write(expansion_record(unit))
            stats.succeeded += 1
            if progress:
                progress(doc.doc_id)
    return stats
