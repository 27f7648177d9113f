"""nDCG evaluation, TREC run files and ablation sweeps.

nDCG uses linear gain (gain = grade) and a log2(rank + 1) discount.
Dataset averages are macro-averaged over dataset tags.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, TextIO, Tuple

from .embedding import QUERY, EmbeddingProviderConfig, make_provider
from .index import DualIndex
from .model import ContractError, PathLike, Qrels, Query, RankedList
from .retrieval import RetrievalParams, search_vector, to_ranked_list

logger = logging.getLogger(__name__)

GAIN_DESCRIPTION = "linear gain (gain = grade), log2(rank + 1) discount"
DEFAULT_DATASET = "default"


def dcg(gains: Iterable[float]) -> float:
    return sum(g / math.log2(i + 2) for i, g in enumerate(gains))


def ndcg_detail(ranked: RankedList, qrels: Qrels, k: int = 10) -> Tuple[float, bool]:
    """Return ``(ndcg, skipped)``; ``skipped`` is True when the query has no relevant documents."""
    if k <= 0:
        raise ContractError("k must be positive")
    judged = qrels.for_query(ranked.query_id)
    ideal = sorted((g for g in judged.values() if g > 0), reverse=True)[:k]
    idcg = dcg(ideal)
    if idcg == 0:
        return 0.0, True
    gains = [judged.get(doc_id, 0) for doc_id in ranked.doc_ids[:k]]
    return dcg(gains) / idcg, False


def ndcg_at_k(ranked: RankedList, qrels: Qrels, k: int = 10) -> float:
    return ndcg_detail(ranked, qrels, k)[0]


def improvement_rate(average: float, baseline_average: float) -> float:
    if baseline_average == 0:
        raise ContractError("baseline average is zero; improvement rate undefined")
    return (average - baseline_average) / baseline_average


@dataclass
class EvalReport:
    per_query: Dict[str, float] = field(default_factory=dict)
    per_dataset: Dict[str, float] = field(default_factory=dict)
    average: float = 0.0
    baseline_average: Optional[float] = None
    improvement_rate: Optional[float] = None
    skipped: List[str] = field(default_factory=list)
    params: Dict[str, object] = field(default_factory=dict)

    def with_baseline(self, baseline_average: float) -> "EvalReport":
        self.baseline_average = baseline_average
        if baseline_average == 0:
            logger.warning("baseline average is zero; improvement rate left undefined")
            self.improvement_rate = None
        else:
            self.improvement_rate = improvement_rate(self.average, baseline_average)
        return self

    def to_dict(self) -> Dict[str, object]:
        """JSON-ready dict; scores are x100 with one decimal, as in result tables."""
        out: Dict[str, object] = {
            "metric": "nDCG@10",
            "gain": GAIN_DESCRIPTION,
            "params": self.params,
            "average": round(self.average * 100, 1),
            "per_dataset": {k: round(v * 100, 1) for k, v in sorted(self.per_dataset.items())},
            "per_query": {k: round(v * 100, 1) for k, v in sorted(self.per_query.items())},
            "skipped": sorted(self.skipped),
        }
        if self.baseline_average is not None:
            out["baseline_average"] = round(self.baseline_average * 100, 1)
            out["improvement_rate"] = (None if self.improvement_rate is None
                                       else round(self.improvement_rate * 100, 1))
        return out


def macro_average(per_query: Mapping[str, float], dataset_of: Mapping[str, str]) -> Tuple[Dict[str, float], float]:
    buckets: Dict[str, List[float]] = {}
    for qid in sorted(per_query):
        buckets.setdefault(dataset_of.get(qid, DEFAULT_DATASET), []).append(per_query[qid])
    per_dataset = {tag: math.fsum(v) / len(v) for tag, v in buckets.items()}
    average = math.fsum(per_dataset.values()) / len(per_dataset) if per_dataset else 0.0
    return per_dataset, average


def write_run(rankings: Sequence[RankedList], fh: TextIO, tag: str = "spike") -> None:
    for ranked in rankings:
        for rank, (doc_id, score) in enumerate(ranked.entries, 1):
            fh.write(f"{ranked.query_id} Q0 {doc_id} {rank} {score:.6f} {tag}\n")


def run_queries(queries: Sequence[Query], index: DualIndex, params: RetrievalParams,
                provider_cfg: EmbeddingProviderConfig, provider=None, workers: int = 4) -> List[RankedList]:
    if not queries:
        return []
    if provider_cfg.fingerprint != index.provider_fingerprint:
        logger.warning("query provider fingerprint differs from index fingerprint")
    provider = provider or make_provider(provider_cfg)
    vectors = provider.embed([q.text for q in queries], QUERY)

    def one(i: int) -> RankedList:
        return to_ranked_list(queries[i].query_id, search_vector(vectors[i], index, params))

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        return list(pool.map(one, range(len(queries))))


def score_run(rankings: Sequence[RankedList], queries: Sequence[Query], qrels: Qrels, k: int = 10) -> EvalReport:
    dataset_of = {q.query_id: q.dataset_tag or DEFAULT_DATASET for q in queries}
    report = EvalReport()
    for ranked in rankings:
        if ranked.query_id not in qrels:
            logger.warning("query %s has no qrels entry; skipped", ranked.query_id)
            report.skipped.append(ranked.query_id)
            continue
        value, skipped = ndcg_detail(ranked, qrels, k)
        if skipped:
            logger.warning("query %s has no relevant documents; excluded from the mean", ranked.query_id)
            report.skipped.append(ranked.query_id)
            continue
        report.per_query[ranked.query_id] = value
    report.per_dataset, report.average = macro_average(report.per_query, dataset_of)
    return report


def evaluate_run(queries: Sequence[Query], index: DualIndex, qrels: Qrels, params: RetrievalParams,
                 provider_cfg: EmbeddingProviderConfig, run_path: Optional[PathLike] = None, tag: str = "spike",
                 provider=None, workers: int = 4) -> EvalReport:
    rankings = run_queries(queries, index, params, provider_cfg, provider, workers)
    if run_path is not None:
        with open(run_path, "w", encoding="utf-8") as fh:
            write_run(rankings, fh, tag)
    report = score_run(rankings, queries, qrels)
    report.params = {"alpha": params.alpha, "k": params.k,
                     "k_prime": "all" if params.k_prime is None else params.k_prime,
                     "component_mode": index.component_mode.value, "expansion_mode": index.expansion_mode}
    return report


@dataclass
class SweepTable:
    """Average nDCG per (row, column) cell, e.g. (component mode, alpha)."""

    row_label: str
    col_label: str
    rows: List[str]
    cols: List[str]
    cells: Dict[Tuple[str, str], float]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow([self.row_label, self.col_label, "ndcg@10"])
        for r in self.rows:
            for c in self.cols:
                writer.writerow([r, c, f"{self.cells[(r, c)] * 100:.1f}"])
        return buf.getvalue()

    def pretty(self) -> str:
        width = max([len(self.row_label)] + [len(r) for r in self.rows])
        head = f"{self.row_label:<{width}} | " + " ".join(f"{c:>6}" for c in self.cols)
        lines = [head, "-" * len(head)]
        for r in self.rows:
            lines.append(f"{r:<{width}} | " + " ".join(f"{self.cells[(r, c)] * 100:6.1f}" for c in self.cols))
        return "\n".join(lines)

    def to_json(self) -> str:
        return json.dumps({f"{r}|{c}": round(v * 100, 1) for (r, c), v in self.cells.items()}, sort_keys=True)


def _fmt_alpha(a: float) -> str:
    text = format(a, "g")
    return text if "." in text else text + ".0"


def ablation_sweep(index_set: Mapping[str, DualIndex], queries: Sequence[Query], qrels: Qrels,
                   alpha_grid: Sequence[float], provider_cfg: EmbeddingProviderConfig,
                   modes: Optional[Sequence[str]] = None, k: int = 10, k_prime: Optional[int] = 1000,
                   provider=None) -> SweepTable:
    modes = list(modes or index_set)
    missing = [m for m in modes if m not in index_set]
    if missing:
        raise ContractError(f"no index for component mode(s): {', '.join(missing)}")
    provider = provider or make_provider(provider_cfg)
    cells: Dict[Tuple[str, str], float] = {}
    cols = [_fmt_alpha(a) for a in alpha_grid]
    for mode in modes:
        for alpha, col in zip(alpha_grid, cols):
            params = RetrievalParams(alpha=alpha, k=k, k_prime=k_prime)
            report = score_run(run_queries(queries, index_set[mode], params, provider_cfg, provider), queries, qrels)
            cells[(mode, col)] = report.average
    return SweepTable("mode", "alpha", modes, cols, cells)


def k_prime_sweep(index: DualIndex, queries: Sequence[Query], qrels: Qrels, k_primes: Sequence[Optional[int]],
                  provider_cfg: EmbeddingProviderConfig, alpha: float = 0.7, k: int = 10,
                  provider=None) -> SweepTable:
    provider = provider or make_provider(provider_cfg)
    cols, cells = [], {}
    mode = index.component_mode.value
    for kp in k_primes:
        col = "all" if kp is None else str(kp)
        params = RetrievalParams(alpha=alpha, k=min(k, kp) if kp is not None else k, k_prime=kp)
        report = score_run(run_queries(queries, index, params, provider_cfg, provider), queries, qrels)
        cols.append(col)
        cells[(mode, col)] = report.average
    return SweepTable("mode", "k_prime", [mode], cols, cells)


def parse_alpha_grid(grid: str) -> List[float]:
    """``"0:1:0.1"`` (inclusive range) or ``"0,0.5,0.7"``."""
    grid = grid.strip()
    if ":" in grid:
        try:
            start, stop, step = (float(x) for x in grid.split(":"))
        except ValueError:
            raise ContractError(f"bad alpha range {grid!r}; expected start:stop:step") from None
        if step <= 0:
            raise ContractError("alpha step must be positive")
        n = int(math.floor((stop - start) / step + 1e-9)) + 1
        values = [round(start + i * step, 10) for i in range(n)]
    else:
        values = [float(x) for x in grid.split(",") if x.strip()]
    for v in values:
        if not 0.0 <= v <= 1.0:
            raise ContractError(f"alpha {v} outside [0, 1]")
    return values
