"""Scenario-profiled dense retrieval: scenario generation, dual indexing,
weighted document + scenario scoring, evaluation and RAG plumbing."""

__version__ = "0.1.0"

from .embedding import EmbeddingProviderConfig, cosine_similarity, embed_batch
from .evaluation import EvalReport, ablation_sweep, evaluate_run, improvement_rate, ndcg_at_k
from .index import DualIndex, build_index, load_index, save_index
from .model import (
    ComponentMode,
    Corpus,
    Document,
    InformationNeed,
    Qrels,
    Query,
    RankedList,
    Scenario,
    ScenarioUnit,
    load_corpus,
    load_qrels,
    load_queries,
)
from .retrieval import RetrievalParams, final_scores, max_scenario_score, retrieve, score_documents
from .scenarios import build_prompt, generate_expansion, generate_scenarios, parse_scenario_json, render_units

__all__ = [
    "ComponentMode", "Corpus", "Document", "DualIndex", "EmbeddingProviderConfig", "EvalReport",
    "InformationNeed", "Qrels", "Query", "RankedList", "RetrievalParams", "Scenario", "ScenarioUnit",
    "ablation_sweep", "build_index", "build_prompt", "cosine_similarity", "embed_batch", "evaluate_run",
    "final_scores", "generate_expansion", "generate_scenarios", "improvement_rate", "load_corpus",
    "load_index", "load_qrels", "load_queries", "max_scenario_score", "ndcg_at_k", "parse_scenario_json",
    "render_units", "retrieve", "save_index", "score_documents",
]
