"""``spike`` command line: generate, index, search, eval, ablate, rag.

Exit codes: 0 success, 1 runtime error, 2 usage error.
"""
from __future__ import annotations

import argparse
import json
import logging
import random
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from . import __version__
from .chat import ChatClientConfig, HttpChatClient
from .config import Settings
from .embedding import EmbeddingProviderConfig, make_provider
from .evaluation import (
    ablation_sweep,
    evaluate_run,
    k_prime_sweep,
    parse_alpha_grid,
)
from .index import DualIndex, build_index, load_index, save_index
from .model import ComponentMode, ContractError, Corpus, SpikeError, load_corpus, load_qrels, load_queries
from .rag import CONTEXT_MODES, load_gold, run_rag, scenario_map
from .retrieval import RetrievalParams, embed_query, search_vector
from .scenarios import (
    PROMPT_KINDS,
    JsonlWriter,
    generate_corpus,
    load_scenarios,
    load_units_file,
    render_units,
)

logger = logging.getLogger("spike")


def make_chat_client(config: ChatClientConfig):
    """Factory hook; tests replace it with a scripted client."""
    return HttpChatClient(config)


# ---------------------------------------------------------------- helpers

def _k_prime(value: str) -> Optional[int]:
    if value.lower() == "all":
        return None
    try:
        k = int(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a positive integer or 'all', got {value!r}") from None
    if k <= 0:
        raise argparse.ArgumentTypeError("k-prime must be positive")
    return k


def _k_prime_flag(value: str) -> str:
    # keep the text: None would read as "flag not given" in the settings lookup
    _k_prime(value)
    return value


def _alpha(value: str) -> float:
    try:
        a = float(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"alpha must be a number, got {value!r}") from None
    if not 0.0 <= a <= 1.0:
        raise argparse.ArgumentTypeError("alpha must be within [0, 1]")
    return a


def _embedding_config(args, settings: Settings, index: Optional[DualIndex] = None) -> EmbeddingProviderConfig:
    get = lambda key, flag, default=None: settings.get("embedding", key, flag, default)  # noqa: E731
    dim_default = index.dim if index is not None else 256
    return EmbeddingProviderConfig(
        kind=get("kind", args.embed_kind, "deterministic_hash"),
        endpoint=get("endpoint", args.embed_endpoint),
        model_name=get("model_name", args.embed_model),
        dim=int(get("dim", args.dim, dim_default)),
        batch_size=int(get("batch_size", args.batch_size, 32)),
        query_instruction=get("query_instruction", args.query_instruction),
        max_retries=int(get("max_retries", None, 3)),
        timeout=float(get("timeout", None, 30.0)),
    )


def _chat_config(settings: Settings, section: str, endpoint, model, args) -> ChatClientConfig:
    endpoint = settings.get(section, "endpoint", endpoint)
    model = settings.get(section, "model_name", model)
    if not endpoint or not model:
        raise ContractError(f"{section}: a chat endpoint and model name are required "
                            "(flags, CHAT_ENDPOINT, or config file)")
    return ChatClientConfig(
        endpoint=endpoint,
        model_name=model,
        temperature=float(settings.get(section, "temperature", getattr(args, "temperature", None), 0.0)),
        max_retries=int(settings.get(section, "max_retries", None, 3)),
        timeout=float(settings.get(section, "timeout", None, 120.0)),
        force_json=bool(settings.get(section, "force_json", getattr(args, "force_json", None) or None, False)),
    )


def _k_prime_setting(value) -> Optional[int]:
    """k' from a flag, env or config value; strings go through the flag parser."""
    if value is None or isinstance(value, int):
        return value
    try:
        return _k_prime(str(value))
    except argparse.ArgumentTypeError as exc:
        raise ContractError(str(exc)) from None


def _retrieval_params(args, settings: Settings) -> RetrievalParams:
    k_prime = _k_prime_setting(settings.get("retrieval", "k_prime", args.k_prime, 1000))
    k = int(settings.get("retrieval", "k", args.k, 10))
    return RetrievalParams(alpha=float(settings.get("retrieval", "alpha", args.alpha, 0.7)), k=k, k_prime=k_prime)


def _emit(args, payload, text: str) -> None:
    if args.json:
        print(json.dumps(payload, ensure_ascii=False))
    else:
        print(text)


def sample_documents(corpus: Corpus, n: Optional[int], seed: int) -> List:
    """Seeded subset of ``n`` documents, returned in corpus order."""
    docs = corpus.documents()
    if n is None or n >= len(docs):
        return docs
    picked = set(random.Random(seed).sample(range(len(docs)), n))
    return [d for i, d in enumerate(docs) if i in picked]


# ---------------------------------------------------------------- commands

def cmd_generate(args, settings: Settings) -> int:
    corpus = load_corpus(args.corpus)
    docs = sample_documents(corpus, args.sample, int(settings.get(None, "seed", args.seed, 0)))
    prompt_kind = settings.get("generation", "prompt_kind", args.prompt_kind, "generator_instruction")
    chat_cfg = _chat_config(settings, "chat", args.chat_endpoint, args.chat_model, args)
    client = make_chat_client(chat_cfg)
    failures = args.failures or str(Path(args.out).with_suffix(".failures.jsonl"))
    stats = generate_corpus(
        docs, client, args.out, failures,
        prompt_kind=prompt_kind,
        dataset_name=settings.get("generation", "dataset", args.dataset, ""),
        mode="strict" if args.strict else "lenient",
        max_scenarios=settings.get("generation", "max_scenarios", args.max_scenarios),
        workers=int(settings.get("generation", "workers", args.workers, 4)),
        generator=chat_cfg.model_name,
    )
    payload = {"out": args.out, "failures": failures, **vars(stats)}
    _emit(args, payload, f"generated {stats.succeeded}, failed {stats.failed}, skipped {stats.skipped} "
                         f"(already done), repairs {stats.repairs}; failures -> {failures}")
    return 1 if stats.transport_failures else 0


def _build_from_files(corpus: Corpus, scenarios_path: Optional[str], mode: ComponentMode,
                      cfg: EmbeddingProviderConfig, provider=None) -> DualIndex:
    if not scenarios_path:
        return build_index(corpus, [], cfg, mode, "none", provider)
    kind, items = load_units_file(scenarios_path)
    if kind == "scenario":
        units = [u for s in items for u in render_units(s, mode)]
        return build_index(corpus, units, cfg, mode, "scenario", provider)
    return build_index(corpus, items, cfg, mode, kind, provider)


def cmd_index(args, settings: Settings) -> int:
    corpus = load_corpus(args.corpus)
    cfg = _embedding_config(args, settings)
    index = _build_from_files(corpus, args.scenarios, ComponentMode.parse(args.mode), cfg)
    save_index(index, args.out)
    payload = {"out": args.out, "num_docs": index.num_docs, "num_units": index.num_units,
               "component_mode": index.component_mode.value, "expansion_mode": index.expansion_mode,
               "provider_fingerprint": index.provider_fingerprint}
    _emit(args, payload, f"indexed {index.num_docs} documents and {index.num_units} units -> {args.out}")
    return 0


def cmd_search(args, settings: Settings) -> int:
    index = load_index(args.index)
    cfg = _embedding_config(args, settings, index)
    params = _retrieval_params(args, settings)
    hits = search_vector(embed_query(args.query, cfg, index), index, params)
    results = []
    lines = []
    for rank, h in enumerate(hits, 1):
        explanation = index.unit_texts[h.unit_index] if h.unit_index is not None else None
        results.append({"rank": rank, "doc_id": h.doc_id, "score": h.score, "doc_score": h.doc_score,
                        "scenario_score": h.scenario_score,
                        **({"explanation": explanation} if args.explain else {})})
        lines.append(f"{rank:>3}  {h.score:.6f}  {h.doc_id}")
        if args.explain and explanation:
            lines.append("     why: " + explanation.replace("\n", " | "))
    payload = {"query": args.query,
               "params": {"alpha": params.alpha, "k": params.k,
                          "k_prime": "all" if params.k_prime is None else params.k_prime},
               "results": results}
    _emit(args, payload, "\n".join(lines) if lines else "(no results)")
    return 0


def cmd_eval(args, settings: Settings) -> int:
    index = load_index(args.index)
    cfg = _embedding_config(args, settings, index)
    params = _retrieval_params(args, settings)
    queries = load_queries(args.queries)
    qrels = load_qrels(args.qrels)
    provider = make_provider(cfg)
    report = evaluate_run(queries, index, qrels, params, cfg, run_path=args.out, tag=args.tag, provider=provider,
                          workers=args.workers or 4)
    if args.with_baseline:
        base_params = RetrievalParams(alpha=1.0, k=params.k, k_prime=params.k_prime)
        baseline = evaluate_run(queries, index, qrels, base_params, cfg, provider=provider)
        report.with_baseline(baseline.average)
    payload = report.to_dict()
    if args.report:
        Path(args.report).write_text(json.dumps(payload, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")
    text = [f"nDCG@10 average: {payload['average']:.1f}"]
    text += [f"  {tag}: {v:.1f}" for tag, v in payload["per_dataset"].items()]
    if report.baseline_average is not None:
        improv = payload["improvement_rate"]
        text.append(f"baseline (alpha=1.0): {payload['baseline_average']:.1f}  improvement: "
                    + ("undefined (zero baseline)" if improv is None else f"{improv:+.1f}%"))
    if report.skipped:
        text.append(f"skipped queries: {len(report.skipped)}")
    _emit(args, payload, "\n".join(text))
    return 0


def _parse_index_args(values: Sequence[str]) -> Dict[str, str]:
    out = {}
    for item in values:
        mode, sep, path = item.partition("=")
        if not sep:
            raise ContractError(f"--index expects MODE=PATH, got {item!r}")
        out[ComponentMode.parse(mode).value] = path
    return out


def cmd_ablate(args, settings: Settings) -> int:
    modes = [ComponentMode.parse(m).value for m in args.modes.split(",") if m.strip()]
    queries = load_queries(args.queries)
    qrels = load_qrels(args.qrels)
    alphas = parse_alpha_grid(args.alphas)
    if args.index:
        paths = _parse_index_args(args.index)
        index_set = {m: load_index(p) for m, p in paths.items()}
        cfg = _embedding_config(args, settings, next(iter(index_set.values())))
    else:
        if not (args.corpus and args.scenarios):
            raise ContractError("ablate needs either --index MODE=PATH or both --corpus and --scenarios")
        corpus = load_corpus(args.corpus)
        cfg = _embedding_config(args, settings)
        index_set = {m: _build_from_files(corpus, args.scenarios, ComponentMode.parse(m), cfg, make_provider(cfg))
                     for m in modes}
    provider = make_provider(cfg)
    k_prime = _k_prime_setting(settings.get("retrieval", "k_prime", args.k_prime, 1000))
    table = ablation_sweep(index_set, queries, qrels, alphas, cfg, modes=modes, k_prime=k_prime, provider=provider)
    text = table.pretty()
    if args.csv:
        Path(args.csv).write_text(table.to_csv(), encoding="utf-8")
    payload = {"ablation": json.loads(table.to_json())}
    if args.k_primes:
        kps = [_k_prime_setting(v.strip()) for v in args.k_primes.split(",")]
        sweep_mode = modes[0] if "m_e" not in modes else "m_e"
        ksweep = k_prime_sweep(index_set[sweep_mode], queries, qrels, kps, cfg,
                               alpha=float(settings.get("retrieval", "alpha", args.alpha, 0.7)), provider=provider)
        text += "\n\n" + ksweep.pretty()
        payload["k_prime_sweep"] = json.loads(ksweep.to_json())
    _emit(args, payload, text)
    return 0


def cmd_rag(args, settings: Settings) -> int:
    index = load_index(args.index)
    corpus = load_corpus(args.corpus)
    cfg = _embedding_config(args, settings, index)
    params = _retrieval_params(args, settings)
    queries = load_queries(args.queries)
    gold = load_gold(args.gold)
    scenarios = scenario_map(load_scenarios(args.scenarios)) if args.scenarios else {}
    if args.mode == "with_scenario" and index.num_units == 0:
        raise ContractError("with_scenario mode needs an index built with scenarios")
    hits_by_query = {}
    if args.mode != "oracle":
        provider = make_provider(cfg)
        for q in queries:
            hits_by_query[q.query_id] = search_vector(embed_query(q.text, cfg, index, provider), index, params)
    gen = make_chat_client(_chat_config(settings, "generator", args.gen_endpoint, args.gen_model, args))
    judge = make_chat_client(_chat_config(settings, "judge", args.judge_endpoint, args.judge_model, args))
    with JsonlWriter(args.out) as transcript:
        results = run_rag(queries, index, corpus, hits_by_query, gold, args.mode, gen, judge,
                          transcript=transcript, scenarios=scenarios, top_n=args.top_n, workers=args.workers or 4)
    mean = sum(r.score for r in results) / len(results) if results else 0.0
    payload = {"mode": args.mode, "queries": len(results), "mean_score": round(mean, 1), "out": args.out}
    _emit(args, payload, f"{len(results)} queries, mean judge score {mean:.1f} -> {args.out}")
    return 0


# ---------------------------------------------------------------- parser

def _add_embedding_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("embedding")
    g.add_argument("--embed-kind", choices=["deterministic_hash", "remote_http"])
    g.add_argument("--embed-endpoint")
    g.add_argument("--embed-model")
    g.add_argument("--dim", type=int)
    g.add_argument("--batch-size", type=int)
    g.add_argument("--query-instruction")


def _add_retrieval_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--alpha", type=_alpha, help="relevance weight of the document score (default 0.7)")
    p.add_argument("--k", type=int, help="results per query (default 10)")
    p.add_argument("--k-prime", type=_k_prime_flag, help="candidate set size or 'all' (default 1000)")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML settings file")
    common.add_argument("-v", "--verbose", action="count", default=0)
    common.add_argument("--json", action="store_true", help="machine-readable output on stdout")
    common.add_argument("--seed", type=int)
    common.add_argument("--workers", type=int)

    parser = argparse.ArgumentParser(prog="spike", description="Scenario-profiled dense retrieval.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", parents=[common], help="generate scenarios or expansions for a corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--failures", help="failure ledger path (default: <out>.failures.jsonl)")
    p.add_argument("--prompt-kind", choices=PROMPT_KINDS)
    p.add_argument("--dataset", help="domain name substituted into the prompt, e.g. biology")
    p.add_argument("--chat-endpoint")
    p.add_argument("--chat-model")
    p.add_argument("--temperature", type=float)
    p.add_argument("--force-json", action="store_true")
    p.add_argument("--max-scenarios", type=int)
    p.add_argument("--sample", type=int, help="generate for a seeded random subset of N documents")
    p.add_argument("--strict", action="store_true", help="reject needs without the required prefix")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("index", parents=[common], help="embed a corpus and its scenarios into an index file")
    p.add_argument("--corpus", required=True)
    p.add_argument("--scenarios", help="scenario or expansion JSONL from `spike generate`")
    p.add_argument("--mode", default="m_e", help="component mode: m, i, e, m_e, i_e (default m_e)")
    p.add_argument("--out", required=True)
    _add_embedding_flags(p)
    p.set_defaults(func=cmd_index)

    p = sub.add_parser("search", parents=[common], help="query an index")
    p.add_argument("--index", required=True)
    p.add_argument("--query", required=True)
    p.add_argument("--explain", action="store_true", help="show the best-matching scenario unit per hit")
    _add_retrieval_flags(p)
    _add_embedding_flags(p)
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("eval", parents=[common], help="nDCG@10 evaluation with a TREC run file")
    p.add_argument("--index", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--qrels", required=True)
    p.add_argument("--out", help="TREC run file to write")
    p.add_argument("--report", help="JSON report to write")
    p.add_argument("--tag", default="spike")
    p.add_argument("--with-baseline", action="store_true", help="also run alpha=1.0 and report improvement")
    _add_retrieval_flags(p)
    _add_embedding_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", parents=[common], help="component mode x alpha sweep")
    p.add_argument("--modes", default="m,i,e,m_e,i_e")
    p.add_argument("--alphas", default="0:1:0.1", help="start:stop:step or comma list")
    p.add_argument("--queries", required=True)
    p.add_argument("--qrels", required=True)
    p.add_argument("--corpus")
    p.add_argument("--scenarios")
    p.add_argument("--index", action="append", default=[], metavar="MODE=PATH")
    p.add_argument("--k-primes", help="also sweep candidate sizes, e.g. 10,100,all")
    p.add_argument("--csv", help="write the alpha grid as CSV")
    _add_retrieval_flags(p)
    _add_embedding_flags(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("rag", parents=[common], help="retrieval-augmented answering with rubric judging")
    p.add_argument("--index", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--gold", required=True, help="JSONL {id, answer, gold_ids?}")
    p.add_argument("--scenarios", help="scenario JSONL used to build the index")
    p.add_argument("--mode", choices=CONTEXT_MODES, default="with_scenario")
    p.add_argument("--top-n", type=int, default=10)
    p.add_argument("--gen-endpoint")
    p.add_argument("--gen-model")
    p.add_argument("--judge-endpoint")
    p.add_argument("--judge-model")
    p.add_argument("--temperature", type=float)
    p.add_argument("--out", required=True)
    _add_retrieval_flags(p)
    _add_embedding_flags(p)
    p.set_defaults(func=cmd_rag)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        settings = Settings.from_file(args.config)
        return args.func(args, settings)
    except (SpikeError, OSError) as exc:
        print(f"spike: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
