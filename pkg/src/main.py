import argparse
import logging
import os
import sys
from typing import Any, Dict, List, Optional

from pydantic import ValidationError
from rich import box
from rich.console import Console
from rich.panel import Panel
from rich.table import Table
from rich.text import Text

# Ensure we can import modules if run directly
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from src.agent.builder import MemoryBuilder
from src.agent.engine import InferenceEngine, RetrievalConfig
from src.ai.embedding import Embedder
from src.ai.gateway import GatewayConfig, LLMGateway
from src.core.config_loader import Config
from src.core.errors import EXIT_DATA, EXIT_INTERNAL, EXIT_OK, ConfigError, DataError, MemweaveError
from src.core.store import RunManifest, load_store, save_store
from src.features.extract import ExtractionConfig
from src.models.clustering import ConsolidationConfig
from src.reports.analyst import ABLATIONS, BenchmarkAnalyst, write_report
from src.reports.datasets import load_dataset
from src.reports.visualizer import Visualizer

console = Console()
logger = logging.getLogger("memweave")


def create_header(subtitle: str) -> Panel:
    return Panel(
        Text(f"memweave | {subtitle}", justify="center", style="bold cyan"),
        style="cyan",
        box=box.DOUBLE,
    )


def setup_logging(cfg: Config):
    log_dir = cfg.get("runtime.log_dir", "logs")
    os.makedirs(log_dir, exist_ok=True)
    logging.basicConfig(
        filename=os.path.join(log_dir, "memweave.log"),
        level=logging.INFO,
        format='%(asctime)s - %(levelname)s - %(message)s',
        force=True,
    )


def parse_budgets(text: str) -> List[int]:
    try:
        budgets = [int(b) for b in text.split(",") if b.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"budget sweep must be comma-separated integers, got {text!r}")
    if not budgets:
        raise argparse.ArgumentTypeError("budget sweep is empty")
    return budgets


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML file layered over the packaged defaults")
    common.add_argument("--theta", type=float, help="connected-pair similarity threshold")
    common.add_argument("--no-step1", action="store_true", help="store raw turns instead of extracted fragments")
    common.add_argument("--no-step2", action="store_true", help="disable cross-session reasoning")
    common.add_argument("--no-categories", action="store_true", help="flat single-category extraction")
    common.add_argument("--no-temporal", action="store_true", help="use message dates verbatim")
    common.add_argument("--small-models", action="store_true", help="smaller extract/reason models")
    common.add_argument("--record-fixtures", action="store_true",
                        help="mock backend: record scripted replies for missing fixtures")
    common.add_argument("--budget", type=int, help="context token budget")
    common.add_argument("--retriever", choices=["dense", "bm25"], help="retrieval mode")
    common.add_argument("--n-jobs", type=int, help="worker threads (0 = logical cores)")

    parser = argparse.ArgumentParser(prog="memweave", description="Episodic memory with pre-storage reasoning")
    sub = parser.add_subparsers(dest="command", required=True)

    build = sub.add_parser("build", parents=[common], help="build memory stores for a conversation file")
    build.add_argument("conversation_file")
    build.add_argument("--dataset-kind", choices=["locomo", "longmemeval", "native"])
    build.add_argument("--conversation-id", help="only build this conversation")
    build.add_argument("--out-dir", help="where stores and the manifest are written")

    query = sub.add_parser("query", parents=[common], help="retrieve, assemble and answer over a store")
    query.add_argument("store_file")
    query.add_argument("question")
    query.add_argument("--style", choices=["locomo", "longmemeval"], default="locomo")
    query.add_argument("--dry-run", action="store_true", help="stop before the answer call")

    evaluate = sub.add_parser("eval", parents=[common], help="run a benchmark")
    evaluate.add_argument("dataset")
    evaluate.add_argument("--dataset-kind", choices=["locomo", "longmemeval", "native"])
    evaluate.add_argument("--ablate", nargs="+", choices=["full", *sorted(ABLATIONS)],
                          help="one set of report cells per ablation ('full' = no ablation)")
    evaluate.add_argument("--budget-sweep", type=parse_budgets, help="e.g. 1024,2048,4096")
    evaluate.add_argument("--charts", action="store_true", help="save a sweep chart next to the reports")
    evaluate.add_argument("--out-dir", help="where reports and manifests are written")

    stats = sub.add_parser("stats", help="unified category counts of a dataset file")
    stats.add_argument("dataset")
    stats.add_argument("--dataset-kind", choices=["locomo", "longmemeval", "native"])
    stats.add_argument("--config", help="TOML file layered over the packaged defaults")
    return parser


def overrides_from(args: argparse.Namespace) -> Dict[str, Any]:
    flags = {
        "consolidation.theta": getattr(args, "theta", None),
        "retrieval.token_budget": getattr(args, "budget", None),
        "retrieval.mode": getattr(args, "retriever", None),
        "runtime.n_jobs": getattr(args, "n_jobs", None),
    }
    if getattr(args, "small_models", False):
        flags["models.use_small"] = True
    if getattr(args, "record_fixtures", False):
        flags["gateway.record_missing"] = True
    if getattr(args, "no_step1", False):
        flags["extraction.skip_extraction"] = True
    if getattr(args, "no_step2", False):
        flags["consolidation.reasoning_enabled"] = False
    if getattr(args, "no_categories", False):
        flags["extraction.use_categories"] = False
    if getattr(args, "no_temporal", False):
        flags["extraction.use_temporal_reasoning"] = False
    return flags


def validate_config(cfg: Config):
    """Typed sections are checked up front so bad values exit as config errors."""
    try:
        ExtractionConfig.from_config(cfg)
        ConsolidationConfig.from_config(cfg)
        RetrievalConfig.from_config(cfg)
        GatewayConfig.from_config(cfg)
    except ValidationError as e:
        raise ConfigError(f"Invalid configuration: {e}") from e


def cmd_build(args, cfg: Config) -> int:
    console.print(create_header("Memory Construction"))
    dataset = load_dataset(args.conversation_file, args.dataset_kind, cfg)
    conversations = dataset.conversations
    if args.conversation_id:
        try:
            conversations = [dataset.conversation(args.conversation_id)]
        except KeyError:
            raise DataError(f"No conversation {args.conversation_id!r} in {args.conversation_file}")
    out_dir = args.out_dir or cfg.get("runtime.output_dir", "reports")

    gateway = LLMGateway.from_config(cfg)
    embedder = Embedder.from_config(cfg)
    builder = MemoryBuilder.from_config(cfg, gateway, embedder)
    manifest = RunManifest(os.path.join(out_dir, "build_manifest.jsonl"), cfg.as_dict())

    table = Table(box=box.ROUNDED, expand=True)
    table.add_column("Conversation", style="cyan")
    table.add_column("Sessions", justify="right")
    table.add_column("|M|", justify="right", style="green")
    table.add_column("|R|", justify="right", style="magenta")
    table.add_column("Pool", justify="right", style="yellow")
    table.add_column("Store file", style="dim")

    for conversation in conversations:
        with console.status(f"[bold green]Building {conversation.conversation_id}...", spinner="dots"):
            local = RunManifest(None)
            store = builder.build(conversation, local)
            manifest.absorb(local, conversation_id=conversation.conversation_id)
        path = os.path.join(out_dir, f"{conversation.conversation_id}.store.jsonl")
        save_store(store, path)
        table.add_row(conversation.conversation_id, str(len(conversation.sessions)), str(len(store.extracted)),
                      str(len(store.reasoned)), str(len(store.pool.clusters)), path)
    embedder.save()
    console.print(table)
    console.print(f"[bold green]✓[/] Manifest written to {manifest.path}")
    return EXIT_OK


def cmd_query(args, cfg: Config) -> int:
    console.print(create_header("Query"))
    retrieval = RetrievalConfig.from_config(cfg)
    store = load_store(args.store_file, retrieval.bm25_k1, retrieval.bm25_b)
    embedder = None
    if retrieval.mode == "dense":
        embedder = Embedder.from_config(cfg)
        if store.embedding_backend and store.embedding_backend != embedder.backend_id:
            raise ConfigError(f"Store was embedded with {store.embedding_backend}, "
                              f"but the configured backend is {embedder.backend_id}")
    gateway = None if args.dry_run else LLMGateway.from_config(cfg)
    engine = InferenceEngine(store, retrieval, embedder, gateway)
    result = engine.query(args.question, dataset_style=args.style, dry_run=args.dry_run)

    table = Table(title=f"Top candidates ({retrieval.mode})", box=box.ROUNDED)
    table.add_column("Fragment", style="cyan")
    table.add_column("Score", justify="right", style="yellow")
    table.add_column("Admitted", justify="center")
    admitted = set(result.context.included_fragment_ids)
    for fragment_id, score in result.candidates[:20]:
        table.add_row(fragment_id, f"{score:.4f}", "✓" if fragment_id in admitted else "")
    console.print(table)
    console.print(Panel(result.context.text or "[dim](empty)[/]",
                        title=f"Context: {result.context.token_count} / {result.context.token_budget} tokens",
                        border_style="green"))
    if args.dry_run:
        console.print("[italic grey]Dry run: answer generation skipped.[/]")
    else:
        console.print(Panel(result.answer or "", title="Answer", border_style="cyan"))
    if embedder is not None:
        embedder.save()
    return EXIT_OK


def cmd_eval(args, cfg: Config) -> int:
    console.print(create_header("Benchmark"))
    dataset = load_dataset(args.dataset, args.dataset_kind, cfg)
    out_dir = args.out_dir or cfg.get("runtime.output_dir", "reports")
    budgets = args.budget_sweep or [int(cfg.get("retrieval.token_budget", 2048))]
    ablations: List[Optional[str]] = list(args.ablate) if args.ablate else [None]

    gateway = LLMGateway.from_config(cfg)
    embedder = Embedder.from_config(cfg)
    reports = []
    for ablation in ablations:
        analyst = BenchmarkAnalyst(cfg, gateway, embedder, ablation)
        manifest = RunManifest(os.path.join(out_dir, f"{dataset.name}_{analyst.ablation}_manifest.jsonl"),
                               analyst.cfg.as_dict())
        with console.status(f"[bold green]Building memories ({analyst.ablation})...", spinner="dots"):
            stores = analyst.build_stores(dataset, manifest)
        for budget in budgets:
            with console.status(f"[bold green]Evaluating {analyst.ablation} @ {budget} tokens...", spinner="dots"):
                report = analyst.evaluate(dataset, stores, budget)
            paths = write_report(report, out_dir)
            reports.append(report)
            console.print(Panel(report.table().to_string(float_format=lambda v: f"{v:.3f}"),
                                title=report.cell_name, border_style="cyan"))
            console.print(f"  ✓ {paths['json']}")

    if args.charts:
        path = Visualizer(out_dir).generate_sweep_chart(dataset.name, reports)
        console.print(f"[italic grey]Chart saved to: {path}[/]")
    return EXIT_OK


def cmd_stats(args, cfg: Config) -> int:
    dataset = load_dataset(args.dataset, args.dataset_kind, cfg)
    counts = dataset.category_counts()
    table = Table(title=f"{dataset.name}: {os.path.basename(dataset.path)}", box=box.ROUNDED)
    table.add_column("Category", style="cyan")
    table.add_column("Questions", justify="right", style="yellow")
    total = sum(counts.values())
    for category, n in sorted(counts.items()):
        table.add_row(category, f"{n} ({100 * n / total:.1f}%)")
    table.add_row("[bold]total[/]", str(total))
    console.print(table)
    console.print(f"{len(dataset.conversations)} conversations")
    return EXIT_OK


COMMANDS = {"build": cmd_build, "query": cmd_query, "eval": cmd_eval, "stats": cmd_stats}


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = Config.load(args.config, overrides_from(args))
        setup_logging(cfg)
        validate_config(cfg)
        logger.info(f"Command {args.command} (config {cfg.digest()})")
        return COMMANDS[args.command](args, cfg)
    except MemweaveError as e:
        logger.error(f"{type(e).__name__}: {e}")
        console.print(f"[bold red]x {type(e).__name__}[/]: {e}")
        return e.exit_code
    except ValidationError as e:
        logger.error(f"Invalid data: {e}")
        console.print(f"[bold red]x Invalid data[/]: {e}")
        return EXIT_DATA
    except Exception as e:
        logger.exception("Unexpected failure")
        console.print(f"[bold red]x Internal error[/]: {e}")
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
