"""
Benchmark harness: per-conversation memory construction, per-question
retrieve -> assemble -> answer -> score, and reports grouped by unified
category.
"""
import json
import logging
import math
import os
from typing import Dict, List, Optional, Sequence

import pandas as pd
from joblib import Parallel, delayed
from pydantic import BaseModel, ConfigDict

from ..agent.builder import MemoryBuilder, resolve_n_jobs
from ..agent.engine import InferenceEngine, RetrievalConfig
from ..ai.embedding import Embedder
from ..ai.gateway import LLMGateway
from ..core.config_loader import Config
from ..core.store import MemoryStore, RunManifest
from ..core.types import QaItem
from .datasets import Dataset
from .judge import judge
from .metrics import bleu1, rouge1, rougeL

logger = logging.getLogger(__name__)

REPORT_SCHEMA_VERSION = "1"
CATEGORY_ORDER = ["single_hop", "multi_hop", "temporal_reasoning", "adversarial", "knowledge_update"]

# Ablation name -> config overrides
ABLATIONS: Dict[str, Dict[str, object]] = {
    "no-step2": {"consolidation.reasoning_enabled": False},
    "no-step1": {"extraction.skip_extraction": True},
    "no-categories": {"extraction.use_categories": False},
    "no-temporal": {"extraction.use_temporal_reasoning": False},
}

# Slots for metrics that need external models; reported as null until a scorer is plugged in
METRIC_PLUGINS: Dict[str, Optional[object]] = {"meteor": None, "bertscore": None}


class ItemRecord(BaseModel):
    model_config = ConfigDict(frozen=True)

    question_id: str
    conversation_id: str
    category: str
    question: str
    gold_answer: str
    prediction: str
    llm_judge: Optional[int]
    judge_failed: bool
    bleu1: float
    rouge1: float
    rougeL: float
    context_tokens: int
    abstained: bool


class EvalReport(BaseModel):
    model_config = ConfigDict(frozen=True)

    dataset: str
    ablation: str
    budget: int
    config_hash: str
    per_category: Dict[str, Dict[str, Optional[float]]]
    total: Dict[str, Optional[float]]
    adversarial_accuracy: Optional[float]
    judge_failures: int
    items: List[ItemRecord]

    @property
    def cell_name(self) -> str:
        return f"{self.dataset}_{self.ablation}_b{self.budget}"

    def summary(self) -> dict:
        return {
            "schema_version": REPORT_SCHEMA_VERSION,
            "dataset": self.dataset,
            "ablation": self.ablation,
            "budget": self.budget,
            "config_hash": self.config_hash,
            "per_category": self.per_category,
            "total": self.total,
            "adversarial_accuracy": self.adversarial_accuracy,
            "judge_failures": self.judge_failures,
            "metric_plugins": dict(METRIC_PLUGINS),
            "items": [r.model_dump() for r in self.items],
        }

    def table(self) -> pd.DataFrame:
        rows = {**self.per_category, "total": self.total}
        return pd.DataFrame.from_dict(rows, orient="index")[
            ["items", "llm_judge", "bleu1", "rouge1", "rougeL", "context_tokens", "judge_failures"]
        ]


def is_abstention(prediction: str, patterns: Sequence[str]) -> bool:
    text = prediction.lower()
    return any(p.lower() in text for p in patterns)


def safe_patterns(item: QaItem, patterns: Sequence[str]) -> List[str]:
    """Configured patterns plus the item's own abstention answer."""
    return [*patterns, item.abstention_answer] if item.abstention_answer else list(patterns)


def adversarial_accuracy(items: Sequence[QaItem], predictions: Sequence[str], patterns: Sequence[str]) -> float:
    """Share of adversarial predictions that safely abstain."""
    pairs = [(i, p) for i, p in zip(items, predictions) if i.category == "adversarial"]
    if not pairs:
        return 0.0
    return sum(is_abstention(p, safe_patterns(i, patterns)) for i, p in pairs) / len(pairs)


def _clean(value) -> Optional[float]:
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return None
    return float(value)


def _aggregate(df: pd.DataFrame) -> Dict[str, Optional[float]]:
    return {
        "items": float(len(df)),
        "llm_judge": _clean(df["llm_judge"].astype(float).mean()) if len(df) else None,
        "bleu1": _clean(df["bleu1"].mean()) if len(df) else None,
        "rouge1": _clean(df["rouge1"].mean()) if len(df) else None,
        "rougeL": _clean(df["rougeL"].mean()) if len(df) else None,
        "context_tokens": _clean(df["context_tokens"].mean()) if len(df) else None,
        "judge_failures": float(df["judge_failed"].sum()) if len(df) else 0.0,
    }


def build_report(
    dataset: str,
    ablation: str,
    budget: int,
    config_hash: str,
    records: List[ItemRecord],
    items: Sequence[QaItem],
    patterns: Sequence[str],
) -> EvalReport:
    """
    Per-category rows cover every item once; the total row excludes
    adversarial items, which are scored by abstention accuracy instead.
    """
    predictions = {r.question_id: r.prediction for r in records}
    scored = [i for i in items if i.question_id in predictions]
    has_adversarial = any(i.category == "adversarial" for i in scored)
    df = pd.DataFrame([r.model_dump() for r in records])
    if df.empty:
        df = pd.DataFrame(columns=list(ItemRecord.model_fields))
    per_category = {
        category: _aggregate(df[df["category"] == category])
        for category in CATEGORY_ORDER
        if (df["category"] == category).any()
    }
    return EvalReport(
        dataset=dataset,
        ablation=ablation,
        budget=budget,
        config_hash=config_hash,
        per_category=per_category,
        total=_aggregate(df[df["category"] != "adversarial"]),
        adversarial_accuracy=(
            adversarial_accuracy(scored, [predictions[i.question_id] for i in scored], patterns)
            if has_adversarial else None
        ),
        judge_failures=int(df["judge_failed"].sum()) if len(df) else 0,
        items=records,
    )


def write_report(report: EvalReport, output_dir: str) -> Dict[str, str]:
    os.makedirs(output_dir, exist_ok=True)
    json_path = os.path.join(output_dir, f"{report.cell_name}_report.json")
    text_path = os.path.join(output_dir, f"{report.cell_name}_report.txt")
    with open(json_path, "w", encoding="utf-8", newline="\n") as f:
        json.dump(report.summary(), f, indent=2, sort_keys=True, ensure_ascii=False)
        f.write("\n")
    header = f"{report.dataset} | ablation={report.ablation} | budget={report.budget}"
    adversarial = "n/a" if report.adversarial_accuracy is None else f"{report.adversarial_accuracy:.4f}"
    with open(text_path, "w", encoding="utf-8", newline="\n") as f:
        f.write(header + "\n\n")
        f.write(report.table().to_string(float_format=lambda v: f"{v:.4f}") + "\n\n")
        f.write(f"adversarial accuracy: {adversarial}\n")
        f.write(f"judge failures: {report.judge_failures}\n")
    logger.info(f"Report {report.cell_name} written to {json_path}")
    return {"json": json_path, "text": text_path}


class BenchmarkAnalyst:
    """
    Runs one dataset under one configuration. Stores depend only on the
    memory-construction settings, so a budget sweep reuses them.
    """

    def __init__(self, cfg: Config, gateway: LLMGateway, embedder: Embedder, ablation: Optional[str] = None):
        if ablation == "full":
            ablation = None
        if ablation is not None and ablation not in ABLATIONS:
            raise ValueError(f"Unknown ablation {ablation!r}; choose from {sorted(ABLATIONS)}")
        self.ablation = ablation or "full"
        self.cfg = cfg.with_overrides(ABLATIONS[ablation]) if ablation else cfg
        self.gateway = gateway
        self.embedder = embedder
        self.n_jobs = resolve_n_jobs(self.cfg.get("runtime.n_jobs", 0))

    def patterns_for(self, dataset: Dataset) -> List[str]:
        return list(self.cfg.get(f"evaluation.abstention_patterns.{dataset.answer_style}", []) or [])

    def build_stores(self, dataset: Dataset, manifest: Optional[RunManifest] = None) -> Dict[str, MemoryStore]:
        builder = MemoryBuilder.from_config(self.cfg, self.gateway, self.embedder)
        conversations = dataset.conversations

        def build_one(conversation):
            local = RunManifest(None)
            return builder.build(conversation, local), local

        built = Parallel(n_jobs=self.n_jobs, prefer="threads")(delayed(build_one)(c) for c in conversations)
        stores = {}
        for conversation, (store, local) in zip(conversations, built):
            stores[conversation.conversation_id] = store
            if manifest is not None:
                manifest.absorb(local, conversation_id=conversation.conversation_id)
        self.embedder.save()
        return stores

    def evaluate_item(self, item: QaItem, engine: InferenceEngine, style: str, patterns: Sequence[str]) -> ItemRecord:
        result = engine.query(item.question, dataset_style=style)
        prediction = result.answer or ""
        outcome = judge(item.question, item.gold_answer, prediction, self.gateway)
        return ItemRecord(
            question_id=item.question_id,
            conversation_id=item.conversation_id,
            category=item.category,
            question=item.question,
            gold_answer=item.gold_answer,
            prediction=prediction,
            llm_judge=outcome.score,
            judge_failed=outcome.failed,
            bleu1=bleu1(prediction, item.gold_answer),
            rouge1=rouge1(prediction, item.gold_answer).f1,
            rougeL=rougeL(prediction, item.gold_answer).f1,
            context_tokens=result.context.token_count,
            abstained=is_abstention(prediction, safe_patterns(item, patterns)),
        )

    def evaluate(self, dataset: Dataset, stores: Dict[str, MemoryStore], budget: int) -> EvalReport:
        retrieval = RetrievalConfig.from_config(self.cfg.with_overrides({"retrieval.token_budget": budget}))
        patterns = self.patterns_for(dataset)
        engines = {
            cid: InferenceEngine(store, retrieval, self.embedder, self.gateway) for cid, store in stores.items()
        }
        records = Parallel(n_jobs=self.n_jobs, prefer="threads")(
            delayed(self.evaluate_item)(item, engines[item.conversation_id], dataset.answer_style, patterns)
            for item in dataset.items
        )
        report = build_report(
            dataset.name, self.ablation, budget, self.cfg.digest(), list(records), dataset.items, patterns
        )
        logger.info(f"Evaluated {report.cell_name}: {len(records)} questions, "
                    f"judge mean {report.total.get('llm_judge')}, judge failures {report.judge_failures}")
        return report


def run_eval(
    dataset: Dataset,
    cfg: Config,
    gateway: LLMGateway,
    embedder: Embedder,
    ablation: Optional[str] = None,
    budget: Optional[int] = None,
    manifest: Optional[RunManifest] = None,
) -> EvalReport:
    analyst = BenchmarkAnalyst(cfg, gateway, embedder, ablation)
    stores = analyst.build_stores(dataset, manifest)
    return analyst.evaluate(dataset, stores, budget or int(analyst.cfg.get("retrieval.token_budget", 2048)))
