import logging
import os
from typing import List

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import pandas as pd
import seaborn as sns

from .analyst import EvalReport

logger = logging.getLogger(__name__)


class Visualizer:
    def __init__(self, output_dir: str):
        self.output_dir = output_dir
        os.makedirs(output_dir, exist_ok=True)
        # Set academic style
        sns.set_theme(style="whitegrid", context="paper")

    @staticmethod
    def sweep_frame(reports: List[EvalReport]) -> pd.DataFrame:
        rows = []
        for report in reports:
            for category, stats in {**report.per_category, "total": report.total}.items():
                rows.append({
                    "cell": f"{report.ablation} / {report.budget}",
                    "category": category,
                    "llm_judge": stats.get("llm_judge"),
                })
        return pd.DataFrame(rows)

    def generate_sweep_chart(self, name: str, reports: List[EvalReport]) -> str:
        """
        One bar group per category, one bar per (ablation, budget) cell.
        """
        df = self.sweep_frame(reports).dropna(subset=["llm_judge"])
        fig, ax = plt.subplots(figsize=(10, 5))
        if not df.empty:
            sns.barplot(data=df, x="category", y="llm_judge", hue="cell", ax=ax)
        ax.set_title(f"{name}: LLM-judge score by category", loc="left", fontsize=12, fontweight="bold")
        ax.set_ylabel("LLM-judge (0-100)")
        ax.set_xlabel("")
        ax.set_ylim(0, 100)
        plt.tight_layout()
        save_path = os.path.join(self.output_dir, f"{name}_sweep_chart.png")
        plt.savefig(save_path, dpi=150)
        plt.close(fig)
        logger.info(f"Saved sweep chart to {save_path}")
        return save_path
