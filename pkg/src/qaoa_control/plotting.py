"""
Figures for sweep results, adiabatic scans and training curves
"""

import logging
from pathlib import Path
from typing import List, Optional, Union

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import pandas as pd  # noqa: E402
import seaborn as sns  # noqa: E402

logger = logging.getLogger(__name__)

ALGORITHM_LABELS = {
    "rl_qaoa": "RL-QAOA",
    "cd_qaoa": "CD-QAOA",
    "pg_qaoa": "PG-QAOA",
    "qaoa": "QAOA",
    "adiabatic": "adiabatic",
}

sns.set_theme(style="whitegrid")


def _labelled(frame: pd.DataFrame) -> pd.DataFrame:
    frame = frame.copy()
    frame["method"] = frame["algorithm"].map(ALGORITHM_LABELS).fillna(frame["algorithm"])
    return frame


def plot_sweep(results: pd.DataFrame, out_path: Union[str, Path]) -> Path:
    """
    E/E_GS versus noise strength, one panel per (noise kind, system size)

    Args:
        results: Rows of results.csv
        out_path: PNG destination

    Returns:
        Path of the written figure
    """
    frame = _labelled(results[results["status"] == "ok"])
    if frame.empty:
        raise ValueError("no completed sweep cells to plot")
    grid = sns.relplot(
        data=frame,
        x="noise_strength",
        y="best_clean_ratio",
        hue="method",
        col="n_sites",
        row="noise_kind",
        kind="line",
        marker="o",
        errorbar="sd",
        height=3.2,
        facet_kws={"sharey": False},
    )
    grid.set_axis_labels("noise strength", "E / E_GS")
    out_path = Path(out_path)
    grid.savefig(out_path, dpi=150)
    plt.close(grid.figure)
    logger.info(f"Wrote {out_path}")
    return out_path


def plot_adiabatic_scan(scan: pd.DataFrame, out_path: Union[str, Path]) -> Path:
    """Energy ratio versus protocol duration JT for each method."""
    frame = _labelled(scan)
    fig, ax = plt.subplots(figsize=(5, 3.5))
    sns.lineplot(data=frame, x="total_T", y="clean_ratio", hue="method", marker="o", ax=ax)
    ax.set_xscale("log")
    ax.set_xlabel("JT")
    ax.set_ylabel("E / E_GS")
    fig.tight_layout()
    out_path = Path(out_path)
    fig.savefig(out_path, dpi=150)
    plt.close(fig)
    logger.info(f"Wrote {out_path}")
    return out_path


def plot_training_curves(log: pd.DataFrame, out_path: Union[str, Path],
                         columns: Optional[List[str]] = None) -> Path:
    """Mean, max and history-best sampled energy ratio per iteration."""
    columns = columns or ["mean_clean_ratio", "max_clean_ratio", "best_clean_ratio"]
    long = log.melt(id_vars="iteration", value_vars=columns, var_name="curve", value_name="ratio")
    fig, ax = plt.subplots(figsize=(6, 3.5))
    sns.lineplot(data=long, x="iteration", y="ratio", hue="curve", ax=ax)
    greedy = log.dropna(subset=["greedy_clean_ratio"])
    if not greedy.empty:
        ax.plot(greedy["iteration"], greedy["greedy_clean_ratio"], "k.", label="greedy")
        ax.legend()
    ax.set_ylabel("E / E_GS")
    fig.tight_layout()
    out_path = Path(out_path)
    fig.savefig(out_path, dpi=150)
    plt.close(fig)
    logger.info(f"Wrote {out_path}")
    return out_path


def plot_directory(run_dir: Union[str, Path]) -> List[Path]:
    """Render every figure whose source file exists in a run directory."""
    from .experiments import RESULTS_FILE, SCAN_FILE
    from .ppo import LOG_FILE

    run_dir = Path(run_dir)
    written = []
    if (run_dir / RESULTS_FILE).exists():
        written.append(plot_sweep(pd.read_csv(run_dir / RESULTS_FILE), run_dir / "sweep.png"))
    if (run_dir / SCAN_FILE).exists():
        written.append(plot_adiabatic_scan(pd.read_csv(run_dir / SCAN_FILE), run_dir / "adiabatic_scan.png"))
    if (run_dir / LOG_FILE).exists():
        written.append(plot_training_curves(pd.read_csv(run_dir / LOG_FILE), run_dir / "training_curves.png"))
    if not written:
        logger.warning(f"Nothing to plot in {run_dir}")
    return written
