"""
Experiment orchestration: single runs, noise sweeps, adiabatic scans and
checkpoint evaluation. Every run writes into its own directory.
"""

import itertools
import json
import logging
import subprocess
import time
from concurrent.futures import ProcessPoolExecutor
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np
import pandas as pd

from . import __version__
from .baselines import PowellInnerEnvironment, cd_qaoa_train, pg_qaoa_train, qaoa_optimize
from .config import RUNTIME_CONFIG, Algorithm, EnvConfig, ExperimentConfig, NoiseKind
from .environment import QAOAEnvironment
from .exceptions import ConfigError
from .policy import load_checkpoint, restore_policy
from .ppo import TrainingResult, train
from .quantum import adiabatic_evolve, build_ising, energy_ratio, ground_state

logger = logging.getLogger(__name__)

SUMMARY_FILE = "summary.json"
RESULTS_FILE = "results.csv"
SCAN_FILE = "adiabatic_scan.csv"
CONFIG_FILE = "config.yml"

RESULT_COLUMNS = [
    "schema_version",
    "algorithm",
    "n_sites",
    "total_T",
    "noise_kind",
    "noise_strength",
    "seed",
    "best_clean_ratio",
    "status",
    "error",
]

SCAN_COLUMNS = ["schema_version", "algorithm", "n_sites", "total_T", "clean_ratio"]


def git_hash() -> str:
    try:
        out = subprocess.run(
            ["git", "rev-parse", "--short", "HEAD"], capture_output=True, text=True, timeout=5,
            cwd=Path(__file__).parent,
        )
        return out.stdout.strip() or "unknown"
    except Exception:
        return "unknown"


def adiabatic_ratio(env_cfg: EnvConfig, dt: float) -> float:
    _, _, H = build_ising(env_cfg.ising)
    e_gs, _ = ground_state(H)
    state = adiabatic_evolve(env_cfg.ising, env_cfg.total_T, dt)
    return float(energy_ratio(state, H, e_gs))


def _write_summary(output_dir: Path, summary: Dict[str, Any]) -> None:
    (output_dir / SUMMARY_FILE).write_text(json.dumps(summary, indent=2, default=str))


def run_algorithm(config: ExperimentConfig) -> Dict[str, Any]:
    """
    Run the configured algorithm once and write its artifacts

    Writes config.yml, summary.json and, for the learning algorithms,
    train_log.csv, train_timing.csv and checkpoints.

    Args:
        config: Validated experiment configuration

    Returns:
        The summary dictionary written to summary.json
    """
    output_dir = Path(config.output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    (output_dir / CONFIG_FILE).write_text(config.to_yaml())
    env_cfg = config.env
    start = time.perf_counter()
    logger.info(f"Running {config.algorithm.value} (seed {config.seed}) into {output_dir}")

    result: Optional[TrainingResult] = None
    extra: Dict[str, Any] = {}
    if config.algorithm == Algorithm.RL_QAOA:
        result = train(env_cfg, config.ppo, config.seed, output_dir, config.workers)
    elif config.algorithm == Algorithm.PG_QAOA:
        hp = config.baselines.pg_qaoa
        result = pg_qaoa_train(env_cfg, hp.continuous_family, hp, config.seed, output_dir, config.workers)
    elif config.algorithm == Algorithm.CD_QAOA:
        result = cd_qaoa_train(env_cfg, config.baselines.cd_qaoa, config.seed, config.baselines,
                               output_dir, config.workers)
    elif config.algorithm == Algorithm.QAOA:
        qaoa = qaoa_optimize(env_cfg, env_cfg.q // 2, config.baselines.qaoa_restarts, config.seed,
                             config.baselines.powell, config.workers)
        best_ratio, best_protocol = qaoa.clean_ratio, qaoa.protocol
        extra["restarts"] = [
            {"sequence": list(s.sequence), "clean_ratio": s.reward.clean_energy_ratio,
             "objective": s.objective, "nfev": s.nfev}
            for s in qaoa.solutions
        ]
    else:
        best_ratio = adiabatic_ratio(env_cfg, config.sweep.adiabatic_dt)
        best_protocol = []

    if result is not None:
        best_ratio = result.best_greedy.clean_energy_ratio if result.best_greedy else float("nan")
        best_protocol = result.best_protocol
        extra["best_sample_ratio"] = result.best_sample_ratio
        extra["iterations"] = result.iterations

    summary = {
        "schema_version": RUNTIME_CONFIG["schema_version"],
        "algorithm": config.algorithm.value,
        "seed": config.seed,
        "n_sites": env_cfg.ising.n_sites,
        "total_T": env_cfg.total_T,
        "noise_kind": env_cfg.noise.kind.value,
        "noise_strength": env_cfg.noise.strength,
        "best_clean_ratio": float(best_ratio),
        "best_protocol": [[label, float(d)] for label, d in best_protocol],
        "wall_time": time.perf_counter() - start,
        "finished_at": datetime.now().isoformat(),
        "git_hash": git_hash(),
        "version": __version__,
        "config": config.model_dump(mode="json"),
        **extra,
    }
    _write_summary(output_dir, summary)
    logger.info(f"{config.algorithm.value}: best clean ratio {best_ratio:.6f}")
    return summary


# Sweeps

def sweep_cells(config: ExperimentConfig) -> List[Tuple[str, ExperimentConfig]]:
    """
    Cross product of sweep axes, algorithms and seeds

    The none and quantum noise kinds carry no strength, so they contribute a
    single cell (strength 0) instead of one per strength.
    """
    sweep = config.sweep
    noise_axis: List[Tuple[NoiseKind, float]] = []
    for kind in sweep.noise_kinds:
        strengths = [0.0] if kind in (NoiseKind.NONE, NoiseKind.QUANTUM) else list(sweep.strengths)
        noise_axis.extend((kind, s) for s in strengths)
    cells = []
    for algorithm, n_sites, total_T, (kind, strength), seed in itertools.product(
        sweep.algorithms, sweep.n_sites, sweep.total_T, noise_axis, sweep.seeds
    ):
        name = f"{algorithm.value}_N{n_sites}_T{total_T:g}_{kind.value}_{strength:g}_s{seed}"
        cell_dir = Path(config.output_dir) / "cells" / name
        cell = config.with_updates(**{
            "algorithm": algorithm.value,
            "seed": seed,
            "workers": 1,
            "output_dir": str(cell_dir),
            "env.ising.n_sites": n_sites,
            "env.total_T": total_T,
            "env.noise.kind": kind.value,
            "env.noise.strength": strength,
        })
        cells.append((name, cell))
    return cells


def _run_cell(config_yaml: str) -> Dict[str, Any]:
    from .logging_utils import configure_logging

    configure_logging()
    config = ExperimentConfig.from_yaml(config_yaml)
    try:
        run_algorithm(config)
        return {"success": True, "error": ""}
    except Exception as e:
        logger.error(f"Error running sweep cell {config.output_dir}: {e}")
        return {"success": False, "error": str(e)}


def _cell_row(cell: ExperimentConfig, status: str, error: str = "", ratio: float = np.nan) -> Dict[str, Any]:
    return {
        "schema_version": RUNTIME_CONFIG["schema_version"],
        "algorithm": cell.algorithm.value,
        "n_sites": cell.env.ising.n_sites,
        "total_T": cell.env.total_T,
        "noise_kind": cell.env.noise.kind.value,
        "noise_strength": cell.env.noise.strength,
        "seed": cell.seed,
        "best_clean_ratio": ratio,
        "status": status,
        "error": error,
    }


def run_sweep(config: ExperimentConfig, workers: Optional[int] = None) -> pd.DataFrame:
    """
    Run every sweep cell not yet completed and rebuild results.csv

    A cell is complete when its summary.json exists; failures are recorded
    as status rows and the sweep continues.

    Args:
        config: Base configuration with the sweep axes
        workers: Process count (defaults to config.workers)

    Returns:
        One row per cell, in cell order
    """
    output_dir = Path(config.output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    cells = sweep_cells(config)
    if not cells:
        raise ConfigError("sweep axes produce no cells", key="sweep")
    pending = [(name, cell) for name, cell in cells if not (Path(cell.output_dir) / SUMMARY_FILE).exists()]
    logger.info(f"Sweep: {len(cells)} cells, {len(cells) - len(pending)} already complete")

    workers = workers or config.workers
    outcomes: Dict[str, Dict[str, Any]] = {}
    if workers > 1 and len(pending) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = {name: pool.submit(_run_cell, cell.to_yaml()) for name, cell in pending}
            for name, future in futures.items():
                try:
                    outcomes[name] = future.result()
                except Exception as e:
                    logger.error(f"Error collecting sweep cell {name}: {e}")
                    outcomes[name] = {"success": False, "error": str(e)}
    else:
        for name, cell in pending:
            outcomes[name] = _run_cell(cell.to_yaml())

    rows = []
    for name, cell in cells:
        summary_path = Path(cell.output_dir) / SUMMARY_FILE
        if summary_path.exists():
            summary = json.loads(summary_path.read_text())
            rows.append(_cell_row(cell, "ok", ratio=summary["best_clean_ratio"]))
        else:
            rows.append(_cell_row(cell, "failed", outcomes.get(name, {}).get("error", "missing summary")))
    results = pd.DataFrame(rows, columns=RESULT_COLUMNS)
    results.to_csv(output_dir / RESULTS_FILE, index=False)
    failed = int((results["status"] != "ok").sum())
    if failed:
        logger.warning(f"Sweep finished with {failed} failed cells")
    return results


def run_adiabatic_scan(config: ExperimentConfig) -> pd.DataFrame:
    """
    Energy ratio versus protocol duration for the adiabatic, QAOA and CD-QAOA curves

    Returns:
        Rows (algorithm, N, T, clean ratio), three per duration
    """
    output_dir = Path(config.output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for total_T in config.sweep.adiabatic_T:
        env_cfg = config.env.model_copy(update={"total_T": float(total_T)})
        ratios = {
            "adiabatic": adiabatic_ratio(env_cfg, config.sweep.adiabatic_dt),
            "qaoa": qaoa_optimize(env_cfg, env_cfg.q // 2, config.baselines.qaoa_restarts, config.seed,
                                  config.baselines.powell, config.workers).clean_ratio,
        }
        cd = cd_qaoa_train(env_cfg, config.baselines.cd_qaoa, config.seed, config.baselines,
                           output_dir / f"cd_qaoa_T{total_T:g}", config.workers)
        ratios["cd_qaoa"] = cd.best_greedy.clean_energy_ratio
        for algorithm, ratio in ratios.items():
            rows.append({
                "schema_version": RUNTIME_CONFIG["schema_version"],
                "algorithm": algorithm,
                "n_sites": env_cfg.ising.n_sites,
                "total_T": float(total_T),
                "clean_ratio": float(ratio),
            })
        logger.info(f"Adiabatic scan T={total_T:g}: " + ", ".join(f"{k}={v:.4f}" for k, v in ratios.items()))
    scan = pd.DataFrame(rows, columns=SCAN_COLUMNS)
    scan.to_csv(output_dir / SCAN_FILE, index=False)
    return scan


def evaluate_checkpoint(path: Union[str, Path], config: Optional[ExperimentConfig] = None) -> Dict[str, Any]:
    """
    Greedy, noise-free metrics of a saved policy

    Args:
        path: Checkpoint written during training
        config: Supplies the inner Powell settings for discrete-only policies

    Returns:
        Clean ratio, energy variance and the greedy protocol
    """
    config = config or ExperimentConfig()
    payload = load_checkpoint(path)
    policy = restore_policy(payload)
    extra = payload.get("extra", {})
    env_cfg = EnvConfig.model_validate(extra["env"]) if extra.get("env") else config.env
    if policy.continuous:
        env = QAOAEnvironment(env_cfg)
    else:
        env = PowellInnerEnvironment(env_cfg, config.baselines.inner_powell, config.baselines.inner_restarts,
                                     extra.get("seed", config.seed))
    reward = env.evaluate_greedy(policy)
    return {
        "checkpoint": str(path),
        "algorithm": extra.get("algorithm"),
        "iteration": extra.get("iteration"),
        "clean_energy_ratio": reward.clean_energy_ratio,
        "clean_return": reward.clean_return,
        "energy_variance": reward.energy_variance,
        "protocol": [[label, float(d)] for label, d in env.describe(policy)],
    }
