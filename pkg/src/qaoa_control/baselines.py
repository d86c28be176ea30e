"""
Baseline algorithms and brute-force oracles

- QAOA: alternating H1/H2 sequence, durations by Powell with random restarts
- PG-QAOA: per-step independent duration distributions on the fixed
  alternating sequence, trained with the shared PPO loop
- CD-QAOA: discrete-only autoregressive policy over generator sequences,
  durations of every sampled sequence solved by Powell
"""

import itertools
import logging
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import torch
import torch.nn as nn

from .config import (
    BaselineSettings,
    ContinuousFamily,
    EnvConfig,
    NoiseKind,
    NUMERICS_CONFIG,
    PowellConfig,
    PPOHyperparams,
)
from .environment import QAOAEnvironment, Reward
from .exceptions import DomainError, OptimizationBudgetError, ProtocolError
from .policy import DTYPE, HybridPolicy, init_params, positive_head
from .powell import powell_minimize
from .ppo import PPOTrainer, TrainingResult
from .quantum import Protocol, energy_ratio
from .seeding import derive_rng

logger = logging.getLogger(__name__)

GRID_BUDGET = 10 ** 7


@dataclass
class DurationSolution:
    """Best durations found for a fixed generator sequence."""

    sequence: Tuple[int, ...]
    raw: np.ndarray
    protocol: Protocol
    objective: float
    reward: Reward
    nfev: int = 0


@dataclass
class QAOAResult:
    algorithm: str
    clean_ratio: float
    protocol: List[Tuple[str, float]]
    p_depth: int
    solutions: List[DurationSolution] = field(default_factory=list, repr=False)


def alternating_sequence(q: int, first: int = 0) -> Tuple[int, ...]:
    return tuple((first + j) % 2 for j in range(q))


def check_sequence(sequence: Sequence[int], n_actions: int) -> Tuple[int, ...]:
    sequence = tuple(int(i) for i in sequence)
    if any(not 0 <= i < n_actions for i in sequence):
        raise ProtocolError(f"sequence {sequence} has indices outside [0, {n_actions})")
    if any(a == b for a, b in zip(sequence, sequence[1:])):
        raise ProtocolError(f"sequence {sequence} repeats a generator on consecutive steps")
    return sequence


def solve_durations(env: QAOAEnvironment, sequence: Sequence[int], cfg: PowellConfig,
                    noise_rng: Optional[np.random.Generator], starts: Sequence[np.ndarray]) -> DurationSolution:
    """
    Powell over raw durations in [0, 1]^q for a fixed sequence

    The objective normalizes the raw vector to sum T and returns the (noisy,
    per the environment) energy density. Under reward noise every objective
    call draws fresh noise.

    Args:
        env: Environment providing generators, noise model and T
        sequence: Generator indices, no consecutive repeats
        cfg: Powell tolerances and budget
        noise_rng: Noise stream (unused when the noise kind is none)
        starts: Initial raw vectors, one Powell run each

    Returns:
        Best solution by the optimized objective, with clean metrics
    """
    sequence = check_sequence(sequence, env.n_actions)
    floor = NUMERICS_CONFIG["unit_clamp"]

    def objective(raw: np.ndarray) -> float:
        protocol = env.protocol_from_actions(sequence, np.maximum(raw, floor))
        return -env.evaluate_protocol(protocol, noise_rng).noisy_return

    best = None
    nfev = 0
    for x0 in starts:
        result = powell_minimize(objective, x0, cfg)
        nfev += result.nfev
        if best is None or result.fun < best.fun:
            best = result
    raw = np.maximum(best.x, floor)
    protocol = env.protocol_from_actions(sequence, raw)
    reward = env.evaluate_protocol(protocol, noise_rng)
    return DurationSolution(sequence, raw, protocol, best.fun, reward, nfev)


def _random_starts(rng: np.random.Generator, count: int, dim: int) -> List[np.ndarray]:
    """First start is the uniform protocol, the rest are uniform random in the box."""
    starts = [np.full(dim, 0.5)]
    starts.extend(rng.uniform(0.0, 1.0, size=dim) for _ in range(count - 1))
    return starts


def qaoa_optimize(cfg: EnvConfig, p_depth: int, restarts: int, seed: int,
                  powell: Optional[PowellConfig] = None, workers: int = 1) -> QAOAResult:
    """
    Plain QAOA: both alternation orders, Powell from several starts each

    Args:
        cfg: Physical setup; the action set is replaced by (H1, H2) and q by 2p
        p_depth: Number of (H1, H2) pairs p
        restarts: Powell starts per order
        seed: Experiment seed
        powell: Solver configuration
        workers: Threads used across the independent Powell runs

    Returns:
        QAOAResult for the restart with the lowest optimized objective
    """
    powell = powell or PowellConfig()
    if p_depth < 0:
        raise DomainError(f"p_depth must be nonnegative, got {p_depth}")
    if p_depth == 0:
        env = QAOAEnvironment(cfg.model_copy(update={"action_set": ("H1", "H2"), "q": 1}))
        ratio = energy_ratio(env.initial_state, env.H, env.e_gs)
        return QAOAResult("qaoa", float(ratio), [], 0)

    env = QAOAEnvironment(cfg.model_copy(update={"action_set": ("H1", "H2"), "q": 2 * p_depth}))
    jobs = [(order, r) for order in (0, 1) for r in range(restarts)]

    def run(job: Tuple[int, int]) -> DurationSolution:
        order, r = job
        start_rng = derive_rng(seed, "restarts", order, r)
        start = [np.full(env.q, 0.5)] if r == 0 else [start_rng.uniform(0.0, 1.0, size=env.q)]
        return solve_durations(env, alternating_sequence(env.q, order), powell,
                               derive_rng(seed, "noise", order, r), start)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            solutions = list(pool.map(run, jobs))
    else:
        solutions = [run(job) for job in jobs]
    # select on the optimized (possibly noisy) objective only
    best = min(solutions, key=lambda s: s.objective)
    logger.info(f"QAOA p={p_depth}: best clean ratio {best.reward.clean_energy_ratio:.6f}")
    return QAOAResult(
        algorithm="qaoa",
        clean_ratio=best.reward.clean_energy_ratio,
        protocol=best.protocol.describe(env.generators),
        p_depth=p_depth,
        solutions=solutions,
    )


# PG-QAOA

class PGQAOAPolicy(HybridPolicy):
    """
    Independent per-step duration distributions on a fixed generator sequence

    Holds 2q parameters. For the Sigmoid-Gaussian family kappa is free and xi
    is stored as log xi; for the Beta family both are stored in log space.
    The discrete part is deterministic, so its log-probability is 0.
    """

    kind = "pg_qaoa"

    def __init__(self, n_actions: int, q: int, family: ContinuousFamily, sequence: Sequence[int]):
        super().__init__(n_actions, q, family, continuous=True)
        self.sequence = check_sequence(sequence, n_actions)
        if len(self.sequence) != q:
            raise ProtocolError(f"sequence of length {len(self.sequence)} for a depth-{q} policy")
        self.kappa_param = nn.Parameter(torch.zeros(q, dtype=DTYPE))
        self.xi_param = nn.Parameter(torch.zeros(q, dtype=DTYPE))
        z_p = torch.full((q, n_actions), float("-inf"), dtype=DTYPE)
        z_p[torch.arange(q), torch.as_tensor(self.sequence)] = 0.0
        self.register_buffer("fixed_log_probs", z_p)

    def heads(self, x: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        shape = (x.shape[0], self.q, self.n_actions)
        if self.family == ContinuousFamily.BETA:
            kappa = positive_head(self.kappa_param)
        else:
            kappa = self.kappa_param
        xi = positive_head(self.xi_param)
        return (
            self.fixed_log_probs.expand(shape),
            kappa[None, :, None].expand(shape),
            xi[None, :, None].expand(shape),
        )

    def dims(self) -> Dict:
        return {**super().dims(), "sequence": list(self.sequence)}


def pg_qaoa_train(cfg: EnvConfig, family: ContinuousFamily, hp: PPOHyperparams, seed: int,
                  output_dir: Optional[Union[str, Path]] = None, workers: int = 1) -> TrainingResult:
    """
    PG-QAOA on the alternating (H1, H2) sequence of length q

    The shared PPO loop runs unchanged: the frozen discrete part has ratio 1,
    so only the duration distributions learn.
    """
    env = QAOAEnvironment(cfg.model_copy(update={"action_set": ("H1", "H2")}))
    policy = PGQAOAPolicy(env.n_actions, env.q, family, alternating_sequence(env.q))
    return PPOTrainer(env, policy, hp, seed, output_dir=output_dir, workers=workers,
                      algorithm="pg_qaoa").train()


# CD-QAOA

class PowellInnerEnvironment(QAOAEnvironment):
    """
    Environment for discrete-only policies: durations come from Powell

    Noise-free inner solves depend only on the sequence and are memoized.

    Args:
        cfg: Physical setup
        powell: Inner solver configuration
        restarts: Powell starts per sequence
        seed: Experiment seed (evaluation and restart streams derive from it)
    """

    def __init__(self, cfg: EnvConfig, powell: PowellConfig, restarts: int = 1, seed: int = 0):
        super().__init__(cfg)
        self.powell = powell
        self.restarts = restarts
        self.seed = seed
        self._cache: Dict[Tuple[int, ...], DurationSolution] = {}
        self._lock = threading.Lock()
        self.solves = 0

    def solve(self, sequence: Sequence[int], noise_rng: Optional[np.random.Generator]) -> DurationSolution:
        sequence = tuple(int(i) for i in sequence)
        memoize = self.noise.kind == NoiseKind.NONE
        if memoize:
            with self._lock:
                if sequence in self._cache:
                    return self._cache[sequence]
        start_rng = derive_rng(self.seed, "restarts", *sequence)
        solution = solve_durations(self, sequence, self.powell, noise_rng,
                                   _random_starts(start_rng, self.restarts, len(sequence)))
        with self._lock:
            self.solves += 1
            if memoize:
                self._cache[sequence] = solution
        return solution

    def rollout(self, trajectory, rng: Optional[np.random.Generator]) -> Reward:
        sequence = [a.discrete for a in trajectory.actions]
        if len(sequence) != self.q:
            raise ProtocolError(f"trajectory has {len(sequence)} steps, environment expects {self.q}")
        return self.solve(sequence, rng).reward

    def greedy_solution(self, policy: HybridPolicy) -> DurationSolution:
        sequence = [a.discrete for a in policy.greedy_actions()]
        return self.solve(sequence, derive_rng(self.seed, "evaluation", *sequence))

    def evaluate_greedy(self, policy: HybridPolicy) -> Reward:
        """Greedy sequence, durations solved under the configured noise, clean metrics reported."""
        reward = self.greedy_solution(policy).reward
        return Reward(reward.clean_return, reward.clean_return, reward.clean_energy_ratio, reward.energy_variance)

    def describe(self, policy: HybridPolicy) -> List[Tuple[str, float]]:
        return self.greedy_solution(policy).protocol.describe(self.generators)


def cd_qaoa_train(cfg: EnvConfig, hp: PPOHyperparams, seed: int, baselines: Optional[BaselineSettings] = None,
                  output_dir: Optional[Union[str, Path]] = None, workers: int = 1) -> TrainingResult:
    """
    CD-QAOA: PPO over generator sequences, Powell durations per sampled sequence

    Args:
        cfg: Physical setup and action set
        hp: PPO hyperparameters of the discrete policy
        seed: Experiment seed
        baselines: Inner Powell configuration and restart count
        output_dir: Log and checkpoint directory
        workers: Threads for the per-sequence inner solves

    Returns:
        TrainingResult whose best_protocol is the best (sequence, durations)
    """
    baselines = baselines or BaselineSettings()
    env = PowellInnerEnvironment(cfg, baselines.inner_powell, baselines.inner_restarts, seed)
    policy = init_params(
        {
            "n_actions": env.n_actions,
            "q": env.q,
            "hidden_units": hp.hidden_units,
            "family": hp.continuous_family,
            "continuous": False,
        },
        seed,
    )
    result = PPOTrainer(env, policy, hp, seed, output_dir=output_dir, workers=workers,
                        algorithm="cd_qaoa").train()
    logger.info(f"CD-QAOA ran {env.solves} inner Powell solves")
    return result


# Oracles

def enumerate_sequences(n_actions: int, q: int) -> List[Tuple[int, ...]]:
    """All length-q sequences without consecutive repeats, in lexicographic order."""
    return [
        seq for seq in itertools.product(range(n_actions), repeat=q)
        if all(a != b for a, b in zip(seq, seq[1:]))
    ]


def exhaustive_sequence_search(env: QAOAEnvironment, powell: PowellConfig, restarts: int = 1,
                               seed: int = 0) -> DurationSolution:
    """Best noise-free sequence over every valid sequence, durations by Powell."""
    best = None
    for sequence in enumerate_sequences(env.n_actions, env.q):
        starts = _random_starts(derive_rng(seed, "restarts", *sequence), restarts, env.q)
        solution = solve_durations(env, sequence, powell, None, starts)
        if best is None or solution.reward.clean_energy_ratio > best.reward.clean_energy_ratio:
            best = solution
    return best


def is_nested_grid_size(grid_points: int) -> bool:
    if grid_points == 1:
        return True
    cells = grid_points - 1
    return cells >= 2 and cells & (cells - 1) == 0


def grid_oracle(env: QAOAEnvironment, sequence: Sequence[int], grid_points: int) -> Tuple[float, np.ndarray]:
    """
    Brute-force best clean ratio over a grid of raw durations

    Raw values are linspace(0, 1, grid_points) (floored at 1e-6) in every
    coordinate. grid_points must be 1 or 2^k + 1 with k >= 1 so that grids are
    nested: a finer grid contains every point of a coarser one. grid_points = 1
    evaluates the uniform protocol (raw 0.5) only.

    Returns:
        (best clean energy ratio, its normalized durations)
    """
    sequence = check_sequence(sequence, env.n_actions)
    q = len(sequence)
    if not is_nested_grid_size(grid_points):
        raise DomainError(f"grid_points must be 1 or 2^k + 1 with k >= 1, got {grid_points}")
    if grid_points ** q > GRID_BUDGET:
        raise OptimizationBudgetError(f"{grid_points}^{q} grid evaluations exceed the budget {GRID_BUDGET}")
    axis = np.array([0.5]) if grid_points == 1 else np.maximum(np.linspace(0.0, 1.0, grid_points), 1e-6)
    best_ratio = -np.inf
    best_durations = None
    for raw in itertools.product(axis, repeat=q):
        protocol = env.protocol_from_actions(sequence, raw)
        ratio = env.evaluate_protocol(protocol, noisy=False).clean_energy_ratio
        if ratio > best_ratio:
            best_ratio = ratio
            best_durations = protocol.durations
    return float(best_ratio), best_durations
