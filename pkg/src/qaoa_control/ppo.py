"""
Hybrid proximal policy optimization

Two clipped surrogate terms, one per action type, share a single trajectory
advantage A = R' - b, where R' is the (noisy) return plus the sampled
continuous entropy bonus and b an exponential moving average of past R'.
The discrete entropy enters the objective exactly.
"""

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np
import pandas as pd
import torch

from .config import NUMERICS_CONFIG, RUNTIME_CONFIG, EnvConfig, PPOHyperparams
from .environment import Environment, QAOAEnvironment, Reward, RolloutBatch
from .exceptions import DomainError, TrainingDivergedError
from .policy import (
    HybridPolicy,
    Trajectories,
    adam_step,
    init_params,
    make_optimizer,
    save_checkpoint,
)
from .seeding import derive_rng

logger = logging.getLogger(__name__)

LOG_COLUMNS = [
    "schema_version",
    "algorithm",
    "iteration",
    "lr",
    "temp",
    "mean_clean_ratio",
    "max_clean_ratio",
    "best_clean_ratio",
    "mean_noisy_return",
    "discrete_entropy",
    "kl_discrete",
    "kl_continuous",
    "kl_exceeded",
    "baseline",
    "greedy_clean_ratio",
    "greedy_energy_variance",
]

TIMING_COLUMNS = ["iteration", "wall_time_s"]

LOG_FILE = "train_log.csv"
TIMING_FILE = "train_timing.csv"
BEST_CHECKPOINT = "checkpoint_best.pt"
LATEST_CHECKPOINT = "checkpoint_latest.pt"


@dataclass
class BaselineEMA:
    """R_hat <- m R_hat + (1 - m) mean(R), starting from 0."""

    m: float
    value: float = 0.0

    def update(self, returns: np.ndarray) -> float:
        previous = self.value
        self.value = self.m * self.value + (1.0 - self.m) * float(np.mean(returns))
        return previous


def compute_advantages(returns: np.ndarray, baseline: BaselineEMA) -> np.ndarray:
    """A_k = R_k - R_hat with the pre-update baseline; the baseline is then updated."""
    returns = np.asarray(returns, dtype=float)
    previous = baseline.update(returns)
    return returns - previous


def importance_ratio(log_prob_new: torch.Tensor, log_prob_old: torch.Tensor) -> torch.Tensor:
    bound = NUMERICS_CONFIG["log_ratio_clamp"]
    return torch.exp(torch.clamp(log_prob_new - log_prob_old, -bound, bound))


def clipped_term(ratio: Union[torch.Tensor, float], advantage: Union[torch.Tensor, float],
                 eps: float) -> torch.Tensor:
    """min(rho A, clip(rho, 1 - eps, 1 + eps) A)."""
    ratio = torch.as_tensor(ratio, dtype=torch.float64)
    advantage = torch.as_tensor(advantage, dtype=torch.float64)
    return torch.minimum(ratio * advantage, torch.clamp(ratio, 1.0 - eps, 1.0 + eps) * advantage)


def schedules(iteration: int, hp: PPOHyperparams) -> Tuple[float, float]:
    """Staircase learning-rate decay and smooth entropy-temperature decay."""
    if iteration < 0:
        raise DomainError(f"iteration must be nonnegative, got {iteration}")
    lr = hp.learning_rate * hp.lr_decay_rate ** (iteration // hp.lr_decay_steps)
    temp = hp.entropy_temp * hp.temp_decay_rate ** (iteration / hp.temp_decay_steps)
    return lr, temp


@dataclass
class TrajectoryBatch:
    """Everything one PPO iteration needs, frozen under theta_old."""

    trajectories: Trajectories
    returns: np.ndarray
    noisy_returns: np.ndarray
    clean_ratios: np.ndarray
    entropy_bonus: np.ndarray
    advantages: np.ndarray
    log_prob_discrete_old: torch.Tensor
    log_prob_continuous_old: torch.Tensor

    def __len__(self) -> int:
        return len(self.trajectories)


def build_batch(policy: HybridPolicy, trajectories: Trajectories, rollout: RolloutBatch,
                baseline: BaselineEMA, temp: float) -> TrajectoryBatch:
    """
    Assemble returns, entropy bonus and advantages for a sampled batch

    Args:
        policy: Policy in its theta_old state
        trajectories: Sampled batch
        rollout: Environment rewards for the batch
        baseline: EMA baseline, updated in place
        temp: Entropy temperature of this iteration

    Returns:
        TrajectoryBatch with theta_old log-probabilities
    """
    if len(rollout.noisy_returns) != len(trajectories):
        raise DomainError("rollout and trajectory batch sizes differ")
    if policy.continuous:
        bonus = temp * (-trajectories.log_prob_continuous)
    else:
        bonus = np.zeros(len(trajectories))
    returns = rollout.noisy_returns + bonus
    advantages = compute_advantages(returns, baseline)
    with torch.no_grad():
        log_prob_d, log_prob_c = policy.log_prob(trajectories)
    return TrajectoryBatch(
        trajectories=trajectories,
        returns=returns,
        noisy_returns=rollout.noisy_returns,
        clean_ratios=rollout.clean_ratios,
        entropy_bonus=bonus,
        advantages=advantages,
        log_prob_discrete_old=log_prob_d.detach(),
        log_prob_continuous_old=log_prob_c.detach(),
    )


@dataclass
class ObjectiveTerms:
    objective: torch.Tensor
    surrogate_discrete: torch.Tensor
    surrogate_continuous: torch.Tensor
    entropy_discrete: torch.Tensor
    ratio_discrete: torch.Tensor
    ratio_continuous: torch.Tensor


def hybrid_objective(batch: TrajectoryBatch, policy: HybridPolicy, hp: PPOHyperparams,
                     temp: float) -> ObjectiveTerms:
    """
    J = mean_k [G^d_k + G^c_k] + temp * mean_k S^d_k

    Args:
        batch: Batch sampled under theta_old
        policy: Current policy theta
        hp: Clip ranges eps_discrete, eps_continuous
        temp: Entropy temperature

    Returns:
        ObjectiveTerms holding the differentiable objective and its parts
    """
    log_prob_d, log_prob_c = policy.log_prob(batch.trajectories)
    if log_prob_d.shape != batch.log_prob_discrete_old.shape:
        raise DomainError("batch was not generated for this policy")
    advantages = torch.as_tensor(batch.advantages, dtype=torch.float64)
    ratio_d = importance_ratio(log_prob_d, batch.log_prob_discrete_old)
    ratio_c = importance_ratio(log_prob_c, batch.log_prob_continuous_old)
    surrogate_d = clipped_term(ratio_d, advantages, hp.eps_discrete).mean()
    surrogate_c = clipped_term(ratio_c, advantages, hp.eps_continuous).mean()
    entropy_d = policy.discrete_entropy(batch.trajectories).mean()
    objective = surrogate_d + surrogate_c + temp * entropy_d
    return ObjectiveTerms(objective, surrogate_d, surrogate_c, entropy_d, ratio_d, ratio_c)


def objective_gradients(terms: ObjectiveTerms, policy: HybridPolicy) -> Dict[str, torch.Tensor]:
    named = [(n, p) for n, p in policy.named_parameters() if p.requires_grad]
    grads = torch.autograd.grad(terms.objective, [p for _, p in named], allow_unused=True)
    return {n: (g if g is not None else torch.zeros_like(p)) for (n, p), g in zip(named, grads)}


def clip_gradients(grads: Dict[str, torch.Tensor], max_norm: float) -> float:
    """Scale the gradients in place so their global norm is at most max_norm; return the norm."""
    total = torch.linalg.vector_norm(torch.stack([torch.linalg.vector_norm(g) for g in grads.values()]))
    total = float(total)
    if total > max_norm:
        for name in grads:
            grads[name] = grads[name] * (max_norm / total)
    return total


@dataclass
class TrainingResult:
    algorithm: str
    log: pd.DataFrame
    best_greedy: Optional[Reward]
    best_protocol: List[Tuple[str, float]]
    best_sample_ratio: float
    iterations: int
    wall_time: float
    best_state: Dict[str, Any] = field(default_factory=dict, repr=False)
    output_dir: Optional[Path] = None


class PPOTrainer:
    """
    Bulk-synchronous hybrid PPO training loop

    Each iteration samples a batch, rolls it out (concurrently when workers > 1),
    then runs the K-epoch update single-threaded.

    Args:
        env: Environment providing rollout_batch and evaluate_greedy
        policy: Policy to train in place
        hp: PPO hyperparameters
        seed: Experiment seed (action, noise and init streams derive from it)
        output_dir: Where logs and checkpoints go; nothing is written when None
        workers: Rollout thread count
        algorithm: Tag written to every log row
    """

    def __init__(self, env: Environment, policy: HybridPolicy, hp: PPOHyperparams, seed: int,
                 output_dir: Optional[Union[str, Path]] = None, workers: int = 1,
                 algorithm: str = "rl_qaoa"):
        self.env = env
        self.policy = policy
        self.hp = hp
        self.seed = seed
        self.output_dir = Path(output_dir) if output_dir is not None else None
        self.workers = workers
        self.algorithm = algorithm
        self.optimizer = make_optimizer(policy, hp)
        self.baseline = BaselineEMA(m=hp.ema)
        self.history_best = -np.inf
        self.rows: List[Dict[str, Any]] = []
        self.timings: List[Dict[str, Any]] = []
        self.best_greedy: Optional[Reward] = None
        self.best_protocol: List[Tuple[str, float]] = []
        self.best_state: Dict[str, Any] = {}
        if self.output_dir is not None:
            self.output_dir.mkdir(parents=True, exist_ok=True)

    def sample_batch(self, iteration: int, temp: float) -> TrajectoryBatch:
        rng = derive_rng(self.seed, "actions", iteration)
        trajectories = self.policy.sample(self.hp.batch_size, rng)
        rollout = self.env.rollout_batch(trajectories, self.seed, iteration, self.workers)
        return build_batch(self.policy, trajectories, rollout, self.baseline, temp)

    def update(self, batch: TrajectoryBatch, lr: float, temp: float, iteration: int) -> ObjectiveTerms:
        """K full-batch epochs of Adam ascent on the hybrid objective."""
        terms = None
        for epoch in range(self.hp.ppo_epochs):
            terms = hybrid_objective(batch, self.policy, self.hp, temp)
            if not torch.isfinite(terms.objective):
                self._diverged(iteration, f"non-finite objective at epoch {epoch}")
            grads = objective_gradients(terms, self.policy)
            if self.hp.grad_clip:
                clip_gradients(grads, self.hp.grad_clip_norm)
            adam_step(self.policy, grads, self.optimizer, lr)
            if not self.policy.parameters_finite():
                self._diverged(iteration, f"non-finite parameters after epoch {epoch}")
        return terms

    def _diverged(self, iteration: int, reason: str) -> None:
        dump_path = None
        if self.output_dir is not None:
            dump_path = self.output_dir / "diverged_state.pt"
            torch.save(
                {
                    "iteration": iteration,
                    "reason": reason,
                    "state_dict": self.policy.state_dict(),
                    "optimizer": self.optimizer.state_dict(),
                    "baseline": self.baseline.value,
                },
                dump_path,
            )
        logger.error(f"Training diverged at iteration {iteration}: {reason}")
        raise TrainingDivergedError(f"training diverged at iteration {iteration}: {reason}",
                                    dump_path=str(dump_path) if dump_path else None)

    def diagnostics(self, batch: TrajectoryBatch) -> Dict[str, float]:
        with torch.no_grad():
            log_prob_d, log_prob_c = self.policy.log_prob(batch.trajectories)
            entropy = float(self.policy.discrete_entropy(batch.trajectories).mean())
        kl_d = float((batch.log_prob_discrete_old - log_prob_d).mean())
        kl_c = float((batch.log_prob_continuous_old - log_prob_c).mean())
        return {
            "discrete_entropy": entropy,
            "kl_discrete": kl_d,
            "kl_continuous": kl_c,
            "kl_exceeded": bool(max(kl_d, kl_c) > self.hp.kl_threshold),
        }

    def evaluate(self, iteration: int) -> Reward:
        reward = self.env.evaluate_greedy(self.policy)
        if self.best_greedy is None or reward.clean_energy_ratio > self.best_greedy.clean_energy_ratio:
            self.best_greedy = reward
            self.best_protocol = self.env.describe(self.policy)
            self.best_state = {k: v.detach().clone() for k, v in self.policy.state_dict().items()}
            if self.output_dir is not None:
                save_checkpoint(self.output_dir / BEST_CHECKPOINT, self.policy, self.optimizer,
                                extra=self._checkpoint_extra(iteration, reward))
        return reward

    def _checkpoint_extra(self, iteration: int, reward: Optional[Reward] = None) -> Dict[str, Any]:
        env_cfg = getattr(self.env, "cfg", None)
        return {
            "env": env_cfg.model_dump(mode="json") if env_cfg is not None else None,
            "iteration": iteration,
            "algorithm": self.algorithm,
            "seed": self.seed,
            "baseline": self.baseline.value,
            "history_best": self.history_best,
            "greedy_clean_ratio": reward.clean_energy_ratio if reward else None,
            "rng_state": derive_rng(self.seed, "actions", iteration + 1).bit_generator.state,
        }

    def run_iteration(self, iteration: int) -> Dict[str, Any]:
        start = time.perf_counter()
        lr, temp = schedules(iteration, self.hp)
        batch = self.sample_batch(iteration, temp)
        baseline_used = self.baseline.value
        self.update(batch, lr, temp, iteration)
        self.history_best = max(self.history_best, float(batch.clean_ratios.max()))
        row = {
            "schema_version": RUNTIME_CONFIG["schema_version"],
            "algorithm": self.algorithm,
            "iteration": iteration,
            "lr": lr,
            "temp": temp,
            "mean_clean_ratio": float(batch.clean_ratios.mean()),
            "max_clean_ratio": float(batch.clean_ratios.max()),
            "best_clean_ratio": self.history_best,
            "mean_noisy_return": float(batch.noisy_returns.mean()),
            "baseline": baseline_used,
            "greedy_clean_ratio": np.nan,
            "greedy_energy_variance": np.nan,
            **self.diagnostics(batch),
        }
        last = iteration == self.hp.total_iters - 1
        if iteration % self.hp.eval_every == 0 or last:
            reward = self.evaluate(iteration)
            row["greedy_clean_ratio"] = reward.clean_energy_ratio
            row["greedy_energy_variance"] = reward.energy_variance
        self.rows.append(row)
        self.timings.append({"iteration": iteration, "wall_time_s": time.perf_counter() - start})
        if self.output_dir is not None and ((iteration + 1) % self.hp.checkpoint_every == 0 or last):
            save_checkpoint(self.output_dir / LATEST_CHECKPOINT, self.policy, self.optimizer,
                            extra=self._checkpoint_extra(iteration))
            self.write_logs()
        return row

    def write_logs(self) -> None:
        if self.output_dir is None:
            return
        self.log_frame().to_csv(self.output_dir / LOG_FILE, index=False)
        pd.DataFrame(self.timings, columns=TIMING_COLUMNS).to_csv(self.output_dir / TIMING_FILE, index=False)

    def log_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.rows, columns=LOG_COLUMNS)

    def train(self) -> TrainingResult:
        """
        Run total_iters iterations

        Returns:
            TrainingResult with the log, the best greedy evaluation and its protocol
        """
        start = time.perf_counter()
        logger.info(f"Training {self.algorithm} for {self.hp.total_iters} iterations (seed {self.seed})")
        for iteration in range(self.hp.total_iters):
            row = self.run_iteration(iteration)
            if iteration % self.hp.eval_every == 0:
                logger.info(
                    f"[{self.algorithm}] iter {iteration}: mean ratio {row['mean_clean_ratio']:.4f}, "
                    f"max {row['max_clean_ratio']:.4f}, best {row['best_clean_ratio']:.4f}, "
                    f"greedy {row['greedy_clean_ratio']:.4f}"
                )
        if self.hp.total_iters == 0:
            self.evaluate(0)
        self.write_logs()
        wall_time = time.perf_counter() - start
        return TrainingResult(
            algorithm=self.algorithm,
            log=self.log_frame(),
            best_greedy=self.best_greedy,
            best_protocol=self.best_protocol,
            best_sample_ratio=float(self.history_best),
            iterations=self.hp.total_iters,
            wall_time=wall_time,
            best_state=self.best_state,
            output_dir=self.output_dir,
        )


def train(cfg: EnvConfig, hp: PPOHyperparams, seed: int, output_dir: Optional[Union[str, Path]] = None,
          workers: int = 1) -> TrainingResult:
    """Train RL-QAOA on the given environment configuration."""
    env = QAOAEnvironment(cfg)
    policy = init_params(
        {
            "n_actions": env.n_actions,
            "q": env.q,
            "hidden_units": hp.hidden_units,
            "family": hp.continuous_family,
            "continuous": True,
        },
        seed,
    )
    return PPOTrainer(env, policy, hp, seed, output_dir=output_dir, workers=workers, algorithm="rl_qaoa").train()
