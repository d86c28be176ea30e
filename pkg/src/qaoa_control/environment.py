"""
Episodic protocol environment

Turns sampled hybrid trajectories into physical protocols (duration
normalization under the fixed total time T), evolves the z-polarized initial
state and returns the terminal reward -E/N, optionally corrupted by one of
the noise models. The entropy bonus is not added here.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .config import EnvConfig, NoiseKind
from .exceptions import DomainError, ProtocolError
from .policy import HybridPolicy, Trajectories, Trajectory
from .quantum import (
    GeneratorSet,
    Protocol,
    QuantumState,
    apply_protocol,
    build_action_set,
    build_ising,
    energy_density,
    energy_variance_density,
    ground_state,
)
from .seeding import spawn_rngs

logger = logging.getLogger(__name__)


def normalize_durations(raw: Sequence[float], T: float) -> np.ndarray:
    """
    Rescale raw duration fractions so they sum to T

    The last entry absorbs the floating-point residual so the sum is exact.

    Args:
        raw: Positive raw fractions, one per step
        T: Total protocol time

    Returns:
        Durations in step order
    """
    raw = np.asarray(raw, dtype=float)
    if raw.size == 0:
        raise DomainError("cannot normalize an empty duration list")
    total = raw.sum()
    if total < 1e-9:
        raise DomainError(f"raw durations sum to {total:.3e}; cannot normalize")
    durations = raw * (T / total)
    durations[-1] = T - durations[:-1].sum()
    return durations


@dataclass(frozen=True)
class Reward:
    noisy_return: float
    clean_return: float
    clean_energy_ratio: float
    energy_variance: float = 0.0


@dataclass
class RolloutBatch:
    """Rewards of a batch, in trajectory order."""

    noisy_returns: np.ndarray
    clean_returns: np.ndarray
    clean_ratios: np.ndarray

    @classmethod
    def from_rewards(cls, rewards: Sequence[Reward]) -> "RolloutBatch":
        return cls(
            noisy_returns=np.array([r.noisy_return for r in rewards]),
            clean_returns=np.array([r.clean_return for r in rewards]),
            clean_ratios=np.array([r.clean_energy_ratio for r in rewards]),
        )


class Environment:
    """Interface shared by the protocol environment and its surrogates."""

    n_actions: int
    q: int

    def rollout_batch(self, trajectories: Trajectories, seed: int, iteration: int,
                      workers: int = 1) -> RolloutBatch:
        raise NotImplementedError

    def evaluate_greedy(self, policy: HybridPolicy) -> Reward:
        raise NotImplementedError

    def describe(self, policy: HybridPolicy) -> List[Tuple[str, float]]:
        return []


class QAOAEnvironment(Environment):
    """
    Ising-chain ground-state preparation as an episodic task

    Args:
        cfg: Physical setup, action set and noise model
    """

    def __init__(self, cfg: EnvConfig):
        self.cfg = cfg
        self.n_sites = cfg.ising.n_sites
        self.total_T = cfg.total_T
        self.q = cfg.q
        self.generators: GeneratorSet = build_action_set(cfg.ising, cfg.action_set).warm()
        self.n_actions = len(self.generators)
        _, _, self.H = build_ising(cfg.ising)
        self.e_gs, self.ground_state = ground_state(self.H)
        self.initial_state = QuantumState.all_up(self.n_sites)
        logger.info(
            f"Environment ready: N={self.n_sites}, T={self.total_T}, q={self.q}, "
            f"actions={list(cfg.action_set)}, noise={cfg.noise.kind.value}({cfg.noise.strength}), "
            f"E_GS/N={self.e_gs / self.n_sites:.6f}"
        )

    @property
    def noise(self):
        return self.cfg.noise

    @property
    def e_gs_density(self) -> float:
        return self.e_gs / self.n_sites

    def protocol_from_actions(self, discrete: Sequence[int], raw: Sequence[float]) -> Protocol:
        if len(discrete) != len(raw):
            raise ProtocolError("one raw duration per generator is required")
        durations = normalize_durations(raw, self.total_T)
        return Protocol(list(zip(discrete, durations)), self.total_T)

    def protocol_from_labels(self, steps: Sequence[Tuple[str, float]]) -> Protocol:
        """Protocol from explicit (label, duration) pairs; durations are used as given."""
        return Protocol([(self.generators.index(label), d) for label, d in steps], self.total_T)

    def final_state(self, protocol: Protocol, rng: Optional[np.random.Generator] = None,
                    noisy: bool = True) -> QuantumState:
        offsets = None
        if noisy and self.noise.kind == NoiseKind.GATE and protocol.steps:
            if rng is None:
                raise DomainError("gate noise needs a random stream")
            sigma = self.noise.strength * self.total_T / len(protocol.steps)
            offsets = rng.normal(0.0, sigma, size=len(protocol.steps))
        return apply_protocol(self.initial_state, protocol, self.generators, duration_offsets=offsets)

    def evaluate_protocol(self, protocol: Protocol, rng: Optional[np.random.Generator] = None,
                          noisy: bool = True) -> Reward:
        """
        Reward of an explicit protocol

        Args:
            protocol: Generators and (already normalized) durations
            rng: Noise stream; required unless noisy is False or the noise kind is none
            noisy: Apply the configured noise model

        Returns:
            Reward with noisy and clean returns
        """
        noisy = noisy and self.noise.kind != NoiseKind.NONE
        # Gate noise changes the state, so the clean metrics need a noise-free evolution
        state = self.final_state(protocol, rng, noisy=noisy)
        clean_state = self.final_state(protocol, noisy=False) if noisy and self.noise.kind == NoiseKind.GATE else state
        clean_density = energy_density(clean_state, self.H, self.n_sites)
        variance = energy_variance_density(clean_state, self.H, self.n_sites)
        noisy_density = clean_density
        if noisy:
            if self.noise.kind == NoiseKind.GATE:
                noisy_density = energy_density(state, self.H, self.n_sites)
            elif self.noise.kind == NoiseKind.CLASSICAL:
                noisy_density += rng.normal(0.0, self.noise.strength * abs(self.e_gs_density))
            elif self.noise.kind == NoiseKind.QUANTUM:
                noisy_density += rng.normal(0.0, variance)
        return Reward(
            noisy_return=-float(noisy_density),
            clean_return=-float(clean_density),
            clean_energy_ratio=float(clean_density / self.e_gs_density),
            energy_variance=float(variance),
        )

    def rollout(self, trajectory: Trajectory, rng: Optional[np.random.Generator]) -> Reward:
        discrete = [a.discrete for a in trajectory.actions]
        raw = [a.continuous for a in trajectory.actions]
        if len(discrete) != self.q:
            raise ProtocolError(f"trajectory has {len(discrete)} steps, environment expects {self.q}")
        return self.evaluate_protocol(self.protocol_from_actions(discrete, raw), rng)

    def rollout_batch(self, trajectories: Trajectories, seed: int, iteration: int,
                      workers: int = 1) -> RolloutBatch:
        """
        Roll out every trajectory with its own noise stream

        Stream k of iteration t is derived from (seed, "noise", t, k), so the
        same realizations are seen by every algorithm at a given seed.
        """
        rngs = spawn_rngs(seed, "noise", len(trajectories), iteration)
        items = [trajectories[k] for k in range(len(trajectories))]
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                rewards = list(pool.map(self.rollout, items, rngs))
        else:
            rewards = [self.rollout(t, r) for t, r in zip(items, rngs)]
        return RolloutBatch.from_rewards(rewards)

    def greedy_protocol(self, policy: HybridPolicy) -> Protocol:
        actions = policy.greedy_actions()
        return self.protocol_from_actions([a.discrete for a in actions], [a.continuous for a in actions])

    def evaluate_greedy(self, policy: HybridPolicy) -> Reward:
        """Noise-free metrics of the greedy protocol."""
        return self.evaluate_protocol(self.greedy_protocol(policy), noisy=False)

    def describe(self, policy: HybridPolicy) -> List[Tuple[str, float]]:
        return self.greedy_protocol(policy).describe(self.generators)


class TwoArmBandit(Environment):
    """Single-step, two-action surrogate paying 1 for arm 0 and 0 otherwise."""

    n_actions = 2
    q = 1

    def rollout_batch(self, trajectories: Trajectories, seed: int, iteration: int,
                      workers: int = 1) -> RolloutBatch:
        rewards = (trajectories.discrete[:, 0] == 0).astype(float)
        return RolloutBatch(rewards, rewards.copy(), rewards.copy())

    def evaluate_greedy(self, policy: HybridPolicy) -> Reward:
        arm = policy.greedy_actions()[0].discrete
        value = 1.0 if arm == 0 else 0.0
        return Reward(value, value, value)
