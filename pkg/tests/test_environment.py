import numpy as np
import pytest

from qaoa_control.config import EnvConfig, IsingParams, NoiseConfig, NoiseKind
from qaoa_control.environment import QAOAEnvironment, TwoArmBandit, normalize_durations
from qaoa_control.exceptions import DomainError, ProtocolError
from qaoa_control.policy import Trajectories, init_params
from qaoa_control.quantum import QuantumState, energy_ratio
from qaoa_control.seeding import derive_rng


def noisy_env(small_env_cfg, kind, strength=0.0):
    return QAOAEnvironment(small_env_cfg.model_copy(update={"noise": NoiseConfig(kind=kind, strength=strength)}))


def test_normalize_durations_sum_exactly():
    raw = np.array([0.1, 0.37, 0.9, 1e-6])
    durations = normalize_durations(raw, 10.0)
    assert durations.sum() == pytest.approx(10.0, abs=1e-12)
    assert np.allclose(durations[:-1] / durations[0], raw[:-1] / raw[0])
    with pytest.raises(DomainError):
        normalize_durations([0.0, 0.0], 1.0)


def test_environment_shapes(small_env_cfg):
    env = QAOAEnvironment(small_env_cfg)
    assert env.n_actions == 3
    assert env.q == 3
    assert env.e_gs_density < 0
    assert energy_ratio(env.initial_state, env.H, env.e_gs) == energy_ratio(QuantumState.all_up(4), env.H, env.e_gs)


def test_noise_free_rollout(small_env_cfg):
    env = QAOAEnvironment(small_env_cfg)
    protocol = env.protocol_from_actions([0, 1, 2], [0.2, 0.5, 0.3])
    reward = env.evaluate_protocol(protocol)
    assert reward.noisy_return == reward.clean_return
    assert reward.clean_energy_ratio <= 1.0
    assert reward.clean_return == pytest.approx(-reward.clean_energy_ratio * env.e_gs_density)


def test_protocol_from_labels(small_env_cfg):
    env = QAOAEnvironment(small_env_cfg)
    protocol = env.protocol_from_labels([("Y", 4.0), ("H1", 6.0)])
    assert protocol.indices == [2, 0]
    with pytest.raises(ProtocolError):
        env.protocol_from_actions([0, 1], [0.5])


def test_classical_noise_statistics(small_env_cfg):
    env = noisy_env(small_env_cfg, NoiseKind.CLASSICAL, 0.3)
    protocol = env.protocol_from_actions([0, 1, 0], [0.3, 0.3, 0.4])
    rng = derive_rng(0, "noise")
    rewards = [env.evaluate_protocol(protocol, rng) for _ in range(10_000)]
    noisy = np.array([r.noisy_return for r in rewards])
    clean = rewards[0].clean_return
    sigma = 0.3 * abs(env.e_gs_density)
    assert noisy.std(ddof=1) == pytest.approx(sigma, rel=0.03)
    assert abs(noisy.mean() - clean) < 4 * sigma / np.sqrt(len(noisy))
    assert all(r.clean_return == clean for r in rewards)


def test_quantum_noise_uses_energy_variance(small_env_cfg):
    env = noisy_env(small_env_cfg, NoiseKind.QUANTUM)
    protocol = env.protocol_from_actions([0, 1, 2], [0.3, 0.3, 0.4])
    rewards = [env.evaluate_protocol(protocol, derive_rng(0, "noise", k)) for k in range(2000)]
    noisy = np.array([r.noisy_return for r in rewards])
    assert rewards[0].energy_variance > 0
    assert noisy.std(ddof=1) == pytest.approx(rewards[0].energy_variance, rel=0.1)


def test_quantum_noise_vanishes_on_an_eigenstate():
    cfg = EnvConfig(
        ising=IsingParams(h_x=0.0),
        q=1,
        action_set=("H1", "H2"),
        noise=NoiseConfig(kind=NoiseKind.QUANTUM),
    )
    env = QAOAEnvironment(cfg)
    # without a transverse field the all-up state is an eigenstate of H
    protocol = env.protocol_from_labels([("H1", cfg.total_T)])
    for k in range(20):
        reward = env.evaluate_protocol(protocol, derive_rng(0, "noise", k))
        assert reward.energy_variance < 1e-8
        assert reward.noisy_return == pytest.approx(reward.clean_return, abs=1e-12)


def test_gate_noise_perturbs_state_not_clean_metrics(small_env_cfg):
    env = noisy_env(small_env_cfg, NoiseKind.GATE, 0.1)
    clean_env = QAOAEnvironment(small_env_cfg)
    protocol = env.protocol_from_actions([0, 1, 2], [0.3, 0.3, 0.4])
    reward = env.evaluate_protocol(protocol, derive_rng(1, "noise"))
    reference = clean_env.evaluate_protocol(protocol)
    assert reward.clean_return == pytest.approx(reference.clean_return, abs=1e-12)
    assert reward.noisy_return != reward.clean_return
    with pytest.raises(DomainError):
        env.evaluate_protocol(protocol, None)


def test_rollout_batch_is_reproducible_and_thread_independent(small_env_cfg):
    env = noisy_env(small_env_cfg, NoiseKind.CLASSICAL, 0.2)
    policy = init_params({"n_actions": 3, "q": 3, "hidden_units": (8, 8)}, seed=0)
    batch = policy.sample(16, derive_rng(0, "actions", 0))
    serial = env.rollout_batch(batch, seed=5, iteration=2)
    threaded = env.rollout_batch(batch, seed=5, iteration=2, workers=4)
    assert np.array_equal(serial.noisy_returns, threaded.noisy_returns)
    other = env.rollout_batch(batch, seed=5, iteration=3)
    assert not np.array_equal(serial.noisy_returns, other.noisy_returns)
    assert np.array_equal(serial.clean_returns, other.clean_returns)


def test_rollout_rejects_wrong_depth(small_env_cfg):
    env = QAOAEnvironment(small_env_cfg)
    policy = init_params({"n_actions": 3, "q": 2, "hidden_units": (8, 8)}, seed=0)
    trajectory = policy.sample_trajectory(derive_rng(0, "actions"))
    with pytest.raises(ProtocolError):
        env.rollout(trajectory, None)


def test_greedy_evaluation_is_noise_free(small_env_cfg):
    env = noisy_env(small_env_cfg, NoiseKind.CLASSICAL, 0.5)
    policy = init_params({"n_actions": 3, "q": 3, "hidden_units": (8, 8)}, seed=0)
    reward = env.evaluate_greedy(policy)
    assert reward.noisy_return == reward.clean_return
    assert [label for label, _ in env.describe(policy)] == ["H1", "H2", "H1"]


def test_two_arm_bandit_rewards():
    env = TwoArmBandit()
    batch = Trajectories(np.array([[0], [1], [0]]), np.ones((3, 1)), np.zeros(3), np.zeros(3), 2)
    rewards = env.rollout_batch(batch, seed=0, iteration=0)
    assert list(rewards.noisy_returns) == [1.0, 0.0, 1.0]


def test_noise_config_validation():
    with pytest.raises(ValueError):
        NoiseConfig(kind="classical_gaussian", strength=-0.1)
    with pytest.raises(ValueError):
        EnvConfig(action_set=("H1", "H1"))
