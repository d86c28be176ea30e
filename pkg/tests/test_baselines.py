import numpy as np
import pytest
import torch

from qaoa_control.baselines import (
    PGQAOAPolicy,
    PowellInnerEnvironment,
    alternating_sequence,
    check_sequence,
    enumerate_sequences,
    exhaustive_sequence_search,
    grid_oracle,
    is_nested_grid_size,
    pg_qaoa_train,
    qaoa_optimize,
    solve_durations,
)
from qaoa_control.config import BaselineSettings, ContinuousFamily, EnvConfig, NoiseConfig, PowellConfig
from qaoa_control.environment import QAOAEnvironment
from qaoa_control.exceptions import DomainError, OptimizationBudgetError, ProtocolError
from qaoa_control.policy import load_checkpoint, make_optimizer, restore_policy, save_checkpoint
from qaoa_control.quantum import energy_ratio
from qaoa_control.verify import check_cd_qaoa_oracle, check_grid_oracle

QUICK = PowellConfig(x_tol=1e-4, f_tol=1e-7, max_iters=30)


def two_step_env(**updates):
    return QAOAEnvironment(EnvConfig(q=2, action_set=("H1", "H2", "Y"), **updates))


def test_alternating_sequence():
    assert alternating_sequence(4) == (0, 1, 0, 1)
    assert alternating_sequence(3, first=1) == (1, 0, 1)


def test_check_sequence():
    assert check_sequence([2, 0, 2], 3) == (2, 0, 2)
    with pytest.raises(ProtocolError):
        check_sequence([0, 0], 3)
    with pytest.raises(ProtocolError):
        check_sequence([0, 3], 3)


def test_enumerate_sequences():
    sequences = enumerate_sequences(3, 2)
    assert len(sequences) == 6
    assert sequences[0] == (0, 1)
    assert all(a != b for a, b in sequences)
    assert len(enumerate_sequences(5, 3)) == 5 * 4 * 4


def test_qaoa_depth_zero_is_initial_state():
    result = qaoa_optimize(EnvConfig(), p_depth=0, restarts=3, seed=0)
    env = QAOAEnvironment(EnvConfig(action_set=("H1", "H2"), q=1))
    assert result.clean_ratio == pytest.approx(energy_ratio(env.initial_state, env.H, env.e_gs))
    assert result.protocol == []
    with pytest.raises(DomainError):
        qaoa_optimize(EnvConfig(), p_depth=-1, restarts=1, seed=0)


def test_qaoa_is_deterministic_and_bounded():
    a = qaoa_optimize(EnvConfig(), p_depth=1, restarts=2, seed=4, powell=QUICK)
    b = qaoa_optimize(EnvConfig(), p_depth=1, restarts=2, seed=4, powell=QUICK, workers=2)
    assert a.clean_ratio == b.clean_ratio
    assert a.clean_ratio <= 1.0 + 1e-12
    assert len(a.solutions) == 4
    assert [label for label, _ in a.protocol] in (["H1", "H2"], ["H2", "H1"])
    assert sum(d for _, d in a.protocol) == pytest.approx(10.0)


def test_qaoa_under_noise_selects_by_optimized_objective():
    cfg = EnvConfig(noise=NoiseConfig(kind="classical_gaussian", strength=0.3))
    result = qaoa_optimize(cfg, p_depth=1, restarts=3, seed=2, powell=QUICK)
    chosen = min(result.solutions, key=lambda s: s.objective)
    assert result.clean_ratio == chosen.reward.clean_energy_ratio
    env = QAOAEnvironment(cfg.model_copy(update={"action_set": ("H1", "H2"), "q": 2}))
    assert result.protocol == chosen.protocol.describe(env.generators)


def test_solve_durations_improves_on_uniform_start():
    env = two_step_env()
    start = env.evaluate_protocol(env.protocol_from_actions((0, 1), [0.5, 0.5])).clean_energy_ratio
    solution = solve_durations(env, (0, 1), QUICK, None, [np.full(2, 0.5)])
    assert solution.reward.clean_energy_ratio >= start - 1e-12
    assert solution.nfev > 0
    assert solution.protocol.durations.sum() == pytest.approx(10.0)


def test_powell_matches_grid_oracle():
    passed, detail = check_grid_oracle(frozenset())
    assert passed, detail


def test_grid_oracle_budget_and_single_point():
    env = QAOAEnvironment(EnvConfig(q=3, action_set=("H1", "H2")))
    with pytest.raises(OptimizationBudgetError):
        grid_oracle(env, (0, 1, 0), 1025)
    ratio, durations = grid_oracle(env, (0, 1, 0), 1)
    uniform = env.evaluate_protocol(env.protocol_from_actions((0, 1, 0), [1.0, 1.0, 1.0])).clean_energy_ratio
    assert ratio == pytest.approx(uniform)
    assert np.allclose(durations, 10.0 / 3)


@pytest.mark.parametrize("grid_points", [0, 2, 4, 10, 101])
def test_grid_oracle_requires_nested_sizes(grid_points):
    env = two_step_env()
    with pytest.raises(DomainError):
        grid_oracle(env, (0, 1), grid_points)


def test_nested_grid_sizes():
    assert [n for n in range(1, 40) if is_nested_grid_size(n)] == [1, 3, 5, 9, 17, 33]


def test_finer_grid_is_never_worse():
    env = two_step_env()
    ratios = [grid_oracle(env, (0, 2), n)[0] for n in (1, 3, 5, 9, 17)]
    assert all(finer >= coarser - 1e-12 for coarser, finer in zip(ratios, ratios[1:]))


def test_pg_qaoa_policy_follows_fixed_sequence(rng):
    policy = PGQAOAPolicy(2, 4, ContinuousFamily.SIGMOID_GAUSSIAN, alternating_sequence(4))
    batch = policy.sample(32, rng)
    assert np.all(batch.discrete == np.array([0, 1, 0, 1]))
    assert np.allclose(batch.log_prob_discrete, 0.0)
    with torch.no_grad():
        log_prob_d, log_prob_c = policy.log_prob(batch)
    assert torch.allclose(log_prob_d, torch.zeros_like(log_prob_d))
    assert np.allclose(log_prob_c.numpy(), batch.log_prob_continuous)
    assert sum(p.numel() for p in policy.parameters()) == 8


@pytest.mark.parametrize("family", list(ContinuousFamily))
def test_pg_qaoa_starts_from_uniform_durations(family):
    q = 4
    policy = PGQAOAPolicy(2, q, family, alternating_sequence(q))
    env = QAOAEnvironment(EnvConfig(q=q, action_set=("H1", "H2")))
    durations = env.greedy_protocol(policy).durations
    assert np.allclose(durations, env.total_T / q)


def test_pg_qaoa_policy_rejects_bad_sequence():
    with pytest.raises(ProtocolError):
        PGQAOAPolicy(2, 3, ContinuousFamily.BETA, (0, 1))


def test_pg_qaoa_checkpoint_round_trip(tmp_path):
    policy = PGQAOAPolicy(2, 3, ContinuousFamily.BETA, alternating_sequence(3))
    with torch.no_grad():
        policy.kappa_param.copy_(torch.tensor([0.1, -0.2, 0.3], dtype=torch.float64))
    path = save_checkpoint(tmp_path / "pg.pt", policy, make_optimizer(policy, BaselineSettings().pg_qaoa))
    restored = restore_policy(load_checkpoint(path))
    assert isinstance(restored, PGQAOAPolicy)
    assert restored.sequence == (0, 1, 0)
    assert torch.equal(restored.kappa_param, policy.kappa_param)


def test_pg_qaoa_training_keeps_alternating_sequence(tiny_hp):
    result = pg_qaoa_train(EnvConfig(q=3), ContinuousFamily.SIGMOID_GAUSSIAN, tiny_hp, seed=0)
    assert [label for label, _ in result.best_protocol] == ["H1", "H2", "H1"]
    assert result.best_greedy.clean_energy_ratio <= 1.0 + 1e-12


def test_inner_solves_are_memoized_without_noise():
    env = PowellInnerEnvironment(EnvConfig(q=2, action_set=("H1", "H2", "Y")), QUICK)
    first = env.solve((0, 2), None)
    second = env.solve([0, 2], None)
    assert first is second
    assert env.solves == 1


def test_inner_solves_repeat_under_noise():
    cfg = EnvConfig(q=2, action_set=("H1", "H2", "Y"), noise=NoiseConfig(kind="classical_gaussian", strength=0.1))
    env = PowellInnerEnvironment(cfg, QUICK)
    rng = np.random.default_rng(0)
    env.solve((0, 2), rng)
    env.solve((0, 2), rng)
    assert env.solves == 2


def test_exhaustive_search_returns_best_sequence():
    env = two_step_env()
    best = exhaustive_sequence_search(env, QUICK)
    for sequence in [(0, 1), (1, 2)]:
        other = solve_durations(env, sequence, QUICK, None, [np.full(2, 0.5)])
        assert best.reward.clean_energy_ratio >= other.reward.clean_energy_ratio - 1e-12


@pytest.mark.slow
def test_cd_qaoa_finds_exhaustive_optimum():
    passed, detail = check_cd_qaoa_oracle(frozenset())
    assert passed, detail
