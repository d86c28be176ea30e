import numpy as np
import pytest
import torch

from qaoa_control.config import RUNTIME_CONFIG, ContinuousFamily, PPOHyperparams
from qaoa_control.exceptions import ConfigError, DomainError, ProtocolError
from qaoa_control.policy import (
    DISCRETE_ONLY_VALUE,
    DTYPE,
    AutoregressivePolicy,
    HybridAction,
    Trajectories,
    adam_step,
    embed,
    init_params,
    load_checkpoint,
    make_optimizer,
    restore_policy,
    save_checkpoint,
    score_gradients,
    step_masks,
)
from qaoa_control.verify import (
    check_causality,
    check_head_normalization,
    check_path_probabilities,
    check_policy_gradient,
    corrupt_mask,
    random_policy,
)


def fresh(n_actions=3, q=4, **kwargs):
    dims = {"n_actions": n_actions, "q": q, "hidden_units": (8, 8), **kwargs}
    return init_params(dims, seed=0)


def test_initial_policy_is_uniform():
    policy = fresh()
    x = torch.as_tensor(np.random.default_rng(0).uniform(size=(5, 12)), dtype=DTYPE)
    with torch.no_grad():
        z_p, kappa, xi = policy(x)
    assert torch.allclose(z_p, torch.full_like(z_p, -np.log(3)))
    assert torch.allclose(kappa, torch.zeros_like(kappa))
    assert torch.allclose(xi, torch.ones_like(xi))


def test_initial_beta_policy_has_unit_parameters():
    policy = fresh(family=ContinuousFamily.BETA)
    with torch.no_grad():
        _, kappa, xi = policy(torch.zeros(1, 12, dtype=DTYPE))
    assert torch.allclose(kappa, torch.ones_like(kappa))
    assert torch.allclose(xi, torch.ones_like(xi))


def test_init_is_deterministic_in_seed():
    a, b = fresh(), fresh()
    for (name, pa), (_, pb) in zip(a.named_parameters(), b.named_parameters()):
        assert torch.equal(pa, pb), name


def test_first_layer_mask_blocks_last_step_inputs():
    policy = fresh(q=3)
    # inputs of step q feed nothing
    assert torch.all(policy.layer1.mask[:, -3:] == 0)


@pytest.mark.parametrize(
    "check", [check_causality, check_head_normalization, check_path_probabilities, check_policy_gradient]
)
def test_policy_property_checks(check):
    passed, detail = check(frozenset())
    assert passed, detail


def test_corrupted_mask_breaks_causality():
    passed, _ = check_causality(frozenset({"corrupt_mask"}))
    assert not passed
    policy = random_policy(3, 2)
    corrupt_mask(policy)
    assert torch.all(policy.layer1.mask == 1)


def test_sample_shapes_and_constraints(rng):
    policy = random_policy(4, 5, seed=3, scale=1.0)
    batch = policy.sample(64, rng)
    assert batch.discrete.shape == (64, 5)
    assert batch.inputs.shape == (64, 20)
    assert np.all(batch.discrete[:, 1:] != batch.discrete[:, :-1])
    assert np.all((batch.continuous > 0) & (batch.continuous < 1))
    assert len(batch[0].actions) == 5


def test_batch_inputs_are_built_once(rng):
    batch = random_policy(3, 4, seed=1).sample(16, rng)
    assert batch.inputs is batch.inputs
    for k in range(len(batch)):
        item = batch[k]
        assert np.array_equal(item.inputs, np.concatenate([embed(a, 3) for a in item.actions]))


def test_stored_log_probs_match_recomputation(rng):
    for family in ContinuousFamily:
        policy = random_policy(3, 4, family=family, seed=5, scale=0.8)
        batch = policy.sample(32, rng)
        with torch.no_grad():
            log_prob_d, log_prob_c = policy.log_prob(batch)
        assert np.allclose(log_prob_d.numpy(), batch.log_prob_discrete, atol=1e-10)
        assert np.allclose(log_prob_c.numpy(), batch.log_prob_continuous, atol=1e-10)


def test_first_step_frequencies_of_uniform_policy(rng):
    policy = fresh(n_actions=5, q=2)
    batch = policy.sample(10_000, rng)
    counts = np.bincount(batch.discrete[:, 0], minlength=5)
    sigma = np.sqrt(10_000 * 0.2 * 0.8)
    assert np.all(np.abs(counts - 2000) < 4 * sigma)


def test_discrete_only_policy_embeds_unit_value(rng):
    policy = fresh(continuous=False)
    batch = policy.sample(10, rng)
    assert np.all(batch.continuous == 1.0)
    assert np.all(batch.log_prob_continuous == 0.0)
    _, log_prob_c = policy.log_prob(batch)
    assert torch.all(log_prob_c == 0)


def test_greedy_actions_break_ties_by_lowest_index():
    actions = fresh(q=4).greedy_actions()
    assert [a.discrete for a in actions] == [0, 1, 0, 1]
    assert all(a.continuous == pytest.approx(0.5) for a in actions)


def test_step_heads_rejects_full_prefix():
    policy = fresh(q=2)
    with pytest.raises(DomainError):
        policy.step_heads([HybridAction(0, 0.5), HybridAction(1, 0.5)])


def test_hybrid_action_validation():
    with pytest.raises(DomainError):
        HybridAction(0, 0.0)
    with pytest.raises(DomainError):
        HybridAction(0, 1.5)
    with pytest.raises(DomainError):
        HybridAction(0, 1.0 + 1e-12)
    assert HybridAction(0, DISCRETE_ONLY_VALUE).continuous == 1.0
    with pytest.raises(DomainError):
        HybridAction(-1, 0.5)
    assert np.allclose(embed(HybridAction(2, 0.25), 4), [0, 0, 0.25, 0])
    with pytest.raises(DomainError):
        embed(HybridAction(4, 0.25), 4)


def test_discrete_entropy_uses_unmasked_heads(rng):
    policy = fresh(n_actions=3, q=4)
    batch = policy.sample(8, rng)
    with torch.no_grad():
        entropy = policy.discrete_entropy(batch)
    assert torch.allclose(entropy, torch.full((8,), 4 * np.log(3.0), dtype=DTYPE))


def test_repeated_generators_rejected():
    batch = Trajectories(np.array([[0, 0]]), np.full((1, 2), 0.5), np.zeros(1), np.zeros(1), 3)
    with pytest.raises(ProtocolError):
        batch.check_no_repeats()


def test_step_masks_forbid_previous_action():
    masks = step_masks(np.array([[2, 0, 1]]), 3)
    assert masks[0, 0].all()
    assert list(masks[0, 1]) == [True, True, False]
    assert list(masks[0, 2]) == [False, True, True]


def test_score_gradients_weight_shape(rng):
    policy = fresh()
    batch = policy.sample(4, rng)
    with pytest.raises(DomainError):
        score_gradients(policy, batch, np.ones(3))


def test_adam_first_step_ascends_by_learning_rate(rng):
    policy = fresh()
    optimizer = make_optimizer(policy, PPOHyperparams())
    before = policy.head_p.bias.detach().clone()
    grads = {name: torch.zeros_like(p) for name, p in policy.named_parameters()}
    grads["head_p.bias"][0] = 1.0
    adam_step(policy, grads, optimizer, lr=0.01)
    assert float(policy.head_p.bias[0] - before[0]) == pytest.approx(0.01, rel=1e-5)
    assert torch.equal(policy.head_p.bias[1:], before[1:])
    with pytest.raises(DomainError):
        adam_step(policy, {"missing": torch.zeros(1)}, optimizer, lr=0.01)


def test_checkpoint_round_trip(tmp_path, rng):
    policy = random_policy(3, 4, seed=2)
    optimizer = make_optimizer(policy, PPOHyperparams())
    path = save_checkpoint(tmp_path / "ckpt.pt", policy, optimizer, extra={"iteration": 7})
    payload = load_checkpoint(path)
    assert payload["extra"]["iteration"] == 7
    restored = restore_policy(payload)
    assert isinstance(restored, AutoregressivePolicy)
    x = torch.as_tensor(rng.uniform(size=(3, 12)), dtype=DTYPE)
    with torch.no_grad():
        for a, b in zip(policy(x), restored(x)):
            assert torch.equal(a, b)


def test_checkpoint_version_checked(tmp_path):
    path = tmp_path / "old.pt"
    torch.save({"schema_version": RUNTIME_CONFIG["schema_version"] + 1}, path)
    with pytest.raises(ConfigError):
        load_checkpoint(path)
    with pytest.raises(ConfigError):
        load_checkpoint(tmp_path / "missing.pt")
