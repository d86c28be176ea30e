"""
Property and oracle checks run by the `verify` command

Each check returns (passed, detail). A failing check names its module in the
printed table and makes the command exit nonzero.
"""

import logging
import time
from dataclasses import dataclass
from typing import Callable, FrozenSet, List, Optional, Tuple

import numpy as np
import pandas as pd
import torch
from scipy import integrate

from . import distributions as dist
from .baselines import cd_qaoa_train, exhaustive_sequence_search, grid_oracle, solve_durations, enumerate_sequences
from .config import BaselineSettings, ContinuousFamily, EnvConfig, IsingParams, PowellConfig, PPOHyperparams
from .environment import QAOAEnvironment, TwoArmBandit
from .exceptions import ConfigError, VerificationError
from .policy import DTYPE, AutoregressivePolicy, Trajectories, init_params, score_gradients
from .powell import powell_minimize
from .ppo import PPOTrainer, clipped_term, schedules
from .quantum import (
    QuantumState,
    build_action_set,
    build_ising,
    energy_density,
    energy_variance_density,
    evolve,
    ground_state,
    parity_expectation,
    translation_expectation,
)

logger = logging.getLogger(__name__)

FAULTS = ("corrupt_mask",)
UNITARITY_SAMPLES = 10_000

CheckFn = Callable[[FrozenSet[str]], Tuple[bool, str]]


@dataclass
class CheckResult:
    module: str
    check: str
    passed: bool
    detail: str
    seconds: float


def random_state(n_sites: int, rng: np.random.Generator) -> QuantumState:
    dim = 2 ** n_sites
    return QuantumState.from_vector(rng.standard_normal(dim) + 1j * rng.standard_normal(dim), n_sites)


def random_policy(n_actions: int, q: int, hidden_units=(4, 4), family=ContinuousFamily.SIGMOID_GAUSSIAN,
                  continuous: bool = True, seed: int = 0, scale: float = 0.5) -> AutoregressivePolicy:
    """Policy with every weight and bias (heads included) drawn from N(0, scale^2)."""
    policy = init_params(
        {"n_actions": n_actions, "q": q, "hidden_units": hidden_units, "family": family, "continuous": continuous},
        seed,
    )
    generator = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for p in policy.parameters():
            p.copy_(scale * torch.randn(p.shape, generator=generator, dtype=DTYPE))
    return policy


def corrupt_mask(policy: AutoregressivePolicy) -> None:
    """Open every connection of the first masked layer, breaking causality."""
    policy.layer1.mask.fill_(1.0)


def _default_env(**updates) -> QAOAEnvironment:
    cfg = EnvConfig()
    return QAOAEnvironment(cfg.model_copy(update=updates) if updates else cfg)


# quantum-core

def check_unitarity(faults):
    rng = np.random.default_rng(1)
    params = IsingParams()
    gens = build_action_set(params, ["H1", "H2", "Y", "X|Y", "Y|Z"]).warm()
    worst = 0.0
    for _ in range(UNITARITY_SAMPLES):
        state = random_state(params.n_sites, rng)
        out = evolve(state, gens[int(rng.integers(len(gens)))], rng.uniform(-10, 10))
        worst = max(worst, abs(np.linalg.norm(out.amplitudes) - 1.0))
    return worst < 1e-10, f"max norm drift {worst:.2e} over {UNITARITY_SAMPLES} evolutions"


def check_composition(faults):
    rng = np.random.default_rng(2)
    params = IsingParams()
    _, _, H = build_ising(params)
    worst = 0.0
    for _ in range(100):
        state = random_state(params.n_sites, rng)
        a, b = rng.uniform(-5, 5, size=2)
        split = evolve(evolve(state, H, a), H, b).amplitudes
        worst = max(worst, float(np.max(np.abs(split - evolve(state, H, a + b).amplitudes))))
    return worst < 1e-9, f"max deviation {worst:.2e}"


def check_energy_conservation(faults):
    rng = np.random.default_rng(3)
    params = IsingParams()
    _, _, H = build_ising(params)
    worst = 0.0
    for _ in range(100):
        state = random_state(params.n_sites, rng)
        before = energy_density(state, H, params.n_sites)
        after = energy_density(evolve(state, H, rng.uniform(-20, 20)), H, params.n_sites)
        worst = max(worst, abs(after - before))
    return worst < 1e-10, f"max energy drift {worst:.2e}"


def check_eigenstate_variance(faults):
    params = IsingParams()
    _, _, H = build_ising(params)
    worst = 0.0
    for k in range(H.dim):
        state = QuantumState.from_vector(H.eigenvectors[:, k], params.n_sites)
        worst = max(worst, energy_variance_density(state, H, params.n_sites))
    return worst < 1e-8, f"max eigenstate variance {worst:.2e}"


def check_ground_state_bound(faults):
    rng = np.random.default_rng(4)
    params = IsingParams()
    _, _, H = build_ising(params)
    e_gs, _ = ground_state(H)
    gap = min(energy_density(random_state(params.n_sites, rng), H, params.n_sites) - e_gs / params.n_sites
              for _ in range(50))
    return gap >= -1e-12, f"min (E - E_GS)/N {gap:.2e}"


def check_ground_state_sector(faults):
    details = []
    passed = True
    for n_sites in (4, 6, 8):
        _, _, H = build_ising(IsingParams(n_sites=n_sites))
        _, psi = ground_state(H)
        t, p = translation_expectation(psi), parity_expectation(psi)
        ok = abs(t - 1.0) < 1e-8 and abs(p - 1.0) < 1e-8
        passed &= ok
        details.append(f"N={n_sites}: T={t.real:+.6f}, P={p.real:+.6f}")
    return passed, "; ".join(details)


# distributions

def check_density_normalization(faults):
    worst = 0.0
    for kappa, xi in [(0.0, 1.0), (-1.0, 0.5), (1.5, 2.0), (0.3, 0.2)]:
        total, _ = integrate.quad(
            lambda x: np.exp(dist.sg_log_prob(x, dist.SigmoidGaussianParams(kappa, xi))), 0.0, 1.0,
            limit=400, epsabs=1e-12, epsrel=1e-12, points=[float(dist.sigmoid(kappa))],
        )
        worst = max(worst, abs(total - 1.0))
    for kappa, xi in [(1.0, 1.0), (2.0, 2.0), (2.5, 1.2), (1.0, 4.0)]:
        total, _ = integrate.quad(
            lambda x: np.exp(dist.beta_log_prob(x, dist.BetaParams(kappa, xi))), 0.0, 1.0,
            limit=400, epsabs=1e-12, epsrel=1e-12,
        )
        worst = max(worst, abs(total - 1.0))
    return worst < 1e-6, f"max |integral - 1| {worst:.2e}"


def _finite_difference_agreement(log_prob, grad, sample_params, rng, cases=200, h=1e-6):
    worst = 0.0
    for _ in range(cases):
        x, kappa, xi = sample_params(rng)
        analytic = np.array(grad(x, kappa, xi), dtype=float)
        numeric = np.array([
            (log_prob(x, kappa + h, xi) - log_prob(x, kappa - h, xi)) / (2 * h),
            (log_prob(x, kappa, xi + h) - log_prob(x, kappa, xi - h)) / (2 * h),
        ])
        error = np.abs(analytic - numeric) / np.maximum(np.abs(analytic), 1.0)
        worst = max(worst, float(error.max()))
    return worst


def check_distribution_gradients(faults):
    rng = np.random.default_rng(5)
    sg = _finite_difference_agreement(
        lambda x, k, s: float(dist.sg_log_prob(x, dist.SigmoidGaussianParams(k, s))),
        lambda x, k, s: dist.sg_grad_log_prob(x, dist.SigmoidGaussianParams(k, s)),
        lambda r: (r.uniform(0.01, 0.99), r.uniform(-3, 3), r.uniform(0.05, 3)),
        rng,
    )
    beta = _finite_difference_agreement(
        lambda x, k, s: float(dist.beta_log_prob(x, dist.BetaParams(k, s))),
        lambda x, k, s: dist.beta_grad_log_prob(x, dist.BetaParams(k, s)),
        lambda r: (r.uniform(0.01, 0.99), r.uniform(0.05, 5), r.uniform(0.05, 3)),
        rng,
    )
    return max(sg, beta) < 1e-5, f"sigmoid-gaussian {sg:.1e}, beta {beta:.1e}"


def check_categorical_entropy(faults):
    rng = np.random.default_rng(6)
    worst = 0.0
    for _ in range(100):
        p = dist.CategoricalParams.from_logits(rng.standard_normal(5) * 3)
        linear = -np.sum(p.probs * np.log(p.probs))
        worst = max(worst, abs(dist.categorical_entropy(p) - linear))
    return worst < 1e-10, f"max deviation {worst:.2e}"


# policy-net

def check_causality(faults):
    policy = random_policy(n_actions=3, q=4, hidden_units=(12, 12), seed=7)
    if "corrupt_mask" in faults:
        corrupt_mask(policy)
    rng = np.random.default_rng(7)
    x = rng.uniform(0, 1, size=(1, 4 * 3))
    with torch.no_grad():
        reference = policy(torch.as_tensor(x, dtype=DTYPE))
        for j in range(4):
            perturbed = x.copy()
            perturbed[:, j * 3:] = rng.uniform(0, 1, size=perturbed[:, j * 3:].shape)
            outputs = policy(torch.as_tensor(perturbed, dtype=DTYPE))
            for ref, out in zip(reference, outputs):
                if not torch.equal(ref[:, : j + 1], out[:, : j + 1]):
                    return False, f"step {j + 1} output depends on inputs of steps >= {j + 1}"
    return True, "outputs at step j independent of inputs k >= j"


def check_head_normalization(faults):
    policy = random_policy(n_actions=5, q=6, hidden_units=(12, 12), seed=8, scale=2.0)
    x = torch.as_tensor(np.random.default_rng(8).uniform(0, 1, size=(16, 30)), dtype=DTYPE)
    with torch.no_grad():
        z_p, _, xi = policy(x)
    worst = float((torch.exp(z_p).sum(-1) - 1.0).abs().max())
    in_range = bool(((xi >= 1e-4) & (xi <= 10.0)).all())
    return worst < 1e-10 and in_range, f"max |sum p - 1| {worst:.2e}, xi in [1e-4, 10]: {in_range}"


def check_path_probabilities(faults):
    policy = random_policy(n_actions=4, q=3, hidden_units=(9, 9), continuous=False, seed=9, scale=1.5)
    paths = np.array(enumerate_sequences(4, 3))
    batch = Trajectories(paths, np.ones(paths.shape), np.zeros(len(paths)), np.zeros(len(paths)), 4)
    with torch.no_grad():
        log_prob_d, _ = policy.log_prob(batch)
    total = float(torch.exp(log_prob_d).sum())
    return abs(total - 1.0) < 1e-8, f"sum over {len(paths)} paths = {total:.12f}"


def check_policy_gradient(faults):
    policy = random_policy(n_actions=3, q=2, hidden_units=(4, 4), seed=10)
    rng = np.random.default_rng(10)
    batch = policy.sample(6, rng)
    weights = rng.standard_normal(len(batch))
    grads = score_gradients(policy, batch, weights, entropy_coef=0.3)

    def objective() -> float:
        with torch.no_grad():
            log_prob_d, log_prob_c = policy.log_prob(batch)
            value = (torch.as_tensor(weights) * (log_prob_d + log_prob_c)).sum()
            return float(value + 0.3 * policy.discrete_entropy(batch).mean())

    params = dict(policy.named_parameters())
    names = [n for n in params if float(grads[n].abs().max()) > 0]
    worst = 0.0
    h = 1e-6
    for _ in range(20):
        name = names[int(rng.integers(len(names)))]
        flat = params[name].data.view(-1)
        nonzero = torch.nonzero(grads[name].view(-1)).view(-1)
        idx = int(nonzero[int(rng.integers(len(nonzero)))])
        original = float(flat[idx])
        flat[idx] = original + h
        up = objective()
        flat[idx] = original - h
        down = objective()
        flat[idx] = original
        numeric = (up - down) / (2 * h)
        analytic = float(grads[name].view(-1)[idx])
        worst = max(worst, abs(numeric - analytic) / max(abs(analytic), 1e-3))
    return worst < 1e-4, f"max relative error {worst:.1e} over 20 parameters"


# ppo-trainer

def check_clipped_term(faults):
    values = [
        float(clipped_term(1.0, 0.7, 0.1)),
        float(clipped_term(1.5, 1.0, 0.1)),
        float(clipped_term(0.5, -1.0, 0.1)),
    ]
    expected = [0.7, 1.1, -0.9]
    ok = np.allclose(values, expected, atol=1e-12)
    return ok, f"got {values}"


def check_schedules(faults):
    hp = PPOHyperparams()
    got = [schedules(0, hp), schedules(49, hp), schedules(50, hp)]
    ok = (
        np.allclose(got[0], (5e-4, 0.1))
        and got[1][0] == got[0][0]
        and np.allclose(got[2], (4.9e-4, 9.9e-2))
    )
    return ok, f"(lr, temp) at 0/49/50: {got}"


def bandit_hyperparams(**updates) -> PPOHyperparams:
    base = dict(batch_size=64, learning_rate=0.05, eps_discrete=0.2, entropy_temp=0.0,
                total_iters=100, hidden_units=(8, 8), eval_every=100)
    base.update(updates)
    return PPOHyperparams(**base)


def train_bandit(seed: int = 0, hp: Optional[PPOHyperparams] = None) -> float:
    """Train on the two-arm bandit and return the final probability of arm 0."""
    hp = hp or bandit_hyperparams()
    policy = init_params(
        {"n_actions": 2, "q": 1, "hidden_units": hp.hidden_units, "continuous": False}, seed
    )
    PPOTrainer(TwoArmBandit(), policy, hp, seed, algorithm="bandit").train()
    z_p, _, _ = policy.step_heads([])
    return float(np.exp(z_p[0]))


def check_bandit(faults):
    p0 = train_bandit()
    return p0 > 0.99, f"P(arm 0) after 100 iterations = {p0:.4f}"


# baselines

def check_powell_quadratic(faults):
    result = powell_minimize(lambda x: float(np.sum((x - 0.3) ** 2)), np.full(6, 0.5))
    error = float(np.max(np.abs(result.x - 0.3)))
    return error < 1e-5, f"max |x - 0.3| = {error:.1e} in {result.nit} sweeps"


def shifted_rosenbrock(x: np.ndarray) -> float:
    """Rosenbrock with u = 4x - 2, minimum 0 at x = (0.75, 0.75)."""
    u, v = 4.0 * x - 2.0
    return float((1.0 - u) ** 2 + 100.0 * (v - u ** 2) ** 2)


def check_powell_rosenbrock(faults):
    cfg = PowellConfig(x_tol=1e-10, f_tol=1e-14, max_iters=5000)
    result = powell_minimize(shifted_rosenbrock, np.array([0.2, 0.6]), cfg)
    error = float(np.max(np.abs(result.x - 0.75)))
    return error < 1e-4, f"max |x - 0.75| = {error:.1e}"


def check_grid_oracle(faults):
    env = _default_env(action_set=("H1", "H2"), q=2)
    grid_ratio, _ = grid_oracle(env, (0, 1), 129)
    rng = np.random.default_rng(11)
    starts = [np.full(2, 0.5)] + [rng.uniform(0, 1, 2) for _ in range(9)]
    solution = solve_durations(env, (0, 1), PowellConfig(), None, starts)
    ratio = solution.reward.clean_energy_ratio
    return ratio >= grid_ratio - 1e-3, f"powell {ratio:.6f} vs grid {grid_ratio:.6f}"


def check_cd_qaoa_oracle(faults):
    cfg = EnvConfig().model_copy(update={"action_set": ("H1", "H2", "Y"), "q": 2})
    baselines = BaselineSettings()
    best = exhaustive_sequence_search(QAOAEnvironment(cfg), baselines.inner_powell)
    hp = PPOHyperparams(batch_size=16, total_iters=40, learning_rate=0.05, eps_discrete=0.2,
                        entropy_temp=0.0, hidden_units=(8, 8), eval_every=40)
    result = cd_qaoa_train(cfg, hp, seed=0, baselines=baselines)
    ratio = result.best_greedy.clean_energy_ratio
    target = best.reward.clean_energy_ratio
    return ratio >= target - 1e-9, f"PPO-selected {ratio:.6f} vs exhaustive {target:.6f} {best.sequence}"


CHECKS: List[Tuple[str, str, CheckFn]] = [
    ("quantum-core", "unitarity", check_unitarity),
    ("quantum-core", "composition", check_composition),
    ("quantum-core", "energy conservation", check_energy_conservation),
    ("quantum-core", "eigenstate variance", check_eigenstate_variance),
    ("quantum-core", "ground-state bound", check_ground_state_bound),
    ("quantum-core", "ground-state sector", check_ground_state_sector),
    ("distributions", "density normalization", check_density_normalization),
    ("distributions", "analytic gradients", check_distribution_gradients),
    ("distributions", "categorical entropy", check_categorical_entropy),
    ("policy-net", "causality", check_causality),
    ("policy-net", "head normalization", check_head_normalization),
    ("policy-net", "path probabilities", check_path_probabilities),
    ("policy-net", "objective gradient", check_policy_gradient),
    ("ppo-trainer", "clipped term", check_clipped_term),
    ("ppo-trainer", "schedules", check_schedules),
    ("ppo-trainer", "two-arm bandit", check_bandit),
    ("baselines", "powell quadratic", check_powell_quadratic),
    ("baselines", "powell rosenbrock", check_powell_rosenbrock),
    ("baselines", "powell vs grid oracle", check_grid_oracle),
    ("baselines", "cd-qaoa vs enumeration", check_cd_qaoa_oracle),
]


def run_checks(faults: Optional[FrozenSet[str]] = None, only: Optional[List[str]] = None) -> pd.DataFrame:
    """
    Run the check table

    Args:
        faults: Fault injections to apply (see FAULTS)
        only: Restrict to these module names

    Returns:
        One row per check: module, check, passed, detail, seconds
    """
    faults = frozenset(faults or ())
    unknown = faults - set(FAULTS)
    if unknown:
        raise ConfigError(f"unknown fault injection {sorted(unknown)}; choose from {list(FAULTS)}")
    modules = list(dict.fromkeys(module for module, _, _ in CHECKS))
    unknown = set(only or ()) - set(modules)
    if unknown:
        raise ConfigError(f"unknown check module {sorted(unknown)}; choose from {modules}")
    results = []
    for module, name, fn in CHECKS:
        if only and module not in only:
            continue
        start = time.perf_counter()
        try:
            passed, detail = fn(faults)
        except Exception as e:
            logger.error(f"Error running check {module}/{name}: {e}")
            passed, detail = False, f"raised {type(e).__name__}: {e}"
        results.append(CheckResult(module, name, bool(passed), detail, time.perf_counter() - start))
    return pd.DataFrame([r.__dict__ for r in results])


def verify(faults: Optional[FrozenSet[str]] = None, only: Optional[List[str]] = None) -> pd.DataFrame:
    """Run the checks, print the table and raise VerificationError on any failure."""
    table = run_checks(faults, only)
    printable = table.assign(result=np.where(table["passed"], "PASS", "FAIL"))
    print(printable[["module", "check", "result", "detail", "seconds"]].to_string(index=False))
    failed = table[~table["passed"]]
    if not failed.empty:
        names = ", ".join(f"{m}/{c}" for m, c in zip(failed["module"], failed["check"]))
        raise VerificationError(f"{len(failed)} check(s) failed: {names}")
    return table
