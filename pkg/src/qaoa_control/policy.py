"""
Masked autoregressive hybrid policy

One network emits, for every protocol step j, a categorical distribution over
the generator set and the (kappa, xi) parameters of the duration distribution
at each candidate generator. Step j only sees the embedded actions of steps
1..j-1 (MADE-style masked dense layers), so the whole trajectory factorizes as
prod_j pi^d(a^d_j | s_j) pi^c(a^c_j | s_j, a^d_j).

Sampling runs in numpy on caller-supplied Generators; log-probabilities used
for training are recomputed in torch (float64) so that PPO can differentiate
them.
"""

import logging
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from . import distributions as dist
from .config import NUMERICS_CONFIG, RUNTIME_CONFIG, ContinuousFamily, PPOHyperparams
from .exceptions import ConfigError, DomainError, ProtocolError
from .seeding import torch_generator

logger = logging.getLogger(__name__)

DTYPE = torch.float64
LOG_XI_MIN = float(np.log(NUMERICS_CONFIG["xi_min"]))
LOG_XI_MAX = float(np.log(NUMERICS_CONFIG["xi_max"]))
DISCRETE_ONLY_VALUE = 1.0


@dataclass(frozen=True)
class HybridAction:
    """
    One protocol step: generator index and raw duration fraction

    The fraction lies in the open interval (0, 1). The single exception is
    DISCRETE_ONLY_VALUE (1.0), the placeholder carried by discrete-only
    policies whose durations are supplied later by an inner solver.
    """

    discrete: int
    continuous: float

    def __post_init__(self):
        if self.discrete < 0:
            raise DomainError(f"discrete action must be a nonnegative index, got {self.discrete}")
        if not (0.0 < self.continuous < 1.0 or self.continuous == DISCRETE_ONLY_VALUE):
            raise DomainError(f"continuous action {self.continuous} outside (0, 1) and not the discrete-only value")


@dataclass
class Trajectory:
    actions: List[HybridAction]
    log_prob_discrete: float
    log_prob_continuous: float
    inputs: np.ndarray = field(repr=False)


@dataclass
class Trajectories:
    """A batch of M sampled trajectories stored as (M, q) arrays."""

    discrete: np.ndarray
    continuous: np.ndarray
    log_prob_discrete: np.ndarray
    log_prob_continuous: np.ndarray
    n_actions: int

    def __len__(self) -> int:
        return self.discrete.shape[0]

    @property
    def q(self) -> int:
        return self.discrete.shape[1]

    @cached_property
    def inputs(self) -> np.ndarray:
        """Embedded actions x_1..x_q flattened to (M, q * |A^d|), built once per batch."""
        x = np.zeros((len(self), self.q, self.n_actions))
        rows, steps = np.indices(self.discrete.shape)
        x[rows, steps, self.discrete] = self.continuous
        return x.reshape(len(self), -1)

    def __getitem__(self, k: int) -> Trajectory:
        actions = [HybridAction(int(d), float(c)) for d, c in zip(self.discrete[k], self.continuous[k])]
        return Trajectory(
            actions=actions,
            log_prob_discrete=float(self.log_prob_discrete[k]),
            log_prob_continuous=float(self.log_prob_continuous[k]),
            inputs=self.inputs[k],
        )

    @classmethod
    def from_trajectories(cls, trajectories: Sequence[Trajectory], n_actions: int) -> "Trajectories":
        return cls(
            discrete=np.array([[a.discrete for a in t.actions] for t in trajectories], dtype=int),
            continuous=np.array([[a.continuous for a in t.actions] for t in trajectories], dtype=float),
            log_prob_discrete=np.array([t.log_prob_discrete for t in trajectories]),
            log_prob_continuous=np.array([t.log_prob_continuous for t in trajectories]),
            n_actions=n_actions,
        )

    def check_no_repeats(self) -> None:
        repeats = self.discrete[:, 1:] == self.discrete[:, :-1]
        if repeats.any():
            k, j = np.argwhere(repeats)[0]
            raise ProtocolError(f"trajectory {k} repeats generator {self.discrete[k, j]} at steps {j} and {j + 1}")


def embed(action: HybridAction, size: int) -> np.ndarray:
    """One-hot position a^d carrying the value a^c."""
    if not 0 <= action.discrete < size:
        raise DomainError(f"discrete action {action.discrete} out of range [0, {size})")
    x = np.zeros(size)
    x[action.discrete] = action.continuous
    return x


def positive_head(pre: torch.Tensor) -> torch.Tensor:
    """exp with the pre-activation and the result clamped into [1e-4, 10]."""
    value = torch.exp(torch.clamp(pre, LOG_XI_MIN, LOG_XI_MAX))
    return torch.clamp(value, NUMERICS_CONFIG["xi_min"], NUMERICS_CONFIG["xi_max"])


def step_masks(discrete: np.ndarray, n_actions: int) -> np.ndarray:
    """(M, q, |A^d|) allowed-action masks forbidding the previous generator."""
    allowed = np.ones(discrete.shape + (n_actions,), dtype=bool)
    rows, steps = np.indices((discrete.shape[0], discrete.shape[1] - 1))
    allowed[rows, steps + 1, discrete[:, :-1]] = False
    return allowed


class _ContinuousLogProb(torch.autograd.Function):
    """Continuous log-density whose backward uses the analytic score functions."""

    @staticmethod
    def forward(ctx, x, kappa, xi, family: str):
        x_np = x.detach().numpy()
        k_np = kappa.detach().numpy()
        xi_np = xi.detach().numpy()
        if family == ContinuousFamily.BETA.value:
            params = dist.BetaParams(k_np, xi_np)
            value = dist.beta_log_prob(x_np, params)
            d_kappa, d_xi = dist.beta_grad_log_prob(x_np, params)
        else:
            params = dist.SigmoidGaussianParams(k_np, xi_np)
            value = dist.sg_log_prob(x_np, params)
            d_kappa, d_xi = dist.sg_grad_log_prob(x_np, params)
        ctx.save_for_backward(torch.as_tensor(d_kappa, dtype=DTYPE), torch.as_tensor(d_xi, dtype=DTYPE))
        return torch.as_tensor(value, dtype=DTYPE)

    @staticmethod
    def backward(ctx, grad_output):
        d_kappa, d_xi = ctx.saved_tensors
        return None, grad_output * d_kappa, grad_output * d_xi, None


def continuous_log_prob(x: torch.Tensor, kappa: torch.Tensor, xi: torch.Tensor,
                        family: ContinuousFamily) -> torch.Tensor:
    return _ContinuousLogProb.apply(x, kappa, xi, ContinuousFamily(family).value)


class HybridPolicy(nn.Module):
    """
    Autoregressive hybrid policy interface

    Subclasses implement heads(x) mapping teacher-forced inputs (M, q*|A^d|) to
    normalized discrete log-probabilities z^p and duration parameters
    (kappa, xi), each of shape (M, q, |A^d|), with step j depending only on
    the inputs of steps < j.
    """

    kind = "hybrid"

    def __init__(self, n_actions: int, q: int, family: ContinuousFamily, continuous: bool = True):
        super().__init__()
        if n_actions < 2 and q > 1:
            raise DomainError("at least two generators are needed for protocols with more than one step")
        self.n_actions = n_actions
        self.q = q
        self.family = ContinuousFamily(family)
        self.continuous = continuous

    def heads(self, x: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        raise NotImplementedError

    def forward(self, x: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        return self.heads(x)

    def step_heads(self, prefix: Sequence[HybridAction]) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Head outputs (z^p, kappa, xi) at step j = len(prefix) + 1."""
        j = len(prefix)
        if j >= self.q:
            raise DomainError(f"prefix of length {j} leaves no step in a depth-{self.q} protocol")
        x = np.zeros((1, self.q, self.n_actions))
        for k, action in enumerate(prefix):
            x[0, k] = embed(action, self.n_actions)
        with torch.no_grad():
            z_p, kappa, xi = self.heads(torch.as_tensor(x.reshape(1, -1), dtype=DTYPE))
        return z_p[0, j].detach().numpy(), kappa[0, j].detach().numpy(), xi[0, j].detach().numpy()

    def sample(self, count: int, rng: np.random.Generator) -> Trajectories:
        """
        Ancestral sampling of a batch of trajectories

        Args:
            count: Number of trajectories M
            rng: Action random stream

        Returns:
            Trajectories with the log-probabilities accumulated while sampling
        """
        discrete = np.zeros((count, self.q), dtype=int)
        continuous = np.zeros((count, self.q))
        log_prob_d = np.zeros(count)
        log_prob_c = np.zeros(count)
        x = np.zeros((count, self.q, self.n_actions))
        rows = np.arange(count)
        for j in range(self.q):
            with torch.no_grad():
                z_p, kappa, xi = (t[:, j].numpy() for t in self.heads(torch.as_tensor(x.reshape(count, -1), dtype=DTYPE)))
            allowed = np.ones((count, self.n_actions), dtype=bool)
            if j > 0:
                allowed[rows, discrete[:, j - 1]] = False
            masked = dist.masked_log_probs(z_p, allowed)
            a_d = dist.categorical_sample_batch(z_p, allowed, rng)
            log_prob_d += masked[rows, a_d]
            if self.continuous:
                a_c, lp_c = self._sample_continuous(kappa[rows, a_d], xi[rows, a_d], rng)
                log_prob_c += lp_c
            else:
                a_c = np.full(count, DISCRETE_ONLY_VALUE)
            discrete[:, j] = a_d
            continuous[:, j] = a_c
            x[rows, j, a_d] = a_c
        return Trajectories(discrete, continuous, log_prob_d, log_prob_c, self.n_actions)

    def _sample_continuous(self, kappa: np.ndarray, xi: np.ndarray,
                           rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
        if self.family == ContinuousFamily.BETA:
            params = dist.BetaParams(kappa, xi)
            x = dist.beta_sample(params, rng)
            return x, dist.beta_log_prob(x, params)
        params = dist.SigmoidGaussianParams(kappa, xi)
        x = dist.sg_sample(params, rng)
        return x, dist.sg_log_prob(x, params)

    def sample_trajectory(self, rng: np.random.Generator) -> Trajectory:
        return self.sample(1, rng)[0]

    def log_prob(self, trajectories: Trajectories) -> Tuple[torch.Tensor, torch.Tensor]:
        """
        Differentiable summed log-probabilities of stored trajectories

        Args:
            trajectories: Batch to score (teacher forcing, one pass for all steps)

        Returns:
            (log pi^d, log pi^c), each of shape (M,)
        """
        trajectories.check_no_repeats()
        x = torch.as_tensor(trajectories.inputs, dtype=DTYPE)
        z_p, kappa, xi = self.heads(x)
        allowed = torch.as_tensor(step_masks(trajectories.discrete, self.n_actions))
        masked = torch.log_softmax(z_p.masked_fill(~allowed, float("-inf")), dim=-1)
        index = torch.as_tensor(trajectories.discrete, dtype=torch.long).unsqueeze(-1)
        log_prob_d = masked.gather(-1, index).squeeze(-1).sum(dim=-1)
        if not self.continuous:
            return log_prob_d, torch.zeros_like(log_prob_d)
        a_c = torch.as_tensor(trajectories.continuous, dtype=DTYPE)
        lp_c = continuous_log_prob(
            a_c, kappa.gather(-1, index).squeeze(-1), xi.gather(-1, index).squeeze(-1), self.family
        )
        return log_prob_d, lp_c.sum(dim=-1)

    def discrete_entropy(self, trajectories: Trajectories) -> torch.Tensor:
        """Exact per-trajectory sum of step entropies of the (unmasked) categorical heads."""
        # unmasked on purpose: sampling and log_prob mask the previous generator,
        # the bonus uses the full heads so its ceiling is q log|A^d|
        z_p, _, _ = self.heads(torch.as_tensor(trajectories.inputs, dtype=DTYPE))
        return torch.special.entr(torch.exp(z_p)).sum(dim=(-1, -2))

    def greedy_actions(self) -> List[HybridAction]:
        """Argmax generator (lowest index on ties) and the point estimate of the duration."""
        actions: List[HybridAction] = []
        for j in range(self.q):
            z_p, kappa, xi = self.step_heads(actions)
            allowed = np.ones(self.n_actions, dtype=bool)
            if actions:
                allowed[actions[-1].discrete] = False
            a_d = int(np.argmax(np.where(allowed, z_p, -np.inf)))
            if not self.continuous:
                a_c = DISCRETE_ONLY_VALUE
            elif self.family == ContinuousFamily.BETA:
                a_c = float(dist.beta_mean(dist.BetaParams(kappa[a_d], xi[a_d])))
            else:
                a_c = float(dist.sg_greedy(dist.SigmoidGaussianParams(kappa[a_d], xi[a_d])))
            actions.append(HybridAction(a_d, a_c))
        return actions

    def parameters_finite(self) -> bool:
        return all(bool(torch.isfinite(p).all()) for p in self.parameters())

    def dims(self) -> Dict[str, Any]:
        return {
            "n_actions": self.n_actions,
            "q": self.q,
            "family": self.family.value,
            "continuous": self.continuous,
        }


class MaskedLinear(nn.Linear):
    """Dense layer whose weight is multiplied by a fixed binary connectivity mask."""

    def __init__(self, in_features: int, out_features: int):
        super().__init__(in_features, out_features, bias=True, dtype=DTYPE)
        self.register_buffer("mask", torch.ones(out_features, in_features, dtype=DTYPE))

    def set_mask(self, mask: np.ndarray) -> None:
        """Accepts a mask of shape [out_features, in_features]."""
        self.mask.data.copy_(torch.as_tensor(mask, dtype=DTYPE))

    def forward(self, input: torch.Tensor) -> torch.Tensor:
        return F.linear(input, self.mask * self.weight, self.bias)


class AutoregressivePolicy(HybridPolicy):
    """
    MADE-style masked network with a categorical head and two continuous heads

    Hidden unit u of each base layer carries a degree in 1..q. A first-layer
    unit of degree d sees the inputs of steps < d, a second-layer unit of
    degree d sees first-layer units of degree <= d, and the heads of step j
    see second-layer units of degree <= j. Degree-1 units therefore only
    carry their bias, as does step 1.
    """

    kind = "autoregressive"

    def __init__(self, n_actions: int, q: int, hidden_units: Sequence[int] = (100, 100),
                 family: ContinuousFamily = ContinuousFamily.SIGMOID_GAUSSIAN, continuous: bool = True):
        super().__init__(n_actions, q, family, continuous)
        self.hidden_units = tuple(int(h) for h in hidden_units)
        n_in = n_out = q * n_actions
        h1, h2 = self.hidden_units
        self.layer1 = MaskedLinear(n_in, h1)
        self.layer2 = MaskedLinear(h1, h2)
        self.head_p = MaskedLinear(h2, n_out)
        self.head_kappa = MaskedLinear(h2, n_out)
        self.head_xi = MaskedLinear(h2, n_out)
        self._assign_masks()

    def _assign_masks(self) -> None:
        steps = np.arange(1, self.q + 1)
        in_degree = np.repeat(steps, self.n_actions)
        degree1 = np.arange(self.hidden_units[0]) % self.q + 1
        degree2 = np.arange(self.hidden_units[1]) % self.q + 1
        self.layer1.set_mask(in_degree[None, :] < degree1[:, None])
        self.layer2.set_mask(degree1[None, :] <= degree2[:, None])
        head_mask = degree2[None, :] <= in_degree[:, None]
        for head in (self.head_p, self.head_kappa, self.head_xi):
            head.set_mask(head_mask)

    def heads(self, x: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        y = torch.relu(self.layer2(torch.relu(self.layer1(x))))
        shape = (x.shape[0], self.q, self.n_actions)
        z_p = torch.log_softmax(self.head_p(y).reshape(shape), dim=-1)
        kappa_pre = self.head_kappa(y).reshape(shape)
        xi = positive_head(self.head_xi(y).reshape(shape))
        kappa = positive_head(kappa_pre) if self.family == ContinuousFamily.BETA else kappa_pre
        return z_p, kappa, xi

    def dims(self) -> Dict[str, Any]:
        return {**super().dims(), "hidden_units": list(self.hidden_units)}


def init_params(dims: Dict[str, Any], seed: int) -> AutoregressivePolicy:
    """
    Build an AutoregressivePolicy with deterministic initial weights

    Base layers are Glorot-uniform in +-sqrt(6 / (fan_in + fan_out)); all
    biases and the head weights start at zero, so the initial categorical
    heads are uniform and the duration heads give kappa = 0, xi = 1
    (kappa = xi = 1 for the Beta family).

    Args:
        dims: n_actions, q, hidden_units, family, continuous
        seed: Experiment seed (the "init" stream is derived from it)

    Returns:
        Freshly initialized policy
    """
    policy = AutoregressivePolicy(
        n_actions=dims["n_actions"],
        q=dims["q"],
        hidden_units=dims.get("hidden_units", (100, 100)),
        family=ContinuousFamily(dims.get("family", ContinuousFamily.SIGMOID_GAUSSIAN)),
        continuous=dims.get("continuous", True),
    )
    generator = torch_generator(seed, "init")
    with torch.no_grad():
        for layer in (policy.layer1, policy.layer2):
            fan_out, fan_in = layer.weight.shape
            bound = float(np.sqrt(6.0 / (fan_in + fan_out)))
            layer.weight.uniform_(-bound, bound, generator=generator)
            layer.bias.zero_()
        for head in (policy.head_p, policy.head_kappa, policy.head_xi):
            head.weight.zero_()
            head.bias.zero_()
    return policy


def make_optimizer(policy: nn.Module, hp: PPOHyperparams) -> torch.optim.Adam:
    return torch.optim.Adam(
        policy.parameters(), lr=hp.learning_rate, betas=tuple(hp.adam_betas), eps=hp.adam_eps
    )


def score_gradients(policy: HybridPolicy, trajectories: Trajectories, weights: np.ndarray,
                    entropy_coef: float = 0.0) -> Dict[str, torch.Tensor]:
    """
    Gradients of sum_k w_k (log pi^d + log pi^c) + entropy_coef * mean_k S^d

    Args:
        policy: Policy to differentiate
        trajectories: Batch of stored trajectories
        weights: One scalar weight per trajectory
        entropy_coef: Coefficient of the exact discrete entropy term

    Returns:
        Gradient for every named parameter (zeros where a parameter is unused)
    """
    weights = torch.as_tensor(np.asarray(weights, dtype=float), dtype=DTYPE)
    if weights.shape != (len(trajectories),):
        raise DomainError(f"expected {len(trajectories)} weights, got shape {tuple(weights.shape)}")
    log_prob_d, log_prob_c = policy.log_prob(trajectories)
    objective = (weights * (log_prob_d + log_prob_c)).sum()
    if entropy_coef:
        objective = objective + entropy_coef * policy.discrete_entropy(trajectories).mean()
    named = list(policy.named_parameters())
    grads = torch.autograd.grad(objective, [p for _, p in named], allow_unused=True)
    return {
        name: (g if g is not None else torch.zeros_like(p))
        for (name, p), g in zip(named, grads)
    }


def adam_step(policy: nn.Module, grads: Dict[str, torch.Tensor], optimizer: torch.optim.Optimizer,
              lr: float) -> None:
    """Ascent step: Adam descends on the negated gradients of a maximized objective."""
    params = dict(policy.named_parameters())
    for name, grad in grads.items():
        if name not in params:
            raise DomainError(f"gradient for unknown parameter '{name}'")
        if grad.shape != params[name].shape:
            raise DomainError(f"gradient shape {tuple(grad.shape)} does not match parameter '{name}'")
        params[name].grad = -grad.detach().clone()
    for group in optimizer.param_groups:
        group["lr"] = lr
    optimizer.step()
    optimizer.zero_grad(set_to_none=True)


# Checkpoints

def save_checkpoint(path: Union[str, Path], policy: HybridPolicy,
                    optimizer: Optional[torch.optim.Optimizer] = None,
                    extra: Optional[Dict[str, Any]] = None) -> Path:
    """Write policy dims and weights, optimizer state and any extra training state."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "schema_version": RUNTIME_CONFIG["schema_version"],
        "kind": policy.kind,
        "dims": policy.dims(),
        "state_dict": policy.state_dict(),
        "optimizer": optimizer.state_dict() if optimizer is not None else None,
        "extra": extra or {},
    }
    try:
        torch.save(payload, path)
    except Exception as e:
        logger.error(f"Error writing checkpoint {path}: {e}")
        raise
    return path


def load_checkpoint(path: Union[str, Path]) -> Dict[str, Any]:
    """
    Read a checkpoint written by save_checkpoint

    Returns:
        The raw payload; use restore_policy to rebuild the policy
    """
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"checkpoint not found: {path}")
    payload = torch.load(path, map_location="cpu", weights_only=False)
    version = payload.get("schema_version")
    if version != RUNTIME_CONFIG["schema_version"]:
        raise ConfigError(f"checkpoint schema version {version} is not supported")
    return payload


def restore_policy(payload: Dict[str, Any]) -> HybridPolicy:
    from .baselines import PGQAOAPolicy

    dims = payload["dims"]
    if payload["kind"] == AutoregressivePolicy.kind:
        policy: HybridPolicy = AutoregressivePolicy(
            dims["n_actions"], dims["q"], dims["hidden_units"], ContinuousFamily(dims["family"]), dims["continuous"]
        )
    elif payload["kind"] == PGQAOAPolicy.kind:
        policy = PGQAOAPolicy(dims["n_actions"], dims["q"], ContinuousFamily(dims["family"]), dims["sequence"])
    else:
        raise ConfigError(f"unknown policy kind '{payload['kind']}' in checkpoint")
    policy.load_state_dict(payload["state_dict"])
    return policy
