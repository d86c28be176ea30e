"""
Action distributions for the hybrid policy

Discrete actions use a masked categorical distribution; durations use a
Sigmoid-Gaussian or a Beta distribution on (0, 1). Every function accepts
scalars or broadcastable numpy arrays.
"""

import logging
from dataclasses import dataclass
from typing import Optional, Tuple, Union

import numpy as np
from scipy import special

from .config import NUMERICS_CONFIG
from .exceptions import DomainError

logger = logging.getLogger(__name__)

ArrayLike = Union[float, np.ndarray]

UNIT_CLAMP = NUMERICS_CONFIG["unit_clamp"]
LOG_2PI = float(np.log(2.0 * np.pi))


def clamp_unit(x: ArrayLike) -> np.ndarray:
    """Clamp into [1e-6, 1 - 1e-6] so logit and log stay finite."""
    return np.clip(x, UNIT_CLAMP, 1.0 - UNIT_CLAMP)


def sigmoid(x: ArrayLike) -> np.ndarray:
    return special.expit(x)


def logit(x: ArrayLike) -> np.ndarray:
    return special.logit(x)


def _check_open_unit(x: ArrayLike) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if np.any(~np.isfinite(x)) or np.any(x <= 0.0) or np.any(x >= 1.0):
        raise DomainError("continuous action must lie strictly inside (0, 1)")
    return x


def _check_positive(name: str, value: ArrayLike) -> np.ndarray:
    value = np.asarray(value, dtype=float)
    if np.any(~(value > 0.0)):
        raise DomainError(f"{name} must be positive")
    return value


# Special functions

def log_gamma(x: ArrayLike) -> np.ndarray:
    return special.gammaln(_check_positive("log_gamma argument", x))


def digamma(x: ArrayLike) -> np.ndarray:
    return special.digamma(_check_positive("digamma argument", x))


# Categorical

@dataclass
class CategoricalParams:
    """Normalized log-probabilities over the discrete action set."""

    log_probs: np.ndarray

    def __post_init__(self):
        self.log_probs = np.asarray(self.log_probs, dtype=float)
        total = special.logsumexp(self.log_probs)
        if abs(total) > 1e-8:
            raise DomainError(f"log_probs are not normalized (logsumexp = {total:.3e})")

    @classmethod
    def from_logits(cls, logits: np.ndarray) -> "CategoricalParams":
        logits = np.asarray(logits, dtype=float)
        return cls(logits - special.logsumexp(logits))

    @property
    def probs(self) -> np.ndarray:
        return np.exp(self.log_probs)


def masked_log_probs(log_probs: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Restrict to entries where mask is True and renormalize (last axis)."""
    log_probs = np.asarray(log_probs, dtype=float)
    mask = np.asarray(mask, dtype=bool)
    if np.any(~mask.any(axis=-1)):
        raise DomainError("every categorical entry is masked")
    restricted = np.where(mask, log_probs, -np.inf)
    return restricted - special.logsumexp(restricted, axis=-1, keepdims=True)


def categorical_sample_batch(log_probs: np.ndarray, mask: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """
    Draw one index per row by inverse-CDF sampling

    Args:
        log_probs: (M, K) normalized log-probabilities
        mask: (M, K) booleans, True where the action is allowed
        rng: Random stream (one uniform draw per row)

    Returns:
        (M,) integer indices
    """
    probs = np.exp(masked_log_probs(log_probs, mask))
    cdf = np.cumsum(probs, axis=-1)
    u = rng.random(probs.shape[0]) * cdf[:, -1]
    indices = (cdf <= u[:, None]).sum(axis=-1)
    # Zero-probability tails can never be selected
    allowed_last = probs.shape[1] - 1 - np.argmax((probs > 0)[:, ::-1], axis=-1)
    return np.minimum(indices, allowed_last)


def categorical_sample(p: CategoricalParams, mask: Optional[np.ndarray], rng: np.random.Generator) -> int:
    if mask is None:
        mask = np.ones_like(p.log_probs, dtype=bool)
    return int(categorical_sample_batch(p.log_probs[None, :], np.asarray(mask)[None, :], rng)[0])


def categorical_entropy(p: Union[CategoricalParams, np.ndarray]) -> float:
    """Exact entropy -sum_k exp(z[k]) z[k] of normalized log-probabilities."""
    log_probs = p.log_probs if isinstance(p, CategoricalParams) else np.asarray(p, dtype=float)
    return float(special.entr(np.exp(log_probs)).sum())


# Sigmoid-Gaussian

@dataclass
class SigmoidGaussianParams:
    """Gaussian N(kappa, xi^2) pushed through the sigmoid."""

    kappa: ArrayLike
    xi: ArrayLike

    def __post_init__(self):
        _check_positive("xi", self.xi)


def sg_log_prob(x: ArrayLike, p: SigmoidGaussianParams) -> np.ndarray:
    x = _check_open_unit(x)
    z = (logit(x) - p.kappa) / p.xi
    return -np.log(p.xi) - 0.5 * LOG_2PI - 0.5 * z ** 2 - np.log(x * (1.0 - x))


def sg_grad_log_prob(x: ArrayLike, p: SigmoidGaussianParams) -> Tuple[np.ndarray, np.ndarray]:
    """Analytic (d/dkappa, d/dxi) of sg_log_prob."""
    x = _check_open_unit(x)
    r = logit(x) - p.kappa
    xi = np.asarray(p.xi, dtype=float)
    return r / xi ** 2, -1.0 / xi + r ** 2 / xi ** 3


def sg_sample(p: SigmoidGaussianParams, rng: np.random.Generator, size=None) -> np.ndarray:
    z = rng.standard_normal(size if size is not None else np.shape(p.kappa))
    return clamp_unit(sigmoid(p.kappa + p.xi * z))


def sg_greedy(p: SigmoidGaussianParams) -> np.ndarray:
    """Median of the distribution, sigmoid(kappa)."""
    return clamp_unit(sigmoid(p.kappa))


# Beta

@dataclass
class BetaParams:
    kappa: ArrayLike
    xi: ArrayLike

    def __post_init__(self):
        _check_positive("kappa", self.kappa)
        _check_positive("xi", self.xi)


def beta_log_prob(x: ArrayLike, p: BetaParams) -> np.ndarray:
    x = _check_open_unit(x)
    a = _check_positive("kappa", p.kappa)
    b = _check_positive("xi", p.xi)
    return (
        special.gammaln(a + b) - special.gammaln(a) - special.gammaln(b)
        + (a - 1.0) * np.log(x) + (b - 1.0) * np.log1p(-x)
    )


def beta_grad_log_prob(x: ArrayLike, p: BetaParams) -> Tuple[np.ndarray, np.ndarray]:
    """Analytic (d/dkappa, d/dxi) of beta_log_prob via the digamma function."""
    x = _check_open_unit(x)
    a = _check_positive("kappa", p.kappa)
    b = _check_positive("xi", p.xi)
    common = special.digamma(a + b)
    return common - special.digamma(a) + np.log(x), common - special.digamma(b) + np.log1p(-x)


def beta_sample(p: BetaParams, rng: np.random.Generator, size=None) -> np.ndarray:
    """Gamma-variate Beta draws (numpy's Marsaglia-Tsang gamma sampler)."""
    a = _check_positive("kappa", p.kappa)
    b = _check_positive("xi", p.xi)
    return clamp_unit(rng.beta(a, b, size=size))


def beta_mean(p: BetaParams) -> np.ndarray:
    return clamp_unit(np.asarray(p.kappa) / (np.asarray(p.kappa) + np.asarray(p.xi)))


def beta_entropy(p: BetaParams) -> np.ndarray:
    a = _check_positive("kappa", p.kappa)
    b = _check_positive("xi", p.xi)
    return (
        special.betaln(a, b)
        - (a - 1.0) * special.digamma(a)
        - (b - 1.0) * special.digamma(b)
        + (a + b - 2.0) * special.digamma(a + b)
    )
