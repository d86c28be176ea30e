"""
Bounded Powell direction-set minimization

Successive bounded line searches along a direction set, with the direction of
largest decrease replaced by the extrapolated net step when Powell's
replacement test passes. Line searches use scipy's bounded Brent method
restricted to the segment that keeps x inside the box.
"""

import logging
from dataclasses import dataclass
from typing import Callable, Optional, Tuple

import numpy as np
from scipy.optimize import minimize_scalar

from .config import PowellConfig

logger = logging.getLogger(__name__)


@dataclass
class PowellResult:
    x: np.ndarray
    fun: float
    nit: int
    nfev: int
    converged: bool
    max_iters_reached: bool


class _CountingObjective:
    def __init__(self, f: Callable[[np.ndarray], float]):
        self.f = f
        self.calls = 0

    def __call__(self, x: np.ndarray) -> float:
        self.calls += 1
        return float(self.f(x))


def line_bounds(x: np.ndarray, direction: np.ndarray, lower: np.ndarray,
                upper: np.ndarray) -> Tuple[float, float]:
    """Range of l such that lower <= x + l * direction <= upper."""
    nonzero = np.flatnonzero(direction)
    d = direction[nonzero]
    low = (lower[nonzero] - x[nonzero]) / d
    high = (upper[nonzero] - x[nonzero]) / d
    l_min = float(np.max(np.where(d > 0, low, high)))
    l_max = float(np.min(np.where(d > 0, high, low)))
    return (l_min, l_max) if l_max >= l_min else (0.0, 0.0)


def _line_search(f: _CountingObjective, x: np.ndarray, direction: np.ndarray, fval: float,
                 lower: np.ndarray, upper: np.ndarray, tol: float) -> Tuple[float, np.ndarray, np.ndarray]:
    """Minimize along direction inside the box; only a strict improvement moves x."""
    if not np.any(direction):
        return fval, x, direction
    l_min, l_max = line_bounds(x, direction, lower, upper)
    if l_max - l_min <= 0.0:
        return fval, x, np.zeros_like(direction)
    res = minimize_scalar(
        lambda step: f(np.clip(x + step * direction, lower, upper)),
        bounds=(l_min, l_max),
        method="bounded",
        options={"xatol": tol},
    )
    if res.fun < fval:
        step = res.x * direction
        return float(res.fun), np.clip(x + step, lower, upper), step
    return fval, x, np.zeros_like(direction)


def powell_minimize(f: Callable[[np.ndarray], float], x0: np.ndarray,
                    cfg: Optional[PowellConfig] = None) -> PowellResult:
    """
    Minimize f over the box [cfg.lower, cfg.upper]^dim

    Args:
        f: Objective taking a 1-D array
        x0: Starting point (clipped into the box)
        cfg: Tolerances, iteration budget (200 * dim when unset) and bounds

    Returns:
        PowellResult with the best point found; max_iters_reached flags an
        exhausted budget
    """
    cfg = cfg or PowellConfig()
    x = np.asarray(x0, dtype=float).flatten()
    dim = x.size
    lower = np.full(dim, cfg.lower)
    upper = np.full(dim, cfg.upper)
    x = np.clip(x, lower, upper)
    objective = _CountingObjective(f)
    budget = cfg.iteration_budget(dim)

    directions = np.eye(dim)
    fval = objective(x)
    if dim == 0:
        return PowellResult(x, fval, 0, objective.calls, True, False)

    x_start = x.copy()
    nit = 0
    converged = False
    while True:
        fx = fval
        big_index = 0
        delta = 0.0
        for i in range(dim):
            f_before = fval
            fval, x, _ = _line_search(objective, x, directions[i], fval, lower, upper, cfg.x_tol)
            if f_before - fval > delta:
                delta = f_before - fval
                big_index = i
        nit += 1

        if 2.0 * (fx - fval) <= cfg.f_tol * (abs(fx) + abs(fval)) + 1e-20:
            converged = True
            break
        if np.max(np.abs(x - x_start)) < cfg.x_tol:
            converged = True
            break
        if nit >= budget:
            break

        # Extrapolate along the net step of this sweep
        net = x - x_start
        x_start = x.copy()
        _, l_max = line_bounds(x, net, lower, upper)
        x_extra = x + min(l_max, 1.0) * net
        f_extra = objective(x_extra)
        if fx > f_extra:
            t = 2.0 * (fx + f_extra - 2.0 * fval) * (fx - fval - delta) ** 2
            t -= delta * (fx - f_extra) ** 2
            if t < 0.0:
                fval, x, step = _line_search(objective, x, net, fval, lower, upper, cfg.x_tol)
                if np.any(step):
                    directions[big_index] = directions[-1]
                    directions[-1] = step

    if not converged:
        logger.debug(f"Powell stopped after {nit} sweeps without meeting tolerances (f={fval:.6g})")
    return PowellResult(x, float(fval), nit, objective.calls, converged, not converged)
