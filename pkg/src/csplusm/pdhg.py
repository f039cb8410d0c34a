"""First-order primal-dual (Chambolle-Pock) solver and the proximal maps it needs.

Solves ``min_x max_r <Kx, r> + G(x) - F*(r)`` with the iteration::

    r    <- prox_{sigma F*}(r + sigma K xbar)
    x+   <- prox_{tau G}(x - tau K^H r)
    xbar <- x+ + theta (x+ - x)

Dual variables of stacked operators are tuples of arrays.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .core import SolverConfig, SolverError
from .operators import LinearOperator, norm, operator_norm

logger = logging.getLogger(__name__)

EPS = 1e-12
# power-method estimates sit slightly below the true norm
NORM_SAFETY = 1.01


# proximal maps

def soft_threshold(x: np.ndarray, t) -> np.ndarray:
    """prox of t*||.||_1; shrinks the complex modulus for complex input."""
    if np.iscomplexobj(x):
        mag = np.abs(x)
        scale = np.maximum(1.0 - t / np.maximum(mag, np.finfo(float).tiny), 0.0)
        return x * scale
    return np.sign(x) * np.maximum(np.abs(x) - t, 0.0)


def project_linf(r: np.ndarray, radius) -> np.ndarray:
    """Pointwise projection onto {|r| <= radius} (complex modulus if complex).

    This is the prox of the conjugate of radius*||.||_1.
    """
    if np.iscomplexobj(r):
        mag = np.abs(r)
        return r / np.maximum(1.0, mag / radius)
    return np.clip(r, -radius, radius)


def project_l2_ball(p: np.ndarray, radius, axis=-3) -> np.ndarray:
    """Pointwise projection of vectors along ``axis`` onto the ball of ``radius``.

    Dual of isotropic TV; for complex fields the norm runs over real and
    imaginary parts of every component.
    """
    mag = np.sqrt(np.sum(np.abs(p) ** 2, axis=axis, keepdims=True))
    return p / np.maximum(1.0, mag / radius)


def prox_quadratic_conj(r: np.ndarray, sigma: float, y: np.ndarray) -> np.ndarray:
    """prox of sigma*F* for F(z) = 1/2 ||z - y||^2."""
    return (r - sigma * y) / (1.0 + sigma)


def prox_identity(x, step):
    return x


def prox_nuclear(m: np.ndarray, t: float) -> np.ndarray:
    """Singular-value soft-threshold of a 2-D matrix."""
    u, s, vh = np.linalg.svd(m, full_matrices=False)
    s = np.maximum(s - t, 0.0)
    return (u * s) @ vh


# problem and result containers

@dataclass
class SaddleProblem:
    K: LinearOperator
    prox_g: Callable
    prox_fstar: Callable
    x0: np.ndarray
    r0: object
    objective: Optional[Callable] = None


@dataclass
class Trace:
    iteration: list = field(default_factory=list)
    primal_residual: list = field(default_factory=list)
    objective: list = field(default_factory=list)

    def __len__(self):
        return len(self.iteration)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "primal_residual", "objective"])
            for i, it in enumerate(self.iteration):
                obj = self.objective[i] if self.objective else ""
                w.writerow([it, repr(self.primal_residual[i]), repr(obj) if obj != "" else ""])


@dataclass
class SolveResult:
    x: np.ndarray
    r: object
    trace: Trace
    iterations: int
    converged: bool
    tau: float
    sigma: float


def _axpy(a, alpha, b):
    if isinstance(a, tuple):
        return tuple(_axpy(x, alpha, y) for x, y in zip(a, b))
    return a + alpha * b


def _copy(a):
    if isinstance(a, tuple):
        return tuple(x.copy() for x in a)
    return a.copy()


def _finite(a) -> bool:
    if isinstance(a, tuple):
        return all(_finite(x) for x in a)
    return bool(np.all(np.isfinite(a)))


def step_sizes(K: LinearOperator, cfg: SolverConfig, op_norm: float | None = None) -> tuple[float, float, float]:
    """Resolve (tau, sigma, ||K||) and enforce tau*sigma*||K||^2 <= 1."""
    if op_norm is None:
        op_norm = operator_norm(K, 100) * NORM_SAFETY
    if cfg.auto:
        step = 1.0 / op_norm if op_norm > 0 else 1.0
        tau = step if cfg.tau == "auto" else float(cfg.tau)
        sigma = step if cfg.sigma == "auto" else float(cfg.sigma)
    else:
        tau, sigma = float(cfg.tau), float(cfg.sigma)
    if tau * sigma * op_norm ** 2 > 1.0 + 1e-9:
        raise SolverError(f"step sizes violate tau*sigma*||K||^2 <= 1 "
                          f"(tau={tau:.4g}, sigma={sigma:.4g}, ||K||={op_norm:.4g})")
    return tau, sigma, op_norm


def solve(p: SaddleProblem, cfg: SolverConfig, op_norm: float | None = None) -> SolveResult:
    """Run the primal-dual iteration until the relative primal change drops below
    ``cfg.inner_tol`` or ``cfg.max_inner`` iterations.

    ``op_norm`` may supply a known upper bound on ||K|| to skip the power
    method. Raises :class:`SolverError` on a non-finite iterate.
    """
    tau, sigma, _ = step_sizes(p.K, cfg, op_norm)
    theta = cfg.theta
    x = np.array(p.x0, copy=True)
    r = _copy(p.r0)
    xbar = x.copy()
    trace = Trace()
    converged = False
    it = 0
    for it in range(1, cfg.max_inner + 1):
        r = p.prox_fstar(_axpy(r, sigma, p.K.apply(xbar)), sigma)
        x_new = p.prox_g(x - tau * p.K.adjoint(r), tau)
        if not (_finite(x_new) and _finite(r)):
            raise SolverError(f"non-finite iterate at iteration {it}")
        diff = x_new - x
        res = norm(diff) / max(norm(x), EPS)
        xbar = x_new + theta * diff
        x = x_new
        trace.iteration.append(it)
        trace.primal_residual.append(res)
        if p.objective is not None:
            trace.objective.append(float(p.objective(x)))
        if res < cfg.inner_tol:
            converged = True
            break
    logger.debug("pdhg stopped after %d iterations (residual %.3g)", it, trace.primal_residual[-1])
    return SolveResult(x, r, trace, it, converged, tau, sigma)
