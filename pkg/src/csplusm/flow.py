"""TV-L1 optical flow between consecutive frames.

For each frame pair the flow minimizes

    ||grad(u_k) . v + (u_{k+1} - u_k)||_1 + weight * sum_l TV(v_l)

with isotropic TV on each of the two flow components. Both terms are
dualized, so the primal-dual iteration only needs projections. There is no
pyramid and no warping: the linearized constraint is solved as is, which
limits reliable displacements to roughly a pixel or two per frame.

Sign convention: ``v`` points along the apparent motion from frame k to k+1,
so a pattern shifted by +1 column gives v_x close to +1.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .core import DataError, FlowField, ImageSequence, ModelParams, SolverConfig
from .operators import LinearOperator, div, flow_data_operator, grad, operator_norm, stack
from .pdhg import NORM_SAFETY, SaddleProblem, project_l2_ball, solve

# tau / sigma ratio for automatic steps; the data block is much weaker than
# the gradient block and a larger dual step converges markedly faster
STEP_RATIO = 0.3


def normalize_pair(u0: np.ndarray, u1: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Map both frames to [0, 1] with one shared affine transform (batched on axis 0)."""
    u0 = np.asarray(u0, dtype=np.float64)
    u1 = np.asarray(u1, dtype=np.float64)
    axes = tuple(range(-2, 0))
    lo = np.minimum(u0.min(axis=axes, keepdims=True), u1.min(axis=axes, keepdims=True))
    hi = np.maximum(u0.max(axis=axes, keepdims=True), u1.max(axis=axes, keepdims=True))
    span = hi - lo
    span = np.where(span > 0, span, 1.0)
    return (u0 - lo) / span, (u1 - lo) / span


def flow_energy(u0: np.ndarray, u1: np.ndarray, v: np.ndarray, weight: float) -> float:
    """Flow objective for frames taken as given (no normalization).

    ``v`` has shape (..., 2, H, W) matching ``u0``/``u1`` of shape (..., H, W).
    """
    g = grad(u0)
    resid = g[..., 0, :, :] * v[..., 0, :, :] + g[..., 1, :, :] * v[..., 1, :, :] + (u1 - u0)
    gv = grad(v)
    tv = np.sum(np.sqrt(np.sum(gv ** 2, axis=-3)))
    return float(np.sum(np.abs(resid)) + weight * tv)


@dataclass
class FlowState:
    """Primal and dual iterates kept between calls for warm starts."""

    v: np.ndarray
    r: tuple


def _flow_operator(g: np.ndarray) -> LinearOperator:
    vshape = g.shape
    tshape = vshape[:2] + (2,) + vshape[2:]
    kg = LinearOperator(grad, lambda p: -div(p), vshape, tshape, np.float64, "grad")
    return stack(flow_data_operator(g), kg)


def solve_flow(u0: np.ndarray, u1: np.ndarray, weight: float, cfg: SolverConfig,
               state: FlowState | None = None, normalize: bool = True):
    """Batched flow solve for frame pairs u0[i] -> u1[i], arrays (P, H, W).

    Pairs are independent terms of one separable objective; they share step
    sizes and a stopping test. Returns (v of shape (P, 2, H, W), FlowState,
    SolveResult).
    """
    if not weight > 0:
        raise DataError(f"flow regularization weight must be positive, got {weight}")
    u0 = np.asarray(u0, dtype=np.float64)
    u1 = np.asarray(u1, dtype=np.float64)
    if u0.shape != u1.shape:
        raise DataError(f"frame shapes differ: {u0.shape} vs {u1.shape}")
    if u0.ndim != 3 or u0.shape[1] < 2 or u0.shape[2] < 2:
        raise DataError(f"flow needs (pairs, H>=2, W>=2) frames, got {u0.shape}")
    if normalize:
        u0, u1 = normalize_pair(u0, u1)
    g = grad(u0)
    ut = u1 - u0
    K = _flow_operator(g)
    p, _, h, w = g.shape

    def prox_fstar(r, sigma):
        rd, rg = r
        return np.clip(rd + sigma * ut, -1.0, 1.0), project_l2_ball(rg, weight, axis=-3)

    if state is None:
        v0 = np.zeros(g.shape)
        r0 = (np.zeros((p, h, w)), np.zeros((p, 2, 2, h, w)))
    else:
        v0, r0 = state.v, state.r
    op_norm = None
    if cfg.auto:
        op_norm = operator_norm(K, 100) * NORM_SAFETY
        if cfg.tau == "auto" and cfg.sigma == "auto":
            cfg = replace(cfg, tau=STEP_RATIO / op_norm, sigma=1.0 / (STEP_RATIO * op_norm))
    prob = SaddleProblem(K, lambda x, tau: x, prox_fstar, v0, r0)
    res = solve(prob, cfg, op_norm)
    return res.x, FlowState(res.x, res.r), res


def estimate_flow_pair(u_k: np.ndarray, u_k1: np.ndarray, weight: float,
                       cfg: SolverConfig = SolverConfig()) -> np.ndarray:
    """Flow from frame ``u_k`` to ``u_k1`` (real 2-D arrays), shape (2, H, W)."""
    u_k = np.asarray(u_k)
    u_k1 = np.asarray(u_k1)
    if np.iscomplexobj(u_k) or np.iscomplexobj(u_k1):
        raise DataError("flow is estimated on real (magnitude) frames")
    if u_k.ndim != 2:
        raise DataError(f"expected a 2-D frame, got shape {u_k.shape}")
    v, _, _ = solve_flow(u_k[None], u_k1[None], weight, cfg)
    return v[0]


def estimate_flow(u: ImageSequence, params: ModelParams, cfg: SolverConfig = SolverConfig(),
                  state: FlowState | None = None, return_state: bool = False):
    """Flow for every consecutive pair of ``|u|`` with weight delta/beta."""
    if u.frames < 2:
        raise DataError("flow estimation needs at least two frames")
    if not params.beta > 0:
        raise DataError("flow weight delta/beta needs beta > 0")
    mag = np.abs(u.data)
    v, new_state, _ = solve_flow(mag[:-1], mag[1:], params.delta / params.beta, cfg, state)
    ff = FlowField.from_components(v)
    if return_state:
        return ff, new_state
    return ff
