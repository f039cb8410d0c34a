"""Reconstruction methods: zero-filling, TV compressed sensing, the joint
reconstruction/motion model (CS+M) and the low-rank plus sparse baseline.

The joint model minimizes, over the complex sequence u and the flow v,

    sum_k 1/2 ||A_k u_k - y_k||^2 + gamma TV(u_k)
        + delta sum_pairs sum_l TV(v_l)
        + beta  sum_pairs ||grad(u_k) . v_k + u_{k+1} - u_k||_1

by alternating an image solve (all frames jointly, flow frozen) with a flow
solve on the magnitude images (image frozen). Both sub-problems use the
primal-dual solver in :mod:`csplusm.pdhg`.
"""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
import scipy.fft as sfft

from .core import (CoilMaps, DataError, FlowField, ImageSequence, KSpaceData, ModelParams,
                   SamplingMask, SolverConfig)
from .flow import FlowState, solve_flow
from .operators import (LinearOperator, div, grad, ifft2c, make_encoding, motion_adjoint,
                        motion_apply, norm, operator_norm, stack)
from .pdhg import (NORM_SAFETY, SaddleProblem, project_l2_ball, project_linf, prox_nuclear,
                   prox_quadratic_conj, soft_threshold, solve)

logger = logging.getLogger(__name__)

METHODS = ("zerofill", "cs", "ls", "csm")


@dataclass
class ReconResult:
    image: ImageSequence
    flow: Optional[FlowField] = None
    objective_trace: list = field(default_factory=list)
    d_error_trace: list = field(default_factory=list)
    wall_trace: list = field(default_factory=list)
    inner_iters: list = field(default_factory=list)
    outer_iters: int = 0
    wall_time: float = 0.0
    components: dict = field(default_factory=dict)

    def trace_rows(self) -> list[dict]:
        rows = []
        for i, obj in enumerate(self.objective_trace):
            rows.append({
                "outer_iter": i + 1,
                "objective": obj,
                "d_error": self.d_error_trace[i] if i < len(self.d_error_trace) else "",
                "wall_time": self.wall_trace[i] if i < len(self.wall_trace) else "",
            })
        return rows

    def trace_to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=["outer_iter", "objective", "d_error", "wall_time"])
            w.writeheader()
            for row in self.trace_rows():
                w.writerow(row)


def _check_dims(y: KSpaceData, maps: CoilMaps, mask: Optional[SamplingMask] = None) -> None:
    if maps.data.shape[1:] != y.data.shape[2:]:
        raise DataError(f"coil maps {maps.data.shape} do not match k-space {y.data.shape}")
    if maps.coils != y.coils:
        raise DataError(f"k-space has {y.coils} coils, maps have {maps.coils}")
    if mask is not None and mask.data.shape != y.mask.data.shape:
        raise DataError(f"mask {mask.data.shape} does not match k-space {y.data.shape}")


# simple reconstructions

def zero_fill(y: KSpaceData, maps: CoilMaps) -> ImageSequence:
    """Adjoint of the encoding applied to the zero-filled k-space."""
    _check_dims(y, maps)
    img = ifft2c(y.data * y.mask.data[:, None])
    return ImageSequence(np.sum(np.conj(maps.data)[None] * img, axis=1))


def gold_standard(y_full: KSpaceData, maps: Optional[CoilMaps] = None) -> ImageSequence:
    """Sum-of-squares combination sqrt(sum_c |F^-1 y_c|^2) of fully sampled data."""
    if not np.all(y_full.mask.data == 1):
        raise DataError("gold standard needs fully sampled k-space")
    if maps is not None:
        _check_dims(y_full, maps)
    coil_imgs = ifft2c(y_full.data)
    return ImageSequence(np.sqrt(np.sum(np.abs(coil_imgs) ** 2, axis=1)))


# objective pieces

def tv(u: np.ndarray) -> float:
    """Isotropic TV summed over all leading axes (complex modulus for complex input)."""
    g = grad(u)
    return float(np.sum(np.sqrt(np.sum(np.abs(g) ** 2, axis=-3))))


def _objective_terms(enc, yr: np.ndarray, u: np.ndarray, v: Optional[np.ndarray],
                     params: ModelParams) -> dict:
    res = enc.apply(u) - yr
    terms = {
        "data": 0.5 * float(np.vdot(res, res).real),
        "tv_u": params.gamma * tv(u),
        "tv_v": 0.0,
        "motion": 0.0,
    }
    if u.shape[0] >= 2:
        if v is None:
            v = np.zeros((u.shape[0] - 1, 2) + u.shape[1:])
        # TV per flow component: the component axis stays a leading axis
        terms["tv_v"] = params.delta * tv(v)
        terms["motion"] = params.beta * float(np.sum(np.abs(motion_apply(u, v))))
    return terms


def _objective(enc, yr, u, v, params) -> float:
    return float(sum(_objective_terms(enc, yr, u, v, params).values()))


def objective_eq7(u: ImageSequence, v: Optional[FlowField], y: KSpaceData, maps: CoilMaps,
                  mask: SamplingMask, params: ModelParams) -> float:
    """Value of the joint objective at (u, v); ``v=None`` means zero flow."""
    _check_dims(y, maps, mask)
    if u.shape != mask.data.shape:
        raise DataError(f"image {u.shape} does not match mask {mask.data.shape}")
    enc = make_encoding(maps.data, mask.data)
    yr = enc.to_range(y.data)
    comps = None if v is None else v.components()
    if comps is not None and comps.shape != (u.frames - 1, 2, u.height, u.width):
        raise DataError(f"flow {v.data.shape} does not match image {u.shape}")
    return _objective(enc, yr, np.asarray(u.data, dtype=np.complex128), comps, params)


# image sub-problem

def _regularizer_norm(shape: tuple, v: Optional[np.ndarray]) -> float:
    """Power-method norm of [grad; motion(v)] (or grad alone) on real inputs.

    The operators have real coefficients, so the real restriction has the
    same norm as the complex operator.
    """
    g = LinearOperator(grad, lambda p: -div(p), shape, (shape[0], 2) + shape[1:], np.float64)
    if v is None:
        op = g
    else:
        m = LinearOperator(lambda u: motion_apply(u, v), lambda r: motion_adjoint(r, v),
                           shape, (shape[0] - 1,) + shape[1:], np.float64)
        op = stack(g, m)
    return operator_norm(op, 100)


def _image_norm(enc_norm: float, shape: tuple, v: Optional[np.ndarray]) -> float:
    # ||[A; B]||^2 <= ||A||^2 + ||B||^2
    return float(np.sqrt(enc_norm ** 2 + _regularizer_norm(shape, v) ** 2)) * NORM_SAFETY


def _solve_image(enc, yr, gamma: float, beta: float, v: Optional[np.ndarray], cfg: SolverConfig,
                 x0: np.ndarray, r0: Optional[tuple], enc_norm: float = 1.0):
    """Image sub-problem with the flow frozen; motion block dropped when beta == 0."""
    shape = enc.shape
    use_motion = beta > 0 and shape[0] >= 2
    if use_motion and v is None:
        v = np.zeros((shape[0] - 1, 2) + shape[1:])
    blocks = [enc.operator(),
              LinearOperator(grad, lambda p: -div(p), shape, (shape[0], 2) + shape[1:],
                             np.complex128, "grad")]
    if use_motion:
        blocks.append(LinearOperator(lambda u: motion_apply(u, v), lambda r: motion_adjoint(r, v),
                                     shape, (shape[0] - 1,) + shape[1:], np.complex128, "M"))
    K = stack(*blocks)

    def prox_fstar(r, sigma):
        out = [prox_quadratic_conj(r[0], sigma, yr), project_l2_ball(r[1], gamma, axis=-3)]
        if use_motion:
            out.append(project_linf(r[2], beta))
        return tuple(out)

    if r0 is None or len(r0) != len(blocks):
        r0 = tuple(np.zeros(s, dtype=np.complex128) for s in K.out_shape)
    op_norm = _image_norm(enc_norm, shape, v if use_motion else None) if cfg.auto else None
    prob = SaddleProblem(K, lambda x, tau: x, prox_fstar, x0, r0)
    return solve(prob, cfg, op_norm)


def reconstruct_cs(y: KSpaceData, maps: CoilMaps, mask: Optional[SamplingMask] = None,
                   gamma: float = 0.05, cfg: SolverConfig = SolverConfig()) -> ReconResult:
    """TV-regularized least squares, 1/2||Au - y||^2 + gamma TV(u), per frame.

    Frames do not interact, so they are solved together as one separable
    problem.
    """
    if not gamma > 0:
        raise DataError("gamma must be positive")
    mask = mask if mask is not None else y.mask
    _check_dims(y, maps, mask)
    t0 = time.perf_counter()
    enc = make_encoding(maps.data, mask.data)
    yr = enc.to_range(y.data)
    x0 = np.zeros(enc.shape, dtype=np.complex128)
    res = _solve_image(enc, yr, gamma, 0.0, None, cfg, x0, None)
    wall = time.perf_counter() - t0
    params = ModelParams(gamma=gamma, beta=0.0, delta=0.0)
    obj = _objective(enc, yr, res.x, None, params)
    return ReconResult(ImageSequence(res.x), None, [obj], [], [wall], [res.iterations], 1, wall)


def _abs_diff(a: np.ndarray, b: np.ndarray, normalize: bool) -> float:
    d = np.abs(a - b)
    return float(d.mean() if normalize else d.sum())


def reconstruct_csm(y: KSpaceData, maps: CoilMaps, mask: Optional[SamplingMask] = None,
                    params: ModelParams = ModelParams(), cfg: SolverConfig = SolverConfig(),
                    flow_cfg: Optional[SolverConfig] = None) -> ReconResult:
    """Alternating image / flow minimization of the joint objective.

    Starts from u = 0, v = 0 and repeats: image solve with the flow frozen,
    then flow solve on |u| with weight delta/beta, until the change
    ``d_error`` (mean absolute change of u plus that of v) drops to
    ``params.zeta_stop`` or ``params.max_outer`` sweeps are done.

    Each sub-solve is warm-started from the previous primal and dual
    iterates. A sub-solve result that would raise the joint objective is
    discarded, so the recorded objective never increases. With
    ``beta == 0`` the image problem does not depend on the flow: one sweep
    solves it, the flow stays zero and the loop ends.
    """
    mask = mask if mask is not None else y.mask
    _check_dims(y, maps, mask)
    if y.frames < 2:
        raise DataError("the joint model needs at least two frames")
    flow_cfg = flow_cfg or cfg
    t0 = time.perf_counter()
    enc = make_encoding(maps.data, mask.data)
    yr = enc.to_range(y.data)
    shape = enc.shape
    u = np.zeros(shape, dtype=np.complex128)
    v = np.zeros((shape[0] - 1, 2) + shape[1:])
    r_img = None
    flow_state: Optional[FlowState] = None
    obj = _objective(enc, yr, u, v, params)
    result = ReconResult(ImageSequence(u))
    for outer in range(1, params.max_outer + 1):
        u_prev, v_prev = u, v
        res = _solve_image(enc, yr, params.gamma, params.beta, v, cfg, u, r_img)
        cand = _objective(enc, yr, res.x, v, params)
        if cand <= obj:
            u, obj, r_img = res.x, cand, res.r
        else:
            logger.info("outer %d: image step raised the objective (%.6g > %.6g), kept previous u",
                        outer, cand, obj)
        inner = res.iterations
        if params.beta > 0:
            if params.delta > 0:
                mag = np.abs(u)
                v_new, new_state, fres = solve_flow(mag[:-1], mag[1:], params.delta / params.beta,
                                                    flow_cfg, flow_state)
                cand = _objective(enc, yr, u, v_new, params)
                if cand <= obj:
                    v, obj, flow_state = v_new, cand, new_state
                else:
                    logger.info("outer %d: flow step raised the objective, kept previous flow", outer)
                inner = (inner, fres.iterations)
        d_error = (_abs_diff(u, u_prev, params.normalize_derror)
                   + _abs_diff(v, v_prev, params.normalize_derror))
        result.objective_trace.append(obj)
        result.d_error_trace.append(d_error)
        result.wall_trace.append(time.perf_counter() - t0)
        result.inner_iters.append(inner)
        result.outer_iters = outer
        logger.info("outer %d: objective %.8g, d_error %.3g", outer, obj, d_error)
        if params.beta == 0 or d_error <= params.zeta_stop:
            break
    result.image = ImageSequence(u)
    result.flow = FlowField.from_components(v)
    result.wall_time = time.perf_counter() - t0
    return result


# low-rank plus sparse baseline

def _tfft(x: np.ndarray) -> np.ndarray:
    return sfft.fft(x, axis=0, norm="ortho")


def _itfft(x: np.ndarray) -> np.ndarray:
    return sfft.ifft(x, axis=0, norm="ortho")


def default_ls_lambdas(y: KSpaceData, maps: CoilMaps, mask: Optional[SamplingMask] = None,
                       rel_L: float = 0.003, rel_S: float = 0.01) -> tuple[float, float]:
    """lambda_L = rel_L * ||M||_2 (Casorati of A^H y), lambda_S = rel_S * max|A^H y|."""
    mask = mask if mask is not None else y.mask
    enc = make_encoding(maps.data, mask.data)
    m0 = enc.adjoint(enc.to_range(y.data))
    t = m0.shape[0]
    spec = np.linalg.norm(m0.reshape(t, -1).T, 2)
    return rel_L * float(spec), rel_S * float(np.max(np.abs(m0)))


def reconstruct_ls(y: KSpaceData, maps: CoilMaps, mask: Optional[SamplingMask] = None,
                   lambda_L: Optional[float] = None, lambda_S: Optional[float] = None,
                   cfg: SolverConfig = SolverConfig()) -> ReconResult:
    """Low-rank plus sparse decomposition by iterative soft-thresholding.

    L is thresholded in the singular values of the space x time Casorati
    matrix, S in the temporal Fourier domain; each sweep ends with a
    gradient step on the data term. Stops when the relative change of
    L + S drops below ``cfg.inner_tol``.
    """
    mask = mask if mask is not None else y.mask
    _check_dims(y, maps, mask)
    t0 = time.perf_counter()
    if lambda_L is None or lambda_S is None:
        dl, ds = default_ls_lambdas(y, maps, mask)
        lambda_L = dl if lambda_L is None else lambda_L
        lambda_S = ds if lambda_S is None else lambda_S
    if not (lambda_L > 0 and lambda_S > 0):
        raise DataError("L+S thresholds must be positive")
    enc = make_encoding(maps.data, mask.data)
    yr = enc.to_range(y.data)
    shape = enc.shape
    t = shape[0]
    m = enc.adjoint(yr)
    s = np.zeros(shape, dtype=np.complex128)
    # L starts from A^H y so the first sweeps do not count it twice
    l_prev = m.copy()
    trace = []
    it = 0
    for it in range(1, cfg.max_inner + 1):
        m_prev = m
        l = prox_nuclear((m - s).reshape(t, -1).T, lambda_L).T.reshape(shape)
        s = _itfft(soft_threshold(_tfft(m - l_prev), lambda_S))
        l_prev = l
        ls = l + s
        m = ls - enc.adjoint(enc.apply(ls) - yr)
        if not np.all(np.isfinite(m)):
            raise DataError("L+S iteration produced non-finite values")
        change = norm(m - m_prev) / max(norm(m_prev), 1e-12)
        trace.append(change)
        if change < cfg.inner_tol:
            break
    wall = time.perf_counter() - t0
    result = ReconResult(ImageSequence(l + s), None, trace, [], [wall], [it], 1, wall)
    result.components = {"L": l, "S": s, "lambda_L": lambda_L, "lambda_S": lambda_S}
    return result


def sparse_energy_fraction(result: ReconResult) -> float:
    """||S||^2 / (||L||^2 + ||S||^2) of an L+S result."""
    el = norm(result.components["L"]) ** 2
    es = norm(result.components["S"]) ** 2
    tot = el + es
    return es / tot if tot > 0 else 0.0


def reconstruct(method: str, y: KSpaceData, maps: CoilMaps, params: ModelParams = ModelParams(),
                cfg: SolverConfig = SolverConfig(), flow_cfg: Optional[SolverConfig] = None,
                ls_lambdas: tuple = (None, None)) -> ReconResult:
    """Dispatch on method name: zerofill, cs, ls or csm."""
    if method == "zerofill":
        t0 = time.perf_counter()
        img = zero_fill(y, maps)
        wall = time.perf_counter() - t0
        return ReconResult(img, outer_iters=1, wall_time=wall, wall_trace=[wall])
    if method == "cs":
        return reconstruct_cs(y, maps, y.mask, params.gamma, cfg)
    if method == "ls":
        return reconstruct_ls(y, maps, y.mask, ls_lambdas[0], ls_lambdas[1], cfg)
    if method == "csm":
        return reconstruct_csm(y, maps, y.mask, params, cfg, flow_cfg)
    raise DataError(f"unknown method {method!r}; valid methods: {', '.join(METHODS)}")


def with_beta(params: ModelParams, beta: float) -> ModelParams:
    return replace(params, beta=beta)
