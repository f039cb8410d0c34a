import numpy as np
import pytest

from csplusm.core import DataError, ImageSequence, ModelParams, SolverConfig
from csplusm.flow import estimate_flow, estimate_flow_pair, flow_energy, normalize_pair, solve_flow
from csplusm.operators import grad
from oracles import oracle_constant_flow

TIGHT = SolverConfig(max_inner=3000, inner_tol=1e-8)


def blob(n, cx, cy, s=4.0):
    y, x = np.mgrid[0:n, 0:n].astype(float)
    return np.exp(-((x - cx) ** 2 + (y - cy) ** 2) / (2 * s * s))


def data_residual(u0, u1, v):
    g = grad(u0)
    return np.sum(np.abs(g[0] * v[0] + g[1] * v[1] + u1 - u0))


@pytest.fixture(scope="module")
def shifted_pair():
    return blob(32, 15.5, 15.5), blob(32, 16.5, 15.5)


@pytest.fixture(scope="module")
def shifted_flow(shifted_pair):
    return estimate_flow_pair(*shifted_pair, 0.05, TIGHT)


def test_identical_frames_give_zero_flow():
    u = blob(24, 11, 12)
    v = estimate_flow_pair(u, u, 0.05)
    assert np.max(np.abs(v)) <= 1e-6


def test_translation_recovered_with_sign(shifted_pair, shifted_flow):
    support = shifted_pair[0] > 0.1
    assert abs(shifted_flow[0][support].mean() - 1.0) <= 0.15
    assert abs(shifted_flow[1][support].mean()) <= 0.15


def test_vertical_translation():
    u0, u1 = blob(32, 15.5, 15.5), blob(32, 15.5, 14.5)
    v = estimate_flow_pair(u0, u1, 0.05, TIGHT)
    support = u0 > 0.1
    assert abs(v[1][support].mean() + 1.0) <= 0.15


def test_data_residual_not_worse_than_zero(shifted_pair, shifted_flow):
    a, b = normalize_pair(*shifted_pair)
    assert data_residual(a, b, shifted_flow) <= data_residual(a, b, np.zeros_like(shifted_flow))


def test_energy_optimality(shifted_pair, shifted_flow):
    a, b = normalize_pair(*shifted_pair)
    e = flow_energy(a, b, shifted_flow, 0.05)
    assert e <= flow_energy(a, b, np.zeros_like(shifted_flow), 0.05) + 1e-8
    rng = np.random.default_rng(0)
    for _ in range(10):
        p = rng.standard_normal(shifted_flow.shape)
        p *= 0.1 / np.linalg.norm(p)
        assert e <= flow_energy(a, b, shifted_flow + p, 0.05) + 1e-8


def test_energy_scaling_equivariance(shifted_pair):
    rng = np.random.default_rng(1)
    v = rng.standard_normal((2, 32, 32))
    a, b = shifted_pair
    for alpha in (0.5, 3.0):
        lhs = flow_energy(alpha * a, alpha * b, v, alpha * 0.2)
        assert np.isclose(lhs, alpha * flow_energy(a, b, v, 0.2), rtol=1e-12)


def test_random_frames_energy_not_worse_than_zero():
    rng = np.random.default_rng(3)
    a, b = rng.random((16, 16)), rng.random((16, 16))
    v = estimate_flow_pair(a, b, 0.1)
    na, nb = normalize_pair(a, b)
    assert flow_energy(na, nb, v, 0.1) <= flow_energy(na, nb, np.zeros_like(v), 0.1) + 1e-8


def test_normalize_pair_shared_affine_map():
    a = np.array([[1.0, 3.0], [2.0, 2.0]])
    b = np.array([[5.0, 1.0], [1.0, 1.0]])
    na, nb = normalize_pair(a, b)
    assert na.min() == 0 and nb.max() == 1
    assert np.allclose(na, (a - 1) / 4) and np.allclose(nb, (b - 1) / 4)


def test_static_sequence_gives_zero_flow():
    u = ImageSequence(np.repeat(blob(24, 12, 12)[None], 3, axis=0))
    ff = estimate_flow(u, ModelParams(delta=0.01, beta=0.1))
    assert ff.pairs == 2 and ff.data.shape == (2, 24, 24, 2)
    assert np.max(np.abs(ff.data)) <= 1e-6


def test_uniform_translation_pairs_agree():
    frames = np.stack([blob(32, 14.5 + k, 15.5) for k in range(3)])
    params = ModelParams(delta=0.005, beta=0.1)
    ff = estimate_flow(ImageSequence(frames), params, TIGHT)
    support = frames[0] > 0.1
    d = ff.data[0][support] - ff.data[1][support]
    assert np.sqrt(np.mean(np.sum(d ** 2, axis=-1))) <= 0.1


def test_large_weight_gives_best_constant_flow(shifted_pair):
    # constants carry no TV cost, so the limit is the best global shift, not zero
    cfg = SolverConfig(max_inner=5000, inner_tol=1e-9)
    ff = estimate_flow(ImageSequence(np.stack(shifted_pair)), ModelParams(delta=1e6, beta=1.0), cfg)
    v = ff.data[0]
    assert np.max(np.ptp(v, axis=(0, 1))) <= 1e-3
    ref = oracle_constant_flow(*normalize_pair(*shifted_pair))
    assert np.max(np.abs(v.mean(axis=(0, 1)) - ref)) <= 0.05


def test_flow_uses_magnitude():
    frames = np.stack([blob(24, 11, 12), blob(24, 12, 12)])
    params = ModelParams(delta=0.005, beta=0.1)
    a = estimate_flow(ImageSequence(frames), params)
    b = estimate_flow(ImageSequence(frames * np.exp(0.4j)), params)
    assert np.allclose(a.data, b.data, atol=1e-10)


def test_warm_start_state_roundtrip(shifted_pair):
    a, b = shifted_pair
    v1, state, r1 = solve_flow(a[None], b[None], 0.05, SolverConfig(max_inner=50))
    v2, _, r2 = solve_flow(a[None], b[None], 0.05, SolverConfig(max_inner=50), state=state)
    na, nb = normalize_pair(a, b)
    assert flow_energy(na, nb, v2[0], 0.05) < flow_energy(na, nb, v1[0], 0.05)


@pytest.mark.parametrize("call", [
    lambda: estimate_flow_pair(np.zeros((8, 8)), np.zeros((8, 8)), 0.0),
    lambda: estimate_flow_pair(np.zeros((8, 8)), np.zeros((8, 8)), -1.0),
    lambda: estimate_flow_pair(np.zeros((1, 8)), np.zeros((1, 8)), 0.1),
    lambda: estimate_flow_pair(np.zeros((8, 8)), np.zeros((8, 7)), 0.1),
    lambda: estimate_flow_pair(np.zeros((8, 8), complex), np.zeros((8, 8)), 0.1),
    lambda: estimate_flow(ImageSequence(np.zeros((1, 8, 8))), ModelParams()),
    lambda: estimate_flow(ImageSequence(np.zeros((2, 8, 8))), ModelParams(beta=0.0)),
])
def test_flow_errors(call):
    with pytest.raises(DataError):
        call()
