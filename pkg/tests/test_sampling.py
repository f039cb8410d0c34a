import numpy as np
import pytest
from scipy.stats import spearmanr

from csplusm.core import DataError
from csplusm.sampling import center_block, make_mask, row_weights


def test_near_one_acceleration_gives_full_mask():
    m = make_mask(3, 32, 16, 1.0001, center_lines=8)
    assert m.data.all()
    assert m.achieved_accel == 1.0


def test_row_count_arithmetic():
    m = make_mask(8, 192, 32, 8, center_lines=8, seed=3)
    center = center_block(192, 8)
    for k in range(8):
        rows = m.rows(k)
        assert len(rows) == 24
        assert np.isin(center, rows).all()
        assert m.data[k].sum() == 24 * 32


def test_deterministic():
    a = make_mask(4, 64, 16, 4, seed=11)
    b = make_mask(4, 64, 16, 4, seed=11)
    assert np.array_equal(a.data, b.data)
    c = make_mask(4, 64, 16, 4, seed=12)
    assert not np.array_equal(a.data, c.data)


@pytest.mark.parametrize("accel", [4, 6, 8, 10, 12])
def test_line_mask_invariants(accel):
    m = make_mask(24, 128, 128, accel, center_lines=8, seed=0)
    assert set(np.unique(m.data)) <= {0, 1}
    assert m.is_line_mask()
    assert abs(m.achieved_accel - accel) <= 0.05 * accel
    c = center_block(128, 8)
    assert np.all(m.data[:, c, :] == 1)


def test_frames_differ():
    m = make_mask(6, 128, 8, 4, seed=0)
    assert any(not np.array_equal(m.data[0], m.data[k]) for k in range(1, 6))


def test_frozen_frames_flag():
    m = make_mask(5, 64, 8, 4, seed=2, vary_frames=False)
    assert all(np.array_equal(m.data[0], m.data[k]) for k in range(5))


def test_per_frame_seed_derivation():
    # frame k of a run equals frame 0 of a run seeded with seed ^ k
    m = make_mask(4, 64, 8, 4, seed=5)
    for k in range(4):
        single = make_mask(1, 64, 8, 4, seed=5 ^ k)
        assert np.array_equal(m.data[k], single.data[0])


def test_density_decreases_away_from_center():
    h = 96
    m = make_mask(400, h, 2, 4, center_lines=8, seed=1)
    density = m.data[:, :, 0].mean(axis=0)
    r = np.abs(np.arange(h) - h // 2)
    outside = ~np.isin(np.arange(h), center_block(h, 8))
    rho, _ = spearmanr(r[outside], density[outside])
    assert rho < -0.8


def test_row_weights_shape_and_range():
    w = row_weights(16, 3.0)
    assert w.shape == (16,)
    assert w[8] == 1.0 and np.all(w > 0) and np.all(w <= 1)
    assert np.all(row_weights(16, 0.0) == 1.0)


@pytest.mark.parametrize("kwargs", [
    dict(accel=1.0),
    dict(accel=0.5),
    dict(accel=20.0, center_lines=8),     # more central lines than rows to spend
    dict(accel=8.0, center_lines=-1),
    dict(height=8, accel=3.5, center_lines=0),  # 2 rows give 4x, 3 rows give 2.7x
])
def test_infeasible_requests(kwargs):
    args = dict(frames=2, height=32, width=4, center_lines=2)
    args.update(kwargs)
    with pytest.raises(DataError):
        make_mask(**args)
