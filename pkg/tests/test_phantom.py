import numpy as np
import pytest

from csplusm.core import DataError, ImageSequence
from csplusm.operators import encode, temporal_diff
from csplusm.phantom import (BLOOD, PhantomSpec, acquire, blood_pool_fraction, full_mask,
                             generate_coilmaps, generate_magnitude, generate_phantom, geometry,
                             undersample)
from csplusm.recon import gold_standard
from csplusm.sampling import make_mask


@pytest.fixture(scope="module")
def cine():
    return generate_phantom(PhantomSpec(frames=30, height=64, width=64, period=12, motion_amplitude=3))


def test_static_has_zero_temporal_difference():
    u = generate_phantom(PhantomSpec(kind="static", frames=4, height=32, width=32))
    assert not np.any(temporal_diff(u))


def test_cine_is_periodic(cine):
    assert np.max(np.abs(cine.data[3] - cine.data[15])) <= 1e-12
    assert np.max(np.abs(cine.data[0] - cine.data[24])) <= 1e-12
    assert np.max(np.abs(cine.data[0] - cine.data[3])) > 0.1


def test_cine_moves():
    mag = generate_magnitude(PhantomSpec(frames=6, height=64, width=64))
    assert np.abs(np.diff(mag, axis=0)).max() > 0.1


@pytest.mark.parametrize("k", range(0, 24, 3))
def test_blood_pool_area_matches_ellipse(k):
    spec = PhantomSpec()
    g = geometry(spec, k)
    area = blood_pool_fraction(spec, k).sum()
    assert abs(area - np.pi * g.a * g.b) <= 0.01 * np.pi * g.a * g.b


def test_magnitude_bounded_and_complex(cine):
    mag = np.abs(cine.data)
    assert mag.min() >= 0 and mag.max() <= 1 + 1e-12
    assert np.isclose(mag.max(), BLOOD)
    assert cine.is_complex and np.ptp(np.angle(cine.data[0][mag[0] > 0.2])) > 0.1


def test_perfusion_uptake_curve():
    spec = PhantomSpec(kind="perfusion", frames=20, height=64, width=64)
    mag = generate_magnitude(spec)
    g = geometry(spec, 0)
    center = mag[:, int(round(g.cy)), int(round(g.cx))]
    peak = int(np.argmax(center))
    assert 0 < peak < 19
    assert np.all(np.diff(center[:peak + 1]) >= 0) and np.all(np.diff(center[peak:]) <= 0)
    # anatomy does not move: the body outline is constant
    assert np.array_equal(mag[0] > 0, mag[-1] > 0)


def test_deterministic():
    spec = PhantomSpec(frames=3, height=32, width=32, seed=4)
    assert generate_phantom(spec).data.tobytes() == generate_phantom(spec).data.tobytes()
    assert not np.array_equal(generate_phantom(spec).data,
                              generate_phantom(PhantomSpec(frames=3, height=32, width=32, seed=5)).data)


def test_respiratory_shift_moves_static_anatomy():
    spec = PhantomSpec(kind="perfusion", frames=10, height=64, width=64, resp_amplitude=3, resp_period=8)
    mag = generate_magnitude(spec)
    assert not np.array_equal(mag[0] > 0, mag[2] > 0)


@pytest.mark.parametrize("kwargs", [
    dict(kind="cine", frames=1),
    dict(kind="perfusion", frames=1),
    dict(kind="blob"),
    dict(motion_amplitude=-1),
    dict(period=0),
    dict(height=8),
    dict(uptake_rate=0),
])
def test_invalid_spec(kwargs):
    with pytest.raises(DataError):
        PhantomSpec(**kwargs)


def test_static_single_frame_allowed():
    assert generate_phantom(PhantomSpec(kind="static", frames=1, height=16, width=16)).frames == 1


# coil maps

def test_single_coil_unit_modulus():
    maps = generate_coilmaps(1, 20, 24, seed=3)
    assert np.allclose(np.abs(maps.data), 1.0, atol=1e-12)


@pytest.mark.parametrize("coils", [2, 4, 8])
def test_coil_sos_normalized(coils):
    maps = generate_coilmaps(coils, 32, 40, seed=1)
    assert np.max(np.abs(np.sum(np.abs(maps.data) ** 2, axis=0) - 1)) <= 1e-10


def test_four_coils_in_distinct_quadrants():
    maps = generate_coilmaps(4, 64, 64)
    quads = set()
    for c in range(4):
        r, col = np.unravel_index(np.argmax(np.abs(maps.data[c])), (64, 64))
        quads.add((r < 32, col < 32))
    assert len(quads) == 4


def test_coil_errors():
    with pytest.raises(DataError):
        generate_coilmaps(0, 8, 8)


# acquisition

def test_noiseless_full_acquisition_is_encode(cine):
    maps = generate_coilmaps(2, 64, 64)
    mask = full_mask(cine.frames, 64, 64)
    y = acquire(cine, maps, mask, 0.0)
    assert np.array_equal(y.data, encode(cine, maps, mask).data)


def test_noise_statistics():
    u = ImageSequence(np.zeros((25, 64, 64), complex))
    maps = generate_coilmaps(1, 64, 64)
    y = acquire(u, maps, full_mask(25, 64, 64), 0.05, seed=3)
    n = y.data.ravel()
    assert n.size >= 1e5
    assert abs(np.sqrt(np.mean(np.abs(n) ** 2)) - 0.05) <= 0.03 * 0.05


def test_noise_only_at_sampled_positions(cine):
    maps = generate_coilmaps(2, 64, 64)
    mask = make_mask(cine.frames, 64, 64, 4, seed=1)
    y = acquire(cine, maps, mask, 0.1, seed=0)
    assert np.all(y.data[np.broadcast_to(mask.data[:, None] == 0, y.data.shape)] == 0)


def test_acquisition_deterministic(cine):
    maps = generate_coilmaps(2, 64, 64)
    mask = full_mask(cine.frames, 64, 64)
    a = acquire(cine, maps, mask, 0.1, seed=9)
    b = acquire(cine, maps, mask, 0.1, seed=9)
    assert a.data.tobytes() == b.data.tobytes()


def test_gold_standard_of_noiseless_data_is_magnitude(cine):
    maps = generate_coilmaps(4, 64, 64)
    y = acquire(cine, maps, full_mask(cine.frames, 64, 64), 0.0)
    gold = gold_standard(y, maps)
    assert np.max(np.abs(gold.data - np.abs(cine.data))) <= 1e-8


def test_undersample_matches_direct_acquisition(cine):
    maps = generate_coilmaps(2, 64, 64)
    mask = make_mask(cine.frames, 64, 64, 4, seed=2)
    full = acquire(cine, maps, full_mask(cine.frames, 64, 64), 0.0)
    direct = acquire(cine, maps, mask, 0.0)
    assert np.allclose(undersample(full, mask).data, direct.data, atol=1e-14)
    with pytest.raises(DataError):
        undersample(direct, full_mask(cine.frames, 64, 64))
