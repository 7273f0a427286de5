import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from smamba.errors import ShapeError
from smamba.metrics import psnr, ssim


def test_psnr_identical_is_inf():
    x = np.random.default_rng(0).random((8, 8))
    assert psnr(x, x) == math.inf


def test_psnr_constant_offset_is_twenty_db():
    x = np.random.default_rng(0).random((16, 16)) * 0.8
    assert abs(psnr(x, x + 0.1) - 20.0) <= 1e-6


def test_psnr_matches_two_pass_oracle(rng):
    a, b = rng.random((20, 30)), rng.random((20, 30))
    total = 0.0
    for u, v in zip(a.ravel().tolist(), b.ravel().tolist()):
        total += (u - v) ** 2
    expect = 10 * math.log10(1.0 / (total / a.size))
    assert abs(psnr(a, b) - expect) / expect <= 1e-6


def test_psnr_shape_mismatch():
    with pytest.raises(ShapeError):
        psnr(np.zeros((4, 4)), np.zeros((4, 5)))


@given(seed=st.integers(0, 2**31))
def test_psnr_symmetric_and_monotone(seed):
    rng = np.random.default_rng(seed)
    a = rng.random((16, 16))
    noise = rng.normal(size=a.shape)
    assert psnr(a, a + 0.05 * noise) == psnr(a + 0.05 * noise, a)
    vals = [psnr(a, a + amp * noise) for amp in (0.01, 0.05, 0.2)]
    assert vals[0] > vals[1] > vals[2]


def test_ssim_identity_and_symmetry(rng):
    a, b = rng.random((24, 24)), rng.random((24, 24))
    assert abs(ssim(a, a) - 1.0) <= 1e-9
    assert abs(ssim(a, b) - ssim(b, a)) <= 1e-9


def test_ssim_binary_inverse_matches_window_oracle(fixture_array, oracles):
    x = fixture_array("ssim_binary_16x16.srt")
    value = ssim(x, 1.0 - x)
    assert value < -0.5
    assert abs(value - oracles["ssim_binary_vs_inverse"]) <= 1e-9


@pytest.mark.parametrize("a,delta", [(0.2, 0.1), (0.5, 0.3), (0.0, 0.4)])
def test_ssim_constant_images_luminance_only(a, delta):
    c1 = 0.01 ** 2
    expect = (2 * a * (a + delta) + c1) / (a * a + (a + delta) ** 2 + c1)
    assert abs(ssim(np.full((12, 12), a), np.full((12, 12), a + delta)) - expect) <= 1e-9


def test_ssim_accepts_channel_axis_and_rejects_small(rng):
    a = rng.random((11, 11, 1))
    assert abs(ssim(a, a) - 1.0) <= 1e-9
    with pytest.raises(ShapeError):
        ssim(np.zeros((10, 20)), np.zeros((10, 20)))
    with pytest.raises(ShapeError):
        ssim(np.zeros((12, 12, 2)), np.zeros((12, 12, 2)))
