import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from smamba import data, srt
from smamba.errors import DataError, ShapeError


def _dft_crop(img, scale):
    """Direct-summation DFT at the retained frequencies, indexed as LR bins."""
    H, W = img.shape
    h, w = H // scale, W // scale
    ky = np.arange(-(h // 2), h - h // 2)
    kx = np.arange(-(w // 2), w - w // 2)
    ey = np.exp(-2j * np.pi * np.outer(ky, np.arange(H)) / H)
    ex = np.exp(-2j * np.pi * np.outer(np.arange(W), kx) / W)
    spec = ey @ img @ ex
    out = np.zeros((h, w), dtype=complex)
    out[np.ix_(ky % h, kx % w)] = spec
    return out


def test_constant_image_is_invariant():
    for c in (0.0, 0.37, 1.0):
        lr = data.degrade_kspace(np.full((32, 48, 1), c), 2)
        assert lr.shape == (16, 24, 1)
        np.testing.assert_allclose(lr, c, atol=1e-6)


@pytest.mark.parametrize("scale", [2, 4])
def test_band_limited_sinusoid_is_downsampled_exactly(scale):
    H = W = 64
    h = H // scale
    y, x = np.mgrid[0:H, 0:W]
    ky, kx = h // 2 - 1, 3
    hr = 0.5 + 0.3 * np.cos(2 * np.pi * (ky * y / H + kx * x / W) + 0.4)
    yl, xl = np.mgrid[0:h, 0:h]
    expect = 0.5 + 0.3 * np.cos(2 * np.pi * (ky * yl / h + kx * xl / h) + 0.4)
    lr = data.degrade_kspace(hr[:, :, None], scale)[:, :, 0]
    assert np.max(np.abs(lr - expect)) / np.max(np.abs(expect)) <= 1e-4


def test_parseval_energy_of_retained_spectrum(rng):
    s = 2
    hr = 0.5 + 0.02 * rng.normal(size=(32, 32))
    lr = data.degrade_kspace(hr[:, :, None], s)[:, :, 0]
    assert 0 < lr.min() and lr.max() < 1
    crop = _dft_crop(hr, s) / (s * s)
    h, w = crop.shape
    # the real part keeps the Hermitian-symmetric half of the cropped spectrum
    mirror = np.conj(crop[(-np.arange(h)) % h][:, (-np.arange(w)) % w])
    sym = (crop + mirror) / 2
    expected = float((np.abs(sym) ** 2).sum()) / (h * w)
    assert abs(float((lr ** 2).sum()) - expected) / expected <= 1e-6


def test_degradation_is_idempotent_on_band_limited_images(rng):
    s, H = 2, 64
    y, x = np.mgrid[0:H, 0:H]
    hr = np.full((H, H), 0.5)
    for _ in range(6):
        ky, kx = rng.integers(-12, 13, size=2)
        hr += 0.06 * np.cos(2 * np.pi * (ky * y + kx * x) / H + rng.uniform(0, 2 * np.pi))
    lr = data.degrade_kspace(hr[:, :, None], s)
    again = data.degrade_kspace(data.fourier_upsample(lr, s), s)
    assert np.max(np.abs(again - lr)) / np.max(np.abs(lr)) <= 1e-4


def test_degrade_rejects_indivisible():
    with pytest.raises(ShapeError):
        data.degrade_kspace(np.zeros((30, 32, 1)), 4)


def test_kspace_noise_requires_rng():
    with pytest.raises(ValueError):
        data.degrade_kspace(np.zeros((8, 8, 1)), 2, kspace_noise_std=0.1)
    a = data.degrade_kspace(np.full((8, 8, 1), 0.5), 2, 0.01, np.random.default_rng(0))
    b = data.degrade_kspace(np.full((8, 8, 1), 0.5), 2, 0.01, np.random.default_rng(0))
    np.testing.assert_array_equal(a, b)


def test_bicubic_constant_and_ramp():
    np.testing.assert_array_equal(data.bicubic_upscale(np.full((5, 7, 1), 0.3), 2), 0.3)
    y, x = np.mgrid[0:8, 0:8]
    lr = (0.02 * y + 0.05 * x + 0.1)[:, :, None]
    for s in (2, 4):
        out = data.bicubic_upscale(lr, s)[:, :, 0]
        yy, xx = np.mgrid[0:8 * s, 0:8 * s] / s
        interior = slice(s, 6 * s)
        np.testing.assert_allclose(out[interior, interior], (0.02 * yy + 0.05 * xx + 0.1)[interior, interior], atol=1e-12)


@pytest.mark.parametrize("scale", [2, 4])
def test_bicubic_matches_direct_summation(fixture_array, scale):
    lr = fixture_array("bicubic_in_8x8.srt")
    expect = fixture_array(f"bicubic_out_x{scale}.srt")
    np.testing.assert_allclose(data.bicubic_upscale(lr[:, :, None], scale)[:, :, 0], expect, atol=1e-12)


def test_bicubic_documented_weights_are_exact():
    m2 = data.bicubic_matrix(8, 2)
    np.testing.assert_array_equal(m2[7, 2:6], [-0.0625, 0.5625, 0.5625, -0.0625])
    m4 = data.bicubic_matrix(8, 4)
    np.testing.assert_array_equal(m4[13, 2:6], [-0.0703125, 0.8671875, 0.2265625, -0.0234375])
    np.testing.assert_array_equal(m4.sum(axis=1), 1.0)


def test_bicubic_batched_equals_single(rng):
    lr = rng.random((3, 6, 5, 1))
    batched = data.bicubic_upscale(lr, 2)
    for i in range(3):
        np.testing.assert_array_equal(batched[i], data.bicubic_upscale(lr[i], 2))
    with pytest.raises(ValueError):
        data.bicubic_upscale(lr[0], 3)


def test_phantoms_are_deterministic_and_in_range():
    a = data.phantom_generate(4, 64, seed=7)
    b = data.phantom_generate(4, 64, seed=7)
    for (x, px), (y, py) in zip(a, b):
        np.testing.assert_array_equal(x, y)
        assert px == py
        assert x.dtype == np.float32 and x.shape == (64, 64, 1)
        assert x.min() >= 0 and x.max() <= 1
        for corner in (x[:4, :4], x[:4, -4:], x[-4:, :4], x[-4:, -4:]):
            assert corner.mean() < 0.1
    assert not np.array_equal(a[0][0], data.phantom_generate(1, 64, seed=8)[0][0])
    with pytest.raises(ShapeError):
        data.phantom_generate(1, 40, seed=0)


def test_phantom_dataset_round_trip(tmp_path):
    m = data.write_phantom_dataset(tmp_path, 8, 64, seed=1)
    assert len(list((tmp_path / "hr").glob("*.srt"))) == 8
    loaded = data.DatasetManifest.load(tmp_path / "manifest.json")
    assert loaded.slices == m.slices
    assert (tmp_path / "manifest.json").read_text() == loaded.to_json()
    body = json.loads((tmp_path / "manifest.json").read_text())
    assert list(body) == sorted(body)
    pair = loaded.load_pair(loaded.slices[0], scale=2)
    assert pair.hr.shape == (64, 64, 1) and pair.lr.shape == (32, 32, 1)


def test_degrade_dataset_writes_lr(tmp_path):
    data.write_phantom_dataset(tmp_path, 3, 32, seed=1, n_test=1)
    m = data.degrade_dataset(tmp_path / "manifest.json", 4)
    assert m.scale == 4 and len(m.split("test")) == 1
    pair = m.load_pair(m.slices[0])
    np.testing.assert_array_equal(pair.lr, data.degrade_kspace(pair.hr, 4))


def test_manifest_rejects_path_in_both_splits():
    with pytest.raises(DataError):
        data.DatasetManifest(slices=[{"hr": "a.srt", "split": "train"}, {"hr": "a.srt", "split": "test"}])
    with pytest.raises(DataError):
        data.DatasetManifest(slices=[{"hr": "a.srt", "split": "val"}])


def test_missing_slice_and_bad_manifest(tmp_path):
    m = data.write_phantom_dataset(tmp_path, 2, 16, seed=1)
    (tmp_path / m.slices[0]["hr"]).unlink()
    with pytest.raises(DataError):
        m.load_pair(m.slices[0], scale=2)
    (tmp_path / "broken.json").write_text("{")
    with pytest.raises(DataError):
        data.DatasetManifest.load(tmp_path / "broken.json")


def test_import_srt_directory(tmp_path):
    src = tmp_path / "src"
    src.mkdir()
    for i in range(3):
        srt.save(src / f"s{i}.srt", np.full((16, 16, 1), 0.1 * i, dtype=np.float32))
    m = data.import_srt_directory(src, tmp_path / "out", n_test=1)
    assert [s["split"] for s in m.slices] == ["train", "train", "test"]
    np.testing.assert_array_equal(m.load_pair(m.slices[2], 2).hr, 0.2 * np.ones((16, 16, 1), np.float32))
    with pytest.raises(DataError):
        data.import_srt_directory(tmp_path / "out", tmp_path / "x")


def test_pgm_round_trip(tmp_path, rng):
    img = rng.random((9, 13, 1))
    data.write_pgm(tmp_path / "a.pgm", img)
    back = data.read_pgm(tmp_path / "a.pgm")
    assert back.shape == (9, 13, 1)
    assert np.max(np.abs(back - img)) <= 0.5 / 65535 + 1e-12
    raw = (tmp_path / "a.pgm").read_bytes()
    assert raw.startswith(b"P5\n13 9\n65535\n")
    # big-endian samples
    q = int(round(img[0, 0, 0] * 65535))
    assert raw[len(b"P5\n13 9\n65535\n"):][:2] == q.to_bytes(2, "big")


def test_pgm_with_comment_and_8bit(tmp_path):
    (tmp_path / "c.pgm").write_bytes(b"P5\n# made by hand\n2 1\n255\n\x00\xff")
    np.testing.assert_array_equal(data.read_pgm(tmp_path / "c.pgm")[:, :, 0], [[0.0, 1.0]])
    (tmp_path / "d.pgm").write_bytes(b"P2\n1 1\n255\n0")
    with pytest.raises(DataError):
        data.read_pgm(tmp_path / "d.pgm")


@given(shape=st.lists(st.integers(0, 4), min_size=0, max_size=4), f64=st.booleans())
def test_srt_round_trip(shape, f64):
    dt = np.float64 if f64 else np.float32
    a = np.arange(int(np.prod(shape)), dtype=dt).reshape(shape)
    b = srt.from_bytes(srt.to_bytes(a))
    assert b.dtype == dt and b.shape == a.shape
    np.testing.assert_array_equal(a, b)


def test_srt_layout_and_errors():
    raw = srt.to_bytes(np.array([[1.0, 2.0]], dtype=np.float32))
    assert raw[:4] == b"SRT1" and raw[4] == 0 and raw[5] == 2
    assert raw[6:14] == (1).to_bytes(4, "little") + (2).to_bytes(4, "little")
    assert np.frombuffer(raw[14:], "<f4").tolist() == [1.0, 2.0]
    with pytest.raises(DataError):
        srt.from_bytes(raw[:-1])
    with pytest.raises(DataError):
        srt.from_bytes(b"XXXX" + raw[4:])
    with pytest.raises(DataError):
        srt.from_bytes(raw[:4] + b"\x07" + raw[5:])
    with pytest.raises(TypeError):
        srt.to_bytes(np.array([1], dtype=np.int32))
