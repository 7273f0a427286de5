import numpy as np
import pytest

from smamba import gradsuite
from smamba import model as M
from smamba import tensor as T
from smamba.data import bicubic_upscale
from smamba.errors import DataError, ShapeError
from smamba.tensor import Tensor

TINY = dict(level_channels=(4, 8, 16, 32), blocks_per_level=1, state_dim=4, head_channels=4)


def test_pixel_shuffle_literal_map():
    x = Tensor(np.array([1.0, 2.0, 3.0, 4.0]).reshape(1, 1, 1, 4))
    np.testing.assert_array_equal(M.pixel_shuffle(x, 2).data[0, :, :, 0], [[1, 2], [3, 4]])


def test_pixel_shuffle_index_contract(rng):
    r, C = 3, 2
    x = rng.normal(size=(1, 2, 2, C * r * r))
    y = M.pixel_shuffle(Tensor(x), r).data
    for yy in range(2):
        for xx in range(2):
            for c in range(C):
                for dy in range(r):
                    for dx in range(r):
                        assert y[0, yy * r + dy, xx * r + dx, c] == x[0, yy, xx, c * r * r + dy * r + dx]


@pytest.mark.parametrize("r", [2, 4])
def test_pixel_shuffle_round_trip(rng, r):
    x = rng.normal(size=(2, 3, 5, 2 * r * r))
    np.testing.assert_array_equal(M.pixel_unshuffle(M.pixel_shuffle(Tensor(x), r), r).data, x)


def test_merge_neighbourhood_order():
    grid = Tensor(np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(1, 2, 2, 1))
    np.testing.assert_array_equal(M.merge_neighbourhoods(grid).data.reshape(-1), [1, 2, 3, 4])
    with pytest.raises(ShapeError):
        M.merge_neighbourhoods(Tensor(np.ones((1, 3, 2, 1))))


def test_patch_embed_matches_window_dot_products(rng):
    cfg = M.UNetConfig(**TINY)
    P = M.init_params(cfg, seed=0, dtype=np.float64)
    x = rng.normal(size=(1, 4, 6, cfg.head_channels))
    y = M.patch_embed(Tensor(x), P, cfg).data
    w, b = P["embed.w"].data, P["embed.b"].data
    for i in range(2):
        for j in range(3):
            expect = np.einsum("abc,abcd->d", x[0, 2 * i:2 * i + 2, 2 * j:2 * j + 2], w) + b
            np.testing.assert_allclose(y[0, i, j], expect, rtol=1e-12)
    const = M.patch_embed(Tensor(np.full((1, 4, 4, cfg.head_channels), 0.7)), P, cfg).data
    np.testing.assert_allclose(const, np.broadcast_to(const[:, :1, :1], const.shape), rtol=1e-12)


def test_default_level_shapes():
    cfg = M.UNetConfig()
    P = {k: Tensor(np.zeros(s.shape, dtype=np.float32)) for s in M.param_specs(cfg) for k in [s.name]}
    assert M.patch_merge(Tensor(np.zeros((1, 32, 32, 96), np.float32)), P, "enc0.merge.").shape == (1, 16, 16, 128)
    assert M.patch_merge(Tensor(np.zeros((1, 16, 16, 128), np.float32)), P, "enc1.merge.").shape == (1, 8, 8, 384)
    assert M.patch_expand(Tensor(np.zeros((1, 8, 8, 768), np.float32)), P["dec2.expand.w"]).shape == (1, 16, 16, 384)
    assert M.patch_expand(Tensor(np.zeros((1, 16, 16, 384), np.float32)), P["dec1.expand.w"]).shape == (1, 32, 32, 128)
    assert M.patch_embed(Tensor(np.zeros((1, 64, 64, 16), np.float32)), P, cfg).shape == (1, 32, 32, 96)


def test_upscale_head_shape():
    cfg = M.UNetConfig(scale=4, **TINY)
    P = M.init_params(cfg)
    out = M.upscale_head(Tensor(np.zeros((1, 16, 16, 1), np.float32)), P, cfg)
    assert out.shape == (1, 64, 64, cfg.head_channels)


def test_block_with_zero_params_is_identity(rng):
    cfg = M.UNetConfig(**TINY)
    P = M.init_params(cfg)
    for name, t in P.items():
        if name.startswith("enc0.blk0.") and "a_log" not in name:
            t.data[...] = 0.0
    x = rng.normal(size=(1, 4, 4, 4)).astype(np.float32)
    np.testing.assert_array_equal(M.vision_mamba_block(Tensor(x), P, "enc0.blk0.", cfg, training=False).data, x)


@pytest.mark.parametrize("scale,size", [(2, 32), (4, 16), (2, 16), (4, 8)])
def test_forward_shape_and_identity_at_init(rng, scale, size):
    cfg = M.UNetConfig(scale=scale, **TINY)
    P = M.init_params(cfg, seed=3)
    lr = rng.random((2, size, size, 1)).astype(np.float32)
    sr = M.forward(lr, P, cfg).data
    assert sr.shape == (2, size * scale, size * scale, 1)
    base = np.clip(bicubic_upscale(lr, scale), 0, 1)
    assert np.max(np.abs(sr - base) / np.spacing(np.maximum(np.abs(base), np.float32(1e-30)))) <= 1.0


def test_forward_rejects_indivisible_input():
    cfg = M.UNetConfig(**TINY)
    with pytest.raises(ShapeError, match="divisible by 16"):
        M.forward(np.zeros((1, 12, 12, 1), np.float32), M.init_params(cfg), cfg)
    with pytest.raises(ShapeError):
        M.forward(np.zeros((1, 16, 16, 2), np.float32), M.init_params(cfg), cfg)


def test_encoder_decoder_shapes_are_symmetric(rng):
    cfg = M.UNetConfig(**TINY)
    P = M.init_params(cfg)
    x = M.patch_embed(M.upscale_head(Tensor(rng.random((1, 16, 16, 1)).astype(np.float32)), P, cfg), P, cfg)
    enc = []
    for lvl in range(3):
        enc.append(x.shape)
        x = M.patch_merge(x, P, f"enc{lvl}.merge.")
    for lvl in reversed(range(3)):
        x = M.patch_expand(x, P[f"dec{lvl}.expand.w"])
        assert x.shape == enc[lvl]
        x = Tensor(np.zeros(enc[lvl], np.float32))


def _block_count(C, N, E=2):
    Ce = E * C
    ssm = Ce * N + Ce + Ce * Ce + Ce + 2 * Ce * N
    return 2 * C + 2 * (C * Ce + Ce) + 10 * Ce + ssm + 4 + 2 * Ce + Ce * C + C


def test_param_count_symbolic_oracle():
    cfg = M.UNetConfig(level_channels=(4, 8, 16, 32), blocks_per_level=1, state_dim=4)
    ch, s, E, p = (4, 8, 16, 32), 2, 16, 2
    total = 9 * E * s * s + E * s * s + p * p * E * ch[0] + ch[0]
    for lvl in range(3):
        total += _block_count(ch[lvl], 4) + 8 * ch[lvl] + 4 * ch[lvl] * ch[lvl + 1]
        total += ch[lvl + 1] * 4 * ch[lvl] + 2 * ch[lvl] * ch[lvl] + ch[lvl] + _block_count(ch[lvl], 4)
    total += _block_count(32, 4)
    cf = ch[0] // (p * p)
    total += ch[0] * p * p * cf + 9 * cf + 1
    assert M.param_count(cfg) == total


def test_doubling_blocks_doubles_only_block_params():
    one = M.param_breakdown(M.UNetConfig(**TINY))
    two = M.param_breakdown(M.UNetConfig(**{**TINY, "blocks_per_level": 2}))
    for group in one:
        assert two[group] == (2 * one[group] if group.endswith("blocks") else one[group])


def test_fusion_logit_toggle_changes_count_by_four_per_block():
    for blocks in (1, 2, 4):
        on = M.UNetConfig(**{**TINY, "blocks_per_level": blocks})
        off = M.UNetConfig(**{**TINY, "blocks_per_level": blocks, "use_iss2d_weights": False})
        assert M.param_count(on) - M.param_count(off) == 4 * 7 * blocks


def test_registry_order_is_deterministic():
    a = [s.name for s in M.param_specs(M.UNetConfig(**TINY))]
    assert a == [s.name for s in M.param_specs(M.UNetConfig(**TINY))]
    assert len(a) == len(set(a))


def test_checkpoint_round_trip_is_bit_exact(tmp_path, rng):
    cfg = M.UNetConfig(**TINY)
    P = M.init_params(cfg, seed=9)
    for t in P.values():
        t.data += rng.normal(scale=0.01, size=t.shape).astype(t.dtype)
    path = tmp_path / "m.smck"
    M.save_checkpoint(path, P, cfg, {"step": 3})
    cfg2, P2, extra = M.load_checkpoint(path, expect=cfg)
    assert cfg2 == cfg and extra == {"step": 3}
    for k in P:
        np.testing.assert_array_equal(P[k].data, P2[k].data)
        assert P[k].requires_grad == P2[k].requires_grad
    lr = rng.random((1, 16, 16, 1)).astype(np.float32)
    np.testing.assert_array_equal(M.forward(lr, P, cfg).data, M.forward(lr, P2, cfg2).data)


def test_checkpoint_validation(tmp_path):
    cfg = M.UNetConfig(**TINY)
    path = tmp_path / "m.smck"
    M.save_checkpoint(path, M.init_params(cfg), cfg)
    with pytest.raises(DataError, match="differs"):
        M.load_checkpoint(path, expect=M.UNetConfig(**{**TINY, "scale": 4}))
    (tmp_path / "bad.smck").write_bytes(b"nope")
    with pytest.raises(DataError):
        M.load_checkpoint(tmp_path / "bad.smck")
    with pytest.raises(DataError):
        M.load_checkpoint(tmp_path / "missing.smck")


def test_frozen_logits_are_not_trainable():
    P = M.init_params(M.UNetConfig(**{**TINY, "use_iss2d_weights": False}))
    logits = [t for k, t in P.items() if k.endswith("fusion.logits")]
    assert logits and not any(t.requires_grad for t in logits)
    assert all((t.data == 0).all() for t in logits)


def test_forward_is_deterministic(rng):
    cfg = M.UNetConfig(**TINY)
    lr = rng.random((1, 16, 16, 1)).astype(np.float32)
    P = M.init_params(cfg, seed=4)
    P["final.conv.w"].data += 0.1
    a = M.forward(lr, P, cfg, training=True, rng=np.random.default_rng(0)).data
    b = M.forward(lr, M.init_params(cfg, seed=4), cfg).data
    P2 = M.init_params(cfg, seed=4)
    P2["final.conv.w"].data += 0.1
    c = M.forward(lr, P2, cfg, training=True, rng=np.random.default_rng(0)).data
    np.testing.assert_array_equal(a, c)
    assert not np.array_equal(a, b)


@pytest.mark.parametrize("suite", ["block", "network"])
def test_module_gradients(suite):
    for r in gradsuite.run_suite(suite):
        assert r.passed, f"{r.name}: {r.error:.3e} > {r.tol}"
