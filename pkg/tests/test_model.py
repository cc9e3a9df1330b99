import math

import numpy as np
import pytest
from scipy.special import erf

from nervpp import model as M
from nervpp import tensor as tn
from nervpp.errors import ShapeError
from nervpp.model import ArchConfig, BlockSpec, ParameterStore
from nervpp.tensor import Tensor

from helpers import gradcheck, toy_arch
from oracles import bilinear_loops, conv2d_loops, numerical_grad, pixel_shuffle_loops, rel_error


def _gelu(a):
    return 0.5 * a * (1 + erf(a / math.sqrt(2)))


def _random_store(config, seed, scale=0.5):
    r = np.random.default_rng(seed)
    return ParameterStore.from_arrays(
        config, [scale * r.standard_normal(s) for _, s in M.param_shapes(config)]
    )


# -- positional encoding and time ----------------------------------------------


def test_positional_encode_zero():
    assert M.positional_encode(0.0, 1.25, 2).tolist() == [0.0, 1.0, 0.0, 1.0]


def test_positional_encode_one_level():
    np.testing.assert_allclose(M.positional_encode(1.0, 1.25, 1), [0.0, -1.0], atol=1e-15)


def test_positional_encode_values():
    pe = M.positional_encode(0.3, 1.25, 4)
    for k in range(4):
        a = 1.25**k * math.pi * 0.3
        assert pe[2 * k] == pytest.approx(math.sin(a), abs=1e-15)
        assert pe[2 * k + 1] == pytest.approx(math.cos(a), abs=1e-15)


@pytest.mark.parametrize("t,b,l", [(-0.1, 1.25, 2), (1.5, 1.25, 2), (0.5, 1.0, 2), (0.5, 1.25, 0)])
def test_positional_encode_rejects(t, b, l):
    with pytest.raises(ValueError):
        M.positional_encode(t, b, l)


def test_time_coord():
    assert [M.time_coord(i, 5) for i in range(5)] == [0.0, 0.25, 0.5, 0.75, 1.0]
    assert M.time_coord(0, 1) == 0.0
    with pytest.raises(ValueError):
        M.time_coord(5, 5)


# -- config and counting -----------------------------------------------------------


def test_config_validation():
    with pytest.raises(ValueError):
        BlockSpec(2, 4, dw_kernel=4)
    with pytest.raises(ValueError):
        BlockSpec(0, 4)
    with pytest.raises(ValueError):
        ArchConfig((2, 2), 4, (), pe_base=0.9)


def test_preset_geometry():
    cfg = M.preset_config("xsmall", 64, 64)
    assert cfg.base_grid == (4, 4) and cfg.frame_size == (64, 64)
    with pytest.raises(ShapeError):
        M.preset_config("xsmall", 60, 64)
    with pytest.raises(ValueError):
        M.preset_config("huge", 64, 64)


def test_preset_sizes_grow():
    counts = [M.count_params(M.preset_config(s, 64, 64)) for s in M.SIZE_PRESETS]
    assert counts == sorted(counts) and len(set(counts)) == len(counts)


def test_count_single_pointwise_layer():
    layer = M.Layer("x", "conv", 1, 1, 1, 1, 1, 1)
    assert layer.macs == 1 and math.prod(layer.weight_shape) + layer.out_ch == 2


def test_count_params_by_hand():
    cfg = ArchConfig((1, 1), 2, (BlockSpec(2, 1, dw_kernel=1, expansion=1),), pe_levels=1, stem_hidden=1, head_kernel=1)
    # stem: 2*1+1, 1*2+2; pre SCRB on 2ch: dw 2+2, pw1 4+2, pw2 4+2;
    # ub 2->4 3x3: 72+4; post SCRB on 1ch: dw 1+1, pw1 1+1, pw2 1+1; skip 2+1; head 1->3: 3+3
    expected = 3 + 4 + 4 + 6 + 6 + 76 + 6 + 3 + 6
    assert M.count_params(cfg) == expected
    assert M.zero_params(cfg).num_scalars() == expected


def test_count_macs_by_hand():
    cfg = ArchConfig((1, 1), 2, (BlockSpec(2, 1, dw_kernel=1, expansion=1),), pe_levels=1, stem_hidden=1, head_kernel=1)
    stem = 2 + 2
    pre = 2 + 4 + 4
    ub = 72
    post = 4 * (1 + 1 + 1)
    skip = 4 * 2
    head = 4 * 3
    assert M.count_macs_per_pixel(cfg) == pytest.approx((stem + pre + ub + post + skip + head) / 4)


@pytest.mark.parametrize("size", list(M.SIZE_PRESETS))
def test_variant_star_delta(size):
    base = M.preset_config(size, 64, 64)
    star = M.preset_config(size, 64, 64, variant_star=True)
    delta = sum(2 * b.expansion * b.out_channels**2 + b.expansion * b.out_channels for b in base.blocks)
    assert M.count_params(star) - M.count_params(base) == delta


def test_param_order_and_conv_weights():
    names = [n for n, _ in M.param_shapes(toy_arch())]
    assert names[:4] == ["stem.0.weight", "stem.0.bias", "stem.1.weight", "stem.1.bias"]
    assert names[-2:] == ["head.weight", "head.bias"]
    assert names.index("blocks.0.skip.weight") < names.index("blocks.1.pre.dw.weight")
    convs = [n for n, s in M.param_shapes(toy_arch()) if M.is_conv_weight(n, s)]
    assert "stem.0.weight" not in convs and "head.weight" in convs


# -- init ----------------------------------------------------------------------


def test_init_deterministic_and_seed_sensitive():
    cfg = toy_arch()
    assert M.init_params(cfg, 3).equals(M.init_params(cfg, 3))
    assert not M.init_params(cfg, 3).equals(M.init_params(cfg, 4))


def test_init_bounds_and_variance():
    cfg = M.preset_config("xsmall", 64, 64)
    params = M.init_params(cfg, 0)
    for name, t in params:
        if name.endswith(".bias"):
            assert not t.data.any()
            continue
        fan_in = math.prod(t.shape[1:])
        assert np.abs(t.data).max() <= 1 / math.sqrt(fan_in)
        if t.size >= 500:
            assert t.data.var() == pytest.approx(1 / (3 * fan_in), rel=0.2)


def test_from_arrays_shape_check():
    cfg = toy_arch()
    arrays = [np.zeros(s) for _, s in M.param_shapes(cfg)]
    arrays[3] = np.zeros(7)
    with pytest.raises(ShapeError):
        ParameterStore.from_arrays(cfg, arrays)
    with pytest.raises(ShapeError):
        ParameterStore.from_arrays(cfg, arrays[:-1])


# -- blocks ----------------------------------------------------------------------


def _scrb_params(c, e, k, r, scale=1.0):
    return {
        "s.dw.weight": Tensor(scale * r.standard_normal((c, 1, k, k))),
        "s.dw.bias": Tensor(scale * r.standard_normal(c)),
        "s.pw1.weight": Tensor(scale * r.standard_normal((e * c, c, 1, 1))),
        "s.pw1.bias": Tensor(scale * r.standard_normal(e * c)),
        "s.pw2.weight": Tensor(scale * r.standard_normal((c, e * c, 1, 1))),
        "s.pw2.bias": Tensor(scale * r.standard_normal(c)),
    }


def test_scrb_zero_weights_is_identity(rng):
    x = rng.standard_normal((1, 3, 5, 6))
    params = {k: Tensor(np.zeros_like(v.data)) for k, v in _scrb_params(3, 4, 7, rng).items()}
    np.testing.assert_array_equal(M.scrb_forward(Tensor(x), params, "s").data, x)


def test_scrb_matches_composed_oracle(rng):
    x = rng.standard_normal((1, 3, 5, 5))
    p = _scrb_params(3, 2, 3, rng)
    a = {k: v.data for k, v in p.items()}
    y = conv2d_loops(x, a["s.dw.weight"], a["s.dw.bias"], padding=1, groups=3)
    y = _gelu(conv2d_loops(y, a["s.pw1.weight"], a["s.pw1.bias"]))
    y = conv2d_loops(y, a["s.pw2.weight"], a["s.pw2.bias"])
    np.testing.assert_allclose(M.scrb_forward(Tensor(x), p, "s").data, x + y, rtol=1e-12, atol=1e-12)


def test_scrb_channel_mismatch(rng):
    with pytest.raises(ShapeError):
        M.scrb_forward(Tensor(np.zeros((1, 4, 3, 3))), _scrb_params(3, 2, 3, rng), "s")


def test_block_matches_composed_oracle(rng):
    cin, cout, s = 3, 2, 2
    x = rng.standard_normal((1, cin, 3, 4))
    p = {}
    p.update({k.replace("s.", "b.pre."): v for k, v in _scrb_params(cin, 2, 3, rng, 0.5).items()})
    p.update({k.replace("s.", "b.post."): v for k, v in _scrb_params(cout, 2, 3, rng, 0.5).items()})
    p["b.ub.weight"] = Tensor(0.5 * rng.standard_normal((cout * s * s, cin, 3, 3)))
    p["b.ub.bias"] = Tensor(0.5 * rng.standard_normal(cout * s * s))
    p["b.skip.weight"] = Tensor(rng.standard_normal((cout, cin, 1, 1)))
    p["b.skip.bias"] = Tensor(rng.standard_normal(cout))
    a = {k: v.data for k, v in p.items()}

    def scrb(z, pre):
        y = conv2d_loops(z, a[f"{pre}.dw.weight"], a[f"{pre}.dw.bias"], padding=1, groups=z.shape[1])
        y = _gelu(conv2d_loops(y, a[f"{pre}.pw1.weight"], a[f"{pre}.pw1.bias"]))
        return z + conv2d_loops(y, a[f"{pre}.pw2.weight"], a[f"{pre}.pw2.bias"])

    main = scrb(x, "b.pre")
    main = _gelu(pixel_shuffle_loops(conv2d_loops(main, a["b.ub.weight"], a["b.ub.bias"], padding=1), s))
    main = scrb(main, "b.post")
    skip = conv2d_loops(bilinear_loops(x, s), a["b.skip.weight"], a["b.skip.bias"])
    out = M.nervpp_block_forward(Tensor(x), p, "b", s).data
    assert out.shape == (1, cout, 6, 8)
    np.testing.assert_allclose(out, main + skip, rtol=1e-11, atol=1e-11)


def test_head_zero_params_gives_half(rng):
    params = {"head.weight": Tensor(np.zeros((3, 4, 3, 3))), "head.bias": Tensor(np.zeros(3))}
    out = M.head_forward(Tensor(rng.standard_normal((1, 4, 5, 5))), params)
    assert np.all(out.data == 0.5)


# -- full model ------------------------------------------------------------------


def test_model_output_shape_and_zero_params():
    cfg = toy_arch()
    out = M.model_forward(0.5, cfg, M.zero_params(cfg))
    assert out.shape == (1, 3, 16, 16)
    assert np.all(out.data == 0.5)


@pytest.mark.parametrize("seed", range(5))
def test_model_output_in_unit_range(seed):
    cfg = toy_arch(variant_star=bool(seed % 2))
    params = _random_store(cfg, seed, scale=5.0)
    for t in (0.0, 0.37, 1.0):
        out = M.model_forward(t, cfg, params).data
        assert out.min() >= 0.0 and out.max() <= 1.0


def test_model_rejects_mismatched_store():
    with pytest.raises(ShapeError):
        M.model_forward(0.0, toy_arch(variant_star=True), M.zero_params(toy_arch()))


def test_render_video_shape_and_determinism():
    cfg = toy_arch()
    params = _random_store(cfg, 1)
    a = M.render_video(cfg, params, 3)
    assert a.shape == (3, 3, 16, 16)
    np.testing.assert_array_equal(a, M.render_video(cfg, params, 3))


@pytest.mark.parametrize("variant_star", [False, True])
def test_full_model_gradcheck(variant_star):
    cfg = toy_arch(variant_star=variant_star)
    base = _random_store(cfg, 7)
    proj = np.random.default_rng(0).standard_normal((1, 3, 16, 16))
    arrays = [a.copy() for a in base.arrays()]

    def scalar():
        with tn.no_grad():
            store = ParameterStore.from_arrays(cfg, arrays)
            return float(np.sum(M.model_forward(0.4, cfg, store).data * proj))

    store = ParameterStore.from_arrays(cfg, arrays, requires_grad=True)
    tn.backward(tn.sum_(M.model_forward(0.4, cfg, store) * proj))
    analytic = [t.grad for t in store.tensors()]
    numeric = numerical_grad(scalar, arrays)
    errors = {n: rel_error(a, g) for n, a, g in zip(store.names(), analytic, numeric)}
    assert max(errors.values()) < 1e-4, errors


def test_stem_gradcheck(rng):
    w0, b0 = rng.standard_normal((5, 6)), rng.standard_normal(5)
    w1, b1 = rng.standard_normal((8, 5)), rng.standard_normal(8)
    pe = M.positional_encode(0.3, 1.25, 3)

    def fn(a, b, c, d):
        return M.stem_forward(pe, {"stem.0.weight": a, "stem.0.bias": b, "stem.1.weight": c, "stem.1.bias": d}, (2, 2, 2))

    assert gradcheck(fn, w0, b0, w1, b1) < 1e-4


def test_positional_encode_spec_point():
    pe = M.positional_encode(0.5, 1.25, 3)
    expected = []
    for k in range(3):
        expected += [math.sin(1.25**k * math.pi * 0.5), math.cos(1.25**k * math.pi * 0.5)]
    np.testing.assert_allclose(pe, expected, rtol=0, atol=1e-15)


def test_stem_zero_params_gives_zero_grid():
    params = {
        "stem.0.weight": Tensor(np.zeros((5, 6))),
        "stem.0.bias": Tensor(np.zeros(5)),
        "stem.1.weight": Tensor(np.zeros((8, 5))),
        "stem.1.bias": Tensor(np.zeros(8)),
    }
    out = M.stem_forward(M.positional_encode(0.7, 1.25, 3), params, (2, 2, 2))
    assert out.shape == (1, 2, 2, 2) and not out.data.any()


def test_stem_one_unit_hand_matmul():
    params = {
        "stem.0.weight": Tensor(np.array([[1.0, 2.0]])),
        "stem.0.bias": Tensor(np.array([0.5])),
        "stem.1.weight": Tensor(np.array([[3.0]])),
        "stem.1.bias": Tensor(np.array([-1.0])),
    }
    pe = np.array([0.25, -0.5])
    h = 1.0 * 0.25 + 2.0 * -0.5 + 0.5
    assert M.stem_forward(pe, params, (1, 1, 1)).item() == pytest.approx(3.0 * _gelu(h) - 1.0, abs=1e-15)


def test_scrb_zero_input_zero_bias_is_zero(rng):
    params = _scrb_params(3, 2, 3, rng)
    for k in params:
        if k.endswith("bias"):
            params[k] = Tensor(np.zeros_like(params[k].data))
    assert not M.scrb_forward(Tensor(np.zeros((1, 3, 4, 4))), params, "s").data.any()


def test_ub_stride_one_is_conv_gelu(rng):
    x = rng.standard_normal((1, 2, 4, 4))
    w, b = rng.standard_normal((3, 2, 3, 3)), rng.standard_normal(3)
    out = M.ub_forward(Tensor(x), {"u.weight": Tensor(w), "u.bias": Tensor(b)}, "u", 1).data
    np.testing.assert_allclose(out, _gelu(conv2d_loops(x, w, b, padding=1)), rtol=1e-12, atol=1e-12)


def test_ub_toy_oracle(rng):
    x = rng.standard_normal((1, 1, 2, 2))
    w, b = rng.standard_normal((4, 1, 3, 3)), rng.standard_normal(4)
    out = M.ub_forward(Tensor(x), {"u.weight": Tensor(w), "u.bias": Tensor(b)}, "u", 2).data
    assert out.shape == (1, 1, 4, 4)
    np.testing.assert_allclose(out, _gelu(pixel_shuffle_loops(conv2d_loops(x, w, b, padding=1), 2)), rtol=1e-12)


def test_block_zero_params_is_zero(rng):
    cfg = toy_arch()
    params = M.zero_params(cfg)
    out = M.nervpp_block_forward(Tensor(rng.standard_normal((1, 4, 2, 2))), params, "blocks.0", 2)
    assert out.shape == (1, 3, 4, 4) and not out.data.any()


def test_head_toy_oracle(rng):
    x = rng.standard_normal((1, 1, 4, 4))
    w, b = rng.standard_normal((3, 1, 3, 3)), rng.standard_normal(3)
    out = M.head_forward(Tensor(x), {"head.weight": Tensor(w), "head.bias": Tensor(b)}).data
    np.testing.assert_allclose(out, (np.tanh(conv2d_loops(x, w, b, padding=1)) + 1) / 2, rtol=1e-12)


def test_distinct_times_give_distinct_frames():
    cfg = toy_arch()
    params = _random_store(cfg, 2)
    a = M.model_forward(0.2, cfg, params).data
    b = M.model_forward(0.8, cfg, params).data
    assert not np.array_equal(a, b)
    np.testing.assert_array_equal(a, M.model_forward(0.2, cfg, params).data)
