import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from adrd import tensor as T
from adrd.blocks import (
    ADRD,
    DenseLayer,
    NetworkConfig,
    ResidualDeconvStage,
    SpatialAttention,
    WeightedDenseBlock,
    export_weight_matrices,
    format_weight_matrices,
)
from adrd.errors import DataError
from adrd.tensor import Tensor, no_grad

F64 = np.float64


def conv_same(x, w, b):
    """'Same' cross-correlation as a sum of shifted channel mixes."""
    k = w.shape[-1]
    p = k // 2
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    h, wd = x.shape[2:]
    out = np.zeros((x.shape[0], w.shape[0], h, wd))
    for u in range(k):
        for v in range(k):
            out += np.einsum("nchw,oc->nohw", xp[:, :, u : u + h, v : v + wd], w[:, :, u, v])
    return out + b[None, :, None, None]


def dense_layer_oracle(layer, feats, omega):
    h = np.concatenate([o * f for o, f in zip(omega, feats)], axis=1)
    h = np.maximum(h, 0)
    h = conv_same(h, layer.conv1.weight.data, layer.conv1.bias.data)
    return conv_same(h, layer.conv3.weight.data, layer.conv3.bias.data)


def plain_dense_block(block, x0):
    """Ordinary dense connectivity: each layer sees the concatenation of everything before it."""
    feats = [x0]
    for layer in block.layers:
        feats.append(dense_layer_oracle(layer, feats, [1.0] * len(feats)))
    return np.concatenate(feats, axis=1)


def _rand(rng, *shape):
    return rng.standard_normal(shape)


def _randomize(module, rng):
    for _, p in module.named_parameters():
        p.data[...] = rng.standard_normal(p.shape) * 0.3


# --- dense layers ------------------------------------------------------------


def test_dense_layer_unit_weights_equal_plain_layer_bitwise(rng):
    kw = dict(index=3, head_channels=4, growth_rate=3, inner=5, dtype=F64)
    weighted = DenseLayer(rng=np.random.default_rng(0), weighted=True, **kw)
    plain = DenseLayer(rng=np.random.default_rng(0), weighted=False, **kw)
    assert weighted.omega() == [1.0, 1.0, 1.0]
    feats = [Tensor(_rand(rng, 2, 4, 6, 6)), Tensor(_rand(rng, 2, 3, 6, 6)), Tensor(_rand(rng, 2, 3, 6, 6))]
    a = weighted(feats).data
    b = plain(feats).data
    assert np.array_equal(a, b)


def test_dense_layer_zero_weight_annihilates_input(rng):
    layer = DenseLayer(2, 4, 3, 5, np.random.default_rng(1), F64)
    layer.edge_weights[1].data[...] = 0.0
    x0 = Tensor(_rand(rng, 1, 4, 5, 5))
    out1 = layer([x0, Tensor(_rand(rng, 1, 3, 5, 5))]).data
    out2 = layer([x0, Tensor(100 * _rand(rng, 1, 3, 5, 5))]).data
    assert np.array_equal(out1, out2)


def test_two_layer_block_matches_composition_oracle(rng):
    block = WeightedDenseBlock(3, 2, 2, 4, np.random.default_rng(2), F64)
    _randomize(block, rng)
    for layer in block.layers:
        for w in layer.edge_weights:
            w.data[...] = rng.uniform(0.5, 1.5)
    x0 = _rand(rng, 2, 3, 6, 7)
    x1 = dense_layer_oracle(block.layers[0], [x0], block.layers[0].omega())
    x2 = dense_layer_oracle(block.layers[1], [x0, x1], block.layers[1].omega())
    expect = np.concatenate([x0, x1, x2], axis=1)
    np.testing.assert_allclose(block(Tensor(x0)).data, expect, rtol=0, atol=1e-12)


def test_dense_layer_rejects_wrong_feature_count(rng):
    layer = DenseLayer(2, 4, 3, 5, np.random.default_rng(1), F64)
    with pytest.raises(ValueError):
        layer([Tensor(_rand(rng, 1, 4, 5, 5))])


# --- weighted dense blocks ---------------------------------------------------------


def test_empty_block_is_identity(rng):
    block = WeightedDenseBlock(5, 4, 0, 8, rng, F64)
    x = Tensor(_rand(rng, 1, 5, 4, 4))
    assert block(x) is x


def test_block_channel_count(rng):
    block = WeightedDenseBlock(32, 32, 6, 64, rng, np.float32)
    out = block(Tensor(np.zeros((1, 32, 4, 4), np.float32)))
    assert out.shape == (1, 224, 4, 4)
    assert block.out_channels == 224


def test_unit_weight_block_matches_plain_dense_block(rng):
    block = WeightedDenseBlock(4, 3, 4, 6, np.random.default_rng(3), F64)
    _randomize(block, rng)
    for layer in block.layers:
        for w in layer.edge_weights:
            w.data[...] = 1.0
    x0 = _rand(rng, 1, 4, 6, 6)
    np.testing.assert_allclose(block(Tensor(x0)).data, plain_dense_block(block, x0), rtol=0, atol=1e-12)


# --- spatial attention -----------------------------------------------------------


def _attention(rng, lam, c=4, wdb=10):
    sa = SpatialAttention(c, wdb, lam, np.random.default_rng(4), F64)
    _randomize(sa, rng)
    return sa, Tensor(_rand(rng, 2, c, 6, 6)), Tensor(_rand(rng, 2, wdb, 6, 6))


def test_attention_lambda_zero_is_bottleneck(rng):
    sa, x, y = _attention(rng, 0.0)
    st_ = sa.stages(x, y)
    assert np.array_equal(st_["enhanced"].data, st_["bot"].data)


def test_attention_zero_branch_is_bottleneck(rng):
    sa, x, y = _attention(rng, 0.8)
    for conv in (sa.att1, sa.att2, sa.att3):
        conv.weight.data[...] = 0
        conv.bias.data[...] = 0
    st_ = sa.stages(x, y)
    assert np.all(st_["att"].data == 0)
    assert np.array_equal(st_["enhanced"].data, st_["bot"].data)


def test_attention_enhancement_bound(rng):
    lam = 0.5
    sa, x, y = _attention(rng, lam)
    st_ = sa.stages(x, y)
    att = st_["att"].data
    assert np.all(np.abs(att) < 1)
    diff = np.abs(st_["enhanced"].data - st_["bot"].data)
    assert np.all(diff <= lam * np.abs(st_["bot"].data) + 1e-15)
    np.testing.assert_allclose(st_["res"].data, np.abs(x.data - st_["bot"].data))


def test_attention_disabled_keeps_only_bottleneck(rng):
    sa = SpatialAttention(4, 10, 0.5, rng, F64, enabled=False)
    assert [n for n, _ in sa.named_parameters()] == ["bottleneck.weight", "bottleneck.bias"]


# --- residual deconvolution --------------------------------------------------------


def test_rd_low_path_isolation(rng):
    rd = ResidualDeconvStage(3, rng, F64)
    rd.deconv.weight.data[...] = 0
    rd.deconv.bias.data[...] = 0
    rd.low.weight.data[...] = np.eye(3)[:, :, None, None]
    rd.low.bias.data[...] = 0
    x = _rand(rng, 1, 3, 4, 5)
    np.testing.assert_array_equal(rd(Tensor(x)).data, x.repeat(2, axis=2).repeat(2, axis=3))


def test_rd_high_path_isolation(rng):
    rd = ResidualDeconvStage(3, rng, F64)
    _randomize(rd, rng)
    rd.low.weight.data[...] = 0
    rd.low.bias.data[...] = 0
    x = Tensor(_rand(rng, 1, 3, 4, 5))
    expect = T.prelu(T.conv_transpose2d(x, rd.deconv.weight, rd.deconv.bias, stride=2, padding=1), rd.act.slope)
    np.testing.assert_array_equal(rd(x).data, expect.data)


def test_rd_geometry(rng):
    rd = ResidualDeconvStage(64, rng, np.float32)
    assert rd(Tensor(np.zeros((1, 64, 13, 17), np.float32))).shape == (1, 64, 26, 34)


def test_plain_deconv_has_no_low_path(rng):
    rd = ResidualDeconvStage(3, rng, F64, residual=False)
    assert not hasattr(rd, "low")


# --- full network ------------------------------------------------------------------------


def test_lightweight_config_runs():
    cfg = NetworkConfig.lightweight(growth_rate=8)
    assert cfg.dense_layers_per_group == (6, 10, 14, 10)
    net = ADRD(cfg)
    with no_grad():
        out = net(np.random.default_rng(0).random((1, 3, 6, 6), dtype=np.float32))
    assert out.shape == (1, 3, 24, 24)
    assert np.all(np.isfinite(out.data))


def test_batch_invariance(rng):
    net = ADRD(NetworkConfig.tiny(), dtype=F64)
    x = rng.random((2, 3, 7, 9))
    with no_grad():
        both = net(x).data
        each = np.concatenate([net(x[i : i + 1]).data for i in range(2)])
    np.testing.assert_allclose(both, each, rtol=0, atol=1e-12)


@settings(max_examples=15, deadline=None)
@given(
    primary=st.integers(1, 4),
    growth=st.integers(1, 4),
    layers=st.lists(st.integers(0, 3), min_size=1, max_size=3),
    scale=st.sampled_from([2, 4]),
    h=st.integers(2, 5),
    w=st.integers(2, 5),
)
def test_channel_bookkeeping(primary, growth, layers, scale, h, w):
    cfg = NetworkConfig(primary_channels=primary, growth_rate=growth, dense_layers_per_group=tuple(layers),
                        global_bottleneck_channels=3, scale_factor=scale)
    net = ADRD(cfg, dtype=F64)
    trace = []
    with no_grad():
        out = net(np.zeros((1, 3, h, w)), trace=trace)
    shapes = dict(trace)
    for g, cin in enumerate(cfg.group_input_channels()):
        assert cin == primary * 2**g
        assert shapes[f"group{g}.in"] == (1, cin, h, w)
        assert shapes[f"group{g}.out"] == (1, 2 * cin, h, w)
    for g, block in enumerate(net.dense_blocks()):
        assert block.out_channels == cfg.wdb_output_channels()[g] == primary * 2**g + layers[g] * growth
    assert shapes["global_bottleneck"] == (1, 3, h, w)
    assert out.shape == (1, 3, h * scale, w * scale)


def test_input_validation():
    net = ADRD(NetworkConfig.tiny())
    with pytest.raises(ValueError):
        net(np.zeros((1, 1, 4, 4), np.float32))


def test_parameter_names_are_unique_paths():
    net = ADRD(NetworkConfig.tiny())
    names = [n for n, _ in net.named_parameters()]
    assert len(names) == len(set(names))
    assert names[0] == "primary.weight"
    assert "groups.0.wdb.layers.1.edge_weights.0" in names
    assert all(p.name == n for n, p in net.named_parameters())


def test_init_is_seeded():
    a = ADRD(NetworkConfig.tiny(init_seed=3)).state_dict()
    b = ADRD(NetworkConfig.tiny(init_seed=3)).state_dict()
    c = ADRD(NetworkConfig.tiny(init_seed=4)).state_dict()
    assert all(np.array_equal(a[k], b[k]) for k in a)
    assert not all(np.array_equal(a[k], c[k]) for k in a)


# --- weight export ----------------------------------------------------------------------


def test_fresh_weights_are_one_and_lower_triangular():
    net = ADRD(NetworkConfig.tiny(dense_layers_per_group=(3, 5)))
    mats = export_weight_matrices(net)
    assert [len(m) for m in mats] == [3, 5]
    for m in mats:
        for l, row in enumerate(m, 1):
            assert len(row) == l
            assert all(w == 1.0 for w in row)


def test_export_round_trip(rng):
    net = ADRD(NetworkConfig.tiny())
    for block in net.dense_blocks():
        for layer in block.layers:
            for w in layer.edge_weights:
                w.data[...] = rng.uniform(-2, 2)
    mats = export_weight_matrices(net)
    for m, block in zip(mats, net.dense_blocks()):
        for row, layer in zip(m, block.layers):
            assert row == [float(w.data) for w in layer.edge_weights]
    text = format_weight_matrices(mats)
    parsed = [[float(v) for v in line.split(":")[1].split()] for line in text.splitlines() if line.startswith("layer")]
    flat = [row for m in mats for row in m]
    for a, b in zip(parsed, flat):
        np.testing.assert_array_equal(np.float32(a), np.float32(b))


def test_plain_blocks_export_ones():
    net = ADRD(NetworkConfig.tiny(weighted_dense=False))
    assert all(w == 1.0 for m in export_weight_matrices(net) for row in m for w in row)


# --- config --------------------------------------------------------------------------------


def test_config_kv_round_trip():
    cfg = NetworkConfig.lightweight(growth_rate=12, lam=0.25, attention=False)
    text = cfg.to_kv()
    assert "lambda=0.25" in text
    assert NetworkConfig.from_kv(text) == cfg


def test_config_rejects_bad_values():
    with pytest.raises(ValueError):
        NetworkConfig(scale_factor=3)
    with pytest.raises(ValueError):
        NetworkConfig(dense_layers_per_group=())
    with pytest.raises(DataError):
        NetworkConfig.from_kv("growth_rate=4\nbogus=1\n")
