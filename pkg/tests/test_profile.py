import numpy as np
import pytest
from hypothesis import given, strategies as st

from bdtwin.profile import (InvalidSpecError, LayerKind, LayerProfile, LayerSpec, ModelProfile,
                            build_preset, flops_of_layer, model_from_config, output_bits_of_layer,
                            prefix_flops, suffix_flops)

# per-layer values frozen from the layer formulas evaluated by hand (3x3 same-padded convs,
# 2x2 pools, flatten 512 -> 4096 -> 4096 -> 10)
VGG11_FLOPS = [3538944, 65536, 37748736, 32768, 37748736, 75497472, 16384, 37748736, 75497472,
               8192, 18874368, 18874368, 2048, 4194304, 33554432, 81920]
VGG11_BITS = [2097152, 524288, 1048576, 262144, 524288, 524288, 131072, 262144, 262144, 65536,
              65536, 65536, 16384, 131072, 131072, 320]
CNN_FLOPS = [1254400, 25088, 20070400, 12544, 3211264, 10240]
CNN_BITS = [802816, 200704, 401408, 100352, 16384, 320]


def conv(ci, co, h, k, batch=1, precision=32):
    return LayerSpec(LayerKind.CONV, batch, precision, in_dims=(ci, h, h), out_dims=(co, h, h),
                     filter_dims=(k, k))


def test_conv_flops():
    assert flops_of_layer(conv(3, 64, 32, 3)) == 3_538_944


def test_pool_flops():
    spec = LayerSpec("pool", in_dims=(64, 32, 32), out_dims=(64, 16, 16))
    assert flops_of_layer(spec) == 65_536


def test_fc_flops_unit():
    assert flops_of_layer(LayerSpec("fc", in_size=1, out_size=1)) == 2


def test_output_bits():
    assert output_bits_of_layer(conv(3, 64, 32, 3)) == 2_097_152
    assert output_bits_of_layer(LayerSpec("fc", in_size=4096, out_size=10)) == 320
    assert output_bits_of_layer(LayerSpec("pool", precision=1, in_dims=(1, 2, 2),
                                          out_dims=(1, 1, 1))) == 1


@pytest.mark.parametrize("kw", [
    dict(kind="conv", in_dims=(0, 4, 4), out_dims=(1, 4, 4), filter_dims=(3, 3)),
    dict(kind="conv", in_dims=(1, 4, 4), out_dims=(1, 4, 4), filter_dims=(3, -1)),
    dict(kind="pool", in_dims=(2, 4, 4), out_dims=(3, 2, 2)),
    dict(kind="fc", in_size=0, out_size=3),
    dict(kind="fc", in_size=3, out_size=3, batch=0),
])
def test_invalid_layers_rejected(kw):
    with pytest.raises(InvalidSpecError):
        LayerSpec(**kw)


def test_vgg11_preset_frozen():
    m = build_preset("vgg11_cifar10")
    assert m.n_layers == 16
    assert m.flops.tolist() == VGG11_FLOPS
    assert m.output_bits.tolist() == VGG11_BITS
    assert m.total_flops == 343_484_416


def test_cnn_preset_frozen():
    m = build_preset("cnn_fashion_mnist")
    assert m.n_layers == 6
    assert m.flops.tolist() == CNN_FLOPS
    assert m.output_bits.tolist() == CNN_BITS


def test_preset_batch_scales_linearly():
    m1, m4 = build_preset("cnn_fashion_mnist"), build_preset("cnn_fashion_mnist", batch=4)
    assert np.array_equal(m4.flops, 4 * m1.flops)
    assert np.array_equal(m4.output_bits, 4 * m1.output_bits)


def test_preset_errors():
    with pytest.raises(InvalidSpecError):
        build_preset("vgg11_cifar10", batch=0)
    with pytest.raises(InvalidSpecError):
        build_preset("resnet")


def test_prefix_and_suffix():
    m = ModelProfile("toy", tuple(LayerProfile(f, 1.0) for f in (2, 3, 5)))
    assert prefix_flops(m, 0) == 0
    assert prefix_flops(m, 2) == 5
    assert prefix_flops(m, 3) == m.total_flops == 10
    assert suffix_flops(m, 1) == 8
    with pytest.raises(IndexError):
        prefix_flops(m, 4)


def test_model_from_config_custom_layers():
    m = model_from_config({"name": "c", "precision": 8, "layers": [
        {"kind": "conv", "in_dims": [1, 4, 4], "out_dims": [2, 4, 4], "filter_dims": [3, 3]},
        {"kind": "fc", "in_size": 32, "out_size": 4},
    ]})
    assert m.flops.tolist() == [2 * 1 * 9 * 2 * 16, 2 * 32 * 4]
    assert m.output_bits.tolist() == [8 * 32, 8 * 4]


@given(st.lists(st.integers(0, 10 ** 9), min_size=1, max_size=20))
def test_prefix_monotone_and_complete(flops):
    m = ModelProfile("h", tuple(LayerProfile(f, 1.0) for f in flops))
    pre = [prefix_flops(m, l) for l in range(m.n_layers + 1)]
    assert all(b >= a for a, b in zip(pre, pre[1:]))
    assert pre[-1] == sum(flops)
    assert all(prefix_flops(m, l) + suffix_flops(m, l) == sum(flops) for l in range(m.n_layers + 1))
