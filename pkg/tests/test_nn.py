import numpy as np
import pytest

from oracles import naive_conv, naive_flatten, naive_pool
from ticnn import nn, symmetry
from ticnn.nn import ConvLayerSpec, DenseHead, DenseLayer, GeometryError
from ticnn.symmetry import apply, get_family
from ticnn.tensor import random_tensor

DIH4 = get_family("dih4")


def test_conv_all_ones():
    layer = ConvLayerSpec(np.ones((1, 1, 2, 2)))
    out = nn.conv_valid(np.ones((1, 3, 3)), layer)
    assert np.array_equal(out, np.full((1, 2, 2), 4.0))


def test_conv_unit_kernel_is_identity():
    x = random_tensor((1, 5, 5), 1)
    assert np.array_equal(nn.conv_valid(x, ConvLayerSpec(np.ones((1, 1, 1, 1)))), x)


@pytest.mark.parametrize("n,k,s,cin,cout", [(6, 3, 1, 1, 1), (9, 3, 2, 2, 3), (10, 4, 3, 3, 2), (7, 7, 1, 1, 2)])
def test_conv_matches_loop_oracle(n, k, s, cin, cout):
    x = random_tensor((cin, n, n), n)
    kern = random_tensor((cout, cin, k, k), k)
    out = nn.conv_valid(x, ConvLayerSpec(kern, stride=s))
    assert np.max(np.abs(out - naive_conv(x, kern, s))) <= 1e-12


def test_conv_geometry_errors():
    layer = ConvLayerSpec(np.ones((1, 1, 3, 3)), stride=2)
    with pytest.raises(GeometryError, match="stride divisibility"):
        nn.conv_valid(np.ones((1, 10, 10)), layer)
    with pytest.raises(GeometryError, match="smaller than kernel"):
        nn.conv_valid(np.ones((1, 2, 2)), layer)
    pooled = ConvLayerSpec(np.ones((1, 1, 3, 3)), pooling="max", pool_size=3)
    with pytest.raises(GeometryError, match="pooling divisibility"):
        nn.validate_chain([pooled], 10, 1)


def test_conv_backward_matches_finite_differences(rng):
    x = rng.uniform(-1, 1, (2, 7, 7))
    layer = ConvLayerSpec(rng.uniform(-1, 1, (3, 2, 3, 3)), stride=2)
    g = rng.uniform(-1, 1, (3, 3, 3))
    gx, gk = nn.conv_backward(x, layer, g)
    # conv is linear, so an exact directional check suffices
    dx = rng.uniform(-1, 1, x.shape)
    dk = rng.uniform(-1, 1, layer.kernels.shape)
    assert np.sum(g * nn.conv_valid(dx, layer)) == pytest.approx(np.sum(gx * dx), rel=1e-12)
    assert np.sum(g * nn.conv_valid(x, ConvLayerSpec(dk, stride=2))) == pytest.approx(np.sum(gk * dk), rel=1e-12)


def test_conv_linearity(rng):
    a, b = rng.uniform(-1, 1, (2, 8, 8)), rng.uniform(-1, 1, (2, 8, 8))
    k1, k2 = rng.uniform(-1, 1, (2, 2, 3, 3)), rng.uniform(-1, 1, (2, 2, 3, 3))
    L = lambda k: ConvLayerSpec(k)
    lhs = nn.conv_valid(2 * a - 3 * b, L(k1))
    assert np.max(np.abs(lhs - (2 * nn.conv_valid(a, L(k1)) - 3 * nn.conv_valid(b, L(k1))))) <= 1e-12
    lhs = nn.conv_valid(a, L(k1 + 0.5 * k2))
    assert np.max(np.abs(lhs - (nn.conv_valid(a, L(k1)) + 0.5 * nn.conv_valid(a, L(k2))))) <= 1e-12


def test_commute_check_identity_exact():
    layer = ConvLayerSpec(random_tensor((1, 1, 3, 3), 2))
    assert nn.commute_check(DIH4[0], random_tensor((1, 8, 8), 1), layer) == 0.0


@pytest.mark.parametrize("n,k,s", [(8, 3, 1), (9, 3, 2)])
def test_commute_check_dih4(n, k, s):
    layer = ConvLayerSpec(random_tensor((2, 2, k, k), 5), stride=s)
    v = random_tensor((2, n, n), 6)
    for e in DIH4:
        assert nn.commute_check(e, v, layer) <= 1e-12


def test_activations():
    assert nn.activate(np.array([-1.0, 2.0]), "relu").tolist() == [0.0, 2.0]
    v = random_tensor((3, 3), 1)
    assert nn.activate(v, "identity") is v
    assert nn.activate(np.array(0.0), "sigmoid") == 0.5


@pytest.mark.parametrize("kind", nn.ACTIVATIONS)
def test_activation_commutes_with_transform(kind):
    v = random_tensor((2, 6, 6), 4)
    for e in DIH4:
        assert np.array_equal(nn.activate(apply(e, v), kind), apply(e, nn.activate(v, kind)))


def test_pool_examples():
    v = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert nn.pool(v, "max", 2).tolist() == [[4.0]]
    assert nn.pool(v, "avg", 2).tolist() == [[2.5]]
    with pytest.raises(GeometryError):
        nn.pool(np.zeros((3, 3)), "max", 2)


@pytest.mark.parametrize("kind,p", [("max", 2), ("avg", 2), ("max", 3), ("avg", 4)])
def test_pool_matches_oracle_and_commutes(kind, p):
    v = random_tensor((2, 12, 12), 13)
    assert np.max(np.abs(nn.pool(v, kind, p) - naive_pool(v, kind, p))) <= 1e-15
    for e in DIH4:
        lhs, rhs = apply(e, nn.pool(v, kind, p)), nn.pool(apply(e, v), kind, p)
        if kind == "max":
            assert np.array_equal(lhs, rhs)
        else:
            assert np.max(np.abs(lhs - rhs)) <= 1e-15


def test_flatten_contract():
    maps = random_tensor((2, 3, 3), 1)
    assert np.array_equal(nn.flatten_contract(maps, np.zeros((4, 2, 3, 3))), np.zeros(4))
    assert nn.flatten_contract(np.array([[[3.0]]]), np.array([[[[2.0]]]])).tolist() == [6.0]
    w = random_tensor((4, 2, 3, 3), 2)
    assert np.max(np.abs(nn.flatten_contract(maps, w) - naive_flatten(maps, w))) <= 1e-12
    with pytest.raises(ValueError):
        nn.flatten_contract(maps, np.zeros((4, 2, 2, 2)))


def test_dense_head():
    x = random_tensor((3,), 1)
    assert np.array_equal(nn.dense_forward(x, DenseHead()), x)
    assert nn.dense_forward(np.zeros(2), DenseHead(softmax=True)).tolist() == [0.5, 0.5]
    p = nn.dense_forward(random_tensor((7,), 3) * 20, DenseHead(softmax=True))
    assert abs(p.sum() - 1) <= 1e-12
    with pytest.raises(ValueError):
        nn.dense_forward(np.zeros(3), DenseHead((DenseLayer(np.zeros((2, 4)), np.zeros(2)),)))
    with pytest.raises(ValueError):
        DenseHead((DenseLayer(np.zeros((2, 4)), np.zeros(2)), DenseLayer(np.zeros((2, 3)), np.zeros(2))))


def test_transform_kernels_acts_on_spatial_axes():
    layer = ConvLayerSpec(random_tensor((2, 3, 3, 3), 1))
    e = DIH4[3]
    t = nn.transform_kernels(e, layer)
    assert np.array_equal(t.kernels[1, 2], apply(e, layer.kernels[1, 2]))
    assert symmetry.apply(symmetry.inverse(e), t.kernels).tobytes() == layer.kernels.tobytes()
