import numpy as np
import pytest

from depthformer import tensor as T
from depthformer.conv_branch import ConvBranch, ConvStemConfig, encode_conv, receptive_radius
from depthformer.gradcheck import check_gradients
from depthformer.nn import zero_
from depthformer.tensor import Parameter


def test_output_shape():
    branch = ConvBranch(ConvStemConfig(channels=32), np.random.default_rng(0))
    assert encode_conv(np.zeros((3, 64, 64)), branch).shape == (32, 16, 16)


def test_rejects_indivisible_extent(rng):
    with pytest.raises(ValueError, match="divisible by 4"):
        encode_conv(np.zeros((3, 30, 32)), ConvBranch(ConvStemConfig(channels=4), rng))


def test_zero_residual_reduces_to_skip(rng):
    branch = ConvBranch(ConvStemConfig(channels=4), rng)
    zero_(branch.conv2)
    zero_(branch.affine2)
    branch.skip.weight.data[...] = np.eye(4)[:, :, None, None]
    img = rng.normal(size=(3, 16, 16))
    s = T.relu(branch.stem_affine(branch.stem(img)))
    want = T.relu(T.conv2d(s, branch.skip.weight, stride=2)).data
    assert np.array_equal(encode_conv(img, branch).data, want)


def test_locality(rng):
    branch = ConvBranch(ConvStemConfig(channels=4), rng)
    img = rng.normal(size=(3, 32, 32))
    poked = img.copy()
    u, v = 5, 6
    poked[:, v, u] += 3.0
    diff = np.any(encode_conv(img, branch).data != encode_conv(poked, branch).data, axis=0)
    rad = receptive_radius()
    oy, ox = np.mgrid[0:8, 0:8]
    outside = (np.abs(4 * oy - v) > rad) | (np.abs(4 * ox - u) > rad)
    assert diff.any()
    assert not diff[outside].any()
    assert not diff[-1, -1]


def test_deterministic():
    img = np.random.default_rng(2).normal(size=(3, 16, 16))
    a = encode_conv(img, ConvBranch(ConvStemConfig(channels=4), np.random.default_rng(1))).data
    b = encode_conv(img, ConvBranch(ConvStemConfig(channels=4), np.random.default_rng(1))).data
    assert np.array_equal(a, b)


def test_gradcheck(rng):
    branch = ConvBranch(ConvStemConfig(channels=4), rng)
    for _, p in branch.named_parameters():
        p.data += rng.normal(0, 0.1, p.shape)
    img = Parameter(rng.normal(size=(3, 8, 8)))
    probe = rng.normal(size=(4, 2, 2))
    rep = check_gradients(lambda: (encode_conv(img, branch) * probe).sum(), {"image": img, **dict(branch.named_parameters())})
    assert rep.passed, str(rep)
