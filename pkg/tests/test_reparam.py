import numpy as np
import pytest

from helpers import rand_tensor
from oracles import conv2d_loops, repvgg_branch_forward
from repdet.errors import ConfigError
from repdet.layers import repvgg_block_forward
from repdet.reparam import (
    RepVggBlockParams,
    fold_bn,
    identity_to_3x3,
    pad_1x1_to_3x3,
    repvgg_fuse,
)
from repdet.tensor import BatchNormParams, ConvParams, Tensor, conv2d


def rand_bn(c, seed):
    r = np.random.default_rng(seed)
    return BatchNormParams(
        r.uniform(0.5, 1.5, c).astype(np.float32),
        r.uniform(-0.5, 0.5, c).astype(np.float32),
        r.uniform(-0.5, 0.5, c).astype(np.float32),
        r.uniform(0.1, 2.0, c).astype(np.float32),
    )


def identity_bn(c, eps=1e-5):
    # gamma chosen so gamma/sqrt(var+eps) == 1 exactly
    return BatchNormParams(
        np.full(c, np.sqrt(1.0 + eps), np.float32),
        np.zeros(c, np.float32),
        np.zeros(c, np.float32),
        np.ones(c, np.float32),
        eps=eps,
    )


def rand_block(c_in, c_out, stride=1, groups=1, with_id=None, seed=0):
    r = np.random.default_rng(seed)
    if with_id is None:
        with_id = c_in == c_out and stride == 1
    cg = c_in // groups
    return RepVggBlockParams(
        conv3=ConvParams(
            r.uniform(-0.5, 0.5, (c_out, cg, 3, 3)).astype(np.float32),
            None, stride, 1, groups,
        ),
        bn3=rand_bn(c_out, seed + 1),
        conv1=ConvParams(
            r.uniform(-0.5, 0.5, (c_out, cg, 1, 1)).astype(np.float32),
            None, stride, 0, groups,
        ),
        bn1=rand_bn(c_out, seed + 2),
        id_bn=rand_bn(c_out, seed + 3) if with_id else None,
    )


class TestFoldBn:
    def test_identity_bn_keeps_conv(self):
        r = np.random.default_rng(0)
        w = r.normal(size=(8, 4, 3, 3)).astype(np.float32)
        b = r.normal(size=8).astype(np.float32)
        conv = ConvParams(w, b, 1, 1)
        # eps folded into gamma so the scale factor is exactly 1
        fused = fold_bn(conv, identity_bn(8))
        np.testing.assert_allclose(fused.weight, w, rtol=1e-6)
        np.testing.assert_allclose(fused.bias, b, rtol=1e-6, atol=1e-7)

    def test_gamma_two_doubles(self):
        w = np.ones((2, 1, 1, 1), np.float32)
        conv = ConvParams(w, np.array([3.0, 5.0], np.float32))
        bn = BatchNormParams(
            np.full(2, 2 * np.sqrt(1 + 1e-5), np.float32),
            np.zeros(2, np.float32),
            np.zeros(2, np.float32),
            np.ones(2, np.float32),
        )
        fused = fold_bn(conv, bn)
        np.testing.assert_allclose(fused.weight, 2 * w, rtol=1e-6)
        np.testing.assert_allclose(fused.bias, [6.0, 10.0], rtol=1e-6)

    def test_random_pairs_match_sequential(self):
        for seed in range(50):
            r = np.random.default_rng(seed)
            c_in, c_out = int(r.integers(1, 8)), int(r.integers(1, 10))
            k = int(r.choice([1, 3, 5]))
            stride = int(r.choice([1, 2]))
            has_bias = bool(r.integers(0, 2))
            w = r.normal(size=(c_out, c_in, k, k)).astype(np.float32)
            b = r.normal(size=c_out).astype(np.float32) if has_bias else None
            conv = ConvParams(w, b, stride, k // 2)
            bn = rand_bn(c_out, seed + 1000)
            x = rand_tensor((2, c_in, 9, 11), seed)

            from repdet.tensor import batch_norm_infer

            want = batch_norm_infer(conv2d(x, conv), bn)
            got = conv2d(x, fold_bn(conv, bn))
            assert np.max(np.abs(got.data - want.data)) < 1e-5

    def test_channel_mismatch(self):
        conv = ConvParams(np.zeros((4, 2, 1, 1), np.float32))
        with pytest.raises(ConfigError):
            fold_bn(conv, rand_bn(5, 0))


class TestPad1x1:
    def test_center_embedding(self):
        w = np.arange(6, dtype=np.float32).reshape(3, 2, 1, 1)
        out = pad_1x1_to_3x3(ConvParams(w))
        assert out.kernel == (3, 3)
        np.testing.assert_array_equal(out.weight[:, :, 1, 1], w[:, :, 0, 0])
        mask = np.ones((3, 3), bool)
        mask[1, 1] = False
        assert not out.weight[:, :, mask].any()

    def test_padded_conv_equivalent(self):
        r = np.random.default_rng(3)
        w = r.normal(size=(5, 4, 1, 1)).astype(np.float32)
        b = r.normal(size=5).astype(np.float32)
        orig = ConvParams(w, b, stride=1, padding=0)
        padded = pad_1x1_to_3x3(orig)
        x = rand_tensor((2, 4, 8, 8), 4)
        got = conv2d(x, padded)
        want = conv2d(x, orig)
        assert np.max(np.abs(got.data - want.data)) < 1e-6

    def test_zero_stays_zero(self):
        out = pad_1x1_to_3x3(ConvParams(np.zeros((2, 2, 1, 1), np.float32)))
        assert not out.weight.any()

    def test_rejects_3x3(self):
        with pytest.raises(ConfigError):
            pad_1x1_to_3x3(ConvParams(np.zeros((2, 2, 3, 3), np.float32)))


class TestIdentity3x3:
    def test_plain_identity(self):
        p = identity_to_3x3(4, 1)
        x = rand_tensor((2, 4, 6, 6), 7)
        np.testing.assert_array_equal(conv2d(x, p).data, x.data)

    def test_depthwise_diracs(self):
        p = identity_to_3x3(6, 6)
        assert p.weight.shape == (6, 1, 3, 3)
        for j in range(6):
            want = np.zeros((1, 3, 3), np.float32)
            want[0, 1, 1] = 1.0
            np.testing.assert_array_equal(p.weight[j], want)

    def test_grouped_identity_exact(self):
        p = identity_to_3x3(8, 2)
        x = rand_tensor((1, 8, 5, 5), 9)
        np.testing.assert_array_equal(conv2d(x, p).data, x.data)

    def test_divisibility(self):
        with pytest.raises(ConfigError):
            identity_to_3x3(6, 4)


class TestRepVggFuse:
    def test_pure_identity_branch(self):
        c = 4
        blk = RepVggBlockParams(
            conv3=ConvParams(np.zeros((c, c, 3, 3), np.float32), None, 1, 1),
            bn3=identity_bn(c),
            conv1=ConvParams(np.zeros((c, c, 1, 1), np.float32), None, 1, 0),
            bn1=identity_bn(c),
            id_bn=identity_bn(c),
        )
        fused = repvgg_fuse(blk)
        want = np.zeros((c, c, 3, 3), np.float32)
        for j in range(c):
            want[j, j, 1, 1] = 1.0
        np.testing.assert_allclose(fused.weight, want, atol=1e-6)
        np.testing.assert_allclose(fused.bias, np.zeros(c), atol=1e-6)

    def test_main_branch_only(self):
        r = np.random.default_rng(11)
        w3 = r.normal(size=(6, 4, 3, 3)).astype(np.float32)
        blk = RepVggBlockParams(
            conv3=ConvParams(w3, None, 2, 1),
            bn3=identity_bn(6),
            conv1=ConvParams(np.zeros((6, 4, 1, 1), np.float32), None, 2, 0),
            bn1=identity_bn(6),
        )
        fused = repvgg_fuse(blk)
        np.testing.assert_allclose(fused.weight, w3, rtol=1e-6)
        np.testing.assert_allclose(fused.bias, np.zeros(6), atol=1e-6)
        assert fused.stride == 2

    def test_block_forward_matches_branch_oracle(self):
        # random params, random 1x8x16x16 input, branch-by-branch reference
        blk = rand_block(8, 8, seed=21)
        x = rand_tensor((1, 8, 16, 16), 22)
        got = repvgg_block_forward(x, blk)
        want = repvgg_branch_forward(
            x.data,
            {
                "w3": blk.conv3.weight,
                "bn3": (blk.bn3.gamma, blk.bn3.beta, blk.bn3.running_mean,
                        blk.bn3.running_var),
                "w1": blk.conv1.weight,
                "bn1": (blk.bn1.gamma, blk.bn1.beta, blk.bn1.running_mean,
                        blk.bn1.running_var),
                "id_bn": (blk.id_bn.gamma, blk.id_bn.beta,
                          blk.id_bn.running_mean, blk.id_bn.running_var),
                "stride": 1,
                "groups": 1,
            },
        )
        assert np.max(np.abs(got.data - want)) < 1e-5

    def test_fused_matches_block_many_inputs(self):
        from repdet.tensor import silu

        blk = rand_block(8, 8, seed=33)
        fused = repvgg_fuse(blk)
        worst = 0.0
        for i in range(64):
            x = rand_tensor((1, 8, 16, 16), 100 + i)
            a = repvgg_block_forward(x, blk)
            b = silu(conv2d(x, fused))
            worst = max(worst, float(np.max(np.abs(a.data - b.data))))
        assert worst < 1e-4

    @pytest.mark.parametrize("c_in,c_out,stride,groups", [
        (4, 8, 2, 1), (8, 8, 1, 1), (8, 8, 2, 1), (6, 6, 1, 6), (8, 4, 1, 2),
    ])
    def test_fused_matches_block_shapes(self, c_in, c_out, stride, groups):
        from repdet.tensor import silu

        blk = rand_block(c_in, c_out, stride, groups, seed=c_in * 100 + c_out)
        fused = repvgg_fuse(blk)
        x = rand_tensor((2, c_in, 12, 12), stride)
        a = repvgg_block_forward(x, blk)
        b = silu(conv2d(x, fused))
        assert a.shape == b.shape
        assert np.max(np.abs(a.data - b.data)) < 1e-5

    def test_loop_oracle_agreement_on_fused(self):
        # fused conv evaluated by the naive loop conv equals the fast path
        blk = rand_block(4, 4, seed=55)
        fused = repvgg_fuse(blk)
        x = rand_tensor((1, 4, 8, 8), 56)
        fast = conv2d(x, fused).data
        slow = conv2d_loops(x.data, fused.weight, fused.bias, 1, 1, 1)
        assert np.max(np.abs(fast - slow)) < 1e-6

    def test_invariant_violations(self):
        c = ConvParams(np.zeros((4, 4, 3, 3), np.float32), None, 1, 1)
        c1 = ConvParams(np.zeros((4, 4, 1, 1), np.float32), None, 1, 0)
        with pytest.raises(ConfigError):
            RepVggBlockParams(conv3=c, bn3=rand_bn(4, 0), conv1=c, bn1=rand_bn(4, 1))
        with pytest.raises(ConfigError):
            RepVggBlockParams(
                conv3=ConvParams(np.zeros((4, 4, 3, 3), np.float32), None, 2, 1),
                bn3=rand_bn(4, 0),
                conv1=ConvParams(np.zeros((4, 4, 1, 1), np.float32), None, 2, 0),
                bn1=rand_bn(4, 1),
                id_bn=rand_bn(4, 2),
            )
        with pytest.raises(ConfigError):
            RepVggBlockParams(
                conv3=c,
                bn3=rand_bn(4, 0),
                conv1=ConvParams(np.zeros((4, 4, 1, 1), np.float32), None, 2, 0),
                bn1=rand_bn(4, 1),
            )
