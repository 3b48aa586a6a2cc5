import numpy as np
import pytest
import torch
from torch.nn import functional as F

from edk.encoder import (
    Aggregator,
    KnowledgeBase,
    PatternEncoder,
    aggregate,
    encode_pattern,
    knowledge_forward,
)
from edk.errors import NumericError


def _encoder(d=6, d_k=4, depth=2, heads=3, seed=0):
    torch.manual_seed(seed)
    return PatternEncoder(d, d_k, depth, heads)


def _identity_aggregator(d_k):
    agg = Aggregator(d_k).double()
    with torch.no_grad():
        for lin in (agg.mlp[0], agg.mlp[2]):
            lin.weight.copy_(torch.eye(d_k))
            lin.bias.zero_()
    return agg


class TestEncodePattern:
    def test_zero_pattern_constant(self):
        enc = _encoder()
        zero = torch.zeros(5, 6)
        out = encode_pattern(zero, enc)
        assert out.shape == (4,)
        torch.testing.assert_close(out, enc.head(enc.psi(zero.unsqueeze(0)).mean(dim=1))[0], rtol=0, atol=0)
        torch.testing.assert_close(out, encode_pattern(torch.zeros(5, 6), enc), rtol=0, atol=0)

    def test_row_permutation_invariance(self):
        enc = _encoder(d=9, heads=3, depth=3)
        g = torch.Generator().manual_seed(3)
        for _ in range(20):
            pattern = torch.randn(7, 9, generator=g)
            perm = torch.randperm(7, generator=g)
            diff = (encode_pattern(pattern[perm], enc) - encode_pattern(pattern, enc)).abs().max()
            assert diff <= 1e-6

    @pytest.mark.parametrize("n_fields", range(1, 9))
    def test_any_field_count(self, n_fields):
        enc = _encoder()
        assert encode_pattern(torch.randn(2, 3, n_fields, 6), enc).shape == (2, 3, 4)

    def test_single_row_hand_oracle(self):
        enc = _encoder(d=6, d_k=4, depth=2, heads=3).double()
        x = torch.randn(1, 1, 6, dtype=torch.float64)
        h = x[0, 0]
        for block in enc.blocks:
            # one row: the softmax is 1, attention returns its own value vector
            a = F.layer_norm(h, (6,), block.norm1.weight, block.norm1.bias)
            w_v = block.attn.qkv.weight[12:18]
            b_v = block.attn.qkv.bias[12:18]
            h = h + block.attn.out.weight @ (w_v @ a + b_v) + block.attn.out.bias
            f = F.layer_norm(h, (6,), block.norm2.weight, block.norm2.bias)
            l1, l2 = block.ffn[0], block.ffn[2]
            h = h + l2.weight @ torch.relu(l1.weight @ f + l1.bias) + l2.bias
        m1, m2 = enc.head[0], enc.head[2]
        expected = m2.weight @ torch.relu(m1.weight @ h + m1.bias) + m2.bias
        torch.testing.assert_close(encode_pattern(x, enc)[0], expected)

    def test_rejects_non_finite(self):
        with pytest.raises(NumericError):
            encode_pattern(torch.full((1, 3, 6), float("inf")), _encoder())

    def test_heads_must_divide_width(self):
        with pytest.raises(ValueError):
            PatternEncoder(8, 4, 1, 3)

    def test_gradient_matches_finite_differences(self):
        enc = _encoder(d=3, d_k=2, depth=1, heads=1).double()
        agg = Aggregator(2).double()
        torch.manual_seed(1)
        pats = torch.randn(2, 2, 3, 3, dtype=torch.float64)

        def f():
            return aggregate(encode_pattern(pats, enc), agg).sum()

        params = list(enc.parameters())
        for p in params:
            p.grad = None
        f().backward()
        h = 1e-6
        for p in params:
            numeric = torch.zeros_like(p)
            with torch.no_grad():
                for idx in np.ndindex(*p.shape):
                    p[idx] += h
                    up = f()
                    p[idx] -= 2 * h
                    down = f()
                    p[idx] += h
                    numeric[idx] = (up - down) / (2 * h)
            if numeric.norm() < 1e-8:
                assert p.grad.norm() < 1e-6
            else:
                assert (p.grad - numeric).norm() / numeric.norm() < 1e-4


class TestAggregate:
    def test_identical_inputs(self):
        torch.manual_seed(0)
        agg = Aggregator(4)
        v = torch.randn(4)
        torch.testing.assert_close(aggregate(v.expand(5, 4), agg), agg.mlp(v))

    def test_order_is_bitwise_irrelevant_for_two(self):
        agg = Aggregator(4)
        s = torch.randn(3, 2, 4)
        assert torch.equal(aggregate(s, agg), aggregate(s.flip(1), agg))

    def test_identity_mlp_is_mean(self):
        agg = _identity_aggregator(3)
        s = torch.tensor([[1.0, -2.0, 4.0], [3.0, 0.5, 2.0]], dtype=torch.float64)
        # ReLU between the layers does no harm on non-negative means
        torch.testing.assert_close(aggregate(s, agg), torch.tensor([2.0, 0.0, 3.0], dtype=torch.float64))

    def test_empty(self):
        with pytest.raises(ValueError):
            aggregate(torch.zeros(0, 4), Aggregator(4))


def _kb(vocab, seed=0):
    torch.manual_seed(seed)
    return KnowledgeBase(vocab, d=6, d_k=3, K=4, depth=2, heads=3)


class TestKnowledgeForward:
    @pytest.mark.parametrize("n_fields", range(1, 9))
    def test_shapes(self, n_fields):
        kb = _kb([3] * n_fields)
        out = knowledge_forward(kb, torch.zeros(5, n_fields, dtype=torch.long))
        assert out.s.shape == (5, 4, 3)
        assert out.c.shape == (5, 3)
        assert torch.isfinite(out.s).all() and torch.isfinite(out.c).all()

    def test_eval_deterministic(self):
        kb = _kb([3, 4, 5])
        kb.train()
        x = torch.tensor([[0, 1, 2], [2, 3, 4]])
        a, b = knowledge_forward(kb, x), knowledge_forward(kb, x)
        assert torch.equal(a.c, b.c) and torch.equal(a.s, b.s)
        assert kb.training

    def test_field_permutation_with_tables(self):
        vocab = [3, 4, 5]
        kb = _kb(vocab)
        perm = [2, 0, 1]
        other = _kb([vocab[i] for i in perm], seed=1)
        other.load_state_dict(kb.state_dict() | _permuted_tables(kb, perm))
        x = torch.tensor([[0, 1, 2], [2, 3, 4], [1, 0, 0]])
        a = knowledge_forward(kb, x)
        b = knowledge_forward(other, x[:, perm])
        assert (a.c - b.c).abs().max() <= 1e-6
        assert (a.s - b.s).abs().max() <= 1e-6


def _permuted_tables(kb, perm):
    out = {}
    for name in ("phi1", "phi2"):
        emb = getattr(kb.extractor, name)
        out[f"extractor.{name}.weight"] = torch.cat([emb.table(i) for i in perm])
    return out
