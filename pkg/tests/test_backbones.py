import numpy as np
import pytest
import torch

from edk.backbones import (
    KINDS,
    Backbone,
    BackboneConfig,
    CrossNetwork,
    DINAttention,
    InteractingLayer,
    KnowledgeAdapter,
    backbone_forward,
    fm_second_order,
    knowledge_adapter,
)
from edk.encoder import KnowledgeVectors
from edk.errors import ConfigError, DataError
from edk.metrics import logloss

VOCAB = [4, 5, 3]


def _tiny(kind, use_knowledge=False, mode="c", seed=0):
    torch.manual_seed(seed)
    cfg = BackboneConfig(
        kind=kind, d_b=4, hidden=(5, 3), cross_depth=2, cin_sizes=(3, 2), att_layers=2, att_heads=2,
        din_att_hidden=(4,), use_knowledge=use_knowledge, knowledge_mode=mode, d_k=3,
    )
    return Backbone(cfg, VOCAB)


def _inputs(n=6, seed=0):
    g = torch.Generator().manual_seed(seed)
    x = torch.stack([torch.randint(0, v, (n,), generator=g) for v in VOCAB], dim=1)
    hist = torch.randint(-1, VOCAB[1], (n, 3), generator=g)
    kv = KnowledgeVectors(torch.randn(n, 2, 3, generator=g), torch.randn(n, 3, generator=g))
    return x, hist, kv


class TestFM:
    def test_two_fields(self):
        e = torch.randn(1, 2, 5)
        torch.testing.assert_close(fm_second_order(e), (e[:, 0] * e[:, 1]).sum(-1))

    def test_brute_force_five_fields(self):
        e = torch.randn(7, 5, 4, dtype=torch.float64)
        ref = torch.zeros(7, dtype=torch.float64)
        for i in range(5):
            for j in range(i + 1, 5):
                ref += (e[:, i] * e[:, j]).sum(-1)
        torch.testing.assert_close(fm_second_order(e), ref)


class TestInteractions:
    def test_zero_cross_weights_identity(self):
        net = CrossNetwork(6, 3)
        with torch.no_grad():
            for w in net.w:
                w.zero_()
        x = torch.randn(4, 6)
        assert torch.equal(net(x), x)

    def test_autoint_single_field(self):
        layer = InteractingLayer(4, 2)
        e = torch.randn(3, 1, 4)
        torch.testing.assert_close(layer(e), torch.relu(layer.W_v(e) + layer.W_res(e)))

    def test_din_empty_history_pools_to_zero(self):
        att = DINAttention(4, (3,))
        keys = torch.randn(2, 5, 4)
        out = att(torch.randn(2, 4), keys, torch.zeros(2, 5, dtype=torch.bool))
        assert torch.all(out == 0)


class TestAdapter:
    def test_zero_input_zero_bias(self):
        ad = KnowledgeAdapter(3, 4, hidden=(5,))
        with torch.no_grad():
            for m in ad.mlp:
                if isinstance(m, torch.nn.Linear):
                    m.bias.zero_()
        out = knowledge_adapter(ad, KnowledgeVectors(torch.zeros(2, 2, 3), torch.zeros(2, 3)))
        assert torch.all(out == 0)

    def test_matches_composed_layers(self):
        ad = KnowledgeAdapter(3, 4, hidden=(5,)).double()
        v = torch.randn(2, 3, dtype=torch.float64)
        l1, l2 = ad.mlp[0], ad.mlp[2]
        ref = torch.relu(v @ l1.weight.T + l1.bias) @ l2.weight.T + l2.bias
        torch.testing.assert_close(ad(KnowledgeVectors(torch.zeros(2, 1, 3), v)), ref)

    def test_linear_adapter_is_one_matrix(self):
        ad = KnowledgeAdapter(3, 3).double()
        with torch.no_grad():
            ad.mlp[0].weight.copy_(torch.eye(3))
            ad.mlp[0].bias.zero_()
        v = torch.randn(4, 3, dtype=torch.float64)
        torch.testing.assert_close(ad(KnowledgeVectors(torch.zeros(4, 1, 3), v)), v)

    def test_patterns_mode_identical_vectors(self):
        ad = KnowledgeAdapter(3, 4, mode="patterns").double()
        v = torch.randn(2, 3, dtype=torch.float64)
        s = v[:, None].expand(2, 5, 3)
        pooled = ad.pool(s, torch.randn(2, 4, dtype=torch.float64))
        torch.testing.assert_close(pooled, v)


class TestBackbone:
    @pytest.mark.parametrize("kind", KINDS)
    def test_knowledge_off_ignores_knowledge(self, kind):
        x, hist, kv = _inputs()
        a = _tiny(kind)
        b = _tiny(kind)
        out = a(x, None, hist)
        assert torch.equal(out, a(x, kv, hist))
        assert torch.equal(out, b(x, None, hist))

    @pytest.mark.parametrize("kind", KINDS)
    @pytest.mark.parametrize("mode", ["c", "patterns"])
    def test_scores_in_open_interval(self, kind, mode):
        x, hist, kv = _inputs(20)
        model = _tiny(kind, use_knowledge=True, mode=mode)
        big = KnowledgeVectors(kv.s * 1e4, kv.c * 1e4)
        p = backbone_forward(model, x, big, hist)
        assert p.shape == (20,)
        assert torch.all((p > 0) & (p < 1))
        assert np.isfinite(logloss(p.detach().numpy(), np.arange(20) % 2))

    @pytest.mark.parametrize("kind", KINDS)
    def test_gradient_matches_finite_differences(self, kind):
        x, hist, kv = _inputs(4)
        model = _tiny(kind, use_knowledge=True).double()
        kv = KnowledgeVectors(kv.s.double(), kv.c.double())
        with torch.no_grad():
            # move every parameter off zero so ReLU kinks and zero-init paths are exercised
            g = torch.Generator().manual_seed(1)
            for p in model.parameters():
                p.add_(0.3 * torch.randn(p.shape, generator=g, dtype=p.dtype))

        def f():
            return (model(x, kv, hist) * torch.arange(1, 5, dtype=torch.float64)).sum()

        model.zero_grad()
        f().backward()
        analytic = torch.cat([p.grad.flatten() for p in model.parameters()])
        numeric = []
        h = 1e-6
        with torch.no_grad():
            for p in model.parameters():
                for idx in np.ndindex(*p.shape):
                    p[idx] += h
                    up = f()
                    p[idx] -= 2 * h
                    down = f()
                    p[idx] += h
                    numeric.append((up - down) / (2 * h))
        numeric = torch.stack(numeric)
        assert (analytic - numeric).norm() / numeric.norm() < 1e-4

    def test_din_needs_history(self):
        x, _, _ = _inputs()
        with pytest.raises(DataError):
            _tiny("din")(x)

    def test_knowledge_required(self):
        x, hist, _ = _inputs()
        with pytest.raises(DataError):
            backbone_forward(_tiny("deepfm", use_knowledge=True), x, None, hist)

    def test_knowledge_adds_one_field(self):
        x, hist, kv = _inputs()
        model = _tiny("pnn", use_knowledge=True)
        assert model.field_embeddings(x, kv).shape == (6, len(VOCAB) + 1, 4)

    def test_config_validation(self):
        with pytest.raises(ConfigError):
            BackboneConfig(kind="widedeep")
        with pytest.raises(ConfigError):
            BackboneConfig(kind="autoint", d_b=5, att_heads=2)
        with pytest.raises(ConfigError):
            BackboneConfig(knowledge_mode="s")

    def test_kind_params(self):
        assert BackboneConfig(kind="dcn").kind_params() == {"hidden": (64, 32), "cross_depth": 2}
        assert set(BackboneConfig(kind="autoint").kind_params()) == {"att_layers", "att_heads"}
