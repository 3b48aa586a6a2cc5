"""Toy-scale CTR backbones sharing one knowledge-injection seam.

The adapted knowledge vector joins the field embeddings as one extra
"field" before the interaction layers, so every model sees F + 1 rows.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import torch
from torch import nn

from .encoder import KnowledgeVectors, mlp
from .errors import ConfigError, DataError
from .extractor import FieldEmbedding

KINDS = ("deepfm", "dcn", "pnn", "xdeepfm", "autoint", "din")
EPS = 1e-7


@dataclass(frozen=True)
class BackboneConfig:
    kind: str = "deepfm"
    d_b: int = 16
    hidden: tuple[int, ...] = (64, 32)
    cross_depth: int = 2
    cin_sizes: tuple[int, ...] = (16, 16)
    att_layers: int = 2
    att_heads: int = 2
    din_att_hidden: tuple[int, ...] = (32, 16)
    item_field: int = 1
    use_knowledge: bool = False
    knowledge_mode: str = "c"
    d_k: int = 12
    adapter_hidden: tuple[int, ...] = ()

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown backbone kind {self.kind!r}; choose from {KINDS}")
        if self.knowledge_mode not in ("c", "patterns"):
            raise ConfigError(f"knowledge_mode must be 'c' or 'patterns', got {self.knowledge_mode!r}")
        for key in ("hidden", "cin_sizes", "din_att_hidden", "adapter_hidden"):
            object.__setattr__(self, key, tuple(int(v) for v in getattr(self, key)))
        if self.kind == "autoint" and self.d_b % self.att_heads:
            raise ConfigError("autoint needs d_b divisible by att_heads")

    def to_dict(self) -> dict:
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d

    def kind_params(self) -> dict:
        """Hyperparameters that matter for this kind only."""
        specific = {
            "deepfm": ("hidden",),
            "dcn": ("hidden", "cross_depth"),
            "pnn": ("hidden",),
            "xdeepfm": ("hidden", "cin_sizes"),
            "autoint": ("att_layers", "att_heads"),
            "din": ("hidden", "din_att_hidden"),
        }[self.kind]
        return {k: getattr(self, k) for k in specific}


class KnowledgeAdapter(nn.Module):
    """Maps knowledge base output to one d_b vector."""

    def __init__(self, d_k: int, d_b: int, hidden=(), mode: str = "c"):
        super().__init__()
        self.mode = mode
        self.mlp = mlp([d_k, *hidden, d_b])
        if mode == "patterns":
            self.query = nn.Linear(d_b, d_k, bias=False)
        self.d_k = d_k

    def pool(self, s: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
        # s: (B, K, d_k), target: (B, d_b)
        scores = (s @ self.query(target).unsqueeze(-1)).squeeze(-1) / math.sqrt(self.d_k)
        w = torch.softmax(scores, dim=-1)
        return (w.unsqueeze(-1) * s).sum(dim=-2)

    def forward(self, kv: KnowledgeVectors, target: torch.Tensor | None = None) -> torch.Tensor:
        if self.mode == "patterns":
            return self.mlp(self.pool(kv.s, target))
        return self.mlp(kv.c)


def knowledge_adapter(adapter: KnowledgeAdapter, kb_out: KnowledgeVectors, target=None) -> torch.Tensor:
    return adapter(kb_out, target)


# ---------------------------------------------------------------------------
# Interaction layers


def fm_second_order(e: torch.Tensor) -> torch.Tensor:
    """sum_{i<j} <e_i, e_j> via the square-of-sum identity. e: (B, F, d) -> (B,)"""
    sq_sum = e.sum(dim=1) ** 2
    sum_sq = (e**2).sum(dim=1)
    return 0.5 * (sq_sum - sum_sq).sum(dim=-1)


class CrossNetwork(nn.Module):
    """x_{l+1} = x_0 * (x_l . w_l) + b_l + x_l"""

    def __init__(self, dim: int, depth: int):
        super().__init__()
        self.w = nn.ParameterList(nn.Parameter(torch.randn(dim) * 0.01) for _ in range(depth))
        self.b = nn.ParameterList(nn.Parameter(torch.zeros(dim)) for _ in range(depth))

    def forward(self, x0: torch.Tensor) -> torch.Tensor:
        x = x0
        for w, b in zip(self.w, self.b):
            x = x0 * (x @ w).unsqueeze(-1) + b + x
        return x


class CIN(nn.Module):
    """Compressed interaction network with direct connections and sum pooling."""

    def __init__(self, n_fields: int, sizes):
        super().__init__()
        self.layers = nn.ModuleList()
        prev = n_fields
        for h in sizes:
            self.layers.append(nn.Linear(prev * n_fields, h, bias=False))
            prev = h
        self.out_dim = sum(sizes)

    def forward(self, x0: torch.Tensor) -> torch.Tensor:
        B, m, d = x0.shape
        xk = x0
        pooled = []
        for layer in self.layers:
            z = torch.einsum("bhd,bmd->bhmd", xk, x0).reshape(B, -1, d)
            xk = layer(z.transpose(1, 2)).transpose(1, 2)
            pooled.append(xk.sum(dim=-1))
        return torch.cat(pooled, dim=-1)


class InteractingLayer(nn.Module):
    """AutoInt layer: multi-head self-attention with a projected residual and ReLU."""

    def __init__(self, dim: int, heads: int):
        super().__init__()
        self.heads = heads
        self.W_q = nn.Linear(dim, dim, bias=False)
        self.W_k = nn.Linear(dim, dim, bias=False)
        self.W_v = nn.Linear(dim, dim, bias=False)
        self.W_res = nn.Linear(dim, dim, bias=False)

    def forward(self, e: torch.Tensor) -> torch.Tensor:
        B, F, d = e.shape
        h = self.heads

        def split(t):
            return t.view(B, F, h, d // h).transpose(1, 2)

        q, k, v = split(self.W_q(e)), split(self.W_k(e)), split(self.W_v(e))
        att = torch.softmax(q @ k.transpose(-1, -2) / math.sqrt(d // h), dim=-1)
        out = (att @ v).transpose(1, 2).reshape(B, F, d)
        return torch.relu(out + self.W_res(e))


class DINAttention(nn.Module):
    """Target attention over a padded history; weights are not normalized."""

    def __init__(self, dim: int, hidden):
        super().__init__()
        self.mlp = mlp([4 * dim, *hidden, 1])

    def forward(self, target: torch.Tensor, keys: torch.Tensor, valid: torch.Tensor) -> torch.Tensor:
        # target: (B, d), keys: (B, L, d), valid: (B, L) bool
        q = target.unsqueeze(1).expand_as(keys)
        w = self.mlp(torch.cat([q, keys, q - keys, q * keys], dim=-1)).squeeze(-1)
        w = w * valid
        return (w.unsqueeze(-1) * keys).sum(dim=1)


# ---------------------------------------------------------------------------


class Backbone(nn.Module):
    def __init__(self, cfg: BackboneConfig, vocab_sizes):
        super().__init__()
        self.cfg = cfg
        F = len(vocab_sizes)
        d = cfg.d_b
        self.n_fields = F
        self.emb = FieldEmbedding(vocab_sizes, d, init_std=0.01)
        self.adapter = (
            KnowledgeAdapter(cfg.d_k, d, cfg.adapter_hidden, cfg.knowledge_mode) if cfg.use_knowledge else None
        )
        m = F + (1 if cfg.use_knowledge else 0)
        flat = m * d
        kind = cfg.kind
        if kind in ("deepfm", "xdeepfm"):
            self.linear = FieldEmbedding(vocab_sizes, 1, init_std=0.0)
            self.bias = nn.Parameter(torch.zeros(()))
        if kind == "deepfm":
            self.dnn = mlp([flat, *cfg.hidden, 1])
        elif kind == "dcn":
            self.cross = CrossNetwork(flat, cfg.cross_depth)
            self.dnn = mlp([flat, *cfg.hidden], final_act=True)
            self.out = nn.Linear(flat + cfg.hidden[-1], 1)
        elif kind == "pnn":
            self.dnn = mlp([flat + m * (m - 1) // 2, *cfg.hidden, 1])
            iu = torch.triu_indices(m, m, offset=1)
            self.register_buffer("pair_i", iu[0], persistent=False)
            self.register_buffer("pair_j", iu[1], persistent=False)
        elif kind == "xdeepfm":
            self.cin = CIN(m, cfg.cin_sizes)
            self.cin_out = nn.Linear(self.cin.out_dim, 1)
            self.dnn = mlp([flat, *cfg.hidden, 1])
        elif kind == "autoint":
            self.att = nn.Sequential(*(InteractingLayer(d, cfg.att_heads) for _ in range(cfg.att_layers)))
            self.out = nn.Linear(flat, 1)
        elif kind == "din":
            self.din_att = DINAttention(d, cfg.din_att_hidden)
            self.dnn = mlp([flat + d, *cfg.hidden, 1])

    def field_embeddings(self, x: torch.Tensor, knowledge: KnowledgeVectors | None) -> torch.Tensor:
        e = self.emb(x)
        if self.adapter is None:
            return e
        if knowledge is None:
            raise DataError("backbone was built with use_knowledge=True but got no knowledge")
        target = e[:, self.cfg.item_field] if self.cfg.knowledge_mode == "patterns" else None
        k = self.adapter(knowledge, target)
        return torch.cat([e, k.unsqueeze(1)], dim=1)

    def forward(
        self, x: torch.Tensor, knowledge: KnowledgeVectors | None = None, hist: torch.Tensor | None = None
    ) -> torch.Tensor:
        """Return the click logit, shape (B,)."""
        e = self.field_embeddings(x, knowledge)
        flat = e.flatten(1)
        kind = self.cfg.kind
        if kind == "deepfm":
            return self.bias + self.linear(x).sum(dim=(1, 2)) + fm_second_order(e) + self.dnn(flat).squeeze(-1)
        if kind == "dcn":
            return self.out(torch.cat([self.cross(flat), self.dnn(flat)], dim=-1)).squeeze(-1)
        if kind == "pnn":
            inner = (e[:, self.pair_i] * e[:, self.pair_j]).sum(dim=-1)
            return self.dnn(torch.cat([flat, inner], dim=-1)).squeeze(-1)
        if kind == "xdeepfm":
            lin = self.bias + self.linear(x).sum(dim=(1, 2))
            return lin + self.cin_out(self.cin(e)).squeeze(-1) + self.dnn(flat).squeeze(-1)
        if kind == "autoint":
            return self.out(self.att(e).flatten(1)).squeeze(-1)
        # din
        if hist is None:
            raise DataError("DIN needs the behavior history")
        valid = hist >= 0
        item_table = self.emb.table(self.cfg.item_field)
        keys = item_table[hist.clamp(min=0)]
        pooled = self.din_att(e[:, self.cfg.item_field], keys, valid)
        return self.dnn(torch.cat([flat, pooled], dim=-1)).squeeze(-1)

    def predict(self, x, knowledge=None, hist=None) -> torch.Tensor:
        return torch.sigmoid(self(x, knowledge, hist)).clamp(EPS, 1.0 - EPS)


def backbone_forward(model: Backbone, x, knowledge=None, hist=None) -> torch.Tensor:
    if model.cfg.use_knowledge and knowledge is None:
        raise DataError("knowledge required when use_knowledge is set")
    return model.predict(x, knowledge, hist)
