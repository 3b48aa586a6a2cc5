"""Knowledge encoder and the composed knowledge base KB(x) = aggregate(encode(extract(x)))."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import torch
from torch import nn

from .errors import NumericError
from .extractor import Extraction, Extractor, HardConcrete


def mlp(sizes: Sequence[int], final_act: bool = False) -> nn.Sequential:
    layers: list[nn.Module] = []
    for i in range(len(sizes) - 1):
        layers.append(nn.Linear(sizes[i], sizes[i + 1]))
        if i < len(sizes) - 2 or final_act:
            layers.append(nn.ReLU())
    return nn.Sequential(*layers)


class MultiHeadSelfAttention(nn.Module):
    def __init__(self, dim: int, heads: int):
        super().__init__()
        if dim % heads:
            raise ValueError(f"width {dim} not divisible by {heads} heads")
        self.heads = heads
        self.head_dim = dim // heads
        self.qkv = nn.Linear(dim, 3 * dim)
        self.out = nn.Linear(dim, dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        n, L, dim = x.shape
        q, k, v = self.qkv(x).view(n, L, 3, self.heads, self.head_dim).permute(2, 0, 3, 1, 4)
        att = torch.softmax(q @ k.transpose(-1, -2) / math.sqrt(self.head_dim), dim=-1)
        return self.out((att @ v).transpose(1, 2).reshape(n, L, dim))


class EncoderBlock(nn.Module):
    """Pre-norm transformer block, no positional encoding."""

    def __init__(self, dim: int, heads: int):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = MultiHeadSelfAttention(dim, heads)
        self.norm2 = nn.LayerNorm(dim)
        self.ffn = mlp([dim, 2 * dim, dim])

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = x + self.attn(self.norm1(x))
        return x + self.ffn(self.norm2(x))


class PatternEncoder(nn.Module):
    """Encodes one (F, d) pattern into a d_k knowledge vector; invariant to row order."""

    def __init__(self, d: int, d_k: int, depth: int = 3, heads: int = 3):
        super().__init__()
        self.blocks = nn.ModuleList(EncoderBlock(d, heads) for _ in range(depth))
        self.head = mlp([d, d, d_k])

    def psi(self, x: torch.Tensor) -> torch.Tensor:
        for block in self.blocks:
            x = block(x)
        return x

    def forward(self, pattern: torch.Tensor) -> torch.Tensor:
        # pattern: (..., F, d) -> (..., d_k)
        if not torch.isfinite(pattern).all():
            raise NumericError("non-finite pattern")
        lead = pattern.shape[:-2]
        x = pattern.reshape(-1, *pattern.shape[-2:])
        s = self.head(self.psi(x).mean(dim=-2))
        return s.reshape(*lead, -1)


class Aggregator(nn.Module):
    def __init__(self, d_k: int):
        super().__init__()
        self.mlp = mlp([d_k, d_k, d_k])

    def forward(self, s: torch.Tensor) -> torch.Tensor:
        # s: (..., K, d_k)
        if s.shape[-2] < 1:
            raise ValueError("aggregate needs at least one knowledge vector")
        return self.mlp(s.mean(dim=-2))


def encode_pattern(pattern: torch.Tensor, encoder: PatternEncoder) -> torch.Tensor:
    return encoder(pattern)


def aggregate(s: torch.Tensor, aggregator: Aggregator) -> torch.Tensor:
    return aggregator(s)


@dataclass
class KnowledgeVectors:
    s: torch.Tensor  # (B, K, d_k)
    c: torch.Tensor  # (B, d_k)
    extraction: Extraction | None = None

    @property
    def x_bar(self) -> torch.Tensor:
        """Mean-pooled memorization embedding of the raw input."""
        return self.extraction.h_prime.mean(dim=-2)

    def detach(self) -> "KnowledgeVectors":
        return KnowledgeVectors(self.s.detach(), self.c.detach())


class KnowledgeBase(nn.Module):
    """Extractor + encoder. Frozen after compression and queried per instance."""

    def __init__(
        self,
        vocab_sizes: Sequence[int],
        d: int = 24,
        d_k: int = 12,
        K: int = 20,
        depth: int = 3,
        heads: int = 3,
        hc: HardConcrete | None = None,
    ):
        super().__init__()
        self.extractor = Extractor(vocab_sizes, d, K, hc)
        self.encoder = PatternEncoder(d, d_k, depth, heads)
        self.aggregator = Aggregator(d_k)
        self.d, self.d_k, self.K = d, d_k, K

    def forward(self, x: torch.Tensor, generator: torch.Generator | None = None) -> KnowledgeVectors:
        ext = self.extractor(x, generator)
        s = self.encoder(ext.patterns)
        c = self.aggregator(s)
        return KnowledgeVectors(s, c, ext)


def knowledge_forward(kb: KnowledgeBase, x: torch.Tensor) -> KnowledgeVectors:
    """Serving-time query: deterministic eval-mode pass without autograd."""
    was_training = kb.training
    kb.eval()
    try:
        with torch.no_grad():
            out = kb(x)
    finally:
        kb.train(was_training)
    return out
