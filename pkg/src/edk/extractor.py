"""Knowledge extractor: dual embeddings, global attention readout and hard-concrete pattern masks."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import torch
from torch import nn

from .errors import FieldLookupError, NumericError, ShapeError


class FieldEmbedding(nn.Module):
    """Per-field embedding tables stored as one flat matrix with field offsets."""

    def __init__(self, vocab_sizes: Sequence[int], dim: int, init_std: float = 0.1):
        super().__init__()
        self.vocab_sizes = [int(v) for v in vocab_sizes]
        self.dim = dim
        offsets = torch.tensor([0] + self.vocab_sizes[:-1]).cumsum(0)
        self.register_buffer("offsets", offsets, persistent=False)
        self.register_buffer("sizes", torch.tensor(self.vocab_sizes), persistent=False)
        self.weight = nn.Parameter(torch.randn(sum(self.vocab_sizes), dim) * init_std)

    def table(self, field: int) -> torch.Tensor:
        start = int(self.offsets[field])
        return self.weight[start : start + self.vocab_sizes[field]]

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        # x: (..., F) ids -> (..., F, dim)
        if x.shape[-1] != len(self.vocab_sizes):
            raise ShapeError(f"expected {len(self.vocab_sizes)} fields, got {x.shape[-1]}")
        if bool(((x < 0) | (x >= self.sizes)).any()):
            raise FieldLookupError("field id out of range for its vocabulary")
        return self.weight[x + self.offsets]


def embed(x: torch.Tensor, table: FieldEmbedding) -> torch.Tensor:
    return table(x)


class GlobalAttention(nn.Module):
    """Single-head scaled dot-product self-attention over the field rows."""

    def __init__(self, dim: int):
        super().__init__()
        self.dim = dim
        self.W_q = nn.Linear(dim, dim, bias=False)
        self.W_k = nn.Linear(dim, dim, bias=False)
        self.W_v = nn.Linear(dim, dim, bias=False)

    def weights(self, h0: torch.Tensor) -> torch.Tensor:
        q, k = self.W_q(h0), self.W_k(h0)
        return torch.softmax(q @ k.transpose(-1, -2) / math.sqrt(self.dim), dim=-1)

    def forward(self, h0: torch.Tensor) -> torch.Tensor:
        if not torch.isfinite(h0).all():
            raise NumericError("non-finite input to global attention")
        return self.weights(h0) @ self.W_v(h0)


def mask_logits(h: torch.Tensor, P: torch.Tensor) -> torch.Tensor:
    if h.shape[-1] != P.shape[0]:
        raise ShapeError(f"cannot multiply (..., {h.shape[-1]}) by ({P.shape[0]}, {P.shape[1]})")
    return h @ P


@dataclass(frozen=True)
class HardConcrete:
    beta_hc: float = 2.0 / 3.0
    gamma: float = -0.1
    delta: float = 1.1
    clamp_mode: str = "clip"

    def __post_init__(self):
        if self.beta_hc <= 0:
            raise ValueError("beta_hc must be positive")
        if not self.gamma < 0 < 1 < self.delta:
            raise ValueError("need gamma < 0 < 1 < delta")
        if self.clamp_mode not in ("clip", "tanh"):
            raise ValueError(f"unknown clamp_mode {self.clamp_mode!r}")

    def __call__(self, logits: torch.Tensor, train: bool, generator: torch.Generator | None = None) -> torch.Tensor:
        if train:
            u = torch.rand(logits.shape, generator=generator, dtype=logits.dtype, device=logits.device)
            u = u.clamp(1e-6, 1.0 - 1e-6)
            s = torch.sigmoid((torch.log(u) - torch.log1p(-u) + logits) / self.beta_hc)
        else:
            # u = 0.5 zeroes the logistic noise term
            s = torch.sigmoid(logits / self.beta_hc)
        s = s * (self.delta - self.gamma) + self.gamma
        if self.clamp_mode == "clip":
            return s.clamp(0.0, 1.0)
        return torch.tanh(s)

    def l0_penalty(self, logits: torch.Tensor) -> torch.Tensor:
        """Expected fraction of non-zero gates under the hard-concrete distribution."""
        shift = self.beta_hc * math.log(-self.gamma / self.delta)
        return torch.sigmoid(logits - shift).mean()


def hard_concrete(
    logits: torch.Tensor, mode: str, generator: torch.Generator | None = None, params: HardConcrete | None = None
) -> torch.Tensor:
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    return (params or HardConcrete())(logits, mode == "train", generator)


def l0_penalty(logits: torch.Tensor, params: HardConcrete | None = None) -> torch.Tensor:
    return (params or HardConcrete()).l0_penalty(logits)


@dataclass
class Extraction:
    patterns: torch.Tensor  # (B, K, F, d)
    mask: torch.Tensor  # (B, F, K)
    logits: torch.Tensor  # (B, F, K)
    h_prime: torch.Tensor  # (B, F, d), memorization embeddings


class Extractor(nn.Module):
    """Maps field ids to K masked views of the memorization embeddings."""

    def __init__(self, vocab_sizes: Sequence[int], d: int, K: int, hc: HardConcrete | None = None):
        super().__init__()
        self.phi1 = FieldEmbedding(vocab_sizes, d)
        self.phi2 = FieldEmbedding(vocab_sizes, d)
        self.attn = GlobalAttention(d)
        self.P = nn.Parameter(torch.randn(d, K) / math.sqrt(d))
        self.hc = hc or HardConcrete()
        self.K = K

    def mask(self, x: torch.Tensor, generator: torch.Generator | None = None) -> tuple[torch.Tensor, torch.Tensor]:
        h = self.attn(self.phi1(x))
        logits = mask_logits(h, self.P)
        return self.hc(logits, self.training, generator), logits

    @staticmethod
    def apply_mask(h_prime: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        # (B, F, d) x (B, F, K) -> (B, K, F, d); row i of pattern j is mask[i, j] * h_prime[i]
        return mask.transpose(-1, -2).unsqueeze(-1) * h_prime.unsqueeze(-3)

    def forward(self, x: torch.Tensor, generator: torch.Generator | None = None) -> Extraction:
        mask, logits = self.mask(x, generator)
        h_prime = self.phi2(x)
        return Extraction(self.apply_mask(h_prime, mask), mask, logits, h_prime)

    def l0(self, logits: torch.Tensor) -> torch.Tensor:
        return self.hc.l0_penalty(logits)
