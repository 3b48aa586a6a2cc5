"""Essential and disentangled training signals.

* ``dim_label_mi_loss``: JSD-style discriminator loss, raises I(s_j; y).
* ``vclub_bound``: variational CLUB upper bound on I(x; c), to be minimized.
* ``disentangle_loss``: InfoNCE over two dropout views of each pattern, pushes
  patterns of the same instance apart.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import nn

from .encoder import mlp
from .errors import BatchCompositionError

EPS = 1e-7
LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 1.0
    beta: float = 1.0
    lambda1: float = 0.1
    lambda2: float = 0.01
    use_vclub: bool = True

    def __post_init__(self):
        for name in ("alpha", "beta", "lambda1", "lambda2"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ValueError(f"{name} must be finite and >= 0, got {v}")


class Discriminator(nn.Module):
    """Bilinear term plus an MLP over the concatenated pair, squashed to (0, 1)."""

    def __init__(self, d_k: int, hidden: int = 32):
        super().__init__()
        self.bilinear = nn.Bilinear(d_k, d_k, 1)
        self.mlp = mlp([2 * d_k, hidden, 1])

    def logit(self, s: torch.Tensor, c: torch.Tensor) -> torch.Tensor:
        return (self.bilinear(s, c) + self.mlp(torch.cat([s, c], dim=-1))).squeeze(-1)

    def forward(self, s: torch.Tensor, c: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(self.logit(s, c)).clamp(EPS, 1.0 - EPS)


def _sample_partners(y: torch.Tensor, generator: torch.Generator | None):
    """For each row pick another row with the same label and one with the opposite label."""
    y = y.long()
    n = len(y)
    pos = torch.nonzero(y == 1).squeeze(1)
    neg = torch.nonzero(y == 0).squeeze(1)
    if len(pos) == 0 or len(neg) == 0:
        raise BatchCompositionError("batch needs both labels; resample it")
    groups = {1: pos, 0: neg}
    same = torch.empty(n, dtype=torch.long)
    other = torch.empty(n, dtype=torch.long)
    for label, idx in groups.items():
        rows = idx
        m = len(idx)
        if m == 1:
            same[rows] = idx
        else:
            # uniform over the m-1 other members: draw in [0, m-1) and skip self
            rank = torch.arange(m)
            r = torch.randint(0, m - 1, (m,), generator=generator)
            r = r + (r >= rank).long()
            same[rows] = idx[r]
        opp = groups[1 - label]
        other[rows] = opp[torch.randint(0, len(opp), (m,), generator=generator)]
    return same, other


def dim_label_mi_loss(
    s: torch.Tensor, c: torch.Tensor, y: torch.Tensor, disc: Discriminator, generator: torch.Generator | None = None
) -> torch.Tensor:
    """-mean[log D(s_j, c+) + log(1 - D(s_j, c-))] over instances and patterns.

    s: (B, K, d_k), c: (B, d_k), y: (B,). c+ / c- come from other in-batch
    instances with the same / opposite label.
    """
    same, other = _sample_partners(y, generator)
    K = s.shape[1]
    c_pos = c[same].unsqueeze(1).expand(-1, K, -1)
    c_neg = c[other].unsqueeze(1).expand(-1, K, -1)
    joint = disc(s, c_pos)
    marginal = disc(s, c_neg)
    return -(torch.log(joint) + torch.log1p(-marginal)).mean()


class VariationalNet(nn.Module):
    """Diagonal Gaussian q(c | x_bar)."""

    def __init__(self, d_in: int, d_out: int, hidden: int = 32):
        super().__init__()
        self.mean = mlp([d_in, hidden, d_out])
        self.logvar = mlp([d_in, hidden, d_out])

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        return self.mean(x), self.logvar(x).clamp(-10.0, 10.0)

    def log_likelihood(self, x: torch.Tensor, c: torch.Tensor) -> torch.Tensor:
        """Per-row log q(c | x), summed over dimensions."""
        mu, logvar = self(x)
        ll = -0.5 * (LOG_2PI + logvar + (c - mu) ** 2 / logvar.exp())
        return ll.sum(dim=-1)


def vclub_bound(
    x_bar: torch.Tensor, c: torch.Tensor, q_net: VariationalNet, generator: torch.Generator | None = None
) -> torch.Tensor:
    """Shuffled-pair vCLUB estimate: E_joint[log q(c|x)] - E_shuffled[log q(c'|x)]."""
    n = len(c)
    perm = torch.randperm(n, generator=generator)
    mu, logvar = q_net(x_bar)
    inv_var = torch.exp(-logvar)
    positive = -0.5 * ((c - mu) ** 2 * inv_var).sum(dim=-1)
    negative = -0.5 * ((c[perm] - mu) ** 2 * inv_var).sum(dim=-1)
    # normalizers cancel between the two terms
    return (positive - negative).mean()


def vclub_fit_step(x_bar: torch.Tensor, c: torch.Tensor, q_net: VariationalNet) -> torch.Tensor:
    """Negative log-likelihood for updating q_net alone; inputs are detached."""
    return -q_net.log_likelihood(x_bar.detach(), c.detach()).mean()


class ProjectionHead(nn.Module):
    """z = MLP(LayerNorm(Dropout(s))). Dropout draws from the passed generator."""

    def __init__(self, d_k: int, dropout: float = 0.1):
        super().__init__()
        if not 0.0 < dropout < 1.0:
            raise ValueError("dropout rate must lie in (0, 1)")
        self.rate = dropout
        self.norm = nn.LayerNorm(d_k)
        self.mlp = mlp([d_k, d_k, d_k])

    def forward(self, s: torch.Tensor, generator: torch.Generator | None = None) -> torch.Tensor:
        if self.training:
            keep = torch.rand(s.shape, generator=generator, dtype=s.dtype) >= self.rate
            s = s * keep / (1.0 - self.rate)
        return self.mlp(self.norm(s))


def disentangle_loss(
    s: torch.Tensor, projection, tau: float = 0.5, generator: torch.Generator | None = None
) -> torch.Tensor:
    """InfoNCE across the K patterns of each instance.

    Positives are two projections of the same pattern, negatives the other
    K-1 patterns of that instance. ``projection`` is called as
    ``projection(s, generator=...)``.
    """
    K = s.shape[-2]
    if K < 2:
        raise ValueError("disentangle_loss needs K >= 2 patterns")
    z1 = projection(s, generator=generator)
    z2 = projection(s, generator=generator)
    logits = z1 @ z2.transpose(-1, -2) / tau  # (B, K, K)
    return -torch.log_softmax(logits, dim=-1).diagonal(dim1=-2, dim2=-1).mean()


@dataclass
class RegTerms:
    dim: torch.Tensor
    vclub: torch.Tensor
    disentangle: torch.Tensor

    def combine(self, w: LossWeights) -> torch.Tensor:
        total = w.alpha * self.dim + w.beta * self.disentangle
        if w.use_vclub:
            total = total + self.vclub
        return total


def l_reg(
    s: torch.Tensor,
    c: torch.Tensor,
    y: torch.Tensor,
    x_bar: torch.Tensor,
    disc: Discriminator,
    q_net: VariationalNet,
    projection,
    weights: LossWeights,
    tau: float = 0.5,
    generator: torch.Generator | None = None,
) -> tuple[torch.Tensor, RegTerms]:
    """alpha * DIM loss + vCLUB bound + beta * disentanglement loss.

    Every term is evaluated whatever its weight, so the random stream and
    the individual terms do not depend on the weights.
    """
    terms = RegTerms(
        dim=dim_label_mi_loss(s, c, y, disc, generator),
        vclub=vclub_bound(x_bar, c, q_net, generator),
        disentangle=disentangle_loss(s, projection, tau, generator),
    )
    return terms.combine(weights), terms
