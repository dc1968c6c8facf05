"""Per-level session vectors, repeat/explore normalisation and level fusion."""
from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from .model import segment_softmax, uniform_init_

LOSS_EPS = 1e-8


class LevelPooling(nn.Module):
    """Soft-attention pooling with one query per granularity level.

    For level k the query is the last level-k unit; every node of the
    session (all levels) is a context. Parameter shapes, per level:
    ``w0`` (d,), ``w1``/``w2`` (d, d), ``bias`` (d,), ``w3`` (d, 2d).
    """

    def __init__(self, dim: int, num_levels: int):
        super().__init__()
        self.w0 = nn.Parameter(torch.empty(num_levels, dim))
        self.w1 = nn.Parameter(torch.empty(num_levels, dim, dim))
        self.w2 = nn.Parameter(torch.empty(num_levels, dim, dim))
        self.bias = nn.Parameter(torch.empty(num_levels, dim))
        self.w3 = nn.Parameter(torch.empty(num_levels, dim, 2 * dim))
        uniform_init_(self, dim)

    def forward(self, h: torch.Tensor, node_graph: torch.Tensor, last_node: torch.Tensor, k: int):
        """Session vectors (B, d) for level ``k``; rows of empty levels are zero."""
        i = k - 1
        B = last_node.shape[1]
        present = last_node[i] >= 0
        z_local = torch.where(present.unsqueeze(1), h[last_node[i].clamp(min=0)], h.new_zeros(()))
        pre = h @ self.w1[i].T + (z_local @ self.w2[i].T)[node_graph] + self.bias[i]
        gamma = torch.sigmoid(pre) @ self.w0[i]
        weight = segment_softmax(gamma, node_graph, B)
        z_global = h.new_zeros(B, h.shape[1]).index_add(0, node_graph, weight.unsqueeze(1) * h)
        z = torch.cat([z_global, z_local], dim=1) @ self.w3[i].T
        return z * present.unsqueeze(1)


def pool_level(h, node_graph, last_node, k, pooling: LevelPooling):
    return pooling(h, node_graph, last_node, k)


def score_level(z: torch.Tensor, table: torch.Tensor, l2_norm: bool = True,
                normalize_session: bool = True) -> torch.Tensor:
    """Inner-product scores of session vectors (B, d) against every item row."""
    if l2_norm:
        table = F.normalize(table, dim=-1)
        if normalize_session:
            z = F.normalize(z, dim=-1)
    return z @ table.T


def masked_softmax(logits: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Softmax over ``mask``-selected entries; rows with no entry give all zeros."""
    x = logits.masked_fill(~mask, torch.finfo(logits.dtype).min)
    return torch.softmax(x, dim=-1) * mask


class Discriminator(nn.Module):
    """Repeat/explore mixing weights from a session vector; shared across levels."""

    def __init__(self, dim: int):
        super().__init__()
        self.w1 = nn.Parameter(torch.empty(dim, 2))
        self.w2 = nn.Parameter(torch.empty(dim, dim))
        uniform_init_(self, dim)

    def forward(self, z: torch.Tensor, repeat_ok: torch.Tensor, explore_ok: torch.Tensor):
        logits = torch.sigmoid(z @ self.w2.T) @ self.w1
        mask = torch.stack([repeat_ok, explore_ok], dim=1)
        return masked_softmax(logits, mask)


def repeat_mask(session_items: torch.Tensor, num_items: int) -> torch.Tensor:
    """(B, |I|) bool, True for items clicked in the session (never id 0)."""
    mask = torch.zeros(session_items.shape[0], num_items, dtype=torch.bool, device=session_items.device)
    mask.scatter_(1, session_items, True)
    mask[:, 0] = False
    return mask


def renorm(scores, in_session, discriminator: Discriminator, z, scale: float = 12.0):
    """Separate scaled softmax over in-session and out-of-session items.

    Returns the (B, |I|) distribution and the (B, 2) repeat/explore weights.
    Id 0 (unknown item) belongs to neither partition.
    """
    logits = scale * scores
    candidates = torch.ones_like(in_session)
    candidates[:, 0] = False
    out_session = candidates & ~in_session
    p_repeat = masked_softmax(logits, in_session)
    p_explore = masked_softmax(logits, out_session)
    beta = discriminator(z, in_session.any(1), out_session.any(1))
    return beta[:, :1] * p_repeat + beta[:, 1:] * p_explore, beta


def plain_softmax(scores, scale: float = 12.0):
    candidates = torch.ones_like(scores, dtype=torch.bool)
    candidates[:, 0] = False
    return masked_softmax(scale * scores, candidates)


def fuse(level_probs: torch.Tensor, alpha: torch.Tensor, present: torch.Tensor) -> torch.Tensor:
    """Convex combination over levels. level_probs (K, B, I); present (K, B)."""
    weights = masked_softmax(alpha.unsqueeze(1).expand(-1, present.shape[1]).T, present.T).T
    return (weights.unsqueeze(-1) * level_probs).sum(0)


def loss(probs: torch.Tensor, targets: torch.Tensor, eps: float = LOSS_EPS) -> torch.Tensor:
    """Per-item binary cross-entropy against the one-hot target, batch mean."""
    p = probs.clamp(eps, 1 - eps)
    onehot = F.one_hot(targets, probs.shape[1]).to(probs.dtype)
    per_item = onehot * p.log() + (1 - onehot) * (1 - p).log()
    return -per_item.sum(1).mean()

