"""Intent-unit encoder: readouts for multi-item units and bidirectional HGAT layers."""
from __future__ import annotations

import math

import torch
import torch.nn as nn
import torch.nn.functional as F

from .batch import GraphBatch
from .config import ModelConfig, ReadoutConfig


def uniform_init_(module: nn.Module, dim: int):
    bound = 1.0 / math.sqrt(dim)
    for p in module.parameters():
        nn.init.uniform_(p, -bound, bound)


def segment_softmax(scores: torch.Tensor, segment: torch.Tensor, num_segments: int) -> torch.Tensor:
    """Softmax of ``scores`` (E, ...) within groups given by ``segment`` (E,)."""
    idx = segment.view(-1, *([1] * (scores.dim() - 1))).expand_as(scores)
    seg_max = torch.full((num_segments, *scores.shape[1:]), float("-inf"),
                         dtype=scores.dtype, device=scores.device)
    seg_max = seg_max.scatter_reduce(0, idx, scores.detach(), "amax", include_self=True)
    ex = (scores - seg_max.gather(0, idx)).exp()
    denom = torch.zeros_like(seg_max).index_add(0, segment, ex)
    return ex / denom.gather(0, idx)


def segment_mean(x: torch.Tensor, segment: torch.Tensor, num_segments: int) -> torch.Tensor:
    total = x.new_zeros(num_segments, x.shape[1]).index_add(0, segment, x)
    count = x.new_zeros(num_segments).index_add(0, segment, x.new_ones(segment.shape[0]))
    return total / count.clamp(min=1).unsqueeze(1)


class UnitReadout(nn.Module):
    """Composes the member-item embeddings of a level-k unit into one vector.

    The order-invariant part (MEAN or MAX) and the order-sensitive part
    (final GRU state over the members in click order) are summed.
    """

    def __init__(self, dim: int, readout: ReadoutConfig):
        super().__init__()
        self.readout = readout
        self.gru = nn.GRU(dim, dim, batch_first=True) if readout.seq_op == "GRU" else None

    def forward(self, members: torch.Tensor) -> torch.Tensor:
        # members: (n, k, d)
        out = members.new_zeros(members.shape[0], members.shape[2])
        if self.readout.set_op == "MEAN":
            out = out + members.mean(dim=1)
        elif self.readout.set_op == "MAX":
            out = out + members.amax(dim=1)
        if self.gru is not None and members.shape[0] > 0:
            _, last = self.gru(members)
            out = out + last[-1]
        return out


def embed_units(batch: GraphBatch, embedding: nn.Embedding, readout: UnitReadout) -> torch.Tensor:
    """Layer-0 states for every node, level-major like the batch."""
    parts = [embedding(batch.unit_items[0][:, 0])]
    for members in batch.unit_items[1:]:
        parts.append(readout(embedding(members)))
    return torch.cat(parts, dim=0)


def multihead_combine(heads: torch.Tensor, mode: str = "max") -> torch.Tensor:
    """Reduce per-head outputs (N, H, d) to (N, d); ``concat`` gives (N, H*d)."""
    if mode == "max":
        return heads.amax(dim=1)
    if mode == "mean":
        return heads.mean(dim=1)
    if mode == "concat":
        return heads.reshape(heads.shape[0], -1)
    raise ValueError(f"unknown head combine {mode!r}")


class HGATLayer(nn.Module):
    """One bidirectional heterogeneous graph-attention layer.

    ``weight[dir, type, head]`` is the d x d projection and ``attn[dir, type,
    head]`` the 2d attention vector; direction 0 aggregates in-neighbours,
    direction 1 out-neighbours. Nothing is shared across directions, types
    or heads.
    """

    def __init__(self, dim: int, num_edge_types: int, num_heads: int, head_combine: str = "max",
                 negative_slope: float = 0.2, softmax_scope: str = "per_type", dropout: float = 0.0):
        super().__init__()
        self.dim = dim
        self.num_edge_types = num_edge_types
        self.num_heads = num_heads
        self.head_combine = head_combine
        self.negative_slope = negative_slope
        self.softmax_scope = softmax_scope
        self.weight = nn.Parameter(torch.empty(2, num_edge_types, num_heads, dim, dim))
        self.attn = nn.Parameter(torch.empty(2, num_edge_types, num_heads, 2 * dim))
        self.proj = nn.Linear(num_heads * dim, dim, bias=False) if head_combine == "concat" else None
        self.attn_drop = nn.Dropout(dropout)
        uniform_init_(self, dim)

    def attention(self, h, src, dst, etype, direction: int):
        """Per-edge attention weights (E, H) and projected messages (E, H, d)."""
        if direction == 0:
            u, v = src, dst
        else:
            u, v = dst, src
        wu = h.new_empty(u.shape[0], self.num_heads, self.dim)
        raw = h.new_empty(u.shape[0], self.num_heads)
        for t in etype.unique().tolist():
            sel = (etype == t).nonzero(as_tuple=True)[0]
            # project only the nodes touched by this edge type
            nodes, inv = torch.cat([u[sel], v[sel]]).unique(return_inverse=True)
            proj = torch.einsum("hij,nj->nhi", self.weight[direction, t], h[nodes])
            pu, pv = proj[inv[:sel.shape[0]]], proj[inv[sel.shape[0]:]]
            a = self.attn[direction, t]
            wu = wu.index_copy(0, sel, pu)
            raw = raw.index_copy(0, sel, (a[:, :self.dim] * pu).sum(-1) + (a[:, self.dim:] * pv).sum(-1))
        scores = F.leaky_relu(raw, self.negative_slope)
        if self.softmax_scope == "per_type":
            segment = v * self.num_edge_types + etype
            n_seg = h.shape[0] * self.num_edge_types
        else:
            segment, n_seg = v, h.shape[0]
        alpha = segment_softmax(scores, segment, n_seg)
        return alpha, wu, v

    def aggregate(self, h, src, dst, etype, direction: int) -> torch.Tensor:
        out = h.new_zeros(h.shape[0], self.num_heads, self.dim)
        if src.numel():
            alpha, msg, v = self.attention(h, src, dst, etype, direction)
            alpha = self.attn_drop(alpha)
            out = out.index_add(0, v, alpha.unsqueeze(-1) * msg)
        out = multihead_combine(out, self.head_combine)
        return self.proj(out) if self.proj is not None else out

    def forward(self, h, src, dst, etype):
        return self.aggregate(h, src, dst, etype, 0), self.aggregate(h, src, dst, etype, 1)


class IntentEncoder(nn.Module):
    """Item embeddings, unit readout and the stacked HGAT layers."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        d = config.dim
        self.config = config
        self.embedding = nn.Embedding(config.num_items, d, padding_idx=0)
        self.readout = UnitReadout(d, config.readout)
        self.layers = nn.ModuleList(
            HGATLayer(d, config.num_levels + 1, config.num_heads, config.head_combine,
                      config.negative_slope, config.softmax_scope, config.dropout)
            for _ in range(config.num_layers))
        self.input_drop = nn.Dropout(config.dropout)
        uniform_init_(self.embedding, d)
        uniform_init_(self.readout, d)
        with torch.no_grad():
            self.embedding.weight[0].zero_()

    def active_edges(self, batch: GraphBatch):
        keep = torch.ones_like(batch.edge_type, dtype=torch.bool)
        inter = batch.edge_type == batch.num_levels
        if not self.config.use_intra_edges:
            keep &= inter
        if not self.config.use_inter_edges:
            keep &= ~inter
        return batch.edge_src[keep], batch.edge_dst[keep], batch.edge_type[keep]

    def forward(self, batch: GraphBatch) -> torch.Tensor:
        h = embed_units(batch, self.embedding, self.readout)
        src, dst, etype = self.active_edges(batch)
        for layer in self.layers:
            fwd, bwd = layer(self.input_drop(h), src, dst, etype)
            mean = segment_mean(h, batch.node_graph, batch.num_sessions)
            h = fwd + bwd + mean[batch.node_graph]
        return h
