"""Pack many session graphs into one disjoint graph of index tensors."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import torch

from .corpus import Session
from .graph import INTER, SessionGraph, build_mihsg


@dataclass
class GraphBatch:
    """Disjoint union of session graphs.

    Nodes are stored level-major: all level-1 nodes of every session, then
    all level-2 nodes, and so on. ``unit_items[k-1]`` holds the member items
    of the level-k nodes in that order. Edge types are indexed 0..K-1 for
    intra-1..intra-K and K for inter.
    """

    num_sessions: int
    num_levels: int
    node_level: torch.Tensor          # (N,) 1-based level
    node_graph: torch.Tensor          # (N,) session index
    unit_items: list[torch.Tensor]    # per level: (n_k, k)
    edge_src: torch.Tensor            # (E,)
    edge_dst: torch.Tensor            # (E,)
    edge_type: torch.Tensor           # (E,)
    last_node: torch.Tensor           # (K, B) global node index, -1 when the level is empty
    session_items: torch.Tensor       # (B, L_max) item ids, 0-padded
    lengths: torch.Tensor             # (B,)
    targets: torch.Tensor             # (B,) -1 when unknown

    @property
    def num_nodes(self):
        return self.node_level.numel()

    def level_slice(self, k: int) -> slice:
        start = sum(t.shape[0] for t in self.unit_items[:k - 1])
        return slice(start, start + self.unit_items[k - 1].shape[0])


def edge_type_index(name: str, num_levels: int) -> int:
    if name == INTER:
        return num_levels
    return int(name.split("-")[1]) - 1


def collate(sessions: Sequence[Session], num_levels: int,
            graphs: Sequence[SessionGraph] | None = None) -> GraphBatch:
    if graphs is None:
        graphs = [build_mihsg(s.items, num_levels) for s in sessions]
    B, K = len(sessions), num_levels

    # global offset of (level, session) blocks
    offsets = [[0] * B for _ in range(K)]
    pos = 0
    for k in range(K):
        for b, g in enumerate(graphs):
            offsets[k][b] = pos
            pos += len(g.nodes[k])
    n_total = pos

    node_level = torch.empty(n_total, dtype=torch.long)
    node_graph = torch.empty(n_total, dtype=torch.long)
    unit_items = []
    last = torch.full((K, B), -1, dtype=torch.long)
    for k in range(K):
        rows = []
        for b, g in enumerate(graphs):
            start, n = offsets[k][b], len(g.nodes[k])
            node_level[start:start + n] = k + 1
            node_graph[start:start + n] = b
            rows.extend(u.items for u in g.nodes[k])
            lst = g.last(k + 1)
            if lst is not None:
                last[k, b] = start + lst
        unit_items.append(torch.tensor(rows, dtype=torch.long).reshape(len(rows), k + 1))

    src, dst, typ = [], [], []
    for b, g in enumerate(graphs):
        for sl, si, et, dl, di in g.edges:
            src.append(offsets[sl - 1][b] + si)
            dst.append(offsets[dl - 1][b] + di)
            typ.append(edge_type_index(et, K))

    max_len = max(len(s.items) for s in sessions)
    session_items = torch.zeros(B, max_len, dtype=torch.long)
    for b, s in enumerate(sessions):
        session_items[b, :len(s.items)] = torch.tensor(s.items)

    return GraphBatch(
        num_sessions=B,
        num_levels=K,
        node_level=node_level,
        node_graph=node_graph,
        unit_items=unit_items,
        edge_src=torch.tensor(src, dtype=torch.long),
        edge_dst=torch.tensor(dst, dtype=torch.long),
        edge_type=torch.tensor(typ, dtype=torch.long),
        last_node=last,
        session_items=session_items,
        lengths=torch.tensor([len(s.items) for s in sessions], dtype=torch.long),
        targets=torch.tensor([-1 if s.target is None else s.target for s in sessions], dtype=torch.long),
    )
