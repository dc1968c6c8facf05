"""Multi-granularity intent graphs over consecutive item windows.

A level-k unit is a length-k window of the session. Units of the same level
are linked when their windows are positionally adjacent (``intra-k``); every
unit of level k > 1 is linked from the item right before its window and to
the item right after it (``inter``).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

INTER = "inter"


def intra(k: int) -> str:
    return f"intra-{k}"


def edge_type_names(num_levels: int) -> list[str]:
    """Edge types in their canonical index order: intra-1..intra-K, inter."""
    return [intra(k) for k in range(1, num_levels + 1)] + [INTER]


@dataclass(frozen=True, order=True)
class IntentUnit:
    level: int
    items: tuple[int, ...]

    def __post_init__(self):
        if len(self.items) != self.level:
            raise ValueError(f"level-{self.level} unit needs {self.level} items, got {len(self.items)}")


@dataclass
class SessionGraph:
    """Typed directed graph for one session.

    ``nodes[k-1]`` lists the distinct level-k units in first-occurrence order;
    ``order[k-1]`` gives, for every window position, the index of its node.
    Edges are ``(src_level, src_idx, edge_type, dst_level, dst_idx)`` tuples.
    """

    num_levels: int
    nodes: list[list[IntentUnit]]
    order: list[list[int]]
    edges: list[tuple[int, int, str, int, int]] = field(default_factory=list)

    def num_nodes(self, level: int | None = None) -> int:
        if level is None:
            return sum(len(n) for n in self.nodes)
        return len(self.nodes[level - 1])

    def last(self, level: int) -> int | None:
        """Node index of the positionally last level-k unit, None when empty."""
        seq = self.order[level - 1]
        return seq[-1] if seq else None

    def edge_set(self):
        return {(self.nodes[sl - 1][si], et, self.nodes[dl - 1][di]) for sl, si, et, dl, di in self.edges}

    def node_set(self):
        return {u for level in self.nodes for u in level}

    def without(self, *edge_types: str) -> "SessionGraph":
        """Copy with the given edge types (``"intra"`` matches all intra-k) removed."""
        def dropped(et):
            return et in edge_types or ("intra" in edge_types and et.startswith("intra-"))
        return SessionGraph(self.num_levels, self.nodes, self.order,
                            [e for e in self.edges if not dropped(e[2])])


def extract_units(items: Sequence[int], k: int) -> list[IntentUnit]:
    """All length-k windows of the session, in positional order."""
    if k < 1:
        raise ValueError("k must be >= 1")
    items = tuple(items)
    return [IntentUnit(k, items[j:j + k]) for j in range(len(items) - k + 1)]


def build_level_graph(units: Sequence[IntentUnit]):
    """Deduplicate windows into nodes and link positional neighbours.

    Returns ``(nodes, order, edges)`` where edges are ``(i, j)`` node-index
    pairs, deduplicated, in first-occurrence order.
    """
    index: dict[IntentUnit, int] = {}
    nodes: list[IntentUnit] = []
    order = []
    for u in units:
        if u not in index:
            index[u] = len(nodes)
            nodes.append(u)
        order.append(index[u])
    edges = list(dict.fromkeys(zip(order, order[1:])))
    return nodes, order, edges


def build_mihsg(items: Sequence[int], num_levels: int) -> SessionGraph:
    """Heterogeneous graph over levels 1..num_levels for one session."""
    if num_levels < 1:
        raise ValueError("num_levels must be >= 1")
    items = list(items)
    nodes, orders, edges = [], [], []
    for k in range(1, num_levels + 1):
        lvl_nodes, order, lvl_edges = build_level_graph(extract_units(items, k))
        nodes.append(lvl_nodes)
        orders.append(order)
        edges.extend((k, i, intra(k), k, j) for i, j in lvl_edges)

    items_order = orders[0]
    inter = []
    for k in range(2, num_levels + 1):
        for j, node in enumerate(orders[k - 1]):
            if j > 0:
                inter.append((1, items_order[j - 1], INTER, k, node))
            if j + k < len(items):
                inter.append((k, node, INTER, 1, items_order[j + k]))
    edges.extend(dict.fromkeys(inter))
    return SessionGraph(num_levels, nodes, orders, edges)


def dump_graph(graph: SessionGraph) -> str:
    """Text dump: node table then edge list ``level_src idx_src type level_dst idx_dst``."""
    lines = ["# nodes: level idx items"]
    for k, level in enumerate(graph.nodes, 1):
        for i, u in enumerate(level):
            lines.append(f"{k} {i} {','.join(map(str, u.items))}")
    lines.append("# edges: level_src idx_src edge_type level_dst idx_dst")
    lines.extend(" ".join(map(str, e)) for e in graph.edges)
    return "\n".join(lines) + "\n"


def parse_graph_dump(text: str) -> SessionGraph:
    """Inverse of :func:`dump_graph` (positional order is not serialized)."""
    nodes: dict[int, list[IntentUnit]] = {}
    edges = []
    section = None
    for line in text.splitlines():
        if line.startswith("# nodes"):
            section = "nodes"
        elif line.startswith("# edges"):
            section = "edges"
        elif line.strip():
            parts = line.split()
            if section == "nodes":
                k, i = int(parts[0]), int(parts[1])
                level = nodes.setdefault(k, [])
                if i != len(level):
                    raise ValueError(f"node indices must be dense, got {line!r}")
                level.append(IntentUnit(k, tuple(int(x) for x in parts[2].split(","))))
            elif section == "edges":
                sl, si, et, dl, di = parts
                edges.append((int(sl), int(si), et, int(dl), int(di)))
    num_levels = max(nodes) if nodes else 0
    return SessionGraph(num_levels, [nodes.get(k, []) for k in range(1, num_levels + 1)],
                        [[] for _ in range(num_levels)], edges)
