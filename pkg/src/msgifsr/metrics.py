"""Full-catalogue ranking metrics with deterministic tie-breaking.

Items with equal scores are ordered by ascending item id. Id 0 (the
unknown-item slot) is never ranked.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import torch

SHORT_SESSION_MAX = 5


class MetricError(ValueError):
    pass


def top_k(scores: torch.Tensor, k: int) -> torch.Tensor:
    """(B, k) item ids by descending score, ties by ascending id."""
    s = scores.detach().clone()
    s[:, 0] = float("-inf")
    order = torch.sort(-s, dim=1, stable=True).indices
    return order[:, :k]


def target_ranks(scores: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
    """1-based rank of each target in the full catalogue ordering."""
    s = scores.detach()
    t = s.gather(1, targets.unsqueeze(1))
    ids = torch.arange(s.shape[1], device=s.device).unsqueeze(0)
    valid = ids != 0
    ahead = ((s > t) | ((s == t) & (ids < targets.unsqueeze(1)))) & valid
    return ahead.sum(1) + 1


def hit_rate(top_lists: Sequence[Sequence[int]], targets: Sequence[int]) -> float:
    if len(targets) == 0:
        raise MetricError("hit rate of an empty test set is undefined")
    hits = sum(1 for lst, t in zip(top_lists, targets) if t in list(lst))
    return hits / len(targets)


def mrr(top_lists: Sequence[Sequence[int]], targets: Sequence[int], k: int) -> float:
    if len(targets) == 0:
        raise MetricError("MRR of an empty test set is undefined")
    total = 0.0
    for lst, t in zip(top_lists, targets):
        lst = list(lst)[:k]
        if t in lst:
            total += 1.0 / (lst.index(t) + 1)
    return total / len(targets)


def hit_rate_from_ranks(ranks, k: int) -> float:
    ranks = torch.as_tensor(ranks)
    if ranks.numel() == 0:
        raise MetricError("hit rate of an empty test set is undefined")
    return (ranks <= k).double().mean().item()


def mrr_from_ranks(ranks, k: int) -> float:
    ranks = torch.as_tensor(ranks)
    if ranks.numel() == 0:
        raise MetricError("MRR of an empty test set is undefined")
    rr = torch.where(ranks <= k, 1.0 / ranks.double(), torch.zeros((), dtype=torch.float64))
    return rr.mean().item()


@dataclass
class MetricReport:
    ks: tuple[int, ...] = (10, 20)
    hr: dict[int, float] = field(default_factory=dict)
    mrr: dict[int, float] = field(default_factory=dict)
    buckets: dict[str, dict[str, float]] = field(default_factory=dict)
    count: int = 0
    bucket_counts: dict[str, int] = field(default_factory=dict)

    @classmethod
    def from_ranks(cls, ranks, lengths, ks=(10, 20)) -> "MetricReport":
        ranks = torch.as_tensor(ranks)
        lengths = torch.as_tensor(lengths)
        rep = cls(ks=tuple(ks), count=int(ranks.numel()))
        for k in ks:
            rep.hr[k] = hit_rate_from_ranks(ranks, k)
            rep.mrr[k] = mrr_from_ranks(ranks, k)
        for name, sel in (("short", lengths <= SHORT_SESSION_MAX), ("long", lengths > SHORT_SESSION_MAX)):
            rep.bucket_counts[name] = int(sel.sum())
            if sel.any():
                rep.buckets[name] = {}
                for k in ks:
                    rep.buckets[name][f"HR@{k}"] = hit_rate_from_ranks(ranks[sel], k)
                    rep.buckets[name][f"MRR@{k}"] = mrr_from_ranks(ranks[sel], k)
        return rep

    def as_dict(self) -> dict[str, float]:
        out: dict[str, float] = {"count": self.count}
        for k in self.ks:
            out[f"HR@{k}"] = self.hr[k]
            out[f"MRR@{k}"] = self.mrr[k]
        for name, vals in self.buckets.items():
            out[f"{name}.count"] = self.bucket_counts[name]
            for key, v in vals.items():
                out[f"{name}.{key}"] = v
        return out

    def to_kv(self, prefix: str = "") -> str:
        return "".join(f"{prefix}{k}={v}\n" for k, v in self.as_dict().items())

    def to_text(self) -> str:
        cols = [f"{m}@{k}" for k in self.ks for m in ("HR", "MRR")]
        rows = [("all", self.count, [self._get(None, c) for c in cols])]
        for name in ("short", "long"):
            if name in self.buckets:
                rows.append((name, self.bucket_counts[name], [self._get(name, c) for c in cols]))
        header = f"{'subset':<8}{'count':>8}" + "".join(f"{c:>10}" for c in cols)
        lines = [header]
        for name, n, vals in rows:
            lines.append(f"{name:<8}{n:>8}" + "".join(f"{100 * v:>10.2f}" for v in vals))
        return "\n".join(lines) + "\n"

    def _get(self, bucket, col):
        if bucket is not None:
            return self.buckets[bucket][col]
        metric, k = col.split("@")
        return (self.hr if metric == "HR" else self.mrr)[int(k)]
