"""End-to-end next-item model: encoder, per-level ranking and intent fusion."""
from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn

from .batch import GraphBatch
from .config import ModelConfig
from .fusion import Discriminator, LevelPooling, fuse, plain_softmax, renorm, repeat_mask, score_level
from .metrics import top_k
from .model import IntentEncoder


@dataclass
class RankingOutput:
    level_scores: torch.Tensor   # (K', B, I) raw similarity scores
    level_probs: torch.Tensor    # (K', B, I) per-level distributions
    present: torch.Tensor        # (K', B) level has at least one unit
    probs: torch.Tensor          # (B, I) fused distribution
    beta: torch.Tensor | None    # (K', B, 2) repeat/explore weights

    def top_k(self, k: int) -> torch.Tensor:
        """Item ids by descending probability, ties by ascending id; id 0 excluded."""
        return top_k(self.probs, k)


class MSGIFSR(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        if config.num_items < 2:
            raise ValueError("num_items must include id 0 and at least one real item")
        self.config = config
        self.encoder = IntentEncoder(config)
        self.pooling = LevelPooling(config.dim, config.num_levels)
        self.discriminator = Discriminator(config.dim)
        self.alpha = nn.Parameter(torch.zeros(config.num_levels))

    @property
    def embedding(self) -> nn.Embedding:
        return self.encoder.embedding

    def ranked_levels(self) -> int:
        """Levels that feed the final ranking (only level 1 without fusion)."""
        return self.config.num_levels if self.config.use_ifr else 1

    def forward(self, batch: GraphBatch) -> RankingOutput:
        cfg = self.config
        h = self.encoder(batch)
        table = self.embedding.weight
        in_session = repeat_mask(batch.session_items, cfg.num_items)
        scores, probs, betas = [], [], []
        for k in range(1, self.ranked_levels() + 1):
            z = self.pooling(h, batch.node_graph, batch.last_node, k)
            y = score_level(z, table, cfg.l2_norm, cfg.normalize_session)
            scores.append(y)
            if cfg.use_renorm:
                p, beta = renorm(y, in_session, self.discriminator, z, cfg.scale)
                betas.append(beta)
            else:
                p = plain_softmax(y, cfg.scale)
            probs.append(p)
        level_scores = torch.stack(scores)
        level_probs = torch.stack(probs)
        present = batch.last_node[:len(probs)] >= 0
        if cfg.use_ifr:
            fused = fuse(level_probs, self.alpha, present)
        else:
            fused = level_probs[0]
        return RankingOutput(level_scores, level_probs, present, fused,
                             torch.stack(betas) if betas else None)
