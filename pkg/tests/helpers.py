"""Shared fixtures for comparing the vectorised model with the loop oracles."""
import random

import numpy as np
import torch

from msgifsr.batch import collate
from msgifsr.config import ModelConfig, ReadoutConfig
from msgifsr.corpus import Session
from msgifsr.recommender import MSGIFSR
from msgifsr.refkit import oracle_encode, oracle_pool, oracle_probs


def tiny_model(num_items=10, dim=4, num_levels=2, **kw):
    """A float64, dropout-free model for exact comparisons."""
    kw.setdefault("num_heads", 2)
    cfg = ModelConfig(num_items=num_items, dim=dim, num_levels=num_levels, dropout=0.0, **kw)
    return MSGIFSR(cfg).double().eval()


def params_of(model):
    return {n: t.detach().numpy() for n, t in model.state_dict().items()}


def node_keys(batch, b):
    """(level, items) keys of session b's nodes, with their global row indices."""
    out = []
    for k in range(1, batch.num_levels + 1):
        sl = batch.level_slice(k)
        for row, items in zip(range(sl.start, sl.stop), batch.unit_items[k - 1].tolist()):
            if batch.node_graph[row] == b:
                out.append(((k, tuple(items)), row))
    return out


def random_instance(rng: random.Random):
    """A random tiny model config plus a session small enough for the oracle."""
    K = rng.randint(1, 3)
    max_len = {1: 6, 2: 4, 3: 3}[K]
    items = [rng.randint(1, 7) for _ in range(rng.randint(1, max_len))]
    set_op, seq_op = rng.choice([("MAX", "GRU"), ("MEAN", "GRU"), ("MAX", "NONE"), ("MEAN", "NONE"),
                                 ("NONE", "GRU")])
    kw = dict(
        num_items=9, dim=rng.choice([2, 4, 8]), num_levels=K, num_layers=rng.randint(1, 2),
        num_heads=rng.randint(1, 3), readout=ReadoutConfig(set_op, seq_op),
        head_combine=rng.choice(["max", "mean"]), softmax_scope=rng.choice(["per_type", "all"]),
        use_intra_edges=rng.random() < 0.8, use_inter_edges=rng.random() < 0.8,
        use_renorm=rng.random() < 0.8, use_ifr=rng.random() < 0.8,
        l2_norm=rng.random() < 0.8, normalize_session=rng.random() < 0.8,
    )
    return items, kw


def compare_with_oracle(items, kw, seed):
    """Max abs differences (encode, pool, probs) between model and oracle."""
    torch.manual_seed(seed)
    model = MSGIFSR(ModelConfig(dropout=0.0, **kw)).double().eval()
    with torch.no_grad():
        model.alpha.normal_()
    params = params_of(model)
    batch = collate([Session(0, items, None)], kw["num_levels"])
    cfg = model.config
    enc_kw = dict(num_layers=cfg.num_layers, set_op=cfg.readout.set_op, seq_op=cfg.readout.seq_op,
                  head_combine=cfg.head_combine, softmax_scope=cfg.softmax_scope,
                  use_intra_edges=cfg.use_intra_edges, use_inter_edges=cfg.use_inter_edges)
    with torch.no_grad():
        h = model.encoder(batch)
        state = oracle_encode(items, params, cfg.num_levels, **enc_kw)
        enc_err = max(np.abs(h[row].numpy() - state[key]).max() for key, row in node_keys(batch, 0))
        pool_err = 0.0
        for k in range(1, cfg.num_levels + 1):
            ref = oracle_pool(items, state, params, k)
            if ref is None:
                continue
            z = model.pooling(h, batch.node_graph, batch.last_node, k)[0].numpy()
            pool_err = max(pool_err, np.abs(z - ref).max())
        probs = model(batch).probs[0].numpy()
        ref = oracle_probs(items, params, cfg.num_levels, scale=cfg.scale, l2_norm=cfg.l2_norm,
                           normalize_session=cfg.normalize_session, use_renorm=cfg.use_renorm,
                           use_ifr=cfg.use_ifr, **enc_kw)
        prob_err = np.abs(probs - ref).max()
    return enc_err, pool_err, prob_err
