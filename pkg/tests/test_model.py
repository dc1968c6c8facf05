import dataclasses
import random

import numpy as np
import pytest
import torch

from helpers import compare_with_oracle, params_of, random_instance, tiny_model
from msgifsr.batch import collate
from msgifsr.config import ReadoutConfig
from msgifsr.corpus import Session
from msgifsr.model import HGATLayer, UnitReadout, embed_units, multihead_combine
from msgifsr.refkit import oracle_gru, oracle_unit_embedding


def edges(*triples):
    src, dst, typ = zip(*triples)
    return torch.tensor(src), torch.tensor(dst), torch.tensor(typ)


def test_single_in_neighbour_gets_full_attention():
    layer = HGATLayer(4, 2, 3).double()
    h = torch.randn(2, 4, dtype=torch.float64)
    alpha, _, _ = layer.attention(h, *edges((0, 1, 0)), direction=0)
    assert torch.allclose(alpha, torch.ones_like(alpha))


def test_symmetric_in_neighbours_split_evenly():
    layer = HGATLayer(4, 2, 2).double()
    v = torch.randn(4, dtype=torch.float64)
    h = torch.stack([v, v, torch.randn(4, dtype=torch.float64)])
    alpha, _, _ = layer.attention(h, *edges((0, 2, 1), (1, 2, 1)), direction=0)
    assert torch.allclose(alpha, torch.full_like(alpha, 0.5))


def test_per_type_attention_sums_to_one():
    layer = HGATLayer(4, 3, 2).double()
    h = torch.randn(5, 4, dtype=torch.float64)
    src, dst, typ = edges((0, 4, 0), (1, 4, 0), (2, 4, 2), (3, 4, 2), (0, 3, 1))
    alpha, _, v = layer.attention(h, src, dst, typ, direction=0)
    for t in typ.unique():
        sel = (typ == t) & (v == 4)
        if sel.any():
            assert torch.allclose(alpha[sel].sum(0), torch.ones(2, dtype=torch.float64))


def test_isolated_node_has_zero_aggregate():
    layer = HGATLayer(4, 2, 2).double()
    h = torch.randn(3, 4, dtype=torch.float64)
    fwd, bwd = layer(h, *edges((0, 1, 0)))
    assert torch.equal(fwd[2], torch.zeros(4, dtype=torch.float64))
    assert torch.equal(bwd[2], torch.zeros(4, dtype=torch.float64))


def test_multihead_max():
    heads = torch.tensor([[[1.0, 2.0], [3.0, 0.0]]])
    assert multihead_combine(heads, "max").tolist() == [[3.0, 2.0]]
    one = torch.randn(5, 1, 8)
    assert torch.equal(multihead_combine(one, "max"), one[:, 0])
    stacked = torch.randn(6, 4, 8)
    brute = torch.stack([torch.stack([max(stacked[n, :, c].tolist()) * torch.ones(()) for c in range(8)])
                         for n in range(6)])
    assert torch.allclose(multihead_combine(stacked, "max"), brute)
    assert multihead_combine(stacked, "concat").shape == (6, 32)


def test_oracle_equivalence_random_instances():
    rng = random.Random(1)
    for seed in range(100):
        items, kw = random_instance(rng)
        assert max(compare_with_oracle(items, kw, seed)) < 1e-6, (items, kw)


def test_random_six_node_graph_single_head():
    # session with 6 distinct level-1 nodes, one head, d=4
    items, kw = [1, 2, 3, 4, 5, 6], dict(num_items=9, dim=4, num_levels=1, num_heads=1)
    assert max(compare_with_oracle(items, kw, 3)) < 1e-6


def test_level_one_node_is_embedding_row():
    m = tiny_model()
    batch = collate([Session(0, [7, 3], None)], 2)
    h0 = embed_units(batch, m.embedding, m.encoder.readout)
    assert torch.equal(h0[0], m.embedding.weight[7])


def test_mean_readout_of_pair():
    m = tiny_model(readout="MEAN")
    e = m.embedding.weight
    batch = collate([Session(0, [2, 5], None)], 2)
    h0 = embed_units(batch, m.embedding, m.encoder.readout)
    assert torch.allclose(h0[batch.level_slice(2)][0], (e[2] + e[5]) / 2)


def test_max_gru_readout_against_hand_rolled_recurrence():
    m = tiny_model(dim=4, num_levels=3)
    p = params_of(m)
    batch = collate([Session(0, [4, 1, 6], None)], 3)
    with torch.no_grad():
        h0 = embed_units(batch, m.embedding, m.encoder.readout)
    ref = oracle_unit_embedding((3, (4, 1, 6)), p, "MAX", "GRU")
    assert np.allclose(h0[batch.level_slice(3)][0].numpy(), ref, atol=1e-12)
    e = p["encoder.embedding.weight"]
    gru = oracle_gru([e[4], e[1], e[6]], p["encoder.readout.gru.weight_ih_l0"], p["encoder.readout.gru.weight_hh_l0"],
                     p["encoder.readout.gru.bias_ih_l0"], p["encoder.readout.gru.bias_hh_l0"])
    assert np.allclose(ref, np.maximum(np.maximum(e[4], e[1]), e[6]) + gru)


def test_mean_readout_order_invariant_gru_order_sensitive():
    members = torch.randn(1, 3, 4, dtype=torch.float64)
    perm = members[:, [2, 0, 1]]
    mean_only = UnitReadout(4, ReadoutConfig("MEAN", "NONE")).double()
    assert torch.allclose(mean_only(members), mean_only(perm))
    with_gru = UnitReadout(4, ReadoutConfig("MEAN", "GRU")).double()
    assert not torch.allclose(with_gru(members), with_gru(perm))


def test_single_node_encode_is_its_embedding():
    m = tiny_model(num_levels=1)
    batch = collate([Session(0, [5], None)], 1)
    with torch.no_grad():
        h = m.encoder(batch)
    assert torch.allclose(h[0], m.embedding.weight[5])


def test_padding_row_is_zero():
    m = tiny_model()
    assert torch.equal(m.embedding.weight[0], torch.zeros(4, dtype=torch.float64))


def aggregates_only(model, batch, delta_item, delta):
    """Encoder states with the residual mean removed, after perturbing one item row."""
    enc = model.encoder
    with torch.no_grad():
        enc.embedding.weight[delta_item] += delta
        h = embed_units(batch, enc.embedding, enc.readout)
        src, dst, typ = enc.active_edges(batch)
        for layer in enc.layers:
            fwd, bwd = layer(h, src, dst, typ)
            h = fwd + bwd
        enc.embedding.weight[delta_item] -= delta
    return h


@pytest.mark.parametrize("layers", [1, 2])
def test_receptive_field_grows_one_hop_per_layer(layers):
    # path 1-2-3-4-5, perturb the first item; no self-loops, so exactly
    # the nodes `layers` hops away see the change
    m = tiny_model(num_levels=1, num_layers=layers, num_items=8)
    batch = collate([Session(0, [1, 2, 3, 4, 5], None)], 1)
    base = aggregates_only(m, batch, 1, 0.0)
    moved = aggregates_only(m, batch, 1, 0.5)
    diff = (moved - base).abs().sum(1)
    assert diff[layers] > 1e-6
    assert diff[layers + 1:].max() < 1e-12


def permute_batch(batch, level, perm):
    """Relabel the level-``level`` nodes of a batch by ``perm`` and shuffle edge order."""
    sl = batch.level_slice(level)
    new_of_old = torch.arange(batch.num_nodes)
    new_of_old[sl] = sl.start + torch.argsort(perm)
    unit_items = list(batch.unit_items)
    unit_items[level - 1] = batch.unit_items[level - 1][perm]
    node_graph = batch.node_graph.clone()
    node_graph[sl] = batch.node_graph[sl][perm]
    eperm = torch.randperm(batch.edge_src.numel())
    out = dataclasses.replace(
        batch, unit_items=unit_items, node_graph=node_graph,
        edge_src=new_of_old[batch.edge_src][eperm], edge_dst=new_of_old[batch.edge_dst][eperm],
        edge_type=batch.edge_type[eperm],
        last_node=torch.where(batch.last_node >= 0, new_of_old[batch.last_node.clamp(min=0)], -1))
    return out, new_of_old


def test_node_and_edge_relabelling_invariance():
    m = tiny_model(num_items=10, num_levels=2)
    sessions = [Session(0, [1, 2, 1, 3, 4], 5), Session(1, [6, 7], 2), Session(2, [8], 9)]
    batch = collate(sessions, 2)
    for level in (1, 2):
        perm = torch.randperm(batch.unit_items[level - 1].shape[0])
        pb, new_of_old = permute_batch(batch, level, perm)
        with torch.no_grad():
            h, hp = m.encoder(batch), m.encoder(pb)
            assert torch.allclose(hp[new_of_old], h, atol=1e-12)
            assert torch.allclose(m(pb).probs, m(batch).probs, atol=1e-12)


def test_session_order_in_batch_does_not_matter():
    m = tiny_model(num_items=10)
    sessions = [Session(0, [1, 2, 3], 4), Session(1, [5, 5, 6, 7], 8), Session(2, [9], 1)]
    with torch.no_grad():
        a = m(collate(sessions, 2)).probs
        b = m(collate(sessions[::-1], 2)).probs
    assert torch.allclose(a, b.flip(0), atol=1e-12)


def test_outputs_finite_for_default_dims():
    from msgifsr.config import ModelConfig
    from msgifsr.recommender import MSGIFSR
    m = MSGIFSR(ModelConfig(num_items=50, dim=32)).eval()
    batch = collate([Session(0, list(range(1, 20)), 3), Session(1, [4], 2)], 2)
    out = m(batch)
    assert torch.isfinite(out.probs).all()
