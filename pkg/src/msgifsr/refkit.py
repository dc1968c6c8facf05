"""Slow reference implementations used only by the test-suite.

Everything here is written with plain loops over Python/numpy scalars and
vectors and deliberately shares no code with the vectorised model. Inputs
are size-checked so these cannot leak into production paths.
"""
from __future__ import annotations

import math

import numpy as np

MAX_SESSION_LEN = 32
MAX_NODES = 8
MAX_DIM = 8


def _check_session(items):
    assert len(items) <= MAX_SESSION_LEN, "oracle accepts test-scale sessions only"


def oracle_mihsg(items, num_levels):
    """Sorted node list and edge list by direct enumeration.

    Nodes are ``(level, window)``; edges are ``(node, type, node)``.
    """
    _check_session(items)
    items = list(items)
    L = len(items)
    windows = {}
    for k in range(1, num_levels + 1):
        windows[k] = []
        for start in range(L):
            if start + k <= L:
                windows[k].append((k, tuple(items[start:start + k])))
    nodes = set()
    for k in windows:
        for w in windows[k]:
            nodes.add(w)
    edges = set()
    for k in windows:
        for i in range(len(windows[k])):
            for j in range(len(windows[k])):
                if j == i + 1:
                    edges.add((windows[k][i], f"intra-{k}", windows[k][j]))
    for k in range(2, num_levels + 1):
        for start, w in enumerate(windows[k]):
            for p in range(L):
                if p == start - 1:
                    edges.add(((1, (items[p],)), "inter", w))
                if p == start + k:
                    edges.add((w, "inter", (1, (items[p],))))
    return sorted(nodes), sorted(edges)


def _sigmoid(x):
    return 1.0 / (1.0 + math.exp(-x))


def oracle_gru(members, w_ih, w_hh, b_ih, b_hh):
    """Final hidden state of a GRU (r, z, n gate layout) run over ``members``."""
    d = w_hh.shape[1]
    h = [0.0] * d
    for x in members:
        new_h = []
        gates = []
        for g in range(3):
            gi, gh = [], []
            for row in range(d):
                r = g * d + row
                gi.append(sum(w_ih[r, c] * x[c] for c in range(len(x))) + b_ih[r])
                gh.append(sum(w_hh[r, c] * h[c] for c in range(d)) + b_hh[r])
            gates.append((gi, gh))
        for row in range(d):
            r = _sigmoid(gates[0][0][row] + gates[0][1][row])
            z = _sigmoid(gates[1][0][row] + gates[1][1][row])
            n = math.tanh(gates[2][0][row] + r * gates[2][1][row])
            new_h.append((1 - z) * n + z * h[row])
        h = new_h
    return np.array(h)


def oracle_unit_embedding(unit, params, set_op="MAX", seq_op="GRU"):
    level, members = unit
    table = params["encoder.embedding.weight"]
    rows = [table[i] for i in members]
    if level == 1:
        return np.array(rows[0], dtype=float)
    d = table.shape[1]
    out = np.zeros(d)
    if set_op == "MEAN":
        for c in range(d):
            out[c] += sum(r[c] for r in rows) / len(rows)
    elif set_op == "MAX":
        for c in range(d):
            out[c] += max(r[c] for r in rows)
    if seq_op == "GRU":
        out += oracle_gru(rows, params["encoder.readout.gru.weight_ih_l0"],
                          params["encoder.readout.gru.weight_hh_l0"],
                          params["encoder.readout.gru.bias_ih_l0"],
                          params["encoder.readout.gru.bias_hh_l0"])
    return out


def _type_index(name, num_levels):
    return num_levels if name == "inter" else int(name.split("-")[1]) - 1


def oracle_encode(items, params, num_levels, num_layers=1, set_op="MAX", seq_op="GRU",
                  head_combine="max", negative_slope=0.2, softmax_scope="per_type",
                  use_intra_edges=True, use_inter_edges=True):
    """Final node states keyed by ``(level, window)``."""
    nodes, edges = oracle_mihsg(items, num_levels)
    assert len(nodes) <= MAX_NODES, "oracle accepts tiny graphs only"
    assert head_combine in ("max", "mean")
    edges = [e for e in edges
             if (e[1] == "inter" and use_inter_edges) or (e[1] != "inter" and use_intra_edges)]
    d = params["encoder.embedding.weight"].shape[1]
    assert d <= MAX_DIM
    state = {u: oracle_unit_embedding(u, params, set_op, seq_op) for u in nodes}

    for layer in range(num_layers):
        W = params[f"encoder.layers.{layer}.weight"]
        A = params[f"encoder.layers.{layer}.attn"]
        num_heads = W.shape[2]
        new_state = {}
        mean = np.zeros(d)
        for u in nodes:
            mean += state[u]
        mean /= len(nodes)
        for t in nodes:
            total = np.zeros(d)
            for direction in (0, 1):
                heads = []
                for hd in range(num_heads):
                    # neighbours as (neighbour node, edge type)
                    nbrs = []
                    for s, et, dst in edges:
                        if direction == 0 and dst == t:
                            nbrs.append((s, et))
                        if direction == 1 and s == t:
                            nbrs.append((dst, et))
                    scores = []
                    for nb, et in nbrs:
                        ti = _type_index(et, num_levels)
                        w = W[direction, ti, hd]
                        a = A[direction, ti, hd]
                        ws = w @ state[nb]
                        wt = w @ state[t]
                        raw = sum(a[c] * ws[c] for c in range(d)) + sum(a[d + c] * wt[c] for c in range(d))
                        scores.append(raw if raw > 0 else negative_slope * raw)
                    agg = np.zeros(d)
                    for idx, (nb, et) in enumerate(nbrs):
                        group = [j for j, (_, e2) in enumerate(nbrs)
                                 if softmax_scope == "all" or e2 == et]
                        denom = sum(math.exp(scores[j]) for j in group)
                        alpha = math.exp(scores[idx]) / denom
                        ti = _type_index(et, num_levels)
                        agg += alpha * (W[direction, ti, hd] @ state[nb])
                    heads.append(agg)
                if head_combine == "max":
                    comb = np.array([max(h[c] for h in heads) for c in range(d)])
                else:
                    comb = sum(heads) / len(heads)
                total += comb
            new_state[t] = total + mean
        state = new_state
    return state


def oracle_pool(items, state, params, k):
    """Level-k session vector from oracle node states (keyed like oracle_encode)."""
    if len(items) < k:
        return None
    last = (k, tuple(items[len(items) - k:]))
    i = k - 1
    w0, w1, w2 = params["pooling.w0"][i], params["pooling.w1"][i], params["pooling.w2"][i]
    b, w3 = params["pooling.bias"][i], params["pooling.w3"][i]
    zl = state[last]
    keys = sorted(state)
    gammas = []
    for c in keys:
        pre = w1 @ state[c] + w2 @ zl + b
        gammas.append(sum(w0[j] * _sigmoid(pre[j]) for j in range(len(pre))))
    m = max(gammas)
    ex = [math.exp(g - m) for g in gammas]
    zg = sum(e / sum(ex) * state[c] for e, c in zip(ex, keys))
    return w3 @ np.concatenate([zg, zl])


def oracle_probs(items, params, num_levels, scale=12.0, l2_norm=True, normalize_session=True,
                 use_renorm=True, use_ifr=True, **encode_kwargs):
    """Fused next-item distribution over the catalogue for one session."""
    state = oracle_encode(items, params, num_levels, **encode_kwargs)
    table = params["encoder.embedding.weight"]
    n = table.shape[0]
    levels = range(1, (num_levels if use_ifr else 1) + 1)
    dists, present = [], []
    for k in levels:
        z = oracle_pool(items, state, params, k)
        if z is None:
            dists.append(np.zeros(n))
            present.append(False)
            continue
        present.append(True)
        scores = np.zeros(n)
        for i in range(n):
            e = table[i]
            if l2_norm:
                en = math.sqrt(sum(x * x for x in e))
                e = e / en if en > 0 else e
                zz = z / math.sqrt(sum(x * x for x in z)) if normalize_session else z
            else:
                zz = z
            scores[i] = sum(zz[c] * e[c] for c in range(len(e)))
        in_sess = set(items) - {0}
        y = np.zeros(n)
        if use_renorm:
            part_r = [i for i in range(1, n) if i in in_sess]
            part_o = [i for i in range(1, n) if i not in in_sess]
            hidden = np.array([_sigmoid(v) for v in params["discriminator.w2"] @ z])
            logits = hidden @ params["discriminator.w1"]
            if not part_o:
                beta = (1.0, 0.0)
            else:
                er, eo = math.exp(logits[0]), math.exp(logits[1])
                beta = (er / (er + eo), eo / (er + eo))
            for part, bw in ((part_r, beta[0]), (part_o, beta[1])):
                if part:
                    mx = max(scale * scores[i] for i in part)
                    den = sum(math.exp(scale * scores[i] - mx) for i in part)
                    for i in part:
                        y[i] = bw * math.exp(scale * scores[i] - mx) / den
        else:
            mx = max(scale * scores[i] for i in range(1, n))
            den = sum(math.exp(scale * scores[i] - mx) for i in range(1, n))
            for i in range(1, n):
                y[i] = math.exp(scale * scores[i] - mx) / den
        dists.append(y)
    if not use_ifr:
        return dists[0]
    alpha = params["alpha"]
    ws = [math.exp(alpha[j]) if present[j] else 0.0 for j in range(len(dists))]
    return sum(w / sum(ws) * y for w, y in zip(ws, dists))


def oracle_ranks(scores, targets):
    """1-based target ranks via a full argsort of (-score, id), id 0 excluded."""
    ranks = []
    for row, t in zip(np.asarray(scores), targets):
        order = sorted(range(1, len(row)), key=lambda i: (-row[i], i))
        ranks.append(order.index(int(t)) + 1)
    return ranks


def oracle_hr_mrr(scores, targets, k):
    ranks = oracle_ranks(scores, targets)
    hr = sum(1 for r in ranks if r <= k) / len(ranks)
    mrr = sum(1.0 / r for r in ranks if r <= k) / len(ranks)
    return hr, mrr


def numeric_gradient(f, x, step=1e-6):
    """Central differences of scalar ``f`` at numpy array ``x``."""
    x = np.array(x, dtype=float)
    g = np.zeros_like(x)
    flat, gf = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        up = f(x)
        flat[i] = orig - step
        down = f(x)
        flat[i] = orig
        gf[i] = (up - down) / (2 * step)
    return g
