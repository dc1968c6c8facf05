"""Training loop, evaluation pass, checkpoints and the finite-difference gradient check."""
from __future__ import annotations

import dataclasses
import logging
import math
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch

from . import fusion
from .batch import collate
from .config import ModelConfig, ReadoutConfig, TrainConfig, config_to_pairs, parse_overrides
from .corpus import DatasetSplit, Session
from .graph import build_mihsg
from .metrics import MetricReport, target_ranks
from .recommender import MSGIFSR

logger = logging.getLogger(__name__)

HISTORY_HEADER = "epoch,train_loss,valid_HR@20,valid_MRR@20,lr"


class TrainingDiverged(RuntimeError):
    pass


class CheckpointError(RuntimeError):
    pass


class GraphCache:
    """Memoises session graphs by (prefix, K); sessions are small and repeat a lot."""

    def __init__(self, num_levels: int):
        self.num_levels = num_levels
        self._graphs: dict[tuple[int, ...], object] = {}

    def __call__(self, sessions: Sequence[Session]):
        out = []
        for s in sessions:
            key = tuple(s.items)
            g = self._graphs.get(key)
            if g is None:
                g = self._graphs[key] = build_mihsg(key, self.num_levels)
            out.append(g)
        return out


def iterate_batches(sessions: Sequence[Session], batch_size: int, rng: random.Random | None = None):
    order = list(range(len(sessions)))
    if rng is not None:
        rng.shuffle(order)
    for start in range(0, len(order), batch_size):
        yield [sessions[i] for i in order[start:start + batch_size]]


def make_batch(sessions, num_levels, cache: GraphCache | None = None):
    graphs = cache(sessions) if cache is not None else None
    return collate(sessions, num_levels, graphs)


@torch.no_grad()
def predict_ranks(model: MSGIFSR, sessions: Sequence[Session], batch_size: int = 512,
                  cache: GraphCache | None = None):
    """Full-catalogue target ranks and prefix lengths for labelled sessions."""
    was_training = model.training
    model.eval()
    cache = cache or GraphCache(model.config.num_levels)
    ranks, lengths = [], []
    for chunk in iterate_batches(sessions, batch_size):
        batch = make_batch(chunk, model.config.num_levels, cache)
        out = model(batch)
        ranks.append(target_ranks(out.probs, batch.targets))
        lengths.append(batch.lengths)
    model.train(was_training)
    return torch.cat(ranks), torch.cat(lengths)


def evaluate(model: MSGIFSR, sessions: Sequence[Session], batch_size: int = 512, ks=(10, 20),
             cache: GraphCache | None = None) -> MetricReport:
    ranks, lengths = predict_ranks(model, sessions, batch_size, cache)
    return MetricReport.from_ranks(ranks, lengths, ks)


@dataclass
class TrainResult:
    model: MSGIFSR
    history: list[dict] = field(default_factory=list)
    best_epoch: int = -1
    best_valid: MetricReport | None = None


def seed_everything(seed: int):
    random.seed(seed)
    np.random.seed(seed)
    torch.manual_seed(seed)


def train(split: DatasetSplit, model_config: ModelConfig, config: TrainConfig,
          out_dir=None, on_epoch: Callable[[dict], None] | None = None) -> TrainResult:
    """Adam with step decay; keeps the best-by-validation-MRR weights.

    ``split`` must already be augmented (every session carries a target).
    When the split has no validation examples the final epoch is kept.
    """
    if not split.train:
        raise ValueError("training split is empty")
    model_config = dataclasses.replace(model_config, num_items=split.num_items)
    seed_everything(config.seed)
    model = MSGIFSR(model_config)
    optimizer = torch.optim.Adam(model.parameters(), lr=config.lr, weight_decay=config.weight_decay)
    scheduler = torch.optim.lr_scheduler.StepLR(optimizer, step_size=config.lr_decay_every,
                                                gamma=config.lr_decay)
    cache = GraphCache(model_config.num_levels)
    rng = random.Random(config.seed)
    k = config.eval_k

    result = TrainResult(model)
    best_mrr, best_state, stale = -1.0, None, 0
    for epoch in range(config.epochs):
        lr = optimizer.param_groups[0]["lr"]
        model.train()
        total, count = 0.0, 0
        for chunk in iterate_batches(split.train, config.batch_size, rng):
            batch = make_batch(chunk, model_config.num_levels, cache)
            out = model(batch)
            loss = fusion.loss(out.probs, batch.targets)
            if not torch.isfinite(loss):
                raise TrainingDiverged(f"non-finite loss {loss.item()} at epoch {epoch}")
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            total += loss.item() * len(chunk)
            count += len(chunk)
        scheduler.step()

        row = {"epoch": epoch, "train_loss": total / count, "lr": lr}
        if split.valid:
            rep = evaluate(model, split.valid, config.batch_size, ks=(k,), cache=cache)
            row["valid_HR@20"], row["valid_MRR@20"] = rep.hr[k], rep.mrr[k]
        else:
            rep = None
            row["valid_HR@20"] = row["valid_MRR@20"] = float("nan")
        result.history.append(row)
        logger.info("epoch %d loss %.4f HR@%d %.4f MRR@%d %.4f lr %.1e", epoch, row["train_loss"],
                    k, row["valid_HR@20"], k, row["valid_MRR@20"], lr)
        if on_epoch is not None:
            on_epoch(row)

        if rep is None:
            result.best_epoch = epoch
            continue
        if rep.mrr[k] > best_mrr:
            best_mrr, stale = rep.mrr[k], 0
            best_state = {n: t.detach().clone() for n, t in model.state_dict().items()}
            result.best_epoch, result.best_valid = epoch, rep
        else:
            stale += 1
            if stale >= config.patience:
                logger.info("early stop after epoch %d", epoch)
                break

    if best_state is not None:
        model.load_state_dict(best_state)
    model.eval()
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        save_checkpoint(model, out / "checkpoint")
        write_history(out / "history.csv", result.history)
    return result


def write_history(path, history):
    with Path(path).open("w", encoding="utf-8") as fh:
        fh.write(HISTORY_HEADER + "\n")
        for r in history:
            fh.write(f"{r['epoch']},{r['train_loss']:.6f},{r['valid_HR@20']:.6f},"
                     f"{r['valid_MRR@20']:.6f},{r['lr']:.6g}\n")


def read_history(path) -> list[dict]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    keys = lines[0].split(",")
    rows = []
    for line in lines[1:]:
        vals = line.split(",")
        row = {k: float(v) for k, v in zip(keys, vals)}
        row["epoch"] = int(row["epoch"])
        rows.append(row)
    return rows


# -- checkpoints -----------------------------------------------------------------

_DTYPES = {torch.float32: "float32", torch.float64: "float64"}


def save_checkpoint(model: MSGIFSR, path) -> Path:
    """Directory of raw row-major little-endian tensors plus manifest.txt."""
    path = Path(path)
    (path / "tensors").mkdir(parents=True, exist_ok=True)
    lines = [f"{k}={v}" for k, v in config_to_pairs(model.config).items()]
    for name, t in model.state_dict().items():
        arr = t.detach().cpu().contiguous().numpy()
        dtype = _DTYPES[t.dtype]
        arr.astype(arr.dtype.newbyteorder("<"), copy=False).tofile(path / "tensors" / f"{name}.bin")
        lines.append(f"tensor.{name}={dtype} {' '.join(map(str, arr.shape))}".rstrip())
    (path / "manifest.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def load_checkpoint(path) -> MSGIFSR:
    path = Path(path)
    manifest = path / "manifest.txt"
    if not manifest.exists():
        raise CheckpointError(f"no manifest at {manifest}")
    pairs, tensors = {}, {}
    for line in manifest.read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        key, value = line.split("=", 1)
        if key.startswith("tensor."):
            dtype, *shape = value.split()
            tensors[key[len("tensor."):]] = (dtype, tuple(int(s) for s in shape))
        else:
            pairs[key] = value
    base = ModelConfig(num_items=int(pairs.pop("num_items")))
    try:
        config, _, _ = parse_overrides(pairs, base)
    except ValueError as exc:
        raise CheckpointError(f"bad checkpoint manifest: {exc}") from None
    model = MSGIFSR(config)
    state = model.state_dict()
    if set(state) != set(tensors):
        raise CheckpointError(f"checkpoint tensors {sorted(set(state) ^ set(tensors))} do not match the model")
    loaded = {}
    for name, (dtype, shape) in tensors.items():
        if tuple(state[name].shape) != shape:
            raise CheckpointError(f"tensor {name}: manifest shape {shape} != model {tuple(state[name].shape)}")
        arr = np.fromfile(path / "tensors" / f"{name}.bin", dtype=np.dtype(dtype).newbyteorder("<"))
        if arr.size != math.prod(shape):
            raise CheckpointError(f"tensor {name}: wrong byte count")
        loaded[name] = torch.from_numpy(arr.astype(np.dtype(dtype)).reshape(shape))
    if any(t.dtype == torch.float64 for t in loaded.values()):
        model.double()
    model.load_state_dict(loaded)
    model.eval()
    return model


# -- gradient check --------------------------------------------------------------

GRAD_CHECK_SESSIONS = (
    Session(0, [1, 2, 1, 3], 4),
    Session(1, [5], 2),
    Session(2, [6, 7, 8, 6, 7], 9),
    Session(3, [2, 3], 2),
    Session(4, [9, 9, 4, 1, 5, 3], 7),
)


def grad_check(dim: int = 8, num_items: int = 10, num_levels: int = 2, num_heads: int = 2,
               num_layers: int = 1, readout: str | ReadoutConfig = "MAX+GRU", seed: int = 0,
               step: float = 1e-6, sessions: Sequence[Session] = GRAD_CHECK_SESSIONS,
               **overrides) -> tuple[float, dict[str, float]]:
    """Worst relative error between autograd and central differences.

    Runs the whole model in float64 with dropout disabled. The error of a
    parameter tensor is ``|g_a - g_n| / max(|g_a|, |g_n|)`` (Euclidean norms);
    tensors whose gradients are both below 1e-10 count as exact. Returns the
    worst error and the per-tensor errors.
    """
    torch.manual_seed(seed)
    cfg = ModelConfig(num_items=num_items, dim=dim, num_levels=num_levels, num_heads=num_heads,
                      num_layers=num_layers, readout=readout, dropout=0.0, **overrides)
    model = MSGIFSR(cfg).double().eval()
    batch = collate(list(sessions), num_levels)

    def objective():
        return fusion.loss(model(batch).probs, batch.targets)

    model.zero_grad()
    objective().backward()
    errors = {}
    with torch.no_grad():
        for name, p in model.named_parameters():
            analytic = p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p)
            numeric = torch.zeros_like(p)
            flat, nflat = p.view(-1), numeric.view(-1)
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + step
                up = objective().item()
                flat[i] = orig - step
                down = objective().item()
                flat[i] = orig
                nflat[i] = (up - down) / (2 * step)
            na, nn_ = analytic.norm().item(), numeric.norm().item()
            scale = max(na, nn_)
            errors[name] = 0.0 if scale < 1e-10 else (analytic - numeric).norm().item() / scale
    return max(errors.values()), errors
