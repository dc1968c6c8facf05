"""Ablation matrix, hyper-parameter sweeps and report tables."""
from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass
from typing import Iterable, Sequence

from .config import ModelConfig, TrainConfig, parse_overrides
from .corpus import DatasetSplit
from .metrics import MetricReport, hit_rate, mrr, target_ranks, top_k  # noqa: F401
from .trainer import evaluate, train

logger = logging.getLogger(__name__)

ABLATIONS = {
    "MSGIFSR": {},
    "-intra-E": {"use_intra_edges": False},
    "-inter-E": {"use_inter_edges": False},
    "-MIHSG": {"use_intra_edges": False, "use_inter_edges": False},
    "-IFR": {"use_ifr": False},
    "-RENorm": {"use_renorm": False},
}

READOUTS = ("MEAN", "MAX", "GRU", "MEAN+GRU", "MAX+GRU")


@dataclass
class ResultRow:
    name: str
    report: MetricReport
    per_seed: list[MetricReport]


def average_reports(reports: Sequence[MetricReport]) -> MetricReport:
    """Mean of each metric across runs (counts are taken from the first)."""
    first = reports[0]
    out = MetricReport(ks=first.ks, count=first.count, bucket_counts=dict(first.bucket_counts))
    for k in first.ks:
        out.hr[k] = sum(r.hr[k] for r in reports) / len(reports)
        out.mrr[k] = sum(r.mrr[k] for r in reports) / len(reports)
    for name, vals in first.buckets.items():
        out.buckets[name] = {key: sum(r.buckets[name][key] for r in reports) / len(reports) for key in vals}
    return out


def run_variant(split: DatasetSplit, model_config: ModelConfig, train_config: TrainConfig,
                seeds: Iterable[int], name: str = "") -> ResultRow:
    reports = []
    for seed in seeds:
        result = train(split, model_config, dataclasses.replace(train_config, seed=seed))
        rep = evaluate(result.model, split.test, train_config.batch_size)
        logger.info("%s seed %d: HR@20 %.4f MRR@20 %.4f", name, seed, rep.hr[20], rep.mrr[20])
        reports.append(rep)
    return ResultRow(name, average_reports(reports), reports)


def ablate(split: DatasetSplit, model_config: ModelConfig, train_config: TrainConfig,
           variants: Sequence[str] | None = None, seeds: Iterable[int] | None = None) -> list[ResultRow]:
    """Train and test every ablation variant on the same split."""
    seeds = list(seeds) if seeds is not None else [train_config.seed]
    rows = []
    for name in variants or ABLATIONS:
        cfg = dataclasses.replace(model_config, **ABLATIONS[name])
        rows.append(run_variant(split, cfg, train_config, seeds, name))
    return rows


def parse_sweep(text: str) -> tuple[str, list[str]]:
    """``K=1..7`` / ``num_layers=1,2,3`` / ``readout=MEAN,MAX+GRU`` -> (key, values)."""
    if "=" not in text:
        raise ValueError(f"sweep must look like key=values, got {text!r}")
    key, values = text.split("=", 1)
    key = {"K": "num_levels", "layers": "num_layers", "heads": "num_heads"}.get(key.strip(), key.strip())
    values = values.strip()
    if ".." in values:
        lo, hi = values.split("..")
        return key, [str(v) for v in range(int(lo), int(hi) + 1)]
    return key, [v.strip() for v in values.split(",") if v.strip()]


def sweep(split: DatasetSplit, model_config: ModelConfig, train_config: TrainConfig,
          key: str, values: Sequence[str], seeds: Iterable[int] | None = None) -> list[ResultRow]:
    """One trained model (per seed) for each value of a single config key."""
    seeds = list(seeds) if seeds is not None else [train_config.seed]
    rows = []
    for value in values:
        mcfg, tcfg, _ = parse_overrides({key: value}, model_config, train_config)
        rows.append(run_variant(split, mcfg, tcfg, seeds, f"{key}={value}"))
    return rows


def format_table(rows: Sequence[ResultRow], ks=(20,), buckets: bool = False) -> str:
    cols = [f"{m}@{k}" for k in ks for m in ("HR", "MRR")]
    if buckets:
        cols += [f"{b}.{c}" for b in ("short", "long") for c in cols]
    width = max(12, max(len(r.name) for r in rows) + 2)
    lines = [f"{'model':<{width}}" + "".join(f"{c:>14}" for c in cols)]
    for r in rows:
        d = r.report.as_dict()
        lines.append(f"{r.name:<{width}}" + "".join(
            f"{100 * d[c]:>14.2f}" if c in d else f"{'-':>14}" for c in cols))
    return "\n".join(lines) + "\n"


def format_kv(rows: Sequence[ResultRow]) -> str:
    return "".join(r.report.to_kv(prefix=f"{r.name}.") for r in rows)


__all__ = [
    "ABLATIONS", "READOUTS", "ResultRow", "ablate", "average_reports", "evaluate", "format_kv",
    "format_table", "hit_rate", "mrr", "parse_sweep", "run_variant", "sweep", "target_ranks", "top_k",
]
