"""Ablation table on the synthetic intent-block corpus (or a processed dataset).

    python scripts/run_ablation.py                      # synthetic, 3 seeds
    python scripts/run_ablation.py --data out/digi --seeds 0
"""
import argparse
import dataclasses
import logging

from msgifsr.config import ModelConfig, TrainConfig
from msgifsr.corpus import augment, generate_synthetic, load_dataset
from msgifsr.evaluator import ABLATIONS, ablate, format_table, run_variant


def synthetic_split(seed=11):
    return augment(generate_synthetic(num_items=60, num_sessions=1500, length_distribution=6.0,
                                      intent_block_size=3, seed=seed))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--data", help="processed dataset directory; synthetic when omitted")
    ap.add_argument("--seeds", default="0,1,2")
    ap.add_argument("--dim", type=int, default=32)
    ap.add_argument("--epochs", type=int, default=9)
    ap.add_argument("--batch-size", type=int, default=32)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    split = load_dataset(args.data) if args.data else synthetic_split()
    seeds = [int(s) for s in args.seeds.split(",")]
    mc = ModelConfig(dim=args.dim, num_heads=2, num_levels=2)
    tc = TrainConfig(batch_size=args.batch_size, epochs=args.epochs, patience=3)
    rows = ablate(split, mc, tc, list(ABLATIONS), seeds)
    rows.append(run_variant(split, dataclasses.replace(mc, num_levels=1), tc, seeds, "K=1"))
    print(format_table(rows, ks=(10, 20)))


if __name__ == "__main__":
    main()
