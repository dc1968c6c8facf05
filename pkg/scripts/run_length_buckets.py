"""Short (<= 5 clicks) vs long session results for the full model and its ablations."""
import argparse
import dataclasses
import logging

from msgifsr.config import ModelConfig, TrainConfig
from msgifsr.corpus import load_dataset
from msgifsr.evaluator import ABLATIONS, run_variant

from run_ablation import synthetic_split


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--data")
    ap.add_argument("--seeds", default="0")
    ap.add_argument("--variants", default="MSGIFSR,-MIHSG,-IFR")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    split = load_dataset(args.data) if args.data else synthetic_split()
    seeds = [int(s) for s in args.seeds.split(",")]
    mc = ModelConfig(dim=32, num_heads=2)
    tc = TrainConfig(batch_size=32, epochs=9, patience=3)
    print(f"{'model':<10}{'bucket':>8}{'count':>8}{'HR@20':>9}{'MRR@20':>9}")
    for name in args.variants.split(","):
        row = run_variant(split, dataclasses.replace(mc, **ABLATIONS[name]), tc, seeds, name)
        for bucket, vals in row.report.buckets.items():
            print(f"{name:<10}{bucket:>8}{row.report.bucket_counts[bucket]:>8}"
                  f"{100 * vals['HR@20']:>9.2f}{100 * vals['MRR@20']:>9.2f}")


if __name__ == "__main__":
    main()
