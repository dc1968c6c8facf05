"""Sweep one hyper-parameter: granularity K, layer count, head count or readout.

    python scripts/run_sweep.py K=1..4
    python scripts/run_sweep.py num_layers=1,2,3
    python scripts/run_sweep.py readout=MEAN,MAX,GRU,MEAN+GRU,MAX+GRU
"""
import argparse
import logging

from msgifsr.config import ModelConfig, TrainConfig
from msgifsr.corpus import load_dataset
from msgifsr.evaluator import format_table, parse_sweep, sweep

from run_ablation import synthetic_split


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("param", help="key=values, e.g. K=1..7")
    ap.add_argument("--data")
    ap.add_argument("--seeds", default="0")
    ap.add_argument("--dim", type=int, default=32)
    ap.add_argument("--epochs", type=int, default=9)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    split = load_dataset(args.data) if args.data else synthetic_split()
    key, values = parse_sweep(args.param)
    rows = sweep(split, ModelConfig(dim=args.dim, num_heads=2), TrainConfig(batch_size=32, epochs=args.epochs,
                                                                             patience=3),
                 key, values, [int(s) for s in args.seeds.split(",")])
    print(format_table(rows, ks=(10, 20)))


if __name__ == "__main__":
    main()
