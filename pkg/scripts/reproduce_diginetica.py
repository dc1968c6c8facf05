"""Full-scale Diginetica run with the published recipe (hours of CPU).

Expects the CIKM Cup 2016 ``train-item-views.csv``. Converts it to the
session_key,item_key,timestamp layout, preprocesses with the last-week
test split, trains d=256 / batch 512 / K=2 / MAX+GRU and prints the test
report next to the published HR@20 57.11 and MRR@20 20.05.
"""
import argparse
import csv
import datetime as dt
import logging
from pathlib import Path

from msgifsr.cli import main as cli_main
from msgifsr.config import ModelConfig, TrainConfig
from msgifsr.corpus import load_dataset
from msgifsr.trainer import evaluate, train


def convert(src: Path, dst: Path):
    """sessionId;userId;itemId;timeframe;eventdate -> session,item,seconds."""
    with src.open() as fin, dst.open("w", newline="") as fout:
        reader = csv.DictReader(fin, delimiter=";")
        writer = csv.writer(fout)
        writer.writerow(["session_key", "item_key", "timestamp"])
        for row in reader:
            day = dt.datetime.strptime(row["eventdate"], "%Y-%m-%d").replace(tzinfo=dt.timezone.utc)
            ts = day.timestamp() + int(row["timeframe"]) / 1000.0
            writer.writerow([row["sessionId"], row["itemId"], int(ts)])


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("views", type=Path, help="train-item-views.csv")
    ap.add_argument("--work", type=Path, default=Path("runs/diginetica"))
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    args.work.mkdir(parents=True, exist_ok=True)
    events = args.work / "events.csv"
    if not events.exists():
        convert(args.views, events)
    data = args.work / "data"
    if not (data / "vocabulary.tsv").exists():
        rc = cli_main(["preprocess", "--input", str(events), "--out", str(data), "--split-policy", "last_days",
                       "--test-days", "7", "--min-item-count", "5"])
        if rc:
            raise SystemExit(rc)
    split = load_dataset(data)
    result = train(split, ModelConfig(dim=256, num_levels=2, readout="MAX+GRU"), TrainConfig(batch_size=512),
                   out_dir=args.work / "run")
    rep = evaluate(result.model, split.test)
    print(rep.to_text())
    print(f"published: HR@20 57.11  MRR@20 20.05")


if __name__ == "__main__":
    main()
