"""Real-data experiment shape: sample drivers, split 40/60, train DDS for R in {1, 8, 32} and DS.

With no argument the bundled 12-row fixture is used (2 drivers). Point it at a
trip extract from the Chicago open-data portal to run the full setting:

    python3 scripts/run_chicago.py trips.csv --drivers 10 --out results/chicago
"""

import argparse
import json
from collections import defaultdict
from pathlib import Path

import dds
from dds.cli import main as cli

FIXTURE = Path(dds.__file__).parent / "data" / "chicago_fixture.csv"


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("csv", nargs="?", default=str(FIXTURE))
    ap.add_argument("--drivers", type=int, default=None, help="default 10, or 2 for the fixture")
    ap.add_argument("--out", default="results/chicago")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    drivers = args.drivers or (2 if args.csv == str(FIXTURE) else 10)

    out = Path(args.out)
    steps = [
        ["ingest", args.csv, "--drivers", str(drivers), "--train-fraction", "0.4", "--seed", str(args.seed),
         "--out", str(out / "data")],
        ["train", str(out / "data"), "--samples", "1,8,32", "--epochs", "10", "--lr", "0.01", "--baseline", "ds",
         "--seed", str(args.seed), "--out", str(out / "runs")],
        ["report", str(out / "runs"), "--out", str(out / "tidy.csv")],
    ]
    for argv in steps:
        if cli(argv) != 0:
            raise SystemExit(f"step failed: {' '.join(argv[:1])}")

    acc = defaultdict(list)
    for row in json.loads((out / "runs" / "summary.json").read_text()):
        acc[(row["model"], row["samples"])].append(row.get("test_decision_acc", row["train_decision_acc"]))
    for (model, r), vals in sorted(acc.items()):
        print(f"{model:4s} R={r:<3d} mean test decision accuracy {sum(vals) / len(vals):.3f} over {len(vals)} drivers")


if __name__ == "__main__":
    main()
