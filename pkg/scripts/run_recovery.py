"""Parameter recovery on a synthetic driver, for R in {1, 8, 32}, plus the DS baseline.

Writes one report per run and a summary table to --out.

    python3 scripts/run_recovery.py --out results/recovery
"""

import argparse
import json
import time
from dataclasses import replace
from pathlib import Path

from dds.presets import recovery_sim_config, recovery_train_config
from dds.simulator import generate_driver
from dds.trainer import sbptt_train, train_ds_baseline


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="results/recovery")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--lr", type=float, help="override the preset learning rate")
    ap.add_argument("--samples", default="1,8,32")
    args = ap.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    sim_cfg = recovery_sim_config(args.seed)
    sim = generate_driver(sim_cfg)
    print(f"stop counts: mean {sim.stop_counts.mean():.2f}, range {sim.stop_counts.min()}-{sim.stop_counts.max()}")

    rows = []
    for r in [int(x) for x in args.samples.split(",")]:
        cfg = recovery_train_config(r, args.seed)
        if args.lr:
            cfg = replace(cfg, learning_rate=args.lr)
        start = time.perf_counter()
        rep = sbptt_train(sim.history, cfg, sim_cfg.generator)
        secs = time.perf_counter() - start
        (out / f"dds_R{r}.json").write_text(rep.to_json() + "\n")
        rows.append({"run": f"dds_R{r}", "lambda_err": rep.lambda_error[-1], "beta_err": rep.beta_error[-1],
                     "decision_acc": rep.train.decision_acc[-1], "seconds": round(secs, 1)})

    cfg = recovery_train_config(1, args.seed)
    ds = train_ds_baseline(sim.history, replace(cfg, learning_rate=args.lr) if args.lr else cfg)
    (out / "ds.json").write_text(ds.to_json() + "\n")
    rows.append({"run": "ds", "lambda_err": None, "beta_err": None, "decision_acc": ds.train.decision_acc[-1]})

    (out / "summary.json").write_text(json.dumps(rows, indent=2) + "\n")
    for row in rows:
        errs = "" if row["lambda_err"] is None else f"lambda err {row['lambda_err']:6.2f}  beta err {row['beta_err']:.3f}  "
        print(f"{row['run']:8s} {errs}acc {row['decision_acc']:.3f}")


if __name__ == "__main__":
    main()
