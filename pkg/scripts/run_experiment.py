"""Run the synthetic failure-prediction experiment and print the grid.

    python scripts/run_experiment.py --out results/ [--config cfg.json] [--seed N]
"""

import argparse
import logging

from adaas.experiment import ExperimentConfig, run_experiment
from adaas.prediction import fmt_metric


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="results")
    ap.add_argument("--config")
    ap.add_argument("--seed", type=int)
    ap.add_argument("-v", "--verbose", action="store_true")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)

    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    res = run_experiment(cfg, args.out)
    print(f"{'W':>3} {'past':>5} {'precision':>10} {'recall':>8} {'event_prec':>11}")
    for r in res.reports:
        print(f"{r.window_minutes:>3} {r.past_minutes:>5} {fmt_metric(r.precision):>10} {fmt_metric(r.recall):>8} "
              f"{fmt_metric(r.event_precision):>11}")
    print(res.checks)
    print(f"{res.seconds:.1f} s, outputs in {args.out}")


if __name__ == "__main__":
    main()
