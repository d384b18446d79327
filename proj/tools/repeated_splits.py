#!/usr/bin/env python3
"""Repeated-split evaluation: train from scratch several times, each time on a
fresh random evaluation split, and pool the evaluation rows.

Splits are independent random draws (a model may be held out more than once).
Prints per-run accuracies, pooled accuracies and the confidence regression of
prediction error on peak-height deficit over all pooled rows.
"""

import argparse
import json
import sys

import neurocad


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--data", required=True, help="data directory")
    parser.add_argument("--question", required=True)
    parser.add_argument("--runs", type=int, default=7)
    parser.add_argument("--eval", type=int, default=20, help="evaluation models per run")
    parser.add_argument("--seed", type=int, default=1)
    parser.add_argument("--config", help="training config JSON file")
    args = parser.parse_args(argv)

    config = {}
    if args.config:
        with open(args.config) as f:
            config = json.load(f)
    config["question_id"] = args.question

    dataset = neurocad.Dataset(args.data)
    pooled = []
    for run in range(args.runs):
        dataset.assign_splits(args.eval, args.seed + run)
        config["seed"] = args.seed + run
        result = neurocad.train(dataset, config)
        report = neurocad.evaluate(dataset, result["checkpoint"], config)
        pooled.extend(report["rows"])
        print(f"run {run + 1}: 2-step {report['accuracy_2step']:.3f}  1-step {report['accuracy_1step']:.3f}  "
              f"exact {report['exact_accuracy']:.3f}  steps {result['steps']}")

    def within(k):
        return sum(abs(r["predicted"] - r["expected"]) <= k for r in pooled) / len(pooled)

    print(f"pooled over {len(pooled)} rows: 2-step {within(2):.3f}  1-step {within(1):.3f}  exact {within(0):.3f}")
    if len(pooled) >= 3:
        fit = neurocad.fit_line([abs(r["peak_height"] - 1) for r in pooled],
                                [abs(r["predicted"] - r["expected"]) / 11 for r in pooled])
        flag = "  (zero-variance abscissa)" if fit["degenerate"] else ""
        print(f"confidence regression: slope {fit['slope']:.4f}  intercept {fit['intercept']:.4f}  "
              f"R^2 {fit['r_squared']:.4f}{flag}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
