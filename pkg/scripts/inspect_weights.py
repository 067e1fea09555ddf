#!/usr/bin/env python3
"""Summarize learned hypothesis weights from a benchmark output directory.

Reads <out>/weights.csv (written by `hypalign weights`) and prints the
per-regime hypothesis mass averaged over training seeds, plus the
turning-vs-linear contrast on the turn-aware models (ctrv + ctra): a
positive gap means the aligner routes turning tracks to turning hypotheses.
"""

from __future__ import annotations

import argparse
import csv
import os
import statistics
import sys

TURN = ("w_ctrv", "w_ctra")
LINEAR_REGIMES = ("cv", "ca")
TURN_REGIMES = ("ctrv", "ctra")


def load_rows(path: str) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    return list(csv.DictReader(lines))


def regime_mass(rows: list[dict], seed: str, regimes: tuple) -> float:
    """Pair-weighted mean of the turn-model mass over the given regimes."""
    total = mass = 0.0
    for row in rows:
        if row["seed"] == seed and row["regime"] in regimes:
            pairs = int(row["pairs"])
            total += pairs
            mass += pairs * sum(float(row[k]) for k in TURN)
    return mass / total


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("out", nargs="?", default="hypalign_out",
                    help="benchmark output directory")
    args = ap.parse_args()

    path = os.path.join(args.out, "weights.csv")
    if not os.path.exists(path):
        sys.exit(f"{path} not found; run `hypalign weights` first")
    rows = load_rows(path)
    seeds = sorted({r["seed"] for r in rows}, key=int)
    weight_cols = [k for k in rows[0] if k.startswith("w_")]

    print(f"{'regime':8s} " + " ".join(f"{c[2:]:>8s}" for c in weight_cols))
    regimes = sorted({r["regime"] for r in rows})
    for regime in regimes:
        means = []
        for col in weight_cols:
            vals = [float(r[col]) for r in rows if r["regime"] == regime]
            means.append(sum(vals) / len(vals))
        print(f"{regime:8s} " + " ".join(f"{m:8.4f}" for m in means))

    gaps = [regime_mass(rows, s, TURN_REGIMES) - regime_mass(rows, s, LINEAR_REGIMES)
            for s in seeds]
    print()
    for s, g in zip(seeds, gaps):
        print(f"seed {s}: turning - linear mass on ctrv+ctra = {g:+.4f}")
    print(f"median gap over {len(seeds)} seeds: {statistics.median(gaps):+.4f}")


if __name__ == "__main__":
    main()
