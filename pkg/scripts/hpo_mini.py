"""Eight-combination grid search on one participant, then print the ranking.

    python scripts/hpo_mini.py --out runs/hpo_mini --workers 2
"""
import argparse
import csv
import sys
from pathlib import Path

from ergocobot.cli import main as cli_main

HERE = Path(__file__).resolve().parent


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", type=Path, default=Path("runs/hpo_mini"))
    ap.add_argument("--config", type=Path, default=HERE / "configs" / "hpo_mini.yaml")
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    code = cli_main(["hpo", "--config", str(args.config), "--out", str(args.out),
                     "--workers", str(args.workers), "--seed", str(args.seed)])
    with open(args.out / "hpo.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    cols = ["index", "learning_rate", "epsilon_decay_episodes", "hidden_dim", "episodes",
            "early_stopped", "avg_pain", "avg_erg", "steps", "reward"]
    print("  ".join(cols))
    for r in rows:
        print("  ".join(r[c] for c in cols))
    return code


if __name__ == "__main__":
    sys.exit(main())
