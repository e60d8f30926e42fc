"""Run the four-phase protocol for every participant and both algorithms.

    python scripts/run_protocol.py --out runs/protocol --seed 1

Writes one run directory per (participant, algorithm) and a combined table.
"""
import argparse
import sys
from pathlib import Path

from ergocobot.cli import main as cli_main

PARTICIPANTS = ("1.62", "1.69", "1.79", "1.83")


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", type=Path, default=Path("runs/protocol"))
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--config", type=Path)
    ap.add_argument("--algorithms", nargs="+", default=["ql", "dqn"], choices=["ql", "dqn"])
    ap.add_argument("--skip-finetune", action="store_true")
    args = ap.parse_args()

    worst = 0
    for pid in PARTICIPANTS:
        for alg in args.algorithms:
            argv = ["protocol", "--participant", pid, "--algorithm", alg,
                    "--seed", str(args.seed), "--out", str(args.out / f"{pid}_{alg}")]
            if args.config:
                argv += ["--config", str(args.config)]
            if args.skip_finetune:
                argv.append("--skip-finetune")
            print(f"== {pid} {alg}", flush=True)
            worst = max(worst, cli_main(argv))
    cli_main(["report", "--out", str(args.out)])
    return worst


if __name__ == "__main__":
    sys.exit(main())
