"""Scan shoulder-anchor positions for one participant with the reference planners.

Prints anchors whose planned QL and DQN paths land near the given targets.
Planner results are a proxy; confirm candidates by training.

    python scripts/calibrate_anchor.py 1.79 --ql 9 2.00 --dqn 5 2.12
"""
import argparse
from dataclasses import replace

import numpy as np

from ergocobot.environment import Workspace, load_presets
from ergocobot.kinematics import Point2
from ergocobot.planning import plan_continuous, plan_grid


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("participant")
    ap.add_argument("--ql", nargs=2, type=float, metavar=("STEPS", "ERG"), required=True)
    ap.add_argument("--dqn", nargs=2, type=float, metavar=("STEPS", "ERG"), required=True)
    ap.add_argument("--x", nargs=3, type=float, default=(1.90, 2.65, 0.0125),
                    metavar=("LO", "HI", "STEP"), help="anchor x range (world, m)")
    ap.add_argument("--z", nargs=3, type=float, default=(0.30, 0.85, 0.0125),
                    metavar=("LO", "HI", "STEP"), help="anchor height above the workspace floor")
    ap.add_argument("--erg-tol", type=float, default=0.15)
    ap.add_argument("--top", type=int, default=60)
    args = ap.parse_args()

    ws = Workspace()
    base = next(p for p in load_presets(ws, check=False) if p.id == args.participant)
    q_steps, q_erg = args.ql
    d_steps, d_erg = args.dqn
    cands = []
    for rel in np.arange(*args.z):
        for ax in np.arange(*args.x):
            p = replace(base, anchor=Point2(round(ax, 4), round(ws.z_origin_world + rel, 4)))
            try:
                g = plan_grid(p, ws, gamma=0.99)
            except ValueError:
                continue
            if not g.reached or g.avg_pain > 0:
                continue
            if abs(g.steps - q_steps) > 1 or abs(g.avg_erg - q_erg) > args.erg_tol:
                continue
            cands.append((abs(g.avg_erg - q_erg), p, g))
    cands.sort(key=lambda c: c[0])
    print(f"{len(cands)} anchors match the QL target")
    for _, p, g in cands[:args.top]:
        c = plan_continuous(p, ws, res=0.01)
        if not c.reached or c.avg_pain > 0:
            continue
        hit = abs(c.steps - d_steps) <= 1 and abs(c.avg_erg - d_erg) <= args.erg_tol
        print(f"anchor=({p.anchor.x:.4f}, {p.anchor.z:.4f}) ql={g.steps}/{g.avg_erg:.2f} "
              f"dqn={c.steps}/{c.avg_erg:.2f}{'  <-' if hit else ''}", flush=True)


if __name__ == "__main__":
    main()
