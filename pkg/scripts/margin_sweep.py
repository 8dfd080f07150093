#!/usr/bin/env python3
"""Sweep the neutral coefficient and record the stability margin and the
fitted decay rate: d/dt (x(t) - c x(t-1)) = -x(t) for c in [0, c_max].

Writes a CSV with columns c, gamma0, verdict, lambda_hat, M_hat. Past c = 1
the difference operator loses strong stability and the decay fit degrades.
"""
import argparse
from pathlib import Path

import numpy as np

from haleform import (
    DifferenceOperator,
    LinearTerm,
    NfdeSystem,
    RhsMap,
    estimate_ges,
    is_strongly_stable,
)


def main() -> int:
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="margin_sweep.csv")
    ap.add_argument("--points", type=int, default=12)
    ap.add_argument("--c-max", type=float, default=1.15)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    rows = ["c,gamma0,verdict,lambda_hat,M_hat"]
    for c in np.linspace(0.0, args.c_max, args.points):
        dop = DifferenceOperator([1.0], [[[float(c)]]])
        rhs = RhsMap(n=1, terms=(LinearTerm(0.0, [[-1.0]]),))
        system = NfdeSystem(dop, rhs)
        verdict, margin = is_strongly_stable(dop)
        est = estimate_ges(system, 10, 12.0, step=0.125, seed=args.seed)
        lam = est.lam if est.is_ges else float("nan")
        big_m = est.M if est.is_ges else float("nan")
        rows.append(
            f"{c:.6f},{margin.gamma0:.6f},{verdict},{lam:.6f},{big_m:.6f}"
        )
        print(rows[-1])
    Path(args.out).write_text("\n".join(rows) + "\n", encoding="utf-8")
    print(f"wrote {args.out}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
