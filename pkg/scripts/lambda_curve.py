"""Bayes multiplier magnitude against alpha for the aware and blind rules.

    python scripts/lambda_curve.py --fixture m1 --out results/lambda_m1.csv
"""
import argparse
from pathlib import Path

import numpy as np

from fairpost.oracle import OracleModel, lambda_curve, write_curve_csv


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--fixture", default="m1")
    p.add_argument("--notion", default="eoo")
    p.add_argument("--alpha-min", type=float, default=0.02)
    p.add_argument("--alpha-max", type=float, default=0.30)
    p.add_argument("--points", type=int, default=15)
    p.add_argument("--mc-size", type=int, default=200_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="results/lambda_curve.csv")
    args = p.parse_args()

    model = OracleModel.load(args.fixture)
    alphas = np.round(np.linspace(args.alpha_min, args.alpha_max, args.points), 4)
    rows = lambda_curve(model, args.notion, alphas, args.mc_size, args.seed)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    write_curve_csv(rows, args.out)
    p11, p12 = model.p_ya[1]
    print(f"p11 = {p11:.3f}, p12 = {p12:.3f}")
    print(f"{'alpha':>7}{'aware':>9}{'blind':>9}")
    for r in rows:
        print(f"{r['alpha']:>7.3f}{r['lambda_aware']:>9.4f}{r['lambda_blind']:>9.4f}")
    print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
