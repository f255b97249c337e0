"""Simulation table: unfairness and error of the fair classifier next to the Bayes rule.

    python scripts/table1.py --fixture m1 --reps 100 --out results/m1
"""
import argparse
import os
import time

from fairpost.bench import ExperimentConfig, run_simulation


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--fixture", default="m1", help="m1, m2, m3 or a fixture JSON")
    p.add_argument("--reps", type=int, default=100)
    p.add_argument("--n", type=int, default=None, help="train and calibration size (fixture default if unset)")
    p.add_argument("--alphas", default="0.08,0.11,0.14,0.17,0.20")
    p.add_argument("--scenarios", default="aware,blind")
    p.add_argument("--epsilon-mode", default="practical", choices=["practical", "theoretical"])
    p.add_argument("--bayes-mc", type=int, default=200_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=os.cpu_count() or 1)
    p.add_argument("--out", default="results/table1")
    args = p.parse_args()

    n = args.n or {"m2": 500}.get(args.fixture.lower(), 1000)
    cfg = ExperimentConfig(
        fixture=args.fixture,
        alphas=tuple(float(a) for a in args.alphas.split(",")),
        reps=args.reps,
        n_train=n,
        n_calib=n,
        scenarios=tuple(args.scenarios.split(",")),
        epsilon_mode=args.epsilon_mode,
        bayes_mc_size=args.bayes_mc,
        seed=args.seed,
        workers=args.workers,
    )
    t = time.time()
    report = run_simulation(cfg)
    pj, pc = report.save(args.out)

    print(f"{'method':<14}{'alpha':>7}{'mean U':>9}{'U95':>8}{'error':>8}{'(sd)':>8}{'infeas':>8}")
    for r in report.rows:
        fmt = lambda v, w=8: f"{v:>{w}.3f}" if v is not None else f"{'-':>{w}}"
        print(f"{r['method']:<14}{r['alpha']:>7.2f}{fmt(r['mean_unfairness'], 9)}{fmt(r['u95'])}"
              f"{fmt(r['mean_error'])}{fmt(r['std_error'])}{r['n_infeasible'] if r['n_infeasible'] is not None else '-':>8}")
    print(f"wrote {pj} and {pc} in {time.time() - t:.0f}s")


if __name__ == "__main__":
    main()
