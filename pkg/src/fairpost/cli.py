"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 infeasible calibration, 3 data error.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .bench import (
    ExperimentConfig,
    ExperimentReport,
    curves_to_csv,
    run_real,
    run_simulation,
    tradeoff_curves,
    with_overrides,
)
from .calibrate import SearchConfig, fit_binary, fit_multiclass
from .core import DataError, Dataset, FairnessSpec, FittedFairClassifier, InfeasibleCalibrationError
from .estimators import JointClassModel, PlugIn, fit_multinomial_logit
from .oracle import OracleModel, lambda_curve, write_curve_csv
from .unfairness import empirical_unfairness, notion_spec

EXIT_OK, EXIT_USAGE, EXIT_INFEASIBLE, EXIT_DATA = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _floats(text: str) -> list:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _names(text: str) -> list:
    return [v.strip() for v in text.split(",") if v.strip()]


def _common(p):
    p.add_argument("--seed", type=int, default=None, help="root seed (recorded even when unused)")
    p.add_argument("--out", default=".", help="output directory")


def _spec_flags(p):
    p.add_argument("--notion", default=None, choices=["dp", "eoo", "oae", "pe", "eo"])
    p.add_argument("--delta", type=float, default=None, help="delta_post")
    p.add_argument("--epsilon-mode", default=None, choices=["theoretical", "practical", "fixed"])
    p.add_argument("--epsilon-value", type=float, default=None, help="margin for --epsilon-mode fixed")
    p.add_argument("--practical-reference", default=None, choices=["pooled", "min_cell"])


def _experiment_flags(p):
    p.add_argument("--config", default=None, help="JSON experiment config (flags override it)")
    p.add_argument("--alpha", type=float, default=None, help="single alpha (replaces the grid)")
    p.add_argument("--alphas", type=_floats, default=None, help="comma-separated alpha grid")
    p.add_argument("--reps", type=int, default=None)
    p.add_argument("--scenario", type=_names, default=None, help="aware, blind or aware,blind")
    p.add_argument("--n-train", type=int, default=None)
    p.add_argument("--n-calib", type=int, default=None)
    p.add_argument("--n-test", type=int, default=None)
    p.add_argument("--workers", type=int, default=None)
    _spec_flags(p)
    _common(p)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="fairpost", description="Fair post-processing of score models.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="simulation study on an oracle fixture")
    _experiment_flags(s)
    s.add_argument("--fixture", default=None, help="fixture JSON or m1/m2/m3")
    s.add_argument("--no-bayes", action="store_true", help="skip the Bayes rows")
    s.add_argument("--bayes-mc", type=int, default=None, help="Monte-Carlo size for Bayes rows")

    s = sub.add_parser("real", help="real-data run from a CSV and a preprocessing manifest")
    _experiment_flags(s)
    s.add_argument("--data", default=None, help="CSV file")
    s.add_argument("--manifest", default=None, help="manifest JSON")

    s = sub.add_parser("fit", help="calibrate a fair classifier on a calibration CSV")
    s.add_argument("--data", required=True, help="calibration CSV (x1..xd,a,y)")
    s.add_argument("--model", required=True, help="score model JSON (written when --train is given)")
    s.add_argument("--train", default=None, help="training CSV; fits the score model first")
    s.add_argument("--scenario", default="blind", choices=["aware", "blind"])
    s.add_argument("--alpha", type=float, required=True)
    s.add_argument("--reg", type=float, default=1e-4, help="ridge penalty for --train")
    s.add_argument("--multiclass", action="store_true", help="use the multi-class solver")
    s.add_argument("--starts", type=int, default=8)
    s.add_argument("--sweeps", type=int, default=10)
    s.add_argument("--directions", type=int, default=4, help="random search directions per sweep")
    _spec_flags(s)
    _common(s)

    s = sub.add_parser("predict", help="apply a serialized classifier to a CSV")
    s.add_argument("--classifier", required=True)
    s.add_argument("--data", required=True)
    _common(s)

    s = sub.add_parser("evaluate", help="unfairness and error of a classifier on a labeled CSV")
    s.add_argument("--classifier", required=True)
    s.add_argument("--data", required=True)
    _common(s)

    s = sub.add_parser("oracle-lambda", help="Bayes multiplier curve on an oracle fixture")
    s.add_argument("--fixture", required=True)
    s.add_argument("--alphas", type=_floats, required=True)
    s.add_argument("--notion", default="eoo", choices=["dp", "eoo", "oae", "pe"])
    s.add_argument("--mc-size", type=int, default=200_000)
    _common(s)

    s = sub.add_parser("tradeoff", help="plot data from experiment reports")
    s.add_argument("--reports", nargs="+", required=True)
    s.add_argument("--fixture", default=None, help="join the oracle multiplier curve")
    s.add_argument("--mc-size", type=int, default=200_000)
    _common(s)
    return p


def _experiment_config(args, **extra) -> ExperimentConfig:
    base = {}
    if args.config:
        doc = json.loads(Path(args.config).read_text())
        if "means" in doc:
            base = {"fixture": str(args.config)}
        else:
            base = doc
    cfg = ExperimentConfig.from_dict(base)
    alphas = [args.alpha] if args.alpha is not None else args.alphas
    return with_overrides(
        cfg,
        alphas=tuple(alphas) if alphas else None,
        reps=args.reps,
        scenarios=tuple(args.scenario) if args.scenario else None,
        n_train=args.n_train,
        n_calib=args.n_calib,
        n_test=args.n_test,
        workers=args.workers,
        notion=args.notion,
        delta=args.delta,
        epsilon_mode=args.epsilon_mode,
        epsilon_value=args.epsilon_value,
        practical_reference=args.practical_reference,
        seed=args.seed,
        **extra,
    )


def _summary(report: ExperimentReport) -> str:
    parts = []
    for r in report.rows:
        if r["method"].startswith("fair-"):
            u = "nan" if r["u95"] is None else f"{r['u95']:.3f}"
            e = "nan" if r["mean_error"] is None else f"{r['mean_error']:.3f}"
            parts.append(f"{r['method']}@{r['alpha']:g}: U95={u} err={e} infeasible={r['n_infeasible']}")
    return "; ".join(parts)


def cmd_simulate(args) -> int:
    extra = {"fixture": args.fixture}
    if args.no_bayes:
        extra["bayes"] = False
    if args.bayes_mc:
        extra["bayes_mc_size"] = args.bayes_mc
    cfg = _experiment_config(args, **extra)
    report = run_simulation(cfg)
    pj, _ = report.save(args.out)
    print(f"simulate: {_summary(report)} -> {pj}")
    return EXIT_OK


def cmd_real(args) -> int:
    cfg = _experiment_config(args, data_path=args.data, manifest=args.manifest)
    cfg = ExperimentConfig(**{**cfg.to_dict(), "fixture": None, "bayes": False})
    report = run_real(cfg)
    pj, _ = report.save(args.out)
    print(f"real: {_summary(report)} -> {pj}")
    return EXIT_OK


def cmd_fit(args) -> int:
    calib = Dataset.read_csv(args.data)
    if args.train:
        train = Dataset.read_csv(args.train, K=calib.K)
        model = fit_multinomial_logit(train, args.reg)
        Path(args.model).write_text(json.dumps(model.to_dict(), indent=2))
    else:
        try:
            model = JointClassModel.from_dict(json.loads(Path(args.model).read_text()))
        except (OSError, json.JSONDecodeError, KeyError) as exc:
            raise DataError(f"cannot load score model {args.model}: {exc}") from exc
    if model.K != calib.K:
        raise DataError(f"score model has K={model.K}, calibration data has K={calib.K}")
    spec = FairnessSpec(args.notion or "eoo", args.scenario, args.alpha, args.delta or 0.05,
                        args.epsilon_mode or "practical", args.epsilon_value,
                        args.practical_reference or "pooled")
    multiclass = args.multiclass or calib.K > 2 or spec.notion.value == "eo"
    plug = PlugIn(model, spec.notion, spec.scenario, multiclass)
    desc = plug.descriptor()
    if multiclass:
        cfg = SearchConfig(args.starts, args.sweeps, args.seed or 0, args.directions)
        clf, rpt = fit_multiclass(calib, plug.eta, plug.phi, spec, cfg, estimator=desc)
    else:
        clf, rpt = fit_binary(calib, plug.eta, plug.phi, spec, estimator=desc)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    doc = clf.to_dict()
    doc["calibration"] = rpt.to_dict()
    doc["provenance"] = {"command": "fit", "data": args.data, "model": args.model, "train": args.train,
                         "seed": args.seed, "spec": {"notion": spec.notion.value, "scenario": spec.scenario.value,
                                                     "alpha": spec.alpha, "delta_post": spec.delta_post,
                                                     "epsilon_mode": spec.epsilon_mode,
                                                     "epsilon_value": spec.epsilon_value,
                                                     "practical_reference": spec.practical_reference}}
    path = out / "classifier.json"
    path.write_text(json.dumps(doc, indent=2))
    lam = rpt.lambda_hat
    lam_s = f"{lam:.6g}" if isinstance(lam, float) else "[" + ",".join(f"{v:.4g}" for v in lam) + "]"
    print(f"fit: lambda={lam_s} signed={rpt.signed_value:.4f} eps={rpt.epsilon_alpha:.4f} -> {path}")
    return EXIT_OK


def _load_classifier(path) -> FittedFairClassifier:
    try:
        return FittedFairClassifier.load(path)
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        raise DataError(f"cannot load classifier {path}: {exc}") from exc


def cmd_predict(args) -> int:
    clf = _load_classifier(args.classifier)
    data = Dataset.read_csv(args.data, K=clf.K)
    pred = clf.predict(data.X, data.a)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "predictions.csv"
    path.write_text("pred\n" + "".join(f"{int(v)}\n" for v in pred))
    meta = {"command": "predict", "classifier": args.classifier, "data": args.data, "seed": args.seed, "n": data.n}
    (out / "predictions.meta.json").write_text(json.dumps(meta, indent=2))
    print(f"predict: {data.n} rows, {int(pred.sum())} positive -> {path}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    clf = _load_classifier(args.classifier)
    data = Dataset.read_csv(args.data, K=clf.K)
    pred = clf.predict(data.X, data.a)
    cm = notion_spec(clf.notion, clf.K, clf.multiclass or None)
    res = {
        "unfairness": empirical_unfairness(cm, pred, data),
        "error": float(np.mean(pred != data.y)),
        "n": data.n,
        "alpha": clf.alpha,
        "provenance": {"command": "evaluate", "classifier": args.classifier, "data": args.data, "seed": args.seed},
    }
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "evaluation.json"
    path.write_text(json.dumps(res, indent=2))
    print(f"evaluate: unfairness={res['unfairness']:.4f} error={res['error']:.4f} -> {path}")
    return EXIT_OK


def cmd_oracle_lambda(args) -> int:
    model = OracleModel.load(args.fixture)
    rows = lambda_curve(model, args.notion, args.alphas, args.mc_size, args.seed or 0)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "lambda_curve.csv"
    write_curve_csv(rows, path)
    (out / "lambda_curve.meta.json").write_text(json.dumps(
        {"command": "oracle-lambda", "fixture": args.fixture, "alphas": args.alphas, "notion": args.notion,
         "mc_size": args.mc_size, "seed": args.seed or 0}, indent=2))
    worst = max(r["lambda_aware"] for r in rows)
    print(f"oracle-lambda: {len(rows)} rows, max |lambda_aware|={worst:.4f} -> {path}")
    return EXIT_OK


def cmd_tradeoff(args) -> int:
    try:
        reports = [ExperimentReport.load(p) for p in args.reports]
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        raise DataError(f"cannot read report: {exc}") from exc
    lam = None
    if args.fixture:
        model = OracleModel.load(args.fixture)
        alphas = sorted({r["alpha"] for rep in reports for r in rep.rows})
        notion = reports[0].config.get("notion", "eoo")
        lam = lambda_curve(model, notion, alphas, args.mc_size, args.seed or 0)
    rows = tradeoff_curves(reports, lam)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "tradeoff.csv"
    path.write_text(curves_to_csv(rows))
    print(f"tradeoff: {len(rows)} rows -> {path}")
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "real": cmd_real,
    "fit": cmd_fit,
    "predict": cmd_predict,
    "evaluate": cmd_evaluate,
    "oracle-lambda": cmd_oracle_lambda,
    "tradeoff": cmd_tradeoff,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return COMMANDS[args.command](args)
    except InfeasibleCalibrationError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (OSError, json.JSONDecodeError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ValueError, TypeError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
