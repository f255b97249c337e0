"""Experiment harness: simulation study on oracle fixtures and the real-data pipeline."""
from __future__ import annotations

import csv
import gzip
import io
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .calibrate import fit_binary
from .core import DataError, Dataset, FairnessSpec, InfeasibleCalibrationError, Notion, Scenario
from .estimators import PlugIn, fit_multinomial_logit
from .oracle import OracleModel, bayes_risk
from .unfairness import _event_counts, empirical_unfairness, notion_spec

REPORT_FIELDS = [
    "method", "alpha", "mean_unfairness", "std_unfairness", "u95", "mean_error", "std_error",
    "n_feasible", "n_infeasible", "n_exceed", "n_lambda_zero", "mean_lambda",
]


@dataclass(frozen=True)
class ExperimentConfig:
    fixture: str | None = "m1"
    data_path: str | None = None
    manifest: str | None = None
    alphas: tuple = (0.08, 0.11, 0.14, 0.17, 0.20)
    delta: float = 0.05
    reps: int = 100
    n_train: int = 1000
    n_calib: int = 1000
    n_test: int = 5000
    scenarios: tuple = ("blind",)
    notion: str = "eoo"
    epsilon_mode: str = "practical"
    epsilon_value: float | None = None
    practical_reference: str = "pooled"
    seed: int = 0
    bayes: bool = True
    bayes_mc_size: int = 200_000
    logit_reg: float = 1e-4
    workers: int = 0

    def __post_init__(self):
        object.__setattr__(self, "alphas", tuple(float(a) for a in self.alphas))
        object.__setattr__(self, "scenarios", tuple(Scenario.parse(s).value for s in self.scenarios))
        object.__setattr__(self, "notion", Notion.parse(self.notion).value)
        if self.reps < 1:
            raise ValueError("reps must be >= 1")
        if min(self.n_train, self.n_calib, self.n_test) < 1:
            raise ValueError("split sizes must be >= 1")
        al = self.alphas
        if not al or any(not (0 < a <= 1) for a in al) or any(b <= a for a, b in zip(al, al[1:])):
            raise ValueError("alpha grid must be strictly increasing in (0, 1]")
        FairnessSpec(self.notion, self.scenarios[0], al[0], self.delta, self.epsilon_mode,
                     self.epsilon_value, self.practical_reference)

    def spec(self, scenario, alpha) -> FairnessSpec:
        return FairnessSpec(self.notion, scenario, alpha, self.delta, self.epsilon_mode,
                            self.epsilon_value, self.practical_reference)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["alphas"] = list(self.alphas)
        d["scenarios"] = list(self.scenarios)
        return d

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**doc)


@dataclass
class ExperimentReport:
    config: dict
    rows: list
    records: list = field(default_factory=list)

    def row(self, method: str, alpha: float) -> dict:
        for r in self.rows:
            if r["method"] == method and math.isclose(r["alpha"], alpha):
                return r
        raise KeyError((method, alpha))

    def to_json(self) -> str:
        return json.dumps({"config": self.config, "rows": self.rows, "records": self.records},
                          indent=2, sort_keys=True) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=REPORT_FIELDS, lineterminator="\n")
        w.writeheader()
        for r in self.rows:
            w.writerow({k: _fmt(r.get(k)) for k in REPORT_FIELDS})
        return buf.getvalue()

    def save(self, out_dir, stem: str = "report") -> tuple:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        pj, pc = out / f"{stem}.json", out / f"{stem}.csv"
        pj.write_text(self.to_json())
        pc.write_text(self.to_csv())
        return pj, pc

    @classmethod
    def from_json(cls, text: str) -> "ExperimentReport":
        doc = json.loads(text)
        return cls(doc["config"], doc["rows"], doc.get("records", []))

    @classmethod
    def load(cls, path) -> "ExperimentReport":
        return cls.from_json(Path(path).read_text())


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return v


def parse_report_csv(text: str) -> list:
    rows = []
    for r in csv.DictReader(io.StringIO(text)):
        out = {}
        for k, v in r.items():
            if k == "method":
                out[k] = v
            elif v == "":
                out[k] = None
            elif k.startswith("n_"):
                out[k] = int(v)
            else:
                out[k] = float(v)
        rows.append(out)
    return rows


def u95(values) -> float:
    """Order statistic at index ceil(0.95 R) (1-based)."""
    v = np.sort(np.asarray(values, dtype=float))
    if v.size == 0:
        return float("nan")
    return float(v[math.ceil(0.95 * v.size) - 1])


def _workers(cfg: ExperimentConfig) -> int:
    if cfg.workers:
        return max(1, int(cfg.workers))
    env = os.environ.get("FAIRPOST_THREADS")
    return max(1, int(env)) if env else 1


def _evaluate(cfg, train, calib, test, rep):
    """Fit the score model on ``train``; calibrate and score every (scenario, alpha)."""
    model = fit_multinomial_logit(train, cfg.logit_reg)
    cm = notion_spec(cfg.notion, 2)
    out = []
    for sc in cfg.scenarios:
        plug = PlugIn(model, cfg.notion, sc)
        for alpha in cfg.alphas:
            rec = {"rep": rep, "method": f"fair-{sc}", "alpha": alpha}
            try:
                clf, rpt = fit_binary(calib, plug.eta, plug.phi, cfg.spec(sc, alpha))
            except InfeasibleCalibrationError as exc:
                rec.update(feasible=False, unfairness=None, error=None, lambda_hat=None,
                           best_value=exc.best_value)
                out.append(rec)
                continue
            pred = clf.predict(test.X, test.a)
            rec.update(
                feasible=True,
                unfairness=empirical_unfairness(cm, pred, test),
                error=float(np.mean(pred != test.y)),
                lambda_hat=float(clf.lambda_hat),
                epsilon=rpt.epsilon_alpha,
            )
            out.append(rec)
    return out


def _sim_rep(args):
    cfg, rep, state = args
    oracle = OracleModel.load(cfg.fixture)
    s_tr, s_ca, s_te = (int(s) for s in np.random.SeedSequence(state).generate_state(3))
    return _evaluate(cfg, oracle.sample(cfg.n_train, s_tr), oracle.sample(cfg.n_calib, s_ca),
                     oracle.sample(cfg.n_test, s_te), rep)


def _rep_states(cfg):
    return [int(s) for s in np.random.SeedSequence(cfg.seed).generate_state(cfg.reps)]


def _map(fn, jobs, workers):
    if workers <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, jobs))


def aggregate(cfg: ExperimentConfig, records: list) -> list:
    rows = []
    methods = [f"fair-{sc}" for sc in cfg.scenarios]
    for m in methods:
        for alpha in cfg.alphas:
            recs = sorted((r for r in records if r["method"] == m and r["alpha"] == alpha),
                          key=lambda r: r["rep"])
            ok = [r for r in recs if r["feasible"]]
            U = np.array([r["unfairness"] for r in ok], dtype=float)
            E = np.array([r["error"] for r in ok], dtype=float)
            L = np.array([r["lambda_hat"] for r in ok], dtype=float)
            rows.append({
                "method": m,
                "alpha": alpha,
                "mean_unfairness": float(U.mean()) if U.size else None,
                "std_unfairness": float(U.std(ddof=1)) if U.size > 1 else (0.0 if U.size else None),
                "u95": u95(U) if U.size else None,
                "mean_error": float(E.mean()) if E.size else None,
                "std_error": float(E.std(ddof=1)) if E.size > 1 else (0.0 if E.size else None),
                "n_feasible": len(ok),
                "n_infeasible": len(recs) - len(ok),
                "n_exceed": int(np.sum(U > alpha)),
                "n_lambda_zero": int(np.sum(L == 0)),
                "mean_lambda": float(L.mean()) if L.size else None,
            })
    return rows


def bayes_rows(cfg: ExperimentConfig, oracle: OracleModel) -> list:
    rows = []
    for sc in cfg.scenarios:
        for alpha in cfg.alphas:
            sol = bayes_risk(oracle, cfg.notion, sc, alpha, cfg.bayes_mc_size, cfg.seed)
            rows.append({
                "method": f"bayes-{sc}", "alpha": alpha, "mean_unfairness": None, "std_unfairness": None,
                "u95": None, "mean_error": sol.bayes_risk, "std_error": sol.risk_se, "n_feasible": None,
                "n_infeasible": None, "n_exceed": None, "n_lambda_zero": None,
                "mean_lambda": float(sol.lambda_star),
            })
    return rows


def run_simulation(config: ExperimentConfig) -> ExperimentReport:
    """Repeated train / calibrate / test draws from an oracle fixture."""
    if config.fixture is None:
        raise ValueError("simulation needs an oracle fixture")
    oracle = OracleModel.load(config.fixture)
    jobs = [(config, r, s) for r, s in enumerate(_rep_states(config))]
    records = [rec for batch in _map(_sim_rep, jobs, _workers(config)) for rec in batch]
    records.sort(key=lambda r: (r["method"], r["alpha"], r["rep"]))
    rows = aggregate(config, records)
    if config.bayes:
        rows += bayes_rows(config, oracle)
    return ExperimentReport(config.to_dict(), rows, records)


# ---------------------------------------------------------------------------
# real data


@dataclass(frozen=True)
class Manifest:
    columns: list
    name: str = ""
    version: int = 1

    @classmethod
    def load(cls, path) -> "Manifest":
        doc = json.loads(Path(path).read_text())
        for c in doc["columns"]:
            if c.get("role") not in ("feature", "sensitive", "label", "ignore"):
                raise DataError(f"manifest column {c.get('name')!r} has invalid role {c.get('role')!r}")
        roles = [c["role"] for c in doc["columns"]]
        if roles.count("sensitive") != 1 or roles.count("label") != 1:
            raise DataError("manifest needs exactly one sensitive and one label column")
        return cls(doc["columns"], doc.get("name", ""), int(doc.get("version", 1)))


@dataclass(frozen=True, eq=False)
class Table:
    """Encoded real data: numeric block (standardized per split), one-hot block, groups and labels."""

    numeric: np.ndarray
    onehot: np.ndarray
    a: np.ndarray
    y: np.ndarray
    K: int
    feature_names: tuple

    def dataset(self, idx, ref_idx) -> Dataset:
        num = self.numeric[ref_idx]
        mu, sd = num.mean(axis=0), num.std(axis=0)
        sd = np.where(sd > 0, sd, 1.0)
        X = np.hstack([(self.numeric[idx] - mu) / sd, self.onehot[idx]])
        return Dataset(X, self.a[idx], self.y[idx], K=self.K)

    def full(self) -> Dataset:
        all_idx = np.arange(self.y.size)
        return self.dataset(all_idx, all_idx)


def _mapped(col, values, mapping):
    out = np.empty(len(values), dtype=np.int64)
    for i, v in enumerate(values):
        if v not in mapping:
            raise DataError(f"column {col!r}: value {v!r} not covered by the manifest mapping")
        out[i] = mapping[v]
    return out


def load_table(data_path, manifest: Manifest) -> Table:
    opener = gzip.open if str(data_path).endswith(".gz") else open
    with opener(data_path, "rt", newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh, skipinitialspace=True)
        header = [h.strip() for h in (reader.fieldnames or [])]
        reader.fieldnames = header
        rows = list(reader)
    for c in manifest.columns:
        if c["role"] != "ignore" and c["name"] not in header:
            raise DataError(f"column {c['name']!r} ({c['role']}) named in the manifest is missing from {data_path}")
    if not rows:
        raise DataError(f"{data_path}: no data rows")
    num, hot, names = [], [], []
    a = y = None
    K = 2
    for c in manifest.columns:
        name, role, enc = c["name"], c["role"], c.get("encoding", "numeric")
        if role == "ignore":
            continue
        vals = [r[name].strip() for r in rows]
        if role in ("sensitive", "label"):
            mapping = enc["map"]
            arr = _mapped(name, vals, mapping)
            if role == "sensitive":
                a, K = arr, max(2, int(max(mapping.values())))
            else:
                y = arr
        elif enc == "numeric":
            try:
                num.append(np.array([float(v) for v in vals]))
            except ValueError as exc:
                raise DataError(f"column {name!r}: non-numeric value ({exc})") from None
            names.append(name)
        elif enc == "onehot":
            cats = sorted(set(vals))
            idx = {v: i for i, v in enumerate(cats)}
            M = np.zeros((len(vals), len(cats)))
            M[np.arange(len(vals)), [idx[v] for v in vals]] = 1.0
            # drop one level to keep the design full rank
            hot.append(M[:, 1:])
            names += [f"{name}={v}" for v in cats[1:]]
        else:
            raise DataError(f"column {name!r}: unknown encoding {enc!r}")
    numeric = np.column_stack(num) if num else np.zeros((len(rows), 0))
    onehot = np.hstack(hot) if hot else np.zeros((len(rows), 0))
    return Table(numeric, onehot, a, y, K, tuple(names))


def _real_rep(args):
    cfg, table, rep, state = args
    rng = np.random.default_rng(state)
    perm = rng.permutation(table.y.size)
    tr = perm[: cfg.n_train]
    ca = perm[cfg.n_train: cfg.n_train + cfg.n_calib]
    te = perm[cfg.n_train + cfg.n_calib: cfg.n_train + cfg.n_calib + cfg.n_test]
    return _evaluate(cfg, table.dataset(tr, tr), table.dataset(ca, tr), table.dataset(te, tr), rep)


def run_real(config: ExperimentConfig) -> ExperimentReport:
    """Resampled train / calibration / test splits of a CSV described by a manifest."""
    if not config.data_path or not config.manifest:
        raise ValueError("real-data runs need data_path and manifest")
    manifest = Manifest.load(config.manifest)
    table = load_table(config.data_path, manifest)
    label = next(c["name"] for c in manifest.columns if c["role"] == "label")
    _event_counts(notion_spec(config.notion, table.K), table.full(), f"label column {label!r} in {config.data_path}")
    if config.n_train + config.n_calib >= table.y.size:
        raise ValueError(f"split sizes exceed the {table.y.size} available rows")
    jobs = [(config, table, r, s) for r, s in enumerate(_rep_states(config))]
    records = [rec for batch in _map(_real_rep, jobs, _workers(config)) for rec in batch]
    records.sort(key=lambda r: (r["method"], r["alpha"], r["rep"]))
    return ExperimentReport(config.to_dict(), aggregate(config, records), records)


# ---------------------------------------------------------------------------
# trade-off curves

CURVE_FIELDS = ["method", "alpha", "mean_unfairness", "u95", "mean_error"]


def tradeoff_curves(reports, lambda_rows: list | None = None) -> list:
    """Plot-ready rows; joins the oracle multiplier curve on alpha when given."""
    reports = [reports] if isinstance(reports, ExperimentReport) else list(reports)
    rows = []
    for rep in reports:
        alphas = sorted({r["alpha"] for r in rep.rows})
        if len(alphas) < 2:
            raise ValueError("trade-off curves need at least two alpha values")
        for r in rep.rows:
            row = {k: r.get(k) for k in CURVE_FIELDS}
            if lambda_rows:
                match = [l for l in lambda_rows if math.isclose(l["alpha"], r["alpha"])]
                row["lambda_aware"] = match[0]["lambda_aware"] if match else None
                row["lambda_blind"] = match[0]["lambda_blind"] if match else None
            rows.append(row)
    return rows


def curves_to_csv(rows: list) -> str:
    fields = CURVE_FIELDS + [k for k in ("lambda_aware", "lambda_blind") if rows and k in rows[0]]
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: _fmt(r.get(k)) for k in fields})
    return buf.getvalue()


def with_overrides(cfg: ExperimentConfig, **kw) -> ExperimentConfig:
    return replace(cfg, **{k: v for k, v in kw.items() if v is not None})
