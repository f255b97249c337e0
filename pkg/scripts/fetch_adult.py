"""Build data/adult.csv.gz from the UCI Adult files.

The UCI host is not always reachable, so by default the two raw files are
taken from the ``responsibly`` wheel, which bundles them unchanged. Pass
``--raw-dir`` to use local copies of ``adult.data`` and ``adult.test``.
"""
import argparse
import csv
import gzip
import subprocess
import sys
import tempfile
import zipfile
from pathlib import Path

COLUMNS = [
    "age", "workclass", "fnlwgt", "education", "education-num", "marital-status",
    "occupation", "relationship", "race", "sex", "capital-gain", "capital-loss",
    "hours-per-week", "native-country", "income",
]


def raw_from_wheel(tmp: Path) -> Path:
    subprocess.run([sys.executable, "-m", "pip", "download", "--no-deps", "-q", "-d", str(tmp),
                    "responsibly==0.1.2"], check=True)
    wheel = next(tmp.glob("responsibly-*.whl"))
    out = tmp / "raw"
    with zipfile.ZipFile(wheel) as z:
        for name in ("adult.data", "adult.test"):
            (out / name).parent.mkdir(parents=True, exist_ok=True)
            (out / name).write_bytes(z.read(f"responsibly/dataset/adult/{name}"))
    return out


def read_raw(path: Path) -> list:
    rows = []
    for line in path.read_text().splitlines():
        if not line.strip() or line.startswith("|"):
            continue
        vals = [v.strip() for v in line.split(",")]
        if len(vals) != len(COLUMNS):
            raise ValueError(f"{path}: unexpected row {line[:60]!r}")
        vals[-1] = vals[-1].rstrip(".")
        rows.append(vals)
    return rows


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--raw-dir", default=None)
    p.add_argument("--out", default=str(Path(__file__).resolve().parents[1] / "data" / "adult.csv.gz"))
    args = p.parse_args(argv)
    with tempfile.TemporaryDirectory() as tmp:
        raw = Path(args.raw_dir) if args.raw_dir else raw_from_wheel(Path(tmp))
        rows = read_raw(raw / "adult.data") + read_raw(raw / "adult.test")
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with gzip.open(out, "wt", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(COLUMNS)
        w.writerows(rows)
    print(f"wrote {len(rows)} rows to {out}")


if __name__ == "__main__":
    main()
