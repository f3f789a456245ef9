"""Build data/adult.csv from the UCI Adult files bundled in the `responsibly` wheel.

Usage: pip download --no-deps responsibly==0.1.2 -d /tmp/resp
       python3 scripts/prepare_adult.py /tmp/resp/responsibly-0.1.2-py3-none-any.whl
"""
import csv
import sys
import zipfile

COLUMNS = [
    "age", "workclass", "fnlwgt", "education", "education_num", "marital_status",
    "occupation", "relationship", "race", "sex", "capital_gain", "capital_loss",
    "hours_per_week", "native_country", "income",
]
KEEP = [
    "age", "workclass", "education_num", "marital_status", "occupation",
    "relationship", "race", "sex", "capital_gain", "capital_loss",
    "hours_per_week", "income",
]


def rows(raw):
    for line in raw.decode("utf-8").splitlines():
        line = line.strip()
        if not line or line.startswith("|"):
            continue
        cells = [c.strip() for c in line.split(",")]
        if len(cells) != len(COLUMNS):
            continue
        rec = dict(zip(COLUMNS, cells))
        rec["income"] = ">50K" if rec["income"].startswith(">50K") else "<=50K"
        for key in ("workclass", "occupation"):
            if rec[key] == "?":
                rec[key] = "Unknown"
        yield [rec[k] for k in KEEP]


def main(wheel, out="data/adult.csv"):
    z = zipfile.ZipFile(wheel)
    out_rows = []
    for name in ("adult.data", "adult.test"):
        out_rows.extend(rows(z.read(f"responsibly/dataset/adult/{name}")))
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(KEEP)
        w.writerows(out_rows)
    print(f"wrote {len(out_rows)} rows to {out}")


if __name__ == "__main__":
    main(*sys.argv[1:])
