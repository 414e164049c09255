"""Compare lambda-selection rules (CV, CV-1se, mFDR <= alpha) on a real dataset.

    python scripts/case_study.py data.csv --y time --status status --family cox \
        --unpenalized age,sex,stage

For each penalty the script prints lambda, expected false discoveries (EF),
selected count (S), estimated mFDR (%) and CV error under each rule, then
checks that the mFDR-rule model is no larger than the CV-rule model.  If the
data file is absent it says so and exits 0.
"""

import argparse
import os
import sys

from mfdrreg.data import read_csv
from mfdrreg.mfdr import mfdr_path
from mfdrreg.penalty import PenaltySpec
from mfdrreg.selection import cross_validate, select_index_by_mfdr
from mfdrreg.solver import fit_path, make_lambda_grid


def rule_rows(ds, penalty, folds, seed, alpha):
    spec = PenaltySpec(penalty)
    path = fit_path(ds, spec, make_lambda_grid(ds, spec))
    cv = cross_validate(ds, spec, path.lambdas, folds, seed)
    table = mfdr_path(path)
    picks = {"CV": cv.min_index, "CV(1se)": cv.one_se_index,
             "mFDR": select_index_by_mfdr(table, alpha)}
    rows = {}
    for rule, k in picks.items():
        if k is None:
            rows[rule] = None
            continue
        m = table.mfdr[k]
        rows[rule] = (path.lambdas[k], table.expected_false_discoveries[k], int(table.selected_count[k]),
                      None if m != m else 100 * m, cv.cv_error[k])
    return rows


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("data")
    ap.add_argument("--y", required=True)
    ap.add_argument("--status")
    ap.add_argument("--family", default="cox", choices=("gaussian", "binomial", "cox"))
    ap.add_argument("--unpenalized", default="")
    ap.add_argument("--folds", type=int, default=10)
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--alpha", type=float, default=0.1)
    args = ap.parse_args(argv)

    if not os.path.exists(args.data):
        print(f"{args.data} not found; nothing to do")
        return 0
    unpen = [c for c in args.unpenalized.split(",") if c]
    ds = read_csv(args.data, args.y, args.family, args.status, unpen)

    ok = True
    print(f"{'penalty':8} {'rule':8} {'lambda':>8} {'EF':>8} {'S':>4} {'mFDR%':>6} {'CVE':>9}")
    for penalty in ("lasso", "mcp"):
        rows = rule_rows(ds, penalty, args.folds, args.seed, args.alpha)
        for rule, row in rows.items():
            if row is None:
                print(f"{penalty:8} {rule:8} {'none':>8}")
                continue
            lam, ef, s, m, cve = row
            mtxt = "-" if m is None else f"{m:.1f}"
            print(f"{penalty:8} {rule:8} {lam:8.4f} {ef:8.2f} {s:4d} {mtxt:>6} {cve:9.4f}")
        cv_size = rows["CV"][2]
        mfdr_size = 0 if rows["mFDR"] is None else rows["mFDR"][2]
        good = mfdr_size <= cv_size
        ok &= good
        print(f"{penalty}: mFDR model ({mfdr_size}) {'<=' if good else '>'} CV model ({cv_size})")
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
