"""Pivot a long-format study CSV into an (s, h_x^-1 or h_t) by preconditioner table.

    python3 scripts/pivot.py results/heat_radau_right/iterations.csv
    python3 scripts/pivot.py results/heat_timestep/timestep.csv --row ht --value iterations
"""

import argparse
import csv
import sys
from collections import defaultdict


def pivot(rows, row_key: str, value: str):
    cols: list[str] = []
    table: dict[tuple, dict[str, str]] = defaultdict(dict)
    for r in rows:
        col = r["preconditioner"] + (f"/{r['side']}" if r.get("side") else "")
        if col not in cols:
            cols.append(col)
        table[(int(r["s"]), r[row_key])][col] = r[value] if r["status"] == "ok" else f"({r[value] or 'x'})"
    return cols, table


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("csv")
    ap.add_argument("--row", default="hx_inv", help="second row key next to s (hx_inv or ht)")
    ap.add_argument("--value", default="iterations", help="column to tabulate")
    args = ap.parse_args(argv)
    with open(args.csv, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        print("no rows", file=sys.stderr)
        return 1
    value = args.value if args.value in rows[0] else "kappa2"
    cols, table = pivot(rows, args.row, value)
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["s", args.row, *cols])
    for (s, k), vals in table.items():
        w.writerow([s, k, *(vals.get(c, "") for c in cols)])
    return 0


if __name__ == "__main__":
    sys.exit(main())
