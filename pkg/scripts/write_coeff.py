"""Write a coefficient file for the Custom preconditioner kind, seeded from a built-in choice.

    python3 scripts/write_coeff.py --scheme RadauIIA --stages 3 --kind GSL coeff.txt
    python3 -m irkprec --study iterations --stages 3 --precond Custom --custom-coeff coeff.txt
"""

import argparse

from irkprec.butcher import make_table, precond_coeff, write_coeff_file
from irkprec.config import parse_pairs


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("path")
    ap.add_argument("--scheme", default="RadauIIA")
    ap.add_argument("--stages", default="2")
    ap.add_argument("--kind", default="GSL", help="J, GSL, DU or LD")
    args = ap.parse_args(argv)
    vals = parse_pairs([("scheme", args.scheme), ("stages", args.stages), ("precond", args.kind)])
    table = make_table(vals["scheme"], vals["stages"][0])
    write_coeff_file(args.path, precond_coeff(table, vals["precond"][0]).Atilde)
    print(f"{table.name} {vals['precond'][0].value} coefficients -> {args.path}")


if __name__ == "__main__":
    main()
