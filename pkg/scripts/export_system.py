"""Write the mesh (plain-text node/element lists) and the reduced M, F in Matrix-Market format.

    python3 scripts/export_system.py --problem heat --hx-inv 8 --out exported/
    python3 scripts/export_system.py --problem double-glazing --eps 0.005 --hx-inv 16 --out exported/
"""

import argparse
from pathlib import Path

from irkprec.config import ExperimentConfig, Problem, parse_pairs
from irkprec.fem2d import double_glazing_problem, heat_problem
from irkprec.sparsela import write_matrix_market


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--problem", default="heat")
    ap.add_argument("--hx-inv", type=int, default=8)
    ap.add_argument("--eps")
    ap.add_argument("--p")
    ap.add_argument("--out", type=Path, default=Path("exported"))
    args = ap.parse_args(argv)
    pairs = [("problem", args.problem)] + [(k, v) for k, v in (("eps", args.eps), ("p", args.p)) if v]
    cfg = ExperimentConfig(**parse_pairs(pairs))
    n = cfg.mesh_n(args.hx_inv)
    if cfg.problem is Problem.HEAT:
        prob = heat_problem(n, cfg.p)
    else:
        prob = double_glazing_problem(n, cfg.eps, cfg.p)
    args.out.mkdir(parents=True, exist_ok=True)
    stem = args.out / prob.name
    Path(f"{stem}_mesh.txt").write_text(prob.space.mesh.to_text())
    write_matrix_market(f"{stem}_M.mtx", prob.M)
    write_matrix_market(f"{stem}_F.mtx", prob.F)
    print(f"{prob.name}: {prob.n_free} free dofs -> {stem}_{{mesh.txt,M.mtx,F.mtx}}")


if __name__ == "__main__":
    main()
