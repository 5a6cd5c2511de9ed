"""Experiment drivers and the command-line entry point.

Every study walks its cells in config order and writes one CSV row per cell,
so repeated runs with the same configuration produce identical files apart
from the timing columns.
"""

from __future__ import annotations

import argparse
import ctypes
import ctypes.util
import csv
import gc
import sys
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import scipy

from .blocksolve import (GmresConfig, Side, StageOperator, StepContext, Subsolver, SubsolverCache,
                         build_preconditioner, integrate, stage_solve)
from .butcher import Kind, make_table, precond_coeff, read_coeff_file
from .config import (ConfigError, ExperimentConfig, Problem, Study, build_config, parse_pairs,
                     read_config_file)
from .fem2d import ParabolicProblem, double_glazing_problem, heat_problem
from .spectra import analyze, export_eigen_scatter, preconditioned_operator, write_kappa_table

SOLVE_COLUMNS = ["problem", "eps", "scheme", "s", "hx_inv", "ht", "dof", "preconditioner", "side",
                 "subsolver", "tol", "iterations", "converged", "true_residual", "rel_error",
                 "mms_error", "amg_levels", "amg_complexity", "seconds", "setup_seconds", "status"]
SPECTRAL_COLUMNS = ["problem", "eps", "scheme", "s", "hx_inv", "ht", "dof", "preconditioner", "side",
                    "kappa2", "min_real_eig", "status"]
TIMING_COLUMNS = ("seconds", "setup_seconds")


class ProblemCache:
    """Assembled problems reused across cells of one run."""

    def __init__(self):
        self._store: dict[tuple, ParabolicProblem] = {}

    def get(self, cfg: ExperimentConfig, hx_inv: int) -> ParabolicProblem:
        n = cfg.mesh_n(hx_inv)
        key = (cfg.problem, n, cfg.p, cfg.eps)
        if key not in self._store:
            if cfg.problem is Problem.HEAT:
                self._store[key] = heat_problem(n, cfg.p)
            else:
                self._store[key] = double_glazing_problem(n, cfg.eps, cfg.p)
        return self._store[key]


def _load_libc():
    try:
        libc = ctypes.CDLL(ctypes.util.find_library("c") or "libc.so.6")
    except OSError:
        return None
    return libc if hasattr(libc, "malloc_trim") else None


_LIBC = _load_libc()


def release_heap() -> None:
    """Return freed heap pages to the OS between cells (glibc only).

    The many small SuperLU allocations fragment the glibc heap, so without this
    the resident size of a long study keeps growing although nothing is leaked.
    """
    gc.collect()
    if _LIBC is not None:
        _LIBC.malloc_trim(0)


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, float):
        return f"{v:.6e}"
    return str(getattr(v, "value", v))


def _coeff(cfg: ExperimentConfig, table, kind: Kind):
    custom = read_coeff_file(cfg.custom_coeff) if kind is Kind.CUSTOM else None
    return precond_coeff(table, kind, custom)


def _base_row(cfg: ExperimentConfig, s: int, hx_inv: int, ht: float, dof: int) -> dict:
    return {"problem": cfg.problem.value, "eps": cfg.eps, "scheme": cfg.scheme.value, "s": s,
            "hx_inv": hx_inv, "ht": f"{ht:.12g}", "dof": dof}


def solve_cell(cfg: ExperimentConfig, prob: ParabolicProblem, s: int, hx_inv: int, ht: float,
               kind: Kind | None, side: Side, cache: SubsolverCache,
               reference: np.ndarray | None = None) -> dict:
    """One IRK stage solve (or ``cfg.steps`` steps) and its report row."""
    table = make_table(cfg.scheme, s)
    row = _base_row(cfg, s, hx_inv, ht, s * prob.n_free)
    row.update(preconditioner=kind.value if kind else "none", side=side.value,
               subsolver=cfg.subsolver.value, tol=cfg.tol)
    try:
        coeff = _coeff(cfg, table, kind) if kind else None
        before = cache.setup_seconds
        ctx = StepContext(prob.M, prob.F, table, ht, coeff, cfg.subsolver,
                          GmresConfig(side=side, rel_tol=cfg.tol, max_iter=cfg.max_iter),
                          load=prob.load if prob.mms else None, lift_rhs=prob.system.lift_rhs,
                          cache=cache)
        u0 = prob.initial()
        if cfg.steps == 1:
            K, rep, u1 = _first_step(u0, ctx)
            reps = [rep]
            mms = prob.error(u1, ht)
        else:
            traj = integrate(u0, cfg.steps * ht, ht, ctx, error_fn=prob.error)
            reps = traj.reports
            mms = traj.errors[-1]
            K = None
        its = [r.iterations for r in reps]
        row.update(
            iterations=its[0] if len(its) == 1 else round(float(np.mean(its)), 2),
            converged=all(r.converged for r in reps),
            true_residual=max(r.true_residual for r in reps),
            mms_error=mms,
            seconds=sum(r.seconds for r in reps),
            setup_seconds=cache.setup_seconds - before,
        )
        P = ctx.preconditioner()
        hier = [sub.hierarchy.stats() for sub in (P.subsolves if P else []) if hasattr(sub, "hierarchy")]
        if hier:
            row["amg_levels"] = max(h["levels"] for h in hier)
            row["amg_complexity"] = max(h["operator_complexity"] for h in hier)
        if reference is not None and K is not None:
            row["rel_error"] = float(np.linalg.norm(K - reference) / np.linalg.norm(reference))
        row["status"] = "ok" if row["converged"] else "not-converged"
    except Exception as exc:  # recorded in-row, the study carries on
        row["status"] = f"error:{type(exc).__name__}:{exc}".replace(",", ";")
    return row


def _first_step(u0, ctx: StepContext):
    K, rep = stage_solve(u0, 0.0, ctx)
    return K, rep, u0 + ctx.h_t * (ctx.table.b @ K.reshape(ctx.table.s, -1))


def _cells(cfg: ExperimentConfig, sides: Sequence[Side]):
    for s in cfg.stages:
        for hx in cfg.hx_inv:
            for ht in cfg.time_steps(s, hx):
                yield s, hx, ht, sides


def run_iteration_study(cfg: ExperimentConfig, problems: ProblemCache | None = None,
                        sides: Sequence[Side] | None = None,
                        on_cell: Callable[[int, int, float, SubsolverCache], None] | None = None) -> list[dict]:
    """``on_cell(s, hx_inv, ht, cache)`` sees each cell's prepared subsolvers before they are dropped."""
    problems = problems or ProblemCache()
    sides = tuple(sides or cfg.side)
    rows = []
    for s, hx, ht, _ in _cells(cfg, sides):
        prob = problems.get(cfg, hx)
        cache = SubsolverCache(prob.M, prob.F, cfg.subsolver, cfg.amg_params())
        for kind in cfg.precond:
            for side in sides:
                rows.append(solve_cell(cfg, prob, s, hx, ht, kind, side, cache))
        if on_cell is not None:
            on_cell(s, hx, ht, cache)
        del cache
        release_heap()
    return rows


def run_timestep_robustness(cfg: ExperimentConfig, problems: ProblemCache | None = None) -> list[dict]:
    if cfg.coupled:
        raise ConfigError("timestep study needs a fixed list of time steps")
    return run_iteration_study(cfg, problems, sides=(Side.LEFT, Side.RIGHT))


def reference_stage_solution(prob: ParabolicProblem, table, ht: float, tol: float = 1e-14) -> np.ndarray:
    """Stage vector from exactly factored P_LD with a tight tolerance."""
    ctx = StepContext(prob.M, prob.F, table, ht, precond_coeff(table, Kind.LD), Subsolver.LU,
                      GmresConfig(side=Side.RIGHT, rel_tol=tol, max_iter=200),
                      load=prob.load if prob.mms else None, lift_rhs=prob.system.lift_rhs)
    K, rep, _ = _first_step(prob.initial(), ctx)
    return K


def run_error_study(cfg: ExperimentConfig, problems: ProblemCache | None = None) -> list[dict]:
    problems = problems or ProblemCache()
    if cfg.steps != 1:
        raise ConfigError("the error study compares a single step against a reference solve")
    rows = []
    for s, hx, ht, sides in _cells(cfg, cfg.side):
        prob = problems.get(cfg, hx)
        table = make_table(cfg.scheme, s)
        ref = reference_stage_solution(prob, table, ht)
        cache = SubsolverCache(prob.M, prob.F, cfg.subsolver, cfg.amg_params())
        for kind in cfg.precond:
            for side in sides:
                rows.append(solve_cell(cfg, prob, s, hx, ht, kind, side, cache, reference=ref))
        del cache
        release_heap()
    return rows


def run_spectral_study(cfg: ExperimentConfig, problems: ProblemCache | None = None,
                       out_dir: Path | None = None) -> list[dict]:
    """kappa_2 (and optionally eigenvalues) with exactly factored preconditioners."""
    problems = problems or ProblemCache()
    rows = []
    scatter: dict[tuple[int, str], list] = {}
    kappa: dict[tuple[int, str], dict[int, dict[str, float]]] = {}
    for s, hx, ht, sides in _cells(cfg, cfg.side):
        prob = problems.get(cfg, hx)
        table = make_table(cfg.scheme, s)
        op = StageOperator(prob.M, prob.F, table.A, ht)
        cache = SubsolverCache(prob.M, prob.F, Subsolver.LU)
        base = _base_row(cfg, s, hx, ht, s * prob.n_free)
        cells = [(None, Side.RIGHT)] + [(k, side) for k in cfg.precond for side in sides]
        for kind, side in cells:
            name = kind.value if kind else "none"
            row = dict(base, preconditioner=name, side=side.value if kind else "")
            try:
                P = None
                if kind is not None:
                    P = build_preconditioner(_coeff(cfg, table, kind), prob.M, prob.F, ht,
                                             Subsolver.LU, cache=cache)
                label = f"s{s}-hx{hx}-{name}" + (f"-{side.value}" if kind else "")
                rep = analyze(preconditioned_operator(op, P, side, label), want_eigs=cfg.eigs)
                row["kappa2"] = rep.kappa2
                if rep.eigenvalues is not None:
                    row["min_real_eig"] = float(rep.eigenvalues.real.min())
                    scatter.setdefault((hx, side.value if kind else "none"), []).append(rep)
                row["status"] = "ok"
                sides_for = sides if kind is None else (side,)
                for sd in sides_for:
                    kappa.setdefault((hx, sd.value), {}).setdefault(s, {})[name] = rep.kappa2
            except Exception as exc:
                row["status"] = f"error:{type(exc).__name__}:{exc}".replace(",", ";")
            rows.append(row)
    if out_dir is not None:
        cols = ["none"] + [k.value for k in cfg.precond]
        for (hx, sd), tab in sorted(kappa.items()):
            write_kappa_table(out_dir / f"kappa_hx{hx}_{sd}.csv", tab, cols)
        for (hx, sd), reps in sorted(scatter.items()):
            export_eigen_scatter(reps, out_dir / f"eigs_hx{hx}_{sd}.csv")
    return rows


# --- output --------------------------------------------------------------------

def write_rows(path: Path, rows: list[dict], columns: Sequence[str]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r.get(c)) for c in columns])


def failed(rows: list[dict]) -> list[dict]:
    return [r for r in rows if r.get("status") != "ok"]


def write_manifest(path: Path, cfg: ExperimentConfig, rows: list[dict], csv_name: str) -> None:
    from . import __version__

    lines = [f"irkprec {__version__}", f"numpy {np.__version__}", f"scipy {scipy.__version__}",
             f"python {sys.version.split()[0]}", "", "[config]"]
    lines += cfg.manifest_lines()
    lines += ["", "[output]", f"table = {csv_name}", f"rows = {len(rows)}", f"failed = {len(failed(rows))}"]
    path.write_text("\n".join(lines) + "\n")


STUDIES: dict[Study, tuple[Callable, list[str]]] = {
    Study.ITERATIONS: (run_iteration_study, SOLVE_COLUMNS),
    Study.TIMESTEP: (run_timestep_robustness, SOLVE_COLUMNS),
    Study.ERROR: (run_error_study, SOLVE_COLUMNS),
    Study.SPECTRAL: (run_spectral_study, SPECTRAL_COLUMNS),
}


def run_study(cfg: ExperimentConfig) -> tuple[list[dict], Path]:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    fn, cols = STUDIES[cfg.study]
    if cfg.study is Study.SPECTRAL:
        rows = fn(cfg, out_dir=out)
    else:
        rows = fn(cfg)
    name = f"{cfg.study.value}.csv"
    write_rows(out / name, rows, cols)
    write_manifest(out / f"{cfg.study.value}_manifest.txt", cfg, rows, name)
    return rows, out / name


# --- command line ------------------------------------------------------------------

_FLAG_KEYS = ["study", "problem", "scheme", "stages", "hx_inv", "ht", "eps", "precond", "side",
              "subsolver", "tol", "seed", "out", "custom_coeff", "steps", "eigs", "coarsening",
              "smoother", "sweeps", "max_iter"]


def make_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="irkprec", description="Block-preconditioned IRK stage solves: experiment driver.")
    ap.add_argument("--study", choices=[s.value for s in Study])
    ap.add_argument("--config", help="flat key = value file; flags override it")
    ap.add_argument("--problem", help="heat | double-glazing")
    ap.add_argument("--scheme", help="RadauIIA | LobattoIIIC")
    ap.add_argument("--stages", help="e.g. 2,3 or 2-7")
    ap.add_argument("--hx-inv", dest="hx_inv", help="inverse mesh widths, e.g. 8,16,32")
    ap.add_argument("--ht", help="fixed time steps; omit for h_t = h_x^((p+1)/q)")
    ap.add_argument("--eps", help="diffusion coefficient (double-glazing)")
    ap.add_argument("--precond", help="comma list of J, GSL, DU, LD, Custom")
    ap.add_argument("--side", help="left, right or both as a list")
    ap.add_argument("--subsolver", choices=[s.value for s in Subsolver])
    ap.add_argument("--tol", help="GMRES relative tolerance")
    ap.add_argument("--seed")
    ap.add_argument("--out", help="output directory")
    ap.add_argument("--custom-coeff", dest="custom_coeff", help="coefficient file for the Custom kind")
    ap.add_argument("--steps", help="time steps per cell (default: first step only)")
    ap.add_argument("--eigs", help="1 to export eigenvalues in the spectral study")
    ap.add_argument("--coarsening", help="classical | sa")
    ap.add_argument("--smoother", help="sgs | gs | jacobi")
    ap.add_argument("--sweeps", help="pre- and post-smoothing sweeps")
    ap.add_argument("--max-iter", dest="max_iter")
    return ap


def main(argv: Sequence[str] | None = None) -> int:
    ap = make_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        file_vals = read_config_file(args.config) if args.config else {}
        flags = [(k, getattr(args, k)) for k in _FLAG_KEYS if getattr(args, k) is not None]
        cfg = build_config(file_vals, parse_pairs(flags))
        if cfg.custom_coeff is not None and not Path(cfg.custom_coeff).is_file():
            raise ConfigError(f"custom coefficient file {cfg.custom_coeff} not found")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    rows, path = run_study(cfg)
    bad = failed(rows)
    print(f"{cfg.study.value}: {len(rows)} rows -> {path}")
    for r in rows:
        its = r.get("iterations", r.get("kappa2"))
        print(f"  s={r['s']} hx^-1={r['hx_inv']} ht={r['ht']} {r['preconditioner']:>6} "
              f"{r.get('side', ''):>5}  {_fmt(its):>12}  {r['status']}")
    if bad:
        print(f"{len(bad)} failed cell(s)", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
