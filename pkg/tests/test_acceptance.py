"""Acceptance criteria 1-12, each recorded as one PASS/FAIL line in the terminal summary.

The large heat runs (criteria 5, 8, 9) share module fixtures. Set
IRKPREC_ACCEPT_MAX_HX=64 to cap the mesh at h_x = 1/64 on memory-limited machines.
"""

import os
import time

import numpy as np
import pytest
import scipy.sparse as sp

from conftest import ACCEPTANCE
from irkprec.amg import AmgParams, amg_setup, amg_vcycle, reduction_factor
from irkprec.blocksolve import (GmresConfig, Side, StageOperator, StepContext, Subsolver, build_preconditioner,
                                integrate, irk_step, precond_apply, stage_apply)
from irkprec.butcher import (Kind, Scheme, ldu_factorize, make_lobatto_iiic, make_radau_iia, precond_coeff,
                             order_conditions_residual, read_coeff_file, stability_function, write_coeff_file)
from irkprec.cli import ProblemCache, run_iteration_study, run_timestep_robustness
from irkprec.config import ExperimentConfig, Problem, Study
from irkprec.fem2d import Domain, assemble_diffusion, assemble_mass, build_structured_mesh, eliminate_dirichlet, \
    heat_problem, make_space

MAX_HX = int(os.environ.get("IRKPREC_ACCEPT_MAX_HX", "128"))
HX = tuple(h for h in (8, 16, 32, 64, 128) if h <= MAX_HX)
KINDS = (Kind.JACOBI, Kind.GAUSS_SEIDEL_LOWER, Kind.DU, Kind.LD)
TABLES = [make_radau_iia(s) for s in range(1, 8)] + [make_lobatto_iiic(s) for s in range(2, 6)]

# reference P_LD iteration counts for heat, right side, h_x^-1 = 8 ... 128
LD_REF_HEAT_RIGHT = {2: (7, 7, 7, 7, 7), 3: (9, 8, 8, 8, 8), 4: (10, 10, 10, 9, 9), 5: (11, 11, 11, 11, 11),
             6: (12, 12, 12, 12, 12), 7: (13, 13, 13, 12, 12)}
LD_REF_KAPPA = (2.48, 2.66, 3.04, 3.21, 3.50, 3.67)
LD_REF_DOUBLE_GLAZING = (7, 10, 12, 13, 14, 16)


def record(k: int, ok: bool, detail: str) -> None:
    ACCEPTANCE[k] = (bool(ok), detail)
    assert ok, f"criterion {k}: {detail}"


def iters(rows, **match):
    return [r["iterations"] for r in rows if all(r[k] == v for k, v in match.items())]


def rel(x, y):
    return np.linalg.norm(x - y) / max(np.linalg.norm(y), 1e-300)


# --- shared heavy runs ---------------------------------------------------------------

@pytest.fixture(scope="module")
def problems():
    return ProblemCache()


@pytest.fixture(scope="module")
def heat_right(problems):
    """Right-side heat iteration study over the full grid, with diagonal-block contraction factors."""
    contraction = {}
    spent = [0.0]

    def probe(s, hx, ht, cache):
        t0 = time.perf_counter()
        for tau, sub in cache.items():
            H = sub.hierarchy
            contraction[(s, hx, tau)] = reduction_factor(H, H.levels[0].A, cycles=5)
        spent[0] += time.perf_counter() - t0

    cfg = ExperimentConfig(stages=tuple(range(2, 8)), hx_inv=HX, precond=KINDS, side=(Side.RIGHT,))
    t0 = time.perf_counter()
    rows = run_iteration_study(cfg, problems, on_cell=probe)
    total = time.perf_counter() - t0
    return {"rows": rows, "seconds": total - spent[0], "contraction": contraction, "probe_seconds": spent[0]}


@pytest.fixture(scope="module")
def heat_left(problems):
    cfg = ExperimentConfig(stages=(4, 5, 6, 7), hx_inv=tuple(h for h in HX if h >= 32),
                           precond=(Kind.JACOBI, Kind.GAUSS_SEIDEL_LOWER, Kind.LD), side=(Side.LEFT,))
    return run_iteration_study(cfg, problems)


# --- property criteria -----------------------------------------------------------

def test_criterion_01_butcher_validity():
    t0 = time.perf_counter()
    tables = [make_radau_iia(s) for s in range(1, 8)] + [make_lobatto_iiic(s) for s in range(2, 6)]
    worst_order = max(order_conditions_residual(T, T.q) for T in tables)
    worst_c = max(np.abs(T.A.sum(axis=1) - T.c).max() for T in tables)
    worst_b = max(np.abs(T.A[-1] - T.b).max() for T in tables)
    orders_ok = all(T.q == (2 * T.s - 1 if T.scheme is Scheme.RADAU_IIA else 2 * T.s - 2) for T in tables)
    dt = time.perf_counter() - t0
    ok = worst_order <= 1e-8 and worst_c <= 1e-12 and worst_b <= 1e-12 and orders_ok and dt < 1.0
    record(1, ok, f"order residual {worst_order:.1e}, row sums {worst_c:.1e}, stiff accuracy {worst_b:.1e}, "
                  f"{dt:.2f}s")


def test_criterion_02_ldu_round_trip():
    t0 = time.perf_counter()
    worst_rt = worst_tri = worst_diag = 0.0
    for T in TABLES:
        f = ldu_factorize(T.A)
        nA = np.linalg.norm(T.A)
        worst_rt = max(worst_rt, np.linalg.norm(f.reconstruct() - T.A) / nA)
        LD = f.L @ np.diag(f.D)
        DU = np.diag(f.D) @ f.U
        left = np.linalg.solve(LD, T.A)  # (LD)^-1 A, upper unit triangular
        right = np.linalg.solve(DU.T, T.A.T).T  # A (DU)^-1, lower unit triangular
        # the eigenvalues of a triangular matrix are its diagonal entries
        worst_tri = max(worst_tri, np.abs(np.tril(left, -1)).max(initial=0.0),
                        np.abs(np.triu(right, 1)).max(initial=0.0))
        worst_diag = max(worst_diag, np.abs(np.diag(left) - 1).max(), np.abs(np.diag(right) - 1).max())
    dt = time.perf_counter() - t0
    ok = worst_rt <= 1e-13 and worst_tri <= 1e-13 and worst_diag <= 1e-10 and dt < 1.0
    record(2, ok, f"round trip {worst_rt:.1e}, off-triangle {worst_tri:.1e}, |eig - 1| {worst_diag:.1e}, "
                  f"{dt:.2f}s")


def _random_pair(N, r):
    M = sp.random(N, N, density=0.2, random_state=r) + sp.identity(N)
    F = sp.random(N, N, density=0.2, random_state=r) + (N / 2 + 1) * sp.identity(N)
    return sp.csr_matrix(M), sp.csr_matrix(F)


def test_criterion_03_kronecker_oracle(tmp_path):
    t0 = time.perf_counter()
    r = np.random.default_rng(2024)
    custom_file = tmp_path / "custom.txt"
    worst_apply = worst_prec = 0.0
    count = 0
    for trial in range(40):
        T = TABLES[trial % len(TABLES)]
        s = T.s
        N = int(r.integers(1, 500 // s + 1))
        M, F = _random_pair(N, int(r.integers(2**31)))
        h = float(r.uniform(1e-3, 1.0))
        op = StageOperator(M, F, T.A, h)
        D = op.dense()
        v = r.standard_normal(s * N)
        worst_apply = max(worst_apply, rel(stage_apply(op, v), D @ v))
        if s == 1:
            continue
        write_coeff_file(custom_file, np.tril(r.uniform(0.1, 1.0, (s, s))))
        coeffs = [precond_coeff(T, k) for k in KINDS]
        coeffs.append(precond_coeff(T, Kind.CUSTOM, read_coeff_file(custom_file)))
        for c in coeffs:
            P = build_preconditioner(c, M, F, h, Subsolver.LU)
            ref = np.linalg.solve(P.dense(M), v)
            worst_prec = max(worst_prec, rel(precond_apply(P, v), ref))
            count += 1
    dt = time.perf_counter() - t0
    ok = worst_apply <= 1e-12 and worst_prec <= 1e-9 and dt < 5.0
    record(3, ok, f"stage_apply {worst_apply:.1e}, precond_apply {worst_prec:.1e} over {count} "
                  f"preconditioners, {dt:.2f}s")


def test_criterion_04_dahlquist():
    t0 = time.perf_counter()
    r = np.random.default_rng(7)
    worst = 0.0
    for T in TABLES:
        coeff = precond_coeff(T, Kind.LD) if T.s > 1 else None
        for _ in range(20):
            z = complex(-r.exponential(5.0), r.normal(0.0, 10.0))
            h = 1.0
            lam = -z / h
            F = sp.csr_matrix(np.array([[lam.real, -lam.imag], [lam.imag, lam.real]]))
            ctx = StepContext(sp.identity(2, format="csr"), F, T, h, coeff, Subsolver.LU,
                              GmresConfig(rel_tol=1e-14))
            u1, _ = irk_step(np.array([1.0, 0.0]), 0.0, ctx)
            R = stability_function(T, z)
            worst = max(worst, abs(complex(*u1) - R) / max(1.0, abs(R)))
    dt = time.perf_counter() - t0
    record(4, worst <= 1e-9 and dt < 1.0, f"max |u1 - R(z)| {worst:.1e} over {20 * len(TABLES)} steps, {dt:.2f}s")


@pytest.mark.slow
def test_criterion_05_amg(heat_right):
    t0 = time.perf_counter()
    space = make_space(build_structured_mesh(Domain.UNIT_SQUARE, 32), 1)
    A = eliminate_dirichlet(assemble_mass(space), assemble_diffusion(space), space).F_ff
    H = amg_setup(A, AmgParams())
    r = np.random.default_rng(0)
    x, y = r.standard_normal((2, A.shape[0]))
    lin = rel(amg_vcycle(H, 2.5 * x - 0.5 * y), 2.5 * amg_vcycle(H, x) - 0.5 * amg_vcycle(H, y))
    rho = reduction_factor(H, A)
    own = time.perf_counter() - t0 + heat_right["probe_seconds"]
    c = heat_right["contraction"]
    worst_key = max(c, key=c.get)
    worst = c[worst_key]
    ok = lin <= 1e-12 and rho <= 0.5 and worst < 1.0 and own < 30.0
    record(5, ok, f"linearity {lin:.1e}, Poisson V(1,1) {rho:.3f}, stage blocks max {worst:.3f} over "
                  f"{len(c)} blocks (s={worst_key[0]}, hx^-1={worst_key[1]}), {own:.1f}s")


def test_criterion_06_manufactured_convergence():
    t0 = time.perf_counter()
    T = make_radau_iia(2)
    errs = []
    for n in (8, 16, 32):
        prob = heat_problem(n)
        ht = (1.0 / n) ** (3 / T.q)
        ctx = StepContext(prob.M, prob.F, T, ht, precond_coeff(T, Kind.LD), Subsolver.LU,
                          GmresConfig(rel_tol=1e-12), load=prob.load, lift_rhs=prob.system.lift_rhs)
        traj = integrate(prob.initial(), 1.0, ht, ctx, error_fn=prob.error)
        assert traj.all_converged
        errs.append(traj.errors[-1])
    rates = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    dt = time.perf_counter() - t0
    record(6, rates.min() >= 2.7 and dt < 120.0,
           f"errors {', '.join(f'{e:.2e}' for e in errs)}, orders {', '.join(f'{q:.2f}' for q in rates)}, "
           f"{dt:.1f}s")


# --- reproduction at desk scale ---------------------------------------------------

def test_criterion_07_kappa_trends(heat8_spectra):
    secs = heat8_spectra["seconds"]
    heat8_spectra = heat8_spectra["by_s"]
    ld = [heat8_spectra[s]["LD"] for s in range(2, 8)]
    band = all(abs(k - t) <= 0.3 * t for k, t in zip(ld, LD_REF_KAPPA))
    below_j = all(heat8_spectra[s]["LD"] < heat8_spectra[s]["J"] for s in range(2, 8))
    k0 = heat8_spectra[2]["none"]
    bare = [heat8_spectra[s]["none"] for s in range(2, 8)]
    ok = band and below_j and abs(k0 - 240.37) <= 0.3 * 240.37 and secs < 300
    record(7, ok and all(np.diff(bare) > 0),
           f"LD kappa {', '.join(f'{k:.2f}' for k in ld)}; kappa(A) at s=2 {k0:.2f}; LD < J for all s: {below_j}; "
           f"{secs:.0f}s")


@pytest.mark.slow
def test_criterion_08_heat_iterations(heat_right):
    rows = heat_right["rows"]
    converged = all(r["status"] == "ok" for r in rows)
    off = []
    for s, target in LD_REF_HEAT_RIGHT.items():
        for hx, t in zip(HX, target):
            (it,) = iters(rows, s=s, hx_inv=hx, preconditioner="LD")
            if abs(it - t) > 3:
                off.append(f"s={s} hx^-1={hx}: {it} vs {t}")
    spreads = {}
    for s in range(2, 8):
        for k in KINDS:
            its = iters(rows, s=s, preconditioner=k.value)
            spreads[(s, k.value)] = max(its) - min(its)
    wide = {f"{k}(s={s})": v for (s, k), v in spreads.items() if v > 3}
    secs = heat_right["seconds"]
    ok = converged and not off and not wide and secs < 1200
    ld_band = ", ".join("/".join(str(x) for x in iters(rows, s=s, preconditioner="LD")) for s in range(2, 8))
    detail = (f"LD per s over hx^-1={HX[0]}..{HX[-1]}: {ld_band}; band misses {off or 'none'}; "
              f"spread > 3: {wide or 'none'}; {secs:.0f}s")
    record(8, ok, detail)


@pytest.mark.slow
def test_criterion_09_ranking(heat_right, heat_left):
    bad = []
    for side, rows in (("right", heat_right["rows"]), ("left", heat_left)):
        for s in range(4, 8):
            for hx in (h for h in HX if h >= 32):
                (j,) = iters(rows, s=s, hx_inv=hx, preconditioner="J")
                (g,) = iters(rows, s=s, hx_inv=hx, preconditioner="GSL")
                (ld,) = iters(rows, s=s, hx_inv=hx, preconditioner="LD")
                if not ld <= g <= j:
                    bad.append(f"{side} s={s} hx^-1={hx}: LD {ld}, GSL {g}, J {j}")
    converged = all(r["status"] == "ok" for r in heat_left)
    record(9, converged and not bad, f"LD <= GSL <= J violations: {bad or 'none'}")


@pytest.mark.slow
def test_criterion_10_timestep_robustness(problems):
    t0 = time.perf_counter()
    hx = min(128, MAX_HX)
    cfg = ExperimentConfig(study=Study.TIMESTEP, stages=(2, 7), hx_inv=(hx,), ht=(0.05, 0.1, 0.5, 1.0, 5.0),
                           precond=(Kind.GAUSS_SEIDEL_LOWER, Kind.LD))
    rows = run_timestep_robustness(cfg, problems)
    s2 = iters(rows, s=2, preconditioner="LD")
    pairs = [(iters(rows, s=7, ht=r["ht"], side=r["side"], preconditioner="GSL")[0], r["iterations"])
             for r in rows if r["s"] == 7 and r["preconditioner"] == "LD"]
    ranked = all(ld <= g for g, ld in pairs)
    converged = all(r["status"] == "ok" for r in rows)
    dt = time.perf_counter() - t0
    record(10, converged and max(s2) - min(s2) <= 3 and ranked and len(pairs) == 10,
           f"hx^-1={hx}: s=2 LD {min(s2)}..{max(s2)}; s=7 (GSL, LD) {pairs}; {dt:.0f}s")


@pytest.mark.slow
def test_criterion_11_double_glazing(problems):
    t0 = time.perf_counter()
    cfg = ExperimentConfig(problem=Problem.DOUBLE_GLAZING, eps=0.04, stages=tuple(range(2, 8)), hx_inv=(64,),
                           precond=(Kind.GAUSS_SEIDEL_LOWER, Kind.LD), side=(Side.LEFT,))
    rows = run_iteration_study(cfg, problems)
    ld = [iters(rows, s=s, preconditioner="LD")[0] for s in range(2, 8)]
    gsl = [iters(rows, s=s, preconditioner="GSL")[0] for s in range(2, 8)]
    band = all(abs(a - t) <= 4 for a, t in zip(ld, LD_REF_DOUBLE_GLAZING))
    ranked = all(a <= g for a, g in zip(ld[1:], gsl[1:]))
    dt = time.perf_counter() - t0
    ok = band and ranked and dt < 900 and all(r["status"] == "ok" for r in rows)
    record(11, ok, f"LD {ld} vs {list(LD_REF_DOUBLE_GLAZING)}, GSL {gsl}, {dt:.0f}s")


def test_criterion_12_custom_coefficient_path(tmp_path):
    # timings and optimized coefficients are out of scope; the Custom kind is checked against dense algebra
    r = np.random.default_rng(12)
    worst = 0.0
    for s in (2, 4, 7):
        T = make_radau_iia(s)
        path = tmp_path / f"tilde{s}.txt"
        G = np.tril(T.A)
        G[np.tril_indices(s, -1)] *= r.uniform(0.5, 1.5, s * (s - 1) // 2)
        write_coeff_file(path, G)
        c = precond_coeff(T, Kind.CUSTOM, read_coeff_file(path))
        M, F = _random_pair(40, s)
        P = build_preconditioner(c, M, F, 0.3, Subsolver.LU)
        v = r.standard_normal(s * 40)
        worst = max(worst, rel(precond_apply(P, v), np.linalg.solve(P.dense(M), v)))
    record(12, worst <= 1e-9, f"timing columns out of scope; Custom-kind file path matches dense solve "
                              f"to {worst:.1e}")
