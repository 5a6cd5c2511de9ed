import os
import time

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

# criterion number -> (passed, detail), filled by the acceptance module
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def heat8_spectra():
    """Right-preconditioned kappa / eigenvalues on the coarse heat grid, s = 2..7."""
    from irkprec.blocksolve import StageOperator, SubsolverCache, build_preconditioner
    from irkprec.butcher import make_radau_iia, precond_coeff
    from irkprec.fem2d import heat_problem
    from irkprec.spectra import analyze, preconditioned_operator, small_kappa

    t0 = time.perf_counter()
    prob = heat_problem(8)
    out = {}
    for s in range(2, 8):
        T = make_radau_iia(s)
        ht = (1 / 8) ** (3 / (2 * s - 1))
        op = StageOperator(prob.M, prob.F, T.A, ht)
        cache = SubsolverCache(prob.M, prob.F, "lu")
        row = {"none": analyze(preconditioned_operator(op, None)).kappa2}
        for k in ("J", "GSL", "DU", "LD"):
            c = precond_coeff(T, k)
            P = build_preconditioner(c, prob.M, prob.F, ht, "lu", cache=cache)
            rep = analyze(preconditioned_operator(op, P, "right"), want_eigs=s <= 5)
            row[k] = rep.kappa2
            row[k + "_small"] = small_kappa(T.A, c.Atilde)
            if rep.eigenvalues is not None:
                row[k + "_minre"] = float(rep.eigenvalues.real.min())
        out[s] = row
    return {"by_s": out, "seconds": time.perf_counter() - t0}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
