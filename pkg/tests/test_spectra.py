import numpy as np
import pytest
import scipy.sparse as sp

from irkprec.blocksolve import StageOperator, build_preconditioner
from irkprec.butcher import make_radau_iia, precond_coeff
from irkprec.fem2d import heat_problem
from irkprec.spectra import (OperatorHandle, SpectralReport, analyze, export_eigen_scatter,
                             preconditioned_operator, read_eigen_scatter, small_kappa, write_kappa_table)

KINDS = ["J", "GSL", "DU", "LD"]


def small_heat(s=3, n=4, ht=0.1):
    prob = heat_problem(n)
    T = make_radau_iia(s)
    return prob, T, StageOperator(prob.M, prob.F, T.A, ht)


def test_identity_and_diagonal_kappa():
    assert analyze(OperatorHandle(6, lambda v: v, lambda v: v)).kappa2 == pytest.approx(1.0)
    d = np.arange(1.0, 6.0)
    D = OperatorHandle(5, lambda v: (d * v.T).T, lambda v: (d * v.T).T)
    rep = analyze(D, want_eigs=True)
    assert rep.kappa2 == pytest.approx(5.0, rel=1e-13)
    np.testing.assert_allclose(np.sort(rep.eigenvalues.real), d, atol=1e-13)


def test_exact_preconditioner_gives_identity():
    # one stage: J preconditioner is the stage operator itself
    prob, T, op = small_heat(s=1)
    P = build_preconditioner(precond_coeff(T, "J"), prob.M, prob.F, 0.1, "lu")
    for side in ("left", "right"):
        rep = analyze(preconditioned_operator(op, P, side), want_eigs=True)
        assert rep.kappa2 == pytest.approx(1.0, abs=1e-10)
        np.testing.assert_allclose(rep.eigenvalues, 1.0, atol=1e-10)


def test_unpreconditioned_handle_is_stage_operator():
    _, _, op = small_heat()
    h = preconditioned_operator(op)
    v = np.random.default_rng(0).standard_normal(h.n)
    np.testing.assert_array_equal(h.apply(v), op.apply(v))
    ref = np.linalg.cond(op.dense())
    assert analyze(h).kappa2 == pytest.approx(ref, rel=1e-10)


@pytest.mark.parametrize("kind", KINDS)
def test_left_and_right_share_eigenvalues(kind):
    prob, T, op = small_heat()
    P = build_preconditioner(precond_coeff(T, kind), prob.M, prob.F, 0.1, "lu")
    ev = {side: np.sort_complex(analyze(preconditioned_operator(op, P, side), want_eigs=True).eigenvalues)
          for side in ("left", "right")}
    np.testing.assert_allclose(ev["left"], ev["right"], atol=1e-8)


@pytest.mark.parametrize("side", ["left", "right"])
def test_handle_transpose_is_adjoint(side):
    prob, T, op = small_heat()
    P = build_preconditioner(precond_coeff(T, "LD"), prob.M, prob.F, 0.1, "lu")
    h = preconditioned_operator(op, P, side)
    r = np.random.default_rng(3)
    x, y = r.standard_normal((2, h.n))
    assert y @ h.apply(x) == pytest.approx(x @ h.apply_transpose(y), rel=1e-10)


def test_kappa_matches_dense_reference():
    prob, T, op = small_heat(s=2)
    P = build_preconditioner(precond_coeff(T, "GSL"), prob.M, prob.F, 0.1, "lu")
    A = op.dense()
    ref = np.linalg.cond(A @ np.linalg.inv(P.dense(prob.M)))
    assert analyze(preconditioned_operator(op, P, "right")).kappa2 == pytest.approx(ref, rel=1e-9)


def test_amg_preconditioner_rejected_and_size_cap():
    prob, T, op = small_heat()
    P = build_preconditioner(precond_coeff(T, "LD"), prob.M, prob.F, 0.1, "amg")
    with pytest.raises(ValueError):
        preconditioned_operator(op, P)
    big = StageOperator(sp.identity(4000, format="csr"), sp.identity(4000, format="csr"), np.eye(3), 0.1)
    with pytest.raises(ValueError):
        preconditioned_operator(big)


def test_report_checks_eigen_count():
    with pytest.raises(ValueError):
        SpectralReport("x", 3, 1.0, np.ones(2))


def test_scatter_csv_round_trip(tmp_path):
    a = SpectralReport("J", 2, 2.0, np.array([1 + 2j, 0.3 - 1e-17j]))
    b = SpectralReport("LD", 2, 1.0, np.array([np.pi, np.e]))
    path = tmp_path / "eigs.csv"
    export_eigen_scatter([a, b], path)
    back = read_eigen_scatter(path)
    np.testing.assert_array_equal(back["J"], a.eigenvalues)
    np.testing.assert_array_equal(back["LD"], b.eigenvalues)
    export_eigen_scatter([], path)
    assert path.read_text().strip() == "label,re,im"
    with pytest.raises(ValueError):
        export_eigen_scatter([SpectralReport("x", 1, 1.0)], path)


def test_kappa_table_layout(tmp_path):
    path = tmp_path / "k.csv"
    write_kappa_table(path, {3: {"J": 2.5, "LD": 1.25}, 2: {"J": 4.0, "LD": 2.0}}, ["J", "LD"])
    assert path.read_text().splitlines() == ["s,J,LD", "2,4,2", "3,2.5,1.25"]


def test_small_kappa_trivial_cases():
    A = make_radau_iia(4).A
    assert small_kappa(A, A) == pytest.approx(1.0)
    assert small_kappa(np.diag([1.0, 3.0]), np.eye(2)) == pytest.approx(3.0)


def test_heat_spectra_invariants(heat8_spectra):
    for s, row in heat8_spectra["by_s"].items():
        k = [row[c] for c in KINDS]
        assert all(x < row["none"] for x in k)
        small = [row[c + "_small"] for c in KINDS]
        assert np.array_equal(np.argsort(k), np.argsort(small)), s
        for c in KINDS:
            if c + "_minre" in row:
                assert row[c + "_minre"] > 0
