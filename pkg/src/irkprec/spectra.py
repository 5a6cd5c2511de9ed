"""Condition numbers and eigenvalues of exactly preconditioned stage operators."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .blocksolve import BlockPreconditioner, Side, StageOperator, Subsolver
from .sparsela import condition_number_2, dense_eigenvalues, materialize

ANALYSIS_CAP = 10_000
EIGEN_CAP = 8000


@dataclass
class SpectralReport:
    label: str
    n: int
    kappa2: float
    eigenvalues: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.eigenvalues is not None and len(self.eigenvalues) != self.n:
            raise ValueError("eigenvalue count must equal the operator size")


@dataclass(frozen=True, eq=False)
class OperatorHandle:
    n: int
    apply: Callable[[np.ndarray], np.ndarray]
    apply_transpose: Callable[[np.ndarray], np.ndarray]
    label: str = ""


def preconditioned_operator(op: StageOperator, P: BlockPreconditioner | None = None,
                            side: Side | str = Side.RIGHT, label: str = "") -> OperatorHandle:
    """A P^{-1} (right) or P^{-1} A (left); P needs exact subsolves."""
    n = op.shape[0]
    if n > ANALYSIS_CAP:
        raise ValueError(f"spectral analysis limited to s*N <= {ANALYSIS_CAP}")
    if P is None:
        return OperatorHandle(n, op.apply, op.apply_transpose, label)
    if P.subsolver is not Subsolver.LU:
        raise ValueError("spectral analysis uses exactly factored preconditioners")
    if Side(side) is Side.RIGHT:
        # (A P^-1)^T = P^-T A^T
        return OperatorHandle(n, lambda v: op.apply(P.apply(v)),
                              lambda v: P.apply_transpose(op.apply_transpose(v)), label)
    return OperatorHandle(n, lambda v: P.apply(op.apply(v)),
                          lambda v: op.apply_transpose(P.apply_transpose(v)), label)


def analyze(handle, n: int | None = None, want_eigs: bool = False, label: str | None = None) -> SpectralReport:
    n = handle.n if n is None else n
    label = handle.label if label is None else label
    if want_eigs:
        if n > EIGEN_CAP:
            raise ValueError(f"eigenvalues only for n <= {EIGEN_CAP}")
        # one materialization feeds both the SVD and the eigen-solve
        D = materialize(handle.apply, n)
        sv = np.linalg.svd(D, compute_uv=False)
        kappa = float("inf") if sv[-1] == 0.0 else float(sv[0] / sv[-1])
        return SpectralReport(label, n, kappa, dense_eigenvalues(D))
    kappa = condition_number_2(handle.apply, handle.apply_transpose, n)
    return SpectralReport(label, n, kappa)


def export_eigen_scatter(reports: Sequence[SpectralReport], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["label", "re", "im"])
        for rep in reports:
            if rep.eigenvalues is None:
                raise ValueError(f"report {rep.label!r} carries no eigenvalues")
            for z in rep.eigenvalues:
                w.writerow([rep.label, f"{z.real:.17g}", f"{z.imag:.17g}"])


def read_eigen_scatter(path: str | Path) -> dict[str, np.ndarray]:
    out: dict[str, list[complex]] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out.setdefault(row["label"], []).append(complex(float(row["re"]), float(row["im"])))
    return {k: np.array(v) for k, v in out.items()}


def write_kappa_table(path: str | Path, table: dict[int, dict[str, float]], columns: Sequence[str]) -> None:
    """Rows are stage counts, columns preconditioner labels."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["s", *columns])
        for s in sorted(table):
            w.writerow([s, *(f"{table[s][c]:.6g}" for c in columns)])


def small_kappa(A: np.ndarray, Atilde: np.ndarray) -> float:
    """kappa_2(A Atilde^{-1}) of the s x s coefficient matrices."""
    return float(np.linalg.cond(A @ np.linalg.inv(Atilde)))
