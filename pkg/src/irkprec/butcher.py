"""Butcher tables for Radau IIA / Lobatto IIIC and preconditioner coefficient matrices.

The preconditioners of the block stage system share its Kronecker form with the
Butcher matrix ``A`` replaced by a diagonal or triangular ``Atilde``.  This module
builds the tables, the pivot-free ``A = L D U`` factorization, and every
``Atilde`` variant used by the block preconditioners.
"""

from __future__ import annotations

import enum
import functools
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.polynomial import legendre as npleg


class Scheme(str, enum.Enum):
    RADAU_IIA = "RadauIIA"
    LOBATTO_IIIC = "LobattoIIIC"
    CUSTOM = "Custom"


class Kind(str, enum.Enum):
    JACOBI = "J"
    GAUSS_SEIDEL_LOWER = "GSL"
    DU = "DU"
    LD = "LD"
    CUSTOM = "Custom"


class Structure(str, enum.Enum):
    DIAGONAL = "Diagonal"
    LOWER = "LowerTriangular"
    UPPER = "UpperTriangular"


class SingularMinorError(ArithmeticError):
    """A leading principal minor vanished during pivot-free elimination."""

    def __init__(self, stage: int, pivot: float):
        super().__init__(f"zero pivot {pivot:.3e} at stage {stage}")
        self.stage = stage
        self.pivot = pivot


class StructureError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class ButcherTable:
    scheme: Scheme
    s: int
    A: np.ndarray
    b: np.ndarray
    c: np.ndarray
    q: int

    @property
    def name(self) -> str:
        short = {Scheme.RADAU_IIA: "RIIA", Scheme.LOBATTO_IIIC: "LIIIC"}
        return f"{short.get(self.scheme, 'custom')}{self.s}"


@dataclass(frozen=True, eq=False)
class LduFactors:
    L: np.ndarray
    D: np.ndarray
    U: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return self.L @ np.diag(self.D) @ self.U


@dataclass(frozen=True, eq=False)
class PrecondCoeff:
    kind: Kind
    Atilde: np.ndarray
    structure: Structure

    def __post_init__(self):
        check_structure(self.Atilde, self.structure)


def _freeze(*arrays):
    for a in arrays:
        a.setflags(write=False)


def _refine_roots(coef_fn, deriv_fn, x, iters=8):
    # Newton polishing of roots from the companion-matrix eigenvalues
    for _ in range(iters):
        dx = coef_fn(x) / deriv_fn(x)
        x = x - dx
        if np.max(np.abs(dx)) < 1e-15:
            break
    return x


def _collocation_rows(c: np.ndarray, k_max: int, first_col: float | None = None) -> np.ndarray:
    """Solve sum_j a_ij c_j^(k-1) = c_i^k / k, k = 1..k_max, row by row."""
    s = len(c)
    A = np.zeros((s, s))
    powers = np.arange(k_max)
    if first_col is None:
        V = c[None, :] ** powers[:, None]          # V[k, j] = c_j^k
        for i in range(s):
            rhs = c[i] ** (powers + 1) / (powers + 1)
            A[i] = np.linalg.solve(V, rhs)
    else:
        # Lobatto IIIC: a_i1 = b_1, remaining columns from C(s-1)
        cc = c[1:]
        V = cc[None, :] ** powers[:, None]
        for i in range(s):
            rhs = c[i] ** (powers + 1) / (powers + 1)
            rhs = rhs - first_col * c[0] ** powers
            A[i, 0] = first_col
            A[i, 1:] = np.linalg.solve(V, rhs)
    return A


def _quadrature_weights(c: np.ndarray) -> np.ndarray:
    s = len(c)
    k = np.arange(s)
    V = c[None, :] ** k[:, None]
    return np.linalg.solve(V, 1.0 / (k + 1))


def radau_nodes(s: int) -> np.ndarray:
    """Right Radau nodes on (0, 1]: roots of P_s(2x-1) - P_{s-1}(2x-1)."""
    if s == 1:
        return np.array([1.0])
    coef = np.zeros(s + 1)
    coef[s], coef[s - 1] = 1.0, -1.0
    x = np.sort(npleg.legroots(coef).real)
    dcoef = npleg.legder(coef)
    x = _refine_roots(lambda t: npleg.legval(t, coef), lambda t: npleg.legval(t, dcoef), x)
    x[-1] = 1.0
    return (x + 1.0) / 2.0


def lobatto_nodes(s: int) -> np.ndarray:
    """Lobatto nodes on [0, 1]: endpoints plus roots of P'_{s-1}(2x-1)."""
    if s == 2:
        return np.array([0.0, 1.0])
    coef = np.zeros(s)
    coef[s - 1] = 1.0
    d1 = npleg.legder(coef)
    d2 = npleg.legder(d1)
    x = np.sort(npleg.legroots(d1).real)
    x = _refine_roots(lambda t: npleg.legval(t, d1), lambda t: npleg.legval(t, d2), x)
    return np.concatenate([[0.0], (x + 1.0) / 2.0, [1.0]])


def make_radau_iia(s: int) -> ButcherTable:
    if not isinstance(s, (int, np.integer)) or not 1 <= s <= 7:
        raise ValueError(f"Radau IIA stage count must be in 1..7, got {s!r}")
    s = int(s)
    c = radau_nodes(s)
    A = _collocation_rows(c, s)
    b = A[-1].copy()
    _freeze(A, b, c)
    return ButcherTable(Scheme.RADAU_IIA, s, A, b, c, 2 * s - 1)


def make_lobatto_iiic(s: int) -> ButcherTable:
    if not isinstance(s, (int, np.integer)) or not 2 <= s <= 5:
        raise ValueError(f"Lobatto IIIC stage count must be in 2..5, got {s!r}")
    s = int(s)
    c = lobatto_nodes(s)
    b = _quadrature_weights(c)
    A = _collocation_rows(c, s - 1, first_col=b[0])
    # stiff accuracy holds analytically; pin b to the computed last row
    b = A[-1].copy()
    _freeze(A, b, c)
    return ButcherTable(Scheme.LOBATTO_IIIC, s, A, b, c, 2 * s - 2)


def make_table(scheme: Scheme | str, s: int) -> ButcherTable:
    scheme = Scheme(scheme)
    if scheme is Scheme.RADAU_IIA:
        return make_radau_iia(s)
    if scheme is Scheme.LOBATTO_IIIC:
        return make_lobatto_iiic(s)
    raise ValueError(f"no generator for scheme {scheme.value}")


# --- order conditions -------------------------------------------------------

@functools.lru_cache(maxsize=None)
def rooted_trees(max_order: int) -> tuple[tuple[int, tuple[int, ...]], ...]:
    """All rooted trees with at most ``max_order`` vertices.

    Tree ``k`` is ``(order, children)`` where ``children`` is a nondecreasing
    tuple of ids of smaller trees; id 0 is the single vertex.  Ids are sorted
    by order, so any id-ordered sweep sees children before parents.
    """
    trees: list[tuple[int, tuple[int, ...]]] = [(1, ())]
    first_of = {1: 0}
    for n in range(2, max_order + 1):
        first_of[n] = len(trees)
        limit = first_of[n]
        found: list[tuple[int, ...]] = []

        def extend(remaining, start, acc):
            if remaining == 0:
                found.append(tuple(acc))
                return
            for i in range(start, limit):
                k = trees[i][0]
                if k > remaining:
                    break
                acc.append(i)
                extend(remaining - k, i, acc)
                acc.pop()

        extend(n - 1, 0, [])
        trees.extend((n, ch) for ch in found)
    return tuple(trees)


def order_conditions_residual(table: ButcherTable, p: int) -> float:
    """Max over rooted trees t with |t| <= p of |b . Phi(t) - 1/gamma(t)|."""
    if p < 1:
        raise ValueError("order must be >= 1")
    A, b = table.A, table.b
    trees = rooted_trees(p)
    phi = np.empty((len(trees), table.s))
    Aphi = np.empty_like(phi)
    gamma = np.empty(len(trees))
    for k, (order, children) in enumerate(trees):
        v = np.ones(table.s)
        g = float(order)
        for ch in children:
            v = v * Aphi[ch]
            g *= gamma[ch]
        phi[k] = v
        Aphi[k] = A @ v
        gamma[k] = g
    return float(np.max(np.abs(phi @ b - 1.0 / gamma)))


def stability_function(table: ButcherTable, z: complex) -> complex:
    """R(z) = 1 + z b^T (I - z A)^{-1} 1."""
    s = table.s
    k = np.linalg.solve(np.eye(s) - z * table.A, np.ones(s, dtype=complex))
    return 1.0 + z * (table.b @ k)


# --- LDU and preconditioner coefficients -------------------------------------

def ldu_factorize(A: np.ndarray) -> LduFactors:
    """Doolittle elimination without pivoting, split as L diag(D) U."""
    A = np.asarray(A, dtype=float)
    s = A.shape[0]
    if A.shape != (s, s):
        raise ValueError("square matrix expected")
    scale = np.max(np.abs(A)) if A.size else 0.0
    L = np.eye(s)
    W = A.copy()
    for k in range(s):
        piv = W[k, k]
        if abs(piv) <= 1e-14 * scale or piv == 0.0:
            raise SingularMinorError(k + 1, piv)
        for i in range(k + 1, s):
            L[i, k] = W[i, k] / piv
            W[i, k:] -= L[i, k] * W[k, k:]
            W[i, k] = 0.0
    D = np.diag(W).copy()
    U = W / D[:, None]
    np.fill_diagonal(U, 1.0)
    U = np.triu(U)
    _freeze(L, D, U)
    return LduFactors(L, D, U)


def check_structure(M: np.ndarray, structure: Structure) -> None:
    M = np.asarray(M)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise StructureError("coefficient matrix must be square")
    structure = Structure(structure)
    if structure is Structure.DIAGONAL:
        off = M - np.diag(np.diag(M))
    elif structure is Structure.LOWER:
        off = np.triu(M, 1)
    else:
        off = np.tril(M, -1)
    if np.any(off != 0.0):
        raise StructureError(f"matrix has entries outside {structure.value} structure")
    if np.any(np.diag(M) == 0.0):
        raise StructureError("zero on the diagonal of the coefficient matrix")


def infer_structure(M: np.ndarray) -> Structure:
    M = np.asarray(M)
    if not np.any(np.tril(M, -1)) and not np.any(np.triu(M, 1)):
        return Structure.DIAGONAL
    if not np.any(np.triu(M, 1)):
        return Structure.LOWER
    if not np.any(np.tril(M, -1)):
        return Structure.UPPER
    raise StructureError("coefficient matrix is neither diagonal nor triangular")


def precond_coeff(
    table: ButcherTable,
    kind: Kind | str,
    custom: np.ndarray | None = None,
    structure: Structure | str | None = None,
) -> PrecondCoeff:
    kind = Kind(kind)
    A = table.A
    if kind is Kind.JACOBI:
        At, st = np.diag(np.diag(A)), Structure.DIAGONAL
    elif kind is Kind.GAUSS_SEIDEL_LOWER:
        At, st = np.tril(A), Structure.LOWER
    elif kind is Kind.DU:
        f = ldu_factorize(A)
        At, st = np.diag(f.D) @ f.U, Structure.UPPER
        np.fill_diagonal(At, f.D)
    elif kind is Kind.LD:
        f = ldu_factorize(A)
        At, st = f.L @ np.diag(f.D), Structure.LOWER
        np.fill_diagonal(At, f.D)
    else:
        if custom is None:
            raise ValueError("Custom kind needs a coefficient matrix")
        At = np.array(custom, dtype=float)
        if At.shape != A.shape:
            raise StructureError(f"custom matrix shape {At.shape} != {A.shape}")
        st = Structure(structure) if structure is not None else infer_structure(At)
    # exact zeros off the declared structure
    if st is Structure.LOWER:
        At = np.tril(At)
    elif st is Structure.UPPER:
        At = np.triu(At)
    _freeze(At)
    return PrecondCoeff(kind, At, st)


def read_coeff_file(path: str | Path) -> np.ndarray:
    """Plain text: first line ``s``, then ``s`` rows of ``s`` decimals."""
    tokens = Path(path).read_text().split()
    if not tokens:
        raise ValueError(f"{path}: empty coefficient file")
    s = int(tokens[0])
    vals = tokens[1:]
    if s < 1 or len(vals) != s * s:
        raise ValueError(f"{path}: expected {s * s} entries after s={s}, found {len(vals)}")
    return np.array([float(v) for v in vals]).reshape(s, s)


def write_coeff_file(path: str | Path, M: np.ndarray) -> None:
    M = np.asarray(M, dtype=float)
    lines = [str(M.shape[0])]
    lines += [" ".join(repr(float(v)) for v in row) for row in M]
    Path(path).write_text("\n".join(lines) + "\n")
