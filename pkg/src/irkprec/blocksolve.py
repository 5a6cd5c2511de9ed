"""Kronecker stage operator, block preconditioners, GMRES and the IRK time loop.

The stage system for an s-stage method is

    (I_s (x) M + h_t A (x) F) K = rhs,

and every preconditioner has the same form with ``A`` replaced by a diagonal
or triangular ``Atilde``, so applying it is block substitution with one
subsolve on ``M + h_t Atilde_jj F`` per stage.
"""

from __future__ import annotations

import enum
import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .amg import AmgHierarchy, AmgParams, amg_setup
from .butcher import ButcherTable, PrecondCoeff, Structure
from .sparsela import as_csr, sparse_lu_factor


class Side(str, enum.Enum):
    LEFT = "left"
    RIGHT = "right"


class Subsolver(str, enum.Enum):
    LU = "lu"
    AMG = "amg"


def _blocks(v: np.ndarray, s: int, N: int) -> np.ndarray:
    if v.shape[0] != s * N:
        raise ValueError(f"expected leading dimension {s * N}, got {v.shape[0]}")
    return v.reshape((s, N) + v.shape[1:])


def _blockmul(B, V: np.ndarray) -> np.ndarray:
    """Stack of B @ V[j] for every block j, as one sparse product."""
    s, N = V.shape[:2]
    rest = V.shape[2:]
    W = np.moveaxis(V, 0, 1).reshape(N, -1)
    return np.moveaxis((B @ W).reshape((B.shape[0], s) + rest), 1, 0)


@dataclass(frozen=True, eq=False)
class StageOperator:
    M: sp.csr_matrix
    F: sp.csr_matrix
    A: np.ndarray
    h_t: float

    @property
    def s(self) -> int:
        return self.A.shape[0]

    @property
    def N(self) -> int:
        return self.M.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        n = self.s * self.N
        return n, n

    def apply(self, v: np.ndarray) -> np.ndarray:
        return stage_apply(self, v)

    def apply_transpose(self, v: np.ndarray) -> np.ndarray:
        V = _blocks(np.asarray(v, dtype=float), self.s, self.N)
        FV = _blockmul(self.F.T, V)
        out = _blockmul(self.M.T, V)
        out += self.h_t * np.tensordot(self.A.T, FV, axes=1)
        return out.reshape(v.shape)

    def dense(self) -> np.ndarray:
        s = self.s
        return np.kron(np.eye(s), self.M.toarray()) + self.h_t * np.kron(self.A, self.F.toarray())


def stage_apply(op: StageOperator, v: np.ndarray) -> np.ndarray:
    """Block i of the result is M v_i + h_t sum_j a_ij F v_j."""
    v = np.asarray(v, dtype=float)
    V = _blocks(v, op.s, op.N)
    FV = _blockmul(op.F, V)
    out = _blockmul(op.M, V)
    out += op.h_t * np.tensordot(op.A, FV, axes=1)
    return out.reshape(v.shape)


def stage_rhs(F, u_n: np.ndarray, s: int, loads=None, lift_rhs=None) -> np.ndarray:
    """Block i is -(F u_n + F_fd g) plus the projected forcing at stage time i."""
    base = -(F @ u_n)
    if lift_rhs is not None:
        base = base - lift_rhs
    out = np.tile(base, s)
    if loads is not None:
        if len(loads) != s:
            raise ValueError(f"{len(loads)} stage loads for {s} stages")
        N = len(u_n)
        for i, f in enumerate(loads):
            if f is not None:
                if len(f) != N:
                    raise ValueError("stage load has wrong length")
                out[i * N:(i + 1) * N] += f
    return out


# --- preconditioners -----------------------------------------------------------

class _LuSubsolve:
    def __init__(self, B):
        self._f = sparse_lu_factor(B)

    def __call__(self, r):
        return self._f.solve(r)

    def transpose(self, r):
        return self._f._lu.solve(np.asarray(r, dtype=float), trans="T")


class _AmgSubsolve:
    def __init__(self, B, params):
        self.hierarchy: AmgHierarchy = amg_setup(B, params)

    def __call__(self, r):
        return self.hierarchy(r)


class SubsolverCache:
    """Prepared subsolvers keyed by the exact value of h_t * Atilde_jj.

    Blocks with equal diagonal coefficients share one LU / AMG setup; the cache
    can also be shared between preconditioners on the same (M, F).
    """

    def __init__(self, M, F, kind: Subsolver | str = Subsolver.AMG, params: AmgParams | None = None):
        self.M, self.F = as_csr(M), as_csr(F)
        self.kind = Subsolver(kind)
        self.params = params or AmgParams()
        self._store: dict[float, Callable] = {}
        self.setup_seconds = 0.0

    def get(self, tau: float) -> Callable:
        tau = float(tau)
        if tau not in self._store:
            t0 = time.perf_counter()
            B = as_csr(self.M + tau * self.F)
            if self.kind is Subsolver.LU:
                self._store[tau] = _LuSubsolve(B)
            else:
                self._store[tau] = _AmgSubsolve(B, self.params)
            self.setup_seconds += time.perf_counter() - t0
        return self._store[tau]

    def __len__(self) -> int:
        return len(self._store)

    def items(self):
        """(tau, subsolve) pairs in setup order."""
        return list(self._store.items())


@dataclass(eq=False)
class BlockPreconditioner:
    coeff: PrecondCoeff
    F: sp.csr_matrix
    h_t: float
    subsolves: list[Callable]
    subsolver: Subsolver
    n_prepared: int = 0

    @property
    def s(self) -> int:
        return self.coeff.Atilde.shape[0]

    @property
    def N(self) -> int:
        return self.F.shape[0]

    def apply(self, v: np.ndarray) -> np.ndarray:
        return precond_apply(self, v)

    def apply_transpose(self, v: np.ndarray) -> np.ndarray:
        return precond_apply_transpose(self, v)

    def dense(self, M) -> np.ndarray:
        M = M.toarray() if sp.issparse(M) else np.asarray(M)
        return np.kron(np.eye(self.s), M) + self.h_t * np.kron(self.coeff.Atilde, self.F.toarray())


def build_preconditioner(coeff: PrecondCoeff, M, F, h_t: float,
                         subsolver: Subsolver | str = Subsolver.AMG,
                         params: AmgParams | None = None,
                         cache: SubsolverCache | None = None) -> BlockPreconditioner:
    subsolver = Subsolver(subsolver)
    if cache is None:
        cache = SubsolverCache(M, F, subsolver, params)
    elif cache.kind is not subsolver:
        raise ValueError("subsolver cache built for a different subsolver kind")
    before = len(cache)
    subs = [cache.get(h_t * d) for d in np.diag(coeff.Atilde)]
    return BlockPreconditioner(coeff, cache.F, float(h_t), subs, subsolver, len(cache) - before)


def precond_apply(P: BlockPreconditioner, v: np.ndarray) -> np.ndarray:
    """w = P^{-1} v by block substitution, one subsolve per stage block."""
    return _substitute(P.coeff.Atilde, P.coeff.structure, P.F, P.h_t, P.subsolves, v)


_FLIP = {Structure.DIAGONAL: Structure.DIAGONAL,
         Structure.LOWER: Structure.UPPER,
         Structure.UPPER: Structure.LOWER}


def precond_apply_transpose(P: BlockPreconditioner, v: np.ndarray) -> np.ndarray:
    """w = P^{-T} v; needs subsolvers with a transpose solve (exact LU)."""
    try:
        solves = [f.transpose for f in P.subsolves]
    except AttributeError:
        raise TypeError("transpose apply needs exact subsolves") from None
    return _substitute(P.coeff.Atilde.T, _FLIP[P.coeff.structure], as_csr(P.F.T), P.h_t, solves, v)


def _substitute(At, structure, F, h_t, solves, v):
    v = np.asarray(v, dtype=float)
    s, N = At.shape[0], F.shape[0]
    V = _blocks(v, s, N)
    W = np.empty_like(V)
    if structure is Structure.DIAGONAL:
        for j in range(s):
            W[j] = solves[j](V[j])
        return W.reshape(v.shape)
    order = range(s) if structure is Structure.LOWER else range(s - 1, -1, -1)
    FW = np.empty_like(V)
    done: list[int] = []
    for j in order:
        r = V[j].copy()
        for k in done:
            if At[j, k] != 0.0:
                r -= h_t * At[j, k] * FW[k]
        W[j] = solves[j](r)
        if len(done) < s - 1:
            FW[j] = F @ W[j]
        done.append(j)
    return W.reshape(v.shape)


# --- GMRES ----------------------------------------------------------------------

@dataclass(frozen=True)
class GmresConfig:
    side: Side = Side.RIGHT
    rel_tol: float = 1e-8
    max_iter: int = 500
    restart: int | None = None

    def __post_init__(self):
        if not self.rel_tol > 0:
            raise ValueError("rel_tol must be positive")
        object.__setattr__(self, "side", Side(self.side))


@dataclass
class SolveReport:
    iterations: int
    history: list[float]
    residual: float            # final relative residual GMRES monitored
    true_residual: float       # ||b - A x|| / ||b||
    converged: bool
    seconds: float
    error: float | None = None
    setup_seconds: float = 0.0
    extra: dict = field(default_factory=dict)


def _arnoldi_step(V, H, j, w):
    # modified Gram-Schmidt with one re-orthogonalization pass on cancellation
    w0 = np.linalg.norm(w)
    for i in range(j + 1):
        hij = V[i] @ w
        H[i, j] += hij
        w -= hij * V[i]
    if np.linalg.norm(w) < 0.7 * w0:
        for i in range(j + 1):
            hij = V[i] @ w
            H[i, j] += hij
            w -= hij * V[i]
    return w


def gmres(op: Callable, b: np.ndarray, P: Callable | None = None,
          cfg: GmresConfig | None = None, x0: np.ndarray | None = None) -> tuple[np.ndarray, SolveReport]:
    """Full-memory GMRES with Givens rotations; ``P`` applies the preconditioner inverse."""
    cfg = cfg or GmresConfig()
    apply_op = op.apply if hasattr(op, "apply") else op
    apply_P = None if P is None else (P.apply if hasattr(P, "apply") else P)
    t0 = time.perf_counter()
    b = np.asarray(b, dtype=float)
    n = b.shape[0]
    bnorm = np.linalg.norm(b)
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    if bnorm == 0.0:
        return np.zeros(n), SolveReport(0, [0.0], 0.0, 0.0, True, time.perf_counter() - t0)

    left = apply_P is not None and cfg.side is Side.LEFT
    right = apply_P is not None and cfg.side is Side.RIGHT

    def M_apply(v):
        if right:
            return apply_op(apply_P(v))
        if left:
            return apply_P(apply_op(v))
        return apply_op(v)

    r = b - apply_op(x) if x0 is not None else b.copy()
    if left:
        r = apply_P(r)
        ref = np.linalg.norm(apply_P(b))
    else:
        ref = bnorm
    history: list[float] = []
    total_it = 0
    restart = cfg.restart or cfg.max_iter
    converged = False
    while True:
        beta = np.linalg.norm(r)
        if not history:
            history.append(beta / ref)
        if beta / ref <= cfg.rel_tol:
            converged = True
            break
        m = min(restart, cfg.max_iter - total_it)
        if m <= 0:
            break
        V = np.zeros((m + 1, n))
        H = np.zeros((m + 1, m))
        cs = np.zeros(m)
        sn = np.zeros(m)
        g = np.zeros(m + 1)
        g[0] = beta
        V[0] = r / beta
        k = 0
        for j in range(m):
            w = _arnoldi_step(V, H, j, M_apply(V[j]))
            hnext = np.linalg.norm(w)
            H[j + 1, j] = hnext
            for i in range(j):
                t = cs[i] * H[i, j] + sn[i] * H[i + 1, j]
                H[i + 1, j] = -sn[i] * H[i, j] + cs[i] * H[i + 1, j]
                H[i, j] = t
            denom = math.hypot(H[j, j], H[j + 1, j])
            cs[j], sn[j] = H[j, j] / denom, H[j + 1, j] / denom
            H[j, j] = denom
            H[j + 1, j] = 0.0
            g[j + 1] = -sn[j] * g[j]
            g[j] = cs[j] * g[j]
            k = j + 1
            total_it += 1
            history.append(abs(g[j + 1]) / ref)
            if history[-1] <= cfg.rel_tol or hnext == 0.0:
                break
            V[j + 1] = w / hnext
        y = np.linalg.solve(np.triu(H[:k, :k]), g[:k])
        dx = V[:k].T @ y
        if right:
            dx = apply_P(dx)
        x = x + dx
        r = b - apply_op(x)
        if left:
            r = apply_P(r)
        if history[-1] <= cfg.rel_tol:
            converged = True
            break
        if total_it >= cfg.max_iter:
            break
    true_res = np.linalg.norm(b - apply_op(x)) / bnorm
    final = history[-1]
    return x, SolveReport(total_it, history, final, float(true_res), converged, time.perf_counter() - t0)


# --- time stepping ---------------------------------------------------------------

@dataclass(eq=False)
class StepContext:
    """Everything one IRK step needs besides the current state."""

    M: sp.csr_matrix
    F: sp.csr_matrix
    table: ButcherTable
    h_t: float
    coeff: PrecondCoeff | None = None
    subsolver: Subsolver = Subsolver.AMG
    cfg: GmresConfig = field(default_factory=GmresConfig)
    load: Callable[[float], np.ndarray | None] | None = None
    lift_rhs: np.ndarray | None = None
    cache: SubsolverCache | None = None
    amg_params: AmgParams | None = None
    _precond: BlockPreconditioner | None = field(default=None, repr=False)

    @property
    def operator(self) -> StageOperator:
        return StageOperator(self.M, self.F, self.table.A, self.h_t)

    def preconditioner(self) -> BlockPreconditioner | None:
        if self.coeff is None:
            return None
        if self._precond is None:
            if self.cache is None:
                self.cache = SubsolverCache(self.M, self.F, self.subsolver, self.amg_params)
            self._precond = build_preconditioner(self.coeff, self.M, self.F, self.h_t,
                                                 self.subsolver, cache=self.cache)
        return self._precond


def stage_solve(u_n: np.ndarray, t_n: float, ctx: StepContext) -> tuple[np.ndarray, SolveReport]:
    """Stage vector K from one preconditioned GMRES solve."""
    table, h = ctx.table, ctx.h_t
    loads = None
    if ctx.load is not None:
        loads = [ctx.load(t_n + ci * h) for ci in table.c]
    rhs = stage_rhs(ctx.F, u_n, table.s, loads, ctx.lift_rhs)
    t0 = time.perf_counter()
    P = ctx.preconditioner()
    setup = time.perf_counter() - t0
    K, rep = gmres(ctx.operator, rhs, P, ctx.cfg)
    rep.setup_seconds = setup
    return K, rep


def irk_step(u_n: np.ndarray, t_n: float, ctx: StepContext) -> tuple[np.ndarray, SolveReport]:
    """u_{n+1} = u_n + h_t sum_i b_i K_i."""
    K, rep = stage_solve(u_n, t_n, ctx)
    return u_n + ctx.h_t * (ctx.table.b @ K.reshape(ctx.table.s, -1)), rep


@dataclass
class Trajectory:
    times: list[float]
    u: np.ndarray
    reports: list[SolveReport]
    errors: list[float | None]

    @property
    def total_iterations(self) -> int:
        return sum(r.iterations for r in self.reports)

    @property
    def all_converged(self) -> bool:
        return all(r.converged for r in self.reports)


def integrate(u_0: np.ndarray, t_final: float, h_t: float, ctx: StepContext,
              error_fn: Callable[[np.ndarray, float], float | None] | None = None,
              keep_states: bool = False) -> Trajectory:
    """Repeat irk_step up to t_final; the last step is shortened to land on it."""
    if h_t <= 0:
        raise ValueError("time step must be positive")
    n_steps = max(1, math.ceil(t_final / h_t - 1e-12))
    t = 0.0
    u = np.array(u_0, dtype=float)
    times, reports, errors = [0.0], [], []
    states = [u.copy()] if keep_states else None
    step_ctx = ctx
    for k in range(n_steps):
        h = min(h_t, t_final - t) if k == n_steps - 1 else h_t
        if h != step_ctx.h_t:
            step_ctx = StepContext(ctx.M, ctx.F, ctx.table, h, ctx.coeff, ctx.subsolver, ctx.cfg,
                                   ctx.load, ctx.lift_rhs, None, ctx.amg_params)
        u, rep = irk_step(u, t, step_ctx)
        t = t_final if k == n_steps - 1 else t + h
        if error_fn is not None:
            rep.error = error_fn(u, t)
        times.append(t)
        reports.append(rep)
        errors.append(rep.error)
        if keep_states:
            states.append(u.copy())
    return Trajectory(times, np.array(states) if keep_states else u, reports, errors)
