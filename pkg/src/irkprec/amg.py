"""Algebraic multigrid hierarchy used as a one-V-cycle subsolver.

Two coarsening schemes share one V-cycle: classical Ruge-Stueben C/F
splitting with classical interpolation (default), and smoothed aggregation.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .sparsela import as_csr, sparse_lu_factor


class Smoother(str, enum.Enum):
    JACOBI = "jacobi"
    GAUSS_SEIDEL = "gs"
    # forward then backward Gauss-Seidel within every sweep
    SYMMETRIC_GS = "sgs"


class Coarsening(str, enum.Enum):
    SMOOTHED_AGGREGATION = "sa"
    CLASSICAL = "classical"


class AmgSetupError(RuntimeError):
    pass


@dataclass(frozen=True)
class AmgParams:
    # strength threshold for classical coarsening
    theta: float = 0.25
    presmooth: int = 1
    postsmooth: int = 1
    # None picks the default smoother, symmetric Gauss-Seidel
    smoother: Smoother | None = None
    jacobi_weight: float = 2.0 / 3.0
    prolongation_weight: float = 4.0 / 3.0
    max_coarse: int = 64
    max_levels: int = 10
    power_iters: int = 10
    seed: int = 0
    coarsening: Coarsening = Coarsening.CLASSICAL
    # strength threshold for aggregation; 0.25 makes P2 hierarchies far too dense
    aggregation_theta: float = 0.08

    def __post_init__(self):
        object.__setattr__(self, "coarsening", Coarsening(self.coarsening))
        if self.smoother is not None:
            object.__setattr__(self, "smoother", Smoother(self.smoother))
        if not 0.0 < self.theta < 1.0 or not 0.0 < self.aggregation_theta < 1.0:
            raise ValueError("strength threshold must lie in (0, 1)")
        if self.presmooth < 1 or self.postsmooth < 1:
            raise ValueError("need at least one smoothing sweep")


DEFAULT_SMOOTHER = Smoother.SYMMETRIC_GS


def strength_graph(A: sp.csr_matrix, theta: float) -> sp.csr_matrix:
    """Symmetric strength |a_ij| >= theta sqrt(|a_ii a_jj|) on |A| + |A|^T."""
    S = abs(A)
    S = as_csr((S + S.T) * 0.5)
    d = np.sqrt(np.abs(S.diagonal()))
    rows = np.repeat(np.arange(S.shape[0]), np.diff(S.indptr))
    cols = S.indices
    keep = (rows != cols) & (S.data >= theta * d[rows] * d[cols])
    G = sp.csr_matrix((np.ones(keep.sum()), (rows[keep], cols[keep])), shape=S.shape)
    G.sort_indices()
    return G


def aggregate(G: sp.csr_matrix) -> np.ndarray:
    """Greedy root-node aggregation; returns the aggregate id of every node."""
    n = G.shape[0]
    ptr, idx = G.indptr, G.indices
    agg = np.full(n, -1, dtype=np.int64)
    count = 0
    # pass 1: roots whose whole neighbourhood is free
    for i in range(n):
        if agg[i] >= 0:
            continue
        nb = idx[ptr[i]:ptr[i + 1]]
        if np.all(agg[nb] < 0):
            agg[i] = count
            agg[nb] = count
            count += 1
    # pass 2: attach leftovers to a neighbouring pass-1 aggregate
    first = agg.copy()
    for i in np.flatnonzero(agg < 0):
        nb = idx[ptr[i]:ptr[i + 1]]
        hit = first[nb]
        hit = hit[hit >= 0]
        if len(hit):
            agg[i] = hit[0]
    # pass 3: what is still free (isolated or surrounded by leftovers)
    for i in range(n):
        if agg[i] >= 0:
            continue
        nb = idx[ptr[i]:ptr[i + 1]]
        agg[i] = count
        agg[nb[agg[nb] < 0]] = count
        count += 1
    if count == 0:
        raise AmgSetupError("aggregation formed no aggregates")
    return agg


def tentative_prolongator(agg: np.ndarray) -> sp.csr_matrix:
    n = len(agg)
    nc = int(agg.max()) + 1
    sizes = np.bincount(agg, minlength=nc)
    vals = 1.0 / np.sqrt(sizes[agg])
    return sp.csr_matrix((vals, (np.arange(n), agg)), shape=(n, nc))


def classical_strength(A: sp.csr_matrix, theta: float) -> sp.csr_matrix:
    """S[i, j] = 1 when |a_ij| >= theta max_{k != i} |a_ik| (row i depends on j)."""
    A = as_csr(A)
    rows = np.repeat(np.arange(A.shape[0]), np.diff(A.indptr))
    cols = A.indices
    off = np.where(rows != cols, np.abs(A.data), 0.0)
    rmax = np.zeros(A.shape[0])
    np.maximum.at(rmax, rows, off)
    keep = (rows != cols) & (off >= theta * rmax[rows]) & (off > 0.0)
    S = sp.csr_matrix((np.ones(keep.sum()), (rows[keep], cols[keep])), shape=A.shape)
    S.sort_indices()
    return S


def cf_split(S: sp.csr_matrix) -> np.ndarray:
    """First-pass Ruge-Stueben splitting; True marks coarse points."""
    import heapq

    n = S.shape[0]
    T = as_csr(S.T)
    sptr, sidx = S.indptr, S.indices
    tptr, tidx = T.indptr, T.indices
    lam = np.diff(tptr).astype(np.int64)
    state = np.zeros(n, dtype=np.int8)  # 0 undecided, 1 coarse, 2 fine
    # points that influence nobody and depend on nobody are fine
    state[(lam == 0) & (np.diff(sptr) == 0)] = 2
    heap = [(-int(lam[i]), i) for i in range(n) if state[i] == 0]
    heapq.heapify(heap)
    while heap:
        neg, i = heapq.heappop(heap)
        if state[i] != 0 or -neg != lam[i]:
            continue
        state[i] = 1
        for j in tidx[tptr[i]:tptr[i + 1]]:
            if state[j] != 0:
                continue
            state[j] = 2
            for k in sidx[sptr[j]:sptr[j + 1]]:
                if state[k] == 0:
                    lam[k] += 1
                    heapq.heappush(heap, (-int(lam[k]), k))
        for k in sidx[sptr[i]:sptr[i + 1]]:
            if state[k] == 0:
                lam[k] -= 1
                heapq.heappush(heap, (-int(lam[k]), k))
    return state == 1


def classical_prolongator(A: sp.csr_matrix, S: sp.csr_matrix, coarse: np.ndarray) -> sp.csr_matrix:
    """Classical interpolation; strong fine neighbours are distributed over C_i.

    For a fine point i with strong coarse set C_i the weight of j in C_i is
    -(a_ij + sum_k a_ik a_kj / sum_{m in C_i} a_km) / (a_ii + weak row sum),
    k running over strong fine neighbours and only entries a_kj of sign
    opposite to a_kk taking part.  A strong fine neighbour with no such link
    into C_i is lumped into the diagonal.
    """
    A = as_csr(A)
    n = A.shape[0]
    cid = np.cumsum(coarse) - 1
    fine = ~coarse
    rows = np.repeat(np.arange(n), np.diff(A.indptr))
    cols = A.indices
    vals = A.data
    off = rows != cols
    strong = np.asarray(S[rows, cols]).ravel() != 0.0
    strong &= off

    def pattern(mask, v):
        return sp.csr_matrix((v[mask], (rows[mask], cols[mask])), shape=A.shape)

    Sc = pattern(strong & coarse[cols], np.ones_like(vals))
    Ac = pattern(strong & coarse[cols], vals)
    diag = A.diagonal()
    opp = off & coarse[cols] & (np.sign(vals) != np.sign(diag[rows]))
    Ao = pattern(opp, vals)
    # tot[i, k] = sum over m in C_i of the opposite-sign entries a_km
    X = as_csr(Sc @ Ao.T)
    sf = strong & fine[cols]
    ri, ki = rows[sf], cols[sf]
    tot = np.asarray(X[ri, ki]).ravel() if len(ri) else np.zeros(0)
    aik = vals[sf]
    ok = tot != 0.0
    W = sp.csr_matrix((aik[ok] / tot[ok], (ri[ok], ki[ok])), shape=A.shape)
    lumped = np.bincount(ri[~ok], weights=aik[~ok], minlength=n)
    weak = off & ~strong
    den = diag + np.bincount(rows[weak], weights=vals[weak], minlength=n) + lumped
    num = as_csr(Ac + (W @ Ao).multiply(Sc))
    num = as_csr(num[fine])
    fidx = np.flatnonzero(fine)
    nr = np.repeat(fidx, np.diff(num.indptr))
    pr = np.concatenate([np.flatnonzero(coarse), nr])
    pc = np.concatenate([cid[coarse], cid[num.indices]])
    pv = np.concatenate([np.ones(int(coarse.sum())), -num.data / den[nr]])
    return as_csr(sp.csr_matrix((pv, (pr, pc)), shape=(n, int(coarse.sum()))))


def spectral_radius_dinv(A: sp.csr_matrix, iters: int, seed: int) -> float:
    """Power-iteration estimate of rho(D^-1 A_sym), A_sym = (A + A^T)/2."""
    Asym = (A + A.T) * 0.5
    dinv = 1.0 / Asym.diagonal()
    x = np.random.default_rng(seed).standard_normal(A.shape[0])
    x /= np.linalg.norm(x)
    rho = 0.0
    for _ in range(iters):
        y = dinv * (Asym @ x)
        rho = np.linalg.norm(y)
        if rho == 0.0:
            return 0.0
        x = y / rho
    return float(rho)


@dataclass(eq=False)
class _Level:
    A: sp.csr_matrix
    P: sp.csr_matrix | None = None
    R: sp.csr_matrix | None = None
    dinv: np.ndarray | None = None
    lower: spla.SuperLU | None = field(default=None, repr=False)
    upper: spla.SuperLU | None = field(default=None, repr=False)


def _triangular_factor(T: sp.spmatrix) -> spla.SuperLU:
    # SuperLU on a triangular matrix with natural ordering and no pivoting creates no fill
    return spla.splu(sp.csc_matrix(T), permc_spec="NATURAL", diag_pivot_thresh=0.0,
                     options={"SymmetricMode": False})


@dataclass(eq=False)
class AmgHierarchy:
    levels: list[_Level]
    coarse_lu: object
    params: AmgParams
    smoother: Smoother

    @property
    def n(self) -> int:
        return self.levels[0].A.shape[0]

    def stats(self) -> dict:
        sizes = [lv.A.shape[0] for lv in self.levels]
        nnz = [lv.A.nnz for lv in self.levels]
        return {
            "levels": len(self.levels),
            "sizes": sizes,
            "nnz": nnz,
            "operator_complexity": sum(nnz) / nnz[0],
            "grid_complexity": sum(sizes) / sizes[0],
            "smoother": self.smoother.value,
        }

    def __call__(self, r: np.ndarray) -> np.ndarray:
        return amg_vcycle(self, r)


def amg_setup(A, params: AmgParams | None = None) -> AmgHierarchy:
    params = params or AmgParams()
    A = as_csr(A)
    if A.shape[0] == 0:
        raise AmgSetupError("empty matrix")
    if A.shape[0] != A.shape[1]:
        raise AmgSetupError("AMG needs a square matrix")
    smoother = params.smoother or DEFAULT_SMOOTHER
    levels: list[_Level] = []
    while True:
        lv = _Level(A)
        levels.append(lv)
        if A.shape[0] <= params.max_coarse or len(levels) == params.max_levels:
            break
        if params.coarsening is Coarsening.CLASSICAL:
            S = classical_strength(A, params.theta)
            coarse = cf_split(S)
            if not coarse.any() or coarse.all():
                break
            P = as_csr(classical_prolongator(A, S, coarse))
        else:
            agg = aggregate(strength_graph(A, params.aggregation_theta))
            T = tentative_prolongator(agg)
            if T.shape[1] >= A.shape[0]:
                # aggregation stalled; stop coarsening here
                break
            rho = spectral_radius_dinv(A, params.power_iters, params.seed)
            omega = params.prolongation_weight / rho
            dinv = 1.0 / A.diagonal()
            P = as_csr(T - omega * (sp.diags(dinv) @ (A @ T)))
        R = as_csr(P.T)
        lv.P, lv.R = P, R
        A = as_csr(R @ A @ P)
    for lv in levels[:-1]:
        lv.dinv = 1.0 / lv.A.diagonal()
        if smoother is not Smoother.JACOBI:
            lv.lower = _triangular_factor(sp.tril(lv.A, format="csc"))
            lv.upper = _triangular_factor(sp.triu(lv.A, format="csc"))
    coarse = levels[-1].A
    coarse_lu = sparse_lu_factor(coarse)
    return AmgHierarchy(levels, coarse_lu, params, smoother)


def _smooth(h: AmgHierarchy, lv: _Level, x: np.ndarray, b: np.ndarray, sweeps: int, forward: bool) -> np.ndarray:
    if h.smoother is Smoother.JACOBI:
        w = h.params.jacobi_weight
        d = lv.dinv if b.ndim == 1 else lv.dinv[:, None]
        for _ in range(sweeps):
            x = x + w * d * (b - lv.A @ x)
        return x
    if h.smoother is Smoother.SYMMETRIC_GS:
        order = (lv.lower, lv.upper)
    else:
        order = (lv.lower,) if forward else (lv.upper,)
    for _ in range(sweeps):
        for tri in order:
            x = x + tri.solve(b - lv.A @ x)
    return x


def amg_vcycle(h: AmgHierarchy, r: np.ndarray) -> np.ndarray:
    """One V(pre, post) cycle from a zero initial guess: z ~ A^{-1} r."""
    r = np.asarray(r, dtype=float)
    if r.shape[0] != h.n:
        raise ValueError(f"V-cycle on size {h.n} got a residual of size {r.shape[0]}")
    return _cycle(h, 0, r)


def _cycle(h: AmgHierarchy, k: int, b: np.ndarray) -> np.ndarray:
    lv = h.levels[k]
    if k == len(h.levels) - 1:
        return h.coarse_lu.solve(b)
    p = h.params
    # first sweep from x = 0 without forming A x
    x = _smooth(h, lv, np.zeros_like(b), b, p.presmooth, forward=True)
    rc = lv.R @ (b - lv.A @ x)
    x = x + lv.P @ _cycle(h, k + 1, rc)
    # post-smoothing runs the reverse sweep so the cycle is symmetric for SPD A
    return _smooth(h, lv, x, b, p.postsmooth, forward=False)


def reduction_factor(h: AmgHierarchy, A, cycles: int = 10, seed: int = 0) -> float:
    """Geometric-mean error reduction of stationary V-cycle iteration on A e = 0."""
    A = as_csr(A)
    e = np.random.default_rng(seed).standard_normal(A.shape[0])
    n0 = np.linalg.norm(e)
    for _ in range(cycles):
        e = e - amg_vcycle(h, A @ e)
    return float((np.linalg.norm(e) / n0) ** (1.0 / cycles))
