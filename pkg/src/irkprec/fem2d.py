"""Triangular P1/P2 finite elements on structured square meshes.

Assembles the mass matrix ``M`` and the diffusion or SUPG advection-diffusion
matrix ``F``, eliminates Dirichlet nodes with a lifting vector, and derives
manufactured forcing terms symbolically.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np
import scipy.sparse as sp
import sympy

from .sparsela import TripletBuilder, as_csr


class Domain(str, enum.Enum):
    UNIT_SQUARE = "UnitSquare"        # [0, 1]^2
    BIUNIT_SQUARE = "BiUnitSquare"    # [-1, 1]^2


class Wall(str, enum.Enum):
    NORTH = "North"
    SOUTH = "South"
    EAST = "East"
    WEST = "West"


# later walls win at shared corners
WALL_PRIORITY = (Wall.NORTH, Wall.WEST, Wall.SOUTH, Wall.EAST)

_BOUNDS = {Domain.UNIT_SQUARE: (0.0, 1.0), Domain.BIUNIT_SQUARE: (-1.0, 1.0)}


class DegenerateElementError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Mesh2D:
    domain: Domain
    n: int
    vertices: np.ndarray            # (nv, 2)
    triangles: np.ndarray           # (nt, 3), counterclockwise
    boundary_edges: np.ndarray      # (ne, 2)
    edge_walls: tuple[Wall, ...]

    @property
    def h(self) -> float:
        lo, hi = _BOUNDS[self.domain]
        return (hi - lo) / self.n

    def signed_areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        d1, d2 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    def to_text(self) -> str:
        """Node list then element list, one record per line."""
        lines = [f"nodes {len(self.vertices)}"]
        lines += [f"{i} {float(x)!r} {float(y)!r}" for i, (x, y) in enumerate(self.vertices)]
        lines.append(f"elements {len(self.triangles)}")
        lines += [f"{i} {a} {b} {c}" for i, (a, b, c) in enumerate(self.triangles)]
        lines.append(f"boundary_edges {len(self.boundary_edges)}")
        lines += [f"{a} {b} {w.value}" for (a, b), w in zip(self.boundary_edges, self.edge_walls)]
        return "\n".join(lines) + "\n"


def build_structured_mesh(domain: Domain | str, n: int) -> Mesh2D:
    """n x n quads, each split along its lower-left to upper-right diagonal."""
    domain = Domain(domain)
    if n < 2:
        raise ValueError(f"need at least 2 elements per side, got {n}")
    lo, hi = _BOUNDS[domain]
    ticks = np.linspace(lo, hi, n + 1)
    X, Y = np.meshgrid(ticks, ticks)
    verts = np.column_stack([X.ravel(), Y.ravel()])
    vid = np.arange((n + 1) ** 2).reshape(n + 1, n + 1)   # vid[j, i] -> (x_i, y_j)
    v00 = vid[:-1, :-1].ravel()
    v10 = vid[:-1, 1:].ravel()
    v01 = vid[1:, :-1].ravel()
    v11 = vid[1:, 1:].ravel()
    tris = np.empty((2 * n * n, 3), dtype=np.int64)
    tris[0::2] = np.column_stack([v00, v10, v11])
    tris[1::2] = np.column_stack([v00, v11, v01])
    edges, walls = [], []
    for i in range(n):
        edges.append((vid[0, i], vid[0, i + 1])); walls.append(Wall.SOUTH)
    for j in range(n):
        edges.append((vid[j, n], vid[j + 1, n])); walls.append(Wall.EAST)
    for i in range(n, 0, -1):
        edges.append((vid[n, i], vid[n, i - 1])); walls.append(Wall.NORTH)
    for j in range(n, 0, -1):
        edges.append((vid[j, 0], vid[j - 1, 0])); walls.append(Wall.WEST)
    return Mesh2D(domain, n, verts, tris, np.array(edges, dtype=np.int64), tuple(walls))


# --- reference element --------------------------------------------------------

def triangle_quadrature(m: int) -> tuple[np.ndarray, np.ndarray]:
    """Collapsed Gauss-Legendre rule on the reference triangle (area 1/2).

    Exact for polynomials of total degree <= 2m - 2.
    """
    g, w = np.polynomial.legendre.leggauss(m)
    g, w = (g + 1) / 2, w / 2
    U, V = np.meshgrid(g, g, indexing="ij")
    WU, WV = np.meshgrid(w, w, indexing="ij")
    xi = U.ravel()
    eta = (V * (1 - U)).ravel()
    wts = (WU * WV * (1 - U)).ravel()
    return np.column_stack([xi, eta]), wts


def reference_basis(p: int, pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Values (nq, k) and reference gradients (nq, k, 2) of the P1/P2 basis.

    Local order: vertices 0, 1, 2, then midpoints of edges 01, 12, 20.
    """
    xi, eta = pts[:, 0], pts[:, 1]
    lam = np.stack([1 - xi - eta, xi, eta], axis=1)
    dlam = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
    if p == 1:
        grads = np.broadcast_to(dlam, (len(pts), 3, 2)).copy()
        return lam, grads
    if p != 2:
        raise ValueError("only P1 and P2 elements are supported")
    vals = np.empty((len(pts), 6))
    grads = np.empty((len(pts), 6, 2))
    for a in range(3):
        vals[:, a] = lam[:, a] * (2 * lam[:, a] - 1)
        grads[:, a] = (4 * lam[:, a] - 1)[:, None] * dlam[a]
    for e, (a, b) in enumerate([(0, 1), (1, 2), (2, 0)]):
        vals[:, 3 + e] = 4 * lam[:, a] * lam[:, b]
        grads[:, 3 + e] = 4 * (lam[:, b][:, None] * dlam[a] + lam[:, a][:, None] * dlam[b])
    return vals, grads


# --- function space -------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class FemSpace:
    mesh: Mesh2D
    p: int
    dof_coords: np.ndarray          # (ndof, 2)
    cell_dofs: np.ndarray           # (nt, 3p)
    wall_dofs: Mapping[Wall, np.ndarray]
    dirichlet_dofs: np.ndarray
    free_dofs: np.ndarray

    @property
    def ndof(self) -> int:
        return len(self.dof_coords)

    def geometry(self):
        """Per-element Jacobians (nt, 2, 2), |det J| and inverse-transpose."""
        P = self.mesh.vertices[self.mesh.triangles]
        J = np.stack([P[:, 1] - P[:, 0], P[:, 2] - P[:, 0]], axis=2)
        det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
        if np.any(det <= 0.0):
            raise DegenerateElementError("element with non-positive area")
        JinvT = np.empty_like(J)
        JinvT[:, 0, 0] = J[:, 1, 1] / det
        JinvT[:, 0, 1] = -J[:, 1, 0] / det
        JinvT[:, 1, 0] = -J[:, 0, 1] / det
        JinvT[:, 1, 1] = J[:, 0, 0] / det
        return J, det, JinvT

    def quadrature_points(self, pts: np.ndarray) -> np.ndarray:
        """Physical coordinates (nt, nq, 2) of reference points."""
        P = self.mesh.vertices[self.mesh.triangles]
        J, _, _ = self.geometry()
        return P[:, None, 0, :] + np.einsum("eij,qj->eqi", J, pts)

    def interpolate(self, fn: Callable) -> np.ndarray:
        return np.asarray(fn(self.dof_coords[:, 0], self.dof_coords[:, 1]), dtype=float) * np.ones(self.ndof)


def make_space(mesh: Mesh2D, p: int) -> FemSpace:
    if p not in (1, 2):
        raise ValueError("polynomial degree must be 1 or 2")
    n = mesh.n
    m = p * n + 1
    lo, hi = _BOUNDS[mesh.domain]
    ticks = np.linspace(lo, hi, m)
    X, Y = np.meshgrid(ticks, ticks)
    coords = np.column_stack([X.ravel(), Y.ravel()])
    # vertex (i, j) of the coarse grid sits at fine index (p*i, p*j)
    vi = mesh.triangles % (n + 1)
    vj = mesh.triangles // (n + 1)
    fi, fj = p * vi, p * vj
    cols = [fj[:, a] * m + fi[:, a] for a in range(3)]
    if p == 2:
        for a, b in [(0, 1), (1, 2), (2, 0)]:
            cols.append(((fj[:, a] + fj[:, b]) // 2) * m + (fi[:, a] + fi[:, b]) // 2)
    cell_dofs = np.column_stack(cols).astype(np.int64)
    grid = np.arange(m * m).reshape(m, m)
    wall_dofs = {
        Wall.SOUTH: grid[0, :].copy(),
        Wall.NORTH: grid[-1, :].copy(),
        Wall.WEST: grid[:, 0].copy(),
        Wall.EAST: grid[:, -1].copy(),
    }
    on_bdry = np.zeros(m * m, dtype=bool)
    for d in wall_dofs.values():
        on_bdry[d] = True
    return FemSpace(mesh, p, coords, cell_dofs, wall_dofs, np.flatnonzero(on_bdry), np.flatnonzero(~on_bdry))


# --- assembly ---------------------------------------------------------------------

def _quad_order(p: int) -> int:
    return p + 2


def assemble_mass(space: FemSpace) -> sp.csr_matrix:
    pts, wts = triangle_quadrature(_quad_order(space.p))
    phi, _ = reference_basis(space.p, pts)
    ref = np.einsum("q,qa,qb->ab", wts, phi, phi)
    ref = 0.5 * (ref + ref.T)  # bitwise symmetric element matrices
    _, det, _ = space.geometry()
    B = TripletBuilder(space.ndof, space.ndof)
    B.add_element_blocks(space.cell_dofs, det[:, None, None] * ref[None])
    return B.to_csr()


def _physical_grads(space: FemSpace, dphi: np.ndarray) -> np.ndarray:
    _, _, JinvT = space.geometry()
    return np.einsum("eij,qaj->eqai", JinvT, dphi)


def assemble_diffusion(space: FemSpace, eps: float = 1.0) -> sp.csr_matrix:
    if eps <= 0:
        raise ValueError("diffusivity must be positive")
    pts, wts = triangle_quadrature(_quad_order(space.p))
    _, dphi = reference_basis(space.p, pts)
    G = _physical_grads(space, dphi)
    _, det, _ = space.geometry()
    K = eps * det[:, None, None] * np.einsum("q,eqai,eqbi->eab", wts, G, G)
    K = 0.5 * (K + K.transpose(0, 2, 1))
    B = TripletBuilder(space.ndof, space.ndof)
    B.add_element_blocks(space.cell_dofs, K)
    return B.to_csr()


WindField = Callable[[np.ndarray, np.ndarray], tuple[np.ndarray, np.ndarray]]


def double_glazing_wind(x, y):
    """Recirculating cavity flow (2y(1-x^2), -2x(1-y^2))."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    return 2 * y * (1 - x ** 2), -2 * x * (1 - y ** 2)


def supg_parameters(space: FemSpace, wind: WindField, eps: float) -> np.ndarray:
    """Per-element SUPG weight delta = h/(2|w|) max(0, 1 - 1/Pe).

    ``h`` is the streamline element length 2|w| / sum_a |w . grad(lambda_a)|
    with the wind frozen at the centroid.
    """
    P = space.mesh.vertices[space.mesh.triangles]
    cent = P.mean(axis=1)
    wx, wy = wind(cent[:, 0], cent[:, 1])
    w = np.column_stack([np.broadcast_to(wx, len(cent)), np.broadcast_to(wy, len(cent))])
    wn = np.linalg.norm(w, axis=1)
    _, _, JinvT = space.geometry()
    dlam = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
    glam = np.einsum("eij,aj->eai", JinvT, dlam)
    proj = np.abs(np.einsum("eai,ei->ea", glam, w)).sum(axis=1)
    delta = np.zeros(len(cent))
    moving = wn > 0
    h = np.zeros(len(cent))
    h[moving] = 2 * wn[moving] / proj[moving]
    pe = wn * h / (2 * eps)
    up = moving & (pe > 1.0)
    delta[up] = h[up] / (2 * wn[up]) * (1 - 1 / pe[up])
    return delta


def assemble_advection_supg(space: FemSpace, wind: WindField, eps: float):
    """SUPG matrices ``(F, M_supg)`` for u_t + w.grad(u) - eps lap(u).

    The Petrov-Galerkin test function ``v + delta w.grad(v)`` multiplies every
    term, so the time derivative picks up a streamline mass perturbation.  The
    streamline diffusion term vanishes for P1.
    """
    if space.p != 1:
        raise ValueError("SUPG assembly is implemented for P1 elements")
    if eps <= 0:
        raise ValueError("diffusivity must be positive")
    pts, wts = triangle_quadrature(4)
    phi, dphi = reference_basis(1, pts)
    G = _physical_grads(space, dphi)                   # (e, q, a, i)
    _, det, _ = space.geometry()
    X = space.quadrature_points(pts)
    wx, wy = wind(X[..., 0], X[..., 1])
    W = np.stack([np.broadcast_to(wx, X.shape[:2]), np.broadcast_to(wy, X.shape[:2])], axis=-1)
    wgrad = np.einsum("eqi,eqai->eqa", W, G)            # w . grad(phi_a) at each point
    delta = supg_parameters(space, wind, eps)
    dw = det[:, None] * wts[None, :]                    # (e, q)

    diff = eps * det[:, None, None] * np.einsum("q,eqai,eqbi->eab", wts, G, G)
    # rows are test functions, columns trial functions
    adv = np.einsum("eq,qa,eqb->eab", dw, phi, wgrad)
    stream = delta[:, None, None] * np.einsum("eq,eqa,eqb->eab", dw, wgrad, wgrad)
    mass = np.einsum("eq,qa,qb->eab", dw, phi, phi)
    mass_pert = delta[:, None, None] * np.einsum("eq,eqa,qb->eab", dw, wgrad, phi)

    BF = TripletBuilder(space.ndof, space.ndof)
    BF.add_element_blocks(space.cell_dofs, diff + adv + stream)
    BM = TripletBuilder(space.ndof, space.ndof)
    BM.add_element_blocks(space.cell_dofs, mass + mass_pert)
    return BF.to_csr(), BM.to_csr()


def assemble_load(space: FemSpace, f: Callable, order: int = 6) -> np.ndarray:
    """Load vector int f phi_k with an ``order``-point collapsed Gauss rule."""
    pts, wts = triangle_quadrature(order)
    phi, _ = reference_basis(space.p, pts)
    _, det, _ = space.geometry()
    X = space.quadrature_points(pts)
    fx = np.broadcast_to(np.asarray(f(X[..., 0], X[..., 1]), dtype=float), X.shape[:2])
    local = np.einsum("e,q,eq,qa->ea", det, wts, fx, phi)
    out = np.zeros(space.ndof)
    np.add.at(out, space.cell_dofs, local)
    return out


# --- Dirichlet elimination -------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ReducedSystem:
    M_ff: sp.csr_matrix
    F_ff: sp.csr_matrix
    F_fd: sp.csr_matrix
    lift: np.ndarray            # full nodal vector, zero at free dofs
    free: np.ndarray
    dirichlet: np.ndarray

    @property
    def lift_rhs(self) -> np.ndarray:
        """F_fd g: constant boundary contribution to every stage equation."""
        return self.F_fd @ self.lift[self.dirichlet]

    def expand(self, u_free: np.ndarray) -> np.ndarray:
        u = self.lift.copy()
        u[self.free] = u_free
        return u


def boundary_lift(space: FemSpace, boundary_values: Mapping[Wall | str, float] | None) -> np.ndarray:
    values = {Wall(k): float(v) for k, v in (boundary_values or {}).items()}
    g = np.zeros(space.ndof)
    for wall in WALL_PRIORITY:
        if wall in values:
            if wall not in space.wall_dofs or len(space.wall_dofs[wall]) == 0:
                raise ValueError(f"wall {wall.value} absent from mesh")
            g[space.wall_dofs[wall]] = values[wall]
    return g


def eliminate_dirichlet(Msys, Fsys, space: FemSpace, boundary_values=None) -> ReducedSystem:
    g = boundary_lift(space, boundary_values)
    free, dirichlet = space.free_dofs, space.dirichlet_dofs
    M = as_csr(Msys)
    F = as_csr(Fsys)
    Ff = F[free]
    return ReducedSystem(
        as_csr(M[free][:, free]), as_csr(Ff[:, free]), as_csr(Ff[:, dirichlet]), g, free, dirichlet
    )


# --- manufactured solutions -------------------------------------------------------

X_SYM, Y_SYM, T_SYM = sympy.symbols("x y t", real=True)


@dataclass(eq=False)
class ManufacturedProblem:
    space: FemSpace
    exact_expr: sympy.Expr
    forcing_expr: sympy.Expr
    _u: Callable = field(repr=False)
    _f: Callable = field(repr=False)

    def exact(self, t: float) -> np.ndarray:
        xy = self.space.dof_coords
        return np.broadcast_to(np.asarray(self._u(xy[:, 0], xy[:, 1], t), dtype=float), len(xy)).copy()

    def initial(self) -> np.ndarray:
        return self.exact(0.0)

    def forcing_fn(self, t: float) -> Callable:
        return lambda x, y: self._f(x, y, t)

    def load(self, t: float) -> np.ndarray:
        """int f(., t) phi_k over all dofs."""
        return assemble_load(self.space, self.forcing_fn(t))

    def error(self, u_free: np.ndarray, t: float) -> float:
        """Relative discrete L2 error at the free dofs."""
        ref = self.exact(t)[self.space.free_dofs]
        nrm = np.linalg.norm(ref)
        diff = np.linalg.norm(u_free - ref)
        return float(diff / nrm) if nrm > 0 else float(diff)

    def boundary_values_constant(self) -> bool:
        xy = self.space.dof_coords[self.space.dirichlet_dofs]
        u0 = self._u(xy[:, 0], xy[:, 1], 0.0)
        u1 = self._u(xy[:, 0], xy[:, 1], 1.0)
        return bool(np.allclose(u0, u1, rtol=0, atol=1e-14))


def manufactured_problem(space: FemSpace, exact, eps: float = 1.0, wind=None) -> ManufacturedProblem:
    """Forcing f = u_t + w.grad(u) - eps lap(u) for a closed-form ``exact`` u(x, y, t).

    ``exact`` is a sympy expression or string in ``x, y, t``; ``wind`` is an
    optional pair of sympy expressions in ``x, y``.
    """
    u = sympy.sympify(exact, locals={"x": X_SYM, "y": Y_SYM, "t": T_SYM})
    f = sympy.diff(u, T_SYM) - eps * (sympy.diff(u, X_SYM, 2) + sympy.diff(u, Y_SYM, 2))
    if wind is not None:
        w1, w2 = (sympy.sympify(w, locals={"x": X_SYM, "y": Y_SYM}) for w in wind)
        f = f + w1 * sympy.diff(u, X_SYM) + w2 * sympy.diff(u, Y_SYM)
    f = sympy.simplify(f)
    args = (X_SYM, Y_SYM, T_SYM)
    return ManufacturedProblem(space, u, f, sympy.lambdify(args, u, "numpy"), sympy.lambdify(args, f, "numpy"))


HEAT_EXACT = "exp(-t)*sin(pi*x)*sin(pi*y)"
DOUBLE_GLAZING_WIND_EXPR = ("2*y*(1 - x**2)", "-2*x*(1 - y**2)")


# --- assembled test problems -------------------------------------------------------

@dataclass(eq=False)
class ParabolicProblem:
    """Semi-discrete M u' + F u = load(t) posed on the free dofs."""

    name: str
    space: FemSpace
    system: ReducedSystem
    mms: ManufacturedProblem | None = None
    eps: float = 1.0

    @property
    def M(self) -> sp.csr_matrix:
        return self.system.M_ff

    @property
    def F(self) -> sp.csr_matrix:
        return self.system.F_ff

    @property
    def n_free(self) -> int:
        return len(self.system.free)

    @property
    def h(self) -> float:
        return self.space.mesh.h

    def initial(self) -> np.ndarray:
        if self.mms is not None:
            return self.mms.initial()[self.system.free]
        return np.zeros(self.n_free)

    def load(self, t: float) -> np.ndarray | None:
        if self.mms is None:
            return None
        return self.mms.load(t)[self.system.free]

    def error(self, u_free: np.ndarray, t: float) -> float | None:
        if self.mms is None:
            return None
        return self.mms.error(u_free, t)


def heat_problem(n: int, p: int = 2, exact: str | None = HEAT_EXACT) -> ParabolicProblem:
    """u_t = lap(u) on the unit square, homogeneous Dirichlet data."""
    space = make_space(build_structured_mesh(Domain.UNIT_SQUARE, n), p)
    M = assemble_mass(space)
    F = assemble_diffusion(space, 1.0)
    system = eliminate_dirichlet(M, F, space)
    mms = None
    if exact is not None:
        mms = manufactured_problem(space, exact)
        if not mms.boundary_values_constant():
            raise ValueError("manufactured solution must have time-independent boundary values")
        g = np.zeros(space.ndof)
        g[space.dirichlet_dofs] = mms.initial()[space.dirichlet_dofs]
        system = ReducedSystem(system.M_ff, system.F_ff, system.F_fd, g, system.free, system.dirichlet)
    return ParabolicProblem(f"heat-P{p}-n{n}", space, system, mms, 1.0)


def double_glazing_problem(n: int, eps: float, p: int = 1) -> ParabolicProblem:
    """Cavity [-1, 1]^2 with a hot East wall; ``n`` elements per side."""
    space = make_space(build_structured_mesh(Domain.BIUNIT_SQUARE, n), p)
    F, Msupg = assemble_advection_supg(space, double_glazing_wind, eps)
    system = eliminate_dirichlet(Msupg, F, space, {Wall.EAST: 1.0})
    return ParabolicProblem(f"dg-P{p}-n{n}-eps{eps:g}", space, system, None, eps)
