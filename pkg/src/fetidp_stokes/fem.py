"""Stokes assembly on structured meshes, manufactured solution, error norms.

Bilinear forms: ``a(u, v) = int grad u : grad v``, ``b(u, q) = -int (div u) q``.
Velocity dofs on the outer boundary are eliminated (homogeneous Dirichlet).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .dofmap import DofMap, VelCategory
from .linalg import Factorization, factor_symmetric_indefinite, from_coo
from .mesh import ElementKind, StructuredMesh

# 6-point degree-4 rule on the reference triangle, barycentric coordinates
_A1, _W1 = 0.445948490915965, 0.223381589678011
_A2, _W2 = 0.091576213509771, 0.109951743655322
QUAD_BARY = np.array(
    [
        [_A1, _A1, 1 - 2 * _A1],
        [_A1, 1 - 2 * _A1, _A1],
        [1 - 2 * _A1, _A1, _A1],
        [_A2, _A2, 1 - 2 * _A2],
        [_A2, 1 - 2 * _A2, _A2],
        [1 - 2 * _A2, _A2, _A2],
    ]
)
QUAD_WEIGHTS = np.array([_W1, _W1, _W1, _W2, _W2, _W2])


# --- manufactured solution -------------------------------------------------

def _S(t):
    return np.sin(np.pi * t) ** 3


def _dS(t):
    return 3 * np.pi * np.sin(np.pi * t) ** 2 * np.cos(np.pi * t)


def _d2S(t):
    s = np.sin(np.pi * t)
    return 3 * np.pi**2 * s * (2 - 3 * s**2)


def _T(t):
    return np.sin(np.pi * t) ** 2 * np.cos(np.pi * t)


def _dT(t):
    s = np.sin(np.pi * t)
    return np.pi * s * (2 - 3 * s**2)


def _d2T(t):
    return np.pi**2 * np.cos(np.pi * t) * (2 - 9 * np.sin(np.pi * t) ** 2)


def manufactured_fields(x, y):
    """Exact velocity, pressure and body force of the benchmark problem.

    ``u = (sin^3(pi x) sin^2(pi y) cos(pi y), -sin^2(pi x) sin^3(pi y) cos(pi x))``,
    ``p = x^2 - y^2`` and ``f = -Laplace(u) + grad p``.

    Returns ``(u, p, f)`` with ``u`` and ``f`` stacked along a leading axis of
    length 2.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    u = np.stack([_S(x) * _T(y), -_T(x) * _S(y)])
    p = x**2 - y**2
    f1 = -(_d2S(x) * _T(y) + _S(x) * _d2T(y)) + 2 * x
    f2 = (_d2T(x) * _S(y) + _T(x) * _d2S(y)) - 2 * y
    return u, p, np.stack([f1, f2])


def manufactured_gradient(x, y):
    """Gradient of the exact velocity, shape ``(2, 2, ...)`` as ``[component, direction]``."""
    return np.stack(
        [
            np.stack([_dS(x) * _T(y), _S(x) * _dT(y)]),
            np.stack([-_dT(x) * _S(y), -_T(x) * _dS(y)]),
        ]
    )


# --- element kernels -------------------------------------------------------

def p1_gradients(mesh: StructuredMesh):
    """Areas ``(nt,)`` and P1 basis gradients ``(nt, 3, 2)``."""
    p = mesh.nodes[mesh.triangles]
    x, y = p[..., 0], p[..., 1]
    area2 = (x[:, 1] - x[:, 0]) * (y[:, 2] - y[:, 0]) - (x[:, 2] - x[:, 0]) * (y[:, 1] - y[:, 0])
    grads = np.empty((len(p), 3, 2))
    for a in range(3):
        b, c = (a + 1) % 3, (a + 2) % 3
        grads[:, a, 0] = (y[:, b] - y[:, c]) / area2
        grads[:, a, 1] = (x[:, c] - x[:, b]) / area2
    return 0.5 * area2, grads


def p1_stiffness(vertices) -> np.ndarray:
    """3x3 P1 stiffness of a single triangle given as a (3, 2) vertex array."""
    v = np.asarray(vertices, dtype=float)
    area2 = (v[1, 0] - v[0, 0]) * (v[2, 1] - v[0, 1]) - (v[2, 0] - v[0, 0]) * (v[1, 1] - v[0, 1])
    g = np.empty((3, 2))
    for a in range(3):
        b, c = (a + 1) % 3, (a + 2) % 3
        g[a] = [(v[b, 1] - v[c, 1]) / area2, (v[c, 0] - v[b, 0]) / area2]
    return 0.5 * abs(area2) * g @ g.T


def _coarse_barycentric(mesh: StructuredMesh, pts: np.ndarray) -> np.ndarray:
    """Barycentric coordinates of ``pts`` (nt, k, 2) in each triangle's pressure element."""
    P = mesh.pressure_nodes[mesh.tri_pressure]  # (nt, 3, 2)
    x0 = P[:, 0][:, None, :]
    e1 = (P[:, 1] - P[:, 0])[:, None, :]
    e2 = (P[:, 2] - P[:, 0])[:, None, :]
    d = pts - x0
    det = e1[..., 0] * e2[..., 1] - e1[..., 1] * e2[..., 0]
    l1 = (d[..., 0] * e2[..., 1] - d[..., 1] * e2[..., 0]) / det
    l2 = (e1[..., 0] * d[..., 1] - e1[..., 1] * d[..., 0]) / det
    return np.stack([1 - l1 - l2, l1, l2], axis=-1)


def pressure_integrals(mesh: StructuredMesh):
    """Per-triangle ``int_T q_k`` for the pressure basis functions touching T.

    Returns ``(cols, vals)`` with shapes ``(nt, k)``; ``k = 1`` for MacroDP,
    ``k = 3`` for TaylorHood.
    """
    area = mesh.triangle_areas()
    if mesh.element_kind is ElementKind.MacroDP:
        return mesh.tri_pressure[:, None], area[:, None]
    cen = mesh.nodes[mesh.triangles].mean(axis=1)[:, None, :]
    lam = _coarse_barycentric(mesh, cen)[:, 0, :]
    return mesh.tri_pressure, area[:, None] * lam


def quadrature_points(mesh: StructuredMesh) -> np.ndarray:
    P = mesh.nodes[mesh.triangles]
    return np.einsum("qa,tad->tqd", QUAD_BARY, P)


def _element_data(mesh: StructuredMesh):
    area, grads = p1_gradients(mesh)
    Ke = area[:, None, None] * np.einsum("tad,tbd->tab", grads, grads)
    pcols, pint = pressure_integrals(mesh)
    # Be[t, k, a, c] = -int_T q_k d_c phi_a
    Be = -pint[:, :, None, None] * grads[:, None, :, :]
    pts = quadrature_points(mesh)
    _, _, f = manufactured_fields(pts[..., 0], pts[..., 1])  # (2, nt, nq)
    Fe = area[:, None, None] * np.einsum("q,qa,ctq->tac", QUAD_WEIGHTS, QUAD_BARY, f)
    return Ke, pcols, Be, Fe


def _assemble(mesh, vel_index, pres_index, nv, npres, load=True):
    """Assemble with element dof maps ``vel_index (nt,3,2)`` / ``pres_index (nt,k)``; -1 drops."""
    Ke, pcols, Be, Fe = _element_data(mesh)
    nt = mesh.n_triangles
    # stiffness, both components
    rows, cols, vals = [], [], []
    for c in range(2):
        vi = vel_index[:, :, c]
        r = np.broadcast_to(vi[:, :, None], (nt, 3, 3))
        q = np.broadcast_to(vi[:, None, :], (nt, 3, 3))
        keep = (r >= 0) & (q >= 0)
        rows.append(r[keep])
        cols.append(q[keep])
        vals.append(Ke[keep])
    A = from_coo(np.concatenate(rows), np.concatenate(cols), np.concatenate(vals), nv, nv)
    k = pcols.shape[1]
    r = np.broadcast_to(pres_index[:, :, None, None], (nt, k, 3, 2))
    q = np.broadcast_to(vel_index[:, None, :, :], (nt, k, 3, 2))
    keep = (r >= 0) & (q >= 0)
    B = from_coo(r[keep], q[keep], Be[keep], npres, nv)
    f = None
    if load:
        keep = vel_index >= 0
        f = np.bincount(vel_index[keep], weights=Fe[keep], minlength=nv)
    return A, B, f


def pressure_mass(mesh: StructuredMesh) -> sp.csr_matrix:
    """Pressure mass matrix ``Z`` (``<q, Z q> = ||q||_{L^2}^2``)."""
    if mesh.element_kind is ElementKind.MacroDP:
        vals = np.full(mesh.n_pressure, 2 * mesh.hx * mesh.hy)
        return sp.diags(vals).tocsr()
    area = mesh.triangle_areas()
    pts = quadrature_points(mesh)
    lam = _coarse_barycentric(mesh, pts)  # (nt, nq, 3)
    Ze = area[:, None, None] * np.einsum("q,tqa,tqb->tab", QUAD_WEIGHTS, lam, lam)
    idx = mesh.tri_pressure
    nt = mesh.n_triangles
    r = np.broadcast_to(idx[:, :, None], (nt, 3, 3))
    c = np.broadcast_to(idx[:, None, :], (nt, 3, 3))
    return from_coo(r.ravel(), c.ravel(), Ze.ravel(), mesh.n_pressure, mesh.n_pressure)


@dataclass(frozen=True, eq=False)
class AssembledStokesSystem:
    """Global ``A`` (velocity Laplacian), ``B`` (divergence), ``Z`` and load ``f``."""

    dofmap: DofMap = field(repr=False)
    A: sp.csr_matrix = field(repr=False)
    B: sp.csr_matrix = field(repr=False)
    Z: sp.csr_matrix = field(repr=False)
    f: np.ndarray = field(repr=False)

    @property
    def n_vel(self) -> int:
        return self.A.shape[0]

    @property
    def n_pres(self) -> int:
        return self.B.shape[0]

    def saddle_matrix(self) -> sp.csr_matrix:
        return sp.bmat([[self.A, self.B.T], [self.B, None]], format="csr")

    def rhs(self) -> np.ndarray:
        return np.concatenate([self.f, np.zeros(self.n_pres)])

    def factor(self) -> Factorization:
        """Factor the saddle matrix with the constant pressure as null space."""
        null = np.concatenate([np.zeros(self.n_vel), np.ones(self.n_pres)])
        return factor_symmetric_indefinite(self.saddle_matrix(), null_basis=null / np.linalg.norm(null))

    def direct_solve(self):
        """Monolithic solve; pressure returned with zero L2 mean."""
        x = self.factor().solve(self.rhs())
        u, p = x[: self.n_vel], x[self.n_vel:]
        return u, zero_mean(self.Z, p)

    def residual(self, u, p) -> float:
        """Relative residual of the assembled saddle system."""
        r = self.saddle_matrix() @ np.concatenate([u, p]) - self.rhs()
        return float(np.linalg.norm(r) / np.linalg.norm(self.rhs()))


def zero_mean(Z, p) -> np.ndarray:
    ones = np.ones(len(p))
    return p - (ones @ (Z @ p)) / (ones @ (Z @ ones))


def _global_vel_index(mesh: StructuredMesh, dofmap: DofMap) -> np.ndarray:
    return dofmap.node_dof[mesh.triangles]  # (nt, 3, 2)


def _global_pres_index(mesh: StructuredMesh) -> np.ndarray:
    tp = mesh.tri_pressure
    return tp[:, None] if tp.ndim == 1 else tp


def assemble_global(mesh: StructuredMesh, dofmap: DofMap) -> AssembledStokesSystem:
    """Assemble ``A, B, Z, f`` directly on the global numbering."""
    A, B, f = _assemble(mesh, _global_vel_index(mesh, dofmap), _global_pres_index(mesh), dofmap.n_vel, dofmap.n_pres)
    return AssembledStokesSystem(dofmap, A, B, pressure_mass(mesh), f)


@dataclass(frozen=True, eq=False)
class BrokenSystem:
    """All subdomain Neumann operators at once, stored block-diagonally.

    Broken velocity dof ``k`` is component ``vel_comp[k]`` of node
    ``vel_node[k]`` as seen from subdomain ``vel_sub[k]``; broken dofs are
    sorted by subdomain.  ``Rv`` / ``Rp`` map global dofs to broken copies.
    """

    mesh: StructuredMesh = field(repr=False)
    dofmap: DofMap = field(repr=False)
    vel_sub: np.ndarray = field(repr=False)
    vel_node: np.ndarray = field(repr=False)
    vel_comp: np.ndarray = field(repr=False)
    vel_gdof: np.ndarray = field(repr=False)
    pres_sub: np.ndarray = field(repr=False)
    pres_gdof: np.ndarray = field(repr=False)
    A: sp.csr_matrix = field(repr=False)
    B: sp.csr_matrix = field(repr=False)
    f: np.ndarray = field(repr=False)

    @property
    def n_vel(self) -> int:
        return len(self.vel_gdof)

    @property
    def n_pres(self) -> int:
        return len(self.pres_gdof)

    @property
    def Rv(self) -> sp.csr_matrix:
        n = self.n_vel
        return sp.csr_matrix((np.ones(n), (np.arange(n), self.vel_gdof)), shape=(n, self.dofmap.n_vel))

    @property
    def Rp(self) -> sp.csr_matrix:
        n = self.n_pres
        return sp.csr_matrix((np.ones(n), (np.arange(n), self.pres_gdof)), shape=(n, self.dofmap.n_pres))


def assemble_subdomains(mesh: StructuredMesh, dofmap: DofMap) -> BrokenSystem:
    """Assemble every subdomain's Neumann stiffness, divergence and load."""
    tsub = mesh.tri_subdomain
    nn = mesh.n_nodes
    # broken velocity nodes = unique (subdomain, node) pairs among non-eliminated nodes
    key = (tsub[:, None] * nn + mesh.triangles).ravel()
    ukey = np.unique(key)
    sub_n, node_n = ukey // nn, ukey % nn
    free = dofmap.node_dof[node_n, 0] >= 0
    ukey, sub_n, node_n = ukey[free], sub_n[free], node_n[free]
    pos = np.searchsorted(ukey, mesh.triangles + tsub[:, None] * nn)
    hit = (pos < len(ukey)) & (ukey[np.minimum(pos, len(ukey) - 1)] == mesh.triangles + tsub[:, None] * nn)
    vel_index = np.stack([np.where(hit, 2 * pos, -1), np.where(hit, 2 * pos + 1, -1)], axis=-1)

    gp = _global_pres_index(mesh)
    npg = mesh.n_pressure
    pkey = tsub[:, None] * npg + gp
    upkey = np.unique(pkey)
    pres_index = np.searchsorted(upkey, pkey)

    nv, npr = 2 * len(ukey), len(upkey)
    A, B, f = _assemble(mesh, vel_index, pres_index, nv, npr)
    return BrokenSystem(
        mesh=mesh,
        dofmap=dofmap,
        vel_sub=np.repeat(sub_n, 2),
        vel_node=np.repeat(node_n, 2),
        vel_comp=np.tile([0, 1], len(ukey)),
        vel_gdof=dofmap.node_dof[np.repeat(node_n, 2), np.tile([0, 1], len(ukey))],
        pres_sub=upkey // npg,
        pres_gdof=upkey % npg,
        A=A,
        B=B,
        f=f,
    )


@dataclass(frozen=True, eq=False)
class SubdomainOperators:
    """Neumann operators of one subdomain with its local-to-global maps."""

    index: int
    A: sp.csr_matrix = field(repr=False)
    B: sp.csr_matrix = field(repr=False)
    f: np.ndarray = field(repr=False)
    vel_dofs: np.ndarray = field(repr=False)
    pres_dofs: np.ndarray = field(repr=False)


def assemble_subdomain(mesh: StructuredMesh, dofmap: DofMap, i: int, broken: BrokenSystem | None = None) -> SubdomainOperators:
    """Operators of subdomain ``i`` (rows/cols ordered as ``vel_dofs`` / ``pres_dofs``)."""
    if not 0 <= i < mesh.nsub:
        raise IndexError(f"subdomain {i} out of range")
    broken = broken or assemble_subdomains(mesh, dofmap)
    v = np.flatnonzero(broken.vel_sub == i)
    q = np.flatnonzero(broken.pres_sub == i)
    return SubdomainOperators(
        index=i,
        A=broken.A[v][:, v].tocsr(),
        B=broken.B[q][:, v].tocsr(),
        f=broken.f[v],
        vel_dofs=broken.vel_gdof[v],
        pres_dofs=broken.pres_gdof[q],
    )


# --- fields and errors -----------------------------------------------------

def velocity_nodal(dofmap: DofMap, u: np.ndarray) -> np.ndarray:
    """Expand a global velocity dof vector to ``(nnodes, 2)`` with zero boundary values."""
    U = np.zeros((dofmap.mesh.n_nodes, 2))
    nd = dofmap.node_dof
    free = nd[:, 0] >= 0
    U[free] = u[nd[free]]
    return U


def interpolate_exact(dofmap: DofMap):
    """Nodal interpolant of the exact velocity and pressure (global dof vectors)."""
    mesh = dofmap.mesh
    X = mesh.nodes[dofmap.dof_node]
    u, _, _ = manufactured_fields(X[:, 0], X[:, 1])
    comp = np.arange(dofmap.n_vel) % 2
    uvec = np.where(comp == 0, u[0], u[1])
    _, p, _ = manufactured_fields(mesh.pressure_nodes[:, 0], mesh.pressure_nodes[:, 1])
    return uvec, p


@dataclass(frozen=True)
class ErrorNorms:
    velocity_h1: float
    velocity_l2: float
    pressure_l2: float


def error_norms(dofmap: DofMap, u, p) -> ErrorNorms:
    """Discretization errors against the manufactured solution.

    ``u`` is a global velocity dof vector, ``p`` a global pressure vector.
    The H1 part is the (broken) seminorm; pressures are compared with both
    means removed.
    """
    mesh = dofmap.mesh
    U = velocity_nodal(dofmap, np.asarray(u, dtype=float))
    area, grads = p1_gradients(mesh)
    pts = quadrature_points(mesh)
    w = area[:, None] * QUAD_WEIGHTS[None, :]
    ue, pe, _ = manufactured_fields(pts[..., 0], pts[..., 1])
    ge = manufactured_gradient(pts[..., 0], pts[..., 1])  # (2, 2, nt, nq)

    Ut = U[mesh.triangles]  # (nt, 3, 2)
    gh = np.einsum("tac,tad->cdt", Ut, grads)  # (2, 2, nt)
    h1 = np.sum(w * ((ge - gh[..., None]) ** 2).sum(axis=(0, 1)))
    uh = np.einsum("qa,tac->ctq", QUAD_BARY, Ut)
    l2 = np.sum(w * ((ue - uh) ** 2).sum(axis=0))

    p = np.asarray(p, dtype=float)
    if mesh.element_kind is ElementKind.MacroDP:
        ph = np.broadcast_to(p[mesh.tri_pressure][:, None], pts.shape[:2])
    else:
        lam = _coarse_barycentric(mesh, pts)
        ph = np.einsum("tqa,ta->tq", lam, p[mesh.tri_pressure])
    total = w.sum()
    dp = (pe - np.sum(w * pe) / total) - (ph - np.sum(w * ph) / total)
    pl2 = np.sum(w * dp**2)
    return ErrorNorms(float(np.sqrt(h1)), float(np.sqrt(l2)), float(np.sqrt(pl2)))
