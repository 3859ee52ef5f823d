"""Dual-primal interface splitting and the partially assembled operator.

Everything is stored "broken": every subdomain keeps its own copy of its
interface unknowns, and the per-subdomain blocks live together in block
diagonal sparse matrices.  One sparse LU of the block diagonal ``A_rr`` is
then the same as factoring every subdomain separately, and a single solve
call performs all subdomain solves at once.

Unknown layout of the partially assembled space ``W``::

    W = r-space (u_I, p_I, u_Delta of every subdomain, block diagonal)
      + Pi-space (global primal velocities [+ subdomain constant pressures])

and the reduced space ``X = p_Gamma + Lambda``.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .dofmap import DofMap, VelCategory
from .fem import BrokenSystem
from .linalg import Factorization, FactorizationError, canonical, factor_symmetric_indefinite
from .mesh import ElementKind


class ConfigurationError(ValueError):
    """An invalid combination of element, pressure split and primal space."""


class PrimalChoice(str, enum.Enum):
    CornerOnly = "corner"
    CornerPlusEdgeAverage = "corner-edge"

    @classmethod
    def parse(cls, value) -> "PrimalChoice":
        if isinstance(value, cls):
            return value
        v = str(value).lower().replace("+", "-").replace("_", "-")
        for member in cls:
            if v in (member.value, member.name.lower()):
                return member
        raise ConfigurationError(f"unknown primal choice {value!r}")


class PressureMode(str, enum.Enum):
    FullBoundary = "full"
    OnePerSubdomain = "one"
    Empty = "empty"

    @classmethod
    def parse(cls, value) -> "PressureMode":
        if isinstance(value, cls):
            return value
        v = str(value).lower()
        for member in cls:
            if v in (member.value, member.name.lower()):
                return member
        raise ConfigurationError(f"unknown p_Gamma mode {value!r}")


# slot kinds in the broken coordinate layout
KIND_INTERIOR_VEL = 0
KIND_DUAL = 1
KIND_INTERIOR_PRES = 2
KIND_PRIMAL = 3
KIND_GAMMA_PRES = 4

DOF_INTERIOR, DOF_DUAL, DOF_PRIMAL = 0, 1, 2


@dataclass(frozen=True, eq=False)
class InterfaceClassification:
    """Interior / dual / primal split of the global velocity dofs.

    Interface edges are numbered by their (sorted) pair of subdomains; the
    edge nodes are stored edge by edge, ordered along the edge.
    """

    dofmap: DofMap = field(repr=False)
    primal_choice: PrimalChoice
    dof_class: np.ndarray = field(repr=False)
    corner_nodes: np.ndarray = field(repr=False)
    edge_pairs: np.ndarray = field(repr=False)  # (ne, 2)
    edge_normal: np.ndarray = field(repr=False)  # velocity component normal to the edge
    edge_nodes: np.ndarray = field(repr=False)  # (ne, L)
    delta_dagger: np.ndarray = field(repr=False)  # per global velocity dof, 0 off the dual set

    @property
    def n_edges(self) -> int:
        return len(self.edge_pairs)

    @property
    def n_corner_primal(self) -> int:
        return 2 * len(self.corner_nodes)

    @property
    def n_primal(self) -> int:
        extra = self.n_edges if self.primal_choice is PrimalChoice.CornerPlusEdgeAverage else 0
        return self.n_corner_primal + extra

    @property
    def with_edges(self) -> bool:
        return self.primal_choice is PrimalChoice.CornerPlusEdgeAverage


def classify_dofs(dofmap: DofMap, primal_choice) -> InterfaceClassification:
    """Split velocity dofs into interior, dual and primal sets."""
    choice = PrimalChoice.parse(primal_choice)
    mesh = dofmap.mesh
    cat = dofmap.vel_node_category
    dof_cat = cat[dofmap.dof_node]
    dof_class = np.full(dofmap.n_vel, DOF_INTERIOR, dtype=np.int8)
    dof_class[dof_cat == VelCategory.EDGE] = DOF_DUAL
    dof_class[dof_cat == VelCategory.CORNER] = DOF_PRIMAL

    own = dofmap.vel_node_owners
    counts = (own >= 0).sum(axis=1)
    delta = np.zeros(dofmap.n_vel)
    dual = dof_class == DOF_DUAL
    delta[dual] = 1.0 / counts[dofmap.dof_node[dual]]

    enodes = np.flatnonzero(cat == VelCategory.EDGE)
    pairs = own[enodes, :2]
    key = pairs[:, 0] * mesh.nsub + pairs[:, 1]
    ukey, eid = np.unique(key, return_inverse=True)
    epairs = np.column_stack([ukey // mesh.nsub, ukey % mesh.nsub])
    # horizontal neighbours share a vertical edge: normal is the x component
    normal = np.where(epairs[:, 1] - epairs[:, 0] == 1, 0, 1)
    if mesh.nsub_x == 1:
        normal[:] = 1
    xy = mesh.nodes[enodes]
    along = np.where(normal[eid] == 0, xy[:, 1], xy[:, 0])
    order = np.lexsort((along, eid))
    lengths = np.bincount(eid, minlength=len(ukey))
    if len(lengths) and not np.all(lengths == lengths[0]):
        raise ValueError("interface edges of unequal length are not supported")
    L = int(lengths[0]) if len(lengths) else 0
    edge_nodes = enodes[order].reshape(len(ukey), L)
    return InterfaceClassification(
        dofmap=dofmap,
        primal_choice=choice,
        dof_class=dof_class,
        corner_nodes=np.flatnonzero(cat == VelCategory.CORNER),
        edge_pairs=epairs,
        edge_normal=normal,
        edge_nodes=edge_nodes,
        delta_dagger=delta,
    )


@dataclass(frozen=True, eq=False)
class ChangeOfBasis:
    """Orthogonal per-edge transform of the normal velocity components.

    Column 0 of ``Q[e]`` is the normalized vector of trace integrals
    ``c_k = int_edge phi_k``; its coordinate is the edge-average primal dof.
    The remaining columns span the functions with zero normal flux.
    Nodal values ``u = Q @ u_new``; ``u_new = Q.T @ u``.
    """

    weights: np.ndarray = field(repr=False)  # (ne, L)
    Q: np.ndarray = field(repr=False)  # (ne, L, L)

    def to_new(self, u_edge: np.ndarray) -> np.ndarray:
        return np.einsum("elk,el->ek", self.Q, u_edge)

    def to_old(self, u_new: np.ndarray) -> np.ndarray:
        return np.einsum("elk,ek->el", self.Q, u_new)


def edge_trace_weights(cls: InterfaceClassification) -> np.ndarray:
    """Exact ``int_edge phi_k ds`` for the open-edge nodal hats.

    The hat of node ``k`` restricted to the edge line is a 1-D hat spanning
    the neighbouring nodes (edge endpoints included), so its integral is half
    the distance between those neighbours.
    """
    mesh = cls.dofmap.mesh
    ne, L = cls.edge_nodes.shape
    xy = mesh.nodes[cls.edge_nodes]
    t = np.where(cls.edge_normal[:, None] == 0, xy[..., 1], xy[..., 0])
    sub = cls.edge_pairs[:, 0]
    sx, sy = sub % mesh.nsub_x, sub // mesh.nsub_x
    lo = np.where(cls.edge_normal == 0, sy * mesh.hy * mesh.m, sx * mesh.hx * mesh.m)
    hi = lo + np.where(cls.edge_normal == 0, mesh.hy * mesh.m, mesh.hx * mesh.m)
    ext = np.concatenate([lo[:, None], t, hi[:, None]], axis=1)
    return 0.5 * (ext[:, 2:] - ext[:, :-2])


def build_edge_average_basis(cls: InterfaceClassification) -> ChangeOfBasis:
    """Householder transform per edge whose first column is ``c / |c|``."""
    if not cls.with_edges:
        raise ConfigurationError("edge-average basis requires primal choice corner-edge")
    ne, L = cls.edge_nodes.shape
    if ne and L == 0:
        raise ConfigurationError("interface edges have no dual nodes")
    c = edge_trace_weights(cls)
    u = c / np.linalg.norm(c, axis=1, keepdims=True)
    v = -u.copy()
    v[:, 0] += 1.0
    vv = np.einsum("el,el->e", v, v)
    Q = np.broadcast_to(np.eye(L), (ne, L, L)).copy()
    refl = vv > 1e-30
    Q[refl] -= 2.0 * v[refl, :, None] * v[refl, None, :] / vv[refl, None, None]
    return ChangeOfBasis(weights=c, Q=Q)


@dataclass(frozen=True, eq=False)
class PressureSplit:
    """Which pressure dofs go to ``p_Gamma`` (global indices)."""

    mode: PressureMode
    p_gamma: np.ndarray = field(repr=False)
    p_interior: np.ndarray = field(repr=False)
    use_li05_coarse: bool = False

    @property
    def n_gamma(self) -> int:
        return len(self.p_gamma)


def select_pressure_split(dofmap: DofMap, mode, use_li05_coarse: bool = False, primal_choice=None,
                          allow_singular: bool = False) -> PressureSplit:
    """Choose ``p_Gamma``.

    ``full``: every pressure dof shared by two or more subdomains (continuous
    pressure only).  ``one``: the lowest-numbered pressure dof of each
    subdomain (discontinuous only).  ``empty``: none (discontinuous only).

    ``empty`` with edge averages makes ``A_rr`` singular; it needs
    ``use_li05_coarse`` (subdomain constant pressures moved to the coarse
    problem) unless ``allow_singular`` is passed for a monolithic solver.
    """
    mode = PressureMode.parse(mode)
    kind = dofmap.mesh.element_kind
    if mode is PressureMode.FullBoundary and kind is not ElementKind.TaylorHood:
        raise ConfigurationError("pgamma=full requires continuous pressure (TaylorHood)")
    if mode is not PressureMode.FullBoundary and kind is not ElementKind.MacroDP:
        raise ConfigurationError(f"pgamma={mode.value} requires discontinuous pressure (MacroDP)")
    if use_li05_coarse and mode is not PressureMode.Empty:
        raise ConfigurationError("li05 coarse problem is only defined for pgamma=empty")
    if primal_choice is not None:
        choice = PrimalChoice.parse(primal_choice)
        if (mode is PressureMode.Empty and choice is PrimalChoice.CornerPlusEdgeAverage
                and not use_li05_coarse and not allow_singular):
            raise ConfigurationError("empty+edge requires li05 (A_rr is otherwise singular)")
    npres = dofmap.n_pres
    if mode is PressureMode.FullBoundary:
        pg = dofmap.shared_pressure
    elif mode is PressureMode.OnePerSubdomain:
        owner = dofmap.pres_owners[:, 0]
        first = np.full(dofmap.mesh.nsub, npres)
        np.minimum.at(first, owner, np.arange(npres))
        pg = first
    else:
        pg = np.zeros(0, dtype=np.int64)
    mask = np.ones(npres, dtype=bool)
    mask[pg] = False
    return PressureSplit(mode, np.asarray(pg, dtype=np.int64), np.flatnonzero(mask), bool(use_li05_coarse))


@dataclass(frozen=True, eq=False)
class JumpOperators:
    """``B_Delta`` and ``B_{Delta,D}`` acting on the broken dual coordinates.

    Columns index the dual slots in the order of ``TildeSystem.dual``.
    Row ``k`` is ``+1`` on the copy in the lower-numbered subdomain and ``-1``
    on the other.
    """

    B: sp.csr_matrix = field(repr=False)
    BD: sp.csr_matrix = field(repr=False)
    row_sub: np.ndarray = field(repr=False)  # (nlambda, 2) subdomain pair per row

    @property
    def n_lambda(self) -> int:
        return self.B.shape[0]

    def restrict(self, sub_of_col: np.ndarray, i: int):
        """``(B^{(i)}, B_D^{(i)})``: columns of subdomain ``i`` only."""
        cols = np.flatnonzero(sub_of_col == i)
        return self.B[:, cols], self.BD[:, cols]


def build_jump_operators(dual_key: np.ndarray, dual_sub: np.ndarray, dual_scale: np.ndarray) -> JumpOperators:
    """Pair up broken dual coordinates sharing the same key.

    Each key must occur exactly twice (dual dofs are shared by two subdomains).
    """
    order = np.lexsort((dual_sub, dual_key))
    k = dual_key[order]
    if len(k) % 2 or np.any(k[0::2] != k[1::2]):
        raise ValueError("every dual coordinate must have exactly two copies")
    first, second = order[0::2], order[1::2]
    n = len(first)
    rows = np.repeat(np.arange(n), 2)
    cols = np.column_stack([first, second]).ravel()
    signs = np.tile([1.0, -1.0], n)
    ncol = len(dual_key)
    B = sp.csr_matrix((signs, (rows, cols)), shape=(n, ncol))
    BD = sp.csr_matrix((signs * dual_scale[cols], (rows, cols)), shape=(n, ncol))
    return JumpOperators(canonical(B), canonical(BD), np.column_stack([dual_sub[first], dual_sub[second]]))


@dataclass(frozen=True, eq=False)
class BrokenLayout:
    """Classification of every broken coordinate after the change of basis.

    ``T`` maps new broken coordinates to nodal broken values (velocities
    first, then pressures, as in :class:`BrokenSystem`).
    """

    kind: np.ndarray = field(repr=False)
    target: np.ndarray = field(repr=False)  # global primal / p_Gamma index, or dual key
    sub: np.ndarray = field(repr=False)
    T: sp.csr_matrix = field(repr=False)
    Tinv: sp.csr_matrix = field(repr=False)
    n_primal: int = 0
    n_gamma: int = 0


def _broken_layout(broken: BrokenSystem, cls: InterfaceClassification, cob: ChangeOfBasis | None,
                   split: PressureSplit) -> BrokenLayout:
    dm = broken.dofmap
    nv, npb = broken.n_vel, broken.n_pres
    n = nv + npb
    kind = np.empty(n, dtype=np.int8)
    target = np.full(n, -1, dtype=np.int64)
    sub = np.concatenate([broken.vel_sub, broken.pres_sub])

    ncat = dm.vel_node_category[broken.vel_node]
    gdof = broken.vel_gdof
    kind[:nv][ncat == VelCategory.INTERIOR] = KIND_INTERIOR_VEL
    corner = ncat == VelCategory.CORNER
    kind[:nv][corner] = KIND_PRIMAL
    corner_rank = np.searchsorted(cls.corner_nodes, broken.vel_node[corner])
    target[:nv][corner] = 2 * corner_rank + broken.vel_comp[corner]
    edge = ncat == VelCategory.EDGE
    kind[:nv][edge] = KIND_DUAL
    target[:nv][edge] = gdof[edge]
    n_primal = cls.n_corner_primal

    Trows, Tcols, Tvals = [np.arange(n)], [np.arange(n)], [np.ones(n)]
    keep_identity = np.ones(n, dtype=bool)
    Tirows, Ticols, Tivals = [], [], []

    if cls.with_edges:
        ne, L = cls.edge_nodes.shape
        # broken normal-component dofs on each edge, for each of the two sides
        node_edge = np.full(dm.mesh.n_nodes, -1)
        node_pos = np.full(dm.mesh.n_nodes, -1)
        node_edge[cls.edge_nodes.ravel()] = np.repeat(np.arange(ne), L)
        node_pos[cls.edge_nodes.ravel()] = np.tile(np.arange(L), ne)
        bidx = np.flatnonzero(edge)
        e = node_edge[broken.vel_node[bidx]]
        normal = broken.vel_comp[bidx] == cls.edge_normal[e]
        bidx, e = bidx[normal], e[normal]
        pos = node_pos[broken.vel_node[bidx]]
        side = (broken.vel_sub[bidx] == cls.edge_pairs[e, 1]).astype(np.int64)
        slot = np.full((ne, 2, L), -1, dtype=np.int64)
        slot[e, side, pos] = bidx
        if np.any(slot < 0):
            raise RuntimeError("incomplete edge slots")
        keep_identity[slot.ravel()] = False
        # T[slot[e,s,i], slot[e,s,j]] = Q[e,i,j]
        r = np.broadcast_to(slot[:, :, :, None], (ne, 2, L, L))
        c = np.broadcast_to(slot[:, :, None, :], (ne, 2, L, L))
        q = np.broadcast_to(cob.Q[:, None], (ne, 2, L, L))
        Trows.append(r.ravel()), Tcols.append(c.ravel()), Tvals.append(q.ravel())
        Tirows.append(c.ravel()), Ticols.append(r.ravel()), Tivals.append(q.ravel())
        avg = slot[:, :, 0]
        kind[avg.ravel()] = KIND_PRIMAL
        target[avg.ravel()] = n_primal + np.repeat(np.arange(ne), 2)
        rest = slot[:, :, 1:]
        target[rest.ravel()] = dm.n_vel + (np.arange(ne)[:, None, None] * L + np.arange(1, L)[None, None, :]).repeat(2, axis=1).ravel()
        n_primal += ne

    # pressures
    p_slots = nv + np.arange(npb)
    gp = broken.pres_gdof
    is_gamma = np.zeros(dm.n_pres, dtype=bool)
    is_gamma[split.p_gamma] = True
    gamma_rank = np.full(dm.n_pres, -1)
    gamma_rank[split.p_gamma] = np.arange(split.n_gamma)
    kind[p_slots] = np.where(is_gamma[gp], KIND_GAMMA_PRES, KIND_INTERIOR_PRES)
    target[p_slots] = np.where(is_gamma[gp], gamma_rank[gp], -1)

    if split.use_li05_coarse:
        # per subdomain: p_k = q_k + c (k < n-1), p_last = -sum(q) + c
        psub = broken.pres_sub
        last = np.r_[np.flatnonzero(np.diff(psub)), npb - 1]
        first = np.r_[0, last[:-1] + 1]
        cnt = last - first + 1
        is_last = np.zeros(npb, dtype=bool)
        is_last[last] = True
        keep_identity[p_slots] = False
        qi = np.flatnonzero(~is_last)
        Trows += [nv + qi, nv + last[psub[qi]], nv + np.arange(npb)]
        Tcols += [nv + qi, nv + qi, nv + last[psub]]
        Tvals += [np.ones(len(qi)), -np.ones(len(qi)), np.ones(npb)]
        # inverse: c = mean(p), q_k = p_k - mean(p)
        w = 1.0 / cnt[psub]
        members = np.arange(npb)
        Tirows += [nv + last[psub], nv + qi]
        Ticols += [nv + members, nv + qi]
        Tivals += [w, np.ones(len(qi))]
        # q_k -= mean over all members of its subdomain
        rq = np.repeat(qi, cnt[psub[qi]])
        cq = np.concatenate([np.arange(first[s], last[s] + 1) for s in psub[qi]]) if len(qi) else np.zeros(0, int)
        Tirows.append(nv + rq), Ticols.append(nv + cq), Tivals.append(-1.0 / cnt[psub[rq]])
        kind[nv + last] = KIND_PRIMAL
        target[nv + last] = n_primal + psub[last]
        n_primal += broken.dofmap.mesh.nsub

    Trows[0], Tcols[0], Tvals[0] = Trows[0][keep_identity], Tcols[0][keep_identity], Tvals[0][keep_identity]
    T = canonical(sp.coo_matrix((np.concatenate(Tvals), (np.concatenate(Trows), np.concatenate(Tcols))), shape=(n, n)))
    ident = np.flatnonzero(keep_identity)
    Tirows.append(ident), Ticols.append(ident), Tivals.append(np.ones(len(ident)))
    Tinv = canonical(sp.coo_matrix((np.concatenate(Tivals), (np.concatenate(Tirows), np.concatenate(Ticols))), shape=(n, n)))
    return BrokenLayout(kind, target, sub, T, Tinv, n_primal, split.n_gamma)


def _take(M: sp.csr_matrix, rows, cols) -> sp.csr_matrix:
    return M[rows][:, cols].tocsr()


@dataclass(frozen=True, eq=False)
class TildeSystem:
    """Partially assembled ``A~`` with its block-diagonal and coarse factorizations.

    Vectors on ``W`` are split as ``(x_r, x_Pi)``; vectors on ``X`` as
    ``(p_Gamma, lambda)``.  ``solver`` is ``"schur"`` (subdomain solves plus
    coarse problem) or ``"monolithic"`` (one direct factorization of the
    assembled ``A~``, deflated when singular).
    """

    broken: BrokenSystem = field(repr=False)
    classification: InterfaceClassification = field(repr=False)
    change_of_basis: ChangeOfBasis | None = field(repr=False)
    split: PressureSplit = field(repr=False)
    layout: BrokenLayout = field(repr=False)
    solver: str
    r: np.ndarray = field(repr=False)  # broken slots of the r-space, sorted by subdomain
    pi_slots: np.ndarray = field(repr=False)
    gamma_slots: np.ndarray = field(repr=False)
    R_pi: sp.csr_matrix = field(repr=False)  # broken Pi slots -> global Pi
    R_gamma: sp.csr_matrix = field(repr=False)
    A_rr: sp.csr_matrix = field(repr=False)
    A_rPi: sp.csr_matrix = field(repr=False)
    A_PiPi: sp.csr_matrix = field(repr=False)
    S_Pi: sp.csr_matrix = field(repr=False)
    B_gamma: sp.csr_matrix = field(repr=False)  # p_Gamma x W
    jumps: JumpOperators = field(repr=False)
    dual_pos: np.ndarray = field(repr=False)  # positions of dual slots inside r
    ivel_pos: np.ndarray = field(repr=False)  # positions of interior velocity slots inside r
    f_r: np.ndarray = field(repr=False)
    f_pi: np.ndarray = field(repr=False)
    singular: bool
    rr_factor: object = field(repr=False, default=None)
    coarse_factor: Factorization | None = field(repr=False, default=None)
    mono_factor: Factorization | None = field(repr=False, default=None)

    # --- sizes -----------------------------------------------------------
    @property
    def n_r(self) -> int:
        return len(self.r)

    @property
    def n_pi(self) -> int:
        return self.layout.n_primal

    @property
    def n_w(self) -> int:
        return self.n_r + self.n_pi

    @property
    def n_gamma(self) -> int:
        return self.split.n_gamma

    @property
    def n_lambda(self) -> int:
        return self.jumps.n_lambda

    @property
    def n_x(self) -> int:
        return self.n_gamma + self.n_lambda

    @property
    def h(self) -> float:
        return self.broken.mesh.h

    # --- assembled operators ---------------------------------------------
    @property
    def B_delta_r(self) -> sp.csr_matrix:
        """``B_Delta R~_Delta`` as a ``Lambda x r`` matrix."""
        n = self.n_lambda
        P = sp.csr_matrix((np.ones(len(self.dual_pos)), (np.arange(len(self.dual_pos)), self.dual_pos)),
                          shape=(len(self.dual_pos), self.n_r))
        return (self.jumps.B @ P).tocsr() if n else sp.csr_matrix((0, self.n_r))

    @property
    def B_C(self) -> sp.csr_matrix:
        lam = sp.hstack([self.B_delta_r, sp.csr_matrix((self.n_lambda, self.n_pi))])
        return sp.vstack([self.B_gamma, lam]).tocsr()

    @property
    def A_tilde(self) -> sp.csr_matrix:
        return sp.bmat([[self.A_rr, self.A_rPi], [self.A_rPi.T, self.A_PiPi]], format="csr")

    @property
    def f(self) -> np.ndarray:
        return np.concatenate([self.f_r, self.f_pi])

    @property
    def A_dd(self) -> sp.csr_matrix:
        """Block-diagonal ``A_DeltaDelta`` on the dual slots."""
        return _take(self.A_rr, self.dual_pos, self.dual_pos)

    def pressure_ones(self) -> np.ndarray:
        """Coordinates in ``W`` of the nodal pressure vector equal to one everywhere."""
        nodal = np.zeros(self.broken.n_vel + self.broken.n_pres)
        nodal[self.broken.n_vel:] = 1.0
        return self.from_broken_coords(self.layout.Tinv @ nodal)[0]

    def from_broken_coords(self, c: np.ndarray):
        """Split broken coordinates into ``(w, p_Gamma)``; shared copies are averaged."""
        w_r = c[self.r]
        cnt = np.asarray(self.R_pi.sum(axis=0)).ravel()
        w_pi = (self.R_pi.T @ c[self.pi_slots]) / np.maximum(cnt, 1)
        gcnt = np.asarray(self.R_gamma.sum(axis=0)).ravel()
        pg = (self.R_gamma.T @ c[self.gamma_slots]) / np.maximum(gcnt, 1)
        return np.concatenate([w_r, w_pi]), pg

    def to_broken_coords(self, w: np.ndarray, p_gamma: np.ndarray) -> np.ndarray:
        c = np.zeros(self.broken.n_vel + self.broken.n_pres)
        c[self.r] = w[: self.n_r]
        c[self.pi_slots] = self.R_pi @ w[self.n_r:]
        c[self.gamma_slots] = self.R_gamma @ p_gamma
        return c

    def null_vector(self):
        """``(w, p_Gamma, lambda)`` spanning the kernel of the full coefficient matrix."""
        w = self.pressure_ones()
        pg = np.ones(self.n_gamma)
        if self.classification.with_edges:
            # edge averages make the flux of the constant vanish; drop the roundoff
            lam = np.zeros(self.n_lambda)
        else:
            lam = -self.jumps.BD @ self.flux_of_constant()
        return w, pg, lam

    def flux_of_constant(self) -> np.ndarray:
        """``[B_{I Delta}^T B_{Gamma Delta}^T] [1; 1]`` on the dual slots."""
        w = self.pressure_ones()
        v = self.A_tilde @ w + self.B_gamma.T @ np.ones(self.n_gamma)
        return v[: self.n_r][self.dual_pos]

    # --- A~ inverse ----------------------------------------------------------
    def solve_rr(self, b: np.ndarray) -> np.ndarray:
        return self.rr_factor.solve(b)

    def apply_inverse(self, rhs: np.ndarray) -> np.ndarray:
        """``A~^{-1} rhs`` for ``rhs`` in the layout ``(f_r, f_Pi)``."""
        return apply_Atilde_inverse(self, rhs)

    def coarse_null_basis(self) -> np.ndarray | None:
        if not (self.singular and self.split.use_li05_coarse):
            return None
        nvel_pi = self.classification.n_primal
        v = np.zeros(self.n_pi)
        v[nvel_pi:] = 1.0
        return v / np.linalg.norm(v)


def apply_Atilde_inverse(ts: TildeSystem, rhs: np.ndarray) -> np.ndarray:
    """Subdomain solve, coarse correction, subdomain solve.

    ``x_r = A_rr^{-1}(f_r - A_rPi u_Pi)`` with
    ``S_Pi u_Pi = f_Pi - A_Pir A_rr^{-1} f_r``.  For the li05 layout the
    coarse unknowns include subdomain constant pressures (whose rhs rows are
    zero) and the coarse solve is deflated by the global constant.
    """
    rhs = np.asarray(rhs, dtype=float)
    if ts.solver == "monolithic":
        return ts.mono_factor.solve(rhs)
    f_r, f_pi = rhs[: ts.n_r], rhs[ts.n_r:]
    y = ts.solve_rr(f_r)
    u_pi = ts.coarse_factor.solve(f_pi - ts.A_rPi.T @ y)
    x_r = y - ts.solve_rr(ts.A_rPi @ u_pi)
    return np.concatenate([x_r, u_pi])


def _local_schur(K: sp.csr_matrix, r: np.ndarray, pi_slots: np.ndarray, pi_sub: np.ndarray, r_sub: np.ndarray,
                 rr_factor) -> sp.csr_matrix:
    """Block-diagonal ``K_PiPi - K_Pir K_rr^{-1} K_rPi`` over the broken Pi slots.

    Slots of one subdomain are numbered 0..k-1; all subdomains' columns with
    the same slot number are stacked into one rhs, so the number of solves
    is the largest per-subdomain primal count, not the total.
    """
    npi = len(pi_slots)
    if npi == 0:
        return sp.csr_matrix((0, 0))
    order = np.argsort(pi_sub, kind="stable")
    first = np.searchsorted(pi_sub[order], pi_sub[order])
    slot_no = np.empty(npi, dtype=np.int64)
    slot_no[order] = np.arange(npi) - first
    nslot = int(slot_no.max()) + 1
    K_rpi = _take(K, r, pi_slots).tocsc()
    cols = slot_no
    P = sp.csr_matrix((np.ones(npi), (np.arange(npi), cols)), shape=(npi, nslot))
    rhs = (K_rpi @ P).toarray()
    X = rr_factor.solve(rhs)
    Y = K_rpi.T @ X  # (npi, nslot): row a uses only its own subdomain
    # pair (a, b) in the same subdomain
    sub_sorted = pi_sub[order]
    counts = np.bincount(sub_sorted)
    starts = np.r_[0, np.cumsum(counts)[:-1]]
    a_list, b_list = [], []
    for k in range(nslot):
        for l in range(nslot):
            has = counts > max(k, l)
            a_list.append(order[starts[has] + k])
            b_list.append(order[starts[has] + l])
    a = np.concatenate(a_list)
    b = np.concatenate(b_list)
    Kpp = _take(K, pi_slots, pi_slots)
    vals = np.asarray(Kpp[a, b]).ravel() - Y[a, slot_no[b]]
    return sp.csr_matrix((vals, (a, b)), shape=(npi, npi))


class _BlockLU:
    """SuperLU of a block-diagonal matrix; breakdown names the subdomain."""

    def __init__(self, M: sp.csr_matrix, sub: np.ndarray):
        try:
            self.lu = spla.splu(sp.csc_matrix(M))
        except RuntimeError as exc:
            bad = None
            for s in np.unique(sub):
                idx = np.flatnonzero(sub == s)
                try:
                    spla.splu(sp.csc_matrix(M[idx][:, idx]))
                except RuntimeError:
                    bad = int(s)
                    break
            raise FactorizationError(f"singular subdomain block (subdomain {bad}): {exc}", bad) from exc

    def solve(self, b):
        b = np.asarray(b, dtype=float)
        if b.size == 0:
            return b.copy()
        return self.lu.solve(b)


def build_tilde_system(broken: BrokenSystem, classification: InterfaceClassification,
                       change_of_basis: ChangeOfBasis | None, split: PressureSplit,
                       solver: str = "schur") -> TildeSystem:
    """Assemble the partially assembled operator and factor what ``solver`` needs."""
    if solver not in ("schur", "monolithic"):
        raise ValueError("solver must be 'schur' or 'monolithic'")
    if classification.with_edges and change_of_basis is None:
        change_of_basis = build_edge_average_basis(classification)
    singular = split.mode is PressureMode.Empty and classification.with_edges
    if singular and not split.use_li05_coarse and solver == "schur":
        raise ConfigurationError("empty+edge requires li05 or the monolithic solver (A_rr is singular)")

    layout = _broken_layout(broken, classification, change_of_basis, split)
    K = sp.bmat([[broken.A, broken.B.T], [broken.B, None]], format="csr")
    Kt = canonical(layout.T.T @ K @ layout.T)
    ft = layout.T.T @ np.concatenate([broken.f, np.zeros(broken.n_pres)])

    kind, sub = layout.kind, layout.sub
    r_mask = np.isin(kind, (KIND_INTERIOR_VEL, KIND_DUAL, KIND_INTERIOR_PRES))
    r = np.flatnonzero(r_mask)
    r = r[np.argsort(sub[r], kind="stable")]
    pi_slots = np.flatnonzero(kind == KIND_PRIMAL)
    gamma_slots = np.flatnonzero(kind == KIND_GAMMA_PRES)
    R_pi = sp.csr_matrix((np.ones(len(pi_slots)), (np.arange(len(pi_slots)), layout.target[pi_slots])),
                         shape=(len(pi_slots), layout.n_primal))
    R_gamma = sp.csr_matrix((np.ones(len(gamma_slots)), (np.arange(len(gamma_slots)), layout.target[gamma_slots])),
                            shape=(len(gamma_slots), split.n_gamma))

    A_rr = _take(Kt, r, r)
    A_rPi = (_take(Kt, r, pi_slots) @ R_pi).tocsr()
    A_PiPi = canonical(R_pi.T @ _take(Kt, pi_slots, pi_slots) @ R_pi)
    B_gamma = sp.hstack([R_gamma.T @ _take(Kt, gamma_slots, r), R_gamma.T @ _take(Kt, gamma_slots, pi_slots) @ R_pi]).tocsr()

    rkind = kind[r]
    dual_pos = np.flatnonzero(rkind == KIND_DUAL)
    ivel_pos = np.flatnonzero(rkind == KIND_INTERIOR_VEL)
    dual_slots = r[dual_pos]
    dofmap = broken.dofmap
    scale = np.full(len(dual_slots), 0.5)
    tang = layout.target[dual_slots] < dofmap.n_vel
    scale[tang] = classification.delta_dagger[layout.target[dual_slots][tang]]
    jumps = build_jump_operators(layout.target[dual_slots], sub[dual_slots], scale)

    rr_factor = coarse_factor = mono_factor = None
    S_Pi = sp.csr_matrix((layout.n_primal, layout.n_primal))
    if solver == "schur":
        rr_factor = _BlockLU(A_rr, sub[r])
        S_loc = _local_schur(Kt, r, pi_slots, sub[pi_slots], sub[r], rr_factor)
        S_Pi = canonical(R_pi.T @ S_loc @ R_pi)
        S_Pi = canonical(0.5 * (S_Pi + S_Pi.T))
    ts = TildeSystem(
        broken=broken, classification=classification, change_of_basis=change_of_basis, split=split,
        layout=layout, solver=solver, r=r, pi_slots=pi_slots, gamma_slots=gamma_slots, R_pi=R_pi,
        R_gamma=R_gamma, A_rr=A_rr, A_rPi=A_rPi, A_PiPi=A_PiPi, S_Pi=S_Pi, B_gamma=B_gamma, jumps=jumps,
        dual_pos=dual_pos, ivel_pos=ivel_pos, f_r=ft[r], f_pi=R_pi.T @ ft[pi_slots], singular=singular,
        rr_factor=rr_factor,
    )
    if solver == "schur":
        null = ts.coarse_null_basis()
        object.__setattr__(ts, "coarse_factor", factor_symmetric_indefinite(S_Pi, null_basis=null))
    else:
        null = None
        if singular:
            v = ts.pressure_ones()
            null = v / np.linalg.norm(v)
        object.__setattr__(ts, "mono_factor", factor_symmetric_indefinite(ts.A_tilde, null_basis=null))
    return ts
