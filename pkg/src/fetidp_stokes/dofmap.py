"""Degree-of-freedom numbering and subdomain ownership."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .mesh import ElementKind, StructuredMesh


class VelCategory(enum.IntEnum):
    BOUNDARY = 0  # on the outer boundary, eliminated
    INTERIOR = 1
    EDGE = 2
    CORNER = 3


class PresCategory(enum.IntEnum):
    INTERIOR = 0
    SHARED = 1


def _axis_owners(k: np.ndarray, m: int, nsub: int):
    n = m * nsub
    lo = np.minimum(k // m, nsub - 1)
    hi = lo.copy()
    on_line = (k % m == 0) & (k > 0) & (k < n)
    lo = np.where(on_line, k // m - 1, lo)
    return lo, hi


def _grid_owners(i, j, mesh: StructuredMesh) -> np.ndarray:
    lx, hx = _axis_owners(i, mesh.m, mesh.nsub_x)
    ly, hy = _axis_owners(j, mesh.m, mesh.nsub_y)
    cand = np.column_stack([ly * mesh.nsub_x + lx, ly * mesh.nsub_x + hx, hy * mesh.nsub_x + lx, hy * mesh.nsub_x + hx])
    cand = np.sort(cand, axis=1)
    dup = np.zeros_like(cand, dtype=bool)
    dup[:, 1:] = cand[:, 1:] == cand[:, :-1]
    cand[dup] = np.iinfo(np.int64).max
    cand = np.sort(cand, axis=1)
    cand[cand == np.iinfo(np.int64).max] = -1
    return cand


@dataclass(frozen=True, eq=False)
class DofMap:
    """Velocity and pressure numbering with per-dof ownership.

    ``vel_node_owners`` / ``pres_owners`` are ``(n, 4)`` arrays of owning
    subdomain ids padded with -1.  Velocity dof ``2*f + c`` is component ``c``
    of the ``f``-th non-eliminated node.
    """

    mesh: StructuredMesh = field(repr=False)
    vel_node_category: np.ndarray = field(repr=False)
    vel_node_owners: np.ndarray = field(repr=False)
    node_dof: np.ndarray = field(repr=False)  # (nnodes, 2), -1 if eliminated
    dof_node: np.ndarray = field(repr=False)
    pres_category: np.ndarray = field(repr=False)
    pres_owners: np.ndarray = field(repr=False)

    @property
    def n_vel(self) -> int:
        return len(self.dof_node)

    @property
    def n_pres(self) -> int:
        return len(self.pres_category)

    @property
    def vel_owner_count(self) -> np.ndarray:
        return (self.vel_node_owners >= 0).sum(axis=1)

    @property
    def pres_owner_count(self) -> np.ndarray:
        return (self.pres_owners >= 0).sum(axis=1)

    def vel_dof_category(self) -> np.ndarray:
        return self.vel_node_category[self.dof_node]

    def count(self, category: VelCategory) -> int:
        """Number of velocity nodes in ``category``."""
        return int((self.vel_node_category == category).sum())

    @property
    def shared_pressure(self) -> np.ndarray:
        return np.flatnonzero(self.pres_category == PresCategory.SHARED)

    def write_sidecar(self, path) -> Path:
        """One line per dof: ``id kind category owners`` (owners comma separated)."""
        path = Path(path)
        lines = ["# id kind category owners"]
        vcat = self.vel_node_category
        for d, node in enumerate(self.dof_node):
            own = ",".join(str(s) for s in self.vel_node_owners[node] if s >= 0)
            lines.append(f"{d} u{d % 2} {VelCategory(vcat[node]).name.lower()} {own}")
        for q in range(self.n_pres):
            own = ",".join(str(s) for s in self.pres_owners[q] if s >= 0)
            lines.append(f"{q} p {PresCategory(self.pres_category[q]).name.lower()} {own}")
        path.write_text("\n".join(lines) + "\n")
        return path


def build_dof_map(mesh: StructuredMesh) -> DofMap:
    """Classify velocity nodes and pressure dofs by subdomain ownership."""
    nx, ny = mesh.nx, mesh.ny
    ng = mesh.n_grid_nodes
    k = np.arange(ng)
    gi, gj = k % (nx + 1), k // (nx + 1)
    owners = _grid_owners(gi, gj, mesh)
    count = (owners >= 0).sum(axis=1)
    cat = np.full(mesh.n_nodes, VelCategory.INTERIOR, dtype=np.int8)
    cat[count == 2] = VelCategory.EDGE
    cat[count == 4] = VelCategory.CORNER
    on_bdry = (gi == 0) | (gi == nx) | (gj == 0) | (gj == ny)
    cat[on_bdry] = VelCategory.BOUNDARY

    free = np.flatnonzero(~on_bdry)
    node_dof = np.full((mesh.n_nodes, 2), -1, dtype=np.int64)
    node_dof[free, 0] = 2 * np.arange(len(free))
    node_dof[free, 1] = 2 * np.arange(len(free)) + 1
    dof_node = np.repeat(free, 2)

    if mesh.element_kind is ElementKind.MacroDP:
        q = np.arange(mesh.n_pressure)
        ncx = nx // 2
        powners = np.full((mesh.n_pressure, 4), -1, dtype=np.int64)
        powners[:, 0] = mesh.subdomain_of_square(2 * (q % ncx), q // ncx)
    else:
        ncx = nx // 2
        q = np.arange(mesh.n_pressure)
        powners = _grid_owners(2 * (q % (ncx + 1)), 2 * (q // (ncx + 1)), mesh)
    pcat = np.where((powners >= 0).sum(axis=1) > 1, PresCategory.SHARED, PresCategory.INTERIOR).astype(np.int8)

    return DofMap(
        mesh=mesh,
        vel_node_category=cat,
        vel_node_owners=owners,
        node_dof=node_dof,
        dof_node=dof_node,
        pres_category=pcat,
        pres_owners=powners,
    )
