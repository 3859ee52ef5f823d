"""Structured triangulations of the unit square split into a grid of subdomains.

Both elements share the velocity mesh: every ``h x h`` square is cut by its
lower-left to upper-right diagonal and velocity is P1 on those triangles.

``MacroDP``
    Pressure is one constant per ``2h x h`` cell, i.e. per pair of
    horizontally adjacent squares (a union of four triangles).
``TaylorHood``
    Pressure is continuous P1 on the ``2h`` mesh cut the same way, whose
    triangles are unions of four fine ones (modified Taylor-Hood).
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np


class ElementKind(str, enum.Enum):
    MacroDP = "MacroDP"
    TaylorHood = "TaylorHood"

    @classmethod
    def parse(cls, value) -> "ElementKind":
        if isinstance(value, cls):
            return value
        aliases = {"dp": cls.MacroDP, "macrodp": cls.MacroDP, "th": cls.TaylorHood, "taylorhood": cls.TaylorHood}
        try:
            return aliases[str(value).lower()]
        except KeyError:
            raise ValueError(f"unknown element kind {value!r}") from None


@dataclass(frozen=True, eq=False)
class StructuredMesh:
    """Geometry, connectivity and subdomain ownership of a structured mesh.

    Node numbering: grid node ``(i, j)`` is ``j * (nx + 1) + i``; squares are
    ``j * nx + i``.  MacroDP pressure ``j * nx/2 + I`` lives on the squares
    ``(2I, j)`` and ``(2I+1, j)``; its "node" is the cell centre.
    """

    nsub_x: int
    nsub_y: int
    m: int
    element_kind: ElementKind
    nodes: np.ndarray = field(repr=False)  # (nnodes, 2)
    triangles: np.ndarray = field(repr=False)  # (ntri, 3) counter-clockwise
    tri_square: np.ndarray = field(repr=False)  # square index of each triangle
    tri_subdomain: np.ndarray = field(repr=False)
    pressure_nodes: np.ndarray = field(repr=False)  # TH: coarse vertices; DP: cell centres
    tri_pressure: np.ndarray = field(repr=False)  # DP: (ntri,) pressure id; TH: (ntri, 3) coarse vertices

    @property
    def nx(self) -> int:
        return self.nsub_x * self.m

    @property
    def ny(self) -> int:
        return self.nsub_y * self.m

    @property
    def hx(self) -> float:
        return 1.0 / self.nx

    @property
    def hy(self) -> float:
        return 1.0 / self.ny

    @property
    def h(self) -> float:
        return self.hx

    @property
    def H(self) -> float:
        return 1.0 / self.nsub_x

    @property
    def nsub(self) -> int:
        return self.nsub_x * self.nsub_y

    @property
    def n_grid_nodes(self) -> int:
        return (self.nx + 1) * (self.ny + 1)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @property
    def n_pressure(self) -> int:
        return len(self.pressure_nodes)

    @property
    def n_squares(self) -> int:
        return self.nx * self.ny

    def subdomain_of_square(self, i, j):
        return (np.asarray(j) // self.m) * self.nsub_x + np.asarray(i) // self.m

    def triangle_areas(self) -> np.ndarray:
        p = self.nodes[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])


def build_mesh(nsub_x: int, nsub_y: int, m: int, element_kind) -> StructuredMesh:
    """Triangulate ``[0,1]^2`` with ``nsub_x * nsub_y`` subdomains of ``m x m`` squares."""
    kind = ElementKind.parse(element_kind)
    if nsub_x < 1 or nsub_y < 1:
        raise ValueError("subdomain counts must be >= 1")
    if m < 2:
        raise ValueError("m (H/h) must be >= 2")
    if m % 2:
        raise ValueError("m must be even (pressure cells are 2h wide)")

    nx, ny = nsub_x * m, nsub_y * m
    hx, hy = 1.0 / nx, 1.0 / ny
    gi, gj = np.meshgrid(np.arange(nx + 1), np.arange(ny + 1))
    nodes = np.column_stack([gi.ravel() * hx, gj.ravel() * hy])

    si, sj = np.meshgrid(np.arange(nx), np.arange(ny))
    si, sj = si.ravel(), sj.ravel()
    sq = sj * nx + si
    a = sj * (nx + 1) + si
    b = a + 1
    c = a + nx + 2
    d = a + nx + 1
    sub = (sj // m) * nsub_x + si // m
    tris = np.stack([np.column_stack([a, b, c]), np.column_stack([a, c, d])], axis=1).reshape(-1, 3)
    tri_square = np.repeat(sq, 2)

    ncx, ncy = nx // 2, ny // 2
    if kind is ElementKind.MacroDP:
        tri_pressure = np.repeat(sj * ncx + si // 2, 2)
        ci, cj = np.meshgrid(np.arange(ncx), np.arange(ny))
        pressure_nodes = np.column_stack([(2 * ci.ravel() + 1) * hx, (cj.ravel() + 0.5) * hy])
    else:
        # coarse (2h) square holding each fine triangle, and which half of it
        I, J = np.repeat(si // 2, 2), np.repeat(sj // 2, 2)
        cen = nodes[tris].mean(axis=1)
        below = (cen[:, 0] - 2 * hx * I) / hx > (cen[:, 1] - 2 * hy * J) / hy
        ci, cj = np.meshgrid(np.arange(ncx + 1), np.arange(ncy + 1))
        pressure_nodes = np.column_stack([ci.ravel() * 2 * hx, cj.ravel() * 2 * hy])
        pa = J * (ncx + 1) + I
        pb, pc, pd = pa + 1, pa + ncx + 2, pa + ncx + 1
        tri_pressure = np.where(
            below[:, None], np.column_stack([pa, pb, pc]), np.column_stack([pa, pc, pd])
        )

    return StructuredMesh(
        nsub_x=nsub_x,
        nsub_y=nsub_y,
        m=m,
        element_kind=kind,
        nodes=nodes,
        triangles=tris.astype(np.int64),
        tri_square=tri_square,
        tri_subdomain=np.repeat(sub, 2),
        pressure_nodes=pressure_nodes,
        tri_pressure=tri_pressure,
    )
