import functools

import numpy as np
import pytest

from fetidp_stokes.ddspace import build_tilde_system, classify_dofs, select_pressure_split
from fetidp_stokes.dofmap import build_dof_map
from fetidp_stokes.fem import assemble_global, assemble_subdomains
from fetidp_stokes.mesh import build_mesh

# (element, pgamma, primal, li05) for every valid decomposition
DECOMPOSITIONS = [
    ("th", "full", "corner", False),
    ("th", "full", "corner-edge", False),
    ("dp", "one", "corner", False),
    ("dp", "one", "corner-edge", False),
    ("dp", "empty", "corner", False),
    ("dp", "empty", "corner-edge", True),
]


def decomposition_id(d):
    return "-".join(str(x) for x in d[:3]) + ("-li05" if d[3] else "")


@functools.lru_cache(maxsize=None)
def problem(element, nsub, m):
    mesh = build_mesh(nsub, nsub, m, element)
    dm = build_dof_map(mesh)
    return mesh, dm, assemble_subdomains(mesh, dm), assemble_global(mesh, dm)


@functools.lru_cache(maxsize=None)
def tilde(element, pgamma, primal, li05, nsub=2, m=4, solver="schur"):
    mesh, dm, broken, _ = problem(element, nsub, m)
    cls = classify_dofs(dm, primal)
    split = select_pressure_split(dm, pgamma, li05, primal, allow_singular=solver == "monolithic")
    return build_tilde_system(broken, cls, None, split, solver=solver)


@pytest.fixture
def rng():
    return np.random.default_rng(20240517)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import REPORT
    except ImportError:
        return
    if REPORT:
        terminalreporter.section("acceptance criteria")
        for line in sorted(REPORT):
            terminalreporter.write_line(line)
