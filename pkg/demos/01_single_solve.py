"""
Solving one Stokes problem with FETI-DP
=======================================

Build a 4x4 decomposition of the unit square, reduce the saddle point
system to the interface, run preconditioned CG and check the result
against a direct solve of the assembled system.
"""

import numpy as np

from fetidp_stokes.bench import CaseConfig, build_case
from fetidp_stokes.fem import assemble_global, error_norms
from fetidp_stokes.solver import back_substitute, compute_rhs_g, pcg

# Taylor-Hood velocity/pressure, continuous pressure on the interface,
# corner plus edge-average primal velocities, Dirichlet preconditioner.
cfg = CaseConfig("th", "full", "corner-edge", "dirichlet", nsub=4, m=8)
art, t_asm, t_fac = build_case(cfg)
ts = art.tilde
print(f"{cfg.label}")
print(f"  lambda unknowns {ts.n_lambda}, interface pressures {ts.n_gamma}, coarse unknowns {ts.n_pi}")

# The reduced right hand side and the iteration
g = compute_rhs_g(art.G)
rep = pcg(art.G, art.M, g, rtol=1e-6)
print(f"  {rep.iterations} iterations, lambda in [{rep.lambda_min:.3f}, {rep.lambda_max:.3f}]")
print("  relative residuals:", " ".join(f"{r:.0e}" for r in rep.residual_history[::4]))

# Recover subdomain fields and compare with the global direct solve
gl = assemble_global(art.mesh, art.dofmap)
sol = back_substitute(ts, rep.solution, Z=gl.Z)
u, p = gl.direct_solve()
print(f"  velocity jump across the interface {sol.dual_jump:.1e}")
print(f"  |u_dd - u_direct| / |u_direct| = {np.linalg.norm(sol.u - u) / np.linalg.norm(u):.1e}")

err = error_norms(art.dofmap, sol.u, sol.p)
print(f"  errors against the exact solution: H1 {err.velocity_h1:.3e}, pressure L2 {err.pressure_l2:.3e}")
