"""
Discretization error under refinement
=====================================

The manufactured solution is known in closed form, so the FETI-DP
solution can be measured against it.  Both elements are first order in
the velocity H1 seminorm; Taylor-Hood pressure converges faster.
"""

from fetidp_stokes.bench import run_table, variant_config

for element, pgamma in (("TaylorHood", "full"), ("MacroDP", "empty")):
    configs = [variant_config(element, pgamma, "corner-edge", "dirichlet", 2, m) for m in (4, 8, 16, 32)]
    prev = None
    print(element)
    for r in run_table(configs):
        ratio = f"{prev / r.err_u_h1:.2f}" if prev else "  - "
        print(f"  h = 1/{2 * r.config.m:<3d} H1 {r.err_u_h1:.3e} (ratio {ratio})  pressure L2 {r.err_p_l2:.3e}")
        prev = r.err_u_h1
