"""
How the iteration count scales
==============================

Fix H/h and add subdomains, then fix the subdomain count and refine.
With edge averages and the Dirichlet preconditioner the count stays flat
in the number of subdomains and grows slowly with H/h.  Corners only
with the lumped preconditioner grows roughly linearly in H/h.
"""

from fetidp_stokes.bench import run_table, variant_config

print("Dirichlet, corner + edge averages, H/h = 8")
configs = [variant_config("TaylorHood", "full", "corner-edge", "dirichlet", n, 8) for n in (2, 4, 8)]
for r in run_table(configs):
    print(f"  {r.config.nsub:2d}x{r.config.nsub:<2d} its {r.iterations:3d}  lambda_max {r.lambda_max:6.2f}")

print("lumped, corners only, 4x4 subdomains")
configs = [variant_config("MacroDP", "empty", "corner", "lumped", 4, m) for m in (4, 8, 16)]
for r in run_table(configs):
    print(f"  H/h {r.config.m:3d}  its {r.iterations:3d}  lambda_max {r.lambda_max:6.2f}")
