"""
Lanczos estimates against the exact spectrum
============================================

CG builds a tridiagonal Lanczos matrix as it iterates; its eigenvalues
estimate the extreme eigenvalues of the preconditioned operator.  On a
small problem the reduced operator can be formed densely and its
spectrum computed outright.
"""

from fetidp_stokes.bench import CaseConfig, build_case
from fetidp_stokes.solver import compute_rhs_g, pcg, spectrum_oracle

for primal in ("corner", "corner-edge"):
    for precond in ("lumped", "dirichlet"):
        cfg = CaseConfig("dp", "one", primal, precond, nsub=3, m=6)
        art, _, _ = build_case(cfg)
        exact = spectrum_oracle(art.G, art.M)
        rep = pcg(art.G, art.M, compute_rhs_g(art.G), rtol=1e-6)
        print(f"{primal:12s} {precond:10s} exact [{exact[0]:.3f}, {exact[-1]:.3f}]  "
              f"Lanczos [{rep.lambda_min:.3f}, {rep.lambda_max:.3f}]  {rep.iterations} its")

# Ritz values always sit inside the exact interval.  When CG stops early
# the smallest one can stay well above the true minimum, because the
# right hand side barely excites the lowest modes.
