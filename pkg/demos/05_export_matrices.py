"""
Exporting operators for other tools
===================================

Write the assembled matrices, the jump operator and (for small cases)
the dense reduced operator and preconditioner in MatrixMarket format,
together with a text file describing every global dof.
"""

import sys
import tempfile

from fetidp_stokes.bench import CaseConfig, dump_matrices
from fetidp_stokes.mmio import matrix_market_header, read_matrix_market

out = sys.argv[1] if len(sys.argv) > 1 else tempfile.mkdtemp(prefix="fetidp_")
cfg = CaseConfig("th", "full", "corner-edge", "dirichlet", nsub=2, m=4)
for path in dump_matrices(cfg, out):
    if path.suffix == ".mtx":
        M = read_matrix_market(path)
        kind = matrix_market_header(path).split()[-1]
        print(f"{path.name:12s} {M.shape[0]:4d} x {M.shape[1]:<4d} nnz {M.nnz:5d}  {kind}")
    else:
        print(f"{path.name:12s} {sum(1 for _ in open(path))} lines")
