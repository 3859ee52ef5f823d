"""MatrixMarket coordinate I/O (thin layer over :mod:`scipy.io`)."""
from __future__ import annotations

import io
from pathlib import Path

import numpy as np
import scipy.io
import scipy.sparse as sp

from .linalg import canonical


def write_matrix_market(path, M, symmetric: bool = False, comment: str = "") -> Path:
    """Write ``M`` as ``%%MatrixMarket matrix coordinate real general|symmetric``.

    Dense arrays are written in coordinate form as well.
    """
    path = Path(path)
    M = canonical(sp.coo_matrix(np.asarray(M) if not sp.issparse(M) else M))
    if symmetric:
        scale = max(abs(M).max() if M.nnz else 0.0, 1.0)
        asym = abs(M - M.T)
        if asym.nnz and asym.max() > 1e-12 * scale:
            raise ValueError("matrix is not symmetric")
        M = sp.tril(M, format="coo")
    else:
        M = M.tocoo()
    # scipy.io.mmwrite picks 'array' format for dense input; force coordinate
    buf = io.BytesIO()
    scipy.io.mmwrite(buf, M, comment=comment, field="real", symmetry="symmetric" if symmetric else "general")
    path.write_bytes(buf.getvalue())
    return path


def read_matrix_market(path) -> sp.csr_matrix:
    """Read a real coordinate MatrixMarket file into canonical CSR."""
    M = scipy.io.mmread(str(path))
    if not sp.issparse(M):
        M = sp.coo_matrix(M)
    return canonical(M)


def matrix_market_header(path) -> str:
    with open(path) as fh:
        return fh.readline().strip()
