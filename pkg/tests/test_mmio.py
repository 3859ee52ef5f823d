import numpy as np
import pytest
import scipy.sparse as sp

from fetidp_stokes.mmio import matrix_market_header, read_matrix_market, write_matrix_market


def test_general_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    M = sp.random(7, 5, density=0.4, random_state=rng, format="csr")
    f = write_matrix_market(tmp_path / "m.mtx", M)
    assert matrix_market_header(f) == "%%MatrixMarket matrix coordinate real general"
    assert np.allclose(read_matrix_market(f).toarray(), M.toarray())


def test_symmetric_round_trip(tmp_path):
    A = np.array([[4.0, -1.0, 0.0], [-1.0, 4.0, 2.5], [0.0, 2.5, 3.0]])
    f = write_matrix_market(tmp_path / "s.mtx", sp.csr_matrix(A), symmetric=True)
    assert matrix_market_header(f) == "%%MatrixMarket matrix coordinate real symmetric"
    body = [ln for ln in f.read_text().splitlines() if not ln.startswith("%")]
    assert body[0].split() == ["3", "3", "5"]  # lower triangle only
    rows = [tuple(map(float, ln.split())) for ln in body[1:]]
    assert all(r >= c for r, c, _ in rows) and min(r for r, _, _ in rows) == 1  # 1-based
    assert np.allclose(read_matrix_market(f).toarray(), A)


def test_dense_input_written_as_coordinate(tmp_path):
    f = write_matrix_market(tmp_path / "d.mtx", np.eye(3))
    assert "coordinate" in matrix_market_header(f)


def test_asymmetric_rejected(tmp_path):
    with pytest.raises(ValueError):
        write_matrix_market(tmp_path / "x.mtx", sp.csr_matrix([[1.0, 2.0], [0.0, 1.0]]), symmetric=True)
