import numpy as np
import pytest
import scipy.sparse as sp

from fetidp_stokes.ddspace import (ConfigurationError, PrimalChoice, PressureMode, build_edge_average_basis,
                                   build_tilde_system, classify_dofs, select_pressure_split)

from conftest import DECOMPOSITIONS, decomposition_id, problem, tilde

SCHUR_CONFIGS = [d for d in DECOMPOSITIONS if not (d[1] == "empty" and d[2] == "corner-edge")]


def test_parse_aliases_and_errors():
    assert PrimalChoice.parse("corner-edge") is PrimalChoice.CornerPlusEdgeAverage
    assert PressureMode.parse("one") is PressureMode.OnePerSubdomain
    with pytest.raises(ConfigurationError):
        PrimalChoice.parse("faces")
    with pytest.raises(ConfigurationError):
        PressureMode.parse("half")


@pytest.mark.parametrize("element", ["dp", "th"])
def test_classification_counts(element):
    _, dm, _, _ = problem(element, 2, 4)
    c = classify_dofs(dm, "corner")
    e = classify_dofs(dm, "corner-edge")
    assert c.n_primal == 2 and e.n_primal == 6
    assert c.n_edges == 4 and c.edge_nodes.shape == (4, 3)
    dual = c.delta_dagger > 0
    assert dual.sum() == 4 * 3 * 2 and np.all(c.delta_dagger[dual] == 0.5)
    _, dm3, _, _ = problem(element, 3, 4)
    c3 = classify_dofs(dm3, "corner-edge")
    assert c3.n_corner_primal == 8 and c3.n_edges == 12 and c3.n_primal == 20


def test_edge_average_basis():
    mesh, dm, _, _ = problem("th", 2, 4)
    cls = classify_dofs(dm, "corner-edge")
    cob = build_edge_average_basis(cls)
    assert np.allclose(cob.weights, mesh.h)  # uniform nodes: every hat integrates to h
    for Q, c in zip(cob.Q, cob.weights):
        assert np.allclose(Q.T @ Q, np.eye(len(c)), atol=1e-14)
        assert np.allclose(Q[:, 0], c / np.linalg.norm(c))
        assert np.abs(c @ Q[:, 1:]).max() < 1e-14  # remaining columns carry no flux
    u = np.random.default_rng(1).standard_normal(cob.weights.shape)
    assert np.allclose(cob.to_old(cob.to_new(u)), u, atol=1e-14)
    with pytest.raises(ConfigurationError):
        build_edge_average_basis(classify_dofs(dm, "corner"))


def test_pressure_split_counts_and_errors():
    _, th, _, _ = problem("th", 2, 4)
    _, dp, _, _ = problem("dp", 4, 4)
    assert select_pressure_split(th, "full").n_gamma == 9
    one = select_pressure_split(dp, "one")
    assert one.n_gamma == 16 and len(np.unique(dp.pres_owners[one.p_gamma, 0])) == 16
    assert select_pressure_split(dp, "empty").n_gamma == 0
    with pytest.raises(ConfigurationError):
        select_pressure_split(dp, "full")
    with pytest.raises(ConfigurationError):
        select_pressure_split(th, "one")
    with pytest.raises(ConfigurationError):
        select_pressure_split(dp, "one", use_li05_coarse=True)
    with pytest.raises(ConfigurationError, match="li05"):
        select_pressure_split(dp, "empty", primal_choice="corner-edge")


def test_singular_schur_rejected():
    _, dm, br, _ = problem("dp", 2, 4)
    cls = classify_dofs(dm, "corner-edge")
    split = select_pressure_split(dm, "empty", allow_singular=True)
    with pytest.raises(ConfigurationError):
        build_tilde_system(br, cls, None, split, solver="schur")
    with pytest.raises(ValueError):
        build_tilde_system(br, cls, None, split, solver="lu")


@pytest.mark.parametrize("d", DECOMPOSITIONS, ids=decomposition_id)
def test_jump_operators(d):
    ts = tilde(*d)
    B, BD = ts.jumps.B, ts.jumps.BD
    assert np.allclose((B @ BD.T).toarray(), np.eye(ts.n_lambda))
    assert set(np.unique(B.data)) <= {-1.0, 1.0}
    assert np.all(np.diff(B.indptr) == 2)
    assert np.linalg.matrix_rank(ts.B_delta_r.toarray()) == ts.n_lambda


@pytest.mark.parametrize("d", DECOMPOSITIONS, ids=decomposition_id)
def test_partially_assembled_inverse(d, rng):
    ts = tilde(*d)
    A = ts.A_tilde
    assert abs(A - A.T).max() < 1e-12
    b = rng.standard_normal(ts.n_w)
    if ts.singular:
        one = ts.pressure_ones()
        assert np.abs(A @ one).max() < 1e-12
        b -= (b @ one) / (one @ one) * one
    x = ts.apply_inverse(b)
    assert np.linalg.norm(A @ x - b) <= 1e-10 * np.linalg.norm(b)


@pytest.mark.parametrize("d", SCHUR_CONFIGS, ids=decomposition_id)
def test_schur_matches_monolithic(d, rng):
    ts, mono = tilde(*d), tilde(*d, solver="monolithic")
    b = rng.standard_normal(ts.n_w)
    assert np.allclose(ts.apply_inverse(b), mono.apply_inverse(b), atol=1e-10)


@pytest.mark.parametrize("d", [d for d in SCHUR_CONFIGS if not d[3]], ids=decomposition_id)
def test_coarse_matrix_spd(d):
    S = tilde(*d).S_Pi.toarray()
    assert np.abs(S - S.T).max() < 1e-12 and np.linalg.eigvalsh(S)[0] > 1e-10


def test_li05_coarse_matrix():
    ts = tilde("dp", "empty", "corner-edge", True)
    nvel = ts.classification.n_primal
    npi = ts.n_pi
    assert npi - nvel == 4  # one constant pressure per subdomain
    diag = ts.A_PiPi.diagonal()
    assert np.all(diag[nvel:] == 0)
    ev = np.linalg.eigvalsh(ts.S_Pi.toarray())
    assert abs(ev).min() < 1e-10 and np.sum(np.abs(ev) < 1e-10) == 1
    assert np.abs(ts.S_Pi @ ts.coarse_null_basis()).max() < 1e-10


@pytest.mark.parametrize("d", DECOMPOSITIONS, ids=decomposition_id)
def test_null_vector_of_coefficient_matrix(d):
    ts = tilde(*d)
    w, pg, lam = ts.null_vector()
    top = ts.A_tilde @ w + ts.B_gamma.T @ pg + ts.B_C[ts.n_gamma:].T @ lam
    assert np.abs(top).max() < 1e-12
    assert np.abs(ts.B_C @ w).max() < 1e-12
    flux = np.abs(ts.flux_of_constant()).max()
    if ts.classification.with_edges:
        assert flux < 1e-12 and np.abs(lam).max() < 1e-12
    else:
        assert flux > 1e-3


def test_edge_averages_continuous_in_w_tilde(rng):
    ts = tilde("th", "full", "corner-edge", False)
    cls, br = ts.classification, ts.broken
    w = rng.standard_normal(ts.n_w)
    nodal = (ts.layout.T @ ts.to_broken_coords(w, np.zeros(ts.n_gamma)))[: br.n_vel]
    c = ts.change_of_basis.weights
    for e, (a, b) in enumerate(cls.edge_pairs):
        avg = []
        for s in (a, b):
            vals = []
            for node in cls.edge_nodes[e]:
                k = np.flatnonzero((br.vel_sub == s) & (br.vel_node == node) & (br.vel_comp == cls.edge_normal[e]))
                vals.append(nodal[k[0]])
            avg.append(c[e] @ np.array(vals))
        assert abs(avg[0] - avg[1]) < 1e-12
