import numpy as np
import pytest

from fetidp_stokes.fem import error_norms
from fetidp_stokes.linalg import SymTridiagonal, tridiag_eig
from fetidp_stokes.solver import (DirichletPreconditioner, GOperator, IdentityPreconditioner, LumpedPreconditioner,
                                  PcgBreakdown, apply_G, back_substitute, compute_rhs_g, lanczos_from_cg,
                                  make_preconditioner, pcg, spectrum_oracle)

from conftest import DECOMPOSITIONS, decomposition_id, problem, tilde


def _G(d, **kw):
    return GOperator(tilde(*d, **kw))


@pytest.mark.parametrize("d", DECOMPOSITIONS, ids=decomposition_id)
def test_reduced_operator_symmetric_semidefinite(d, rng):
    G = _G(d)
    Gd = G.dense()
    assert np.abs(Gd - Gd.T).max() < 1e-10 * np.abs(Gd).max()
    ev = np.linalg.eigvalsh(0.5 * (Gd + Gd.T))
    assert ev[0] > -1e-10 * ev[-1]
    nv = G.null_vector()
    if np.linalg.norm(nv):
        assert np.abs(Gd @ nv).max() < 1e-10 * ev[-1] * np.linalg.norm(nv)
        assert np.sum(ev < 1e-9 * ev[-1]) == 1
    else:
        assert ev[0] > 1e-9 * ev[-1]
    x = rng.standard_normal(G.n)
    assert np.allclose(apply_G(G, x), Gd @ x, atol=1e-12 * np.abs(Gd).max() * G.n)
    with pytest.raises(ValueError):
        apply_G(G, np.zeros(G.n + 1))


@pytest.mark.parametrize("d", DECOMPOSITIONS, ids=decomposition_id)
def test_rhs_in_range(d):
    G = _G(d)
    g = compute_rhs_g(G)
    assert np.linalg.norm(g) > 0
    assert abs(G.range_functional(g)) <= 1e-9 * max(1.0, np.linalg.norm(g))
    assert not np.any(compute_rhs_g(G, np.zeros(G.ts.n_w)))


@pytest.mark.parametrize("d", DECOMPOSITIONS, ids=decomposition_id)
def test_preconditioners_spd_and_ordered(d):
    ts = tilde(*d)
    L, D = LumpedPreconditioner(ts).dense(), DirichletPreconditioner(ts).dense()
    for M in (L, D):
        assert np.abs(M - M.T).max() < 1e-12 * np.abs(M).max()
        assert np.linalg.eigvalsh(M)[0] > 0
    # the Schur complement never exceeds the block it is taken from
    assert np.linalg.eigvalsh(L - D)[0] > -1e-10 * np.abs(L).max()
    ng = ts.n_gamma
    assert np.allclose(np.diag(L)[:ng], 1 / ts.h**2)
    assert np.allclose(IdentityPreconditioner(ts).dense(), np.eye(ts.n_x))
    with pytest.raises(ValueError):
        make_preconditioner(ts, "neumann")


def test_dirichlet_block_is_harmonic_schur_complement(rng):
    ts = tilde("th", "full", "corner", False)
    M = DirichletPreconditioner(ts)
    A = ts.A_rr.toarray()
    d, i = ts.dual_pos, ts.ivel_pos
    S = A[np.ix_(d, d)] - A[np.ix_(d, i)] @ np.linalg.solve(A[np.ix_(i, i)], A[np.ix_(i, d)])
    v = rng.standard_normal(len(d))
    assert np.allclose(M.harmonic(v), S @ v, atol=1e-10)


def test_pcg_small_systems():
    I = np.eye(5)
    rep = pcg(lambda x: I @ x, lambda x: x, np.arange(1.0, 6.0))
    assert rep.iterations == 1 and rep.converged and abs(rep.lambda_min - 1) < 1e-14
    D = np.diag([1.0, 2.0, 3.0])
    rep = pcg(lambda x: D @ x, lambda x: x, np.ones(3), rtol=1e-12)
    assert rep.iterations == 3 and np.allclose(rep.solution, [1, 0.5, 1 / 3])
    assert np.allclose([rep.lambda_min, rep.lambda_max], [1, 3], atol=1e-10)
    # an exact preconditioner converges at once
    rep = pcg(lambda x: D @ x, lambda x: np.linalg.solve(D, x), np.ones(3))
    assert rep.iterations == 1
    zero = pcg(lambda x: D @ x, lambda x: x, np.zeros(3))
    assert zero.iterations == 0 and np.isnan(zero.lambda_min)
    with pytest.raises(PcgBreakdown):
        pcg(lambda x: -x, lambda x: x, np.ones(3))
    capped = pcg(lambda x: np.diag(np.arange(1.0, 51)) @ x, lambda x: x, np.ones(50), maxit=3)
    assert capped.iterations == 3 and not capped.converged


def test_lanczos_matrix_matches_dense_spectrum(rng):
    Q, _ = np.linalg.qr(rng.standard_normal((6, 6)))
    ev = np.array([0.5, 1, 2, 3, 5, 8.0])
    A = Q @ np.diag(ev) @ Q.T
    rep = pcg(lambda x: A @ x, lambda x: x, rng.standard_normal(6), rtol=1e-14)
    assert rep.iterations == 6
    assert np.allclose(tridiag_eig(rep.lanczos), ev, atol=1e-8)
    T = lanczos_from_cg([1.0], [])
    assert isinstance(T, SymTridiagonal) and np.allclose(T.toarray(), [[1.0]])


@pytest.mark.parametrize("d", DECOMPOSITIONS, ids=decomposition_id)
@pytest.mark.parametrize("kind", ["lumped", "dirichlet"])
def test_spectrum_oracle_agrees_with_lanczos(d, kind):
    G = _G(d)
    M = make_preconditioner(G.ts, kind)
    ev = spectrum_oracle(G, M)
    assert ev[0] > 0
    rep = pcg(G, M, compute_rhs_g(G), rtol=1e-10)
    assert rep.converged
    # Ritz values lie inside the spectrum and reach its ends once converged
    assert ev[0] * (1 - 1e-8) <= rep.lambda_min <= ev[0] * 1.05
    assert ev[-1] * 0.95 <= rep.lambda_max <= ev[-1] * (1 + 1e-8)


@pytest.mark.parametrize("element,pgamma", [("th", "full"), ("dp", "one")])
def test_edge_averages_shrink_spectrum(element, pgamma):
    lmax = {}
    for primal in ("corner", "corner-edge"):
        G = GOperator(tilde(element, pgamma, primal, False, nsub=3, m=4))
        lmax[primal] = spectrum_oracle(G, LumpedPreconditioner(G.ts))[-1]
    assert lmax["corner-edge"] < lmax["corner"]


def test_li05_and_monolithic_agree():
    li = _G(("dp", "empty", "corner-edge", True))
    mono = GOperator(tilde("dp", "empty", "corner-edge", False, solver="monolithic"))
    assert li.n == mono.n
    assert np.allclose(li.dense(), mono.dense(), atol=1e-10)
    assert np.allclose(compute_rhs_g(li), compute_rhs_g(mono), atol=1e-10)
    its = [pcg(G, make_preconditioner(G.ts, "dirichlet"), compute_rhs_g(G)).iterations for G in (li, mono)]
    assert its[0] == its[1]


@pytest.mark.parametrize("d", DECOMPOSITIONS, ids=decomposition_id)
def test_back_substitution_reproduces_direct_solve(d):
    ts = tilde(*d)
    mesh, dm, _, gl = problem(d[0], 2, 4)
    G = GOperator(ts)
    rep = pcg(G, make_preconditioner(ts, "dirichlet"), compute_rhs_g(G), rtol=1e-10)
    sol = back_substitute(ts, rep.solution, Z=gl.Z)
    assert sol.dual_jump < 1e-8
    assert gl.residual(sol.u, sol.p) < 1e-7
    u, p = gl.direct_solve()
    e_dd, e_dir = error_norms(dm, sol.u, sol.p), error_norms(dm, u, p)
    assert abs(e_dd.velocity_h1 / e_dir.velocity_h1 - 1) < 1e-2
    assert abs(e_dd.pressure_l2 / e_dir.pressure_l2 - 1) < 1e-2
