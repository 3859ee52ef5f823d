"""Reduced operator ``G``, preconditioners, PCG with Lanczos estimates, back substitution.

The reduced unknown is ``x = (p_Gamma, lambda)`` and the reduced system is
``G x = g`` with ``G = B_C A~^{-1} B_C^T`` and ``g = B_C A~^{-1} f``.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .ddspace import TildeSystem, _take
from .linalg import SymTridiagonal, dense_sym_eig, tridiag_eig


class PcgBreakdown(RuntimeError):
    """A nonpositive curvature or ``<z, r>`` was met; the operators are not SPD."""


# --- G ---------------------------------------------------------------------

class GOperator:
    """Matrix-free ``G = B_C A~^{-1} B_C^T`` on ``X = p_Gamma + Lambda``."""

    def __init__(self, ts: TildeSystem):
        self.ts = ts
        self.B_C = ts.B_C
        self.B_Ct = self.B_C.T.tocsr()
        self.n = ts.n_x

    @property
    def shape(self):
        return (self.n, self.n)

    def apply(self, x: np.ndarray) -> np.ndarray:
        return apply_G(self, x)

    __call__ = apply

    def null_vector(self) -> np.ndarray:
        """``(1_{p_Gamma}, lambda_0)``; all zeros when ``G`` is nonsingular."""
        _, pg, lam = self.ts.null_vector()
        return np.concatenate([pg, lam])

    def range_functional(self, x: np.ndarray) -> float:
        """Inner product with the null vector; zero iff ``x`` is in the range of ``G``."""
        return float(self.null_vector() @ x)

    def dense(self) -> np.ndarray:
        return _dense_from_apply(self.apply, self.n)


def apply_G(op: GOperator, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (op.n,):
        raise ValueError(f"expected vector of length {op.n}, got {x.shape}")
    return op.B_C @ op.ts.apply_inverse(op.B_Ct @ x)


def compute_rhs_g(op: GOperator, f: np.ndarray | None = None) -> np.ndarray:
    """``g = B_C A~^{-1} f``; ``f`` defaults to the assembled load of the tilde system."""
    f = op.ts.f if f is None else np.asarray(f, dtype=float)
    if not np.any(f):
        return np.zeros(op.n)
    return op.B_C @ op.ts.apply_inverse(f)


def _dense_from_apply(apply, n: int) -> np.ndarray:
    M = np.empty((n, n))
    e = np.zeros(n)
    for j in range(n):
        e[j] = 1.0
        M[:, j] = apply(e)
        e[j] = 0.0
    return M


# --- preconditioners ---------------------------------------------------------

class _Preconditioner:
    kind = "none"

    def __init__(self, ts: TildeSystem):
        self.ts = ts
        self.n_gamma = ts.n_gamma
        self.n = ts.n_x
        self.BD = ts.jumps.BD
        self.BDt = ts.jumps.BD.T.tocsr()
        self.scale = 1.0 / ts.h**2

    def _split(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape != (self.n,):
            raise ValueError(f"expected vector of length {self.n}, got {x.shape}")
        return x[: self.n_gamma], x[self.n_gamma:]

    def _lambda_block(self, lam):
        raise NotImplementedError

    def apply(self, x):
        pg, lam = self._split(x)
        return np.concatenate([self.scale * pg, self._lambda_block(lam)])

    __call__ = apply

    def dense(self) -> np.ndarray:
        return _dense_from_apply(self.apply, self.n)


class IdentityPreconditioner(_Preconditioner):
    def apply(self, x):
        self._split(x)
        return np.array(x, dtype=float)


class LumpedPreconditioner(_Preconditioner):
    """``diag(h^-2 I, B_D A_DeltaDelta B_D^T)``: sparse products only."""

    kind = "lumped"

    def __init__(self, ts: TildeSystem):
        super().__init__(ts)
        self.A_dd = ts.A_dd

    def _lambda_block(self, lam):
        return self.BD @ (self.A_dd @ (self.BDt @ lam))


class DirichletPreconditioner(_Preconditioner):
    """``diag(h^-2 I, B_D H_Delta B_D^T)`` with ``H_Delta`` the discrete harmonic Schur complement.

    ``H_Delta v = A_DD v - A_DI A_II^{-1} A_ID v``: interior velocities only,
    so every solve is with the SPD block-diagonal ``A_II``.
    """

    kind = "dirichlet"

    def __init__(self, ts: TildeSystem):
        super().__init__(ts)
        self.A_dd = ts.A_dd
        self.A_di = _take(ts.A_rr, ts.dual_pos, ts.ivel_pos)
        self.A_id = self.A_di.T.tocsr()
        A_ii = _take(ts.A_rr, ts.ivel_pos, ts.ivel_pos)
        self.interior = spla.splu(sp.csc_matrix(A_ii)) if A_ii.shape[0] else None

    def harmonic(self, v):
        out = self.A_dd @ v
        if self.interior is not None:
            out -= self.A_di @ self.interior.solve(self.A_id @ v)
        return out

    def _lambda_block(self, lam):
        return self.BD @ self.harmonic(self.BDt @ lam)


def apply_lumped(M: LumpedPreconditioner, x):
    return M.apply(x)


def apply_dirichlet(M: DirichletPreconditioner, x):
    return M.apply(x)


PRECONDITIONERS = {
    "none": IdentityPreconditioner,
    "lumped": LumpedPreconditioner,
    "dirichlet": DirichletPreconditioner,
}


def make_preconditioner(ts: TildeSystem, kind: str):
    try:
        return PRECONDITIONERS[str(kind).lower()](ts)
    except KeyError:
        raise ValueError(f"unknown preconditioner {kind!r}") from None


# --- PCG -------------------------------------------------------------------

@dataclass
class PcgReport:
    iterations: int
    converged: bool
    residual_history: list = field(repr=False)
    precond_residual_history: list = field(repr=False)
    lanczos: SymTridiagonal | None = field(repr=False)
    lambda_min: float
    lambda_max: float
    solution: np.ndarray = field(repr=False)
    wall_time: float

    def to_dict(self) -> dict:
        return {
            "iterations": self.iterations,
            "converged": self.converged,
            "lambda_min": self.lambda_min,
            "lambda_max": self.lambda_max,
            "residual_history": list(map(float, self.residual_history)),
            "wall_time": self.wall_time,
        }


def lanczos_from_cg(alphas, betas) -> SymTridiagonal:
    """Tridiagonal Lanczos matrix implied by the CG step lengths and ``beta`` ratios."""
    a = np.asarray(alphas, dtype=float)
    b = np.asarray(betas, dtype=float)[: max(len(a) - 1, 0)]
    d = 1.0 / a
    d[1:] += b / a[:-1]
    off = np.sqrt(b) / a[:-1]
    return SymTridiagonal(d, off)


def pcg(G, Minv, g, rtol: float = 1e-6, maxit: int = 500) -> PcgReport:
    """Preconditioned CG from a zero initial guess.

    Stops when the unpreconditioned residual satisfies ``||r|| <= rtol ||g||``.
    ``G`` and ``Minv`` are callables (or objects with ``apply``).
    """
    t0 = time.perf_counter()
    Gf = G.apply if hasattr(G, "apply") else G
    Mf = Minv.apply if hasattr(Minv, "apply") else Minv
    g = np.asarray(g, dtype=float)
    x = np.zeros_like(g)
    gnorm = np.linalg.norm(g)
    hist, phist = [1.0], []
    if gnorm == 0.0:
        return PcgReport(0, True, hist, phist, None, float("nan"), float("nan"), x, time.perf_counter() - t0)
    r = g.copy()
    z = Mf(r)
    rz = float(r @ z)
    if rz <= 0:
        raise PcgBreakdown(f"<z, r> = {rz:.3e} <= 0 at iteration 0")
    phist.append(1.0)
    rz0 = rz
    p = z.copy()
    alphas, betas = [], []
    converged = False
    it = 0
    while it < maxit:
        q = Gf(p)
        pq = float(p @ q)
        if pq <= 0:
            raise PcgBreakdown(f"<p, Gp> = {pq:.3e} <= 0 at iteration {it}")
        alpha = rz / pq
        x += alpha * p
        r -= alpha * q
        alphas.append(alpha)
        it += 1
        rel = np.linalg.norm(r) / gnorm
        hist.append(float(rel))
        if rel <= rtol:
            converged = True
            break
        z = Mf(r)
        rz_new = float(r @ z)
        if rz_new <= 0:
            raise PcgBreakdown(f"<z, r> = {rz_new:.3e} <= 0 at iteration {it}")
        phist.append(float(np.sqrt(rz_new / rz0)))
        beta = rz_new / rz
        betas.append(beta)
        p = z + beta * p
        rz = rz_new
    T = lanczos_from_cg(alphas, betas)
    ev = tridiag_eig(T)
    return PcgReport(it, converged, hist, phist, T, float(ev[0]), float(ev[-1]), x, time.perf_counter() - t0)


# --- back substitution -------------------------------------------------------

@dataclass
class SolutionFields:
    """Recovered subdomain unknowns and the assembled continuous fields."""

    w: np.ndarray = field(repr=False)  # (x_r, x_Pi) of the partially assembled space
    p_gamma: np.ndarray = field(repr=False)
    lam: np.ndarray = field(repr=False)
    u_dual: np.ndarray = field(repr=False)  # broken dual values before averaging
    dual_jump: float  # ||B_Delta u_Delta|| / ||u_Delta||
    u: np.ndarray = field(repr=False)  # global velocity dofs
    p: np.ndarray = field(repr=False)  # global pressure dofs, zero mean


def back_substitute(ts: TildeSystem, x: np.ndarray, f: np.ndarray | None = None, Z=None) -> SolutionFields:
    """``w = A~^{-1}(f - B_C^T x)`` mapped back to continuous global fields.

    Shared velocity copies are averaged with equal weights; the pressure is
    shifted to zero mean (in the ``Z`` inner product when given).
    """
    f = ts.f if f is None else f
    x = np.asarray(x, dtype=float)
    w = ts.apply_inverse(f - ts.B_C.T @ x)
    pg, lam = x[: ts.n_gamma], x[ts.n_gamma:]
    ud = w[: ts.n_r][ts.dual_pos]
    jump = np.linalg.norm(ts.jumps.B @ ud) / max(np.linalg.norm(ud), 1e-300)

    br = ts.broken
    nodal = ts.layout.T @ ts.to_broken_coords(w, pg)
    dm = br.dofmap
    cnt = np.bincount(br.vel_gdof, minlength=dm.n_vel)
    u = np.bincount(br.vel_gdof, weights=nodal[: br.n_vel], minlength=dm.n_vel) / cnt
    pc = np.bincount(br.pres_gdof, minlength=dm.n_pres)
    p = np.bincount(br.pres_gdof, weights=nodal[br.n_vel:], minlength=dm.n_pres) / pc
    if Z is None:
        p = p - p.mean()
    else:
        ones = np.ones(len(p))
        p = p - (ones @ (Z @ p)) / (ones @ (Z @ ones))
    return SolutionFields(w=w, p_gamma=pg, lam=lam, u_dual=ud, dual_jump=float(jump), u=u, p=p)


# --- dense spectrum oracle -------------------------------------------------

MAX_ORACLE_DIM = 2000


def spectrum_oracle(G: GOperator, Minv) -> np.ndarray:
    """Nonzero eigenvalues of ``M^{-1} G`` (ascending), from dense matrices.

    With ``Minv = L L^T`` the product ``M^{-1} G`` is similar to
    ``L^T G L``; the known null vector of ``G`` contributes exactly one zero
    eigenvalue, which is removed.
    """
    n = G.n
    if n > MAX_ORACLE_DIM:
        raise ValueError(f"reduced dimension {n} exceeds the oracle limit {MAX_ORACLE_DIM}")
    Gd = G.dense()
    Gd = 0.5 * (Gd + Gd.T)
    Md = Minv.dense() if hasattr(Minv, "dense") else _dense_from_apply(Minv, n)
    Md = 0.5 * (Md + Md.T)
    L = sla.cholesky(Md, lower=True)
    S = L.T @ Gd @ L
    ev, _ = dense_sym_eig(0.5 * (S + S.T))
    nv = G.null_vector()
    n_null = 1 if np.linalg.norm(nv) > 0 else 0
    return ev[n_null:]
