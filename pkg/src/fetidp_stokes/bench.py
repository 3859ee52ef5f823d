"""Experiment runner: single cases, table presets, result emitters, matrix dumps."""
from __future__ import annotations

import csv
import dataclasses
import io
import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .ddspace import (ConfigurationError, PressureMode, PrimalChoice, build_tilde_system, classify_dofs,
                      select_pressure_split)
from .dofmap import build_dof_map
from .fem import assemble_global, assemble_subdomains, error_norms, pressure_mass
from .mesh import ElementKind, build_mesh
from .mmio import write_matrix_market
from .solver import GOperator, back_substitute, compute_rhs_g, make_preconditioner, pcg

WORKERS_ENV = "FETIDP_WORKERS"
PRECONDITIONER_KINDS = ("lumped", "dirichlet", "none")
CSV_COLUMNS = ("element", "pgamma", "primal", "precond", "nsub", "m", "iters", "lambda_min", "lambda_max",
               "err_u_h1", "err_p_l2", "assembly_s", "factor_s", "solve_s")
TIMING_COLUMNS = ("assembly_s", "factor_s", "solve_s")
MAX_DUMP_DOFS = 200_000
MAX_DENSE_DUMP = 2000


def default_workers() -> int:
    raw = os.environ.get(WORKERS_ENV, "").strip()
    if raw:
        try:
            n = int(raw)
        except ValueError:
            raise ConfigurationError(f"{WORKERS_ENV} must be a positive integer, got {raw!r}") from None
        if n < 1:
            raise ConfigurationError(f"{WORKERS_ENV} must be a positive integer, got {raw!r}")
        return n
    return os.cpu_count() or 1


@dataclass(frozen=True)
class CaseConfig:
    """One FETI-DP experiment.  Invalid combinations raise :class:`ConfigurationError`.

    ``nsub`` is the number of subdomains per direction, ``m`` the ratio H/h.
    ``solver="monolithic"`` replaces subdomain/coarse solves with one direct
    factorization of the partially assembled operator (needed for the
    singular p_Gamma empty + edge-average variant without li05).
    """

    element: str = "TaylorHood"
    pgamma: str = "full"
    primal: str = "corner"
    precond: str = "lumped"
    nsub: int = 4
    m: int = 8
    rtol: float = 1e-6
    maxit: int = 500
    li05: bool = False
    seed: int = 0
    solver: str = "schur"

    def __post_init__(self):
        try:
            kind = ElementKind.parse(self.element)
            mode = PressureMode.parse(self.pgamma)
            choice = PrimalChoice.parse(self.primal)
        except ValueError as exc:
            raise ConfigurationError(str(exc)) from None
        object.__setattr__(self, "element", kind.value)
        object.__setattr__(self, "pgamma", mode.value)
        object.__setattr__(self, "primal", choice.value)
        object.__setattr__(self, "precond", str(self.precond).lower())
        if self.precond not in PRECONDITIONER_KINDS:
            raise ConfigurationError(f"precond must be one of {PRECONDITIONER_KINDS}, got {self.precond!r}")
        if self.solver not in ("schur", "monolithic"):
            raise ConfigurationError("solver must be 'schur' or 'monolithic'")
        if int(self.nsub) < 1 or int(self.m) < 2 or int(self.m) % 2:
            raise ConfigurationError("nsub must be >= 1 and m an even number >= 2")
        if not (0 < self.rtol < 1) or self.maxit < 1:
            raise ConfigurationError("rtol must lie in (0, 1) and maxit be >= 1")
        if mode is PressureMode.FullBoundary and kind is not ElementKind.TaylorHood:
            raise ConfigurationError("pgamma=full requires continuous pressure (element th)")
        if mode is not PressureMode.FullBoundary and kind is not ElementKind.MacroDP:
            raise ConfigurationError(f"pgamma={mode.value} requires discontinuous pressure (element dp)")
        if self.li05 and mode is not PressureMode.Empty:
            raise ConfigurationError("li05 applies only to pgamma=empty")
        if (mode is PressureMode.Empty and choice is PrimalChoice.CornerPlusEdgeAverage and not self.li05
                and self.solver == "schur"):
            raise ConfigurationError("empty+edge requires li05 (A_rr is singular otherwise)")

    @property
    def no_bound(self) -> bool:
        """Dirichlet with corners only has no scalable condition number bound."""
        return self.precond == "dirichlet" and self.primal == PrimalChoice.CornerOnly.value

    @property
    def label(self) -> str:
        return f"{self.element}/{self.pgamma}/{self.primal}/{self.precond} {self.nsub}x{self.nsub} H/h={self.m}"


@dataclass
class CaseResult:
    config: CaseConfig
    iterations: int
    converged: bool
    lambda_min: float
    lambda_max: float
    err_u_h1: float
    err_p_l2: float
    assembly_s: float
    factor_s: float
    solve_s: float
    per_iteration_s: float
    n_lambda: int = 0
    n_gamma: int = 0
    dual_jump: float = 0.0
    residual_history: list = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["config"] = dataclasses.asdict(self.config)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "CaseResult":
        d = dict(d)
        d["config"] = CaseConfig(**d["config"])
        return cls(**d)

    def row(self) -> dict:
        c = self.config
        return {
            "element": c.element, "pgamma": c.pgamma, "primal": c.primal, "precond": c.precond,
            "nsub": c.nsub, "m": c.m, "iters": self.iterations, "lambda_min": self.lambda_min,
            "lambda_max": self.lambda_max, "err_u_h1": self.err_u_h1, "err_p_l2": self.err_p_l2,
            "assembly_s": self.assembly_s, "factor_s": self.factor_s, "solve_s": self.solve_s,
        }


@dataclass
class CaseArtifacts:
    """Intermediate objects of a case, for dumps and tests."""

    mesh: object
    dofmap: object
    broken: object
    tilde: object
    G: GOperator
    M: object


def build_case(cfg: CaseConfig) -> tuple[CaseArtifacts, float, float]:
    t0 = time.perf_counter()
    mesh = build_mesh(cfg.nsub, cfg.nsub, cfg.m, cfg.element)
    dm = build_dof_map(mesh)
    broken = assemble_subdomains(mesh, dm)
    t1 = time.perf_counter()
    cls = classify_dofs(dm, cfg.primal)
    split = select_pressure_split(dm, cfg.pgamma, cfg.li05, cfg.primal, allow_singular=cfg.solver == "monolithic")
    ts = build_tilde_system(broken, cls, None, split, solver=cfg.solver)
    G = GOperator(ts)
    M = make_preconditioner(ts, cfg.precond)
    t2 = time.perf_counter()
    return CaseArtifacts(mesh, dm, broken, ts, G, M), t1 - t0, t2 - t1


def run_case(cfg: CaseConfig) -> CaseResult:
    """Mesh, decomposition, tilde system, PCG, back substitution and errors."""
    art, t_asm, t_fac = build_case(cfg)
    t0 = time.perf_counter()
    g = compute_rhs_g(art.G)
    rep = pcg(art.G, art.M, g, rtol=cfg.rtol, maxit=cfg.maxit)
    sol = back_substitute(art.tilde, rep.solution, Z=pressure_mass(art.mesh))
    t_solve = time.perf_counter() - t0
    err = error_norms(art.dofmap, sol.u, sol.p)
    return CaseResult(
        config=cfg,
        iterations=rep.iterations,
        converged=rep.converged,
        lambda_min=rep.lambda_min,
        lambda_max=rep.lambda_max,
        err_u_h1=err.velocity_h1,
        err_p_l2=err.pressure_l2,
        assembly_s=t_asm,
        factor_s=t_fac,
        solve_s=t_solve,
        per_iteration_s=rep.wall_time / max(rep.iterations, 1),
        n_lambda=art.tilde.n_lambda,
        n_gamma=art.tilde.n_gamma,
        dual_jump=sol.dual_jump,
        residual_history=rep.residual_history,
    )


# --- tables ----------------------------------------------------------------

TABLE_SETTINGS = {
    "table1": ("corner", "lumped"),
    "table2": ("corner-edge", "lumped"),
    "table3": ("corner", "dirichlet"),
    "table4": ("corner-edge", "dirichlet"),
}
VARIANTS = (("TaylorHood", "full"), ("MacroDP", "one"), ("MacroDP", "empty"))
SUBDOMAIN_SWEEP = (4, 8, 16, 24, 32)  # at H/h = 8
RATIO_SWEEP = (4, 8, 16, 24, 32)  # at 8 x 8 subdomains


def variant_config(element, pgamma, primal, precond, nsub, m, **kw) -> CaseConfig:
    li05 = pgamma == "empty" and PrimalChoice.parse(primal) is PrimalChoice.CornerPlusEdgeAverage
    return CaseConfig(element=element, pgamma=pgamma, primal=primal, precond=precond, nsub=nsub, m=m,
                      li05=li05, **kw)


def preset(name: str) -> list[CaseConfig]:
    """The 30 cases of a table: 3 variants x (5 subdomain counts + 5 ratios)."""
    try:
        primal, precond = TABLE_SETTINGS[name]
    except KeyError:
        raise ConfigurationError(f"unknown preset {name!r}; choose from {sorted(TABLE_SETTINGS)}") from None
    rows = [(n, 8) for n in SUBDOMAIN_SWEEP] + [(8, m) for m in RATIO_SWEEP]
    return [variant_config(el, pg, primal, precond, n, m) for el, pg in VARIANTS for n, m in rows]


def _run_indexed(cfg):
    return run_case(cfg)


def run_table(configs, repeat: int = 1, workers: int | None = None) -> list[CaseResult]:
    """Run every config ``repeat`` times; results come back in input order."""
    configs = list(configs)
    for i, c in enumerate(configs):
        if not isinstance(c, CaseConfig):
            try:
                configs[i] = CaseConfig(**c)
            except (ConfigurationError, TypeError) as exc:
                raise ConfigurationError(f"config #{i}: {exc}") from None
    jobs = [c for c in configs for _ in range(max(int(repeat), 1))]
    if not jobs:
        return []
    workers = default_workers() if workers is None else int(workers)
    if workers <= 1 or len(jobs) == 1:
        return [run_case(c) for c in jobs]
    with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
        return list(pool.map(_run_indexed, jobs))


# --- output ----------------------------------------------------------------

def _csv_text(results) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    w.writeheader()
    for r in results:
        row = r.row()
        for k, v in row.items():
            if isinstance(v, float):
                row[k] = repr(v)
        w.writerow(row)
    return buf.getvalue()


def _markdown_text(results) -> str:
    groups: dict = {}
    for r in results:
        c = r.config
        groups.setdefault((c.primal, c.precond), {}).setdefault((c.element, c.pgamma), []).append(r)
    out = []
    for (primal, precond), variants in groups.items():
        out.append(f"### {precond} preconditioner, {primal} primal variables\n")
        for (element, pgamma), rows in variants.items():
            out.append(f"**{element}, p_Gamma {pgamma}**\n")
            out.append("| #sub | H/h | lambda_min | lambda_max | iter |")
            out.append("|---:|---:|---:|---:|---:|")
            for r in rows:
                n = r.config.nsub
                flag = "" if r.converged else " (not converged)"
                out.append(f"| {n}x{n} | {r.config.m} | {r.lambda_min:.2f} | {r.lambda_max:.2f} | {r.iterations}{flag} |")
            out.append("")
    return "\n".join(out)


def emit(results, fmt: str, path=None) -> str:
    """Serialize results as ``csv``, ``json`` or ``markdown``; write to ``path`` if given."""
    results = list(results)
    if fmt == "csv":
        text = _csv_text(results)
    elif fmt == "json":
        text = json.dumps([r.to_dict() for r in results], indent=1)
    elif fmt in ("markdown", "md"):
        text = _markdown_text(results)
    else:
        raise ValueError(f"unknown format {fmt!r}")
    if path is not None:
        try:
            Path(path).write_text(text)
        except OSError as exc:
            raise OSError(f"cannot write {path}: {exc}") from exc
    return text


def load_results(path) -> list[CaseResult]:
    return [CaseResult.from_dict(d) for d in json.loads(Path(path).read_text())]


def strip_timings(csv_text: str) -> str:
    """CSV with the timing columns removed, for determinism comparisons."""
    rows = list(csv.DictReader(io.StringIO(csv_text)))
    keep = [c for c in CSV_COLUMNS if c not in TIMING_COLUMNS]
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=keep, extrasaction="ignore", lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    return buf.getvalue()


# --- dumps -----------------------------------------------------------------

def dump_matrices(cfg: CaseConfig, path) -> list[Path]:
    """Write ``A, B, Z, B_delta`` (and dense ``G``, ``Minv`` when small) plus the dof sidecar."""
    mesh = build_mesh(cfg.nsub, cfg.nsub, cfg.m, cfg.element)
    dm = build_dof_map(mesh)
    if dm.n_vel + dm.n_pres > MAX_DUMP_DOFS:
        raise ValueError(f"{dm.n_vel + dm.n_pres} dofs exceed the dump limit {MAX_DUMP_DOFS}")
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    gl = assemble_global(mesh, dm)
    art, _, _ = build_case(cfg)
    files = [
        write_matrix_market(out / "A.mtx", gl.A, symmetric=True, comment="velocity stiffness"),
        write_matrix_market(out / "B.mtx", gl.B, comment="divergence"),
        write_matrix_market(out / "Z.mtx", gl.Z, symmetric=True, comment="pressure mass"),
        write_matrix_market(out / "B_delta.mtx", art.tilde.jumps.B, comment="jump operator"),
    ]
    if art.G.n <= MAX_DENSE_DUMP:
        G = art.G.dense()
        M = art.M.dense()
        files.append(write_matrix_market(out / "G.mtx", 0.5 * (G + G.T), symmetric=True, comment="reduced operator"))
        files.append(write_matrix_market(out / "Minv.mtx", M, symmetric=True, comment="preconditioner"))
    files.append(dm.write_sidecar(out / "dofs.txt"))
    return files
