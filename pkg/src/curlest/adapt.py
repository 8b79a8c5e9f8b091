"""Adaptive refinement driver: solve, estimate, mark, refine."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import equilibrate as eqm
from . import femsys as fem
from . import residual as resm
from .mesh import Mesh, refine

log = logging.getLogger("curlest")


@dataclass
class AdaptiveConfig:
    theta: float = 0.5
    max_levels: int = 8
    max_dofs: int = 200_000
    estimator: str = "eq"          # which estimators to report: eq | res | both
    degree: int = 1
    aux_degree: int | None = None  # defaults to degree
    strict_a2: bool = False
    solver: fem.SolverConfig = field(default_factory=fem.SolverConfig)
    threads: int = 1
    keep_marks: bool = False
    verify: bool = False

    def __post_init__(self):
        if not 0.0 < self.theta <= 1.0:
            raise ValueError("bulk parameter must be in (0, 1]")
        if self.aux_degree is None:
            self.aux_degree = self.degree


def dorfler_mark(etas: np.ndarray, theta: float) -> set:
    """Minimal-cardinality bulk set carrying a theta fraction of the squared
    indicator; ties broken by ascending tet id for determinism."""
    etas = np.asarray(etas, dtype=float)
    if (etas < 0).any():
        raise ValueError("indicators must be non-negative")
    sq = etas ** 2
    total = sq.sum()
    if total == 0.0:
        return set()
    order = np.lexsort((np.arange(len(sq)), -sq))
    csum = np.cumsum(sq[order])
    count = int(np.searchsorted(csum, theta * total - 1e-15 * total) + 1)
    count = min(count, len(sq))
    return set(int(t) for t in order[:count])


def solve_level(mesh: Mesh, mu: fem.MaterialField, j: fem.CurrentDensity,
                cfg: AdaptiveConfig):
    """Assemble, correct, and solve one mesh level; returns (dofmap, u, Hh)."""
    dm = fem.build_dofmap(mesh, fem.KIND_NEDELEC, cfg.degree,
                          homogeneous_boundary=True)
    A = fem.assemble_curlcurl(mesh, dm, mu)
    M = fem.assemble_mass(mesh, dm)
    data = j
    if cfg.strict_a2 and not j.is_polynomial:
        data = fem.project_current(mesh, j.func, cfg.aux_degree)
    b = fem.assemble_rhs(mesh, dm, data)
    b = fem.gradient_correction(mesh, dm, b)
    u = fem.solve_magnetostatic(A, b, dm, cfg.solver, mass=M)
    Hh, _ = fem.compute_Hh(mesh, dm, u, mu)
    return dm, u, Hh, data


def adaptive_loop(problem, cfg: AdaptiveConfig):
    """Run the adaptive cycle on a problem description.

    ``problem`` provides initial_mesh(), mu, current(), and optionally
    exact_H.  Marking always uses the equilibrated per-element indicators;
    the residual estimator is computed for reporting when requested.
    Returns (rows, meshes): one report row per level plus the mesh sequence
    (needed for reference-solution error studies).
    """
    mesh = problem.initial_mesh()
    mu = problem.mu
    j = problem.current()
    rows = []
    meshes = [mesh]
    for level in range(cfg.max_levels):
        t0 = time.perf_counter()
        dm, u, Hh, data = solve_level(mesh, mu, j, cfg)
        t_solve = time.perf_counter() - t0

        t0 = time.perf_counter()
        out = eqm.estimate(mesh, mu, data, Hh, cfg.aux_degree,
                           strict_a2=cfg.strict_a2, threads=cfg.threads)
        t_est = time.perf_counter() - t0
        eta_T = out.result.eta_T
        row = {
            "level": level,
            "n_tets": mesh.n_tets,
            "n_dofs": dm.n_free,
            "h_max": mesh.h_max(),
            "eta_h": out.result.eta_h,
            "t_solve": t_solve,
            "t_estimate": t_est,
        }
        row.update({k: out.result.diagnostics[k] for k in
                    ("max_re_abs", "max_re_variation", "oscillation",
                     "step3_max_residual", "lam_scale")})
        if cfg.verify:
            rep = eqm.verify_equilibrium(mesh, mu, data, Hh, out)
            row["eq_elem_rel"] = rep["elem_resid_rel"]
            row["eq_face_rel"] = rep["face_resid_rel"]
        if cfg.estimator in ("res", "both"):
            rr = resm.compute_residual_estimator(mesh, mu, j, Hh, cfg.degree)
            row["mu_h"] = rr.mu_h
        exact_H = getattr(problem, "exact_H", None)
        if exact_H is not None:
            err = fem.l2_error_against(mesh, mu, Hh, exact_H, 2 * cfg.degree + 4)
            row["error"] = err
            row["eff_eq"] = out.result.eta_h / err if err else np.inf
            if "mu_h" in row:
                row["eff_res"] = row["mu_h"] / err if err else np.inf
        marked = dorfler_mark(eta_T, cfg.theta)
        row["marked"] = len(marked)
        if cfg.keep_marks:
            row["marked_ids"] = sorted(marked)
        rows.append(row)
        log.info("level %d: %d tets, %d dofs, eta=%.3e", level, mesh.n_tets,
                 dm.n_free, out.result.eta_h)
        if level == cfg.max_levels - 1 or dm.n_free >= cfg.max_dofs:
            break
        t0 = time.perf_counter()
        mesh = refine(mesh, marked)
        rows[-1]["t_refine"] = time.perf_counter() - t0
        meshes.append(mesh)
    return rows, meshes
