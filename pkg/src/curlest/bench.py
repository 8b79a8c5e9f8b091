"""Built-in experiment definitions, error computation, and report emission."""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import adapt as adaptm
from . import equilibrate as eqm
from . import femsys as fem
from . import polyspace as ps
from . import residual as resm
from .mesh import Mesh, l_brick_mesh, unit_cube_mesh, write_vtk

CSV_SCHEMA = "v1"
CSV_COLUMNS = ("level", "resolution", "n_tets", "n_dofs", "h_max", "error",
               "eta_h", "mu_h", "eff_eq", "eff_res", "marked", "max_re_abs",
               "max_re_variation", "oscillation", "step3_max_residual")


# ---------------------------------------------------------------------------
# problem definitions
# ---------------------------------------------------------------------------

@dataclass
class ProblemSpec:
    name: str
    make_mesh: object
    base_res: int
    mu: fem.MaterialField
    j_func: object
    exact_u: object = None
    exact_H: object = None
    uniform_res: dict = field(default_factory=dict)
    analysis_grade: bool = False
    sample_fn: object = None
    notes: str = ""

    def initial_mesh(self) -> Mesh:
        return self.make_mesh(self.base_res)

    def current(self) -> fem.CurrentDensity:
        return fem.CurrentDensity(func=self.j_func, label=self.name)

    def sample_points(self, n: int, rng) -> np.ndarray:
        if self.sample_fn is not None:
            return self.sample_fn(n, rng)
        return rng.uniform(0.05, 0.95, size=(n, 3))


def _g(s):
    return s * (1.0 - s)


def cube_poly_u(p):
    x, y, z = p[:, 0], p[:, 1], p[:, 2]
    return np.stack([_g(y) * _g(z), _g(x) * _g(z), _g(x) * _g(y)], axis=1)


def cube_poly_H(p):
    x, y, z = p[:, 0], p[:, 1], p[:, 2]
    return 2.0 * np.stack([_g(x) * (z - y), _g(y) * (x - z), _g(z) * (y - x)],
                          axis=1)


def cube_poly_j(p):
    # double curl of the polynomial potential; regenerated by the symbolic
    # oracle in the test suite, kept here as plain closed-form code
    x, y, z = p[:, 0], p[:, 1], p[:, 2]
    return 2.0 * np.stack([_g(y) + _g(z), _g(x) + _g(z), _g(x) + _g(y)], axis=1)


# --- L-brick stream-function data ------------------------------------------
#
# The potential is the curl of (0, 0, w) with w a polynomial window times the
# fractional-power harmonic of the reentrant sector.  The current density is
# evaluated by high-order finite differences of w with step proportional to
# the distance from the singular edge, which keeps the relative accuracy
# uniform (the singular part is homogeneous).  Analysis grade only: no exact
# error is claimed for this problem.

_W1 = np.array([-1.0, 9.0, -45.0, 0.0, 45.0, -9.0, 1.0]) / 60.0
_W2 = np.array([2.0, -27.0, 270.0, -490.0, 270.0, -27.0, 2.0]) / 180.0
_W12 = np.convolve(_W1, _W2)
_OFF7 = np.arange(-3.0, 4.0)
_OFF13 = np.arange(-6.0, 7.0)


def _lbrick_angle(x, y):
    phi = np.arctan2(y, x)
    # branch cut along the diagonal of the removed quadrant, away from the
    # domain and from any finite-difference stencil point
    return np.where(phi < -0.25 * np.pi, phi + 2.0 * np.pi, phi)


def _lbrick_W(x, y):
    r2 = x * x + y * y
    s = r2 ** (1.0 / 3.0) * np.cos(2.0 / 3.0 * _lbrick_angle(x, y))
    return (1.0 - x * x) ** 2 * (1.0 - y * y) ** 2 * s


def _lbrick_planar_terms(x, y):
    """W_x, W_y, d(lap W)/dx, d(lap W)/dy by nested 6th-order differences."""
    r = np.hypot(x, y)
    d = np.clip(0.05 * r, 1e-8, 5e-3)
    gx = x[:, None, None] + _OFF7[None, :, None] * d[:, None, None]
    gy = y[:, None, None] + _OFF7[None, None, :] * d[:, None, None]
    Wgrid = _lbrick_W(gx, gy)                       # (n, 7, 7)
    lx = _lbrick_W(x[:, None] + _OFF13[None, :] * d[:, None], y[:, None])
    ly = _lbrick_W(x[:, None], y[:, None] + _OFF13[None, :] * d[:, None])
    Wx = Wgrid[:, :, 3] @ _W1 / d
    Wy = Wgrid[:, 3, :] @ _W1 / d
    d3 = d ** 3
    Fx = (np.einsum("nij,i,j->n", Wgrid, _W1, _W2) + lx @ _W12) / d3
    Fy = (np.einsum("nij,i,j->n", Wgrid, _W2, _W1) + ly @ _W12) / d3
    return Wx, Wy, Fx, Fy


def lbrick_u(p):
    x, y, z = p[:, 0], p[:, 1], p[:, 2]
    Z = (z * (1.0 - z)) ** 2
    Wx, Wy, _, _ = _lbrick_planar_terms(x, y)
    return np.stack([Z * Wy, -Z * Wx, np.zeros_like(x)], axis=1)


def lbrick_j(p):
    x, y, z = p[:, 0], p[:, 1], p[:, 2]
    Z = (z * (1.0 - z)) ** 2
    Zpp = 2.0 - 12.0 * z + 12.0 * z * z
    Wx, Wy, Fx, Fy = _lbrick_planar_terms(x, y)
    return np.stack([-Z * Fy - Zpp * Wy, Z * Fx + Zpp * Wx, np.zeros_like(x)],
                    axis=1)


def _lbrick_samples(n, rng):
    pts = []
    while len(pts) < n:
        p = rng.uniform([-0.95, -0.95, 0.05], [0.95, 0.95, 0.95])
        if not (p[0] > 0.02 and p[1] < -0.02):
            pts.append(p)
    return np.array(pts)


def _jump_tags(mu2: float):
    def tag(c):
        return 1 if (c[1] < 0.5 and c[2] < 0.5) else 2
    return tag


def builtin_problems() -> dict:
    problems = {}
    problems["cube_poly"] = ProblemSpec(
        name="cube_poly",
        make_mesh=unit_cube_mesh,
        base_res=2,
        mu=fem.MaterialField(1.0),
        j_func=cube_poly_j,
        exact_u=cube_poly_u,
        exact_H=cube_poly_H,
        uniform_res={1: [2, 4, 8], 2: [1, 2, 4], 3: [1, 2, 3]},
        notes="polynomial potential on the unit cube, homogeneous BC")
    problems["lbrick_singular"] = ProblemSpec(
        name="lbrick_singular",
        make_mesh=l_brick_mesh,
        base_res=2,
        mu=fem.MaterialField(1.0),
        j_func=lbrick_j,
        exact_u=lbrick_u,
        exact_H=None,
        uniform_res={1: [1, 2, 4], 2: [1, 2], 3: [1]},
        analysis_grade=True,
        sample_fn=_lbrick_samples,
        notes="reentrant-edge singular potential; current density from "
              "finite differences of the stream function (no exact-error claims)")
    for ell in (1, 2, 3):
        mu2 = 10.0 ** ell
        tag = _jump_tags(mu2)
        problems[f"cube_jump_mu_{int(mu2)}"] = ProblemSpec(
            name=f"cube_jump_mu_{int(mu2)}",
            make_mesh=lambda n, _t=tag: unit_cube_mesh(n, tag_fn=_t),
            base_res=2,
            mu=fem.MaterialField({1: 1.0, 2: mu2}),
            j_func=lambda p: np.stack(
                [np.ones(len(p)), np.zeros(len(p)), np.zeros(len(p))], axis=1),
            uniform_res={1: [2, 4], 2: [2, 4]},
            notes="discontinuous permeability, unit current; reference-"
                  "solution protocol for errors")
    return problems


def consistency_check(spec: ProblemSpec, n: int = 100, tol: float = 1e-8,
                      seed: int = 1234) -> float:
    """Finite-difference double-curl check of the shipped closed forms.

    Guards transcription errors: at random interior points, curl(exact_H)
    must match j and (for unit permeability) curl(exact_u) must match H.
    Returns the worst relative mismatch.
    """
    if spec.exact_H is None:
        raise ValueError(f"{spec.name} has no exact field to check against")
    rng = np.random.default_rng(seed)
    pts = spec.sample_points(n, rng)
    h = 1e-5

    def fd_curl(fn, p):
        out = np.zeros((len(p), 3))
        d = np.zeros((len(p), 3, 3))
        for a in range(3):
            dp = np.zeros(3)
            dp[a] = h
            d[:, a, :] = (fn(p + dp) - fn(p - dp)) / (2.0 * h)
        out[:, 0] = d[:, 1, 2] - d[:, 2, 1]
        out[:, 1] = d[:, 2, 0] - d[:, 0, 2]
        out[:, 2] = d[:, 0, 1] - d[:, 1, 0]
        return out

    jv = spec.j_func(pts)
    scale = max(float(np.abs(jv).max()), 1.0)
    worst = float(np.abs(fd_curl(spec.exact_H, pts) - jv).max()) / scale
    if spec.exact_u is not None and len(spec.mu.values) == 1:
        mu0 = next(iter(spec.mu.values.values()))
        Hv = spec.exact_H(pts)
        hscale = max(float(np.abs(Hv).max()), 1.0)
        worst = max(worst, float(
            np.abs(fd_curl(spec.exact_u, pts) / mu0 - Hv).max()) / hscale)
    if worst > tol:
        raise ValueError(f"{spec.name}: closed forms inconsistent ({worst:.2e})")
    return worst


def compute_error(mesh: Mesh, mu: fem.MaterialField, Hh: fem.BrokenPolyField,
                  exact_H, k: int) -> float:
    """Energy-norm error against the analytic field, quadrature 2k+4."""
    return fem.l2_error_against(mesh, mu, Hh, exact_H, 2 * k + 4)


# ---------------------------------------------------------------------------
# experiment runner
# ---------------------------------------------------------------------------

@dataclass
class RunConfig:
    degree: int = 1
    aux_degree: int | None = None
    mode: str = "uniform"          # uniform | adaptive
    levels: int | None = None
    theta: float = 0.5
    estimator: str = "both"        # eq | res | both
    strict_a2: bool = False
    max_dofs: int = 200_000
    threads: int = 1
    solver_backend: str = "direct"
    solver_tol: float = 1e-10
    solver_max_iter: int = 50000
    out_dir: str | None = None
    vtk: bool = False
    dump_matrix: bool = False
    analysis_grade: bool = False
    reference_errors: bool = False
    verify: bool = False

    def __post_init__(self):
        if self.aux_degree is None:
            self.aux_degree = self.degree
        if self.aux_degree < self.degree:
            raise ValueError("auxiliary degree must be >= degree")

    def solver(self) -> fem.SolverConfig:
        return fem.SolverConfig(self.solver_backend, self.solver_tol,
                                self.solver_max_iter)


@dataclass
class ExperimentReport:
    problem: str
    rows: list
    metadata: dict

    def write_csv(self, path) -> None:
        lines = [f"# curlest-report schema={CSV_SCHEMA}",
                 ",".join(CSV_COLUMNS)]
        for row in self.rows:
            cells = []
            for col in CSV_COLUMNS:
                v = row.get(col)
                if v is None:
                    cells.append("")
                elif isinstance(v, (int, np.integer)):
                    cells.append(str(int(v)))
                else:
                    cells.append(f"{float(v):.12e}")
            lines.append(",".join(cells))
        Path(path).write_text("\n".join(lines) + "\n")

    def write_json(self, path) -> None:
        payload = {"problem": self.problem, "schema": CSV_SCHEMA,
                   "metadata": self.metadata, "rows": self.rows}

        def default(o):
            if isinstance(o, (np.integer,)):
                return int(o)
            if isinstance(o, (np.floating,)):
                return float(o)
            if isinstance(o, np.ndarray):
                return o.tolist()
            return str(o)

        Path(path).write_text(json.dumps(payload, indent=1, default=default))

    @property
    def ok(self) -> bool:
        return bool(self.metadata.get("hard_invariants_ok", False))


def _uniform_level(spec: ProblemSpec, cfg: RunConfig, res: int):
    mesh = spec.make_mesh(res)
    acfg = adaptm.AdaptiveConfig(
        theta=cfg.theta, degree=cfg.degree, aux_degree=cfg.aux_degree,
        strict_a2=cfg.strict_a2, solver=cfg.solver(), threads=cfg.threads,
        estimator=cfg.estimator)
    dm, u, Hh, data = adaptm.solve_level(mesh, spec.mu, spec.current(), acfg)
    return mesh, dm, u, Hh, data


def run_experiment(spec: ProblemSpec, cfg: RunConfig) -> ExperimentReport:
    """Execute the experiment and (optionally) emit report files.

    The CSV carries no wall-clock fields, so sequential reruns are
    byte-identical; timings live in the JSON report.
    """
    if spec.analysis_grade and not cfg.analysis_grade:
        raise ValueError(
            f"{spec.name} is analysis grade (numerically differentiated data); "
            "pass analysis_grade=True / --analysis-grade to run it")
    t_start = time.perf_counter()
    hard_ok = True
    rows = []
    meshes = []

    if cfg.mode == "uniform":
        res_list = spec.uniform_res.get(cfg.degree, [spec.base_res])
        if cfg.levels is not None:
            res_list = res_list[: cfg.levels]
        for level, res in enumerate(res_list):
            t0 = time.perf_counter()
            mesh, dm, u, Hh, data = _uniform_level(spec, cfg, res)
            t_solve = time.perf_counter() - t0
            t0 = time.perf_counter()
            out = eqm.estimate(mesh, spec.mu, data, Hh, cfg.aux_degree,
                               strict_a2=cfg.strict_a2, threads=cfg.threads)
            t_est = time.perf_counter() - t0
            row = {"level": level, "resolution": res, "n_tets": mesh.n_tets,
                   "n_dofs": dm.n_free, "h_max": mesh.h_max(),
                   "eta_h": out.result.eta_h, "t_solve": t_solve,
                   "t_estimate": t_est}
            row.update({k: out.result.diagnostics[k] for k in
                        ("max_re_abs", "max_re_variation", "oscillation",
                         "step3_max_residual", "lam_scale")})
            if cfg.estimator in ("res", "both"):
                rr = resm.compute_residual_estimator(mesh, spec.mu,
                                                     spec.current(), Hh,
                                                     cfg.degree)
                row["mu_h"] = rr.mu_h
            if spec.exact_H is not None:
                err = compute_error(mesh, spec.mu, Hh, spec.exact_H, cfg.degree)
                row["error"] = err
                row["eff_eq"] = out.result.eta_h / err if err > 0 else np.inf
                if "mu_h" in row:
                    row["eff_res"] = row["mu_h"] / err if err > 0 else np.inf
            if cfg.verify:
                rep = eqm.verify_equilibrium(mesh, spec.mu, data, Hh, out)
                row["eq_elem_rel"] = rep["elem_resid_rel"]
                row["eq_face_rel"] = rep["face_resid_rel"]
            eta_sq_gap = abs(out.result.eta_h ** 2
                             - float((out.result.eta_T ** 2).sum()))
            if not np.isfinite(out.result.eta_h) or \
                    eta_sq_gap > 1e-12 * max(out.result.eta_h ** 2, 1e-300):
                hard_ok = False
            rows.append(row)
            meshes.append(mesh)
            if cfg.vtk and cfg.out_dir:
                write_vtk(mesh, Path(cfg.out_dir) / f"mesh_level_{level}.vtk",
                          {"eta_T": out.result.eta_T})
    elif cfg.mode == "adaptive":
        acfg = adaptm.AdaptiveConfig(
            theta=cfg.theta, max_levels=cfg.levels or 8, max_dofs=cfg.max_dofs,
            estimator=cfg.estimator, degree=cfg.degree,
            aux_degree=cfg.aux_degree, strict_a2=cfg.strict_a2,
            solver=cfg.solver(), threads=cfg.threads, verify=cfg.verify)
        rows, meshes = adaptm.adaptive_loop(spec, acfg)
        for row in rows:
            if not np.isfinite(row["eta_h"]):
                hard_ok = False
        if cfg.reference_errors and spec.exact_H is None:
            _attach_reference_errors(spec, cfg, acfg, rows, meshes)
    else:
        raise ValueError(f"unknown mode {cfg.mode!r}")

    metadata = {
        "problem": spec.name,
        "config": {k: v for k, v in asdict(cfg).items()},
        "schema": CSV_SCHEMA,
        "wall_time": time.perf_counter() - t_start,
        "hard_invariants_ok": hard_ok,
        "reference_protocol": "2 extra adaptive levels at the same degree"
                              if cfg.reference_errors else None,
        "notes": spec.notes,
    }
    report = ExperimentReport(spec.name, rows, metadata)
    if cfg.out_dir:
        out = Path(cfg.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        report.write_csv(out / "report.csv")
        report.write_json(out / "report.json")
    return report


def _attach_reference_errors(spec: ProblemSpec, cfg: RunConfig,
                             acfg: adaptm.AdaptiveConfig, rows, meshes) -> None:
    """Error columns against a reference from two further adaptive levels."""
    ref_cfg = adaptm.AdaptiveConfig(
        theta=acfg.theta, max_levels=len(meshes) + 2, max_dofs=10 * acfg.max_dofs,
        estimator="eq", degree=acfg.degree, aux_degree=acfg.aux_degree,
        strict_a2=acfg.strict_a2, solver=acfg.solver, threads=acfg.threads)
    mesh = meshes[-1]
    chain = []
    for _ in range(2):
        dmr, ur, Hr, _ = adaptm.solve_level(mesh, spec.mu, spec.current(), ref_cfg)
        outr = eqm.estimate(mesh, spec.mu, spec.current(), Hr, ref_cfg.aux_degree,
                            threads=ref_cfg.threads)
        marked = adaptm.dorfler_mark(outr.result.eta_T, ref_cfg.theta)
        from .mesh import refine
        mesh = refine(mesh, marked)
        chain.append(mesh)
    dmr, ur, H_ref, _ = adaptm.solve_level(mesh, spec.mu, spec.current(), ref_cfg)
    # parent chain: parents[i] maps level-(i+1) tets to level-i tets, with the
    # two extra reference levels appended (the last chain entry IS the
    # reference mesh)
    ref_mesh = mesh
    parents = [m.parent for m in meshes[1:]] + [c.parent for c in chain]
    mu_t_ref = spec.mu.per_tet(ref_mesh)
    rule = ps.quadrature("tet", min(2 * acfg.degree + 4, ps.MAX_QUAD_EXACTNESS))
    geom_ref = ref_mesh.geom()
    pts_ref = geom_ref.map_points(np.arange(ref_mesh.n_tets), rule.points)
    ref_vals = H_ref.eval(np.arange(ref_mesh.n_tets), rule.points)
    for lvl, row in enumerate(rows):
        anc = np.arange(ref_mesh.n_tets)
        for pmap in reversed(parents[lvl:]):
            anc = pmap[anc]
        dml, ul, Hl, _ = adaptm.solve_level(meshes[lvl], spec.mu,
                                            spec.current(), acfg)
        geom_l = meshes[lvl].geom()
        err_sq = 0.0
        for tr in range(ref_mesh.n_tets):
            a = anc[tr]
            xr = geom_l.ref_coords(a, pts_ref[tr])
            diff = ref_vals[tr] - Hl.eval_one(a, xr)
            err_sq += geom_ref.detJ[tr] * mu_t_ref[tr] * float(
                np.einsum("q,qc->", rule.weights, diff ** 2))
        err = float(np.sqrt(err_sq))
        row["error"] = err
        row["eff_eq"] = row["eta_h"] / err if err > 0 else np.inf
        if "mu_h" in row and err > 0:
            row["eff_res"] = row["mu_h"] / err
