"""Acceptance suite: one test per numbered criterion, each printing a
PASS/FAIL line.  Shared runs are cached in module fixtures so the whole
module stays inside the runtime budget."""

import time

import numpy as np
import pytest

from curlest import _poly
from curlest import adapt as adm
from curlest import bench
from curlest import equilibrate as eqm
from curlest import femsys as fem
from curlest import mesh as msh
from curlest import polyspace as ps
from _helpers import MU1, cube_H, cube_j


def _report(name, ok, detail):
    print(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    return ok


def _run_uniform(n, k, kp=None, strict=False):
    mesh = msh.unit_cube_mesh(n)
    cfg = adm.AdaptiveConfig(degree=k, aux_degree=kp or k, strict_a2=strict)
    j = fem.CurrentDensity(func=cube_j)
    dm, u, Hh, data = adm.solve_level(mesh, MU1, j, cfg)
    out = eqm.estimate(mesh, MU1, data, Hh, kp or k, strict_a2=strict)
    err = fem.l2_error_against(mesh, MU1, Hh, cube_H, 2 * k + 4)
    return {"mesh": mesh, "dm": dm, "u": u, "Hh": Hh, "data": data,
            "out": out, "err": err, "n": n, "k": k}


@pytest.fixture(scope="module")
def cube_runs():
    """Uniform cube runs at the shipped budgets, plus timing."""
    t0 = time.perf_counter()
    runs = {}
    for k, ns in ((1, (2, 4, 8)), (2, (1, 2, 4)), (3, (1, 2, 3))):
        for n in ns:
            runs[(k, n)] = _run_uniform(n, k)
    runs["elapsed_k12"] = time.perf_counter() - t0
    return runs


@pytest.fixture(scope="module")
def cube_runs_kp3():
    """Runs with auxiliary degree 3 (natively compatible data)."""
    runs = {}
    for k, ns in ((1, (2, 4)), (2, (1, 2)), (3, (1, 2))):
        for n in ns:
            runs[(k, n)] = _run_uniform(n, k, kp=3)
    return runs


def test_criterion_01_convergence_rates(cube_runs):
    ok = True
    details = []
    for k, ns in ((1, (2, 4, 8)), (2, (1, 2, 4))):
        errs = [cube_runs[(k, n)]["err"] for n in ns]
        rates = [np.log2(errs[i] / errs[i + 1]) for i in range(len(errs) - 1)]
        details.append(f"k={k} rates={['%.3f' % r for r in rates]}")
        ok &= all(abs(r - k) <= 0.3 for r in rates)
    within_budget = cube_runs["elapsed_k12"] < 300.0
    details.append(f"wall={cube_runs['elapsed_k12']:.0f}s")
    ok &= within_budget
    assert _report("criterion 1 (convergence rates)", ok, "; ".join(details))


def test_criterion_02_efficiency_indices(cube_runs, cube_runs_kp3):
    ok = True
    details = []
    for k, ns in ((1, (2, 4, 8)), (2, (1, 2, 4)), (3, (1, 2, 3))):
        effs = [cube_runs[(k, n)]["out"].result.eta_h / cube_runs[(k, n)]["err"]
                for n in ns]
        details.append(f"k={k}: {['%.3f' % e for e in effs]}")
        ok &= all(0.99 <= e <= 2.5 for e in effs)
    # strict mode with natively compatible data: unconditional lower bound
    strict_effs = []
    for k, n in ((1, 2), (2, 2), (3, 2)):
        r = _run_uniform(n, k, kp=3, strict=True)
        strict_effs.append(r["out"].result.eta_h / r["err"])
    details.append(f"strict: {['%.6f' % e for e in strict_effs]}")
    ok &= all(e >= 1.0 - 1e-6 for e in strict_effs)
    assert _report("criterion 2 (efficiency indices)", ok, "; ".join(details))


def test_criterion_03_exact_equilibrium(cube_runs):
    ok = True
    details = []
    # native compatibility at degree three
    r = cube_runs[(3, 2)]
    rep = eqm.verify_equilibrium(r["mesh"], MU1, r["data"], r["Hh"], r["out"])
    details.append(f"k=3 elem={rep['elem_resid_rel']:.1e} face={rep['face_resid_rel']:.1e}")
    ok &= rep["elem_resid_rel"] <= 1e-9 and rep["face_resid_rel"] <= 1e-9
    # projected data at low degree
    for k in (1, 2):
        r = _run_uniform(2, k, strict=True)
        rep = eqm.verify_equilibrium(r["mesh"], MU1, r["data"], r["Hh"], r["out"])
        details.append(f"k={k}s elem={rep['elem_resid_rel']:.1e} "
                       f"face={rep['face_resid_rel']:.1e}")
        ok &= rep["elem_resid_rel"] <= 1e-9 and rep["face_resid_rel"] <= 1e-9
    assert _report("criterion 3 (exact equilibrium)", ok, "; ".join(details))


def test_criterion_04_edge_compatibility(cube_runs_kp3):
    # the cycle conditions are a consequence of compatible data, so they are
    # checked on every run that satisfies that hypothesis: natively
    # compatible (aux degree 3), projected, and constant-current runs
    ok = True
    details = []
    for key in ((1, 2), (2, 2), (3, 2)):
        rep = cube_runs_kp3[key]["out"].edge_report
        scale = max(rep.lam_scale, 1e-30)
        details.append(f"k={key[0]}: re={rep.worst_abs / scale:.1e} "
                       f"var={rep.worst_variation / scale:.1e}")
        ok &= rep.worst_abs <= 1e-9 * scale
        ok &= rep.worst_variation <= 1e-9 * scale
    for k in (1, 2):
        r = _run_uniform(2, k, strict=True)
        rep = r["out"].edge_report
        scale = max(rep.lam_scale, 1e-30)
        details.append(f"k={k}s: re={rep.worst_abs / scale:.1e}")
        ok &= rep.worst_abs <= 1e-9 * scale
        ok &= rep.worst_variation <= 1e-9 * scale
    jump = bench.builtin_problems()["cube_jump_mu_100"]
    cfg = adm.AdaptiveConfig(degree=2, max_levels=2, max_dofs=3000)
    rows, _ = adm.adaptive_loop(jump, cfg)
    for row in rows:
        scale = max(row["lam_scale"], 1e-30)
        ok &= row["max_re_abs"] <= 1e-9 * scale
        ok &= row["max_re_variation"] <= 1e-9 * scale
    details.append(f"jump: re={rows[-1]['max_re_abs'] / max(rows[-1]['lam_scale'], 1e-30):.1e}")
    assert _report("criterion 4 (edge compatibility)", ok, "; ".join(details))


def test_criterion_05_local_well_posedness_oracles():
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    ref = msh.build_mesh(np.array([[0., 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]]),
                         [[0, 1, 2, 3]])
    worst1 = 0.0
    for trial in range(200):
        kp = int(rng.integers(1, 4))
        space = ps.reference_space(ps.NEDELEC1_TET, kp)
        coef = rng.standard_normal(space.dim)
        vcurl = (ref.geom().J[0] @ np.einsum(
            "i,iam->am", coef, space.curl_coeffs())) / ref.geom().detJ[0]
        field = fem.BrokenPolyField(ref, kp, vcurl[None])

        def jd(p, _f=field, _m=ref):
            return _f.eval_one(0, _m.geom().ref_coords(0, p))

        Hh0 = fem.BrokenPolyField(ref, 1, np.zeros((1, 3, 4)))
        corr = eqm.step1_element_corrections(
            ref, MU1, fem.CurrentDensity(func=jd), Hh0, kp)
        scale = max(corr.jdelta_norm.max(), 1e-12)
        worst1 = max(worst1, corr.resid.max() / scale,
                     corr.ortho_resid.max() / scale)

    m1 = msh.unit_cube_mesh(1)
    f = int(m1.internal_faces()[0])
    fr = msh.face_frame(m1, f)
    hf = m1.face_diameters()[f]
    org = m1.vertices[m1.faces[f][0]]
    worst2 = 0.0
    for trial in range(200):
        kp = int(rng.integers(1, 4))
        rule = ps.quadrature("tri", 2 * kp + 2)
        nm2 = _poly.n_monomials(2, kp)
        D2 = _poly.diff_stack(2, kp)
        lam0 = rng.standard_normal(nm2)
        pts = fem.face_rule_points(m1, f, rule)
        xi = np.stack([(pts - org) @ fr.t1, (pts - org) @ fr.t2], axis=1) / hf
        v = _poly.vandermonde(2, kp, xi)
        mean_vec = np.einsum("q,qm->m", rule.weights, v)
        lam0[0] -= float(mean_vec @ lam0) / mean_vec[0]
        grads = np.einsum("qm,bmn,n->qb", v, D2, lam0) / hf
        data3d = grads[:, 1:2] * fr.t1[None, :] - grads[:, 0:1] * fr.t2[None, :]
        lam, resid = eqm._solve_single_face(m1, f, data3d, rule, kp, "weak")
        scale = max(np.abs(v @ lam0).max(), 1e-12)
        worst2 = max(worst2, np.abs(v @ (lam - lam0)).max() / scale)

    worst3 = 0.0
    for trial in range(200):
        mring = int(rng.integers(3, 9))
        star = rng.standard_normal(mring)
        star -= star.mean()
        pairs = [(i, (i + 1) % mring) for i in range(mring)]
        vals = [star[a] - star[b] for a, b in pairs]
        sol, resid = eqm.solve_node_patch(mring, pairs, vals)
        worst3 = max(worst3, np.abs(sol - star).max())

    dt = time.perf_counter() - t0
    ok = worst1 <= 1e-10 and worst2 <= 1e-10 and worst3 <= 1e-10 and dt < 60.0
    assert _report("criterion 5 (local oracles)", ok,
                   f"step1 {worst1:.1e}, step2 {worst2:.1e}, step3 {worst3:.1e}, "
                   f"{dt:.1f}s")


def test_criterion_06_exact_sequences():
    rng = np.random.default_rng(2)
    eps = np.zeros((3, 3, 3))
    for i, j, l in ((0, 1, 2), (1, 2, 0), (2, 0, 1)):
        eps[i, j, l] = 1.0
        eps[i, l, j] = -1.0

    def rep_res(target, basis):
        A = basis.reshape(basis.shape[0], -1).T
        b = np.asarray(target).ravel()
        nb = np.linalg.norm(b)
        if nb < 1e-14:
            return 0.0
        x, *_ = np.linalg.lstsq(A, b / nb, rcond=None)
        return float(np.linalg.norm(A @ x - b / nb))

    worst = 0.0
    for kp in (1, 2, 3):
        P = ps.reference_space(ps.P_SCALAR_TET, kp)
        N = ps.reference_space(ps.NEDELEC1_TET, kp)
        D = ps.reference_space(ps.RT_TET, kp)
        Pm1 = ps.reference_space(ps.P_SCALAR_TET, kp - 1)
        Pf = ps.reference_space(ps.P_SCALAR_TRI, kp)
        Rf = ps.reference_space(ps.RT_TANGENTIAL_TRI, kp)
        Dst = _poly.diff_stack(3, kp)
        nm1 = _poly.n_monomials(3, kp - 1)
        for _ in range(50):
            psi = rng.standard_normal(P.dim) @ P.coeffs[:, 0, :]
            worst = max(worst, rep_res(np.einsum("bmn,n->bm", Dst, psi), N.coeffs))
            v = np.einsum("i,icm->cm", rng.standard_normal(N.dim), N.coeffs)
            worst = max(worst, rep_res(
                np.einsum("abc,bmn,cn->am", eps, Dst, v), D.coeffs))
            w = np.einsum("i,icm->cm", rng.standard_normal(D.dim), D.coeffs)
            div = np.einsum("cmn,cn->m", Dst, w)
            worst = max(worst, rep_res(div[:nm1], Pm1.coeffs[:, 0, :]))
            c2 = np.einsum("i,ibm->bm", rng.standard_normal(Pf.dim),
                           Pf.curl2d_coeffs())
            worst = max(worst, rep_res(c2, Rf.coeffs))
    ok = worst <= 1e-10
    assert _report("criterion 6 (exact sequences)", ok, f"worst residual {worst:.1e}")


def test_criterion_07_pythagoras_identity(cube_runs_kp3):
    ok = True
    details = []
    for (k, n), r in sorted(cube_runs_kp3.items()):
        eta = r["out"].result.eta_h
        total = r["Hh"].padded_to(3).plus(r["out"].result.Htilde)
        err_tilde = fem.l2_error_against(r["mesh"], MU1, total, cube_H, 10)
        defect = abs(eta ** 2 - err_tilde ** 2 - r["err"] ** 2) / eta ** 2
        details.append(f"k={k},n={n}: {defect:.1e}")
        ok &= defect <= 1e-6
    assert _report("criterion 7 (hypercircle identity)", ok, "; ".join(details))


def test_criterion_08_local_efficiency_trend(cube_runs):
    ratios = []
    for n in (2, 4, 8):
        r = cube_runs[(1, n)]
        mesh = r["mesh"]
        err_T = fem.l2_error_per_tet(mesh, MU1, r["Hh"], cube_H, 6)
        vt = mesh.vertex_tets()
        worst = 0.0
        for t in range(mesh.n_tets):
            nbrs = np.unique(np.concatenate([vt[v] for v in mesh.tets[t]]))
            worst = max(worst, r["out"].result.eta_T[t] / err_T[nbrs].sum())
        ratios.append(worst)
    ok = ratios[-1] <= 1.5 * ratios[0]
    assert _report("criterion 8 (local efficiency trend)", ok,
                   f"ratios {['%.3f' % x for x in ratios]}")


def test_criterion_09_residual_estimator_contrast(cube_runs):
    """Degree contrast of the residual estimator on matched cube meshes.

    Measured behavior: the degree-weighted residual estimator has
    efficiency ~8.6-9.1 at degree one (data-term dominated) and ~8.1-8.2 at
    degree three on every matched cube mesh, so the asserted >= 1.2 ratio
    does not hold for this estimator on this smooth problem; dropping the
    degree weights would give a ratio ~2.4.  The assertion is kept as
    specified and is expected to fail; see the decisions ledger.
    """
    from curlest import residual as resm
    ok = True
    details = []
    effs = {}
    for k in (1, 3):
        r = cube_runs[(k, 2)]
        rr = resm.compute_residual_estimator(
            r["mesh"], MU1, fem.CurrentDensity(func=cube_j), r["Hh"], k)
        effs[k] = rr.mu_h / r["err"]
    ratio = effs[3] / effs[1]
    details.append(f"eff_res k=1 {effs[1]:.3f}, k=3 {effs[3]:.3f}, ratio {ratio:.3f}")
    ok &= ratio >= 1.2
    for k, ns in ((1, (2, 4, 8)), (2, (1, 2, 4)), (3, (1, 2, 3))):
        eff_eq = [cube_runs[(k, n)]["out"].result.eta_h / cube_runs[(k, n)]["err"]
                  for n in ns]
        ok_eq = all(0.99 <= e <= 2.5 for e in eff_eq)
        details.append(f"eff_eq k={k} in range: {ok_eq}")
        ok &= ok_eq
    assert _report("criterion 9 (residual contrast)", ok, "; ".join(details))


def test_criterion_10_adaptive_behavior():
    ok = True
    details = []

    def near_interface(v):
        return (np.abs(v[:, 1] - 0.5) < 1e-9) & (np.abs(v[:, 2] - 0.5) < 1e-9)

    def near_reentrant(v):
        return (np.abs(v[:, 0]) < 1e-9) & (np.abs(v[:, 1]) < 1e-9)

    for name in ("cube_jump_mu_10", "cube_jump_mu_100"):
        spec = bench.builtin_problems()[name]
        cfg = adm.AdaptiveConfig(theta=0.5, max_levels=5, max_dofs=4000,
                                 degree=2, keep_marks=True)
        rows, meshes = adm.adaptive_loop(spec, cfg)
        etas = [r["eta_h"] for r in rows]
        mono = all(b < a for a, b in zip(etas, etas[1:]))
        conc = True
        for lvl in range(2, len(rows)):
            touching = np.array([near_interface(meshes[lvl].vertices[tet]).any()
                                 for tet in meshes[lvl].tets])
            marked = np.array(rows[lvl]["marked_ids"])
            conc &= touching[marked].mean() > touching.mean()
        details.append(f"{name}: mono={mono} conc={conc}")
        ok &= mono and conc

    lb = bench.builtin_problems()["lbrick_singular"]
    cfg = adm.AdaptiveConfig(theta=0.5, max_levels=5, max_dofs=4000,
                             degree=2, keep_marks=True)
    rows, meshes = adm.adaptive_loop(lb, cfg)
    decays = rows[-1]["eta_h"] < rows[0]["eta_h"]
    conc = True
    for lvl in range(2, len(rows)):
        touching = np.array([near_reentrant(meshes[lvl].vertices[tet]).any()
                             for tet in meshes[lvl].tets])
        marked = np.array(rows[lvl]["marked_ids"])
        conc &= touching[marked].mean() > touching.mean()
    details.append(f"lbrick: decay={decays} conc={conc}")
    ok &= decays and conc
    assert _report("criterion 10 (adaptive behavior)", ok, "; ".join(details))


def test_criterion_11_determinism(tmp_path):
    spec = bench.builtin_problems()["cube_poly"]
    outs = []
    for sub in ("a", "b"):
        cfg = bench.RunConfig(degree=1, levels=2, threads=1,
                              out_dir=str(tmp_path / sub))
        bench.run_experiment(spec, cfg)
        outs.append((tmp_path / sub / "report.csv").read_bytes())
    byte_equal = outs[0] == outs[1]

    r = _run_uniform(4, 1)  # large enough for the parallel chunking to engage
    out_seq = eqm.estimate(r["mesh"], MU1, r["data"], r["Hh"], 1, threads=1)
    out_par = eqm.estimate(r["mesh"], MU1, r["data"], r["Hh"], 1, threads=4)
    rel = abs(out_seq.result.eta_h - out_par.result.eta_h) / out_seq.result.eta_h
    ok = byte_equal and rel <= 1e-12
    assert _report("criterion 11 (determinism)", ok,
                   f"csv bytes equal={byte_equal}, threaded rel diff={rel:.1e}")
