"""Global finite element spaces, assembly, and the gauge-free linear solve.

The curl-conforming space is assembled from per-element dof matrices: the
canonical moment functionals are parameterized by global vertex ids, so two
elements sharing an edge or face apply identical functionals and tangential
continuity of the assembled field is automatic.  Broken fields are carried
around as per-element polynomial coefficient blocks over reference
coordinates with physical components, which keeps curls, gradients, and
jumps exact.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import _poly
from . import polyspace as ps
from .errors import NoConvergence, OrphanNode, ProjectionSolveFailure, UnsupportedDegree
from .mesh import Mesh

log = logging.getLogger("curlest")

_EPS3 = np.zeros((3, 3, 3))
for _i, _j, _k in ((0, 1, 2), (1, 2, 0), (2, 0, 1)):
    _EPS3[_i, _j, _k] = 1.0
    _EPS3[_i, _k, _j] = -1.0

MAX_DEGREE = 3  # end-to-end supported range for global spaces


# ---------------------------------------------------------------------------
# material and current data
# ---------------------------------------------------------------------------

@dataclass
class MaterialField:
    """Piecewise-constant permeability, one value per subdomain tag."""
    values: dict | float

    def __post_init__(self):
        if np.isscalar(self.values):
            self.values = {0: float(self.values)}
        if any(v <= 0.0 for v in self.values.values()):
            raise ValueError("permeability values must be positive")

    @property
    def mu_min(self) -> float:
        return min(self.values.values())

    @property
    def mu_max(self) -> float:
        return max(self.values.values())

    def per_tet(self, mesh: Mesh) -> np.ndarray:
        if len(self.values) == 1:
            return np.full(mesh.n_tets, next(iter(self.values.values())))
        try:
            return np.array([self.values[int(t)] for t in mesh.subdomain_tag])
        except KeyError as exc:
            raise ValueError(f"subdomain tag {exc} has no permeability value")


@dataclass
class BrokenPolyField:
    """Element-wise polynomial field: physical components as polynomials in
    the reference coordinates of each tet."""
    mesh: Mesh
    degree: int
    coeffs: np.ndarray  # (T, ncomp, n_monomials)

    @property
    def ncomp(self) -> int:
        return self.coeffs.shape[1]

    def eval(self, tets, ref_pts) -> np.ndarray:
        """Values on the listed tets at shared reference points: (t, q, comp)."""
        v = _poly.vandermonde(3, self.degree, ref_pts)
        return np.einsum("qm,tcm->tqc", v, self.coeffs[tets])

    def eval_one(self, t: int, ref_pts) -> np.ndarray:
        return self.eval([t], ref_pts)[0]

    def curl(self) -> "BrokenPolyField":
        D = _poly.diff_stack(3, self.degree)
        Jinv = self.mesh.geom().Jinv
        out = np.einsum("abc,tmb,mij,tcj->tai", _EPS3, Jinv, D, self.coeffs,
                        optimize=True)
        return BrokenPolyField(self.mesh, self.degree, out)

    def grad(self) -> "BrokenPolyField":
        D = _poly.diff_stack(3, self.degree)
        Jinv = self.mesh.geom().Jinv
        out = np.einsum("tmb,mij,tj->tbi", Jinv, D, self.coeffs[:, 0, :],
                        optimize=True)
        return BrokenPolyField(self.mesh, self.degree, out)

    def div(self) -> "BrokenPolyField":
        D = _poly.diff_stack(3, self.degree)
        Jinv = self.mesh.geom().Jinv
        out = np.einsum("tmb,mij,tbj->ti", Jinv, D, self.coeffs, optimize=True)
        return BrokenPolyField(self.mesh, self.degree, out[:, None, :])

    def padded_to(self, degree: int) -> "BrokenPolyField":
        if degree == self.degree:
            return self
        if degree < self.degree:
            raise ValueError("can only pad to a higher degree")
        nm = _poly.n_monomials(3, degree)
        out = np.zeros((self.coeffs.shape[0], self.ncomp, nm))
        out[:, :, : self.coeffs.shape[2]] = self.coeffs
        return BrokenPolyField(self.mesh, degree, out)

    def plus(self, other: "BrokenPolyField") -> "BrokenPolyField":
        deg = max(self.degree, other.degree)
        a = self.padded_to(deg)
        b = other.padded_to(deg)
        return BrokenPolyField(self.mesh, deg, a.coeffs + b.coeffs)

    def scale(self, factor) -> "BrokenPolyField":
        factor = np.asarray(factor, dtype=float)
        if factor.ndim == 1:
            factor = factor[:, None, None]
        return BrokenPolyField(self.mesh, self.degree, self.coeffs * factor)

    def mu_norms(self, mu_per_tet=None, exactness: int | None = None) -> np.ndarray:
        """Per-tet norms sqrt(mu int |f|^2)."""
        ex = 2 * self.degree if exactness is None else exactness
        rule = ps.quadrature("tet", min(ex, ps.MAX_QUAD_EXACTNESS))
        vals = self.eval(np.arange(self.mesh.n_tets), rule.points)
        det = self.mesh.geom().detJ
        sq = np.einsum("q,tqc->t", rule.weights, vals ** 2) * det
        if mu_per_tet is not None:
            sq = sq * np.asarray(mu_per_tet)
        return np.sqrt(np.maximum(sq, 0.0))

    def norm(self, mu_per_tet=None, exactness: int | None = None) -> float:
        return float(np.sqrt((self.mu_norms(mu_per_tet, exactness) ** 2).sum()))


@dataclass
class CurrentDensity:
    """Divergence-free current data: analytic callback or broken polynomial."""
    func: object = None
    field: BrokenPolyField | None = None
    divergence_free: bool = True
    label: str = ""

    @property
    def is_polynomial(self) -> bool:
        return self.field is not None

    def eval_phys(self, pts: np.ndarray) -> np.ndarray:
        if self.func is None:
            raise ValueError("analytic callback not available")
        return np.asarray(self.func(np.asarray(pts, dtype=float)))

    def eval_elements(self, mesh: Mesh, tets, ref_pts, phys_pts=None) -> np.ndarray:
        """(t, q, 3) values on the listed tets."""
        if self.field is not None:
            return self.field.eval(tets, ref_pts)
        if phys_pts is None:
            phys_pts = mesh.geom().map_points(tets, np.asarray(ref_pts))
        flat = self.eval_phys(phys_pts.reshape(-1, 3))
        return flat.reshape(len(tets), -1, 3)

    def validate(self, mesh: Mesh, tol: float = 1e-10) -> dict:
        """Divergence and normal-flux-jump checks for polynomial data."""
        if self.field is None:
            raise ValueError("validate requires piecewise-polynomial data")
        scale = max(self.field.norm(), 1e-30)
        div_norms = self.field.div().mu_norms()
        jump = normal_jump_norms(mesh, self.field)
        return {
            "max_div": float(div_norms.max(initial=0.0)),
            "max_flux_jump": float(jump.max(initial=0.0)),
            "scale": scale,
            "ok": bool(div_norms.max(initial=0.0) <= tol * scale
                       and jump.max(initial=0.0) <= tol * scale),
        }


# ---------------------------------------------------------------------------
# node registry (shared by the conforming scalar space and the nodal
# reconstruction)
# ---------------------------------------------------------------------------

@dataclass
class NodeRegistry:
    degree: int
    points: np.ndarray        # (N, 3)
    kind: np.ndarray          # (N,) polyspace NODE_* codes
    entity: np.ndarray        # (N,) global vertex/edge/face/tet id
    boundary: np.ndarray      # (N,) bool
    tet_nodes: np.ndarray     # (T, nloc) global node id per local node
    incident: list            # per node: list of (tet, local node index)

    @property
    def n_nodes(self) -> int:
        return len(self.points)


def build_node_registry(mesh: Mesh, degree: int) -> NodeRegistry:
    """Deduplicate the per-element Lagrange nodes into a global registry.

    Node coordinates are accumulated in ascending global-vertex-id order with
    exact rational weights, so coincident nodes from different elements agree
    bitwise; the hash buckets keyed on a 1e-8*h grid only exist as a guard.
    """
    nodes = ps.lagrange_nodes(degree)
    nloc = nodes.n_nodes
    multi = nodes.multi
    rho = 1e-8 * mesh.h_min_edge()
    buckets: dict[tuple, int] = {}
    points: list[np.ndarray] = []
    kind: list[int] = []
    entity: list[int] = []
    incident: list[list] = []
    tet_nodes = np.empty((mesh.n_tets, nloc), dtype=np.int64)

    verts = mesh.vertices
    for t in range(mesh.n_tets):
        gids = mesh.tets[t]
        order = np.argsort(gids)
        vv = verts[gids[order]]
        w = multi[:, order] / float(degree)
        # fixed-order accumulation => bitwise identical coordinates
        pos = w[:, 0:1] * vv[0] + w[:, 1:2] * vv[1]
        pos += w[:, 2:3] * vv[2]
        pos += w[:, 3:4] * vv[3]
        pos = pos + 0.0  # normalize signed zeros
        for loc in range(nloc):
            p = pos[loc]
            key = (int(round(p[0] / rho)), int(round(p[1] / rho)),
                   int(round(p[2] / rho)))
            g = buckets.get(key)
            if g is None:
                for d in _NEIGHBOR_OFFSETS:
                    g = buckets.get((key[0] + d[0], key[1] + d[1], key[2] + d[2]))
                    if g is not None and np.linalg.norm(points[g] - p) <= rho:
                        break
                    g = None
            k = int(nodes.kind[loc])
            if k == ps.NODE_VERTEX:
                ent = int(gids[nodes.entity[loc]])
            elif k == ps.NODE_EDGE:
                ent = int(mesh.tet_edges[t, nodes.entity[loc]])
            elif k == ps.NODE_FACE:
                ent = int(mesh.tet_faces[t, nodes.entity[loc]])
            else:
                ent = t
            if g is None:
                g = len(points)
                buckets[key] = g
                points.append(p)
                kind.append(k)
                entity.append(ent)
                incident.append([])
            else:
                if kind[g] != k or entity[g] != ent:
                    raise OrphanNode(
                        f"node at {p} resolves to ({k},{ent}) vs ({kind[g]},{entity[g]})")
            incident[g].append((t, loc))
            tet_nodes[t, loc] = g

    kind = np.array(kind, dtype=np.int64)
    entity = np.array(entity, dtype=np.int64)
    boundary = np.zeros(len(points), dtype=bool)
    for g in range(len(points)):
        if kind[g] == ps.NODE_VERTEX:
            boundary[g] = mesh.boundary_vertex[entity[g]]
        elif kind[g] == ps.NODE_EDGE:
            boundary[g] = mesh.boundary_edge[entity[g]]
        elif kind[g] == ps.NODE_FACE:
            boundary[g] = mesh.boundary_face[entity[g]]
    return NodeRegistry(degree, np.array(points), kind, entity, boundary,
                        tet_nodes, incident)


_NEIGHBOR_OFFSETS = [(dx, dy, dz) for dx in (-1, 0, 1) for dy in (-1, 0, 1)
                     for dz in (-1, 0, 1) if (dx, dy, dz) != (0, 0, 0)]


# ---------------------------------------------------------------------------
# dof maps
# ---------------------------------------------------------------------------

KIND_NEDELEC = "nedelec"
KIND_LAGRANGE = "lagrange"
KIND_BROKEN_SCALAR = "broken_scalar"


@dataclass
class DofMap:
    mesh: Mesh
    kind: str
    degree: int
    n_dofs: int
    cell_dofs: np.ndarray       # (T, nloc)
    boundary_mask: np.ndarray   # (n_dofs,) bool
    homogeneous_boundary: bool
    registry: NodeRegistry | None = None
    # element dof matrices are reused across assembly passes; the mesh is
    # immutable so the cache never invalidates
    _vcache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def free(self) -> np.ndarray:
        if self.homogeneous_boundary:
            return np.nonzero(~self.boundary_mask)[0]
        return np.arange(self.n_dofs)

    @property
    def n_free(self) -> int:
        return len(self.free)

    def full_to_free(self) -> np.ndarray:
        idx = np.full(self.n_dofs, -1, dtype=np.int64)
        idx[self.free] = np.arange(self.n_free)
        return idx


@dataclass
class FieldCoefficients:
    dofmap: DofMap
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.dofmap.n_dofs,):
            raise ValueError("coefficient vector length does not match dof map")


def build_dofmap(mesh: Mesh, kind: str, degree: int,
                 homogeneous_boundary: bool = False) -> DofMap:
    if not 1 <= degree <= MAX_DEGREE:
        raise UnsupportedDegree(f"{kind} degree {degree} outside 1..{MAX_DEGREE}")
    if kind == KIND_NEDELEC:
        k = degree
        ne, nf = k, k * (k - 1)
        nc = k * (k - 1) * (k - 2) // 2
        n_edge = mesh.n_edges * ne
        n_face = mesh.n_faces * nf
        n_dofs = n_edge + n_face + mesh.n_tets * nc
        cell_dofs = np.empty((mesh.n_tets, 6 * ne + 4 * nf + nc), dtype=np.int64)
        for t in range(mesh.n_tets):
            cols = []
            for e in mesh.tet_edges[t]:
                cols.extend(range(e * ne, (e + 1) * ne))
            for f in mesh.tet_faces[t]:
                cols.extend(range(n_edge + f * nf, n_edge + (f + 1) * nf))
            cols.extend(range(n_edge + n_face + t * nc,
                              n_edge + n_face + (t + 1) * nc))
            cell_dofs[t] = cols
        mask = np.zeros(n_dofs, dtype=bool)
        for e in np.nonzero(mesh.boundary_edge)[0]:
            mask[e * ne:(e + 1) * ne] = True
        for f in np.nonzero(mesh.boundary_face)[0]:
            mask[n_edge + f * nf: n_edge + (f + 1) * nf] = True
        return DofMap(mesh, kind, degree, n_dofs, cell_dofs, mask,
                      homogeneous_boundary)
    if kind == KIND_LAGRANGE:
        reg = build_node_registry(mesh, degree)
        return DofMap(mesh, kind, degree, reg.n_nodes, reg.tet_nodes,
                      reg.boundary.copy(), homogeneous_boundary, registry=reg)
    if kind == KIND_BROKEN_SCALAR:
        nloc = ps.dim_p_tet(degree)
        cell_dofs = np.arange(mesh.n_tets * nloc,
                              dtype=np.int64).reshape(mesh.n_tets, nloc)
        mask = np.zeros(mesh.n_tets * nloc, dtype=bool)
        return DofMap(mesh, kind, degree, mesh.n_tets * nloc, cell_dofs, mask,
                      homogeneous_boundary)
    raise ValueError(f"unknown dof map kind {kind!r}")


# ---------------------------------------------------------------------------
# element-level machinery
# ---------------------------------------------------------------------------

def _covariant_eval(space: ps.ReferenceSpace, geom, t: int):
    """field_eval closure: covariant-mapped reference basis at physical points."""
    Jinv = geom.Jinv[t]

    def field_eval(pts):
        xhat = (np.asarray(pts) - geom.v0[t]) @ Jinv.T
        vals = space.eval(xhat)                    # (q, 3, n)
        return np.einsum("ba,qbn->qan", Jinv, vals)

    return field_eval


def _piola_eval(space: ps.ReferenceSpace, geom, t: int):
    J = geom.J[t]
    det = geom.detJ[t]
    Jinv = geom.Jinv[t]

    def field_eval(pts):
        xhat = (np.asarray(pts) - geom.v0[t]) @ Jinv.T
        vals = space.eval(xhat)
        return np.einsum("ab,qbn->qan", J, vals) / det

    return field_eval


def nedelec_element_matrix(mesh: Mesh, dofmap: DofMap, t: int) -> np.ndarray:
    """Dof matrix of the covariant-mapped reference basis on element t."""
    V = dofmap._vcache.get(t)
    if V is None:
        space = ps.reference_space(ps.NEDELEC1_TET, dofmap.degree)
        geom = mesh.geom()
        verts = mesh.vertices[mesh.tets[t]]
        V = ps.nedelec_dof_matrix(verts, mesh.tets[t], dofmap.degree,
                                  _covariant_eval(space, geom, t))
        dofmap._vcache[t] = V
    return V


class _RefTables:
    """Reference basis tables at a tet quadrature rule, shared per degree."""

    def __init__(self, degree: int, exactness: int):
        self.rule = ps.quadrature("tet", min(exactness, ps.MAX_QUAD_EXACTNESS))
        space = ps.reference_space(ps.NEDELEC1_TET, degree)
        self.space = space
        v = _poly.vandermonde(3, degree, self.rule.points)
        self.vals = np.einsum("qm,icm->qci", v, space.coeffs)       # (q,3,n)
        self.curls = np.einsum("qm,iam->qai", v, space.curl_coeffs())
        w = self.rule.weights
        self.TCC = np.einsum("q,qai,qbj->abij", w, self.curls, self.curls)
        self.TVV = np.einsum("q,qai,qbj->abij", w, self.vals, self.vals)


_ref_tables_cache: dict = {}


def _ref_tables(degree: int, exactness: int) -> _RefTables:
    key = (degree, exactness)
    tab = _ref_tables_cache.get(key)
    if tab is None:
        tab = _RefTables(degree, exactness)
        _ref_tables_cache[key] = tab
    return tab


def _reduce(mat: sp.coo_matrix, dofmap: DofMap) -> sp.csr_matrix:
    free = dofmap.free
    return mat.tocsr()[free][:, free].tocsr()


def assemble_curlcurl(mesh: Mesh, dofmap: DofMap, mu: MaterialField,
                      exactness: int | None = None) -> sp.csr_matrix:
    """Stiffness (mu^-1 curl u, curl w) over the free dofs."""
    k = dofmap.degree
    tab = _ref_tables(k, 2 * k + 2 if exactness is None else exactness)
    geom = mesh.geom()
    mu_t = mu.per_tet(mesh)
    rows, cols, vals = [], [], []
    for t in range(mesh.n_tets):
        V = nedelec_element_matrix(mesh, dofmap, t)
        Vinv = np.linalg.inv(V)
        JtJ = geom.J[t].T @ geom.J[t]
        A_gen = np.einsum("ab,abij->ij", JtJ, tab.TCC) / (geom.detJ[t] * mu_t[t])
        A_loc = Vinv.T @ A_gen @ Vinv
        dofs = dofmap.cell_dofs[t]
        rows.append(np.repeat(dofs, len(dofs)))
        cols.append(np.tile(dofs, len(dofs)))
        vals.append(A_loc.ravel())
    A = sp.coo_matrix((np.concatenate(vals),
                       (np.concatenate(rows), np.concatenate(cols))),
                      shape=(dofmap.n_dofs, dofmap.n_dofs))
    return _reduce(A, dofmap)


def assemble_mass(mesh: Mesh, dofmap: DofMap,
                  exactness: int | None = None) -> sp.csr_matrix:
    k = dofmap.degree
    tab = _ref_tables(k, 2 * k + 2 if exactness is None else exactness)
    geom = mesh.geom()
    rows, cols, vals = [], [], []
    for t in range(mesh.n_tets):
        V = nedelec_element_matrix(mesh, dofmap, t)
        Vinv = np.linalg.inv(V)
        K = np.linalg.inv(geom.J[t].T @ geom.J[t])
        M_gen = np.einsum("ab,abij->ij", K, tab.TVV) * geom.detJ[t]
        M_loc = Vinv.T @ M_gen @ Vinv
        dofs = dofmap.cell_dofs[t]
        rows.append(np.repeat(dofs, len(dofs)))
        cols.append(np.tile(dofs, len(dofs)))
        vals.append(M_loc.ravel())
    M = sp.coo_matrix((np.concatenate(vals),
                       (np.concatenate(rows), np.concatenate(cols))),
                      shape=(dofmap.n_dofs, dofmap.n_dofs))
    return _reduce(M, dofmap)


def assemble_rhs(mesh: Mesh, dofmap: DofMap, j: CurrentDensity,
                 exactness: int | None = None) -> np.ndarray:
    """Load vector (j, w) over all dofs; boundary entries zeroed."""
    k = dofmap.degree
    if exactness is None:
        exactness = 2 * k + 2 if j.is_polynomial else 2 * k + 4
    tab = _ref_tables(k, exactness)
    geom = mesh.geom()
    rule = tab.rule
    b = np.zeros(dofmap.n_dofs)
    all_tets = np.arange(mesh.n_tets)
    jvals = j.eval_elements(mesh, all_tets, rule.points)  # (T, q, 3)
    for t in range(mesh.n_tets):
        V = nedelec_element_matrix(mesh, dofmap, t)
        jhat = jvals[t] @ geom.Jinv[t].T                  # J^-1 j
        b_gen = geom.detJ[t] * np.einsum("q,qbi,qb->i", rule.weights,
                                         tab.vals, jhat)
        b_loc = np.linalg.solve(V.T, b_gen)
        np.add.at(b, dofmap.cell_dofs[t], b_loc)
    if dofmap.homogeneous_boundary:
        b[dofmap.boundary_mask] = 0.0
    return b


def interpolate_nedelec(mesh: Mesh, dofmap: DofMap, func,
                        exactness: int | None = None) -> FieldCoefficients:
    """Canonical dof interpolation of an analytic field; shared dofs receive
    identical values from both sides by construction."""
    vals = np.zeros(dofmap.n_dofs)

    def wrap(pts):
        return np.asarray(func(pts))[:, :, None]

    for t in range(mesh.n_tets):
        verts = mesh.vertices[mesh.tets[t]]
        loc = ps.nedelec_dof_matrix(verts, mesh.tets[t], dofmap.degree, wrap)[:, 0]
        vals[dofmap.cell_dofs[t]] = loc
    if dofmap.homogeneous_boundary:
        vals[dofmap.boundary_mask] = 0.0
    return FieldCoefficients(dofmap, vals)


def nedelec_field_to_poly(mesh: Mesh, dofmap: DofMap,
                          u: FieldCoefficients) -> BrokenPolyField:
    """Expand assembled coefficients into the broken polynomial representation."""
    k = dofmap.degree
    space = ps.reference_space(ps.NEDELEC1_TET, k)
    geom = mesh.geom()
    out = np.empty((mesh.n_tets, 3, _poly.n_monomials(3, k)))
    for t in range(mesh.n_tets):
        V = nedelec_element_matrix(mesh, dofmap, t)
        cgen = np.linalg.solve(V, u.values[dofmap.cell_dofs[t]])
        cref = np.einsum("i,icm->cm", cgen, space.coeffs)
        out[t] = geom.Jinv[t].T @ cref
    return BrokenPolyField(mesh, k, out)


def compute_Hh(mesh: Mesh, dofmap: DofMap, u: FieldCoefficients,
               mu: MaterialField):
    """H_h = mu^-1 curl u_h as a broken polynomial, plus its element curls."""
    k = dofmap.degree
    space = ps.reference_space(ps.NEDELEC1_TET, k)
    geom = mesh.geom()
    mu_t = mu.per_tet(mesh)
    ccoef = space.curl_coeffs()
    out = np.empty((mesh.n_tets, 3, _poly.n_monomials(3, k)))
    for t in range(mesh.n_tets):
        V = nedelec_element_matrix(mesh, dofmap, t)
        cgen = np.linalg.solve(V, u.values[dofmap.cell_dofs[t]])
        cc = np.einsum("i,iam->am", cgen, ccoef)
        out[t] = (geom.J[t] @ cc) / (geom.detJ[t] * mu_t[t])
    Hh = BrokenPolyField(mesh, k, out)
    return Hh, Hh.curl()


# ---------------------------------------------------------------------------
# discrete gradient and right-hand-side correction
# ---------------------------------------------------------------------------

def discrete_gradient(mesh: Mesh, dm_ned: DofMap, dm_lag: DofMap) -> sp.csr_matrix:
    """Coefficient map G with grad(psi) = field(G psi): full dof sizes."""
    if dm_lag.degree != dm_ned.degree:
        raise ValueError("scalar degree must match the curl-space degree")
    scal = ps.reference_space(ps.P_SCALAR_TET, dm_lag.degree)
    gradc = scal.grad_coeffs()                    # (n, 3, nm)
    geom = mesh.geom()
    rows, cols, vals = [], [], []
    for t in range(mesh.n_tets):
        Jinv = geom.Jinv[t]
        v0 = geom.v0[t]

        def field_eval(pts):
            xhat = (np.asarray(pts) - v0) @ Jinv.T
            v = _poly.vandermonde(3, dm_lag.degree, xhat)
            g = np.einsum("qm,ibm->qbi", v, gradc)
            return np.einsum("ba,qbn->qan", Jinv, g)

        locG = ps.nedelec_dof_matrix(mesh.vertices[mesh.tets[t]],
                                     mesh.tets[t], dm_ned.degree, field_eval)
        nd = dm_ned.cell_dofs[t]
        nl = dm_lag.cell_dofs[t]
        rows.append(np.repeat(nd, len(nl)))
        cols.append(np.tile(nl, len(nd)))
        vals.append(locG.ravel())
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    vals = np.concatenate(vals)
    G = sp.coo_matrix((vals, (rows, cols)),
                      shape=(dm_ned.n_dofs, dm_lag.n_dofs)).tocsr()
    cnt = sp.coo_matrix((np.ones_like(vals), (rows, cols)),
                        shape=G.shape).tocsr()
    G.data /= cnt.data  # duplicates from shared entities are equal; average
    return G


def gradient_correction(mesh: Mesh, dofmap: DofMap, rhs: np.ndarray,
                        G: sp.csr_matrix | None = None) -> np.ndarray:
    """Project the load vector onto the complement of the discrete gradients.

    Returns r' = r - G q with q solving (G^T G) q = G^T r over the interior
    scalar dofs, so G^T r' = 0 and the singular system stays consistent in
    the presence of quadrature error.
    """
    dm_lag = build_dofmap(mesh, KIND_LAGRANGE, dofmap.degree,
                          homogeneous_boundary=True)
    if G is None:
        G = discrete_gradient(mesh, dofmap, dm_lag)
    Gf = G[dofmap.free][:, dm_lag.free].tocsc()
    if Gf.shape[1] == 0:
        return rhs.copy()
    r = rhs[dofmap.free]
    K = (Gf.T @ Gf).tocsc()
    try:
        solve = spla.factorized(K)
        q = solve(Gf.T @ r)
    except RuntimeError as exc:
        raise ProjectionSolveFailure(str(exc))
    if not np.all(np.isfinite(q)):
        raise ProjectionSolveFailure("projection solve produced non-finite values")
    out = rhs.copy()
    out[dofmap.free] = r - Gf @ q
    return out


# ---------------------------------------------------------------------------
# solving
# ---------------------------------------------------------------------------

@dataclass
class SolverConfig:
    backend: str = "direct"
    tol: float = 1e-10
    max_iter: int = 50000


def solve_magnetostatic(A: sp.csr_matrix, rhs: np.ndarray, dofmap: DofMap,
                        cfg: SolverConfig | None = None,
                        mass: sp.csr_matrix | None = None) -> FieldCoefficients:
    """Solve the (singular, consistent) reduced system and scatter to full dofs.

    The returned coefficients are one gauge representative; only the curl is
    used downstream.  Direct backend: shifted factorization plus iterative
    refinement measured against the unshifted matrix.  CG backend:
    Jacobi-preconditioned conjugate gradients on the singular system.
    """
    cfg = cfg or SolverConfig()
    b = rhs[dofmap.free]
    n = A.shape[0]
    full = np.zeros(dofmap.n_dofs)
    if n == 0 or np.linalg.norm(b) == 0.0:
        return FieldCoefficients(dofmap, full)
    bnorm = np.linalg.norm(b)

    if cfg.backend == "direct":
        eps = 1e-10 * (A.diagonal().sum() / n)
        reg = mass if mass is not None else sp.identity(n, format="csr")
        K = (A + eps * reg).tocsc()
        solve = spla.factorized(K)
        u = np.zeros(n)
        for _ in range(50):
            r = b - A @ u
            if np.linalg.norm(r) <= cfg.tol * bnorm:
                break
            u = u + solve(r)
        else:
            raise NoConvergence("iterative refinement stalled; "
                                "was the right-hand side gradient-corrected?")
    elif cfg.backend == "cg":
        dinv = 1.0 / A.diagonal()
        u = np.zeros(n)
        r = b.copy()
        z = dinv * r
        p = z.copy()
        rz = float(r @ z)
        for it in range(cfg.max_iter):
            if np.linalg.norm(r) <= cfg.tol * bnorm:
                break
            Ap = A @ p
            alpha = rz / float(p @ Ap)
            u += alpha * p
            r -= alpha * Ap
            z = dinv * r
            rz_new = float(r @ z)
            p = z + (rz_new / rz) * p
            rz = rz_new
        else:
            raise NoConvergence(f"CG did not reach tol in {cfg.max_iter} iterations")
        log.debug("cg converged in %d iterations", it)
    else:
        raise ValueError(f"unknown solver backend {cfg.backend!r}")

    full[dofmap.free] = u
    return FieldCoefficients(dofmap, full)


# ---------------------------------------------------------------------------
# current projection
# ---------------------------------------------------------------------------

def project_current(mesh: Mesh, j_func, degree: int,
                    exactness: int | None = None) -> CurrentDensity:
    """Element-wise div-conforming interpolation of an analytic current.

    Face moments follow the global-id orientation, so normal fluxes match
    across internal faces and the interpolant is H(div)-conforming.
    """
    space = ps.reference_space(ps.RT_TET, degree)
    geom = mesh.geom()
    ex = 2 * degree + 4 if exactness is None else exactness
    nm = _poly.n_monomials(3, degree)
    out = np.empty((mesh.n_tets, 3, nm))

    def wrap(pts):
        return np.asarray(j_func(pts))[:, :, None]

    for t in range(mesh.n_tets):
        verts = mesh.vertices[mesh.tets[t]]
        gids = mesh.tets[t]
        V = ps.rt_dof_matrix(verts, gids, degree,
                             _piola_eval(space, geom, t), exactness=ex)
        bvec = ps.rt_dof_matrix(verts, gids, degree, wrap, exactness=ex)[:, 0]
        c = np.linalg.solve(V, bvec)
        cref = np.einsum("i,icm->cm", c, space.coeffs)
        out[t] = (geom.J[t] @ cref) / geom.detJ[t]
    field = BrokenPolyField(mesh, degree, out)
    return CurrentDensity(func=j_func, field=field, divergence_free=True,
                          label="projected")


# ---------------------------------------------------------------------------
# face jump utilities and norms
# ---------------------------------------------------------------------------

def face_rule_points(mesh: Mesh, f: int, rule) -> np.ndarray:
    """Physical quadrature points of a face, identical from both sides."""
    a, b, c = mesh.faces[f]
    va = mesh.vertices[a]
    e1 = mesh.vertices[b] - va
    e2 = mesh.vertices[c] - va
    return va + rule.points[:, 0:1] * e1 + rule.points[:, 1:2] * e2


def tangential_jump_values(mesh: Mesh, field: BrokenPolyField, f: int,
                           rule) -> np.ndarray:
    """n x (F+ - F-) at the face rule points; requires an internal face."""
    tp, tm = mesh.face_tets[f]
    pts = face_rule_points(mesh, f, rule)
    geom = mesh.geom()
    vplus = field.eval_one(tp, geom.ref_coords(tp, pts))
    vminus = field.eval_one(tm, geom.ref_coords(tm, pts))
    n = mesh.face_normal(f)
    return np.cross(n[None, :], vplus - vminus)


def tangential_jump_norms(mesh: Mesh, field: BrokenPolyField,
                          exactness: int | None = None) -> np.ndarray:
    """L2 norms of the tangential jump on every internal face (0 on boundary)."""
    ex = 2 * field.degree if exactness is None else exactness
    rule = ps.quadrature("tri", min(max(ex, 2), ps.MAX_QUAD_EXACTNESS))
    areas = mesh.face_areas()
    out = np.zeros(mesh.n_faces)
    for f in mesh.internal_faces():
        jump = tangential_jump_values(mesh, field, f, rule)
        out[f] = np.sqrt(2.0 * areas[f] *
                         float(np.einsum("q,qc->", rule.weights, jump ** 2)))
    return out


def normal_jump_norms(mesh: Mesh, field: BrokenPolyField,
                      exactness: int | None = None) -> np.ndarray:
    ex = 2 * field.degree if exactness is None else exactness
    rule = ps.quadrature("tri", min(max(ex, 2), ps.MAX_QUAD_EXACTNESS))
    areas = mesh.face_areas()
    geom = mesh.geom()
    out = np.zeros(mesh.n_faces)
    for f in mesh.internal_faces():
        tp, tm = mesh.face_tets[f]
        pts = face_rule_points(mesh, f, rule)
        n = mesh.face_normal(f)
        dv = (field.eval_one(tp, geom.ref_coords(tp, pts))
              - field.eval_one(tm, geom.ref_coords(tm, pts))) @ n
        out[f] = np.sqrt(2.0 * areas[f] * float(np.dot(rule.weights, dv ** 2)))
    return out


def l2_error_against(mesh: Mesh, mu: MaterialField, field: BrokenPolyField,
                     exact, exactness: int) -> float:
    """Energy norm ||mu^(1/2)(exact - field)|| with an analytic reference."""
    rule = ps.quadrature("tet", min(exactness, ps.MAX_QUAD_EXACTNESS))
    geom = mesh.geom()
    mu_t = mu.per_tet(mesh)
    tets = np.arange(mesh.n_tets)
    vals = field.eval(tets, rule.points)
    pts = geom.map_points(tets, rule.points)
    ex_vals = np.asarray(exact(pts.reshape(-1, 3))).reshape(vals.shape)
    diff = ex_vals - vals
    per_tet = np.einsum("q,tqc->t", rule.weights, diff ** 2) * geom.detJ * mu_t
    return float(np.sqrt(per_tet.sum()))


def l2_error_per_tet(mesh: Mesh, mu: MaterialField, field: BrokenPolyField,
                     exact, exactness: int) -> np.ndarray:
    rule = ps.quadrature("tet", min(exactness, ps.MAX_QUAD_EXACTNESS))
    geom = mesh.geom()
    mu_t = mu.per_tet(mesh)
    tets = np.arange(mesh.n_tets)
    vals = field.eval(tets, rule.points)
    pts = geom.map_points(tets, rule.points)
    ex_vals = np.asarray(exact(pts.reshape(-1, 3))).reshape(vals.shape)
    diff = ex_vals - vals
    per_tet = np.einsum("q,tqc->t", rule.weights, diff ** 2) * geom.detJ * mu_t
    return np.sqrt(np.maximum(per_tet, 0.0))
