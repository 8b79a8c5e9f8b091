"""Reference-element polynomial machinery.

Provides quadrature rules on segment/triangle/tetrahedron, Lagrange node
sets, and the polynomial spaces used throughout: scalar spaces on the
tetrahedron and triangle, curl-conforming (first-kind edge) elements,
divergence-conforming elements, and the in-plane face space that holds
tangential traces.  Bases are built from orthogonalized monomial generators
and re-expressed as the dual basis of the canonical moment functionals, so
the unisolvence matrix of every space is the identity by construction.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.polynomial.legendre import leggauss, legval
from scipy.special import roots_jacobi

from . import _poly
from .errors import SingularJacobian, UnsupportedDegree, WrongKind

# Reference tetrahedron (0,0,0),(1,0,0),(0,1,0),(0,0,1); reference triangle
# (0,0),(1,0),(0,1).
TET_VERTS = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0],
                      [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
TRI_VERTS = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])

TET_EDGES = ((0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3))
TET_FACES = ((1, 2, 3), (0, 2, 3), (0, 1, 3), (0, 1, 2))  # face i opposite vertex i
TRI_EDGES = ((0, 1), (0, 2), (1, 2))

EDGE_INDEX = {e: i for i, e in enumerate(TET_EDGES)}

MAX_DEGREE = 4
MAX_QUAD_EXACTNESS = 12

_EPS3 = np.zeros((3, 3, 3))
for _i, _j, _k in ((0, 1, 2), (1, 2, 0), (2, 0, 1)):
    _EPS3[_i, _j, _k] = 1.0
    _EPS3[_i, _k, _j] = -1.0


# ---------------------------------------------------------------------------
# dimension formulas
# ---------------------------------------------------------------------------

def dim_p_tet(k: int) -> int:
    return (k + 1) * (k + 2) * (k + 3) // 6


def dim_p_tri(k: int) -> int:
    return (k + 1) * (k + 2) // 2


def dim_nedelec_tet(k: int) -> int:
    return k * (k + 2) * (k + 3) // 2


def dim_rt_tet(k: int) -> int:
    return k * (k + 1) * (k + 3) // 2


def dim_rt_tri(k: int) -> int:
    return k * (k + 2)


# ---------------------------------------------------------------------------
# quadrature
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class QuadratureRule:
    domain: str
    exactness: int
    points: np.ndarray   # (n, d) reference coordinates
    weights: np.ndarray  # (n,)


def _gauss01(m: int):
    x, w = leggauss(m)
    return 0.5 * (x + 1.0), 0.5 * w


def _jacobi01(m: int, alpha: int):
    # Nodes/weights for int_0^1 f(t) (1-t)^alpha dt.
    x, w = roots_jacobi(m, alpha, 0.0)
    return 0.5 * (x + 1.0), w / 2.0 ** (alpha + 1)


@lru_cache(maxsize=None)
def quadrature(domain: str, exactness: int) -> QuadratureRule:
    """Rule exact for polynomials of total degree <= exactness.

    Triangle/tetrahedron rules are collapsed tensor products with Jacobi
    weights absorbing the Duffy Jacobian, so exactness is guaranteed rather
    than tabulated.
    """
    if exactness > MAX_QUAD_EXACTNESS or exactness < 0:
        raise UnsupportedDegree(
            f"quadrature exactness {exactness} outside 0..{MAX_QUAD_EXACTNESS}")
    m = exactness // 2 + 1
    if domain == "segment":
        t, w = _gauss01(m)
        return QuadratureRule(domain, exactness, t.reshape(-1, 1), w)
    if domain == "tri":
        a, wa = _gauss01(m)
        b, wb = _jacobi01(m, 1)
        A, B = np.meshgrid(a, b, indexing="ij")
        pts = np.column_stack([(A * (1.0 - B)).ravel(), B.ravel()])
        w = np.outer(wa, wb).ravel()
        return QuadratureRule(domain, exactness, pts, w)
    if domain == "tet":
        a, wa = _gauss01(m)
        b, wb = _jacobi01(m, 1)
        c, wc = _jacobi01(m, 2)
        A, B, C = np.meshgrid(a, b, c, indexing="ij")
        x = A * (1.0 - B) * (1.0 - C)
        y = B * (1.0 - C)
        pts = np.column_stack([x.ravel(), y.ravel(), C.ravel()])
        w = (wa[:, None, None] * wb[None, :, None] * wc[None, None, :]).ravel()
        return QuadratureRule(domain, exactness, pts, w)
    raise ValueError(f"unknown quadrature domain {domain!r}")


# ---------------------------------------------------------------------------
# Lagrange nodes
# ---------------------------------------------------------------------------

NODE_VERTEX, NODE_EDGE, NODE_FACE, NODE_CELL = 0, 1, 2, 3


@dataclass(frozen=True)
class LagrangeNodeSet:
    degree: int
    multi: np.ndarray    # (n, 4) integer barycentric multi-indices, sum = degree
    bary: np.ndarray     # (n, 4) barycentric coordinates multi/degree
    kind: np.ndarray     # (n,) NODE_* classification
    entity: np.ndarray   # (n,) local vertex/edge/face index (0 for cell nodes)

    @property
    def n_nodes(self) -> int:
        return len(self.multi)

    def ref_coords(self) -> np.ndarray:
        """Cartesian coordinates on the reference tetrahedron."""
        return self.bary[:, 1:] @ TET_VERTS[1:]


@lru_cache(maxsize=None)
def lagrange_nodes(degree: int) -> LagrangeNodeSet:
    if degree < 1:
        raise UnsupportedDegree("Lagrange node sets need degree >= 1")
    multi = []
    for i0 in range(degree, -1, -1):
        for i1 in range(degree - i0, -1, -1):
            for i2 in range(degree - i0 - i1, -1, -1):
                multi.append((i0, i1, i2, degree - i0 - i1 - i2))
    multi = np.array(multi, dtype=np.int64)
    kind = np.empty(len(multi), dtype=np.int64)
    entity = np.zeros(len(multi), dtype=np.int64)
    for n, m in enumerate(multi):
        support = tuple(int(i) for i in np.nonzero(m)[0])
        if len(support) == 1:
            kind[n] = NODE_VERTEX
            entity[n] = support[0]
        elif len(support) == 2:
            kind[n] = NODE_EDGE
            entity[n] = EDGE_INDEX[support]
        elif len(support) == 3:
            kind[n] = NODE_FACE
            # local face index = the local vertex with zero weight
            entity[n] = int(np.nonzero(m == 0)[0][0])
        else:
            kind[n] = NODE_CELL
    return LagrangeNodeSet(degree, multi, multi / float(degree), kind, entity)


# ---------------------------------------------------------------------------
# canonical moment functionals
# ---------------------------------------------------------------------------

def _legendre_rows(s: np.ndarray, n: int) -> np.ndarray:
    """Legendre P_0..P_{n-1} on [0,1] evaluated at s; returns (n, len(s))."""
    eye = np.eye(n)
    return np.array([legval(2.0 * s - 1.0, eye[j]) for j in range(n)])


def nedelec_dof_matrix(verts: np.ndarray, gids, k: int, field_eval,
                       exactness: int | None = None) -> np.ndarray:
    """Apply the canonical edge/face/interior moments to a set of fields.

    ``field_eval(points (m,3)) -> (m, 3, nf)`` evaluates the fields at
    physical points.  Vertex ids ``gids`` fix the orientation of the edge and
    face parameterizations, so two elements sharing an entity produce the
    same functionals.  Row order: per local edge k tangential moments, per
    local face k(k-1) in-plane moments, then interior moments.  ``exactness``
    raises the rule orders for non-polynomial fields.
    """
    verts = np.asarray(verts, dtype=float)
    gids = np.asarray(gids)
    ex = 2 * k if exactness is None else exactness
    blocks = []

    seg = quadrature("segment", ex + 2)
    s = seg.points[:, 0]
    wleg = seg.weights[None, :] * _legendre_rows(s, k)   # (k, m)
    for a, b in TET_EDGES:
        lo, hi = (a, b) if gids[a] < gids[b] else (b, a)
        vec = verts[hi] - verts[lo]
        length = np.linalg.norm(vec)
        pts = verts[lo] + s[:, None] * vec[None, :]
        vals = field_eval(pts)                      # (m, 3, nf)
        tv = np.einsum("mcf,c->mf", vals, vec / length)
        blocks.append(length * (wleg @ tv))         # (k, nf)

    if k >= 2:
        tri = quadrature("tri", ex)
        xi = tri.points
        monos = _poly.vandermonde(2, k - 2, xi)      # (m, nmono)
        wmono = tri.weights[:, None] * monos
        for face in TET_FACES:
            order = sorted(face, key=lambda l: gids[l])
            va, vb, vc = (verts[l] for l in order)
            e1, e2 = vb - va, vc - va
            area2 = np.linalg.norm(np.cross(e1, e2))  # twice the area
            dirs = np.stack([e1 / np.linalg.norm(e1), e2 / np.linalg.norm(e2)])
            pts = va + xi[:, 0:1] * e1 + xi[:, 1:2] * e2
            vals = field_eval(pts)
            # row order: monomial-major, direction-minor
            rows = area2 * np.einsum("mo,dc,mcf->odf", wmono, dirs, vals)
            blocks.append(rows.reshape(-1, rows.shape[2]))

    if k >= 3:
        tet = quadrature("tet", ex)
        xr = tet.points
        vol6 = abs(np.linalg.det(np.column_stack([verts[i] - verts[0] for i in (1, 2, 3)])))
        pts = verts[0] + xr @ np.column_stack([verts[i] - verts[0] for i in (1, 2, 3)]).T
        wmono = tet.weights[:, None] * _poly.vandermonde(3, k - 3, xr)
        vals = field_eval(pts)
        rows = vol6 * np.einsum("mo,mcf->ocf", wmono, vals)
        blocks.append(rows.reshape(-1, rows.shape[2]))

    return np.vstack(blocks)


def rt_dof_matrix(verts: np.ndarray, gids, k: int, field_eval,
                  exactness: int | None = None) -> np.ndarray:
    """Canonical face-flux / interior moments of the div-conforming space.

    Face normals follow the ascending-global-id convention so that shared
    faces receive identical functionals from both sides.
    """
    verts = np.asarray(verts, dtype=float)
    gids = np.asarray(gids)
    ex = 2 * k if exactness is None else exactness
    blocks = []

    tri = quadrature("tri", ex)
    xi = tri.points
    wmono = tri.weights[:, None] * _poly.vandermonde(2, k - 1, xi)
    for face in TET_FACES:
        order = sorted(face, key=lambda l: gids[l])
        va, vb, vc = (verts[l] for l in order)
        e1, e2 = vb - va, vc - va
        nvec = np.cross(e1, e2)
        area2 = np.linalg.norm(nvec)
        pts = va + xi[:, 0:1] * e1 + xi[:, 1:2] * e2
        vals = field_eval(pts)
        nv = np.einsum("mcf,c->mf", vals, nvec / area2)
        blocks.append(area2 * (wmono.T @ nv))

    if k >= 2:
        tet = quadrature("tet", ex)
        xr = tet.points
        vol6 = abs(np.linalg.det(np.column_stack([verts[i] - verts[0] for i in (1, 2, 3)])))
        pts = verts[0] + xr @ np.column_stack([verts[i] - verts[0] for i in (1, 2, 3)]).T
        wmono = tet.weights[:, None] * _poly.vandermonde(3, k - 2, xr)
        vals = field_eval(pts)
        rows = vol6 * np.einsum("mo,mcf->ocf", wmono, vals)
        blocks.append(rows.reshape(-1, rows.shape[2]))

    return np.vstack(blocks)


def rt_tri_dof_matrix(verts2: np.ndarray, k: int, field_eval) -> np.ndarray:
    """Edge-normal / interior moments for the in-plane triangle space (2D)."""
    verts2 = np.asarray(verts2, dtype=float)
    rows = []
    seg = quadrature("segment", 2 * k + 2)
    s = seg.points[:, 0]
    leg = _legendre_rows(s, k)
    for a, b in TRI_EDGES:
        vec = verts2[b] - verts2[a]
        length = np.linalg.norm(vec)
        nhat = np.array([vec[1], -vec[0]]) / length
        pts = verts2[a] + s[:, None] * vec[None, :]
        vals = field_eval(pts)
        nv = np.einsum("mcf,c->mf", vals, nhat)
        for j in range(k):
            rows.append(length * np.einsum("m,m,mf->f", seg.weights, leg[j], nv))
    if k >= 2:
        tri = quadrature("tri", 2 * k)
        e1 = verts2[1] - verts2[0]
        e2 = verts2[2] - verts2[0]
        area2 = abs(e1[0] * e2[1] - e1[1] * e2[0])
        pts = verts2[0] + tri.points[:, 0:1] * e1 + tri.points[:, 1:2] * e2
        monos = _poly.vandermonde(2, k - 2, tri.points)
        vals = field_eval(pts)
        for mono in monos.T:
            for c in range(2):
                rows.append(area2 * np.einsum("m,m,mf->f", tri.weights, mono, vals[:, c, :]))
    return np.array(rows)


# ---------------------------------------------------------------------------
# reference spaces
# ---------------------------------------------------------------------------

P_SCALAR_TET = "P_scalar_tet"
NEDELEC1_TET = "Nedelec1_tet"
RT_TET = "RT_tet"
P_SCALAR_TRI = "P_scalar_tri"
RT_TANGENTIAL_TRI = "RTtangential_tri"

KINDS = (P_SCALAR_TET, NEDELEC1_TET, RT_TET, P_SCALAR_TRI, RT_TANGENTIAL_TRI)


@dataclass(frozen=True)
class ReferenceSpace:
    """A polynomial space on a reference simplex, stored as the dual basis of
    its canonical degree-of-freedom functionals.

    ``coeffs`` has shape (dim, ncomp, n_monomials): basis function i is
    ``sum_m coeffs[i, c, m] * monomial_m`` in component c.
    """
    kind: str
    degree: int
    dim: int
    ncomp: int
    sdim: int
    coeffs: np.ndarray

    def eval(self, points: np.ndarray) -> np.ndarray:
        """Values at reference points; returns (npts, ncomp, dim)."""
        v = _poly.vandermonde(self.sdim, self.degree, points)
        return np.einsum("qm,icm->qci", v, self.coeffs)

    def eval_scalar(self, points: np.ndarray) -> np.ndarray:
        """Scalar-space values as (npts, dim)."""
        return self.eval(points)[:, 0, :]

    def curl_coeffs(self) -> np.ndarray:
        if self.kind != NEDELEC1_TET:
            raise WrongKind(f"curl is only defined for {NEDELEC1_TET}")
        D = _poly.diff_stack(3, self.degree)
        dc = np.einsum("bmn,icn->bicm", D, self.coeffs)
        return np.einsum("abc,bicm->iam", _EPS3, dc)

    def grad_coeffs(self) -> np.ndarray:
        if self.ncomp != 1:
            raise WrongKind("grad is only defined for scalar spaces")
        D = _poly.diff_stack(self.sdim, self.degree)
        return np.einsum("bmn,in->ibm", D, self.coeffs[:, 0, :])

    def div_coeffs(self) -> np.ndarray:
        if self.kind not in (RT_TET, RT_TANGENTIAL_TRI):
            raise WrongKind("div is only defined for div-conforming spaces")
        D = _poly.diff_stack(self.sdim, self.degree)
        return np.einsum("cmn,icn->im", D, self.coeffs)

    def curl2d_coeffs(self) -> np.ndarray:
        """In-plane rotated gradient (d2 p, -d1 p) of a scalar triangle space."""
        if self.kind != P_SCALAR_TRI:
            raise WrongKind("curl2d is only defined for the scalar triangle space")
        g = self.grad_coeffs()
        out = np.empty_like(g)
        out[:, 0, :] = g[:, 1, :]
        out[:, 1, :] = -g[:, 0, :]
        return out


def _orthonormalize(gen: np.ndarray, sdim: int, degree: int, expected: int) -> np.ndarray:
    """Orthonormalize generators in L2 of the reference simplex, dropping the
    rank deficiency of redundant generating sets."""
    M = _poly.moment_matrix(sdim, degree)
    gram = np.einsum("icm,mn,jcn->ij", gen, M, gen)
    w, V = np.linalg.eigh(gram)
    keep = w > max(w) * 1e-10
    if keep.sum() != expected:
        raise RuntimeError(
            f"generator rank {keep.sum()} != expected dim {expected}")
    C = V[:, keep] / np.sqrt(w[keep])
    return np.einsum("gr,gcm->rcm", C, gen)


def _scalar_dual(sdim: int, degree: int, nodes_cart: np.ndarray) -> np.ndarray:
    nm = _poly.n_monomials(sdim, degree)
    V = _poly.vandermonde(sdim, degree, nodes_cart)
    if V.shape[0] != nm:
        raise RuntimeError("node count does not match space dimension")
    C = np.linalg.solve(V, np.eye(nm))
    return C.T.reshape(nm, 1, nm)


def _tri_nodes(degree: int) -> np.ndarray:
    pts = []
    for i0 in range(degree, -1, -1):
        for i1 in range(degree - i0, -1, -1):
            i2 = degree - i0 - i1
            pts.append((i1 / degree, i2 / degree) if degree > 0 else (1 / 3, 1 / 3))
    if degree == 0:
        return np.array([[1 / 3.0, 1 / 3.0]])
    return np.array(pts)


def _nedelec_generators(k: int) -> np.ndarray:
    nm = _poly.n_monomials(3, k)
    nlow = _poly.n_monomials(3, k - 1)
    exps = _poly.exponents(3, k)
    gens = []
    for m in range(nlow):
        for c in range(3):
            g = np.zeros((3, nm))
            g[c, m] = 1.0
            gens.append(g)
    shift = [_poly.shift_matrix(3, k, a) for a in range(3)]
    homog = [m for m in range(nm) if exps[m].sum() == k - 1]
    for m in homog:
        base = np.zeros(nm)
        base[m] = 1.0
        for j in range(3):
            # x cross (m e_j): component c is eps_{cdj} x_d m
            g = np.zeros((3, nm))
            for c in range(3):
                for d in range(3):
                    if _EPS3[c, d, j] != 0.0:
                        g[c] += _EPS3[c, d, j] * (shift[d] @ base)
            gens.append(g)
    return np.array(gens)


def _rt_generators(k: int, sdim: int) -> np.ndarray:
    nm = _poly.n_monomials(sdim, k)
    nlow = _poly.n_monomials(sdim, k - 1)
    exps = _poly.exponents(sdim, k)
    gens = []
    for m in range(nlow):
        for c in range(sdim):
            g = np.zeros((sdim, nm))
            g[c, m] = 1.0
            gens.append(g)
    shift = [_poly.shift_matrix(sdim, k, a) for a in range(sdim)]
    for m in range(nm):
        if exps[m].sum() != k - 1:
            continue
        base = np.zeros(nm)
        base[m] = 1.0
        g = np.stack([shift[c] @ base for c in range(sdim)])
        gens.append(g)
    return np.array(gens)


def _check_degree(kind: str, degree: int) -> None:
    lo = 0 if kind in (P_SCALAR_TET, P_SCALAR_TRI) else 1
    if not lo <= degree <= MAX_DEGREE:
        raise UnsupportedDegree(
            f"{kind} degree {degree} outside implemented range {lo}..{MAX_DEGREE}")


@lru_cache(maxsize=None)
def reference_space(kind: str, degree: int) -> ReferenceSpace:
    _check_degree(kind, degree)
    if kind == P_SCALAR_TET:
        if degree == 0:
            coeffs = np.ones((1, 1, 1))
        else:
            coeffs = _scalar_dual(3, degree, lagrange_nodes(degree).ref_coords())
        return ReferenceSpace(kind, degree, len(coeffs), 1, 3, coeffs)
    if kind == P_SCALAR_TRI:
        if degree == 0:
            coeffs = np.ones((1, 1, 1))
        else:
            coeffs = _scalar_dual(2, degree, _tri_nodes(degree))
        return ReferenceSpace(kind, degree, len(coeffs), 1, 2, coeffs)

    if kind == NEDELEC1_TET:
        gen = _orthonormalize(_nedelec_generators(degree), 3, degree,
                              dim_nedelec_tet(degree))
        dofm = nedelec_dof_matrix
        verts, sdim = TET_VERTS, 3
    elif kind == RT_TET:
        gen = _orthonormalize(_rt_generators(degree, 3), 3, degree,
                              dim_rt_tet(degree))
        dofm = rt_dof_matrix
        verts, sdim = TET_VERTS, 3
    elif kind == RT_TANGENTIAL_TRI:
        gen = _orthonormalize(_rt_generators(degree, 2), 2, degree,
                              dim_rt_tri(degree))
        verts, sdim = TRI_VERTS, 2
        dofm = None
    else:
        raise WrongKind(f"unknown kind {kind!r}")

    def field_eval(pts):
        v = _poly.vandermonde(sdim, degree, pts)
        return np.einsum("qm,icm->qci", v, gen)

    if kind == RT_TANGENTIAL_TRI:
        V = rt_tri_dof_matrix(TRI_VERTS, degree, field_eval)
    else:
        V = dofm(verts, np.arange(len(verts)), degree, field_eval)
    if V.shape[0] != V.shape[1]:
        raise RuntimeError("functional count does not match space dimension")
    X = np.linalg.solve(V, np.eye(len(V)))
    coeffs = np.einsum("gi,gcm->icm", X, gen)
    return ReferenceSpace(kind, degree, len(coeffs), gen.shape[1], sdim, coeffs)


def unisolvence_matrix(space: ReferenceSpace) -> np.ndarray:
    """Canonical functionals applied to the space's own basis (should be I)."""
    def field_eval(pts):
        return space.eval(pts)

    if space.kind == NEDELEC1_TET:
        return nedelec_dof_matrix(TET_VERTS, np.arange(4), space.degree, field_eval)
    if space.kind == RT_TET:
        return rt_dof_matrix(TET_VERTS, np.arange(4), space.degree, field_eval)
    if space.kind == RT_TANGENTIAL_TRI:
        return rt_tri_dof_matrix(TRI_VERTS, space.degree, field_eval)
    if space.kind == P_SCALAR_TET:
        nodes = (lagrange_nodes(space.degree).ref_coords() if space.degree > 0
                 else np.array([[0.25, 0.25, 0.25]]))
        return space.eval_scalar(nodes)
    if space.kind == P_SCALAR_TRI:
        return space.eval_scalar(_tri_nodes(space.degree))
    raise WrongKind(space.kind)


# ---------------------------------------------------------------------------
# public evaluation wrappers and mappings
# ---------------------------------------------------------------------------

def _validate_points(points: np.ndarray, sdim: int) -> np.ndarray:
    pts = np.asarray(points, dtype=float).reshape(-1, sdim)
    bary0 = 1.0 - pts.sum(axis=1)
    if (pts < -1e-9).any() or (bary0 < -1e-9).any():
        raise ValueError("points outside the reference simplex")
    return pts


def eval_basis(space: ReferenceSpace, points: np.ndarray) -> np.ndarray:
    """values[i][q] of basis i at point q; vector kinds get a trailing axis."""
    pts = _validate_points(points, space.sdim)
    vals = space.eval(pts)
    if space.ncomp == 1:
        return vals[:, 0, :].T
    return vals.transpose(2, 0, 1)


def eval_curl(space: ReferenceSpace, points: np.ndarray) -> np.ndarray:
    """Curl of each basis function of the curl-conforming space."""
    if space.kind != NEDELEC1_TET:
        raise WrongKind(f"eval_curl needs {NEDELEC1_TET}, got {space.kind}")
    pts = _validate_points(points, 3)
    v = _poly.vandermonde(3, space.degree, pts)
    return np.einsum("qm,iam->iqa", v, space.curl_coeffs())


def covariant_map(J: np.ndarray, ref_values: np.ndarray) -> np.ndarray:
    """Map reference vector values v to J^{-T} v (tangential-trace preserving)."""
    J = np.asarray(J, dtype=float)
    if np.linalg.det(J) <= 0.0:
        raise SingularJacobian("covariant map needs det J > 0")
    return np.asarray(ref_values) @ np.linalg.inv(J)


def piola_map(J: np.ndarray, ref_values: np.ndarray) -> np.ndarray:
    """Map reference vector values v to (1/det J) J v (flux preserving)."""
    J = np.asarray(J, dtype=float)
    det = np.linalg.det(J)
    if det <= 0.0:
        raise SingularJacobian("Piola map needs det J > 0")
    return np.asarray(ref_values) @ J.T / det
