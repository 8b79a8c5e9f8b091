"""Classical degree-weighted residual error estimator, for comparison runs."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import polyspace as ps
from .femsys import BrokenPolyField, CurrentDensity, MaterialField, \
    tangential_jump_norms
from .mesh import Mesh


@dataclass
class ResidualResult:
    vol_T: np.ndarray     # (T,) squared volume terms h_T^2/k^2 ||j - curl H_h||^2
    face_sq: np.ndarray   # (F,) squared face terms h_f/k ||jump||^2 (0 on boundary)
    mu_T: np.ndarray      # (T,) squared per-tet aggregation, face terms split half/half
    mu_h: float

    @property
    def total_sq(self) -> float:
        return float(self.vol_T.sum() + self.face_sq.sum())


def compute_residual_estimator(mesh: Mesh, mu: MaterialField, j: CurrentDensity,
                               Hh: BrokenPolyField, k: int,
                               exactness: int | None = None) -> ResidualResult:
    """Volume residual plus tangential-jump terms with 1/k weights.

    The face sum runs over internal faces only; for per-tet marking the face
    contribution is split equally between the two neighbors (the estimator
    is reported globally, marking uses the equilibrated one).
    """
    ex = exactness if exactness is not None else (
        2 * k + 2 if j.is_polynomial else 2 * k + 4)
    rule = ps.quadrature("tet", min(ex, ps.MAX_QUAD_EXACTNESS))
    geom = mesh.geom()
    tets = np.arange(mesh.n_tets)
    jv = j.eval_elements(mesh, tets, rule.points)
    cv = Hh.curl().eval(tets, rule.points)
    diff = jv - cv
    l2sq = np.einsum("q,tqc->t", rule.weights, diff ** 2) * geom.detJ
    hT = mesh.tet_diameters()
    vol_T = (hT ** 2 / k ** 2) * l2sq

    jumps = tangential_jump_norms(mesh, Hh, exactness=2 * k)
    hf = mesh.face_diameters()
    face_sq = (hf / k) * jumps ** 2

    mu_T = vol_T.copy()
    for f in mesh.internal_faces():
        tp, tm = mesh.face_tets[f]
        mu_T[tp] += 0.5 * face_sq[f]
        mu_T[tm] += 0.5 * face_sq[f]
    mu_h = float(np.sqrt(vol_T.sum() + face_sq.sum()))
    return ResidualResult(vol_T=vol_T, face_sq=face_sq, mu_T=mu_T, mu_h=mu_h)
