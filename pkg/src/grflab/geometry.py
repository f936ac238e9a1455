"""Connection and curvature engine for the reduced bundle geometry.

Index conventions (grid axes first, then slots):
    G[..., i, j]         fiber metric
    g[..., a, b]         base metric
    A[..., a, i]         connection form, A^i_a
    F[..., a, b, m]      curvature 2-form, F^m_ab
    DG[..., a, i, j]     covariant derivative of G along the base
    DDG[..., a, b, i, j] second covariant derivative, (D_a DG)_{b, ij}
    Gamma[..., c, a, b]  Christoffel symbols of g, Gamma^c_ab
    q[..., a]            divergence-type vector field, upper index

Fiber brackets in curvature formulas use beta = -c; covariant derivatives of
fiber tensors pair +c with the connection form A for lower fiber indices (and
the opposite sign for upper ones).  Curvature components are stored lowered,
with the convention R(e1, e2, e3, e4) and Ricci the trace over slots 1 and 4.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .algebra import LieAlgebra, require_valid
from .fields import DomainError, Mesh, deriv_array, metric_det

EIG_FLOOR = 1e-10


def _derivs(values: np.ndarray, mesh: Mesh) -> np.ndarray:
    """Stack of coordinate derivatives; the new axis sits first among the slots."""
    outs = [deriv_array(values, a, mesh.spacings[a]) for a in range(mesh.d)]
    return np.stack(outs, axis=mesh.d)


def check_spd_field(vals: np.ndarray, name: str, floor: float = EIG_FLOOR):
    """Abort with the offending grid point if a metric field degenerates."""
    n = vals.shape[-1]
    if n == 0:
        return
    if n == 1:
        mineig = vals[..., 0, 0]
    else:
        mineig = np.linalg.eigvalsh(vals)[..., 0]
    worst = float(np.min(mineig))
    if worst <= floor:
        idx = np.unravel_index(int(np.argmin(mineig)), mineig.shape)
        raise DomainError(
            f"{name} loses positivity at grid point {idx}: min eigenvalue {worst:.3e}"
        )


def min_eig_field(vals: np.ndarray) -> float:
    """Smallest eigenvalue of a symmetric matrix field over the whole grid."""
    n = vals.shape[-1]
    if n == 0:
        return float("inf")
    if n == 1:
        return float(np.min(vals[..., 0, 0]))
    return float(np.min(np.linalg.eigvalsh(vals)[..., 0]))


@dataclass
class TorsionField:
    """Block storage of the torsion 3-form.

    Blocks by slot type: H3 holds all-fiber values, H21 two fiber and one
    base, H12 one fiber and two base, H03 all base (identically zero when the
    base has dimension at most 2, kept for uniformity).  Fiber slots come
    first: H21[..., i, j, a], H12[..., i, a, b].
    """

    H3: np.ndarray   # (..., k, k, k) fully antisymmetric
    H21: np.ndarray  # (..., k, k, d) antisymmetric in (i, j)
    H12: np.ndarray  # (..., k, d, d) antisymmetric in (a, b)
    H03: np.ndarray  # (..., d, d, d) fully antisymmetric

    def copy(self) -> "TorsionField":
        return TorsionField(self.H3.copy(), self.H21.copy(), self.H12.copy(), self.H03.copy())

    @staticmethod
    def zeros(mesh: Mesh, k: int) -> "TorsionField":
        d = mesh.d
        gs = mesh.shape
        return TorsionField(
            np.zeros(gs + (k, k, k)),
            np.zeros(gs + (k, k, d)),
            np.zeros(gs + (k, d, d)),
            np.zeros(gs + (d, d, d)),
        )


@dataclass
class GeometryState:
    """A full field configuration at one instant: (G, g, A, H) on the mesh."""

    t: float
    mesh: Mesh
    alg: LieAlgebra
    G: np.ndarray
    g: np.ndarray
    A: np.ndarray
    H: TorsionField

    @property
    def k(self) -> int:
        return self.alg.k

    @property
    def d(self) -> int:
        return self.mesh.d

    def copy(self) -> "GeometryState":
        return GeometryState(
            self.t, self.mesh, self.alg,
            self.G.copy(), self.g.copy(), self.A.copy(), self.H.copy(),
        )

    def validate(self, floor: float = EIG_FLOOR):
        check_spd_field(self.G, "fiber metric G", floor)
        check_spd_field(self.g, "base metric g", floor)


# --- Levi-Civita data of the base metric ------------------------------------

def levi_civita(g: np.ndarray, mesh: Mesh):
    """Christoffels, Ricci tensor and scalar curvature of the base metric.

    Returns (Gamma, Ric_g, R_g) with Gamma[..., c, a, b] = Gamma^c_ab.
    """
    if np.any(metric_det(g, mesh.d) <= 0):
        raise DomainError("base metric not positive definite")
    gi = np.linalg.inv(g)
    dg = _derivs(g, mesh)  # [..., e, a, b] = d_e g_ab
    sym = (
        dg
        + np.swapaxes(dg, mesh.d, mesh.d + 1)
        - np.einsum("...dab->...abd", dg)
    )  # [..., a, b, d] = d_a g_bd + d_b g_ad - d_d g_ab
    Gamma = 0.5 * np.einsum("...cd,...abd->...cab", gi, sym)

    dGamma = _derivs(Gamma, mesh)  # [..., e, c, a, b] = d_e Gamma^c_ab
    ric = (
        np.einsum("...ccab->...ab", dGamma)
        - np.einsum("...accb->...ab", dGamma)
        + np.einsum("...ccf,...fab->...ab", Gamma, Gamma)
        - np.einsum("...caf,...fcb->...ab", Gamma, Gamma)
    )
    R = np.einsum("...ab,...ab->...", gi, ric)
    return Gamma, ric, R


def riemann_base(g: np.ndarray, Gamma: np.ndarray, mesh: Mesh) -> np.ndarray:
    """Lowered Riemann tensor of g: R[..., a, b, c, e] = g(R(v_a, v_b) v_c, v_e)."""
    dGamma = _derivs(Gamma, mesh)  # [..., e, f, a, b] = d_e Gamma^f_ab
    Rup = (
        np.einsum("...afbc->...abcf", dGamma)
        - np.einsum("...bfac->...abcf", dGamma)
        + np.einsum("...fam,...mbc->...abcf", Gamma, Gamma)
        - np.einsum("...fbm,...mac->...abcf", Gamma, Gamma)
    )
    return np.einsum("...abcf,...fe->...abce", Rup, g)


# --- connection data ---------------------------------------------------------

def compute_F(A: np.ndarray, alg: LieAlgebra, mesh: Mesh) -> np.ndarray:
    """F^m_ab = d_a A^m_b - d_b A^m_a + c^m_jk A^j_a A^k_b."""
    dA = _derivs(A, mesh)  # [..., e, a, m] = d_e A^m_a; read as d_a A^m_b below
    curl = dA - np.swapaxes(dA, mesh.d, mesh.d + 1)
    quad = np.einsum("mjk,...aj,...bk->...abm", alg.c, A, A)
    return curl + quad


def compute_DG(G: np.ndarray, A: np.ndarray, alg: LieAlgebra, mesh: Mesh) -> np.ndarray:
    """DG[..., a, i, j] = d_a G_ij - c^m_li A^l_a G_mj - c^m_lj A^l_a G_im."""
    dG = _derivs(G, mesh)
    conn = np.einsum("mli,...al,...mj->...aij", alg.c, A, G)
    return dG - conn - np.swapaxes(conn, mesh.d + 1, mesh.d + 2)


def compute_DDG(DG: np.ndarray, A: np.ndarray, Gamma: np.ndarray,
                alg: LieAlgebra, mesh: Mesh) -> np.ndarray:
    """(D_a DG)_{b, ij}: the extended derivative acts on all three slots of DG."""
    dDG = _derivs(DG, mesh)  # [..., a, b, i, j]
    base = np.einsum("...cab,...cij->...abij", Gamma, DG)
    f1 = np.einsum("mli,...al,...bmj->...abij", alg.c, A, DG)
    f2 = np.einsum("mlj,...al,...bim->...abij", alg.c, A, DG)
    return dDG - base - f1 - f2


def compute_DF(F: np.ndarray, A: np.ndarray, Gamma: np.ndarray,
               alg: LieAlgebra, mesh: Mesh) -> np.ndarray:
    """(D_e F)^m_ab, derivative slot first.  The upper fiber index pairs with
    the opposite structure-constant sign from lower ones."""
    dF = _derivs(F, mesh)  # [..., e, a, b, m]
    fib = np.einsum("mln,...el,...abn->...eabm", alg.c, A, F)
    b1 = np.einsum("...cea,...cbm->...eabm", Gamma, F)
    b2 = np.einsum("...ceb,...acm->...eabm", Gamma, F)
    return dF + fib - b1 - b2


def compute_q(DG: np.ndarray, Gi: np.ndarray, gi: np.ndarray) -> np.ndarray:
    """q^a = -1/2 g^{ab} G^{ij} DG_{b, ij}."""
    return -0.5 * np.einsum("...ab,...ij,...bij->...a", gi, Gi, DG)


# --- derived-geometry cache --------------------------------------------------

@dataclass
class DerivedGeometry:
    """First-level derived quantities of a state, computed once per evaluation."""

    Gi: np.ndarray
    gi: np.ndarray
    Gamma: np.ndarray
    Ric_g: np.ndarray
    R_g: np.ndarray
    F: np.ndarray
    DF: np.ndarray
    DG: np.ndarray
    DDG: np.ndarray
    q: np.ndarray


def derive(state: GeometryState, validated: bool = False) -> DerivedGeometry:
    if not validated:
        require_valid(state.alg)
    mesh, alg = state.mesh, state.alg
    Gi = np.linalg.inv(state.G)
    Gamma, Ric_g, R_g = levi_civita(state.g, mesh)
    gi = np.linalg.inv(state.g)
    F = compute_F(state.A, alg, mesh)
    DF = compute_DF(F, state.A, Gamma, alg, mesh)
    DG = compute_DG(state.G, state.A, alg, mesh)
    DDG = compute_DDG(DG, state.A, Gamma, alg, mesh)
    q = compute_q(DG, Gi, gi)
    return DerivedGeometry(Gi, gi, Gamma, Ric_g, R_g, F, DF, DG, DDG, q)


# --- closed-form curvature ---------------------------------------------------

@dataclass
class CurvatureBlocks:
    """Lowered curvature components by slot pattern, plus Ricci blocks.

    Block names list the slot types of (e1, e2, e3, e4): 'f' fiber, 'b' base.
    Mixed patterns not stored follow from the symmetries of the curvature
    operator.  Ric_fb[..., i, a] pairs a fiber slot with a base slot.
    """

    ffff: np.ndarray
    ffbf: np.ndarray  # [..., p, q, c, s] = R(eta_p, eta_q, v_c, eta_s)
    fbbf: np.ndarray  # [..., p, b, c, s]
    fbbb: np.ndarray  # [..., p, b, c, e]
    bbbb: np.ndarray
    Ric_ff: np.ndarray
    Ric_fb: np.ndarray
    Ric_bb: np.ndarray
    scalar: np.ndarray


def gradient(f: np.ndarray, gi: np.ndarray, mesh: Mesh) -> np.ndarray:
    """Upper-index gradient of a scalar field: (grad f)^a = g^{ab} d_b f."""
    df = _derivs(f, mesh)
    return np.einsum("...ab,...b->...a", gi, df)


def hessian(f: np.ndarray, Gamma: np.ndarray, mesh: Mesh) -> np.ndarray:
    """Covariant Hessian of a scalar: H_ab = d_a d_b f - Gamma^c_ab d_c f."""
    df = _derivs(f, mesh)
    ddf = _derivs(df, mesh)
    ddf = 0.5 * (ddf + np.swapaxes(ddf, mesh.d, mesh.d + 1))
    return ddf - np.einsum("...cab,...c->...ab", Gamma, df)


def laplacian(f: np.ndarray, gi: np.ndarray, Gamma: np.ndarray, mesh: Mesh) -> np.ndarray:
    """Laplace-Beltrami operator, the g-trace of the covariant Hessian."""
    return np.einsum("...ab,...ab->...", gi, hessian(f, Gamma, mesh))


def ricci_blocks(state: GeometryState, der: DerivedGeometry):
    """Ricci blocks and scalar curvature of the algebroid connection.

    Closed forms valid for a nilpotent structure algebra.  Returns
    (Ric_ff, Ric_fb, Ric_bb, scalar) with Ric_fb[..., i, a].
    """
    b = state.alg.beta
    G = state.G
    Gi, gi = der.Gi, der.gi
    DG, DDG, F, DF = der.DG, der.DDG, der.F, der.DF

    trDG = np.einsum("...kl,...akl->...a", Gi, DG)  # G-trace of DG per base slot
    Ric_ff = (
        -0.5 * np.einsum("...ab,...abij->...ij", gi, DDG)
        - 0.25 * np.einsum("...ab,...a,...bij->...ij", gi, trDG, DG)
        + 0.5 * np.einsum("...ab,...kl,...aik,...blj->...ij", gi, Gi, DG, DG)
        + 0.25 * np.einsum("...ac,...bd,...mi,...abm,...nj,...cdn->...ij", gi, gi, G, F, G, F)
        - 0.5 * np.einsum("...kl,...mn,mki,nlj->...ij", Gi, G, b, b)
        + 0.25 * np.einsum("...kp,...lq,...mi,mkl,...nj,npq->...ij", Gi, Gi, G, b, G, b)
    )
    Ric_fb = (
        0.5 * np.einsum("...bc,...mi,...bacm->...ia", gi, G, DF)
        + 0.5 * np.einsum("...bc,...bim,...acm->...ia", gi, DG, F)
        + 0.25 * np.einsum("...bc,...mi,...abm,...c->...ia", gi, G, F, trDG)
        - 0.5 * np.einsum("...kl,...aml,mki->...ia", Gi, DG, b)
    )
    Ric_bb = (
        der.Ric_g
        - 0.5 * np.einsum("...ij,...abij->...ab", Gi, DDG)
        + 0.25 * np.einsum("...ik,...jl,...aij,...bkl->...ab", Gi, Gi, DG, DG)
        - 0.5 * np.einsum("...cd,...mn,...acm,...bdn->...ab", gi, G, F, F)
    )
    DGsq = np.einsum("...ab,...ik,...jl,...aij,...bkl->...", gi, Gi, Gi, DG, DG)
    Fsq = np.einsum("...ac,...bd,...mn,...abm,...cdn->...", gi, gi, G, F, F)
    brsq = np.einsum("...ik,...jl,...mn,mij,nkl->...", Gi, Gi, G, b, b)
    scalar = (
        der.R_g
        - np.einsum("...ab,...ij,...abij->...", gi, Gi, DDG)
        - 0.25 * np.einsum("...ab,...a,...b->...", gi, trDG, trDG)
        + 0.75 * DGsq
        - 0.25 * Fsq
        - 0.25 * brsq
    )
    return Ric_ff, Ric_fb, Ric_bb, scalar


def curvature_closed_form(state: GeometryState, der: DerivedGeometry) -> CurvatureBlocks:
    """All five curvature components plus Ricci blocks and scalar curvature.

    Uses the closed-form expressions valid for a nilpotent structure algebra;
    the Ricci blocks and the scalar drop trace terms that vanish in that case.
    """
    b = state.alg.beta
    G, g = state.G, state.g
    Gi, gi = der.Gi, der.gi
    DG, DDG, F, DF = der.DG, der.DDG, der.F, der.DF
    mesh = state.mesh

    # all-fiber component, slots (p, q, r, s)
    t1 = -0.25 * np.einsum("...ab,...aps,...bqr->...pqrs", gi, DG, DG)
    t2 = -0.25 * np.einsum("...ms,mpn,nqr->...pqrs", G, b, b)
    t3 = -0.25 * np.einsum("...mq,mpn,nsr->...pqrs", G, b, b)
    t4 = -0.25 * np.einsum("...mn,mpr,nsq->...pqrs", G, b, b)
    t5 = -0.25 * np.einsum("...kl,...ms,mpk,...nr,nql->...pqrs", Gi, G, b, G, b)
    t6 = -0.25 * np.einsum("...kl,...mp,msk,...nr,nql->...pqrs", Gi, G, b, G, b)
    tail = t3 + t4 + t5 + t6
    S = t1 + t2 + tail + np.swapaxes(tail, -3, -2)  # add the (2, 3) swap of the tail
    ffff = S - np.swapaxes(S, -4, -3)               # antisymmetrize in (1, 2)

    # fiber-fiber-base-fiber, slots (p, q, c, s)
    u1 = 0.25 * np.einsum("...ab,...aps,...mq,...cbm->...pqcs", gi, DG, G, F)
    u2 = 0.25 * np.einsum("...kl,...cqk,...ms,mpl->...pqcs", Gi, DG, G, b)
    u3 = 0.25 * np.einsum("...kl,...cqk,...mp,msl->...pqcs", Gi, DG, G, b)
    u4 = -0.25 * np.einsum("mpq,...cms->...pqcs", b, DG)
    u5 = -0.25 * np.einsum("mps,...cmq->...pqcs", b, DG)
    U = u1 + u2 + u3 + u4 + u5
    ffbf = U - np.swapaxes(U, -4, -3)

    # fiber-base-base-fiber, slots (p, b, c, s)
    w1 = -0.5 * np.einsum("...bcps->...pbcs", DDG)
    w2 = 0.25 * np.einsum("...kl,...cpk,...bsl->...pbcs", Gi, DG, DG)
    w3 = 0.25 * np.einsum("...ae,...mp,...cam,...ns,...ben->...pbcs", gi, G, F, G, F)
    w4 = -0.25 * np.einsum("...ms,mpn,...bcn->...pbcs", G, b, F)
    w5 = -0.25 * np.einsum("...mp,msn,...bcn->...pbcs", G, b, F)
    w6 = 0.25 * np.einsum("...mn,mps,...bcn->...pbcs", G, b, F)
    fbbf = w1 + w2 + w3 + w4 + w5 + w6

    # fiber-base-base-base, slots (p, b, c, e)
    x1 = 0.25 * np.einsum("...epm,...bcm->...pbce", DG, F)
    x2 = -0.25 * np.einsum("...cpm,...bem->...pbce", DG, F)
    x3 = -0.5 * np.einsum("...bpm,...cem->...pbce", DG, F)
    x4 = -0.5 * np.einsum("...mp,...bcem->...pbce", G, DF)
    fbbb = x1 + x2 + x3 + x4

    # all-base component
    RL = riemann_base(g, der.Gamma, mesh)
    y1 = 0.5 * np.einsum("...mn,...abm,...cen->...abce", G, F, F)
    y2 = -0.25 * np.einsum("...mn,...aem,...bcn->...abce", G, F, F)
    y3 = 0.25 * np.einsum("...mn,...acm,...ben->...abce", G, F, F)
    bbbb = RL + y1 + y2 + y3

    Ric_ff, Ric_fb, Ric_bb, scalar = ricci_blocks(state, der)
    return CurvatureBlocks(ffff, ffbf, fbbf, fbbb, bbbb, Ric_ff, Ric_fb, Ric_bb, scalar)
