"""Torsion 3-form machinery on the extension bundle.

Operations here work on "full" antisymmetric arrays over the combined frame
(K = k + d indices, fiber first), assembled from the block storage of
TorsionField.  Includes the frame structure functions, the generic exterior
derivative of the bracket geometry, the quadratic contractions of H, and the
closed-form codifferential that drives the torsion evolution.
"""

from __future__ import annotations

import math

import numpy as np

from .algebra import LieAlgebra
from .fields import Mesh, deriv_array
from .geometry import (
    DerivedGeometry,
    GeometryState,
    TorsionField,
    _derivs,
    compute_F,
)


# --- full-frame packing ------------------------------------------------------

# (permutation, parity) pairs for 3 slots; result axis i takes input axis perm[i]
_PERMS3 = [
    ((0, 1, 2), 1.0), ((1, 0, 2), -1.0), ((0, 2, 1), -1.0),
    ((2, 1, 0), -1.0), ((1, 2, 0), 1.0), ((2, 0, 1), 1.0),
]


def _perm_weight(kinds) -> float:
    # Several permutations land each mixed block; the stored block is already
    # antisymmetric within equal-kind slots so they contribute identically.
    nf = sum(1 for t in kinds if t == 0)
    return 1.0 / (math.factorial(nf) * math.factorial(3 - nf))


def pack_full(H: TorsionField, alg: LieAlgebra, mesh: Mesh) -> np.ndarray:
    """Assemble the torsion blocks into one antisymmetric (..., K, K, K) array."""
    k, d = alg.k, mesh.d
    K = k + d
    full = np.zeros(mesh.shape + (K, K, K))
    full[..., :k, :k, :k] = H.H3
    blocks = [
        (H.H21, (0, 0, 1)),
        (H.H12, (0, 1, 1)),
        (H.H03, (1, 1, 1)),
    ]
    for arr, kinds in blocks:
        w = _perm_weight(kinds)
        for perm, sign in _PERMS3:
            src = np.transpose(arr, tuple(range(d)) + tuple(d + p for p in perm))
            kinds_p = tuple(kinds[p] for p in perm)
            sl = tuple(slice(None, k) if t == 0 else slice(k, None) for t in kinds_p)
            full[(Ellipsis,) + sl] += sign * w * src
    return full


def unpack_full(full: np.ndarray, k: int) -> TorsionField:
    """Split an antisymmetric (..., K, K, K) array back into torsion blocks."""
    return TorsionField(
        H3=full[..., :k, :k, :k].copy(),
        H21=full[..., :k, :k, k:].copy(),
        H12=full[..., :k, k:, k:].copy(),
        H03=full[..., k:, k:, k:].copy(),
    )


def pack_two_form(ff: np.ndarray, fb: np.ndarray, bb: np.ndarray,
                  k: int, mesh: Mesh) -> np.ndarray:
    """Assemble 2-form blocks (ff antisym, fb[..., i, a], bb antisym) into
    one antisymmetric (..., K, K) array."""
    d = mesh.d
    K = k + d
    full = np.zeros(mesh.shape + (K, K))
    full[..., :k, :k] = ff
    full[..., :k, k:] = fb
    full[..., k:, :k] = -np.swapaxes(fb, -1, -2)
    full[..., k:, k:] = bb
    return full


def frame_metric(G: np.ndarray, g: np.ndarray, mesh: Mesh) -> np.ndarray:
    """Block-diagonal combined metric (..., K, K), fiber block first."""
    k = G.shape[-1]
    d = mesh.d
    gE = np.zeros(mesh.shape + (k + d, k + d))
    gE[..., :k, :k] = G
    gE[..., k:, k:] = g
    return gE


def structure_functions(state: GeometryState, F: np.ndarray | None = None) -> np.ndarray:
    """Frame brackets C[..., gamma, alpha, beta]: [e_alpha, e_beta] = C^gamma e_gamma.

    Fiber-fiber entries carry the fiberwise bracket (beta = -c in this frame),
    base-fiber entries come from the connection form, and base-base entries
    equal -F since coordinate fields commute on the base.
    """
    k, d = state.k, state.d
    K = k + d
    C = np.zeros(state.mesh.shape + (K, K, K))
    if k:
        C[..., :k, :k, :k] = state.alg.beta
        mixed = np.einsum("mli,...al->...mai", state.alg.c, state.A)
        C[..., :k, k:, :k] = mixed
        C[..., :k, :k, k:] = -np.swapaxes(mixed, -1, -2)
        if F is None:
            F = compute_F(state.A, state.alg, state.mesh)
        C[..., :k, k:, k:] = -np.einsum("...abm->...mab", F)
    return C


def anchor_derivs(values: np.ndarray, mesh: Mesh, k: int) -> np.ndarray:
    """Derivative along each frame direction; zero along the fiber directions.

    The new axis (length k + d) sits first among the slot axes.
    """
    d = mesh.d
    out = np.zeros(values.shape[:d] + (k + d,) + values.shape[d:])
    for a in range(d):
        out[(slice(None),) * d + (k + a,)] = deriv_array(values, a, mesh.spacings[a])
    return out


# --- exterior derivative -----------------------------------------------------

def algebroid_d(sigma: np.ndarray, p: int, C: np.ndarray, mesh: Mesh, k: int) -> np.ndarray:
    """Exterior derivative of a full antisymmetric p-form array, p in 0..3.

    d sigma(e_0, ..., e_p) = sum_i (-1)^i tau(e_i)[sigma(..., skip i, ...)]
        + sum_{i<j} (-1)^{i+j} sigma([e_i, e_j], ..., skip i and j, ...),
    with tau the anchor (zero on fiber directions) and the frame brackets C.
    """
    T = anchor_derivs(sigma, mesh, k)  # derivative slot first
    if p == 0:
        return T
    if p == 1:
        return (
            T - np.swapaxes(T, -2, -1)
            - np.einsum("...gab,...g->...ab", C, sigma)
        )
    if p == 2:
        out = (
            T
            - np.einsum("...bag->...abg", T)
            + np.einsum("...gab->...abg", T)
            - np.einsum("...dab,...dg->...abg", C, sigma)
            + np.einsum("...dag,...db->...abg", C, sigma)
            - np.einsum("...dbg,...da->...abg", C, sigma)
        )
        return out
    if p == 3:
        out = (
            T
            - np.einsum("...bagE->...abgE", T)
            + np.einsum("...gabE->...abgE", T)
            - np.einsum("...Eabg->...abgE", T)
            - np.einsum("...dab,...dgE->...abgE", C, sigma)
            + np.einsum("...dag,...dbE->...abgE", C, sigma)
            - np.einsum("...daE,...dbg->...abgE", C, sigma)
            - np.einsum("...dbg,...daE->...abgE", C, sigma)
            + np.einsum("...dbE,...dag->...abgE", C, sigma)
            - np.einsum("...dgE,...dab->...abgE", C, sigma)
        )
        return out
    raise ValueError(f"p must be 0..3, got {p}")


def closedness_residual(state: GeometryState, der: DerivedGeometry | None = None) -> float:
    """Max norm of dH; vanishes for torsion fields coming from closed 3-forms."""
    F = der.F if der is not None else None
    C = structure_functions(state, F)
    full = pack_full(state.H, state.alg, state.mesh)
    dH = algebroid_d(full, 3, C, state.mesh, state.k)
    return float(np.max(np.abs(dH)))


# --- quadratic contractions --------------------------------------------------

def h_contractions(state: GeometryState, der: DerivedGeometry,
                   full: np.ndarray | None = None):
    """The square contraction calH(e1, e2) = tr H(e1, ., .) H(e2, ., .) and
    the full-contraction norm |H|^2.

    Returns (calH, Hsq) with calH a (..., K, K) symmetric array.
    """
    if full is None:
        full = pack_full(state.H, state.alg, state.mesh)
    gEi = np.zeros_like(frame_metric(state.G, state.g, state.mesh))
    k = state.k
    gEi[..., :k, :k] = der.Gi
    gEi[..., k:, k:] = der.gi
    calH = np.einsum("...acd,...bef,...ce,...df->...ab", full, full, gEi, gEi)
    Hsq = np.einsum("...ab,...ab->...", gEi, calH)
    return calH, Hsq


def splitting_contractions(state: GeometryState, der: DerivedGeometry,
                           full: np.ndarray | None = None):
    """Block sums entering the positivity splitting of |H|^2/6 - tr_G calH/4.

    Returns (t_fiber, t_mixed, t_base): the all-fiber-traced square, the
    one-fiber-two-base-traced square, and the all-base-traced square of H.
    The identity reads
        |H|^2/6 - tr_G calH/4 = -t_fiber/12 + t_mixed/4 + t_base/6.
    """
    if full is None:
        full = pack_full(state.H, state.alg, state.mesh)
    k = state.k
    Gi, gi = der.Gi, der.gi
    Hf = full[..., :k, :k, :k]
    Hm = full[..., :k, k:, k:]
    Hb = full[..., k:, k:, k:]
    t_fiber = np.einsum("...ijk,...lmn,...il,...jm,...kn->...", Hf, Hf, Gi, Gi, Gi)
    t_mixed = np.einsum("...iab,...jcd,...ij,...ac,...bd->...", Hm, Hm, Gi, gi, gi)
    t_base = np.einsum("...abc,...def,...ad,...be,...cf->...", Hb, Hb, gi, gi, gi)
    return t_fiber, t_mixed, t_base


def interior_product(vec: np.ndarray, full: np.ndarray, k: int) -> np.ndarray:
    """i_v H for a base vector field vec[..., a] (upper index)."""
    return np.einsum("...a,...agd->...gd", vec, full[..., k:, :, :])


# --- codifferential ----------------------------------------------------------

def extended_coeffs(state: GeometryState, Gamma: np.ndarray) -> np.ndarray:
    """Coefficients M[..., a, gamma, beta] of the direct-sum connection acting
    on lower frame indices: (D_a T)_beta = d_a T_beta - M^gamma_{a beta} T_gamma."""
    k, d = state.k, state.d
    K = k + d
    M = np.zeros(state.mesh.shape + (d, K, K))
    if k:
        M[..., :, :k, :k] = np.einsum("mli,...al->...ami", state.alg.c, state.A)
    M[..., :, k:, k:] = np.einsum("...cab->...acb", Gamma)
    return M


def cov_deriv_3form(T: np.ndarray, M: np.ndarray, mesh: Mesh) -> np.ndarray:
    """(D_a T)_{bcd} for a full-frame 3-tensor, derivative axis first."""
    dT = _derivs(T, mesh)
    corr = (
        np.einsum("...aeb,...ecd->...abcd", M, T)
        + np.einsum("...aec,...bed->...abcd", M, T)
        + np.einsum("...aed,...bce->...abcd", M, T)
    )
    return dT - corr


def minus_dstar_terms(state: GeometryState, der: DerivedGeometry,
                      full: np.ndarray | None = None):
    """The five pieces of -d*H in the nilpotent decomposition, as full
    (..., K, K) antisymmetric arrays.

    Term 2 equals -i_q H; dropping it gives the canonical-gauge source
    -d*H + i_q H directly.
    """
    mesh, k = state.mesh, state.k
    if full is None:
        full = pack_full(state.H, state.alg, state.mesh)
    Gi, gi, DG, F, Gamma, q = der.Gi, der.gi, der.DG, der.F, der.Gamma, der.q
    G = state.G
    b = state.alg.beta

    M = extended_coeffs(state, Gamma)
    covH = cov_deriv_3form(full, M, mesh)  # [..., a, beta, gamma, delta]
    # (D_. H)(., *, *) with both dots base slots traced by g:
    term1 = np.einsum("...ab,...abcd->...cd", gi, covH[..., :, k:, :, :])

    term2 = -interior_product(q, full, k)

    W = np.zeros_like(term2)
    V = np.zeros_like(term2)
    U = np.zeros_like(term2)
    if k:
        Hbf = full[..., k:, :k, :]   # [..., b, l, eps]
        Hbb = full[..., k:, k:, :]   # [..., c, d, eps]
        Hff = full[..., :k, :k, :]   # [..., p, q, eps]
        W[..., :k, :] = np.einsum("...ab,...jl,...aji,...ble->...ie", gi, Gi, DG, Hbf)
        V[..., :k, :] = 0.5 * np.einsum(
            "...ac,...bd,...mi,...abm,...cde->...ie", gi, gi, G, F, Hbb)
        U[..., :k, :] = 0.5 * np.einsum(
            "...ip,...jq,...mb,mij,...pqe->...be", Gi, Gi, G, b, Hff)
    term3 = -(W - np.swapaxes(W, -2, -1))
    term4 = -(V - np.swapaxes(V, -2, -1))
    term5 = U - np.swapaxes(U, -2, -1)
    return term1, term2, term3, term4, term5


def minus_dstar(state: GeometryState, der: DerivedGeometry,
                full: np.ndarray | None = None) -> np.ndarray:
    """-d*H as a full antisymmetric (..., K, K) array (closed-form path)."""
    t1, t2, t3, t4, t5 = minus_dstar_terms(state, der, full)
    return t1 + t2 + t3 + t4 + t5


def dstar_H(state: GeometryState, der: DerivedGeometry,
            full: np.ndarray | None = None) -> np.ndarray:
    """d*H as a full antisymmetric (..., K, K) array."""
    return -minus_dstar(state, der, full)


def splitting_identity(state: GeometryState, der: DerivedGeometry,
                       full: np.ndarray | None = None) -> float:
    """Max-norm residual of the block decomposition of |H|^2/6 - tr_G calH/4.

    Zero up to round-off for every field configuration; the decomposition
    makes the signs of the three blocks explicit.
    """
    if full is None:
        full = pack_full(state.H, state.alg, state.mesh)
    k = state.k
    calH, Hsq = h_contractions(state, der, full)
    trG = np.einsum("...ij,...ij->...", der.Gi, calH[..., :k, :k])
    tf, tm, tb = splitting_contractions(state, der, full)
    lhs = Hsq / 6.0 - trG / 4.0
    rhs = -tf / 12.0 + tm / 4.0 + tb / 6.0
    return float(np.max(np.abs(lhs - rhs)))


def b_dot(state: GeometryState, der: DerivedGeometry, mode: str,
          grad_f: np.ndarray | None = None,
          full: np.ndarray | None = None) -> np.ndarray:
    """Source 2-form B with dH/dt = dB in the chosen gauge.

    mode "ungauged": B = -d*H; "canonical": B = -d*H + i_q H; "general":
    canonical plus -i_{grad f} H with grad_f the upper-index gradient.
    """
    if full is None:
        full = pack_full(state.H, state.alg, state.mesh)
    t1, t2, t3, t4, t5 = minus_dstar_terms(state, der, full)
    if mode == "ungauged":
        return t1 + t2 + t3 + t4 + t5
    B = t1 + t3 + t4 + t5
    if mode == "canonical":
        return B
    if mode == "general":
        if grad_f is None:
            raise ValueError("general gauge needs grad_f")
        return B - interior_product(grad_f, full, state.k)
    raise ValueError(f"unknown gauge mode {mode!r}")


def moving_frame_correction(full3: np.ndarray, Adot: np.ndarray, k: int) -> np.ndarray:
    """Transport term for stored 3-form components under a changing splitting.

    The stored base-slot components are evaluated on horizontal lifts that
    rotate as A evolves: d/dt of a stored component equals the covariant rate
    minus H with each base slot fed the fiber vector (dA/dt) v.  Returns the
    array to subtract from the covariant rate, given Adot[..., a, m].
    """
    K = full3.shape[-1]
    corr = np.zeros_like(full3)
    for s in range(3):
        Hm = np.moveaxis(full3, -3 + s, -1)  # slot s last
        contracted = np.einsum("...am,...uvm->...uva", Adot, Hm[..., :k])
        grown = np.zeros(Hm.shape[:-1] + (K,))
        grown[..., k:] = contracted
        corr += np.moveaxis(grown, -1, -3 + s)
    return corr
