"""Energy and entropy functionals, their dissipation residuals, variation
checks, and soliton detection.

All squared norms are full contractions with the appropriate metrics, one
inverse metric factor per slot pair and no combinatorial weights, matching
the convention used for |H|^2 elsewhere in the package.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fields import DomainError, integrate_values
from .geometry import (
    DerivedGeometry,
    GeometryState,
    derive,
    gradient,
    hessian,
    laplacian,
)
from . import torsion


# --- pointwise scalar densities ----------------------------------------------

def norm_sq_DG(state: GeometryState, der: DerivedGeometry) -> np.ndarray:
    return np.einsum("...ab,...ij,...lm,...ail,...bjm->...",
                     der.gi, der.Gi, der.Gi, der.DG, der.DG)


def norm_sq_F(state: GeometryState, der: DerivedGeometry) -> np.ndarray:
    return np.einsum("...ac,...bd,...mn,...abm,...cdn->...",
                     der.gi, der.gi, state.G, der.F, der.F)


def norm_sq_bracket(state: GeometryState, der: DerivedGeometry) -> np.ndarray:
    b = state.alg.beta
    return np.einsum("...ip,...jq,...mn,mij,npq->...",
                     der.Gi, der.Gi, state.G, b, b)


def grad_norm_sq(f: np.ndarray, state: GeometryState,
                 der: DerivedGeometry) -> np.ndarray:
    from .geometry import _derivs

    df = _derivs(f, state.mesh)
    return np.einsum("...ab,...a,...b->...", der.gi, df, df)


def _weighted_integral(values: np.ndarray, f: np.ndarray,
                       state: GeometryState) -> float:
    return integrate_values(values * np.exp(-f), state.g, state.mesh)


# --- functionals -------------------------------------------------------------

def eval_F(state: GeometryState, f: np.ndarray,
           der: DerivedGeometry | None = None,
           full: np.ndarray | None = None) -> float:
    """Energy integral: |grad f|^2 + R_g - |DG|^2/4 - |F|^2/4 - |H|^2/12
    - |[,]|^2/4, weighted by e^-f dV_g."""
    if der is None:
        der = derive(state, validated=True)
    if full is None:
        full = torsion.pack_full(state.H, state.alg, state.mesh)
    _, Hsq = torsion.h_contractions(state, der, full)
    dens = (grad_norm_sq(f, state, der) + der.R_g
            - 0.25 * norm_sq_DG(state, der)
            - 0.25 * norm_sq_F(state, der)
            - Hsq / 12.0
            - 0.25 * norm_sq_bracket(state, der))
    return _weighted_integral(dens, f, state)


def eval_Wplus(state: GeometryState, f: np.ndarray, t: float, n: int,
               der: DerivedGeometry | None = None,
               full: np.ndarray | None = None) -> float:
    """Expander entropy: (4 pi t)^(-n/2) { t * energy + int (-f + n) e^-f dV }."""
    if t <= 0:
        raise DomainError("expander entropy needs t > 0")
    Fval = eval_F(state, f, der, full)
    extra = _weighted_integral(-f + n, f, state)
    return (t * Fval + extra) / (4.0 * np.pi * t) ** (0.5 * n)


# --- residual tensors --------------------------------------------------------

@dataclass
class ResidualTensors:
    """Stationarity tensors whose squared norms feed the dissipation identity.

    TG: symmetric fiber 2-tensor (lower indices)
    TA: mixed tensor TA[..., a, m] with upper fiber index m
    Tg: symmetric base 2-tensor (lower indices)
    TH: 2-form on the extended bundle (lower frame indices)
    """

    TG: np.ndarray
    TA: np.ndarray
    Tg: np.ndarray
    TH: np.ndarray


def co_differential_F(state: GeometryState, der: DerivedGeometry) -> np.ndarray:
    """((d^D)* F)^m_b = -g^{ac} (D_a F)^m_{cb}, the adjoint of the covariant
    exterior derivative on fiber-valued base forms."""
    return -np.einsum("...ac,...acbm->...bm", der.gi, der.DF)


def residual_tensors(state: GeometryState, f: np.ndarray,
                     der: DerivedGeometry | None = None,
                     full: np.ndarray | None = None,
                     t: float | None = None) -> ResidualTensors:
    """Assemble the four stationarity tensors at the given potential f.

    With t provided, the base tensor carries the extra -g/t expander shift.
    """
    if der is None:
        der = derive(state, validated=True)
    mesh, k = state.mesh, state.k
    b = state.alg.beta
    G, g = state.G, state.g
    Gi, gi, DG, DDG, F = der.Gi, der.gi, der.DG, der.DDG, der.F
    if full is None:
        full = torsion.pack_full(state.H, state.alg, mesh)
    calH, _ = torsion.h_contractions(state, der, full)
    grad_f = gradient(f, gi, mesh)

    DDGtr = np.einsum("...ab,...abij->...ij", gi, DDG)
    DG2 = np.einsum("...ab,...lm,...ail,...bjm->...ij", gi, Gi, DG, DG)
    GF = np.einsum("...im,...abm->...iab", G, F)
    GFGF = np.einsum("...ac,...bd,...iab,...jcd->...ij", gi, gi, GF, GF)
    brkt1 = np.einsum("...pq,...mn,mip,njq->...ij", Gi, G, b, b)
    Gb = np.einsum("...im,mpq->...ipq", G, b)
    brkt2 = np.einsum("...pr,...qs,...ipq,...jrs->...ij", Gi, Gi, Gb, Gb)
    DfG = np.einsum("...a,...aij->...ij", grad_f, DG)
    TG = (DDGtr - DG2 - 0.5 * GFGF + brkt1 - 0.5 * brkt2
          + 0.5 * calH[..., :k, :k] - DfG)

    TA = -co_differential_F(state, der)  # [..., a, m]
    TA = TA + np.einsum("...mi,...bc,...bin,...can->...am", Gi, gi, DG, F)
    TA = TA + np.einsum("...mi,...pq,npi,...anq->...am", Gi, Gi, b, DG)
    TA = TA + 0.5 * np.einsum("...mi,...ie->...em", Gi, calH[..., :k, k:])
    TA = TA - np.einsum("...b,...bam->...am", grad_f, F)

    DGg = np.einsum("...ip,...jq,...aij,...bpq->...ab", Gi, Gi, DG, DG)
    FFg = np.einsum("...cd,...mn,...acm,...bdn->...ab", gi, G, F, F)
    Tg = (-2.0 * der.Ric_g + 0.5 * DGg + FFg
          + 0.5 * calH[..., k:, k:] - 2.0 * hessian(f, der.Gamma, mesh))
    if t is not None:
        if t <= 0:
            raise DomainError("expander residual needs t > 0")
        Tg = Tg - g / t

    TH = torsion.b_dot(state, der, "general", grad_f=grad_f, full=full)
    return ResidualTensors(TG, TA, Tg, TH)


def _norm_sq_TG(TG, Gi):
    return np.einsum("...ip,...jq,...ij,...pq->...", Gi, Gi, TG, TG)


def _norm_sq_TA(TA, G, gi):
    return np.einsum("...ab,...mn,...am,...bn->...", gi, G, TA, TA)


def _norm_sq_Tg(Tg, gi):
    return np.einsum("...ac,...bd,...ab,...cd->...", gi, gi, Tg, Tg)


def _norm_sq_TH(TH, Gi, gi, k):
    gE = np.zeros(TH.shape[:-2] + TH.shape[-2:])
    gE[..., :k, :k] = Gi
    gE[..., k:, k:] = gi
    return np.einsum("...ac,...bd,...ab,...cd->...", gE, gE, TH, TH)


def residuals_F(state: GeometryState, f: np.ndarray,
                der: DerivedGeometry | None = None,
                full: np.ndarray | None = None):
    """The four nonnegative dissipation integrals of the energy identity:

        dF/dt = R1 + R2 + R3 + R4

    along the ungauged flow coupled to the conjugate density u = e^-f.
    """
    if der is None:
        der = derive(state, validated=True)
    if full is None:
        full = torsion.pack_full(state.H, state.alg, state.mesh)
    rt = residual_tensors(state, f, der, full)
    k = state.k
    R1 = 0.5 * _weighted_integral(_norm_sq_TG(rt.TG, der.Gi), f, state)
    R2 = _weighted_integral(_norm_sq_TA(rt.TA, state.G, der.gi), f, state)
    R3 = 0.5 * _weighted_integral(_norm_sq_Tg(rt.Tg, der.gi), f, state)
    R4 = 0.5 * _weighted_integral(_norm_sq_TH(rt.TH, der.Gi, der.gi, k), f, state)
    return R1, R2, R3, R4


def residuals_W(state: GeometryState, f: np.ndarray, t: float, n: int,
                der: DerivedGeometry | None = None,
                full: np.ndarray | None = None):
    """t-weighted residuals and the mixed-sign extra integral of the entropy
    identity: dW/dt = R1 + R2 + R3 + R4 + W_extra."""
    if t <= 0:
        raise DomainError("entropy residuals need t > 0")
    if der is None:
        der = derive(state, validated=True)
    if full is None:
        full = torsion.pack_full(state.H, state.alg, state.mesh)
    rt = residual_tensors(state, f, der, full, t=t)
    k = state.k
    w = (4.0 * np.pi * t) ** (-0.5 * n)
    R1 = 0.5 * t * w * _weighted_integral(_norm_sq_TG(rt.TG, der.Gi), f, state)
    R2 = t * w * _weighted_integral(_norm_sq_TA(rt.TA, state.G, der.gi), f, state)
    R3 = 0.5 * t * w * _weighted_integral(_norm_sq_Tg(rt.Tg, der.gi), f, state)
    R4 = 0.5 * t * w * _weighted_integral(_norm_sq_TH(rt.TH, der.Gi, der.gi, k),
                                          f, state)
    calH, Hsq = torsion.h_contractions(state, der, full)
    trG_ff = np.einsum("...ij,...ij->...", der.Gi, calH[..., :k, :k])
    extra_dens = (0.25 * norm_sq_F(state, der)
                  - 0.25 * norm_sq_bracket(state, der)
                  + Hsq / 6.0 - 0.25 * trG_ff)
    W_extra = w * _weighted_integral(extra_dens, f, state)
    return R1, R2, R3, R4, W_extra


# --- variation check ---------------------------------------------------------

@dataclass
class VariationDirection:
    """A first-order deformation of (G, g, A, H, f).  The torsion moves by the
    exterior derivative of the 2-form Bdot, keeping its class fixed."""

    dG: np.ndarray
    dg: np.ndarray
    dA: np.ndarray
    Bdot: np.ndarray
    df: np.ndarray


def variation_formula_F(state: GeometryState, f: np.ndarray,
                        direction: VariationDirection,
                        der: DerivedGeometry | None = None) -> float:
    """Closed-form first variation of the energy along the direction."""
    if der is None:
        der = derive(state, validated=True)
    mesh, k = state.mesh, state.k
    full = torsion.pack_full(state.H, state.alg, mesh)
    rt = residual_tensors(state, f, der, full)
    Gi, gi = der.Gi, der.gi

    I1 = 0.5 * _weighted_integral(
        np.einsum("...ip,...jq,...ij,...pq->...", Gi, Gi, direction.dG, rt.TG),
        f, state)
    I2 = _weighted_integral(
        np.einsum("...ab,...mn,...am,...bn->...", gi, state.G,
                  direction.dA, rt.TA),
        f, state)
    I3 = 0.5 * _weighted_integral(
        np.einsum("...ac,...bd,...ab,...cd->...", gi, gi, direction.dg, rt.Tg),
        f, state)
    gE = np.zeros(full.shape[:-3] + (k + mesh.d,) * 2)
    gE[..., :k, :k] = Gi
    gE[..., k:, k:] = gi
    I4 = 0.5 * _weighted_integral(
        np.einsum("...ac,...bd,...ab,...cd->...", gE, gE, direction.Bdot, rt.TH),
        f, state)
    _, Hsq = torsion.h_contractions(state, der, full)
    lam = (2.0 * laplacian(f, gi, der.Gamma, mesh)
           - grad_norm_sq(f, state, der) + der.R_g
           - 0.25 * norm_sq_DG(state, der) - 0.25 * norm_sq_F(state, der)
           - Hsq / 12.0 - 0.25 * norm_sq_bracket(state, der))
    trdg = 0.5 * np.einsum("...ab,...ab->...", gi, direction.dg)
    I5 = _weighted_integral((trdg - direction.df) * lam, f, state)
    return I1 + I2 + I3 + I4 + I5


def perturbed_state(state: GeometryState, direction: VariationDirection,
                    eps: float) -> tuple[GeometryState, np.ndarray]:
    """First-order deformation of the stored fields.  The stored torsion rate
    is the exterior derivative of Bdot corrected for the rotating splitting."""
    der = derive(state, validated=True)
    full = torsion.pack_full(state.H, state.alg, state.mesh)
    C = torsion.structure_functions(state, der.F)
    dH_full = torsion.algebroid_d(direction.Bdot, 2, C, state.mesh, state.k)
    dH_full = dH_full - torsion.moving_frame_correction(full, direction.dA,
                                                        state.k)
    dH = torsion.unpack_full(dH_full, state.k)
    out = state.copy()
    out.G = state.G + eps * direction.dG
    out.g = state.g + eps * direction.dg
    out.A = state.A + eps * direction.dA
    for name in ("H3", "H21", "H12", "H03"):
        setattr(out.H, name,
                getattr(state.H, name) + eps * getattr(dH, name))
    return out


def variation_check_F(state: GeometryState, f: np.ndarray,
                      direction: VariationDirection,
                      eps: float = 1e-4) -> dict:
    """Compare the closed-form first variation with a centered finite
    difference of the energy along the deformation path."""
    formula = variation_formula_F(state, f, direction)
    plus = perturbed_state(state, direction, eps)
    minus = perturbed_state(state, direction, -eps)
    Fp = eval_F(plus, f + eps * direction.df)
    Fm = eval_F(minus, f - eps * direction.df)
    fd = (Fp - Fm) / (2.0 * eps)
    scale = max(abs(fd), abs(formula), 1e-14)
    return {"fd": fd, "formula": formula,
            "gap": abs(fd - formula), "rel_gap": abs(fd - formula) / scale}


# --- soliton detection -------------------------------------------------------

def expander_residuals(state: GeometryState, t: float,
                       der: DerivedGeometry | None = None) -> dict:
    """Pointwise residual norms of the expanding rigidity system: stationary
    fiber metric up to its own quadratic term, and base metric shrinking at
    rate g/(2t); together with the norms of F, H, and the determinant drift."""
    if t <= 0:
        raise DomainError("expander residuals need t > 0")
    if der is None:
        der = derive(state, validated=True)
    mesh = state.mesh
    Gi, gi, DG, DDG = der.Gi, der.gi, der.DG, der.DDG
    E1 = (np.einsum("...ab,...abij->...ij", gi, DDG)
          - np.einsum("...ab,...lm,...ail,...bjm->...ij", gi, Gi, DG, DG))
    E2 = (der.Ric_g
          - 0.25 * np.einsum("...ip,...jq,...aij,...bpq->...ab", Gi, Gi, DG, DG)
          + state.g / (2.0 * t))
    from .geometry import _derivs

    detG = np.linalg.det(state.G)
    ddet = _derivs(np.log(detG), mesh)
    H = state.H
    Hnorm = max(np.max(np.abs(H.H3)), np.max(np.abs(H.H21)),
                np.max(np.abs(H.H12)), np.max(np.abs(H.H03)))
    return {
        "fiber_stationarity": float(np.max(np.abs(E1))),
        "base_soliton": float(np.max(np.abs(E2))),
        "F_norm": float(np.max(np.abs(der.F))),
        "H_norm": float(Hnorm),
        "detG_drift": float(np.max(np.abs(ddet))),
    }


def soliton_detect(report_rows: list[dict], threshold: float = 1e-6) -> dict:
    """Scan a report series for steady rigidity: all four dissipation
    residuals below threshold at the final reported time."""
    if not report_rows:
        raise ValueError("empty report series")
    last = report_rows[-1]
    res = [last[kk] for kk in ("R1", "R2", "R3", "R4")]
    steady = all(abs(r) < threshold for r in res)
    return {
        "steady_rigidity": steady,
        "final_residuals": res,
        "threshold": threshold,
    }
