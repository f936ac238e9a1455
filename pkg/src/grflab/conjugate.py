"""Backward-in-time density solve along a stored forward flow.

A positive density u on the base is evolved by the equation conjugate to the
flow, so that its mass with respect to the moving volume form stays constant.
Solving from a uniform terminal profile produces the scalar potential f used
by the energy and entropy functionals.

The transport coefficient Q_COEFF multiplies the <q, grad log u> term.  In the
canonical gauge the conjugate equation has no transport term at all; carrying
it back to the ungauged system along the particle flow of q contributes a full
-<q, grad u>.  That value (-1) is the only choice that keeps the mass exactly
constant in the continuum, which is the defining property of the density, so
it is the default here.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fields import DomainError, Mesh
from .geometry import DerivedGeometry, GeometryState, derive, laplacian
from . import torsion

Q_COEFF = -1.0


@dataclass
class ConjugateState:
    """Positive density u at one time, with its mass and potential mode."""

    u: np.ndarray
    t: float
    mass: float
    mode: str = "steady"
    n: int = 1

    def potential_f(self) -> np.ndarray:
        return potential(self.u, self.t, self.mode, self.n)


def potential(u: np.ndarray, t: float, mode: str, n: int) -> np.ndarray:
    """Recover f from u: steady u = e^-f, expander u = e^-f / (4 pi t)^(n/2)."""
    if np.any(u <= 0):
        raise DomainError("density must be strictly positive")
    if mode == "steady":
        return -np.log(u)
    if mode == "expander":
        if t <= 0:
            raise DomainError("expander potential needs t > 0")
        return -np.log(u) - 0.5 * n * np.log(4.0 * np.pi * t)
    raise ValueError(f"unknown mode {mode!r}")


def density_from_potential(f: np.ndarray, t: float, mode: str, n: int) -> np.ndarray:
    if mode == "steady":
        return np.exp(-f)
    if mode == "expander":
        if t <= 0:
            raise DomainError("expander density needs t > 0")
        return np.exp(-f) / (4.0 * np.pi * t) ** (0.5 * n)
    raise ValueError(f"unknown mode {mode!r}")


def dilaton_potential(state: GeometryState, der: DerivedGeometry,
                      full: np.ndarray | None = None) -> np.ndarray:
    """Zeroth-order coefficient: R_g - |DG|^2/4 - |F|^2/2 - tr_g calH / 4."""
    k = state.k
    DGsq = np.einsum("...ab,...ij,...lm,...ail,...bjm->...",
                     der.gi, der.Gi, der.Gi, der.DG, der.DG)
    Fsq = np.einsum("...ac,...bd,...mn,...abm,...cdn->...",
                    der.gi, der.gi, state.G, der.F, der.F)
    if full is None:
        full = torsion.pack_full(state.H, state.alg, state.mesh)
    calH, _ = torsion.h_contractions(state, der, full)
    trH_bb = np.einsum("...ab,...ab->...", der.gi, calH[..., k:, k:])
    return der.R_g - 0.25 * DGsq - 0.5 * Fsq - 0.25 * trH_bb


def conj_rhs(u: np.ndarray, state: GeometryState,
             der: DerivedGeometry | None = None,
             q_coeff: float | None = None) -> np.ndarray:
    """Forward-time rate of the density:

        du/dt = -Lap u + V u + q_coeff * <q, grad u>,

    with V the dilaton potential.  The equation is backward-parabolic, so it
    is integrated in reversed time by solve_backward.
    """
    if np.any(u <= 0):
        raise DomainError("density must be strictly positive")
    if der is None:
        der = derive(state, validated=True)
    if q_coeff is None:
        q_coeff = Q_COEFF
    mesh = state.mesh
    lap = laplacian(u, der.gi, der.Gamma, mesh)
    V = dilaton_potential(state, der)
    drift = np.einsum("...a,...a->...", der.q, _coord_grad(u, mesh))
    return -lap + V * u + q_coeff * drift


def _coord_grad(u: np.ndarray, mesh: Mesh) -> np.ndarray:
    from .geometry import _derivs

    return _derivs(u, mesh)


def forward_heat_rhs(phi: np.ndarray, state: GeometryState,
                     der: DerivedGeometry | None = None,
                     q_coeff: float | None = None) -> np.ndarray:
    """Forward drift-diffusion paired with the density: d(phi)/dt = Lap phi
    + q_coeff * <q, grad phi>.  The pairing integral of phi against u with
    the moving volume form is constant in time."""
    if der is None:
        der = derive(state, validated=True)
    if q_coeff is None:
        q_coeff = Q_COEFF
    lap = laplacian(phi, der.gi, der.Gamma, state.mesh)
    drift = np.einsum("...a,...a->...", der.q, _coord_grad(phi, state.mesh))
    return lap + q_coeff * drift


def mass_of(u: np.ndarray, state: GeometryState) -> float:
    from .fields import integrate_values

    return integrate_values(u, state.g, state.mesh)


def _interp_state(hist, t: float) -> GeometryState:
    """Cubic Lagrange interpolation of the stored fields in time.

    Falls back to linear when fewer than four snapshots bracket t, and to the
    nearest snapshot when the history is degenerate.
    """
    times = np.asarray(hist.times)
    n = len(times)
    j = int(np.searchsorted(times, t))
    j = min(max(j, 1), n - 1)
    if abs(times[j] - t) < 1e-14:
        return hist.states[j]
    if abs(times[j - 1] - t) < 1e-14:
        return hist.states[j - 1]
    lo = max(0, min(j - 2, n - 4))
    idx = list(range(lo, min(lo + 4, n)))
    if len(idx) < 2:
        return hist.states[idx[0]]
    ts = times[idx]
    ws = np.ones(len(idx))
    for a in range(len(idx)):
        for b in range(len(idx)):
            if a != b:
                ws[a] *= (t - ts[b]) / (ts[a] - ts[b])
    ref = hist.states[idx[0]]
    out = ref.copy()
    out.t = t
    out.G = sum(w * hist.states[i].G for w, i in zip(ws, idx))
    out.g = sum(w * hist.states[i].g for w, i in zip(ws, idx))
    out.A = sum(w * hist.states[i].A for w, i in zip(ws, idx))
    for name in ("H3", "H21", "H12", "H03"):
        setattr(out.H, name,
                sum(w * getattr(hist.states[i].H, name) for w, i in zip(ws, idx)))
    return out


def solve_backward(hist, T: float | None = None, u_T: np.ndarray | None = None,
                   mode: str = "steady", n: int | None = None,
                   q_coeff: float | None = None) -> list[ConjugateState]:
    """Integrate the density from t = T down to the start of the history.

    The terminal profile defaults to the constant 1/Vol(g(T)).  Reversed time
    s = T - t makes the equation forward-parabolic; each stored interval is
    one RK4 step with the background interpolated in time.  Returns states at
    every stored time from T down to the start, in decreasing t order.
    """
    times = np.asarray(hist.times)
    if T is None:
        T = float(times[-1])
    if n is None:
        n = hist.states[0].mesh.d
    iT = int(np.argmin(np.abs(times - T)))
    sT = hist.states[iT]
    if u_T is None:
        vol = mass_of(np.ones(sT.mesh.shape), sT)
        u_T = np.full(sT.mesh.shape, 1.0 / vol)
    u = np.asarray(u_T, dtype=float).copy()
    out = [ConjugateState(u.copy(), float(times[iT]), mass_of(u, sT), mode, n)]
    der_cache: dict = {}

    def rate(uu, t):
        key = round(t, 12)
        if key in der_cache:
            st, der = der_cache[key]
        else:
            st = _interp_state(hist, t)
            der = derive(st, validated=True)
            der_cache[key] = (st, der)
            if len(der_cache) > 8:
                der_cache.pop(next(iter(der_cache)))
        # reversed-time rate: d u / d s = -(d u / d t)
        return -conj_rhs(uu, st, der, q_coeff)

    for i in range(iT, 0, -1):
        t1, t0 = float(times[i]), float(times[i - 1])
        ds = t1 - t0
        tm = 0.5 * (t0 + t1)
        k1 = rate(u, t1)
        k2 = rate(u + 0.5 * ds * k1, tm)
        k3 = rate(u + 0.5 * ds * k2, tm)
        k4 = rate(u + ds * k3, t0)
        u = u + (ds / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        if np.any(u <= 0) or not np.all(np.isfinite(u)):
            raise DomainError(
                "density positivity lost in the backward solve; "
                "the step size or snapshot stride is too large")
        out.append(ConjugateState(u.copy(), t0, mass_of(u, hist.states[i - 1]),
                                  mode, n))
    return out
