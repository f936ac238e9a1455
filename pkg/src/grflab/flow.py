"""Time integration of the reduced flow system for (G, g, A, H).

The right-hand side is assembled from the closed-form Ricci blocks plus the
quadratic torsion contractions.  Three gauges are supported:

    ungauged   : plain flow; the mixed metric rate feeds dA/dt, H moves by
                 the exterior derivative of the codifferential source.
    canonical  : the divergence-type vector q is absorbed as a Lie-derivative
                 correction, removing the leading transport of the fields.
    general    : canonical plus gradient-vector terms from a supplied scalar
                 potential f.

Integration is classical RK4 with a parabolic CFL step size.  The stored
components of H live in the moving splitting, so their clock rate carries a
correction whenever dA/dt is nonzero.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .algebra import require_valid
from .fields import DomainError, Mesh, deriv_array
from .geometry import (
    DerivedGeometry,
    GeometryState,
    TorsionField,
    _derivs,
    derive,
    gradient,
    hessian,
    ricci_blocks,
)
from . import torsion


@dataclass
class FlowRHS:
    """Time derivatives of the stored fields, plus per-evaluation extras."""

    dG: np.ndarray
    dg: np.ndarray
    dA: np.ndarray
    dH: TorsionField
    der: DerivedGeometry
    calH: np.ndarray
    Hsq: np.ndarray
    scalar: np.ndarray


def lie_derivative_base(q: np.ndarray, g: np.ndarray, Gamma: np.ndarray,
                        mesh: Mesh) -> np.ndarray:
    """(L_q g)_ab for an upper-index base vector field q."""
    dq = _derivs(q, mesh)  # [..., a, c] = d_a q^c
    covq = dq + np.einsum("...cab,...b->...ac", Gamma, q)
    low = np.einsum("...ac,...cb->...ab", covq, g)
    return low + np.swapaxes(low, -1, -2)


def evaluate_rhs(state: GeometryState, mode: str = "ungauged",
                 f: np.ndarray | None = None,
                 der: DerivedGeometry | None = None) -> FlowRHS:
    """Assemble the full system right-hand side in the requested gauge."""
    if der is None:
        der = derive(state, validated=True)
    mesh, k = state.mesh, state.k
    Gi, gi, q = der.Gi, der.gi, der.q

    Ric_ff, Ric_fb, Ric_bb, scalar = ricci_blocks(state, der)
    full = torsion.pack_full(state.H, state.alg, mesh)
    calH, Hsq = torsion.h_contractions(state, der, full)

    dG = -2.0 * Ric_ff + 0.5 * calH[..., :k, :k]
    dg = -2.0 * Ric_bb + 0.5 * calH[..., k:, k:]
    # G(dA/dt v, eta) block, converted to the connection-form rate
    mixed = -2.0 * Ric_fb + 0.5 * calH[..., :k, k:]
    dA = np.einsum("...ij,...ja->...ai", Gi, mixed)

    grad_f = None
    if mode in ("canonical", "general"):
        dG = dG + np.einsum("...a,...aij->...ij", q, der.DG)
        dg = dg + lie_derivative_base(q, state.g, der.Gamma, mesh)
        dA = dA + np.einsum("...b,...bam->...am", q, der.F)
    if mode == "general":
        if f is None:
            raise ValueError("general gauge needs the potential f")
        grad_f = gradient(f, gi, mesh)
        dG = dG - np.einsum("...a,...aij->...ij", grad_f, der.DG)
        dg = dg - 2.0 * hessian(f, der.Gamma, mesh)
        dA = dA - np.einsum("...b,...bam->...am", grad_f, der.F)
    elif mode not in ("ungauged", "canonical"):
        raise ValueError(f"unknown gauge mode {mode!r}")

    B = torsion.b_dot(state, der, mode, grad_f=grad_f, full=full)
    C = torsion.structure_functions(state, der.F)
    dH_full = torsion.algebroid_d(B, 2, C, mesh, k)
    dH_full = dH_full - torsion.moving_frame_correction(full, dA, k)
    dH = torsion.unpack_full(dH_full, k)

    return FlowRHS(dG, dg, dA, dH, der, calH, Hsq, scalar)


def rhs_ungauged(state: GeometryState) -> FlowRHS:
    return evaluate_rhs(state, "ungauged")


def rhs_canonical(state: GeometryState) -> FlowRHS:
    return evaluate_rhs(state, "canonical")


def rhs_general(state: GeometryState, f: np.ndarray) -> FlowRHS:
    return evaluate_rhs(state, "general", f)


# --- time stepping -----------------------------------------------------------

@dataclass
class IntegratorConfig:
    t_end: float
    cfl_sigma: float = 0.1
    max_steps: int = 200000
    save_every: int = 1
    spd_floor: float = 1e-10
    mode: str = "ungauged"
    fixed_dt: float | None = None


def cfl_dt(state: GeometryState, sigma: float) -> float:
    """Parabolic step bound: sigma * min h^2 / max eigenvalue of g^{-1}."""
    gi = np.linalg.inv(state.g)
    lam = float(np.max(np.linalg.eigvalsh(gi)[..., -1])) if state.d > 1 else \
        float(np.max(gi[..., 0, 0]))
    h2 = min(h * h for h in state.mesh.spacings)
    return sigma * h2 / max(lam, 1e-300)


def _axpy(state: GeometryState, rhs: FlowRHS, dt: float) -> GeometryState:
    H = TorsionField(
        state.H.H3 + dt * rhs.dH.H3,
        state.H.H21 + dt * rhs.dH.H21,
        state.H.H12 + dt * rhs.dH.H12,
        state.H.H03 + dt * rhs.dH.H03,
    )
    return GeometryState(
        state.t + dt, state.mesh, state.alg,
        state.G + dt * rhs.dG,
        state.g + dt * rhs.dg,
        state.A + dt * rhs.dA,
        H,
    )


def rk4_step(state: GeometryState, dt: float, mode: str,
             f: np.ndarray | None = None) -> GeometryState:
    k1 = evaluate_rhs(state, mode, f)
    k2 = evaluate_rhs(_axpy(state, k1, 0.5 * dt), mode, f)
    k3 = evaluate_rhs(_axpy(state, k2, 0.5 * dt), mode, f)
    k4 = evaluate_rhs(_axpy(state, k3, dt), mode, f)
    out = state.copy()
    out.t = state.t + dt
    out.G = state.G + (dt / 6.0) * (k1.dG + 2 * k2.dG + 2 * k3.dG + k4.dG)
    out.g = state.g + (dt / 6.0) * (k1.dg + 2 * k2.dg + 2 * k3.dg + k4.dg)
    out.A = state.A + (dt / 6.0) * (k1.dA + 2 * k2.dA + 2 * k3.dA + k4.dA)
    for name in ("H3", "H21", "H12", "H03"):
        blocks = [getattr(ki.dH, name) for ki in (k1, k2, k3, k4)]
        setattr(out.H, name, getattr(state.H, name)
                + (dt / 6.0) * (blocks[0] + 2 * blocks[1] + 2 * blocks[2] + blocks[3]))
    return out


@dataclass
class FlowHistory:
    """Dense in-memory record of a flow run."""

    times: list = field(default_factory=list)
    states: list = field(default_factory=list)
    aborted: bool = False
    abort_reason: str = ""

    def append(self, state: GeometryState):
        self.times.append(state.t)
        self.states.append(state)

    def state_at(self, t: float) -> GeometryState:
        """Nearest stored state; times are dense so this is accurate to dt."""
        i = int(np.argmin(np.abs(np.asarray(self.times) - t)))
        return self.states[i]


def run_flow(state: GeometryState, config: IntegratorConfig,
             f_of_t=None) -> FlowHistory:
    """March the system to t_end, recording every save_every-th state.

    f_of_t, if given, maps a state to the scalar potential for the general
    gauge.  Aborts (history.aborted) when a metric leaves the SPD cone or a
    field stops being finite.
    """
    require_valid(state.alg)
    hist = FlowHistory()
    cur = state.copy()
    hist.append(cur)
    steps = 0
    while cur.t < config.t_end - 1e-14 and steps < config.max_steps:
        dt = config.fixed_dt if config.fixed_dt else cfl_dt(cur, config.cfl_sigma)
        dt = min(dt, config.t_end - cur.t)
        f = f_of_t(cur) if f_of_t is not None else None
        try:
            nxt = rk4_step(cur, dt, config.mode, f)
            nxt.validate(config.spd_floor)
            if not (np.all(np.isfinite(nxt.G)) and np.all(np.isfinite(nxt.g))
                    and np.all(np.isfinite(nxt.A))):
                raise DomainError("fields are no longer finite")
        except DomainError as exc:
            hist.aborted = True
            hist.abort_reason = str(exc)
            break
        cur = nxt
        steps += 1
        if steps % config.save_every == 0 or cur.t >= config.t_end - 1e-14:
            hist.append(cur)
    return hist


# --- rescaling and gauge checks ----------------------------------------------

def blowdown_rescale(state: GeometryState, s: float) -> GeometryState:
    """Parabolic rescaling: metrics and torsion scale by 1/s, the connection
    form is untouched, and the clock reads t/s."""
    if s <= 0:
        raise ValueError("rescale factor must be positive")
    out = state.copy()
    out.t = state.t / s
    out.G = state.G / s
    out.g = state.g / s
    out.H = TorsionField(state.H.H3 / s, state.H.H21 / s,
                         state.H.H12 / s, state.H.H03 / s)
    return out


def _fourier_interp_1d(values: np.ndarray, x: np.ndarray, L: float) -> np.ndarray:
    """Trigonometric interpolation of periodic samples at arbitrary points.

    values has the grid axis first; x holds evaluation points in [0, L).
    """
    N = values.shape[0]
    coef = np.fft.rfft(values, axis=0)
    ks = 2.0 * np.pi * np.arange(coef.shape[0]) / L
    phases = np.exp(1j * np.outer(x, ks))  # (npts, nmodes)
    weights = np.ones(coef.shape[0])
    weights[1:] = 2.0
    if N % 2 == 0:
        weights[-1] = 1.0
    flat = coef.reshape(coef.shape[0], -1)
    out = (phases * weights) @ flat
    return (out.real / N).reshape((x.shape[0],) + values.shape[1:])


def transport_map_1d(hist: FlowHistory, t_end: float) -> np.ndarray:
    """Integrate particle positions along q from the run's start to t_end.

    Only for 1-D bases.  Returns the final positions of the grid points,
    giving the diffeomorphism that relates the ungauged and canonical runs.
    """
    mesh = hist.states[0].mesh
    if mesh.d != 1:
        raise ValueError("transport map implemented for 1-D bases only")
    L = mesh.lengths[0]
    x = np.arange(mesh.sizes[0]) * mesh.spacings[0]
    times = np.asarray(hist.times)
    qcache: dict = {}

    def qfield(i):
        if i not in qcache:
            qcache[i] = derive(hist.states[i], validated=True).q[:, 0]
        return qcache[i]

    for i in range(len(times) - 1):
        if times[i] >= t_end - 1e-14:
            break
        dt = min(times[i + 1], t_end) - times[i]
        if dt <= 0:
            continue
        q0, q1 = qfield(i), qfield(i + 1)
        qm = 0.5 * (q0 + q1)

        def q_at(positions, qvals):
            return _fourier_interp_1d(qvals, positions % L, L)

        v1 = q_at(x, q0)
        v2 = q_at(x + 0.5 * dt * v1, qm)
        v3 = q_at(x + 0.5 * dt * v2, qm)
        v4 = q_at(x + dt * v3, q1)
        x = x + (dt / 6.0) * (v1 + 2 * v2 + 2 * v3 + v4)
    return x % L


def pullback_state_1d(state: GeometryState, phi: np.ndarray) -> GeometryState:
    """Pull a 1-D state back along the diffeomorphism x -> phi(x).

    Fields are evaluated spectrally at phi; base slots pick up phi' factors
    (one per lower base index).
    """
    mesh = state.mesh
    L = mesh.lengths[0]
    h = mesh.spacings[0]
    x = np.arange(mesh.sizes[0]) * h
    disp = np.unwrap((phi - x) * (2 * np.pi / L)) * (L / (2 * np.pi))
    dphi = 1.0 + deriv_array(disp, 0, h)

    def ev(arr):
        return _fourier_interp_1d(arr, phi % L, L)

    out = state.copy()
    out.G = ev(state.G)
    out.g = ev(state.g) * (dphi ** 2)[:, None, None]
    out.A = ev(state.A) * dphi[:, None, None]
    out.H = TorsionField(
        ev(state.H.H3),
        ev(state.H.H21) * dphi[:, None, None, None],
        ev(state.H.H12),
        ev(state.H.H03),
    )
    return out


def gauge_equivalence_report(hist_ungauged: FlowHistory,
                             hist_canonical: FlowHistory,
                             t: float) -> dict:
    """Max-norm gaps between the canonical run and the transported ungauged run.

    The ungauged final state is pulled back along the particle map of its own
    divergence vector and compared with the canonical state at the same time.
    The connection form is compared through its circle integrals only: the two
    gauges also differ by a fiber gauge transformation, which shifts A by an
    exact form without touching its holonomy.
    """
    fu = hist_ungauged.state_at(t)
    fc = hist_canonical.state_at(t)
    phi = transport_map_1d(hist_ungauged, t)
    pulled = pullback_state_1d(fu, phi)
    h = fu.mesh.spacings[0]
    gaps = {
        "G": float(np.max(np.abs(pulled.G - fc.G))),
        "g": float(np.max(np.abs(pulled.g - fc.g))),
        "A_holonomy": float(np.max(np.abs(np.sum(pulled.A - fc.A, axis=0) * h))),
        "H3": float(np.max(np.abs(pulled.H.H3 - fc.H.H3))),
        "H21": float(np.max(np.abs(pulled.H.H21 - fc.H.H21))),
        "H12": float(np.max(np.abs(pulled.H.H12 - fc.H.H12))),
        "H03": float(np.max(np.abs(pulled.H.H03 - fc.H.H03))),
    }
    return gaps


def gauge_flow_check(hist_ungauged: FlowHistory, hist_canonical: FlowHistory,
                     t: float) -> dict:
    return gauge_equivalence_report(hist_ungauged, hist_canonical, t)
