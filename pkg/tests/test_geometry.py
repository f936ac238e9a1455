"""Derived geometric quantities and the two independent curvature paths."""

import numpy as np
import pytest

from conftest import constant_state, flat_abelian_state, heisenberg_state
from grflab import algebra, oracle
from grflab.fields import DomainError, Mesh
from grflab.geometry import (GeometryState, TorsionField, check_spd_field,
                             compute_DDG, compute_DG, compute_F, compute_q,
                             curvature_closed_form, derive, gradient, hessian,
                             laplacian, levi_civita, min_eig_field,
                             ricci_blocks)
from grflab.cli import random_state


def test_constant_base_metric_is_flat():
    st = flat_abelian_state(d=2)
    Gamma, Ric, R = levi_civita(st.g, st.mesh)
    assert np.max(np.abs(Gamma)) < 1e-13
    assert np.max(np.abs(Ric)) < 1e-13
    assert np.max(np.abs(R)) < 1e-13


def test_zero_connection_zero_F():
    st = heisenberg_state()
    der = derive(st)
    assert np.max(np.abs(der.F)) == 0.0


def test_constant_G_zero_DG_DDG_q():
    st = heisenberg_state()
    der = derive(st)
    assert np.max(np.abs(der.DG)) < 1e-13
    assert np.max(np.abs(der.DDG)) < 1e-13
    assert np.max(np.abs(der.q)) < 1e-13


def test_flat_abelian_curvature_zero():
    st = flat_abelian_state(d=2)
    cb = curvature_closed_form(st, derive(st))
    for block in (cb.ffff, cb.fbbf, cb.bbbb, cb.Ric_ff, cb.Ric_fb, cb.Ric_bb):
        assert np.max(np.abs(block)) < 1e-13
    assert np.max(np.abs(cb.scalar)) < 1e-13


def test_heisenberg_point_values():
    st = heisenberg_state()
    der = derive(st)
    Ric_ff, Ric_fb, Ric_bb, scalar = ricci_blocks(st, der)
    expected = np.diag([-0.5, -0.5, 0.5])
    assert np.max(np.abs(Ric_ff - expected)) < 1e-10
    assert np.max(np.abs(Ric_fb)) < 1e-10
    assert np.max(np.abs(Ric_bb)) < 1e-10
    assert np.max(np.abs(scalar + 0.5)) < 1e-10


def test_heisenberg_oracle_agrees_at_a_point():
    st = heisenberg_state()
    R, Ric, scal = oracle.curvature_oracle(st)
    k = st.k
    assert np.max(np.abs(Ric[..., :k, :k] - np.diag([-0.5, -0.5, 0.5]))) < 1e-10
    assert np.max(np.abs(scal + 0.5)) < 1e-10


def _rel_err(a, b):
    scale = max(float(np.max(np.abs(b))), 1e-12)
    return float(np.max(np.abs(a - b))) / scale


def curvature_gap(N, d, seed=5):
    rng = np.random.default_rng(seed)
    st = random_state(rng, algebra.heisenberg3(), N, d, with_H=False, max_freq=1)
    der = derive(st)
    cb = curvature_closed_form(st, der)
    R, Ric, scal = oracle.curvature_oracle(st)
    k = st.k
    gaps = [
        _rel_err(cb.ffff, R[..., :k, :k, :k, :k]),
        _rel_err(cb.fbbf, R[..., :k, k:, k:, :k]),
        _rel_err(cb.bbbb, R[..., k:, k:, k:, k:]),
        _rel_err(cb.Ric_ff, Ric[..., :k, :k]),
        _rel_err(cb.Ric_fb, Ric[..., :k, k:]),
        _rel_err(cb.Ric_bb, Ric[..., k:, k:]),
        _rel_err(cb.scalar, scal),
    ]
    return max(gaps)


def test_closed_form_matches_oracle_1d():
    g32 = curvature_gap(32, 1)
    g64 = curvature_gap(64, 1)
    assert g64 < 2e-5
    assert g64 < g32 / 12.0


def test_gradient_hessian_laplacian_flat():
    mesh = Mesh((64,), (1.0,))
    st = flat_abelian_state(N=64)
    der = derive(st)
    (x,) = mesh.coords()
    f = np.sin(2 * np.pi * x)
    grad = gradient(f, der.gi, mesh)
    assert np.max(np.abs(grad[..., 0] - 2 * np.pi * np.cos(2 * np.pi * x))) < 1e-4
    lap = laplacian(f, der.gi, der.Gamma, mesh)
    assert np.max(np.abs(lap + (2 * np.pi) ** 2 * f)) < 2e-2
    hess = hessian(f, der.Gamma, mesh)
    assert np.max(np.abs(hess[..., 0, 0] - lap)) < 1e-10


def test_laplacian_respects_metric_scale():
    # constant g = 4 divides the flat laplacian by 4
    st = flat_abelian_state(N=64, g0=[[4.0]])
    mesh = st.mesh
    der = derive(st)
    (x,) = mesh.coords()
    f = np.sin(2 * np.pi * x)
    lap = laplacian(f, der.gi, der.Gamma, mesh)
    assert np.max(np.abs(lap + 0.25 * (2 * np.pi) ** 2 * f)) < 1e-2


def test_compute_helpers_consistent_with_derive():
    rng = np.random.default_rng(11)
    st = random_state(rng, algebra.heisenberg3(), 32, 1)
    der = derive(st)
    F = compute_F(st.A, st.alg, st.mesh)
    assert np.allclose(F, der.F)
    DG = compute_DG(st.G, st.A, st.alg, st.mesh)
    assert np.allclose(DG, der.DG)
    DDG = compute_DDG(DG, st.A, der.Gamma, st.alg, st.mesh)
    assert np.allclose(DDG, der.DDG)
    q = compute_q(DG, der.Gi, der.gi)
    assert np.allclose(q, der.q)


def test_F_antisymmetry_and_1d_vanishing():
    rng = np.random.default_rng(12)
    st1 = random_state(rng, algebra.heisenberg3(), 32, 1)
    assert np.max(np.abs(derive(st1).F)) == 0.0
    st2 = random_state(rng, algebra.heisenberg3(), 16, 2)
    F = derive(st2).F
    assert np.allclose(F, -np.swapaxes(F, -3, -2))


def test_spd_guard():
    st = heisenberg_state()
    st.G[..., 0, 0] = -1.0
    with pytest.raises(DomainError):
        st.validate()
    assert min_eig_field(np.broadcast_to(np.eye(2), (4, 2, 2))) == pytest.approx(1.0)
    with pytest.raises(DomainError):
        check_spd_field(-np.broadcast_to(np.eye(2), (4, 2, 2)), "test")


def test_state_copy_is_deep():
    st = heisenberg_state()
    cp = st.copy()
    cp.G[..., 0, 0] = 7.0
    cp.H.H3[...] = 1.0
    assert np.max(np.abs(st.G[..., 0, 0] - 1.0)) == 0.0
    assert np.max(np.abs(st.H.H3)) == 0.0
