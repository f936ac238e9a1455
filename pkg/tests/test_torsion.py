"""Torsion 3-form blocks, the algebroid differential, and the codifferential."""

import numpy as np
import pytest

from conftest import constant_state, flat_abelian_state, heisenberg_state
from grflab import algebra, oracle, torsion
from grflab.cli import preset_inoue_like, random_state
from grflab.geometry import TorsionField, derive


def random_full_state(seed=0, N=16, d=1):
    rng = np.random.default_rng(seed)
    return random_state(rng, algebra.heisenberg3(), N, d)


def test_pack_unpack_roundtrip():
    st = random_full_state()
    full = torsion.pack_full(st.H, st.alg, st.mesh)
    back = torsion.unpack_full(full, st.k)
    for name in ("H3", "H21", "H12", "H03"):
        assert np.allclose(getattr(back, name), getattr(st.H, name))


def test_pack_full_antisymmetric():
    st = random_full_state(d=2)
    full = torsion.pack_full(st.H, st.alg, st.mesh)
    assert np.allclose(full, -np.swapaxes(full, -3, -2))
    assert np.allclose(full, -np.swapaxes(full, -2, -1))


def test_pack_two_form():
    st = random_full_state(d=2)
    rng = np.random.default_rng(1)
    k, d = st.k, st.d
    ff = rng.normal(size=st.mesh.shape + (k, k))
    ff = ff - np.swapaxes(ff, -1, -2)
    fb = rng.normal(size=st.mesh.shape + (k, d))
    bb = rng.normal(size=st.mesh.shape + (d, d))
    bb = bb - np.swapaxes(bb, -1, -2)
    full = torsion.pack_two_form(ff, fb, bb, k, st.mesh)
    assert np.allclose(full, -np.swapaxes(full, -1, -2))
    assert np.allclose(full[..., :k, :k], ff)
    assert np.allclose(full[..., :k, k:], fb)
    assert np.allclose(full[..., k:, k:], bb)


def test_h_contractions_zero_torsion():
    st = heisenberg_state()
    der = derive(st)
    calH, Hsq = torsion.h_contractions(st, der)
    assert np.max(np.abs(calH)) == 0.0
    assert np.max(np.abs(Hsq)) == 0.0


def test_dstar_zero_torsion():
    st = heisenberg_state()
    der = derive(st)
    assert np.max(np.abs(torsion.minus_dstar(st, der))) == 0.0
    assert np.max(np.abs(torsion.dstar_H(st, der))) == 0.0


def test_dstar_constant_data_abelian():
    # every codifferential term carries a derivative, a DG, an F, or a bracket
    st = preset_inoue_like(16)
    der = derive(st)
    assert np.max(np.abs(torsion.minus_dstar(st, der))) < 1e-13


def test_dstar_matches_oracle():
    for d, seed in ((1, 3), (2, 4)):
        st = random_full_state(seed=seed, N=24, d=d)
        der = derive(st)
        md = torsion.minus_dstar(st, der)
        md_o = oracle.codifferential_oracle(st)
        scale = max(float(np.max(np.abs(md_o))), 1e-12)
        assert np.max(np.abs(md - md_o)) / scale < 1e-10


def test_algebroid_d_constant_scalar():
    st = random_full_state(d=2)
    C = torsion.structure_functions(state=st, F=derive(st).F)
    sigma = np.full(st.mesh.shape, 2.0)
    out = torsion.algebroid_d(sigma, 0, C, st.mesh, st.k)
    assert np.max(np.abs(out)) < 1e-13


def test_algebroid_d_squares_to_zero():
    for d in (1, 2):
        st = random_full_state(seed=9 + d, N=24, d=d)
        C = torsion.structure_functions(st, derive(st).F)
        K = st.k + d
        x = st.mesh.coords()[0]
        wave = np.sin(2 * np.pi * x / st.mesh.lengths[0])
        one = wave[..., None] * (1.0 + np.arange(K))
        dd = torsion.algebroid_d(
            torsion.algebroid_d(one, 1, C, st.mesh, st.k), 2, C, st.mesh, st.k)
        # exact in the continuum; discretely limited by the product rule
        # failing at stencil order
        assert np.max(np.abs(dd)) < 5e-3


def test_closedness_residual_presets():
    st = preset_inoue_like(16)
    assert torsion.closedness_residual(st) < 1e-13
    # an x-dependent pure-fiber component is no longer closed
    (x,) = st.mesh.coords()
    st.H.H3 = st.H.H3 * (1.0 + 0.5 * np.sin(2 * np.pi * x))[..., None, None, None]
    assert torsion.closedness_residual(st) > 1e-2


def test_splitting_identity_random():
    for d in (1, 2):
        st = random_full_state(seed=20 + d, N=16, d=d)
        der = derive(st)
        assert torsion.splitting_identity(st, der) < 1e-12


def test_splitting_blocks_nonnegative():
    st = random_full_state(seed=30)
    der = derive(st)
    tf, tm, tb = torsion.splitting_contractions(st, der)
    assert np.min(tf) >= -1e-14
    assert np.min(tm) >= -1e-14
    assert np.min(tb) >= -1e-14


def test_b_dot_zero_torsion():
    st = heisenberg_state()
    der = derive(st)
    for mode in ("ungauged", "canonical"):
        assert np.max(np.abs(torsion.b_dot(st, der, mode))) == 0.0


def test_b_dot_canonical_flat_abelian():
    st = flat_abelian_state()
    der = derive(st)
    assert np.max(np.abs(torsion.b_dot(st, der, "canonical"))) == 0.0


def test_b_dot_general_needs_gradient():
    st = heisenberg_state()
    der = derive(st)
    with pytest.raises(ValueError):
        torsion.b_dot(st, der, "general")
    with pytest.raises(ValueError):
        torsion.b_dot(st, der, "sideways")


def test_interior_product():
    st = random_full_state(seed=40)
    full = torsion.pack_full(st.H, st.alg, st.mesh)
    vec = np.ones(st.mesh.shape + (1,))
    iv = torsion.interior_product(vec, full, st.k)
    assert np.allclose(iv, full[..., st.k, :, :])


def test_moving_frame_correction_zero_rate():
    st = random_full_state(seed=41)
    full = torsion.pack_full(st.H, st.alg, st.mesh)
    Adot = np.zeros(st.mesh.shape + (1, st.k))
    corr = torsion.moving_frame_correction(full, Adot, st.k)
    assert np.max(np.abs(corr)) == 0.0
