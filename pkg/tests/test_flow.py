"""Coupled evolution: right-hand sides, stepping, rescaling, gauge transport."""

import numpy as np
import pytest

from conftest import flat_abelian_state, heisenberg_state
from grflab import algebra, flow
from grflab.cli import preset_heisenberg_s1, random_state
from grflab.flow import (FlowHistory, IntegratorConfig, blowdown_rescale,
                         cfl_dt, evaluate_rhs, gauge_flow_check,
                         pullback_state_1d, rhs_canonical, rhs_general,
                         rhs_ungauged, rk4_step, run_flow, transport_map_1d)
from grflab.geometry import derive


def test_flat_abelian_rhs_zero_all_gauges():
    st = flat_abelian_state()
    for rhs in (rhs_ungauged(st), rhs_canonical(st),
                rhs_general(st, np.zeros(st.mesh.shape))):
        assert np.max(np.abs(rhs.dG)) < 1e-13
        assert np.max(np.abs(rhs.dg)) < 1e-13
        assert np.max(np.abs(rhs.dA)) < 1e-13
        for name in ("H3", "H21", "H12", "H03"):
            assert np.max(np.abs(getattr(rhs.dH, name))) < 1e-13


def test_heisenberg_initial_rate():
    st = heisenberg_state()
    rhs = rhs_ungauged(st)
    assert np.max(np.abs(rhs.dG - np.diag([1.0, 1.0, -1.0]))) < 1e-10
    assert np.max(np.abs(rhs.dg)) < 1e-10
    assert np.max(np.abs(rhs.dA)) < 1e-10


def test_heisenberg_run_matches_closed_form():
    # constant Heisenberg fibers evolve as G = diag(a, a, 1/a) with
    # a(t) = (1 + 3 t)^(1/3); the base metric stays fixed
    st = preset_heisenberg_s1(16)
    hist = run_flow(st, IntegratorConfig(t_end=0.3, fixed_dt=1e-3))
    assert not hist.aborted
    for i in (len(hist.times) // 2, len(hist.times) - 1):
        t = hist.times[i]
        a = (1.0 + 3.0 * t) ** (1.0 / 3.0)
        expected = np.diag([a, a, 1.0 / a])
        assert np.max(np.abs(hist.states[i].G - expected)) < 1e-9
        assert np.max(np.abs(hist.states[i].g - 1.0)) < 1e-9
        assert np.max(np.abs(hist.states[i].A)) < 1e-12


def test_canonical_equals_ungauged_when_q_vanishes():
    st = preset_heisenberg_s1(16)
    cfg_u = IntegratorConfig(t_end=0.02, mode="ungauged")
    cfg_c = IntegratorConfig(t_end=0.02, mode="canonical")
    hu = run_flow(st, cfg_u)
    hc = run_flow(st, cfg_c)
    assert np.max(np.abs(hu.states[-1].G - hc.states[-1].G)) < 1e-13
    assert np.max(np.abs(hu.states[-1].g - hc.states[-1].g)) < 1e-13


def test_rk4_zero_rhs_fixed_point():
    st = flat_abelian_state()
    out = rk4_step(st, 0.01, "ungauged")
    assert np.max(np.abs(out.G - st.G)) < 1e-14
    assert np.max(np.abs(out.g - st.g)) < 1e-14
    assert np.max(np.abs(out.A)) < 1e-14


def test_cfl_scaling():
    st16 = flat_abelian_state(N=16)
    st32 = flat_abelian_state(N=32)
    assert cfl_dt(st16, 0.1) == pytest.approx(4.0 * cfl_dt(st32, 0.1))
    st_big = flat_abelian_state(N=16, g0=[[4.0]])
    # larger g means smaller g^{-1}, so a larger stable step
    assert cfl_dt(st_big, 0.1) == pytest.approx(4.0 * cfl_dt(st16, 0.1))


def test_abort_on_blowup():
    st = preset_heisenberg_s1(16)
    hist = run_flow(st, IntegratorConfig(t_end=100.0, fixed_dt=10.0,
                                         max_steps=50))
    assert hist.aborted
    assert hist.abort_reason


def test_blowdown_identity_and_flatness():
    st = heisenberg_state()
    same = blowdown_rescale(st, 1.0)
    assert np.max(np.abs(same.G - st.G)) == 0.0
    flat = flat_abelian_state()
    resc = blowdown_rescale(flat, 4.0)
    rhs = rhs_ungauged(resc)
    assert np.max(np.abs(rhs.dG)) < 1e-13
    assert np.max(np.abs(rhs.dg)) < 1e-13
    with pytest.raises(ValueError):
        blowdown_rescale(st, -1.0)


def test_blowdown_scales_fields():
    st = heisenberg_state()
    st.t = 0.5
    resc = blowdown_rescale(st, 2.0)
    assert resc.t == pytest.approx(0.25)
    assert np.max(np.abs(resc.G - 0.5 * st.G)) < 1e-14
    assert np.max(np.abs(resc.g - 0.5 * st.g)) < 1e-14


def test_pullback_identity_map():
    rng = np.random.default_rng(2)
    st = random_state(rng, algebra.heisenberg3(), 32, 1)
    x = np.arange(32) * st.mesh.spacings[0]
    back = pullback_state_1d(st, x)
    assert np.max(np.abs(back.G - st.G)) < 1e-10
    assert np.max(np.abs(back.g - st.g)) < 1e-10
    assert np.max(np.abs(back.A - st.A)) < 1e-10


def test_transport_map_zero_q():
    st = preset_heisenberg_s1(16)
    hist = run_flow(st, IntegratorConfig(t_end=0.01))
    phi = transport_map_1d(hist, 0.01)
    x = np.arange(16) * st.mesh.spacings[0]
    L = st.mesh.lengths[0]
    circle_gap = np.minimum(np.abs(phi - x), L - np.abs(phi - x))
    assert np.max(circle_gap) < 1e-12


def test_gauge_check_trivial_on_homogeneous_data():
    st = preset_heisenberg_s1(16)
    hu = run_flow(st, IntegratorConfig(t_end=0.01, mode="ungauged"))
    hc = run_flow(st, IntegratorConfig(t_end=0.01, mode="canonical"))
    gaps = gauge_flow_check(hu, hc, 0.01)
    assert max(gaps.values()) < 1e-10


def test_history_state_at():
    st = preset_heisenberg_s1(16)
    hist = run_flow(st, IntegratorConfig(t_end=0.01, fixed_dt=1e-3))
    assert hist.state_at(0.0) is hist.states[0]
    assert abs(hist.state_at(0.005).t - 0.005) < 1e-9
