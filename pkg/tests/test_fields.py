"""Grid container, discrete calculus, integration, and field I/O."""

import numpy as np
import pytest

from grflab.fields import (DomainError, Field, GridError, Mesh, contract,
                           deriv_array, integrate, integrate_values,
                           inverse_metric, load_field, metric_det,
                           partial_derivative, save_field)


def unit_mesh(N=32, d=1):
    return Mesh((N,) * d, (1.0,) * d)


def test_mesh_validation():
    with pytest.raises(GridError):
        Mesh((4,), (1.0,))  # too few points for the stencil
    with pytest.raises(GridError):
        Mesh((16, 16, 16), (1.0, 1.0, 1.0))  # d > 2
    with pytest.raises(GridError):
        Mesh((16,), (-1.0,))
    with pytest.raises(GridError):
        Mesh((16, 16), (1.0,))


def test_mesh_geometry_properties():
    mesh = Mesh((10, 20), (1.0, 4.0))
    assert mesh.d == 2
    assert mesh.spacings == (0.1, 0.2)
    assert mesh.cell_volume == pytest.approx(0.02)
    X, Y = mesh.coords()
    assert X.shape == (10, 20)
    assert Y[0, 3] == pytest.approx(0.6)


def test_derivative_constant_is_zero():
    mesh = unit_mesh()
    f = Field(mesh, "", np.full(mesh.shape, 3.5))
    assert np.max(np.abs(partial_derivative(f, 0).values)) < 1e-13


def test_derivative_fourth_order_convergence():
    errs = []
    for N in (32, 64):
        mesh = Mesh((N,), (1.0,))
        (x,) = mesh.coords()
        vals = np.sin(2 * np.pi * x)
        d = deriv_array(vals, 0, mesh.spacings[0])
        exact = 2 * np.pi * np.cos(2 * np.pi * x)
        errs.append(np.max(np.abs(d - exact)))
    assert errs[1] < errs[0] / 12.0  # 4th order would give 16


def test_derivative_axis_bounds():
    mesh = unit_mesh()
    f = Field(mesh, "", np.zeros(mesh.shape))
    with pytest.raises(GridError):
        partial_derivative(f, 1)


def test_integrate_unit_box():
    mesh = unit_mesh()
    one = Field(mesh, "", np.ones(mesh.shape))
    g = Field(mesh, "bb", np.ones(mesh.shape + (1, 1)))
    assert integrate(one, g) == pytest.approx(1.0)


def test_integrate_volume_weight():
    # g = 4 on a 1-d unit box doubles the measure
    mesh = unit_mesh()
    one = Field(mesh, "", np.ones(mesh.shape))
    g = Field(mesh, "bb", 4.0 * np.ones(mesh.shape + (1, 1)))
    assert integrate(one, g) == pytest.approx(2.0)
    assert integrate_values(np.ones(mesh.shape), g.values, mesh) == pytest.approx(2.0)


def test_integrate_rejects_bad_metric():
    mesh = unit_mesh()
    one = Field(mesh, "", np.ones(mesh.shape))
    g = Field(mesh, "bb", -np.ones(mesh.shape + (1, 1)))
    with pytest.raises(DomainError):
        integrate(one, g)


def test_metric_det_2d():
    g = np.array([[[2.0, 1.0], [1.0, 3.0]]])
    assert metric_det(g, 2)[0] == pytest.approx(5.0)


def test_contract_kronecker_trace():
    mesh = unit_mesh(8)
    delta = Field(mesh, "ff", np.broadcast_to(np.eye(3), mesh.shape + (3, 3)).copy())
    out = contract("ij,ij->", delta, delta)
    assert np.allclose(out.values, 3.0)


def test_contract_zero_dg_norm():
    mesh = unit_mesh(8)
    DG = Field(mesh, "bff", np.zeros(mesh.shape + (1, 3, 3)))
    gi = Field(mesh, "bb", np.ones(mesh.shape + (1, 1)))
    Gi = Field(mesh, "ff", np.broadcast_to(np.eye(3), mesh.shape + (3, 3)).copy())
    out = contract("ab,ij,lm,ail,bjm->", gi, Gi, Gi, DG, DG)
    assert np.max(np.abs(out.values)) == 0.0


def test_contract_plan_validation():
    mesh = unit_mesh(8)
    a = Field(mesh, "ff", np.zeros(mesh.shape + (3, 3)))
    b = Field(mesh, "bb", np.zeros(mesh.shape + (1, 1)))
    with pytest.raises(GridError):
        contract("ij,ij->", a)  # wrong factor count
    with pytest.raises(GridError):
        contract("ij,ij->", a, b)  # pairs a fiber slot with a base slot


def test_field_shape_validation():
    mesh = unit_mesh(8)
    with pytest.raises(GridError):
        Field(mesh, "ff", np.zeros((7, 3, 3)))
    with pytest.raises(GridError):
        Field(mesh, "b", np.zeros(mesh.shape + (3,)))  # base slot range != d
    with pytest.raises(GridError):
        Field(mesh, "x", np.zeros(mesh.shape + (3,)))


def test_field_symmetry_enforced():
    mesh = unit_mesh(8)
    raw = np.zeros(mesh.shape + (3, 3))
    raw[..., 0, 1] = 1.0
    f = Field(mesh, "ff", raw.copy(), [("sym", 0, 1)])
    assert np.allclose(f.values[..., 0, 1], 0.5)
    assert np.allclose(f.values, np.swapaxes(f.values, -1, -2))
    a = Field(mesh, "ff", raw.copy(), [("anti", 0, 1)])
    assert np.allclose(a.values, -np.swapaxes(a.values, -1, -2))


def test_field_finite_check():
    mesh = unit_mesh(8)
    vals = np.zeros(mesh.shape)
    vals[0] = np.nan
    f = Field(mesh, "", vals)
    with pytest.raises(DomainError):
        f.check_finite()


def test_inverse_metric():
    mesh = unit_mesh(8)
    g = Field(mesh, "bb", 4.0 * np.ones(mesh.shape + (1, 1)))
    gi = inverse_metric(g)
    assert np.allclose(gi.values, 0.25)


def test_save_load_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    mesh = Mesh((8, 8), (1.0, 2.0))
    vals = rng.normal(size=mesh.shape + (3, 3))
    f = Field(mesh, "ff", vals, [("sym", 0, 1)])
    for fmt in ("bin", "csv"):
        save_field(f, tmp_path / f"field_{fmt}", fmt=fmt)
        back = load_field(tmp_path / f"field_{fmt}")
        assert back.mesh == mesh
        assert back.slots == "ff"
        assert np.allclose(back.values, f.values, atol=1e-12)
