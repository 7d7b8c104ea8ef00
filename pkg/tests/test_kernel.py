import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from vortexgas.errors import InvalidSpecError
from vortexgas.kernel import (
    MollifierSpec,
    RadialKernel,
    charge_profile,
    invariant_suite,
    kernel_eval,
    potential_eval,
)

from oracles import unit_kernel

IND = MollifierSpec("indicator")
QUAD = MollifierSpec("zero_charge_quadratic")
QUAD_TABLE = MollifierSpec("tabulated", table=tuple((r, 1 - (5 / 3) * r * r) for r in np.linspace(0, 1, 41)))

coord = st.floats(-2.0, 2.0, allow_nan=False)
vec = st.tuples(coord, coord, coord).map(np.array)


def test_charge_indicator_half_ball():
    assert charge_profile(IND, 0.5) == pytest.approx(4 * math.pi / 3 * 0.125, rel=1e-15)


def test_charge_confined_to_unit_ball():
    assert charge_profile(IND, 2.0) == pytest.approx(4 * math.pi / 3, rel=1e-15)
    assert charge_profile(QUAD, 3.0) == charge_profile(QUAD, 1.0)


def test_zero_charge_quadratic_by_quadrature():
    q = integrate.quad(lambda r: 4 * math.pi * r * r * (1 - 5 / 3 * r * r), 0, 1)[0]
    assert abs(q) < 1e-14
    assert abs(charge_profile(QUAD, 1.0)) < 1e-15
    assert QUAD.is_short_range and not IND.is_short_range


def test_tabulated_charge_matches_quadrature_of_interpolant():
    arr = np.array(QUAD_TABLE.table)
    rho = lambda r: np.interp(r, arr[:, 0], arr[:, 1])  # noqa: E731
    for r in (0.1, 0.37, 0.8, 1.0):
        ref = sum(integrate.quad(lambda t: 4 * math.pi * t * t * rho(t), a, b)[0]
                  for a, b in zip(np.r_[0, arr[1:, 0]][:-1], np.r_[0, arr[1:, 0]][1:]) if a < r
                  for a, b in [(a, min(b, r))])
        assert charge_profile(QUAD_TABLE, r) == pytest.approx(ref, rel=1e-9, abs=1e-13)
        # and the table approximates the smooth profile to the interpolation error
        assert charge_profile(QUAD_TABLE, r) == pytest.approx(4 * math.pi / 3 * (r**3 - r**5), abs=2e-3)


@pytest.mark.parametrize("table", [
    ((0.0, 1.0), (0.5, float("nan"))),
    ((0.0, 1.0),),
    ((0.5, 1.0), (0.2, 1.0)),
    ((0.0, 1.0), (1.5, 0.0)),
])
def test_tabulated_rejects_bad_tables(table):
    with pytest.raises(InvalidSpecError):
        MollifierSpec("tabulated", table=table)


def test_unknown_kind_rejected():
    with pytest.raises(InvalidSpecError):
        MollifierSpec("gaussian")


def test_kernel_thickness_range():
    with pytest.raises(InvalidSpecError):
        RadialKernel(IND, 0.0)
    with pytest.raises(InvalidSpecError):
        RadialKernel(IND, 1.5)


def test_indicator_far_field_value():
    # l^3 Q x / (4 pi |x|^3) with Q = 4 pi / 3, l = 0.1, |x| = 0.5 gives 1e-3 / (3 * 0.25) = 1/750
    k = RadialKernel(IND, 0.1)
    out = kernel_eval(k, [0.5, 0.0, 0.0])
    np.testing.assert_allclose(out, [1 / 750, 0, 0], rtol=1e-14, atol=0)


def test_far_field_cross_checked_by_potential_gradient():
    k = RadialKernel(IND, 0.1)
    x = np.array([0.5, 0.0, 0.0])
    h = 1e-5
    grad = (potential_eval(k, x + [h, 0, 0]) - potential_eval(k, x - [h, 0, 0])) / (2 * h)
    assert grad == pytest.approx(1 / 750, rel=1e-7)


@pytest.mark.parametrize("spec", [IND, QUAD, QUAD_TABLE])
@pytest.mark.parametrize("ell", [0.01, 0.3, 1.0])
def test_kernel_at_origin_is_zero(spec, ell):
    assert np.array_equal(kernel_eval(RadialKernel(spec, ell), np.zeros(3)), np.zeros(3))


def test_zero_charge_vanishes_outside_core():
    k = RadialKernel(QUAD, 0.1)
    assert np.array_equal(kernel_eval(k, [0.2, 0.0, 0.0]), np.zeros(3))
    assert potential_eval(k, [0.2, 0.0, 0.0]) == pytest.approx(0.0, abs=1e-16)
    assert potential_eval(k, [0.0, 0.1, 0.05]) == pytest.approx(0.0, abs=1e-16)


def test_potential_far_field_indicator():
    k = RadialKernel(IND, 0.1)
    assert potential_eval(k, [0.5, 0, 0]) == pytest.approx(-1 / 1500, rel=1e-12)
    assert potential_eval(k, [0, 0.3, 0.4]) == pytest.approx(-1 / 1500, rel=1e-12)


def test_gradient_consistency_at_spec_point():
    for spec in (IND, QUAD):
        k = RadialKernel(spec, 0.5)
        x = np.array([0.3, 0.1, 0.0])
        h = 1e-5
        grad = np.array([(potential_eval(k, x + h * e) - potential_eval(k, x - h * e)) / (2 * h) for e in np.eye(3)])
        np.testing.assert_allclose(grad, kernel_eval(k, x), rtol=1e-6)


def test_scaling_identity():
    k1 = RadialKernel(IND, 1.0)
    kl = RadialKernel(IND, 0.2)
    y = np.random.default_rng(0).uniform(-1, 1, (50, 3))
    np.testing.assert_allclose(kernel_eval(kl, y), 0.2 * kernel_eval(k1, y / 0.2), rtol=1e-13)


@pytest.mark.parametrize("kind", ["indicator", "zero_charge_quadratic"])
def test_matches_independent_unit_kernel(kind):
    y = np.random.default_rng(1).uniform(-2, 2, (200, 3))
    np.testing.assert_allclose(kernel_eval(RadialKernel(MollifierSpec(kind), 1.0), y), unit_kernel(kind)(y),
                               rtol=1e-13, atol=1e-16)


def test_tabulated_kernel_tracks_closed_form():
    y = np.random.default_rng(2).uniform(-0.15, 0.15, (200, 3))
    np.testing.assert_allclose(kernel_eval(RadialKernel(QUAD_TABLE, 0.1), y), kernel_eval(RadialKernel(QUAD, 0.1), y),
                               atol=1e-5)


@settings(max_examples=60, deadline=None)
@given(vec, st.floats(0.0, 2 * math.pi), st.floats(0.0, math.pi), st.floats(0.0, 2 * math.pi))
def test_rotation_equivariance(x, a, b, c):
    Rz = lambda t: np.array([[math.cos(t), -math.sin(t), 0], [math.sin(t), math.cos(t), 0], [0, 0, 1]])  # noqa: E731
    Ry = np.array([[math.cos(b), 0, math.sin(b)], [0, 1, 0], [-math.sin(b), 0, math.cos(b)]])
    R = Rz(a) @ Ry @ Rz(c)
    for spec in (IND, QUAD):
        k = RadialKernel(spec, 0.3)
        np.testing.assert_allclose(kernel_eval(k, R @ x), R @ kernel_eval(k, x), atol=1e-15)


@settings(max_examples=60, deadline=None)
@given(vec, st.sampled_from([0.01, 0.1, 1.0]))
def test_near_field_bound(y, ell):
    # |K_ell(y)| <= ell sup|rho| / 3 inside the core
    y = y / max(np.linalg.norm(y), 1e-12) * min(np.linalg.norm(y), 1.0) * ell
    for spec in (IND, QUAD, QUAD_TABLE):
        assert np.linalg.norm(kernel_eval(RadialKernel(spec, ell), y)) <= ell * spec.sup_norm / 3 * (1 + 1e-12)


@settings(max_examples=40, deadline=None)
@given(vec)
def test_charge_constant_beyond_unit_radius(x):
    r = 1.0 + float(np.linalg.norm(x))
    for spec in (IND, QUAD):
        assert charge_profile(spec, r) == charge_profile(spec, 1.0)


@pytest.mark.parametrize("spec", [IND, QUAD, QUAD_TABLE])
def test_invariant_suite_passes(spec):
    results = invariant_suite(spec)
    assert {r["name"] for r in results} == {
        "rotation_equivariance", "gradient_consistency", "curl_free",
        "divergence_equals_density", "near_field_bound", "lipschitz_bound",
    }
    failed = [r for r in results if not r["passed"]]
    assert not failed, failed
