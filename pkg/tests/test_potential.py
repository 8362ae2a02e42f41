import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lsilab.errors import DisconnectedError, IncompatibleRHSError, NonPositiveDensityError
from lsilab.geometry import make_sphere, make_two_spheres
from lsilab.operators import ScalarField, build_weighted_laplacian, constant_field
from lsilab.potential import (
    NormalizedDensity,
    lemma_delta_u_check,
    normalization_residual,
    normalize_density,
    potential_rhs,
    solve_potential,
)

import oracles


def _solve(geo, values):
    nd = normalize_density(ScalarField(values, geo), geo.n)
    return nd, solve_potential(nd, geo.n)


def test_constant_density_normalizes_to_one(sphere_chart, torus, circle):
    for geo in (sphere_chart, torus, circle):
        nd = normalize_density(constant_field(geo, 5.0), geo.n)
        assert np.abs(nd.values - 1.0).max() <= 1e-12
        assert nd.scale_log == pytest.approx(-np.log(5.0), abs=1e-12)


@pytest.mark.parametrize("name", ["sphere_chart", "sphere_mesh", "torus", "circle"])
def test_normalization_zeroes_residual(name, request):
    geo = request.getfixturevalue(name)
    f = ScalarField(np.exp(0.3 * geo.points[:, 0] - 0.2 * geo.points[:, 1] ** 2), geo)
    nd = normalize_density(f, geo.n)
    mass = geo.weights @ nd.values
    assert abs(normalization_residual(nd.f, geo.n)) <= 1e-8 * mass
    again = normalize_density(nd.f, geo.n)
    assert abs(again.scale_log) <= 1e-12


def test_normalization_rejects_nonpositive(torus):
    vals = np.ones(torus.sample_count)
    vals[0] = -1.0
    with pytest.raises(NonPositiveDensityError):
        normalize_density(ScalarField(vals, torus), 2)


def test_constant_density_gives_zero_potential(sphere_chart, sphere_mesh):
    for geo in (sphere_chart, sphere_mesh):
        _, sol = _solve(geo, np.ones(geo.sample_count))
        assert np.abs(sol.u.values).max() == 0.0
        assert sol.omega_mask.all()


@pytest.mark.parametrize("name", ["sphere_chart", "sphere_mesh", "torus", "circle"])
def test_solver_residual(name, request):
    geo = request.getfixturevalue(name)
    nd, sol = _solve(geo, np.exp(0.3 * geo.points[:, -1]))
    assert sol.solver_residual <= 1e-8
    K = build_weighted_laplacian(nd.f).matrix
    b = geo.weights * potential_rhs(nd.f, geo.n)
    assert np.linalg.norm(K @ sol.u.values - b) <= 1e-8 * np.linalg.norm(b)
    assert abs(geo.weights @ sol.u.values) <= 1e-12 * np.abs(sol.u.values).max()


def test_circle_oracle_closed_form():
    # for f = exp(a cos t) the normalization constant is 1 and u = -(a/2) cos t
    t = 2 * np.pi * np.arange(128) / 128
    assert np.abs(oracles.circle_potential(0.3, 128) + 0.15 * np.cos(t)).max() <= 1e-12


def test_circle_solver_matches_oracle_second_order():
    errs = []
    for L in (2, 3, 4, 5):
        geo = make_sphere(1, L)
        _, sol = _solve(geo, np.exp(0.3 * np.cos(geo.params[:, 0])))
        errs.append(np.abs(sol.u.values - oracles.circle_potential(0.3, geo.sample_count)).max())
    orders = np.log2(np.array(errs[:-1]) / errs[1:])
    assert np.all(orders >= 1.8), (errs, orders)


def test_unnormalized_rhs_rejected(torus):
    f = ScalarField(np.exp(0.3 * np.cos(torus.params[:, 0])), torus)
    with pytest.raises(IncompatibleRHSError):
        solve_potential(NormalizedDensity(f * 3.0, 0.0), 2)


def test_disconnected_rejected():
    geo = make_two_spheres(2)
    f = constant_field(geo)
    with pytest.raises(DisconnectedError):
        solve_potential(NormalizedDensity(f, 0.0), 2)


@settings(max_examples=10, deadline=None)
@given(st.floats(0.05, 20.0))
def test_scaling_the_input_does_not_change_the_potential(c):
    geo = make_sphere(2, 2, variant="chart")
    base = np.exp(0.4 * geo.points[:, 2] + 0.2 * geo.points[:, 0])
    _, a = _solve(geo, base)
    _, b = _solve(geo, c * base)
    assert np.abs(a.u.values - b.u.values).max() <= 1e-7 * (1 + np.abs(a.u.values).max())


def test_lemma_slack_constant_density(sphere_chart):
    nd, sol = _solve(sphere_chart, np.ones(sphere_chart.sample_count))
    lc = lemma_delta_u_check(sol, nd, 2)
    assert lc.omega_fraction == 1.0
    assert lc.min_slack == pytest.approx(0.0, abs=1e-12)
    assert lc.passed


@pytest.mark.parametrize("name", ["sphere_chart_l4", "torus"])
def test_lemma_holds_for_smooth_density(name, request):
    geo = request.getfixturevalue(name)
    nd, sol = _solve(geo, np.exp(0.3 * geo.points[:, 0] + 0.2 * geo.points[:, 1] * geo.points[:, 2]))
    lc = lemma_delta_u_check(sol, nd, geo.n)
    assert lc.chain_tighter
    assert lc.min_slack >= -lc.eps_h
    assert lc.min_intermediate_slack >= -lc.eps_h
    assert lc.min_intermediate_slack <= lc.min_slack + 1e-12
