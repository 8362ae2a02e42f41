import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lsilab.errors import ConfigError, ExpressionError, NonPositiveDensityError
from lsilab.geometry import make_sphere
from lsilab.scenario import (
    DensityExpression,
    Scenario,
    TransportSpec,
    build_geometry,
    evaluate_density,
    parse_scenario,
    random_smooth_density,
)

BASE = """
[scenario]
name = demo

[geometry]
kind = clifford
n = 2
refinement = 1

[density]
expression = exp(0.3*cos(theta))

[transport]
r_ladder = 0.5, 2, 8
samples = 20
"""


def test_parse_roundtrip():
    scn = parse_scenario(BASE)
    assert scn.name == "demo"
    assert scn.geometry.kind == "clifford" and scn.geometry.refinement == 1
    assert scn.transport.r_ladder == (0.5, 2.0, 8.0)
    assert scn.transport.samples == 20
    assert scn.inequality == "main" and scn.lemma


@pytest.mark.parametrize(
    "old,new",
    [
        ("n = 2", "n = 2\nbogus = 1"),
        ("[density]", "[weird]\na = 1\n[density]"),
        ("[density]", "[tolerances]\nnope = 1\n[density]"),
        ("samples = 20", "samples = many"),
        ("[density]", "[lemma]\nenabled = maybe\n[density]"),
        ("[scenario]", "no section header\n[scenario]"),
    ],
)
def test_unknown_or_bad_keys(old, new):
    with pytest.raises(ConfigError):
        parse_scenario(BASE.replace(old, new, 1))


def test_tolerance_override():
    scn = parse_scenario(BASE + "\n[tolerances]\nmean_curvature = 0.05\n")
    assert scn.tolerance_overrides() == {"mean_curvature": 0.05}


def test_scenario_invariants():
    with pytest.raises(ConfigError):
        Scenario(theta=0.0)
    with pytest.raises(ConfigError):
        Scenario(inequality="other")
    with pytest.raises(ConfigError):
        Scenario(transport=TransportSpec(r_ladder=(2.0, 1.0)))
    with pytest.raises(ConfigError):
        Scenario(transport=TransportSpec(sigma=1.0))
    with pytest.raises(ExpressionError):
        Scenario(density="__import__('os')")


def test_config_hash_tracks_content():
    a = parse_scenario(BASE)
    assert a.config_hash() == parse_scenario(BASE).config_hash()
    assert a.config_hash() != a.with_seed(3).config_hash()
    assert a.config_hash() != a.with_refinement(2).config_hash()
    # key order in the file does not matter
    swapped = BASE.replace("kind = clifford\nn = 2", "n = 2\nkind = clifford")
    assert parse_scenario(swapped).config_hash() == a.config_hash()


@pytest.mark.parametrize(
    "text",
    ["x1 ** 2", "open('f')", "x1.real", "[x1]", "x1 if x1 else 1", "y1", "lambda: 1", "tan(x1)", "'a'", "x1 < 2", "exp(x1, x2)"],
)
def test_expression_whitelist(text):
    with pytest.raises(ExpressionError):
        DensityExpression(text)


def test_expression_values(sphere_chart):
    X = sphere_chart.points
    got = evaluate_density("exp(0.5*x1) + 2/(3 - x2) - -x3*cos(theta)*sin(phi)", sphere_chart)
    th, ph = sphere_chart.params.T
    want = np.exp(0.5 * X[:, 0]) + 2 / (3 - X[:, 1]) + X[:, 2] * np.cos(th) * np.sin(ph)
    assert np.abs(got - want).max() <= 1e-14
    assert np.all(evaluate_density("constant", sphere_chart) == 1.0)


def test_density_must_be_positive(sphere_chart):
    with pytest.raises(NonPositiveDensityError):
        evaluate_density("x1", sphere_chart)
    with pytest.raises(NonPositiveDensityError):
        evaluate_density("log(x1)", sphere_chart)
    with pytest.raises(ExpressionError):
        evaluate_density("x7", sphere_chart)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_random_densities_are_valid(seed):
    geo = make_sphere(2, 1, variant="chart")
    text = random_smooth_density(geo, seed)
    vals = evaluate_density(text, geo)
    assert np.all(np.abs(np.log(vals)) <= 0.6 + 1e-9)
    assert text == random_smooth_density(geo, seed)


def test_build_geometry_kinds():
    scn = parse_scenario(BASE)
    geo = build_geometry(scn.geometry)
    assert geo.grid_shape == (16, 16) and geo.m == 2
    padded = build_geometry(parse_scenario(BASE.replace("n = 2", "n = 2\nm = 4")).geometry)
    assert padded.m == 4 and padded.ambient_dim == 6
    with pytest.raises(ConfigError):
        build_geometry(parse_scenario(BASE.replace("n = 2", "n = 2\nm = 1")).geometry)
    with pytest.raises(ConfigError):
        build_geometry(parse_scenario(BASE.replace("clifford", "klein")).geometry)
