"""Sharp constants, deficit evaluation, baselines and equality-case diagnostics."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import (
    DisconnectedError,
    GeometryError,
    HypothesisError,
    MeanCurvatureError,
    NotOnUnitSphereError,
)
from .geometry import CurvatureData, check_unit_mean_curvature, compute_curvature
from .operators import ScalarField, epsilon_h, integrate
from .potential import fisher_information

DEFAULT_TOLERANCES = {
    "mean_curvature": 1e-2,
    "f_constant": 1e-6,
    "umbilical_factor": 5.0,
    "area_relative": 1e-2,
    "unit_sphere": 1e-6,
}


def sphere_volume(k: int) -> float:
    """Area of the unit k-sphere in R^{k+1}."""
    if k < 0:
        raise ValueError("sphere dimension must be >= 0")
    return 2.0 * math.pi ** ((k + 1) / 2) / math.gamma((k + 1) / 2)


def ball_volume(k: int) -> float:
    """Volume of the unit k-ball."""
    if k < 0:
        raise ValueError("ball dimension must be >= 0")
    return math.pi ** (k / 2) / math.gamma(k / 2 + 1)


@dataclass(frozen=True)
class SharpConstants:
    n: int
    m: int
    theta: float
    additive_constant: float
    sharp_area: float

    def to_dict(self) -> dict:
        return asdict(self)


def log_sobolev_constant(n: int, m: int, theta: float = 1.0) -> SharpConstants:
    if n < 1 or m < 1:
        raise ValueError("n and m must be positive")
    if not (0.0 < theta <= 1.0):
        raise ValueError(f"theta must lie in (0, 1], got {theta}")
    if m <= 2:
        area = sphere_volume(n)
    else:
        area = (n + 1) * sphere_volume(n + m - 1) / sphere_volume(m - 2)
    return SharpConstants(n, m, float(theta), math.log(area) + math.log(theta), theta * area)


def pham_constant(n: int, m_sphere: int) -> float:
    """Additive constant for minimal submanifolds of the unit sphere S^{n+m}."""
    if m_sphere <= 2:
        return math.log(sphere_volume(n))
    return math.log((n + 1) * sphere_volume(n + m_sphere) / sphere_volume(m_sphere - 1))


@dataclass
class InequalityReport:
    scenario: str
    n: int
    m: int
    theta: float
    lhs: float
    rhs: float
    deficit: float
    constants: dict
    equality_flags: dict
    mesh: dict
    tolerances: dict
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def _lhs_rhs(f: ScalarField, n: int, additive: float, coeff: float):
    mass = integrate(f)
    v = f.values
    lhs = integrate(f.with_values(v * (np.log(v) + additive))) - mass * math.log(mass)
    rhs = coeff * fisher_information(f)
    return lhs, rhs


def _spread(f: ScalarField) -> float:
    v = f.values
    return float((v.max() - v.min()) / v.mean())


def _mesh_meta(geometry) -> dict:
    return {"samples": int(geometry.sample_count), "refinement": geometry.refinement}


def check_hypotheses(f: ScalarField, geometry, curvature: CurvatureData, h_tol: float) -> float:
    """Raise on a violated precondition; return the max |H| deviation."""
    ok, dev = check_unit_mean_curvature(curvature, h_tol)
    if not ok:
        raise MeanCurvatureError(f"|H| deviates from 1 by {dev:.3e} (tolerance {h_tol:.1e})")
    f.require_positive()
    if not geometry.is_connected():
        raise DisconnectedError("submanifold is not connected")
    return dev


def evaluate_log_sobolev(
    f: ScalarField,
    geometry,
    curvature: CurvatureData | None,
    constants: SharpConstants,
    scenario: str = "",
    tolerances: dict | None = None,
) -> InequalityReport:
    tol = {**DEFAULT_TOLERANCES, **(tolerances or {})}
    curvature = curvature or compute_curvature(geometry)
    if constants.n != geometry.n or constants.m != geometry.m:
        raise GeometryError(
            f"constants are for (n={constants.n}, m={constants.m}) but the geometry has "
            f"(n={geometry.n}, m={geometry.m})"
        )
    h_dev = check_hypotheses(f, geometry, curvature, tol["mean_curvature"])
    n = geometry.n
    lhs, rhs = _lhs_rhs(f, n, constants.additive_constant, (n + 1) / (2 * n * n))
    eps = epsilon_h(geometry)
    area = geometry.total_volume()
    umb = float(curvature.umbilicity_defect.max())
    flags = {
        "f_constant_within_tol": _spread(f) <= tol["f_constant"],
        "umbilical_within_tol": umb <= tol["umbilical_factor"] * eps,
        "area_matches_sharp_value": abs(area / constants.sharp_area - 1.0) <= tol["area_relative"],
    }
    return InequalityReport(
        scenario=scenario,
        n=n,
        m=constants.m,
        theta=constants.theta,
        lhs=lhs,
        rhs=rhs,
        deficit=rhs - lhs,
        constants=constants.to_dict(),
        equality_flags=flags,
        mesh=_mesh_meta(geometry),
        tolerances={**tol, "eps_h": eps},
        diagnostics={
            "inequality": "main",
            "max_umbilicity_defect": umb,
            "area": area,
            "max_mean_curvature_deviation": h_dev,
            "density_spread": _spread(f),
        },
    )


def evaluate_baselines(
    f: ScalarField,
    geometry,
    which: str,
    scenario: str = "",
    tolerances: dict | None = None,
) -> InequalityReport:
    """Minimal-submanifold-of-the-sphere baselines (``pham_m12``, ``pham_m3plus``) and ``beckner``."""
    tol = {**DEFAULT_TOLERANCES, **(tolerances or {})}
    f.require_positive()
    radius_dev = float(np.abs(np.linalg.norm(geometry.points, axis=1) - 1.0).max())
    if radius_dev > tol["unit_sphere"]:
        raise NotOnUnitSphereError(f"samples deviate from the unit sphere by {radius_dev:.3e}")
    if not geometry.is_connected():
        raise DisconnectedError("submanifold is not connected")
    n = geometry.n
    m_sphere = geometry.ambient_dim - 1 - n
    eps = epsilon_h(geometry)
    flags = {"f_constant_within_tol": _spread(f) <= tol["f_constant"]}
    if which == "beckner":
        if m_sphere != 0:
            raise HypothesisError("the sphere baseline needs the geometry to be S^n itself")
        additive, coeff = math.log(sphere_volume(n)), 1.0 / (2 * n)
    elif which in ("pham_m12", "pham_m3plus"):
        if m_sphere < 1:
            raise HypothesisError("the minimal-submanifold baseline needs codimension >= 1 in the sphere")
        if (which == "pham_m12") != (m_sphere <= 2):
            raise HypothesisError(f"{which} does not apply to sphere codimension {m_sphere}")
        curv = compute_curvature(geometry)
        # minimal in the sphere <=> H = -x
        min_dev = float(np.abs(curv.mean_curvature + geometry.points).max())
        if min_dev > tol["mean_curvature"]:
            raise HypothesisError(f"not minimal in the unit sphere: |H + x| up to {min_dev:.3e}")
        additive, coeff = pham_constant(n, m_sphere), (n + 1) / (2 * n * n)
        # totally geodesic in the sphere <=> sff = g (x) H
        flags["totally_geodesic_within_tol"] = float(curv.umbilicity_defect.max()) <= tol["umbilical_factor"] * eps
    else:
        raise ValueError(f"unknown baseline {which!r}")
    lhs, rhs = _lhs_rhs(f, n, additive, coeff)
    return InequalityReport(
        scenario=scenario,
        n=n,
        m=m_sphere,
        theta=1.0,
        lhs=lhs,
        rhs=rhs,
        deficit=rhs - lhs,
        constants={"n": n, "m": m_sphere, "theta": 1.0, "additive_constant": additive, "rhs_coefficient": coeff},
        equality_flags=flags,
        mesh=_mesh_meta(geometry),
        tolerances={**tol, "eps_h": eps},
        diagnostics={"inequality": which, "area": geometry.total_volume()},
    )
