"""Scalar fields, quadrature, intrinsic gradients and the f-weighted Laplace-Beltrami operator.

The weighted operator is kept in weak (integrated) form: ``(K phi)_i`` is
approximately ``w_i * div(f grad phi)(x_i)`` where ``w`` are the lumped
quadrature weights.  ``K`` is symmetric with zero row sums on both backends.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import DegenerateGeometryError, GeometryError, NonPositiveDensityError
from .geometry import ChartGeometry, TriangleMeshGeometry, compute_curvature


@dataclass(frozen=True, eq=False)
class ScalarField:
    values: np.ndarray
    geometry: object

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).reshape(-1)
        if v.shape[0] != self.geometry.sample_count:
            raise GeometryError(
                f"field has {v.shape[0]} values but geometry has {self.geometry.sample_count} samples"
            )
        object.__setattr__(self, "values", v)

    @property
    def geometry_id(self) -> str:
        return self.geometry.geometry_id

    def with_values(self, values) -> "ScalarField":
        return ScalarField(values, self.geometry)

    def __mul__(self, c: float) -> "ScalarField":
        return ScalarField(self.values * c, self.geometry)

    __rmul__ = __mul__

    def require_positive(self) -> None:
        if not np.all(np.isfinite(self.values)) or np.any(self.values <= 0):
            raise NonPositiveDensityError("density must be strictly positive and finite at every sample")


def constant_field(geometry, value: float = 1.0) -> ScalarField:
    return ScalarField(np.full(geometry.sample_count, float(value)), geometry)


def integrate(field: ScalarField) -> float:
    return float(field.geometry.weights @ field.values)


# ---------------------------------------------------------------------------
# Gradients
# ---------------------------------------------------------------------------


def chart_partials(geo: ChartGeometry, values: np.ndarray) -> np.ndarray:
    """Second-order central differences in chart coordinates, shape (P, n)."""
    out = np.empty((geo.sample_count, geo.n))
    for a in range(geo.n):
        out[:, a] = (values[geo.neighbor(a, 1)] - values[geo.neighbor(a, -1)]) / (2.0 * geo.spacing[a])
    return out


def chart_second_partials(geo: ChartGeometry, values: np.ndarray) -> np.ndarray:
    """Central second differences in chart coordinates, shape (P, n, n)."""
    P, n = geo.sample_count, geo.n
    out = np.empty((P, n, n))
    for a in range(n):
        p, m = geo.neighbor(a, 1), geo.neighbor(a, -1)
        out[:, a, a] = (values[p] - 2.0 * values + values[m]) / geo.spacing[a] ** 2
    if n == 2:
        p0, m0 = geo.neighbor(0, 1), geo.neighbor(0, -1)
        p1, m1 = geo.neighbor(1, 1), geo.neighbor(1, -1)
        mixed = (values[p1[p0]] - values[m1[p0]] - values[p1[m0]] + values[m1[m0]]) / (
            4.0 * geo.spacing[0] * geo.spacing[1]
        )
        out[:, 0, 1] = out[:, 1, 0] = mixed
    return out


def _mesh_face_gradients(geo: TriangleMeshGeometry, values: np.ndarray) -> np.ndarray:
    V, F = geo.vertices, geo.faces
    e1 = V[F[:, 1]] - V[F[:, 0]]
    e2 = V[F[:, 2]] - V[F[:, 0]]
    G = np.stack(
        [
            np.stack([np.einsum("ij,ij->i", e1, e1), np.einsum("ij,ij->i", e1, e2)], 1),
            np.stack([np.einsum("ij,ij->i", e1, e2), np.einsum("ij,ij->i", e2, e2)], 1),
        ],
        1,
    )
    df = np.stack([values[F[:, 1]] - values[F[:, 0]], values[F[:, 2]] - values[F[:, 0]]], 1)
    c = np.linalg.solve(G, df[..., None])[..., 0]
    return c[:, :1] * e1 + c[:, 1:] * e2


def gradient(field: ScalarField) -> np.ndarray:
    """Intrinsic gradient as ambient tangent vectors, shape (P, n+m)."""
    geo = field.geometry
    if isinstance(geo, ChartGeometry):
        d = chart_partials(geo, field.values)
        up = np.einsum("pab,pb->pa", geo.metric_inv, d)
        return np.einsum("pa,pai->pi", up, geo.first)
    if isinstance(geo, TriangleMeshGeometry):
        gf = _mesh_face_gradients(geo, field.values) * geo.face_areas[:, None]
        acc = np.zeros((geo.sample_count, geo.ambient_dim))
        wsum = np.zeros(geo.sample_count)
        for c in range(3):
            np.add.at(acc, geo.faces[:, c], gf)
            np.add.at(wsum, geo.faces[:, c], geo.face_areas)
        acc /= wsum[:, None]
        T = geo.tangent_frames
        return np.einsum("pai,pa->pi", T, np.einsum("pai,pi->pa", T, acc))
    raise GeometryError(f"unsupported geometry type {type(geo).__name__}")


def gradient_norm_sq(field: ScalarField) -> np.ndarray:
    g = gradient(field)
    return np.einsum("pi,pi->p", g, g)


# ---------------------------------------------------------------------------
# Weighted Laplacian
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class WeightedLaplacian:
    matrix: sp.csr_matrix
    mass: np.ndarray
    min_edge_weight: float
    diag_range: tuple

    def apply(self, values) -> np.ndarray:
        """Strong-form values ``div(f grad phi)`` at the samples."""
        return (self.matrix @ np.asarray(values, float)) / self.mass

    def quadratic_form(self, values) -> float:
        v = np.asarray(values, float)
        return float(v @ (self.matrix @ v))


def _chart_edges(geo: ChartGeometry):
    I, J, W = [], [], []
    idx = np.arange(geo.sample_count)
    for a in range(geo.n):
        c = geo.face_coefficients(a)
        I.append(idx)
        J.append(geo.neighbor(a, 1))
        W.append(c)
    return np.concatenate(I), np.concatenate(J), np.concatenate(W)


def _edges(geo):
    if isinstance(geo, ChartGeometry):
        return _chart_edges(geo)
    if isinstance(geo, TriangleMeshGeometry):
        edges, w = geo.cotan_edges()
        return edges[:, 0], edges[:, 1], w
    raise GeometryError(f"unsupported geometry type {type(geo).__name__}")


def _assemble(geo, I, J, W) -> sp.csr_matrix:
    P = geo.sample_count
    keep = W != 0.0
    I, J, W = I[keep], J[keep], W[keep]
    off = sp.coo_matrix((np.r_[W, W], (np.r_[I, J], np.r_[J, I])), shape=(P, P)).tocsr()
    diag = np.asarray(off.sum(axis=1)).ravel()
    return (off - sp.diags(diag)).tocsr()


def build_weighted_laplacian(f: ScalarField) -> WeightedLaplacian:
    """Weak-form ``phi -> div(f grad phi)`` with arithmetic-mean edge densities."""
    f.require_positive()
    geo = f.geometry
    I, J, W = _edges(geo)
    fv = f.values
    We = W * 0.5 * (fv[I] + fv[J])
    K = _assemble(geo, I, J, We)
    d = K.diagonal()
    return WeightedLaplacian(
        matrix=K,
        mass=np.asarray(geo.weights, float),
        min_edge_weight=float(W.min()) if len(W) else 0.0,
        diag_range=(float(d.min()), float(d.max())),
    )


def laplacian_matrix(geo) -> sp.csr_matrix:
    """Unweighted weak Laplacian (f = 1)."""
    if "lap" not in geo._cache:
        I, J, W = _edges(geo)
        geo._cache["lap"] = _assemble(geo, I, J, W)
    return geo._cache["lap"]


def laplacian(field: ScalarField) -> np.ndarray:
    """Strong-form Laplace-Beltrami of a field at the samples."""
    geo = field.geometry
    return (laplacian_matrix(geo) @ field.values) / geo.weights


# ---------------------------------------------------------------------------
# Hessian (charts only)
# ---------------------------------------------------------------------------


def chart_hessian(field: ScalarField) -> np.ndarray:
    """Covariant Hessian in chart coordinates, ``d_a d_b u - Gamma^c_ab d_c u``, shape (P, n, n)."""
    geo = field.geometry
    if not isinstance(geo, ChartGeometry):
        from .errors import HessianUnavailableError

        raise HessianUnavailableError("the intrinsic Hessian is only available on chart geometries")
    curv = compute_curvature(geo)
    d1 = chart_partials(geo, field.values)
    d2 = chart_second_partials(geo, field.values)
    return d2 - np.einsum("pcab,pc->pab", curv.christoffel, d1)


def to_orthonormal(geo: ChartGeometry, tensor: np.ndarray) -> np.ndarray:
    """Express a chart-coordinate bilinear form in the orthonormal tangent frame."""
    T = compute_curvature(geo).tangent_coeffs
    return np.einsum("pia,pab,pjb->pij", T, tensor, T)


# ---------------------------------------------------------------------------
# Consistency tolerance
# ---------------------------------------------------------------------------


def consistency_errors(geo) -> dict:
    """Max pointwise defects of ``Lap x = n H`` and ``sum_k |grad x_k|^2 = n`` on coordinate functions."""
    curv = compute_curvature(geo)
    H_ref = curv.mean_curvature if curv.mean_curvature_alt is None else curv.mean_curvature_alt
    X = geo.points
    lap_x = (laplacian_matrix(geo) @ X) / geo.weights[:, None]
    lap_err = float(np.abs(lap_x - geo.n * H_ref).max())
    gsum = np.zeros(geo.sample_count)
    for k in range(geo.ambient_dim):
        gsum += gradient_norm_sq(ScalarField(X[:, k], geo))
    grad_err = float(np.abs(gsum - geo.n).max())
    return {"laplacian_of_position": lap_err, "gradient_of_position": grad_err}


def epsilon_h(geo) -> float:
    """Per-geometry tolerance: 10 x the worst coordinate-function consistency error."""
    if "eps_h" not in geo._cache:
        errs = consistency_errors(geo)
        eps = 10.0 * max(errs.values())
        if not np.isfinite(eps):
            raise DegenerateGeometryError("non-finite operator consistency error")
        geo._cache["eps_h"] = eps
    return geo._cache["eps_h"]
