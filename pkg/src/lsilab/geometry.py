"""Embedded closed submanifolds of Euclidean space and their extrinsic curvature.

Two carriers are supported:

* :class:`ChartGeometry` -- a single orthogonal chart sampled on a regular
  grid (periodic axes, optionally a pole-reflected colatitude axis), with the
  immersion and its first and second derivatives available anywhere.
* :class:`TriangleMeshGeometry` -- a closed triangle mesh with lumped
  (mixed Voronoi) vertex areas.

Curvature convention: ``sff(X, Y) = (D_X Y)^normal`` and ``H = tr(sff) / n``,
so a minimal submanifold of the unit sphere has ``H = -x``.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .errors import (
    DegenerateGeometryError,
    GeometryError,
    UnsupportedDimensionError,
)
from .interpolation import TrigInterpolant

# ---------------------------------------------------------------------------
# Immersions
# ---------------------------------------------------------------------------


class Immersion:
    """Maps chart parameters (B, n) to positions and their derivatives."""

    n: int
    ambient_dim: int

    def __call__(self, xi):
        raise NotImplementedError


class CircleImmersion(Immersion):
    n, ambient_dim = 1, 2

    def __init__(self, radius: float = 1.0):
        self.radius = float(radius)

    def __call__(self, xi):
        xi = np.atleast_2d(xi)
        a = xi[:, 0]
        c, s = np.cos(a), np.sin(a)
        R = self.radius
        X = R * np.stack([c, s], axis=1)
        dX = R * np.stack([-s, c], axis=1)[:, None, :]
        ddX = -X[:, None, None, :]
        return X, dX, ddX


class SphereChartImmersion(Immersion):
    """Colatitude/longitude parametrisation of the round 2-sphere."""

    n, ambient_dim = 2, 3

    def __init__(self, radius: float = 1.0):
        self.radius = float(radius)

    def __call__(self, xi):
        xi = np.atleast_2d(xi)
        th, ph = xi[:, 0], xi[:, 1]
        st, ct, sph, cph = np.sin(th), np.cos(th), np.sin(ph), np.cos(ph)
        R = self.radius
        X = R * np.stack([st * cph, st * sph, ct], axis=1)
        X_t = R * np.stack([ct * cph, ct * sph, -st], axis=1)
        X_p = R * np.stack([-st * sph, st * cph, np.zeros_like(st)], axis=1)
        X_tt = -X
        X_tp = R * np.stack([-ct * sph, ct * cph, np.zeros_like(st)], axis=1)
        X_pp = R * np.stack([-st * cph, -st * sph, np.zeros_like(st)], axis=1)
        dX = np.stack([X_t, X_p], axis=1)
        ddX = np.stack([np.stack([X_tt, X_tp], 1), np.stack([X_tp, X_pp], 1)], 1)
        return X, dX, ddX


class CliffordImmersion(Immersion):
    """(a, b) -> (cos a, sin a, cos b, sin b) * radius / sqrt(2) in R^4."""

    n, ambient_dim = 2, 4

    def __init__(self, radius: float = 1.0):
        self.radius = float(radius)

    def __call__(self, xi):
        xi = np.atleast_2d(xi)
        a, b = xi[:, 0], xi[:, 1]
        k = self.radius / np.sqrt(2.0)
        ca, sa, cb, sb = np.cos(a), np.sin(a), np.cos(b), np.sin(b)
        z = np.zeros_like(a)
        X = k * np.stack([ca, sa, cb, sb], axis=1)
        X_a = k * np.stack([-sa, ca, z, z], axis=1)
        X_b = k * np.stack([z, z, -sb, cb], axis=1)
        X_aa = k * np.stack([-ca, -sa, z, z], axis=1)
        X_bb = k * np.stack([z, z, -cb, -sb], axis=1)
        zero = np.zeros_like(X)
        dX = np.stack([X_a, X_b], axis=1)
        ddX = np.stack([np.stack([X_aa, zero], 1), np.stack([zero, X_bb], 1)], 1)
        return X, dX, ddX


class AffineImmersion(Immersion):
    """``x -> matrix @ base(xi) + offset``; covers rotation, scaling and zero padding."""

    def __init__(self, base: Immersion, matrix, offset=None):
        self.base = base
        self.matrix = np.asarray(matrix, dtype=float)
        self.n = base.n
        self.ambient_dim = self.matrix.shape[0]
        self.offset = np.zeros(self.ambient_dim) if offset is None else np.asarray(offset, float)

    def __call__(self, xi):
        X, dX, ddX = self.base(xi)
        M = self.matrix
        return X @ M.T + self.offset, dX @ M.T, ddX @ M.T


class TrigImmersion(Immersion):
    """Immersion reconstructed from node positions by trigonometric interpolation."""

    def __init__(self, positions, spacing, origin, polar=False):
        positions = np.asarray(positions, dtype=float)
        grid_shape = positions.shape[:-1]
        self.n = len(grid_shape)
        self.ambient_dim = positions.shape[-1]
        self._interps = [
            TrigInterpolant(positions[..., k], spacing, origin, polar=polar)
            for k in range(self.ambient_dim)
        ]

    def __call__(self, xi):
        xi = np.atleast_2d(xi)
        parts = [it.evaluate(xi, order=2) for it in self._interps]
        X = np.stack([p[0] for p in parts], axis=-1)
        dX = np.stack([p[1] for p in parts], axis=-1)
        ddX = np.stack([p[2] for p in parts], axis=-1)
        return X, dX, ddX


# ---------------------------------------------------------------------------
# Carriers
# ---------------------------------------------------------------------------


def _metric(dX):
    g = np.einsum("pai,pbi->pab", dX, dX)
    det = np.linalg.det(g)
    return g, det


@dataclass(eq=False)
class ChartGeometry:
    kind: str
    immersion: Immersion
    grid_shape: tuple
    spacing: np.ndarray
    origin: np.ndarray
    periodic: tuple
    polar: tuple
    refinement: int | None = None
    positions: np.ndarray = field(init=False, repr=False)
    first: np.ndarray = field(init=False, repr=False)
    second: np.ndarray = field(init=False, repr=False)
    metric: np.ndarray = field(init=False, repr=False)
    metric_inv: np.ndarray = field(init=False, repr=False)
    sqrt_det: np.ndarray = field(init=False, repr=False)
    weights: np.ndarray = field(init=False, repr=False)
    _cache: dict = field(init=False, repr=False, default_factory=dict)

    backend = "chart"

    def __post_init__(self):
        self.grid_shape = tuple(int(s) for s in self.grid_shape)
        self.spacing = np.asarray(self.spacing, dtype=float)
        self.origin = np.asarray(self.origin, dtype=float)
        self.periodic = tuple(bool(p) for p in self.periodic)
        self.polar = tuple(bool(p) for p in self.polar)
        if self.immersion.n != len(self.grid_shape):
            raise GeometryError("immersion dimension does not match grid")
        if any(self.polar[1:]):
            raise GeometryError("only axis 0 may be polar")
        if self.polar[0] and (self.n != 2 or not self.periodic[1] or self.grid_shape[1] % 2):
            raise GeometryError("a polar axis needs an even periodic companion axis")
        X, dX, ddX = self.immersion(self.params)
        g, det = _metric(dX)
        if np.any(det <= 0) or not np.all(np.isfinite(det)):
            raise DegenerateGeometryError("induced metric is degenerate at some node")
        self.positions, self.first, self.second = X, dX, ddX
        self.metric, self.metric_inv = g, np.linalg.inv(g)
        self.sqrt_det = np.sqrt(det)
        self.weights = self.sqrt_det * float(np.prod(self.spacing))

    # -- basic properties -------------------------------------------------
    @property
    def n(self) -> int:
        return self.immersion.n

    @property
    def ambient_dim(self) -> int:
        return self.immersion.ambient_dim

    @property
    def m(self) -> int:
        return self.ambient_dim - self.n

    @property
    def sample_count(self) -> int:
        return int(np.prod(self.grid_shape))

    @property
    def points(self) -> np.ndarray:
        return self.positions

    @property
    def geometry_id(self) -> str:
        if "id" not in self._cache:
            h = hashlib.sha1(np.ascontiguousarray(self.positions).tobytes()).hexdigest()[:12]
            self._cache["id"] = f"{self.kind}-{h}"
        return self._cache["id"]

    @property
    def params(self) -> np.ndarray:
        if "params" not in self._cache:
            axes = [self.origin[a] + np.arange(N) * self.spacing[a] for a, N in enumerate(self.grid_shape)]
            mesh = np.meshgrid(*axes, indexing="ij")
            self._cache["params"] = np.stack([m.reshape(-1) for m in mesh], axis=1)
        return self._cache["params"]

    def is_connected(self) -> bool:
        return True

    def total_volume(self) -> float:
        return float(self.weights.sum())

    # -- grid topology ----------------------------------------------------
    def neighbor(self, axis: int, step: int) -> np.ndarray:
        """Flat index of the node one step along ``axis`` (periodic wrap or pole reflection)."""
        key = ("nb", axis, step)
        if key in self._cache:
            return self._cache[key]
        idx = np.arange(self.sample_count).reshape(self.grid_shape)
        N = self.grid_shape[axis]
        if self.periodic[axis]:
            out = np.roll(idx, -step, axis=axis)
        elif self.polar[axis]:
            rows = np.arange(N) + step
            M = self.grid_shape[1]
            out = np.empty_like(idx)
            for i, rr in enumerate(rows):
                if 0 <= rr < N:
                    out[i] = idx[rr]
                else:
                    mirror = 0 if rr < 0 else N - 1
                    out[i] = np.roll(idx[mirror], -(M // 2))
        else:
            raise GeometryError("open chart axes are not supported")
        out = out.reshape(-1)
        self._cache[key] = out
        return out

    def crosses_pole(self, axis: int, step: int) -> np.ndarray:
        """Mask of nodes whose ``step`` neighbour along ``axis`` lies across a pole."""
        mask = np.zeros(self.grid_shape, dtype=bool)
        if self.polar[axis]:
            if step > 0:
                mask[-step:] = True
            else:
                mask[: -step] = True
        return mask.reshape(-1)

    def face_coefficients(self, axis: int) -> np.ndarray:
        """``(sqrt(det g) g^{aa})`` at the half-step faces times the cell aspect factor.

        Entry i belongs to the face between node i and ``neighbor(axis, +1)[i]``;
        faces lying on a pole carry zero flux.
        """
        key = ("face", axis)
        if key in self._cache:
            return self._cache[key]
        mid = self.params.copy()
        mid[:, axis] += 0.5 * self.spacing[axis]
        _, dX, _ = self.immersion(mid)
        g, det = _metric(dX)
        if self.n == 2:
            off = np.abs(g[:, 0, 1]).max()
            if off > 1e-10 * np.abs(g).max() or np.abs(self.metric[:, 0, 1]).max() > 1e-10 * np.abs(g).max():
                raise GeometryError("finite-volume assembly needs an orthogonal chart")
        with np.errstate(divide="ignore", invalid="ignore"):
            coeff = np.sqrt(np.clip(det, 0.0, None)) / g[:, axis, axis]
        coeff = np.where(np.isfinite(coeff), coeff, 0.0)
        aspect = float(np.prod(self.spacing)) / self.spacing[axis] ** 2
        coeff = coeff * aspect
        coeff[self.crosses_pole(axis, +1)] = 0.0
        self._cache[key] = coeff
        return coeff

    def transformed(self, matrix, offset=None, kind: str | None = None) -> "ChartGeometry":
        return ChartGeometry(
            kind=kind or self.kind,
            immersion=AffineImmersion(self.immersion, matrix, offset),
            grid_shape=self.grid_shape,
            spacing=self.spacing,
            origin=self.origin,
            periodic=self.periodic,
            polar=self.polar,
            refinement=self.refinement,
        )


@dataclass(eq=False)
class TriangleMeshGeometry:
    kind: str
    vertices: np.ndarray
    faces: np.ndarray
    refinement: int | None = None
    face_areas: np.ndarray = field(init=False, repr=False)
    vertex_areas: np.ndarray = field(init=False, repr=False)
    tangent_frames: np.ndarray = field(init=False, repr=False)
    _cache: dict = field(init=False, repr=False, default_factory=dict)

    backend = "mesh"
    n = 2

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=float)
        self.faces = np.asarray(self.faces, dtype=np.int64)
        V, F = self.vertices, self.faces
        e1 = V[F[:, 1]] - V[F[:, 0]]
        e2 = V[F[:, 2]] - V[F[:, 0]]
        G = np.stack(
            [np.einsum("ij,ij->i", e1, e1), np.einsum("ij,ij->i", e1, e2), np.einsum("ij,ij->i", e2, e2)],
            axis=1,
        )
        area2 = G[:, 0] * G[:, 2] - G[:, 1] ** 2
        if np.any(area2 <= 1e-30):
            raise DegenerateGeometryError("mesh has degenerate faces")
        self.face_areas = 0.5 * np.sqrt(area2)
        self._check_closed()
        self.vertex_areas = self._mixed_areas()
        self.tangent_frames = self._tangent_frames()

    @property
    def ambient_dim(self) -> int:
        return self.vertices.shape[1]

    @property
    def m(self) -> int:
        return self.ambient_dim - 2

    @property
    def sample_count(self) -> int:
        return self.vertices.shape[0]

    @property
    def points(self) -> np.ndarray:
        return self.vertices

    @property
    def weights(self) -> np.ndarray:
        return self.vertex_areas

    @property
    def geometry_id(self) -> str:
        if "id" not in self._cache:
            h = hashlib.sha1(np.ascontiguousarray(self.vertices).tobytes()).hexdigest()[:12]
            self._cache["id"] = f"{self.kind}-{h}"
        return self._cache["id"]

    def total_volume(self) -> float:
        return float(self.face_areas.sum())

    def _check_closed(self):
        F = self.faces
        e = np.sort(np.concatenate([F[:, [0, 1]], F[:, [1, 2]], F[:, [2, 0]]]), axis=1)
        _, counts = np.unique(e, axis=0, return_counts=True)
        if np.any(counts != 2):
            raise GeometryError("mesh is not closed: some edge is not shared by exactly two faces")

    def _corner_cotangents(self):
        """cot of the interior angle at each corner, shape (F, 3)."""
        V, F = self.vertices, self.faces
        cots = np.empty(F.shape)
        for c in range(3):
            i, j, k = F[:, c], F[:, (c + 1) % 3], F[:, (c + 2) % 3]
            u, v = V[j] - V[i], V[k] - V[i]
            dot = np.einsum("ij,ij->i", u, v)
            cots[:, c] = dot / (2.0 * self.face_areas)
        return cots

    def _mixed_areas(self):
        """Mixed Voronoi vertex areas; they partition each face, so they sum to the mesh area."""
        V, F = self.vertices, self.faces
        cots = self._corner_cotangents()
        areas = np.zeros(len(V))
        obtuse = cots < 0
        any_obtuse = obtuse.any(axis=1)
        for c in range(3):
            i, j, k = F[:, c], F[:, (c + 1) % 3], F[:, (c + 2) % 3]
            lij = np.einsum("ij,ij->i", V[j] - V[i], V[j] - V[i])
            lik = np.einsum("ij,ij->i", V[k] - V[i], V[k] - V[i])
            vor = (lij * cots[:, (c + 2) % 3] + lik * cots[:, (c + 1) % 3]) / 8.0
            contrib = np.where(
                any_obtuse,
                np.where(obtuse[:, c], self.face_areas / 2.0, self.face_areas / 4.0),
                vor,
            )
            np.add.at(areas, i, contrib)
        return areas

    def cotan_edges(self):
        """Edge list (E, 2) and symmetric cotangent weights ``(cot a + cot b) / 2``."""
        if "cotan" not in self._cache:
            F = self.faces
            cots = self._corner_cotangents()
            I = np.concatenate([F[:, 1], F[:, 2], F[:, 0]])
            J = np.concatenate([F[:, 2], F[:, 0], F[:, 1]])
            W = 0.5 * np.concatenate([cots[:, 0], cots[:, 1], cots[:, 2]])
            lo, hi = np.minimum(I, J), np.maximum(I, J)
            edges, inv = np.unique(np.stack([lo, hi], 1), axis=0, return_inverse=True)
            w = np.zeros(len(edges))
            np.add.at(w, inv.reshape(-1), W)
            self._cache["cotan"] = (edges, w)
        return self._cache["cotan"]

    def adjacency(self) -> sp.csr_matrix:
        if "adj" not in self._cache:
            edges, _ = self.cotan_edges()
            n = self.sample_count
            A = sp.coo_matrix(
                (np.ones(2 * len(edges)), (np.r_[edges[:, 0], edges[:, 1]], np.r_[edges[:, 1], edges[:, 0]])),
                shape=(n, n),
            ).tocsr()
            self._cache["adj"] = A
        return self._cache["adj"]

    def component_count(self) -> int:
        return int(connected_components(self.adjacency(), directed=False)[0])

    def is_connected(self) -> bool:
        return self.component_count() == 1

    def _tangent_frames(self):
        """Per-vertex tangent plane from the area-weighted sum of incident face-plane projectors."""
        V, F = self.vertices, self.faces
        N = self.ambient_dim
        e1 = V[F[:, 1]] - V[F[:, 0]]
        e2 = V[F[:, 2]] - V[F[:, 0]]
        a = e1 / np.linalg.norm(e1, axis=1, keepdims=True)
        b = e2 - np.einsum("ij,ij->i", e2, a)[:, None] * a
        b /= np.linalg.norm(b, axis=1, keepdims=True)
        proj = (np.einsum("fi,fj->fij", a, a) + np.einsum("fi,fj->fij", b, b)) * self.face_areas[:, None, None]
        acc = np.zeros((len(V), N, N))
        for c in range(3):
            np.add.at(acc, F[:, c], proj)
        _, vecs = np.linalg.eigh(acc)
        return np.swapaxes(vecs[:, :, -2:][:, :, ::-1], 1, 2).copy()

    def transformed(self, matrix, offset=None, kind: str | None = None) -> "TriangleMeshGeometry":
        M = np.asarray(matrix, dtype=float)
        off = np.zeros(M.shape[0]) if offset is None else np.asarray(offset, float)
        return TriangleMeshGeometry(kind or self.kind, self.vertices @ M.T + off, self.faces, self.refinement)


Geometry = ChartGeometry | TriangleMeshGeometry


# ---------------------------------------------------------------------------
# Generators
# ---------------------------------------------------------------------------

_ICO_FACES = np.array(
    [
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ]
)


def _icosahedron():
    p = (1.0 + np.sqrt(5.0)) / 2.0
    V = np.array(
        [
            [-1, p, 0], [1, p, 0], [-1, -p, 0], [1, -p, 0],
            [0, -1, p], [0, 1, p], [0, -1, -p], [0, 1, -p],
            [p, 0, -1], [p, 0, 1], [-p, 0, -1], [-p, 0, 1],
        ],
        dtype=float,
    )
    return V / np.linalg.norm(V, axis=1, keepdims=True), _ICO_FACES.copy()


def _subdivide(V, F):
    E = np.concatenate([F[:, [0, 1]], F[:, [1, 2]], F[:, [2, 0]]])
    E = np.sort(E, axis=1)
    uniq, inv = np.unique(E, axis=0, return_inverse=True)
    inv = inv.reshape(-1)
    mid = V[uniq[:, 0]] + V[uniq[:, 1]]
    mid /= np.linalg.norm(mid, axis=1, keepdims=True)
    nF = len(F)
    ab, bc, ca = inv[:nF] + len(V), inv[nF : 2 * nF] + len(V), inv[2 * nF :] + len(V)
    a, b, c = F[:, 0], F[:, 1], F[:, 2]
    newF = np.concatenate(
        [np.stack([a, ab, ca], 1), np.stack([ab, b, bc], 1), np.stack([ca, bc, c], 1), np.stack([ab, bc, ca], 1)]
    )
    return np.vstack([V, mid]), newF


def make_icosphere(refinement: int, radius: float = 1.0) -> TriangleMeshGeometry:
    if refinement < 0:
        raise GeometryError("refinement must be >= 0")
    V, F = _icosahedron()
    for _ in range(refinement):
        V, F = _subdivide(V, F)
    return TriangleMeshGeometry("sphere-mesh", radius * V, F, refinement)


def make_circle(nodes: int, radius: float = 1.0, refinement: int | None = None) -> ChartGeometry:
    if nodes < 8:
        raise GeometryError("circle needs at least 8 nodes")
    return ChartGeometry(
        kind="circle",
        immersion=CircleImmersion(radius),
        grid_shape=(nodes,),
        spacing=[2 * np.pi / nodes],
        origin=[0.0],
        periodic=(True,),
        polar=(False,),
        refinement=refinement,
    )


def sphere_chart_shape(refinement: int) -> tuple[int, int]:
    n_lat = 8 * 2**refinement
    return n_lat, 2 * n_lat


def make_sphere_chart(refinement: int, radius: float = 1.0) -> ChartGeometry:
    """Cell-centred colatitude/longitude grid; nodes never sit on a pole."""
    n_lat, n_lon = sphere_chart_shape(refinement)
    h = np.pi / n_lat
    return ChartGeometry(
        kind="sphere-chart",
        immersion=SphereChartImmersion(radius),
        grid_shape=(n_lat, n_lon),
        spacing=[h, 2 * np.pi / n_lon],
        origin=[h / 2, 0.0],
        periodic=(False, True),
        polar=(True, False),
        refinement=refinement,
    )


def make_sphere(n: int, refinement: int, variant: str = "mesh", radius: float = 1.0):
    """Unit (or radius-scaled) sphere S^n in R^{n+1}.

    n = 1 is a uniform circle chart with 16 * 2**refinement nodes; n = 2 is an
    icosphere (``variant="mesh"``) or a colatitude/longitude chart
    (``variant="chart"``).
    """
    if refinement < 0:
        raise GeometryError("refinement must be >= 0")
    if n == 1:
        return make_circle(16 * 2**refinement, radius, refinement)
    if n == 2:
        if variant == "mesh":
            return make_icosphere(refinement, radius)
        if variant == "chart":
            return make_sphere_chart(refinement, radius)
        raise GeometryError(f"unknown sphere variant {variant!r}")
    raise UnsupportedDimensionError(f"sphere of dimension {n} is not supported (n must be 1 or 2)")


def make_clifford_torus(grid: int, radius: float = 1.0, refinement: int | None = None) -> ChartGeometry:
    if grid < 8:
        raise GeometryError("Clifford torus needs grid >= 8 per axis")
    h = 2 * np.pi / grid
    return ChartGeometry(
        kind="clifford",
        immersion=CliffordImmersion(radius),
        grid_shape=(grid, grid),
        spacing=[h, h],
        origin=[0.0, 0.0],
        periodic=(True, True),
        polar=(False, False),
        refinement=refinement,
    )


def make_two_spheres(refinement: int, separation: float = 3.0) -> TriangleMeshGeometry:
    """Two disjoint unit icospheres; a deliberately disconnected input."""
    a = make_icosphere(refinement)
    V = np.vstack([a.vertices, a.vertices + np.array([separation, 0.0, 0.0])])
    F = np.vstack([a.faces, a.faces + len(a.vertices)])
    return TriangleMeshGeometry("two-spheres", V, F, refinement)


def pad_ambient(geometry, extra: int):
    """Append ``extra`` zero coordinates, embedding the same surface in a bigger space."""
    if extra == 0:
        return geometry
    N = geometry.ambient_dim
    M = np.vstack([np.eye(N), np.zeros((extra, N))])
    return geometry.transformed(M)


# ---------------------------------------------------------------------------
# Frames and curvature
# ---------------------------------------------------------------------------


def complete_normal_frame(tangent: np.ndarray, m: int, first: np.ndarray | None = None) -> np.ndarray:
    """Orthonormal normal frames (P, m, N) completing ``tangent`` (P, n, N).

    ``first`` (P, N), when given and non-negligible, fixes the first normal
    direction.  The rest come from Gram-Schmidt over the ambient standard basis
    in index order, accepting a candidate once its residual exceeds 0.3.
    """
    P, n, N = tangent.shape
    basis = list(np.moveaxis(tangent, 1, 0))
    out = np.zeros((P, m, N))
    filled = np.zeros(P, dtype=int)

    def residual(v, vecs):
        for b in vecs:
            v = v - np.einsum("pi,pi->p", v, b)[:, None] * b
        return v

    accepted = []
    if first is not None:
        v = residual(first.copy(), basis)
        nv = np.linalg.norm(v, axis=1)
        ok = nv > 1e-8
        out[ok, 0] = v[ok] / nv[ok, None]
        filled[ok] = 1
    for slot in range(m):
        need = filled == slot
        if not need.any():
            continue
        prev = basis + [out[:, s] for s in range(slot)]
        chosen = np.zeros((P, N))
        done = ~need
        for k in range(N):
            e = np.zeros((P, N))
            e[:, k] = 1.0
            v = residual(e, prev)
            nv = np.linalg.norm(v, axis=1)
            take = (~done) & (nv > 0.3)
            chosen[take] = v[take] / nv[take, None]
            done |= take
            if done.all():
                break
        if not done.all():
            raise DegenerateGeometryError("could not complete a normal frame")
        out[need, slot] = chosen[need]
        filled[need] = slot + 1
    del accepted
    return out


@dataclass(eq=False)
class CurvatureData:
    tangent_basis: np.ndarray  # (P, n, N) orthonormal
    normal_basis: np.ndarray  # (P, m, N) orthonormal; first aligned with H
    sff: np.ndarray  # (P, m, n, n) components h^alpha_ij in the frames above
    mean_curvature: np.ndarray  # (P, N) ambient vector
    umbilicity_defect: np.ndarray  # (P,)
    tangent_coeffs: np.ndarray | None = None  # (P, n, n) e_i = sum_a T_ia X_a (charts)
    christoffel: np.ndarray | None = None  # (P, n, n, n) Gamma^c_ab stored [c, a, b] (charts)
    mean_curvature_alt: np.ndarray | None = None  # second estimator, for cross-validation

    @property
    def n(self) -> int:
        return self.tangent_basis.shape[1]

    @property
    def m(self) -> int:
        return self.normal_basis.shape[1]

    @property
    def mean_curvature_norm(self) -> np.ndarray:
        return np.linalg.norm(self.mean_curvature, axis=1)

    def h_components(self) -> np.ndarray:
        """Components of H in the normal frame, (P, m)."""
        return np.einsum("pi,pai->pa", self.mean_curvature, self.normal_basis)

    def tangential_part_of_h(self) -> np.ndarray:
        return np.linalg.norm(np.einsum("pi,pai->pa", self.mean_curvature, self.tangent_basis), axis=1)


def _umbilicity(sff, H_comp):
    n = sff.shape[-1]
    dev = sff - H_comp[:, :, None, None] * np.eye(n)
    return np.abs(dev).reshape(len(sff), -1).max(axis=1)


def chart_frames(dX: np.ndarray):
    """Gram-Schmidt tangent frames of chart derivatives: returns (e (B,n,N), T (B,n,n))."""
    B, n, N = dX.shape
    T = np.zeros((B, n, n))
    e = np.zeros_like(dX)
    l1 = np.linalg.norm(dX[:, 0], axis=1)
    e[:, 0] = dX[:, 0] / l1[:, None]
    T[:, 0, 0] = 1.0 / l1
    if n == 2:
        c = np.einsum("pi,pi->p", dX[:, 1], e[:, 0])
        w = dX[:, 1] - c[:, None] * e[:, 0]
        lw = np.linalg.norm(w, axis=1)
        e[:, 1] = w / lw[:, None]
        T[:, 1, 0] = -c / (l1 * lw)
        T[:, 1, 1] = 1.0 / lw
    return e, T


def chart_curvature_at(immersion: Immersion, xi: np.ndarray, m: int, frame_seed=None):
    """Frames, sff and H at arbitrary chart parameters.

    ``frame_seed`` (B, m-1, N), when given, continues an existing y-frame by
    projection instead of re-seeding it (keeps frames smooth in xi).
    """
    X, dX, ddX = immersion(xi)
    n = dX.shape[1]
    e, T = chart_frames(dX)
    tang = np.einsum("pabi,pci->pabc", ddX, e)
    normal_part = ddX - np.einsum("pabc,pci->pabi", tang, e)
    sff_vec = np.einsum("pia,pjb,pabk->pijk", T, T, normal_part)
    H = np.einsum("piik->pk", sff_vec) / n
    if frame_seed is None:
        nu = complete_normal_frame(e, m, first=H)
    else:
        nu = np.zeros((len(X), m, X.shape[1]))
        Hn = np.linalg.norm(H, axis=1, keepdims=True)
        nu[:, 0] = H / Hn
        prev = [e[:, i] for i in range(n)] + [nu[:, 0]]
        for s in range(m - 1):
            v = frame_seed[:, s].copy()
            for b in prev:
                v -= np.einsum("pi,pi->p", v, b)[:, None] * b
            v /= np.linalg.norm(v, axis=1, keepdims=True)
            nu[:, s + 1] = v
            prev.append(v)
    sff = np.einsum("pijk,pak->paij", sff_vec, nu)
    return X, dX, ddX, e, T, nu, sff, H


def compute_curvature(geometry) -> CurvatureData:
    if isinstance(geometry, ChartGeometry):
        return _chart_curvature(geometry)
    if isinstance(geometry, TriangleMeshGeometry):
        return _mesh_curvature(geometry)
    raise GeometryError(f"unsupported geometry type {type(geometry).__name__}")


def _chart_curvature(geo: ChartGeometry) -> CurvatureData:
    if "curvature" in geo._cache:
        return geo._cache["curvature"]
    if geo.m < 1:
        raise GeometryError("codimension must be at least 1")
    X, dX, ddX = geo.positions, geo.first, geo.second
    e, T = chart_frames(dX)
    tang = np.einsum("pabi,pci->pabc", ddX, e)
    normal_part = ddX - np.einsum("pabc,pci->pabi", tang, e)
    sff_vec = np.einsum("pia,pjb,pabk->pijk", T, T, normal_part)
    H = np.einsum("piik->pk", sff_vec) / geo.n
    nu = complete_normal_frame(e, geo.m, first=H)
    sff = np.einsum("pijk,pak->paij", sff_vec, nu)
    H_comp = np.einsum("pk,pak->pa", H, nu)
    gamma = np.einsum("pcd,pabk,pdk->pcab", geo.metric_inv, ddX, dX)
    curv = CurvatureData(
        tangent_basis=e,
        normal_basis=nu,
        sff=sff,
        mean_curvature=H,
        umbilicity_defect=_umbilicity(sff, H_comp),
        tangent_coeffs=T,
        christoffel=gamma,
    )
    geo._cache["curvature"] = curv
    return curv


def _two_ring(geo: TriangleMeshGeometry):
    A = geo.adjacency()
    A2 = (A + A @ A).tocsr()
    A2.setdiag(0)
    A2.eliminate_zeros()
    return A2


def _mesh_curvature(geo: TriangleMeshGeometry) -> CurvatureData:
    if "curvature" in geo._cache:
        return geo._cache["curvature"]
    from .operators import laplacian_matrix

    V = geo.vertices
    P, N = V.shape
    m = geo.m
    K = laplacian_matrix(geo)
    H_lap = (K @ V) / (geo.n * geo.vertex_areas[:, None])
    ring = _two_ring(geo)
    tangent = geo.tangent_frames.copy()
    normals = complete_normal_frame(tangent, m)
    sff = np.zeros((P, m, 2, 2))
    for it in range(2):
        for i in range(P):
            nbrs = ring.indices[ring.indptr[i] : ring.indptr[i + 1]]
            d = V[nbrs] - V[i]
            xi = d @ tangent[i].T
            h = d @ normals[i].T
            D = np.column_stack([xi[:, 0], xi[:, 1], 0.5 * xi[:, 0] ** 2, xi[:, 0] * xi[:, 1], 0.5 * xi[:, 1] ** 2])
            if len(nbrs) < 5 or np.linalg.matrix_rank(D) < 5:
                raise DegenerateGeometryError(f"rank-deficient quadratic fit at vertex {i}; mesh too coarse")
            coef, *_ = np.linalg.lstsq(D, h, rcond=None)
            if it == 0:
                # tilt the tangent plane by the fitted slopes, then refit
                t = tangent[i] + coef[:2] @ normals[i]
                t = t.T
                q, _ = np.linalg.qr(t)
                q = q.T
                # keep orientation of the original frame
                for a in range(2):
                    if np.dot(q[a], tangent[i][a]) < 0:
                        q[a] = -q[a]
                tangent[i] = q
            else:
                sff[i, :, 0, 0] = coef[2]
                sff[i, :, 0, 1] = sff[i, :, 1, 0] = coef[3]
                sff[i, :, 1, 1] = coef[4]
        if it == 0:
            normals = complete_normal_frame(tangent, m)
    # align the first normal with the Laplacian mean curvature
    aligned = complete_normal_frame(tangent, m, first=H_lap)
    R = np.einsum("pak,pbk->pab", aligned, normals)
    sff = np.einsum("pab,pbij->paij", R, sff)
    H_fit_comp = np.einsum("paii->pa", sff) / 2.0
    H_fit = np.einsum("pa,pak->pk", H_fit_comp, aligned)
    curv = CurvatureData(
        tangent_basis=tangent,
        normal_basis=aligned,
        sff=sff,
        mean_curvature=H_lap,
        umbilicity_defect=_umbilicity(sff, H_fit_comp),
        mean_curvature_alt=H_fit,
    )
    geo._cache["curvature"] = curv
    return curv


def check_unit_mean_curvature(curvature: CurvatureData, tol: float) -> tuple[bool, float]:
    dev = float(np.abs(curvature.mean_curvature_norm - 1.0).max())
    return dev <= tol, dev


# ---------------------------------------------------------------------------
# Plain-text import / export
# ---------------------------------------------------------------------------

_MAGIC = "# lsilab-geometry v1"


def write_geometry(path, geometry) -> None:
    path = Path(path)
    head = [_MAGIC, f"dim_n={geometry.n}", f"ambient_dim={geometry.ambient_dim}", f"samples={geometry.sample_count}"]
    if isinstance(geometry, ChartGeometry):
        axes = ",".join("polar" if pl else "periodic" for pl in geometry.polar)
        head += [
            "kind=chart",
            "grid=" + "x".join(str(s) for s in geometry.grid_shape),
            "spacing=" + ",".join(repr(float(s)) for s in geometry.spacing),
            "origin=" + ",".join(repr(float(s)) for s in geometry.origin),
            f"axes={axes}",
        ]
    else:
        head += ["kind=mesh", f"faces={len(geometry.faces)}"]
    lines = [" ".join(head)]
    table = np.column_stack([geometry.points, geometry.weights])
    lines += [" ".join(repr(float(v)) for v in row) for row in table]
    if isinstance(geometry, TriangleMeshGeometry):
        lines += [f"f {a} {b} {c}" for a, b, c in geometry.faces]
    path.write_text("\n".join(lines) + "\n")


def read_geometry(path):
    text = Path(path).read_text().splitlines()
    if not text or not text[0].startswith(_MAGIC):
        raise GeometryError("missing lsilab-geometry header")
    meta = dict(tok.split("=", 1) for tok in text[0][len(_MAGIC) :].split())
    dim_n, ambient = int(meta["dim_n"]), int(meta["ambient_dim"])
    samples = int(meta["samples"])
    rows = [ln for ln in text[1:] if ln.strip() and not ln.startswith("f ")]
    table = np.array([[float(v) for v in ln.split()] for ln in rows])
    if table.shape != (samples, ambient + 1):
        raise GeometryError("sample table does not match header")
    pts = table[:, :ambient]
    if meta["kind"] == "mesh":
        faces = np.array([[int(v) for v in ln.split()[1:]] for ln in text[1:] if ln.startswith("f ")])
        return TriangleMeshGeometry("imported-mesh", pts, faces)
    grid = tuple(int(s) for s in meta["grid"].split("x"))
    if len(grid) != dim_n:
        raise GeometryError("grid rank does not match dim_n")
    spacing = [float(s) for s in meta["spacing"].split(",")]
    origin = [float(s) for s in meta["origin"].split(",")]
    polar = tuple(a == "polar" for a in meta["axes"].split(","))
    imm = TrigImmersion(pts.reshape(grid + (ambient,)), spacing, origin, polar=polar[0])
    return ChartGeometry(
        kind="imported-chart",
        immersion=imm,
        grid_shape=grid,
        spacing=spacing,
        origin=origin,
        periodic=tuple(not p for p in polar),
        polar=polar,
    )
