"""Transport map x + r(grad u + y + tH) in Euclidean space and checks of its Jacobian.

Conventions:

* ``y`` is given by its coordinates in the normal directions orthogonal to H
  (normal frame vectors 1..m-1); the frame vector 0 is H/|H|.
* On charts the gradient of u entering the map comes from the trigonometric
  interpolant of u, so the map is defined (and differentiable) off the grid.
* Membership of (x, y, t) in A_r asks that x minimizes
  ``z -> r u(z) + |z - p|^2 / 2`` with p the image.  A discrete test can only
  sample z; we test all grid nodes plus a local patch, and accept only when
  every sampled slack exceeds ``-tau - (eps_h / 2) |z - x|^2 / 2``.  The
  distance-scaled term keeps accepted members within half of the
  second-order tolerance used by the positivity check.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import qmc

from .errors import FDStepError, HessianUnavailableError
from .geometry import ChartGeometry, CurvatureData, chart_curvature_at, compute_curvature
from .operators import chart_hessian, epsilon_h, laplacian, to_orthonormal
from .potential import NormalizedDensity, PotentialSolution

FD_SCALE = 1e-4
LADDER = 24
_ROW_CHUNK = 256
MEMBERSHIP_FRACTION = 0.5
POLE_GUARD = 1e-7


def _abs_tol(r: float) -> float:
    return 1e-11 * (1.0 + r)


@dataclass(eq=False)
class TransportContext:
    geometry: object
    curvature: CurvatureData
    solution: PotentialSolution
    density: NormalizedDensity
    eps_h: float = field(init=False)
    X: np.ndarray = field(init=False, repr=False)
    u: np.ndarray = field(init=False, repr=False)
    grad_u: np.ndarray = field(init=False, repr=False)
    H: np.ndarray = field(init=False, repr=False)
    nu: np.ndarray = field(init=False, repr=False)
    _cache: dict = field(init=False, repr=False, default_factory=dict)

    def __post_init__(self):
        geo = self.geometry
        self.eps_h = epsilon_h(geo)
        self.X = geo.points
        self.u = self.solution.u.values
        self.H = self.curvature.mean_curvature
        self.nu = self.curvature.normal_basis
        if self.is_chart:
            d = self.solution.interpolant().partials_at_nodes()
            up = np.einsum("pab,pb->pa", geo.metric_inv, d)
            self.grad_u = np.einsum("pa,pai->pi", up, geo.first)
        else:
            self.grad_u = self.solution.grad_u

    @classmethod
    def build(cls, solution: PotentialSolution, density: NormalizedDensity) -> "TransportContext":
        geo = solution.geometry
        return cls(geo, compute_curvature(geo), solution, density)

    @property
    def is_chart(self) -> bool:
        return isinstance(self.geometry, ChartGeometry)

    @property
    def n(self) -> int:
        return self.geometry.n

    @property
    def m(self) -> int:
        return self.geometry.m

    @property
    def grad_sq(self) -> np.ndarray:
        return np.einsum("pi,pi->p", self.grad_u, self.grad_u)

    @property
    def f(self) -> np.ndarray:
        return self.density.values

    def require_chart(self, what: str):
        if not self.is_chart:
            raise HessianUnavailableError(f"{what} needs the intrinsic Hessian, which only chart geometries provide")

    def hessian_orthonormal(self) -> np.ndarray:
        """FD covariant Hessian of u at the nodes, in the orthonormal tangent frame."""
        self.require_chart("the shifted Hessian")
        if "hess" not in self._cache:
            self._cache["hess"] = to_orthonormal(self.geometry, chart_hessian(self.solution.u))
        return self._cache["hess"]

    def laplacian_u(self) -> np.ndarray:
        if "lap" not in self._cache:
            self._cache["lap"] = laplacian(self.solution.u)
        return self._cache["lap"]

    def normal_vector(self, idx, y, t) -> np.ndarray:
        """``y + t H`` as ambient vectors for node indices."""
        idx = np.atleast_1d(idx)
        y = np.asarray(y, float).reshape(len(idx), self.m - 1)
        t = np.asarray(t, float).reshape(len(idx))
        v = t[:, None] * self.H[idx]
        if self.m > 1:
            v = v + np.einsum("pb,pbi->pi", y, self.nu[idx, 1:])
        return v

    # -- continuous evaluation on charts ---------------------------------
    def point_data(self, xi: np.ndarray, frame_seed=None) -> dict:
        """Positions, frames, H, u and grad u at arbitrary chart parameters."""
        self.require_chart("off-grid evaluation")
        geo = self.geometry
        if geo.polar[0]:
            # the colatitude chart is singular on the poles; step off them (still a point of the surface)
            xi = np.array(xi, dtype=float)
            near = np.abs(np.sin(xi[:, 0])) < POLE_GUARD
            xi[near, 0] += POLE_GUARD * np.where(np.cos(xi[near, 0]) > 0, 1.0, -1.0)
        X, dX, ddX, e, T, nu, sff, H = chart_curvature_at(geo.immersion, xi, self.m, frame_seed)
        uval, du, d2u = self.solution.interpolant().evaluate(xi, order=2)
        g = np.einsum("pai,pbi->pab", dX, dX)
        ginv = np.linalg.inv(g)
        grad = np.einsum("pa,pai->pi", np.einsum("pab,pb->pa", ginv, du), dX)
        return {"X": X, "dX": dX, "ddX": ddX, "g": g, "nu": nu, "H": H, "u": uval, "du": du, "d2u": d2u, "grad": grad}


# ---------------------------------------------------------------------------
# Map, membership, t-range
# ---------------------------------------------------------------------------


def phi_map(ctx: TransportContext, idx, y, t, r: float) -> np.ndarray:
    """Images ``x + r (grad u + y + t H)`` for node indices (vectorized)."""
    idx = np.atleast_1d(idx)
    return ctx.X[idx] + r * (ctx.grad_u[idx] + ctx.normal_vector(idx, y, t))


def in_u(ctx: TransportContext, idx, y, t) -> np.ndarray:
    idx = np.atleast_1d(idx)
    y = np.asarray(y, float).reshape(len(idx), ctx.m - 1)
    t = np.asarray(t, float).reshape(len(idx))
    return ctx.grad_sq[idx] + np.einsum("pb,pb->p", y, y) + t**2 < 1.0


@dataclass
class Membership:
    member: np.ndarray
    slack_min: np.ndarray  # raw min over sampled z of the A_r slack (<= 0 since z = x is sampled)
    worst_index: np.ndarray  # grid node of the worst tolerance-adjusted slack
    adjusted_min: np.ndarray


def _global_slack(ctx, x, ux, p, r, eps):
    """Min over grid nodes z of the raw and tolerance-adjusted slack, chunked over samples."""
    Z, uz = ctx.X, ctx.u
    zz = np.einsum("pi,pi->p", Z, Z)
    B = len(x)
    raw = np.empty(B)
    adj = np.empty(B)
    arg = np.empty(B, dtype=int)
    for s in range(0, B, _ROW_CHUNK):
        sl = slice(s, s + _ROW_CHUNK)
        xs, ps, us = x[sl], p[sl], ux[sl]
        d = xs - ps
        zx = Z @ xs.T
        dist2 = np.maximum(zz[:, None] - 2.0 * zx + np.einsum("bi,bi->b", xs, xs)[None, :], 0.0)
        cross = Z @ d.T - np.einsum("bi,bi->b", xs, d)[None, :]
        sl_raw = r * (uz[:, None] - us[None, :]) + 0.5 * dist2 + cross
        sl_adj = sl_raw + 0.5 * eps * dist2
        raw[sl] = sl_raw.min(axis=0)
        arg[sl] = sl_adj.argmin(axis=0)
        adj[sl] = sl_adj[arg[sl], np.arange(sl_adj.shape[1])]
    return raw, adj, arg


def _patch_offsets(geo: ChartGeometry) -> np.ndarray:
    ticks = np.array([-1.0, -0.5, 0.0, 0.5, 1.0])
    grids = np.meshgrid(*[ticks * h for h in geo.spacing], indexing="ij")
    off = np.stack([g.reshape(-1) for g in grids], axis=1)
    return off[np.any(off != 0, axis=1)]


def _patch_slack(ctx, centers, x, ux, p, r, eps):
    """Min tolerance-adjusted and raw slack over a local patch of chart points around each center."""
    geo = ctx.geometry
    B, n = centers.shape
    base = _patch_offsets(geo)
    # eigen-directions of the chart Hessian of z -> r u(z) + |z - p|^2 / 2 at the center
    d = ctx.point_data(centers)
    F2 = r * d["d2u"] + np.einsum("pabi,pi->pab", d["ddX"], d["X"] - p) + d["g"]
    _, vecs = np.linalg.eigh(F2)
    hmin = float(np.min(geo.spacing))
    dirs = []
    for k in range(n):
        for s in (0.25, 0.5, 1.0):
            dirs.append(s * hmin * vecs[:, :, k])
            dirs.append(-s * hmin * vecs[:, :, k])
    dirs = np.stack(dirs, axis=1)  # (B, 6n, n)
    offs = np.concatenate([np.broadcast_to(base, (B,) + base.shape), dirs], axis=1)
    pts = (centers[:, None, :] + offs).reshape(-1, n)
    K = offs.shape[1]
    pd = ctx.point_data(pts)
    Z = pd["X"].reshape(B, K, -1)
    uz = pd["u"].reshape(B, K)
    dz = Z - x[:, None, :]
    dist2 = np.einsum("bki,bki->bk", dz, dz)
    raw = r * (uz - ux[:, None]) + 0.5 * dist2 + np.einsum("bki,bi->bk", dz, x - p)
    adj = raw + 0.5 * eps * dist2
    return raw.min(axis=1), adj.min(axis=1)


def a_r_membership_points(ctx: TransportContext, x, ux, p, r: float, xi=None) -> Membership:
    """Membership test for base points ``x`` (with u values ``ux``) and images ``p``.

    ``xi`` are the chart parameters of the base points; when given (charts),
    a local patch around x and around the worst grid node is also tested.
    """
    x = np.atleast_2d(x)
    p = np.atleast_2d(p)
    ux = np.atleast_1d(ux).astype(float)
    eps = MEMBERSHIP_FRACTION * ctx.eps_h
    tau = _abs_tol(r)
    raw, adj, arg = _global_slack(ctx, x, ux, p, r, eps)
    member = adj >= -tau
    if xi is not None and ctx.is_chart and member.any():
        sel = np.flatnonzero(member)
        xi_sel = np.atleast_2d(xi)[sel]
        r1, a1 = _patch_slack(ctx, xi_sel, x[sel], ux[sel], p[sel], r, eps)
        r2, a2 = _patch_slack(ctx, ctx.geometry.params[arg[sel]], x[sel], ux[sel], p[sel], r, eps)
        raw[sel] = np.minimum(raw[sel], np.minimum(r1, r2))
        adj[sel] = np.minimum(adj[sel], np.minimum(a1, a2))
        member = adj >= -tau
    return Membership(member, raw, arg, adj)


def a_r_membership(ctx: TransportContext, idx, y, t, r: float) -> Membership:
    idx = np.atleast_1d(idx)
    p = phi_map(ctx, idx, y, t, r)
    xi = ctx.geometry.params[idx] if ctx.is_chart else None
    return a_r_membership_points(ctx, ctx.X[idx], ctx.u[idx], p, r, xi)


def bound_argument(ctx: TransportContext, idx, t, r: float) -> np.ndarray:
    """``1 + r (f^(1/(n+1)) - sqrt(1 - |grad u|^2) - t)``."""
    idx = np.atleast_1d(idx)
    return 1.0 + r * _kappa(ctx, idx, t)


def _kappa(ctx, idx, t):
    n = ctx.n
    root = np.sqrt(np.clip(1.0 - ctx.grad_sq[idx], 0.0, None))
    return ctx.f[idx] ** (1.0 / (n + 1)) - root - np.asarray(t, float)


def t_range_check(ctx: TransportContext, idx, t, r: float, member) -> dict:
    """Members must satisfy ``-sqrt(1-|grad u|^2) < t <= f^(1/(n+1)) - sqrt(1-|grad u|^2) + 1/r``."""
    idx = np.atleast_1d(idx)
    t = np.asarray(t, float)
    member = np.asarray(member, bool)
    root = np.sqrt(np.clip(1.0 - ctx.grad_sq[idx], 0.0, None))
    lower_ok = t > -root
    arg = bound_argument(ctx, idx, t, r)
    upper_ok = arg >= -ctx.eps_h
    bad = member & ~(lower_ok & upper_ok)
    return {"violations": int(bad.sum()), "checked": int(member.sum()), "min_bound_argument": float(arg[member].min()) if member.any() else float("nan")}


# ---------------------------------------------------------------------------
# Shifted Hessian and positivity
# ---------------------------------------------------------------------------


@dataclass
class ShiftedHessian:
    matrix: np.ndarray  # (B, n, n) in the orthonormal tangent frame
    eigenvalues: np.ndarray  # (B, n) ascending
    trace_sff_y: np.ndarray
    trace_sff_h: np.ndarray


def shifted_hessian(ctx: TransportContext, idx, y, t) -> ShiftedHessian:
    """``D^2 u - <sff, y> - t <sff, H>`` at node indices."""
    idx = np.atleast_1d(idx)
    B = len(idx)
    y = np.asarray(y, float).reshape(B, ctx.m - 1)
    t = np.asarray(t, float).reshape(B)
    hess = ctx.hessian_orthonormal()[idx]
    sff = ctx.curvature.sff[idx]  # (B, m, n, n)
    hcomp = np.einsum("pi,pai->pa", ctx.H[idx], ctx.nu[idx])
    sff_h = np.einsum("paij,pa->pij", sff, hcomp)
    sff_y = np.einsum("pbij,pb->pij", sff[:, 1:], y) if ctx.m > 1 else np.zeros_like(hess)
    A = hess - sff_y - t[:, None, None] * sff_h
    A = 0.5 * (A + np.swapaxes(A, 1, 2))
    return ShiftedHessian(
        matrix=A,
        eigenvalues=np.linalg.eigvalsh(A),
        trace_sff_y=np.einsum("pii->p", sff_y),
        trace_sff_h=np.einsum("pii->p", sff_h),
    )


def positivity_check(A: ShiftedHessian, r: float) -> np.ndarray:
    """Smallest eigenvalue of ``g + r A`` (g is the identity in the orthonormal frame)."""
    return 1.0 + r * A.eigenvalues[:, 0]


def am_hm_defect(eigenvalues: np.ndarray, s: float) -> np.ndarray:
    """Relative defect ``(sum 1/(1+s l_i)) / (n / (1 + s tr/n)) - 1`` where all ``1 + s l_i > 0`` (NaN elsewhere)."""
    lam = np.atleast_2d(eigenvalues)
    n = lam.shape[1]
    one = 1.0 + s * lam
    ok = np.all(one > 0, axis=1)
    lhs = np.sum(1.0 / np.where(one > 0, one, np.nan), axis=1)
    rhs = n / (1.0 + s * lam.sum(axis=1) / n)
    return np.where(ok, lhs / rhs - 1.0, np.nan)


# ---------------------------------------------------------------------------
# Jacobian
# ---------------------------------------------------------------------------


@dataclass
class JacobianResult:
    jac_numeric: np.ndarray  # |det D Phi_r| per sample
    jac_bound: np.ndarray
    ladder: np.ndarray  # (K,) rungs s_k = r 2^-k
    ratio_scan: np.ndarray  # (B, K) |det D Phi_s| / (s^m (1 + s kappa)^n)
    small_s_limit: np.ndarray  # s^-m |det D Phi_s| at the smallest rung
    monotone_defect: np.ndarray  # max relative increase of the ratio as s grows


def _field_v(pd, y, t):
    v = pd["grad"] + t[:, None] * pd["H"]
    if y.shape[1]:
        v = v + np.einsum("pb,pbi->pi", y, pd["nu"][:, 1:])
    return v


def jacobian_and_bound(ctx: TransportContext, idx, y, t, r: float, ladder: int = LADDER) -> JacobianResult:
    """Finite-difference Jacobian determinant of the map and the bound ``r^m (1 + r kappa)^n``.

    Chart columns come from central differences (one Richardson step) with an
    ambient step of ``FD_SCALE`` times the unit curvature length.  The map is
    affine in (y, t), so those columns are ``r nu`` and ``r H`` exactly.
    """
    ctx.require_chart("the Jacobian check")
    geo = ctx.geometry
    idx = np.atleast_1d(idx)
    B, n, m = len(idx), ctx.n, ctx.m
    y = np.asarray(y, float).reshape(B, m - 1)
    t = np.asarray(t, float).reshape(B)
    xi0 = geo.params[idx]
    g0 = geo.metric[idx]
    steps = FD_SCALE / np.sqrt(np.einsum("paa->pa", g0))  # (B, n)
    if not np.all(np.isfinite(steps)) or np.any(steps < 1e-12):
        raise FDStepError("finite-difference step underflow")
    seed = ctx.nu[idx, 1:] if m > 1 else None
    dX = np.zeros((B, n, geo.ambient_dim))
    dV = np.zeros_like(dX)
    for a in range(n):
        cols = []
        for frac in (1.0, 0.5):
            hs = steps[:, a] * frac
            vals = []
            for sign in (1.0, -1.0):
                xi = xi0.copy()
                xi[:, a] += sign * hs
                pd = ctx.point_data(xi, frame_seed=seed)
                vals.append((pd["X"], _field_v(pd, y, t)))
            cols.append(((vals[0][0] - vals[1][0]) / (2 * hs[:, None]), (vals[0][1] - vals[1][1]) / (2 * hs[:, None])))
        (xh, vh), (xh2, vh2) = cols
        dX[:, a] = (4.0 * xh2 - xh) / 3.0
        dV[:, a] = (4.0 * vh2 - vh) / 3.0
    normal_cols = np.concatenate([ctx.nu[idx, 1:], ctx.H[idx][:, None, :]], axis=1)  # (B, m, N)
    sqrt_g = geo.sqrt_det[idx]
    s_vals = r * 2.0 ** -np.arange(ladder)
    kappa = _kappa(ctx, idx, t)
    dets = np.empty((B, ladder))
    for k, s in enumerate(s_vals):
        M = np.concatenate([dX + s * dV, normal_cols], axis=1)
        dets[:, k] = np.abs(np.linalg.det(M)) / sqrt_g
    base = 1.0 + s_vals[None, :] * kappa[:, None]
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = dets / base**n
    # ratio must not grow with s: compare each rung with the next smaller one
    with np.errstate(invalid="ignore"):
        mono = np.nanmax(ratio[:, :-1] / ratio[:, 1:] - 1.0, axis=1)
    return JacobianResult(
        jac_numeric=r**m * dets[:, 0],
        jac_bound=r**m * base[:, 0] ** n,
        ladder=s_vals,
        ratio_scan=ratio,
        small_s_limit=dets[:, -1],
        monotone_defect=mono,
    )


# ---------------------------------------------------------------------------
# Sweeps
# ---------------------------------------------------------------------------


@dataclass
class TransportSample:
    x_index: int
    y: np.ndarray
    t: float
    r: float
    image: np.ndarray
    in_U: bool
    in_A_r: bool
    jac_numeric: float = float("nan")
    jac_bound: float = float("nan")
    min_eig: float = float("nan")
    slack_min: float = float("nan")


@dataclass
class SweepResult:
    samples: list
    checks: dict
    ratio_scans: dict = field(default_factory=dict)  # sample position -> (ladder, ratios)

    @property
    def member_count(self) -> int:
        return sum(s.in_A_r for s in self.samples)


def draw_parameters(ctx: TransportContext, count: int, seed: int, t_range=(-1.0, 1.0)):
    """Node indices plus (y, t) inside U: scrambled Halton points in the unit m-ball, scaled per node."""
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, ctx.geometry.sample_count, size=count)
    m = ctx.m
    sob = qmc.Halton(d=m, scramble=True, seed=seed)
    pts = np.empty((0, m))
    while len(pts) < count:
        cube = 2.0 * sob.random(max(64, 2 * count)) - 1.0
        pts = np.vstack([pts, cube[np.einsum("ij,ij->i", cube, cube) < 1.0]])
    pts = pts[:count]
    lo, hi = t_range
    pts[:, -1] = lo + (pts[:, -1] + 1.0) * 0.5 * (hi - lo)
    radius = np.sqrt(np.clip(1.0 - ctx.grad_sq[idx], 0.0, None)) * (1.0 - 1e-9)
    scale = np.minimum(1.0, radius / np.maximum(np.linalg.norm(pts, axis=1), 1e-300))
    pts *= scale[:, None]
    return idx, pts[:, :-1], pts[:, -1]


def run_sweep(ctx: TransportContext, r_values, count: int, seed: int = 0, keep_scans: int = 8) -> SweepResult:
    """Sample (x, y, t) for each r; on members check bound, monotonicity, positivity, t-range and trace."""
    eps = ctx.eps_h
    samples = []
    checks = {
        "members": 0,
        "jacobian_bound_violations": 0,
        "monotone_violations": 0,
        "positivity_violations": 0,
        "t_range_violations": 0,
        "trace_violations": 0,
        "am_hm_violations": 0,
        "membership_failures": 0,
        "worst_jacobian_excess": -float("inf"),
        "worst_monotone_defect": -float("inf"),
        "min_eig": float("inf"),
        "max_trace_defect": 0.0,
        "min_am_hm_defect": float("inf"),
    }
    scans = {}
    for j, r in enumerate(r_values):
        idx, y, t = draw_parameters(ctx, count, seed + 7919 * j)
        inu = in_u(ctx, idx, y, t)
        mem = a_r_membership(ctx, idx, y, t, r)
        member = mem.member & inu
        image = phi_map(ctx, idx, y, t, r)
        jac = jb = me = np.full(len(idx), np.nan)
        sel = np.flatnonzero(member)
        checks["members"] += len(sel)
        checks["membership_failures"] += int((inu & ~mem.member).sum())
        tr = t_range_check(ctx, idx, t, r, member)
        checks["t_range_violations"] += tr["violations"]
        if len(sel) and ctx.is_chart:
            A = shifted_hessian(ctx, idx[sel], y[sel], t[sel])
            me = np.full(len(idx), np.nan)
            me[sel] = positivity_check(A, r)
            checks["positivity_violations"] += int((me[sel] < -eps).sum())
            checks["min_eig"] = min(checks["min_eig"], float(me[sel].min()))
            trace_def = np.abs(np.einsum("pii->p", A.matrix) - (ctx.laplacian_u()[idx[sel]] - ctx.n * t[sel]))
            checks["trace_violations"] += int((trace_def > eps).sum())
            checks["max_trace_defect"] = max(checks["max_trace_defect"], float(trace_def.max()))
            J = jacobian_and_bound(ctx, idx[sel], y[sel], t[sel], r)
            jac = np.full(len(idx), np.nan)
            jb = np.full(len(idx), np.nan)
            jac[sel], jb[sel] = J.jac_numeric, J.jac_bound
            excess = J.jac_numeric / J.jac_bound - 1.0
            checks["jacobian_bound_violations"] += int((excess > eps).sum())
            checks["worst_jacobian_excess"] = max(checks["worst_jacobian_excess"], float(np.nanmax(excess)))
            checks["monotone_violations"] += int((J.monotone_defect > eps).sum())
            checks["worst_monotone_defect"] = max(checks["worst_monotone_defect"], float(np.nanmax(J.monotone_defect)))
            for s in J.ladder:
                d = am_hm_defect(A.eigenvalues, s)
                if np.any(np.isfinite(d)):
                    checks["min_am_hm_defect"] = min(checks["min_am_hm_defect"], float(np.nanmin(d)))
                    checks["am_hm_violations"] += int((d < -1e-12).sum())
            for k in range(min(keep_scans, len(sel))):
                scans[f"r{r:g}_s{k}"] = (J.ladder.tolist(), J.ratio_scan[k].tolist())
        for k in range(len(idx)):
            samples.append(
                TransportSample(
                    x_index=int(idx[k]),
                    y=y[k],
                    t=float(t[k]),
                    r=float(r),
                    image=image[k],
                    in_U=bool(inu[k]),
                    in_A_r=bool(member[k]),
                    jac_numeric=float(jac[k]),
                    jac_bound=float(jb[k]),
                    min_eig=float(me[k]),
                    slack_min=float(mem.slack_min[k]),
                )
            )
    for key in ("min_eig", "min_am_hm_defect", "worst_jacobian_excess", "worst_monotone_defect"):
        if not np.isfinite(checks[key]):
            checks[key] = float("nan")
    return SweepResult(samples, checks, scans)


CSV_FIELDS_TAIL = ["t", "r", "in_U", "in_A_r", "jac_numeric", "jac_bound", "min_eig", "slack_min"]


def write_sweep_csv(path, sweep: SweepResult, m: int) -> None:
    ycols = [f"y{k + 1}" for k in range(m - 1)]
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x_index", *ycols, *CSV_FIELDS_TAIL])
        for s in sweep.samples:
            w.writerow(
                [s.x_index, *(repr(float(v)) for v in s.y), repr(s.t), repr(s.r), int(s.in_U), int(s.in_A_r)]
                + [repr(v) for v in (s.jac_numeric, s.jac_bound, s.min_eig, s.slack_min)]
            )


# ---------------------------------------------------------------------------
# Covering
# ---------------------------------------------------------------------------


@dataclass
class CoverageResult:
    requested: int
    drawn: int
    region_points: int
    covered: int
    failures: list
    vacuous: bool

    @property
    def fraction(self) -> float:
        return 1.0 if self.region_points == 0 else self.covered / self.region_points


def _newton_distance(ctx, p, sign, max_iter=40):
    """Continuous min (sign=+1) or max (sign=-1) of |X(xi) - p|^2 over the chart, starting at grid extremes."""
    geo = ctx.geometry
    d2 = np.einsum("pi,pi->p", ctx.X, ctx.X)[None, :] - 2.0 * p @ ctx.X.T + np.einsum("bi,bi->b", p, p)[:, None]
    start = np.argmin(sign * d2, axis=1)
    if not ctx.is_chart:
        return np.sqrt(np.maximum(d2[np.arange(len(p)), start], 0.0))
    xi = geo.params[start].copy()

    def obj(xi_):
        X, dX, ddX = geo.immersion(xi_)
        diff = X - p
        val = np.einsum("bi,bi->b", diff, diff)
        grad = 2.0 * np.einsum("bai,bi->ba", dX, diff)
        hess = 2.0 * (np.einsum("bai,bci->bac", dX, dX) + np.einsum("baci,bi->bac", ddX, diff))
        return val, grad, hess

    val, grad, hess = obj(xi)
    for _ in range(max_iter):
        step = _safe_newton_step(sign * hess, sign * grad)
        lam = np.ones(len(p))
        for _ls in range(30):
            v_new, g_new, h_new = obj(xi + lam[:, None] * step)
            ok = sign * v_new <= sign * val + 1e-14 * (1 + np.abs(val))
            if ok.all():
                break
            lam = np.where(ok, lam, 0.5 * lam)
        xi = xi + lam[:, None] * step
        val, grad, hess = obj(xi)
        if np.abs(grad).max() < 1e-13:
            break
    return np.sqrt(np.maximum(val, 0.0))


def _safe_newton_step(H, g):
    """Newton step for minimization with a positive-definite shift when needed."""
    w, V = np.linalg.eigh(H)
    w = np.maximum(np.abs(w), 1e-8 * np.maximum(1.0, np.abs(w).max(axis=1, keepdims=True)))
    return -np.einsum("bij,bj->bi", V, np.einsum("bji,bj->bi", V, g) / w)


def _minimize_transport_potential(ctx, p, r, candidates=4, max_iter=60):
    """Continuous global minimizer of ``z -> r u(z) + |z - p|^2 / 2`` on a chart."""
    geo = ctx.geometry
    Z = ctx.X
    vals = r * ctx.u[None, :] + 0.5 * (
        np.einsum("pi,pi->p", Z, Z)[None, :] - 2.0 * p @ Z.T + np.einsum("bi,bi->b", p, p)[:, None]
    )
    order = np.argsort(vals, axis=1)[:, :candidates]
    B = len(p)
    best_xi = np.zeros((B, geo.n))
    best_val = np.full(B, np.inf)
    interp = ctx.solution.interpolant()

    def obj(xi_, pp):
        X, dX, ddX = geo.immersion(xi_)
        u, du, d2u = interp.evaluate(xi_, order=2)
        diff = X - pp
        val = r * u + 0.5 * np.einsum("bi,bi->b", diff, diff)
        grad = r * du + np.einsum("bai,bi->ba", dX, diff)
        hess = r * d2u + np.einsum("bai,bci->bac", dX, dX) + np.einsum("baci,bi->bac", ddX, diff)
        return val, grad, hess

    for c in range(order.shape[1]):
        xi = geo.params[order[:, c]].copy()
        val, grad, hess = obj(xi, p)
        for _ in range(max_iter):
            step = _safe_newton_step(hess, grad)
            lam = np.ones(B)
            for _ls in range(30):
                v_new, _, _ = obj(xi + lam[:, None] * step, p)
                ok = v_new <= val + 1e-14 * (1 + np.abs(val))
                if ok.all():
                    break
                lam = np.where(ok, lam, 0.5 * lam)
            xi = xi + lam[:, None] * step
            val, grad, hess = obj(xi, p)
            if np.abs(grad).max() < 1e-12 * (1 + r):
                break
        better = val < best_val
        best_val[better] = val[better]
        best_xi[better] = xi[better]
    return best_xi


def covering_montecarlo(
    ctx: TransportContext,
    r: float,
    sigma: float,
    trials: int,
    seed: int = 0,
    max_draw_factor: int = 200,
) -> CoverageResult:
    """Sample p with ``sigma r < |x - p| < r`` for every x in the submanifold and invert the map at p."""
    ctx.require_chart("the covering inversion")
    rng = np.random.default_rng(seed)
    lo = ctx.X.min(axis=0) - r
    hi = ctx.X.max(axis=0) + r
    region = []
    drawn = 0
    batch = max(256, trials)
    while sum(len(b) for b in region) < trials and drawn < max_draw_factor * trials:
        p = lo + (hi - lo) * rng.random((batch, ctx.geometry.ambient_dim))
        drawn += batch
        dmin = _newton_distance(ctx, p, +1.0)
        dmax = _newton_distance(ctx, p, -1.0)
        keep = (dmin > sigma * r) & (dmax < r)
        region.append(p[keep])
    pts = np.vstack(region)[:trials] if region else np.empty((0, ctx.geometry.ambient_dim))
    if len(pts) == 0:
        return CoverageResult(trials, drawn, 0, 0, [], True)
    xi = _minimize_transport_potential(ctx, pts, r)
    pd = ctx.point_data(xi)
    X, H, nu, grad = pd["X"], pd["H"], pd["nu"], pd["grad"]
    w = (pts - X - r * grad) / r
    t = np.einsum("bi,bi->b", w, H) / np.einsum("bi,bi->b", H, H)
    y = np.einsum("bi,bai->ba", w, nu[:, 1:]) if ctx.m > 1 else np.zeros((len(pts), 0))
    gsq = np.einsum("bi,bi->b", grad, grad)
    norm_sq = gsq + np.einsum("ba,ba->b", y, y) + t**2
    image = X + r * (grad + t[:, None] * H)
    if ctx.m > 1:
        image = image + r * np.einsum("ba,bai->bi", y, nu[:, 1:])
    match = np.linalg.norm(image - pts, axis=1) <= 1e-8 * (1.0 + r)
    mem = a_r_membership_points(ctx, X, pd["u"], pts, r, xi)
    ok_u = norm_sq < 1.0
    ok_sigma = norm_sq > sigma**2
    covered = match & mem.member & ok_u & ok_sigma
    failures = []
    for k in np.flatnonzero(~covered):
        reasons = [
            name
            for name, flag in (("match", match[k]), ("membership", mem.member[k]), ("in_U", ok_u[k]), ("sigma", ok_sigma[k]))
            if not flag
        ]
        failures.append({"p": pts[k].tolist(), "reasons": reasons})
    return CoverageResult(trials, drawn, len(pts), int(covered.sum()), failures, False)
