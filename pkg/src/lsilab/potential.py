"""Density normalization, the weighted potential equation, and the pointwise Laplacian bound.

Given a positive density f, the potential u solves

    div(f grad u) = n/(n+1) f log f - |grad f|^2 / (2 n f)

which is solvable exactly when the right-hand side integrates to zero; the
normalization below picks the multiple of f for which that holds.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.linalg import LinearOperator, cg

from .errors import DisconnectedError, IncompatibleRHSError, SolverError
from .geometry import ChartGeometry
from .interpolation import TrigInterpolant
from .operators import (
    ScalarField,
    build_weighted_laplacian,
    epsilon_h,
    gradient,
    gradient_norm_sq,
    integrate,
    laplacian,
)

OMEGA_BAND = 1e-6
CG_RTOL = 1e-10
RESIDUAL_TOL = 1e-8
COMPAT_TOL = 1e-8


@dataclass(frozen=True, eq=False)
class NormalizedDensity:
    f: ScalarField
    scale_log: float

    @property
    def values(self) -> np.ndarray:
        return self.f.values

    @property
    def geometry(self):
        return self.f.geometry


def fisher_information(f: ScalarField) -> float:
    """Integral of |grad f|^2 / f."""
    return integrate(f.with_values(gradient_norm_sq(f) / f.values))


def entropy_integral(f: ScalarField) -> float:
    """Integral of f log f."""
    return integrate(f.with_values(f.values * np.log(f.values)))


def normalization_residual(f: ScalarField, n: int) -> float:
    """n/(n+1) int f log f - (1/2n) int |grad f|^2/f."""
    return n / (n + 1) * entropy_integral(f) - fisher_information(f) / (2 * n)


def normalize_density(f: ScalarField, n: int) -> NormalizedDensity:
    f.require_positive()
    mass = integrate(f)
    log_c = ((n + 1) / (2 * n * n) * fisher_information(f) - entropy_integral(f)) / mass
    if not np.isfinite(log_c):
        raise SolverError("normalization produced a non-finite scale")
    return NormalizedDensity(f * float(np.exp(log_c)), float(log_c))


def potential_rhs(f: ScalarField, n: int) -> np.ndarray:
    v = f.values
    return n / (n + 1) * v * np.log(v) - gradient_norm_sq(f) / (2 * n * v)


@dataclass(frozen=True, eq=False)
class PotentialSolution:
    u: ScalarField
    solver_residual: float
    omega_mask: np.ndarray
    grad_u: np.ndarray
    iterations: int
    rhs: np.ndarray
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def grad_norm_sq(self) -> np.ndarray:
        return np.einsum("pi,pi->p", self.grad_u, self.grad_u)

    @property
    def geometry(self):
        return self.u.geometry

    def interpolant(self) -> TrigInterpolant:
        """Trigonometric interpolant of u (chart geometries only)."""
        geo = self.geometry
        if not isinstance(geo, ChartGeometry):
            raise SolverError("interpolation of u needs a chart geometry")
        if "interp" not in self._cache:
            self._cache["interp"] = TrigInterpolant(
                self.u.values.reshape(geo.grid_shape), geo.spacing, geo.origin, polar=geo.polar[0]
            )
        return self._cache["interp"]


def solve_potential(f: NormalizedDensity, n: int, rtol: float = CG_RTOL) -> PotentialSolution:
    fd = f.f
    geo = fd.geometry
    if not geo.is_connected():
        raise DisconnectedError("the potential equation needs a connected submanifold")
    rhs = potential_rhs(fd, n)
    w = geo.weights
    b = w * rhs
    l1 = float(np.abs(b).sum())
    if abs(b.sum()) > COMPAT_TOL * max(l1, 1e-300):
        raise IncompatibleRHSError(
            f"right-hand side integrates to {b.sum():.3e} (L1 norm {l1:.3e}); normalize the density first"
        )
    P = geo.sample_count
    if l1 == 0.0:
        u = np.zeros(P)
        its, res = 0, 0.0
    else:
        b = b - w * (b.sum() / w.sum())
        K = build_weighted_laplacian(fd).matrix
        A = -K
        dinv = 1.0 / A.diagonal()
        M = LinearOperator(A.shape, matvec=lambda v: dinv * v)
        count = [0]

        def cb(_):
            count[0] += 1

        maxiter = int(50 * np.sqrt(P)) + 1
        u, info = cg(A, -b, rtol=rtol, atol=0.0, maxiter=maxiter, M=M, callback=cb)
        its = count[0]
        u = u - (w @ u) / w.sum()
        res = float(np.linalg.norm(K @ u - b) / np.linalg.norm(b))
        if info != 0 or res > RESIDUAL_TOL:
            raise SolverError(f"CG did not converge: info={info}, relative residual {res:.2e} after {its} iterations")
    uf = ScalarField(u, geo)
    grad_u = gradient(uf)
    gn = np.sqrt(np.einsum("pi,pi->p", grad_u, grad_u))
    return PotentialSolution(
        u=uf,
        solver_residual=res,
        omega_mask=gn < 1.0 - OMEGA_BAND,
        grad_u=grad_u,
        iterations=its,
        rhs=rhs,
    )


@dataclass(frozen=True, eq=False)
class LemmaCheck:
    slack: np.ndarray  # NaN outside Omega
    intermediate_slack: np.ndarray  # NaN outside Omega
    min_slack: float
    min_intermediate_slack: float
    chain_tighter: bool
    omega_fraction: float
    eps_h: float

    @property
    def violation(self) -> float:
        return max(0.0, -self.min_slack)

    @property
    def passed(self) -> bool:
        return self.min_slack >= -self.eps_h and self.min_intermediate_slack >= -self.eps_h and self.chain_tighter


def lemma_delta_u_check(sol: PotentialSolution, f: NormalizedDensity, n: int) -> LemmaCheck:
    """Slack of ``Lap u <= n (f^(1/(n+1)) - sqrt(1 - |grad u|^2))`` on Omega, plus the intermediate estimate."""
    geo = sol.geometry
    lap_u = laplacian(sol.u)
    gsq = sol.grad_norm_sq
    mask = sol.omega_mask
    fv = f.values
    root = np.sqrt(np.clip(1.0 - gsq, 0.0, None))
    final_bound = n * (fv ** (1.0 / (n + 1)) - root)
    mid_bound = n / (n + 1) * np.log(fv) + 0.5 * n * gsq
    slack = np.where(mask, final_bound - lap_u, np.nan)
    mid = np.where(mask, mid_bound - lap_u, np.nan)
    tighter = bool(np.all(mid_bound[mask] <= final_bound[mask] + 1e-12 * (1 + np.abs(final_bound[mask]))))
    any_omega = bool(mask.any())
    return LemmaCheck(
        slack=slack,
        intermediate_slack=mid,
        min_slack=float(np.nanmin(slack)) if any_omega else 0.0,
        min_intermediate_slack=float(np.nanmin(mid)) if any_omega else 0.0,
        chain_tighter=tighter,
        omega_fraction=float(mask.mean()),
        eps_h=epsilon_h(geo),
    )
