"""Trigonometric interpolation of grid data on periodic (and pole-reflected) charts.

A polar axis is a cell-centred colatitude axis on (0, pi).  It is made
periodic by the double-Fourier-sphere extension
``v(-theta, phi) = v(theta, phi + pi)``, which needs an even number of
nodes along the companion periodic axis.
"""

from __future__ import annotations

import numpy as np

_CHUNK = 1024


def _modes(N: int, period: float):
    """Index map, wavenumbers and weights for a real trigonometric interpolant.

    For even N the Nyquist coefficient is split evenly between +N/2 and -N/2
    so that the interpolant is real and matches the data at the nodes.
    """
    k = np.fft.fftfreq(N, d=1.0 / N).astype(int)
    idx = list(range(N))
    wn = list(k)
    w = [1.0] * N
    if N % 2 == 0:
        ny = N // 2
        w[ny] = 0.5
        idx.insert(ny, ny)
        wn.insert(ny, ny)
        w.insert(ny, 0.5)
    scale = 2.0 * np.pi / period
    return np.array(idx), np.array(wn, dtype=float) * scale, np.array(w)


def extend_polar(values: np.ndarray) -> np.ndarray:
    """Double a (N_theta, N_phi) array across the poles into a (2 N_theta, N_phi) periodic one."""
    n_th, n_ph = values.shape
    if n_ph % 2:
        raise ValueError("polar extension needs an even number of longitude nodes")
    mirrored = np.roll(values[::-1], -(n_ph // 2), axis=1)
    return np.concatenate([values, mirrored], axis=0)


class TrigInterpolant:
    """Real trigonometric interpolant of scalar grid data, with exact derivatives.

    ``values`` has the grid shape (one or two axes).  ``polar`` marks axis 0
    as a colatitude axis that is extended across the poles.
    """

    def __init__(self, values, spacing, origin, polar=False):
        values = np.asarray(values, dtype=float)
        self.ndim = values.ndim
        if self.ndim not in (1, 2):
            raise ValueError("only 1-D and 2-D grids are supported")
        self.shape = values.shape
        self.spacing = np.atleast_1d(np.asarray(spacing, dtype=float))
        self.origin = np.atleast_1d(np.asarray(origin, dtype=float))
        self.polar = bool(polar)
        data = extend_polar(values) if self.polar else values
        self._data_shape = data.shape
        self.is_zero = not np.any(data)
        coeffs = np.fft.fftn(data) / data.size
        self._coeffs = coeffs
        self._axes = []
        for a, N in enumerate(data.shape):
            idx, wn, w = _modes(N, N * self.spacing[a])
            self._axes.append((idx, wn, w))
        if self.ndim == 1:
            idx, _, w = self._axes[0]
            self._C = coeffs[idx] * w
        else:
            (ia, _, wa), (ib, _, wb) = self._axes
            self._C = coeffs[np.ix_(ia, ib)] * np.outer(wa, wb)

    def partials_at_nodes(self) -> np.ndarray:
        """First partial derivatives of the interpolant at the grid nodes, shape (P, ndim)."""
        n_nodes = int(np.prod(self.shape))
        out = np.zeros((n_nodes, self.ndim))
        if self.is_zero:
            return out
        for a in range(self.ndim):
            N = self._data_shape[a]
            k = np.fft.fftfreq(N, d=1.0 / N) * (2.0 * np.pi / (N * self.spacing[a]))
            if N % 2 == 0:
                k[N // 2] = 0.0
            shape = [1] * self.ndim
            shape[a] = N
            d = np.fft.ifftn(self._coeffs * (1j * k).reshape(shape)).real * self._coeffs.size
            if self.polar:
                d = d[: self.shape[0]]
            out[:, a] = d.reshape(-1)
        return out

    def evaluate(self, xi, order: int = 0):
        """Evaluate at parameter points ``xi`` of shape (B, ndim).

        Returns ``value`` (B,), plus ``grad`` (B, ndim) for order >= 1 and
        ``hess`` (B, ndim, ndim) for order >= 2.
        """
        xi = np.atleast_2d(np.asarray(xi, dtype=float))
        B = xi.shape[0]
        val = np.zeros(B)
        grad = np.zeros((B, self.ndim))
        hess = np.zeros((B, self.ndim, self.ndim))
        if not self.is_zero:
            for s in range(0, B, _CHUNK):
                sl = slice(s, s + _CHUNK)
                self._eval_chunk(xi[sl], order, val[sl], grad[sl], hess[sl])
        if order == 0:
            return val
        if order == 1:
            return val, grad
        return val, grad, hess

    def _eval_chunk(self, xi, order, val, grad, hess):
        if self.ndim == 1:
            _, ka, _ = self._axes[0]
            E = np.exp(1j * np.outer(xi[:, 0] - self.origin[0], ka))
            ik = 1j * ka
            val[:] = (E @ self._C).real
            if order >= 1:
                grad[:, 0] = (E @ (ik * self._C)).real
            if order >= 2:
                hess[:, 0, 0] = (E @ (ik * ik * self._C)).real
            return
        (_, ka, _), (_, kb, _) = self._axes
        Ea = np.exp(1j * np.outer(xi[:, 0] - self.origin[0], ka))
        Eb = np.exp(1j * np.outer(xi[:, 1] - self.origin[1], kb))
        ika, ikb = 1j * ka, 1j * kb
        T0 = Ea @ self._C
        val[:] = np.einsum("pk,pk->p", T0, Eb).real
        if order >= 1:
            T1 = (Ea * ika) @ self._C
            Ebd = Eb * ikb
            grad[:, 0] = np.einsum("pk,pk->p", T1, Eb).real
            grad[:, 1] = np.einsum("pk,pk->p", T0, Ebd).real
        if order >= 2:
            T2 = (Ea * ika * ika) @ self._C
            hess[:, 0, 0] = np.einsum("pk,pk->p", T2, Eb).real
            hess[:, 0, 1] = hess[:, 1, 0] = np.einsum("pk,pk->p", T1, Ebd).real
            hess[:, 1, 1] = np.einsum("pk,pk->p", T0, Ebd * ikb).real
