"""Trigonometric sums over lattice frequencies, evaluated on midpoint grids.

Every exponential sum in the package has the form

    F(x) = sum_a w_a * exp(sign * 2*pi*i * a.x / denom)

with integer frequency vectors ``a`` and a positive integer ``denom``.  On a
midpoint grid of spacing ``1/m`` over an integer-sided box, the phases are
periodic in the grid index with period ``denom * m``, so the whole grid can
be filled by one FFT after folding the frequencies.  When that FFT would be
larger than the direct sum, the direct sum is used instead.
"""

from __future__ import annotations

import math

import numpy as np

TWO_PI = 2.0 * np.pi
# hard cap on the number of cells in any FFT buffer
FFT_BUDGET = 1 << 24


def box_hat(s):
    """Fourier transform of the indicator of [0, 1]: (1 - e^{-2 pi i s}) / (2 pi i s)."""
    s = np.asarray(s, dtype=float)
    return np.exp(-1j * np.pi * s) * np.sinc(s)


def box_hat_nd(xi, side_inv):
    """Product of ``box_hat(xi_i / side_inv)`` over the last axis of ``xi``."""
    xi = np.asarray(xi, dtype=float)
    return np.prod(box_hat(xi / side_inv), axis=-1)


def midpoints(corner, side, m):
    """Per-axis midpoint coordinates of the grid of spacing 1/m on corner + [0, side]^d."""
    n = _grid_count(side, m)
    offs = (np.arange(n) + 0.5) / m
    return [c + offs for c in np.atleast_1d(np.asarray(corner, dtype=float))]


def _grid_count(side, m):
    n = side * m
    if abs(n - round(n)) > 1e-9:
        raise ValueError(f"side {side} is not a multiple of the spacing 1/{m}")
    return int(round(n))


def _as_freqs(freqs):
    a = np.asarray(freqs, dtype=np.int64)
    if a.ndim == 1:
        a = a[:, None]
    return a


def _use_fft(n, d, L, t):
    if L**d > FFT_BUDGET:
        return False
    fft_cost = L**d * max(1.0, d * math.log2(max(L, 2)))
    # a complex exp costs roughly ten FFT butterflies
    return fft_cost <= 10 * (n**d) * max(t, 1)


def lattice_sum(freqs, weights, denom, corner, side, m, sign=-1):
    """Evaluate the exponential sum at the midpoints of a grid over a box.

    Returns a complex array of shape ``(n,) * d`` with ``n = side * m``;
    axis ``i`` runs along coordinate ``i``.
    """
    a = _as_freqs(freqs)
    w = np.asarray(weights, dtype=complex).ravel()
    t, d = a.shape
    if w.shape[0] != t:
        raise ValueError("weights and frequencies differ in length")
    n = _grid_count(side, m)
    corner = np.broadcast_to(np.asarray(corner, dtype=float), (d,))
    L = int(denom) * int(m)
    if _use_fft(n, d, L, t):
        x0 = corner + 0.5 / m
        c = w * np.exp(sign * 1j * TWO_PI * (a @ x0) / denom)
        buf = np.zeros((L,) * d, dtype=complex)
        np.add.at(buf, tuple((a % L).T), c)
        if sign < 0:
            full = np.fft.fftn(buf)
        else:
            full = np.fft.ifftn(buf) * (L**d)
        idx = np.arange(n) % L
        for ax in range(d):
            full = np.take(full, idx, axis=ax)
        return full
    pts = _grid_points(corner, n, m)
    out = np.empty(pts.shape[0], dtype=complex)
    step = max(1, (1 << 22) // max(t, 1))
    for s in range(0, pts.shape[0], step):
        ph = np.exp(sign * 1j * TWO_PI * (pts[s : s + step] @ a.T) / denom)
        out[s : s + step] = ph @ w
    return out.reshape((n,) * d)


def lattice_adjoint(freqs, field, denom, corner, side, m, sign=-1):
    """Adjoint of :func:`lattice_sum`: ``sum_j field_j * conj(phase_a(x_j))`` for each ``a``."""
    a = _as_freqs(freqs)
    t, d = a.shape
    n = _grid_count(side, m)
    field = np.asarray(field, dtype=complex).reshape((n,) * d)
    corner = np.broadcast_to(np.asarray(corner, dtype=float), (d,))
    L = int(denom) * int(m)
    if _use_fft(n, d, L, t):
        buf = field
        for ax in range(d):
            buf = _fold_axis(buf, ax, L)
        # conj phase has sign -sign
        if -sign < 0:
            full = np.fft.fftn(buf)
        else:
            full = np.fft.ifftn(buf) * (L**d)
        x0 = corner + 0.5 / m
        vals = full[tuple((a % L).T)]
        return vals * np.exp(-sign * 1j * TWO_PI * (a @ x0) / denom)
    pts = _grid_points(corner, n, m)
    flat = field.ravel()
    out = np.zeros(t, dtype=complex)
    step = max(1, (1 << 22) // max(t, 1))
    for s in range(0, pts.shape[0], step):
        ph = np.exp(-sign * 1j * TWO_PI * (pts[s : s + step] @ a.T) / denom)
        out += flat[s : s + step] @ ph
    return out


def _fold_axis(arr, ax, L):
    n = arr.shape[ax]
    if n == L:
        return arr
    shape = list(arr.shape)
    shape[ax] = L
    out = np.zeros(shape, dtype=complex)
    for start in range(0, n, L):
        stop = min(start + L, n)
        src = [slice(None)] * arr.ndim
        dst = [slice(None)] * arr.ndim
        src[ax] = slice(start, stop)
        dst[ax] = slice(0, stop - start)
        out[tuple(dst)] += arr[tuple(src)]
    return out


def _grid_points(corner, n, m):
    axes = [c + (np.arange(n) + 0.5) / m for c in corner]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([g.ravel() for g in mesh], axis=1)


def box_factor_on_grid(corner, side, m, scale):
    """``prod_i box_hat(x_i / scale)`` on the same midpoint grid, as a broadcastable array."""
    axes = midpoints(corner, side, m)
    d = len(axes)
    out = np.ones((1,) * d, dtype=complex)
    for ax, xs in enumerate(axes):
        shape = [1] * d
        shape[ax] = xs.size
        out = out * box_hat(xs / scale).reshape(shape)
    return out
