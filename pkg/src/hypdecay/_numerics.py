"""Small numerical kernels shared across modules.

Finite-difference stencils (Fornberg weights), the ``D_t = -i d/dt`` operator
used by the diagonalisation machinery, and spectral cumulative quadrature on
Chebyshev panels.
"""
from __future__ import annotations

from functools import lru_cache

import numpy as np


def fornberg_weights(offsets, k):
    """Weights ``w`` with ``f^(k)(0) ~ sum w_i f(offsets_i)`` (unit spacing)."""
    x = np.asarray(offsets, dtype=float)
    n = len(x)
    c = np.zeros((n, k + 1))
    c1, c4 = 1.0, x[0]
    c[0, 0] = 1.0
    for i in range(1, n):
        mn = min(i, k)
        c2, c5, c4 = 1.0, c4, x[i]
        for j in range(i):
            c3 = x[i] - x[j]
            c2 *= c3
            if j == i - 1:
                for m in range(mn, 0, -1):
                    c[i, m] = c1 * (m * c[i - 1, m - 1] - c5 * c[i - 1, m]) / c2
                c[i, 0] = -c1 * c5 * c[i - 1, 0] / c2
            for m in range(mn, 0, -1):
                c[j, m] = (c4 * c[j, m] - m * c[j, m - 1]) / c3
            c[j, 0] = c4 * c[j, 0] / c3
        c1 = c2
    return c[:, k]


@lru_cache(maxsize=None)
def _stencil(k, one_sided):
    npts = k + 4 if k % 2 == 0 else k + 3
    if one_sided:
        offsets = np.arange(npts + 1, dtype=float)
    else:
        half = npts // 2
        offsets = np.arange(-half, half + 1, dtype=float)
    return offsets, fornberg_weights(offsets, k)


def derivative(f, t, k=1, h=None, t_min=None):
    """k-th derivative of ``f`` at ``t`` by finite differences.

    Central stencil (fourth order or better); switches to a forward stencil when
    the central one would reach below ``t_min``. ``f`` may return arrays.
    """
    if k == 0:
        return f(t)
    if h is None:
        h = (1.0 + abs(t)) * 1e-16 ** (1.0 / (k + 5))
    offsets, w = _stencil(k, False)
    if t_min is not None and t + offsets[0] * h < t_min:
        offsets, w = _stencil(k, True)
    acc = None
    for o, wi in zip(offsets, w):
        if wi == 0.0:
            continue
        v = wi * np.asarray(f(t + o * h))
        acc = v if acc is None else acc + v
    return acc / h ** k


def dt_op(f, t, h=None, t_min=0.0):
    """``D_t f = -i df/dt`` with step ``1e-3 (1+t)`` by default."""
    if h is None:
        h = 1e-3 * (1.0 + t)
    return -1j * derivative(f, t, 1, h=h, t_min=t_min)


@lru_cache(maxsize=None)
def _cheb_rule(p):
    # Chebyshev extreme points on [-1, 1], ascending, with the spectral
    # indefinite-integration matrix (integral from -1 to x_i).
    x = -np.cos(np.pi * np.arange(p) / (p - 1))
    V = np.polynomial.chebyshev.chebvander(x, p - 1)
    Vinv = np.linalg.inv(V)
    S = np.zeros((p, p))
    for m in range(p):
        e = np.zeros(p)
        e[m] = 1.0
        ci = np.polynomial.chebyshev.chebint(e, lbnd=-1.0)
        S[:, m] = np.polynomial.chebyshev.chebval(x, ci)
    return x, S @ Vinv


class ChebPanels:
    """Composite Chebyshev grid on ``breaks`` with spectral cumulative integration.

    Nodes are shared at panel interfaces only conceptually; each panel keeps its
    own ``p`` nodes so values are stored with shape ``(npanels, p, ...)``.
    """

    def __init__(self, breaks, p=16):
        self.breaks = np.asarray(breaks, dtype=float)
        if np.any(np.diff(self.breaks) <= 0):
            raise ValueError("panel breaks must be strictly increasing")
        self.p = p
        x, self._S = _cheb_rule(p)
        a, b = self.breaks[:-1], self.breaks[1:]
        self.half = 0.5 * (b - a)
        self.nodes = (0.5 * (a + b))[:, None] + self.half[:, None] * x[None, :]

    @classmethod
    def uniform(cls, a, b, npanels, p=16):
        return cls(np.linspace(a, b, npanels + 1), p)

    @property
    def flat_nodes(self):
        return self.nodes.ravel()

    def cumulative(self, values, initial=0.0):
        """Indefinite integral at every node; ``values`` shaped ``(npanels, p, ...)``."""
        v = np.asarray(values)
        local = np.einsum("ij,kj...->ki...", self._S, v)
        local = local * self.half.reshape((-1, 1) + (1,) * (v.ndim - 2))
        ends = local[:, -1]
        carry = np.cumsum(ends, axis=0) - ends
        return local + carry[:, None] + initial

    def integral(self, values):
        return self.cumulative(values)[-1, -1]

    def interpolate(self, values, x):
        """Evaluate the panel-wise Chebyshev interpolant of ``values`` at ``x``."""
        v = np.asarray(values)
        x = np.atleast_1d(np.asarray(x, dtype=float))
        idx = np.clip(np.searchsorted(self.breaks, x, side="right") - 1, 0, len(self.half) - 1)
        mid = 0.5 * (self.breaks[idx] + self.breaks[idx + 1])
        s = (x - mid) / self.half[idx]
        xr, _ = _cheb_rule(self.p)
        # barycentric weights for Chebyshev extreme points
        w = np.ones(self.p)
        w[1::2] = -1.0
        w[0] *= 0.5
        w[-1] *= 0.5
        diff = s[:, None] - xr[None, :]
        exact = np.isclose(diff, 0.0, atol=1e-15)
        diff[exact] = 1.0
        q = w[None, :] / diff
        tail = v.shape[2:]
        vals = v[idx]
        num = np.einsum("kj,kj...->k...", q, vals)
        den = q.sum(axis=1).reshape((-1,) + (1,) * len(tail))
        out = num / den
        hit = exact.any(axis=1)
        if np.any(hit):
            j = np.argmax(exact[hit], axis=1)
            out[hit] = vals[hit][np.arange(hit.sum()), j]
        return out


def geometric_breaks(a, b, per_decade=4, min_panels=2):
    """Panel breaks geometric in ``1 + t`` between ``a`` and ``b``."""
    la, lb = np.log10(1.0 + a), np.log10(1.0 + b)
    n = max(min_panels, int(np.ceil((lb - la) * per_decade)))
    return np.logspace(la, lb, n + 1) - 1.0
