"""Hyperbolic-zone diagonalisation hierarchy and numerical symbol-class fits.

Starting from ``D_t V = (D + R0) V`` in the eigenbasis of ``A_hom``, each step
conjugates by ``I + N`` with ``N_ij = R_ij / (lambda_j - lambda_i)`` (off the
diagonal), moving the diagonal of the remainder into the cumulative ``F`` and
leaving a remainder one order better in both ``|xi|`` and ``1 + t``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from ._numerics import dt_op
from .spectral import frame_at, zeroth_remainder
from .zones import ZoneConfig, in_hyp_zone, xi_norm

MAX_STEPS = 3


class ZoneTooSmallError(ValueError):
    """The correction ``N`` is not small enough for ``I + N`` to be safely invertible."""


@dataclass
class DiagSample:
    """All hierarchy data at one point ``(t, xi)`` for a fixed number of steps ``k``."""

    lambdas: np.ndarray
    M: np.ndarray
    M_inv: np.ndarray
    R0: np.ndarray
    corrections: list  # off-diagonal N of each step
    F: np.ndarray  # cumulative diagonal, as a vector (F_{k-1})
    R: np.ndarray  # remainder R_k

    @property
    def product(self):
        d = len(self.lambdas)
        P = np.eye(d, dtype=complex)
        for N in self.corrections:
            P = P @ (np.eye(d) + N)
        return P


def _quotient(R, lam):
    diff = lam[None, :] - lam[:, None]
    np.fill_diagonal(diff, 1.0)
    N = R / diff
    np.fill_diagonal(N, 0.0)
    return N


def _correction(sym, t, xi, level, h):
    s = hierarchy(sym, t, xi, level, h, check=False)
    return _quotient(s.R, s.lambdas)


def hierarchy(sym, t, xi, k, h=None, check=True):
    """Evaluate ``k`` diagonalisation steps at ``(t, xi)``.

    ``D_t N`` is taken with nested fourth-order differences (step ``1e-3 (1+t)``
    by default), so the cost grows by a factor of about five per step.
    """
    if k < 0 or k > MAX_STEPS:
        raise ValueError(f"k must lie in 0..{MAX_STEPS}, got {k}")
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    if k == 0:
        lam, M, Minv = frame_at(sym, t, xi)
        R0 = zeroth_remainder(sym, t, xi, h)
        return DiagSample(lam, M, Minv, R0, [], np.zeros(len(lam), dtype=complex), R0)
    prev = hierarchy(sym, t, xi, k - 1, h, check)
    d = len(prev.lambdas)
    N = _quotient(prev.R, prev.lambdas)
    if check and np.linalg.norm(N, 2) >= 1:
        raise ZoneTooSmallError(
            f"step {k}: |N| = {np.linalg.norm(N, 2):.3g} >= 1 at t={t}, xi={xi.tolist()}; increase the zone constant N"
        )
    G = np.diag(np.diag(prev.R))
    Fk = np.diag(prev.F) + G
    Roff = prev.R - G
    DtN = dt_op(lambda s: _correction(sym, s, xi, k - 1, h), t, h=h, t_min=0.0)
    rhs = Fk @ N - N @ Fk + Roff @ N - DtN
    R = np.linalg.solve(np.eye(d) + N, rhs)
    return DiagSample(prev.lambdas, prev.M, prev.M_inv, prev.R0, prev.corrections + [N], np.diag(Fk), R)


@dataclass
class DiagStep:
    """Callables ``(t, xi) -> matrix`` for the ``k``-step hierarchy.

    ``N`` is the cumulative product ``N_1 ... N_k``; ``F_prev`` is the
    cumulative diagonal ``F_{k-1}``; ``R`` is the remainder ``R_k``.
    """

    k: int
    N: Callable
    N_inv: Callable
    F_prev: Callable
    R: Callable
    max_correction: float


def diag_step(sym, k, samples=(), cfg=ZoneConfig(), h=None):
    """Build the ``k``-step hierarchy, validating ``samples`` (pairs ``(t, xi)``).

    Samples must lie in the hyperbolic zone; every correction must have norm
    below one there, otherwise :class:`ZoneTooSmallError` is raised.
    """
    if not 1 <= k <= MAX_STEPS:
        raise ValueError(f"k must lie in 1..{MAX_STEPS}, got {k}")
    worst = 0.0
    for t, xi in samples:
        if not in_hyp_zone(t, xi, cfg):
            raise ValueError(f"sample t={t}, xi={np.asarray(xi).tolist()} is not in the hyperbolic zone")
        s = hierarchy(sym, t, xi, k, h)
        worst = max(worst, max(np.linalg.norm(N, 2) for N in s.corrections))

    def N(t, xi):
        return hierarchy(sym, t, xi, k, h, check=False).product

    return DiagStep(
        k,
        N,
        lambda t, xi: np.linalg.inv(N(t, xi)),
        lambda t, xi: np.diag(hierarchy(sym, t, xi, k, h, check=False).F),
        lambda t, xi: hierarchy(sym, t, xi, k, h, check=False).R,
        worst,
    )


def identity_residual(sym, k, t, xi, h=None):
    """Relative residual of ``(D_t - D - R0) N = N (D_t - D - F_{k-1} - R_k)``.

    Returned as the operator-norm defect divided by ``|A(t, xi)|``.
    """
    s = hierarchy(sym, t, xi, k, h, check=False)
    P = s.product
    DtP = dt_op(lambda u: hierarchy(sym, u, xi, k, h, check=False).product, t, h=h, t_min=0.0)
    D = np.diag(s.lambdas)
    F = np.diag(s.F)
    res = DtP - D @ P - s.R0 @ P + P @ D + P @ F + P @ s.R
    return float(np.linalg.norm(res, 2) / max(np.linalg.norm(sym.A(t, xi), 2), 1e-300))


@dataclass
class ClassFit:
    """Fit ``|a(t, xi)| ~ C |xi|^m1 (1+t)^(-m2)``."""

    m1: float
    m2: float
    C: float
    residual: float
    region: str
    n_points: int


def fit_symbol_class(sampler, grid, cfg=ZoneConfig(), region="hyp"):
    """Log-log regression of ``|sampler(t, xi)|`` against ``|xi|`` and ``1 + t``.

    ``grid`` is a sequence of ``(t, xi)``; points outside ``region`` (``"hyp"``,
    ``"pd"`` or ``"all"``) are dropped. The grid must span two decades in both
    variables. ``C`` is the smallest constant making the fitted form an upper
    bound on the samples.
    """
    pts = []
    for t, xi in grid:
        if region == "hyp" and not in_hyp_zone(t, xi, cfg):
            continue
        if region == "pd" and in_hyp_zone(t, xi, cfg) and not (1 + t) * xi_norm(xi) == cfg.N:
            continue
        v = np.linalg.norm(np.atleast_2d(sampler(t, xi)), 2)
        if v > 0 and np.isfinite(v):
            pts.append((np.log(xi_norm(xi)), np.log1p(t), np.log(v)))
    if len(pts) < 4:
        raise ValueError("too few usable samples for a class fit")
    P = np.array(pts)
    span_xi = (P[:, 0].max() - P[:, 0].min()) / np.log(10)
    span_t = (P[:, 1].max() - P[:, 1].min()) / np.log(10)
    if span_xi < 2 - 1e-9 or span_t < 2 - 1e-9:
        raise ValueError(f"degenerate grid: spans {span_xi:.2f} decades in |xi| and {span_t:.2f} in 1+t; need 2")
    X = np.column_stack([np.ones(len(P)), P[:, 0], -P[:, 1]])
    coef, *_ = np.linalg.lstsq(X, P[:, 2], rcond=None)
    c, m1, m2 = coef
    dev = P[:, 2] - X @ coef
    return ClassFit(float(m1), float(m2), float(np.exp(c + dev.max())), float(np.abs(dev).max()), region, len(P))


def class_grid(xi_range=(2.0, 200.0), t_range=(9.0, 999.0), n=6, direction=None):
    """Tensor grid geometric in ``|xi|`` and ``1 + t``."""
    w = np.array([1.0]) if direction is None else np.asarray(direction, dtype=float) / np.linalg.norm(direction)
    xs = np.geomspace(*xi_range, n)
    ts = np.geomspace(1 + t_range[0], 1 + t_range[1], n) - 1
    return [(float(t), x * w) for x in xs for t in ts]
