"""Eigenstructure of the principal symbol: tracked eigenvalues, the diagonaliser
``M``, the subprincipal symbol ``F0`` and envelope estimates of kappa+-.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from ._numerics import ChebPanels, dt_op, geometric_breaks
from .zones import ZoneConfig, separating_time, xi_norm

PHASE_TIE = 1e-8


class HyperbolicityError(ValueError):
    """Eigenvalues collide or leave the real axis; carries the witness ``(t, xi)``."""

    def __init__(self, msg, t=None, xi=None):
        super().__init__(msg)
        self.t = t
        self.xi = xi


def fix_phase(M):
    """Scale each column so that its largest-modulus entry is real positive (lowest index on ties)."""
    M = np.array(M, dtype=complex)
    for j in range(M.shape[1]):
        col = M[:, j]
        mod = np.abs(col)
        i = int(np.argmax(mod >= (1.0 - PHASE_TIE) * mod.max()))
        M[:, j] = col * (abs(col[i]) / col[i])
    return M


def eig_frame(A_hom, prev_lambdas=None):
    """Eigenvalues and unit, phase-fixed eigenvectors of ``A_hom``.

    Without ``prev_lambdas`` the order is by real part; with it the labels are
    assigned to minimise the total eigenvalue displacement.
    """
    lam, V = np.linalg.eig(A_hom)
    if prev_lambdas is None:
        order = np.lexsort((lam.imag, lam.real))
    else:
        cost = np.abs(np.asarray(prev_lambdas)[:, None] - lam[None, :])
        _, order = linear_sum_assignment(cost)
    lam, V = lam[order], V[:, order]
    V = V / np.linalg.norm(V, axis=0)
    return lam, fix_phase(V)


@dataclass
class SpectralFrame:
    """Eigen-data sampled along a path of ``(t, xi)`` points."""

    samples: list
    lambdas: np.ndarray
    M: np.ndarray
    M_inv: np.ndarray
    gap: float
    residual: float = 0.0
    extra: dict = field(default_factory=dict)


def spectral_frame(sym, path, gap_tol=1e-8):
    """Track eigenvalues and diagonalisers of ``A_hom`` along ``path``.

    Raises :class:`HyperbolicityError` on eigenvalue collision or non-real
    eigenvalues, with the offending sample.
    """
    lams, Ms, Minvs = [], [], []
    gap = np.inf
    worst_res = 0.0
    prev = None
    for t, xi in path:
        r = xi_norm(xi)
        if r == 0:
            raise HyperbolicityError("spectral frame needs xi != 0", t, xi)
        Ah = sym.A_hom(t, xi)
        lam, M = eig_frame(Ah, prev)
        if np.any(np.abs(lam.imag) > 1e-10 * max(1.0, np.abs(lam).max())):
            raise HyperbolicityError(f"non-real eigenvalue {lam} at t={t}, xi={xi}", t, xi)
        lam = lam.real
        d = len(lam)
        diffs = np.abs(lam[:, None] - lam[None, :])
        g = np.min(np.where(np.eye(d, dtype=bool), np.inf, diffs)) / r
        if g < gap_tol:
            raise HyperbolicityError(f"eigenvalue collision (gap {g:.3g}|xi|) at t={t}, xi={xi}", t, xi)
        gap = min(gap, g)
        Minv = np.linalg.inv(M)
        res = np.linalg.norm(Minv @ Ah @ M - np.diag(lam)) / max(np.linalg.norm(Ah), 1e-300)
        worst_res = max(worst_res, res)
        lams.append(lam)
        Ms.append(M)
        Minvs.append(Minv)
        prev = lam
    return SpectralFrame(list(path), np.array(lams), np.array(Ms), np.array(Minvs), float(gap), float(worst_res))


def frame_at(sym, t, xi):
    """``(lambdas, M, M_inv)`` at one point with the default ordering and phase."""
    lam, M = eig_frame(sym.A_hom(t, xi))
    return lam.real, M, np.linalg.inv(M)


def zeroth_remainder(sym, t, xi, h=None):
    """``R0 = M^-1 (A - A_hom) M + (D_t M^-1) M`` at ``(t, xi)``."""
    _, M, Minv = frame_at(sym, t, xi)
    dMinv = dt_op(lambda s: frame_at(sym, s, xi)[2], t, h=h, t_min=0.0)
    return Minv @ sym.lower_order(t, xi) @ M + dMinv @ M


def subprincipal(sym, t, xi, h=None):
    """``F0(t, xi)``: the diagonal of :func:`zeroth_remainder`, as a diagonal matrix."""
    return np.diag(np.diag(zeroth_remainder(sym, t, xi, h)))


@dataclass
class KappaEstimate:
    kappa_plus: float
    kappa_minus: float
    C_plus: float
    C_minus: float
    witness_plus: tuple
    witness_minus: tuple
    raw_slope_min: float
    raw_slope_max: float
    per_branch: list = field(default_factory=list)


def kappa_grid(xis, cfg=ZoneConfig(), t_max=1e3, n_s=4, n_t=6):
    """Sample triples ``(s, t, xi)`` with ``t_xi <= s < t <= t_max``."""
    out = []
    for xi in xis:
        t0 = separating_time(xi, cfg)
        if not np.isfinite(t0) or t0 >= t_max:
            continue
        s_vals = np.geomspace(1 + t0, (1 + t_max) / 10, n_s) - 1
        for s in s_vals:
            for t in np.geomspace((1 + s) * 1.5, 1 + t_max, n_t) - 1:
                out.append((float(s), float(t), np.atleast_1d(np.asarray(xi, dtype=float))))
    return out


def _envelope(L, I, lower, bins=8):
    """Least-squares line through the per-bin extreme points of ``I`` against ``L``."""
    edges = np.linspace(L.min(), L.max(), bins + 1)
    idx = np.clip(np.searchsorted(edges, L, side="right") - 1, 0, bins - 1)
    xs, ys = [], []
    for b in range(bins):
        sel = idx == b
        if np.any(sel):
            k = np.argmin(I[sel]) if lower else np.argmax(I[sel])
            xs.append(L[sel][k])
            ys.append(I[sel][k])
    if len(xs) < 2:
        slope = float(np.median(I / L))
        return slope, 0.0
    slope, icpt = np.polyfit(xs, ys, 1)
    return float(slope), float(icpt)


def _cumulative_F(sym, xi, a, b, h, per_decade):
    """Panel nodes and cumulative ``Im int_a F0_jj`` on geometric Chebyshev panels."""
    panels = ChebPanels(geometric_breaks(a, b, per_decade), 16)
    vals = np.array([[np.imag(np.diag(zeroth_remainder(sym, tau, xi, h))) for tau in row] for row in panels.nodes])
    return panels, panels.cumulative(vals)


def estimate_kappa(sym, cfg=ZoneConfig(), grid=None, xis=None, t_max=1e3, h=None, tol=1e-6):
    """Envelope estimate of the constants in ``k+ L + C+ <= Im int_s^t F0_jj <= k- L + C-``.

    ``L = log((1+t)/(1+s))``. For each ``xi`` the integral is accumulated once
    from ``t_xi`` on spectral panels and checked against a coarser panel set.
    """
    if grid is None:
        grid = kappa_grid(xis if xis is not None else [np.ones(sym.n)], cfg, t_max)
    if not grid:
        raise ValueError("empty kappa grid")
    d = sym.dim
    by_xi = {}
    for s, t, xi in grid:
        if s < separating_time(xi, cfg) - 1e-12 or t < s:
            raise ValueError(f"sample (s={s}, t={t}, xi={xi}) outside t >= s >= t_xi")
        by_xi.setdefault(tuple(np.atleast_1d(xi)), []).append((s, t))
    Ls, Is, wits = [], [], []
    for key, pairs in by_xi.items():
        xi = np.array(key)
        a = min(p[0] for p in pairs)
        b = max(p[1] for p in pairs)
        fine, cf = _cumulative_F(sym, xi, a, b, h, 6)
        coarse, cc = _cumulative_F(sym, xi, a, b, h, 3)
        for s, t in pairs:
            v = fine.interpolate(cf, [t])[0] - fine.interpolate(cf, [s])[0]
            w = coarse.interpolate(cc, [t])[0] - coarse.interpolate(cc, [s])[0]
            err = np.max(np.abs(v - w))
            if not np.all(np.isfinite(v)) or err > tol * max(1.0, np.max(np.abs(v))):
                raise ValueError(f"quadrature failure at (s={s}, t={t}, xi={xi.tolist()}): error {err:.3g}")
            Ls.append(np.log((1 + t) / (1 + s)))
            Is.append(v)
            wits.append((s, t, xi.tolist()))
    L = np.array(Ls)
    I = np.array(Is)
    per = []
    for j in range(d):
        lo = _envelope(L, I[:, j], True)
        hi = _envelope(L, I[:, j], False)
        per.append({"lower": lo, "upper": hi})
    jp = int(np.argmin([p["lower"][0] for p in per]))
    jm = int(np.argmax([p["upper"][0] for p in per]))
    kp, Cp = per[jp]["lower"]
    km, Cm = per[jm]["upper"]
    # finite data can make the two envelopes cross; the lower rate cannot exceed the upper
    kp = min(kp, km)
    ratios = I / L[:, None]
    ip = np.unravel_index(np.argmin(ratios), ratios.shape)[0]
    im = np.unravel_index(np.argmax(ratios), ratios.shape)[0]
    return KappaEstimate(kp, km, Cp, Cm, wits[ip], wits[im], float(ratios.min()), float(ratios.max()), per)
