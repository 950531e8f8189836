"""Fundamental solutions, Peano-Baker series, WKB factors, the hyperbolic-zone
product representation and power-law decay fits.

``E(t, s, xi)`` solves ``dE/dt = i A(t, xi) E`` with ``E(s, s, xi) = I``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
import numpy as np
from scipy import integrate

from ._numerics import ChebPanels, geometric_breaks
from .diagonalize import hierarchy
from .zones import ZoneConfig, in_hyp_zone, separating_time


class SolverError(RuntimeError):
    """Integration failed; ``t`` is the last time reached."""

    def __init__(self, msg, t=None):
        super().__init__(msg)
        self.t = t


def _rhs(sym, xi, d):
    def f(t, y):
        A = sym.A(t, xi)
        if not np.all(np.isfinite(A)):
            raise SolverError(f"non-finite symbol sample at t={t}", t)
        return (1j * A @ y.reshape(d, -1)).ravel()

    return f


def solve_path(sym, s, ts, xi, tol=1e-10, y0=None, max_steps=2_000_000):
    """Forward solve from ``s`` returning ``E(t, s, xi) @ y0`` at each ``t`` in ``ts``.

    ``ts`` must be non-decreasing and ``>= s``. ``y0`` defaults to the identity.
    """
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    d = sym.dim
    Y0 = np.eye(d, dtype=complex) if y0 is None else np.asarray(y0, dtype=complex)
    ts = np.asarray(ts, dtype=float)
    if ts.size and (ts.min() < s or np.any(np.diff(ts) < 0)):
        raise ValueError("times must be sorted and not before s")
    out = np.empty((ts.size,) + Y0.shape, dtype=complex)
    at_start = ts == s
    out[at_start] = Y0
    later = ts[~at_start]
    if later.size == 0:
        return out, {"nfev": 0}
    sol = integrate.solve_ivp(
        _rhs(sym, xi, d),
        (s, later[-1]),
        Y0.ravel(),
        method="DOP853",
        t_eval=later,
        rtol=tol,
        atol=tol * 1e-4,
    )
    if sol.status != 0:
        raise SolverError(f"integration failed at t={sol.t[-1] if sol.t.size else s}: {sol.message}",
                          sol.t[-1] if sol.t.size else s)
    if sol.nfev > max_steps:
        raise SolverError(f"step-count guard exceeded ({sol.nfev} evaluations); possible stiffness", later[-1])
    out[~at_start] = sol.y.T.reshape((later.size,) + Y0.shape)
    return out, {"nfev": int(sol.nfev)}


def fundamental_solution(sym, s, t, xi, tol=1e-10):
    """``E(t, s, xi)``; for ``t < s`` the inverse of the forward solve ``E(s, t, xi)``."""
    if tol < 1e-12:
        raise ValueError("tolerance below 1e-12 is not supported")
    if t >= s:
        return solve_path(sym, s, [t], xi, tol)[0][0]
    return np.linalg.inv(solve_path(sym, t, [s], xi, tol)[0][0])


@dataclass
class Propagator:
    """Convenience wrapper: ``E(t, s, xi)`` with a fixed model and tolerance."""

    sym: object
    tol: float = 1e-10
    stats: dict = field(default_factory=lambda: {"solves": 0})

    def E(self, t, s, xi):
        self.stats["solves"] += 1
        return fundamental_solution(self.sym, s, t, xi, self.tol)


def trace_integral(sym, s, t, xi):
    """``int_s^t trace A(tau, xi) dtau`` by adaptive quadrature."""
    def tr(tau, part):
        v = np.trace(sym.A(tau, xi))
        return v.real if part == 0 else v.imag

    re = integrate.quad(tr, s, t, args=(0,), limit=400, epsabs=1e-13, epsrel=1e-12)[0]
    im = integrate.quad(tr, s, t, args=(1,), limit=400, epsabs=1e-13, epsrel=1e-12)[0]
    return complex(re, im)


def liouville_defect(sym, E, s, t, xi):
    """``|det E - exp(i int trace A)| / |exp(i int trace A)|``."""
    ref = np.exp(1j * trace_integral(sym, s, t, xi))
    return float(abs(np.linalg.det(E) - ref) / abs(ref))


# ---------------------------------------------------------------------------
# Peano-Baker


@dataclass
class PeanoBakerResult:
    Q: np.ndarray
    terms_used: int
    tail_bound: float
    majorant: float
    refinements: int = 0


def _sample_kernel(kernel, nodes):
    flat = [np.asarray(kernel(float(x)), dtype=complex) for x in nodes.ravel()]
    return np.array(flat).reshape(nodes.shape + flat[0].shape)


def _pb_series(panels, K, tol, max_terms):
    d = K.shape[-1]
    norms = np.linalg.norm(K, ord=2, axis=(-2, -1))
    I = float(panels.integral(norms))
    if not math.isfinite(I) or I > 700:
        raise ValueError(f"Peano-Baker majorant diverges numerically (int |K| = {I:.3g})")
    eI = math.exp(I)
    Q = np.broadcast_to(np.eye(d, dtype=complex), K.shape).copy()
    term = Q.copy()
    partial = 1.0
    fact = 1.0
    for ell in range(1, max_terms + 1):
        term = 1j * panels.cumulative(np.einsum("...ij,...jk->...ik", K, term))
        Q = Q + term
        fact *= ell
        partial += I ** ell / fact
        tail = max(eI - partial, 0.0)
        if tail < tol or not np.any(term):
            return Q, ell + 1, tail, I
    raise ValueError(f"Peano-Baker series did not reach tolerance {tol} within {max_terms} terms (tail {tail:.3g})")


def peano_baker(kernel, s, t, tol=1e-10, max_terms=60, breaks=None, vectorized=False, refine=True, max_refine=8):
    """Sum the Peano-Baker series for ``D_t Q = K Q``, ``Q(s) = I``, on ``[s, t]``.

    Iterated integrals are accumulated spectrally on Chebyshev panels; with
    ``refine`` the panels are halved until two successive grids agree to
    ``tol``. The series stops once the exponential-majorant tail
    ``e^I - sum_{m <= l} I^m / m!`` with ``I = int |K|`` drops below ``tol``.
    """
    if t == s:
        d = np.shape(kernel(np.array([s])) if vectorized else kernel(s))[-1]
        return PeanoBakerResult(np.eye(d, dtype=complex), 1, 0.0, 0.0)
    if breaks is None:
        breaks = geometric_breaks(s, t, per_decade=4, min_panels=4) if s >= 0 else np.linspace(s, t, 5)
    breaks = np.asarray(breaks, dtype=float)

    def run(br):
        panels = ChebPanels(br, 16)
        if vectorized:
            K = np.asarray(kernel(panels.flat_nodes), dtype=complex)
            K = K.reshape(panels.nodes.shape + K.shape[1:])
        else:
            K = _sample_kernel(kernel, panels.nodes)
        Q, n, tail, I = _pb_series(panels, K, tol, max_terms)
        return Q[-1, -1], n, tail, I

    Q, n, tail, I = run(breaks)
    rounds = 0
    while refine and rounds < max_refine:
        mids = 0.5 * (breaks[:-1] + breaks[1:])
        breaks = np.sort(np.concatenate([breaks, mids]))
        Q2, n, tail, I = run(breaks)
        rounds += 1
        change = np.linalg.norm(Q2 - Q, 2)
        Q = Q2
        if change <= tol * max(1.0, np.linalg.norm(Q, 2)):
            break
    return PeanoBakerResult(Q, n, tail, I, rounds)


# ---------------------------------------------------------------------------
# hyperbolic-zone representation


@dataclass
class SymbolSamples:
    """Hierarchy data sampled on Chebyshev panels over ``[a, b]`` for spectral interpolation."""

    panels: ChebPanels
    lambdas: np.ndarray
    F: np.ndarray
    R: np.ndarray
    phase: np.ndarray  # int_a^t (lambda_j + F_jj)

    def at(self, t):
        return (
            self.panels.interpolate(self.lambdas, t),
            self.panels.interpolate(self.F, t),
            self.panels.interpolate(self.R, t),
            self.panels.interpolate(self.phase, t),
        )


def sample_hierarchy(sym, k, a, b, xi, per_decade=4, p=16, h=None):
    panels = ChebPanels(geometric_breaks(a, b, per_decade), p)
    lam, F, R = [], [], []
    for row in panels.nodes:
        lr, fr, rr = [], [], []
        for tau in row:
            smp = hierarchy(sym, tau, xi, k, h, check=False)
            lr.append(smp.lambdas)
            fr.append(smp.F)
            rr.append(smp.R)
        lam.append(lr)
        F.append(fr)
        R.append(rr)
    lam, F, R = np.array(lam, dtype=complex), np.array(F), np.array(R)
    phase = panels.cumulative(lam + F)
    return SymbolSamples(panels, lam, F, R, phase)


def wkb_factor(sym, k, s, t, xi, h=None):
    """``diag exp(i int_s^t (lambda_j + (F_{k-1})_jj))`` by adaptive quadrature per entry."""
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    d = sym.dim
    out = np.zeros(d, dtype=complex)
    for j in range(d):
        def f(tau, part):
            smp = hierarchy(sym, tau, xi, k, h, check=False)
            v = smp.lambdas[j] + smp.F[j]
            return v.real if part == 0 else v.imag

        re = integrate.quad(f, s, t, args=(0,), limit=400, epsabs=1e-12, epsrel=1e-12)[0]
        im = integrate.quad(f, s, t, args=(1,), limit=400, epsabs=1e-12, epsrel=1e-12)[0]
        out[j] = np.exp(1j * complex(re, im))
    return np.diag(out)


@dataclass
class ProductReport:
    k: int
    t: float
    t_xi: float
    xi: list
    E_product: np.ndarray
    E_direct: np.ndarray
    deviation: float
    pb_terms: int
    pb_tail: float
    Q_norm: float


def _oscillation_breaks(coarse, rate, max_phase=2.0):
    out = [coarse[0]]
    for a, b in zip(coarse[:-1], coarse[1:]):
        m = max(1, int(math.ceil(rate * (b - a) / max_phase)))
        out.extend(np.linspace(a, b, m + 1)[1:])
    return np.array(out)


def product_representation(sym, k, t, xi, cfg=ZoneConfig(), tol=1e-10, h=None):
    """Compare ``M N E~ Q N^-1(t_xi) M^-1(t_xi)`` against the direct ``E(t, t_xi, xi)``.

    ``Q`` comes from the Peano-Baker series for ``D_t Q = E~^-1 R_k E~ Q``.
    Smooth symbol data are sampled once on coarse panels and interpolated to
    a grid that resolves the phase differences ``lambda_i - lambda_j``.
    """
    if k < 1:
        raise ValueError("product representation needs k >= 1")
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    t0 = separating_time(xi, cfg)
    if not np.isfinite(t0) or not in_hyp_zone(t, xi, cfg) or t <= t0:
        raise ValueError(f"(t={t}, xi={xi.tolist()}) must lie in the hyperbolic zone beyond t_xi")
    smp = sample_hierarchy(sym, k, t0, t, xi, h=h)
    lam_spread = np.ptp(smp.lambdas.real, axis=-1).max()
    fine = _oscillation_breaks(smp.panels.breaks, lam_spread)

    def kernel(taus):
        _, _, R, ph = smp.at(taus)
        e = np.exp(1j * ph)
        return (1.0 / e)[:, :, None] * R * e[:, None, :]

    pb = peano_baker(kernel, t0, t, tol, breaks=fine, vectorized=True, refine=False)
    start = hierarchy(sym, t0, xi, k, h, check=False)
    end = hierarchy(sym, t, xi, k, h, check=False)
    phase_t = smp.at([t])[3][0]
    Et = np.diag(np.exp(1j * phase_t))
    Ep = end.M @ end.product @ Et @ pb.Q @ np.linalg.inv(start.product) @ start.M_inv
    Ed = fundamental_solution(sym, t0, t, xi, tol)
    dev = float(np.linalg.norm(Ep - Ed, 2) / np.linalg.norm(Ed, 2))
    return ProductReport(k, float(t), float(t0), xi.tolist(), Ep, Ed, dev, pb.terms_used, pb.tail_bound,
                         float(np.linalg.norm(pb.Q, 2)))


# ---------------------------------------------------------------------------
# decay fits


@dataclass
class DecayFit:
    exponent: float
    intercept: float
    window: tuple
    residual: float
    reliable: bool
    times: np.ndarray = field(repr=False, default=None)
    values: np.ndarray = field(repr=False, default=None)


def fit_power_law(ts, values, window=None):
    """Least-squares slope of ``log values`` against ``log(1 + t)`` on ``window``."""
    ts = np.asarray(ts, dtype=float)
    values = np.asarray(values, dtype=float)
    sel = np.ones(ts.size, dtype=bool) if window is None else (ts >= window[0]) & (ts <= window[1])
    if sel.sum() < 8:
        raise ValueError(f"decay fit needs at least 8 points in the window, got {int(sel.sum())}")
    x = np.log1p(ts[sel])
    y = np.log(values[sel])
    slope, icpt = np.polyfit(x, y, 1)
    res = float(np.abs(y - (slope * x + icpt)).max())
    win = (float(ts[sel].min()), float(ts[sel].max()))
    return DecayFit(float(slope), float(icpt), win, res, res <= 0.5, ts[sel], values[sel])


def decay_fit(sym, xi, t_grid, component=None, weights=None, window=None, s=0.0, tol=1e-10):
    """Fit the power-law exponent of ``|E(t, s, xi)|`` (spectral norm) in ``1 + t``.

    ``weights`` replaces ``E`` by the vector ``E @ weights``; ``component``
    restricts to one row (the norm of that row, or the modulus of that entry
    when ``weights`` is given).
    """
    t_grid = np.asarray(t_grid, dtype=float)
    if t_grid.size < 8:
        raise ValueError(f"decay fit needs at least 8 grid points, got {t_grid.size}")
    lo = t_grid.min()
    span = t_grid.max() / lo if lo > 0 else 1 + t_grid.max()
    if span < 99.999:
        raise ValueError("time grid must span at least two decades")
    y0 = None if weights is None else np.asarray(weights, dtype=complex)
    Es, _ = solve_path(sym, s, t_grid, xi, tol, y0=y0)
    if component is None:
        vals = np.array([np.linalg.norm(E, 2) if E.ndim == 2 else np.linalg.norm(E) for E in Es])
    else:
        vals = np.array([np.linalg.norm(np.atleast_1d(E[component])) for E in Es])
    return fit_power_law(t_grid, vals, window)
