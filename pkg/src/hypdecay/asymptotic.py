"""Pseudo-differential zone: the Fuchs-type form ``t D_t U = (Lambda + R~) U``,
the large-time principal symbol, the exponent mu, dichotomy conditions,
Levinson modes and the Hartman-Wintner reduction.

Most computations run in ``u = log t``, where the Fuchs system reads
``dU/du = i (Lambda + R~) U``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import integrate

from ._numerics import ChebPanels, dt_op
from .propagate import fundamental_solution
from .spectral import fix_phase
from .zones import ZoneConfig, separating_time, xi_norm


class LargeTimeError(ValueError):
    """No usable large-time principal symbol (divergent or non-diagonalisable limit)."""


@dataclass
class LargeTimeSymbol:
    """``Lambda(t)`` diagonal, ``Mtilde(t)`` invertible; ``limit_matrix`` when the route is constant."""

    Lambda: Callable
    Mtilde: Callable
    Mtilde_inv: Callable
    sigma: float
    limit_matrix: Optional[np.ndarray] = None
    route: str = "constant"
    constant_frame: bool = True
    condition: float = 1.0

    def mu(self, t):
        return np.diag(self.Lambda(t))


def _limit_ordering(vals):
    return np.lexsort((vals.real, vals.imag))


def _richardson_limit(f, t0, levels=8, rtol=1e-9):
    """Limit of ``f(t)`` as ``t -> inf`` assuming an expansion in ``1/t``."""
    ts = t0 * 2.0 ** np.arange(levels)
    vals = [np.asarray(f(t), dtype=complex) for t in ts]
    if not all(np.all(np.isfinite(v)) for v in vals):
        raise LargeTimeError("non-finite samples of t A(t, 0)")
    # Neville-type extrapolation in h = 1/t
    T = [vals]
    for m in range(1, levels):
        prev = T[-1]
        T.append([(2 ** m * prev[i + 1] - prev[i]) / (2 ** m - 1) for i in range(len(prev) - 1)])
    est = T[-1][0]
    scale = max(1.0, np.abs(est).max())
    diffs = [np.abs(a - b).max() / scale for a, b in zip(vals[1:], vals[:-1])]
    err = np.abs(T[-1][0] - T[-2][-1]).max() / scale
    if not (diffs[-1] < 1e-3 or diffs[-1] < 0.6 * diffs[0]) or err > 1e-4:
        raise LargeTimeError(f"t A(t, 0) does not converge (last increments {diffs[-3:]})")
    return est, err


def large_time_symbol(sym, horizon=(1.0, 1e6), sigma=None, probe_t=1e4, cond_max=1e8):
    """Large-time principal symbol from ``t A(t, 0)``.

    If ``t A(t, 0)`` is diagonal on the horizon it is used directly as
    ``Lambda(t)`` with ``Mtilde = I``. Otherwise ``A_inf = lim t A(t, 0)`` is
    extrapolated and diagonalised; eigenvalues are ordered by imaginary then
    real part.
    """
    sigma = sym.sigma if sigma is None else float(sigma)
    d = sym.dim
    zero = np.zeros(sym.n)
    ts = np.geomspace(max(horizon[0], 1.0), horizon[1], 25)
    samples = [t * sym.A(t, zero) for t in ts]
    offdiag = max(np.abs(S - np.diag(np.diag(S))).max() / max(1.0, np.abs(S).max()) for S in samples)
    I = np.eye(d, dtype=complex)
    if offdiag < 1e-13:
        return LargeTimeSymbol(
            lambda t: np.diag(np.diag(t * sym.A(t, zero))),
            lambda t: I,
            lambda t: I,
            sigma,
            None,
            "diagonal",
        )
    A_inf, _ = _richardson_limit(lambda t: t * sym.A(t, zero), probe_t)
    vals, vecs = np.linalg.eig(A_inf)
    order = _limit_ordering(vals)
    vals, vecs = vals[order], vecs[:, order]
    vecs = fix_phase(vecs / np.linalg.norm(vecs, axis=0))
    cond = np.linalg.cond(vecs)
    if not np.isfinite(cond) or cond > cond_max:
        raise LargeTimeError(f"A_inf is not diagonalisable (eigenvector condition {cond:.3g})")
    Lam = np.diag(vals)
    Minv = np.linalg.inv(vecs)
    return LargeTimeSymbol(lambda t: Lam, lambda t: vecs, lambda t: Minv, sigma, A_inf, "constant", True, float(cond))


def fuchs_residual(sym, lts, t, xi):
    """``R~ = t Mtilde^-1 A Mtilde - Lambda - (t D_t Mtilde^-1) Mtilde``."""
    M = lts.Mtilde(t)
    Minv = lts.Mtilde_inv(t)
    R = t * Minv @ sym.A(t, xi) @ M - lts.Lambda(t)
    if not lts.constant_frame:
        R = R - t * dt_op(lts.Mtilde_inv, t, t_min=1.0) @ M
    return R


def _log_panels(u0, u1, width=0.25, p=16):
    n = max(2, int(math.ceil((u1 - u0) / width)))
    return ChebPanels.uniform(u0, u1, n, p)


def integrability_profile(f, sigma, t_end, per_decade_width=0.25):
    """Cumulative ``int_1^t |f|^sigma dt/t`` at decade ends and the decay order of the increments.

    Returns ``(total, increments, p)`` where increments over successive decades
    are fitted as ``d_k ~ k^-p`` (``p = inf`` when they vanish or decay
    geometrically faster than any power over the sampled range).
    """
    U = math.log(t_end)
    panels = _log_panels(0.0, U, per_decade_width)
    vals = np.array([[np.linalg.norm(np.atleast_2d(f(math.exp(u))), 2) ** sigma for u in row] for row in panels.nodes])
    cum = panels.cumulative(vals)
    n_dec = int(math.floor(U / math.log(10)))
    edges = [0.0] + [k * math.log(10) for k in range(1, n_dec + 1)]
    if edges[-1] < U - 1e-12:
        edges.append(U)
    at = panels.interpolate(cum, edges)
    inc = np.diff(at)
    total = float(at[-1])
    p = math.inf
    k = np.arange(1, len(inc) + 1)
    tail = slice(len(inc) // 3, len(inc))
    ki, di = k[tail], inc[tail]
    if len(di) >= 2 and np.all(di > 1e-300) and di.max() > 1e-14 * max(total, 1e-300):
        p = -float(np.polyfit(np.log(ki), np.log(di), 1)[0])
    return total, inc, p


def sigma_integrability(res, sigma, xi_set, cfg=ZoneConfig(), horizon_end=1e8, p_min=1.2):
    """``sup_xi int_1^{t_xi} |R~(t, xi)|^sigma dt/t`` over ``xi`` with ``t_xi >= 1``.

    ``res(t, xi)`` evaluates the residual. For ``xi`` with ``t_xi`` beyond
    ``horizon_end`` (including ``xi = 0``) the integral is taken to
    ``horizon_end`` and reported as ``inf`` when its decade increments decay
    no faster than ``k^-p_min``.
    """
    if sigma < 1:
        raise ValueError("sigma must be >= 1")
    best = 0.0
    for xi in xi_set:
        t_xi = separating_time(xi, cfg)
        if t_xi < 1:
            continue
        end = min(t_xi, horizon_end)
        total, inc, p = integrability_profile(lambda t: res(t, xi), sigma, end)
        if end == horizon_end and len(inc) >= 4 and p <= p_min:
            return math.inf
        best = max(best, total)
    return best


@dataclass
class MuReport:
    mu_j: list
    mu: float
    horizon: tuple
    window_minima: list
    spread: float
    settled: bool
    window_trace: dict = field(default_factory=dict)


def _phase_integrals(lts, t_end, width=0.25):
    """Panels in ``u = log t`` and cumulative ``int_1^t mu_j dtau/tau``."""
    U = math.log(t_end)
    panels = _log_panels(0.0, U, width)
    vals = np.array([[np.diag(lts.Lambda(math.exp(u))) for u in row] for row in panels.nodes])
    return panels, panels.cumulative(vals)


def mu_exponent(lts, horizon=(1.0, 1e6), tol=0.05, n_windows=None):
    """Liminf approximation of ``Im int_1^t mu_j dtau/tau / log t``.

    The quotient is sampled over the last two decades of the horizon and
    minimised over dyadic windows; the spread of window minima is reported.
    """
    t_end = horizon[1]
    if t_end < 1e4:
        raise ValueError("horizon end must be at least 1e4")
    panels, cum = _phase_integrals(lts, t_end)
    t_lo = t_end / 100.0
    n_w = n_windows or int(round(math.log2(100.0)))
    edges = np.geomspace(t_lo, t_end, n_w + 1)
    minima = []
    for a, b in zip(edges[:-1], edges[1:]):
        ts = np.geomspace(a, b, 40)
        q = np.imag(panels.interpolate(cum, np.log(ts))) / np.log(ts)[:, None]
        minima.append(q.min(axis=0))
    minima = np.array(minima)
    mu_j = minima.min(axis=0)
    spread = float((minima.max(axis=0) - minima.min(axis=0)).max())
    return MuReport(
        [float(m) for m in mu_j],
        float(mu_j.min()),
        (float(horizon[0]), float(t_end)),
        minima.tolist(),
        spread,
        spread <= tol,
        {"window_edges": edges.tolist()},
    )


@dataclass
class DichotomyVerdict:
    kind: str  # "weak", "strong" or "failed"
    pair_evidence: dict
    delta: float
    flags: list = field(default_factory=list)


def dichotomy(lts, sigma, horizon=(1.0, 1e6), tol=0.05, delta_min=1e-6):
    """Weak (``sigma = 1``) or strong (``sigma > 1``) dichotomy on the sampled horizon.

    Weak: for each pair, ``D_ij(t) = Im int_1^t (mu_i - mu_j) dtau/tau`` must be
    bounded above or below: its max (or min) over the second half of the
    log-horizon may not exceed that of the first half by more than ``tol``.
    Strong: ``min |Im(mu_i - mu_j)| >= delta`` over the samples.
    """
    t_end = horizon[1]
    panels, cum = _phase_integrals(lts, t_end)
    U = math.log(t_end)
    u = np.linspace(0.0, U, 400)
    phases = np.imag(panels.interpolate(cum, u))
    d = phases.shape[1]
    half = u >= U / 2
    ev = {}
    weak_ok = True
    for i in range(d):
        for j in range(i + 1, d):
            D = phases[:, i] - phases[:, j]
            above = D[half].max() <= D[~half].max() + tol
            below = D[half].min() >= D[~half].min() - tol
            ev[f"{i},{j}"] = {"bounded_above": bool(above), "bounded_below": bool(below),
                              "min": float(D.min()), "max": float(D.max())}
            weak_ok &= above or below
    ts = np.exp(u)
    gaps = []
    for t in ts:
        mu = np.diag(lts.Lambda(t))
        diff = np.abs(np.imag(mu[:, None] - mu[None, :])) + np.where(np.eye(d, dtype=bool), np.inf, 0.0)
        gaps.append(diff.min())
    delta = float(np.min(gaps)) if d > 1 else math.inf
    if sigma <= 1:
        return DichotomyVerdict("weak" if weak_ok else "failed", ev, delta)
    if delta >= delta_min:
        return DichotomyVerdict("strong", ev, delta)
    flags = ["strong dichotomy unverified"]
    if weak_ok:
        flags.append("weak dichotomy holds")
    return DichotomyVerdict("failed", ev, delta, flags)


# ---------------------------------------------------------------------------
# Hartman-Wintner step


@dataclass
class HWResult:
    lts: LargeTimeSymbol
    residual: Callable  # t -> R~_1(t)
    Q: Callable  # t -> Q(t)
    sigma: float
    horizon: tuple


def hartman_wintner_step(lts, res, horizon=(1.0, 1e4), delta_min=1e-6, rtol=1e-12):
    """Conjugate ``t D_t U = (Lambda + R~) U`` by ``I + Q``.

    ``res(t)`` is the residual along the horizon (``xi`` fixed). ``Q`` is the
    bounded solution of ``dQ/du = i [Lambda, Q] + i R~_off`` (``u = log t``),
    found entrywise by integrating forward when ``Im(mu_i - mu_j) > 0`` and
    backward from the horizon end otherwise. The new system has
    ``Lambda_1 = Lambda + diag R~`` and ``R~_1 = (I + Q)^-1 (R~ Q - Q diag R~)``.
    """
    U0, U1 = math.log(horizon[0]), math.log(horizon[1])
    d = np.shape(lts.Lambda(horizon[0]))[0]
    mu0 = np.diag(lts.Lambda(horizon[0]))
    gaps = [abs((mu0[i] - mu0[j]).imag) for i in range(d) for j in range(d) if i != j]
    if gaps and min(gaps) < delta_min:
        raise ValueError(f"dichotomy gap {min(gaps):.3g} below {delta_min}: step refused")
    sols = {}
    for i in range(d):
        for j in range(d):
            if i == j:
                continue

            def f(u, q, i=i, j=j):
                t = math.exp(u)
                mu = np.diag(lts.Lambda(t))
                r = res(t)[i, j]
                z = complex(q[0], q[1])
                dz = 1j * (mu[i] - mu[j]) * z + 1j * r
                return [dz.real, dz.imag]

            forward = (mu0[i] - mu0[j]).imag > 0
            span = (U0, U1) if forward else (U1, U0)
            sol = integrate.solve_ivp(f, span, [0.0, 0.0], method="DOP853", dense_output=True,
                                      rtol=rtol, atol=1e-14)
            if sol.status != 0:
                raise RuntimeError(f"Q_{i}{j} integration failed: {sol.message}")
            sols[(i, j)] = sol.sol

    def Q(t):
        u = math.log(t)
        out = np.zeros((d, d), dtype=complex)
        for (i, j), s in sols.items():
            a, b = s(u)
            out[i, j] = complex(a, b)
        return out

    def Lambda1(t):
        return lts.Lambda(t) + np.diag(np.diag(res(t)))

    def res1(t):
        R = res(t)
        G = np.diag(np.diag(R))
        Qt = Q(t)
        return np.linalg.solve(np.eye(d) + Qt, R @ Qt - Qt @ G)

    new = LargeTimeSymbol(Lambda1, lts.Mtilde, lts.Mtilde_inv, max(lts.sigma / 2.0, 1.0), lts.limit_matrix,
                          lts.route + "+hw", lts.constant_frame, lts.condition)
    return HWResult(new, res1, Q, new.sigma, horizon)


def fuchs_solve(Lambda, res, t0, t1, Y0, rtol=1e-11):
    """Solve ``dY/du = i (Lambda + R~) Y`` from ``t0`` to ``t1`` (``u = log t``)."""
    Y0 = np.asarray(Y0, dtype=complex)
    d = Y0.shape[0]

    def f(u, y):
        t = math.exp(u)
        return (1j * (Lambda(t) + res(t)) @ y.reshape(d, -1)).ravel()

    sol = integrate.solve_ivp(f, (math.log(t0), math.log(t1)), Y0.ravel(), method="DOP853",
                              rtol=rtol, atol=1e-14)
    if sol.status != 0:
        raise RuntimeError(sol.message)
    return sol.y[:, -1].reshape(Y0.shape)


# ---------------------------------------------------------------------------
# Levinson modes


@dataclass
class AsymptoticBasis:
    times: np.ndarray
    modes: np.ndarray  # (ntimes, d, d); column j is the j-th mode in the Mtilde frame
    log_phases: np.ndarray  # (ntimes, d): i int_1^t mu_j dtau/tau
    convergence_defect: np.ndarray
    wronskian_defect: float
    wronskian_defect_asymptotic: float
    reconstruction_defect: float
    hadamard_ratio: float
    limit_vectors: np.ndarray


def levinson_modes(sym, lts, xi, horizon=(1.0, 1e4), cfg=ZoneConfig(), n_times=60, rtol=1e-11,
                   check_reconstruction=True):
    """Asymptotic solutions ``(v_j + o(1)) exp(i int_1^t mu_j dtau/tau)`` of the Fuchs system.

    The fundamental matrix ``Phi`` from ``t = 1`` is computed once; mode ``j``
    is the solution equal to ``e_j exp(i int_1^T mu_j)`` at the horizon end ``T``.
    ``convergence_defect[j]`` is the sup over the last decade of
    ``|mode_j / phase_j - e_j|``. The Wronskian is checked against the exact
    Liouville formula (trace of ``Lambda + R~``) and against the asymptotic
    value ``exp(i int sum mu_j)``; ``hadamard_ratio`` is the largest ratio of
    ``|E(t, 1)|`` to its Hadamard-Cramer bound built from the modes.
    """
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    T = horizon[1]
    if xi_norm(xi) > 0 and (1 + T) * xi_norm(xi) > cfg.N:
        raise ValueError("horizon leaves the pseudo-differential zone")
    d = sym.dim
    ts = np.geomspace(max(horizon[0], 1.0), T, n_times)
    us = np.log(ts)

    def res(t):
        return fuchs_residual(sym, lts, t, xi)

    def f(u, y):
        t = math.exp(u)
        return (1j * (lts.Lambda(t) + res(t)) @ y.reshape(d, d)).ravel()

    sol = integrate.solve_ivp(f, (us[0], us[-1]), np.eye(d, dtype=complex).ravel(), method="DOP853",
                              t_eval=us, rtol=rtol, atol=1e-14)
    if sol.status != 0 or not np.all(np.isfinite(sol.y)):
        raise RuntimeError(f"Fuchs system integration failed: {sol.message}")
    Phi = sol.y.T.reshape(-1, d, d)

    panels = _log_panels(us[0], us[-1])
    lam_vals = np.array([[np.diag(lts.Lambda(math.exp(u))) for u in row] for row in panels.nodes])
    tr_vals = np.array([[np.trace(lts.Lambda(math.exp(u)) + res(math.exp(u))) for u in row] for row in panels.nodes])
    logph = 1j * panels.interpolate(panels.cumulative(lam_vals), us)
    logtr = 1j * panels.interpolate(panels.cumulative(tr_vals), us)

    C = np.linalg.solve(Phi[-1], np.diag(np.exp(logph[-1])))
    modes = Phi @ C
    norm_modes = modes * np.exp(-logph)[:, None, :]
    tail = ts >= T / 10
    defect = np.array([np.abs(norm_modes[tail, :, j] - np.eye(d)[:, j]).max() for j in range(d)])

    dets = np.linalg.det(modes)
    exact = np.exp(logtr - logtr[-1] + logph[-1].sum())
    wr = float(np.abs(dets / exact - 1).max())
    asym = np.exp(logph.sum(axis=1))
    wr_asym = float(np.abs(dets[tail] / asym[tail] - 1).max())

    recon = math.nan
    had = math.nan
    if check_reconstruction:
        t_chk = ts[-1]
        E_rec = lts.Mtilde(t_chk) @ Phi[-1] @ lts.Mtilde_inv(ts[0])
        E_dir = fundamental_solution(sym, ts[0], t_chk, xi)
        recon = float(np.linalg.norm(E_rec - E_dir, 2) / np.linalg.norm(E_dir, 2))
        V1 = modes[0]
        cols = np.linalg.norm(V1, axis=0)
        inv_bound = d * np.prod(cols) / (cols.min() * abs(np.linalg.det(V1)))
        ratios = []
        for k in range(len(ts)):
            E = lts.Mtilde(ts[k]) @ Phi[k] @ lts.Mtilde_inv(ts[0])
            bound = (np.linalg.norm(lts.Mtilde(ts[k]), 2) * np.linalg.norm(modes[k], 2) * inv_bound
                     * np.linalg.norm(lts.Mtilde_inv(ts[0]), 2))
            ratios.append(np.linalg.norm(E, 2) / bound)
        had = float(max(ratios))
    limit = np.array([lts.Mtilde(T) @ norm_modes[-1, :, j] for j in range(d)]).T
    return AsymptoticBasis(ts, modes, logph, defect, wr, wr_asym, recon, had, limit)


# ---------------------------------------------------------------------------
# checks used by the theory


def holder_loss_check(r, sigma, t_values, t_end=None):
    """Compare ``int_1^t r dtau/tau`` with ``|r|_{L^sigma(dt/t)} (log t)^(1/sigma')``.

    Returns the largest value of ``lhs - rhs`` over ``t_values`` (non-positive
    when the bound holds) together with the norm used.
    """
    t_end = t_end or max(t_values)
    U = math.log(t_end)
    panels = _log_panels(0.0, U)
    vals = np.array([[r(math.exp(u)) for u in row] for row in panels.nodes])
    norm = float(panels.integral(np.abs(vals) ** sigma) ** (1.0 / sigma))
    cum = panels.cumulative(vals)
    inv_conj = 1.0 - 1.0 / sigma
    worst = -math.inf
    for t in t_values:
        lhs = float(np.real(panels.interpolate(cum, [math.log(t)])[0]))
        rhs = norm * math.log(t) ** inv_conj if t > 1 else 0.0
        worst = max(worst, lhs - rhs)
    return worst, norm


def pd_bound_ratios(sym, triples, mu, eps=0.0, tol=1e-10):
    """``|E(t, s, xi)| ((1+t)/(1+s))^(mu - eps)`` for each ``(s, t, xi)``."""
    out = []
    for s, t, xi in triples:
        E = fundamental_solution(sym, s, t, xi, tol)
        out.append(float(np.linalg.norm(E, 2) * ((1 + t) / (1 + s)) ** (mu - eps)))
    return np.array(out)


def pd_triples(xis, s_values, t_values, cfg=ZoneConfig()):
    """All ``(s, t, xi)`` with ``s < t`` inside the pseudo-differential zone."""
    out = []
    for xi in xis:
        xi = np.atleast_1d(np.asarray(xi, dtype=float))
        t_xi = separating_time(xi, cfg)
        for s in s_values:
            for t in t_values:
                if s < t <= t_xi:
                    out.append((float(s), float(t), xi))
    return out


def xi_derivative_bounds(sym, xis, mu, eps=0.05, cfg=ZoneConfig(), max_order=2, tol=1e-11):
    """``|d^a/d|xi|^a E(t_xi, 0, xi)| |xi|^a (1+t_xi)^(mu - eps)`` for ``a <= max_order``.

    Derivatives in ``|xi|`` (along the ray of ``xi``) with ``t = t_xi`` held fixed,
    by central differences of relative step ``1e-3``.
    """
    rows = []
    for xi in xis:
        xi = np.atleast_1d(np.asarray(xi, dtype=float))
        r = xi_norm(xi)
        w = xi / r
        t = separating_time(xi, cfg)
        hh = 1e-3 * r
        E = {k: fundamental_solution(sym, 0.0, t, (r + k * hh) * w, tol) for k in (-1, 0, 1)}
        derivs = [E[0], (E[1] - E[-1]) / (2 * hh), (E[1] - 2 * E[0] + E[-1]) / hh ** 2]
        rows.append([float(np.linalg.norm(derivs[a], 2) * r ** a * (1 + t) ** (mu - eps))
                     for a in range(max_order + 1)])
    return np.array(rows)
