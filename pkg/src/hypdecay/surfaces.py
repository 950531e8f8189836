"""Slowness surfaces of time-averaged eigenvalues and their contact indices.

``theta_j(t, xi) = (1/t) int_0^t lambda_j(tau, xi) dtau`` is positively
homogeneous of degree one in ``xi``, so its unit level set is the radial graph
``r(omega) = 1 / theta_j(t, omega)``. Contact indices come from local graphs
``h`` of the surface over its tangent plane, ``p + rho w + h(rho) nu``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import integrate, optimize

from .models import Family
from .zones import xi_norm

GAP_TOL = 1e-8


class TrackingError(ValueError):
    def __init__(self, msg, tau=None):
        super().__init__(msg)
        self.tau = tau


def _sorted_real_eigs(A, xi_len, tau):
    lam = np.linalg.eigvals(A)
    lam = np.sort(lam.real, axis=-1)
    if lam.shape[-1] > 1:
        gap = np.min(np.diff(lam, axis=-1), axis=-1)
        if np.any(gap < GAP_TOL * np.asarray(xi_len)):
            raise TrackingError(f"eigenvalue crossing near tau={tau}", tau)
    return lam


def theta(sym, t, j, xi):
    """``theta_j(t, xi)`` by adaptive quadrature; branches are labelled by ascending value."""
    if t <= 0:
        raise ValueError("theta needs t > 0")
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    r = xi_norm(xi)
    if r == 0:
        raise ValueError("theta needs xi != 0")

    def lam(tau):
        return _sorted_real_eigs(sym.A_hom(tau, xi), r, tau)[j]

    v, err = integrate.quad(lam, 0.0, t, limit=400, epsabs=1e-13, epsrel=1e-13)
    return v / t


def _gauss_nodes(t, per_decade=8, order=10):
    """Composite Gauss-Legendre nodes/weights on ``[0, t]``, geometric in ``1 + tau``."""
    nd = max(2, int(math.ceil(math.log10(1 + t) * per_decade)))
    edges = np.logspace(0, math.log10(1 + t), nd + 1) - 1
    x, w = np.polynomial.legendre.leggauss(order)
    a, b = edges[:-1, None], edges[1:, None]
    nodes = 0.5 * (a + b) + 0.5 * (b - a) * x
    weights = 0.5 * (b - a) * w
    return nodes.ravel(), weights.ravel()


def model_phase(sym, t, j):
    """Vectorised ``xi -> theta_j(t, xi)`` for arrays of shape ``(..., n)``.

    Uses a fixed composite Gauss rule in ``tau``; first-order differential
    models are evaluated in batch from their coefficient matrices.
    """
    nodes, weights = _gauss_nodes(t)
    coeffs = sym.params.get("A") if sym.family == Family.FIRST_ORDER else None
    if coeffs is not None:
        mats = np.array([[np.asarray(f(tau), dtype=complex) for f in coeffs] for tau in nodes])

    def phase(X):
        X = np.asarray(X, dtype=float)
        shape = X.shape[:-1]
        Xf = X.reshape(-1, X.shape[-1])
        norms = np.linalg.norm(Xf, axis=1)
        acc = np.zeros(len(Xf))
        for q, (tau, w) in enumerate(zip(nodes, weights)):
            if coeffs is not None:
                A = np.einsum("mi,ikl->mkl", Xf, mats[q])
            else:
                A = np.array([sym.A_hom(tau, x) for x in Xf])
            acc += w * _sorted_real_eigs(A, norms, tau)[:, j]
        return (acc / t).reshape(shape)

    return phase


@dataclass
class SlownessSurface:
    """Radial samples ``r(omega)`` of ``{theta = 1}``; ``phase`` is the level function's source."""

    n: int
    directions: np.ndarray
    radii: np.ndarray
    empty: np.ndarray
    phase: Callable
    t: Optional[float] = None
    j: Optional[int] = None
    angles: Optional[np.ndarray] = None
    resolution_deg: float = 0.5
    continuous: bool = True
    level_error: float = 0.0

    @property
    def points(self):
        return self.directions * self.radii[:, None]


def fibonacci_sphere(m):
    k = np.arange(m) + 0.5
    z = 1 - 2 * k / m
    phi = math.pi * (1 + 5 ** 0.5) * k
    s = np.sqrt(1 - z * z)
    return np.column_stack([s * np.cos(phi), s * np.sin(phi), z])


def slowness_surface(source, t=None, j=0, n=2, resolution_deg=0.5, n_points=200, polish_tol=1e-14):
    """Sample ``{theta_j(t, .) = 1}`` radially.

    ``source`` is a model (then ``t`` and ``j`` select the averaged branch) or
    a vectorised phase callable on arrays ``(..., n)``. For ``n = 2`` the
    directions are a uniform angular grid of step ``resolution_deg``; for
    ``n = 3`` a Fibonacci lattice of ``n_points``. Initial radii use
    homogeneity and are polished by fixed-point sweeps, falling back to
    bracketed root finding where those stall.
    """
    if n not in (2, 3):
        raise ValueError("surfaces are supported for n = 2 and n = 3")
    if callable(source) and not hasattr(source, "eval_full"):
        phase = source
    else:
        if t is None:
            raise ValueError("a model source needs the time t")
        if source.n != n:
            raise ValueError(f"model has n = {source.n}, surface requested for n = {n}")
        phase = model_phase(source, t, j)
    if n == 2:
        m = int(round(360.0 / resolution_deg))
        angles = 2 * math.pi * np.arange(m) / m
        dirs = np.column_stack([np.cos(angles), np.sin(angles)])
    else:
        angles = None
        dirs = fibonacci_sphere(n_points)
    vals = np.asarray(phase(dirs), dtype=float)
    empty = ~(vals > 0)
    radii = np.full(len(dirs), np.nan)
    radii[~empty] = 1.0 / vals[~empty]
    ok = ~empty
    # bracket check, then homogeneity-based fixed-point sweeps on all directions at once
    glo = phase(0.5 * radii[ok, None] * dirs[ok]) - 1.0
    ghi = phase(2.0 * radii[ok, None] * dirs[ok]) - 1.0
    bad = np.flatnonzero(ok)[glo * ghi > 0]
    empty[bad] = True
    radii[bad] = np.nan
    ok = ~empty
    for _ in range(3):
        g = phase(radii[ok, None] * dirs[ok]) - 1.0
        if np.all(np.abs(g) <= polish_tol):
            break
        radii[ok] = radii[ok] / (1.0 + g)
    g = phase(radii[ok, None] * dirs[ok]) - 1.0
    for i in np.flatnonzero(ok)[np.abs(g) > polish_tol]:
        w = dirs[i]
        f = lambda r, w=w: float(phase(r * w[None, :])[0]) - 1.0  # noqa: E731
        radii[i] = optimize.brentq(f, 0.5 * radii[i], 2.0 * radii[i], xtol=1e-15, rtol=4 * np.finfo(float).eps)
    level = np.abs(np.asarray(phase(dirs[~empty] * radii[~empty, None])) - 1.0)
    cont = True
    if n == 2 and not np.any(empty):
        ratio = radii / np.roll(radii, 1)
        cont = bool(np.all((ratio >= 0.5) & (ratio <= 2.0)))
    return SlownessSurface(n, dirs, radii, empty, phase, t, j, angles, resolution_deg, cont,
                           float(level.max()) if level.size else 0.0)


def _trig_level(surface):
    """Level function ``|xi| / r~(angle) - 1`` from the trigonometric interpolant of ``r``."""
    r = surface.radii
    m = len(r)
    c = np.fft.fft(r) / m
    k = np.fft.fftfreq(m, 1.0 / m)
    if m % 2 == 0:
        # split the Nyquist mode symmetrically so the interpolant is real
        c = np.append(c, c[m // 2] / 2)
        c[m // 2] /= 2
        k = np.append(k, -k[m // 2])
        k[m // 2] = m // 2

    def L(X):
        X = np.asarray(X, dtype=float)
        ang = np.arctan2(X[..., 1], X[..., 0])
        rr = np.real(np.exp(1j * ang[..., None] * k) @ c)
        return np.linalg.norm(X, axis=-1) / rr - 1.0

    return L


def _level_function(surface):
    if surface.n == 2:
        return _trig_level(surface)
    phase = surface.phase
    return lambda X: np.asarray(phase(X), dtype=float) - 1.0


def _gradient(L, p, h):
    n = len(p)
    E = np.eye(n) * h
    return (L(p[None, :] + E) - L(p[None, :] - E)) / (2 * h)


def _graph_values(L, p, w, nu, rhos, scale):
    """Solve ``L(p + rho w + h nu) = 0`` for ``h`` at every ``rho`` (vectorised Newton)."""
    h = np.zeros_like(rhos)
    step = 1e-6 * scale
    base = p[None, :] + rhos[:, None] * w[None, :]
    for _ in range(30):
        X = base + h[:, None] * nu[None, :]
        f = L(X)
        df = (L(X + step * nu) - L(X - step * nu)) / (2 * step)
        dh = f / df
        h = h - dh
        if np.max(np.abs(dh)) < 1e-15 * scale:
            break
    return h


def _cheb_nodes(m, a):
    return a * np.cos(np.pi * (np.arange(m) + 0.5) / m)


def graph_derivatives(L, p, w, nu, radius, degree, m=None):
    """Derivatives ``h^(j)(0)``, ``j = 0..degree``, from a least-squares power fit."""
    m = m or 2 * (degree + 1)
    scale = float(np.linalg.norm(p))
    rhos = _cheb_nodes(m, radius)
    hv = _graph_values(L, p, w, nu, rhos, scale)
    V = np.vander(rhos / radius, degree + 1, increasing=True)
    cond = np.linalg.cond(V)
    coef = np.linalg.lstsq(V, hv, rcond=None)[0]
    derivs = np.array([math.factorial(k) * coef[k] / radius ** k for k in range(degree + 1)])
    return derivs, cond


@dataclass
class ContactIndexReport:
    gamma: Optional[int]
    kappa_values: list
    gamma0: Optional[int]
    kappa0_values: list
    convex: bool
    worst_point: list
    threshold: float = 1e-6
    point_kappa: np.ndarray = field(default=None, repr=False)
    point_kappa0: np.ndarray = field(default=None, repr=False)
    skipped: list = field(default_factory=list)
    patch_radius: float = 0.0


def _tangent_directions(nu, n, count):
    if n == 2:
        return [np.array([-nu[1], nu[0]])]
    a = np.eye(3)[np.argmin(np.abs(nu))]
    e1 = np.cross(nu, a)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(nu, e1)
    phis = np.pi * np.arange(count) / count
    return [math.cos(f) * e1 + math.sin(f) * e2 for f in phis]


def contact_index(surface, gamma_max=4, threshold=1e-6, radius_factor=6.0, n_directions=24,
                  point_stride=1, cond_max=1e10):
    """Contact indices ``gamma`` (inf over tangent directions) and ``gamma0`` (sup).

    At each surface point the outward normal ``nu`` comes from a central
    difference gradient of the level function; the graph ``h`` over each
    tangent direction is found by Newton's method and differentiated through
    a least-squares polynomial of degree ``gamma_max + 2`` on a patch of radius
    ``radius_factor * resolution * |p|``. Convexity requires, in every
    direction, that the first non-negligible derivative has even order and
    negative sign.
    """
    if not 2 <= gamma_max <= 6:
        raise ValueError("gamma_max must lie in 2..6")
    L = _level_function(surface)
    res_rad = math.radians(surface.resolution_deg)
    orders = list(range(2, gamma_max + 1))
    pts = surface.points
    idx = np.flatnonzero(~surface.empty)[::point_stride]
    if idx.size == 0:
        # the branch never reaches the level 1 (e.g. a negative eigenvalue branch)
        return ContactIndexReport(None, [math.nan] * len(orders), None, [math.nan] * len(orders), False, [],
                                  threshold, np.empty((0, len(orders))), np.empty((0, len(orders))),
                                  [(-1, "empty surface")], 0.0)
    Kinf = np.full((len(idx), len(orders)), np.nan)
    Ksup = np.full((len(idx), len(orders)), np.nan)
    convex = True
    skipped = []
    radius = 0.0
    for row, i in enumerate(idx):
        p = pts[i]
        scale = float(np.linalg.norm(p))
        g = _gradient(L, p, 1e-6 * scale)
        nu = g / np.linalg.norm(g)
        radius = radius_factor * res_rad * scale
        sums = []
        for w in _tangent_directions(nu, surface.n, n_directions):
            der, cond = graph_derivatives(L, p, w, nu, radius, gamma_max + 2)
            if cond > cond_max:
                skipped.append((i, "ill-conditioned fit"))
                continue
            mags = np.abs(der[2:gamma_max + 1])
            sums.append(np.cumsum(mags))
            nz = np.flatnonzero(mags > threshold)
            if nz.size:
                order = nz[0] + 2
                if order % 2 == 1 or der[order] > 0:
                    convex = False
            else:
                convex = False
        if sums:
            S = np.array(sums)
            Kinf[row] = S.min(axis=0)
            Ksup[row] = S.max(axis=0)
    if np.all(np.isnan(Kinf)):
        raise ValueError("every graph fit was ill-conditioned; lower the resolution or gamma_max")
    kappa = np.nanmin(Kinf, axis=0)
    kappa0 = np.nanmin(Ksup, axis=0)
    gamma = next((g for g, k in zip(orders, kappa) if k > threshold), None)
    gamma0 = next((g for g, k in zip(orders, kappa0) if k > threshold), None)
    g_ref = orders.index(gamma) if gamma is not None else len(orders) - 1
    worst = int(idx[np.nanargmin(Kinf[:, g_ref])])
    return ContactIndexReport(
        gamma,
        [float(k) for k in kappa],
        gamma0,
        [float(k) for k in kappa0],
        convex,
        pts[worst].tolist(),
        threshold,
        Kinf,
        Ksup,
        skipped,
        radius,
    )


def surface_rows(surface, report=None):
    """Header and rows for CSV export: angles, ``r`` and per-point ``kappa_2 .. kappa_gmax``."""
    if surface.n == 2:
        head = ["angle"]
        angles = surface.angles[:, None]
    else:
        head = ["polar", "azimuth"]
        d = surface.directions
        angles = np.column_stack([np.arccos(np.clip(d[:, 2], -1, 1)), np.arctan2(d[:, 1], d[:, 0])])
    head.append("r")
    kap = None
    if report is not None and report.point_kappa is not None and len(report.point_kappa) == int((~surface.empty).sum()):
        kap = np.full((len(surface.radii), report.point_kappa.shape[1]), np.nan)
        kap[~surface.empty] = report.point_kappa
        head += [f"kappa_{g}" for g in range(2, 2 + report.point_kappa.shape[1])]
    rows = []
    for i in range(len(surface.radii)):
        row = list(angles[i]) + [surface.radii[i]]
        if kap is not None:
            row += list(kap[i])
        rows.append([float(v) for v in row])
    return head, rows
