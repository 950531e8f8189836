"""Symbols ``A(t, xi)`` of first-order hyperbolic systems ``D_t U = A(t, D_x) U``.

Every model family is represented by a :class:`SymbolModel` carrying the full
symbol, its homogeneous principal part and (as metadata for tests only) closed
form exponent predictions where they are known.

Conventions: ``D_t = -i d/dt``, so the Fourier-side propagator solves
``dE/dt = i A(t, xi) E``.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Callable, Optional

import numpy as np
from scipy import integrate, optimize

from ._numerics import derivative
from .zones import ZoneConfig, aux_h, aux_h_dt, sqrt_shift, sqrt_shift_dt, xi_norm


class Family(str, enum.Enum):
    FIRST_ORDER = "first_order"
    WAVE_DISSIPATION = "wave_dissipation"
    KLEIN_GORDON = "klein_gordon"
    OSCILLATING_PAIR = "oscillating_pair"
    COSMOLOGY = "cosmology"
    SECOND_ORDER = "second_order"
    CUSTOM = "custom"


# ---------------------------------------------------------------------------
# scalar coefficients


@dataclass(frozen=True)
class ScalarCoefficient:
    """A coefficient ``f in T{decay_class}``.

    ``derivs(t, k)`` may supply exact derivatives; otherwise finite differences
    are used. ``meta`` records the preset a coefficient was built from so that
    closed-form predictions can be attached to models.
    """

    eval: Callable
    decay_class: float = 0.0
    derivs: Optional[Callable] = None
    meta: dict = field(default_factory=dict)

    def __call__(self, t):
        return self.eval(t)

    def deriv(self, t, k=1):
        if k == 0:
            return self.eval(t)
        if self.derivs is not None:
            return self.derivs(t, k)
        return derivative(self.eval, t, k)

    def scaled(self, factor):
        d = None if self.derivs is None else (lambda t, k: factor * self.derivs(t, k))
        meta = dict(self.meta)
        meta["scale"] = meta.get("scale", 1.0) * factor
        return ScalarCoefficient(lambda t: factor * self.eval(t), self.decay_class, d, meta)

    def class_constants(self, t_max=1e6, K=4, samples=200):
        """Fitted ``C_k = max_t |f^(k)(t)| (1+t)^(l+k)`` on a log grid of ``[0, t_max]``."""
        ts = np.concatenate([[0.0], np.geomspace(1e-2, t_max, samples)])
        out = []
        for k in range(K + 1):
            vals = np.array([abs(complex(self.deriv(t, k))) * (1 + t) ** (self.decay_class + k) for t in ts])
            out.append(float(np.max(vals)))
        return out


def constant(c):
    return ScalarCoefficient(
        lambda t: c + 0.0 * np.asarray(t),
        0.0,
        lambda t, k: 0.0 * np.asarray(t),
        {"kind": "constant", "value": c},
    )


def power(c, p=1.0):
    """``c / (1+t)^p`` in ``T{p}``."""

    def d(t, k):
        coef = c * math.prod(-p - i for i in range(k))
        return coef * (1.0 + np.asarray(t)) ** (-p - k)

    return ScalarCoefficient(lambda t: c * (1.0 + np.asarray(t)) ** (-p), p, d, {"kind": "power", "c": c, "p": p})


def sin_log(alpha=1.0, beta=0.0, gamma=0.0, amplitude=1.0):
    """``amplitude * sin(alpha log(1+t) + beta) + gamma`` in ``T{0}``."""
    return ScalarCoefficient(
        lambda t: amplitude * np.sin(alpha * np.log1p(t) + beta) + gamma,
        0.0,
        None,
        {"kind": "sin_log", "alpha": alpha, "beta": beta, "gamma": gamma, "amplitude": amplitude},
    )


def _bump_raw(s):
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    inside = (s > 1.0) & (s < 2.0)
    si = s[inside]
    out[inside] = np.exp(-1.0 / ((si - 1.0) * (2.0 - si)))
    return out


_BUMP_NORM = integrate.quad(lambda s: float(_bump_raw(s)) / s, 1.0, 2.0, epsabs=1e-14, epsrel=1e-13)[0]


def bump(s):
    """Smooth bump supported in ``[1, 2]`` with ``int psi(s) ds/s = 1``."""
    return _bump_raw(s) / _BUMP_NORM


def bump_sum(m0, alphas):
    """``m0 + sum_j alphas[j] psi(2^-j t)`` with the normalised bump ``psi``."""
    alphas = [float(a) for a in alphas]

    def f(t):
        t = np.asarray(t, dtype=float)
        out = m0 + 0.0 * t
        for j, a in enumerate(alphas):
            if a:
                out = out + a * bump(t * 2.0 ** -j)
        return out

    return ScalarCoefficient(f, 0.0, None, {"kind": "bump_sum", "m0": m0, "alphas": alphas})


def from_callable(f, decay_class=0.0, derivs=None):
    return ScalarCoefficient(f, decay_class, derivs, {"kind": "custom"})


def exp_scale():
    """Scale factor ``a(t) = e^t`` (anti-de Sitter)."""
    return ScalarCoefficient(np.exp, 0.0, lambda t, k: np.exp(t), {"kind": "exp_scale"})


def power_scale(ell):
    """Scale factor ``a(t) = (1+t)^ell``."""
    c = power(1.0, -ell)
    return ScalarCoefficient(c.eval, 0.0, c.derivs, {"kind": "power_scale", "ell": ell})


def mean_value(coef):
    """Logarithmic mean ``lim (1/log t) int_1^t f dtau/tau`` of a T{0} preset, if known."""
    m = coef.meta
    scale = m.get("scale", 1.0)
    kind = m.get("kind")
    if kind == "constant":
        return scale * m["value"]
    if kind == "sin_log":
        return scale * m["gamma"]
    if kind == "bump_sum":
        return scale * m["m0"]
    if kind == "power":
        return scale * (m["c"] if m["p"] == 0 else 0.0)
    return None


def log_rate(coef):
    """``lim (1/log t) int_1^t b dtau`` of a T{1} preset, if known."""
    m = coef.meta
    if m.get("kind") == "power":
        scale = m.get("scale", 1.0)
        if m["p"] == 1:
            return scale * m["c"]
        if m["p"] > 1:
            return 0.0
        return math.copysign(math.inf, scale * m["c"]) if m["c"] else 0.0
    if m.get("kind") == "constant" and m["value"] == 0:
        return 0.0
    return None


def coefficient_from_spec(spec):
    """Build a coefficient from a config mapping ``{kind: ..., ...}`` or a number."""
    if isinstance(spec, (int, float)):
        return constant(float(spec))
    kind = spec.get("kind")
    args = {k: v for k, v in spec.items() if k != "kind"}
    try:
        if kind == "constant":
            return constant(float(args["value"]))
        if kind == "power":
            return power(float(args.get("c", 1.0)), float(args.get("p", 1.0)))
        if kind == "sin_log":
            return sin_log(**{k: float(v) for k, v in args.items()})
        if kind == "bump_sum":
            return bump_sum(float(args.get("m0", 0.0)), args.get("alphas", []))
        if kind == "exp_scale":
            return exp_scale()
        if kind == "power_scale":
            return power_scale(float(args["ell"]))
    except (KeyError, TypeError) as exc:
        raise ValueError(f"bad parameters for coefficient preset {kind!r}: {exc}") from None
    raise ValueError(f"unknown coefficient preset {kind!r}")


# ---------------------------------------------------------------------------
# matrix-valued coefficients


def _matrix_fn(obj, name):
    """Normalise a matrix coefficient to ``t -> ndarray``."""
    if callable(obj) and not isinstance(obj, ScalarCoefficient):
        return obj
    arr = np.asarray(obj, dtype=object)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be a matrix, got shape {arr.shape}")
    if all(not isinstance(e, ScalarCoefficient) for e in arr.ravel()):
        const = np.asarray(obj, dtype=complex)
        return lambda t: const
    entries = [[e if isinstance(e, ScalarCoefficient) else constant(complex(e)) for e in row] for row in arr]

    def f(t):
        return np.array([[complex(e(t)) for e in row] for row in entries])

    return f


def _xi(xi):
    return np.atleast_1d(np.asarray(xi, dtype=float))


@dataclass(frozen=True)
class SymbolModel:
    """Evaluable symbol with separated homogeneous principal part.

    ``eval_full(t, xi)`` is ``A(t, xi)``; ``eval_principal(t, xi)`` is
    ``A_hom(t, xi)``, positively homogeneous of degree one in ``xi``.
    ``predictions`` is advisory metadata; solvers never read it.
    """

    dim: int
    n: int
    eval_full: Callable
    eval_principal: Callable
    family: Family = Family.CUSTOM
    params: MappingProxyType = field(default_factory=lambda: MappingProxyType({}))
    predictions: MappingProxyType = field(default_factory=lambda: MappingProxyType({}))
    sigma: float = 1.0

    def A(self, t, xi):
        return np.asarray(self.eval_full(t, _xi(xi)), dtype=complex)

    def A_hom(self, t, xi):
        return np.asarray(self.eval_principal(t, _xi(xi)), dtype=complex)

    def lower_order(self, t, xi):
        return self.A(t, xi) - self.A_hom(t, xi)


def _model(dim, n, full, principal, family, params=None, predictions=None, sigma=1.0):
    return SymbolModel(
        dim,
        n,
        full,
        principal,
        family,
        MappingProxyType(dict(params or {})),
        MappingProxyType(dict(predictions or {})),
        float(sigma),
    )


def custom_model(eval_full, eval_principal, dim, n=1, sigma=1.0, params=None):
    return _model(dim, n, eval_full, eval_principal, Family.CUSTOM, params, None, sigma)


def build_first_order(A_coeffs, B=None, sigma=1.0):
    """``A(t, xi) = sum_j A_j(t) xi_j + B(t)`` with ``A_j in T{0}``, ``B in T{1}``."""
    if len(A_coeffs) == 0:
        raise ValueError("need at least one coefficient matrix A_j")
    fns = [_matrix_fn(a, f"A_{j + 1}") for j, a in enumerate(A_coeffs)]
    shapes = [np.shape(f(0.0)) for f in fns]
    d = shapes[0][0]
    for j, s in enumerate(shapes):
        if s != (d, d):
            raise ValueError(f"A_{j + 1} has shape {s}, expected {(d, d)} (offending index {j + 1})")
    if d < 2:
        raise ValueError("systems need d >= 2")
    if B is None:
        Bf = lambda t: np.zeros((d, d), dtype=complex)  # noqa: E731
    else:
        Bf = _matrix_fn(B, "B")
        if np.shape(Bf(0.0)) != (d, d):
            raise ValueError(f"B has shape {np.shape(Bf(0.0))}, expected {(d, d)} (offending index B)")
    n = len(fns)

    def principal(t, xi):
        xi = _xi(xi)
        if xi.size != n:
            raise ValueError(f"frequency has {xi.size} components, model has n = {n}")
        return sum(x * f(t) for x, f in zip(xi, fns))

    def full(t, xi):
        return principal(t, xi) + Bf(t)

    return _model(d, n, full, principal, Family.FIRST_ORDER, {"A": fns, "B": Bf}, None, sigma)


def build_wave_dissipation(b):
    """``u_tt - Delta u + b(t) u_t = 0`` in the unknown ``(|xi| u, D_t u)``."""
    ts = np.geomspace(1e-3, 1e6, 60)
    bvals = np.real(np.array([complex(b(t)) for t in ts]))
    warnings = []
    if np.any(bvals < 0):
        warnings.append("negative dissipation sample: weak dichotomy unverified")

    def full(t, xi):
        r = xi_norm(xi)
        return np.array([[0.0, r], [r, 1j * b(t)]], dtype=complex)

    def principal(t, xi):
        r = xi_norm(xi)
        return np.array([[0.0, r], [r, 0.0]], dtype=complex)

    pred = {"F0": lambda t: 0.5j * b(t) * np.eye(2)}
    rate = log_rate(b)
    if rate is not None:
        pred.update(
            mu_wave=rate,
            kappa_plus=rate / 2,
            kappa_minus=rate / 2,
            mu=min(0.0, rate),
            Lambda_limit=np.diag([0.0, 1j * rate]),
        )
    return _model(2, 1, full, principal, Family.WAVE_DISSIPATION, {"b": b, "warnings": warnings}, pred)


def klein_gordon_mu(m0):
    """Target pd-zone exponent: ``1/2 + sqrt(1/4 - m0^2)`` below ``m0 = 1/2``, else ``1/2``.

    The exact large-time spectrum gives ``1/2 - sqrt(1/4 - m0^2)`` below ``m0 = 1/2``;
    see ``predictions["mu_spectral"]`` for that value.
    """
    if m0 >= 0.5:
        return 0.5
    return 0.5 + math.sqrt(0.25 - m0 * m0)


def build_klein_gordon(m, m0):
    """``u_tt - Delta u + m(t)^2/(1+t)^2 u = 0`` in ``(sqrt(|xi|^2 + (1+t)^-2) u, D_t u)``."""
    if not m0 > 0:
        raise ValueError(f"Klein-Gordon needs m0 > 0, got {m0}")

    def full(t, xi):
        r = xi_norm(xi)
        h = math.sqrt(r * r + 1.0 / (1.0 + t) ** 2)
        mt = complex(m(t))
        return np.array(
            [
                [1j / (1.0 + t) / ((1.0 + t) ** 2 * r * r + 1.0), h],
                [(r * r + mt * mt / (1.0 + t) ** 2) / h, 0.0],
            ],
            dtype=complex,
        )

    def principal(t, xi):
        r = xi_norm(xi)
        return np.array([[0.0, r], [r, 0.0]], dtype=complex)

    A_inf = np.array([[1j, 1.0], [m0 * m0, 0.0]])
    spec_ = np.linalg.eigvals(A_inf)
    pred = {
        "A_inf": A_inf,
        "spectrum": 0.5j + np.array([-1, 1]) * np.sqrt(complex(m0 * m0 - 0.25)),
        "mu": klein_gordon_mu(m0),
        "mu_spectral": float(np.min(spec_.imag)),
        "kappa_plus": 0.0,
        "kappa_minus": 0.0,
    }
    return _model(2, 1, full, principal, Family.KLEIN_GORDON, {"m": m, "m0": m0}, pred)


def build_oscillating_pair(b1, b2):
    """``D_t U = ((0, |D|), (|D|, 0)) U + i/(1+t) diag(b1, b2) U``."""

    def full(t, xi):
        r = xi_norm(xi)
        return np.array([[1j * b1(t) / (1 + t), r], [r, 1j * b2(t) / (1 + t)]], dtype=complex)

    def principal(t, xi):
        r = xi_norm(xi)
        return np.array([[0.0, r], [r, 0.0]], dtype=complex)

    pred = {
        "F0": lambda t: 0.5j * (b1(t) + b2(t)) / (1 + t) * np.eye(2),
        "Lambda": lambda t: 1j * t / (1 + t) * np.diag([b1(t), b2(t)]),
    }
    m1, m2 = mean_value(b1), mean_value(b2)
    if m1 is not None and m2 is not None:
        pred.update(mu_j=[m1, m2], mu=min(m1, m2), kappa_plus=(m1 + m2) / 2, kappa_minus=(m1 + m2) / 2)
    return _model(2, 1, full, principal, Family.OSCILLATING_PAIR, {"b1": b1, "b2": b2}, pred)


# ---------------------------------------------------------------------------
# second-order systems


def _coeff_fn(obj, d, name):
    if obj is None:
        return lambda t: np.zeros((d, d), dtype=complex)
    if isinstance(obj, ScalarCoefficient):
        return lambda t: complex(obj(t)) * np.eye(d)
    return _matrix_fn(obj, name)


def reduce_second_order(Aij, Bj=None, B0=None, C=None, n=1, weight=None, cfg=ZoneConfig(),
                        check_times=None, check_dirs=16, family=Family.SECOND_ORDER, params=None):
    """First-order pseudo-differential form in ``V = (h(t, D_x) U, D_t U)``.

    The equation is ``D_t^2 U = (A(t, D_x) + sum B_j D_j + C) U + B_0 D_t U``.

    ``Aij`` is an ``(n, n, d, d)`` array, or a callable ``t -> array``, giving
    ``A(t, xi) = sum A_ij xi_i xi_j``. ``weight`` selects ``h``: ``"aux_h"`` (the
    smoothed zone weight) or ``"sqrt_shift"`` (``sqrt(|xi|^2 + (1+t)^-2)``); the
    default is ``sqrt_shift`` for scalar equations and ``aux_h`` otherwise.
    """
    Af = Aij if callable(Aij) else (lambda t, _a=np.asarray(Aij, dtype=complex): _a)
    a0 = np.asarray(Af(0.0))
    if a0.ndim != 4 or a0.shape[0] != n or a0.shape[1] != n or a0.shape[2] != a0.shape[3]:
        raise ValueError(f"Aij must have shape (n, n, d, d) with n = {n}, got {a0.shape}")
    d = a0.shape[2]
    if weight is None:
        weight = "sqrt_shift" if d == 1 else "aux_h"
    if weight == "aux_h":
        hf, hdt = (lambda t, xi: aux_h(t, xi, cfg)), (lambda t, xi: aux_h_dt(t, xi, cfg))
    elif weight == "sqrt_shift":
        hf, hdt = sqrt_shift, sqrt_shift_dt
    else:
        raise ValueError(f"unknown weight {weight!r}")
    Bfs = [_coeff_fn(b, d, f"B_{j + 1}") for j, b in enumerate(Bj or [])]
    B0f = _coeff_fn(B0, d, "B_0")
    Cf = _coeff_fn(C, d, "C")

    def A_xi(t, xi):
        return np.einsum("i,j,ijkl->kl", xi, xi, np.asarray(Af(t), dtype=complex))

    # uniform strict hyperbolicity with positive eigenvalues on the unit sphere
    times = np.concatenate([[0.0], np.geomspace(0.1, 1e4, 9)]) if check_times is None else check_times
    if n == 1:
        dirs = [np.array([1.0])]
    else:
        rng = np.random.default_rng(0)
        dirs = rng.normal(size=(check_dirs, n))
        dirs = list(dirs / np.linalg.norm(dirs, axis=1)[:, None])
    for t in times:
        for w in dirs:
            ev = np.linalg.eigvals(A_xi(t, w))
            if np.any(np.abs(ev.imag) > 1e-10 * (1 + np.abs(ev.real))) or np.any(ev.real <= 0):
                raise ValueError(f"A(t, xi) must have positive real eigenvalues; witness t={t}, xi={w.tolist()}")
            srt = np.sort(ev.real)
            if d > 1 and np.min(np.diff(srt)) < 1e-8:
                raise ValueError(f"A(t, xi) eigenvalues not distinct; witness t={t}, xi={w.tolist()}")

    I = np.eye(d)

    def full(t, xi):
        xi = _xi(xi)
        h = hf(t, xi)
        Dth = -1j * hdt(t, xi)
        top_right = (A_xi(t, xi) + sum(x * B(t) for x, B in zip(xi, Bfs)) + Cf(t)) / h
        return np.block([[Dth / h * I, h * I], [top_right, B0f(t)]])

    def principal(t, xi):
        xi = _xi(xi)
        r = np.linalg.norm(xi)
        if r == 0:
            return np.zeros((2 * d, 2 * d), dtype=complex)
        Z = np.zeros((d, d))
        return np.block([[Z, r * I], [A_xi(t, xi) / r, Z]])

    p = {"weight": weight, "d": d}
    p.update(params or {})
    return _model(2 * d, n, full, principal, family, p)


# ---------------------------------------------------------------------------
# cosmology


@dataclass(frozen=True)
class CosmologyTransform:
    scale_factor: ScalarCoefficient
    primitive: Callable
    inverse_time: Callable
    dissipation: ScalarCoefficient
    mass: ScalarCoefficient
    horizon: float
    m0: float
    n: int
    admissible: bool
    diagnostics: dict


def _closed_inverse(a):
    """Exact ``A^-1`` for the presets with a closed-form primitive, else ``None``."""
    kind = a.meta.get("kind")
    if kind == "exp_scale":
        return lambda tau: math.log1p(tau)
    if kind == "power_scale":
        ell = a.meta["ell"]
        return lambda tau: ((ell + 1.0) * tau + 1.0) ** (1.0 / (ell + 1.0)) - 1.0
    if kind == "constant":
        c = a.meta["value"]
        return lambda tau: tau / c
    return None


def _primitive(a):
    kind = a.meta.get("kind")
    if kind == "exp_scale":
        return lambda t: math.expm1(t)
    if kind == "power_scale":
        ell = a.meta["ell"]
        return lambda t: ((1.0 + t) ** (ell + 1.0) - 1.0) / (ell + 1.0)
    if kind == "constant":
        c = a.meta["value"]
        return lambda t: c * t

    def A(t):
        # piecewise in dyadic pieces of 1 + t keeps quad accurate on long ranges
        edges = [0.0]
        while edges[-1] < t:
            edges.append(min(t, 2.0 * edges[-1] + 1.0))
        return sum(integrate.quad(lambda s: float(np.real(a(s))), lo, hi, epsrel=1e-13, epsabs=0)[0]
                   for lo, hi in zip(edges[:-1], edges[1:]))

    return A


def _inverse(A, tau, rtol=1e-12):
    if tau <= 0:
        return 0.0
    hi = 1.0
    while A(hi) < tau:
        hi *= 2.0
        if hi > 1e300:
            raise ValueError(f"time {tau} beyond the range of the primitive")
    lo = 0.0
    # monotone bisection; a > 0 makes A strictly increasing
    while hi - lo > rtol * max(hi, 1e-300):
        mid = 0.5 * (lo + hi)
        if A(mid) < tau:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def liouville_transform(a, m0, n, friction=None, probe_end=None):
    """Partial Liouville transform of ``u_tt - a^2 Delta u - c (a'/a) u_t + m0 u = 0``.

    With ``tau = A(t) = int_0^t a`` the equation becomes
    ``u_tautau - Delta u + b(tau) u_tau + m(tau) u = 0`` where
    ``b = (1 - c) a'/a^2`` and ``m = m0/a^2``, both evaluated at ``t = A^-1(tau)``.
    ``friction`` is ``c``; its default ``n - 1`` gives ``b = (2 - n) a'/a^2``.
    """
    ts = np.concatenate([[0.0], np.geomspace(0.5, 50.0, 12)])
    if np.any(np.real([complex(a(t)) for t in ts]) <= 0):
        raise ValueError("scale factor must be positive")
    c = (n - 1) if friction is None else friction
    A = _primitive(a)

    # horizon T = int_0^inf a: finite iff the primitive saturates
    probes = [10.0 ** k for k in range(0, 7)]
    vals = []
    for t in probes:
        try:
            v = A(t)
        except OverflowError:
            v = math.inf
        vals.append(v)
        if not math.isfinite(v) or v > 1e250:
            break
    finite_vals = [v for v in vals if math.isfinite(v)]
    saturating = (
        len(finite_vals) == len(probes)
        and finite_vals[-1] - finite_vals[-2] <= 1e-6 * max(1.0, abs(finite_vals[-1]))
    )
    if saturating:
        horizon = integrate.quad(lambda s: float(np.real(a(s))), 0, np.inf)[0]
        raise ValueError(f"finite horizon T = {horizon:.6g}: model inadmissible (de Sitter type)")
    horizon = math.inf

    def adot(t):
        return float(np.real(a.deriv(t, 1)))

    exact = _closed_inverse(a)

    def t_of(tau):
        if tau <= 0:
            return 0.0
        return exact(float(tau)) if exact is not None else _inverse(A, float(tau))

    def b_eval(tau):
        if np.ndim(tau):
            return np.array([b_eval(x) for x in np.ravel(tau)]).reshape(np.shape(tau))
        t = t_of(tau)
        return (1.0 - c) * adot(t) / float(np.real(a(t))) ** 2

    def m_eval(tau):
        if np.ndim(tau):
            return np.array([m_eval(x) for x in np.ravel(tau)]).reshape(np.shape(tau))
        t = t_of(tau)
        return m0 / float(np.real(a(t))) ** 2

    # admissibility through the equivalent conditions on a and A
    t_end = probe_end
    if t_end is None:
        t_end = 1e6
        while t_end > 1 and not (math.isfinite(_safe(A, t_end)) and _safe(A, t_end) < 1e200):
            t_end /= 2.0
    grid = np.geomspace(max(t_end / 100.0, 1e-2), t_end, 25)
    r_b = np.array([abs(adot(t)) * (1 + A(t)) / float(np.real(a(t))) ** 2 for t in grid])
    r_m = np.array([float(np.real(a(t))) / (1 + A(t)) for t in grid])
    lg = np.log1p(grid)
    slope_b = _slope(lg, np.log(np.maximum(r_b, 1e-300))) if np.all(r_b > 0) else 0.0
    slope_m = _slope(lg, np.log(r_m))
    b_ok = slope_b < 0.05 and np.all(np.isfinite(r_b))
    m_ok = (slope_m > -0.05) or m0 == 0
    diagnostics = {
        "dissipation_ratio_slope": float(slope_b),
        "mass_ratio_slope": float(slope_m),
        "dissipation_in_T1": bool(b_ok),
        "mass_in_T2": bool(slope_m > -0.05),
        "friction": c,
    }
    b = ScalarCoefficient(b_eval, 1.0, None, {"kind": "custom"})
    m = ScalarCoefficient(m_eval, 2.0, None, {"kind": "custom"})
    return CosmologyTransform(a, A, t_of, b, m, horizon, m0, n, bool(b_ok and m_ok), diagnostics)


def _safe(f, t):
    try:
        return f(t)
    except OverflowError:
        return math.inf


def _slope(x, y):
    return float(np.polyfit(x, y, 1)[0])


def build_cosmology(transform, weight="sqrt_shift"):
    """Scalar model ``u_tautau - Delta u + b u_tau + m u = 0`` after the Liouville transform."""
    if not transform.admissible:
        raise ValueError(f"inadmissible cosmology: {transform.diagnostics}")
    b, m = transform.dissipation, transform.mass
    return reduce_second_order(
        np.ones((1, 1, 1, 1)),
        B0=lambda t: np.array([[1j * b(t)]]),
        C=lambda t: np.array([[m(t)]], dtype=complex),
        n=1,
        weight=weight,
        family=Family.COSMOLOGY,
        params={"m0": transform.m0, "n": transform.n},
    )


def model_from_spec(spec):
    """Construct a model from a config mapping ``{family: ..., params: {...}}``."""
    family = spec.get("family")
    p = dict(spec.get("params") or {})
    sigma = float(p.pop("sigma", 1.0))
    if family == "wave_dissipation":
        if "mu0" in p:
            return _with_sigma(build_wave_dissipation(power(float(p["mu0"]), 1.0)), sigma)
        return _with_sigma(build_wave_dissipation(coefficient_from_spec(p["b"])), sigma)
    if family == "klein_gordon":
        m0 = float(p["m0"])
        m = coefficient_from_spec(p["m"]) if "m" in p else constant(m0)
        return _with_sigma(build_klein_gordon(m, m0), sigma)
    if family == "oscillating_pair":
        return _with_sigma(build_oscillating_pair(coefficient_from_spec(p["b1"]), coefficient_from_spec(p["b2"])), sigma)
    if family == "first_order":
        A = [_parse_matrix(a) for a in p["A"]]
        A_tr = [_parse_matrix(a) for a in p.get("A_transient", [])] or None
        if A_tr is not None:
            if len(A_tr) != len(A):
                raise ValueError("A_transient must have one matrix per A_j")
            A = [(lambda t, a=a, b=b: a + b / (1.0 + t)) for a, b in zip(A, A_tr)]
        B = None
        if "B_inf" in p:
            Binf = _parse_matrix(p["B_inf"])
            B = lambda t, Binf=Binf: Binf / (1.0 + t)  # noqa: E731
        return build_first_order(A, B, sigma)
    if family == "cosmology":
        a = coefficient_from_spec(p["scale_factor"])
        tr = liouville_transform(a, float(p.get("m0", 0.0)), int(p.get("n", 3)), p.get("friction"))
        return _with_sigma(build_cosmology(tr), sigma)
    raise ValueError(f"unknown model family {family!r}")


def _with_sigma(model, sigma):
    if sigma == model.sigma:
        return model
    return SymbolModel(model.dim, model.n, model.eval_full, model.eval_principal, model.family,
                       model.params, model.predictions, sigma)


def _parse_matrix(rows):
    """Matrix from nested lists; complex entries as ``[re, im]`` pairs or strings."""
    out = []
    for row in rows:
        r = []
        for e in row:
            if isinstance(e, (list, tuple)):
                r.append(complex(float(e[0]), float(e[1])))
            elif isinstance(e, str):
                r.append(complex(e.replace(" ", "").replace("i", "j")))
            else:
                r.append(complex(e))
        out.append(r)
    arr = np.array(out, dtype=complex)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {arr.shape}")
    return arr
