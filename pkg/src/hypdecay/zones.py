"""Phase-space zones: the separating curve ``t_xi`` and the auxiliary weight ``h``.

The extended phase space ``{t >= 0} x R^n`` splits along ``(1 + t)|xi| = N`` into
the pseudo-differential zone (below) and the hyperbolic zone (above).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ZoneConfig:
    N: float = 1.0
    smoothing_width: float = 1.0

    def __post_init__(self):
        if not self.N > 0:
            raise ValueError(f"zone constant N must be positive, got {self.N}")
        if not 0 < self.smoothing_width <= 1:
            raise ValueError(f"smoothing_width must lie in (0, 1], got {self.smoothing_width}")


def xi_norm(xi):
    return float(np.linalg.norm(np.atleast_1d(np.asarray(xi, dtype=float))))


def separating_time(xi, cfg=ZoneConfig()):
    """``t_xi`` with ``(1 + t_xi)|xi| = N``; ``inf`` at ``xi = 0``, ``0`` for ``|xi| >= N``."""
    r = xi_norm(xi)
    if r == 0.0:
        return np.inf
    return max(cfg.N / r - 1.0, 0.0)


def in_pd_zone(t, xi, cfg=ZoneConfig()):
    return (1.0 + t) * xi_norm(xi) <= cfg.N


def in_hyp_zone(t, xi, cfg=ZoneConfig()):
    return (1.0 + t) * xi_norm(xi) >= cfg.N


def _blend(s):
    # quintic smoothstep: C^2, 0 at s <= 0, 1 at s >= 1
    s = np.clip(s, 0.0, 1.0)
    return s ** 3 * (10.0 - 15.0 * s + 6.0 * s * s)


def _blend_ds(s):
    inside = (s > 0.0) & (s < 1.0)
    s = np.clip(s, 0.0, 1.0)
    return np.where(inside, 30.0 * s * s * (1.0 - s) ** 2, 0.0)


def cutoff(theta, width=1.0):
    """``chi(theta)``: 1 for ``theta <= 1``, 0 for ``theta >= 1 + width``."""
    return 1.0 - _blend((np.asarray(theta, dtype=float) - 1.0) / width)


def aux_h(t, xi, cfg=ZoneConfig()):
    """Smoothed ``h(t, xi)``: ``N/(1+t)`` in the pd zone, ``|xi|`` beyond the blend."""
    r = xi_norm(xi)
    theta = (1.0 + t) * r / cfg.N
    chi = cutoff(theta, cfg.smoothing_width)
    return float(cfg.N / (1.0 + t) * chi + r * (1.0 - chi))


def aux_h_dt(t, xi, cfg=ZoneConfig()):
    """Exact ``d/dt h(t, xi)`` for :func:`aux_h`."""
    r = xi_norm(xi)
    w = cfg.smoothing_width
    theta = (1.0 + t) * r / cfg.N
    chi = cutoff(theta, w)
    dchi = -_blend_ds((theta - 1.0) / w) / w * (r / cfg.N)
    return float(-cfg.N / (1.0 + t) ** 2 * chi + (cfg.N / (1.0 + t) - r) * dchi)


def sqrt_shift(t, xi):
    """The weight ``sqrt(|xi|^2 + 1/(1+t)^2)`` used by the Klein-Gordon reduction."""
    r = xi_norm(xi)
    return float(np.sqrt(r * r + 1.0 / (1.0 + t) ** 2))


def sqrt_shift_dt(t, xi):
    return float(-1.0 / (1.0 + t) ** 3 / sqrt_shift(t, xi))
