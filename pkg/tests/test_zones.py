import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from hypdecay._numerics import derivative
from hypdecay.zones import (ZoneConfig, aux_h, aux_h_dt, cutoff, in_hyp_zone, in_pd_zone, separating_time,
                            sqrt_shift, sqrt_shift_dt)


def test_separating_time_examples():
    assert separating_time([0.5], ZoneConfig(N=2.0)) == pytest.approx(3.0)
    assert separating_time([0.0]) == math.inf
    assert separating_time([3.0]) == 0.0


def test_aux_h_limits():
    assert aux_h(9.0, [0.0]) == pytest.approx(0.1)
    assert aux_h(0.0, [4.0]) == pytest.approx(4.0)


def test_bad_zone_config():
    with pytest.raises(ValueError):
        ZoneConfig(N=0.0)
    with pytest.raises(ValueError):
        ZoneConfig(smoothing_width=1.5)


@given(st.floats(0.0, 1e3), st.floats(1e-4, 1e2), st.floats(0.2, 5.0))
def test_zones_partition_phase_space(t, r, N):
    cfg = ZoneConfig(N=N)
    assert in_pd_zone(t, [r], cfg) or in_hyp_zone(t, [r], cfg)
    t_xi = separating_time([r], cfg)
    if t_xi > 0:
        assert (1 + t_xi) * r == pytest.approx(N)


@given(st.floats(0.0, 50.0), st.floats(1e-3, 10.0))
def test_aux_h_between_its_limits(t, r):
    h = aux_h(t, [r])
    lo, hi = sorted((1.0 / (1.0 + t), r))
    assert lo - 1e-12 <= h <= hi + 1e-12


@pytest.mark.parametrize("t, r", [(0.5, 0.8), (1.2, 0.7), (3.0, 0.3), (10.0, 0.12)])
def test_aux_h_dt_matches_finite_differences(t, r):
    fd = derivative(lambda s: aux_h(s, [r]), t)
    assert aux_h_dt(t, [r]) == pytest.approx(fd, rel=1e-6, abs=1e-9)


def test_sqrt_shift_dt():
    fd = derivative(lambda s: sqrt_shift(s, [0.3]), 2.0)
    assert sqrt_shift_dt(2.0, [0.3]) == pytest.approx(fd, rel=1e-8)


def test_cutoff_profile():
    assert cutoff(0.5) == 1.0
    assert cutoff(2.5) == 0.0
    assert 0.0 < cutoff(1.5) < 1.0
