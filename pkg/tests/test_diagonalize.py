import numpy as np
import pytest

from hypdecay import models as M
from hypdecay.diagonalize import (ZoneTooSmallError, class_grid, diag_step, fit_symbol_class, hierarchy,
                                  identity_residual)
from hypdecay.zones import ZoneConfig


@pytest.fixture(scope="module")
def wave():
    return M.build_wave_dissipation(M.power(1.0, 1.0))


@pytest.mark.parametrize("k", [1, 2])
def test_identity_residual_small(wave, k):
    assert identity_residual(wave, k, 50.0, [10.0]) < 1e-9


def test_remainder_improves_with_each_step(wave):
    norms = [np.linalg.norm(hierarchy(wave, 100.0, [3.0], k).R) for k in range(3)]
    assert norms[0] > norms[1] > norms[2]


def test_diag_step_checks_zone(wave):
    with pytest.raises(ValueError):
        diag_step(wave, 1, samples=[(0.0, np.array([0.1]))])
    step = diag_step(wave, 2, samples=[(20.0, np.array([2.0]))])
    assert step.max_correction < 1
    assert np.allclose(step.N(20.0, [2.0]) @ step.N_inv(20.0, [2.0]), np.eye(2))


def test_zone_too_small():
    w = M.build_wave_dissipation(M.power(50.0, 1.0))
    with pytest.raises(ZoneTooSmallError):
        hierarchy(w, 0.0, [1.0], 1)


def test_class_fit_of_first_remainder(wave):
    f = fit_symbol_class(lambda t, xi: hierarchy(wave, t, xi, 1).R, class_grid())
    assert f.m1 == pytest.approx(-1.0, abs=0.05)
    assert f.m2 == pytest.approx(2.0, abs=0.05)


def test_class_fit_rejects_degenerate_grid(wave):
    grid = class_grid((2.0, 5.0), (9.0, 999.0), 4)
    with pytest.raises(ValueError, match="degenerate"):
        fit_symbol_class(lambda t, xi: hierarchy(wave, t, xi, 0).R, grid)


def test_exact_power_law_fit():
    grid = class_grid()
    f = fit_symbol_class(lambda t, xi: 3.0 * np.linalg.norm(xi) ** -2 * (1 + t) ** -3, grid, ZoneConfig())
    assert (f.m1, f.m2) == pytest.approx((-2.0, 3.0))
    assert f.C == pytest.approx(3.0)
