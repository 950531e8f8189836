import math

import numpy as np
import pytest

from hypdecay import asymptotic as A
from hypdecay import models as M


@pytest.fixture(scope="module")
def kg():
    return M.build_klein_gordon(M.constant(1.0), 1.0)


def test_klein_gordon_large_time_symbol(kg):
    lts = A.large_time_symbol(kg)
    assert lts.route == "constant"
    assert np.allclose(lts.limit_matrix, [[1j, 1.0], [1.0, 0.0]], atol=1e-7)
    assert A.mu_exponent(lts).mu == pytest.approx(0.5, abs=1e-6)


def test_klein_gordon_dichotomy_flags(kg):
    v = A.dichotomy(A.large_time_symbol(kg), 2.0)
    assert v.kind == "failed"
    assert "strong dichotomy unverified" in v.flags


def test_diagonal_route_for_wave():
    w = M.build_wave_dissipation(M.power(3.0, 1.0))
    lts = A.large_time_symbol(w)
    assert lts.route == "diagonal"
    assert A.mu_exponent(lts).mu == pytest.approx(0.0, abs=1e-12)


def test_mu_needs_long_horizon(kg):
    with pytest.raises(ValueError):
        A.mu_exponent(A.large_time_symbol(kg), (1.0, 100.0))


def test_non_diagonalisable_limit():
    kg = M.build_klein_gordon(M.constant(0.5), 0.5)
    with pytest.raises(A.LargeTimeError):
        A.large_time_symbol(kg)


def test_sigma_integrability(kg):
    lts = A.large_time_symbol(kg)
    finite = A.sigma_integrability(lambda t, xi: A.fuchs_residual(kg, lts, t, xi), 1.0, [np.zeros(1)])
    assert math.isfinite(finite)
    slow = A.sigma_integrability(lambda t, xi: np.eye(2) / math.log(math.e + t), 1.0, [np.zeros(1)])
    assert slow == math.inf


def test_levinson_modes_klein_gordon(kg):
    b = A.levinson_modes(kg, A.large_time_symbol(kg), [1e-6])
    assert b.wronskian_defect < 1e-8
    assert b.reconstruction_defect < 1e-8
    assert max(b.convergence_defect) < 1e-2


def test_levinson_rejects_hyperbolic_horizon(kg):
    with pytest.raises(ValueError):
        A.levinson_modes(kg, A.large_time_symbol(kg), [1.0], (1.0, 1e4))


def test_hartman_wintner_refuses_without_gap():
    lts = A.LargeTimeSymbol(lambda t: np.zeros((2, 2)), lambda t: np.eye(2), lambda t: np.eye(2), 2.0)
    with pytest.raises(ValueError):
        A.hartman_wintner_step(lts, lambda t: np.ones((2, 2)) / t)


def test_holder_loss_check():
    worst, norm = A.holder_loss_check(lambda t: 1.0 / (1.0 + math.log(t)), 2.0, [10.0, 1e3, 1e4])
    assert worst <= 1e-12
    assert norm > 0


def test_pd_triples_stay_in_zone():
    tr = A.pd_triples([[1e-2]], [0.0, 10.0], [50.0, 200.0])
    assert [(s, t) for s, t, _ in tr] == [(0.0, 50.0), (10.0, 50.0)]
