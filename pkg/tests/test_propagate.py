import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hypdecay import models as M
from hypdecay.propagate import (Propagator, decay_fit, fit_power_law, fundamental_solution, liouville_defect,
                                peano_baker, product_representation, solve_path)


@pytest.fixture(scope="module")
def wave():
    return M.build_wave_dissipation(M.power(1.0, 1.0))


def test_constant_symbol_matches_matrix_exponential():
    A = np.array([[0.0, 1.0], [1.0, 0.5j]])
    sym = M.custom_model(lambda t, xi: A, lambda t, xi: A * 0, 2)
    E = fundamental_solution(sym, 0.0, 2.0, [1.0])
    lam, V = np.linalg.eig(A)
    ref = V @ np.diag(np.exp(2j * lam)) @ np.linalg.inv(V)
    assert np.allclose(E, ref, atol=1e-9)


@settings(max_examples=10, deadline=None)
@given(st.floats(0.0, 5.0), st.floats(0.0, 5.0), st.floats(0.0, 5.0), st.floats(0.05, 3.0))
def test_cocycle(r, s, t, xi):
    sym = M.build_wave_dissipation(M.power(1.0, 1.0))
    lhs = fundamental_solution(sym, s, t, [xi]) @ fundamental_solution(sym, r, s, [xi])
    rhs = fundamental_solution(sym, r, t, [xi])
    assert np.allclose(lhs, rhs, atol=1e-7)


def test_liouville_defect_small(wave):
    E = fundamental_solution(wave, 0.0, 100.0, [3.0])
    assert liouville_defect(wave, E, 0.0, 100.0, [3.0]) < 1e-8
    assert abs(np.linalg.det(E)) == pytest.approx(1 / 101, rel=1e-8)


def test_solution_rejects_tiny_tolerance(wave):
    with pytest.raises(ValueError):
        fundamental_solution(wave, 0.0, 1.0, [1.0], tol=1e-14)


def test_propagator_counts(wave):
    p = Propagator(wave)
    p.E(1.0, 0.0, [1.0])
    p.E(2.0, 0.0, [1.0])
    assert p.stats["solves"] == 2


def test_solve_path_with_vector_data(wave):
    Es, _ = solve_path(wave, 0.0, [1.0, 2.0], [1.0])
    vs, _ = solve_path(wave, 0.0, [1.0, 2.0], [1.0], y0=np.array([1.0, 0.0]))
    assert np.allclose(vs[1], Es[1][:, 0], atol=1e-9)


def test_peano_baker_nilpotent_exact():
    K = np.array([[0.0, 1.0], [0.0, 0.0]])
    r = peano_baker(lambda t: K, 0.0, 3.0)
    assert np.allclose(r.Q, np.eye(2) + 3j * K)


def test_peano_baker_commuting_kernel():
    r = peano_baker(lambda t: np.diag([1.0, -2.0]) * t, 0.0, 2.0)
    assert np.allclose(r.Q, np.diag(np.exp(1j * np.array([2.0, -4.0]))), atol=1e-10)
    assert r.tail_bound < 1e-10


def test_product_representation_sample(wave):
    rep = product_representation(wave, 2, 30.0, [0.3])
    assert rep.deviation < 1e-6
    with pytest.raises(ValueError):
        product_representation(wave, 2, 1.0, [0.3])


def test_fit_power_law_exact():
    ts = np.geomspace(10, 1e3, 20)
    f = fit_power_law(ts, 2.0 * (1 + ts) ** -0.7)
    assert f.exponent == pytest.approx(-0.7)
    assert f.residual < 1e-12
    with pytest.raises(ValueError):
        fit_power_law(ts[:5], ts[:5])


def test_decay_fit_wave_rate(wave):
    f = decay_fit(wave, [5.0], np.geomspace(10, 1e3, 20))
    assert f.exponent == pytest.approx(-0.5, abs=0.02)
    with pytest.raises(ValueError):
        decay_fit(wave, [5.0], np.linspace(10, 100, 20))
