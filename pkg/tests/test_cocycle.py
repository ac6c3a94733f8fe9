import math
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cocycle_kam.cocycle import (Cocycle, CocycleError, ConvergenceWarning, bump_weights, conjugate, csv_row,
                                 degree, is_uniformly_hyperbolic, lyapunov_exponent, rotation_number,
                                 rotation_stats, transfer_matrix)
from cocycle_kam.fourier import FourierSeries
from cocycle_kam.frequency import Frequency
from cocycle_kam.lie2 import rotation

FREQ = Frequency.golden(N_max=1000)


def rot_series(n, double=False):
    """theta -> R_{n theta} (R_{n theta / 2} on the doubled torus)."""
    half = 0.5
    modes = {n: np.array([[half, 0.5j], [-0.5j, half]]), -n: np.array([[half, -0.5j], [0.5j, half]])}
    return FourierSeries.from_modes(modes, 1, "mat_real", double_period=double)


def amo(lam, E):
    W = FourierSeries.from_modes({1: lam, -1: lam}, 1, "real")
    return Cocycle.schrodinger_cocycle(FREQ, E, W)


def test_rot_series_helper():
    t = 0.7
    assert np.allclose(rot_series(3).eval(t), rotation(3 * t))
    assert np.allclose(rot_series(1, True).eval(t), rotation(t / 2))


def test_transfer_matrix_examples():
    c = Cocycle.constant(FREQ, np.array([[2.0, 1.0], [1.0, 1.0]]))
    assert np.array_equal(transfer_matrix(c, 0.3, 0), np.eye(2))
    assert np.allclose(transfer_matrix(c, 0.3, 5), np.linalg.matrix_power(c.A_const, 5))
    g = Cocycle.general(FREQ, rot_series(1).mul(FourierSeries.constant(np.diag([1.5, 1 / 1.5]), kind="mat_real")))
    th = 0.4
    want = np.eye(2)
    for j in range(100):
        t = th + j * FREQ.alpha[0]
        want = rotation(t) @ np.diag([1.5, 1 / 1.5]) @ want
    assert np.allclose(transfer_matrix(g, th, 100), want, rtol=1e-10, atol=1e-10 * np.abs(want).max())


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 40), st.integers(0, 40), st.floats(0, 2 * math.pi))
def test_cocycle_identity(n, m, th):
    c = amo(0.7, 0.4)
    lhs = transfer_matrix(c, th, n + m)
    rhs = transfer_matrix(c, th + m * FREQ.alpha[0], n) @ transfer_matrix(c, th, m)
    assert np.abs(lhs - rhs).max() <= 1e-8 * max(1.0, np.abs(lhs).max())


def test_invariants_and_errors():
    amo(1.0, 0.2).check_invariants()
    bad = Cocycle.constant(FREQ, np.diag([2.0, 2.0]))
    with pytest.raises(CocycleError):
        bad.check_invariants()
    with pytest.raises(CocycleError):
        transfer_matrix(bad, 0.0, -1)
    with pytest.raises(CocycleError):
        lyapunov_exponent(bad, 10)


def test_lyapunov_examples():
    st_ = lyapunov_exponent(Cocycle.constant(FREQ, np.diag([2.0, 0.5])), 10_000)
    assert st_.le_estimate == pytest.approx(math.log(2), abs=1e-9)
    assert abs(lyapunov_exponent(Cocycle.constant(FREQ, rotation(0.9)), 10_000).le_estimate) <= 1e-6


def test_lyapunov_amo_in_spectrum():
    st_ = lyapunov_exponent(amo(1e-3, 0.3), 100_000)
    assert abs(st_.le_estimate) <= 2e-2
    assert st_.le_estimate >= -1e-6


def test_lyapunov_supercritical_amo():
    # Herman's bound: L >= log(lam) for the almost Mathieu operator with coupling 2 lam cos
    st_ = lyapunov_exponent(amo(2.0, 0.1), 20_000)
    assert st_.le_estimate >= math.log(2.0) - 1e-2


def test_lyapunov_conjugation_invariance():
    c = Cocycle.general(FREQ, amo(1.5, 0.2).map)
    B = FourierSeries.from_modes({0: np.eye(2), 1: np.array([[0, 0.1], [0, 0]]),
                                  -1: np.array([[0, 0.1], [0, 0]])}, 1, "mat_real")
    cc = conjugate(c, B)
    a, b = lyapunov_exponent(c, 20_000), lyapunov_exponent(cc, 20_000)
    assert abs(a.le_estimate - b.le_estimate) <= 2 * (a.le_std_error + b.le_std_error) + 1e-3


def test_rotation_number_examples():
    assert rotation_number(Cocycle.constant(FREQ, rotation(0.8)), 100_000) == pytest.approx(0.8, abs=1e-8)
    assert abs(rotation_number(Cocycle.constant(FREQ, np.diag([2.0, 0.5])), 10_000)) <= 1e-3
    assert rotation_number(amo(0.0, 0.0), 20_000) == pytest.approx(math.pi / 2, abs=1e-8)


def test_rotation_free_closed_form():
    for E in np.linspace(-1.9, 1.9, 9):
        assert rotation_number(amo(0.0, E), 20_000) == pytest.approx(math.acos(E / 2), abs=1e-6)


def test_rotation_monotone_in_energy():
    Es = np.linspace(-2.5, 2.5, 100)
    rho = [rotation_stats(amo(0.5, E), 4000)["rho"] for E in Es]
    assert all(b <= a + 1e-3 for a, b in zip(rho, rho[1:]))


def test_rotation_convergence_warning(monkeypatch):
    st_ = rotation_stats(Cocycle.constant(FREQ, rotation(0.8)), 1000)
    assert st_["converged"] and st_["spread"] <= 1e-12
    import cocycle_kam.cocycle as cmod
    monkeypatch.setattr(cmod, "rotation_stats", lambda *a, **k: {"rho": 1.0, "plain": 1.5, "spread": 0.5,
                                                                 "converged": False})
    with pytest.warns(ConvergenceWarning):
        assert cmod.rotation_number(amo(0.5, 0.0), 1000) == 1.0


def test_bump_weights():
    w = bump_weights(1000)
    assert w.sum() == pytest.approx(1.0) and np.all(w >= 0) and w[0] < 1e-100


def test_degree_examples():
    assert degree(rot_series(3))[0] == 3
    assert degree(FourierSeries.constant(np.eye(2), kind="mat_real"))[0] == 0
    assert degree(rot_series(2).mul(rot_series(3)))[0] == 5
    assert degree(rot_series(1, True))[0] == 1


@settings(max_examples=20, deadline=None)
@given(st.integers(-4, 4), st.integers(-4, 4))
def test_degree_additive(a, b):
    A, B = rot_series(a) if a else FourierSeries.constant(np.eye(2), kind="mat_real"), \
        rot_series(b) if b else FourierSeries.constant(np.eye(2), kind="mat_real")
    assert degree(A.mul(B))[0] == degree(A)[0] + degree(B)[0]


def test_conjugate_identity_and_shift():
    c = Cocycle.constant(FREQ, rotation(0.6))
    same = conjugate(c, FourierSeries.constant(np.eye(2), kind="mat_real"))
    assert np.allclose(same.eval(np.linspace(0, 6, 7)), c.eval(np.linspace(0, 6, 7)))
    shifted = conjugate(c, rot_series(1, True))
    want = (0.6 + FREQ.alpha[0] / 2) % (2 * math.pi)
    assert rotation_number(shifted, 50_000) % (2 * math.pi) == pytest.approx(want, abs=1e-6)
    # degree-0 conjugacy leaves rho unchanged
    B = FourierSeries.from_modes({0: np.eye(2), 2: np.array([[0, 0.2], [0, 0]]),
                                  -2: np.array([[0, 0.2], [0, 0]])}, 1, "mat_real")
    assert rotation_number(conjugate(c, B), 50_000) == pytest.approx(0.6, abs=1e-6)


def test_conjugate_rejects_singular():
    B = FourierSeries.constant(np.diag([1e5, 1e-5]), kind="mat_real")
    with pytest.raises(CocycleError):
        conjugate(Cocycle.constant(FREQ, rotation(0.3)), B, max_cond=1e8)


def test_uniform_hyperbolicity_examples():
    ok, cert = is_uniformly_hyperbolic(Cocycle.constant(FREQ, np.diag([2.0, 0.5])))
    assert ok and cert["per_step"] == pytest.approx(2.0, rel=0.05)
    assert not is_uniformly_hyperbolic(Cocycle.constant(FREQ, rotation(0.9)), horizon=256)[0]
    assert is_uniformly_hyperbolic(amo(1e-3, 3.0), horizon=1000)[0]
    with pytest.raises(CocycleError):
        is_uniformly_hyperbolic(amo(0, 3.0), horizon=20_000)


def test_uh_soundness_on_zero_lyapunov():
    for E in (-1.0, 0.2, 1.7):
        c = amo(1e-3, E)
        assert lyapunov_exponent(c, 20_000).le_estimate < 1e-4
        assert not is_uniformly_hyperbolic(c, horizon=64)[0]


def test_csv_row_format():
    st_ = lyapunov_exponent(Cocycle.constant(FREQ, np.diag([2.0, 0.5])), 1000)
    row = csv_row(0.1, st_, True)
    parts = row.split(",")
    assert len(parts) == 5 and parts[-1] == "1" and float(parts[0]) == 0.1
    assert float(parts[1]) == st_.le_estimate
