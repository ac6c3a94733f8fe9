import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cocycle_kam.fourier import (FourierError, FourierSeries, mollify, mollify_constants, mollify_cutoff,
                                 remainder, truncate)


def cos_series(m=1, amp=1.0):
    return FourierSeries.from_modes({m: amp / 2, -m: amp / 2}, 1, "real")


def brute_eval(modes, theta):
    # independent oracle: sum of exponentials, one term at a time
    return sum(c * complex(math.cos(n * theta), math.sin(n * theta)) for n, c in modes.items())


@st.composite
def real_series(draw, max_R=6):
    R = draw(st.integers(0, max_R))
    vals = draw(st.lists(st.tuples(st.floats(-1, 1), st.floats(-1, 1)), min_size=R + 1, max_size=R + 1))
    modes = {}
    for n, (a, b) in enumerate(vals):
        if n == 0:
            modes[0] = a
        else:
            modes[n] = complex(a, b)
            modes[-n] = complex(a, -b)
    return FourierSeries.from_modes(modes, 1, "real")


def test_eval_examples():
    assert FourierSeries.constant(3.0).eval(1.234) == pytest.approx(3.0)
    c = cos_series()
    assert c.eval(0.0) == pytest.approx(1.0)
    assert c.eval(math.pi / 3) == pytest.approx(brute_eval({1: 0.5, -1: 0.5}, math.pi / 3).real, abs=1e-15)
    assert c.eval(math.pi / 3) == pytest.approx(0.5)


def test_eval_matches_oracle_complex_2d():
    rng = np.random.default_rng(1)
    modes = {(int(a), int(b)): complex(*rng.normal(size=2)) for a, b in rng.integers(-3, 4, size=(8, 2))}
    f = FourierSeries.from_modes(modes, 2, "complex")
    th = rng.uniform(0, 2 * np.pi, size=(5, 2))
    want = [sum(c * np.exp(1j * (n[0] * t[0] + n[1] * t[1])) for n, c in modes.items()) for t in th]
    assert np.allclose(f.eval(th), want, atol=1e-13)


def test_eval_dimension_mismatch():
    with pytest.raises(FourierError):
        FourierSeries.from_modes({(1, 0): 1.0}, 2).eval(np.zeros((4, 3)))


def test_analytic_norm_examples():
    h = 0.37
    assert FourierSeries.from_modes({1: 1.0}).analytic_norm(h) == pytest.approx(math.exp(h))
    assert FourierSeries.zeros().analytic_norm(2.0) == 0.0
    f = FourierSeries.from_modes({2: 0.3, -2: 0.3}, 1, "real")
    assert f.analytic_norm(0.5) == pytest.approx(2 * 0.3 * math.e)
    assert f.analytic_norm(0.5) == pytest.approx(1.630969, abs=1e-6)


def test_ck_norm_examples():
    C = np.array([[1.0, 2.0], [0.0, -1.0]])
    assert FourierSeries.constant(C, kind="mat_real").ck_norm(3) == pytest.approx(np.linalg.norm(C, 2))
    t = np.linspace(0, 2 * np.pi, 20001)
    # dense-grid oracles from the closed-form derivatives
    assert cos_series().ck_norm(1) == pytest.approx(max(np.abs(np.cos(t)).max(), np.abs(np.sin(t)).max()), abs=1e-9)
    assert cos_series(2).ck_norm(2) == pytest.approx(np.abs(-4 * np.cos(2 * t)).max(), abs=1e-9)
    assert cos_series(2).ck_norm(2) == pytest.approx(4.0)


def test_ck_norm_grid_too_coarse():
    with pytest.raises(FourierError):
        cos_series(10).ck_norm(1, grid_size=16)


def test_truncate_remainder_examples():
    f = FourierSeries.from_modes({3: 1.0})
    assert truncate(f, 2).is_zero()
    assert np.array_equal(remainder(f, 2).coeffs, f.coeffs)
    g = FourierSeries.constant(5.0)
    assert np.array_equal(truncate(g, 1.5).coeffs, g.coeffs) and remainder(g, 1.5).is_zero()
    h = FourierSeries.from_modes({0: 1.0, 1: 2.0, -1: 2.0, 4: 3.0, -4: 3.0}, 1, "real")
    assert sorted(n for n, _ in truncate(h, 2).items()) == [(-1,), (0,), (1,)]
    assert sorted(n for n, _ in remainder(h, 2).items()) == [(-4,), (4,)]


@settings(max_examples=40, deadline=None)
@given(real_series(), st.floats(0.1, 7.0))
def test_truncate_remainder_partition(f, N):
    t, rm = truncate(f, N), remainder(f, N)
    assert (t + rm - f).is_zero()
    assert all(max(map(abs, n)) <= N for n, _ in t.items()) and all(max(map(abs, n)) > N for n, _ in rm.items())


@settings(max_examples=40, deadline=None)
@given(real_series(), real_series(), st.floats(0, 2), st.floats(0, 2))
def test_norm_properties(f, g, r1, r2):
    lo, hi = sorted((r1, r2))
    assert f.analytic_norm(lo) <= f.analytic_norm(hi) * (1 + 1e-15)
    assert (f + g).analytic_norm(hi) <= (f.analytic_norm(hi) + g.analytic_norm(hi)) * (1 + 1e-12) + 1e-15
    assert f.c0_norm() <= f.analytic_norm(0.0) * (1 + 1e-12) + 1e-15


def test_c0_below_majorant_random():
    rng = np.random.default_rng(7)
    for _ in range(10):
        X = rng.normal(size=(5, 2, 2)) + 1j * rng.normal(size=(5, 2, 2))
        f = FourierSeries.from_modes({n - 2: X[n] for n in range(5)}, 1, "mat_complex")
        assert f.c0_norm() <= f.analytic_norm(0.0)


def test_mollify_band_limited_fixed_point():
    f = FourierSeries.from_modes({0: 0.2, 1: 0.5, -1: 0.5, 2: 0.1j, -2: -0.1j}, 1, "real")
    j = 6
    assert mollify_cutoff(j) / 2 >= f.radius
    assert (mollify(f, j) - f).analytic_norm(0.0) <= 1e-12


def test_mollify_cos_large_j():
    f = cos_series()
    t = np.linspace(0, 2 * np.pi, 4001)
    assert np.abs(mollify(f, 50).eval(t) - np.cos(t)).max() <= 1e-10


def test_mollify_step_decay():
    f = FourierSeries.from_modes({n: (abs(n) ** -3.0 if n else 1.0) for n in range(-8, 9)}, 1, "real")
    steps = [(mollify(f, j + 1) - mollify(f, j)).analytic_norm(1.0 / (j + 1)) for j in range(1, 11)]
    pos = [s for s in steps if s > 0]
    # once the window covers the support the difference vanishes
    assert all(b <= a for a, b in zip(pos, pos[1:]))
    assert steps[-1] == 0.0


def test_mollify_constants_uniform():
    # C^k data that is not a trig polynomial of low degree: coefficients ~ |n|^{-6}
    f = FourierSeries.from_modes({n: (abs(n) ** -6.0 if n else 0.0) for n in range(-60, 61)}, 1, "real")
    rows = mollify_constants(f, 2, range(1, 21))
    assert max(r["C_strip"] for r in rows) < 10
    assert max(r["C_step"] for r in rows) < 50
    errs = [r["approx_err_k"] for r in rows]
    assert errs[-1] < errs[0]


def test_mollify_rejects_bad_index():
    with pytest.raises(FourierError):
        mollify(cos_series(), 0)


def test_json_round_trip_and_order():
    f = FourierSeries.from_modes({(2, -1): [[1, 2j], [3, 4]], (-1, 0): [[0, 1], [1, 0]]}, 2, "mat_complex")
    obj = f.to_json_obj()
    assert [e["n"] for e in obj["coeffs"]] == sorted(e["n"] for e in obj["coeffs"])
    g = FourierSeries.from_json(f.to_json())
    assert np.array_equal(g.coeffs, f.coeffs) and g.kind == f.kind


def test_double_period_conversion():
    f = cos_series(3)
    d = f.to_double()
    assert d.double_period and d.eval(1.0) == pytest.approx(f.eval(1.0))
    half = FourierSeries.from_modes({1: 1.0}, double_period=True)
    assert half.eval(2 * np.pi) == pytest.approx(-1.0) and half.eval(4 * np.pi) == pytest.approx(1.0)
    assert np.allclose(d.to_torus().coeffs, f.coeffs)
    with pytest.raises(FourierError):
        FourierSeries.from_modes({1: 1.0}, double_period=True).to_torus()


def test_product_is_pointwise():
    rng = np.random.default_rng(3)
    A = FourierSeries.from_modes({n: rng.normal(size=(2, 2)) for n in range(-2, 3)}, 1, "mat_complex")
    B = FourierSeries.from_modes({n: rng.normal(size=(2, 2)) for n in range(-3, 2)}, 1, "mat_complex")
    t = rng.uniform(0, 2 * np.pi, 7)
    assert np.allclose((A @ B).eval(t), A.eval(t) @ B.eval(t), atol=1e-12)


@pytest.mark.parametrize("dim,double", [(1, False), (1, True), (2, False)])
def test_grid_values_fft_matches_direct_eval(dim, double):
    rng = np.random.default_rng(11)
    modes = {tuple(int(x) for x in rng.integers(-5, 6, dim)): rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
             for _ in range(12)}
    f = FourierSeries.from_modes(modes, dim, "mat_complex", double)
    G = 16
    t = np.arange(G) * ((4 if double else 2) * np.pi / G)
    pts = np.stack(np.meshgrid(*([t] * dim), indexing="ij"), axis=-1)
    assert np.abs(f.grid_values(G) - f.eval(pts)).max() <= 1e-13
