import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kolmopinn import rng
from kolmopinn.dynkin import (PathEnsemble, brownian_paths, dynkin_estimate, mollified_ramp, quadrature_weights,
                              reconstruct, reconstruct_path, riemann_reference, simulate_base_paths)
from kolmopinn.pde import (AffineDiffusion, AffineDrift, KolmogorovPde, black_scholes_instance, generator,
                           heat_instance, quadratic, sinusoid)
from kolmopinn.studies import heat_riemann_expectation


def still_pde(d=2):
    return KolmogorovPde(d, 1.0, AffineDrift.zero(d), AffineDiffusion.constant(np.zeros((d, d))), sinusoid([1] * d))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**40), st.integers(0, 1000), st.integers(1, 50))
def test_uniform_stream_is_addressable(seed, start, count):
    whole = rng.uniforms(seed, 0, start + count)
    assert np.array_equal(rng.uniforms(seed, start, count), whole[start:])
    assert np.all((whole > 0) & (whole < 1))


def test_sub_seed_labels():
    assert rng.sub_seed(1, "a") == rng.sub_seed(1, "a")
    assert len({rng.sub_seed(1, "a"), rng.sub_seed(1, "b"), rng.sub_seed(2, "a"), rng.sub_seed(1, 0)}) == 4


def test_still_paths_are_constant():
    ens = simulate_base_paths(still_pde(), 8, 5, 0)
    assert np.array_equal(ens.states, np.broadcast_to(ens.states[:, :1], ens.states.shape))


def test_gbm_mean():
    pde = black_scholes_instance([0.2], [[1.0]], 0.05)
    ens = simulate_base_paths(pde, 1, 100_000, 3, "exact-gbm")
    x1 = ens.states[:, -1, 1, 0]
    assert abs(x1.mean() - math.exp(0.05)) <= 3 * x1.std(ddof=1) / math.sqrt(x1.size)


def test_heat_variance_scaling():
    kappa, t = 0.3, 1.0
    ens = simulate_base_paths(heat_instance(1, kappa), 4, 100_000, 1)
    x = ens.states[:, -1, 0, 0]
    n = x.size
    var = x.var(ddof=1)
    se = var * math.sqrt(2.0 / (n - 1))
    assert abs(var - 2 * kappa * t) <= 3 * se


def test_euler_matches_exact_for_constant_coefficients():
    pde = heat_instance(2, 0.5)
    exact = simulate_base_paths(pde, 4, 50, 2, "exact-constant")
    euler = simulate_base_paths(pde, 4, 50, 2, "euler-maruyama", substeps=1)
    np.testing.assert_allclose(euler.states, exact.states, atol=1e-12)


def test_reconstruction_identities():
    pde = black_scholes_instance([0.2, 0.3], [[1.0, 0.5], [0.5, 1.0]], 0.05)
    ens = simulate_base_paths(pde, 6, 20, 4, "euler-maruyama", substeps=2)
    for j in range(2):
        e = np.eye(2)[j]
        assert np.array_equal(reconstruct_path(ens, e, 3, 5), ens.states[3, 5, j + 1])
    assert np.array_equal(reconstruct_path(ens, np.zeros(2), 3, 5), ens.states[3, 5, 0])


def test_reconstruction_constant_coefficients():
    S0 = np.array([[0.4, 0.1], [0.0, 0.3]])
    b = np.array([0.2, -0.1])
    pde = KolmogorovPde(2, 1.0, AffineDrift(np.zeros((2, 2)), b), AffineDiffusion.constant(S0), quadratic(d=2))
    N, M = 8, 10
    ens = simulate_base_paths(pde, N, M, 6)
    B = brownian_paths(6, 0, M, N, 2, 1.0 / N)
    x = np.array([[0.3, 0.9]])
    for n in (0, 3, N):
        want = x[0] + b * n / N + B[:, n] @ S0.T
        np.testing.assert_allclose(reconstruct(ens, x, n)[0], want, atol=1e-12)


def test_still_pde_returns_initial_datum():
    pde = still_pde()
    ens = simulate_base_paths(pde, 16, 100, 0)
    x = np.array([[0.2, 0.3], [0.6, 0.9]])
    np.testing.assert_array_equal(dynkin_estimate(pde, ens, x, [0.4, 1.0]), pde.initial(x))


def test_time_zero_returns_initial_datum():
    pde = heat_instance(1, 1.0)
    ens = simulate_base_paths(pde, 16, 100, 0)
    for rule in ("ramp", "trapezoid"):
        assert dynkin_estimate(pde, ens, np.array([0.3]), 0.0, rule) == pde.initial(np.array([[0.3]]))[0]


def test_heat_point_estimate():
    pde = heat_instance(1, 1.0)
    ens = simulate_base_paths(pde, 128, 20_000, 11)
    est, se = dynkin_estimate(pde, ens, np.array([0.5]), 0.1, "trapezoid", return_error=True)
    assert abs(est - math.exp(-math.pi**2 * 0.1)) <= 3 * se


def test_single_rectangle():
    pde = heat_instance(1, 1.0)
    ens = simulate_base_paths(pde, 1, 500, 2)
    x = np.array([0.4])
    want = pde.initial(x[None])[0] + 1.0 * generator(pde, reconstruct(ens, x[None], 1)[0]).mean()
    assert abs(dynkin_estimate(pde, ens, x, 1.0, "ramp") - want) <= 1e-15


def test_quadrature_weights_integrate_linear_functions():
    N, T = 10, 2.0
    grid = np.linspace(0, T, N + 1)
    for t in (0.0, 0.37, 1.0, 2.0):
        w = quadrature_weights(N, T, t, "trapezoid")[0]
        assert abs(w @ (3 + grid) - (3 * t + t * t / 2)) <= 1e-14
        assert abs(quadrature_weights(N, T, t, "ramp")[0].sum() - t) <= 1e-14


def test_reference_matches_single_ensemble_and_threads():
    pde = heat_instance(2, 0.1)
    x = np.array([[0.3, 0.4], [0.7, 0.2]])
    t = np.array([0.5, 1.0])
    ens = simulate_base_paths(pde, 16, 3000, 5)
    direct = dynkin_estimate(pde, ens, x, t, "ramp")
    one = riemann_reference(pde, x, t, 16, 3000, 5, chunk=1000)[0]
    many = riemann_reference(pde, x, t, 16, 3000, 5, chunk=1000, threads=4)[0]
    np.testing.assert_allclose(one, direct, rtol=0, atol=1e-12)
    assert np.array_equal(one, many)


def test_reference_matches_closed_form_sum():
    pde = heat_instance(1, 1.0)
    x, t, N = np.array([0.5]), 0.5, 64
    est, se = riemann_reference(pde, x, t, N, 100_000, 8)
    exact_sum = heat_riemann_expectation(pde, x, t, N)
    assert abs(est - exact_sum) <= 3 * se
    u = float(pde.exact.value(x[None], np.array([t]))[0])
    assert abs(exact_sum - u) <= 1.0 / math.sqrt(N)


def test_ensemble_round_trip(tmp_path):
    ens = simulate_base_paths(heat_instance(1, 1.0), 4, 10, 0)
    back = PathEnsemble.load(ens.save(tmp_path / "ens.npz"))
    assert np.array_equal(back.states, ens.states) and back.scheme == ens.scheme


def test_scheme_checks():
    with pytest.raises(ValueError):
        simulate_base_paths(black_scholes_instance([0.2], [[1.0]], 0.05), 4, 4, 0, "exact-constant")


def test_mollified_ramp():
    eps = 0.1
    h = mollified_ramp(eps)
    c = math.pi * eps**2 / 2
    mid = np.linspace(c, 1 - c, 1001)
    np.testing.assert_array_equal(h.value(mid), mid)
    z = np.linspace(-1, 2, 300_001)
    assert np.max(np.abs(h.value(z) - h.exact(z))) <= c + 1e-15
    assert np.max(np.abs(h.derivative(z))) <= 1.0
    step = z[1] - z[0]
    fd = np.gradient(h.value(z), step)
    assert np.max(np.abs(fd - h.derivative(z))) <= 1e-3


def test_euler_against_exact_gbm():
    pde = black_scholes_instance([0.3], [[1.0]], 0.05)
    exact = simulate_base_paths(pde, 4, 40_000, 1, "exact-gbm").states[:, -1, 1, 0]
    euler = simulate_base_paths(pde, 4, 40_000, 2, "euler-maruyama", substeps=16).states[:, -1, 1, 0]
    se = math.hypot(exact.std(ddof=1), euler.std(ddof=1)) / math.sqrt(40_000)
    assert abs(exact.mean() - euler.mean()) <= 3 * se
