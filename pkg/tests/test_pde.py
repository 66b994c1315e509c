import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kolmopinn.network import Architecture, ParameterVector, forward, random_params
from kolmopinn.pde import (AffineDiffusion, AffineDrift, CapabilityError, DomainError, KolmogorovPde,
                           analytic_heat_solution, analytic_residuals, apply_operator, black_scholes_instance,
                           constant, generator, heat_instance, quadratic, residual_interior, residual_spatial,
                           residual_temporal, sinusoid)


def zero_pde(d, initial, boundary=None):
    return KolmogorovPde(d, 1.0, AffineDrift.zero(d), AffineDiffusion.constant(np.zeros((d, d))), initial, boundary)


def test_operator_vanishes_without_coefficients():
    pde = zero_pde(2, quadratic(d=2))
    x = np.array([[0.3, 0.8]])
    assert apply_operator(pde, x, np.array([[1.0, 2.0]]), np.eye(2)[None])[0] == 0.0


def test_operator_half_factor():
    pde = KolmogorovPde(1, 1.0, AffineDrift.zero(1), AffineDiffusion.constant([[math.sqrt(2.0)]]), quadratic(d=1))
    out = apply_operator(pde, np.array([[0.4]]), np.array([[0.8]]), np.array([[[2.0]]]))
    assert abs(out[0] - 2.0) <= 1e-15


def test_heat_laplacian_of_quadratic():
    pde = heat_instance(2, 1.0)
    x = np.array([[0.2, 0.7]])
    assert abs(apply_operator(pde, x, 2 * x, 2 * np.eye(2)[None])[0] - 4.0) <= 1e-14


def test_generator_heat_sine():
    pde = heat_instance(1, 1.0)
    assert abs(generator(pde, np.array([[0.5]]))[0] + math.pi**2) <= 1e-12


def test_generator_black_scholes_quadratic():
    beta, rate = 0.2, 0.05
    pde = black_scholes_instance([beta], [[1.0]], rate, initial=quadratic(d=1))
    x = np.array([[1.0]])
    hand = 2 * beta**2 * 1.0 + rate * 1.0 * 2.0
    assert abs(generator(pde, x)[0] - hand) <= 1e-15
    assert generator(pde, x)[0] == apply_operator(pde, x, np.array([[2.0]]), np.array([[[2.0]]]))[0]


def test_generator_needs_derivatives():
    from kolmopinn.pde import ScalarField

    pde = zero_pde(1, ScalarField("opaque", lambda x: x[:, 0]))
    with pytest.raises(CapabilityError):
        generator(pde, np.array([[0.1]]))


def test_interior_residual_simple_networks():
    pde = zero_pde(1, constant(0.0, 1))
    z = ParameterVector.zeros(Architecture.mlp(2, 4, 3))
    assert residual_interior(pde, z, np.array([[0.3]]), 0.5)[0] == 0.0
    t_net = ParameterVector.from_layers(Architecture((2, 1)), [(np.array([[0.0, 1.0]]), np.zeros(1))])
    assert residual_interior(pde, t_net, np.array([[0.3], [0.9]]), np.array([0.1, 0.7])).tolist() == [1.0, 1.0]


def test_temporal_and_spatial_residuals():
    pde = heat_instance(1, 1.0)
    zero = ParameterVector.zeros(Architecture.mlp(2, 3, 2))
    assert abs(residual_temporal(pde, zero, np.array([[0.5]]))[0] + 1.0) <= 1e-15
    net = random_params(Architecture.mlp(2, 5, 3), 0)
    own = zero_pde(1, constant(0.0, 1), boundary=lambda y, t: forward(net, np.column_stack([y, t]))[:, 0])
    y = np.array([[0.0], [1.0], [1.0]])
    assert not np.any(residual_spatial(own, net, y, np.array([0.1, 0.5, 0.9])))
    with pytest.raises(DomainError):
        residual_spatial(own, net, np.array([[0.5]]), 0.1)


def test_black_scholes_construction():
    pde = black_scholes_instance([0.2], [[1.0]], 0.05)
    x = np.array([[0.7]])
    assert abs(0.5 * pde.diffusion.covariance(x)[0, 0, 0] - 0.04 * 0.49) <= 1e-15
    pde2 = black_scholes_instance([0.2, 0.3], np.eye(2), 0.05)
    assert pde2.diffusion.covariance(np.array([[0.4, 0.9]]))[0, 0, 1] == 0.0
    rho = np.array([[1.0, 0.3], [0.3, 1.0]])
    pde3 = black_scholes_instance([0.2, 0.3], rho, 0.05)
    x = np.array([[0.4, 0.9]])
    want = 2 * np.outer([0.2 * 0.4, 0.3 * 0.9], [0.2 * 0.4, 0.3 * 0.9]) * rho
    np.testing.assert_allclose(pde3.diffusion.covariance(x)[0], want, rtol=1e-14)
    with pytest.raises(ValueError):
        black_scholes_instance([0.2, 0.3], [[1.0, 2.0], [2.0, 1.0]], 0.05)


def test_heat_solution_values():
    x = np.array([[0.3, 0.6]])
    np.testing.assert_allclose(analytic_heat_solution(1.0, [1, 2], x, 0.0), sinusoid([1, 2])(x), rtol=1e-15)
    u = analytic_heat_solution(1.0, [1], np.array([[0.5]]), 0.1)[0]
    assert abs(u - math.exp(-math.pi**2 * 0.1)) <= 1e-15
    # 0.37273 is a loosely rounded quote of 0.3727078...
    assert abs(u - 0.37273) <= 5e-5


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 3), st.floats(0.05, 2.0), st.integers(0, 2**31))
def test_analytic_residuals_vanish(d, kappa, seed):
    pde = heat_instance(d, kappa, modes=np.arange(1, d + 1))
    gen = np.random.default_rng(seed)
    x = gen.uniform(size=(20, d))
    t = gen.uniform(size=20)
    y = gen.uniform(size=(20, d))
    y[:, 0] = gen.integers(0, 2, 20)
    r = analytic_residuals(pde, x, t, y, t, x)
    for v in r.values():
        assert np.max(np.abs(v)) <= 1e-8


def test_analytic_residuals_need_oracle():
    pde = black_scholes_instance([0.2], [[1.0]], 0.05)
    with pytest.raises(CapabilityError):
        analytic_residuals(pde, np.array([[0.5]]), 0.5)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 4), st.integers(0, 2**31), st.floats(-3, 3), st.floats(-3, 3))
def test_operator_is_linear(d, seed, a, b):
    gen = np.random.default_rng(seed)
    pde = KolmogorovPde(d, 1.0, AffineDrift(gen.normal(size=(d, d)), gen.normal(size=d)),
                        AffineDiffusion(gen.normal(size=(d, d)), gen.normal(size=(d, d, d))), quadratic(d=d))
    x = gen.uniform(size=(5, d))
    Q1, Q2 = gen.normal(size=(2, d, d))
    Q1, Q2 = Q1 + Q1.T, Q2 + Q2.T
    c1, c2 = gen.normal(size=(2, d))

    def op(Q, c):  # v(x) = x^T Q x / 2 + c.x
        return apply_operator(pde, x, x @ Q + c, np.broadcast_to(Q, (5, d, d)))

    combo = op(a * Q1 + b * Q2, a * c1 + b * c2)
    np.testing.assert_allclose(combo, a * op(Q1, c1) + b * op(Q2, c2), rtol=0,
                               atol=1e-12 * max(1.0, np.max(np.abs(combo))))


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 5), st.integers(0, 2**31))
def test_black_scholes_covariance(d, seed):
    gen = np.random.default_rng(seed)
    G = gen.normal(size=(d, d + 2))
    C = G @ G.T
    rho = C / np.sqrt(np.outer(np.diag(C), np.diag(C)))
    rho = 0.5 * (rho + rho.T)
    betas = gen.uniform(0.05, 0.5, d)
    pde = black_scholes_instance(betas, rho, 0.03)
    x = gen.uniform(size=(7, d))
    want = np.einsum("i,j,ij,bi,bj->bij", betas, betas, rho, x, x)
    assert np.max(np.abs(0.5 * pde.diffusion.covariance(x) - want)) <= 1e-12
