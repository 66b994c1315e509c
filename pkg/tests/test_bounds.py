import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kolmopinn.bounds import (cq_empirical, cumulative_l2_bound, decomposition_check, delta_cover, estimate_rho_d,
                              ledger_from_constants, lipschitz_ledger, pinn_sample_size, sample_size_generic,
                              sample_size_specialized, supervised_sample_size)
from kolmopinn.network import Architecture
from kolmopinn.pde import AffineDiffusion, AffineDrift, KolmogorovPde, constant, heat_instance

mp.mp.dps = 50


def test_ledger_hand_values():
    led = ledger_from_constants(1.0, 2.0, 3.0, 1, 2, 2, 1.0)
    assert led.residual == 2**5 * 9 * 64 * 16 * 1 * 2**6 * 2**4
    assert abs(led.residual - 3.02e8) <= 0.01e8
    one = ledger_from_constants(1.5, 2.0, 3.0, 3, 1, 7, 0.5)
    assert one.jacobian == 2 * 1.5 * (3 + 7) * 0.5
    assert ledger_from_constants(1.0, 1.0, 1.0, 1, 2, 10, 1.0).c_t == 20


def test_heat_ledger_inputs():
    led = lipschitz_ledger(heat_instance(1, 1.0), Architecture.mlp(2, 10, 2, 1.0))
    assert led.d == 2 and led.alpha == 1.0 and led.beta == 2.0
    # 1 + |mu| + |sigma sigma^T| with sigma^2 = 2 kappa
    assert abs(led.C - 3.0) <= 1e-15


def test_generic_hand_value():
    s = sample_size_generic(1, 1.0, 1.0, 1.0, 0.5, 0.5)
    assert s.count == 23
    assert s.count == math.ceil(8 * (math.log(8) + math.log(2)))


def test_generic_floor_rule():
    s = sample_size_generic(1, 1.0, 1.0, 1.0, 10.0, 0.99)
    assert s.raw <= 0 and s.count == 1


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 20), st.floats(0.1, 10), st.floats(0.5, 10), st.floats(1.0, 1e6), st.floats(0.01, 0.9))
def test_cumulative_dominates_probabilistic(k, a, c, lip, eps):
    eta = eps**2 / (2 * c)
    cum = sample_size_generic(k, a, c, lip, eps, mode="cumulative")
    prob = sample_size_generic(k, a, c, lip, eps, eta)
    # raw values can both be negative (4x a negative number is smaller); the sizes still dominate
    assert cum.count >= prob.count


def oracle_supervised(d, L, W, R, eps):
    d, L, W, R, eps = (mp.mpf(v) for v in (d, L, W, R, eps))
    return 16 * d * (L + 3) ** 2 * W**6 * R**4 / eps**4 * mp.log(4 * (d + 4) ** (mp.mpf(1) / 5) * R * W / eps)


def oracle_pinn(d, L, W, R, beta, C, cq, eps):
    d, L, W, R, beta, C, cq, eps = (mp.mpf(v) for v in (d, L, W, R, beta, C, cq, eps))
    arg = 4 * cq * R * W * beta * (C * (d + 7) / eps**2) ** (mp.mpf(1) / 6)
    return 24 * d * L**2 * W**2 * cq**2 / eps**4 * mp.log(arg)


def test_supervised_worked_value():
    s = supervised_sample_size(1, 2, 10, 1.0, 0.1)
    raw = oracle_supervised(1, 2, 10, 1, "0.1")
    assert s.count == int(mp.ceil(raw))
    assert abs(s.count - 2.5e13) <= 0.05e13


def test_pinn_worked_value():
    s = pinn_sample_size(1, 2, 10, 1.0, 2.0, 3.0, 20.0, 0.1)
    assert s.count == int(mp.ceil(oracle_pinn(1, 2, 10, 1, 2, 3, 20, "0.1")))
    assert abs(s.count - 3.3e11) <= 0.05e11


def test_eps_halving_scaling():
    a = supervised_sample_size(1, 2, 10, 1.0, 0.1).raw
    b = supervised_sample_size(1, 2, 10, 1.0, 0.05).raw
    assert 16 < b / a < 16 * 1.2


def test_specialized_plan_rows():
    plan = sample_size_specialized(heat_instance(1, 1.0), Architecture.mlp(2, 10, 2), 0.1, "supervised")
    rows = list(plan.rows())
    assert [r[0] for r in rows] == ["interior", "spatial", "temporal"]
    assert rows[0][2] == supervised_sample_size(1, 2, 10, 1.0, 0.1).count


def test_cq_empirical():
    zero = KolmogorovPde(1, 1.0, AffineDrift.zero(1), AffineDiffusion.constant([[0.0]]), constant(0.0, 1))
    assert cq_empirical(zero, Architecture.mlp(2, 10, 2, 0.0), 10, 0) == 0.0
    pde = heat_instance(1, 1.0)
    arch = Architecture.mlp(2, 10, 2, 1.0)
    few, many = cq_empirical(pde, arch, 100, 3), cq_empirical(pde, arch, 1000, 3)
    assert few <= many <= lipschitz_ledger(pde, arch).c_i


def test_cumulative_bound_values():
    assert cumulative_l2_bound(0, 0, 0, 0, 2.0, 1.0, 1.0) == 0.0
    assert abs(cumulative_l2_bound(0, 0, 0, 0.01, math.e, 0.0, 1.0) - math.e * 0.03) <= 1e-15


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0, 10), min_size=7, max_size=7), st.integers(0, 6), st.floats(0.01, 5))
def test_cumulative_bound_monotone(args, which, bump):
    bigger = list(args)
    bigger[which] += bump
    assert cumulative_l2_bound(*bigger) >= cumulative_l2_bound(*args)


def test_delta_cover_examples():
    c = delta_cover(1.0, 2, 0.5)
    assert sorted(map(tuple, c)) == [(-0.5, -0.5), (-0.5, 0.5), (0.5, -0.5), (0.5, 0.5)]
    single = delta_cover(2.0, 3, 2.0)
    assert single.shape == (1, 3) and not np.any(single)


@settings(max_examples=25, deadline=None)
@given(st.floats(0.1, 5), st.integers(1, 3), st.floats(0.05, 1.0), st.integers(0, 2**31))
def test_delta_cover_covers(a, k, frac, seed):
    delta = frac * a
    centers = delta_cover(a, k, delta)
    probes = np.random.default_rng(seed).uniform(-a, a, (2000, k))
    dist = np.min(np.max(np.abs(probes[:, None, :] - centers[None]), axis=2), axis=1)
    assert np.all(dist <= delta * (1 + 1e-12))


def test_decomposition_constant_family():
    data = np.random.default_rng(0).uniform(size=20)
    rep = decomposition_check(lambda th, z: np.full_like(z, 0.2), lambda z: z, 1.0, 1, 0.25, data)
    assert rep.gen_modulus == 0.0 and rep.train_modulus == 0.0
    assert rep.holds


def test_decomposition_linear_family():
    gen = np.random.default_rng(1)
    for _ in range(10):
        data = gen.uniform(size=15)
        rep = decomposition_check(lambda th, z: th[0] * z, lambda z: np.sin(3 * z), 1.0, 1, 0.2, data)
        assert rep.holds


def test_decomposition_modulus_shrinks_with_delta():
    data = np.random.default_rng(2).uniform(size=15)
    fam = lambda th, z: th[0] * z + th[1] * z * z  # noqa: E731
    mods = [decomposition_check(fam, np.cos, 1.0, 2, d, data, fine_per_axis=21).gen_modulus for d in (0.8, 0.4, 0.1)]
    assert mods[0] >= mods[1] >= mods[2]


def test_rho_zero_and_nested():
    zero = KolmogorovPde(2, 1.0, AffineDrift.zero(2), AffineDiffusion.constant(np.zeros((2, 2))), constant(0.0, 2))
    assert estimate_rho_d(zero, M=50).value == 0.0
    r = estimate_rho_d(heat_instance(1, 1.0), M=500)
    vals = [r.per_grid[g] for g in sorted(r.per_grid)]
    assert vals == sorted(vals)


def test_rho_dimension_growth_is_mild():
    r1 = estimate_rho_d(heat_instance(1, 1.0), M=2000, seed=1).value
    r4 = estimate_rho_d(heat_instance(4, 1.0), M=2000, seed=1).value
    # constant diffusion: increments scale like sqrt(d)
    assert r4 / r1 <= 2 * math.sqrt(4)


def test_rho_parameter_checks():
    with pytest.raises(ValueError):
        estimate_rho_d(heat_instance(1, 1.0), p=2.0)


def test_residual_map_dominance():
    from kolmopinn.network import random_params
    from kolmopinn.training import generalization_error_mc

    pde = heat_instance(1, 1.0)
    arch = Architecture.mlp(2, 4, 2, 1.0)
    bound = lipschitz_ledger(pde, arch).residual
    gen = np.random.default_rng(0)
    worst = 0.0
    for k in range(100):
        th = random_params(arch, 2 * k)
        vt = th.with_values(np.clip(th.values + gen.uniform(-0.05, 0.05, arch.n_params), -1, 1))
        a = generalization_error_mc(th, pde, 500, k)["interior"]
        b = generalization_error_mc(vt, pde, 500, k)["interior"]
        slack = 3 * math.hypot(a.stderr, b.stderr)
        dist = np.max(np.abs(th.values - vt.values))
        worst = max(worst, (abs(a.estimate - b.estimate) - slack) / dist)
    assert worst <= bound
