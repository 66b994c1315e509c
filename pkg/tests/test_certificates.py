import json
import math

import numpy as np
import pytest

from kolmopinn.certificates import (Certificate, ResidualNorms, certify, l2_certificate, residual_norms,
                                    stability_constants)
from kolmopinn.network import Architecture, ParameterVector, random_params
from kolmopinn.pde import (AffineDiffusion, AffineDrift, CapabilityError, KolmogorovPde, black_scholes_instance,
                           constant, heat_instance)


def test_heat_constants():
    sc = stability_constants(heat_instance(1, 1.0))
    assert sc.C0 == 0.0 and sc.div_mu == 0.0
    assert abs(sc.C1 - math.e) <= 1e-15
    assert sc.C3 == 0.0


def test_drift_divergence():
    pde = KolmogorovPde(1, 1.0, AffineDrift([[1.0]], [0.0]), AffineDiffusion.constant([[0.0]]), constant(0.0, 1))
    assert stability_constants(pde).div_mu == 1.0


def test_black_scholes_c0():
    assert abs(stability_constants(black_scholes_instance([0.2], [[1.0]], 0.05)).C0 - 0.16) <= 1e-15


def test_zero_residuals_zero_bound():
    cert = l2_certificate(ResidualNorms(0.0, 0.0, 0.0), stability_constants(heat_instance(1, 1.0)), "user", C2=5.0)
    assert cert.bound == 0.0


def test_interior_contribution_scales_quadratically():
    sc = stability_constants(black_scholes_instance([0.2], [[1.0]], 0.05))
    base = ResidualNorms(0.01, 0.02, 0.03)
    doubled = ResidualNorms(0.04, 0.02, 0.03)  # ||R_i|| doubled
    b0 = Certificate.rhs(base, sc, 1.5)
    b1 = Certificate.rhs(doubled, sc, 1.5)
    assert abs((b1 - b0) - sc.C1 * 3 * 0.01) <= 1e-15


def test_oracle_mode_needs_oracle():
    pde = black_scholes_instance([0.2], [[1.0]], 0.05, boundary=lambda y, t: np.zeros(len(t)))
    p = random_params(Architecture.mlp(2, 4, 2), 0)
    with pytest.raises(CapabilityError):
        l2_certificate(ResidualNorms(0, 0, 0), stability_constants(pde), "oracle", pde=pde, params=p)


def test_heuristic_mode_is_flagged():
    from kolmopinn.dynkin import dynkin_trace

    pde = black_scholes_instance([0.2], [[1.0]], 0.05)
    pde = pde.with_boundary(dynkin_trace(pde, 16, 200, 0))
    p = random_params(Architecture.mlp(2, 4, 2), 0)
    cert = certify(p, pde, "heuristic", 200, 0)
    assert cert.rigorous is False and cert.measured is None
    assert json.loads(cert.to_json())["rigorous"] is False


def test_exact_residual_norms_for_constant_network():
    pde = KolmogorovPde(2, 2.0, AffineDrift.zero(2), AffineDiffusion.constant(np.zeros((2, 2))), constant(0.0, 2),
                        lambda y, t: np.zeros(len(t)))
    arch = Architecture((3, 1), bound=1.0)
    net = ParameterVector.from_layers(arch, [(np.zeros((1, 3)), np.array([0.5]))])
    n = residual_norms(net, pde, 100, 0)
    assert n.interior_sq == 0.0
    assert abs(n.temporal_sq - 0.25) <= 1e-15  # |D| = 1
    assert abs(n.spatial - math.sqrt(4 * 2.0 * 0.25)) <= 1e-15  # |boundary| = 4, T = 2


def test_certificate_recomputes():
    pde = heat_instance(1, 1.0)
    p = random_params(Architecture.mlp(2, 5, 2), 3)
    cert = certify(p, pde, "oracle", 2000, 0)
    assert cert.recompute() == cert.bound
    assert cert.valid is (cert.measured <= cert.bound)
