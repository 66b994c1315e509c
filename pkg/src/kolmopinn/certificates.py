"""A-posteriori L^2 error certificates for trained PINNs.

The certified quantity is ||u - u_theta||^2 over D x [0,T], bounded by

    C1 [ ||R_i||^2 + ||R_t||^2 + C2 ||R_s|| + C3 ||R_s||^2 ]

with Lebesgue L^2 norms. C0, C1, C3 depend only on the coefficients;
C2 depends on the gradient of the error on the lateral boundary and is
resolved in one of three modes (oracle, user, heuristic).
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .network import ParameterVector, forward
from .pde import CapabilityError, KolmogorovPde
from .training import PinnLoss, sample_sets

C2_MODES = ("oracle", "user", "heuristic")


@dataclass(frozen=True)
class StabilityConstants:
    C0: float  # sum_ij sup |d_ij (sigma sigma^T)_ij|
    C1: float  # T exp((C0 + sup|div mu| + 1) T)
    C3: float  # sup|mu| + sum_ijk sup_{boundary} |d_i(sigma_ik sigma_jk)|
    div_mu: float
    mu_sup: float
    c2_coeff: float  # the sum_ijk part of C3
    horizon: float
    provenance: dict = field(default_factory=lambda: {"C0": "analytic", "C1": "analytic", "C3": "analytic"})


def _sigma_products_gradient(pde: KolmogorovPde, x: np.ndarray) -> np.ndarray:
    """d_i (sigma_ik sigma_jk)(x), shape ``(B, i, j, k)``."""
    sig = pde.diffusion(x)  # (B, d, d)
    S = pde.diffusion.S  # S[p] = d sigma / d x_p
    dS_ik = np.einsum("iik->ik", S)  # d_i sigma_ik
    return dS_ik[None, :, None, :] * sig[:, None, :, :] + sig[:, :, None, :] * S[None, :, :, :]


def stability_constants(pde: KolmogorovPde) -> StabilityConstants:
    """Coefficient constants of the certificate.

    The second derivatives of sigma sigma^T are constant for affine sigma.
    mu and d_i(sigma_ik sigma_jk) are affine, so their sup over the box (and
    over its boundary, which contains every vertex) is attained at a vertex.
    """
    T = pde.horizon
    D2 = pde.diffusion.covariance_second_derivatives()  # (p, q, i, j)
    d = pde.dim
    C0 = float(sum(abs(D2[i, j, i, j]) for i in range(d) for j in range(d)))
    div = abs(pde.drift.divergence)
    C1 = T * math.exp((C0 + div + 1.0) * T)
    verts = pde.vertices()
    mu_sup = float(np.max(np.linalg.norm(pde.drift(verts), axis=1)))
    grads = _sigma_products_gradient(pde, verts)
    c2 = float(np.sum(np.max(np.abs(grads), axis=0)))
    return StabilityConstants(C0, C1, mu_sup + c2, div, mu_sup, c2, T)


@dataclass
class ResidualNorms:
    """Lebesgue L^2 norms of the three residuals, Monte-Carlo estimated."""

    interior_sq: float  # ||R_i||^2 over D x [0,T]
    temporal_sq: float  # ||R_t||^2 over D
    spatial: float  # ||R_s|| over boundary x [0,T]
    interior_sq_se: float = 0.0
    temporal_sq_se: float = 0.0
    spatial_se: float = 0.0
    n_points: int = 0
    seed: int | None = None


def residual_norms(params: ParameterVector, pde: KolmogorovPde, M_eval: int, seed: int) -> ResidualNorms:
    sets = sample_sets(pde, M_eval, M_eval, M_eval, seed)
    r_i, r_s, r_t = PinnLoss(pde, params.arch, sets).residuals(params.values)
    vol_i = pde.volume * pde.horizon
    vol_s = pde.boundary_area * pde.horizon

    def mean_se(r):
        sq = r * r
        return float(np.mean(sq)), float(np.std(sq, ddof=1) / math.sqrt(sq.size))

    mi, si = mean_se(r_i)
    mt, st = mean_se(r_t)
    ms, ss = mean_se(r_s)
    spatial = math.sqrt(vol_s * ms)
    spatial_se = 0.5 * vol_s * ss / spatial if spatial > 0 else math.sqrt(vol_s * ss)
    return ResidualNorms(vol_i * mi, pde.volume * mt, spatial, vol_i * si, pde.volume * st, spatial_se,
                         M_eval, seed)


def _boundary_flux_norms(pde: KolmogorovPde, params: ParameterVector, grad_ref, M_eval: int, seed: int):
    """sum_i ||(sigma sigma^T grad_x(u - u_theta))_i|| over boundary x [0,T]."""
    from .derivatives import input_jacobian

    sets = sample_sets(pde, 1, M_eval, 1, seed)
    y, t = sets.boundary_y, sets.boundary_t
    z = np.concatenate([y, t[:, None]], axis=1)
    g_net = input_jacobian(params, z)[:, 0, :pde.dim]
    diff = grad_ref(y, t) - g_net
    flux = np.einsum("bij,bj->bi", pde.diffusion.covariance(y), diff)
    area = pde.boundary_area * pde.horizon
    return float(np.sum(np.sqrt(area * np.mean(flux * flux, axis=0))))


def dynkin_gradient(pde: KolmogorovPde, N: int, M: int, seed: int, step: float = 1e-4):
    """Central differences in x of the Dynkin estimator (common random numbers)."""
    from .dynkin import dynkin_estimate, simulate_base_paths

    ens = simulate_base_paths(pde, N, M, seed)

    def grad(y, t):
        out = np.empty_like(y)
        for i in range(pde.dim):
            e = np.zeros(pde.dim)
            e[i] = step
            out[:, i] = (dynkin_estimate(pde, ens, y + e, t, "trapezoid")
                         - dynkin_estimate(pde, ens, y - e, t, "trapezoid")) / (2 * step)
        return out

    return grad


@dataclass
class Certificate:
    norms: ResidualNorms
    constants: StabilityConstants
    C2: float
    c2_mode: str
    bound: float
    rigorous: bool
    measured: float | None = None
    measured_se: float | None = None
    notes: list = field(default_factory=list)

    @staticmethod
    def rhs(norms: ResidualNorms, constants: StabilityConstants, C2: float) -> float:
        return constants.C1 * (norms.interior_sq + norms.temporal_sq + C2 * norms.spatial
                               + constants.C3 * norms.spatial**2)

    def recompute(self) -> float:
        return self.rhs(self.norms, self.constants, self.C2)

    @property
    def valid(self) -> bool | None:
        """measured <= bound, when a measured error exists."""
        return None if self.measured is None else bool(self.measured <= self.bound)

    def to_dict(self) -> dict:
        out = {
            "bound": self.bound,
            "C2": self.C2,
            "c2_mode": self.c2_mode,
            "rigorous": self.rigorous,
            "residual_norms": asdict(self.norms),
            "constants": asdict(self.constants),
            "measured_l2_error_sq": self.measured,
            "measured_l2_error_sq_se": self.measured_se,
            "measured_le_bound": self.valid,
            "notes": list(self.notes),
        }
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, default=float)


def l2_certificate(norms: ResidualNorms, constants: StabilityConstants, c2_mode: str = "oracle", *,
                   C2: float | None = None, pde: KolmogorovPde | None = None,
                   params: ParameterVector | None = None, M_eval: int = 20000, seed: int = 0,
                   dynkin_N: int = 64, dynkin_M: int = 4000) -> Certificate:
    """Assemble the certificate.

    ``oracle`` needs ``pde.exact`` (analytic gradient); ``user`` takes ``C2``
    as given; ``heuristic`` differentiates a Dynkin estimate numerically and
    marks the certificate non-rigorous. The C2 factor carries the 2 that
    arises from d/dt ||u - u_theta||^2 in the energy estimate.
    """
    if c2_mode not in C2_MODES:
        raise ValueError(f"unknown C2 mode {c2_mode!r}; choose from {C2_MODES}")
    notes = []
    rigorous = True
    if c2_mode == "user":
        if C2 is None or C2 < 0:
            raise ValueError("user mode needs a non-negative C2")
        c2 = float(C2)
    else:
        if pde is None or params is None:
            raise ValueError(f"{c2_mode} mode needs the PDE and the network parameters")
        if c2_mode == "oracle":
            if pde.exact is None:
                raise CapabilityError("oracle C2 mode needs an analytic solution")
            grad_ref = pde.exact.gradient
        else:
            grad_ref = dynkin_gradient(pde, dynkin_N, dynkin_M, seed)
            rigorous = False
            notes.append("heuristic C2: finite differences of a Monte-Carlo reference; not a rigorous bound")
        c2 = 2.0 * _boundary_flux_norms(pde, params, grad_ref, M_eval, seed)
    notes.append("norms are Monte-Carlo estimates; see *_se fields")
    bound = Certificate.rhs(norms, constants, c2)
    return Certificate(norms, constants, c2, c2_mode, bound, rigorous, notes=notes)


def measured_l2_error(params: ParameterVector, pde: KolmogorovPde, M_eval: int, seed: int):
    """Monte-Carlo ||u - u_theta||^2 over D x [0,T] against the analytic solution."""
    if pde.exact is None:
        raise CapabilityError("measuring the L2 error needs an analytic solution")
    sets = sample_sets(pde, M_eval, 1, 1, seed)
    z = np.concatenate([sets.interior_x, sets.interior_t[:, None]], axis=1)
    err = pde.exact.value(sets.interior_x, sets.interior_t) - forward(params, z)[:, 0]
    sq = err * err
    vol = pde.volume * pde.horizon
    return vol * float(np.mean(sq)), vol * float(np.std(sq, ddof=1) / math.sqrt(sq.size))


def certify(params: ParameterVector, pde: KolmogorovPde, c2_mode: str = "oracle", M_eval: int = 20000,
            seed: int = 0, C2: float | None = None) -> Certificate:
    """Residual norms, constants and bound, plus the measured error when an oracle exists."""
    norms = residual_norms(params, pde, M_eval, seed)
    cert = l2_certificate(norms, stability_constants(pde), c2_mode, C2=C2, pde=pde, params=params,
                          M_eval=M_eval, seed=seed + 1)
    if pde.exact is not None:
        cert.measured, cert.measured_se = measured_l2_error(params, pde, M_eval, seed + 2)
    return cert
