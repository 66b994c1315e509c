"""Closed-form Lipschitz constants, sample-size plans and related bounds.

Everything here is arithmetic on explicit formulas, plus a few small
Monte-Carlo estimators (empirical c_i, rho_d) and an exhaustive check of
the generalization-error decomposition on tiny parameter boxes.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.stats import qmc

from .activations import ACTIVATIONS
from .network import Architecture, random_params
from .pde import KolmogorovPde

PROBE_POINTS_PER_AXIS = 64


def coefficient_constant(pde: KolmogorovPde, per_axis: int = PROBE_POINTS_PER_AXIS, seed: int = 0) -> float:
    """max over the box of 1 + sum_i |mu_i| + sum_ij |(sigma sigma^T)_ij|.

    Evaluated on the vertices plus a probe set: a full tensor grid with
    ``per_axis`` points per axis for d <= 3, otherwise ``per_axis**3``
    scrambled Sobol points.
    """
    d, a, b = pde.dim, pde.lower, pde.upper
    if d <= 3:
        axes = np.linspace(a, b, per_axis)
        probe = np.stack([g.ravel() for g in np.meshgrid(*[axes] * d, indexing="ij")], axis=1)
    else:
        n = per_axis**3
        probe = a + (b - a) * qmc.Sobol(d, scramble=True, seed=seed).random(n)
    pts = np.vstack([pde.vertices(), probe])
    vals = 1.0 + np.sum(np.abs(pde.drift(pts)), axis=1) + np.sum(np.abs(pde.diffusion.covariance(pts)), axis=(1, 2))
    return float(np.max(vals))


@dataclass(frozen=True)
class LipschitzLedger:
    alpha: float
    beta: float
    C: float
    d: int  # network input dimension used in the formulas
    L: int
    W: int
    R: float
    network: float  # alpha (d+4) W^{L-1} R^{L-1} beta^L
    jacobian: float  # 2 alpha (d+7) L R^{2L-1} W^{2L-2} beta^{L-1}
    hessian: float  # 4 alpha (d+7) L^2 R^{3L-1} W^{3L-3} beta^L
    residual: float  # 2^5 C^2 (d+7)^2 L^4 R^{6L-1} W^{6L-6} beta^{2L}
    c_i: float  # 4 alpha C (d+7) L^2 R^{3L} W^{3L-3} beta^L
    c_t: float  # 2 W R
    c_s: float

    def to_dict(self) -> dict:
        return asdict(self)


def ledger_from_constants(alpha: float, beta: float, C: float, d: int, L: int, W: int, R: float) -> LipschitzLedger:
    return LipschitzLedger(
        alpha, beta, C, d, L, W, R,
        network=alpha * (d + 4) * W ** (L - 1) * R ** (L - 1) * beta**L,
        jacobian=2 * alpha * (d + 7) * L * R ** (2 * L - 1) * W ** (2 * L - 2) * beta ** (L - 1),
        hessian=4 * alpha * (d + 7) * L**2 * R ** (3 * L - 1) * W ** (3 * L - 3) * beta**L,
        residual=2**5 * C**2 * (d + 7) ** 2 * L**4 * R ** (6 * L - 1) * W ** (6 * L - 6) * beta ** (2 * L),
        c_i=4 * alpha * C * (d + 7) * L**2 * R ** (3 * L) * W ** (3 * L - 3) * beta**L,
        c_t=2 * W * R,
        c_s=2 * W * R,
    )


def lipschitz_ledger(pde: KolmogorovPde, arch: Architecture, beta: float | None = None) -> LipschitzLedger:
    """Evaluate every parameter-Lipschitz bound for ``arch`` on ``pde``'s space-time box.

    The input dimension in the formulas is the network's l_0 = d+1 and
    alpha covers every input coordinate, time included.
    """
    act = ACTIVATIONS[arch.activation]
    if beta is None:
        beta = act.beta
    alpha = max(1.0, abs(pde.lower), abs(pde.upper), pde.horizon, act.sup_norms[0])
    return ledger_from_constants(alpha, beta, coefficient_constant(pde), arch.n_inputs,
                                 arch.depth, arch.width, arch.bound)


@dataclass(frozen=True)
class SampleSize:
    raw: float
    count: int


def _ceil_floor1(raw: float) -> SampleSize:
    return SampleSize(raw, max(1, math.ceil(raw)) if math.isfinite(raw) else raw)


def sample_size_generic(k: int, a: float, c: float, lip: float, eps: float, eta: float = 0.0,
                        mode: str = "probabilistic") -> SampleSize:
    """Training-set size guaranteeing E_G <= eps + E_T.

    probabilistic (with probability 1 - eta):
        c^2/(2 eps^4) (k ln(2 a L / eps^2) + ln(1/eta))
    cumulative (in mean square over training sets):
        2 c^2/eps^4 (k ln(4 a L / eps^2) + ln(2 c / eps^2))
    """
    if min(k, a, c, lip, eps) <= 0:
        raise ValueError("k, a, c, L and eps must be positive")
    if mode == "probabilistic":
        if eta <= 0:
            raise ValueError("eta must be positive")
        raw = c**2 / (2 * eps**4) * (k * math.log(2 * a * lip / eps**2) + math.log(1 / eta))
    elif mode == "cumulative":
        raw = 2 * c**2 / eps**4 * (k * math.log(4 * a * lip / eps**2) + math.log(2 * c / eps**2))
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return _ceil_floor1(raw)


def supervised_sample_size(d: int, L: int, W: int, R: float, eps: float) -> SampleSize:
    """16 d (L+3)^2 W^6 R^4 / eps^4 * ln(4 (d+4)^{1/5} R W / eps)."""
    raw = 16 * d * (L + 3) ** 2 * W**6 * R**4 / eps**4 * math.log(4 * (d + 4) ** 0.2 * R * W / eps)
    return _ceil_floor1(raw)


def pinn_sample_size(d: int, L: int, W: int, R: float, beta: float, C: float, c_q: float, eps: float) -> SampleSize:
    """24 d L^2 W^2 c_q^2 / eps^4 * ln(4 c_q R W beta (C (d+7) / eps^2)^{1/6})."""
    arg = 4 * c_q * R * W * beta * (C * (d + 7) / eps**2) ** (1 / 6)
    raw = 24 * d * L**2 * W**2 * c_q**2 / eps**4 * math.log(arg)
    return _ceil_floor1(raw)


@dataclass(frozen=True)
class SampleSizePlan:
    kind: str
    eps: float
    eta: float | None
    interior: SampleSize
    spatial: SampleSize
    temporal: SampleSize

    def rows(self):
        for part in ("interior", "spatial", "temporal"):
            s = getattr(self, part)
            yield part, s.raw, s.count


def sample_size_specialized(pde: KolmogorovPde, arch: Architecture, eps: float, kind: str = "pinn",
                            c_q: dict | None = None, eta: float | None = None) -> SampleSizePlan:
    """Per-part sample sizes from the supervised or the PINN closed form.

    ``d`` in the formulas is the spatial dimension of the PDE. For ``pinn``
    the default c_q are the ledger values; pass ``c_q`` to override (for
    instance with :func:`cq_empirical`).
    """
    d, L, W, R = pde.dim, arch.depth, arch.width, arch.bound
    if kind == "supervised":
        s = supervised_sample_size(d, L, W, R, eps)
        return SampleSizePlan(kind, eps, eta, s, s, s)
    if kind != "pinn":
        raise ValueError(f"unknown kind {kind!r}")
    led = lipschitz_ledger(pde, arch)
    cq = {"interior": led.c_i, "spatial": led.c_s, "temporal": led.c_t}
    cq.update(c_q or {})
    parts = {p: pinn_sample_size(d, L, W, R, led.beta, led.C, cq[p], eps) for p in cq}
    return SampleSizePlan(kind, eps, eta, parts["interior"], parts["spatial"], parts["temporal"])


def cq_empirical(pde: KolmogorovPde, arch: Architecture, trials: int, seed: int, points_per_trial: int = 1) -> float:
    """max over random (theta_n, x_m) of the single-point squared interior residual.

    Trial n uses parameters drawn with seed (seed, n), so runs with more
    trials extend runs with fewer.
    """
    from .pde import network_residual_interior

    if trials < 1:
        raise ValueError("need at least one trial")
    best = 0.0
    for n in range(trials):
        gen = np.random.default_rng([seed, n])
        theta = random_params(arch, int(gen.integers(2**62)))
        x = gen.uniform(pde.lower, pde.upper, (points_per_trial, pde.dim))
        t = gen.uniform(0.0, pde.horizon, points_per_trial)
        r = network_residual_interior(pde, theta.layers(), arch.activation, x, t)
        best = max(best, float(np.max(r * r)))
    return best


def cumulative_l2_bound(E_i: float, E_s: float, E_t: float, eps: float, C1: float, C2: float, C3: float) -> float:
    """C1 [E_i^2 + E_t^2 + C2 (E_s + sqrt eps) + C3 E_s^2 + (C3 + 2) eps]."""
    return C1 * (E_i**2 + E_t**2 + C2 * (E_s + math.sqrt(eps)) + C3 * E_s**2 + (C3 + 2) * eps)


def delta_cover(a: float, k: int, delta: float) -> np.ndarray:
    """Centers of a sup-norm delta-cover of [-a, a]^k.

    n = ceil(a/delta) evenly spaced centers per axis, spacing 2a/n <= 2 delta,
    all inside the box.
    """
    if not 0 < delta <= a:
        raise ValueError("need 0 < delta <= a")
    n = math.ceil(a / delta - 1e-12)
    axis = -a + (a / n) * (2 * np.arange(n) + 1)
    return np.array(list(itertools.product(axis, repeat=k)), dtype=np.float64).reshape(-1, k)


@dataclass(frozen=True)
class DecompositionReport:
    gen_error_at_minimizer: float  # E_G(theta*)^2
    gen_modulus: float  # sup_{|theta - theta'| <= delta} |E_G^2 - E_G'^2|
    gap: float  # sup_theta |E_G^2 - E_T^2|
    train_modulus: float
    train_error_at_minimizer: float
    holds: bool

    @property
    def rhs(self) -> float:
        return self.gen_modulus + self.gap + self.train_modulus + self.train_error_at_minimizer


def _moduli(theta: np.ndarray, values: np.ndarray, delta: float) -> float:
    dist = np.max(np.abs(theta[:, None, :] - theta[None, :, :]), axis=2)
    close = dist <= delta + 1e-12
    diff = np.abs(values[:, None] - values[None, :])
    return float(np.max(np.where(close, diff, 0.0)))


def decomposition_check(family, target, a: float, k: int, delta: float, data: np.ndarray,
                        fine_per_axis: int = 41, quad_nodes: int = 64) -> DecompositionReport:
    """Check E_G(theta*)^2 <= four-term bound on a finite parameter set.

    ``family(theta, z)`` and ``target(z)`` act on ``z`` in [0, 1]; E_G uses
    Gauss-Legendre quadrature for the uniform measure. The parameter set is
    a fine grid of the box joined with the delta-cover; theta* minimizes the
    training error over it, and the suprema run over the same set.
    """
    axis = np.linspace(-a, a, fine_per_axis)
    fine = np.array(list(itertools.product(axis, repeat=k)), dtype=np.float64).reshape(-1, k)
    theta = np.vstack([fine, delta_cover(a, k, delta)])
    nodes, weights = np.polynomial.legendre.leggauss(quad_nodes)
    zq, wq = 0.5 * (nodes + 1.0), 0.5 * weights
    fq, fd = target(zq), target(data)
    EG = np.array([np.sum(wq * (family(th, zq) - fq) ** 2) for th in theta])
    ET = np.array([np.mean((family(th, data) - fd) ** 2) for th in theta])
    star = int(np.argmin(ET))
    gen_mod = _moduli(theta, EG, delta)
    train_mod = _moduli(theta, ET, delta)
    gap = float(np.max(np.abs(EG - ET)))
    lhs = float(EG[star])
    rhs = gen_mod + gap + train_mod + float(ET[star])
    return DecompositionReport(lhs, gen_mod, gap, train_mod, float(ET[star]), bool(lhs <= rhs + 1e-15))


@dataclass(frozen=True)
class RhoEstimate:
    value: float
    per_grid: dict  # grid size -> estimate on that (nested) time grid
    p: float
    q: float
    lower_bound_only: bool = True


def estimate_rho_d(pde: KolmogorovPde, p: float = 2.5, q: float = 4.0, grid_sizes=(4, 8, 16), M: int = 2000,
                   seed: int = 0, scheme: str | None = None) -> RhoEstimate:
    """Empirical max over starts x and time pairs s < t of ||X_s - X_t||_{L^q} / |t - s|^{1/p}.

    X^x_s - X^x_t is affine in x, so its L^q norm is convex in x and its
    maximum over the box sits at a vertex; the starts are the vertices.
    Time grids are nested: each size must divide the largest, and all are
    read off one ensemble simulated on the finest grid. The result is a
    lower estimate of the true supremum.
    """
    from .dynkin import reconstruct, simulate_base_paths

    if p <= 2 or q <= 2:
        raise ValueError("need p > 2 and q > 2")
    sizes = sorted(int(g) for g in grid_sizes)
    finest = sizes[-1]
    if any(finest % g for g in sizes):
        raise ValueError("grid sizes must divide the finest grid size")
    ens = simulate_base_paths(pde, finest, M, seed, scheme)
    verts = pde.vertices()
    paths = np.stack([reconstruct(ens, verts, n) for n in range(finest + 1)], axis=0)  # (N+1, V, M, d)
    times = ens.times
    ratio = np.zeros((finest + 1, finest + 1))
    for i in range(finest + 1):
        for j in range(i + 1, finest + 1):
            norm = np.linalg.norm(paths[j] - paths[i], axis=-1)  # (V, M)
            lq = np.mean(norm**q, axis=1) ** (1.0 / q)
            ratio[i, j] = float(np.max(lq)) / (times[j] - times[i]) ** (1.0 / p)
    per = {}
    for g in sizes:
        idx = np.arange(0, finest + 1, finest // g)
        per[g] = float(np.max(ratio[np.ix_(idx, idx)]))
    return RhoEstimate(per[finest], per, p, q)
