"""Named invariant suites run by ``kolmopinn verify``.

Each check returns ``(name, passed, detail)``; suites are lists of checks
sized to finish in well under a minute.
"""

from __future__ import annotations

import math

import numpy as np

from .network import Architecture, forward, random_params

SUITES = ("gradients", "lipschitz", "rates", "certificate")


def fd_jacobian(params, z, h=None):
    """Central differences of the realization, shape ``(lL, l0)``."""
    z = np.asarray(z, dtype=np.float64)
    h = np.cbrt(np.finfo(float).eps) if h is None else h
    cols = []
    for j in range(z.size):
        e = np.zeros_like(z)
        e[j] = h
        cols.append((forward(params, z + e) - forward(params, z - e)) / (2 * h))
    return np.stack(cols, axis=-1)


def fd_hessian(params, z, h=None):
    """Second-order central differences of the realization, shape ``(lL, l0, l0)``."""
    z = np.asarray(z, dtype=np.float64)
    h = np.finfo(float).eps ** 0.25 if h is None else h
    n = z.size
    out = np.zeros((params.arch.n_outputs, n, n))
    E = np.eye(n) * h
    for i in range(n):
        for j in range(n):
            out[:, i, j] = (forward(params, z + E[i] + E[j]) - forward(params, z + E[i] - E[j])
                            - forward(params, z - E[i] + E[j]) + forward(params, z - E[i] - E[j])) / (4 * h * h)
    return out


def fd_hessian_from_jacobian(params, z, h=None):
    """Central differences of the analytic input Jacobian, shape ``(lL, l0, l0)``."""
    from .derivatives import input_jacobian

    z = np.asarray(z, dtype=np.float64)
    h = np.cbrt(np.finfo(float).eps) if h is None else h
    cols = []
    for j in range(z.size):
        e = np.zeros_like(z)
        e[j] = h
        cols.append((input_jacobian(params, z + e) - input_jacobian(params, z - e)) / (2 * h))
    return np.stack(cols, axis=-1)


def relative_error(a, ref, floor: float = 1e-10) -> float | None:
    """max|a - ref| / max|ref|; ``None`` when the reference is degenerate (below ``floor``)."""
    scale = float(np.max(np.abs(ref)))
    if scale <= floor:
        return None
    return float(np.max(np.abs(np.asarray(a) - ref))) / scale


def derivative_sweep(points_per_arch: int = 100, seed: int = 0, depths=(1, 2, 3, 4), widths=(2, 8, 16),
                     dims=(1, 2, 4)):
    """Worst Jacobian/Hessian relative errors and Hessian asymmetry over the architecture grid."""
    from .derivatives import value_jacobian_hessian

    gen = np.random.default_rng(seed)
    worst_j = worst_h = worst_sym = 0.0
    n_checked = 0
    for L in depths:
        for W in widths:
            for d in dims:
                arch = Architecture.mlp(d + 1, W, L, 1.0)
                for _ in range(points_per_arch):
                    p = random_params(arch, int(gen.integers(2**62)))
                    z = gen.uniform(0.0, 1.0, d + 1)
                    _, J, H = value_jacobian_hessian(p, z)
                    ej = relative_error(J, fd_jacobian(p, z))
                    eh = relative_error(H, fd_hessian_from_jacobian(p, z))
                    if ej is not None:
                        worst_j = max(worst_j, ej)
                    if eh is not None:
                        worst_h = max(worst_h, eh)
                    worst_sym = max(worst_sym, float(np.max(np.abs(H - np.swapaxes(H, -1, -2)))))
                    n_checked += 1
    return worst_j, worst_h, worst_sym, n_checked


def tanh_constant_errors(n: int = 2_000_001, span: float = 10.0):
    from .activations import activation_derivatives

    z = np.linspace(-span, span, n)
    _, s1, s2, s3 = activation_derivatives(z)
    got = (np.max(np.abs(s1)), np.max(np.abs(s2)), np.max(np.abs(s3)))
    want = (1.0, 4.0 / (3.0 * math.sqrt(3.0)), 2.0)
    return got, want


def lipschitz_ratios(pde, arch, pairs: int, seed: int, close_fraction: float = 0.5):
    """Max empirical ratios |f_theta - f_vartheta| / |theta - vartheta|_inf for value, Jacobian, Hessian.

    Half the pairs are independent draws in the box, half are small
    perturbations (where the local slope is probed).
    """
    from .derivatives import value_jacobian_hessian

    gen = np.random.default_rng(seed)
    R = arch.bound
    best = np.zeros(3)
    for k in range(pairs):
        th = gen.uniform(-R, R, arch.n_params)
        if k < close_fraction * pairs:
            vt = np.clip(th + gen.uniform(-1e-3, 1e-3, arch.n_params) * R, -R, R)
        else:
            vt = gen.uniform(-R, R, arch.n_params)
        x = np.concatenate([gen.uniform(pde.lower, pde.upper, pde.dim), [gen.uniform(0.0, pde.horizon)]])
        p1 = random_params(arch, 0).with_values(th)
        p2 = p1.with_values(vt)
        a = value_jacobian_hessian(p1, x)
        b = value_jacobian_hessian(p2, x)
        dist = float(np.max(np.abs(th - vt)))
        if dist == 0:
            continue
        for i in range(3):
            best[i] = max(best[i], float(np.max(np.abs(a[i] - b[i]))) / dist)
    return best


def _check(name, ok, detail):
    return (name, bool(ok), detail)


def suite_gradients(seed: int = 0):
    from .derivatives import param_gradient
    from .pde import heat_instance
    from .training import PinnLoss, sample_sets

    out = []
    got, want = tanh_constant_errors(200_001)
    out.append(_check("tanh derivative sup norms", max(abs(g - w) for g, w in zip(got, want)) <= 1e-4,
                      "got " + ", ".join(f"{float(g):.10f}" for g in got)))
    wj, wh, ws, n = derivative_sweep(points_per_arch=4, seed=seed)
    out.append(_check("input Jacobian vs central differences", wj <= 1e-6, f"worst rel err {wj:.3g} over {n} points"))
    out.append(_check("input Hessian vs central differences", wh <= 1e-5, f"worst rel err {wh:.3g}"))
    out.append(_check("Hessian symmetry", ws <= 1e-12, f"max asymmetry {ws:.3g}"))
    pde = heat_instance(1, 1.0)
    arch = Architecture.mlp(2, 6, 3, 1.0)
    loss = PinnLoss(pde, arch, sample_sets(pde, 32, 32, 32, seed))
    theta = random_params(arch, seed).values
    g_fd = param_gradient(loss, theta, "finite-difference")
    g_an = param_gradient(loss, theta, "analytic")
    mask = np.abs(g_fd) > 1e-6
    err = float(np.max(np.abs(g_an - g_fd)[mask] / np.abs(g_fd)[mask]))
    out.append(_check("parameter gradient: analytic vs finite differences", err <= 1e-4, f"max rel err {err:.3g}"))
    return out


def suite_lipschitz(seed: int = 0):
    from .bounds import cq_empirical, lipschitz_ledger
    from .pde import heat_instance

    out = []
    got, want = tanh_constant_errors()
    for name, g, w in zip(("|s'|", "|s''|", "|s'''|"), got, want):
        out.append(_check(f"tanh sup {name}", abs(g - w) <= 1e-4, f"{g:.10f} vs {w:.10f}"))
    pde = heat_instance(1, 1.0)
    for L, W in ((2, 4), (3, 8)):
        arch = Architecture.mlp(2, W, L, 1.0)
        led = lipschitz_ledger(pde, arch)
        ratios = lipschitz_ratios(pde, arch, 200, seed)
        for name, r, b in zip(("network", "jacobian", "hessian"), ratios, (led.network, led.jacobian, led.hessian)):
            out.append(_check(f"{name} Lipschitz bound L={L} W={W}", r <= b, f"ratio {r:.4g} <= bound {b:.4g}"))
    arch = Architecture.mlp(2, 10, 2, 1.0)
    cq = cq_empirical(pde, arch, 200, seed)
    ci = lipschitz_ledger(pde, arch).c_i
    out.append(_check("empirical c_i below analytic c_i", cq <= ci, f"{cq:.4g} <= {ci:.4g}"))
    return out


def suite_rates(seed: int = 0, threads: int = 1):
    from .pde import heat_instance
    from .studies import mc_rate_study, riemann_rate_study

    pde = heat_instance(1, 0.1)
    mc = mc_rate_study(pde, [0.5], 0.5, 32, (100, 1000, 10000), 20, 100000, seed, threads=threads)
    rr = riemann_rate_study(pde, [0.5], 0.5, (4, 8, 16, 32, 64), 50000, seed, threads=threads)
    return [
        _check("Monte-Carlo slope in M is -0.5 +- 0.1", abs(mc.slope + 0.5) <= 0.1, f"slope {mc.slope:.4f}"),
        _check("Riemann slope in N <= -0.4", rr.slope <= -0.4, f"slope {rr.slope:.4f}"),
    ]


def suite_certificate(seed: int = 0):
    from .certificates import ResidualNorms, certify, l2_certificate, stability_constants
    from .pde import black_scholes_instance, heat_instance
    from .training import OptimizerConfig, sample_sets, train

    out = []
    heat = heat_instance(1, 1.0)
    sc = stability_constants(heat)
    out.append(_check("heat: C1 = e", abs(sc.C1 - math.e) <= 1e-12, f"C1 = {sc.C1!r}"))
    bs = black_scholes_instance([0.2], [[1.0]], 0.05)
    c0 = stability_constants(bs).C0
    out.append(_check("Black-Scholes d=1: C0 = 4 beta^2", abs(c0 - 0.16) <= 1e-12, f"C0 = {c0!r}"))
    zero = l2_certificate(ResidualNorms(0.0, 0.0, 0.0), sc, "user", C2=1.0)
    out.append(_check("zero residuals give a zero bound", zero.bound == 0.0, f"bound {zero.bound}"))
    arch = Architecture.mlp(2, 10, 3, 1.0)
    rep = train(random_params(arch, seed), heat, sample_sets(heat, 256, 256, 256, seed),
                OptimizerConfig(adam_steps=1000, lbfgs_steps=500))
    cert = certify(rep.params, heat, "oracle", 10000, seed + 1)
    out.append(_check("bound recomputes from stored parts", abs(cert.recompute() - cert.bound) <= 1e-12 * cert.bound,
                      f"bound {cert.bound:.6g}"))
    out.append(_check("trained heat PINN: measured <= bound", cert.valid,
                      f"measured {cert.measured:.4g} <= bound {cert.bound:.4g}"))
    return out


def run_suite(name: str, seed: int = 0, threads: int = 1):
    if name not in SUITES:
        raise KeyError(name)
    if name == "rates":
        return suite_rates(seed, threads)
    return {"gradients": suite_gradients, "lipschitz": suite_lipschitz,
            "certificate": suite_certificate}[name](seed)


__all__ = ["SUITES", "run_suite", "fd_jacobian", "fd_hessian", "fd_hessian_from_jacobian", "relative_error", "derivative_sweep",
           "tanh_constant_errors", "lipschitz_ratios"]
