"""Convergence studies for the Dynkin reference solver.

Both studies return plain rows (ready for CSV) and a fitted log-log slope.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import rng
from .dynkin import (CHUNK_PATHS, PathEnsemble, _path_totals, dynkin_estimate, quadrature_weights,
                     riemann_reference, simulate_base_paths)
from .pde import KolmogorovPde


def loglog_slope(sizes, errors) -> float:
    return float(np.polyfit(np.log(np.asarray(sizes, dtype=float)), np.log(np.asarray(errors, dtype=float)), 1)[0])


@dataclass
class RateStudy:
    header: tuple
    rows: list
    slope: float
    reference: float
    reference_se: float


def mc_rate_study(pde: KolmogorovPde, x, t: float, N: int, sizes=(100, 1000, 10000), replicates: int = 20,
                  reference_paths: int = 200000, seed: int = 0, rule: str = "ramp", threads: int = 1) -> RateStudy:
    """Root-mean-square error of the M-path estimate against a high-M estimate of the same N-step sum."""
    x = np.asarray(x, dtype=np.float64)
    ref, ref_se = riemann_reference(pde, x, t, N, reference_paths, rng.sub_seed(seed, "reference"), rule=rule,
                                    threads=threads)
    rows = []
    for M in sizes:
        errs = []
        for r in range(replicates):
            ens = simulate_base_paths(pde, N, M, rng.sub_seed(seed, "mc", M, r))
            errs.append(dynkin_estimate(pde, ens, x, t, rule) - ref)
        errs = np.asarray(errs)
        rows.append((M, float(np.sqrt(np.mean(errs**2))), float(np.mean(np.abs(errs)))))
    slope = loglog_slope([r[0] for r in rows], [r[1] for r in rows])
    return RateStudy(("M", "rmse", "mean_abs_error"), rows, slope, ref, ref_se)


def riemann_rate_study(pde: KolmogorovPde, x, t: float, sizes=(4, 8, 16, 32, 64, 128, 256), paths: int = 200000,
                       seed: int = 0, rule: str = "ramp", threads: int = 1, chunk: int = CHUNK_PATHS) -> RateStudy:
    """|u_N - u| for the N-step sum, all N read off one set of paths on the finest grid.

    Common random numbers keep the Monte-Carlo noise nearly identical across
    N, so the differences between rows are the discretization effect.
    Needs an analytic solution and grid sizes dividing the largest one.
    """
    if pde.exact is None:
        raise ValueError("the Riemann study needs an analytic solution")
    sizes = sorted(int(n) for n in sizes)
    finest = sizes[-1]
    if any(finest % n for n in sizes):
        raise ValueError("grid sizes must divide the finest size")
    x2 = np.atleast_2d(np.asarray(x, dtype=np.float64))
    sub_seed = rng.sub_seed(seed, "riemann")

    def work(first):
        ens = simulate_base_paths(pde, finest, min(chunk, paths - first), sub_seed, first_path=first)
        out = []
        for n in sizes:
            k = finest // n
            coarse = PathEnsemble(ens.times[::k], ens.states[:, ::k], ens.scheme, ens.seed, first, ens.substeps)
            tot = _path_totals(pde, coarse, x2, t, rule)[0]
            out.append((float(np.sum(tot)), float(np.sum(tot * tot))))
        return out

    starts = range(0, paths, chunk)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(work, starts))
    else:
        parts = [work(s) for s in starts]
    exact = float(pde.exact.value(x2, np.array([t]))[0])
    phi = float(pde.initial(x2)[0])
    rows = []
    for j, n in enumerate(sizes):
        s1 = sum(p[j][0] for p in parts)
        s2 = sum(p[j][1] for p in parts)
        mean = s1 / paths
        var = max(s2 / paths - mean * mean, 0.0) * paths / (paths - 1)
        est = phi + mean
        rows.append((n, est, math.sqrt(var / paths), abs(est - exact)))
    slope = loglog_slope([r[0] for r in rows], [r[3] for r in rows])
    return RateStudy(("N", "estimate", "stderr", "abs_error"), rows, slope, exact, 0.0)


def heat_riemann_expectation(pde: KolmogorovPde, x, t: float, N: int, rule: str = "ramp") -> float:
    """Exact expectation of the N-step sum for the heat sine case.

    For a sine eigenfunction, E[F phi(X^x_s)] = -pi^2 kappa |m|^2 u(x, s), so
    the sum has a closed form with no sampling error.
    """
    if pde.kind != "heat":
        raise ValueError("closed-form expectation exists only for heat instances")
    m = np.asarray(pde.meta["modes"], dtype=np.float64)
    lam = math.pi**2 * pde.meta["kappa"] * float(m @ m)
    x2 = np.atleast_2d(np.asarray(x, dtype=np.float64))
    grid = np.linspace(0.0, pde.horizon, N + 1)
    w = quadrature_weights(N, pde.horizon, t, rule)[0]
    u = pde.exact.value(np.repeat(x2, N + 1, axis=0), grid)
    return float(pde.initial(x2)[0] + np.sum(w * (-lam) * u))
