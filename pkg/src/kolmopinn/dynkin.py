"""Mesh-free reference solutions through Dynkin's formula.

    u(x, t) = phi(x) + E[ int_0^t (F phi)(X^x_s) ds ]

The affine SDE is simulated once from the d+1 starting points
0, e_1, ..., e_d; the path from any other start is the affine combination
X^x = X^0 + sum_i x_i (X^{e_i} - X^0), which holds exactly for affine
coefficients driven by a common Brownian path.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import rng
from .pde import CapabilityError, KolmogorovPde, generator

SCHEMES = ("exact-constant", "exact-gbm", "euler-maruyama")
RULES = ("ramp", "trapezoid")
DEFAULT_SUBSTEPS = 16
CHUNK_PATHS = 4096
_BLOCK_ELEMENTS = 1 << 20  # query points x paths evaluated at once


@dataclass(frozen=True)
class PathEnsemble:
    """Base-path states, shape ``(M, N+1, d+1, d)``; start index 0 is the origin, j >= 1 is e_j."""

    times: np.ndarray
    states: np.ndarray
    scheme: str
    seed: int
    first_path: int = 0
    substeps: int = 1

    @property
    def n_paths(self) -> int:
        return self.states.shape[0]

    @property
    def n_steps(self) -> int:
        return self.states.shape[1] - 1

    @property
    def dim(self) -> int:
        return self.states.shape[3]

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    def save(self, path) -> Path:
        path = Path(path)
        np.savez_compressed(path, times=self.times, states=self.states, scheme=self.scheme,
                            seed=self.seed, first_path=self.first_path, substeps=self.substeps)
        return path

    @classmethod
    def load(cls, path) -> "PathEnsemble":
        with np.load(path) as f:
            return cls(f["times"], f["states"], str(f["scheme"]), int(f["seed"]),
                       int(f["first_path"]), int(f["substeps"]))


def _check_scheme(pde: KolmogorovPde, scheme: str):
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}; choose from {SCHEMES}")
    if scheme == "exact-constant" and not (pde.drift.is_constant and pde.diffusion.is_constant):
        raise ValueError("exact-constant scheme needs constant drift and diffusion")
    if scheme == "exact-gbm":
        A, S = pde.drift.A, pde.diffusion.S
        d = pde.dim
        row_only = all(np.allclose(np.delete(S[i], i, axis=0), 0.0) for i in range(d))
        if not (np.allclose(A, np.diag(np.diag(A))) and not np.any(pde.drift.b)
                and not np.any(pde.diffusion.S0) and row_only):
            raise ValueError("exact-gbm scheme needs mu(x) = diag(r) x and sigma(x) = diag(x) V")


def default_scheme(pde: KolmogorovPde) -> str:
    if pde.drift.is_constant and pde.diffusion.is_constant:
        return "exact-constant"
    try:
        _check_scheme(pde, "exact-gbm")
        return "exact-gbm"
    except ValueError:
        return "euler-maruyama"


def base_starts(d: int) -> np.ndarray:
    return np.vstack([np.zeros(d), np.eye(d)])


def brownian_paths(seed: int, first_path: int, n_paths: int, n_steps: int, d: int, dt: float) -> np.ndarray:
    """B at grid times, shape ``(n_paths, n_steps+1, d)``, B_0 = 0."""
    z = rng.path_normals(seed, first_path, n_paths, n_steps * d).reshape(n_paths, n_steps, d)
    out = np.zeros((n_paths, n_steps + 1, d))
    np.cumsum(z * math.sqrt(dt), axis=1, out=out[:, 1:])
    return out


def simulate_base_paths(pde: KolmogorovPde, N: int, M: int, seed: int, scheme: str | None = None,
                        substeps: int = DEFAULT_SUBSTEPS, first_path: int = 0) -> PathEnsemble:
    """Simulate paths ``first_path .. first_path+M-1`` on the grid ``nT/N``."""
    scheme = scheme or default_scheme(pde)
    _check_scheme(pde, scheme)
    d, T = pde.dim, pde.horizon
    times = np.linspace(0.0, T, N + 1)
    starts = base_starts(d)
    dt = T / N

    if scheme == "exact-constant":
        B = brownian_paths(seed, first_path, M, N, d, dt)
        drift_part = times[:, None] * pde.drift.b  # (N+1, d)
        noise = B @ pde.diffusion.S0.T  # (M, N+1, d)
        states = starts[None, None, :, :] + (drift_part[None, :, None, :] + noise[:, :, None, :])
        return PathEnsemble(times, states, scheme, seed, first_path, 1)

    if scheme == "exact-gbm":
        B = brownian_paths(seed, first_path, M, N, d, dt)
        r = np.diag(pde.drift.A)
        V = np.stack([pde.diffusion.S[i, i] for i in range(d)])  # row i of sigma is x_i V[i]
        growth = (r - 0.5 * np.sum(V * V, axis=1)) * times[:, None] + B @ V.T  # (M, N+1, d)
        states = np.zeros((M, N + 1, d + 1, d))
        idx = np.arange(d)
        states[:, :, idx + 1, idx] = np.exp(growth)
        return PathEnsemble(times, states, scheme, seed, first_path, 1)

    K = int(substeps)
    h = dt / K
    z = rng.path_normals(seed, first_path, M, N * K * d).reshape(M, N, K, d)
    X = np.broadcast_to(starts, (M, d + 1, d)).copy()
    states = np.empty((M, N + 1, d + 1, d))
    states[:, 0] = X
    A, b, S0, S = pde.drift.A, pde.drift.b, pde.diffusion.S0, pde.diffusion.S
    sq = math.sqrt(h)
    for n in range(N):
        for k in range(K):
            dW = z[:, n, k, :] * sq  # (M, d)
            mu = X @ A.T + b
            sig_dW = S0 @ dW.T  # (d, M)
            sig_dW = sig_dW.T[:, None, :] + np.einsum("msi,ijk,mk->msj", X, S, dW)
            X = X + mu * h + sig_dW
        states[:, n + 1] = X
    return PathEnsemble(times, states, scheme, seed, first_path, K)


def reconstruct(ensemble: PathEnsemble, x, n) -> np.ndarray:
    """X^x at grid index ``n`` for every path and every query point, shape ``(B, M, d)``."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    base = ensemble.states[:, n]  # (M, d+1, d)
    origin = base[:, 0, :]
    diffs = base[:, 1:, :] - origin[:, None, :]
    return origin[None] + np.einsum("bi,mij->bmj", x, diffs)


def reconstruct_path(ensemble: PathEnsemble, x, m: int, n: int) -> np.ndarray:
    """X^x(omega_m) at time index n: X^0 + sum_i x_i (X^{e_i} - X^0)."""
    if not (0 <= m < ensemble.n_paths and 0 <= n <= ensemble.n_steps):
        raise IndexError(f"path {m} / step {n} outside ensemble ({ensemble.n_paths}, {ensemble.n_steps})")
    x = np.asarray(x, dtype=np.float64)
    base = ensemble.states[m, n]
    return base[0] + x @ (base[1:] - base[0])


def ramp(x):
    """h(x) = min(1, max(0, x))."""
    return np.clip(x, 0.0, 1.0)


def quadrature_weights(N: int, T: float, t, rule: str = "ramp") -> np.ndarray:
    """Weights ``w[b, n]`` on F(X_{nT/N}) so that sum_n w_n F_n approximates int_0^t F.

    ``ramp``: right-endpoint rectangles, interval j contributing
    (T/N) h(Nt/T - j + 1) F_j.  ``trapezoid``: exact integral of the
    piecewise-linear interpolant of F over [0, t].
    """
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    dt = T / N
    j = np.arange(1, N + 1)
    r = ramp(N * t[:, None] / T - j + 1)  # progress through interval j, (B, N)
    w = np.zeros((t.size, N + 1))
    if rule == "ramp":
        w[:, 1:] = dt * r
    elif rule == "trapezoid":
        w[:, :-1] += dt * (r - 0.5 * r * r)
        w[:, 1:] += dt * 0.5 * r * r
    else:
        raise ValueError(f"unknown quadrature rule {rule!r}; choose from {RULES}")
    return w


def _path_totals(pde: KolmogorovPde, ensemble: PathEnsemble, x, t, rule: str) -> np.ndarray:
    """Per-path quadrature sums, shape ``(B, M)``."""
    if abs(ensemble.horizon - pde.horizon) > 1e-12 * pde.horizon:
        raise ValueError("ensemble horizon does not match the PDE")
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    t = np.broadcast_to(np.atleast_1d(np.asarray(t, dtype=np.float64)), (x.shape[0],))
    w = quadrature_weights(ensemble.n_steps, pde.horizon, t, rule)
    totals = np.zeros((x.shape[0], ensemble.n_paths))
    block = max(1, _BLOCK_ELEMENTS // max(1, ensemble.n_paths))
    for lo in range(0, x.shape[0], block):
        hi = min(lo + block, x.shape[0])
        wb = w[lo:hi]
        for n in np.flatnonzero(np.any(wb != 0.0, axis=0)):
            pts = reconstruct(ensemble, x[lo:hi], n)
            B, M, d = pts.shape
            F = generator(pde, pts.reshape(-1, d)).reshape(B, M)
            totals[lo:hi] += wb[:, n:n + 1] * F
    return totals


def dynkin_estimate(pde: KolmogorovPde, ensemble: PathEnsemble, x, t, rule: str = "ramp",
                    return_error: bool = False):
    """phi(x) + (1/M) sum_m sum_n w_n(t) (F phi)(X^x_{nT/N}(omega_m)).

    Scalar for a single point; arrays for batches. With ``return_error``
    also returns the Monte-Carlo standard error.
    """
    if not pde.initial.has_derivatives:
        raise CapabilityError("Dynkin estimation needs the initial datum's derivatives")
    single = np.ndim(x) == 1
    x2 = np.atleast_2d(np.asarray(x, dtype=np.float64))
    totals = _path_totals(pde, ensemble, x2, t, rule)
    est = pde.initial(x2) + totals.mean(axis=1)
    se = totals.std(axis=1, ddof=1) / math.sqrt(totals.shape[1]) if totals.shape[1] > 1 else np.zeros(len(est))
    if single:
        est, se = float(est[0]), float(se[0])
    return (est, se) if return_error else est


def riemann_reference(pde: KolmogorovPde, x, t, N: int, M_big: int, seed: int, scheme: str | None = None,
                      rule: str = "ramp", substeps: int = DEFAULT_SUBSTEPS, threads: int = 1,
                      chunk: int = CHUNK_PATHS):
    """High-M estimate of the N-step Riemann approximation with its standard error.

    Paths are simulated in fixed-size chunks; chunk boundaries do not depend
    on ``threads`` and the random stream is addressed per path, so results
    are identical for any thread count.
    """
    single = np.ndim(x) == 1
    x2 = np.atleast_2d(np.asarray(x, dtype=np.float64))

    def work(first):
        ens = simulate_base_paths(pde, N, min(chunk, M_big - first), seed, scheme, substeps, first)
        return _path_totals(pde, ens, x2, t, rule)

    starts = range(0, M_big, chunk)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(work, starts))
    else:
        parts = [work(s) for s in starts]
    totals = np.concatenate(parts, axis=1)
    est = pde.initial(x2) + totals.mean(axis=1)
    se = totals.std(axis=1, ddof=1) / math.sqrt(M_big)
    if single:
        return float(est[0]), float(se[0])
    return est, se


@dataclass(frozen=True)
class RampFunctions:
    """The exact ramp h and its C^2 piecewise-cosine mollification."""

    eps: float

    @property
    def half_width(self) -> float:
        return 0.5 * math.pi * self.eps**2

    def exact(self, x):
        return ramp(np.asarray(x, dtype=np.float64))

    def value(self, x):
        x = np.asarray(x, dtype=np.float64)
        e2, c = self.eps**2, self.half_width
        return np.select(
            [x <= -c, x <= c, x <= 1 - c, x <= 1 + c],
            [0.0, 0.5 * (c + x - e2 * np.cos(x / e2)), x, 0.5 * (1 - c + x + e2 * np.cos((1 - x) / e2))],
            1.0,
        )

    def derivative(self, x):
        x = np.asarray(x, dtype=np.float64)
        e2, c = self.eps**2, self.half_width
        return np.select(
            [x <= -c, x <= c, x <= 1 - c, x <= 1 + c],
            [0.0, 0.5 * (1 + np.sin(x / e2)), 1.0, 0.5 * (1 + np.sin((1 - x) / e2))],
            0.0,
        )

    def second_derivative(self, x):
        x = np.asarray(x, dtype=np.float64)
        e2, c = self.eps**2, self.half_width
        return np.select(
            [x <= -c, x <= c, x <= 1 - c, x <= 1 + c],
            [0.0, 0.5 * np.cos(x / e2) / e2, 0.0, -0.5 * np.cos((1 - x) / e2) / e2],
            0.0,
        )


def mollified_ramp(eps: float) -> RampFunctions:
    if eps <= 0:
        raise ValueError("smoothing parameter must be positive")
    return RampFunctions(float(eps))


def dynkin_trace(pde: KolmogorovPde, N: int, M: int, seed: int, scheme: str | None = None,
                 rule: str = "trapezoid"):
    """Boundary datum psi(y, t) given by the Dynkin estimate on a fixed ensemble."""
    ensemble = simulate_base_paths(pde, N, M, seed, scheme)

    def psi(y, t):
        return dynkin_estimate(pde, ensemble, np.atleast_2d(y), t, rule)

    return psi
