"""Linear Kolmogorov PDEs with affine coefficients on a box.

    u_t = 1/2 Tr(sigma sigma^T H_x u) + mu . grad_x u   on [a,b]^d x [0,T]

together with the three PINN residuals (interior, spatial boundary,
initial time) and the built-in heat and Black-Scholes instances.

Point batches are ``(B, d)`` arrays; times are ``(B,)`` arrays. Functions
that take ``xp`` also run under jax.numpy.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .derivatives import network_jet
from .network import ParameterVector


class DomainError(ValueError):
    """A point lies outside the region an operation is defined on."""


class CapabilityError(RuntimeError):
    """An operation needs data (derivatives, an oracle, a boundary datum) the object lacks."""


@dataclass(frozen=True)
class AffineDrift:
    """mu(x) = A x + b."""

    A: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=np.float64))
        b = np.asarray(self.b, dtype=np.float64).reshape(-1)
        if A.shape != (b.size, b.size) or not (np.all(np.isfinite(A)) and np.all(np.isfinite(b))):
            raise ValueError("drift needs a finite (d, d) matrix and a length-d vector")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)

    @classmethod
    def zero(cls, d: int):
        return cls(np.zeros((d, d)), np.zeros(d))

    def __call__(self, x, xp=np):
        return x @ self.A.T + self.b

    @property
    def divergence(self) -> float:
        return float(np.trace(self.A))

    @property
    def is_constant(self) -> bool:
        return not np.any(self.A)


@dataclass(frozen=True)
class AffineDiffusion:
    """sigma(x) = S0 + sum_i x_i S[i]; ``S`` has shape ``(d, d, d)``."""

    S0: np.ndarray
    S: np.ndarray

    def __post_init__(self):
        S0 = np.atleast_2d(np.asarray(self.S0, dtype=np.float64))
        d = S0.shape[0]
        S = np.asarray(self.S, dtype=np.float64).reshape(d, d, d)
        if S0.shape != (d, d) or not (np.all(np.isfinite(S0)) and np.all(np.isfinite(S))):
            raise ValueError("diffusion coefficients must be finite (d, d) matrices")
        object.__setattr__(self, "S0", S0)
        object.__setattr__(self, "S", S)

    @classmethod
    def constant(cls, S0):
        S0 = np.atleast_2d(np.asarray(S0, dtype=np.float64))
        d = S0.shape[0]
        return cls(S0, np.zeros((d, d, d)))

    def __call__(self, x, xp=np):
        return self.S0 + xp.einsum("bi,ijk->bjk", x, self.S)

    def covariance(self, x, xp=np):
        """sigma(x) sigma(x)^T, shape ``(B, d, d)``."""
        s = self(x, xp)
        return xp.einsum("bik,bjk->bij", s, s)

    @property
    def is_constant(self) -> bool:
        return not np.any(self.S)

    def covariance_second_derivatives(self) -> np.ndarray:
        """d^2/dx_p dx_q of (sigma sigma^T)_{ij}; constant, shape ``(p, q, i, j)``."""
        SS = np.einsum("pik,qjk->pqij", self.S, self.S)
        return SS + SS.transpose(1, 0, 2, 3)


@dataclass(frozen=True)
class ScalarField:
    """A C^2 function on R^d with closed-form gradient and Hessian (batched)."""

    name: str
    value: Callable
    gradient: Callable | None = None
    hessian: Callable | None = None
    params: dict = field(default_factory=dict)

    def __call__(self, x):
        return self.value(np.atleast_2d(x))

    @property
    def has_derivatives(self) -> bool:
        return self.gradient is not None and self.hessian is not None


def sinusoid(modes) -> ScalarField:
    """prod_i sin(pi m_i x_i)."""
    m = np.asarray(modes, dtype=np.float64)
    k = np.pi * m

    def value(x):
        return np.prod(np.sin(k * x), axis=-1)

    def gradient(x):
        s, c = np.sin(k * x), np.cos(k * x)
        d = x.shape[-1]
        out = np.empty_like(x)
        for i in range(d):
            out[:, i] = k[i] * c[:, i] * np.prod(np.delete(s, i, axis=1), axis=1)
        return out

    def hessian(x):
        s, c = np.sin(k * x), np.cos(k * x)
        B, d = x.shape
        out = np.empty((B, d, d))
        for i in range(d):
            for j in range(d):
                if i == j:
                    out[:, i, i] = -k[i] ** 2 * np.prod(s, axis=1)
                else:
                    rest = np.prod(np.delete(s, [i, j], axis=1), axis=1)
                    out[:, i, j] = k[i] * k[j] * c[:, i] * c[:, j] * rest
        return out

    return ScalarField("sinusoid", value, gradient, hessian, {"modes": m.tolist()})


def quadratic(weights=None, d: int | None = None) -> ScalarField:
    """sum_i w_i x_i^2."""
    w = np.ones(d) if weights is None else np.asarray(weights, dtype=np.float64)
    return ScalarField(
        "quadratic",
        lambda x: np.sum(w * x * x, axis=-1),
        lambda x: 2.0 * w * x,
        lambda x: np.broadcast_to(np.diag(2.0 * w), (x.shape[0], w.size, w.size)).copy(),
        {"weights": w.tolist()},
    )


def constant(c: float, d: int) -> ScalarField:
    return ScalarField(
        "constant",
        lambda x: np.full(x.shape[0], float(c)),
        lambda x: np.zeros_like(x),
        lambda x: np.zeros((x.shape[0], d, d)),
        {"value": float(c)},
    )


def basket_call_smooth(weights, strike: float, width: float) -> ScalarField:
    """Softplus-mollified basket call ``width * log(1 + exp((w.x - K)/width))``.

    Tends to ``max(w.x - K, 0)`` as ``width -> 0``; no canonical width exists.
    """
    w = np.asarray(weights, dtype=np.float64)
    if width <= 0:
        raise ValueError("smoothing width must be positive")

    def arg(x):
        return (x @ w - strike) / width

    def value(x):
        return width * np.logaddexp(0.0, arg(x))

    def gradient(x):
        return (0.5 * (1.0 + np.tanh(0.5 * arg(x))))[:, None] * w

    def hessian(x):
        p = 0.5 * (1.0 + np.tanh(0.5 * arg(x)))
        return (p * (1.0 - p) / width)[:, None, None] * np.outer(w, w)

    return ScalarField(
        "basket_call_smooth", value, gradient, hessian,
        {"weights": w.tolist(), "strike": float(strike), "width": float(width)},
    )


INITIAL_DATA = {
    "sinusoid": sinusoid,
    "quadratic": quadratic,
    "constant": constant,
    "basket_call_smooth": basket_call_smooth,
}


@dataclass(frozen=True)
class AnalyticSolution:
    """Exact solution with the derivatives the residuals and certificates need."""

    value: Callable  # (x, t) -> (B,)
    time_derivative: Callable
    gradient: Callable  # (x, t) -> (B, d)
    hessian: Callable  # (x, t) -> (B, d, d)


@dataclass(frozen=True)
class KolmogorovPde:
    dim: int
    horizon: float
    drift: AffineDrift
    diffusion: AffineDiffusion
    initial: ScalarField
    boundary: Callable | None = None  # (y, t) -> (B,)
    lower: float = 0.0
    upper: float = 1.0
    exact: AnalyticSolution | None = None
    kind: str = "custom"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.horizon <= 0:
            raise ValueError("time horizon T must be positive")
        if not self.lower < self.upper:
            raise ValueError("domain box needs a < b")
        if self.drift.b.size != self.dim or self.diffusion.S0.shape[0] != self.dim:
            raise ValueError("coefficient dimensions do not match d")

    @property
    def volume(self) -> float:
        return (self.upper - self.lower) ** self.dim

    @property
    def boundary_area(self) -> float:
        """Surface measure of the box boundary (counting measure when d = 1)."""
        return 2 * self.dim * (self.upper - self.lower) ** (self.dim - 1)

    def vertices(self) -> np.ndarray:
        grids = np.meshgrid(*[[self.lower, self.upper]] * self.dim, indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=1)

    def with_boundary(self, boundary: Callable) -> "KolmogorovPde":
        from dataclasses import replace

        return replace(self, boundary=boundary)


def apply_operator(pde: KolmogorovPde, x, grad, hess, xp=np):
    """sum_i mu_i d_i v + 1/2 sum_ij (sigma sigma^T)_ij d_ij v, batched."""
    x = xp.atleast_2d(x) if xp is not np else np.atleast_2d(np.asarray(x, dtype=np.float64))
    grad = grad.reshape(x.shape)
    hess = hess.reshape(x.shape + (x.shape[1],))
    if grad.shape[1] != pde.dim:
        raise ValueError(f"gradient has {grad.shape[1]} entries, PDE dimension is {pde.dim}")
    mu = pde.drift(x, xp)
    cov = pde.diffusion.covariance(x, xp)
    return xp.sum(mu * grad, axis=-1) + 0.5 * xp.sum(cov * hess, axis=(-2, -1))


def generator(pde: KolmogorovPde, x) -> np.ndarray:
    """The SDE generator applied to the initial datum, at ``x`` (batched)."""
    if not pde.initial.has_derivatives:
        raise CapabilityError(f"initial datum {pde.initial.name!r} has no derivatives")
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    return apply_operator(pde, x, pde.initial.gradient(x), pde.initial.hessian(x))


def _space_time(x, t, xp=np):
    x = xp.atleast_2d(x)
    t = xp.reshape(xp.asarray(t, dtype=x.dtype), (-1,))
    if t.shape[0] == 1 and x.shape[0] > 1:
        t = xp.broadcast_to(t, (x.shape[0],))
    return x, t, xp.concatenate([x, t[:, None]], axis=1)


def interior_residual_from_jet(pde, x, jac, hess, xp=np):
    """d_t v - L v given the space-time Jacobian ``(B, d+1)`` and Hessian ``(B, d+1, d+1)``."""
    d = pde.dim
    return jac[:, d] - apply_operator(pde, x, jac[:, :d], hess[:, :d, :d], xp)


def network_residual_interior(pde, layers, activation, x, t, xp=np):
    x, t, z = _space_time(x, t, xp)
    _, jac, hess = network_jet(layers, z, activation, xp)
    return interior_residual_from_jet(pde, x, jac[:, 0, :], hess[:, 0], xp)


def residual_interior(pde: KolmogorovPde, params: ParameterVector, x, t) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    return network_residual_interior(pde, params.layers(), params.arch.activation, x, t)


def on_boundary(pde: KolmogorovPde, y, tol: float = 1e-12) -> np.ndarray:
    y = np.atleast_2d(y)
    face = (np.abs(y - pde.lower) <= tol) | (np.abs(y - pde.upper) <= tol)
    inside = (y >= pde.lower - tol) & (y <= pde.upper + tol)
    return np.any(face, axis=1) & np.all(inside, axis=1)


def boundary_values(pde: KolmogorovPde, y, t) -> np.ndarray:
    if pde.boundary is None:
        raise CapabilityError("PDE has no boundary datum; supply one or attach a reference trace")
    y, t, _ = _space_time(np.asarray(y, dtype=np.float64), t)
    return np.asarray(pde.boundary(y, t), dtype=np.float64)


def residual_spatial(pde: KolmogorovPde, params: ParameterVector, y, t) -> np.ndarray:
    """v(y,t) - psi(y,t) on the lateral boundary."""
    y, t, z = _space_time(np.asarray(y, dtype=np.float64), t)
    if not np.all(on_boundary(pde, y)):
        raise DomainError("spatial residual requested at a point off the boundary")
    from .network import forward

    return forward(params, z)[:, 0] - boundary_values(pde, y, t)


def residual_temporal(pde: KolmogorovPde, params: ParameterVector, x) -> np.ndarray:
    """v(x,0) - phi(x)."""
    from .network import forward

    x, t, z = _space_time(np.asarray(x, dtype=np.float64), 0.0)
    return forward(params, z)[:, 0] - pde.initial(x)


def analytic_residuals(pde: KolmogorovPde, x, t, y=None, ty=None, x0=None):
    """Residuals of the exact solution itself; they vanish up to rounding."""
    if pde.exact is None:
        raise CapabilityError("PDE has no analytic solution")
    ex = pde.exact
    x, t, _ = _space_time(np.asarray(x, dtype=np.float64), t)
    out = {"interior": ex.time_derivative(x, t) - apply_operator(pde, x, ex.gradient(x, t), ex.hessian(x, t))}
    if y is not None:
        y, ty, _ = _space_time(np.asarray(y, dtype=np.float64), ty)
        out["spatial"] = ex.value(y, ty) - boundary_values(pde, y, ty)
    if x0 is not None:
        x0 = np.atleast_2d(np.asarray(x0, dtype=np.float64))
        out["temporal"] = ex.value(x0, np.zeros(x0.shape[0])) - pde.initial(x0)
    return out


def analytic_heat_solution(kappa: float, modes, x, t) -> np.ndarray:
    """exp(-pi^2 kappa |m|^2 t) prod_i sin(pi m_i x_i)."""
    m = np.asarray(modes, dtype=np.float64)
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    t = np.asarray(t, dtype=np.float64)
    rate = np.pi**2 * kappa * np.dot(m, m)
    return np.exp(-rate * t) * np.prod(np.sin(np.pi * m * x), axis=-1)


def _heat_exact(kappa: float, modes) -> AnalyticSolution:
    m = np.asarray(modes, dtype=np.float64)
    rate = np.pi**2 * kappa * np.dot(m, m)
    phi = sinusoid(m)

    def decay(t):
        return np.exp(-rate * np.asarray(t, dtype=np.float64))

    return AnalyticSolution(
        value=lambda x, t: decay(t) * phi.value(x),
        time_derivative=lambda x, t: -rate * decay(t) * phi.value(x),
        gradient=lambda x, t: decay(t)[:, None] * phi.gradient(x),
        hessian=lambda x, t: decay(t)[:, None, None] * phi.hessian(x),
    )


def heat_instance(d: int, kappa: float, horizon: float = 1.0, modes=None,
                  lower: float = 0.0, upper: float = 1.0) -> KolmogorovPde:
    """u_t = kappa Laplace(u) with sinusoidal initial datum.

    The diffusion is sqrt(2 kappa) I: with the 1/2 in front of the
    second-order term this realizes kappa * Laplacian exactly.
    """
    if kappa <= 0:
        raise ValueError("diffusivity must be positive")
    modes = np.ones(d, dtype=int) if modes is None else np.asarray(modes, dtype=int)
    exact = _heat_exact(kappa, modes)
    return KolmogorovPde(
        dim=d, horizon=horizon,
        drift=AffineDrift.zero(d),
        diffusion=AffineDiffusion.constant(np.sqrt(2.0 * kappa) * np.eye(d)),
        initial=sinusoid(modes),
        boundary=exact.value,
        lower=lower, upper=upper, exact=exact, kind="heat",
        meta={"kappa": float(kappa), "modes": modes.tolist()},
    )


def correlation_factor(rho: np.ndarray) -> np.ndarray:
    """C with C C^T = rho: Cholesky, or a symmetric square root when rho is singular PSD."""
    try:
        return np.linalg.cholesky(rho)
    except np.linalg.LinAlgError:
        lam, V = np.linalg.eigh(rho)
        if lam.min() < -1e-12 * max(1.0, lam.max()):
            raise ValueError("correlation matrix is not positive semidefinite") from None
        return (V * np.sqrt(np.clip(lam, 0.0, None))) @ V.T


def black_scholes_instance(betas, rho, rate: float, horizon: float = 1.0, initial: ScalarField | None = None,
                           boundary: Callable | None = None, lower: float = 0.0, upper: float = 1.0) -> KolmogorovPde:
    """u_t = sum_ij beta_i beta_j rho_ij x_i x_j u_ij + rate sum_j x_j u_j.

    sigma(x) = sqrt(2) diag(beta_i x_i) chol(rho), so that
    1/2 (sigma sigma^T)_ij = beta_i beta_j rho_ij x_i x_j.
    """
    betas = np.asarray(betas, dtype=np.float64).reshape(-1)
    d = betas.size
    rho = np.atleast_2d(np.asarray(rho, dtype=np.float64))
    if rho.shape != (d, d) or not np.allclose(rho, rho.T):
        raise ValueError("correlation matrix must be symmetric (d, d)")
    chol = correlation_factor(rho)
    S = np.zeros((d, d, d))
    for i in range(d):
        S[i, i, :] = np.sqrt(2.0) * betas[i] * chol[i, :]
    if initial is None:
        initial = basket_call_smooth(np.full(d, 1.0 / d), 0.5, 0.05)
    return KolmogorovPde(
        dim=d, horizon=horizon,
        drift=AffineDrift(rate * np.eye(d), np.zeros(d)),
        diffusion=AffineDiffusion(np.zeros((d, d)), S),
        initial=initial, boundary=boundary, lower=lower, upper=upper, kind="black-scholes",
        meta={"betas": betas.tolist(), "rho": rho.tolist(), "rate": float(rate)},
    )
