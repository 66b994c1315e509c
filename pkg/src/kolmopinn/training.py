"""Collocation sampling, training/generalization errors and the optimizer loop."""

from __future__ import annotations

import math
import os
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

# XLA's multi-threaded CPU kernels are not bit-reproducible across thread counts.
os.environ.setdefault("XLA_FLAGS", "--xla_cpu_multi_thread_eigen=false intra_op_parallelism_threads=1")

from .derivatives import NumericalFailure, network_jet, param_gradient  # noqa: E402
from .network import Architecture, ParameterVector, forward  # noqa: E402
from .pde import KolmogorovPde, boundary_values, interior_residual_from_jet  # noqa: E402

PARTS = ("interior", "spatial", "temporal")


@dataclass(frozen=True)
class CollocationSets:
    interior_x: np.ndarray  # (N_i, d)
    interior_t: np.ndarray  # (N_i,)
    boundary_y: np.ndarray  # (N_s, d)
    boundary_t: np.ndarray  # (N_s,)
    boundary_face: np.ndarray  # (N_s,) face index: 2*axis + (0 lower | 1 upper)
    initial_x: np.ndarray  # (N_t, d)
    seed: int

    @property
    def counts(self) -> tuple[int, int, int]:
        return len(self.interior_t), len(self.boundary_t), len(self.initial_x)


def sample_sets(pde: KolmogorovPde, n_interior: int, n_spatial: int, n_temporal: int, seed: int) -> CollocationSets:
    """Uniform samples on D x (0,T), the lateral boundary and D x {0}.

    Boundary points pick one of the 2d faces uniformly (all faces of a box
    have equal area), then a uniform point on that face and a uniform time.
    """
    if min(n_interior, n_spatial, n_temporal) < 1:
        raise ValueError("each collocation set needs at least one point")
    d, a, b, T = pde.dim, pde.lower, pde.upper, pde.horizon
    gen = np.random.default_rng(seed)
    ix = gen.uniform(a, b, (n_interior, d))
    it = gen.uniform(0.0, T, n_interior)
    face = gen.integers(0, 2 * d, n_spatial)
    by = gen.uniform(a, b, (n_spatial, d))
    rows = np.arange(n_spatial)
    by[rows, face // 2] = np.where(face % 2 == 0, a, b)
    bt = gen.uniform(0.0, T, n_spatial)
    tx = gen.uniform(a, b, (n_temporal, d))
    return CollocationSets(ix, it, by, bt, face, tx, int(seed))


@dataclass
class TrainingReport:
    interior: float
    spatial: float
    temporal: float
    params: ParameterVector | None = None
    history: list = field(default_factory=list)  # (iteration, interior, spatial, temporal, total, best)
    seconds: float = 0.0
    stages: dict = field(default_factory=dict)

    @property
    def total(self) -> float:
        return self.interior + self.spatial + self.temporal

    def parts(self) -> dict:
        return {"interior": self.interior, "spatial": self.spatial, "temporal": self.temporal, "total": self.total}


def _layers_from_flat(arch: Architecture, theta, xp=np):
    w = arch.widths
    out = []
    for k, (ws, bs, end) in enumerate(arch.offsets(), start=1):
        out.append((xp.reshape(theta[ws:bs], (w[k], w[k - 1])), theta[bs:end]))
    return out


def _residual_vectors(pde, arch, theta, data, xp=np):
    layers = _layers_from_flat(arch, theta, xp)
    zi = xp.concatenate([data["ix"], data["it"][:, None]], axis=1)
    _, jac, hess = network_jet(layers, zi, arch.activation, xp)
    r_int = interior_residual_from_jet(pde, data["ix"], jac[:, 0, :], hess[:, 0], xp)
    zs = xp.concatenate([data["by"], data["bt"][:, None]], axis=1)
    zt = xp.concatenate([data["tx"], xp.zeros((data["tx"].shape[0], 1))], axis=1)
    r_sp = _plain_forward(layers, zs, arch.activation, xp)[:, 0] - data["psi"]
    r_tm = _plain_forward(layers, zt, arch.activation, xp)[:, 0] - data["phi"]
    return r_int, r_sp, r_tm


def _plain_forward(layers, z, activation, xp):
    from .activations import ACTIVATIONS

    act = ACTIVATIONS[activation]
    for k, (W, b) in enumerate(layers):
        z = z @ W.T + b
        if k < len(layers) - 1:
            z = act.value(z, xp)
    return z


class PinnLoss:
    """theta -> E_T(theta, S)^2, the sum of the three mean-squared residuals.

    ``__call__`` evaluates in numpy; ``value_and_grad`` differentiates the
    same computation with jax.
    """

    def __init__(self, pde: KolmogorovPde, arch: Architecture, sets: CollocationSets):
        self.pde, self.arch, self.sets = pde, arch, sets
        self.data = {
            "ix": sets.interior_x, "it": sets.interior_t,
            "by": sets.boundary_y, "bt": sets.boundary_t,
            "tx": sets.initial_x,
            "psi": boundary_values(pde, sets.boundary_y, sets.boundary_t),
            "phi": pde.initial(sets.initial_x),
        }
        self._jax_fn = None

    def residuals(self, theta):
        return _residual_vectors(self.pde, self.arch, np.asarray(theta, dtype=np.float64), self.data)

    def parts(self, theta) -> tuple[float, float, float]:
        return tuple(float(np.mean(r * r)) for r in self.residuals(theta))

    def __call__(self, theta) -> float:
        return float(sum(self.parts(theta)))

    def _build_jax(self):
        import jax

        jax.config.update("jax_enable_x64", True)
        import jax.numpy as jnp

        data = {k: jnp.asarray(v) for k, v in self.data.items()}
        pde, arch = self.pde, self.arch

        def loss(theta):
            r = _residual_vectors(pde, arch, theta, data, jnp)
            parts = jnp.stack([jnp.mean(v * v) for v in r])
            return jnp.sum(parts), parts

        self._jax_fn = jax.jit(jax.value_and_grad(loss, has_aux=True))

    def value_parts_and_grad(self, theta):
        if self._jax_fn is None:
            self._build_jax()
        (value, parts), grad = self._jax_fn(np.asarray(theta, dtype=np.float64))
        return float(value), tuple(float(p) for p in np.asarray(parts)), np.asarray(grad, dtype=np.float64)

    def value_and_grad(self, theta):
        value, _, grad = self.value_parts_and_grad(theta)
        return value, grad

    def first_bad_point(self, theta) -> str:
        for name, r in zip(PARTS, self.residuals(theta)):
            bad = np.flatnonzero(~np.isfinite(r))
            if bad.size:
                return f"{name} point {int(bad[0])}"
        return "no non-finite residual found"


def training_error(params: ParameterVector, pde: KolmogorovPde, sets: CollocationSets) -> TrainingReport:
    """Mean squared residual per part with uniform weights 1/N_q."""
    i, s, t = PinnLoss(pde, params.arch, sets).parts(params.values)
    return TrainingReport(i, s, t, params)


@dataclass(frozen=True)
class McEstimate:
    estimate: float
    stderr: float


def generalization_error_mc(params: ParameterVector, pde: KolmogorovPde, M_eval: int, seed: int) -> dict:
    """Monte-Carlo estimates of the three squared-residual integrals (uniform probability measures)."""
    if M_eval < 2:
        raise ValueError("need at least two evaluation points")
    sets = sample_sets(pde, M_eval, M_eval, M_eval, seed)
    out = {}
    for name, r in zip(PARTS, PinnLoss(pde, params.arch, sets).residuals(params.values)):
        sq = r * r
        out[name] = McEstimate(float(np.mean(sq)), float(np.std(sq, ddof=1) / math.sqrt(sq.size)))
    out["total"] = McEstimate(sum(out[p].estimate for p in PARTS),
                              math.sqrt(sum(out[p].stderr ** 2 for p in PARTS)))
    return out


@dataclass(frozen=True)
class OptimizerConfig:
    adam_steps: int = 5000
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    lbfgs_steps: int = 2000
    gradient: str = "analytic"  # or "finite-difference"
    log_every: int = 1


class TrainingFailure(NumericalFailure):
    def __init__(self, message, iteration, where):
        super().__init__(f"{message} at iteration {iteration} ({where})")
        self.iteration = iteration
        self.where = where


def _evaluate(loss, theta, mode):
    """(value, parts, grad) for PinnLoss or any plain callable loss."""
    if mode == "analytic":
        if hasattr(loss, "value_parts_and_grad"):
            return loss.value_parts_and_grad(theta)
        value, grad = loss.value_and_grad(theta)
        return float(value), (float(value), 0.0, 0.0), np.asarray(grad)
    grad = param_gradient(loss, theta, "finite-difference")
    parts = loss.parts(theta) if hasattr(loss, "parts") else (float(loss(theta)), 0.0, 0.0)
    return float(sum(parts)), parts, grad


def minimize_projected(loss, theta0, bound: float, config: OptimizerConfig = OptimizerConfig()) -> TrainingReport:
    """Adam with projection onto [-R, R]^k, then box-constrained L-BFGS-B.

    Returns the best iterate seen; ``history`` rows are
    ``(iteration, interior, spatial, temporal, total, best_total)``.
    """
    t0 = time.perf_counter()
    theta = np.clip(np.array(theta0, dtype=np.float64), -bound, bound)
    history = []
    best = {"value": math.inf, "theta": theta.copy(), "parts": (math.inf,) * 3}

    def record(it, value, parts, th):
        if not math.isfinite(value):
            where = loss.first_bad_point(th) if hasattr(loss, "first_bad_point") else "loss value"
            raise TrainingFailure("non-finite training loss", it, where)
        if value < best["value"]:
            best.update(value=value, theta=th.copy(), parts=parts)
        if it % config.log_every == 0:
            history.append((it, *parts, value, best["value"]))

    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    b1, b2 = config.beta1, config.beta2
    it = 0
    for step in range(1, config.adam_steps + 1):
        value, parts, grad = _evaluate(loss, theta, config.gradient)
        record(it, value, parts, theta)
        m = b1 * m + (1 - b1) * grad
        v = b2 * v + (1 - b2) * grad * grad
        mhat = m / (1 - b1**step)
        vhat = v / (1 - b2**step)
        theta = np.clip(theta - config.learning_rate * mhat / (np.sqrt(vhat) + config.adam_eps), -bound, bound)
        it += 1

    stages = {"adam_iterations": config.adam_steps}
    if config.lbfgs_steps > 0:
        cache = {}

        def fun(th):
            value, parts, grad = _evaluate(loss, th, config.gradient)
            cache[th.tobytes()] = (value, parts)
            if not math.isfinite(value):
                record(it, value, parts, th)
            return value, grad

        def callback(th):
            nonlocal it
            value, parts = cache.get(th.tobytes()) or fun(th)[:1] + (None,)
            if parts is None:
                parts = loss.parts(th) if hasattr(loss, "parts") else (value, 0.0, 0.0)
            record(it, value, parts, th)
            it += 1

        value, parts, _ = _evaluate(loss, theta, config.gradient)
        record(it, value, parts, theta)
        it += 1
        res = minimize(fun, theta, jac=True, method="L-BFGS-B", bounds=[(-bound, bound)] * theta.size,
                       callback=callback,
                       options={"maxiter": config.lbfgs_steps, "maxfun": 2 * config.lbfgs_steps,
                                "ftol": 1e-15, "gtol": 1e-12, "maxcor": 50})
        stages["lbfgs_iterations"] = int(res.nit)
        stages["lbfgs_message"] = str(res.message)
    else:
        value, parts, _ = _evaluate(loss, theta, config.gradient)
        record(it, value, parts, theta)

    i, s, t = best["parts"]
    rep = TrainingReport(i, s, t, None, history, time.perf_counter() - t0, stages)
    rep.best_theta = best["theta"]
    return rep


def train(params0: ParameterVector, pde: KolmogorovPde, sets: CollocationSets,
          config: OptimizerConfig = OptimizerConfig()) -> TrainingReport:
    """Minimize the PINN training loss from ``params0``; every iterate stays in the parameter box."""
    if not params0.in_box():
        raise ValueError("initial parameters lie outside [-R, R]")
    loss = PinnLoss(pde, params0.arch, sets)
    rep = minimize_projected(loss, params0.values, params0.arch.bound, config)
    rep.params = params0.with_values(rep.best_theta)
    return rep


def network_on_grid(params: ParameterVector, x, t) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    t = np.broadcast_to(np.asarray(t, dtype=np.float64), (x.shape[0],))
    return forward(params, np.concatenate([x, t[:, None]], axis=1))[:, 0]
