"""Input-space Jacobians and Hessians of network realizations, and
parameter gradients of scalar losses.

Derivatives are propagated forward through the layers: each layer
carries its output together with the Jacobian and Hessian of that output
with respect to the network input.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .activations import ACTIVATIONS
from .network import ParameterVector, _as_batch


class NumericalFailure(FloatingPointError):
    """A loss evaluation produced a non-finite value."""

    def __init__(self, message: str, index: int | None = None):
        super().__init__(message)
        self.index = index


def network_jet(layers, z, activation: str = "tanh", xp=np):
    """Value, Jacobian and Hessian of the realization on a batch.

    ``layers`` is a sequence of ``(W_k, b_k)``; ``z`` has shape ``(B, l0)``.
    Returns arrays of shape ``(B, lL)``, ``(B, lL, l0)`` and ``(B, lL, l0, l0)``.
    """
    derivs = ACTIVATIONS[activation].derivatives
    batch, n_in = z.shape
    jac = xp.broadcast_to(xp.eye(n_in), (batch, n_in, n_in))
    hess = xp.zeros((batch, n_in, n_in, n_in))
    last = len(layers) - 1
    for k, (W, b) in enumerate(layers):
        a = z @ W.T + b
        ja = xp.einsum("ij,bjk->bik", W, jac)
        ha = xp.einsum("ij,bjkl->bikl", W, hess)
        if k == last:
            return a, ja, ha
        s, s1, s2, _ = derivs(a, xp)
        z = s
        jac = s1[..., None] * ja
        hess = s2[..., None, None] * ja[..., :, None] * ja[..., None, :] + s1[..., None, None] * ha
    raise ValueError("network has no layers")


def _jet(params: ParameterVector, x):
    z, single = _as_batch(params, x)
    out = network_jet(params.layers(), z, params.arch.activation)
    return out, single


def input_jacobian(params: ParameterVector, x) -> np.ndarray:
    """Shape ``(lL, l0)`` for one point, ``(B, lL, l0)`` for a batch."""
    (_, jac, _), single = _jet(params, x)
    return jac[0] if single else jac


def input_hessian(params: ParameterVector, x) -> np.ndarray:
    """Shape ``(lL, l0, l0)`` for one point, ``(B, lL, l0, l0)`` for a batch."""
    (_, _, hess), single = _jet(params, x)
    return hess[0] if single else hess


def value_jacobian_hessian(params: ParameterVector, x):
    """All three at once; avoids recomputing the forward pass."""
    (val, jac, hess), single = _jet(params, x)
    if single:
        return val[0], jac[0], hess[0]
    return val, jac, hess


@dataclass
class LayerDerivatives:
    """Per-layer Jacobians ``J_k`` and Hessians ``H_k`` at the layer's own input."""

    jacobians: list[np.ndarray]  # (l_k, l_{k-1})
    hessians: list[np.ndarray]  # (l_k, l_{k-1}, l_{k-1})


def layer_derivatives(params: ParameterVector, x) -> LayerDerivatives:
    """``J_k = diag(sigma'(a_k)) W_k`` and ``H_k[i] = sigma''(a_k)_i w_i w_i^T`` at one point."""
    x = np.asarray(x, dtype=np.float64)
    derivs = ACTIVATIONS[params.arch.activation].derivatives
    layers = params.layers()
    z = x
    jacs, hessians = [], []
    for k, (W, b) in enumerate(layers):
        a = W @ z + b
        if k == len(layers) - 1:
            jacs.append(W.copy())
            hessians.append(np.zeros((W.shape[0], W.shape[1], W.shape[1])))
            break
        s, s1, s2, _ = derivs(a)
        jacs.append(s1[:, None] * W)
        hessians.append(s2[:, None, None] * W[:, :, None] * W[:, None, :])
        z = s
    return LayerDerivatives(jacs, hessians)


def jacobian_product_form(params: ParameterVector, x) -> np.ndarray:
    """``J = J_L ... J_1``."""
    ld = layer_derivatives(params, x)
    J = ld.jacobians[0]
    for Jk in ld.jacobians[1:]:
        J = Jk @ J
    return J


def hessian_sum_form(params: ParameterVector, x) -> np.ndarray:
    """Hessian as the sum over layers of ``(J_1..J_{k-1})^T [J_L..J_{k+1} . H_k] (J_{k-1}..J_1)``.

    Independent of :func:`network_jet`; used to cross-check it.
    """
    ld = layer_derivatives(params, x)
    L = len(ld.jacobians)
    n_in = params.arch.n_inputs
    total = np.zeros((params.arch.n_outputs, n_in, n_in))
    for k in range(L):
        below = np.eye(n_in)
        for Jj in ld.jacobians[:k]:
            below = Jj @ below
        above = np.eye(ld.jacobians[k].shape[0])
        for Jj in ld.jacobians[k + 1:]:
            above = Jj @ above
        inner = np.einsum("oi,ipq->opq", above, ld.hessians[k])
        total += np.einsum("pa,opq,qb->oab", below, inner, below)
    return total


def fd_step(theta: np.ndarray) -> np.ndarray:
    return np.cbrt(np.finfo(np.float64).eps) * np.maximum(1.0, np.abs(theta))


def param_gradient(loss, params, mode: str = "finite-difference") -> np.ndarray:
    """Gradient of ``loss(values) -> float`` with respect to the flat parameters.

    ``mode="analytic"`` requires ``loss`` to expose ``value_and_grad``.
    """
    theta = np.array(getattr(params, "values", params), dtype=np.float64)
    if mode == "analytic":
        if not hasattr(loss, "value_and_grad"):
            raise TypeError("loss does not provide an analytic gradient")
        value, grad = loss.value_and_grad(theta)
        bad = np.flatnonzero(~np.isfinite(grad))
        if not np.isfinite(value) or bad.size:
            raise NumericalFailure("non-finite loss or gradient", int(bad[0]) if bad.size else None)
        return np.asarray(grad, dtype=np.float64)
    if mode != "finite-difference":
        raise ValueError(f"unknown gradient mode {mode!r}")
    steps = fd_step(theta)
    grad = np.empty_like(theta)
    probe = theta.copy()
    for i, h in enumerate(steps):
        probe[i] = theta[i] + h
        up = float(loss(probe))
        probe[i] = theta[i] - h
        down = float(loss(probe))
        probe[i] = theta[i]
        if not (np.isfinite(up) and np.isfinite(down)):
            raise NumericalFailure(f"non-finite loss while perturbing parameter {i}", i)
        grad[i] = (up - down) / (2.0 * h)
    return grad
