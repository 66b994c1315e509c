"""Activation functions with closed-form derivatives up to third order.

All functions take an array namespace ``xp`` so the same code runs under
numpy and jax.numpy.
"""

from dataclasses import dataclass
from typing import Callable

import numpy as np


def tanh_derivatives(z, xp=np):
    s = xp.tanh(z)
    s1 = 1.0 - s * s
    s2 = -2.0 * s * s1
    s3 = s1 * (6.0 * s * s - 2.0)
    return s, s1, s2, s3


def sigmoid_derivatives(z, xp=np):
    s = 0.5 * (1.0 + xp.tanh(0.5 * z))
    s1 = s * (1.0 - s)
    s2 = s1 * (1.0 - 2.0 * s)
    s3 = s1 * (1.0 - 6.0 * s + 6.0 * s * s)
    return s, s1, s2, s3


@dataclass(frozen=True)
class Activation:
    name: str
    derivatives: Callable
    # sup norms of (sigma, sigma', sigma'', sigma''') over the real line
    sup_norms: tuple[float, float, float, float]

    def value(self, z, xp=np):
        return self.derivatives(z, xp)[0]

    @property
    def beta(self) -> float:
        """max{1, |sigma'|, |sigma''|, |sigma'''|}."""
        return max(1.0, *self.sup_norms[1:])


ACTIVATIONS = {
    "tanh": Activation("tanh", tanh_derivatives, (1.0, 1.0, 4.0 / (3.0 * np.sqrt(3.0)), 2.0)),
    # sigma'' peaks at 1/(6 sqrt 3); sigma''' at 1/8 (z=0)
    "sigmoid": Activation("sigmoid", sigmoid_derivatives, (1.0, 0.25, 1.0 / (6.0 * np.sqrt(3.0)), 0.125)),
}


def activation_derivatives(z, name: str = "tanh"):
    """``(sigma(z), sigma'(z), sigma''(z), sigma'''(z))``."""
    return ACTIVATIONS[name].derivatives(np.asarray(z, dtype=np.float64))
