"""Tanh multilayer perceptrons with box-bounded parameters.

Parameters live in one flat vector, ordered layer by layer; inside a
layer the weight matrix comes first (row-major, shape ``(l_k, l_{k-1})``)
followed by the bias vector.
"""

from __future__ import annotations

import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .activations import ACTIVATIONS

CHECKPOINT_MAGIC = "kolmopinn-checkpoint v1"


class ShapeError(ValueError):
    """Input or parameter dimensions do not match the architecture."""


@dataclass(frozen=True)
class Architecture:
    widths: tuple[int, ...]
    bound: float = 1.0
    activation: str = "tanh"
    max_width: int | None = None

    def __post_init__(self):
        widths = tuple(int(w) for w in self.widths)
        object.__setattr__(self, "widths", widths)
        if len(widths) < 2:
            raise ValueError("need at least an input and an output width")
        if min(widths) < 1:
            raise ValueError(f"widths must be positive, got {widths}")
        if self.bound < 0:
            raise ValueError("weight bound R must be non-negative")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.max_width is not None and max(widths[1:]) > self.max_width:
            raise ValueError(f"width {max(widths[1:])} exceeds declared maximum {self.max_width}")

    @classmethod
    def mlp(cls, d_in: int, hidden: int, depth: int, bound: float = 1.0, activation="tanh"):
        """``depth`` layers (so ``depth-1`` hidden layers of width ``hidden``), scalar output."""
        return cls((d_in,) + (hidden,) * (depth - 1) + (1,), bound, activation)

    @property
    def depth(self) -> int:
        return len(self.widths) - 1

    @property
    def width(self) -> int:
        """The W of the parameter box: largest layer width (input excluded)."""
        return self.max_width if self.max_width is not None else max(self.widths[1:])

    @property
    def n_inputs(self) -> int:
        return self.widths[0]

    @property
    def n_outputs(self) -> int:
        return self.widths[-1]

    @property
    def n_params(self) -> int:
        w = self.widths
        return sum(w[k] * (w[k - 1] + 1) for k in range(1, len(w)))

    def offsets(self) -> list[tuple[int, int, int]]:
        """Per layer ``(weight_start, bias_start, end)`` into the flat vector."""
        out, pos = [], 0
        w = self.widths
        for k in range(1, len(w)):
            wstart = pos
            bstart = wstart + w[k] * w[k - 1]
            pos = bstart + w[k]
            out.append((wstart, bstart, pos))
        return out


@dataclass(frozen=True)
class ParameterVector:
    arch: Architecture
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64).reshape(-1)
        if v.size != self.arch.n_params:
            raise ShapeError(f"expected {self.arch.n_params} parameters, got {v.size}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def layers(self) -> list[tuple[np.ndarray, np.ndarray]]:
        """``(W_k, b_k)`` for k = 1..L."""
        w = self.arch.widths
        out = []
        for k, (ws, bs, end) in enumerate(self.arch.offsets(), start=1):
            out.append((self.values[ws:bs].reshape(w[k], w[k - 1]), self.values[bs:end]))
        return out

    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.values))) if self.values.size else 0.0

    def in_box(self) -> bool:
        return self.sup_norm() <= self.arch.bound

    def with_values(self, values) -> "ParameterVector":
        return ParameterVector(self.arch, values)

    @classmethod
    def from_layers(cls, arch: Architecture, layers) -> "ParameterVector":
        flat = np.concatenate([np.concatenate([np.ravel(W), np.ravel(b)]) for W, b in layers])
        return cls(arch, flat)

    @classmethod
    def zeros(cls, arch: Architecture) -> "ParameterVector":
        return cls(arch, np.zeros(arch.n_params))


def random_params(arch: Architecture, seed: int) -> ParameterVector:
    """I.i.d. uniform entries on ``[-R, R]``."""
    rng = np.random.default_rng(seed)
    return ParameterVector(arch, rng.uniform(-arch.bound, arch.bound, arch.n_params))


def clamp_params(params: ParameterVector) -> ParameterVector:
    """Project every entry onto ``[-R, R]``."""
    R = params.arch.bound
    return params.with_values(np.clip(params.values, -R, R))


def _as_batch(params: ParameterVector, x) -> tuple[np.ndarray, bool]:
    z = np.asarray(x, dtype=np.float64)
    single = z.ndim == 1
    z = np.atleast_2d(z)
    if z.ndim != 2 or z.shape[1] != params.arch.n_inputs:
        raise ShapeError(f"input has shape {np.shape(x)}, network expects {params.arch.n_inputs} inputs")
    return z, single


def layer_states(params: ParameterVector, x) -> list[tuple[np.ndarray, np.ndarray]]:
    """``(pre_activation, post_activation)`` per layer; the output layer has no activation."""
    z, single = _as_batch(params, x)
    act = ACTIVATIONS[params.arch.activation].value
    layers = params.layers()
    states = []
    for k, (W, b) in enumerate(layers, start=1):
        a = z @ W.T + b
        z = a if k == len(layers) else act(a)
        states.append((a[0], z[0]) if single else (a, z))
    return states


def forward(params: ParameterVector, x) -> np.ndarray:
    """Network realization at one point (shape ``(l0,)``) or a batch ``(B, l0)``."""
    return layer_states(params, x)[-1][1]


def save_checkpoint(params: ParameterVector, path, extra: dict | None = None) -> Path:
    """Plain-text checkpoint; values are written with ``repr`` so they round-trip exactly."""
    arch = params.arch
    lines = [
        f"# {CHECKPOINT_MAGIC}",
        f"depth {arch.depth}",
        "widths " + " ".join(str(w) for w in arch.widths),
        f"bound {arch.bound!r}",
        f"activation {arch.activation}",
    ]
    for key, val in sorted((extra or {}).items()):
        lines.append(f"meta {key} {val}")
    lines.append(f"values {arch.n_params}")
    lines.extend(repr(float(v)) for v in params.values)
    return atomic_write_text(path, "\n".join(lines) + "\n")


def load_checkpoint(path) -> ParameterVector:
    text = Path(path).read_text().splitlines()
    if not text or text[0] != f"# {CHECKPOINT_MAGIC}":
        raise ValueError(f"{path}: not a checkpoint file")
    header = {}
    i = 1
    while i < len(text):
        key, _, rest = text[i].partition(" ")
        i += 1
        if key == "values":
            count = int(rest)
            break
        if key != "meta":
            header[key] = rest
    else:
        raise ValueError(f"{path}: missing values section")
    widths = tuple(int(w) for w in header["widths"].split())
    if int(header["depth"]) != len(widths) - 1:
        raise ValueError(f"{path}: depth does not match widths")
    arch = Architecture(widths, float(header["bound"]), header["activation"])
    values = np.array([float(s) for s in text[i:i + count]])
    return ParameterVector(arch, values)


def atomic_write_text(path, text: str) -> Path:
    """Write to a sibling temp file, then rename into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path
