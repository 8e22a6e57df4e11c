"""Shallow field generator: a trainable hidden field followed by one convolution.

With a constant unit input the "deconvolution" layer reduces to a trainable
``m x n`` matrix plus a scalar bias, so the whole generator is

    hidden = w_h + b_h
    u_hat  = act(corr_valid(hidden, w_o) + b_o)

and its backward pass is written out by hand below.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .grid import apply_stencil, apply_stencil_transpose

ACTIVATIONS = ("tanh", "identity", "sine")

PARAM_NAMES = ("w_h", "b_h", "w_o", "b_o")


@dataclass
class PicnModel:
    w_h: np.ndarray
    b_h: float
    w_o: np.ndarray
    b_o: float
    activation: str = "tanh"

    def __post_init__(self):
        self.w_h = np.array(self.w_h, dtype=np.float64)
        self.w_o = np.array(self.w_o, dtype=np.float64)
        self.b_h = float(self.b_h)
        self.b_o = float(self.b_o)
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}; choose from {ACTIVATIONS}")
        if self.w_h.ndim != 2 or self.w_o.ndim != 2:
            raise ValueError("w_h and w_o must be matrices")
        p, q = self.w_o.shape
        if p % 2 == 0 or q % 2 == 0:
            raise ValueError(f"conv kernel must have odd dims, got {self.w_o.shape}")
        if self.w_h.shape[0] < p or self.w_h.shape[1] < q:
            raise ValueError(f"hidden field {self.w_h.shape} smaller than kernel {self.w_o.shape}")

    @property
    def output_shape(self) -> tuple[int, int]:
        (m, n), (p, q) = self.w_h.shape, self.w_o.shape
        return (m - p + 1, n - q + 1)

    @property
    def n_params(self) -> int:
        return self.w_h.size + self.w_o.size + 2

    def copy(self) -> "PicnModel":
        return PicnModel(self.w_h.copy(), self.b_h, self.w_o.copy(), self.b_o, self.activation)


@dataclass
class ModelGradients:
    g_w_h: np.ndarray
    g_b_h: float
    g_w_o: np.ndarray
    g_b_o: float

    @classmethod
    def zeros_like(cls, model: PicnModel) -> "ModelGradients":
        return cls(np.zeros_like(model.w_h), 0.0, np.zeros_like(model.w_o), 0.0)

    def scaled(self, c: float) -> "ModelGradients":
        return ModelGradients(c * self.g_w_h, c * self.g_b_h, c * self.g_w_o, c * self.g_b_o)


def init_params(m: int, n: int, p: int, q: int, activation: str = "tanh", seed: int = 0) -> PicnModel:
    """Uniform init on ``[-s, s]`` with ``s = sqrt(1/(p*q))``; biases start at zero."""
    if min(m, n, p, q) < 1:
        raise ValueError("all shape arguments must be positive")
    if p % 2 == 0 or q % 2 == 0:
        raise ValueError(f"kernel dims must be odd, got ({p}, {q})")
    if m < p or n < q:
        raise ValueError(f"hidden ({m}, {n}) must be at least kernel ({p}, {q})")
    rng = np.random.default_rng(seed)
    s = np.sqrt(1.0 / (p * q))
    w_h = rng.uniform(-s, s, size=(m, n))
    w_o = rng.uniform(-s, s, size=(p, q))
    return PicnModel(w_h, 0.0, w_o, 0.0, activation)


def model_for_grid(grid_shape, kernel_shape=(3, 3), activation="tanh", seed=0) -> PicnModel:
    """Model whose output covers a grid of ``grid_shape`` nodes exactly."""
    (ny, nx), (p, q) = grid_shape, kernel_shape
    return init_params(ny + p - 1, nx + q - 1, p, q, activation, seed)


def _activate(name: str, pre: np.ndarray) -> np.ndarray:
    if name == "tanh":
        return np.tanh(pre)
    if name == "sine":
        return np.sin(pre)
    return pre


def preactivation(model: PicnModel, hidden: np.ndarray) -> np.ndarray:
    return apply_stencil(hidden, model.w_o) + model.b_o


def forward(model: PicnModel) -> tuple[np.ndarray, np.ndarray]:
    hidden = model.w_h + model.b_h
    u_hat = _activate(model.activation, preactivation(model, hidden))
    return hidden, u_hat


def backward(model: PicnModel, hidden: np.ndarray, u_hat: np.ndarray, dL_du_hat: np.ndarray) -> ModelGradients:
    dL_du_hat = np.asarray(dL_du_hat, dtype=np.float64)
    if dL_du_hat.shape != u_hat.shape:
        raise ValueError(f"upstream gradient shape {dL_du_hat.shape} != output shape {u_hat.shape}")
    if model.activation == "tanh":
        g_pre = dL_du_hat * (1.0 - u_hat**2)
    elif model.activation == "sine":
        g_pre = dL_du_hat * np.cos(preactivation(model, hidden))
    else:
        g_pre = dL_du_hat
    # weight grad is the valid correlation of the input with the output grad
    g_w_o = apply_stencil(hidden, g_pre)
    g_hidden = apply_stencil_transpose(g_pre, model.w_o, *hidden.shape)
    return ModelGradients(g_hidden, float(g_hidden.sum()), g_w_o, float(g_pre.sum()))


def save_checkpoint(path, models, lam=None) -> None:
    """Write models (and optional operator coefficients) as a text listing.

    Floats are written with ``repr`` so reading them back is exact.
    """
    lines = ["picn-checkpoint 1", f"models {len(models)}"]
    for model in models:
        (m, n), (p, q) = model.w_h.shape, model.w_o.shape
        lines.append(f"{m} {n} {p} {q} {model.activation}")
        lines.append(" ".join(repr(float(v)) for v in model.w_h.ravel()))
        lines.append(repr(model.b_h))
        lines.append(" ".join(repr(float(v)) for v in model.w_o.ravel()))
        lines.append(repr(model.b_o))
    lam = [] if lam is None else list(np.asarray(lam, dtype=np.float64).ravel())
    lines.append("lambda " + " ".join(repr(float(v)) for v in lam))
    Path(path).write_text("\n".join(lines) + "\n")


def load_checkpoint(path) -> tuple[list[PicnModel], np.ndarray]:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != "picn-checkpoint 1":
        raise ValueError(f"{path}: not a picn checkpoint")
    count = int(lines[1].split()[1])
    models, k = [], 2
    for _ in range(count):
        m, n, p, q, act = lines[k].split()
        m, n, p, q = int(m), int(n), int(p), int(q)
        w_h = np.array([float(v) for v in lines[k + 1].split()]).reshape(m, n)
        b_h = float(lines[k + 2])
        w_o = np.array([float(v) for v in lines[k + 3].split()]).reshape(p, q)
        b_o = float(lines[k + 4])
        models.append(PicnModel(w_h, b_h, w_o, b_o, act))
        k += 5
    lam = np.array([float(v) for v in lines[k].split()[1:]])
    return models, lam
