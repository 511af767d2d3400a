"""Small feedforward boundary network with hand-written backprop and Adam.

The network maps ``(t / T, xi)`` to one or more non-negative boundary levels::

    g(t, xi; theta) = relu(W_out . h(t, xi) + b_out)

where ``h`` is a stack of leaky-ReLU layers. Parameters live in one flat
float64 vector; :func:`unpack` returns per-layer views into it.
"""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable

import numpy as np

logger = logging.getLogger(__name__)


class InputShapeError(ValueError):
    pass


class TrainingDivergence(FloatingPointError):
    def __init__(self, iteration: int, message: str = "non-finite gradient"):
        super().__init__(f"{message} at iteration {iteration}")
        self.iteration = iteration


@dataclass(frozen=True)
class NetConfig:
    latent_dim: int
    maturity: float
    output_bias_init: tuple[float, ...] = (1.0,)
    hidden_layers: int = 2
    hidden_width: int | None = None
    leaky_slope: float = 0.01

    def __post_init__(self):
        if isinstance(self.output_bias_init, (int, float)):
            object.__setattr__(self, "output_bias_init", (float(self.output_bias_init),))
        else:
            object.__setattr__(self, "output_bias_init",
                               tuple(float(b) for b in self.output_bias_init))
        if self.hidden_width is None:
            object.__setattr__(self, "hidden_width", 20 + self.latent_dim)
        if self.latent_dim < 0:
            raise ValueError("latent_dim must be >= 0")
        if self.hidden_width < 1 or self.hidden_layers < 1:
            raise ValueError("hidden_width and hidden_layers must be >= 1")
        if not all(b > 0 for b in self.output_bias_init):
            raise ValueError("output bias init must be positive")
        if not 0.0 < self.leaky_slope < 1.0:
            raise ValueError("leaky slope must lie in (0, 1)")
        if self.maturity <= 0:
            raise ValueError("maturity must be positive")

    @property
    def output_dim(self) -> int:
        return len(self.output_bias_init)

    @property
    def input_dim(self) -> int:
        return 1 + self.latent_dim

    @property
    def layer_shapes(self) -> list[tuple[int, int]]:
        sizes = [self.input_dim] + [self.hidden_width] * self.hidden_layers + [self.output_dim]
        return list(zip(sizes[:-1], sizes[1:]))

    @property
    def n_params(self) -> int:
        return sum(i * o + o for i, o in self.layer_shapes)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["output_bias_init"] = list(self.output_bias_init)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NetConfig":
        d = dict(d)
        d["output_bias_init"] = tuple(d["output_bias_init"])
        return cls(**d)


def unpack(config: NetConfig, theta: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    """Split the flat parameter vector into ``(W, b)`` views, one per layer."""
    if theta.shape != (config.n_params,):
        raise InputShapeError(f"expected {config.n_params} parameters, got {theta.shape}")
    layers = []
    pos = 0
    for fan_in, fan_out in config.layer_shapes:
        w = theta[pos:pos + fan_in * fan_out].reshape(fan_in, fan_out)
        pos += fan_in * fan_out
        b = theta[pos:pos + fan_out]
        pos += fan_out
        layers.append((w, b))
    return layers


def init_params(config: NetConfig, rng: np.random.Generator) -> np.ndarray:
    """He-scaled hidden weights, zero output weights, output bias = theta0.

    With zero output weights the initial boundary is exactly the constant
    ``output_bias_init``.
    """
    theta = np.zeros(config.n_params)
    layers = unpack(config, theta)
    for w, _ in layers[:-1]:
        w[...] = rng.standard_normal(w.shape) * np.sqrt(2.0 / w.shape[0])
    layers[-1][1][...] = config.output_bias_init
    return theta


def network_inputs(config: NetConfig, t, xi) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    xi = np.asarray(xi, dtype=float)
    if config.latent_dim == 0:
        if xi.size and xi.shape[-1] != 0:
            raise InputShapeError("latent input given to a network with latent_dim 0")
        t = np.atleast_1d(t)
        return (t / config.maturity)[:, None]
    if xi.ndim == 1:
        xi = xi[None, :]
    if xi.shape[-1] != config.latent_dim:
        raise InputShapeError(
            f"latent input has dimension {xi.shape[-1]}, network expects {config.latent_dim}")
    t = np.broadcast_to(np.asarray(t, dtype=float), xi.shape[:-1])
    return np.concatenate([(t / config.maturity)[:, None], xi], axis=1)


@dataclass
class ForwardCache:
    activations: list[np.ndarray]   # inputs to each layer
    preacts: list[np.ndarray]       # pre-activations of each layer
    output: np.ndarray


def forward_cached(config: NetConfig, theta: np.ndarray, inputs: np.ndarray) -> ForwardCache:
    layers = unpack(config, theta)
    a = inputs
    acts, pres = [], []
    slope = config.leaky_slope
    for i, (w, b) in enumerate(layers):
        acts.append(a)
        z = a @ w + b
        pres.append(z)
        if i < len(layers) - 1:
            a = np.where(z >= 0.0, z, slope * z)
        else:
            a = np.maximum(z, 0.0)
    return ForwardCache(acts, pres, a)


def forward(config: NetConfig, theta: np.ndarray, t, xi=()) -> np.ndarray:
    """Boundary levels, shape ``(N, output_dim)``."""
    return forward_cached(config, theta, network_inputs(config, t, xi)).output


def backward(config: NetConfig, theta: np.ndarray, cache: ForwardCache,
             grad_output: np.ndarray) -> np.ndarray:
    """Pull ``d scalar / d output`` back to ``d scalar / d theta``.

    Kinks use the right derivative: a pre-activation of exactly 0 counts as active.
    """
    layers = unpack(config, theta)
    grad = np.zeros_like(theta)
    glayers = unpack(config, grad)
    slope = config.leaky_slope
    delta = grad_output * (cache.preacts[-1] >= 0.0)
    for i in range(len(layers) - 1, -1, -1):
        gw, gb = glayers[i]
        gw[...] = cache.activations[i].T @ delta
        gb[...] = delta.sum(axis=0)
        if i == 0:
            break
        delta = delta @ layers[i][0].T
        delta *= np.where(cache.preacts[i - 1] >= 0.0, 1.0, slope)
    return grad


def grad_scalar(config: NetConfig, theta: np.ndarray, inputs: np.ndarray,
                head: Callable[[np.ndarray], tuple[float, np.ndarray]]) -> tuple[float, np.ndarray]:
    """Value and gradient of ``head(g(inputs; theta))`` with respect to theta.

    ``head`` maps the network output to ``(scalar, d scalar / d output)``.
    """
    cache = forward_cached(config, theta, inputs)
    value, grad_out = head(cache.output)
    grad_out = np.broadcast_to(np.asarray(grad_out, dtype=float), cache.output.shape)
    grad = backward(config, theta, cache, grad_out)
    if not np.any(grad):
        logger.debug("scalar is not connected to the parameters: zero gradient")
    return value, grad


def min_abs_preactivation(config: NetConfig, theta: np.ndarray, inputs: np.ndarray) -> float:
    cache = forward_cached(config, theta, inputs)
    return float(min(np.abs(z).min() for z in cache.preacts))


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, n: int, **kw) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), **kw)


def adam_step(theta: np.ndarray, grad: np.ndarray, state: AdamState) -> tuple[np.ndarray, AdamState]:
    """One bias-corrected Adam step in the ascent direction."""
    if theta.shape != grad.shape or state.m.shape != theta.shape:
        raise InputShapeError("parameter, gradient and moment shapes differ")
    if not np.all(np.isfinite(grad)):
        raise TrainingDivergence(state.step)
    step = state.step + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    m_hat = m / (1.0 - state.beta1 ** step)
    v_hat = v / (1.0 - state.beta2 ** step)
    new_theta = theta + state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    new_state = AdamState(m, v, step, state.lr, state.beta1, state.beta2, state.eps)
    return new_theta, new_state


# Checkpoint layout (little-endian):
#   8 bytes   magic b"SBNET01\n"
#   4 bytes   uint32 header length H
#   H bytes   UTF-8 JSON header {"config": ..., "seed": ..., "iteration": ..., "n_params": ...}
#   8*n bytes float64 parameter vector
_MAGIC = b"SBNET01\n"


def save_checkpoint(path, config: NetConfig, theta: np.ndarray, seed: int | None = None,
                    iteration: int = 0, extra: dict | None = None) -> None:
    header = {"config": config.to_dict(), "seed": seed, "iteration": iteration,
              "n_params": int(theta.size)}
    if extra:
        header["extra"] = extra
    raw = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(raw)))
        fh.write(raw)
        fh.write(np.ascontiguousarray(theta, dtype="<f8").tobytes())


def load_checkpoint(path) -> tuple[NetConfig, np.ndarray, dict]:
    data = Path(path).read_bytes()
    if data[:8] != _MAGIC:
        raise ValueError(f"{path} is not a boundary-network checkpoint")
    (hlen,) = struct.unpack("<I", data[8:12])
    header = json.loads(data[12:12 + hlen].decode())
    theta = np.frombuffer(data[12 + hlen:], dtype="<f8").astype(float)
    config = NetConfig.from_dict(header["config"])
    if theta.size != header["n_params"] or theta.size != config.n_params:
        raise ValueError("checkpoint parameter count does not match its config")
    return config, theta, header
