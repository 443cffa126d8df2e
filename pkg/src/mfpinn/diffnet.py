"""Small differentiable tanh MLP with exact input jets and parameter gradients.

Input derivatives are carried forward through every layer as a second-order
jet ``(u, u_x, u_xx, u_t)``. Parameter gradients are obtained by running the
adjoint of that jet propagation backwards, so losses built from ``u_xx`` or
``u_t`` get exact gradients without any general-purpose tape.

All arithmetic is float64. Randomness goes through ``numpy.random.Generator``
seeded with PCG64, so a (layer_sizes, seed) pair always yields the same bits.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigurationError, DimensionError, NumericError

CHECKPOINT_FORMAT = "mfpinn-diffnet"
CHECKPOINT_VERSION = 1


def make_rng(seed: int) -> np.random.Generator:
    """PCG64 generator; the only RNG constructor used in the package."""
    return np.random.Generator(np.random.PCG64(int(seed)))


class NetworkParams:
    """Weights and biases of a fully connected network, backed by one flat vector.

    ``weights[l]`` has shape ``(layer_sizes[l+1], layer_sizes[l])`` and
    ``biases[l]`` has length ``layer_sizes[l+1]``; both are views into
    ``flat``. Gradients use the same class.
    """

    def __init__(self, layer_sizes: Sequence[int], flat: np.ndarray | None = None, seed: int | None = None):
        sizes = tuple(int(s) for s in layer_sizes)
        if len(sizes) < 2 or any(s < 1 for s in sizes):
            raise ConfigurationError(f"layer_sizes must have >= 2 positive entries, got {list(layer_sizes)}")
        self.layer_sizes = sizes
        self.seed = seed
        n = param_count(sizes)
        if flat is None:
            flat = np.zeros(n)
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != (n,):
            raise DimensionError(f"expected {n} parameters for {list(sizes)}, got shape {flat.shape}")
        self.flat = flat
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        pos = 0
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            self.weights.append(flat[pos:pos + fan_in * fan_out].reshape(fan_out, fan_in))
            pos += fan_in * fan_out
            self.biases.append(flat[pos:pos + fan_out])
            pos += fan_out

    @property
    def n_params(self) -> int:
        return self.flat.size

    def copy(self) -> "NetworkParams":
        return NetworkParams(self.layer_sizes, self.flat.copy(), self.seed)

    def with_flat(self, flat: np.ndarray) -> "NetworkParams":
        return NetworkParams(self.layer_sizes, flat, self.seed)

    def __eq__(self, other) -> bool:
        if not isinstance(other, NetworkParams):
            return NotImplemented
        return self.layer_sizes == other.layer_sizes and np.array_equal(self.flat, other.flat)

    def __repr__(self) -> str:
        return f"NetworkParams(layer_sizes={list(self.layer_sizes)}, n_params={self.n_params})"


Gradient = NetworkParams


def param_count(layer_sizes: Sequence[int]) -> int:
    return sum(a * b + b for a, b in zip(layer_sizes[:-1], layer_sizes[1:]))


def init_params(layer_sizes: Sequence[int], seed: int) -> NetworkParams:
    """Glorot-uniform weights, zero biases."""
    params = NetworkParams(layer_sizes, seed=seed)
    rng = make_rng(seed)
    for w in params.weights:
        fan_out, fan_in = w.shape
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        w[...] = rng.uniform(-bound, bound, size=w.shape)
    return params


@dataclass
class Jet:
    """Network output with its input derivatives, one entry per evaluation point."""

    u: np.ndarray
    du_dx: np.ndarray
    d2u_dx2: np.ndarray
    du_dt: np.ndarray

    def __len__(self) -> int:
        return np.shape(self.u)[0] if np.ndim(self.u) else 1

    def stack(self) -> np.ndarray:
        return np.stack([self.u, self.du_dx, self.d2u_dx2, self.du_dt])

    def scaled(self, factor: float) -> "Jet":
        return Jet(self.u * factor, self.du_dx * factor, self.d2u_dx2 * factor, self.du_dt * factor)


@dataclass
class Tape:
    """Per-layer activations kept by a jet pass for the adjoint sweep."""

    params: NetworkParams
    inputs: list[np.ndarray]   # stacked (4, N, fan_in) jet entering each layer
    hidden: list[np.ndarray]   # tanh value s for each hidden layer, (N, width)
    pre: list[np.ndarray]      # stacked pre-activation jet z for each hidden layer


def _as_points(values, width: int) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != width:
        raise DimensionError(f"network expects {width} inputs per point, got array of shape {np.shape(values)}")
    return arr


def forward(params: NetworkParams, inputs) -> np.ndarray | float:
    """Plain network evaluation; a 1-D input returns a float, a 2-D batch an array."""
    single = np.ndim(inputs) == 1
    a = _as_points(inputs, params.layer_sizes[0])
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        a = a @ w.T + b
        if i < last:
            a = np.tanh(a)
    out = a[:, 0]
    return float(out[0]) if single else out


def seeded_jet(params: NetworkParams, values: np.ndarray, seeds: np.ndarray) -> tuple[Jet, Tape]:
    """Propagate an input jet through the network.

    ``values`` is (N, n_in). ``seeds`` is (3, N, n_in) holding the x-, xx- and
    t-derivatives of every input, which lets an input depend on (x, t) through
    another function (see ``multifidelity.compose_jet``).
    """
    n_in = params.layer_sizes[0]
    values = _as_points(values, n_in)
    n = values.shape[0]
    if seeds.shape != (3, n, n_in):
        raise DimensionError(f"input seeds must have shape (3, {n}, {n_in}), got {seeds.shape}")
    a = np.empty((4, n, n_in))
    a[0] = values
    a[1:] = seeds

    tape = Tape(params, [], [], [])
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        tape.inputs.append(a)
        z = np.empty((4, n, w.shape[0]))
        z[0] = a[0] @ w.T + b  # same expression as forward(), so u matches it bitwise
        z[1:] = a[1:] @ w.T
        if i == last:
            a = z
            break
        s = np.tanh(z[0])
        s1 = 1.0 - s * s
        s2 = -2.0 * s * s1
        zx = z[1]
        h = np.empty_like(z)
        h[0] = s
        h[1] = s1 * zx
        h[2] = s2 * zx * zx + s1 * z[2]
        h[3] = s1 * z[3]
        tape.hidden.append(s)
        tape.pre.append(z)
        a = h

    jet = Jet(a[0, :, 0], a[1, :, 0], a[2, :, 0], a[3, :, 0])
    return jet, tape


def standard_seeds(n: int, n_in: int) -> np.ndarray:
    seeds = np.zeros((3, n, n_in))
    seeds[0, :, 0] = 1.0  # d/dx of the x input
    seeds[2, :, 1] = 1.0  # d/dt of the t input
    return seeds


def forward_jet(params: NetworkParams, x, t, extra_inputs=None) -> Jet:
    """Jet of the network at points (x, t[, extra...]); extra inputs are held constant.

    Scalars or equal-length arrays are accepted for ``x`` and ``t``;
    ``extra_inputs`` is (n_extra,) or (N, n_extra).
    """
    return _jet_with_tape(params, x, t, extra_inputs)[0]


def _jet_with_tape(params, x, t, extra_inputs=None) -> tuple[Jet, Tape]:
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    x, t = np.broadcast_arrays(x, t)
    cols = [x, t]
    if extra_inputs is not None:
        extra = np.asarray(extra_inputs, dtype=np.float64)
        if extra.ndim <= 1:
            extra = np.broadcast_to(extra, (x.size, extra.size))
        cols.extend(extra.T)
    values = np.column_stack(cols) if x.size else np.zeros((0, len(cols)))
    n_in = params.layer_sizes[0]
    if values.shape[1] != n_in:
        raise DimensionError(f"network expects {n_in} inputs, got {values.shape[1]} (x, t + {values.shape[1] - 2} extra)")
    return seeded_jet(params, values, standard_seeds(values.shape[0], n_in))


def backprop(tape: Tape, cotangent: Jet) -> Gradient:
    """Adjoint of ``seeded_jet``: gradient of sum(cotangent * jet) w.r.t. parameters."""
    params = tape.params
    grad = NetworkParams(params.layer_sizes)
    n_layers = len(params.weights)
    g = cotangent.stack()[:, :, None]  # (4, N, 1)
    for i in range(n_layers - 1, -1, -1):
        a = tape.inputs[i]
        # z = a @ w.T (+ b on the value row)
        grad.weights[i][...] = g.reshape(-1, g.shape[-1]).T @ a.reshape(-1, a.shape[-1])
        grad.biases[i][...] = g[0].sum(axis=0)
        if i == 0:
            break
        ga = g @ params.weights[i]
        # undo the tanh jet of layer i-1
        s = tape.hidden[i - 1]
        _, zx, zxx, zt = tape.pre[i - 1]
        s1 = 1.0 - s * s
        s2 = -2.0 * s * s1
        g_h, g_hx, g_hxx, g_ht = ga
        g_s = (g_h
               - 2.0 * s * (g_hx * zx + g_hxx * zxx + g_ht * zt)
               + g_hxx * zx * zx * (6.0 * s * s - 2.0))
        g = np.empty_like(ga)
        g[0] = g_s * s1
        g[1] = g_hx * s1 + 2.0 * g_hxx * s2 * zx
        g[2] = g_hxx * s1
        g[3] = g_ht * s1
    return grad


LossFn = Callable[[Jet], tuple[float, Jet]]


def grad_params(params: NetworkParams, loss: LossFn, points) -> tuple[float, Gradient]:
    """Value and parameter gradient of ``loss(jet)`` over a point batch.

    ``points`` is an (N, n_in) array whose first two columns are (x, t).
    ``loss`` receives the batch jet and returns ``(value, dloss/djet)``.
    """
    points = np.asarray(points, dtype=np.float64).reshape(-1, params.layer_sizes[0])
    if points.shape[0] == 0:
        return 0.0, NetworkParams(params.layer_sizes)
    jet, tape = seeded_jet(params, points, standard_seeds(points.shape[0], params.layer_sizes[0]))
    value, cot = loss(jet)
    if not np.isfinite(value):
        raise NumericError(f"non-finite loss {value}", points=points)
    return float(value), backprop(tape, cot)


@dataclass(frozen=True)
class LinearResidual:
    """Residual r = c_u*u + c_x*u_x + c_xx*u_xx + c_t*u_t - target, per point.

    Every residual used by the heat PINN has this form, and ``mse`` returns
    the mean of r**2 along with its cotangent on the jet.
    """

    c_u: np.ndarray | float = 0.0
    c_x: np.ndarray | float = 0.0
    c_xx: np.ndarray | float = 0.0
    c_t: np.ndarray | float = 0.0
    target: np.ndarray | float = 0.0

    def __call__(self, jet: Jet) -> np.ndarray:
        return (self.c_u * jet.u + self.c_x * jet.du_dx + self.c_xx * jet.d2u_dx2
                + self.c_t * jet.du_dt - self.target)

    def mse(self, jet: Jet) -> tuple[float, Jet]:
        r = self(jet)
        n = r.size
        if n == 0:
            return 0.0, jet.scaled(0.0)
        value = float(np.dot(r, r) / n)
        w = 2.0 * r / n
        zero = np.zeros_like(r)

        def part(c):
            return w * c if np.any(c) else zero

        return value, Jet(part(self.c_u), part(self.c_x), part(self.c_xx), part(self.c_t))


def save_checkpoint(params: NetworkParams, path: str | Path) -> None:
    """JSON checkpoint; floats are stored as hex strings so the round trip is exact."""
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "layer_sizes": list(params.layer_sizes),
        "seed": params.seed,
        "params": [float.hex(float(v)) for v in params.flat],
    }
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")


def load_checkpoint(path: str | Path) -> NetworkParams:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ConfigurationError(f"{path}: not a diffnet checkpoint")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ConfigurationError(f"{path}: unsupported checkpoint version {doc.get('version')}")
    flat = np.array([float.fromhex(v) for v in doc["params"]])
    return NetworkParams(doc["layer_sizes"], flat, doc.get("seed"))
