"""Feed-forward interval-coefficient field ``c_theta(z, t, r)``.

The network sees the features ``(z, t, r, r - t)`` and returns a d-vector.
Parameters live in one flat float64 vector; layer ``l`` occupies a
contiguous block holding its weight matrix (``out x in``, row-major)
followed by its bias (``out``). Forward-mode tangents give the total time
derivative along a bridge; reverse mode gives parameter gradients.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import expit

from .errors import CheckpointError, ShapeError

MAGIC = b"SWFCOEF\x00"
FORMAT_VERSION = 1


def _silu(x):
    s = expit(x)
    return x * s, s * (1.0 + x * (1.0 - s))


def _tanh(x):
    y = np.tanh(x)
    return y, 1.0 - y * y


# each maps pre-activations to (activation, derivative)
ACTIVATIONS = {"silu": _silu, "tanh": _tanh}


def param_count(layer_dims) -> int:
    return sum(o * i + o for i, o in zip(layer_dims[:-1], layer_dims[1:]))


class CoefficientField:
    def __init__(self, layer_dims, params=None, activation: str = "silu"):
        layer_dims = tuple(int(k) for k in layer_dims)
        if len(layer_dims) < 2 or min(layer_dims) < 1:
            raise ValueError(f"invalid layer dims {layer_dims}")
        if layer_dims[0] != layer_dims[-1] + 3:
            raise ValueError(
                f"input width must be output width + 3 (z, t, r, r-t), got {layer_dims}"
            )
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        self.layer_dims = layer_dims
        self.activation = activation
        self._act = ACTIVATIONS[activation]
        n = param_count(layer_dims)
        self.params = np.zeros(n) if params is None else np.array(params, dtype=float)
        if self.params.shape != (n,):
            raise ShapeError(f"expected {n} parameters, got {self.params.shape}")
        self._bind_views()

    def _bind_views(self):
        self.layers = []
        off = 0
        for i, o in zip(self.layer_dims[:-1], self.layer_dims[1:]):
            W = self.params[off:off + o * i].reshape(o, i)
            off += o * i
            b = self.params[off:off + o]
            off += o
            self.layers.append((W, b))

    @property
    def d(self) -> int:
        return self.layer_dims[-1]

    @property
    def n_params(self) -> int:
        return self.params.size

    @classmethod
    def init(cls, layer_dims, seed: int = 0, activation: str = "silu",
             zero_final: bool = True) -> "CoefficientField":
        """Fan-in uniform init; the output layer starts at zero by default."""
        model = cls(layer_dims, activation=activation)
        rng = np.random.default_rng(seed)
        for k, (W, b) in enumerate(model.layers):
            if zero_final and k == len(model.layers) - 1:
                continue
            bound = 1.0 / np.sqrt(W.shape[1])
            W[...] = rng.uniform(-bound, bound, size=W.shape)
            b[...] = rng.uniform(-bound, bound, size=b.shape)
        return model

    @classmethod
    def for_state_dim(cls, d: int, hidden=(128, 128), seed: int = 0,
                      activation: str = "silu") -> "CoefficientField":
        return cls.init((d + 3, *hidden, d), seed=seed, activation=activation)

    @classmethod
    def from_layers(cls, layers, activation: str = "silu") -> "CoefficientField":
        layers = [(np.atleast_2d(np.asarray(W, float)), np.atleast_1d(np.asarray(b, float)))
                  for W, b in layers]
        dims = [layers[0][0].shape[1]] + [W.shape[0] for W, _ in layers]
        flat = np.concatenate([np.concatenate([W.ravel(), b]) for W, b in layers])
        return cls(dims, flat, activation)

    def copy(self) -> "CoefficientField":
        return CoefficientField(self.layer_dims, self.params.copy(), self.activation)

    def _features(self, z, t, r):
        z = np.asarray(z, dtype=float)
        single = z.ndim == 1
        z = np.atleast_2d(z)
        if z.shape[1] != self.d:
            raise ShapeError(f"state has dimension {z.shape[1]}, model expects {self.d}")
        n = z.shape[0]
        t = np.broadcast_to(np.asarray(t, dtype=float), (n,))
        r = np.broadcast_to(np.asarray(r, dtype=float), (n,))
        x = np.column_stack([z, t, r, r - t])
        return x, single

    def _tangent(self, dz, dt, dr, n):
        dz = np.atleast_2d(np.asarray(dz, dtype=float))
        if dz.shape[1] != self.d:
            raise ShapeError(f"tangent has dimension {dz.shape[1]}, model expects {self.d}")
        dz = np.broadcast_to(dz, (n, self.d))
        dt = np.broadcast_to(np.asarray(dt, dtype=float), (n,))
        dr = np.broadcast_to(np.asarray(dr, dtype=float), (n,))
        return np.column_stack([dz, dt, dr, dr - dt])

    def _run(self, x, dx=None):
        """Forward pass keeping what reverse mode needs; tangents if ``dx``."""
        acts, slopes = [x], []
        a, da = x, dx
        for W, b in self.layers[:-1]:
            h = a @ W.T + b
            a, slope = self._act(h)
            if da is not None:
                da = slope * (da @ W.T)
            acts.append(a)
            slopes.append(slope)
        W, b = self.layers[-1]
        out = a @ W.T + b
        dout = None if da is None else da @ W.T
        return out, dout, acts, slopes

    def _pullback(self, acts, slopes, g):
        grads = []
        for k in range(len(self.layers) - 1, -1, -1):
            W, _ = self.layers[k]
            grads.append(np.concatenate([(g.T @ acts[k]).ravel(), g.sum(axis=0)]))
            if k > 0:
                g = (g @ W) * slopes[k - 1]
        return np.concatenate(grads[::-1])

    def _check_cotangent(self, g, n):
        g = np.atleast_2d(np.asarray(g, dtype=float))
        if g.shape != (n, self.d):
            raise ShapeError(f"cotangent shape {g.shape} does not match output {(n, self.d)}")
        return g

    def forward(self, z, t, r) -> np.ndarray:
        x, single = self._features(z, t, r)
        out = self._run(x)[0]
        return out[0] if single else out

    __call__ = forward

    def jvp(self, z, t, r, dz, dt=1.0, dr=0.0) -> tuple[np.ndarray, np.ndarray]:
        """Value and directional derivative along input tangent (dz, dt, dr)."""
        x, single = self._features(z, t, r)
        out, dout, _, _ = self._run(x, self._tangent(dz, dt, dr, x.shape[0]))
        return (out[0], dout[0]) if single else (out, dout)

    def jvp_with_pullback(self, z, t, r, dz, dt=1.0, dr=0.0):
        """Batched ``jvp`` plus a closure mapping output cotangents to parameter
        gradients at the same point, sharing one forward pass."""
        x, _ = self._features(z, t, r)
        out, dout, acts, slopes = self._run(x, self._tangent(dz, dt, dr, x.shape[0]))
        n = x.shape[0]
        return out, dout, lambda g: self._pullback(acts, slopes, self._check_cotangent(g, n))

    def backprop(self, z, t, r, cotangent) -> np.ndarray:
        """Gradient of ``sum_i cotangent_i . c_theta(z_i, t_i, r_i)`` in the parameters."""
        x, _ = self._features(z, t, r)
        g = self._check_cotangent(cotangent, x.shape[0])
        _, _, acts, slopes = self._run(x)
        return self._pullback(acts, slopes, g)

    def save(self, path) -> None:
        save(self, path)


@dataclass(frozen=True)
class DirectionalDerivativeRequest:
    """Input point and tangent for a total-time-derivative query.

    During training ``dz`` is the bridge velocity, ``dt = 1`` and ``dr = 0``.
    """

    z: np.ndarray
    t: float
    r: float
    dz: np.ndarray
    dt: float = 1.0
    dr: float = 0.0


def directional_derivative(model, req: DirectionalDerivativeRequest):
    return model.jvp(req.z, req.t, req.r, req.dz, req.dt, req.dr)


class ZeroField:
    """Stub field returning c = 0: pure drift when propagated."""

    def __init__(self, d: int):
        self.d = d

    def forward(self, z, t, r):
        return np.zeros_like(np.asarray(z, dtype=float))

    __call__ = forward

    def jvp(self, z, t, r, dz, dt=1.0, dr=0.0):
        zero = np.zeros_like(np.asarray(z, dtype=float))
        return zero, zero.copy()


# Checkpoint layout, all little-endian:
#   8s magic | u32 version | u32 n_dims | n_dims x u32 dims
#   | u16 len | activation ascii | u64 n_params | n_params x f64
def save(model: CoefficientField, path) -> None:
    tag = model.activation.encode("ascii")
    dims = model.layer_dims
    header = (MAGIC
              + struct.pack("<II", FORMAT_VERSION, len(dims))
              + struct.pack(f"<{len(dims)}I", *dims)
              + struct.pack("<H", len(tag)) + tag
              + struct.pack("<Q", model.n_params))
    payload = model.params.astype("<f8").tobytes()
    Path(path).write_bytes(header + payload)


def load(path) -> CoefficientField:
    data = Path(path).read_bytes()

    def take(fmt, off):
        size = struct.calcsize(fmt)
        if off + size > len(data):
            raise CheckpointError(f"checkpoint truncated in header at byte {off}")
        return struct.unpack_from(fmt, data, off), off + size

    if data[:8] != MAGIC:
        raise CheckpointError("not a coefficient-field checkpoint (bad magic)")
    (version, n_dims), off = take("<II", 8)
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}, expected {FORMAT_VERSION}")
    dims, off = take(f"<{n_dims}I", off)
    (tag_len,), off = take("<H", off)
    if off + tag_len > len(data):
        raise CheckpointError("checkpoint truncated in activation tag")
    activation = data[off:off + tag_len].decode("ascii")
    off += tag_len
    (n_params,), off = take("<Q", off)
    if n_params != param_count(dims):
        raise CheckpointError(f"parameter count {n_params} does not match layer dims {dims}")
    expected = off + 8 * n_params
    if len(data) != expected:
        raise CheckpointError(
            f"checkpoint payload truncated: {len(data)} bytes, expected {expected}"
            if len(data) < expected else
            f"checkpoint has {len(data) - expected} trailing bytes"
        )
    params = np.frombuffer(data, dtype="<f8", count=n_params, offset=off).astype(float)
    return CoefficientField(dims, params, activation)
