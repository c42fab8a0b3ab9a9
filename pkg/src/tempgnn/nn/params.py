"""Flat parameter storage, initialization, Adam and finite-difference checks."""
from __future__ import annotations

import hashlib
import struct
from typing import Callable, Dict

import numpy as np

from ..errors import FormatError


class ParameterTape:
    """All learnable arrays of a model as views into one flat vector.

    Layers register arrays during construction; :meth:`freeze` then packs
    them into ``flat`` (and a matching ``grad`` vector). ``params[name]`` and
    ``grads[name]`` are views, so in-place optimizer updates on ``flat`` are
    visible to every layer.
    """

    def __init__(self, dtype=np.float32, seed: int = 0):
        self.dtype = np.dtype(dtype)
        self.rng = np.random.default_rng(seed)
        self._pending: Dict[str, np.ndarray] = {}
        self.params: Dict[str, np.ndarray] = {}
        self.grads: Dict[str, np.ndarray] = {}
        self.flat = np.zeros(0, self.dtype)
        self.grad = np.zeros(0, self.dtype)

    def add(self, name: str, value) -> str:
        if name in self._pending or name in self.params:
            raise KeyError(f"parameter {name!r} registered twice")
        if self.params:
            raise RuntimeError("tape already frozen")
        self._pending[name] = np.asarray(value, dtype=self.dtype)
        return name

    def uniform(self, name, shape, fan_in):
        bound = 1.0 / np.sqrt(max(fan_in, 1))
        return self.add(name, self.rng.uniform(-bound, bound, size=shape))

    def zeros(self, name, shape):
        return self.add(name, np.zeros(shape))

    def ones(self, name, shape):
        return self.add(name, np.ones(shape))

    def freeze(self):
        sizes = [a.size for a in self._pending.values()]
        self.flat = np.zeros(sum(sizes), self.dtype)
        self.grad = np.zeros_like(self.flat)
        off = 0
        for (name, arr), n in zip(self._pending.items(), sizes):
            self.flat[off:off + n] = arr.ravel()
            self.params[name] = self.flat[off:off + n].reshape(arr.shape)
            self.grads[name] = self.grad[off:off + n].reshape(arr.shape)
            off += n
        self._pending = {}
        return self

    def __getitem__(self, name):
        return self.params[name]

    def zero_grad(self):
        self.grad[:] = 0

    def accumulate(self, name, g):
        self.grads[name] += g

    @property
    def size(self) -> int:
        return self.flat.size

    def names(self):
        return list(self.params)

    def set_flat(self, values):
        values = np.asarray(values)
        if values.shape != self.flat.shape:
            raise ValueError(f"expected {self.flat.shape} parameters, got {values.shape}")
        self.flat[:] = values


class Adam:
    def __init__(self, tape: ParameterTape, lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
        self.tape = tape
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.m = np.zeros_like(tape.flat)
        self.v = np.zeros_like(tape.flat)
        self.t = 0

    def step(self):
        g = self.tape.grad
        self.t += 1
        self.m *= self.b1
        self.m += (1 - self.b1) * g
        self.v *= self.b2
        self.v += (1 - self.b2) * g * g
        mhat = self.m / (1 - self.b1 ** self.t)
        vhat = self.v / (1 - self.b2 ** self.t)
        self.tape.flat -= (self.lr * mhat / (np.sqrt(vhat) + self.eps)).astype(self.tape.dtype)


# -- checkpoint --------------------------------------------------------------
# header: magic(8s) version(u4) dtype_code(u4) n_params(u8) config_hash(32s)
_MAGIC = b"TGNNCKPT"
_VERSION = 1
_HEADER = struct.Struct("<8sIIQ32s")
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


def config_hash(text: str) -> bytes:
    return hashlib.sha256(text.encode()).digest()


def save_params(path, tape: ParameterTape, config_text: str = ""):
    code = 0 if tape.dtype == np.float32 else 1
    with open(path, "wb") as f:
        f.write(_HEADER.pack(_MAGIC, _VERSION, code, tape.size, config_hash(config_text)))
        f.write(np.ascontiguousarray(tape.flat, dtype=_DTYPES[code]).tobytes())
        payload = config_text.encode()
        f.write(struct.pack("<Q", len(payload)))
        f.write(payload)


def load_params(path):
    """Returns (flat parameter vector, config text)."""
    with open(path, "rb") as f:
        head = f.read(_HEADER.size)
        if len(head) != _HEADER.size:
            raise FormatError("checkpoint too short")
        magic, version, code, n, digest = _HEADER.unpack(head)
        if magic != _MAGIC:
            raise FormatError(f"bad checkpoint magic {magic!r}")
        if version != _VERSION:
            raise FormatError(f"unsupported checkpoint version {version}")
        dt = _DTYPES[code]
        flat = np.frombuffer(f.read(n * dt.itemsize), dtype=dt).astype(dt.newbyteorder("="))
        (m,) = struct.unpack("<Q", f.read(8))
        text = f.read(m).decode()
    if config_hash(text) != digest:
        raise FormatError("config hash mismatch")
    return flat, text


# -- finite differences --------------------------------------------------------

def numerical_grad(f: Callable[[], float], x: np.ndarray, eps=1e-6, order=2) -> np.ndarray:
    """Central differences of scalar ``f()`` with respect to array ``x`` (perturbed in place).

    ``order=4`` uses the five-point stencil, whose O(eps^4) truncation error
    allows a larger step and so far less cancellation noise.
    """
    if order not in (2, 4):
        raise ValueError("order must be 2 or 4")
    g = np.zeros_like(x, dtype=np.float64)
    it = np.nditer(x, flags=["multi_index"], op_flags=["readwrite"])

    def at(i, orig, h):
        x[i] = orig + h
        return f()

    for _ in it:
        i = it.multi_index
        orig = x[i].copy()
        if order == 2:
            g[i] = (at(i, orig, eps) - at(i, orig, -eps)) / (2 * eps)
        else:
            g[i] = (8 * (at(i, orig, eps) - at(i, orig, -eps))
                    - (at(i, orig, 2 * eps) - at(i, orig, -2 * eps))) / (12 * eps)
        x[i] = orig
    return g


def max_relative_error(analytic, numeric, floor=1e-6) -> float:
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.abs(analytic) + np.abs(numeric), floor)
    return float(np.max(np.abs(analytic - numeric) / denom)) if analytic.size else 0.0
