"""Dense tensor with reverse-mode differentiation over a recorded op graph.

Every op output keeps references to its parents and a closure that maps the
output gradient to parent gradients. ``Tensor.backward`` walks the graph in
reverse topological order and accumulates gradients additively.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

DEFAULT_DTYPE = np.float64

_grad_enabled = True


class NonFiniteError(FloatingPointError):
    """Raised when a kernel produces NaN or Inf from finite inputs."""


class no_grad:
    """Context manager that disables graph recording."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


def set_default_dtype(dtype) -> None:
    """Switch between 64-bit (tests) and 32-bit (production) storage."""
    global DEFAULT_DTYPE
    dtype = np.dtype(dtype)
    if dtype not in (np.float32, np.float64):
        raise ValueError(f"unsupported dtype {dtype}")
    DEFAULT_DTYPE = dtype.type


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    ndim_extra = grad.ndim - len(shape)
    if ndim_extra > 0:
        grad = grad.sum(axis=tuple(range(ndim_extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name", "_parents", "_backward", "_op")
    __array_ufunc__ = None  # make ndarray (op) Tensor defer to Tensor's reflected operators

    def __init__(self, data, requires_grad: bool = False, name: str = ""):
        arr = np.asarray(data, dtype=DEFAULT_DTYPE)
        if arr.ndim == 0:
            arr = arr.reshape(())
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self._op = "leaf"

    # -- construction helpers -------------------------------------------------
    @classmethod
    def _from_op(cls, data: np.ndarray, parents: Sequence["Tensor"], backward, op: str) -> "Tensor":
        if not np.all(np.isfinite(data)):
            raise NonFiniteError(f"{op} produced non-finite values")
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.name = ""
        out._op = op
        needs = _grad_enabled and any(p.requires_grad for p in parents)
        out.requires_grad = needs
        if needs:
            out._parents = tuple(parents)
            out._backward = backward
        else:
            out._parents = ()
            out._backward = None
        return out

    @staticmethod
    def zeros(shape, requires_grad=False) -> "Tensor":
        return Tensor(np.zeros(shape), requires_grad=requires_grad)

    @staticmethod
    def ones(shape, requires_grad=False) -> "Tensor":
        return Tensor(np.ones(shape), requires_grad=requires_grad)

    # -- basic properties -----------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self._op}{flag})"

    # -- differentiation ------------------------------------------------------
    def backward(self, grad: np.ndarray | None = None) -> None:
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a seed gradient needs a scalar output")
            grad = np.ones_like(self.data)
        if not self.requires_grad:
            return

        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))

        grads: dict[int, np.ndarray] = {id(self): np.asarray(grad, dtype=self.data.dtype)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            parent_grads = node._backward(g)
            for p, pg in zip(node._parents, parent_grads):
                if pg is None or not p.requires_grad:
                    continue
                key = id(p)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    # -- arithmetic -----------------------------------------------------------
    def __add__(self, other) -> "Tensor":
        other = as_tensor(other)
        a_shape, b_shape = self.shape, other.shape

        def bw(g):
            return _unbroadcast(g, a_shape), _unbroadcast(g, b_shape)

        return Tensor._from_op(self.data + other.data, (self, other), bw, "add")

    __radd__ = __add__

    def __sub__(self, other) -> "Tensor":
        other = as_tensor(other)
        a_shape, b_shape = self.shape, other.shape

        def bw(g):
            return _unbroadcast(g, a_shape), _unbroadcast(-g, b_shape)

        return Tensor._from_op(self.data - other.data, (self, other), bw, "sub")

    def __rsub__(self, other) -> "Tensor":
        return as_tensor(other) - self

    def __neg__(self) -> "Tensor":
        return Tensor._from_op(-self.data, (self,), lambda g: (-g,), "neg")

    def __mul__(self, other) -> "Tensor":
        other = as_tensor(other)
        a, b = self.data, other.data

        def bw(g):
            return _unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)

        return Tensor._from_op(a * b, (self, other), bw, "mul")

    __rmul__ = __mul__

    def __truediv__(self, other) -> "Tensor":
        other = as_tensor(other)
        a, b = self.data, other.data
        out = a / b

        def bw(g):
            return _unbroadcast(g / b, a.shape), _unbroadcast(-g * out / b, b.shape)

        return Tensor._from_op(out, (self, other), bw, "div")

    def __rtruediv__(self, other) -> "Tensor":
        return as_tensor(other) / self

    def __matmul__(self, other) -> "Tensor":
        from .kernels import matmul

        return matmul(self, other)

    def __getitem__(self, index) -> "Tensor":
        src_shape = self.shape
        out = self.data[index]

        basic = _is_basic_index(index)

        def bw(g):
            full = np.zeros(src_shape, dtype=g.dtype)
            if basic:
                full[index] = g
            else:
                np.add.at(full, index, g)
            return (full,)

        return Tensor._from_op(np.array(out, copy=True), (self,), bw, "getitem")

    # -- shape ops ------------------------------------------------------------
    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        src = self.shape
        return Tensor._from_op(self.data.reshape(shape), (self,), lambda g: (g.reshape(src),), "reshape")

    def transpose(self, *axes) -> "Tensor":
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        if not axes:
            axes = tuple(reversed(range(self.ndim)))
        inv = tuple(np.argsort(axes))
        return Tensor._from_op(
            np.ascontiguousarray(self.data.transpose(axes)), (self,), lambda g: (g.transpose(inv),), "transpose"
        )

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        src = self.shape

        def bw(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, src).copy(),)

        return Tensor._from_op(np.asarray(self.data.sum(axis=axis, keepdims=keepdims)), (self,), bw, "sum")

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        n = self.data.size if axis is None else np.prod([self.shape[a] for a in np.atleast_1d(axis)])
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)


def _is_basic_index(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return all(isinstance(i, (slice, int, type(Ellipsis), type(None))) for i in items)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data, name: str = "") -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


# ---------------------------------------------------------------------------
# deterministic random numbers


@dataclass(frozen=True)
class Rng:
    """Seeded counter-based generator (Philox-4x64 via numpy).

    ``(seed, stream)`` fixes the draw sequence bit-for-bit.
    """

    seed: int = 0
    stream: int = 0
    algorithm: str = "philox4x64"

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(entropy=self.seed & 0xFFFFFFFFFFFFFFFF, spawn_key=(self.stream,))
        return np.random.Generator(np.random.Philox(ss))


def trunc_normal(gen: np.random.Generator, shape, std: float = 0.02, bound: float = 2.0) -> np.ndarray:
    """Normal draws rejected outside ``±bound·std``."""
    out = gen.normal(0.0, std, size=shape)
    bad = np.abs(out) > bound * std
    while bad.any():
        out[bad] = gen.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(out) > bound * std
    return out


# ---------------------------------------------------------------------------
# PRLT binary format: b"PRLT", u32 rank, u32 extents, f32 LE row-major

MAGIC = b"PRLT"


def encode_prlt(array: np.ndarray) -> bytes:
    arr = np.asarray(array, dtype="<f4", order="C")  # ascontiguousarray would lift 0-d to 1-d
    header = MAGIC + struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    return header + arr.tobytes()


def decode_prlt(buf: bytes, offset: int = 0) -> tuple[np.ndarray, int]:
    """Decode one record starting at ``offset``; returns ``(array, next_offset)``."""
    if buf[offset : offset + 4] != MAGIC:
        raise ValueError(f"bad PRLT magic at offset {offset}")
    (rank,) = struct.unpack_from("<I", buf, offset + 4)
    shape = struct.unpack_from(f"<{rank}I", buf, offset + 8)
    start = offset + 8 + 4 * rank
    count = int(np.prod(shape)) if rank else 1
    end = start + 4 * count
    if end > len(buf):
        raise ValueError("truncated PRLT record")
    arr = np.frombuffer(buf, dtype="<f4", count=count, offset=start).reshape(shape)
    return arr.astype(np.float32), end


def save_tensor(path, array) -> None:
    data = array.data if isinstance(array, Tensor) else array
    Path(path).write_bytes(encode_prlt(data))


def load_tensor(path) -> np.ndarray:
    arr, _ = decode_prlt(Path(path).read_bytes())
    return arr


def save_named(path, tensors: Iterable[tuple[str, np.ndarray]]) -> Path:
    """Write concatenated PRLT records plus a ``<path>.manifest`` sidecar.

    Sidecar lines are ``name<TAB>d0xd1x...<TAB>byte_offset``.
    """
    path = Path(path)
    blob = bytearray()
    lines = []
    for name, arr in tensors:
        data = arr.data if isinstance(arr, Tensor) else np.asarray(arr)
        if any(ch.isspace() for ch in name):
            raise ValueError(f"tensor name may not contain whitespace: {name!r}")
        shape = "x".join(str(n) for n in data.shape) or "scalar"
        lines.append(f"{name}\t{shape}\t{len(blob)}")
        blob += encode_prlt(data)
    path.write_bytes(bytes(blob))
    manifest = path.with_name(path.name + ".manifest")
    manifest.write_text("\n".join(lines) + "\n")
    return manifest


def load_named(path) -> dict[str, np.ndarray]:
    path = Path(path)
    buf = path.read_bytes()
    manifest = path.with_name(path.name + ".manifest")
    out: dict[str, np.ndarray] = {}
    for line in manifest.read_text().splitlines():
        if not line.strip():
            continue
        name, shape, offset = line.split("\t")
        arr, _ = decode_prlt(buf, int(offset))
        expected = () if shape == "scalar" else tuple(int(n) for n in shape.split("x"))
        if arr.shape != expected:
            raise ValueError(f"{name}: manifest shape {expected} != stored {arr.shape}")
        out[name] = arr
    return out
