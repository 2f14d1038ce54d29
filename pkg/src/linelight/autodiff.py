"""Dense tensors with reverse-mode automatic differentiation.

The engine is deliberately small: a ``Tensor`` wraps a dense, row-major numpy
buffer (NCHW layout for image tensors), and a ``Tape`` records operations in
execution order.  Because operations are recorded as they run, the tape is
already topologically sorted and ``backward`` is a single reverse sweep that
visits each recorded operation exactly once.

Gradients only flow while a tape is active (see :func:`tape`).  Inference
code simply runs without one and pays no bookkeeping cost.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ConfigurationError, DimensionError

DTYPES = {"f32": np.float32, "f64": np.float64}

# The active tape, if any.  Single computation graph is single-threaded by
# contract, so a module global is sufficient.
_ACTIVE_TAPE: "Tape | None" = None


def dtype_name(dt: np.dtype) -> str:
    if dt == np.float32:
        return "f32"
    if dt == np.float64:
        return "f64"
    raise ConfigurationError(f"unsupported dtype {dt}; use f32 or f64")


class Tensor:
    """Dense N-dimensional value, optionally participating in a tape.

    ``data`` is a row-major numpy array of f32 or f64.  ``grad`` has the same
    shape and is allocated lazily by the backward pass.
    """

    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str = ""):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}, dtype={dtype_name(self.dtype)}, requires_grad={self.requires_grad}{tag})"

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        """Leaf copy sharing the buffer; gradients do not flow through it."""
        return Tensor(self.data, requires_grad=False)

    def astype(self, dtype) -> "Tensor":
        """Untaped dtype conversion; use only at graph boundaries."""
        return Tensor(self.data.astype(dtype), requires_grad=self.requires_grad)

    def ensure_grad(self) -> np.ndarray:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        return self.grad

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    # Convenience arithmetic; the full op set lives in linelight.ops.
    def __add__(self, other):
        from . import ops

        return ops.add(self, _as_tensor(other, self.dtype))

    def __sub__(self, other):
        from . import ops

        return ops.sub(self, _as_tensor(other, self.dtype))

    def __mul__(self, other):
        from . import ops

        if isinstance(other, (int, float)):
            return ops.scale(self, float(other))
        return ops.mul(self, other)

    __rmul__ = __mul__


def _as_tensor(x, dtype) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=dtype))


class Tape:
    """Ordered record of operations, each with a backward rule.

    Operations are appended at forward time, so the list order is a valid
    topological order of the graph: every operation's inputs were produced
    (and recorded) before it.
    """

    def __init__(self):
        self.ops: list[tuple[Tensor, Callable[[np.ndarray], None]]] = []

    def record(self, output: Tensor, backward_rule: Callable[[np.ndarray], None]) -> None:
        self.ops.append((output, backward_rule))

    def backward(self, root: Tensor) -> None:
        if root.data.size != 1:
            raise DimensionError(f"backward root must be scalar, got shape {root.shape}")
        root.ensure_grad()
        root.grad += np.ones_like(root.data)
        # Reverse sweep; ops whose output never received a gradient are not
        # on any path to the root and are skipped.
        for out, rule in reversed(self.ops):
            if out.grad is not None:
                rule(out.grad)
        # Only leaves keep gradients between sweeps; clearing op outputs makes
        # a repeated backward accumulate exactly one more dLoss/dLeaf.
        for out, _ in self.ops:
            out.grad = None

    def __enter__(self) -> "Tape":
        global _ACTIVE_TAPE
        self._outer = _ACTIVE_TAPE
        _ACTIVE_TAPE = self
        return self

    def __exit__(self, *exc) -> None:
        global _ACTIVE_TAPE
        _ACTIVE_TAPE = self._outer


def tape() -> Tape:
    """Open a fresh tape: ``with tape() as t: ... ; t.backward(loss)``."""
    return Tape()


def active_tape() -> Tape | None:
    return _ACTIVE_TAPE


def record_op(inputs: Sequence[Tensor], out_data: np.ndarray,
              backward_rule: Callable[[np.ndarray, Tensor], None]) -> Tensor:
    """Wrap an op result, registering ``backward_rule(g, out)`` if recording.

    The rule receives the output gradient and must accumulate into the
    ``grad`` buffers of whichever inputs require gradients.
    """
    t = _ACTIVE_TAPE
    needs = t is not None and any(x.requires_grad for x in inputs)
    out = Tensor(out_data, requires_grad=needs)
    if needs:
        t.record(out, lambda g, _out=out: backward_rule(g, _out))
    return out


def check_same_dtype(*tensors: Tensor) -> np.dtype:
    """Dtype must be uniform within one computation graph."""
    dt = tensors[0].dtype
    for x in tensors[1:]:
        if x.dtype != dt:
            raise DimensionError(
                f"mixed dtypes in one graph: {dtype_name(dt)} vs {dtype_name(x.dtype)}"
            )
    return dt


def backward(loss: Tensor) -> None:
    """Populate gradients of every ``requires_grad`` leaf reachable from ``loss``.

    Repeated calls without clearing gradients accumulate, matching the
    additive semantics of the chain rule.
    """
    t = _ACTIVE_TAPE
    if t is None:
        raise ConfigurationError("backward() called with no active tape")
    t.backward(loss)


def finite_diff_grad(f: Callable[[Tensor], float], x: Tensor, step: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function, element by element.

    This is the verification oracle for every analytic backward rule; it
    never touches the tape.  ``x`` should be f64 for meaningful tolerances.
    """
    base = x.data.astype(np.float64).copy()
    grad = np.zeros_like(base)
    flat = base.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        fp = _eval_scalar(f, base, x)
        flat[i] = orig - step
        fm = _eval_scalar(f, base, x)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * step)
    return grad


def _eval_scalar(f, buf: np.ndarray, proto: Tensor) -> float:
    out = f(Tensor(buf.astype(proto.dtype)))
    if isinstance(out, Tensor):
        return out.item()
    return float(out)


def grad_rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Max-norm relative disagreement between two gradients."""
    scale = max(float(np.abs(analytic).max(initial=0.0)),
                float(np.abs(numeric).max(initial=0.0)), 1e-12)
    return float(np.abs(analytic - numeric).max(initial=0.0)) / scale


def rng(seed: int) -> np.random.Generator:
    """The package-wide RNG convention: PCG64 seeded explicitly."""
    return np.random.Generator(np.random.PCG64(seed))


def iter_tensors(params: Iterable[Tensor]) -> Iterable[Tensor]:
    return (p for p in params if isinstance(p, Tensor))
