"""
Reverse-mode automatic differentiation over dense numpy arrays

Tensors record the op that produced them; `Tensor.backward` walks the graph
in reverse topological order and accumulates gradients into every leaf that
requires them. All learnable computation in the project is built from the
ops in this module.
"""
import math
import threading
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import expit

from errors import ContractError, DimensionError, DomainError, InputError

_state = threading.local()


def get_default_dtype():
    return getattr(_state, 'dtype', np.float32)


def is_grad_enabled() -> bool:
    return getattr(_state, 'grad_enabled', True)


@contextmanager
def no_grad():
    """Run ops without recording a graph"""
    previous = is_grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = previous


@contextmanager
def default_dtype(dtype):
    """Create new tensors with `dtype` (float64 is used by finite-difference oracles)"""
    previous = get_default_dtype()
    _state.dtype = np.dtype(dtype).type
    try:
        yield
    finally:
        _state.dtype = previous


Backward = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class Tensor:
    """N-dimensional array participating in a reverse-mode differentiation graph"""

    __array_priority__ = 100  # ndarray (op) Tensor defers to the Tensor operators

    def __init__(self, data, requires_grad: bool = False, name: str = None):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.array(data, dtype=get_default_dtype())
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self.op = ''
        self._parents: Tuple['Tensor', ...] = ()
        self._backward: Optional[Backward] = None

    @staticmethod
    def from_op(data: np.ndarray, parents: Sequence['Tensor'], backward: Backward,
                op: str) -> 'Tensor':
        """Wrap the result of an op, recording it when any parent needs a gradient"""
        out = Tensor.__new__(Tensor)
        out.data = data
        out.grad = None
        out.name = None
        out.op = op
        parents = tuple(parents)
        if is_grad_enabled() and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = parents
            out._backward = backward
        else:
            out.requires_grad = False
            out._parents = ()
            out._backward = None
        return out

    # ------------------------------------------------------------ properties
    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def detach(self) -> 'Tensor':
        return Tensor.from_op(self.data, (), None, 'detach')

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        flag = ', requires_grad=True' if self.requires_grad else ''
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __len__(self):
        return self.shape[0]

    # ------------------------------------------------------------- backward
    def _topological_order(self) -> List['Tensor']:
        order, visited = [], set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in visited:
                    stack.append((parent, False))
        return order

    def backward(self, keep_intermediate: bool = False):
        """Populate .grad on every leaf reachable from this scalar

        Gradients accumulate: calling backward twice on the same graph without
        zeroing doubles every leaf gradient.
        """
        if self.data.size != 1:
            raise ContractError(f"backward needs a single-element loss, got shape {self.shape}")
        if not self.requires_grad:
            raise ContractError("loss does not depend on any tensor that requires grad")

        flows: Dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(self._topological_order()):
            g = flows.pop(id(node), None)
            if g is None:
                continue
            if node.is_leaf or keep_intermediate:
                node.grad = g.copy() if node.grad is None else node.grad + g
            if node._backward is None:
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                if pg.shape != parent.shape:
                    raise ContractError(
                        f"{node.op} produced grad {pg.shape} for input {parent.shape}")
                key = id(parent)
                flows[key] = pg if key not in flows else flows[key] + pg

    # ------------------------------------------------------------ operators
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return index_select(self, index)

    # ------------------------------------------------------- method aliases
    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def std(self, axis=None, keepdims=False):
        return std(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def tanh(self):
        return tanh(self)

    def sigmoid(self):
        return sigmoid(self)

    def sqrt(self):
        return sqrt(self)

    def log10(self):
        return log10(self)

    def astype(self, dtype):
        return astype(self, dtype)


class Parameter(Tensor):
    """Leaf tensor owned by a Module and updated by an optimizer"""

    def __init__(self, data, name: str = None):
        super().__init__(data, requires_grad=True, name=name)


def _as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum out broadcast dimensions so grad matches shape"""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for dim, extent in enumerate(shape):
        if extent == 1 and grad.shape[dim] != 1:
            grad = grad.sum(axis=dim, keepdims=True)
    return grad


def _check_broadcast(a: Tensor, b: Tensor, op: str):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: cannot broadcast {a.shape} with {b.shape}") from None


def _normalize_axes(axis, ndim: int) -> Tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    normalized = []
    for ax in axes:
        if not -ndim <= ax < ndim:
            raise DimensionError(f"axis {ax} out of range for rank {ndim}")
        normalized.append(ax % ndim)
    return tuple(sorted(normalized))


def _expand_reduced(g: np.ndarray, axes: Tuple[int, ...], shape, keepdims: bool) -> np.ndarray:
    if not keepdims:
        for ax in axes:
            g = np.expand_dims(g, ax)
    return np.broadcast_to(g, shape)


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b, 'add')

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return Tensor.from_op(a.data + b.data, (a, b), backward, 'add')


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b, 'sub')

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return Tensor.from_op(a.data - b.data, (a, b), backward, 'sub')


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b, 'mul')

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return Tensor.from_op(a.data * b.data, (a, b), backward, 'mul')


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b, 'div')
    with np.errstate(divide='ignore', invalid='ignore'):
        out = a.data / b.data

    def backward(g):
        with np.errstate(divide='ignore', invalid='ignore'):
            ga = g / b.data
            gb = -g * a.data / (b.data * b.data)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return Tensor.from_op(out, (a, b), backward, 'div')


def neg(a) -> Tensor:
    a = _as_tensor(a)
    return Tensor.from_op(-a.data, (a,), lambda g: (-g,), 'neg')


def tanh(a) -> Tensor:
    a = _as_tensor(a)
    y = np.tanh(a.data)
    return Tensor.from_op(y, (a,), lambda g: (g * (1 - y * y),), 'tanh')


def sigmoid(a) -> Tensor:
    a = _as_tensor(a)
    y = expit(a.data)
    return Tensor.from_op(y, (a,), lambda g: (g * y * (1 - y),), 'sigmoid')


def exp(a) -> Tensor:
    a = _as_tensor(a)
    y = np.exp(a.data)
    return Tensor.from_op(y, (a,), lambda g: (g * y,), 'exp')


def log(a) -> Tensor:
    a = _as_tensor(a)
    if np.any(a.data <= 0):
        raise DomainError("log of a non-positive value")
    return Tensor.from_op(np.log(a.data), (a,), lambda g: (g / a.data,), 'log')


def log10(a) -> Tensor:
    a = _as_tensor(a)
    if np.any(a.data <= 0):
        raise DomainError("log10 of a non-positive value")
    scale = 1.0 / math.log(10.0)
    return Tensor.from_op(np.log10(a.data), (a,), lambda g: (g * scale / a.data,), 'log10')


def sqrt(a) -> Tensor:
    a = _as_tensor(a)
    if np.any(a.data < 0):
        raise DomainError("sqrt of a negative value")
    y = np.sqrt(a.data)

    def backward(g):
        with np.errstate(divide='ignore', invalid='ignore'):
            return (g / (2 * y),)

    return Tensor.from_op(y, (a,), backward, 'sqrt')


def square(a) -> Tensor:
    a = _as_tensor(a)
    return Tensor.from_op(a.data * a.data, (a,), lambda g: (2 * g * a.data,), 'square')


def maximum(a, b) -> Tensor:
    """Elementwise max; ties send the gradient to `a`"""
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b, 'maximum')
    take_a = a.data >= b.data

    def backward(g):
        return _unbroadcast(g * take_a, a.shape), _unbroadcast(g * ~take_a, b.shape)

    return Tensor.from_op(np.maximum(a.data, b.data), (a, b), backward, 'maximum')


def clip(a, lo: float, hi: float) -> Tensor:
    """Clamp to [lo, hi]; the gradient is zero outside the interval"""
    a = _as_tensor(a)
    inside = (a.data >= lo) & (a.data <= hi)
    return Tensor.from_op(np.clip(a.data, lo, hi), (a,), lambda g: (g * inside,), 'clip')


def prelu(x, alpha) -> Tensor:
    """Parametric ReLU with a scalar slope tensor for the negative branch"""
    x, alpha = _as_tensor(x), _as_tensor(alpha)
    if alpha.size != 1:
        raise DimensionError(f"prelu slope must be a scalar, got shape {alpha.shape}")
    slope = alpha.data.reshape(())
    positive = x.data > 0
    out = np.where(positive, x.data, slope * x.data)

    def backward(g):
        gx = g * np.where(positive, 1, slope)
        galpha = np.sum(g * np.where(positive, 0, x.data)).reshape(alpha.shape)
        return gx.astype(x.dtype, copy=False), galpha.astype(alpha.dtype)

    return Tensor.from_op(out.astype(x.dtype, copy=False), (x, alpha), backward, 'prelu')


def astype(a, dtype) -> Tensor:
    a = _as_tensor(a)
    source = a.dtype
    return Tensor.from_op(a.data.astype(dtype), (a,), lambda g: (g.astype(source),), 'astype')


_UNARY = {'tanh': tanh, 'sigmoid': sigmoid, 'log10': log10, 'sqrt': sqrt, 'neg': neg,
          'exp': exp, 'log': log}
_BINARY = {'add': add, 'sub': sub, 'mul': mul, 'div': div, 'maximum': maximum}


def elementwise(op: str, a, b=None) -> Tensor:
    """Dispatch an elementwise op by name"""
    if op in _BINARY:
        if b is None:
            raise ContractError(f"{op} needs two operands")
        return _BINARY[op](a, b)
    if op in _UNARY:
        return _UNARY[op](a)
    raise ContractError(f"unknown elementwise op: {op}")


# ------------------------------------------------------------ reductions

def sum_(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    axes = _normalize_axes(axis, a.ndim)
    out = np.sum(a.data, axis=axes, keepdims=keepdims)
    return Tensor.from_op(np.asarray(out), (a,),
                          lambda g: (_expand_reduced(g, axes, a.shape, keepdims),), 'sum')


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    axes = _normalize_axes(axis, a.ndim)
    n = int(np.prod([a.shape[ax] for ax in axes])) if axes else 1
    out = np.mean(a.data, axis=axes, keepdims=keepdims)
    return Tensor.from_op(np.asarray(out, dtype=a.dtype), (a,),
                          lambda g: (_expand_reduced(g, axes, a.shape, keepdims) / n,), 'mean')


def std(a, axis=None, keepdims: bool = False) -> Tensor:
    """Population standard deviation (divides by N); zero-spread entries get zero gradient"""
    a = _as_tensor(a)
    axes = _normalize_axes(axis, a.ndim)
    n = int(np.prod([a.shape[ax] for ax in axes])) if axes else 1
    centered = a.data - np.mean(a.data, axis=axes, keepdims=True)
    s_keep = np.sqrt(np.mean(centered * centered, axis=axes, keepdims=True))
    out = s_keep if keepdims else np.squeeze(s_keep, axis=axes)

    def backward(g):
        g_keep = _expand_reduced(g, axes, s_keep.shape, keepdims) if not keepdims else g
        with np.errstate(divide='ignore', invalid='ignore'):
            scale = np.where(s_keep > 0, g_keep / (n * s_keep), 0)
        return ((centered * scale).astype(a.dtype, copy=False),)

    return Tensor.from_op(np.asarray(out, dtype=a.dtype), (a,), backward, 'std')


def softmax(a, axis: int = -1) -> Tensor:
    a = _as_tensor(a)
    ax = _normalize_axes(axis, a.ndim)[0]
    shifted = a.data - np.max(a.data, axis=ax, keepdims=True)
    e = np.exp(shifted)
    y = e / np.sum(e, axis=ax, keepdims=True)

    def backward(g):
        return (y * (g - np.sum(g * y, axis=ax, keepdims=True)),)

    return Tensor.from_op(y, (a,), backward, 'softmax')


# ------------------------------------------------------------------ shapes

def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"cannot reshape {a.shape} into {shape}") from None
    return Tensor.from_op(out, (a,), lambda g: (g.reshape(a.shape),), 'reshape')


def transpose(a, axes=None) -> Tensor:
    a = _as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    if sorted(axes) != list(range(a.ndim)):
        raise DimensionError(f"invalid permutation {axes} for rank {a.ndim}")
    inverse = tuple(np.argsort(axes))
    return Tensor.from_op(np.transpose(a.data, axes), (a,),
                          lambda g: (np.transpose(g, inverse),), 'transpose')


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    if not tensors:
        raise ContractError("concat needs at least one tensor")
    ax = _normalize_axes(axis, tensors[0].ndim)[0]
    try:
        out = np.concatenate([t.data for t in tensors], axis=ax)
    except ValueError as e:
        raise DimensionError(f"concat: {e}") from None
    bounds = np.cumsum([t.shape[ax] for t in tensors])[:-1]
    return Tensor.from_op(out, tensors, lambda g: tuple(np.split(g, bounds, axis=ax)), 'concat')


def _is_basic_index(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return all(isinstance(i, (int, slice, type(Ellipsis), type(None))) for i in items)


def index_select(a, index) -> Tensor:
    a = _as_tensor(a)
    try:
        out = a.data[index]
    except IndexError as e:
        raise DimensionError(str(e)) from None
    basic = _is_basic_index(index)

    def backward(g):
        full = np.zeros_like(a.data)
        if basic:
            full[index] = g
        else:
            np.add.at(full, index, g)
        return (full,)

    return Tensor.from_op(np.array(out), (a,), backward, 'index')


def slice_(a, axis: int, start: int, stop: int) -> Tensor:
    """Contiguous range [start, stop) along one axis"""
    a = _as_tensor(a)
    ax = _normalize_axes(axis, a.ndim)[0]
    index = [slice(None)] * a.ndim
    index[ax] = slice(start, stop)
    return index_select(a, tuple(index))


def pad(a, widths: Sequence[Tuple[int, int]]) -> Tensor:
    """Zero padding; widths holds (before, after) per axis"""
    a = _as_tensor(a)
    if len(widths) != a.ndim:
        raise DimensionError(f"pad needs {a.ndim} width pairs, got {len(widths)}")
    crop = tuple(slice(lo, lo + n) for (lo, _), n in zip(widths, a.shape))
    return Tensor.from_op(np.pad(a.data, widths), (a,), lambda g: (g[crop],), 'pad')


# ------------------------------------------------------------------ linear

def matmul(a, b) -> Tensor:
    """Batched matrix product with numpy broadcasting over leading axes"""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs rank >= 2 operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError as e:
        raise DimensionError(f"matmul: {e}") from None

    def backward(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return Tensor.from_op(out, (a, b), backward, 'matmul')


def linear(x, w, b=None) -> Tensor:
    """x [..., D_in] @ w.T [D_in, D_out] + b"""
    out = matmul(x, transpose(w, (1, 0)))
    return out + b if b is not None else out


def _batched(x: Tensor, rank: int) -> Tuple[Tensor, bool]:
    if x.ndim == rank - 1:
        return reshape(x, (1,) + x.shape), True
    if x.ndim != rank:
        raise DimensionError(f"expected rank {rank - 1} or {rank} input, got shape {x.shape}")
    return x, False


def conv1d(x, w, b=None, stride: int = 1, dilation: int = 1, padding: int = 0) -> Tensor:
    """1-D cross-correlation: x [N, C_in, T] (or [C_in, T]), w [C_out, C_in, K]"""
    x, w = _as_tensor(x), _as_tensor(w)
    x, squeeze = _batched(x, 3)
    n, c_in, t_in = x.shape
    c_out, c_w, k = w.shape
    if c_w != c_in:
        raise DimensionError(f"conv1d: input has {c_in} channels, weight expects {c_w}")
    span = dilation * (k - 1) + 1
    if t_in + 2 * padding < span:
        raise DimensionError(f"conv1d: length {t_in} too short for receptive field {span}")
    t_out = (t_in + 2 * padding - span) // stride + 1
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding)))
    dtype = np.result_type(x.data, w.data)
    taps = [slice(j * dilation, j * dilation + stride * (t_out - 1) + 1, stride) for j in range(k)]

    out = np.zeros((n, c_out, t_out), dtype=dtype)
    for j, tap in enumerate(taps):
        out += np.matmul(w.data[:, :, j], xp[:, :, tap])
    parents = [x, w]
    if b is not None:
        b = _as_tensor(b)
        out += b.data[None, :, None]
        parents.append(b)

    def backward(g):
        gxp = np.zeros_like(xp, dtype=dtype)
        gw = np.zeros_like(w.data, dtype=dtype)
        for j, tap in enumerate(taps):
            xs = xp[:, :, tap]
            gw[:, :, j] = np.tensordot(g, xs, axes=([0, 2], [0, 2]))
            gxp[:, :, tap] += np.matmul(w.data[:, :, j].T, g)
        grads = [gxp[:, :, padding:padding + t_in].astype(x.dtype, copy=False),
                 gw.astype(w.dtype, copy=False)]
        if b is not None:
            grads.append(g.sum(axis=(0, 2)).astype(b.dtype, copy=False))
        return grads

    result = Tensor.from_op(out, parents, backward, 'conv1d')
    return reshape(result, result.shape[1:]) if squeeze else result


def _pair(v) -> Tuple[int, int]:
    return (v, v) if isinstance(v, int) else (int(v[0]), int(v[1]))


def conv2d(x, w, b=None, stride=(1, 1), padding=(0, 0)) -> Tensor:
    """2-D cross-correlation: x [N, C_in, F, T] (or [C_in, F, T]), w [C_out, C_in, K_f, K_t]"""
    x, w = _as_tensor(x), _as_tensor(w)
    x, squeeze = _batched(x, 4)
    (sf, st), (pf, pt) = _pair(stride), _pair(padding)
    n, c_in, f_in, t_in = x.shape
    c_out, c_w, kf, kt = w.shape
    if c_w != c_in:
        raise DimensionError(f"conv2d: input has {c_in} channels, weight expects {c_w}")
    if f_in + 2 * pf < kf or t_in + 2 * pt < kt:
        raise DimensionError(f"conv2d: input {x.shape[2:]} smaller than kernel {(kf, kt)}")
    f_out = (f_in + 2 * pf - kf) // sf + 1
    t_out = (t_in + 2 * pt - kt) // st + 1
    xp = np.pad(x.data, ((0, 0), (0, 0), (pf, pf), (pt, pt)))
    dtype = np.result_type(x.data, w.data)

    def window(i, j):
        return (slice(None), slice(None),
                slice(i, i + sf * (f_out - 1) + 1, sf), slice(j, j + st * (t_out - 1) + 1, st))

    out = np.zeros((n, c_out, f_out * t_out), dtype=dtype)
    for i in range(kf):
        for j in range(kt):
            xs = xp[window(i, j)].reshape(n, c_in, -1)
            out += np.matmul(w.data[:, :, i, j], xs)
    out = out.reshape(n, c_out, f_out, t_out)
    parents = [x, w]
    if b is not None:
        b = _as_tensor(b)
        out += b.data[None, :, None, None]
        parents.append(b)

    def backward(g):
        g2 = g.reshape(n, c_out, -1)
        gxp = np.zeros_like(xp, dtype=dtype)
        gw = np.zeros_like(w.data, dtype=dtype)
        for i in range(kf):
            for j in range(kt):
                xs = xp[window(i, j)].reshape(n, c_in, -1)
                gw[:, :, i, j] = np.tensordot(g2, xs, axes=([0, 2], [0, 2]))
                gxp[window(i, j)] += np.matmul(w.data[:, :, i, j].T, g2).reshape(
                    n, c_in, f_out, t_out)
        grads = [gxp[:, :, pf:pf + f_in, pt:pt + t_in].astype(x.dtype, copy=False),
                 gw.astype(w.dtype, copy=False)]
        if b is not None:
            grads.append(g.sum(axis=(0, 2, 3)).astype(b.dtype, copy=False))
        return grads

    result = Tensor.from_op(out, parents, backward, 'conv2d')
    return reshape(result, result.shape[1:]) if squeeze else result


def conv_transpose2d(x, w, b=None, stride=(1, 1), padding=(0, 0),
                     output_padding=(0, 0)) -> Tensor:
    """Transposed 2-D convolution: x [N, C_in, F, T], w [C_in, C_out, K_f, K_t]

    Output extent per axis: (n - 1) * stride - 2 * padding + kernel + output_padding.
    """
    x, w = _as_tensor(x), _as_tensor(w)
    x, squeeze = _batched(x, 4)
    (sf, st), (pf, pt), (of, ot) = _pair(stride), _pair(padding), _pair(output_padding)
    n, c_in, f_in, t_in = x.shape
    c_w, c_out, kf, kt = w.shape
    if c_w != c_in:
        raise DimensionError(f"conv_transpose2d: input has {c_in} channels, weight expects {c_w}")
    f_out = (f_in - 1) * sf - 2 * pf + kf + of
    t_out = (t_in - 1) * st - 2 * pt + kt + ot
    if f_out < 1 or t_out < 1:
        raise DimensionError(f"conv_transpose2d: output extent ({f_out}, {t_out}) < 1")
    f_full = max((f_in - 1) * sf + kf, pf + f_out)
    t_full = max((t_in - 1) * st + kt, pt + t_out)
    dtype = np.result_type(x.data, w.data)
    x2 = x.data.reshape(n, c_in, -1)

    def window(i, j):
        return (slice(None), slice(None),
                slice(i, i + sf * (f_in - 1) + 1, sf), slice(j, j + st * (t_in - 1) + 1, st))

    full = np.zeros((n, c_out, f_full, t_full), dtype=dtype)
    for i in range(kf):
        for j in range(kt):
            full[window(i, j)] += np.matmul(w.data[:, :, i, j].T, x2).reshape(
                n, c_out, f_in, t_in)
    crop = (slice(None), slice(None), slice(pf, pf + f_out), slice(pt, pt + t_out))
    out = full[crop].copy()
    parents = [x, w]
    if b is not None:
        b = _as_tensor(b)
        out += b.data[None, :, None, None]
        parents.append(b)

    def backward(g):
        g_full = np.zeros((n, c_out, f_full, t_full), dtype=dtype)
        g_full[crop] = g
        gx = np.zeros((n, c_in, f_in * t_in), dtype=dtype)
        gw = np.zeros_like(w.data, dtype=dtype)
        for i in range(kf):
            for j in range(kt):
                gs = g_full[window(i, j)].reshape(n, c_out, -1)
                gx += np.matmul(w.data[:, :, i, j], gs)
                gw[:, :, i, j] = np.tensordot(x2, gs, axes=([0, 2], [0, 2]))
        grads = [gx.reshape(x.shape).astype(x.dtype, copy=False), gw.astype(w.dtype, copy=False)]
        if b is not None:
            grads.append(g.sum(axis=(0, 2, 3)).astype(b.dtype, copy=False))
        return grads

    result = Tensor.from_op(out, parents, backward, 'conv_transpose2d')
    return reshape(result, result.shape[1:]) if squeeze else result


def lstm(x, w_ih, w_hh, b) -> Tensor:
    """Single-layer unidirectional LSTM from a zero state

    x [N, T, D] (or [T, D]); w_ih [4H, D]; w_hh [4H, H]; b [4H].
    Gate order along the 4H axis is (input, forget, cell, output).
    Returns the hidden sequence [N, T, H].
    """
    x, w_ih, w_hh, b = (_as_tensor(v) for v in (x, w_ih, w_hh, b))
    x, squeeze = _batched(x, 3)
    n, steps, d = x.shape
    if steps == 0:
        raise InputError("lstm: empty sequence")
    hidden = w_hh.shape[1]
    if w_ih.shape != (4 * hidden, d) or w_hh.shape != (4 * hidden, hidden) or b.shape != (4 * hidden,):
        raise DimensionError(
            f"lstm: weights {w_ih.shape}, {w_hh.shape}, {b.shape} do not fit input dim {d}")
    dtype = np.result_type(x.data, w_ih.data)
    h_seq = np.zeros((n, steps + 1, hidden), dtype=dtype)
    c_seq = np.zeros((n, steps + 1, hidden), dtype=dtype)
    gates = np.zeros((n, steps, 4 * hidden), dtype=dtype)
    tanh_c = np.zeros((n, steps, hidden), dtype=dtype)
    x_proj = np.matmul(x.data, w_ih.data.T) + b.data
    H = hidden
    for t in range(steps):
        z = x_proj[:, t] + np.matmul(h_seq[:, t], w_hh.data.T)
        i_g = expit(z[:, :H])
        f_g = expit(z[:, H:2 * H])
        c_g = np.tanh(z[:, 2 * H:3 * H])
        o_g = expit(z[:, 3 * H:])
        c_seq[:, t + 1] = f_g * c_seq[:, t] + i_g * c_g
        tanh_c[:, t] = np.tanh(c_seq[:, t + 1])
        h_seq[:, t + 1] = o_g * tanh_c[:, t]
        gates[:, t] = np.concatenate([i_g, f_g, c_g, o_g], axis=1)

    def backward(g):
        dz_seq = np.zeros((n, steps, 4 * H), dtype=dtype)
        dh_next = np.zeros((n, H), dtype=dtype)
        dc_next = np.zeros((n, H), dtype=dtype)
        for t in reversed(range(steps)):
            i_g, f_g, c_g, o_g = np.split(gates[:, t], 4, axis=1)
            dh = g[:, t] + dh_next
            tc = tanh_c[:, t]
            dc = dc_next + dh * o_g * (1 - tc * tc)
            dz_seq[:, t] = np.concatenate([
                dc * c_g * i_g * (1 - i_g),
                dc * c_seq[:, t] * f_g * (1 - f_g),
                dc * i_g * (1 - c_g * c_g),
                dh * tc * o_g * (1 - o_g),
            ], axis=1)
            dc_next = dc * f_g
            dh_next = np.matmul(dz_seq[:, t], w_hh.data)
        gx = np.matmul(dz_seq, w_ih.data)
        gw_ih = np.tensordot(dz_seq, x.data, axes=([0, 1], [0, 1]))
        gw_hh = np.tensordot(dz_seq, h_seq[:, :-1], axes=([0, 1], [0, 1]))
        gb = dz_seq.sum(axis=(0, 1))
        return (gx.astype(x.dtype, copy=False), gw_ih.astype(w_ih.dtype, copy=False),
                gw_hh.astype(w_hh.dtype, copy=False), gb.astype(b.dtype, copy=False))

    result = Tensor.from_op(h_seq[:, 1:].copy(), (x, w_ih, w_hh, b), backward, 'lstm')
    return reshape(result, result.shape[1:]) if squeeze else result


# --------------------------------------------------------------- complex

class ComplexTensor:
    """Pair of real tensors holding the real and imaginary parts"""

    def __init__(self, real: Tensor, imag: Tensor):
        real, imag = _as_tensor(real), _as_tensor(imag)
        if real.shape != imag.shape:
            raise DimensionError(f"real {real.shape} and imag {imag.shape} parts differ in shape")
        self.real = real
        self.imag = imag

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.real.shape

    def __add__(self, other: 'ComplexTensor') -> 'ComplexTensor':
        return ComplexTensor(self.real + other.real, self.imag + other.imag)

    def __sub__(self, other: 'ComplexTensor') -> 'ComplexTensor':
        return ComplexTensor(self.real - other.real, self.imag - other.imag)

    def __mul__(self, other) -> 'ComplexTensor':
        if isinstance(other, ComplexTensor):
            return ComplexTensor(self.real * other.real - self.imag * other.imag,
                                 self.real * other.imag + self.imag * other.real)
        return ComplexTensor(self.real * other, self.imag * other)

    def times_i(self) -> 'ComplexTensor':
        return ComplexTensor(neg(self.imag), self.real)

    def magnitude(self, eps: float = 1e-12) -> Tensor:
        return sqrt(square(self.real) + square(self.imag) + eps)

    def reshape(self, shape) -> 'ComplexTensor':
        return ComplexTensor(reshape(self.real, shape), reshape(self.imag, shape))

    def transpose(self, axes) -> 'ComplexTensor':
        return ComplexTensor(transpose(self.real, axes), transpose(self.imag, axes))

    def slice(self, axis: int, start: int, stop: int) -> 'ComplexTensor':
        return ComplexTensor(slice_(self.real, axis, start, stop), slice_(self.imag, axis, start, stop))

    def pad(self, widths) -> 'ComplexTensor':
        return ComplexTensor(pad(self.real, widths), pad(self.imag, widths))

    def numpy(self) -> np.ndarray:
        return self.real.data + 1j * self.imag.data

    @staticmethod
    def concat(items: Sequence['ComplexTensor'], axis: int) -> 'ComplexTensor':
        return ComplexTensor(concat([c.real for c in items], axis),
                             concat([c.imag for c in items], axis))


# ----------------------------------------------------------------- modules

class Module:
    """Container that registers parameters, buffers and child modules by attribute name"""

    def __init__(self):
        object.__setattr__(self, '_params', {})
        object.__setattr__(self, '_buffers', {})
        object.__setattr__(self, '_modules', {})
        object.__setattr__(self, 'training', True)

    def __setattr__(self, name, value):
        if isinstance(value, Parameter):
            self._params[name] = value
        elif isinstance(value, Module):
            self._modules[name] = value
        object.__setattr__(self, name, value)

    def register_buffer(self, name: str, array: np.ndarray):
        array = np.asarray(array, dtype=get_default_dtype())
        self._buffers[name] = array
        object.__setattr__(self, name, array)

    def named_parameters(self, prefix: str = '') -> Iterator[Tuple[str, Parameter]]:
        for name, p in self._params.items():
            yield prefix + name, p
        for name, child in self._modules.items():
            yield from child.named_parameters(f"{prefix}{name}.")

    def parameters(self) -> List[Parameter]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = '') -> Iterator[Tuple[str, np.ndarray]]:
        for name, buf in self._buffers.items():
            yield prefix + name, buf
        for name, child in self._modules.items():
            yield from child.named_buffers(f"{prefix}{name}.")

    def state_dict(self) -> Dict[str, np.ndarray]:
        state = {name: p.data for name, p in self.named_parameters()}
        state.update(self.named_buffers())
        return state

    def load_state_dict(self, state: Dict[str, np.ndarray]):
        own = self.state_dict()
        missing = sorted(set(own) - set(state))
        unexpected = sorted(set(state) - set(own))
        if missing or unexpected:
            raise ContractError(f"state mismatch; missing {missing[:5]}, unexpected {unexpected[:5]}")
        for name, target in own.items():
            value = np.asarray(state[name])
            if value.shape != target.shape:
                raise ContractError(f"{name}: expected shape {target.shape}, got {value.shape}")
            target[...] = value

    def train(self, mode: bool = True) -> 'Module':
        object.__setattr__(self, 'training', mode)
        for child in self._modules.values():
            child.train(mode)
        return self

    def eval(self) -> 'Module':
        return self.train(False)

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def parameter_count(self) -> int:
        return sum(p.size for p in self.parameters())


class ModuleList(Module):
    def __init__(self, modules: Sequence[Module] = ()):
        super().__init__()
        for m in modules:
            self.append(m)

    def append(self, module: Module):
        setattr(self, str(len(self._modules)), module)

    def __iter__(self):
        return iter(self._modules.values())

    def __len__(self):
        return len(self._modules)

    def __getitem__(self, idx: int) -> Module:
        return list(self._modules.values())[idx]


def uniform_init(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    """Uniform in +-sqrt(1 / fan_in)"""
    bound = math.sqrt(1.0 / max(1, fan_in))
    return rng.uniform(-bound, bound, size=shape)


# --------------------------------------------------------------- optimizer

@dataclass
class AdamState:
    step: int = 0
    m: List[np.ndarray] = field(default_factory=list)
    v: List[np.ndarray] = field(default_factory=list)


def adam_step(params: List[np.ndarray], grads: List[np.ndarray], state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """Bias-corrected Adam update, applied to `params` in place"""
    if len(params) != len(grads):
        raise ContractError(f"{len(params)} parameters but {len(grads)} gradients")
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    if len(state.m) != len(params):
        raise ContractError("optimizer state does not match the parameter list")
    state.step += 1
    c1 = 1.0 - beta1 ** state.step
    c2 = 1.0 - beta2 ** state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g.shape != p.shape or m.shape != p.shape:
            raise ContractError(f"shape mismatch: param {p.shape}, grad {g.shape}, moment {m.shape}")
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p -= (lr / c1) * m / (np.sqrt(v / c2) + eps)


class Adam:
    """Adam over a module's named parameters"""

    def __init__(self, named_params: Sequence[Tuple[str, Parameter]], lr: float = 0.001,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.names = [name for name, _ in named_params]
        self.params = [p for _, p in named_params]
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.state = AdamState()

    def step(self):
        grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in self.params]
        adam_step([p.data for p in self.params], grads, self.state, self.lr,
                  self.beta1, self.beta2, self.eps)

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def state_dict(self) -> Dict[str, np.ndarray]:
        state = {'step': np.array(self.state.step, dtype=np.float32)}
        for name, m, v in zip(self.names, self.state.m, self.state.v):
            state[f"m/{name}"] = m
            state[f"v/{name}"] = v
        return state

    def load_state_dict(self, state: Dict[str, np.ndarray]):
        self.state.step = int(np.asarray(state['step']).reshape(()))
        if self.state.step == 0:
            self.state.m, self.state.v = [], []
            return
        try:
            self.state.m = [np.array(state[f"m/{name}"], dtype=p.dtype) for name, p in zip(self.names, self.params)]
            self.state.v = [np.array(state[f"v/{name}"], dtype=p.dtype) for name, p in zip(self.names, self.params)]
        except KeyError as e:
            raise ContractError(f"optimizer state lacks moment {e}") from None
