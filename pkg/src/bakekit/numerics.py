"""Dense float64 tensors, reverse-mode autodiff, and a pivoted linear solver.

Every tensor op records a vector-Jacobian closure on the node it produces;
``backward`` replays the graph in reverse topological order. Ops are pure:
they never mutate their inputs. The solver is deliberately outside the
autodiff graph (its only consumer is detached target construction).
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeMismatchError, SingularMatrixError

PIVOT_TOL = 1e-12


class Tensor:
    """A dense array node in the computation graph.

    Leaves are created directly; interior nodes carry a vjp closure and
    references to their parents. ``grad`` is populated by ``backward``.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._vjp = None

    @classmethod
    def _op(cls, data, parents, vjp):
        out = cls(data)
        if any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._vjp = vjp
        return out

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        if self.data.size != 1:
            raise ShapeMismatchError(f"item() on tensor of shape {self.data.shape}")
        return float(self.data)

    def detach(self):
        """A gradient-free leaf copy; contributes no tape edges."""
        return Tensor(self.data.copy())

    def backward(self):
        """Accumulate gradients of this scalar into all requires_grad leaves."""
        if self.data.ndim != 0:
            raise ShapeMismatchError(
                f"backward requires a scalar loss, got shape {self.data.shape}"
            )
        order = _toposort(self)
        for node in order:
            node.grad = np.zeros_like(node.data)
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._vjp is not None:
                node._vjp(node.grad)

    # -- operator sugar --------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, mul(other, -1.0) if isinstance(other, Tensor) else -np.asarray(other, dtype=np.float64))

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("tensor/tensor division is not a supported primitive")
        return mul(self, 1.0 / float(other))

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self):
        return tsum(self)

    def mean(self):
        return tmean(self)

    def reshape(self, *shape):
        return reshape(self, *shape)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def _toposort(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            stack.append((p, False))
    return order


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


def _const(x):
    return np.asarray(x, dtype=np.float64)


# -- elementwise / structural primitives ---------------------------------


def add(a, b):
    if not isinstance(a, Tensor):
        a, b = b, a
    if isinstance(b, Tensor):
        out_data = a.data + b.data

        def vjp(g, a=a, b=b):
            if a.requires_grad:
                a.grad += _unbroadcast(g, a.data.shape)
            if b.requires_grad:
                b.grad += _unbroadcast(g, b.data.shape)

        return Tensor._op(out_data, (a, b), vjp)
    c = _const(b)

    def vjp(g, a=a):
        if a.requires_grad:
            a.grad += _unbroadcast(g, a.data.shape)

    return Tensor._op(a.data + c, (a,), vjp)


def mul(a, b):
    if not isinstance(a, Tensor):
        a, b = b, a
    if isinstance(b, Tensor):
        out_data = a.data * b.data

        def vjp(g, a=a, b=b):
            if a.requires_grad:
                a.grad += _unbroadcast(g * b.data, a.data.shape)
            if b.requires_grad:
                b.grad += _unbroadcast(g * a.data, b.data.shape)

        return Tensor._op(out_data, (a, b), vjp)
    c = _const(b)

    def vjp(g, a=a):
        if a.requires_grad:
            a.grad += _unbroadcast(g * c, a.data.shape)

    return Tensor._op(a.data * c, (a,), vjp)


def relu(x):
    keep = x.data > 0

    def vjp(g, x=x):
        if x.requires_grad:
            x.grad += g * keep

    return Tensor._op(np.where(keep, x.data, 0.0), (x,), vjp)


def log(x):
    def vjp(g, x=x):
        if x.requires_grad:
            x.grad += g / x.data

    return Tensor._op(np.log(x.data), (x,), vjp)


def tsum(x):
    def vjp(g, x=x):
        if x.requires_grad:
            x.grad += np.broadcast_to(g, x.data.shape)

    return Tensor._op(x.data.sum(), (x,), vjp)


def tmean(x):
    n = x.data.size

    def vjp(g, x=x):
        if x.requires_grad:
            x.grad += np.broadcast_to(g / n, x.data.shape)

    return Tensor._op(x.data.mean(), (x,), vjp)


def reshape(x, *shape):
    old = x.data.shape

    def vjp(g, x=x):
        if x.requires_grad:
            x.grad += g.reshape(old)

    return Tensor._op(x.data.reshape(*shape), (x,), vjp)


def pick(x, cols):
    """Select x[i, cols[i]] per row; used by cross-entropy."""
    cols = np.asarray(cols)
    rows = np.arange(x.data.shape[0])

    def vjp(g, x=x):
        if x.requires_grad:
            scatter = np.zeros_like(x.data)
            np.add.at(scatter, (rows, cols), g)
            x.grad += scatter

    return Tensor._op(x.data[rows, cols], (x,), vjp)


# -- linear algebra ------------------------------------------------------


def matmul(a, b):
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeMismatchError(
            f"matmul: incompatible shapes {a.data.shape} and {b.data.shape}"
        )

    def vjp(g, a=a, b=b):
        if a.requires_grad:
            a.grad += g @ b.data.T
        if b.requires_grad:
            b.grad += a.data.T @ g

    return Tensor._op(a.data @ b.data, (a, b), vjp)


def row_l2_normalize(f):
    """Scale each row to unit Euclidean norm. Zero rows are an error."""
    norms = np.sqrt((f.data * f.data).sum(axis=1))
    zero = np.flatnonzero(norms == 0.0)
    if zero.size:
        raise ShapeMismatchError(f"row_l2_normalize: zero feature row at index {zero[0]}")
    inv = 1.0 / norms
    out_data = f.data * inv[:, None]

    def vjp(g, f=f):
        if f.requires_grad:
            dots = (g * f.data).sum(axis=1)
            f.grad += g * inv[:, None] - f.data * (dots * inv**3)[:, None]

    return Tensor._op(out_data, (f,), vjp)


def _mask_array(mask, shape):
    """Normalize a mask spec (set of (row, col) or bool array) to a bool array."""
    if mask is None:
        return None
    out = np.zeros(shape, dtype=bool)
    if isinstance(out, np.ndarray) and isinstance(mask, np.ndarray):
        if mask.shape != shape:
            raise ShapeMismatchError(f"mask shape {mask.shape} != data shape {shape}")
        return mask.astype(bool)
    for r, c in mask:
        out[r, c] = True
    return out


def masked_softmax_data(x, masked=None):
    """Row softmax of a plain array with positions in ``masked`` excluded exactly.

    Shared by the autodiff op and detached target construction so both
    produce bit-identical probabilities.
    """
    x = np.asarray(x, dtype=np.float64)
    keep = np.ones(x.shape, dtype=bool) if masked is None else ~masked
    counts = keep.sum(axis=1)
    if np.any(counts == 0):
        row = int(np.flatnonzero(counts == 0)[0])
        raise ShapeMismatchError(f"softmax_rows: row {row} is fully masked")
    shifted = x - np.max(np.where(keep, x, -np.inf), axis=1, keepdims=True)
    e = np.where(keep, np.exp(shifted), 0.0)
    return e / e.sum(axis=1, keepdims=True)


def softmax_rows(x, mask=None):
    """Row-wise softmax; masked positions are excluded from the denominator."""
    masked = _mask_array(mask, x.data.shape)
    p = masked_softmax_data(x.data, masked)

    def vjp(g, x=x):
        if x.requires_grad:
            x.grad += p * (g - (g * p).sum(axis=1, keepdims=True))

    return Tensor._op(p, (x,), vjp)


def log_softmax_rows(x):
    """Numerically stable row-wise log-softmax (no masking needed by callers)."""
    shifted = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    ls = shifted - np.log(e.sum(axis=1, keepdims=True))
    p = e / e.sum(axis=1, keepdims=True)

    def vjp(g, x=x):
        if x.requires_grad:
            x.grad += g - p * g.sum(axis=1, keepdims=True)

    return Tensor._op(ls, (x,), vjp)


# -- convolution stem support --------------------------------------------


def conv2d(x, w, b, stride=1):
    """Valid 3x3 convolution over NCHW input, via im2col. Differentiable."""
    xd = x.data
    n, c, h, wdt = xd.shape
    o, ci, kh, kw = w.data.shape
    if ci != c:
        raise ShapeMismatchError(f"conv2d: input channels {c} != kernel channels {ci}")
    windows = np.lib.stride_tricks.sliding_window_view(xd, (kh, kw), axis=(2, 3))
    windows = windows[:, :, ::stride, ::stride]
    ho, wo = windows.shape[2], windows.shape[3]
    cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(n, ho * wo, c * kh * kw)
    wmat = w.data.reshape(o, c * kh * kw)
    out = cols @ wmat.T + b.data
    out_data = out.transpose(0, 2, 1).reshape(n, o, ho, wo)

    def vjp(g, x=x, w=w, b=b):
        gout = g.reshape(n, o, ho * wo).transpose(0, 2, 1)  # N x P x O
        if b.requires_grad:
            b.grad += gout.sum(axis=(0, 1))
        if w.requires_grad:
            gw = np.einsum("npo,npk->ok", gout, cols)
            w.grad += gw.reshape(o, c, kh, kw)
        if x.requires_grad:
            gcols = gout @ wmat  # N x P x (C*kh*kw)
            gx = np.zeros((n, c * h * wdt))
            flat = _im2col_indices(c, h, wdt, kh, kw, stride)
            np.add.at(gx, (np.arange(n)[:, None, None], flat[None]), gcols)
            x.grad += gx.reshape(n, c, h, wdt)

    return Tensor._op(out_data, (x, w, b), vjp)


def _im2col_indices(c, h, w, kh, kw, stride):
    """Flat input indices for each (patch, patch-element) pair."""
    ho = (h - kh) // stride + 1
    wo = (w - kw) // stride + 1
    ci, ki, kj = np.meshgrid(np.arange(c), np.arange(kh), np.arange(kw), indexing="ij")
    elem = (ci * h * w + ki * w + kj).ravel()  # C*kh*kw
    pi, pj = np.meshgrid(np.arange(ho) * stride, np.arange(wo) * stride, indexing="ij")
    patch = (pi * w + pj).ravel()  # P
    return patch[:, None] + elem[None, :]


def avg_pool2d(x, k=2):
    """Non-overlapping k x k mean pooling; trailing rows/cols are trimmed."""
    n, c, h, w = x.data.shape
    ho, wo = h // k, w // k
    trimmed = x.data[:, :, : ho * k, : wo * k]
    out_data = trimmed.reshape(n, c, ho, k, wo, k).mean(axis=(3, 5))

    def vjp(g, x=x):
        if x.requires_grad:
            gx = np.zeros_like(x.data)
            gx[:, :, : ho * k, : wo * k] = np.repeat(
                np.repeat(g, k, axis=2), k, axis=3
            ) / (k * k)
            x.grad += gx

    return Tensor._op(out_data, (x,), vjp)


# -- direct solver (outside the autodiff graph) --------------------------


def linear_solve(a, b):
    """Solve a X = b by Gaussian elimination with partial pivoting.

    Accepts tensors or arrays; always returns a detached Tensor. Raises
    SingularMatrixError when a pivot magnitude drops below PIVOT_TOL.
    """
    A = np.array(getattr(a, "data", a), dtype=np.float64, copy=True)
    B = np.array(getattr(b, "data", b), dtype=np.float64, copy=True)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ShapeMismatchError(f"linear_solve: matrix must be square, got {A.shape}")
    squeeze = B.ndim == 1
    if squeeze:
        B = B[:, None]
    if B.shape[0] != A.shape[0]:
        raise ShapeMismatchError(
            f"linear_solve: rhs rows {B.shape[0]} != matrix size {A.shape[0]}"
        )
    n = A.shape[0]
    for k in range(n):
        piv = k + int(np.argmax(np.abs(A[k:, k])))
        if abs(A[piv, k]) < PIVOT_TOL:
            raise SingularMatrixError(f"pivot {A[piv, k]:.3e} below {PIVOT_TOL} at column {k}")
        if piv != k:
            A[[k, piv]] = A[[piv, k]]
            B[[k, piv]] = B[[piv, k]]
        factors = A[k + 1 :, k] / A[k, k]
        A[k + 1 :, k:] -= factors[:, None] * A[k, k:]
        B[k + 1 :] -= factors[:, None] * B[k]
    X = np.empty_like(B)
    for k in range(n - 1, -1, -1):
        X[k] = (B[k] - A[k, k + 1 :] @ X[k + 1 :]) / A[k, k]
    return Tensor(X[:, 0] if squeeze else X)
