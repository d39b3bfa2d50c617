"""Minimal reverse-mode autodiff over dense 2-D matrices.

Every value is a DTensor wrapping a 2-D numpy array (scalars are 1x1).
Operations record a computation graph; calling ``backward()`` on a scalar
output accumulates gradients into every ``requires_grad`` leaf in a fixed
topological order, so repeated runs are bit-identical.

Broadcasting is limited to row-vector-against-matrix: ``add``/``sub``/``mul``
accept shapes (n, d) op (n, d) or (n, d) op (1, d).
"""

import numpy as np
from scipy import sparse


class DTensor:
    """A 2-D matrix node in the computation graph."""

    __slots__ = ("values", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, values, requires_grad=False):
        arr = np.asarray(values, dtype=np.float64 if not isinstance(values, np.ndarray) else values.dtype)
        if arr.ndim == 1:
            arr = arr.reshape(1, -1)
        if arr.ndim != 2:
            raise ValueError(f"DTensor must be 2-D, got shape {arr.shape}")
        self.values = arr
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.values.shape

    def _accumulate(self, g, owned=False):
        # owned marks a freshly allocated array the caller hands over; an
        # unowned g may alias another tensor's grad and must be copied.
        if self.grad is None:
            self.grad = g if owned else g.copy()
        else:
            self.grad += g

    def detach(self):
        """Constant copy sharing no history (gradients stop here)."""
        return DTensor(self.values.copy())

    def item(self):
        if self.values.size != 1:
            raise ValueError(f"item() on shape {self.shape}")
        return float(self.values[0, 0])

    def backward(self):
        """Backpropagate from a 1x1 scalar output."""
        if self.values.shape != (1, 1):
            raise ValueError(f"backward() requires a scalar output, got {self.shape}")
        order = _toposort(self)
        self.grad = np.ones_like(self.values)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return f"DTensor(shape={self.shape}, requires_grad={self.requires_grad})"


def _toposort(root):
    # Iterative DFS; parent order is the recording order, so the resulting
    # accumulation order is deterministic.
    order = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in reversed(node._parents):
            if id(p) not in visited:
                stack.append((p, False))
    return order


def tensor(values):
    """Constant (non-trainable) tensor."""
    return DTensor(values, requires_grad=False)


def parameter(values):
    """Trainable leaf tensor."""
    return DTensor(values, requires_grad=True)


def zero_grads(params):
    for p in params:
        p.grad = None


def _make(values, parents, backward_fn):
    out = DTensor(values)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _check_broadcast(a, b):
    if a.shape == b.shape:
        return
    if a.shape[1] == b.shape[1] and (a.shape[0] == 1 or b.shape[0] == 1):
        return
    raise ValueError(f"incompatible shapes {a.shape} and {b.shape}")


def _reduce_to(g, shape):
    if g.shape == shape:
        return g
    return g.sum(axis=0, keepdims=True)


def add(a, b):
    _check_broadcast(a, b)

    def backward(g):
        if a.requires_grad:
            ga = _reduce_to(g, a.shape)
            a._accumulate(ga, owned=ga is not g)
        if b.requires_grad:
            gb = _reduce_to(g, b.shape)
            b._accumulate(gb, owned=gb is not g)

    return _make(a.values + b.values, (a, b), backward)


def sub(a, b):
    _check_broadcast(a, b)

    def backward(g):
        if a.requires_grad:
            ga = _reduce_to(g, a.shape)
            a._accumulate(ga, owned=ga is not g)
        if b.requires_grad:
            b._accumulate(_reduce_to(-g, b.shape), owned=True)

    return _make(a.values - b.values, (a, b), backward)


def mul(a, b):
    """Elementwise product (row-vector broadcast allowed)."""
    _check_broadcast(a, b)

    def backward(g):
        if a.requires_grad:
            a._accumulate(_reduce_to(g * b.values, a.shape), owned=True)
        if b.requires_grad:
            b._accumulate(_reduce_to(g * a.values, b.shape), owned=True)

    return _make(a.values * b.values, (a, b), backward)


def matmul(a, b):
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")

    def backward(g):
        if a.requires_grad:
            a._accumulate(g @ b.values.T, owned=True)
        if b.requires_grad:
            b._accumulate(a.values.T @ g, owned=True)

    return _make(a.values @ b.values, (a, b), backward)


def scale_rows(x, s):
    """Multiply row k of x by the scalar s[k, 0]."""
    if s.shape != (x.shape[0], 1):
        raise ValueError(f"scale_rows needs ({x.shape[0]}, 1) scales, got {s.shape}")

    def backward(g):
        if x.requires_grad:
            x._accumulate(g * s.values, owned=True)
        if s.requires_grad:
            s._accumulate((g * x.values).sum(axis=1, keepdims=True), owned=True)

    return _make(x.values * s.values, (x, s), backward)


def concat_cols(parts):
    """Concatenate tensors with equal row counts along columns."""
    rows = parts[0].shape[0]
    if any(p.shape[0] != rows for p in parts):
        raise ValueError("concat_cols: row counts differ")
    widths = [p.shape[1] for p in parts]
    offsets = np.cumsum([0] + widths)

    def backward(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            if p.requires_grad:
                p._accumulate(g[:, lo:hi])

    return _make(np.concatenate([p.values for p in parts], axis=1), tuple(parts), backward)


def slice_cols(x, start, stop):
    def backward(g):
        if x.requires_grad:
            full = np.zeros_like(x.values)
            full[:, start:stop] = g
            x._accumulate(full, owned=True)

    return _make(x.values[:, start:stop].copy(), (x,), backward)


class ScatterPlan:
    """Precomputed reduction plan for repeated scatter-adds over one fixed
    index vector, realized as a sparse 0/1 selection matrix."""

    def __init__(self, index, out_rows):
        index = np.asarray(index, dtype=np.int64)
        if index.size and (index.min() < 0 or index.max() >= out_rows):
            raise ValueError("scatter index out of range")
        self.index = index
        self.out_rows = out_rows
        self.matrix = sparse.csr_matrix(
            (np.ones(index.size), (index, np.arange(index.size))),
            shape=(out_rows, index.size))

    def scatter(self, values):
        if self.index.size == 0:
            return np.zeros((self.out_rows, values.shape[1]), dtype=values.dtype)
        return (self.matrix @ values).astype(values.dtype, copy=False)


def gather_rows(x, index, plan=None):
    """out[k] = x[index[k]]. Backward scatter-adds into x; pass a ScatterPlan
    when the same index is reused across many calls."""
    index = np.asarray(index, dtype=np.int64)
    if index.size and (index.min() < 0 or index.max() >= x.shape[0]):
        raise ValueError("gather_rows: index out of range")

    def backward(g):
        if x.requires_grad:
            if plan is not None:
                x._accumulate(plan.scatter(g), owned=True)
            else:
                acc = np.zeros_like(x.values)
                np.add.at(acc, index, g)
                x._accumulate(acc, owned=True)

    return _make(x.values[index], (x,), backward)


def scatter_add_rows(src, index, out_rows, plan=None):
    """out[index[k]] += src[k]. Backward gathers."""
    index = np.asarray(index, dtype=np.int64)
    if index.shape != (src.shape[0],):
        raise ValueError("scatter_add_rows: index length must match src rows")
    if plan is None:
        plan = ScatterPlan(index, out_rows)
    values = plan.scatter(src.values)

    def backward(g):
        if src.requires_grad:
            src._accumulate(g[index], owned=True)

    return _make(values, (src,), backward)


def slice_rows(x, start, stop):
    def backward(g):
        if x.requires_grad:
            full = np.zeros_like(x.values)
            full[start:stop] = g
            x._accumulate(full, owned=True)

    return _make(x.values[start:stop].copy(), (x,), backward)


def tile_rows(row, n):
    """Repeat a 1xd row n times."""
    if row.shape[0] != 1:
        raise ValueError(f"tile_rows expects a single row, got {row.shape}")
    return gather_rows(row, np.zeros(n, dtype=np.int64))


def reshape(x, rows, cols):
    if rows * cols != x.values.size:
        raise ValueError(f"cannot reshape {x.shape} to ({rows}, {cols})")
    orig = x.shape

    def backward(g):
        if x.requires_grad:
            x._accumulate(g.reshape(orig))

    return _make(x.values.reshape(rows, cols).copy(), (x,), backward)


def leaky_relu(x, slope=0.2):
    """Elementwise max(x, slope*x); derivative at 0 is the slope."""
    pos = x.values > 0
    local = np.where(pos, 1.0, slope)

    def backward(g):
        if x.requires_grad:
            x._accumulate(g * local, owned=True)

    return _make(np.where(pos, x.values, slope * x.values), (x,), backward)


def tanh(x):
    out_vals = np.tanh(x.values)

    def backward(g):
        if x.requires_grad:
            x._accumulate(g * (1.0 - out_vals * out_vals), owned=True)

    return _make(out_vals, (x,), backward)


def sigmoid(x):
    # Stable piecewise form keeps exp arguments nonpositive.
    v = x.values
    out_vals = np.where(v >= 0, 1.0 / (1.0 + np.exp(-np.clip(v, 0, None))),
                        np.exp(np.clip(v, None, 0)) / (1.0 + np.exp(np.clip(v, None, 0))))

    def backward(g):
        if x.requires_grad:
            x._accumulate(g * out_vals * (1.0 - out_vals), owned=True)

    return _make(out_vals, (x,), backward)


def log(x):
    def backward(g):
        if x.requires_grad:
            x._accumulate(g / x.values, owned=True)

    return _make(np.log(x.values), (x,), backward)


def clip(x, lo, hi):
    """Clamp values to [lo, hi]; gradient passes only where unclipped."""
    inside = (x.values >= lo) & (x.values <= hi)

    def backward(g):
        if x.requires_grad:
            x._accumulate(g * inside, owned=True)

    return _make(np.clip(x.values, lo, hi), (x,), backward)


def row_softmax(x):
    """Softmax within each row, stabilized by per-row max subtraction."""
    shifted = x.values - x.values.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    out_vals = e / e.sum(axis=1, keepdims=True)

    def backward(g):
        if x.requires_grad:
            dot = (g * out_vals).sum(axis=1, keepdims=True)
            x._accumulate(out_vals * (g - dot), owned=True)

    return _make(out_vals, (x,), backward)


def segment_softmax(scores, segment_ids, num_segments=None):
    """Softmax of an (n, 1) score column within each segment.

    Segments are given by integer ids; each segment's entries sum to 1.
    Stabilized by per-segment max subtraction.
    """
    if scores.shape[1] != 1:
        raise ValueError(f"segment_softmax expects an (n, 1) column, got {scores.shape}")
    segment_ids = np.asarray(segment_ids, dtype=np.int64)
    if segment_ids.shape != (scores.shape[0],):
        raise ValueError("segment_softmax: segment_ids length must match scores")
    if num_segments is None:
        num_segments = int(segment_ids.max()) + 1 if segment_ids.size else 0

    col = scores.values[:, 0]
    seg_max = np.full(num_segments, -np.inf, dtype=col.dtype)
    np.maximum.at(seg_max, segment_ids, col)
    e = np.exp(col - seg_max[segment_ids])
    seg_sum = np.zeros(num_segments, dtype=col.dtype)
    np.add.at(seg_sum, segment_ids, e)
    out_vals = (e / seg_sum[segment_ids]).reshape(-1, 1)

    def backward(g):
        if scores.requires_grad:
            gcol = g[:, 0]
            seg_dot = np.zeros(num_segments, dtype=col.dtype)
            np.add.at(seg_dot, segment_ids, gcol * out_vals[:, 0])
            dx = out_vals[:, 0] * (gcol - seg_dot[segment_ids])
            scores._accumulate(dx.reshape(-1, 1), owned=True)

    return _make(out_vals, (scores,), backward)


def sum_all(x):
    """Sum of all entries, as a 1x1 scalar."""

    def backward(g):
        if x.requires_grad:
            x._accumulate(np.full_like(x.values, g[0, 0]), owned=True)

    return _make(np.array([[x.values.sum()]], dtype=x.values.dtype), (x,), backward)


def mean_all(x):
    n = x.values.size

    def backward(g):
        if x.requires_grad:
            x._accumulate(np.full_like(x.values, g[0, 0] / n), owned=True)

    return _make(np.array([[x.values.mean()]], dtype=x.values.dtype), (x,), backward)


def mean_rows(x):
    """Column means: (n, d) -> (1, d)."""
    n = x.shape[0]
    if n == 0:
        raise ValueError("mean_rows of an empty matrix")

    def backward(g):
        if x.requires_grad:
            x._accumulate(np.repeat(g / n, n, axis=0), owned=True)

    return _make(x.values.mean(axis=0, keepdims=True), (x,), backward)


def squared_norm(x):
    """Sum of squared entries, as a 1x1 scalar."""
    return sum_all(mul(x, x))
