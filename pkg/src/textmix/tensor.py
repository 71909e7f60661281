"""Dense float64 tensors with reverse-mode autodiff.

A fresh graph is taped on every forward pass: each op records its parents
and a closure that routes the upstream gradient. backward() topologically
walks the graph from a scalar loss. There is no broadcasting beyond what
the encoder needs (bias over the last axis, scalar scaling); anything
else is a shape error up front.

Heavy math is delegated to the active kernel backend (see
textmix.backend); everything in this file is orchestration.
"""

from typing import Iterable, Optional, Sequence

import numpy as np

from .backend import kernels as K


class Tensor:
    __slots__ = ("values", "grad", "requires_grad", "_parents", "_backward_fn", "_backward_done")

    def __init__(self, values, requires_grad: bool = False,
                 parents: tuple = (), backward_fn=None):
        self.values = np.ascontiguousarray(values, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)
        self._parents = parents
        self._backward_fn = backward_fn
        self._backward_done = False

    @property
    def shape(self):
        return self.values.shape

    @property
    def size(self) -> int:
        return self.values.size

    def item(self) -> float:
        if self.values.size != 1:
            raise ValueError(f"item() on tensor of shape {self.shape}")
        return float(self.values.reshape(()))

    def __repr__(self):
        flags = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={tuple(self.shape)}{flags})"

    def backward(self) -> None:
        """Populate .grad on every reachable tensor that requires it.

        Only valid on scalars; calling it twice on the same graph root
        without rebuilding the graph is a state error.
        """
        if self.values.size != 1:
            raise ValueError(f"backward() requires a scalar, got shape {tuple(self.shape)}")
        if self._backward_done:
            raise RuntimeError("backward() already ran on this graph; rebuild the graph first")
        self._backward_done = True

        order = _toposort(self)
        self.grad = np.ones_like(self.values)
        for node in order:
            if node._backward_fn is not None and node.grad is not None:
                node._backward_fn(node.grad)


def _toposort(root: Tensor) -> list:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
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
            if id(p) not in seen:
                stack.append((p, False))
    order.reverse()
    return order


def _accum(t: Tensor, g: np.ndarray) -> None:
    if not (t.requires_grad or t._parents):
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.values)
    t.grad += g


def _needs_grad(*ts: Tensor) -> bool:
    return any(t.requires_grad or t._parents for t in ts)


def _c(a: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(a)


# ---------------------------------------------------------------------------
# ops

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product on the last two axes; 2-d, or stacked 3-d with equal
    leading dimension."""
    av, bv = a.values, b.values
    if av.ndim == 2 and bv.ndim == 2:
        if av.shape[1] != bv.shape[0]:
            raise ValueError(f"matmul inner dimensions disagree: {av.shape} x {bv.shape}")
        out = Tensor(K.mm(av, bv))
        if _needs_grad(a, b):
            def bw(g):
                _accum(a, K.mm(_c(g), _c(bv.T)))
                _accum(b, K.mm(_c(av.T), _c(g)))
            out._parents, out._backward_fn = (a, b), bw
            out.requires_grad = True
        return out
    if av.ndim == 3 and bv.ndim == 3:
        if av.shape[0] != bv.shape[0] or av.shape[2] != bv.shape[1]:
            raise ValueError(f"matmul shapes disagree: {av.shape} x {bv.shape}")
        out = Tensor(K.bmm(av, bv))
        if _needs_grad(a, b):
            def bw(g):
                _accum(a, K.bmm(_c(g), _c(bv.transpose(0, 2, 1))))
                _accum(b, K.bmm(_c(av.transpose(0, 2, 1)), _c(g)))
            out._parents, out._backward_fn = (a, b), bw
            out.requires_grad = True
        return out
    raise ValueError(f"matmul supports 2-d or stacked 3-d operands, got {av.shape} x {bv.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; b may also be a 1-d bias broadcast over the last axis."""
    av, bv = a.values, b.values
    bias = bv.ndim == 1 and av.ndim > 1 and av.shape[-1] == bv.shape[0]
    if not bias and av.shape != bv.shape:
        raise ValueError(f"add shapes disagree: {av.shape} vs {bv.shape}")
    out = Tensor(av + bv)
    if _needs_grad(a, b):
        def bw(g):
            _accum(a, g)
            if bias:
                _accum(b, g.reshape(-1, bv.shape[0]).sum(axis=0))
            else:
                _accum(b, g)
        out._parents, out._backward_fn = (a, b), bw
        out.requires_grad = True
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.values.shape != b.values.shape:
        raise ValueError(f"mul shapes disagree: {a.values.shape} vs {b.values.shape}")
    out = Tensor(a.values * b.values)
    if _needs_grad(a, b):
        def bw(g):
            _accum(a, g * b.values)
            _accum(b, g * a.values)
        out._parents, out._backward_fn = (a, b), bw
        out.requires_grad = True
    return out


def scale(a: Tensor, s: float) -> Tensor:
    s = float(s)
    out = Tensor(a.values * s)
    if _needs_grad(a):
        out._parents = (a,)
        out._backward_fn = lambda g: _accum(a, g * s)
        out.requires_grad = True
    return out


def lerp(a: Tensor, b: Tensor, lam: float) -> Tensor:
    """lam * a + (1 - lam) * b, differentiable through both operands."""
    if a.values.shape != b.values.shape:
        raise ValueError(f"lerp shapes disagree: {a.values.shape} vs {b.values.shape}")
    lam = float(lam)
    out = Tensor(lam * a.values + (1.0 - lam) * b.values)
    if _needs_grad(a, b):
        def bw(g):
            _accum(a, g * lam)
            _accum(b, g * (1.0 - lam))
        out._parents, out._backward_fn = (a, b), bw
        out.requires_grad = True
    return out


def add_rows(a: Tensor, b: Tensor) -> Tensor:
    """[B, L, D] + [L, D] broadcast over the leading axis (positional table)."""
    if a.values.ndim != 3 or a.values.shape[1:] != b.values.shape:
        raise ValueError(f"add_rows shapes disagree: {a.values.shape} vs {b.values.shape}")
    out = Tensor(a.values + b.values)
    if _needs_grad(a, b):
        def bw(g):
            _accum(a, g)
            _accum(b, g.sum(axis=0))
        out._parents, out._backward_fn = (a, b), bw
        out.requires_grad = True
    return out


def add_const(a: Tensor, const: np.ndarray) -> Tensor:
    """Add a non-differentiable constant (broadcastable); used for the
    attention mask bias."""
    out = Tensor(a.values + const)
    if _needs_grad(a):
        out._parents = (a,)
        out._backward_fn = lambda g: _accum(a, g)
        out.requires_grad = True
    return out


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    out = Tensor(a.values.reshape(shape))
    if _needs_grad(a):
        out._parents = (a,)
        out._backward_fn = lambda g: _accum(a, g.reshape(a.values.shape))
        out.requires_grad = True
    return out


def transpose(a: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    out = Tensor(a.values.transpose(axes))
    if _needs_grad(a):
        out._parents = (a,)
        out._backward_fn = lambda g: _accum(a, _c(g.transpose(inv)))
        out.requires_grad = True
    return out


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    """Row lookup: out[..., :] = table[ids[...], :]."""
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.values.shape[0]):
        raise ValueError(
            f"token id out of range [0, {table.values.shape[0]}): "
            f"min {ids.min()}, max {ids.max()}"
        )
    out = Tensor(table.values[ids])
    if _needs_grad(table):
        flat = np.ascontiguousarray(ids.ravel(), dtype=np.int64)

        def bw(g):
            if table.grad is None:
                table.grad = np.zeros_like(table.values)
            K.scatter_add(table.grad, flat, _c(g.reshape(flat.shape[0], -1)))
        out._parents, out._backward_fn = (table,), bw
        out.requires_grad = True
    return out


def narrow_rows(a: Tensor, n: int) -> Tensor:
    """First n rows of a 2-d tensor (positional-embedding slice)."""
    out = Tensor(a.values[:n])
    if _needs_grad(a):
        def bw(g):
            if a.grad is None:
                a.grad = np.zeros_like(a.values)
            a.grad[:n] += g
        out._parents, out._backward_fn = (a,), bw
        out.requires_grad = True
    return out


def select_pos0(h: Tensor) -> Tensor:
    """h[:, 0, :] for a [B, L, D] tensor."""
    out = Tensor(h.values[:, 0, :])
    if _needs_grad(h):
        def bw(g):
            full = np.zeros_like(h.values)
            full[:, 0, :] = g
            _accum(h, full)
        out._parents, out._backward_fn = (h,), bw
        out.requires_grad = True
    return out


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Max-subtracted softmax along an axis.

    -inf entries are legal (masked logits, probability exactly 0); NaN or
    +inf entries, and rows with no finite entry, are numeric errors.
    """
    v = x.values
    if np.isnan(v).any() or np.isposinf(v).any():
        raise ValueError("softmax input contains NaN or +inf")
    moved = axis not in (-1, v.ndim - 1)
    work = np.moveaxis(v, axis, -1) if moved else v
    rows = _c(work.reshape(-1, work.shape[-1]))
    out2d = K.softmax2d(rows)
    if np.isnan(out2d).any():
        raise ValueError("softmax row with no finite entries")
    res = out2d.reshape(work.shape)
    if moved:
        res = np.moveaxis(res, -1, axis)
    out = Tensor(res)
    if _needs_grad(x):
        def bw(g):
            gw = np.moveaxis(g, axis, -1) if moved else g
            gx = K.softmax2d_grad(out2d, _c(gw.reshape(out2d.shape)))
            gx = gx.reshape(work.shape)
            if moved:
                gx = _c(np.moveaxis(gx, -1, axis))
            _accum(x, gx)
        out._parents, out._backward_fn = (x,), bw
        out.requires_grad = True
    return out


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then scale-shift."""
    if eps <= 0.0:
        raise ValueError(f"layer_norm eps must be positive, got {eps}")
    d = x.values.shape[-1]
    if gamma.values.shape != (d,) or beta.values.shape != (d,):
        raise ValueError(
            f"layer_norm parameter shapes {gamma.values.shape}/{beta.values.shape} "
            f"do not match feature width {d}"
        )
    rows = _c(x.values.reshape(-1, d))
    out2d, xhat, inv_std = K.layernorm2d(rows, gamma.values, beta.values, float(eps))
    out = Tensor(out2d.reshape(x.values.shape))
    if _needs_grad(x, gamma, beta):
        def bw(g):
            gx, ggamma, gbeta = K.layernorm2d_grad(
                xhat, inv_std, gamma.values, _c(g.reshape(-1, d)))
            _accum(x, gx.reshape(x.values.shape))
            _accum(gamma, ggamma)
            _accum(beta, gbeta)
        out._parents, out._backward_fn = (x, gamma, beta), bw
        out.requires_grad = True
    return out


def gelu(x: Tensor) -> Tensor:
    flat = _c(x.values.reshape(-1))
    out = Tensor(K.gelu(flat).reshape(x.values.shape))
    if _needs_grad(x):
        def bw(g):
            gx = K.gelu_grad(flat, _c(g.reshape(-1)))
            _accum(x, gx.reshape(x.values.shape))
        out._parents, out._backward_fn = (x,), bw
        out.requires_grad = True
    return out


def tanh(x: Tensor) -> Tensor:
    ov = np.tanh(x.values)
    out = Tensor(ov)
    if _needs_grad(x):
        out._parents = (x,)
        out._backward_fn = lambda g: _accum(x, g * (1.0 - ov * ov))
        out.requires_grad = True
    return out


def dropout(x: Tensor, rate: float, rng: np.random.Generator, training: bool) -> Tensor:
    """Inverted dropout; identity (and no rng draw) outside training."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    keep = (rng.random(x.values.shape) >= rate) / (1.0 - rate)
    out = Tensor(x.values * keep)
    if _needs_grad(x):
        out._parents = (x,)
        out._backward_fn = lambda g: _accum(x, g * keep)
        out.requires_grad = True
    return out


def cross_entropy_soft(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Mean over the batch of -sum_k targets_k * log softmax(logits)_k.

    targets is a plain [B, K] array of row distributions (not part of the
    graph); the loss is exactly linear in it.
    """
    t = np.asarray(targets, dtype=np.float64)
    if t.shape != logits.values.shape:
        raise ValueError(f"target shape {t.shape} does not match logits {logits.values.shape}")
    if t.min() < -1e-12 or t.max() > 1.0 + 1e-12:
        raise ValueError("target entries must lie in [0, 1]")
    rowsums = t.sum(axis=1)
    if np.abs(rowsums - 1.0).max() > 1e-9:
        raise ValueError("each target row must sum to 1 (tolerance 1e-9)")
    t = _c(t)
    loss, logp = K.softce(_c(logits.values), t)
    out = Tensor(np.float64(loss).reshape(()))
    if _needs_grad(logits):
        def bw(g):
            _accum(logits, K.softce_grad(logp, t, float(g.reshape(()))))
        out._parents, out._backward_fn = (logits,), bw
        out.requires_grad = True
    return out


def tsum(x: Tensor) -> Tensor:
    out = Tensor(np.float64(x.values.sum()).reshape(()))
    if _needs_grad(x):
        out._parents = (x,)
        out._backward_fn = lambda g: _accum(x, np.full_like(x.values, float(g.reshape(()))))
        out.requires_grad = True
    return out


def parameter(values) -> Tensor:
    """Leaf tensor that accumulates gradients."""
    return Tensor(values, requires_grad=True)


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None
