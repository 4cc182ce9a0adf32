"""Dense matrix kernels with reverse-mode differentiation.

The encoder and its loss are assembled from a small fixed set of
primitives: matmul, transpose, n-ary add, row-vector broadcast add,
scalar scale, tanh, masked row-softmax, layer norm, column concat,
cosine, and log-sum-exp. Each primitive knows its own vector-Jacobian
product; a :class:`Tape` records primitives in execution order and
replays them in exact reverse to accumulate gradients.

Conventions:

* all data is float64 and strictly two-dimensional — vectors are
  ``1 x n`` rows, scalars ``1 x 1``;
* the tape is rebuilt on every forward pass (define-by-run);
* every op takes ``tape=None``, in which case it computes values only —
  that is the inference path and records nothing.
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

LN_EPS = 1e-5      # variance guard inside layer_norm
NORM_GUARD = 1e-5  # vectors with smaller L2 norm are rejected as zero


class KernelError(Exception):
    """Base class for numerical-kernel failures."""


class AllMasked(KernelError):
    pass


class ZeroVector(KernelError):
    pass


class DoubleBackward(KernelError):
    pass


class DetachedNode(KernelError):
    pass


class BadShape(KernelError):
    pass


class Tensor:
    """A strictly 2-D float64 array, optionally a trainable leaf.

    Op outputs never require grad themselves; they are tracked through
    the tape that produced them. Data must not be mutated while a tape
    recorded against it is still alive (the optimizer mutates parameter
    data only between passes).
    """

    __slots__ = ("data", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim == 1:
            arr = arr.reshape(1, -1)
        if arr.ndim != 2:
            raise BadShape(f"tensors are 2-D, got shape {arr.shape}")
        self.data = arr
        self.requires_grad = bool(requires_grad)

    @property
    def shape(self) -> tuple:
        return self.data.shape

    def item(self) -> float:
        if self.data.shape != (1, 1):
            raise BadShape(f"item() needs a 1x1 tensor, got {self.data.shape}")
        return float(self.data[0, 0])

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        flag = ", requires_grad" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"


def constant(data) -> Tensor:
    return Tensor(data, requires_grad=False)


def parameter(data) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True)


class Tape:
    """Execution record of one forward pass.

    Ops append ``(output, inputs, vjp)`` entries; :func:`backward`
    traverses them in exact reverse order, accumulating adjoints
    additively. A tape can be consumed by backward exactly once.
    """

    def __init__(self):
        self._records: list = []
        self._on_tape: set = set()
        self._consumed = False

    def __len__(self) -> int:
        return len(self._records)

    def tracks(self, t: Tensor) -> bool:
        return t.requires_grad or id(t) in self._on_tape

    def record(self, out: Tensor, inputs: tuple, vjp: Callable) -> None:
        self._records.append((out, inputs, vjp))
        self._on_tape.add(id(out))


def _should_record(tape: Optional[Tape], *inputs: Tensor) -> bool:
    return tape is not None and any(tape.tracks(x) for x in inputs)


def backward(tape: Tape, loss: Tensor, wrt: Optional[Sequence[Tensor]] = None) -> dict:
    """Gradients of a scalar ``loss`` for every leaf that influenced it.

    Returns ``{tensor: ndarray}`` keyed by object identity. ``wrt`` adds
    explicit zero entries for parameters the loss does not depend on.
    Calling twice on the same tape raises :class:`DoubleBackward`;
    a loss that was not produced on this tape raises :class:`DetachedNode`.
    """
    if tape._consumed:
        raise DoubleBackward("tape already consumed by a previous backward()")
    if loss.data.shape != (1, 1):
        raise BadShape(f"loss must be a 1x1 scalar, got {loss.data.shape}")
    if id(loss) not in tape._on_tape:
        raise DetachedNode("loss was not produced on this tape")
    tape._consumed = True

    adjoint = {id(loss): np.ones((1, 1))}
    grads: dict = {}
    for out, inputs, vjp in reversed(tape._records):
        g_out = adjoint.pop(id(out), None)
        if g_out is None:
            continue
        for inp, g in zip(inputs, vjp(g_out)):
            if g is None or not tape.tracks(inp):
                continue
            if inp.requires_grad:
                acc = grads.get(inp)
                grads[inp] = g if acc is None else acc + g
            else:
                key = id(inp)
                acc = adjoint.get(key)
                adjoint[key] = g if acc is None else acc + g
    if wrt is not None:
        for p in wrt:
            grads.setdefault(p, np.zeros_like(p.data))
    return grads


# ---------------------------------------------------------------------------
# primitives


def matmul(a: Tensor, b: Tensor, tape: Optional[Tape] = None) -> Tensor:
    if a.data.shape[1] != b.data.shape[0]:
        raise BadShape(f"matmul mismatch {a.data.shape} @ {b.data.shape}")
    out = Tensor(a.data @ b.data)
    if _should_record(tape, a, b):
        ad, bd = a.data, b.data
        ta, tb = tape.tracks(a), tape.tracks(b)

        def vjp(g):
            return (g @ bd.T if ta else None, ad.T @ g if tb else None)

        tape.record(out, (a, b), vjp)
    return out


def transpose(a: Tensor, tape: Optional[Tape] = None) -> Tensor:
    out = Tensor(a.data.T.copy())
    if _should_record(tape, a):
        tape.record(out, (a,), lambda g: (g.T,))
    return out


def add(*xs: Tensor, tape: Optional[Tape] = None) -> Tensor:
    """Elementwise sum of same-shape tensors (n-ary)."""
    if not xs:
        raise BadShape("add needs at least one input")
    shape = xs[0].data.shape
    for x in xs[1:]:
        if x.data.shape != shape:
            raise BadShape(f"add shape mismatch: {shape} vs {x.data.shape}")
    acc = xs[0].data.copy()
    for x in xs[1:]:
        acc += x.data
    out = Tensor(acc)
    if _should_record(tape, *xs):
        tape.record(out, xs, lambda g: tuple(g for _ in xs))
    return out


def add_rowvec(m: Tensor, v: Tensor, tape: Optional[Tape] = None) -> Tensor:
    """Broadcast a 1 x h row vector over every row of an L x h matrix."""
    if v.data.shape != (1, m.data.shape[1]):
        raise BadShape(f"add_rowvec mismatch {m.data.shape} + {v.data.shape}")
    out = Tensor(m.data + v.data)
    if _should_record(tape, m, v):
        tape.record(out, (m, v), lambda g: (g, g.sum(axis=0, keepdims=True)))
    return out


def scale(a: Tensor, factor: float, tape: Optional[Tape] = None) -> Tensor:
    out = Tensor(a.data * factor)
    if _should_record(tape, a):
        tape.record(out, (a,), lambda g: (g * factor,))
    return out


def tanh(a: Tensor, tape: Optional[Tape] = None) -> Tensor:
    y = np.tanh(a.data)
    out = Tensor(y)
    if _should_record(tape, a):
        tape.record(out, (a,), lambda g: (g * (1.0 - y * y),))
    return out


def masked_row_softmax(
    x: Tensor,
    mask,
    tape: Optional[Tape] = None,
    row_mask=None,
) -> Tensor:
    """Row-wise softmax restricted to unmasked columns.

    ``mask`` flags valid columns; masked columns come out exactly zero
    and their stored values never influence the result. For a square
    input with matching mask length (self-attention over padded
    sentences) the same mask also disables padded query rows, which come
    out all-zero; ``row_mask`` overrides that default.
    """
    xd = x.data
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (xd.shape[1],):
        raise BadShape(f"mask length {mask.shape} does not match columns {xd.shape[1]}")
    if not mask.any():
        raise AllMasked("softmax over fully masked columns")
    if row_mask is None:
        row_mask = mask if xd.shape[0] == xd.shape[1] else np.ones(xd.shape[0], dtype=bool)
    else:
        row_mask = np.asarray(row_mask, dtype=bool)
        if row_mask.shape != (xd.shape[0],):
            raise BadShape("row_mask length does not match rows")

    shifted = np.where(mask[None, :], xd, -np.inf)
    shifted = shifted - shifted.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=1, keepdims=True)
    y[~row_mask, :] = 0.0
    out = Tensor(y)
    if _should_record(tape, x):

        def vjp(g):
            inner = (g * y).sum(axis=1, keepdims=True)
            return (y * (g - inner),)

        tape.record(out, (x,), vjp)
    return out


def layer_norm(x: Tensor, tape: Optional[Tape] = None, eps: float = LN_EPS) -> Tensor:
    """Per-row standardization to mean 0 / variance 1; no learnable affine."""
    xd = x.data
    if xd.shape[1] < 2:
        raise BadShape("layer_norm needs at least 2 columns")
    mu = xd.mean(axis=1, keepdims=True)
    var = ((xd - mu) ** 2).mean(axis=1, keepdims=True)
    sigma = np.sqrt(var + eps)
    y = (xd - mu) / sigma
    out = Tensor(y)
    if _should_record(tape, x):

        def vjp(g):
            gm = g.mean(axis=1, keepdims=True)
            gy = (g * y).mean(axis=1, keepdims=True)
            return ((g - gm - y * gy) / sigma,)

        tape.record(out, (x,), vjp)
    return out


def concat_cols(xs: Sequence[Tensor], tape: Optional[Tape] = None) -> Tensor:
    """Concatenate along columns (e.g. attention heads)."""
    if not xs:
        raise BadShape("concat_cols needs at least one input")
    rows = xs[0].data.shape[0]
    for x in xs:
        if x.data.shape[0] != rows:
            raise BadShape("concat_cols row mismatch")
    out = Tensor(np.concatenate([x.data for x in xs], axis=1))
    if _should_record(tape, *xs):
        widths = [x.data.shape[1] for x in xs]
        splits = np.cumsum(widths)[:-1]

        def vjp(g):
            return tuple(np.split(g, splits, axis=1))

        tape.record(out, tuple(xs), vjp)
    return out


def cos_sim(u: np.ndarray, v: np.ndarray) -> float:
    """Plain cosine similarity on flat arrays, shared zero-vector guard."""
    u = np.asarray(u, dtype=np.float64).ravel()
    v = np.asarray(v, dtype=np.float64).ravel()
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu < NORM_GUARD or nv < NORM_GUARD:
        raise ZeroVector(f"cosine of a (near-)zero vector: norms {nu:.3g}, {nv:.3g}")
    return float(u @ v / (nu * nv))


def cosine(u: Tensor, v: Tensor, tape: Optional[Tape] = None) -> Tensor:
    """Cosine similarity of two 1 x h rows as a differentiable 1 x 1 node."""
    if u.data.shape != v.data.shape or u.data.shape[0] != 1:
        raise BadShape(f"cosine needs matching 1 x h rows, got {u.data.shape}, {v.data.shape}")
    ud, vd = u.data, v.data
    nu = float(np.linalg.norm(ud))
    nv = float(np.linalg.norm(vd))
    if nu < NORM_GUARD or nv < NORM_GUARD:
        raise ZeroVector(f"cosine of a (near-)zero vector: norms {nu:.3g}, {nv:.3g}")
    c = float(ud.ravel() @ vd.ravel() / (nu * nv))
    out = Tensor([[c]])
    if _should_record(tape, u, v):
        tu, tv = tape.tracks(u), tape.tracks(v)

        def vjp(g):
            gs = float(g[0, 0])
            gu = gs * (vd / (nu * nv) - c * ud / (nu * nu)) if tu else None
            gv = gs * (ud / (nu * nv) - c * vd / (nv * nv)) if tv else None
            return (gu, gv)

        tape.record(out, (u, v), vjp)
    return out


def logsumexp(x: Tensor, tape: Optional[Tape] = None) -> Tensor:
    """log(sum(exp(x))) over a 1 x k row, max-shifted for stability."""
    xd = x.data
    if xd.shape[0] != 1:
        raise BadShape(f"logsumexp needs a 1 x k row, got {xd.shape}")
    m = xd.max()
    e = np.exp(xd - m)
    s = e.sum()
    out = Tensor([[m + np.log(s)]])
    if _should_record(tape, x):
        soft = e / s

        def vjp(g):
            return (float(g[0, 0]) * soft,)

        tape.record(out, (x,), vjp)
    return out
