"""Minimal reverse-mode automatic differentiation over numpy arrays.

Every operation on a :class:`Tensor` records its parents and a closure that
propagates the output adjoint back to them.  Calling :meth:`Tensor.backward`
walks the recorded graph in reverse topological order.  Only the handful of
operations needed by the recurrent autoencoder, the attention decoder and
the mixture energy are provided.
"""
from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

_TINY = 1e-300


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    # make numpy defer to the reflected operators below
    __array_ufunc__ = None

    def __init__(self, data, requires_grad: bool = False, _parents: tuple = ()):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in _parents)
        self._parents = _parents if self.requires_grad else ()
        self._backward: Callable[[np.ndarray], None] | None = None

    # ------------------------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def item(self) -> float:
        return float(self.data)

    def _accumulate(self, g: np.ndarray) -> None:
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad = self.grad + g

    def backward(self, grad: np.ndarray | None = None) -> None:
        """Accumulate d(self)/d(leaf) into ``.grad`` of every leaf tensor."""
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a seed needs a scalar output")
            grad = np.ones_like(self.data)
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
        self._accumulate(grad)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
                # interior adjoints are not needed after propagation
                if node._parents:
                    node.grad = None

    # operator sugar ---------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _node(data, parents: Sequence[Tensor], backward) -> Tensor:
    out = Tensor(data, _parents=tuple(parents))
    if out.requires_grad:
        out._backward = backward
    return out


# ----------------------------------------------------------------------
# elementwise arithmetic


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        a._accumulate(_unbroadcast(g, a.shape))
        b._accumulate(_unbroadcast(g, b.shape))

    return _node(a.data + b.data, (a, b), bw)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        a._accumulate(_unbroadcast(g, a.shape))
        b._accumulate(_unbroadcast(-g, b.shape))

    return _node(a.data - b.data, (a, b), bw)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    return _node(a.data * b.data, (a, b), bw)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data

    def bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g / b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g * out / b.data, b.shape))

    return _node(out, (a, b), bw)


def square(a: Tensor) -> Tensor:
    def bw(g):
        a._accumulate(2.0 * g * a.data)

    return _node(a.data * a.data, (a,), bw)


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)

    def bw(g):
        a._accumulate(g * (1.0 - out * out))

    return _node(out, (a,), bw)


def sigmoid(a: Tensor) -> Tensor:
    out = 0.5 * (1.0 + np.tanh(0.5 * a.data))

    def bw(g):
        a._accumulate(g * out * (1.0 - out))

    return _node(out, (a,), bw)


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)

    def bw(g):
        a._accumulate(g * out)

    return _node(out, (a,), bw)


def log(a: Tensor) -> Tensor:
    def bw(g):
        a._accumulate(g / a.data)

    return _node(np.log(a.data), (a,), bw)


# ----------------------------------------------------------------------
# reductions and shape manipulation


def sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        a._accumulate(np.broadcast_to(g, a.shape))

    return _node(out, (a,), bw)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = a.data.size if axis is None else a.shape[axis]
    return mul(sum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def reshape(a: Tensor, shape) -> Tensor:
    def bw(g):
        a._accumulate(g.reshape(a.shape))

    return _node(a.data.reshape(shape), (a,), bw)


def getitem(a: Tensor, idx) -> Tensor:
    def bw(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        a._accumulate(full)

    return _node(a.data[idx], (a,), bw)


def concat(tensors: Iterable[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            t._accumulate(piece)

    return _node(np.concatenate([t.data for t in tensors], axis=axis), tensors, bw)


def stack(tensors: Iterable[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]

    def bw(g):
        for i, t in enumerate(tensors):
            t._accumulate(np.take(g, i, axis=axis))

    return _node(np.stack([t.data for t in tensors], axis=axis), tensors, bw)


def matmul(a, b) -> Tensor:
    """``a @ b`` for ``a`` of shape (..., n, k) and a 2-D ``b`` of shape (k, m)."""
    a, b = as_tensor(a), as_tensor(b)
    if b.ndim != 2:
        raise ValueError("matmul supports a 2-D right operand only")

    def bw(g):
        if a.requires_grad:
            a._accumulate(g @ b.data.T)
        if b.requires_grad:
            k, m = b.shape
            b._accumulate(a.data.reshape(-1, k).T @ g.reshape(-1, m))

    return _node(a.data @ b.data, (a, b), bw)


# ----------------------------------------------------------------------
# composite kernels with hand-written adjoints


def masked_softmax(a: Tensor, mask: np.ndarray | None = None, axis: int = -1) -> Tensor:
    """Softmax along ``axis``; positions with ``mask == 0`` get probability 0."""
    x = a.data
    if mask is not None:
        x = np.where(mask > 0, x, -np.inf)
    shifted = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        inner = (g * out).sum(axis=axis, keepdims=True)
        a._accumulate(out * (g - inner))

    return _node(out, (a,), bw)


def logsumexp(a: Tensor, axis: int = -1) -> Tensor:
    x = a.data
    m = np.max(x, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    s = np.exp(x - m).sum(axis=axis, keepdims=True)
    out_k = np.log(s) + m

    def bw(g):
        w = np.exp(x - out_k)
        a._accumulate(np.expand_dims(g, axis) * w)

    return _node(np.squeeze(out_k, axis=axis), (a,), bw)


def norm(a: Tensor, axis: int = -1) -> Tensor:
    """Euclidean norm along ``axis`` with a zero subgradient at the origin."""
    out = np.sqrt((a.data * a.data).sum(axis=axis))

    def bw(g):
        safe = np.where(out > 0, out, 1.0)
        scale = np.where(out > 0, g / safe, 0.0)
        a._accumulate(np.expand_dims(scale, axis) * a.data)

    return _node(out, (a,), bw)


def cosine(a: Tensor, b: Tensor, axis: int = -1) -> Tensor:
    """Cosine similarity along ``axis``; defined as 0 when either vector is zero."""
    a, b = as_tensor(a), as_tensor(b)
    na = np.sqrt((a.data * a.data).sum(axis=axis))
    nb = np.sqrt((b.data * b.data).sum(axis=axis))
    denom = na * nb
    ok = denom > _TINY
    safe = np.where(ok, denom, 1.0)
    dot = (a.data * b.data).sum(axis=axis)
    out = np.where(ok, dot / safe, 0.0)

    def bw(g):
        gs = np.expand_dims(np.where(ok, g, 0.0), axis)
        c = np.expand_dims(out, axis)
        inv = np.expand_dims(1.0 / safe, axis)
        if a.requires_grad:
            na2 = np.expand_dims(np.where(ok, na * na, 1.0), axis)
            a._accumulate(gs * (b.data * inv - c * a.data / na2))
        if b.requires_grad:
            nb2 = np.expand_dims(np.where(ok, nb * nb, 1.0), axis)
            b._accumulate(gs * (a.data * inv - c * b.data / nb2))

    return _node(out, (a, b), bw)


def gru_cell(x: Tensor, h: Tensor, W: Sequence[Tensor], U: Sequence[Tensor], b: Sequence[Tensor],
             mask: np.ndarray | None = None) -> Tensor:
    """One GRU step ``h + m * z * (tanh(...) - h)`` as a single graph node.

    ``W``, ``U`` and ``b`` hold the (update, reset, candidate) weights.  Rows
    with ``mask == 0`` pass ``h`` through unchanged.
    """
    (Wz, Wr, Wh), (Uz, Ur, Uh), (bz, br, bh) = W, U, b
    xd, hd = x.data, h.data
    z = 0.5 * (1.0 + np.tanh(0.5 * (xd @ Wz.data + hd @ Uz.data + bz.data)))
    r = 0.5 * (1.0 + np.tanh(0.5 * (xd @ Wr.data + hd @ Ur.data + br.data)))
    rh = r * hd
    c = np.tanh(xd @ Wh.data + rh @ Uh.data + bh.data)
    mz = z if mask is None else mask * z
    out = hd + mz * (c - hd)

    def bw(g):
        m = 1.0 if mask is None else mask
        da_h = g * mz * (1.0 - c * c)
        drh = da_h @ Uh.data.T
        da_r = drh * hd * r * (1.0 - r)
        da_z = g * m * (c - hd) * z * (1.0 - z)
        if h.requires_grad:
            h._accumulate(g * (1.0 - mz) + drh * r + da_r @ Ur.data.T + da_z @ Uz.data.T)
        if x.requires_grad:
            x._accumulate(da_z @ Wz.data.T + da_r @ Wr.data.T + da_h @ Wh.data.T)
        for da, Wt, Ut, bt, left in ((da_z, Wz, Uz, bz, hd), (da_r, Wr, Ur, br, hd), (da_h, Wh, Uh, bh, rh)):
            Wt._accumulate(xd.T @ da)
            Ut._accumulate(left.T @ da)
            bt._accumulate(da.sum(axis=0))

    return _node(out, (x, h, *W, *U, *b), bw)


def additive_attention(d: Tensor, keys: Tensor, memory: Tensor, W_q: Tensor, v: Tensor,
                       mask: np.ndarray | None = None) -> tuple[Tensor, np.ndarray]:
    """Context ``sum_j a_j m_j`` with ``a = softmax_j(v . tanh(keys_j + d W_q))``.

    Returns the context tensor and the attention weights (B, L).
    """
    B, L, _ = keys.shape
    e = np.tanh(keys.data + (d.data @ W_q.data)[:, None, :])
    score = (e @ v.data)[:, :, 0]
    if mask is not None:
        score = np.where(mask > 0, score, -np.inf)
    score = score - score.max(axis=1, keepdims=True)
    w = np.exp(score)
    alpha = w / w.sum(axis=1, keepdims=True)
    ctx = np.einsum("bl,blh->bh", alpha, memory.data)

    def bw(g):
        dalpha = np.einsum("bh,blh->bl", g, memory.data)
        if memory.requires_grad:
            memory._accumulate(alpha[:, :, None] * g[:, None, :])
        dscore = alpha * (dalpha - (alpha * dalpha).sum(axis=1, keepdims=True))
        v._accumulate(np.einsum("bla,bl->a", e, dscore)[:, None])
        dpre = dscore[:, :, None] * v.data[:, 0][None, None, :] * (1.0 - e * e)
        keys._accumulate(dpre)
        dq = dpre.sum(axis=1)
        W_q._accumulate(d.data.T @ dq)
        if d.requires_grad:
            d._accumulate(dq @ W_q.data.T)

    return _node(ctx, (d, keys, memory, W_q, v), bw), alpha


def _sig(a: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * a))


def gru_sequence(x: np.ndarray, mask: np.ndarray | None, W: Sequence[Tensor], U: Sequence[Tensor],
                 b: Sequence[Tensor]) -> Tensor:
    """Run a GRU over a constant input sequence as one graph node.

    ``x`` is (B, L, n_in) and the state starts at zero. Returns the state
    after every step as a (B, L, H) tensor. Steps with ``mask == 0`` carry
    the previous state forward, so ``out[:, -1]`` is each row's final state.
    Backpropagation through time is hand-written; gradients flow to the
    weights only.
    """
    (Wz, Wr, Wh), (Uz, Ur, Uh), (bz, br, bh) = W, U, b
    x = np.asarray(x, dtype=np.float64)
    B, L, _ = x.shape
    H = Uz.shape[0]
    m = np.ones((B, L)) if mask is None else np.asarray(mask, dtype=np.float64)
    # input projections for every step at once
    xz = x @ Wz.data + bz.data
    xr = x @ Wr.data + br.data
    xh = x @ Wh.data + bh.data
    states = np.empty((B, L, H))
    zs, rs, cs = np.empty((B, L, H)), np.empty((B, L, H)), np.empty((B, L, H))
    h = np.zeros((B, H))
    Uzr = np.concatenate([Uz.data, Ur.data], axis=1)
    for t in range(L):
        zr = h @ Uzr
        z = _sig(xz[:, t] + zr[:, :H])
        r = _sig(xr[:, t] + zr[:, H:])
        c = np.tanh(xh[:, t] + (r * h) @ Uh.data)
        h = h + m[:, t : t + 1] * z * (c - h)
        zs[:, t], rs[:, t], cs[:, t], states[:, t] = z, r, c, h

    def bw(G):
        dUz, dUr, dUh = np.zeros_like(Uz.data), np.zeros_like(Ur.data), np.zeros_like(Uh.data)
        daz_all, dar_all, dah_all = np.empty((B, L, H)), np.empty((B, L, H)), np.empty((B, L, H))
        dh = np.zeros((B, H))
        for t in range(L - 1, -1, -1):
            g = dh + G[:, t]
            hp = states[:, t - 1] if t > 0 else np.zeros((B, H))
            z, r, c = zs[:, t], rs[:, t], cs[:, t]
            mt = m[:, t : t + 1]
            mz = mt * z
            da_h = g * mz * (1.0 - c * c)
            drh = da_h @ Uh.data.T
            da_r = drh * hp * r * (1.0 - r)
            da_z = g * mt * (c - hp) * z * (1.0 - z)
            dh = g * (1.0 - mz) + drh * r + da_r @ Ur.data.T + da_z @ Uz.data.T
            dUz += hp.T @ da_z
            dUr += hp.T @ da_r
            dUh += (r * hp).T @ da_h
            daz_all[:, t], dar_all[:, t], dah_all[:, t] = da_z, da_r, da_h
        xf = x.reshape(B * L, -1)
        for da, Wt, bt in ((daz_all, Wz, bz), (dar_all, Wr, br), (dah_all, Wh, bh)):
            daf = da.reshape(B * L, H)
            Wt._accumulate(xf.T @ daf)
            bt._accumulate(daf.sum(axis=0))
        Uz._accumulate(dUz)
        Ur._accumulate(dUr)
        Uh._accumulate(dUh)

    return _node(states, (*W, *U, *b), bw)


def attentive_decode(h0: Tensor, memory: Tensor, mask: np.ndarray | None, W_k: Tensor, W_q: Tensor, v: Tensor,
                     W: Sequence[Tensor], U: Sequence[Tensor], b: Sequence[Tensor], W_o: Tensor, b_o: Tensor,
                     steps: int) -> tuple[Tensor, np.ndarray]:
    """Attentive GRU decoder unrolled for ``steps`` outputs as one graph node.

    At every step the previous decoder state queries the memory
    (``a = softmax(v . tanh(memory W_k + d W_q))``), the GRU consumes the
    previous output sample together with the context, and the next sample is
    ``[d, ctx] W_o + b_o``. The first step sees a zero previous sample.
    The GRU input weights ``W`` have 1 + H rows: the sample row first, then
    the context rows. Returns the (B, steps) outputs and the (B, steps, L)
    attention weights.
    """
    (Wz, Wr, Wh), (Uz, Ur, Uh), (bz, br, bh) = W, U, b
    S = memory.data
    B, L, H = S.shape
    valid = np.ones((B, L), dtype=bool) if mask is None else np.asarray(mask) > 0
    keys = S @ W_k.data  # (B, L, A)
    vv = v.data[:, 0]
    Wx = np.concatenate([Wz.data, Wr.data, Wh.data], axis=1)  # (1 + H, 3H)
    Uzr = np.concatenate([Uz.data, Ur.data], axis=1)
    Wo_d, Wo_c = W_o.data[:H], W_o.data[H:]
    ds = np.empty((steps + 1, B, H))
    ds[0] = h0.data
    es, alphas, ctxs = [], np.empty((B, steps, L)), np.empty((steps, B, H))
    zs, rs, cs = np.empty((steps, B, H)), np.empty((steps, B, H)), np.empty((steps, B, H))
    outs = np.empty((B, steps))
    prevs = np.zeros((steps, B, 1))
    prev = np.zeros((B, 1))
    for t in range(steps):
        d = ds[t]
        e = np.tanh(keys + (d @ W_q.data)[:, None, :])
        score = np.where(valid, e @ vv, -np.inf)
        score -= score.max(axis=1, keepdims=True)
        w = np.exp(score)
        alpha = w / w.sum(axis=1, keepdims=True)
        ctx = np.matmul(alpha[:, None, :], S)[:, 0, :]
        xin = np.concatenate([prev, ctx], axis=1)
        xa = xin @ Wx
        zr = d @ Uzr
        z = _sig(xa[:, :H] + zr[:, :H] + bz.data)
        r = _sig(xa[:, H : 2 * H] + zr[:, H:] + br.data)
        c = np.tanh(xa[:, 2 * H :] + (r * d) @ Uh.data + bh.data)
        dn = d + z * (c - d)
        out = dn @ Wo_d + ctx @ Wo_c + b_o.data
        prevs[t] = prev
        es.append(e)
        alphas[:, t], ctxs[t], zs[t], rs[t], cs[t], ds[t + 1] = alpha, ctx, z, r, c, dn
        outs[:, t] = out[:, 0]
        prev = out

    def bw(G):
        grads = {k: np.zeros_like(p.data) for k, p in
                 (("Wz", Wz), ("Wr", Wr), ("Wh", Wh), ("Uz", Uz), ("Ur", Ur), ("Uh", Uh),
                  ("bz", bz), ("br", br), ("bh", bh), ("W_o", W_o), ("b_o", b_o), ("W_q", W_q), ("v", v))}
        dS = np.zeros_like(S)
        dkeys = np.zeros_like(keys)
        dd = np.zeros((B, H))
        dprev = np.zeros((B, 1))
        for t in range(steps - 1, -1, -1):
            d, dn, ctx = ds[t], ds[t + 1], ctxs[t]
            z, r, c, e, alpha = zs[t], rs[t], cs[t], es[t], alphas[:, t]
            g_out = G[:, t : t + 1] + dprev
            grads["W_o"][:H] += dn.T @ g_out
            grads["W_o"][H:] += ctx.T @ g_out
            grads["b_o"] += g_out.sum(axis=0)
            g = dd + g_out @ Wo_d.T
            dctx = g_out @ Wo_c.T
            # GRU step
            da_h = g * z * (1.0 - c * c)
            drh = da_h @ Uh.data.T
            da_r = drh * d * r * (1.0 - r)
            da_z = g * (c - d) * z * (1.0 - z)
            dd = g * (1.0 - z) + drh * r + da_r @ Ur.data.T + da_z @ Uz.data.T
            xin = np.concatenate([prevs[t], ctx], axis=1)
            for name, da, uname, left in (("Wz", da_z, "Uz", d), ("Wr", da_r, "Ur", d), ("Wh", da_h, "Uh", r * d)):
                grads[name] += xin.T @ da
                grads[uname] += left.T @ da
                grads["b" + name[1]] += da.sum(axis=0)
            dx = da_z @ Wz.data.T + da_r @ Wr.data.T + da_h @ Wh.data.T
            dprev = dx[:, :1]
            dctx = dctx + dx[:, 1:]
            # attention
            dS += alpha[:, :, None] * dctx[:, None, :]
            dalpha = np.matmul(S, dctx[:, :, None])[:, :, 0]
            dscore = alpha * (dalpha - (alpha * dalpha).sum(axis=1, keepdims=True))
            grads["v"][:, 0] += np.einsum("bla,bl->a", e, dscore)
            dpre = dscore[:, :, None] * vv[None, None, :] * (1.0 - e * e)
            dkeys += dpre
            dq = dpre.sum(axis=1)
            grads["W_q"] += d.T @ dq
            dd = dd + dq @ W_q.data.T
        W_k._accumulate(np.einsum("blh,bla->ha", S, dkeys))
        if memory.requires_grad:
            memory._accumulate(dS + dkeys @ W_k.data.T)
        if h0.requires_grad:
            h0._accumulate(dd)
        for name, p in (("Wz", Wz), ("Wr", Wr), ("Wh", Wh), ("Uz", Uz), ("Ur", Ur), ("Uh", Uh),
                        ("bz", bz), ("br", br), ("bh", bh), ("W_o", W_o), ("b_o", b_o), ("W_q", W_q), ("v", v)):
            p._accumulate(grads[name])

    node = _node(outs, (h0, memory, W_k, W_q, v, *W, *U, *b, W_o, b_o), bw)
    return node, alphas
