"""Dense float64 tensors with a reverse-mode tape, plus first-order optimizers.

Usage::

    tape = Tape()
    h = tape.apply_activation(tape.add_bias(tape.matmul(x, w), b), expr, beta)
    loss = tape.softmax_cross_entropy(h, labels)
    grads = tape.backward(loss)      # {tensor: ndarray} for every leaf

Nodes are only recorded when at least one input requires a gradient, so
constant inputs (data batches, masks) cost nothing on the backward pass.
"""

from __future__ import annotations

import numpy as np

from .exceptions import ShapeMismatch


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"


def parameter(data, name=None):
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True, name=name)


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _data(t):
    return t.data if isinstance(t, Tensor) else np.asarray(t, dtype=np.float64)


class Tape:
    """Append-only record of differentiable operations."""

    def __init__(self):
        self.nodes = []

    def __len__(self):
        return len(self.nodes)

    def _emit(self, data, inputs, backward):
        needs = False
        for t in inputs:
            if t.__class__ is Tensor and t.requires_grad:
                needs = True
                break
        out = Tensor(data, requires_grad=needs)
        if needs:
            self.nodes.append((out, inputs, backward))
        return out

    # -- network ops ---------------------------------------------------------

    def matmul(self, a, b):
        ad, bd = _data(a), _data(b)
        if ad.ndim != 2 or bd.ndim != 2 or ad.shape[1] != bd.shape[0]:
            raise ShapeMismatch(f"matmul of {ad.shape} and {bd.shape}")
        return self._emit(ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g))

    def add_bias(self, x, b):
        xd, bd = _data(x), _data(b)
        if bd.shape != xd.shape[-1:]:
            raise ShapeMismatch(f"bias {bd.shape} against input {xd.shape}")
        return self._emit(xd + bd, (x, b), lambda g: (g, g.sum(axis=0)))

    def apply_activation(self, x, activation, params=None):
        """Elementwise activation.

        ``params`` is ``None`` for parameterless activations, a tensor of
        shape ``(P,)`` for one value per layer, or ``(P, width)`` for one
        value per unit (broadcast over rows).
        """
        xd = _data(x)
        n = activation.n_params
        if n == 0:
            plist, pd = (), None
        else:
            if params is None:
                raise ShapeMismatch("activation needs parameters")
            pd = _data(params)
            if pd.shape[0] != n or pd.ndim > 2 or (pd.ndim == 2 and pd.shape[1] != xd.shape[-1]):
                raise ShapeMismatch(f"activation params {pd.shape} for input {xd.shape}")
            plist = list(pd)
        y, cache = activation.forward(xd, plist)
        if np.shape(y) != xd.shape:
            y = np.broadcast_to(y, xd.shape)

        def backward(g):
            dx, dps = activation.backward(g, cache)
            if np.shape(dx) != xd.shape:
                dx = np.broadcast_to(dx, xd.shape)
            if pd is None:
                return (dx,)
            dp = np.zeros_like(pd)
            for k, d in enumerate(dps):
                if d is None:
                    continue
                if np.shape(d) != xd.shape:
                    d = np.broadcast_to(d, xd.shape)
                dp[k] = d.sum() if pd.ndim == 1 else d.reshape(-1, xd.shape[-1]).sum(axis=0)
            return dx, dp

        inputs = (x,) if pd is None else (x, params)
        return self._emit(y, inputs, backward)

    def softmax_cross_entropy(self, logits, labels):
        """Mean cross-entropy of integer ``labels`` under softmax(logits)."""
        z = _data(logits)
        labels = np.asarray(labels)
        if z.ndim != 2 or labels.shape != (z.shape[0],):
            raise ShapeMismatch(f"logits {z.shape} vs labels {labels.shape}")
        shifted = z - z.max(axis=1, keepdims=True)
        logsum = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
        logp = shifted - logsum
        rows = np.arange(z.shape[0])
        loss = -logp[rows, labels].mean()

        def backward(g):
            d = np.exp(logp)
            d[rows, labels] -= 1.0
            return (d * (g / z.shape[0]),)

        return self._emit(loss, (logits,), backward)

    # -- general elementwise / reduction ops (controller) --------------------

    def add(self, a, b):
        ad, bd = _data(a), _data(b)
        return self._emit(
            ad + bd, (a, b),
            lambda g: (_unbroadcast(g, ad.shape), _unbroadcast(g, bd.shape)),
        )

    def sub(self, a, b):
        ad, bd = _data(a), _data(b)
        return self._emit(
            ad - bd, (a, b),
            lambda g: (_unbroadcast(g, ad.shape), -_unbroadcast(g, bd.shape)),
        )

    def mul(self, a, b):
        ad, bd = _data(a), _data(b)
        return self._emit(
            ad * bd, (a, b),
            lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)),
        )

    def sigmoid(self, a):
        ad = _data(a)
        e = np.exp(-np.abs(ad))
        s = np.where(ad >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
        return self._emit(s, (a,), lambda g: (g * s * (1.0 - s),))

    def tanh(self, a):
        t = np.tanh(_data(a))
        return self._emit(t, (a,), lambda g: (g * (1.0 - t * t),))

    def exp(self, a):
        e = np.exp(_data(a))
        return self._emit(e, (a,), lambda g: (g * e,))

    def log_softmax(self, a):
        ad = _data(a)
        shifted = ad - ad.max(axis=-1, keepdims=True)
        out = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))

        def backward(g):
            p = np.exp(out)
            return (g - p * g.sum(axis=-1, keepdims=True),)

        return self._emit(out, (a,), backward)

    def pick(self, a, index):
        """Row-wise gather: ``out[i] = a[i, index[i]]``."""
        ad = _data(a)
        index = np.asarray(index)
        rows = np.arange(ad.shape[0])

        def backward(g):
            d = np.zeros_like(ad)
            d[rows, index] = g
            return (d,)

        return self._emit(ad[rows, index], (a,), backward)

    def embed(self, table, index):
        """Rows of ``table`` selected by integer ``index``."""
        td = _data(table)
        index = np.asarray(index)

        def backward(g):
            d = np.zeros_like(td)
            np.add.at(d, index, g)
            return (d,)

        return self._emit(td[index], (table,), backward)

    def sum(self, a, axis=None):
        ad = _data(a)

        def backward(g):
            if axis is None:
                return (np.broadcast_to(g, ad.shape).copy(),)
            return (np.broadcast_to(np.expand_dims(g, axis), ad.shape).copy(),)

        return self._emit(ad.sum(axis=axis), (a,), backward)

    def mean(self, a):
        ad = _data(a)
        return self._emit(
            ad.mean(), (a,), lambda g: (np.full(ad.shape, g / max(ad.size, 1)),)
        )

    def minimum(self, a, b):
        ad, bd = _data(a), _data(b)
        first = ad <= bd
        return self._emit(
            np.minimum(ad, bd), (a, b),
            lambda g: (_unbroadcast(g * first, ad.shape), _unbroadcast(g * ~first, bd.shape)),
        )

    def clip(self, a, lo, hi):
        ad = _data(a)
        inside = (ad >= lo) & (ad <= hi)
        return self._emit(np.clip(ad, lo, hi), (a,), lambda g: (g * inside,))

    # -- reverse pass ----------------------------------------------------------

    def backward(self, loss):
        """Return ``{leaf tensor: gradient}`` for every leaf reachable from ``loss``.

        Also stores each leaf's gradient on ``tensor.grad``.
        """
        if loss.data.size != 1:
            raise ShapeMismatch("backward needs a scalar loss")
        adj = {id(loss): np.ones_like(loss.data)}
        leaves = {}
        for out, inputs, fn in reversed(self.nodes):
            g = adj.pop(id(out), None)
            if g is None:
                continue
            for t, d in zip(inputs, fn(g)):
                if d is None or t.__class__ is not Tensor or not t.requires_grad:
                    continue
                key = id(t)
                adj[key] = adj[key] + d if key in adj else d
                leaves.setdefault(key, t)
        grads = {}
        for key, t in leaves.items():
            if key in adj:
                g = np.asarray(adj[key], dtype=np.float64).reshape(t.shape)
                t.grad = g
                grads[t] = g
        return grads


# ---------------------------------------------------------------------------
# optimizers: update parameter tensors in place
# ---------------------------------------------------------------------------

class SGDMomentum:
    """``v <- mu * v + g``; ``p <- p - lr * v``."""

    def __init__(self, lr=0.05, momentum=0.9):
        self.lr = lr
        self.momentum = momentum
        self.velocity = {}

    def step(self, params, grads):
        for p, g in zip(params, grads):
            if g is None:
                continue
            v = self.velocity.get(id(p))
            if v is None:
                v = self.velocity[id(p)] = np.zeros_like(p.data)
            v *= self.momentum
            v += g
            p.data -= self.lr * v


class RMSProp:
    """``s <- rho * s + (1 - rho) * g^2``; ``p <- p - lr * g / (sqrt(s) + eps)``."""

    def __init__(self, lr=1e-3, rho=0.9, eps=1e-8):
        self.lr = lr
        self.rho = rho
        self.eps = eps
        self.square_avg = {}

    def step(self, params, grads):
        for p, g in zip(params, grads):
            if g is None:
                continue
            s = self.square_avg.get(id(p))
            if s is None:
                s = self.square_avg[id(p)] = np.zeros_like(p.data)
            s *= self.rho
            s += (1.0 - self.rho) * g * g
            p.data -= self.lr * g / (np.sqrt(s) + self.eps)


class Adam:
    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {}
        self.v = {}

    def step(self, params, grads):
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, g in zip(params, grads):
            if g is None:
                continue
            m = self.m.setdefault(id(p), np.zeros_like(p.data))
            v = self.v.setdefault(id(p), np.zeros_like(p.data))
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state_dict(self, params):
        return {
            "t": self.t,
            "m": [self.m.get(id(p), np.zeros_like(p.data)).tolist() for p in params],
            "v": [self.v.get(id(p), np.zeros_like(p.data)).tolist() for p in params],
        }

    def load_state_dict(self, state, params):
        self.t = state["t"]
        self.m = {id(p): np.array(m, dtype=float) for p, m in zip(params, state["m"])}
        self.v = {id(p): np.array(v, dtype=float) for p, v in zip(params, state["v"])}
