"""Minimal reverse-mode autodiff on 2-D float64 arrays.

Just enough machinery for full-batch GNN training: dense and sparse
matrix products, activations, batch normalization, inverted dropout,
masked softmax cross-entropy, and Adam. Ops are recorded on an explicit
tape (a Wengert list); ``Tape.backward`` walks it in reverse.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp


class ShapeError(ValueError):
    pass


class Tensor:
    """A 2-D float64 value with a gradient slot."""

    __slots__ = ("values", "grad", "name")

    def __init__(self, values, name: str = ""):
        arr = np.asarray(values, dtype=np.float64)
        if arr.ndim == 1:
            arr = arr.reshape(1, -1)
        if arr.ndim != 2:
            raise ShapeError(f"tensors are 2-D, got shape {arr.shape}")
        self.values = arr
        self.grad: Optional[np.ndarray] = None
        self.name = name

    @property
    def shape(self):
        return self.values.shape

    def zero_grad(self):
        self.grad = None

    def item(self) -> float:
        if self.values.size != 1:
            raise ShapeError(f"item() needs a scalar, got shape {self.shape}")
        return float(self.values.reshape(-1)[0])

    def __repr__(self):
        return f"Tensor(shape={self.shape}, name={self.name!r})"


@dataclass
class TapeNode:
    op: str
    inputs: tuple
    output: Tensor
    backward: Callable[[np.ndarray], tuple]


@dataclass
class BatchNormState:
    """Learned scale/shift plus running statistics for one batchnorm layer."""

    gamma: Tensor
    beta: Tensor
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.1
    eps: float = 1e-5

    @classmethod
    def create(cls, width: int) -> "BatchNormState":
        return cls(
            gamma=Tensor(np.ones((1, width)), name="bn.gamma"),
            beta=Tensor(np.zeros((1, width)), name="bn.beta"),
            running_mean=np.zeros(width),
            running_var=np.ones(width),
        )

    def copy(self) -> "BatchNormState":
        out = BatchNormState.create(self.gamma.shape[1])
        out.gamma.values = self.gamma.values.copy()
        out.beta.values = self.beta.values.copy()
        out.running_mean = self.running_mean.copy()
        out.running_var = self.running_var.copy()
        out.momentum = self.momentum
        out.eps = self.eps
        return out


def _cached_transpose(m: sp.csr_matrix) -> sp.csr_matrix:
    t = getattr(m, "_cached_t", None)
    if t is None:
        t = m.T.tocsr()
        try:
            m._cached_t = t
        except AttributeError:
            pass
    return t


def _accumulate(t: Tensor, g: np.ndarray):
    if g is None:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.values)
    t.grad += g


class Tape:
    """Records primitive applications in execution order.

    One tape per forward/backward pass; training loops create a fresh
    tape each step. Not thread-safe; concurrent runs each own a tape.
    """

    def __init__(self):
        self.nodes: list[TapeNode] = []

    def _record(self, op, inputs, out_values, backward) -> Tensor:
        out = Tensor(out_values)
        self.nodes.append(TapeNode(op, tuple(inputs), out, backward))
        return out

    # -- primitives ----------------------------------------------------

    def matmul(self, a: Tensor, b: Tensor) -> Tensor:
        if a.shape[1] != b.shape[0]:
            raise ShapeError(f"matmul shapes {a.shape} and {b.shape} do not chain")
        av, bv = a.values, b.values

        def backward(g):
            return g @ bv.T, av.T @ g

        return self._record("matmul", (a, b), av @ bv, backward)

    def spmm(self, m: sp.csr_matrix, x: Tensor) -> Tensor:
        """Product of a constant sparse matrix with a dense tensor."""
        if m.shape[1] != x.shape[0]:
            raise ShapeError(f"spmm shapes {m.shape} and {x.shape} do not chain")

        def backward(g):
            return (_cached_transpose(m) @ g,)

        return self._record("spmm", (x,), m @ x.values, backward)

    def add(self, a: Tensor, b: Tensor) -> Tensor:
        if a.shape != b.shape:
            raise ShapeError(f"add shapes {a.shape} and {b.shape} differ")

        def backward(g):
            return g, g

        return self._record("add", (a, b), a.values + b.values, backward)

    def add_bias(self, x: Tensor, b: Tensor) -> Tensor:
        """Add a (1, C) row vector to every row of an (N, C) tensor."""
        if b.shape != (1, x.shape[1]):
            raise ShapeError(f"bias shape {b.shape} does not match columns of {x.shape}")

        def backward(g):
            return g, g.sum(axis=0, keepdims=True)

        return self._record("add_bias", (x, b), x.values + b.values, backward)

    def relu(self, x: Tensor) -> Tensor:
        mask = x.values > 0

        def backward(g):
            return (g * mask,)

        return self._record("relu", (x,), np.where(mask, x.values, 0.0), backward)

    def leaky_relu(self, x: Tensor, slope: float = 0.01) -> Tensor:
        mask = x.values > 0

        def backward(g):
            return (g * np.where(mask, 1.0, slope),)

        return self._record(
            "leaky_relu", (x,), np.where(mask, x.values, slope * x.values), backward
        )

    def concat_cols(self, a: Tensor, b: Tensor) -> Tensor:
        if a.shape[0] != b.shape[0]:
            raise ShapeError(f"concat_cols row counts differ: {a.shape} vs {b.shape}")
        na = a.shape[1]

        def backward(g):
            return g[:, :na], g[:, na:]

        return self._record(
            "concat_cols", (a, b), np.concatenate([a.values, b.values], axis=1), backward
        )

    def neighbor_mean(self, mean_op: sp.csr_matrix, x: Tensor) -> Tensor:
        """Row-mean over each node's neighborhood.

        ``mean_op`` is the degree-normalized adjacency (rows of isolated
        nodes are all zero, so their aggregate is the zero vector).
        """
        return self.spmm(mean_op, x)

    def batchnorm(self, x: Tensor, state: BatchNormState, mode: str) -> Tensor:
        if x.shape[1] != state.gamma.shape[1]:
            raise ShapeError(
                f"batchnorm width {state.gamma.shape} does not match input {x.shape}"
            )
        if mode not in ("train", "eval"):
            raise ValueError(f"unknown mode {mode!r}")
        gamma, beta, eps = state.gamma, state.beta, state.eps
        xv = x.values
        n = xv.shape[0]

        if mode == "eval":
            inv = 1.0 / np.sqrt(state.running_var + eps)
            xhat = (xv - state.running_mean) * inv

            def backward_eval(g):
                return (
                    g * gamma.values * inv,
                    (g * xhat).sum(axis=0, keepdims=True),
                    g.sum(axis=0, keepdims=True),
                )

            return self._record(
                "batchnorm",
                (x, gamma, beta),
                gamma.values * xhat + beta.values,
                backward_eval,
            )

        mean = xv.mean(axis=0)
        centered = xv - mean
        var = (centered**2).mean(axis=0)
        inv = 1.0 / np.sqrt(var + eps)
        xhat = centered * inv

        # running stats track the unbiased batch variance
        unbiased = var * n / (n - 1) if n > 1 else var
        m = state.momentum
        state.running_mean = (1 - m) * state.running_mean + m * mean
        state.running_var = (1 - m) * state.running_var + m * unbiased

        def backward_train(g):
            gx = g * gamma.values
            dvar = (gx * centered).sum(axis=0) * (-0.5) * inv**3
            dmean = (-gx * inv).sum(axis=0) + dvar * (-2.0 * centered.mean(axis=0))
            dx = gx * inv + dvar * 2.0 * centered / n + dmean / n
            return (
                dx,
                (g * xhat).sum(axis=0, keepdims=True),
                g.sum(axis=0, keepdims=True),
            )

        return self._record(
            "batchnorm", (x, gamma, beta), gamma.values * xhat + beta.values, backward_train
        )

    def dropout(self, x: Tensor, p: float, mode: str, rng: np.random.Generator) -> Tensor:
        if not 0.0 <= p < 1.0:
            raise ValueError(f"dropout probability must be in [0, 1), got {p}")
        if mode == "eval" or p == 0.0:

            def backward_id(g):
                return (g,)

            return self._record("dropout", (x,), x.values.copy(), backward_id)

        scale = 1.0 / (1.0 - p)
        mask = (rng.random(x.shape) >= p) * scale

        def backward(g):
            return (g * mask,)

        return self._record("dropout", (x,), x.values * mask, backward)

    def cross_entropy(self, logits: Tensor, labels: np.ndarray, mask: np.ndarray) -> Tensor:
        """Mean of -log softmax(logits)[label] over masked rows."""
        labels = np.asarray(labels, dtype=np.int64).reshape(-1)
        mask = np.asarray(mask, dtype=bool).reshape(-1)
        if labels.shape[0] != logits.shape[0] or mask.shape[0] != logits.shape[0]:
            raise ShapeError(
                f"labels/mask length {labels.shape[0]}/{mask.shape[0]} does not "
                f"match logits rows {logits.shape[0]}"
            )
        idx = np.flatnonzero(mask)
        if idx.size == 0:
            raise ValueError("cross_entropy: mask selects no rows")
        z = logits.values[idx]
        zmax = z.max(axis=1, keepdims=True)
        shifted = z - zmax
        lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
        logp = shifted - lse
        y = labels[idx]
        loss = -logp[np.arange(idx.size), y].mean()

        def backward(g):
            softmax = np.exp(logp)
            grad_rows = softmax
            grad_rows[np.arange(idx.size), y] -= 1.0
            grad = np.zeros_like(logits.values)
            grad[idx] = grad_rows / idx.size
            return (grad * g[0, 0],)

        return self._record("cross_entropy", (logits,), np.array([[loss]]), backward)

    # -- reverse pass --------------------------------------------------

    def backward(self, loss: Tensor):
        if loss.values.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        for node in self.nodes:
            node.output.grad = None
        for node in self.nodes:
            for t in node.inputs:
                t.grad = None
        loss.grad = np.ones_like(loss.values)
        for node in reversed(self.nodes):
            g = node.output.grad
            if g is None:
                continue
            grads = node.backward(g)
            for t, gi in zip(node.inputs, grads):
                _accumulate(t, gi)


@dataclass
class AdamState:
    """First/second moment accumulators for a fixed parameter list."""

    m: list = field(default_factory=list)
    v: list = field(default_factory=list)
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def create(cls, params: list[Tensor]) -> "AdamState":
        return cls(
            m=[np.zeros_like(p.values) for p in params],
            v=[np.zeros_like(p.values) for p in params],
        )


def adam_step(params: list[Tensor], state: AdamState, lr: float):
    """One bias-corrected Adam update; reads ``p.grad``, mutates ``p.values``."""
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for i, p in enumerate(params):
        g = p.grad if p.grad is not None else np.zeros_like(p.values)
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for parameter {p.name!r}")
        state.m[i] = b1 * state.m[i] + (1 - b1) * g
        state.v[i] = b2 * state.v[i] + (1 - b2) * g * g
        mhat = state.m[i] / c1
        vhat = state.v[i] / c2
        p.values = p.values - lr * mhat / (np.sqrt(vhat) + state.eps)


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))
